//! Interview transcripts: the ordered question/response history for one
//! individual.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::simulator::Response;

/// One turn: the question asked (none for the initial self-description)
/// and the response given.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub question: Option<usize>,
    pub response: Response,
}

/// Ordered exchange history through the current round.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub exchanges: Vec<Exchange>,
}

impl Transcript {
    pub fn new() -> Self {
        Transcript::default()
    }

    pub fn len(&self) -> usize {
        self.exchanges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exchanges.is_empty()
    }

    pub fn push(&mut self, question: Option<usize>, response: Response) {
        self.exchanges.push(Exchange { question, response });
    }

    /// Ids of questions already asked.
    pub fn asked_ids(&self) -> BTreeSet<usize> {
        self.exchanges.iter().filter_map(|e| e.question).collect()
    }

    /// Number of answered questions (exchanges excluding the initial
    /// self-description).
    pub fn questions_asked(&self) -> usize {
        self.exchanges.iter().filter(|e| e.question.is_some()).count()
    }

    /// The first `n` exchanges as an owned transcript.
    pub fn prefix(&self, n: usize) -> Transcript {
        Transcript {
            exchanges: self.exchanges[..n.min(self.exchanges.len())].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::Response;

    #[test]
    fn asked_ids_skips_initial_exchange() {
        let mut x = Transcript::new();
        x.push(None, Response::from_text("hello", &[]));
        x.push(Some(3), Response::from_text("a", &[]));
        x.push(Some(1), Response::from_text("b", &[]));
        assert_eq!(x.asked_ids().into_iter().collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(x.questions_asked(), 2);
        assert_eq!(x.prefix(2).len(), 2);
    }
}
