//! Deterministic response embedding: hashed token buckets, scaled style
//! markers, and skill-mention indicator features. Transcripts become
//! `(|Q| + d)`-wide row sequences ready for the attention models.

use thiserror::Error;

use crate::question_bank::QuestionBank;
use crate::simulator::Response;
use crate::text;
use crate::transcript::Transcript;

/// Feature-map weights. Counts saturate at 1 so that every coordinate
/// stays in [0,1] regardless of text length.
const BUCKET_WEIGHT: f64 = 0.25;
const MARKER_WEIGHT: f64 = 0.25;
const MENTION_WEIGHT: f64 = 0.2;

/// Dimensions reserved at the tail of the embedding: 3 style-marker
/// coordinates followed by 5 skill-mention indicators.
const STYLE_DIMS: usize = 3;
const SKILL_DIMS: usize = 5;
const RESERVED_DIMS: usize = STYLE_DIMS + SKILL_DIMS;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("cannot tensorize an empty transcript")]
    EmptyTranscript,
}

/// Fixed-width response embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
}

/// Model-ready transcript: one row per exchange.
#[derive(Clone, Debug, PartialEq)]
pub struct TranscriptTensor {
    pub width: usize,
    pub rows: Vec<Vec<f64>>,
}

impl TranscriptTensor {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Maps responses into d-dimensional vectors over a fixed skill vocabulary.
#[derive(Clone, Debug)]
pub struct Encoder {
    dim: usize,
    num_questions: usize,
    vocab: Vec<String>,
    vocab_toks: Vec<Vec<String>>,
    target: String,
}

impl Encoder {
    /// `dim` must leave at least one hash bucket after the 8 reserved
    /// coordinates.
    pub fn new(bank: &QuestionBank, dim: usize) -> Encoder {
        assert!(dim > RESERVED_DIMS, "embedding dim must exceed {RESERVED_DIMS}");
        let vocab = bank.skills();
        Encoder {
            dim,
            num_questions: bank.len(),
            vocab_toks: text::vocab_tokens(&vocab),
            vocab,
            target: bank.target_skill().to_string(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_questions(&self) -> usize {
        self.num_questions
    }

    /// Total row width of a tensorized transcript.
    pub fn row_width(&self) -> usize {
        self.num_questions + self.dim
    }

    /// Embeds one response. Pure function of the response text.
    pub fn embed(&self, r: &Response) -> Embedding {
        let tokens = text::tokenize(&r.text);
        let buckets = self.dim - RESERVED_DIMS;
        let mut values = vec![0.0; self.dim];

        let mut counts = vec![0usize; buckets];
        for t in &tokens {
            counts[(text::fnv1a(t.as_bytes()) % buckets as u64) as usize] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            values[i] = saturate(*c as f64 * BUCKET_WEIGHT);
        }

        let markers = text::count_markers(&tokens);
        values[buckets] = saturate(markers.hedge as f64 * MARKER_WEIGHT);
        values[buckets + 1] = saturate(markers.boast as f64 * MARKER_WEIGHT);
        values[buckets + 2] = saturate(markers.filler as f64 * MARKER_WEIGHT);

        let mentions = text::parse_mentions(&tokens, &self.vocab_toks);
        let base = buckets + STYLE_DIMS;
        values[base] = saturate(mentions.all().len() as f64 * MENTION_WEIGHT);
        values[base + 1] = f64::from(mentions.all().contains(&self.target));
        values[base + 2] = f64::from(mentions.affirmed.contains(&self.target));
        values[base + 3] = f64::from(mentions.hypothetical.contains(&self.target));
        values[base + 4] = saturate(mentions.affirmed.len() as f64 * MENTION_WEIGHT);

        Embedding { values }
    }

    /// Tensorizes a transcript: row r = one-hot(question) concatenated with
    /// the response embedding. The initial self-description has no question
    /// and gets an all-zero one-hot block.
    pub fn tensorize(&self, x: &Transcript) -> Result<TranscriptTensor, EncoderError> {
        if x.is_empty() {
            return Err(EncoderError::EmptyTranscript);
        }
        let width = self.row_width();
        let rows = x
            .exchanges
            .iter()
            .map(|e| {
                let mut row = vec![0.0; width];
                if let Some(q) = e.question {
                    assert!(q < self.num_questions, "question id {q} out of range");
                    row[q] = 1.0;
                }
                row[self.num_questions..].copy_from_slice(&self.embed(&e.response).values);
                row
            })
            .collect();
        Ok(TranscriptTensor { width, rows })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }
}

fn saturate(x: f64) -> f64 {
    x.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::question_bank::QuestionBank;
    use crate::simulator::{ResponseSimulator, SimConfig, Simulator};

    fn encoder() -> Encoder {
        Encoder::new(QuestionBank::default_bank(), 32)
    }

    #[test]
    fn empty_text_embeds_to_zero() {
        let e = encoder();
        let r = Response::from_text("", &[]);
        let v = e.embed(&r);
        assert!(v.values.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn identical_texts_embed_identically() {
        let e = encoder();
        let a = e.embed(&Response::from_text("i am skilled in sales .", &[]));
        let b = e.embed(&Response::from_text("i am skilled in sales .", &[]));
        assert_eq!(a, b);
    }

    #[test]
    fn one_hedge_token_touches_hedge_coord_and_one_bucket() {
        let e = encoder();
        let base = e.embed(&Response::from_text("i am skilled in sales", &[]));
        let hedged = e.embed(&Response::from_text("i am skilled in sales perhaps", &[]));
        let buckets = 32 - 8;
        let hedge_coord = buckets;
        let perhaps_bucket = (text::fnv1a(b"perhaps") % buckets as u64) as usize;
        let mut diffs = Vec::new();
        for i in 0..32 {
            if base.values[i] != hedged.values[i] {
                diffs.push(i);
            }
        }
        assert!(diffs.iter().all(|i| *i == hedge_coord || *i == perhaps_bucket));
        assert_eq!(hedged.values[hedge_coord] - base.values[hedge_coord], 0.25);
        assert_eq!(
            hedged.values[perhaps_bucket] - base.values[perhaps_bucket],
            0.25
        );
    }

    #[test]
    fn mention_indicators_distinguish_affirmed_and_hypothetical() {
        let e = encoder();
        let aff = e.embed(&Response::from_text("i am skilled in leadership", &[]));
        let hyp = e.embed(&Response::from_text("if i had leadership i could grow", &[]));
        let base = 32 - 8 + 3;
        assert_eq!(aff.values[base + 1], 1.0); // target mentioned
        assert_eq!(aff.values[base + 2], 1.0); // affirmed
        assert_eq!(aff.values[base + 3], 0.0);
        assert_eq!(hyp.values[base + 1], 1.0);
        assert_eq!(hyp.values[base + 2], 0.0);
        assert_eq!(hyp.values[base + 3], 1.0); // hypothetical
    }

    #[test]
    fn tensor_shapes_follow_transcript_length() {
        let e = encoder();
        let sim = Simulator::new(QuestionBank::default_bank().clone(), SimConfig::default());
        let p = sim.sample_persona(3);
        let mut x = Transcript::new();
        x.push(None, sim.initial_summary(&p));
        let t1 = e.tensorize(&x).unwrap();
        assert_eq!((t1.len(), t1.width), (1, 62));

        let q5 = sim.bank().question(5).unwrap().clone();
        let q9 = sim.bank().question(9).unwrap().clone();
        x.push(Some(5), sim.respond(&p, &q5, &x));
        x.push(Some(9), sim.respond(&p, &q9, &x));
        let t3 = e.tensorize(&x).unwrap();
        assert_eq!((t3.len(), t3.width), (3, 62));
        assert!(matches!(
            e.tensorize(&Transcript::new()),
            Err(EncoderError::EmptyTranscript)
        ));
    }

    #[test]
    fn permuting_exchanges_permutes_rows() {
        let e = encoder();
        let sim = Simulator::new(QuestionBank::default_bank().clone(), SimConfig::default());
        let p = sim.sample_persona(17);
        let mut x = Transcript::new();
        x.push(None, sim.initial_summary(&p));
        let q1 = sim.bank().question(1).unwrap().clone();
        let q2 = sim.bank().question(2).unwrap().clone();
        x.push(Some(1), sim.respond(&p, &q1, &x));
        x.push(Some(2), sim.respond(&p, &q2, &x));
        let t = e.tensorize(&x).unwrap();

        let mut shuffled = x.clone();
        shuffled.exchanges.swap(0, 2);
        let ts = e.tensorize(&shuffled).unwrap();
        assert_eq!(ts.rows[0], t.rows[2]);
        assert_eq!(ts.rows[2], t.rows[0]);
        assert_eq!(ts.rows[1], t.rows[1]);
    }

    #[test]
    fn coordinates_stay_bounded_on_simulated_responses() {
        let e = encoder();
        let sim = Simulator::new(QuestionBank::default_bank().clone(), SimConfig::default());
        for seed in 0..100 {
            let p = sim.sample_persona(seed);
            let v = e.embed(&sim.initial_summary(&p));
            assert!(v.values.iter().all(|x| (0.0..=1.0).contains(x)));
            let norm: f64 = v.values.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm <= 32.0);
        }
    }
}
