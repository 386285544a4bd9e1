//! Rollout-based certainty: simulate a candidate question a few exchanges
//! into the future and measure how confident the critic becomes, then pick
//! the best of the policy's top-N candidates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoder::{Encoder, EncoderError};
use crate::nnet::{self, ModelParams, NnetError};
use crate::question_bank::{BankError, QuestionBank, QuestionSpec};
use crate::simulator::{Persona, ResponseSimulator};
use crate::text::mix_seed;
use crate::transcript::Transcript;
use crate::Predictor;

const STREAM_ROLLOUT: u64 = 0x44;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("not enough unasked questions for a depth-{depth} rollout")]
    QuestionExhausted { depth: usize },
    #[error("all questions have been asked")]
    AllQuestionsAsked,
    #[error(transparent)]
    Net(#[from] NnetError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Rollout hyperparameters: candidate count N, depth M, and the interview
/// question budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RolloutConfig {
    pub candidates: usize,
    pub depth: usize,
    pub max_questions: usize,
}

/// Anything that maps a transcript to a distribution over unasked
/// questions.
pub trait QuestionPolicy {
    fn distribution(&self, x: &Transcript) -> Result<Vec<f64>, RolloutError>;
}

/// The policy network behind its encoder.
pub struct NetPolicy<'a> {
    pub params: &'a ModelParams,
    pub encoder: &'a Encoder,
}

impl QuestionPolicy for NetPolicy<'_> {
    fn distribution(&self, x: &Transcript) -> Result<Vec<f64>, RolloutError> {
        let tensor = self.encoder.tensorize(x)?;
        Ok(nnet::forward_policy(self.params, &tensor, &x.asked_ids())?)
    }
}

/// Certainty of a critic value: 2|f - 1/2|.
pub fn certainty(f_value: f64) -> f64 {
    2.0 * (f_value - 0.5).abs()
}

/// Inverse-CDF sample from a distribution vector.
pub fn sample_question(dist: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in dist.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last_positive = i;
            if draw < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Simulates asking `q` now and following the policy for `depth - 1` more
/// exchanges, then returns the certainty of the critic on the final state.
/// The caller's transcript is never mutated.
#[allow(clippy::too_many_arguments)]
pub fn rollout_certainty<P, Q, S>(
    x: &Transcript,
    q: &QuestionSpec,
    cfg: &RolloutConfig,
    bank: &QuestionBank,
    critic: &P,
    policy: &Q,
    sim: &S,
    persona: &Persona,
    rng: &mut ChaCha8Rng,
) -> Result<f64, RolloutError>
where
    P: Predictor + ?Sized,
    Q: QuestionPolicy + ?Sized,
    S: ResponseSimulator + ?Sized,
{
    let asked = x.asked_ids();
    debug_assert!(!asked.contains(&q.id), "candidate {} already asked", q.id);
    let unasked_after = bank.len() - asked.len() - 1;
    if unasked_after + 1 < cfg.depth {
        return Err(RolloutError::QuestionExhausted { depth: cfg.depth });
    }

    let mut work = x.clone();
    let first = sim.respond(persona, q, &work);
    work.push(Some(q.id), first);
    for _ in 1..cfg.depth {
        let dist = policy.distribution(&work)?;
        let next = sample_question(&dist, rng);
        let spec = bank.question(next)?;
        let resp = sim.respond(persona, spec, &work);
        work.push(Some(next), resp);
    }
    Ok(certainty(critic.predict(&work)))
}

/// Evaluates the policy's top-N candidates by rollout certainty and returns
/// the best `(Z, question id)`. Equal certainties resolve to the lower id,
/// independent of evaluation order. Each candidate rollout runs on its own
/// RNG stream derived from (persona seed, transcript length, candidate id).
pub fn select_next<P, Q, S>(
    x: &Transcript,
    cfg: &RolloutConfig,
    bank: &QuestionBank,
    critic: &P,
    policy: &Q,
    sim: &S,
    persona: &Persona,
) -> Result<(f64, usize), RolloutError>
where
    P: Predictor + ?Sized,
    Q: QuestionPolicy + ?Sized,
    S: ResponseSimulator + ?Sized,
{
    let asked = x.asked_ids();
    if asked.len() >= bank.len() {
        return Err(RolloutError::AllQuestionsAsked);
    }
    let dist = policy.distribution(x)?;
    let mut order: Vec<usize> = (0..bank.len()).filter(|i| !asked.contains(i)).collect();
    order.sort_by(|a, b| {
        dist[*b]
            .partial_cmp(&dist[*a])
            .expect("finite probabilities")
            .then(a.cmp(b))
    });
    order.truncate(cfg.candidates.max(1).min(order.len()));

    let mut best: Option<(f64, usize)> = None;
    for qid in order {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
            persona.seed,
            &[STREAM_ROLLOUT, x.len() as u64, qid as u64],
        ));
        let z = rollout_certainty(
            x,
            bank.question(qid)?,
            cfg,
            bank,
            critic,
            policy,
            sim,
            persona,
            &mut rng,
        )?;
        best = match best {
            None => Some((z, qid)),
            Some((bz, bq)) if z > bz || (z == bz && qid < bq) => Some((z, qid)),
            other => other,
        };
    }
    Ok(best.expect("at least one candidate"))
}
