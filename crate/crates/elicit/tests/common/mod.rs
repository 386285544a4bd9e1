//! Helpers shared by the integration suites.

use std::collections::BTreeSet;

use elicit::question_bank::{QuestionBank, QuestionSpec};
use elicit::simulator::{Persona, Response, ResponseSimulator};
use elicit::trainer::TrainConfig;
use elicit::transcript::Transcript;

/// Prints the per-criterion verdict line and returns the verdict so the
/// caller can assert on it.
pub fn verdict(id: u32, name: &str, pass: bool) -> bool {
    println!(
        "[acceptance {id}] {name}: {}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

pub fn tiny_bank() -> QuestionBank {
    QuestionBank::new(
        "beta",
        &["alpha".to_string(), "beta".to_string(), "gamma".to_string()],
    )
    .unwrap()
}

/// Small, fast configuration for structural tests (not the desk profile).
pub fn fast_config() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        batches_per_calibration: 2,
        max_questions: 1,
        rollout_candidates: 2,
        rollout_depth: 1,
        eps: 0.75,
        delta: 0.5,
        epochs: 2,
        eval_size: 4,
        bootstrap_resamples: 50,
        hidden_dim: 4,
        embed_dim: 16,
        ..TrainConfig::desk()
    }
}

/// Deterministic simulator where exactly one question (the target's)
/// reveals the ground truth; every other exchange is constant filler.
pub struct RiggedSimulator {
    pub bank: QuestionBank,
}

impl RiggedSimulator {
    pub fn new(bank: QuestionBank) -> RiggedSimulator {
        RiggedSimulator { bank }
    }

    pub fn informative_question(&self) -> usize {
        self.bank.target_id()
    }
}

impl ResponseSimulator for RiggedSimulator {
    fn sample_persona(&self, seed: u64) -> Persona {
        let target = self.bank.target_skill().to_string();
        let skills: BTreeSet<String> = if seed % 2 == 0 {
            [target.clone()].into_iter().collect()
        } else {
            BTreeSet::new()
        };
        Persona::build(seed, skills, [0.5; 5], seed, &target)
    }

    fn initial_summary(&self, _p: &Persona) -> Response {
        Response::from_text("i am a dedicated professional", &self.bank.skills())
    }

    fn respond(&self, p: &Persona, q: &QuestionSpec, _history: &Transcript) -> Response {
        let text = if q.id == self.informative_question() {
            if p.has_target {
                format!("i am skilled in {} and use it daily", q.skill_name)
            } else {
                format!("if i had {} i could contribute more", q.skill_name)
            }
        } else {
            "thinking about work".to_string()
        };
        Response::from_text(&text, &self.bank.skills())
    }
}
