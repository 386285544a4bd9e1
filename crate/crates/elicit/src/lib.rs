//! Interactive skill-elicitation toolkit: a question-selection policy and
//! transcript-scoring critic trained jointly against a seeded persona
//! simulator, with multi-accuracy fairness calibration interleaved into
//! training.

pub mod checkpoint;
pub mod cli;
pub mod encoder;
pub mod evalkit;
pub mod fairness;
pub mod nnet;
pub mod question_bank;
pub mod rollout;
pub mod simulator;
pub mod text;
pub mod trainer;
pub mod trait_scores;
pub mod transcript;

use transcript::Transcript;

/// Anything that scores a transcript in [0,1]: the raw critic network, the
/// calibration-corrected critic, or lookup tables in tests.
pub trait Predictor {
    fn predict(&self, x: &Transcript) -> f64;
}

impl<F: Fn(&Transcript) -> f64> Predictor for F {
    fn predict(&self, x: &Transcript) -> f64 {
        self(x)
    }
}

/// The critic network behind its encoder, viewed as a transcript predictor.
pub struct NetCritic<'a> {
    pub params: &'a nnet::ModelParams,
    pub encoder: &'a encoder::Encoder,
}

impl Predictor for NetCritic<'_> {
    fn predict(&self, x: &Transcript) -> f64 {
        let tensor = self.encoder.tensorize(x).expect("nonempty transcript");
        nnet::forward_score(self.params, &tensor).expect("critic role")
    }
}
