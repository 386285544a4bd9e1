//! The full training loop: batches of simulated conversations drive
//! REINFORCE updates on the question policy and MSE updates on the critic,
//! interleaved with multi-accuracy calibration phases that install a
//! corrected working critic and roll back to the last feasible state when
//! an audit fails.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{Encoder, EncoderError, TranscriptTensor};
use crate::evalkit::{self, MetricRow};
use crate::fairness::{self, AuditReport, CalibrationWeights, FairnessError, SolverConfig};
use crate::nnet::{self, AdamHyper, AdamState, ModelParams, NnetError, ParamTensors, ReinforceSample, Role};
use crate::question_bank::{load_bank, BankError, QuestionBank};
use crate::rollout::{self, NetPolicy, QuestionPolicy, RolloutConfig, RolloutError};
use crate::simulator::{Persona, ResponseSimulator, SimConfig, Simulator};
use crate::text::mix_seed;
use crate::trait_scores::FAMILY_SIZE;
use crate::transcript::Transcript;
use crate::{NetCritic, Predictor};

const TAG_PHI: u64 = 0xA1;
const TAG_PSI: u64 = 0xA2;
const TAG_LOOP: u64 = 0xA3;
const TAG_EVAL: u64 = 0xA4;
const TAG_BOOT: u64 = 0xA5;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("calibration audit failed: sup_abs {sup_abs} > eps {eps}; rolled back")]
    CalibrationFailed { sup_abs: f64, eps: f64 },
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Fairness(#[from] FairnessError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Net(#[from] NnetError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Fairness-correction schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Every,
    Never,
    OnlyFinal,
    UntilT,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::Every => "every",
            Regime::Never => "never",
            Regime::OnlyFinal => "only-final",
            Regime::UntilT => "until-t",
        }
    }

    pub fn parse(s: &str) -> Option<Regime> {
        match s {
            "every" => Some(Regime::Every),
            "never" => Some(Regime::Never),
            "only-final" => Some(Regime::OnlyFinal),
            "until-t" => Some(Regime::UntilT),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Everything a training run needs. Serializable as the config-file schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Bank file; `None` uses the built-in 30-skill bank.
    pub bank_path: Option<std::path::PathBuf>,
    /// Conversations per gradient step (B).
    pub batch_size: usize,
    /// Gradient steps between calibration phases.
    pub batches_per_calibration: usize,
    /// Questions per interview (i_max).
    pub max_questions: usize,
    /// Rollout candidate count (N).
    pub rollout_candidates: usize,
    /// Rollout depth (M).
    pub rollout_depth: usize,
    pub eps: f64,
    pub delta: f64,
    pub epochs: u64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub optimizer: OptimizerKind,
    pub prevalence: f64,
    pub skill_prob: f64,
    pub suppression_weight: f64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    pub regime: Regime,
    pub regime_t: Option<u64>,
    pub eval_size: usize,
    pub bootstrap_resamples: usize,
    pub bootstrap_level: f64,
    pub solver: SolverConfig,
}

impl TrainConfig {
    /// Desk-scale defaults: small enough to train in seconds while keeping
    /// the published batch structure (8 conversations per step, calibration
    /// every 32 conversations, 2 questions, depth-2 rollouts, 20% target
    /// prevalence, 100 epochs).
    pub fn desk() -> TrainConfig {
        TrainConfig {
            bank_path: None,
            batch_size: 8,
            batches_per_calibration: 4,
            max_questions: 2,
            rollout_candidates: 3,
            rollout_depth: 2,
            eps: 0.1,
            delta: 1e-6,
            epochs: 100,
            actor_lr: 0.01,
            critic_lr: 0.01,
            optimizer: OptimizerKind::Adam,
            prevalence: 0.2,
            skill_prob: 0.25,
            suppression_weight: 0.6,
            embed_dim: 32,
            hidden_dim: 16,
            seed: 42,
            regime: Regime::Every,
            regime_t: None,
            eval_size: 200,
            bootstrap_resamples: 1000,
            bootstrap_level: 0.95,
            solver: SolverConfig::default(),
        }
    }

    /// The published-scale profile: identical except the fairness target
    /// drops to 0.01, which raises the calibration threshold to 156,072
    /// samples per phase.
    pub fn paper() -> TrainConfig {
        TrainConfig {
            eps: 0.01,
            ..TrainConfig::desk()
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            prevalence: self.prevalence,
            skill_prob: self.skill_prob,
            suppression_weight: self.suppression_weight,
        }
    }

    pub fn rollout_config(&self) -> RolloutConfig {
        RolloutConfig {
            candidates: self.rollout_candidates,
            depth: self.rollout_depth,
            max_questions: self.max_questions,
        }
    }

    /// True when the schedule calls for a calibration phase this epoch.
    pub fn regime_active(&self, epoch: u64) -> bool {
        match self.regime {
            Regime::Every => true,
            Regime::Never => false,
            Regime::OnlyFinal => Some(epoch) == self.regime_t,
            Regime::UntilT => self.regime_t.map_or(false, |t| epoch <= t),
        }
    }

    pub fn validate(&self, bank: &QuestionBank) -> Result<(), TrainerError> {
        let fail = |msg: String| Err(TrainerError::ConfigInvalid(msg));
        if self.batch_size == 0 || self.batches_per_calibration == 0 {
            return fail("batch sizes must be at least 1".into());
        }
        if self.max_questions == 0 {
            return fail("max_questions must be at least 1".into());
        }
        if self.rollout_depth == 0 || self.rollout_candidates == 0 {
            return fail("rollout depth and candidate count must be at least 1".into());
        }
        if self.rollout_candidates > bank.len() {
            return fail(format!(
                "rollout_candidates {} exceeds bank size {}",
                self.rollout_candidates,
                bank.len()
            ));
        }
        if self.max_questions - 1 + self.rollout_depth > bank.len() {
            return fail(format!(
                "interviews of {} questions with depth-{} rollouts exceed the {}-question bank",
                self.max_questions,
                self.rollout_depth,
                bank.len()
            ));
        }
        if !(self.eps > 0.0) {
            return fail("eps must be positive".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail("delta must be in (0,1)".into());
        }
        if !(0.0..=1.0).contains(&self.prevalence)
            || !(0.0..=1.0).contains(&self.skill_prob)
            || !(0.0..=1.0).contains(&self.suppression_weight)
        {
            return fail("probabilities must be in [0,1]".into());
        }
        if self.embed_dim <= 8 {
            return fail("embed_dim must exceed 8".into());
        }
        if self.hidden_dim == 0 {
            return fail("hidden_dim must be at least 1".into());
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if matches!(self.regime, Regime::OnlyFinal | Regime::UntilT) && self.regime_t.is_none() {
            return fail(format!("regime {} requires regime_t", self.regime.label()));
        }
        if self.eval_size == 0 || self.bootstrap_resamples == 0 {
            return fail("eval_size and bootstrap_resamples must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.bootstrap_level) {
            return fail("bootstrap_level must be in [0,1)".into());
        }
        Ok(())
    }
}

/// The model-and-calibration state captured at every passing audit and
/// restored on rollback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSnapshot {
    pub phi: ModelParams,
    pub psi: ModelParams,
    pub adam_phi: AdamState,
    pub adam_psi: AdamState,
    pub calib: CalibrationWeights,
}

/// Full run state. The RNG stream and epoch counter keep advancing across
/// rollbacks; only the model/optimizer/calibration state reverts.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRunState {
    pub epoch: u64,
    pub phi: ModelParams,
    pub psi: ModelParams,
    pub adam_phi: AdamState,
    pub adam_psi: AdamState,
    pub calib: CalibrationWeights,
    pub rng: ChaCha8Rng,
    pub last_feasible: FeasibleSnapshot,
    pub warm_batch: Vec<(Transcript, Persona)>,
    /// The labeled set the most recent calibration solved on, kept for
    /// post-hoc verification of the calibration-set bound.
    pub last_calibration_data: Vec<(Transcript, f64)>,
    pub history: Vec<MetricRow>,
    pub train_conversations: u64,
    pub calibrations_passed: u64,
    pub calibrations_attempted: u64,
    pub rollbacks: u64,
    pub last_tau: Option<u64>,
}

impl TrainRunState {
    pub fn init(cfg: &TrainConfig, encoder: &Encoder, bank: &QuestionBank) -> TrainRunState {
        let phi = nnet::init(
            Role::Critic,
            mix_seed(cfg.seed, &[TAG_PHI]),
            encoder.row_width(),
            cfg.hidden_dim,
            bank.len(),
        );
        let psi = nnet::init(
            Role::Policy,
            mix_seed(cfg.seed, &[TAG_PSI]),
            encoder.row_width(),
            cfg.hidden_dim,
            bank.len(),
        );
        let adam_phi = AdamState::new(&phi);
        let adam_psi = AdamState::new(&psi);
        let calib = CalibrationWeights::zero(cfg.eps);
        let last_feasible = FeasibleSnapshot {
            phi: phi.clone(),
            psi: psi.clone(),
            adam_phi: adam_phi.clone(),
            adam_psi: adam_psi.clone(),
            calib: calib.clone(),
        };
        TrainRunState {
            epoch: 0,
            phi,
            psi,
            adam_phi,
            adam_psi,
            calib,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[TAG_LOOP])),
            last_feasible,
            warm_batch: Vec::new(),
            last_calibration_data: Vec::new(),
            history: Vec::new(),
            train_conversations: 0,
            calibrations_passed: 0,
            calibrations_attempted: 0,
            rollbacks: 0,
            last_tau: None,
        }
    }

    pub fn snapshot(&self) -> FeasibleSnapshot {
        FeasibleSnapshot {
            phi: self.phi.clone(),
            psi: self.psi.clone(),
            adam_phi: self.adam_phi.clone(),
            adam_psi: self.adam_psi.clone(),
            calib: self.calib.clone(),
        }
    }

    fn restore_last_feasible(&mut self) {
        let s = self.last_feasible.clone();
        self.phi = s.phi;
        self.psi = s.psi;
        self.adam_phi = s.adam_phi;
        self.adam_psi = s.adam_psi;
        self.calib = s.calib;
    }
}

/// One question step of a conversation: the state it was chosen from and
/// the rollout result.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub prefix_len: usize,
    pub asked: BTreeSet<usize>,
    pub z: f64,
    pub chosen: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConversationRecord {
    pub transcript: Transcript,
    pub steps: Vec<StepRecord>,
}

/// Runs one interview: the initial self-description followed by
/// `num_questions` exchanges whose questions come from rollout selection.
pub fn run_conversation<S: ResponseSimulator + ?Sized>(
    persona: &Persona,
    critic: &dyn Predictor,
    policy: &dyn QuestionPolicy,
    sim: &S,
    bank: &QuestionBank,
    rcfg: &RolloutConfig,
    num_questions: usize,
) -> Result<ConversationRecord, RolloutError> {
    let mut transcript = Transcript::new();
    transcript.push(None, sim.initial_summary(persona));
    let mut steps = Vec::with_capacity(num_questions);
    for _ in 0..num_questions {
        let (z, chosen) =
            rollout::select_next(&transcript, rcfg, bank, critic, policy, sim, persona)?;
        steps.push(StepRecord {
            prefix_len: transcript.len(),
            asked: transcript.asked_ids(),
            z,
            chosen,
        });
        let spec = bank.question(chosen)?;
        let resp = sim.respond(persona, spec, &transcript);
        transcript.push(Some(chosen), resp);
    }
    Ok(ConversationRecord { transcript, steps })
}

fn label(p: &Persona) -> f64 {
    f64::from(p.has_target)
}

fn scaled(mut g: ParamTensors, factor: f64) -> ParamTensors {
    for block in g.blocks_mut() {
        for x in block.iter_mut() {
            *x *= factor;
        }
    }
    g
}

fn apply_update(
    params: &mut ModelParams,
    grad: &ParamTensors,
    adam: &mut AdamState,
    lr: f64,
    optimizer: OptimizerKind,
) -> Result<(), NnetError> {
    match optimizer {
        OptimizerKind::Adam => nnet::adam_step(params, grad, adam, &AdamHyper::with_lr(lr)),
        OptimizerKind::Sgd => nnet::sgd_step(params, grad, lr),
    }
}

struct BatchEntry {
    prefix: Transcript,
    chosen: usize,
    z: f64,
    y: f64,
}

/// Runs `batches_per_calibration` gradient steps of `batch_size`
/// conversations each. Every batch shares one random transcript length
/// `i < max_questions`; each conversation contributes the state at length
/// `i` plus the rollout-selected next question and its certainty. The
/// first batch of a phase reuses up to `batch_size` transcripts from the
/// last calibration collection, re-labeled and re-scored under the current
/// models.
pub fn train_phase<S: ResponseSimulator + ?Sized>(
    state: &mut TrainRunState,
    cfg: &TrainConfig,
    sim: &S,
    bank: &QuestionBank,
    encoder: &Encoder,
) -> Result<(), TrainerError> {
    let rcfg = cfg.rollout_config();
    for batch_idx in 0..cfg.batches_per_calibration {
        let i = state.rng.gen_range(0..cfg.max_questions);
        let mut entries: Vec<BatchEntry> = Vec::with_capacity(cfg.batch_size);

        if batch_idx == 0 && !state.warm_batch.is_empty() {
            let warm = std::mem::take(&mut state.warm_batch);
            for (x, persona) in warm.into_iter().take(cfg.batch_size) {
                let critic = fairness::corrected(
                    NetCritic {
                        params: &state.phi,
                        encoder,
                    },
                    state.calib.clone(),
                );
                let policy = NetPolicy {
                    params: &state.psi,
                    encoder,
                };
                let (z, chosen) =
                    rollout::select_next(&x, &rcfg, bank, &critic, &policy, sim, &persona)?;
                entries.push(BatchEntry {
                    prefix: x,
                    chosen,
                    z,
                    y: label(&persona),
                });
            }
        }
        while entries.len() < cfg.batch_size {
            let seed = state.rng.gen::<u64>();
            let persona = sim.sample_persona(seed);
            let critic = fairness::corrected(
                NetCritic {
                    params: &state.phi,
                    encoder,
                },
                state.calib.clone(),
            );
            let policy = NetPolicy {
                params: &state.psi,
                encoder,
            };
            let conv = run_conversation(&persona, &critic, &policy, sim, bank, &rcfg, i + 1)?;
            let step = conv.steps[i].clone();
            entries.push(BatchEntry {
                prefix: conv.transcript.prefix(1 + i),
                chosen: step.chosen,
                z: step.z,
                y: label(&persona),
            });
        }
        state.train_conversations += entries.len() as u64;

        let tensors: Vec<TranscriptTensor> = entries
            .iter()
            .map(|e| encoder.tensorize(&e.prefix))
            .collect::<Result<_, _>>()?;
        let asked: Vec<BTreeSet<usize>> = entries.iter().map(|e| e.prefix.asked_ids()).collect();

        // Policy: ascend the certainty-weighted log-likelihood.
        let rl_batch: Vec<ReinforceSample<'_>> = entries
            .iter()
            .enumerate()
            .map(|(j, e)| ReinforceSample {
                tensor: &tensors[j],
                asked: &asked[j],
                chosen: e.chosen,
                reward: e.z,
            })
            .collect();
        let ascent = nnet::grad_reinforce(&state.psi, &rl_batch)?;
        let descent = scaled(ascent, -1.0);
        apply_update(
            &mut state.psi,
            &descent,
            &mut state.adam_psi,
            cfg.actor_lr,
            cfg.optimizer,
        )?;

        // Critic: descend the supervised MSE.
        let mse_batch: Vec<(&TranscriptTensor, f64)> = entries
            .iter()
            .enumerate()
            .map(|(j, e)| (&tensors[j], e.y))
            .collect();
        let grad = nnet::grad_mse(&state.phi, &mse_batch)?;
        apply_update(
            &mut state.phi,
            &grad,
            &mut state.adam_phi,
            cfg.critic_lr,
            cfg.optimizer,
        )?;
    }
    Ok(())
}

/// Draws labeled transcripts the way training batches do: a fresh persona
/// and a random length `i < max_questions`.
pub fn collect_samples<S: ResponseSimulator + ?Sized>(
    state: &mut TrainRunState,
    cfg: &TrainConfig,
    sim: &S,
    bank: &QuestionBank,
    encoder: &Encoder,
    count: usize,
) -> Result<Vec<(Transcript, Persona)>, TrainerError> {
    let rcfg = cfg.rollout_config();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let i = state.rng.gen_range(0..cfg.max_questions);
        let seed = state.rng.gen::<u64>();
        let persona = sim.sample_persona(seed);
        let critic = fairness::corrected(
            NetCritic {
                params: &state.phi,
                encoder,
            },
            state.calib.clone(),
        );
        let policy = NetPolicy {
            params: &state.psi,
            encoder,
        };
        let conv = run_conversation(&persona, &critic, &policy, sim, bank, &rcfg, i)?;
        out.push((conv.transcript, persona));
    }
    Ok(out)
}

/// Calibration with the audit tolerance taken from the config.
pub fn calibration_phase<S: ResponseSimulator + ?Sized>(
    state: &mut TrainRunState,
    cfg: &TrainConfig,
    sim: &S,
    bank: &QuestionBank,
    encoder: &Encoder,
) -> Result<AuditReport, TrainerError> {
    calibration_phase_with_audit_eps(state, cfg, sim, bank, encoder, cfg.eps)
}

/// Collects `threshold(eps, delta, |C|)` fresh labeled transcripts, fits
/// calibration weights against the raw critic, installs the corrected
/// predictor, and audits it on a held-out batch of
/// `batch_size * batches_per_calibration` samples. A passing audit becomes
/// the new last-feasible snapshot; a failing one restores the previous
/// snapshot and reports `CalibrationFailed`. `audit_eps` is separated from
/// the fitting eps so tests can force a failure.
pub fn calibration_phase_with_audit_eps<S: ResponseSimulator + ?Sized>(
    state: &mut TrainRunState,
    cfg: &TrainConfig,
    sim: &S,
    bank: &QuestionBank,
    encoder: &Encoder,
    audit_eps: f64,
) -> Result<AuditReport, TrainerError> {
    state.calibrations_attempted += 1;
    let tau = fairness::threshold(cfg.eps, cfg.delta, FAMILY_SIZE);
    state.last_tau = Some(tau);

    let collection = collect_samples(state, cfg, sim, bank, encoder, tau as usize)?;
    let warm: Vec<(Transcript, Persona)> = collection
        .iter()
        .take(cfg.batch_size)
        .cloned()
        .collect();
    let data: Vec<(Transcript, f64)> = collection
        .into_iter()
        .map(|(x, p)| {
            let y = label(&p);
            (x, y)
        })
        .collect();

    let raw = NetCritic {
        params: &state.phi,
        encoder,
    };
    let weights = fairness::solve_calibration(&raw, &data, cfg.eps, &cfg.solver)?;

    let test_count = cfg.batch_size * cfg.batches_per_calibration;
    let test_collection = collect_samples(state, cfg, sim, bank, encoder, test_count)?;
    let test_data: Vec<(Transcript, f64)> = test_collection
        .into_iter()
        .map(|(x, p)| {
            let y = label(&p);
            (x, y)
        })
        .collect();

    let fixed = fairness::corrected(
        NetCritic {
            params: &state.phi,
            encoder,
        },
        weights.clone(),
    );
    let report = fairness::audit(&fixed, &test_data, audit_eps)?;
    state.last_calibration_data = data;
    if report.passed {
        state.calib = weights;
        state.warm_batch = warm;
        state.last_feasible = state.snapshot();
        state.calibrations_passed += 1;
        Ok(report)
    } else {
        state.restore_last_feasible();
        state.rollbacks += 1;
        Err(TrainerError::CalibrationFailed {
            sup_abs: report.sup_abs,
            eps: audit_eps,
        })
    }
}

/// Per-epoch evaluation on the fixed held-out personas: full-length
/// interviews under the current working critic and policy.
fn evaluate_epoch<S: ResponseSimulator + ?Sized>(
    state: &TrainRunState,
    cfg: &TrainConfig,
    sim: &S,
    bank: &QuestionBank,
    encoder: &Encoder,
    eval_personas: &[Persona],
    calibration_performed: bool,
    rollback: bool,
) -> Result<MetricRow, TrainerError> {
    let rcfg = cfg.rollout_config();
    let working = fairness::corrected(
        NetCritic {
            params: &state.phi,
            encoder,
        },
        state.calib.clone(),
    );
    let policy = NetPolicy {
        params: &state.psi,
        encoder,
    };

    let mut data: Vec<(Transcript, f64)> = Vec::with_capacity(eval_personas.len());
    let mut z_values = Vec::new();
    for persona in eval_personas {
        let conv = run_conversation(
            persona,
            &working,
            &policy,
            sim,
            bank,
            &rcfg,
            cfg.max_questions,
        )?;
        z_values.extend(conv.steps.iter().map(|s| s.z));
        data.push((conv.transcript, label(persona)));
    }

    let (loss_sum, loss_mean) =
        evalkit::accuracy_loss(&working, &data).expect("eval set is nonempty");
    let accuracy = 1.0 - loss_mean;
    let accuracy_samples: Vec<f64> = data
        .iter()
        .map(|(x, y)| 1.0 - (evalkit::round_half_up(working.predict(x)) as f64 - y).abs())
        .collect();

    // Aggregate fairness loss comes straight from the fairness module; the
    // per-sample vector below only feeds the bootstrap.
    let fairness_loss = fairness::ma_loss(&state.calib, &working.inner, &data)?;
    let penalty = state.calib.eps * state.calib.l1_norm();
    let fairness_samples: Vec<f64> = data
        .iter()
        .map(|(x, y)| {
            let p = fairness::clamp_unit(working.predict(x));
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()) + penalty
        })
        .collect();

    let sup_abs = fairness::audit(&working, &data, cfg.eps)?.sup_abs;
    let mean_z = z_values.iter().sum::<f64>() / z_values.len().max(1) as f64;

    let ci = |samples: &[f64], k: u64| {
        evalkit::bootstrap_ci(
            samples,
            cfg.bootstrap_resamples,
            cfg.bootstrap_level,
            mix_seed(cfg.seed, &[TAG_BOOT, state.epoch, k]),
        )
        .expect("nonempty samples")
    };

    Ok(MetricRow {
        epoch: state.epoch,
        regime: cfg.regime.label().to_string(),
        accuracy,
        accuracy_loss: loss_sum,
        fairness_loss,
        sup_abs,
        mean_z,
        accuracy_ci: ci(&accuracy_samples, 0),
        fairness_ci: ci(&fairness_samples, 1),
        z_ci: ci(&z_values, 2),
        calibration_performed,
        rollback,
    })
}

/// Trains with the standard persona simulator built from the config.
pub fn train(cfg: &TrainConfig, checkpoint_dir: Option<&Path>) -> Result<TrainRunState, TrainerError> {
    let bank = match &cfg.bank_path {
        Some(p) => load_bank(p)?,
        None => QuestionBank::default_bank().clone(),
    };
    let sim = Simulator::new(bank.clone(), cfg.sim_config());
    train_with_simulator(cfg, &sim, &bank, checkpoint_dir)
}

/// Trains against any response simulator. Alternates a training phase and
/// a regime-gated calibration phase for `cfg.epochs` epochs, evaluating on
/// a fixed held-out persona set after each epoch. When `checkpoint_dir` is
/// set, a checkpoint is written after every passing calibration.
pub fn train_with_simulator<S: ResponseSimulator + ?Sized>(
    cfg: &TrainConfig,
    sim: &S,
    bank: &QuestionBank,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainRunState, TrainerError> {
    cfg.validate(bank)?;
    let encoder = Encoder::new(bank, cfg.embed_dim);
    let mut state = TrainRunState::init(cfg, &encoder, bank);
    let eval_personas: Vec<Persona> = (0..cfg.eval_size as u64)
        .map(|k| sim.sample_persona(mix_seed(cfg.seed, &[TAG_EVAL, k])))
        .collect();

    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        train_phase(&mut state, cfg, sim, bank, &encoder)?;

        let gate = cfg.regime_active(epoch);
        let mut rollback = false;
        if gate {
            match calibration_phase(&mut state, cfg, sim, bank, &encoder) {
                Ok(_) => {
                    if let Some(dir) = checkpoint_dir {
                        let path = dir.join(format!("checkpoint_epoch_{epoch:04}.json"));
                        crate::checkpoint::save_checkpoint(&path, &state, cfg, bank)?;
                    }
                }
                Err(TrainerError::CalibrationFailed { .. }) => {
                    rollback = true;
                }
                Err(e) => return Err(e),
            }
        }

        let row = evaluate_epoch(
            &state,
            cfg,
            sim,
            bank,
            &encoder,
            &eval_personas,
            gate,
            rollback,
        )?;
        state.history.push(row);
    }
    Ok(state)
}

/// Writes the training metrics CSV in the documented column order.
pub fn write_metrics_csv(path: &Path, history: &[MetricRow]) -> Result<(), std::io::Error> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{}", evalkit::METRICS_CSV_HEADER)?;
    for row in history {
        writeln!(f, "{}", row.csv_row())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::Mat;

    fn tiny_bank() -> QuestionBank {
        QuestionBank::new(
            "beta",
            &["alpha".to_string(), "beta".to_string(), "gamma".to_string()],
        )
        .unwrap()
    }

    /// Fast config for unit tests: tiny bank, tiny threshold, and a
    /// tolerance loose enough that a barely-trained critic still audits
    /// clean.
    fn tiny_config() -> TrainConfig {
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

    fn setup(cfg: &TrainConfig) -> (QuestionBank, Simulator, Encoder, TrainRunState) {
        let bank = tiny_bank();
        let sim = Simulator::new(bank.clone(), cfg.sim_config());
        let encoder = Encoder::new(&bank, cfg.embed_dim);
        let state = TrainRunState::init(cfg, &encoder, &bank);
        (bank, sim, encoder, state)
    }

    #[test]
    fn conversation_shape_follows_question_budget() {
        let cfg = tiny_config();
        let (bank, sim, encoder, state) = setup(&cfg);
        let persona = sim.sample_persona(7);
        let critic = NetCritic {
            params: &state.phi,
            encoder: &encoder,
        };
        let policy = NetPolicy {
            params: &state.psi,
            encoder: &encoder,
        };
        let rcfg = RolloutConfig {
            candidates: 2,
            depth: 1,
            max_questions: 2,
        };
        let conv =
            run_conversation(&persona, &critic, &policy, &sim, &bank, &rcfg, 2).unwrap();
        assert_eq!(conv.transcript.len(), 3);
        assert_eq!(conv.steps.len(), 2);
        assert_eq!(conv.steps[0].prefix_len, 1);
        assert_eq!(conv.steps[1].prefix_len, 2);

        let empty =
            run_conversation(&persona, &critic, &policy, &sim, &bank, &rcfg, 0).unwrap();
        assert_eq!(empty.transcript.len(), 1);
        assert!(empty.steps.is_empty());

        let again =
            run_conversation(&persona, &critic, &policy, &sim, &bank, &rcfg, 2).unwrap();
        assert_eq!(conv, again, "conversations are reproducible");
    }

    #[test]
    fn one_batch_means_one_update_per_model() {
        let mut cfg = tiny_config();
        cfg.batch_size = 1;
        cfg.batches_per_calibration = 1;
        let (bank, sim, encoder, mut state) = setup(&cfg);
        train_phase(&mut state, &cfg, &sim, &bank, &encoder).unwrap();
        assert_eq!(state.adam_psi.step, 1);
        assert_eq!(state.adam_phi.step, 1);
        assert_eq!(state.train_conversations, 1);
    }

    #[test]
    fn desk_shape_runs_32_conversations_between_calibrations() {
        let cfg = TrainConfig::desk();
        assert_eq!(cfg.batch_size * cfg.batches_per_calibration, 32);

        let mut small = tiny_config();
        small.batch_size = 8;
        small.batches_per_calibration = 4;
        let (bank, sim, encoder, mut state) = setup(&small);
        train_phase(&mut state, &small, &sim, &bank, &encoder).unwrap();
        assert_eq!(state.train_conversations, 32);
    }

    #[test]
    fn exactly_half_critic_produces_no_policy_motion() {
        let mut cfg = tiny_config();
        cfg.batch_size = 2;
        cfg.batches_per_calibration = 1;
        let (bank, sim, encoder, mut state) = setup(&cfg);
        // Zero the critic head: every score is exactly 0.5, so Z = 0 and
        // the REINFORCE gradient vanishes.
        state.phi.tensors.w2 = Mat::zeros(cfg.hidden_dim, 1);
        state.phi.tensors.b2 = vec![0.0];
        let psi_before = state.psi.clone();
        train_phase(&mut state, &cfg, &sim, &bank, &encoder).unwrap();
        assert_eq!(state.psi, psi_before);
        assert_eq!(state.adam_psi.step, 1);
    }

    #[test]
    fn calibration_collects_the_threshold_sample_count() {
        let mut cfg = tiny_config();
        cfg.eps = 0.1;
        cfg.delta = 1e-6;
        let (bank, sim, encoder, mut state) = setup(&cfg);
        let _ = calibration_phase(&mut state, &cfg, &sim, &bank, &encoder);
        assert_eq!(state.last_tau, Some(1_560));
    }

    #[test]
    fn passing_calibration_installs_weights_and_snapshots() {
        let cfg = tiny_config();
        let (bank, sim, encoder, mut state) = setup(&cfg);
        let report = calibration_phase(&mut state, &cfg, &sim, &bank, &encoder).unwrap();
        assert!(report.passed);
        assert_eq!(state.calibrations_passed, 1);
        assert_eq!(state.last_feasible.calib, state.calib);
        assert!(!state.warm_batch.is_empty());
    }

    #[test]
    fn failed_audit_rolls_back_to_last_feasible_byte_for_byte() {
        let cfg = tiny_config();
        let (bank, sim, encoder, mut state) = setup(&cfg);
        // Establish a non-initial feasible state first.
        train_phase(&mut state, &cfg, &sim, &bank, &encoder).unwrap();
        calibration_phase(&mut state, &cfg, &sim, &bank, &encoder).unwrap();
        let feasible = state.last_feasible.clone();

        // Drift, then force an audit failure with eps = 0.
        train_phase(&mut state, &cfg, &sim, &bank, &encoder).unwrap();
        let err =
            calibration_phase_with_audit_eps(&mut state, &cfg, &sim, &bank, &encoder, 0.0)
                .unwrap_err();
        assert!(matches!(err, TrainerError::CalibrationFailed { .. }));
        assert_eq!(state.rollbacks, 1);
        assert_eq!(state.snapshot(), feasible);
        let restored = serde_json::to_string(&state.snapshot()).unwrap();
        let expected = serde_json::to_string(&feasible).unwrap();
        assert_eq!(restored, expected);
    }

    #[test]
    fn never_regime_skips_calibration_entirely() {
        let mut cfg = tiny_config();
        cfg.regime = Regime::Never;
        cfg.epochs = 2;
        let bank = tiny_bank();
        let sim = Simulator::new(bank.clone(), cfg.sim_config());
        let state = train_with_simulator(&cfg, &sim, &bank, None).unwrap();
        assert_eq!(state.calibrations_attempted, 0);
        assert_eq!(state.calib.l, [0.0; FAMILY_SIZE]);
        assert!(state.history.iter().all(|r| !r.calibration_performed));
    }

    #[test]
    fn regime_gates_follow_t() {
        let mut cfg = tiny_config();
        cfg.regime = Regime::OnlyFinal;
        cfg.regime_t = Some(3);
        assert!(!cfg.regime_active(2));
        assert!(cfg.regime_active(3));
        assert!(!cfg.regime_active(4));
        cfg.regime = Regime::UntilT;
        assert!(cfg.regime_active(0));
        assert!(cfg.regime_active(3));
        assert!(!cfg.regime_active(4));
    }

    #[test]
    fn zero_epochs_returns_the_initial_state() {
        let mut cfg = tiny_config();
        cfg.epochs = 0;
        let bank = tiny_bank();
        let sim = Simulator::new(bank.clone(), cfg.sim_config());
        let state = train_with_simulator(&cfg, &sim, &bank, None).unwrap();
        assert!(state.history.is_empty());
        assert_eq!(state.adam_phi.step, 0);
        assert_eq!(state.train_conversations, 0);
    }

    #[test]
    fn training_is_deterministic_end_to_end() {
        let cfg = tiny_config();
        let bank = tiny_bank();
        let sim = Simulator::new(bank.clone(), cfg.sim_config());
        let a = train_with_simulator(&cfg, &sim, &bank, None).unwrap();
        let b = train_with_simulator(&cfg, &sim, &bank, None).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.phi, b.phi);
        assert_eq!(a.psi, b.psi);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bank = tiny_bank();
        let mut cfg = tiny_config();
        cfg.eps = 0.0;
        assert!(matches!(
            cfg.validate(&bank),
            Err(TrainerError::ConfigInvalid(_))
        ));
        let mut cfg = tiny_config();
        cfg.regime = Regime::UntilT;
        cfg.regime_t = None;
        assert!(matches!(
            cfg.validate(&bank),
            Err(TrainerError::ConfigInvalid(_))
        ));
        let mut cfg = tiny_config();
        cfg.max_questions = 4; // 3-question bank cannot host 4 questions + rollouts
        assert!(matches!(
            cfg.validate(&bank),
            Err(TrainerError::ConfigInvalid(_))
        ));
    }

    #[test]
    fn paper_profile_matches_published_hyperparameters() {
        let cfg = TrainConfig::paper();
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.batch_size * cfg.batches_per_calibration, 32);
        assert_eq!(cfg.eps, 0.01);
        assert_eq!(cfg.max_questions, 2);
        assert_eq!(cfg.rollout_depth, 2);
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.prevalence, 0.2);
    }
}
