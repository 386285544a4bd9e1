//! Operator commands: training runs, checkpoint audits, regime comparison
//! reports, and a terminal interview against a trained checkpoint.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde_json::Value;
use thiserror::Error;

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use crate::encoder::Encoder;
use crate::evalkit::{regime_report, EvalError};
use crate::fairness::{self, AuditReport};
use crate::question_bank::render_question;
use crate::rollout::{self, NetPolicy, QuestionPolicy};
use crate::simulator::{load_personas, Persona, Response, ResponseSimulator, Simulator, SimulatorError};
use crate::text::mix_seed;
use crate::trainer::{self, train, Regime, TrainConfig, TrainerError};
use crate::trait_scores::TraitFamily;
use crate::transcript::Transcript;
use crate::{NetCritic, Predictor};

const TAG_AUDIT_LENGTH: u64 = 0x77;
const TAG_FINAL_AUDIT: u64 = 0x78;
const NEUTRAL_PERSONA_SEED: u64 = 0xBEEF;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("io failure: {0}")]
    IoFailure(String),
    #[error("malformed persona file: {0}")]
    MalformedPersonaFile(String),
    #[error("audit did not pass")]
    AuditFailed,
    #[error("no calibration phase ever passed")]
    CalibrationExhausted,
    #[error(transparent)]
    Trainer(TrainerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    /// Process exit code: 2 for configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid(_) => 2,
            CliError::Trainer(TrainerError::ConfigInvalid(_)) => 2,
            _ => 1,
        }
    }
}

impl From<TrainerError> for CliError {
    fn from(e: TrainerError) -> Self {
        match e {
            TrainerError::ConfigInvalid(msg) => CliError::ConfigInvalid(msg),
            other => CliError::Trainer(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::IoFailure(e.to_string())
    }
}

impl From<SimulatorError> for CliError {
    fn from(e: SimulatorError) -> Self {
        match e {
            SimulatorError::Io(io) => CliError::IoFailure(io.to_string()),
            SimulatorError::MalformedPersonaFile(msg) => CliError::MalformedPersonaFile(msg),
        }
    }
}

/// A named configuration bundle: profile defaults plus output location.
#[derive(Clone, Debug)]
pub struct RunProfile {
    pub name: String,
    pub config: TrainConfig,
    pub out_dir: PathBuf,
}

impl RunProfile {
    pub fn by_name(name: &str, out_dir: &Path) -> Result<RunProfile, CliError> {
        let config = match name {
            "desk" => TrainConfig::desk(),
            "paper" => TrainConfig::paper(),
            other => {
                return Err(CliError::ConfigInvalid(format!(
                    "unknown profile '{other}' (expected desk or paper)"
                )))
            }
        };
        Ok(RunProfile {
            name: name.to_string(),
            config,
            out_dir: out_dir.to_path_buf(),
        })
    }
}

/// Flag-level overrides applied on top of profile + config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config_file: Option<PathBuf>,
    pub sets: Vec<(String, String)>,
    pub epochs: Option<u64>,
    pub seed: Option<u64>,
    pub eps: Option<f64>,
    pub regime: Option<String>,
    pub t: Option<u64>,
}

/// Resolves the effective config: profile defaults, then the config file,
/// then dotted-path `--set` entries, then dedicated flags, then the
/// ELICIT_SEED environment variable.
pub fn resolve_config(profile: &TrainConfig, ov: &Overrides) -> Result<TrainConfig, CliError> {
    let mut value =
        serde_json::to_value(profile).expect("config serialization cannot fail");

    if let Some(path) = &ov.config_file {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::IoFailure(format!("{}: {e}", path.display())))?;
        let file_value: Value = serde_json::from_str(&raw)
            .map_err(|e| CliError::ConfigInvalid(format!("config file: {e}")))?;
        merge(&mut value, &file_value);
    }
    for (path, raw) in &ov.sets {
        set_dotted(&mut value, path, raw)?;
    }
    if let Some(epochs) = ov.epochs {
        value["epochs"] = epochs.into();
    }
    if let Some(seed) = ov.seed {
        value["seed"] = seed.into();
    }
    if let Some(eps) = ov.eps {
        value["eps"] = json_f64(eps);
    }
    if let Some(regime) = &ov.regime {
        let parsed = Regime::parse(regime).ok_or_else(|| {
            CliError::ConfigInvalid(format!(
                "unknown regime '{regime}' (expected every, never, only-final or until-t)"
            ))
        })?;
        value["regime"] = serde_json::to_value(parsed).unwrap();
    }
    if let Some(t) = ov.t {
        value["regime_t"] = t.into();
    }
    if let Ok(env_seed) = std::env::var("ELICIT_SEED") {
        let seed: u64 = env_seed.parse().map_err(|e| {
            CliError::ConfigInvalid(format!("ELICIT_SEED must be an integer: {e}"))
        })?;
        value["seed"] = seed.into();
    }

    serde_json::from_value(value).map_err(|e| CliError::ConfigInvalid(e.to_string()))
}

fn json_f64(eps: f64) -> Value {
    serde_json::Number::from_f64(eps)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

fn merge(base: &mut Value, other: &Value) {
    match (base, other) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn set_dotted(value: &mut Value, path: &str, raw: &str) -> Result<(), CliError> {
    let mut cursor = value;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if i + 1 == segments.len() {
            let leaf: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
            match cursor {
                Value::Object(map) => {
                    map.insert(seg.to_string(), leaf);
                }
                _ => {
                    return Err(CliError::ConfigInvalid(format!(
                        "cannot set '{path}': parent is not an object"
                    )))
                }
            }
        } else {
            cursor = match cursor {
                Value::Object(map) => map
                    .entry(seg.to_string())
                    .or_insert_with(|| Value::Object(Default::default())),
                _ => {
                    return Err(CliError::ConfigInvalid(format!(
                        "cannot set '{path}': parent is not an object"
                    )))
                }
            };
        }
    }
    Ok(())
}

/// Outcome summary for a training run.
pub struct TrainSummary {
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub final_audit: AuditReport,
    pub calibrations_passed: u64,
    pub rollbacks: u64,
}

/// Runs training, writing the metrics CSV, per-pass checkpoints, the final
/// checkpoint and a final audit report into the output directory.
pub fn cmd_train(
    cfg: &TrainConfig,
    out_dir: &Path,
    log: &mut dyn Write,
) -> Result<TrainSummary, CliError> {
    std::fs::create_dir_all(out_dir)?;
    let tau = fairness::threshold(cfg.eps, cfg.delta, crate::trait_scores::FAMILY_SIZE);
    writeln!(log, "calibration threshold tau = {tau} samples per phase")?;

    let state = train(cfg, Some(out_dir))?;

    let metrics_path = out_dir.join("metrics.csv");
    trainer::write_metrics_csv(&metrics_path, &state.history)?;

    let bank = match &cfg.bank_path {
        Some(p) => crate::question_bank::load_bank(p).map_err(TrainerError::from)?,
        None => crate::question_bank::QuestionBank::default_bank().clone(),
    };
    let final_checkpoint = out_dir.join("checkpoint_final.json");
    save_checkpoint(&final_checkpoint, &state, cfg, &bank)?;

    // Final audit on a fresh, trusted-size sample.
    let sim = Simulator::new(bank.clone(), cfg.sim_config());
    let encoder = Encoder::new(&bank, cfg.embed_dim);
    let personas: Vec<Persona> = (0..tau)
        .map(|k| sim.sample_persona(mix_seed(cfg.seed, &[TAG_FINAL_AUDIT, k])))
        .collect();
    let final_audit = audit_personas(
        &state.phi,
        &state.psi,
        &state.calib,
        &encoder,
        &bank,
        cfg,
        &sim,
        &personas,
        cfg.eps,
    )?;
    std::fs::write(
        out_dir.join("final_audit.json"),
        serde_json::to_string_pretty(&final_audit).expect("report serializes"),
    )?;
    writeln!(
        log,
        "trained {} epochs: {} calibrations passed, {} rollbacks, final audit sup_abs {:.4} ({})",
        cfg.epochs,
        state.calibrations_passed,
        state.rollbacks,
        final_audit.sup_abs,
        if final_audit.passed { "passed" } else { "failed" },
    )?;

    if cfg.regime != Regime::Never
        && state.calibrations_attempted > 0
        && state.calibrations_passed == 0
    {
        return Err(CliError::CalibrationExhausted);
    }
    Ok(TrainSummary {
        metrics_path,
        final_checkpoint,
        final_audit,
        calibrations_passed: state.calibrations_passed,
        rollbacks: state.rollbacks,
    })
}

#[allow(clippy::too_many_arguments)]
fn audit_personas(
    phi: &crate::nnet::ModelParams,
    psi: &crate::nnet::ModelParams,
    calib: &fairness::CalibrationWeights,
    encoder: &Encoder,
    bank: &crate::question_bank::QuestionBank,
    cfg: &TrainConfig,
    sim: &Simulator,
    personas: &[Persona],
    eps: f64,
) -> Result<AuditReport, CliError> {
    let working = fairness::corrected(NetCritic { params: phi, encoder }, calib.clone());
    let policy = NetPolicy { params: psi, encoder };
    let rcfg = cfg.rollout_config();
    let mut data = Vec::with_capacity(personas.len());
    for p in personas {
        let i = (mix_seed(p.seed, &[TAG_AUDIT_LENGTH]) % cfg.max_questions as u64) as usize;
        let conv = trainer::run_conversation(p, &working, &policy, sim, bank, &rcfg, i)
            .map_err(TrainerError::from)?;
        data.push((conv.transcript, f64::from(p.has_target)));
    }
    Ok(fairness::audit(&working, &data, eps).map_err(TrainerError::from)?)
}

/// Audits a checkpoint against a persona file, printing the report JSON.
/// Returns the report; callers exit nonzero when it did not pass.
pub fn cmd_audit(
    checkpoint_path: &Path,
    persona_path: &Path,
    eps: f64,
    out: &mut dyn Write,
) -> Result<AuditReport, CliError> {
    let ckpt = load_checkpoint(checkpoint_path)?;
    let cfg = ckpt.config.clone();
    let bank = ckpt.bank.clone();
    let sim = Simulator::new(bank.clone(), cfg.sim_config());
    let encoder = Encoder::new(&bank, cfg.embed_dim);
    let personas = load_personas(persona_path, &sim)?;
    let report = audit_personas(
        &ckpt.phi,
        &ckpt.psi,
        &ckpt.calibration,
        &encoder,
        &bank,
        &cfg,
        &sim,
        &personas,
        eps,
    )?;
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    )?;
    Ok(report)
}

/// Question-selection mode for interviews.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterviewMode {
    /// Pick the rollout-certainty argmax against a neutral simulated
    /// continuation.
    Argmax,
    /// Sample directly from the policy distribution.
    Sample,
}

impl InterviewMode {
    pub fn parse(s: &str) -> Option<InterviewMode> {
        match s {
            "argmax" => Some(InterviewMode::Argmax),
            "sample" => Some(InterviewMode::Sample),
            _ => None,
        }
    }
}

/// One logged interview line: `{"q": int|null, "text": ..., "score": float|null}`.
#[derive(serde::Serialize, serde::Deserialize)]
pub struct InterviewLogLine {
    pub q: Option<usize>,
    pub text: String,
    pub score: Option<f64>,
}

/// Runs a terminal interview against a checkpoint: the initial prompt,
/// up to `max_questions` policy-chosen questions, then the corrected score
/// and the per-trait calibration contributions. Empty answers re-prompt
/// once and are then accepted.
pub fn cmd_interview(
    checkpoint_path: &Path,
    mode: InterviewMode,
    max_questions: usize,
    log_path: &Path,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<f64, CliError> {
    let ckpt = load_checkpoint(checkpoint_path)?;
    let cfg = ckpt.config.clone();
    let bank = ckpt.bank.clone();
    let encoder = Encoder::new(&bank, cfg.embed_dim);
    let sim = Simulator::new(bank.clone(), cfg.sim_config());
    let working = fairness::corrected(
        NetCritic {
            params: &ckpt.phi,
            encoder: &encoder,
        },
        ckpt.calibration.clone(),
    );
    let policy = NetPolicy {
        params: &ckpt.psi,
        encoder: &encoder,
    };
    let rcfg = cfg.rollout_config();
    let vocab = bank.skills();
    // Rollout continuations during a live interview come from a neutral
    // simulated respondent.
    let neutral = Persona::build(
        0,
        BTreeSet::new(),
        [0.5; 5],
        NEUTRAL_PERSONA_SEED,
        bank.target_skill(),
    );

    let mut log_lines: Vec<InterviewLogLine> = Vec::new();
    let mut transcript = Transcript::new();

    writeln!(out, "Please describe yourself.")?;
    let answer = read_answer(input, out)?;
    transcript.push(None, Response::from_text(&answer.to_lowercase(), &vocab));
    log_lines.push(InterviewLogLine {
        q: None,
        text: answer,
        score: None,
    });

    for round in 0..max_questions {
        if transcript.asked_ids().len() >= bank.len() {
            break;
        }
        let qid = match mode {
            InterviewMode::Argmax => {
                let (_z, qid) = rollout::select_next(
                    &transcript,
                    &rcfg,
                    &bank,
                    &working,
                    &policy,
                    &sim,
                    &neutral,
                )
                .map_err(TrainerError::from)?;
                qid
            }
            InterviewMode::Sample => {
                let dist = policy.distribution(&transcript).map_err(TrainerError::from)?;
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                    NEUTRAL_PERSONA_SEED,
                    &[round as u64, transcript.len() as u64],
                ));
                rollout::sample_question(&dist, &mut rng)
            }
        };
        let prompt = render_question(&bank, qid).map_err(TrainerError::from)?;
        writeln!(out, "{prompt}")?;
        let answer = read_answer(input, out)?;
        transcript.push(Some(qid), Response::from_text(&answer.to_lowercase(), &vocab));
        log_lines.push(InterviewLogLine {
            q: Some(qid),
            text: answer,
            score: None,
        });
    }

    let score = working.predict(&transcript);
    writeln!(out, "final score: {score:.6}")?;
    let family = TraitFamily;
    let scores = family.score_all(&transcript).expect("nonempty transcript");
    for (i, name) in family.member_names().iter().enumerate() {
        writeln!(
            out,
            "  {name}: l = {:+.4}, c(x) = {:.4}, contribution = {:+.4}",
            ckpt.calibration.l[i],
            scores[i],
            ckpt.calibration.l[i] * scores[i]
        )?;
    }
    log_lines.push(InterviewLogLine {
        q: None,
        text: String::new(),
        score: Some(score),
    });

    let mut file = std::fs::File::create(log_path)?;
    for line in &log_lines {
        writeln!(file, "{}", serde_json::to_string(line).expect("log serializes"))?;
    }
    Ok(score)
}

fn read_answer(input: &mut dyn BufRead, out: &mut dyn Write) -> Result<String, CliError> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Ok(String::new());
    }
    let trimmed = line.trim().to_string();
    if !trimmed.is_empty() {
        return Ok(trimmed);
    }
    // One re-prompt, then accept whatever comes.
    writeln!(out, "(please answer)")?;
    let mut retry = String::new();
    input.read_line(&mut retry)?;
    Ok(retry.trim().to_string())
}

/// Runs the four correction regimes on shared seeds and writes the figure
/// CSVs. `t` feeds the only-final and until-t schedules.
pub fn cmd_regimes(
    base: &TrainConfig,
    regimes: &[String],
    t: Option<u64>,
    out_dir: &Path,
    log: &mut dyn Write,
) -> Result<Vec<PathBuf>, CliError> {
    let mut cfgs = Vec::new();
    for name in regimes {
        let regime = Regime::parse(name).ok_or_else(|| {
            CliError::ConfigInvalid(format!("unknown regime '{name}'"))
        })?;
        let mut cfg = base.clone();
        cfg.regime = regime;
        cfg.regime_t = match regime {
            Regime::OnlyFinal | Regime::UntilT => Some(t.ok_or_else(|| {
                CliError::ConfigInvalid(format!("regime '{name}' requires --t"))
            })?),
            _ => None,
        };
        cfgs.push(cfg);
    }
    let paths = regime_report(&cfgs, out_dir)?;
    for p in &paths {
        writeln!(log, "wrote {}", p.display())?;
    }
    Ok(paths)
}
