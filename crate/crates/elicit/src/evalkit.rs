//! Evaluation metrics: rounded accuracy loss, percentile-bootstrap
//! confidence intervals, and figure-data emission for regime comparisons.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trainer::{train, TrainConfig, TrainerError};
use crate::transcript::Transcript;
use crate::Predictor;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty dataset")]
    EmptyData,
    #[error("bootstrap needs at least one resample")]
    NoResamples,
    #[error("regime-report configs must differ only in regime: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Train(#[from] TrainerError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One epoch of evaluation metrics, with bootstrap intervals for the
/// figure metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: u64,
    pub regime: String,
    pub accuracy: f64,
    pub accuracy_loss: u64,
    pub fairness_loss: f64,
    pub sup_abs: f64,
    pub mean_z: f64,
    pub accuracy_ci: (f64, f64),
    pub fairness_ci: (f64, f64),
    pub z_ci: (f64, f64),
    pub calibration_performed: bool,
    pub rollback: bool,
}

/// Header of the training metrics CSV.
pub const METRICS_CSV_HEADER: &str =
    "epoch,regime,accuracy,accuracy_loss,fairness_loss,sup_abs,mean_Z,calibration_performed,rollback";

impl MetricRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.regime,
            self.accuracy,
            self.accuracy_loss,
            self.fairness_loss,
            self.sup_abs,
            self.mean_z,
            self.calibration_performed,
            self.rollback
        )
    }
}

/// Rounds at 1/2 with ties going up: round(0.5) = 1.
pub fn round_half_up(p: f64) -> u64 {
    u64::from(p >= 0.5)
}

/// Total and mean absolute rounded error: `sum_j |round(f(x_j)) - y_j|`.
pub fn accuracy_loss<P: Predictor + ?Sized>(
    pred: &P,
    data: &[(Transcript, f64)],
) -> Result<(u64, f64), EvalError> {
    if data.is_empty() {
        return Err(EvalError::EmptyData);
    }
    let sum: u64 = data
        .iter()
        .map(|(x, y)| round_half_up(pred.predict(x)).abs_diff(*y as u64))
        .sum();
    Ok((sum, sum as f64 / data.len() as f64))
}

/// Percentile bootstrap of the mean.
///
/// Procedure (fixed so independent implementations agree): seed a ChaCha8
/// stream, draw `resamples` resamples of `n` indices via `gen_range(0..n)`,
/// take each resample's mean, sort ascending, and return the elements at
/// positions `floor(((1-level)/2) * R)` and `floor(((1+level)/2) * R)`,
/// clamped to the last index. `level = 0` degenerates to the median of the
/// resampled means.
pub fn bootstrap_ci(
    samples: &[f64],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64), EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyData);
    }
    if resamples == 0 {
        return Err(EvalError::NoResamples);
    }
    let n = samples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += samples[rng.gen_range(0..n)];
        }
        means.push(acc / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).expect("finite means"));
    let idx = |p: f64| -> usize { ((p * resamples as f64).floor() as usize).min(resamples - 1) };
    let alpha = 1.0 - level;
    Ok((means[idx(alpha / 2.0)], means[idx(1.0 - alpha / 2.0)]))
}

/// Runs each regime configuration and writes one CSV per figure metric
/// (accuracy, fairness loss, Z-scores), all keyed by epoch and regime.
/// Returns the written paths.
pub fn regime_report(cfgs: &[TrainConfig], out_dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    if cfgs.is_empty() {
        return Err(EvalError::ConfigMismatch("no configurations given".into()));
    }
    // All configs must agree once the regime fields are neutralized.
    let canonical = neutralize(&cfgs[0]);
    for (i, cfg) in cfgs.iter().enumerate().skip(1) {
        if neutralize(cfg) != canonical {
            return Err(EvalError::ConfigMismatch(format!(
                "config {i} differs beyond regime/t"
            )));
        }
    }

    let mut histories = Vec::new();
    for cfg in cfgs {
        let state = train(cfg, None)?;
        histories.push(state.history);
    }

    std::fs::create_dir_all(out_dir)?;
    let specs: [(&str, fn(&MetricRow) -> (f64, (f64, f64))); 3] = [
        ("accuracy", |r| (r.accuracy, r.accuracy_ci)),
        ("fairness_loss", |r| (r.fairness_loss, r.fairness_ci)),
        ("z_scores", |r| (r.mean_z, r.z_ci)),
    ];
    let mut written = Vec::new();
    for (name, extract) in specs {
        let path = out_dir.join(format!("{name}.csv"));
        let mut f = std::fs::File::create(&path)?;
        writeln!(f, "# evaluation transcripts are full-length (max_questions exchanges after the self-description)")?;
        writeln!(f, "epoch,regime,metric,value,ci_low,ci_high")?;
        for history in &histories {
            for row in history {
                let (value, (lo, hi)) = extract(row);
                writeln!(
                    f,
                    "{},{},{},{},{},{}",
                    row.epoch, row.regime, name, value, lo, hi
                )?;
            }
        }
        written.push(path);
    }
    Ok(written)
}

fn neutralize(cfg: &TrainConfig) -> TrainConfig {
    let mut c = cfg.clone();
    c.regime = crate::trainer::Regime::Never;
    c.regime_t = None;
    c
}
