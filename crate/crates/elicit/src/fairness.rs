//! Multi-accuracy: the audit statistic, the L1-regularized calibration
//! solve, the corrected predictor, and the generalization threshold.
//!
//! A predictor is multi-accurate when its error is nearly uncorrelated
//! with every member of the trait family. Calibration fits logit-space
//! weights over the family by proximal gradient descent on cross-entropy
//! plus an L1 penalty; the solver's stationarity condition is exactly the
//! audit bound on the corrected predictor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trait_scores::{TraitError, TraitFamily, FAMILY_SIZE};
use crate::transcript::Transcript;
use crate::Predictor;

/// Scores are clamped here before taking logits.
pub const LOGIT_CLAMP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum FairnessError {
    #[error("empty dataset")]
    EmptyData,
    #[error("calibration solver diverged (non-finite loss)")]
    SolverDiverged,
    #[error(transparent)]
    Trait(#[from] TraitError),
}

/// Calibration weights over the trait family plus the epsilon they were
/// fitted with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationWeights {
    pub l: [f64; FAMILY_SIZE],
    pub eps: f64,
}

impl CalibrationWeights {
    pub fn zero(eps: f64) -> CalibrationWeights {
        CalibrationWeights {
            l: [0.0; FAMILY_SIZE],
            eps,
        }
    }

    pub fn l1_norm(&self) -> f64 {
        self.l.iter().map(|x| x.abs()).sum()
    }
}

/// Result of one multi-accuracy audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Signed error correlations, one per family member.
    pub per_c: [f64; FAMILY_SIZE],
    pub sup_abs: f64,
    pub worst_c: usize,
    pub eps: f64,
    pub passed: bool,
}

/// Proximal-gradient solver settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-6,
            max_iters: 10_000,
        }
    }
}

pub fn clamp_unit(p: f64) -> f64 {
    p.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP)
}

pub fn logit(p: f64) -> f64 {
    let p = clamp_unit(p);
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Measures the empirical correlation between prediction error and each
/// family member: `per_c[k] = mean_j c_k(x_j) * (f(x_j) - y_j)`.
pub fn audit<P: Predictor + ?Sized>(
    pred: &P,
    data: &[(Transcript, f64)],
    eps: f64,
) -> Result<AuditReport, FairnessError> {
    if data.is_empty() {
        return Err(FairnessError::EmptyData);
    }
    let family = TraitFamily;
    let mut per_c = [0.0; FAMILY_SIZE];
    for (x, y) in data {
        let diff = pred.predict(x) - y;
        let scores = family.score_all(x)?;
        for (acc, c) in per_c.iter_mut().zip(scores) {
            *acc += c * diff;
        }
    }
    let n = data.len() as f64;
    for acc in per_c.iter_mut() {
        *acc /= n;
    }
    let (worst_c, sup_abs) = per_c
        .iter()
        .map(|v| v.abs())
        .enumerate()
        .fold((0, 0.0), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) });
    Ok(AuditReport {
        per_c,
        sup_abs,
        worst_c,
        eps,
        passed: sup_abs <= eps,
    })
}

/// The predictor corrected in logit space by the calibration weights:
/// `f*(x) = sigmoid(sum_c l_c c(x) + logit(f(x)))`.
pub struct CorrectedPredictor<P> {
    pub inner: P,
    pub weights: CalibrationWeights,
}

impl<P: Predictor> Predictor for CorrectedPredictor<P> {
    fn predict(&self, x: &Transcript) -> f64 {
        let scores = TraitFamily.score_all(x).expect("nonempty transcript");
        let shift: f64 = self
            .weights
            .l
            .iter()
            .zip(scores)
            .map(|(l, c)| l * c)
            .sum();
        sigmoid(shift + logit(self.inner.predict(x)))
    }
}

/// Composes a predictor with calibration weights.
pub fn corrected<P: Predictor>(pred: P, weights: CalibrationWeights) -> CorrectedPredictor<P> {
    CorrectedPredictor {
        inner: pred,
        weights,
    }
}

/// The matching loss: mean binary cross-entropy of the corrected predictor
/// plus `eps * |l|_1`.
pub fn ma_loss<P: Predictor + ?Sized>(
    weights: &CalibrationWeights,
    pred: &P,
    data: &[(Transcript, f64)],
) -> Result<f64, FairnessError> {
    if data.is_empty() {
        return Err(FairnessError::EmptyData);
    }
    let pre = precompute(pred, data)?;
    Ok(objective(&weights.l, &pre, weights.eps))
}

struct Precomputed {
    traits: Vec<[f64; FAMILY_SIZE]>,
    base_logits: Vec<f64>,
    labels: Vec<f64>,
}

fn precompute<P: Predictor + ?Sized>(
    pred: &P,
    data: &[(Transcript, f64)],
) -> Result<Precomputed, FairnessError> {
    let family = TraitFamily;
    let mut traits = Vec::with_capacity(data.len());
    let mut base_logits = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for (x, y) in data {
        traits.push(family.score_all(x)?);
        base_logits.push(logit(pred.predict(x)));
        labels.push(*y);
    }
    Ok(Precomputed {
        traits,
        base_logits,
        labels,
    })
}

fn objective(l: &[f64; FAMILY_SIZE], pre: &Precomputed, eps: f64) -> f64 {
    let n = pre.labels.len() as f64;
    let mut ce = 0.0;
    for j in 0..pre.labels.len() {
        let z: f64 = l
            .iter()
            .zip(pre.traits[j])
            .map(|(w, c)| w * c)
            .sum::<f64>()
            + pre.base_logits[j];
        let p = clamp_unit(sigmoid(z));
        let y = pre.labels[j];
        ce -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    ce / n + eps * l.iter().map(|x| x.abs()).sum::<f64>()
}

fn smooth_gradient(l: &[f64; FAMILY_SIZE], pre: &Precomputed) -> [f64; FAMILY_SIZE] {
    let n = pre.labels.len() as f64;
    let mut grad = [0.0; FAMILY_SIZE];
    for j in 0..pre.labels.len() {
        let z: f64 = l
            .iter()
            .zip(pre.traits[j])
            .map(|(w, c)| w * c)
            .sum::<f64>()
            + pre.base_logits[j];
        let r = sigmoid(z) - pre.labels[j];
        for (g, c) in grad.iter_mut().zip(pre.traits[j]) {
            *g += r * c / n;
        }
    }
    grad
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Fits calibration weights by full-batch proximal gradient descent with
/// soft thresholding, starting from zero. Runs until the gradient-mapping
/// norm drops below `cfg.tol` or `cfg.max_iters` is reached. Starting at
/// zero and using a Lipschitz step size makes the objective non-increasing,
/// so the fitted weights never have a worse cross-entropy than the raw
/// predictor.
pub fn solve_calibration<P: Predictor + ?Sized>(
    pred: &P,
    data: &[(Transcript, f64)],
    eps: f64,
    cfg: &SolverConfig,
) -> Result<CalibrationWeights, FairnessError> {
    if data.is_empty() {
        return Err(FairnessError::EmptyData);
    }
    let pre = precompute(pred, data)?;
    let n = pre.labels.len() as f64;

    // Lipschitz bound for the logistic loss: (1/4n) * sum_j |c_j|^2.
    let lipschitz: f64 = pre
        .traits
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        / (4.0 * n);
    let step = 1.0 / lipschitz.max(1e-12);

    let mut l = [0.0; FAMILY_SIZE];
    for _ in 0..cfg.max_iters {
        let grad = smooth_gradient(&l, &pre);
        let mut next = [0.0; FAMILY_SIZE];
        let mut mapping_sq = 0.0;
        for k in 0..FAMILY_SIZE {
            next[k] = soft_threshold(l[k] - step * grad[k], step * eps);
            let g = (l[k] - next[k]) / step;
            mapping_sq += g * g;
        }
        l = next;
        if !l.iter().all(|x| x.is_finite()) {
            return Err(FairnessError::SolverDiverged);
        }
        if mapping_sq.sqrt() < cfg.tol {
            break;
        }
    }
    if !objective(&l, &pre, eps).is_finite() {
        return Err(FairnessError::SolverDiverged);
    }
    Ok(CalibrationWeights { l, eps })
}

/// Sample count required before trusting a calibration pass:
/// `max(1, floor((1/eps^2) * ln(family_size / delta)))`.
pub fn threshold(eps: f64, delta: f64, family_size: usize) -> u64 {
    assert!(eps > 0.0, "eps must be positive");
    assert!(delta > 0.0 && delta < 1.0, "delta must be in (0,1)");
    assert!(family_size >= 1, "family must be nonempty");
    let raw = (1.0 / (eps * eps)) * (family_size as f64 / delta).ln();
    (raw.floor() as u64).max(1)
}
