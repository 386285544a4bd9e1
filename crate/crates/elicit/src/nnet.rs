//! The two attention models: a critic scoring transcripts in (0,1) and a
//! policy producing a masked distribution over unasked questions. Both are
//! single-head scaled dot-product attention with mean pooling and a
//! two-layer tanh MLP head. Gradients are hand-derived for this fixed
//! architecture and verified against finite differences in the test suite.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::TranscriptTensor;

pub mod hexf64 {
    //! Serializes f64 slices as IEEE-754 bit-pattern hex strings so that
    //! checkpoints round-trip bit-exactly.

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| format!("{:016x}", x.to_bits())))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<String> = Vec::deserialize(d)?;
        raw.iter()
            .map(|s| {
                u64::from_str_radix(s, 16)
                    .map(f64::from_bits)
                    .map_err(|e| D::Error::custom(format!("bad f64 hex '{s}': {e}")))
            })
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum NnetError {
    #[error("operation requires the {expected:?} role, model is {actual:?}")]
    RoleMismatch { expected: Role, actual: Role },
    #[error("all questions have been asked")]
    AllQuestionsAsked,
    #[error("chosen question {0} is masked")]
    ChosenQuestionMasked(usize),
    #[error("parameter shapes disagree")]
    ShapeMismatch,
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    #[serde(with = "hexf64")]
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
        Mat {
            rows,
            cols,
            data: (0..rows * cols).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// All learnable tensors of one model. Gradients and Adam moments reuse
/// this layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTensors {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub w1: Mat,
    #[serde(with = "hexf64")]
    pub b1: Vec<f64>,
    pub w2: Mat,
    #[serde(with = "hexf64")]
    pub b2: Vec<f64>,
}

impl ParamTensors {
    pub fn zeros_like(other: &ParamTensors) -> ParamTensors {
        ParamTensors {
            wq: Mat::zeros(other.wq.rows, other.wq.cols),
            wk: Mat::zeros(other.wk.rows, other.wk.cols),
            wv: Mat::zeros(other.wv.rows, other.wv.cols),
            w1: Mat::zeros(other.w1.rows, other.w1.cols),
            b1: vec![0.0; other.b1.len()],
            w2: Mat::zeros(other.w2.rows, other.w2.cols),
            b2: vec![0.0; other.b2.len()],
        }
    }

    /// Flat views over the seven weight blocks, in a fixed order.
    pub fn blocks(&self) -> [&[f64]; 7] {
        [
            &self.wq.data,
            &self.wk.data,
            &self.wv.data,
            &self.w1.data,
            &self.b1,
            &self.w2.data,
            &self.b2,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.wq.data,
            &mut self.wk.data,
            &mut self.wv.data,
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2.data,
            &mut self.b2,
        ]
    }

    pub fn same_shape(&self, other: &ParamTensors) -> bool {
        self.blocks()
            .iter()
            .zip(other.blocks().iter())
            .all(|(a, b)| a.len() == b.len())
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Scalar skill score through a sigmoid.
    Critic,
    /// Masked softmax distribution over questions.
    Policy,
}

/// One attention model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub role: Role,
    pub input_dim: usize,
    pub hidden: usize,
    pub output_dim: usize,
    pub tensors: ParamTensors,
}

/// Initializes a model with weights i.i.d. uniform on [-0.1, 0.1].
pub fn init(role: Role, rng_seed: u64, input_dim: usize, hidden: usize, num_questions: usize) -> ModelParams {
    let output_dim = match role {
        Role::Critic => 1,
        Role::Policy => num_questions,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let tensors = ParamTensors {
        wq: Mat::uniform(input_dim, hidden, &mut rng),
        wk: Mat::uniform(input_dim, hidden, &mut rng),
        wv: Mat::uniform(input_dim, hidden, &mut rng),
        w1: Mat::uniform(hidden, hidden, &mut rng),
        b1: (0..hidden).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        w2: Mat::uniform(hidden, output_dim, &mut rng),
        b2: (0..output_dim).map(|_| rng.gen_range(-0.1..0.1)).collect(),
    };
    ModelParams {
        role,
        input_dim,
        hidden,
        output_dim,
        tensors,
    }
}

/// Intermediate activations kept for the backward pass.
struct ForwardCache {
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    attn: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    m1: Vec<f64>,
    logits: Vec<f64>,
}

fn affine_rows(rows: &[Vec<f64>], w: &Mat) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let mut out = vec![0.0; w.cols];
            for (i, x) in r.iter().enumerate() {
                if *x == 0.0 {
                    continue;
                }
                let base = i * w.cols;
                for (j, o) in out.iter_mut().enumerate() {
                    *o += x * w.data[base + j];
                }
            }
            out
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn forward_cached(p: &ModelParams, t: &TranscriptTensor) -> ForwardCache {
    assert!(!t.is_empty(), "forward pass needs a nonempty tensor");
    assert_eq!(t.width, p.input_dim, "tensor width mismatch");
    let rows = &t.rows;
    let len = rows.len();
    let scale = 1.0 / (p.hidden as f64).sqrt();

    let q = affine_rows(rows, &p.tensors.wq);
    let k = affine_rows(rows, &p.tensors.wk);
    let v = affine_rows(rows, &p.tensors.wv);

    let mut attn = Vec::with_capacity(len);
    for ql in &q {
        let scores: Vec<f64> = k.iter().map(|km| dot(ql, km) * scale).collect();
        attn.push(softmax(&scores));
    }

    let mut pooled = vec![0.0; p.hidden];
    for a_row in &attn {
        for (m, a) in a_row.iter().enumerate() {
            for (j, s) in pooled.iter_mut().enumerate() {
                *s += a * v[m][j];
            }
        }
    }
    for s in pooled.iter_mut() {
        *s /= len as f64;
    }

    let mut m1 = p.tensors.b1.clone();
    for (i, x) in pooled.iter().enumerate() {
        for (j, o) in m1.iter_mut().enumerate() {
            *o += x * p.tensors.w1.at(i, j);
        }
    }
    for o in m1.iter_mut() {
        *o = o.tanh();
    }

    let mut logits = p.tensors.b2.clone();
    for (i, x) in m1.iter().enumerate() {
        for (j, o) in logits.iter_mut().enumerate() {
            *o += x * p.tensors.w2.at(i, j);
        }
    }

    ForwardCache {
        q,
        k,
        v,
        attn,
        pooled,
        m1,
        logits,
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn masked_softmax(logits: &[f64], asked: &BTreeSet<usize>) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for (i, z) in logits.iter().enumerate() {
        if !asked.contains(&i) {
            max = max.max(*z);
        }
    }
    let mut probs = vec![0.0; logits.len()];
    let mut sum = 0.0;
    for (i, z) in logits.iter().enumerate() {
        if !asked.contains(&i) {
            let e = (z - max).exp();
            probs[i] = e;
            sum += e;
        }
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    probs
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Critic forward pass: sigmoid score in (0,1).
pub fn forward_score(p: &ModelParams, t: &TranscriptTensor) -> Result<f64, NnetError> {
    if p.role != Role::Critic {
        return Err(NnetError::RoleMismatch {
            expected: Role::Critic,
            actual: p.role,
        });
    }
    Ok(sigmoid(forward_cached(p, t).logits[0]))
}

/// Policy forward pass: probability distribution over the unasked
/// questions, exactly zero on asked ids.
pub fn forward_policy(
    p: &ModelParams,
    t: &TranscriptTensor,
    asked: &BTreeSet<usize>,
) -> Result<Vec<f64>, NnetError> {
    if p.role != Role::Policy {
        return Err(NnetError::RoleMismatch {
            expected: Role::Policy,
            actual: p.role,
        });
    }
    if asked.len() >= p.output_dim {
        return Err(NnetError::AllQuestionsAsked);
    }
    Ok(masked_softmax(&forward_cached(p, t).logits, asked))
}

/// Backpropagates `dlogits` through one cached forward pass, accumulating
/// into `grad`.
fn backward(p: &ModelParams, t: &TranscriptTensor, cache: &ForwardCache, dlogits: &[f64], grad: &mut ParamTensors) {
    let rows = &t.rows;
    let len = rows.len();
    let h = p.hidden;
    let scale = 1.0 / (h as f64).sqrt();

    // Head: logits = W2 m1 + b2.
    let mut dm1 = vec![0.0; h];
    for (j, dz) in dlogits.iter().enumerate() {
        if *dz == 0.0 {
            continue;
        }
        grad.b2[j] += dz;
        for i in 0..h {
            *grad.w2.at_mut(i, j) += cache.m1[i] * dz;
            dm1[i] += p.tensors.w2.at(i, j) * dz;
        }
    }

    // m1 = tanh(W1 pooled + b1).
    let mut dpooled = vec![0.0; h];
    for j in 0..h {
        let dpre = dm1[j] * (1.0 - cache.m1[j] * cache.m1[j]);
        if dpre == 0.0 {
            continue;
        }
        grad.b1[j] += dpre;
        for i in 0..h {
            *grad.w1.at_mut(i, j) += cache.pooled[i] * dpre;
            dpooled[i] += p.tensors.w1.at(i, j) * dpre;
        }
    }

    // pooled = mean_l (attn_l . V).
    let du: Vec<f64> = dpooled.iter().map(|x| x / len as f64).collect();

    let mut dv = vec![vec![0.0; h]; len];
    let mut dq = vec![vec![0.0; h]; len];
    let mut dk = vec![vec![0.0; h]; len];
    for l in 0..len {
        // dA[l][m] = du . v_m, then softmax backward over row l.
        let a_row = &cache.attn[l];
        let da: Vec<f64> = (0..len).map(|m| dot(&du, &cache.v[m])).collect();
        let inner: f64 = da.iter().zip(a_row).map(|(d, a)| d * a).sum();
        for m in 0..len {
            let ds = a_row[m] * (da[m] - inner);
            for j in 0..h {
                dq[l][j] += ds * cache.k[m][j] * scale;
                dk[m][j] += ds * cache.q[l][j] * scale;
            }
            for j in 0..h {
                dv[m][j] += a_row[m] * du[j];
            }
        }
    }

    // Projections: Q = X Wq etc.
    for l in 0..len {
        for (i, x) in rows[l].iter().enumerate() {
            if *x == 0.0 {
                continue;
            }
            for j in 0..h {
                *grad.wq.at_mut(i, j) += x * dq[l][j];
                *grad.wk.at_mut(i, j) += x * dk[l][j];
                *grad.wv.at_mut(i, j) += x * dv[l][j];
            }
        }
    }
}

/// Gradient of the mean squared error `(1/B) sum (f(x) - y)^2`.
pub fn grad_mse(p: &ModelParams, batch: &[(&TranscriptTensor, f64)]) -> Result<ParamTensors, NnetError> {
    if p.role != Role::Critic {
        return Err(NnetError::RoleMismatch {
            expected: Role::Critic,
            actual: p.role,
        });
    }
    assert!(!batch.is_empty(), "gradient of an empty batch");
    let mut grad = ParamTensors::zeros_like(&p.tensors);
    let b = batch.len() as f64;
    for (t, y) in batch {
        let cache = forward_cached(p, t);
        let yhat = sigmoid(cache.logits[0]);
        let dz = 2.0 / b * (yhat - y) * yhat * (1.0 - yhat);
        backward(p, t, &cache, &[dz], &mut grad);
    }
    Ok(grad)
}

/// One element of a policy-gradient batch.
pub struct ReinforceSample<'a> {
    pub tensor: &'a TranscriptTensor,
    pub asked: &'a BTreeSet<usize>,
    pub chosen: usize,
    pub reward: f64,
}

/// Gradient of the REINFORCE surrogate `(1/B) sum Z log q(chosen | x)`,
/// in the ASCENT direction. Negate before feeding a minimizer.
pub fn grad_reinforce(p: &ModelParams, batch: &[ReinforceSample<'_>]) -> Result<ParamTensors, NnetError> {
    if p.role != Role::Policy {
        return Err(NnetError::RoleMismatch {
            expected: Role::Policy,
            actual: p.role,
        });
    }
    assert!(!batch.is_empty(), "gradient of an empty batch");
    let mut grad = ParamTensors::zeros_like(&p.tensors);
    let b = batch.len() as f64;
    for sample in batch {
        if sample.asked.contains(&sample.chosen) {
            return Err(NnetError::ChosenQuestionMasked(sample.chosen));
        }
        let cache = forward_cached(p, sample.tensor);
        let probs = masked_softmax(&cache.logits, sample.asked);
        let mut dlogits = vec![0.0; p.output_dim];
        for (k, prob) in probs.iter().enumerate() {
            let indicator = f64::from(k == sample.chosen);
            dlogits[k] = sample.reward / b * (indicator - prob);
        }
        backward(p, sample.tensor, &cache, &dlogits, &mut grad);
    }
    Ok(grad)
}

/// Adam optimizer state for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: ParamTensors,
    pub v: ParamTensors,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        AdamState {
            m: ParamTensors::zeros_like(&params.tensors),
            v: ParamTensors::zeros_like(&params.tensors),
            step: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

/// Standard Adam update with bias correction.
pub fn adam_step(
    p: &mut ModelParams,
    grad: &ParamTensors,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<(), NnetError> {
    if !p.tensors.same_shape(grad) || !p.tensors.same_shape(&state.m) {
        return Err(NnetError::ShapeMismatch);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let params = p.tensors.blocks_mut();
    let grads = grad.blocks();
    let ms = state.m.blocks_mut();
    let vs = state.v.blocks_mut();
    for (((pb, gb), mb), vb) in params.into_iter().zip(grads).zip(ms).zip(vs) {
        for i in 0..pb.len() {
            let g = gb[i];
            mb[i] = hyper.beta1 * mb[i] + (1.0 - hyper.beta1) * g;
            vb[i] = hyper.beta2 * vb[i] + (1.0 - hyper.beta2) * g * g;
            let mhat = mb[i] / bc1;
            let vhat = vb[i] / bc2;
            pb[i] -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps_hat);
        }
    }
    Ok(())
}

/// Plain gradient-descent update.
pub fn sgd_step(p: &mut ModelParams, grad: &ParamTensors, lr: f64) -> Result<(), NnetError> {
    if !p.tensors.same_shape(grad) {
        return Err(NnetError::ShapeMismatch);
    }
    let params = p.tensors.blocks_mut();
    let grads = grad.blocks();
    for (pb, gb) in params.into_iter().zip(grads) {
        for i in 0..pb.len() {
            pb[i] -= lr * gb[i];
        }
    }
    Ok(())
}
