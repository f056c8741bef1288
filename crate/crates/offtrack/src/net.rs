//! Policy and value networks with analytic backpropagation.
//!
//! The policy is a small tanh MLP over the 40-feature observation: a shared
//! trunk (40 -> 64 -> 64), a mean head squashed onto the actuation box, a
//! state-independent log-std pair, and a value head. Gradients are exact
//! reverse-mode derivatives, hand-rolled so checkpoints stay self-contained
//! and the numerics are testable against finite differences.

use std::f64::consts::{LN_2, PI};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Observation, FEATURES_PER_WAYPOINT, LOOKAHEAD, OBS_LEN};
use crate::vehicle::Action;

/// Trunk width.
pub const HIDDEN: usize = 64;
/// Action dimensionality (linear and angular command).
pub const ACTION_DIM: usize = 2;

/// Fixed per-component observation scales: ranges by 10 m, angles by pi,
/// velocity errors by 5 m/s. Baked in rather than tracked as running
/// statistics so a checkpoint alone fully determines the policy.
pub const OBS_SCALES: [f64; FEATURES_PER_WAYPOINT] = [10.0, PI, PI, 5.0];

/// Bounds on the stored log standard deviations.
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("observation contains a non-finite feature")]
    NonFiniteInput,
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A dense layer, `out = W x + b`, with `W` stored row-major (rows = outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { w: vec![0.0; in_dim * out_dim], b: vec![0.0; out_dim], in_dim, out_dim }
    }

    fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let std = 1.0 / (in_dim as f64).sqrt();
        let mut l = Self::zeros(in_dim, out_dim);
        for w in &mut l.w {
            let n: f64 = StandardNormal.sample(rng);
            *w = n * std;
        }
        l
    }

    fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// `out = W x + b`.
pub fn linear_forward(l: &Linear, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), l.in_dim);
    debug_assert_eq!(out.len(), l.out_dim);
    for r in 0..l.out_dim {
        let row = &l.w[r * l.in_dim..(r + 1) * l.in_dim];
        let mut acc = l.b[r];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        out[r] = acc;
    }
}

/// Accumulate `dL/dW += g_out x^T`, `dL/db += g_out`, and optionally
/// propagate `dL/dx = W^T g_out`.
pub fn linear_backward(
    l: &Linear,
    x: &[f64],
    g_out: &[f64],
    g_w: &mut [f64],
    g_b: &mut [f64],
    mut g_x: Option<&mut [f64]>,
) {
    debug_assert_eq!(g_w.len(), l.w.len());
    debug_assert_eq!(g_b.len(), l.b.len());
    if let Some(gx) = g_x.as_deref_mut() {
        gx.iter_mut().for_each(|v| *v = 0.0);
    }
    for r in 0..l.out_dim {
        let g = g_out[r];
        g_b[r] += g;
        let row_w = &l.w[r * l.in_dim..(r + 1) * l.in_dim];
        let row_gw = &mut g_w[r * l.in_dim..(r + 1) * l.in_dim];
        for c in 0..l.in_dim {
            row_gw[c] += g * x[c];
        }
        if let Some(gx) = g_x.as_deref_mut() {
            for c in 0..l.in_dim {
                gx[c] += g * row_w[c];
            }
        }
    }
}

/// Gaussian policy with a squashed mean, plus a value head.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub trunk0: Linear,
    pub trunk1: Linear,
    pub mean_head: Linear,
    pub value_head: Linear,
    pub log_std: [f64; ACTION_DIM],
}

/// Flat parameter-vector layout. Fine-tuning trains only the prefix up to
/// `frozen_from` (trunk and mean head); the value head and log-std tail
/// stay fixed.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub trunk0_w: Range<usize>,
    pub trunk0_b: Range<usize>,
    pub trunk1_w: Range<usize>,
    pub trunk1_b: Range<usize>,
    pub mean_w: Range<usize>,
    pub mean_b: Range<usize>,
    pub value_w: Range<usize>,
    pub value_b: Range<usize>,
    pub log_std: Range<usize>,
    pub total: usize,
    pub frozen_from: usize,
}

fn ranges(sizes: &[usize]) -> Vec<Range<usize>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut off = 0;
    for &s in sizes {
        out.push(off..off + s);
        off += s;
    }
    out
}

impl PolicyNet {
    /// Network with all parameters zero (useful mostly in tests; its mean is
    /// the squash of zero, `(2.5, 0)`).
    pub fn zeros() -> Self {
        Self {
            trunk0: Linear::zeros(OBS_LEN, HIDDEN),
            trunk1: Linear::zeros(HIDDEN, HIDDEN),
            mean_head: Linear::zeros(HIDDEN, ACTION_DIM),
            value_head: Linear::zeros(HIDDEN, 1),
            log_std: [0.0; ACTION_DIM],
        }
    }

    /// Random initialization: weights scaled by `1/sqrt(fan_in)`, zero
    /// biases, log-std at -0.5.
    pub fn init(rng: &mut impl Rng) -> Self {
        Self {
            trunk0: Linear::init(OBS_LEN, HIDDEN, rng),
            trunk1: Linear::init(HIDDEN, HIDDEN, rng),
            mean_head: Linear::init(HIDDEN, ACTION_DIM, rng),
            value_head: Linear::init(HIDDEN, 1, rng),
            log_std: [-0.5; ACTION_DIM],
        }
    }

    pub fn layout(&self) -> ParamLayout {
        let sizes = [
            self.trunk0.w.len(),
            self.trunk0.b.len(),
            self.trunk1.w.len(),
            self.trunk1.b.len(),
            self.mean_head.w.len(),
            self.mean_head.b.len(),
            self.value_head.w.len(),
            self.value_head.b.len(),
            ACTION_DIM,
        ];
        let r = ranges(&sizes);
        ParamLayout {
            trunk0_w: r[0].clone(),
            trunk0_b: r[1].clone(),
            trunk1_w: r[2].clone(),
            trunk1_b: r[3].clone(),
            mean_w: r[4].clone(),
            mean_b: r[5].clone(),
            value_w: r[6].clone(),
            value_b: r[7].clone(),
            log_std: r[8].clone(),
            total: r[8].end,
            frozen_from: r[6].start,
        }
    }

    pub fn n_params(&self) -> usize {
        self.trunk0.n_params()
            + self.trunk1.n_params()
            + self.mean_head.n_params()
            + self.value_head.n_params()
            + ACTION_DIM
    }

    /// Copy all parameters into a flat vector (layout per [`ParamLayout`]).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend_from_slice(&self.trunk0.w);
        out.extend_from_slice(&self.trunk0.b);
        out.extend_from_slice(&self.trunk1.w);
        out.extend_from_slice(&self.trunk1.b);
        out.extend_from_slice(&self.mean_head.w);
        out.extend_from_slice(&self.mean_head.b);
        out.extend_from_slice(&self.value_head.w);
        out.extend_from_slice(&self.value_head.b);
        out.extend_from_slice(&self.log_std);
        out
    }

    /// Overwrite all parameters from a flat vector. Log-stds are projected
    /// back into their bounds.
    pub fn set_from_flat(&mut self, flat: &[f64]) {
        let l = self.layout();
        assert_eq!(flat.len(), l.total, "flat parameter length mismatch");
        self.trunk0.w.copy_from_slice(&flat[l.trunk0_w]);
        self.trunk0.b.copy_from_slice(&flat[l.trunk0_b]);
        self.trunk1.w.copy_from_slice(&flat[l.trunk1_w]);
        self.trunk1.b.copy_from_slice(&flat[l.trunk1_b]);
        self.mean_head.w.copy_from_slice(&flat[l.mean_w]);
        self.mean_head.b.copy_from_slice(&flat[l.mean_b]);
        self.value_head.w.copy_from_slice(&flat[l.value_w]);
        self.value_head.b.copy_from_slice(&flat[l.value_b]);
        for (k, v) in flat[l.log_std].iter().enumerate() {
            self.log_std[k] = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Normalized input.
    pub x: [f64; OBS_LEN],
    /// Post-tanh trunk activations.
    pub h1: [f64; HIDDEN],
    pub h2: [f64; HIDDEN],
    /// Pre-squash action mean.
    pub mean_pre: [f64; ACTION_DIM],
    pub log_std: [f64; ACTION_DIM],
    pub value: f64,
}

impl ForwardCache {
    /// Squashed (deterministic) mean action.
    pub fn mean_action(&self) -> Action {
        squash(&self.mean_pre)
    }
}

/// Map pre-squash outputs onto the actuation box:
/// `v = 2.5 (1 + tanh(m1))` in `[0, 5]`, `w = 2 tanh(m2)` in `[-2, 2]`.
pub fn squash(mean_pre: &[f64; ACTION_DIM]) -> Action {
    Action::new(2.5 * (1.0 + mean_pre[0].tanh()), 2.0 * mean_pre[1].tanh())
}

/// Diagonal Jacobian of the squash at `z`.
pub fn squash_deriv(z: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
    let t0 = z[0].tanh();
    let t1 = z[1].tanh();
    [2.5 * (1.0 - t0 * t0), 2.0 * (1.0 - t1 * t1)]
}

/// Pre-squash point mapping to the given action (inverse of [`squash`]),
/// clamped away from the saturation boundary for finiteness.
pub fn squash_inverse(a: Action) -> [f64; ACTION_DIM] {
    let lim = 1.0 - 1e-12;
    let t0 = (a.v_cmd / 2.5 - 1.0).clamp(-lim, lim);
    let t1 = (a.omega_cmd / 2.0).clamp(-lim, lim);
    [t0.atanh(), t1.atanh()]
}

/// `ln(1 - tanh^2 z)` computed without overflow for large |z|.
fn ln_sech2(z: f64) -> f64 {
    let za = z.abs();
    2.0 * (LN_2 - za - (-2.0 * za).exp().ln_1p())
}

/// Log-density at `squash(z)` of the squashed Gaussian with the given
/// pre-squash mean and log-std (Gaussian log-density minus the
/// log-determinant of the squash Jacobian).
pub fn squashed_log_prob(
    mean_pre: &[f64; ACTION_DIM],
    log_std: &[f64; ACTION_DIM],
    z: &[f64; ACTION_DIM],
) -> f64 {
    let mut lp = 0.0;
    for k in 0..ACTION_DIM {
        let sigma = log_std[k].exp();
        let u = (z[k] - mean_pre[k]) / sigma;
        lp += -0.5 * u * u - log_std[k] - 0.5 * LN_2PI;
    }
    lp -= 2.5f64.ln() + ln_sech2(z[0]);
    lp -= 2.0f64.ln() + ln_sech2(z[1]);
    lp
}

/// Entropy of the pre-squash Gaussian (the standard PPO exploration bonus).
pub fn gaussian_entropy(log_std: &[f64; ACTION_DIM]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 * (LN_2PI + 1.0)).sum()
}

impl PolicyNet {
    /// Run the network, keeping the activations needed for [`Self::backward`].
    pub fn forward_cached(&self, o: &Observation) -> Result<ForwardCache, NetError> {
        let mut x = [0.0f64; OBS_LEN];
        for j in 0..LOOKAHEAD {
            for k in 0..FEATURES_PER_WAYPOINT {
                let i = j * FEATURES_PER_WAYPOINT + k;
                let f = o.0[i];
                if !f.is_finite() {
                    return Err(NetError::NonFiniteInput);
                }
                x[i] = f / OBS_SCALES[k];
            }
        }
        let mut h1 = [0.0f64; HIDDEN];
        linear_forward(&self.trunk0, &x, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = [0.0f64; HIDDEN];
        linear_forward(&self.trunk1, &h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let mut mean_pre = [0.0f64; ACTION_DIM];
        linear_forward(&self.mean_head, &h2, &mut mean_pre);
        let mut value = [0.0f64; 1];
        linear_forward(&self.value_head, &h2, &mut value);
        Ok(ForwardCache { x, h1, h2, mean_pre, log_std: self.log_std, value: value[0] })
    }

    /// Deterministic outputs: squashed mean action, log-std, value.
    pub fn forward(&self, o: &Observation) -> Result<(Action, [f64; ACTION_DIM], f64), NetError> {
        let c = self.forward_cached(o)?;
        Ok((c.mean_action(), c.log_std, c.value))
    }

    /// Deterministic (mean) action.
    pub fn act_mean(&self, o: &Observation) -> Result<Action, NetError> {
        Ok(self.forward_cached(o)?.mean_action())
    }

    /// Accumulate exact parameter gradients for upstream gradients taken
    /// with respect to the pre-squash mean, the log-stds, and the value.
    /// `grads` must have length [`ParamLayout::total`].
    pub fn backward(&self, cache: &ForwardCache, up: &OutputGrads, grads: &mut [f64]) {
        let l = self.layout();
        debug_assert_eq!(grads.len(), l.total);

        // Split the flat gradient buffer into per-layer views.
        let (head, rest) = grads.split_at_mut(l.trunk0_w.end);
        let g_t0_w = head;
        let (g_t0_b, rest) = rest.split_at_mut(l.trunk0_b.len());
        let (g_t1_w, rest) = rest.split_at_mut(l.trunk1_w.len());
        let (g_t1_b, rest) = rest.split_at_mut(l.trunk1_b.len());
        let (g_m_w, rest) = rest.split_at_mut(l.mean_w.len());
        let (g_m_b, rest) = rest.split_at_mut(l.mean_b.len());
        let (g_v_w, rest) = rest.split_at_mut(l.value_w.len());
        let (g_v_b, rest) = rest.split_at_mut(l.value_b.len());
        let g_log_std = rest;

        for k in 0..ACTION_DIM {
            g_log_std[k] += up.log_std[k];
        }

        // Heads into the shared trunk output.
        let mut g_h2 = [0.0f64; HIDDEN];
        let mut g_h2_value = [0.0f64; HIDDEN];
        linear_backward(&self.mean_head, &cache.h2, &up.mean_pre, g_m_w, g_m_b, Some(&mut g_h2));
        linear_backward(
            &self.value_head,
            &cache.h2,
            &[up.value],
            g_v_w,
            g_v_b,
            Some(&mut g_h2_value),
        );
        for i in 0..HIDDEN {
            g_h2[i] += g_h2_value[i];
        }

        // tanh' = 1 - h^2 from the stored post-activation.
        let mut g_a2 = [0.0f64; HIDDEN];
        for i in 0..HIDDEN {
            g_a2[i] = g_h2[i] * (1.0 - cache.h2[i] * cache.h2[i]);
        }
        let mut g_h1 = [0.0f64; HIDDEN];
        linear_backward(&self.trunk1, &cache.h1, &g_a2, g_t1_w, g_t1_b, Some(&mut g_h1));

        let mut g_a1 = [0.0f64; HIDDEN];
        for i in 0..HIDDEN {
            g_a1[i] = g_h1[i] * (1.0 - cache.h1[i] * cache.h1[i]);
        }
        linear_backward(&self.trunk0, &cache.x, &g_a1, g_t0_w, g_t0_b, None);
    }

    /// Sample an action from the squashed Gaussian.
    pub fn sample_action(
        &self,
        o: &Observation,
        rng: &mut impl Rng,
    ) -> Result<SampledAction, NetError> {
        let cache = self.forward_cached(o)?;
        let mut z = [0.0f64; ACTION_DIM];
        for k in 0..ACTION_DIM {
            let eps: f64 = StandardNormal.sample(rng);
            z[k] = cache.mean_pre[k] + cache.log_std[k].exp() * eps;
        }
        let action = squash(&z);
        let log_prob = squashed_log_prob(&cache.mean_pre, &cache.log_std, &z);
        Ok(SampledAction { action, presquash: z, log_prob, value: cache.value })
    }

    /// Log-density of an action already inside the actuation box.
    pub fn action_log_prob(&self, o: &Observation, a: Action) -> Result<f64, NetError> {
        let cache = self.forward_cached(o)?;
        let z = squash_inverse(a);
        Ok(squashed_log_prob(&cache.mean_pre, &cache.log_std, &z))
    }
}

/// Upstream gradients feeding [`PolicyNet::backward`].
#[derive(Debug, Clone, Copy, Default)]
pub struct OutputGrads {
    /// dL/d(pre-squash mean).
    pub mean_pre: [f64; ACTION_DIM],
    /// dL/d(log-std).
    pub log_std: [f64; ACTION_DIM],
    /// dL/d(value).
    pub value: f64,
}

impl OutputGrads {
    /// Chain an upstream gradient on the squashed mean action through the
    /// squash Jacobian.
    pub fn from_squashed_mean(cache: &ForwardCache, d_mean_action: [f64; ACTION_DIM]) -> Self {
        let j = squash_deriv(&cache.mean_pre);
        Self {
            mean_pre: [d_mean_action[0] * j[0], d_mean_action[1] * j[1]],
            log_std: [0.0; ACTION_DIM],
            value: 0.0,
        }
    }
}

/// A sampled action with the bookkeeping PPO needs.
#[derive(Debug, Clone, Copy)]
pub struct SampledAction {
    pub action: Action,
    /// Pre-squash Gaussian sample; stored so importance ratios can be
    /// re-evaluated without inverting the squash.
    pub presquash: [f64; ACTION_DIM],
    pub log_prob: f64,
    pub value: f64,
}

/// Plain Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    /// One descent step on `params[..active_len]`; indices past `active_len`
    /// are left untouched (frozen).
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], active_len: usize) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..active_len {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

// Checkpoint serialization ---------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    trunk: Vec<LayerDoc>,
    mean_head: LayerDoc,
    value_head: LayerDoc,
    log_std: Vec<f64>,
}

fn layer_doc(l: &Linear) -> LayerDoc {
    LayerDoc { rows: l.out_dim, cols: l.in_dim, w: l.w.clone(), b: l.b.clone() }
}

fn layer_from_doc(doc: &LayerDoc, name: &str, in_dim: usize, out_dim: usize) -> Result<Linear, NetError> {
    if doc.cols != in_dim || doc.rows != out_dim {
        return Err(NetError::ShapeMismatch(format!(
            "{name}: expected {out_dim}x{in_dim}, found {}x{}",
            doc.rows, doc.cols
        )));
    }
    if doc.w.len() != doc.rows * doc.cols || doc.b.len() != doc.rows {
        return Err(NetError::ShapeMismatch(format!(
            "{name}: parameter counts do not match declared shape"
        )));
    }
    if doc.w.iter().chain(doc.b.iter()).any(|v| !v.is_finite()) {
        return Err(NetError::MalformedCheckpoint(format!("{name}: non-finite parameter")));
    }
    Ok(Linear { w: doc.w.clone(), b: doc.b.clone(), in_dim, out_dim })
}

/// Write a checkpoint as JSON. Floats serialize in shortest round-trip form,
/// so save/load is value-exact.
pub fn save_checkpoint(policy: &PolicyNet, path: impl AsRef<Path>) -> Result<(), NetError> {
    let doc = CheckpointDoc {
        version: CHECKPOINT_VERSION,
        trunk: vec![layer_doc(&policy.trunk0), layer_doc(&policy.trunk1)],
        mean_head: layer_doc(&policy.mean_head),
        value_head: layer_doc(&policy.value_head),
        log_std: policy.log_std.to_vec(),
    };
    let file = File::create(path.as_ref())?;
    serde_json::to_writer(BufWriter::new(file), &doc)
        .map_err(|e| NetError::MalformedCheckpoint(e.to_string()))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PolicyNet, NetError> {
    let file = File::open(path.as_ref())?;
    let doc: CheckpointDoc = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| NetError::MalformedCheckpoint(e.to_string()))?;
    if doc.version != CHECKPOINT_VERSION {
        return Err(NetError::MalformedCheckpoint(format!(
            "unsupported checkpoint version {}",
            doc.version
        )));
    }
    if doc.trunk.len() != 2 {
        return Err(NetError::ShapeMismatch(format!(
            "expected 2 trunk layers, found {}",
            doc.trunk.len()
        )));
    }
    if doc.log_std.len() != ACTION_DIM {
        return Err(NetError::ShapeMismatch(format!(
            "expected {ACTION_DIM} log-std entries, found {}",
            doc.log_std.len()
        )));
    }
    let policy = PolicyNet {
        trunk0: layer_from_doc(&doc.trunk[0], "trunk0", OBS_LEN, HIDDEN)?,
        trunk1: layer_from_doc(&doc.trunk[1], "trunk1", HIDDEN, HIDDEN)?,
        mean_head: layer_from_doc(&doc.mean_head, "mean_head", HIDDEN, ACTION_DIM)?,
        value_head: layer_from_doc(&doc.value_head, "value_head", HIDDEN, 1)?,
        log_std: [
            doc.log_std[0].clamp(LOG_STD_MIN, LOG_STD_MAX),
            doc.log_std[1].clamp(LOG_STD_MIN, LOG_STD_MAX),
        ],
    };
    Ok(policy)
}
