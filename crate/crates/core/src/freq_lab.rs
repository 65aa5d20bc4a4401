//! Synthetic frequency-selective suppression experiment.
//!
//! A three-layer ReLU MLP is fit to `sin(5x) + sin(20x) + sin(50x)` on
//! `[0, 2π)` with an L2 penalty on its weight matrices. During training the
//! prediction on a dense uniform grid is projected onto each target harmonic
//! and scored by its explained variance, which gives one learning curve per
//! frequency.
//!
//! The optimizer is full-batch RMSProp (decay 0.999, epsilon 1e-8) with the
//! usual bias correction of the running second moment. Everything is 64-bit
//! and fully determined by the seed.
//!
//! Inputs are raw `x` in `[0, 2π)`. With zero first-layer biases every ReLU
//! kink would sit at `x = 0`, so the initial network is exactly linear on the
//! domain and half of the units are dead. The first-layer biases therefore
//! place each unit's kink at a uniform random point of the domain instead.

use std::f64::consts::TAU;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Target harmonics, low to high.
pub const BANDS: [usize; 3] = [5, 20, 50];

const RMS_DECAY: f64 = 0.999;
const RMS_EPS: f64 = 1e-8;
/// Weights decaying under the penalty alone shrink geometrically; below this
/// they are zeroed so the arithmetic never reaches subnormals.
const UNDERFLOW: f64 = 1e-150;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabConfig {
    pub lambda_l2: f64,
    pub seed: u64,
    pub hidden: usize,
    pub steps: usize,
    pub train_points: usize,
    pub eval_grid: usize,
    pub learning_rate: f64,
    pub record_every: usize,
}

impl Default for LabConfig {
    fn default() -> Self {
        LabConfig {
            lambda_l2: 0.0,
            seed: 0,
            hidden: 256,
            steps: 4000,
            train_points: 256,
            eval_grid: 2048,
            learning_rate: 1e-3,
            record_every: 50,
        }
    }
}

impl LabConfig {
    pub fn with_lambda(lambda_l2: f64, seed: u64) -> Self {
        LabConfig {
            lambda_l2,
            seed,
            ..LabConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("lab config: {msg}")));
        if !(self.lambda_l2.is_finite() && self.lambda_l2 >= 0.0) {
            return bad("lambda must be finite and non-negative");
        }
        if self.hidden == 0 || self.train_points == 0 || self.record_every == 0 {
            return bad("hidden, train_points and record_every must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        let highest = BANDS[BANDS.len() - 1];
        if self.eval_grid < 4 * highest {
            return Err(Error::Aliasing {
                n: self.eval_grid,
                k: highest,
            });
        }
        Ok(())
    }
}

/// One affine layer, `y = x · weight + bias` with `weight` shaped `[fan_in, fan_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }
}

/// Parameters of the 1 → hidden → hidden → 1 network. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: [Dense; 3],
}

impl MlpParams {
    pub fn zeros(hidden: usize) -> Self {
        MlpParams {
            layers: [
                Dense::zeros(1, hidden),
                Dense::zeros(hidden, hidden),
                Dense::zeros(hidden, 1),
            ],
        }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    /// Sum of squared weight-matrix entries; biases are not penalized.
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    /// Flat view over every scalar, weights before biases, layer by layer.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `sin(5x) + sin(20x) + sin(50x)`.
pub fn target(x: f64) -> f64 {
    BANDS.iter().map(|&k| (k as f64 * x).sin()).sum()
}

/// He-normal weights (std `sqrt(2 / fan_in)`). First-layer biases are
/// `-w·c` with `c ~ U[0, 2π)`, deeper biases zero.
pub fn init_mlp(seed: u64, hidden: usize) -> MlpParams {
    assert!(hidden >= 1, "hidden width must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = MlpParams::zeros(hidden);
    for layer in params.layers.iter_mut() {
        let fan_in = layer.weight.nrows() as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        layer.weight.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
    }
    let first = &mut params.layers[0];
    for (b, &w) in first.bias.iter_mut().zip(first.weight.iter()) {
        *b = -w * rng.random_range(0.0..TAU);
    }
    params
}

/// Activations kept for the backward pass.
struct Trace {
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    out: Array2<f64>,
}

fn affine(input: &Array2<f64>, layer: &Dense) -> Array2<f64> {
    input.dot(&layer.weight) + &layer.bias
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

fn forward_trace(params: &MlpParams, xs: &[f64]) -> Trace {
    let x = Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).expect("column shape");
    let z1 = affine(&x, &params.layers[0]);
    let a1 = relu(&z1);
    let z2 = affine(&a1, &params.layers[1]);
    let a2 = relu(&z2);
    let out = affine(&a2, &params.layers[2]);
    Trace {
        z1,
        a1,
        z2,
        a2,
        out,
    }
}

pub fn forward(params: &MlpParams, xs: &[f64]) -> Vec<f64> {
    forward_trace(params, xs).out.into_iter().collect()
}

/// Mean squared error plus `lambda · Σ w²` over weight matrices, and its exact gradient.
pub fn loss_and_grad(
    params: &MlpParams,
    xs: &[f64],
    ys: &[f64],
    lambda_l2: f64,
) -> (f64, MlpParams) {
    assert!(!xs.is_empty(), "empty batch");
    assert_eq!(xs.len(), ys.len(), "batch length mismatch");
    let n = xs.len() as f64;
    let trace = forward_trace(params, xs);

    let residual = Array2::from_shape_fn((xs.len(), 1), |(i, _)| trace.out[[i, 0]] - ys[i]);
    let mse = residual.iter().map(|r| r * r).sum::<f64>() / n;
    let loss = mse + lambda_l2 * params.weight_norm_sq();

    let x = Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).expect("column shape");
    let d_out = residual * (2.0 / n);

    let mut grad = MlpParams::zeros(params.hidden());
    grad.layers[2].weight = trace.a2.t().dot(&d_out);
    grad.layers[2].bias = d_out.sum_axis(Axis(0));

    let mut d_z2 = d_out.dot(&params.layers[2].weight.t());
    Zip::from(&mut d_z2)
        .and(&trace.z2)
        .for_each(|d, &z| *d = if z > 0.0 { *d } else { 0.0 });
    grad.layers[1].weight = trace.a1.t().dot(&d_z2);
    grad.layers[1].bias = d_z2.sum_axis(Axis(0));

    let mut d_z1 = d_z2.dot(&params.layers[1].weight.t());
    Zip::from(&mut d_z1)
        .and(&trace.z1)
        .for_each(|d, &z| *d = if z > 0.0 { *d } else { 0.0 });
    grad.layers[0].weight = x.t().dot(&d_z1);
    grad.layers[0].bias = d_z1.sum_axis(Axis(0));

    if lambda_l2 != 0.0 {
        for (g, p) in grad.layers.iter_mut().zip(params.layers.iter()) {
            g.weight.scaled_add(2.0 * lambda_l2, &p.weight);
        }
    }
    (loss, grad)
}

/// Uniform evaluation grid `x_i = 2π i / n`.
pub fn eval_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| TAU * i as f64 / n as f64).collect()
}

/// Explained variance of `sin(kx)` by the harmonic-`k` projection of `predictions`.
///
/// `predictions` are samples on [`eval_grid`]. With `a`, `b` the discrete sine
/// and cosine coefficients of the prediction at frequency `k`, the projected
/// component is `a·sin(kx) + b·cos(kx)` and the score is
/// `1 − Σ(sin(kx) − ŝ)² / Σ sin²(kx)`.
pub fn explained_variance(predictions: &[f64], k: usize) -> Result<f64> {
    let n = predictions.len();
    if k == 0 || n < 4 * k {
        return Err(Error::Aliasing { n, k });
    }
    let kf = k as f64;
    let xs = eval_grid(n);
    let (mut a, mut b) = (0.0, 0.0);
    for (&p, &x) in predictions.iter().zip(&xs) {
        a += p * (kf * x).sin();
        b += p * (kf * x).cos();
    }
    a *= 2.0 / n as f64;
    b *= 2.0 / n as f64;

    let (mut resid, mut norm) = (0.0, 0.0);
    for &x in &xs {
        let (s, c) = (kf * x).sin_cos();
        let e = s - (a * s + b * c);
        resid += e * e;
        norm += s * s;
    }
    Ok(1.0 - resid / norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvPoint {
    pub step: usize,
    pub ev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabResult {
    pub config: LabConfig,
    /// Final explained variance per band, ordered as [`BANDS`].
    pub ev_final: [f64; 3],
    /// Explained-variance curve per band, ordered as [`BANDS`].
    pub curves: [Vec<EvPoint>; 3],
    /// `(step, mean squared error on the training points)`.
    pub train_loss_curve: Vec<(usize, f64)>,
    /// Squared norm of the weight matrices after the final step.
    pub weight_norm_sq: f64,
}

impl LabResult {
    pub fn ev(&self, k: usize) -> Option<f64> {
        BANDS.iter().position(|&b| b == k).map(|i| self.ev_final[i])
    }
}

fn training_set(config: &LabConfig) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let xs: Vec<f64> = (0..config.train_points)
        .map(|_| rng.random_range(0.0..TAU))
        .collect();
    let ys = xs.iter().map(|&x| target(x)).collect();
    (xs, ys)
}

fn band_scores(params: &MlpParams, grid: &[f64]) -> Result<[f64; 3]> {
    let preds = forward(params, grid);
    let mut out = [0.0; 3];
    for (slot, &k) in out.iter_mut().zip(BANDS.iter()) {
        *slot = explained_variance(&preds, k)?;
    }
    Ok(out)
}

fn mse(params: &MlpParams, xs: &[f64], ys: &[f64]) -> f64 {
    let preds = forward(params, xs);
    preds
        .iter()
        .zip(ys)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / xs.len() as f64
}

struct RmsProp {
    second_moment: Vec<f64>,
    step: i32,
}

impl RmsProp {
    fn new(len: usize) -> Self {
        RmsProp {
            second_moment: vec![0.0; len],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut MlpParams, grad: &MlpParams, lr: f64) {
        self.step += 1;
        let correction = 1.0 - RMS_DECAY.powi(self.step);
        for ((p, &g), v) in params
            .values_mut()
            .zip(grad.values())
            .zip(self.second_moment.iter_mut())
        {
            *v = RMS_DECAY * *v + (1.0 - RMS_DECAY) * g * g;
            *p -= lr * g / ((*v / correction).sqrt() + RMS_EPS);
            if p.abs() < UNDERFLOW {
                *p = 0.0;
            }
        }
    }
}

/// Runs one training condition to completion.
pub fn train(config: &LabConfig) -> Result<LabResult> {
    train_with_params(config).map(|(result, _)| result)
}

/// [`train`], also returning the final parameters.
pub fn train_with_params(config: &LabConfig) -> Result<(LabResult, MlpParams)> {
    config.validate()?;
    let (xs, ys) = training_set(config);
    let grid = eval_grid(config.eval_grid);
    let mut params = init_mlp(config.seed, config.hidden);
    let mut optimizer = RmsProp::new(params.len());

    let mut curves: [Vec<EvPoint>; 3] = Default::default();
    let mut train_loss_curve = Vec::new();
    let mut record = |step: usize, params: &MlpParams| -> Result<[f64; 3]> {
        let scores = band_scores(params, &grid)?;
        for (curve, &ev) in curves.iter_mut().zip(scores.iter()) {
            curve.push(EvPoint { step, ev });
        }
        train_loss_curve.push((step, mse(params, &xs, &ys)));
        Ok(scores)
    };

    let mut ev_final = record(0, &params)?;
    for step in 1..=config.steps {
        let (loss, grad) = loss_and_grad(&params, &xs, &ys, config.lambda_l2);
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        optimizer.update(&mut params, &grad, config.learning_rate);
        if !params.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: f64::NAN,
            });
        }
        if step % config.record_every == 0 || step == config.steps {
            ev_final = record(step, &params)?;
        }
    }

    let result = LabResult {
        config: config.clone(),
        ev_final,
        curves,
        train_loss_curve,
        weight_norm_sq: params.weight_norm_sq(),
    };
    Ok((result, params))
}
