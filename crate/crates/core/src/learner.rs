//! Linear threshold hash functions trained online against ternary codewords.
//!
//! Bit `t` of the code of `x` is `sgn(w_t . [x; 1])` with `sgn(0) = +1`. The
//! training signal for a labeled point is the surrogate
//! `sum_t l(-c_t w_t . [x; 1]) |c_t|`, which upper-bounds the masked Hamming
//! distance between the code and the codeword `c`. Inactive positions
//! contribute nothing, so their functions are never touched by a step.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bitcode::{PackedCode, TernaryCodeword};
use crate::codebook::{default_capacity, Codebook};
use crate::data::Label;
use crate::ecoc::EcocMatrix;
use crate::error::{Error, Result};
use crate::par;

/// Stream ids partitioning the ChaCha streams of one training seed.
const DRAW_STREAM: u64 = 1;
const INIT_STREAM_BASE: u64 = 1 << 32;

/// A convex loss of the margin `c * w.x` whose value is at least 1 whenever
/// the margin is not positive, so it bounds the per-bit disagreement.
pub trait MarginLoss {
    fn value(&self, margin: f64) -> f64;
    /// Derivative of [`MarginLoss::value`] with respect to the margin (a
    /// subgradient at kinks).
    fn slope(&self, margin: f64) -> f64;
}

/// `max(0, 1 - margin)`; subgradient 0 at the kink.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hinge;

impl MarginLoss for Hinge {
    fn value(&self, margin: f64) -> f64 {
        (1.0 - margin).max(0.0)
    }

    fn slope(&self, margin: f64) -> f64 {
        if margin < 1.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// `log2(1 + exp(-margin))`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Logistic;

impl MarginLoss for Logistic {
    fn value(&self, margin: f64) -> f64 {
        let nat = if margin > 0.0 {
            (-margin).exp().ln_1p()
        } else {
            -margin + margin.exp().ln_1p()
        };
        nat / std::f64::consts::LN_2
    }

    fn slope(&self, margin: f64) -> f64 {
        let s = if margin > 0.0 {
            let e = (-margin).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + margin.exp())
        };
        -s / std::f64::consts::LN_2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    Hinge,
    Logistic,
}

impl MarginLoss for LossKind {
    fn value(&self, margin: f64) -> f64 {
        match self {
            LossKind::Hinge => Hinge.value(margin),
            LossKind::Logistic => Logistic.value(margin),
        }
    }

    fn slope(&self, margin: f64) -> f64 {
        match self {
            LossKind::Hinge => Hinge.slope(margin),
            LossKind::Logistic => Logistic.slope(margin),
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hinge" => Ok(LossKind::Hinge),
            "logistic" => Ok(LossKind::Logistic),
            other => Err(Error::InvalidConfig(format!("unknown loss `{other}`"))),
        }
    }
}

/// `count` hash functions for `d`-dimensional inputs: Gaussian weights with
/// standard deviation `1/sqrt(d+1)` and a zero bias.
pub fn init_functions(d: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    init_with(d, count, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn init_with(d: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0 / ((d + 1) as f64).sqrt()).expect("positive std");
    (0..count)
        .map(|_| {
            let mut w: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
            w.push(0.0);
            w
        })
        .collect()
}

/// `w . [x; 1]`.
#[inline]
fn affine(w: &[f64], x: &[f64]) -> f64 {
    let (lin, bias) = w.split_at(x.len());
    lin.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias[0]
}

/// `sgn(w . [x; 1])` with `sgn(0) = +1`.
pub fn predict_bit(w: &[f64], x: &[f64]) -> Result<i8> {
    if w.len() != x.len() + 1 {
        return Err(Error::dim(x.len() + 1, w.len()));
    }
    Ok(if affine(w, x) >= 0.0 { 1 } else { -1 })
}

/// The ordered hash functions, stored row-major in homogeneous form.
#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    d: usize,
    weights: Vec<f64>,
    iteration: u64,
}

impl HashModel {
    pub fn new(d: usize) -> Self {
        HashModel {
            d,
            weights: Vec::new(),
            iteration: 0,
        }
    }

    pub fn from_functions(d: usize, functions: &[Vec<f64>]) -> Result<Self> {
        let mut m = HashModel::new(d);
        m.push_functions(functions)?;
        Ok(m)
    }

    pub fn from_parts(d: usize, weights: Vec<f64>, iteration: u64) -> Result<Self> {
        if !weights.len().is_multiple_of(d + 1) {
            return Err(Error::InvalidInput(format!(
                "{} weights do not split into vectors of length {}",
                weights.len(),
                d + 1
            )));
        }
        Ok(HashModel {
            d,
            weights,
            iteration,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of hash functions (code length).
    pub fn width(&self) -> usize {
        self.weights.len() / (self.d + 1)
    }

    /// Update steps taken.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn function(&self, t: usize) -> &[f64] {
        let s = self.d + 1;
        &self.weights[t * s..(t + 1) * s]
    }

    pub fn raw_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn push_functions(&mut self, functions: &[Vec<f64>]) -> Result<()> {
        for w in functions {
            if w.len() != self.d + 1 {
                return Err(Error::dim(self.d + 1, w.len()));
            }
        }
        for w in functions {
            self.weights.extend_from_slice(w);
        }
        Ok(())
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::dim(self.d, x.len()));
        }
        Ok(())
    }

    /// `w_t . [x; 1]` (no dimension check).
    #[inline]
    pub(crate) fn project(&self, t: usize, x: &[f64]) -> f64 {
        affine(self.function(t), x)
    }

    /// The code of `x` under all functions.
    pub fn phi(&self, x: &[f64]) -> Result<PackedCode> {
        self.check_x(x)?;
        let mut code = PackedCode::zeros(self.width());
        for t in 0..self.width() {
            if self.project(t, x) >= 0.0 {
                code.set(t, true);
            }
        }
        Ok(code)
    }

    /// Codes of many points; parallel under the `parallel` feature.
    pub fn phi_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<PackedCode>> {
        par::map(xs, |x| self.phi(x)).into_iter().collect()
    }

    /// Bits of `x` for the columns in `cols`, in order.
    pub fn bits(&self, cols: Range<usize>, x: &[f64]) -> Result<Vec<bool>> {
        self.check_x(x)?;
        if cols.end > self.width() {
            return Err(Error::Range {
                what: "column",
                value: cols.end,
                lo: 0,
                hi: self.width(),
            });
        }
        Ok(cols.map(|t| self.project(t, x) >= 0.0).collect())
    }

    fn check_codeword(&self, x: &[f64], cw: &TernaryCodeword) -> Result<()> {
        self.check_x(x)?;
        if cw.len() != self.width() {
            return Err(Error::dim(self.width(), cw.len()));
        }
        Ok(())
    }
}

/// `sum_t l(-c_t w_t . [x; 1])` over the active positions of `cw`.
pub fn surrogate_loss(
    model: &HashModel,
    x: &[f64],
    cw: &TernaryCodeword,
    loss: &impl MarginLoss,
) -> Result<f64> {
    model.check_codeword(x, cw)?;
    Ok(cw
        .active_positions()
        .map(|t| loss.value(cw.value(t) as f64 * model.project(t, x)))
        .sum())
}

/// Sparse gradient of the surrogate: column `t` has gradient `coeff * [x; 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub augmented: Vec<f64>,
    pub columns: Vec<(usize, f64)>,
}

impl Gradient {
    pub fn is_zero(&self) -> bool {
        self.columns.is_empty()
    }

    /// Dense gradient vector of column `t` (zero if absent).
    pub fn dense(&self, t: usize) -> Vec<f64> {
        let coeff = self
            .columns
            .iter()
            .find(|(c, _)| *c == t)
            .map(|(_, v)| *v)
            .unwrap_or(0.0);
        self.augmented.iter().map(|v| coeff * v).collect()
    }
}

/// Gradient of [`surrogate_loss`] with respect to each `w_t`. Inactive
/// columns and columns with zero slope are absent.
pub fn gradient(
    model: &HashModel,
    x: &[f64],
    cw: &TernaryCodeword,
    loss: &impl MarginLoss,
) -> Result<Gradient> {
    model.check_codeword(x, cw)?;
    let columns = cw
        .active_positions()
        .filter_map(|t| {
            let c = cw.value(t) as f64;
            let coeff = loss.slope(c * model.project(t, x)) * c;
            (coeff != 0.0).then_some((t, coeff))
        })
        .collect();
    let mut augmented = x.to_vec();
    augmented.push(1.0);
    Ok(Gradient { augmented, columns })
}

/// `w_t <- w_t - eta * grad_t` for every column in `grad`.
pub fn apply_gradient(model: &mut HashModel, grad: &Gradient, eta: f64) {
    let s = model.d + 1;
    for &(t, coeff) in &grad.columns {
        let w = &mut model.weights[t * s..(t + 1) * s];
        for (wi, xi) in w.iter_mut().zip(&grad.augmented) {
            *wi -= eta * coeff * xi;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub label: Label,
    pub cycle: usize,
    /// The label's cycle block; the only columns the step may change.
    pub touched_columns: Range<usize>,
    pub surrogate_loss_before: f64,
    /// Active columns whose weights actually moved.
    pub updated_columns: usize,
    pub new_cycle_started: bool,
    pub is_new_label: bool,
    /// Model width after the step.
    pub width: usize,
    /// Model iteration after the step.
    pub iteration: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub k: usize,
    pub rho: usize,
    pub eta: f64,
    pub seed: u64,
    pub codebook_capacity: usize,
    pub loss: LossKind,
}

impl TrainerConfig {
    /// `rho = 4 * ceil(log2 k)` (at least 1), unit step size, hinge loss.
    pub fn new(k: usize) -> Self {
        TrainerConfig {
            k,
            rho: default_rho(k),
            eta: 1.0,
            seed: 0,
            codebook_capacity: default_capacity(k, None),
            loss: LossKind::Hinge,
        }
    }

    pub fn rho(mut self, rho: usize) -> Self {
        self.rho = rho;
        self
    }

    pub fn eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn capacity(mut self, capacity: usize) -> Self {
        self.codebook_capacity = capacity;
        self
    }

    pub fn loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.rho == 0 {
            return Err(Error::InvalidConfig("k and rho must be >= 1".into()));
        }
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "step size must be finite and non-negative, got {}",
                self.eta
            )));
        }
        Ok(())
    }

    /// Advisory messages for parameter choices that tend to hurt.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let min_rho = ceil_log2(self.k);
        if self.rho < min_rho {
            out.push(format!(
                "rho = {} is below ceil(log2 k) = {min_rho}; columns within a cycle are likely to repeat",
                self.rho
            ));
        }
        out
    }
}

pub fn ceil_log2(k: usize) -> usize {
    if k <= 1 {
        0
    } else {
        (usize::BITS - (k - 1).leading_zeros()) as usize
    }
}

pub fn default_rho(k: usize) -> usize {
    (4 * ceil_log2(k)).max(1)
}

/// Owns the model, the code matrix and the codebook for one training stream.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainerConfig,
    model: HashModel,
    ecoc: EcocMatrix,
    codebook: Codebook,
    draw_rng: ChaCha8Rng,
}

impl Trainer {
    /// Fresh learner with `k` initialized functions for `d`-dimensional input.
    pub fn new(d: usize, cfg: TrainerConfig) -> Result<Self> {
        cfg.validate()?;
        if d == 0 {
            return Err(Error::InvalidConfig(
                "feature dimensionality must be >= 1".into(),
            ));
        }
        let codebook = Codebook::generate(cfg.k, cfg.codebook_capacity, cfg.seed)?;
        let ecoc = EcocMatrix::new(cfg.k, cfg.rho)?;
        let mut model = HashModel::new(d);
        model.push_functions(&cycle_functions(d, cfg.k, cfg.seed, 1))?;
        Ok(Trainer {
            model,
            ecoc,
            codebook,
            draw_rng: draw_rng(cfg.seed, 0),
            cfg,
        })
    }

    /// Reassembles a trainer from persisted state. `draw_word_pos` is the
    /// position of the codeword-draw stream.
    pub fn from_parts(
        cfg: TrainerConfig,
        model: HashModel,
        ecoc: EcocMatrix,
        codebook: Codebook,
        draw_word_pos: u128,
    ) -> Result<Self> {
        cfg.validate()?;
        if model.width() != ecoc.width() {
            return Err(Error::Consistency(format!(
                "model width {} differs from code matrix width {}",
                model.width(),
                ecoc.width()
            )));
        }
        if ecoc.k() != cfg.k || codebook.k() != cfg.k || ecoc.rho() != cfg.rho {
            return Err(Error::Consistency("k / rho disagree between parts".into()));
        }
        Ok(Trainer {
            draw_rng: draw_rng(cfg.seed, draw_word_pos),
            cfg,
            model,
            ecoc,
            codebook,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn model(&self) -> &HashModel {
        &self.model
    }

    pub fn ecoc(&self) -> &EcocMatrix {
        &self.ecoc
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn draw_word_pos(&self) -> u128 {
        self.draw_rng.get_word_pos()
    }

    /// One online update on the labeled point `(x, y)`.
    pub fn step(&mut self, x: &[f64], y: &Label) -> Result<StepReport> {
        self.model.check_x(x)?;
        let obs = self
            .ecoc
            .observe_label(&mut self.codebook, &mut self.draw_rng, y)?;
        if obs.new_cycle_started {
            let fresh = cycle_functions(self.model.d, self.cfg.k, self.cfg.seed, obs.cycle);
            self.model.push_functions(&fresh)?;
        }
        let loss_before = surrogate_loss(&self.model, x, &obs.codeword, &self.cfg.loss)?;
        let grad = gradient(&self.model, x, &obs.codeword, &self.cfg.loss)?;
        apply_gradient(&mut self.model, &grad, self.cfg.eta);
        self.model.iteration += 1;
        Ok(StepReport {
            label: y.clone(),
            cycle: obs.cycle,
            touched_columns: self.ecoc.cycle_columns(obs.cycle)?,
            surrogate_loss_before: loss_before,
            updated_columns: if self.cfg.eta == 0.0 {
                0
            } else {
                grad.columns.len()
            },
            new_cycle_started: obs.new_cycle_started,
            is_new_label: obs.is_new_label,
            width: self.model.width(),
            iteration: self.model.iteration,
        })
    }

    /// Surrogate loss of `(x, y)` under the current model; `y` must be known.
    pub fn loss_of(&self, x: &[f64], y: &Label) -> Result<f64> {
        surrogate_loss(&self.model, x, &self.ecoc.find(y)?, &self.cfg.loss)
    }
}

fn draw_rng(seed: u64, word_pos: u128) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(DRAW_STREAM);
    rng.set_word_pos(word_pos);
    rng
}

/// The `k` initial functions of cycle `cycle` (1-based) for a given seed.
fn cycle_functions(d: usize, k: usize, seed: u64, cycle: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM_BASE + cycle as u64);
    init_with(d, k, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitcode::hamming_masked;
    use proptest::prelude::*;
    use rand::Rng;

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn naive_dot(w: &[f64], x: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..x.len() {
            s += w[i] * x[i];
        }
        s + w[x.len()]
    }

    #[test]
    fn init_is_deterministic_with_expected_moments() {
        assert_eq!(init_functions(5, 3, 9), init_functions(5, 3, 9));
        assert!(init_functions(5, 0, 9).is_empty());
        let d = 15;
        let fs = init_functions(d, 700, 1);
        assert!(fs.iter().all(|w| w.len() == d + 1 && w[d] == 0.0));
        let vals: Vec<f64> = fs.iter().flat_map(|w| w[..d].to_vec()).collect();
        assert!(vals.len() >= 10_000);
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let target_sd = 1.0 / ((d + 1) as f64).sqrt();
        // mean within ~4 standard errors, sd within 3 %
        assert!(mean.abs() < 4.0 * target_sd / n.sqrt(), "mean {mean}");
        assert!(
            (var.sqrt() / target_sd - 1.0).abs() < 0.03,
            "sd {}",
            var.sqrt()
        );
    }

    #[test]
    fn predict_bit_cases() {
        let mut w = vec![0.0; 4];
        w[0] = 1.0;
        assert_eq!(predict_bit(&w, &[2.0, 0.0, 0.0]).unwrap(), 1);
        assert_eq!(predict_bit(&[0.0; 4], &[-3.0, 1.0, 5.0]).unwrap(), 1);
        assert_eq!(
            predict_bit(&[-1.0, 0.0, 0.0, 0.0], &[2.0, 0.0, 0.0]).unwrap(),
            -1
        );
        assert!(matches!(
            predict_bit(&[1.0, 2.0], &[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x = rand_vec(&mut rng, 6);
            let w = rand_vec(&mut rng, 7);
            let expected = if naive_dot(&w, &x) >= 0.0 { 1 } else { -1 };
            assert_eq!(predict_bit(&w, &x).unwrap(), expected);
        }
    }

    #[test]
    fn phi_cases() {
        let empty = HashModel::new(3);
        assert!(empty.phi(&[1.0, 2.0, 3.0]).unwrap().is_empty());
        let w = vec![vec![0.5, -1.0, 0.2]];
        let single = HashModel::from_functions(2, &w).unwrap();
        let x = [1.0, 1.0];
        assert_eq!(
            single.phi(&x).unwrap().value(0),
            predict_bit(&w[0], &x).unwrap()
        );
        let fs = init_functions(4, 8, 3);
        let model = HashModel::from_functions(4, &fs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_vec(&mut rng, 4);
        let code = model.phi(&x).unwrap();
        for (t, w) in fs.iter().enumerate() {
            assert_eq!(code.value(t), predict_bit(w, &x).unwrap());
        }
        assert!(model.phi(&[1.0]).is_err());
    }

    #[test]
    fn surrogate_cases() {
        // margins all >= 1
        let model = HashModel::from_functions(1, &[vec![2.0, 0.0], vec![-3.0, 0.0]]).unwrap();
        let cw = TernaryCodeword::from_ternary(&[1, -1]).unwrap();
        assert_eq!(surrogate_loss(&model, &[1.0], &cw, &Hinge).unwrap(), 0.0);
        // single active bit at w.x = 0
        let zero = HashModel::from_functions(1, &[vec![0.0, 0.0], vec![5.0, 5.0]]).unwrap();
        let cw = TernaryCodeword::from_ternary(&[-1, 0]).unwrap();
        assert_eq!(surrogate_loss(&zero, &[1.0], &cw, &Hinge).unwrap(), 1.0);
        assert!(surrogate_loss(&zero, &[1.0], &TernaryCodeword::inactive(3), &Hinge).is_err());
    }

    #[test]
    fn surrogate_dominates_masked_hamming_randomly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10_000 {
            let d = rng.random_range(1..6);
            let b = rng.random_range(1..12);
            let fs: Vec<Vec<f64>> = (0..b).map(|_| rand_vec(&mut rng, d + 1)).collect();
            let model = HashModel::from_functions(d, &fs).unwrap();
            let x = rand_vec(&mut rng, d);
            let cw: Vec<i8> = (0..b).map(|_| rng.random_range(-1..=1)).collect();
            let cw = TernaryCodeword::from_ternary(&cw).unwrap();
            let ham = hamming_masked(&model.phi(&x).unwrap(), &cw).unwrap() as f64;
            for loss in [LossKind::Hinge, LossKind::Logistic] {
                assert!(ham <= surrogate_loss(&model, &x, &cw, &loss).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn gradient_cases() {
        let model = HashModel::from_functions(1, &[vec![2.0, 0.0], vec![0.1, 0.0]]).unwrap();
        let sat = TernaryCodeword::from_ternary(&[1, 0]).unwrap();
        assert!(gradient(&model, &[1.0], &sat, &Hinge).unwrap().is_zero());
        // column 1 violated but inactive
        let g = gradient(&model, &[1.0], &sat, &Hinge).unwrap();
        assert!(g.columns.iter().all(|(t, _)| *t != 1));
        let viol = TernaryCodeword::from_ternary(&[0, -1]).unwrap();
        let g = gradient(&model, &[1.0], &viol, &Hinge).unwrap();
        assert_eq!(g.columns, vec![(1, 1.0)]);
        assert_eq!(g.dense(1), vec![1.0, 1.0]);
        assert_eq!(g.dense(0), vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = 1e-6;
        let mut checked = 0;
        while checked < 200 {
            let d = 4;
            let fs: Vec<Vec<f64>> = (0..6).map(|_| rand_vec(&mut rng, d + 1)).collect();
            let model = HashModel::from_functions(d, &fs).unwrap();
            let x = rand_vec(&mut rng, d);
            let cw: Vec<i8> = (0..6).map(|_| rng.random_range(-1..=1)).collect();
            let cw = TernaryCodeword::from_ternary(&cw).unwrap();
            let margins: Vec<f64> = (0..6)
                .map(|t| cw.value(t) as f64 * model.project(t, &x))
                .collect();
            if margins.iter().any(|m| (m - 1.0).abs() < 1e-3) {
                continue;
            }
            for loss in [LossKind::Hinge, LossKind::Logistic] {
                let g = gradient(&model, &x, &cw, &loss).unwrap();
                for t in 0..6 {
                    let analytic = g.dense(t);
                    for i in 0..=d {
                        let mut plus = fs.clone();
                        plus[t][i] += h;
                        let mut minus = fs.clone();
                        minus[t][i] -= h;
                        let lp = surrogate_loss(
                            &HashModel::from_functions(d, &plus).unwrap(),
                            &x,
                            &cw,
                            &loss,
                        )
                        .unwrap();
                        let lm = surrogate_loss(
                            &HashModel::from_functions(d, &minus).unwrap(),
                            &x,
                            &cw,
                            &loss,
                        )
                        .unwrap();
                        let fd = (lp - lm) / (2.0 * h);
                        let err =
                            (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-3);
                        assert!(err < 1e-5, "t={t} i={i} fd={fd} an={}", analytic[i]);
                    }
                }
            }
            checked += 1;
        }
    }

    #[test]
    fn hinge_step_closed_form() {
        let model = HashModel::from_functions(2, &[vec![0.0, 0.0, 0.0]]).unwrap();
        let cw = TernaryCodeword::from_ternary(&[-1]).unwrap();
        let x = [0.5, -2.0];
        let g = gradient(&model, &x, &cw, &Hinge).unwrap();
        let mut m = model.clone();
        apply_gradient(&mut m, &g, 1.0);
        // w <- w + c [x; 1]
        assert_eq!(m.function(0), &[-0.5, 2.0, -1.0]);
    }

    #[test]
    fn logistic_is_stable_and_bounds() {
        let l = Logistic;
        assert!((l.value(0.0) - 1.0).abs() < 1e-15);
        assert!(l.value(-800.0).is_finite() && l.value(800.0) >= 0.0);
        assert!(l.value(-1e-9) >= 1.0);
    }

    #[test]
    fn trainer_step_basics() {
        let cfg = TrainerConfig::new(4).rho(2).seed(3);
        let mut tr = Trainer::new(3, cfg).unwrap();
        assert_eq!(tr.model().width(), 4);
        let r = tr.step(&[1.0, 0.0, 0.0], &"a".into()).unwrap();
        assert!(r.is_new_label && !r.new_cycle_started);
        assert_eq!(r.touched_columns, 0..4);
        assert_eq!(r.iteration, 1);
        tr.step(&[0.0, 1.0, 0.0], &"b".into()).unwrap();
        let r = tr.step(&[0.0, 0.0, 1.0], &"c".into()).unwrap();
        assert!(r.new_cycle_started);
        assert_eq!(r.touched_columns, 4..8);
        assert_eq!(tr.model().width(), 8);
        assert_eq!(tr.ecoc().width(), 8);
        assert!(tr.step(&[1.0], &"a".into()).is_err());
    }

    #[test]
    fn satisfied_step_is_noop() {
        let cfg = TrainerConfig::new(4).rho(2).seed(3);
        let mut tr = Trainer::new(2, cfg).unwrap();
        let x = [0.3, -0.7];
        // train until the point is fit, then one more step must not move anything
        for _ in 0..50 {
            tr.step(&x, &"a".into()).unwrap();
        }
        assert_eq!(tr.loss_of(&x, &"a".into()).unwrap(), 0.0);
        let before = tr.model().clone();
        let r = tr.step(&x, &"a".into()).unwrap();
        assert_eq!(r.surrogate_loss_before, 0.0);
        assert_eq!(r.updated_columns, 0);
        assert_eq!(tr.model().raw_weights(), before.raw_weights());
    }

    #[test]
    fn separable_stream_reduces_loss() {
        let cfg = TrainerConfig::new(8).rho(2).seed(11);
        let mut tr = Trainer::new(2, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut pts = Vec::new();
        for i in 0..50 {
            let (c, y) = if i % 2 == 0 { (2.0, "p") } else { (-2.0, "n") };
            pts.push((
                vec![c + rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)],
                Label::from(y),
            ));
        }
        let mut initial = Vec::new();
        for (x, y) in &pts {
            initial.push(tr.step(x, y).unwrap().surrogate_loss_before);
        }
        let initial_avg = initial[..10].iter().sum::<f64>() / 10.0;
        let final_avg = pts
            .iter()
            .map(|(x, y)| tr.loss_of(x, y).unwrap())
            .sum::<f64>()
            / pts.len() as f64;
        assert!(final_avg < initial_avg, "{final_avg} !< {initial_avg}");
    }

    #[test]
    fn perceptron_style_convergence() {
        // Two labels in one 2-column cycle: each column is a dichotomizer of
        // two separated clouds (or of their union), so hinge updates must stop.
        let cfg = TrainerConfig::new(2).rho(2).seed(2).capacity(2);
        let mut tr = Trainer::new(2, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut violations = Vec::new();
        for _ in 0..1000 {
            let (cx, y) = if rng.random::<bool>() {
                (3.0, "a")
            } else {
                (-3.0, "b")
            };
            let x = [
                cx + rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ];
            let r = tr.step(&x, &Label::from(y)).unwrap();
            violations.push(r.updated_columns > 0);
        }
        assert!(violations[800..].iter().all(|v| !v));
    }

    #[test]
    fn config_helpers() {
        assert_eq!(default_rho(32), 20);
        assert_eq!(default_rho(1), 1);
        assert_eq!(ceil_log2(16), 4);
        assert_eq!(ceil_log2(17), 5);
        assert!(TrainerConfig::new(32).rho(3).warnings().len() == 1);
        assert!(TrainerConfig::new(32).warnings().is_empty());
        assert!(TrainerConfig::new(4).eta(-1.0).validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn prop_step_freezes_other_cycles(seed in 0u64..1000, labels in prop::collection::vec(0usize..9, 1..40)) {
            let cfg = TrainerConfig::new(5).rho(3).seed(seed);
            let mut tr = Trainer::new(3, cfg).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for l in labels {
                let x = rand_vec(&mut rng, 3);
                let before = tr.model().clone();
                let r = tr.step(&x, &Label::from(l)).unwrap();
                for t in 0..before.width() {
                    if !r.touched_columns.contains(&t) {
                        prop_assert_eq!(before.function(t), tr.model().function(t));
                    }
                }
            }
        }
    }
}
