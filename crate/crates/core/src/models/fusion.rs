//! Linear SVM over all evidence sources, trained with Pegasos-style hinge
//! subgradient steps and calibrated to a probability with Platt scaling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::{CONN_LEN, SHAPE_LEN};

/// `[logit(cnn), baseline, shape descriptor, connectivity features]`.
pub const FUSION_DIM: usize = 2 + SHAPE_LEN + CONN_LEN;
pub const DEFAULT_LAMBDA: f64 = 1e-3;
/// Every `HOLDOUT_EVERY`-th example (by position) is held out for Platt fitting.
pub const HOLDOUT_EVERY: usize = 5;
/// CNN probabilities are clamped this far from 0 and 1 before the logit.
const CNN_EPS: f64 = 1e-6;

pub fn fusion_input(cnn: f64, baseline: f64, shape: &[f64], connectivity: &[f64]) -> Result<Vec<f64>> {
    if shape.len() != SHAPE_LEN || connectivity.len() != CONN_LEN {
        return Err(Error::MissingFeatures(format!(
            "expected {SHAPE_LEN} shape and {CONN_LEN} connectivity entries, got {} and {}",
            shape.len(),
            connectivity.len()
        )));
    }
    let mut v = Vec::with_capacity(FUSION_DIM);
    // Saturated probabilities bunch up near 0 and 1, so the logit carries
    // the CNN's ranking into the linear model far better.
    let p = cnn.clamp(CNN_EPS, 1.0 - CNN_EPS);
    v.push((p / (1.0 - p)).ln());
    v.push(baseline);
    v.extend_from_slice(shape);
    v.extend_from_slice(connectivity);
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    /// Per-feature standardization applied before the linear model.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub platt_a: f64,
    pub platt_b: f64,
}

impl FusionParams {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.weights.len() != dim || self.mean.len() != dim || self.scale.len() != dim {
            return Err(Error::LayoutMismatch(format!(
                "fusion parameters have dimension {}, expected {dim}",
                self.weights.len()
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidModel(format!("lambda must be > 0, got {}", self.lambda)));
        }
        let all = self.weights.iter().chain(&self.mean).chain(&self.scale);
        if all.chain([&self.bias, &self.platt_a, &self.platt_b]).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite fusion parameter".into()));
        }
        Ok(())
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::LayoutMismatch(format!(
                "fusion input has {} entries, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(dot(&self.weights, &self.standardize(x)) + self.bias)
    }

    /// Platt-calibrated probability; monotone increasing in the margin.
    pub fn probability(&self, x: &[f64]) -> Result<f64> {
        Ok(platt(self.platt_a, self.platt_b, self.margin(x)?))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn platt(a: f64, b: f64, f: f64) -> f64 {
    let t = a * f + b;
    if t >= 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

fn sign(y: bool) -> f64 {
    if y {
        1.0
    } else {
        -1.0
    }
}

/// `λ/2 |w|² + mean(max(0, 1 - y (w·x + b)))`; the bias is not regularized.
pub fn svm_objective(w: &[f64], b: f64, lambda: f64, data: &[(Vec<f64>, bool)]) -> f64 {
    let reg = 0.5 * lambda * dot(w, w);
    let hinge: f64 = data.iter().map(|(x, y)| (1.0 - sign(*y) * (dot(w, x) + b)).max(0.0)).sum();
    reg + hinge / data.len().max(1) as f64
}

/// Exact minimizer of the mean hinge loss over the bias for fixed margins
/// `m_i = w·x_i`. The loss is piecewise linear with kinks at `y_i - m_i`;
/// the smallest minimizing kink is returned.
pub fn best_bias(margins: &[f64], labels: &[bool]) -> f64 {
    let loss = |b: f64| -> f64 {
        margins
            .iter()
            .zip(labels)
            .map(|(m, &y)| (1.0 - sign(y) * (m + b)).max(0.0))
            .sum()
    };
    let mut kinks: Vec<f64> = margins.iter().zip(labels).map(|(m, &y)| sign(y) - m).collect();
    kinks.sort_by(f64::total_cmp);
    let mut best = (f64::INFINITY, 0.0);
    for k in kinks {
        let l = loss(k);
        if l < best.0 {
            best = (l, k);
        }
    }
    best.1
}

/// Pegasos hinge subgradient descent for `iters` steps with step `1/(λt)`,
/// returning the averaged iterate. The bias moves in `1/√t` steps while
/// training and is re-fit exactly with [`best_bias`] at the end.
pub fn hinge_train(data: &[(Vec<f64>, bool)], lambda: f64, iters: usize, seed: u64) -> Result<(Vec<f64>, f64)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("fusion training set is empty".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be > 0, got {lambda}")));
    }
    let dim = data[0].0.len();
    if data.iter().any(|(x, _)| x.len() != dim) {
        return Err(Error::ShapeMismatch("inconsistent fusion input dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut w_avg = vec![0.0; dim];
    for t in 1..=iters {
        let (x, y) = &data[rng.random_range(0..data.len())];
        let y = sign(*y);
        let eta = 1.0 / (lambda * t as f64);
        let violated = y * (dot(&w, x) + b) < 1.0;
        let shrink = 1.0 - eta * lambda;
        for (wi, xi) in w.iter_mut().zip(x) {
            *wi = shrink * *wi + if violated { eta * y * xi } else { 0.0 };
        }
        if violated {
            b += y / (t as f64).sqrt();
        }
        let k = 1.0 / t as f64;
        for (a, wi) in w_avg.iter_mut().zip(&w) {
            *a += (wi - *a) * k;
        }
    }
    let margins: Vec<f64> = data.iter().map(|(x, _)| dot(&w_avg, x)).collect();
    let labels: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
    Ok((w_avg, best_bias(&margins, &labels)))
}

/// Fits `P(y=1 | f) = 1 / (1 + exp(A f + B))` by Newton's method with
/// backtracking on the regularized targets of Platt (1999). `A` is kept
/// strictly negative so calibration never reverses the margin ranking.
pub fn platt_fit(margins: &[f64], labels: &[bool]) -> (f64, f64) {
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    let neg = labels.len() as f64 - pos;
    let hi = (pos + 1.0) / (pos + 2.0);
    let lo = 1.0 / (neg + 2.0);
    let t: Vec<f64> = labels.iter().map(|&y| if y { hi } else { lo }).collect();
    let nll = |a: f64, b: f64| -> f64 {
        margins
            .iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = a * f + b;
                // -[t log p + (1-t) log(1-p)] with p = 1/(1+e^z)
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, ((neg + 1.0) / (pos + 1.0)).ln());
    let mut f = nll(a, b);
    for _ in 0..100 {
        let (mut g1, mut g2, mut h11, mut h22, mut h21) = (0.0, 0.0, 1e-12, 1e-12, 0.0);
        for (&fi, &ti) in margins.iter().zip(&t) {
            let p = platt(a, b, fi);
            let d1 = ti - p;
            let d2 = p * (1.0 - p);
            g1 += fi * d1;
            g2 += d1;
            h11 += fi * fi * d2;
            h22 += d2;
            h21 += fi * d2;
        }
        if g1.abs() < 1e-10 && g2.abs() < 1e-10 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut improved = false;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = nll(na, nb);
            if nf < f + 1e-4 * step * gd {
                a = na;
                b = nb;
                f = nf;
                improved = true;
                break;
            }
            step /= 2.0;
        }
        if !improved {
            break;
        }
    }
    if !(a < 0.0) {
        log::warn!("platt slope {a} is not negative; clamping to keep calibration monotone");
        a = -1e-3;
    }
    (a, b)
}

/// Standardizes features, trains the hinge model on the non-held-out part
/// for `100 · n` steps and fits Platt scalars on the held-out part (every
/// fifth example). A single-class set yields valid parameters and a warning.
pub fn fusion_train(data: &[(Vec<f64>, bool)], lambda: f64, seed: u64) -> Result<FusionParams> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("fusion training set is empty".into()));
    }
    let dim = data[0].0.len();
    if data.iter().any(|(x, _)| x.len() != dim) {
        return Err(Error::ShapeMismatch("inconsistent fusion input dimension".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be > 0, got {lambda}")));
    }
    let n = data.len() as f64;
    let mut mean = vec![0.0; dim];
    for (x, _) in data {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; dim];
    for (x, _) in data {
        for ((s, v), m) in scale.iter_mut().zip(x).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let scale: Vec<f64> = scale.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
    let mut params = FusionParams {
        weights: vec![0.0; dim],
        bias: 0.0,
        lambda,
        mean,
        scale,
        platt_a: -1.0,
        platt_b: 0.0,
    };
    let std_data: Vec<(Vec<f64>, bool)> = data.iter().map(|(x, y)| (params.standardize(x), *y)).collect();

    let positives = data.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == data.len() {
        log::warn!(
            "fusion training set has a single class ({positives} of {} positive); using a constant model",
            data.len()
        );
        params.bias = if positives == 0 { -1.0 } else { 1.0 };
        return Ok(params);
    }

    let (train, held): (Vec<_>, Vec<_>) = std_data
        .iter()
        .enumerate()
        .partition(|(i, _)| data.len() < 2 * HOLDOUT_EVERY || i % HOLDOUT_EVERY != HOLDOUT_EVERY - 1);
    let train: Vec<(Vec<f64>, bool)> = train.into_iter().map(|(_, d)| d.clone()).collect();
    let held: Vec<(Vec<f64>, bool)> = if held.is_empty() {
        train.clone()
    } else {
        held.into_iter().map(|(_, d)| d.clone()).collect()
    };
    let (w, b) = hinge_train(&train, lambda, 100 * train.len(), seed)?;
    params.weights = w;
    params.bias = b;
    let margins: Vec<f64> = held.iter().map(|(x, _)| dot(&params.weights, x) + params.bias).collect();
    let labels: Vec<bool> = held.iter().map(|(_, y)| *y).collect();
    let (a, pb) = platt_fit(&margins, &labels);
    params.platt_a = a;
    params.platt_b = pb;
    params.validate(dim)?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(seed: u64, n: usize, noise: f64) -> Vec<(Vec<f64>, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let y = rng.random::<bool>();
                let c = if y { 1.5 } else { -1.5 };
                let x = vec![c + rng.random_range(-1.0..1.0) * noise, rng.random_range(-1.0..1.0)];
                (x, y)
            })
            .collect()
    }

    #[test]
    fn separable_set_is_fit_exactly() {
        let data = toy(1, 60, 1.0);
        let p = fusion_train(&data, 1e-3, 0).unwrap();
        let acc = data.iter().filter(|(x, y)| (p.margin(x).unwrap() > 0.0) == *y).count();
        assert_eq!(acc, data.len());
        assert!(p.platt_a < 0.0);
    }

    #[test]
    fn zero_hinge_when_all_margins_clear() {
        let data = vec![(vec![2.0, 0.0], true), (vec![-2.0, 0.0], false)];
        let w = vec![1.0, 0.0];
        assert_eq!(svm_objective(&w, 0.0, 0.1, &data), 0.05);
    }

    #[test]
    fn objective_near_grid_optimum() {
        for seed in 0..5 {
            let data = toy(seed + 10, 30, 2.5);
            let lambda = 0.1;
            let (w, b) = hinge_train(&data, lambda, 100 * data.len(), seed).unwrap();
            let learned = svm_objective(&w, b, lambda, &data);
            let mut best = f64::INFINITY;
            let steps = 300;
            for i in 0..=steps {
                for j in 0..=steps {
                    let w2 = [-3.0 + 6.0 * i as f64 / steps as f64, -3.0 + 6.0 * j as f64 / steps as f64];
                    let margins: Vec<f64> = data.iter().map(|(x, _)| dot(&w2, x)).collect();
                    let labels: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
                    let b2 = best_bias(&margins, &labels);
                    best = best.min(svm_objective(&w2, b2, lambda, &data));
                }
            }
            assert!(learned <= best * 1.05, "seed {seed}: learned {learned}, grid {best}");
        }
    }

    #[test]
    fn best_bias_is_exact() {
        let margins = [0.3, -0.2, 1.4, -1.1, 0.0];
        let labels = [true, false, true, false, false];
        let b = best_bias(&margins, &labels);
        let loss = |b: f64| -> f64 {
            margins
                .iter()
                .zip(&labels)
                .map(|(m, &y)| (1.0 - sign(y) * (m + b)).max(0.0))
                .sum()
        };
        for k in -300..=300 {
            assert!(loss(b) <= loss(k as f64 / 100.0) + 1e-12);
        }
    }

    #[test]
    fn calibration_is_monotone_probability() {
        let data = toy(3, 200, 3.0);
        let p = fusion_train(&data, 1e-2, 1).unwrap();
        let mut pairs: Vec<(f64, f64)> = data
            .iter()
            .map(|(x, _)| (p.margin(x).unwrap(), p.probability(x).unwrap()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        assert!(pairs.iter().all(|&(_, q)| (0.0..=1.0).contains(&q)));
    }

    #[test]
    fn single_class_gives_valid_params() {
        let data: Vec<(Vec<f64>, bool)> = (0..10).map(|i| (vec![i as f64, 1.0], true)).collect();
        let p = fusion_train(&data, 1e-3, 0).unwrap();
        p.validate(2).unwrap();
        assert!(p.probability(&[3.0, 1.0]).unwrap() > 0.5);
    }

    #[test]
    fn deterministic_and_dimension_checked() {
        let data = toy(4, 50, 2.0);
        assert_eq!(fusion_train(&data, 1e-3, 7).unwrap(), fusion_train(&data, 1e-3, 7).unwrap());
        let p = fusion_train(&data, 1e-3, 7).unwrap();
        assert!(p.margin(&[1.0]).is_err());
        assert!(fusion_input(0.5, 0.5, &[0.0; 3], &[0.0; CONN_LEN]).is_err());
        assert_eq!(fusion_input(0.5, 0.5, &[0.0; SHAPE_LEN], &[0.0; CONN_LEN]).unwrap().len(), FUSION_DIM);
    }
}
