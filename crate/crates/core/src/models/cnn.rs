//! Small VGG-style 3D CNN: `conv(k) → ReLU → maxpool` blocks, then fully
//! connected layers down to one logit. Convolutions run as im2col + GEMM.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::evidence::{EvidenceTensor, CHANNELS};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
}

impl ConvBlock {
    pub fn new(filters: usize) -> Self {
        ConvBlock { filters, kernel: 3, pool: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnConfig {
    pub input_edge: usize,
    pub in_channels: usize,
    pub conv_blocks: Vec<ConvBlock>,
    pub fc_widths: Vec<usize>,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            input_edge: 33,
            in_channels: CHANNELS,
            conv_blocks: vec![ConvBlock::new(8), ConvBlock::new(16), ConvBlock::new(32)],
            fc_widths: vec![64],
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Layer {
    Conv {
        in_ch: usize,
        edge: usize,
        filters: usize,
        kernel: usize,
        pool: usize,
    },
    Fc {
        inputs: usize,
        outputs: usize,
        relu: bool,
    },
}

impl Layer {
    fn weight_len(&self) -> usize {
        match *self {
            Layer::Conv { in_ch, filters, kernel, .. } => filters * in_ch * kernel.pow(3),
            Layer::Fc { inputs, outputs, .. } => inputs * outputs,
        }
    }

    fn bias_len(&self) -> usize {
        match *self {
            Layer::Conv { filters, .. } => filters,
            Layer::Fc { outputs, .. } => outputs,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Layer::Conv { in_ch, kernel, .. } => in_ch * kernel.pow(3),
            Layer::Fc { inputs, .. } => inputs,
        }
    }
}

impl CnnConfig {
    /// A 129-voxel receptive field. Too slow to train on a desk CPU.
    pub fn full_scale() -> Self {
        CnnConfig {
            input_edge: 129,
            ..CnnConfig::default()
        }
    }

    /// No convolutions and no hidden layers: a logistic regression on the
    /// raw input.
    pub fn linear(input_edge: usize, seed: u64) -> Self {
        CnnConfig {
            input_edge,
            in_channels: CHANNELS,
            conv_blocks: vec![],
            fc_widths: vec![],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.input_edge == 0 || self.input_edge % 2 == 0 {
            return bad(format!("input_edge must be odd, got {}", self.input_edge));
        }
        if self.in_channels == 0 {
            return bad("in_channels must be >= 1".into());
        }
        let mut edge = self.input_edge;
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.filters == 0 || b.kernel % 2 == 0 || b.pool == 0 {
                return bad(format!("conv block {i}: filters >= 1, odd kernel and pool >= 1 required"));
            }
            edge /= b.pool;
            if edge == 0 {
                return bad(format!("spatial extent vanishes after conv block {i}"));
            }
        }
        if self.fc_widths.contains(&0) {
            return bad("fully connected widths must be >= 1".into());
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.input_edge.pow(3)
    }

    pub(crate) fn layers(&self) -> Vec<Layer> {
        let mut out = Vec::new();
        let (mut ch, mut edge) = (self.in_channels, self.input_edge);
        for b in &self.conv_blocks {
            out.push(Layer::Conv {
                in_ch: ch,
                edge,
                filters: b.filters,
                kernel: b.kernel,
                pool: b.pool,
            });
            ch = b.filters;
            edge /= b.pool;
        }
        let mut width = ch * edge.pow(3);
        for &w in &self.fc_widths {
            out.push(Layer::Fc {
                inputs: width,
                outputs: w,
                relu: true,
            });
            width = w;
        }
        out.push(Layer::Fc {
            inputs: width,
            outputs: 1,
            relu: false,
        });
        out
    }

    /// Lengths of the parameter tensors in declaration order (weight, bias
    /// per layer).
    pub fn param_lengths(&self) -> Vec<usize> {
        self.layers().iter().flat_map(|l| [l.weight_len(), l.bias_len()]).collect()
    }
}

/// Layer weights and biases in declaration order, stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnParams {
    pub tensors: Vec<Vec<f32>>,
}

impl CnnParams {
    /// He-style initialization: weights `N(0, 2 / fan_in)`, biases zero.
    pub fn init(config: &CnnConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut tensors = Vec::new();
        for l in config.layers() {
            let n = Normal::new(0.0, (2.0 / l.fan_in() as f64).sqrt()).expect("positive std");
            tensors.push((0..l.weight_len()).map(|_| n.sample(&mut rng) as f32).collect());
            tensors.push(vec![0.0; l.bias_len()]);
        }
        Ok(CnnParams { tensors })
    }

    pub fn zeros(config: &CnnConfig) -> Result<Self> {
        config.validate()?;
        Ok(CnnParams {
            tensors: config.param_lengths().into_iter().map(|n| vec![0.0; n]).collect(),
        })
    }

    pub fn check(&self, config: &CnnConfig) -> Result<()> {
        let want = config.param_lengths();
        let got: Vec<usize> = self.tensors.iter().map(Vec::len).collect();
        if want != got {
            return Err(Error::ShapeMismatch(format!("parameter lengths {got:?}, config expects {want:?}")));
        }
        if self.tensors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

fn im2col<T: Scalar>(x: &[T], ch: usize, e: usize, k: usize, cols: &mut [T]) {
    let s = e * e * e;
    let r = (k / 2) as isize;
    let ei = e as isize;
    for c in 0..ch {
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + kz) * k + ky) * k + kx;
                    let out = &mut cols[row * s..(row + 1) * s];
                    let (oz, oy, ox) = (kz as isize - r, ky as isize - r, kx as isize - r);
                    let x0 = (-ox).clamp(0, ei) as usize;
                    let x1 = (ei - ox).clamp(0, ei) as usize;
                    for z in 0..e {
                        let sz = z as isize + oz;
                        for y in 0..e {
                            let sy = y as isize + oy;
                            let dst = &mut out[(z * e + y) * e..(z * e + y + 1) * e];
                            if sz < 0 || sz >= ei || sy < 0 || sy >= ei || x0 >= x1 {
                                dst.fill(T::zero());
                                continue;
                            }
                            let base = c * s + (sz as usize * e + sy as usize) * e;
                            dst[..x0].fill(T::zero());
                            dst[x1..].fill(T::zero());
                            let from = (base as isize + x0 as isize + ox) as usize;
                            dst[x0..x1].copy_from_slice(&x[from..from + (x1 - x0)]);
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], ch: usize, e: usize, k: usize, dx: &mut [T]) {
    let s = e * e * e;
    let r = (k / 2) as isize;
    let ei = e as isize;
    for c in 0..ch {
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + kz) * k + ky) * k + kx;
                    let src = &cols[row * s..(row + 1) * s];
                    let (oz, oy, ox) = (kz as isize - r, ky as isize - r, kx as isize - r);
                    let x0 = (-ox).clamp(0, ei) as usize;
                    let x1 = (ei - ox).clamp(0, ei) as usize;
                    for z in 0..e {
                        let sz = z as isize + oz;
                        if sz < 0 || sz >= ei {
                            continue;
                        }
                        for y in 0..e {
                            let sy = y as isize + oy;
                            if sy < 0 || sy >= ei {
                                continue;
                            }
                            let base = c * s + (sz as usize * e + sy as usize) * e;
                            let row_src = &src[(z * e + y) * e..(z * e + y + 1) * e];
                            for xx in x0..x1 {
                                dx[(base as isize + xx as isize + ox) as usize] += row_src[xx];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Max pool with window and stride `p`, flooring the output extent. Ties go
/// to the first voxel in x-fastest order. Returns values and argmax indices.
fn maxpool<T: Scalar>(x: &[T], ch: usize, e: usize, p: usize) -> (Vec<T>, Vec<u32>) {
    let eo = e / p;
    let (s, so) = (e * e * e, eo * eo * eo);
    let mut out = vec![T::zero(); ch * so];
    let mut arg = vec![0u32; ch * so];
    for c in 0..ch {
        for oz in 0..eo {
            for oy in 0..eo {
                for ox in 0..eo {
                    let mut best = T::neg_infinity();
                    let mut bi = 0;
                    for dz in 0..p {
                        for dy in 0..p {
                            for dx in 0..p {
                                let i = c * s + ((oz * p + dz) * e + oy * p + dy) * e + ox * p + dx;
                                if x[i] > best {
                                    best = x[i];
                                    bi = i;
                                }
                            }
                        }
                    }
                    let j = c * so + (oz * eo + oy) * eo + ox;
                    out[j] = best;
                    arg[j] = bi as u32;
                }
            }
        }
    }
    (out, arg)
}

enum Trace<T> {
    Conv { cols: Vec<T>, pre: Vec<T>, arg: Vec<u32> },
    Fc { input: Vec<T>, pre: Vec<T> },
}

/// Parameters cast to `T` together with the layer plan.
pub struct Network<T> {
    layers: Vec<Layer>,
    params: Vec<Vec<T>>,
    input_len: usize,
}

/// Numerically stable binary cross-entropy of a logit.
pub fn bce_with_logit(z: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl<T: Scalar> Network<T> {
    pub fn new(config: &CnnConfig, params: &CnnParams) -> Result<Self> {
        config.validate()?;
        params.check(config)?;
        Ok(Network {
            layers: config.layers(),
            params: params.tensors.iter().map(|t| t.iter().map(|&v| T::of(v as f64)).collect()).collect(),
            input_len: config.input_len(),
        })
    }

    pub fn from_raw(config: &CnnConfig, params: Vec<Vec<T>>) -> Result<Self> {
        config.validate()?;
        let got: Vec<usize> = params.iter().map(Vec::len).collect();
        if got != config.param_lengths() {
            return Err(Error::ShapeMismatch(format!("parameter lengths {got:?}")));
        }
        Ok(Network {
            layers: config.layers(),
            params,
            input_len: config.input_len(),
        })
    }

    pub fn params(&self) -> &[Vec<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.params
    }

    fn run(&self, x: &[T], keep: bool) -> Result<(T, Vec<Trace<T>>)> {
        if x.len() != self.input_len {
            return Err(Error::ShapeMismatch(format!(
                "input has {} values, network expects {}",
                x.len(),
                self.input_len
            )));
        }
        let mut traces = Vec::new();
        let mut a = x.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let (w, b) = (&self.params[2 * li], &self.params[2 * li + 1]);
            match *layer {
                Layer::Conv {
                    in_ch,
                    edge,
                    filters,
                    kernel,
                    pool,
                } => {
                    let s = edge.pow(3);
                    let kk = in_ch * kernel.pow(3);
                    let mut cols = vec![T::zero(); kk * s];
                    im2col(&a, in_ch, edge, kernel, &mut cols);
                    let mut pre = vec![T::zero(); filters * s];
                    T::gemm(filters, kk, s, w, false, &cols, false, &mut pre, false);
                    for f in 0..filters {
                        for v in &mut pre[f * s..(f + 1) * s] {
                            *v += b[f];
                        }
                    }
                    let act: Vec<T> = pre.iter().map(|&v| relu(v)).collect();
                    let (pooled, arg) = maxpool(&act, filters, edge, pool);
                    a = pooled;
                    if keep {
                        traces.push(Trace::Conv { cols, pre, arg });
                    }
                }
                Layer::Fc { inputs, outputs, relu: r } => {
                    let mut pre = b.clone();
                    T::gemm(outputs, inputs, 1, w, false, &a, false, &mut pre, true);
                    let next = if r { pre.iter().map(|&v| relu(v)).collect() } else { pre.clone() };
                    if keep {
                        traces.push(Trace::Fc { input: a, pre });
                    }
                    a = next;
                }
            }
        }
        Ok((a[0], traces))
    }

    pub fn logit(&self, x: &[T]) -> Result<T> {
        Ok(self.run(x, false)?.0)
    }

    /// BCE loss and its gradient with respect to every parameter tensor.
    pub fn loss_and_grad(&self, x: &[T], label: bool) -> Result<(f64, Vec<Vec<T>>)> {
        let (z, traces) = self.run(x, true)?;
        let zf = z.f64();
        let loss = bce_with_logit(zf, label);
        let mut grads: Vec<Vec<T>> = self.params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        let mut delta = vec![T::of(sigmoid(zf) - if label { 1.0 } else { 0.0 })];
        for li in (0..self.layers.len()).rev() {
            let w = &self.params[2 * li];
            let (gw, gb) = {
                let (lo, hi) = grads.split_at_mut(2 * li + 1);
                (&mut lo[2 * li], &mut hi[0])
            };
            match (&self.layers[li], &traces[li]) {
                (&Layer::Fc { inputs, outputs, relu: r }, Trace::Fc { input, pre }) => {
                    if r {
                        for (d, &p) in delta.iter_mut().zip(pre) {
                            if p <= T::zero() {
                                *d = T::zero();
                            }
                        }
                    }
                    T::gemm(outputs, 1, inputs, &delta, false, input, false, gw, false);
                    gb.copy_from_slice(&delta);
                    if li > 0 {
                        let mut dx = vec![T::zero(); inputs];
                        T::gemm(inputs, outputs, 1, w, true, &delta, false, &mut dx, false);
                        delta = dx;
                    }
                }
                (
                    &Layer::Conv {
                        in_ch,
                        edge,
                        filters,
                        kernel,
                        ..
                    },
                    Trace::Conv { cols, pre, arg },
                ) => {
                    let s = edge.pow(3);
                    let kk = in_ch * kernel.pow(3);
                    let mut dpre = vec![T::zero(); filters * s];
                    for (j, &i) in arg.iter().enumerate() {
                        let i = i as usize;
                        if pre[i] > T::zero() {
                            dpre[i] += delta[j];
                        }
                    }
                    T::gemm(filters, s, kk, &dpre, false, cols, true, gw, false);
                    for f in 0..filters {
                        gb[f] = dpre[f * s..(f + 1) * s].iter().copied().sum();
                    }
                    if li > 0 {
                        let mut dcols = vec![T::zero(); kk * s];
                        T::gemm(kk, filters, s, w, true, &dpre, false, &mut dcols, false);
                        let mut dx = vec![T::zero(); in_ch * s];
                        col2im(&dcols, in_ch, edge, kernel, &mut dx);
                        delta = dx;
                    }
                }
                _ => unreachable!("trace kinds follow the layer plan"),
            }
        }
        Ok((loss, grads))
    }
}

/// Probability that the candidate shown in `tensor` should be merged.
pub fn cnn_forward(config: &CnnConfig, params: &CnnParams, tensor: &EvidenceTensor) -> Result<f64> {
    Network::<f32>::new(config, params)?.probability(tensor)
}

impl Network<f32> {
    pub fn probability(&self, tensor: &EvidenceTensor) -> Result<f64> {
        let want = self.input_len;
        if tensor.to_dense().len() != want {
            return Err(Error::ShapeMismatch(format!(
                "tensor edge {} does not match the network input",
                tensor.edge()
            )));
        }
        Ok(sigmoid(self.logit(&tensor.to_dense())? as f64))
    }
}

/// Maximum relative error between analytic and central finite-difference
/// gradients (step `1e-5`) over every parameter, in `f64`. Parameters are
/// drawn from `param_seed`: He-scaled weights and `N(0, 0.1)` biases.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(config: &CnnConfig, input: &[f64], label: bool, param_seed: u64) -> Result<f64> {
    let net = Network::<f64>::from_raw(config, random_params(config, param_seed)?)?;
    let (_, grads) = net.loss_and_grad(input, label)?;
    let h = 1e-5;
    let mut probe = Network::<f64>::from_raw(config, net.params().to_vec())?;
    let mut worst = 0.0f64;
    for t in 0..grads.len() {
        for i in 0..grads[t].len() {
            let orig = probe.params()[t][i];
            probe.params_mut()[t][i] = orig + h;
            let up = bce_with_logit(probe.logit(input)?, label);
            probe.params_mut()[t][i] = orig - h;
            let down = bce_with_logit(probe.logit(input)?, label);
            probe.params_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[t][i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

pub fn random_params(config: &CnnConfig, seed: u64) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bias = Normal::new(0.0, 0.1).expect("positive std");
    Ok(config
        .layers()
        .iter()
        .flat_map(|l| {
            let w = Normal::new(0.0, (2.0 / l.fan_in() as f64).sqrt()).expect("positive std");
            let ws: Vec<f64> = (0..l.weight_len()).map(|_| w.sample(&mut rng)).collect();
            let bs: Vec<f64> = (0..l.bias_len()).map(|_| bias.sample(&mut rng)).collect();
            [ws, bs]
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Random axis flips per example and epoch.
    pub flips: bool,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 0.01,
            momentum: 0.9,
            batch: 16,
            epochs: 12,
            flips: true,
            seed: 0,
        }
    }
}

/// One row of `train_log.csv`. Epoch 0 is the loss before any update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
}

pub fn train_log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,seconds\n");
    for e in log {
        s.push_str(&format!("{},{},{:.3}\n", e.epoch, e.loss, e.seconds));
    }
    s
}

fn dense_input<T: Scalar>(t: &EvidenceTensor, flip: Option<[bool; 3]>) -> Vec<T> {
    let dense = match flip {
        Some(axes) if axes.iter().any(|&f| f) => t.flipped(axes).to_dense(),
        _ => t.to_dense(),
    };
    dense.into_iter().map(|v| T::of(v as f64)).collect()
}

/// SGD with momentum on mean BCE over mini-batches. Examples within a batch
/// are evaluated in parallel and their gradients summed in example order, so
/// the result does not depend on the thread count.
pub fn cnn_train<T: Scalar>(
    config: &CnnConfig,
    data: &[(EvidenceTensor, bool)],
    hyper: &TrainHyper,
) -> Result<(CnnParams, Vec<EpochLog>)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if hyper.batch == 0 || !(hyper.lr > 0.0) || !(0.0..1.0).contains(&hyper.momentum) {
        return Err(Error::InvalidArgument("batch >= 1, lr > 0 and momentum in [0, 1) required".into()));
    }
    let mut net = Network::<T>::new(config, &CnnParams::init(config)?)?;
    let mut velocity: Vec<Vec<T>> = net.params().iter().map(|p| vec![T::zero(); p.len()]).collect();
    let start = Instant::now();

    let initial: Vec<f64> = data
        .par_iter()
        .map(|(t, y)| Ok(bce_with_logit(net.logit(&dense_input::<T>(t, None))?.f64(), *y)))
        .collect::<Result<_>>()?;
    let mut log = vec![EpochLog {
        epoch: 0,
        loss: initial.iter().sum::<f64>() / data.len() as f64,
        seconds: start.elapsed().as_secs_f64(),
    }];

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let (lr, mu) = (T::of(hyper.lr), T::of(hyper.momentum));
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, batch) in order.chunks(hyper.batch).enumerate() {
            let flips: Vec<Option<[bool; 3]>> = batch
                .iter()
                .map(|_| hyper.flips.then(|| [rng.random(), rng.random(), rng.random()]))
                .collect();
            let results: Vec<(f64, Vec<Vec<T>>)> = batch
                .par_iter()
                .zip(flips.par_iter())
                .map(|(&i, &f)| net.loss_and_grad(&dense_input::<T>(&data[i].0, f), data[i].1))
                .collect::<Result<_>>()?;
            let scale = T::of(1.0 / batch.len() as f64);
            let mut sum: Vec<Vec<T>> = velocity.iter().map(|v| vec![T::zero(); v.len()]).collect();
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(Error::Diverged(format!("non-finite loss at epoch {epoch}, batch {bi}")));
                }
                total += loss;
                for (s, gt) in sum.iter_mut().zip(g) {
                    for (a, &b) in s.iter_mut().zip(gt) {
                        *a += b;
                    }
                }
            }
            for ((p, v), g) in net.params_mut().iter_mut().zip(&mut velocity).zip(&sum) {
                for ((pi, vi), &gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vi = mu * *vi + gi * scale;
                    *pi = *pi - lr * *vi;
                }
            }
        }
        let loss = total / data.len() as f64;
        if !loss.is_finite() || net.params().iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!("non-finite parameters after epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: loss {loss:.5}");
        log.push(EpochLog {
            epoch,
            loss,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let params = CnnParams {
        tensors: net.params().iter().map(|t| t.iter().map(|v| v.f64() as f32).collect()).collect(),
    };
    Ok((params, log))
}
