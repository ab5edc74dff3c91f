//! Dense regression network, written out by hand so every gradient can be
//! checked against finite differences.
//!
//! Architecture: an input ReLU layer of `width` units, then `n_blocks`
//! residual blocks computing `h' = BatchNorm(h + ReLU(W h + b))`, inverted
//! dropout after selected blocks during training, and a single-unit head
//! with a sigmoid or identity activation. One such network is trained per
//! output quantity, so the head is always scalar.
//!
//! Batches are row-major `Mat`s (one sample per row). Training-mode forward
//! normalizes with batch statistics and returns the caches backward needs;
//! eval-mode forward uses the stored running statistics and applies no
//! dropout, so it is a pure function of (params, input).

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::mat::Mat;

pub const BN_EPS: f64 = 1e-5;
/// Weight of a fresh batch statistic in the running-statistic average.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Squashes into (0,1); paired with bounded target scaling.
    Sigmoid,
    /// Raw affine output; paired with standardized targets.
    Identity,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::Sigmoid => "sigmoid",
            Head::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Head> {
        match s {
            "sigmoid" => Ok(Head::Sigmoid),
            "identity" => Ok(Head::Identity),
            other => Err(Error::InvalidData(format!("unknown head activation {other:?}"))),
        }
    }
}

/// Architecture and training hyperparameters for one item model.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub width: usize,
    pub n_blocks: usize,
    /// 1-based indices of blocks followed by a dropout layer; indices past
    /// `n_blocks` are ignored so small test networks can reuse defaults.
    pub dropout_after: Vec<usize>,
    pub dropout_prob: f64,
    pub batch_norm: bool,
    pub head: Head,
    /// L1 penalty on weight matrices (not biases, not batch-norm affines).
    pub l1_lambda: f64,
    pub batch_size: usize,
    /// Nesterov momentum coefficient.
    pub momentum: f64,
    pub lr_lo: f64,
    pub lr_hi: f64,
    /// Mini-batch updates per half-cycle of the learning-rate schedule.
    pub lr_step: usize,
    pub max_epochs: usize,
    /// Consecutive epochs of validation-loss increase tolerated before
    /// stopping and restoring the best snapshot.
    pub patience: usize,
    pub val_fraction: f64,
    pub rng_seed: u64,
}

impl NetworkConfig {
    pub fn new(input_dim: usize, head: Head) -> Self {
        NetworkConfig {
            input_dim,
            width: 512,
            n_blocks: 10,
            dropout_after: vec![4, 9],
            dropout_prob: 0.2,
            batch_norm: true,
            head,
            l1_lambda: 1e-5,
            batch_size: 32,
            momentum: 0.9,
            lr_lo: 1e-6,
            lr_hi: 1e-2,
            lr_step: 10,
            max_epochs: 200,
            patience: 10,
            val_fraction: 0.2,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.input_dim == 0 || self.width == 0 {
            return bad(format!("input_dim {} and width {} must be positive", self.input_dim, self.width));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size {} must be at least 2 (batch statistics)", self.batch_size));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return bad(format!("dropout_prob {} must lie in [0,1)", self.dropout_prob));
        }
        if !(self.lr_lo > 0.0 && self.lr_hi >= self.lr_lo) {
            return bad(format!("learning-rate bounds ({}, {}) must satisfy 0 < lo <= hi", self.lr_lo, self.lr_hi));
        }
        if self.lr_step == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("lr_step, max_epochs and patience must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must lie in [0,1)", self.momentum));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} must lie in (0,1)", self.val_fraction));
        }
        Ok(())
    }

    /// 0-based indices of blocks that feed a dropout layer.
    fn dropout_blocks(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .dropout_after
            .iter()
            .filter(|&&b| b >= 1 && b <= self.n_blocks)
            .map(|&b| b - 1)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// Row `o` holds the incoming weights of output unit `o`.
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Linear {
    fn zeros(out_dim: usize, in_dim: usize) -> Linear {
        Linear { w: Mat::zeros(out_dim, in_dim), b: vec![0.0; out_dim] }
    }

    fn glorot(out_dim: usize, in_dim: usize, rng: &mut ChaCha12Rng) -> Linear {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut l = Linear::zeros(out_dim, in_dim);
        for v in l.w.as_mut_slice() {
            *v = rng.gen_range(-limit..=limit);
        }
        l
    }

    /// `x` is B×in; returns B×out.
    fn forward(&self, x: &Mat) -> Mat {
        let (bsz, in_dim, out_dim) = (x.rows(), x.cols(), self.w.rows());
        assert_eq!(in_dim, self.w.cols(), "input width {} vs layer fan-in {}", in_dim, self.w.cols());
        let mut y = Mat::zeros(bsz, out_dim);
        for s in 0..bsz {
            let xr = x.row(s);
            let yr = y.row_mut(s);
            for (o, out) in yr.iter_mut().enumerate() {
                let wr = self.w.row(o);
                let mut acc = self.b[o];
                for (wk, xk) in wr.iter().zip(xr) {
                    acc += wk * xk;
                }
                *out = acc;
            }
        }
        y
    }

    /// Accumulates dW += dyᵀ·x, db += column sums of dy, and returns dx.
    fn backward(&self, x: &Mat, dy: &Mat, grad: &mut Linear) -> Mat {
        let (bsz, in_dim, out_dim) = (x.rows(), x.cols(), self.w.rows());
        let mut dx = Mat::zeros(bsz, in_dim);
        for s in 0..bsz {
            let xr = x.row(s);
            let dyr = dy.row(s);
            let dxr = dx.row_mut(s);
            for o in 0..out_dim {
                let d = dyr[o];
                if d == 0.0 {
                    continue;
                }
                grad.b[o] += d;
                let gw = grad.w.row_mut(o);
                let wr = self.w.row(o);
                for k in 0..in_dim {
                    gw[k] += d * xr[k];
                    dxr[k] += d * wr[k];
                }
            }
        }
        dx
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn identity(width: usize) -> BatchNorm {
        BatchNorm {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

/// All learned state of one network. Batch-norm running statistics live
/// here too; they are updated by exponential average during training and
/// read back in eval mode, but the optimizer never touches them.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub input: Linear,
    pub blocks: Vec<(Linear, BatchNorm)>,
    pub head: Linear,
}

pub fn init_network(cfg: &NetworkConfig, rng: &mut ChaCha12Rng) -> Result<NetworkParams> {
    cfg.validate()?;
    let input = Linear::glorot(cfg.width, cfg.input_dim, rng);
    let blocks = (0..cfg.n_blocks)
        .map(|_| (Linear::glorot(cfg.width, cfg.width, rng), BatchNorm::identity(cfg.width)))
        .collect();
    let head = Linear::glorot(1, cfg.width, rng);
    Ok(NetworkParams { input, blocks, head })
}

impl NetworkParams {
    /// Trainable parameters flattened in a fixed order: input W,b; per block
    /// W,b,γ,β; head W,b. Running statistics are excluded.
    pub fn trainable(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.input.w.as_slice());
        out.extend_from_slice(&self.input.b);
        for (lin, bn) in &self.blocks {
            out.extend_from_slice(lin.w.as_slice());
            out.extend_from_slice(&lin.b);
            out.extend_from_slice(&bn.gamma);
            out.extend_from_slice(&bn.beta);
        }
        out.extend_from_slice(self.head.w.as_slice());
        out.extend_from_slice(&self.head.b);
        out
    }

    /// Writes a flat vector produced by [`trainable`](Self::trainable) back
    /// into the parameter tensors. Running statistics are left alone.
    pub fn set_trainable(&mut self, flat: &[f64]) {
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        };
        take(self.input.w.as_mut_slice());
        take(&mut self.input.b);
        for (lin, bn) in &mut self.blocks {
            take(lin.w.as_mut_slice());
            take(&mut lin.b);
            take(&mut bn.gamma);
            take(&mut bn.beta);
        }
        take(self.head.w.as_mut_slice());
        take(&mut self.head.b);
        assert_eq!(pos, flat.len(), "flat parameter vector has the wrong length");
    }

    pub fn all_finite(&self) -> bool {
        let linear_ok = |l: &Linear| l.w.as_slice().iter().chain(&l.b).all(|v| v.is_finite());
        linear_ok(&self.input)
            && linear_ok(&self.head)
            && self.blocks.iter().all(|(l, bn)| {
                linear_ok(l)
                    && bn.gamma.iter().chain(&bn.beta).chain(&bn.running_mean).all(|v| v.is_finite())
                    && bn.running_var.iter().all(|v| v.is_finite() && *v >= 0.0)
            })
    }
}

/// Gradients of the training loss, shaped like the trainable parameters.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub input: Linear,
    pub blocks: Vec<(Linear, BnAffineGrad)>,
    pub head: Linear,
}

#[derive(Clone, Debug)]
pub struct BnAffineGrad {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Gradients {
    fn zeros(cfg: &NetworkConfig) -> Gradients {
        Gradients {
            input: Linear::zeros(cfg.width, cfg.input_dim),
            blocks: (0..cfg.n_blocks)
                .map(|_| {
                    (
                        Linear::zeros(cfg.width, cfg.width),
                        BnAffineGrad { gamma: vec![0.0; cfg.width], beta: vec![0.0; cfg.width] },
                    )
                })
                .collect(),
            head: Linear::zeros(1, cfg.width),
        }
    }

    /// Same flattening order as [`NetworkParams::trainable`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.input.w.as_slice());
        out.extend_from_slice(&self.input.b);
        for (lin, bn) in &self.blocks {
            out.extend_from_slice(lin.w.as_slice());
            out.extend_from_slice(&lin.b);
            out.extend_from_slice(&bn.gamma);
            out.extend_from_slice(&bn.beta);
        }
        out.extend_from_slice(self.head.w.as_slice());
        out.extend_from_slice(&self.head.b);
        out
    }
}

struct BlockCache {
    /// Input to the block (output of the previous stage).
    h_in: Mat,
    /// Linear preactivation, kept for the ReLU gate.
    z: Mat,
    /// Batch mean/variance of the residual sum (variance divided by B).
    mean: Vec<f64>,
    var: Vec<f64>,
    /// Normalized activations before the affine, when batch norm is on.
    x_hat: Option<Mat>,
    /// Inverted-dropout mask (0 or 1/(1-p)) applied to the block output.
    dropout: Option<Mat>,
}

/// Everything backward needs from a training-mode forward pass.
pub struct TrainCache {
    x: Mat,
    input_pre: Mat,
    blocks: Vec<BlockCache>,
    /// Activations entering the head (output of the last block, or of the
    /// input layer when there are no blocks).
    head_in: Mat,
    pub predictions: Vec<f64>,
}

impl TrainCache {
    /// Normalized pre-affine activations of one block, for inspection.
    pub fn normalized_activations(&self, block: usize) -> Option<&Mat> {
        self.blocks[block].x_hat.as_ref()
    }

    /// Smallest |preactivation| over every ReLU in the pass. Finite
    /// differencing across a parameter is only trustworthy when no gate
    /// sits this close to its switching point, so gradient checks use
    /// this to reject unlucky fixtures.
    pub fn min_preactivation_magnitude(&self) -> f64 {
        let mats = std::iter::once(&self.input_pre).chain(self.blocks.iter().map(|b| &b.z));
        mats.flat_map(|m| m.as_slice())
            .fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
    }
}

fn relu_into(z: &Mat) -> Mat {
    let mut r = z.clone();
    for v in r.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    r
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Training-mode forward pass. Does not mutate the parameters; running
/// statistics are updated separately from the returned cache so that pure
/// re-evaluation (finite differences) stays side-effect free.
pub fn forward_train(
    cfg: &NetworkConfig,
    params: &NetworkParams,
    x: &Mat,
    mut dropout_rng: Option<&mut ChaCha12Rng>,
) -> Result<TrainCache> {
    let bsz = x.rows();
    if bsz < 2 {
        return Err(Error::InvalidData(format!(
            "training-mode forward needs a batch of at least 2 rows, got {bsz}"
        )));
    }
    if x.cols() != cfg.input_dim {
        return Err(Error::InvalidData(format!(
            "batch has {} features, network expects {}",
            x.cols(),
            cfg.input_dim
        )));
    }
    let dropout_blocks = cfg.dropout_blocks();

    let input_pre = params.input.forward(x);
    let input_out = relu_into(&input_pre);

    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    let mut h = input_out.clone();
    for (t, (lin, bn)) in params.blocks.iter().enumerate() {
        let z = lin.forward(&h);
        let r = relu_into(&z);
        // Residual sum, then normalization over the batch.
        let mut s = h.clone();
        for (sv, rv) in s.as_mut_slice().iter_mut().zip(r.as_slice()) {
            *sv += rv;
        }
        let width = cfg.width;
        let mut mean = vec![0.0; width];
        let mut var = vec![0.0; width];
        let mut x_hat = None;
        let mut out = s.clone();
        if cfg.batch_norm {
            for b in 0..bsz {
                let sr = s.row(b);
                for k in 0..width {
                    mean[k] += sr[k];
                }
            }
            for m in &mut mean {
                *m /= bsz as f64;
            }
            for b in 0..bsz {
                let sr = s.row(b);
                for k in 0..width {
                    let d = sr[k] - mean[k];
                    var[k] += d * d;
                }
            }
            for v in &mut var {
                *v /= bsz as f64;
            }
            let mut xh = Mat::zeros(bsz, width);
            for b in 0..bsz {
                let sr = s.row(b);
                let xr = xh.row_mut(b);
                let or = out.row_mut(b);
                for k in 0..width {
                    let xhat = (sr[k] - mean[k]) / (var[k] + BN_EPS).sqrt();
                    xr[k] = xhat;
                    or[k] = bn.gamma[k] * xhat + bn.beta[k];
                }
            }
            x_hat = Some(xh);
        }
        let mut dropout = None;
        if dropout_blocks.contains(&t) && cfg.dropout_prob > 0.0 {
            if let Some(rng) = dropout_rng.as_deref_mut() {
                let keep = 1.0 - cfg.dropout_prob;
                let mut mask = Mat::zeros(bsz, width);
                for mv in mask.as_mut_slice() {
                    *mv = if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
                }
                for (ov, mv) in out.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *ov *= mv;
                }
                dropout = Some(mask);
            }
        }
        blocks.push(BlockCache { h_in: h, z, mean, var, x_hat, dropout });
        h = out;
    }

    let head_pre = params.head.forward(&h);
    let predictions: Vec<f64> = (0..bsz)
        .map(|b| match cfg.head {
            Head::Sigmoid => sigmoid(head_pre[(b, 0)]),
            Head::Identity => head_pre[(b, 0)],
        })
        .collect();
    Ok(TrainCache { x: x.clone(), input_pre, blocks, head_in: h, predictions })
}

/// Eval-mode forward: running statistics, no dropout.
pub fn forward_eval(cfg: &NetworkConfig, params: &NetworkParams, x: &Mat) -> Vec<f64> {
    let bsz = x.rows();
    assert_eq!(x.cols(), cfg.input_dim, "batch width vs network input_dim");
    let mut h = relu_into(&params.input.forward(x));
    for (lin, bn) in &params.blocks {
        let z = lin.forward(&h);
        for b in 0..bsz {
            let hr = h.row_mut(b);
            let zr = z.row(b);
            for k in 0..cfg.width {
                let s = hr[k] + zr[k].max(0.0);
                hr[k] = if cfg.batch_norm {
                    bn.gamma[k] * (s - bn.running_mean[k]) / (bn.running_var[k] + BN_EPS).sqrt() + bn.beta[k]
                } else {
                    s
                };
            }
        }
    }
    let u = params.head.forward(&h);
    (0..bsz)
        .map(|b| match cfg.head {
            Head::Sigmoid => sigmoid(u[(b, 0)]),
            Head::Identity => u[(b, 0)],
        })
        .collect()
}

/// Mean-squared-error data term plus the L1 penalty on weight matrices.
pub fn training_loss(cfg: &NetworkConfig, params: &NetworkParams, predictions: &[f64], targets: &[f64]) -> f64 {
    let b = predictions.len() as f64;
    let mse: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / b;
    mse + cfg.l1_lambda * l1_weight_norm(params)
}

fn l1_weight_norm(params: &NetworkParams) -> f64 {
    let mut total: f64 = params.input.w.as_slice().iter().map(|w| w.abs()).sum();
    for (lin, _) in &params.blocks {
        total += lin.w.as_slice().iter().map(|w| w.abs()).sum::<f64>();
    }
    total + params.head.w.as_slice().iter().map(|w| w.abs()).sum::<f64>()
}

/// Backpropagation through the cached forward pass. Returns the loss (data
/// term plus L1) and its gradients with respect to every trainable
/// parameter, including the paths through the batch statistics. The L1
/// subgradient at exactly zero is taken as zero.
pub fn backward(
    cfg: &NetworkConfig,
    params: &NetworkParams,
    cache: &TrainCache,
    targets: &[f64],
) -> (f64, Gradients) {
    let bsz = cache.x.rows();
    assert_eq!(targets.len(), bsz, "target count vs batch size");
    let loss = training_loss(cfg, params, &cache.predictions, targets);
    let mut grads = Gradients::zeros(cfg);

    // d(MSE)/d(prediction), then through the head activation.
    let mut du = Mat::zeros(bsz, 1);
    for b in 0..bsz {
        let p = cache.predictions[b];
        let dpred = 2.0 * (p - targets[b]) / bsz as f64;
        du[(b, 0)] = match cfg.head {
            Head::Sigmoid => dpred * p * (1.0 - p),
            Head::Identity => dpred,
        };
    }
    let mut dh = params.head.backward(&cache.head_in, &du, &mut grads.head);

    for t in (0..cache.blocks.len()).rev() {
        let bc = &cache.blocks[t];
        let (lin, bn) = &params.blocks[t];
        let width = cfg.width;

        // Through dropout: the mask is its own Jacobian.
        if let Some(mask) = &bc.dropout {
            for (dv, mv) in dh.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                *dv *= mv;
            }
        }

        // Through batch normalization to the residual sum s.
        let ds = if cfg.batch_norm {
            let x_hat = bc.x_hat.as_ref().expect("batch-norm cache");
            let bg = &mut grads.blocks[t].1;
            let mut sum_do = vec![0.0; width];
            let mut sum_do_xhat = vec![0.0; width];
            for b in 0..bsz {
                let dr = dh.row(b);
                let xr = x_hat.row(b);
                for k in 0..width {
                    sum_do[k] += dr[k];
                    sum_do_xhat[k] += dr[k] * xr[k];
                }
            }
            for k in 0..width {
                bg.beta[k] += sum_do[k];
                bg.gamma[k] += sum_do_xhat[k];
            }
            let mut ds = Mat::zeros(bsz, width);
            for b in 0..bsz {
                let dr = dh.row(b);
                let xr = x_hat.row(b);
                let sr = ds.row_mut(b);
                for k in 0..width {
                    let sigma = (bc.var[k] + BN_EPS).sqrt();
                    sr[k] = bn.gamma[k] / (bsz as f64 * sigma)
                        * (bsz as f64 * dr[k] - sum_do[k] - xr[k] * sum_do_xhat[k]);
                }
            }
            ds
        } else {
            dh
        };

        // Residual split: identity path plus the ReLU(W h + b) branch.
        let mut dz = ds.clone();
        for (dv, zv) in dz.as_mut_slice().iter_mut().zip(bc.z.as_slice()) {
            if *zv <= 0.0 {
                *dv = 0.0;
            }
        }
        let dh_branch = lin.backward(&bc.h_in, &dz, &mut grads.blocks[t].0);
        dh = ds;
        for (dv, bv) in dh.as_mut_slice().iter_mut().zip(dh_branch.as_slice()) {
            *dv += bv;
        }
    }

    // Input ReLU layer.
    let mut da = dh;
    for (dv, av) in da.as_mut_slice().iter_mut().zip(cache.input_pre.as_slice()) {
        if *av <= 0.0 {
            *dv = 0.0;
        }
    }
    params.input.backward(&cache.x, &da, &mut grads.input);

    // L1 on weight matrices only; subgradient 0 at 0.
    let add_l1 = |w: &Mat, g: &mut Mat, lambda: f64| {
        for (gv, wv) in g.as_mut_slice().iter_mut().zip(w.as_slice()) {
            if *wv > 0.0 {
                *gv += lambda;
            } else if *wv < 0.0 {
                *gv -= lambda;
            }
        }
    };
    if cfg.l1_lambda != 0.0 {
        add_l1(&params.input.w, &mut grads.input.w, cfg.l1_lambda);
        for (t, (lin, _)) in params.blocks.iter().enumerate() {
            add_l1(&lin.w, &mut grads.blocks[t].0.w, cfg.l1_lambda);
        }
        add_l1(&params.head.w, &mut grads.head.w, cfg.l1_lambda);
    }

    (loss, grads)
}

/// Folds the batch statistics of a training forward into the running
/// statistics: `running <- (1-m)*running + m*batch`.
pub fn update_running_stats(cfg: &NetworkConfig, params: &mut NetworkParams, cache: &TrainCache) {
    if !cfg.batch_norm {
        return;
    }
    for t in 0..cache.blocks.len() {
        let bc = &cache.blocks[t];
        let bn = &mut params.blocks[t].1;
        for k in 0..cfg.width {
            bn.running_mean[k] = (1.0 - BN_MOMENTUM) * bn.running_mean[k] + BN_MOMENTUM * bc.mean[k];
            bn.running_var[k] = (1.0 - BN_MOMENTUM) * bn.running_var[k] + BN_MOMENTUM * bc.var[k];
        }
    }
}

/// Cyclical learning-rate schedule: log-linear interpolation from `lo` up to
/// `hi` over `step` iterations, back down over the next `step`, repeating.
/// Advanced once per mini-batch update.
#[derive(Clone, Copy, Debug)]
pub struct LrSchedule {
    pub lo: f64,
    pub hi: f64,
    pub step: usize,
    pub iteration: usize,
}

impl LrSchedule {
    pub fn new(lo: f64, hi: f64, step: usize) -> LrSchedule {
        assert!(lo > 0.0 && hi >= lo && step > 0, "invalid schedule ({lo}, {hi}, {step})");
        LrSchedule { lo, hi, step, iteration: 0 }
    }

    pub fn lr_at(&self) -> f64 {
        let period = 2 * self.step;
        let pos = self.iteration % period;
        let pos = if pos <= self.step { pos } else { period - pos };
        // Endpoints returned exactly; interpolation only strictly inside.
        if pos == 0 {
            self.lo
        } else if pos == self.step {
            self.hi
        } else {
            let frac = pos as f64 / self.step as f64;
            (self.lo * (self.hi / self.lo).powf(frac)).clamp(self.lo, self.hi)
        }
    }

    pub fn advance(&mut self) {
        self.iteration += 1;
    }
}
