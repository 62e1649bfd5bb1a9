//! Conditional WGAN-GP object-feature generator.
//!
//! Small dense networks with hand-written forward and reverse passes. The
//! critic is restricted to `affine → LeakyReLU → affine(1)` so the gradient
//! penalty's parameter gradient (a second-order quantity) has a closed form.
//!
//! Losses minimised here:
//! * critic: `E[D(x̃)] − E[D(x)] + λ·E[(‖∇_x̂ D(x̂)‖ − 1)²]`
//! * generator: `−E[D(x̃)] + β·L_cls + γ·L_recon`
//!
//! The classifier and reconstructor are trained on real features first and
//! stay frozen while the generator trains.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsta::ObjectGenerator;
use crate::ingest::FeatureStore;
use crate::rng::{indexed_substream, substream};

const MODULE: &str = "featgen";

fn invalid(msg: impl Into<String>) -> Error {
    Error::invalid(MODULE, msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "slope", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    /// `x` for `x > 0`, `slope·x` otherwise.
    LeakyRelu(f64),
    Softmax,
}

/// One affine layer; `weight` is row-major `output_dim × input_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub input_dim: usize,
    pub output_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let n = self.input_dim;
        self.bias
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &self.weight[o * n..(o + 1) * n];
                b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}

fn activate(a: Activation, z: &[f64]) -> Vec<f64> {
    match a {
        Activation::Identity => z.to_vec(),
        Activation::LeakyRelu(s) => z.iter().map(|&v| if v > 0.0 { v } else { s * v }).collect(),
        Activation::Softmax => softmax(z),
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Derivative of LeakyReLU; the kink belongs to the negative branch.
fn leaky_grad(slope: f64, z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        slope
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Per-layer inputs and pre-activations from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    pub layers: Vec<LayerGrad>,
}

impl MlpGrad {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrad {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend_from_slice(&l.weight);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.input_dim == 0 || l.output_dim == 0 {
                return Err(invalid(format!("layer {i} has a zero dimension")));
            }
            if l.weight.len() != l.input_dim * l.output_dim || l.bias.len() != l.output_dim {
                return Err(invalid(format!("layer {i} parameter shape mismatch")));
            }
            if i > 0 && layers[i - 1].output_dim != l.input_dim {
                return Err(invalid(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    l.input_dim,
                    i - 1,
                    layers[i - 1].output_dim
                )));
            }
            if !l.weight.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(invalid(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Mlp { layers })
    }

    /// Xavier-normal weights and zero biases. `dims` has one more entry than
    /// `activations`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if dims.len() != activations.len() + 1 {
            return Err(invalid("need one activation per layer"));
        }
        let mut layers = Vec::new();
        for (w, &activation) in dims.windows(2).zip(activations) {
            let (i, o) = (w[0], w[1]);
            if i == 0 || o == 0 {
                return Err(invalid("layer dimensions must be positive"));
            }
            let std = (2.0 / (i + o) as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| invalid(e.to_string()))?;
            layers.push(Layer {
                input_dim: i,
                output_dim: o,
                weight: (0..i * o).map(|_| normal.sample(rng)).collect(),
                bias: vec![0.0; o],
                activation,
            });
        }
        Mlp::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend_from_slice(&l.weight);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn sgd_step(&mut self, grad: &MlpGrad, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, d) in l.weight.iter_mut().zip(&g.weight) {
                *w -= lr * d;
            }
            for (b, d) in l.bias.iter_mut().zip(&g.bias) {
                *b -= lr * d;
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        if x.len() != self.input_dim() {
            return Err(invalid(format!(
                "input has {} values, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for l in &self.layers {
            let z = l.affine(&cur);
            let next = activate(l.activation, &z);
            inputs.push(cur);
            pre.push(z);
            cur = next;
        }
        if !cur.iter().all(|v| v.is_finite()) {
            return Err(invalid("non-finite network output"));
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: cur,
        })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.output)
    }

    /// Reverse pass. Parameter gradients are added into `acc` when given;
    /// the gradient with respect to the network input is returned.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_out: &[f64],
        mut acc: Option<&mut MlpGrad>,
    ) -> Result<Vec<f64>> {
        if cache.inputs.len() != self.layers.len() {
            return Err(invalid("forward cache does not belong to this network"));
        }
        if grad_out.len() != self.output_dim() {
            return Err(invalid("output gradient has the wrong length"));
        }
        let mut g = grad_out.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[li];
            let gz: Vec<f64> = match l.activation {
                Activation::Identity => g,
                Activation::LeakyRelu(s) => z.iter().zip(&g).map(|(&v, d)| leaky_grad(s, v) * d).collect(),
                Activation::Softmax => {
                    let y = softmax(z);
                    let dot: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
                    y.iter().zip(&g).map(|(yj, gj)| yj * (gj - dot)).collect()
                }
            };
            let x = &cache.inputs[li];
            let n = l.input_dim;
            if let Some(acc) = acc.as_deref_mut() {
                let lg = &mut acc.layers[li];
                for (o, &d) in gz.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    lg.bias[o] += d;
                    for (w, &xi) in lg.weight[o * n..(o + 1) * n].iter_mut().zip(x) {
                        *w += d * xi;
                    }
                }
            }
            let mut gx = vec![0.0; n];
            for (o, &d) in gz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (acc_i, &w) in gx.iter_mut().zip(&l.weight[o * n..(o + 1) * n]) {
                    *acc_i += w * d;
                }
            }
            g = gx;
        }
        Ok(g)
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

fn check_critic(d: &Mlp) -> Result<f64> {
    match d.layers() {
        [first, second]
            if matches!(first.activation, Activation::LeakyRelu(_))
                && second.activation == Activation::Identity
                && second.output_dim == 1 =>
        {
            match first.activation {
                Activation::LeakyRelu(s) => Ok(s),
                _ => unreachable!(),
            }
        }
        _ => Err(invalid(
            "critic must be affine → LeakyReLU → affine with one output",
        )),
    }
}

/// Penalty `(‖∇_x D(x, s)‖ − 1)²` at one point, with its parameter gradient
/// scaled by `scale` and added into `acc`.
///
/// With `u = w2 ⊙ φ'(a)` the input gradient is `g = W1ₓᵀ u`. Away from kinks
/// `φ'` is locally constant, so with `r = 2(‖g‖ − 1)·g/‖g‖` the only nonzero
/// parameter gradients are `∂/∂W1ₓ[h,k] = u_h·r_k` and
/// `∂/∂w2[h] = φ'(a_h)·(W1ₓ r)_h`.
pub fn gradient_penalty(
    d: &Mlp,
    x: &[f64],
    cond: &[f64],
    acc: Option<&mut MlpGrad>,
    scale: f64,
) -> Result<(f64, f64)> {
    let slope = check_critic(d)?;
    let (l1, l2) = (&d.layers[0], &d.layers[1]);
    let fx = x.len();
    if fx + cond.len() != l1.input_dim {
        return Err(invalid("critic input dimension mismatch"));
    }
    let a = l1.affine(&concat(x, cond));
    let n = l1.input_dim;
    let mask: Vec<f64> = a.iter().map(|&v| leaky_grad(slope, v)).collect();
    let u: Vec<f64> = mask.iter().zip(&l2.weight).map(|(m, w)| m * w).collect();
    let mut g = vec![0.0; fx];
    for (h, &uh) in u.iter().enumerate() {
        for (gk, &w) in g.iter_mut().zip(&l1.weight[h * n..h * n + fx]) {
            *gk += w * uh;
        }
    }
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let penalty = (norm - 1.0).powi(2);
    if !penalty.is_finite() {
        return Err(Error::NonFinite {
            module: MODULE,
            iteration: 0,
            what: "gradient penalty".into(),
        });
    }
    if let Some(acc) = acc {
        if norm > 0.0 {
            let c = 2.0 * (norm - 1.0) / norm;
            let r: Vec<f64> = g.iter().map(|v| c * v).collect();
            for h in 0..l1.output_dim {
                let row = &l1.weight[h * n..h * n + fx];
                let wr: f64 = row.iter().zip(&r).map(|(w, rk)| w * rk).sum();
                acc.layers[1].weight[h] += scale * mask[h] * wr;
                let gw = &mut acc.layers[0].weight[h * n..h * n + fx];
                for (gwk, rk) in gw.iter_mut().zip(&r) {
                    *gwk += scale * u[h] * rk;
                }
            }
        }
    }
    Ok((penalty, norm))
}

/// Critic objective terms for one batch.
#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub loss: f64,
    pub real_mean: f64,
    pub fake_mean: f64,
    pub penalty_mean: f64,
    pub grads: MlpGrad,
}

/// Critic loss on a batch; `alphas` interpolate `x̂ = α·x + (1 − α)·x̃`.
pub fn wgan_gp_loss(
    d: &Mlp,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    cond: &[Vec<f64>],
    alphas: &[f64],
    lambda: f64,
) -> Result<CriticLoss> {
    let b = real.len();
    if b == 0 || fake.len() != b || cond.len() != b || alphas.len() != b {
        return Err(invalid("critic batch parts must be non-empty and equally long"));
    }
    let mut grads = MlpGrad::zeros_like(d);
    let inv = 1.0 / b as f64;
    let (mut real_mean, mut fake_mean, mut penalty_mean) = (0.0, 0.0, 0.0);
    for i in 0..b {
        let cr = d.forward(&concat(&real[i], &cond[i]))?;
        real_mean += cr.output[0] * inv;
        d.backward(&cr, &[-inv], Some(&mut grads))?;
        let cf = d.forward(&concat(&fake[i], &cond[i]))?;
        fake_mean += cf.output[0] * inv;
        d.backward(&cf, &[inv], Some(&mut grads))?;
        let a = alphas[i];
        let hat: Vec<f64> = real[i]
            .iter()
            .zip(&fake[i])
            .map(|(x, y)| a * x + (1.0 - a) * y)
            .collect();
        let (p, _) = gradient_penalty(d, &hat, &cond[i], Some(&mut grads), lambda * inv)?;
        penalty_mean += p * inv;
    }
    Ok(CriticLoss {
        loss: fake_mean - real_mean + lambda * penalty_mean,
        real_mean,
        fake_mean,
        penalty_mean,
        grads,
    })
}

/// Mean `−ln p(label | x)` of a frozen classifier, with input gradients.
pub fn cls_loss(classifier: &Mlp, x: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if x.len() != labels.len() || x.is_empty() {
        return Err(invalid("classifier batch must be non-empty with one label per row"));
    }
    let inv = 1.0 / x.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(x.len());
    for (xi, &y) in x.iter().zip(labels) {
        let c = classifier.forward(xi)?;
        if y >= c.output.len() {
            return Err(invalid(format!("label {y} outside classifier output")));
        }
        let p = c.output[y].max(f64::MIN_POSITIVE);
        loss -= p.ln() * inv;
        let mut g = vec![0.0; c.output.len()];
        g[y] = -inv / p;
        grads.push(classifier.backward(&c, &g, None)?);
    }
    Ok((loss, grads))
}

/// Mean `‖R(x) − s‖₂` of a frozen reconstructor, with input gradients.
pub fn recon_loss(recon: &Mlp, x: &[Vec<f64>], cond: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if x.len() != cond.len() || x.is_empty() {
        return Err(invalid("reconstructor batch must be non-empty with one target per row"));
    }
    let inv = 1.0 / x.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(x.len());
    for (xi, si) in x.iter().zip(cond) {
        let c = recon.forward(xi)?;
        if si.len() != c.output.len() {
            return Err(invalid("condition vector and reconstructor output differ in length"));
        }
        let diff: Vec<f64> = c.output.iter().zip(si).map(|(a, b)| a - b).collect();
        let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        loss += norm * inv;
        let g: Vec<f64> = if norm > 0.0 {
            diff.iter().map(|v| v * inv / norm).collect()
        } else {
            vec![0.0; diff.len()]
        };
        grads.push(recon.backward(&c, &g, None)?);
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct GeneratorLoss {
    pub loss: f64,
    pub adversarial: f64,
    pub cls: f64,
    pub recon: f64,
    pub grads: MlpGrad,
}

/// Frozen networks the generator is trained against.
#[derive(Debug, Clone, Copy)]
pub struct Judges<'a> {
    pub critic: &'a Mlp,
    pub classifier: &'a Mlp,
    pub reconstructor: &'a Mlp,
}

/// Generator objective on a batch of noise, conditions and class labels.
pub fn generator_loss(
    g: &Mlp,
    judges: Judges<'_>,
    noise: &[Vec<f64>],
    cond: &[Vec<f64>],
    labels: &[usize],
    beta: f64,
    gamma: f64,
) -> Result<GeneratorLoss> {
    let b = noise.len();
    if b == 0 || cond.len() != b || labels.len() != b {
        return Err(invalid("generator batch parts must be non-empty and equally long"));
    }
    let inv = 1.0 / b as f64;
    let caches = noise
        .iter()
        .zip(cond)
        .map(|(z, s)| g.forward(&concat(z, s)))
        .collect::<Result<Vec<_>>>()?;
    let fakes: Vec<Vec<f64>> = caches.iter().map(|c| c.output.clone()).collect();
    let (cls, cls_grads) = cls_loss(judges.classifier, &fakes, labels)?;
    let (rec, rec_grads) = recon_loss(judges.reconstructor, &fakes, cond)?;
    let mut grads = MlpGrad::zeros_like(g);
    let mut adversarial = 0.0;
    for i in 0..b {
        let cd = judges.critic.forward(&concat(&fakes[i], &cond[i]))?;
        adversarial -= cd.output[0] * inv;
        let gin = judges.critic.backward(&cd, &[-inv], None)?;
        let gx: Vec<f64> = (0..fakes[i].len())
            .map(|k| gin[k] + beta * cls_grads[i][k] + gamma * rec_grads[i][k])
            .collect();
        g.backward(&caches[i], &gx, Some(&mut grads))?;
    }
    Ok(GeneratorLoss {
        loss: adversarial + beta * cls + gamma * rec,
        adversarial,
        cls,
        recon: rec,
        grads,
    })
}

/// Per-class condition vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTable {
    dim: usize,
    vectors: BTreeMap<u32, Vec<f64>>,
}

impl ConditionTable {
    pub fn new(dim: usize, vectors: BTreeMap<u32, Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("condition dimension must be positive"));
        }
        for (c, v) in &vectors {
            if v.len() != dim {
                return Err(invalid(format!("condition for class {c} has {} values, expected {dim}", v.len())));
            }
            if !v.iter().all(|x| x.is_finite()) || v.iter().all(|&x| x == 0.0) {
                return Err(invalid(format!("condition for class {c} must be finite and non-zero")));
            }
        }
        Ok(ConditionTable { dim, vectors })
    }

    /// Seeded unit-length Gaussian vectors, one per class.
    pub fn synthesize(classes: &[u32], dim: usize, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, "featgen-cond");
        let mut vectors = BTreeMap::new();
        for &c in classes {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            vectors.insert(c, v.into_iter().map(|x| x / n).collect());
        }
        ConditionTable::new(dim, vectors)
    }

    /// Reads a feature store whose row ids are class indices.
    pub fn from_store(store: &FeatureStore) -> Result<Self> {
        let vectors = store
            .rows()
            .iter()
            .map(|(&id, row)| {
                let c = u32::try_from(id).map_err(|_| invalid(format!("class id {id} too large")))?;
                Ok((c, row.values.iter().map(|&v| v as f64).collect()))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        ConditionTable::new(store.dim(), vectors)
    }

    pub fn to_store(&self) -> Result<FeatureStore> {
        let mut s = FeatureStore::new(self.dim);
        for (&c, v) in &self.vectors {
            s.insert(c as u64, c, v.iter().map(|&x| x as f32).collect())?;
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, class: u32) -> Option<&[f64]> {
        self.vectors.get(&class).map(Vec::as_slice)
    }

    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.vectors.keys().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub d_z: usize,
    pub feature_dim: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch: usize,
    pub d_train_iter: usize,
    pub max_iter: usize,
    pub lambda_gp: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Negative-side slope magnitude of every LeakyReLU.
    pub leaky_slope: f64,
    pub seed: u64,
    /// Generator checkpoints are scored every this many iterations.
    pub eval_every: usize,
    /// Generated samples per class when scoring a checkpoint.
    pub eval_samples: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            d_z: 1024,
            feature_dim: 1024,
            cond_dim: 512,
            hidden: 4096,
            lr: 1e-4,
            batch: 128,
            d_train_iter: 5,
            max_iter: 55_000,
            lambda_gp: 10.0,
            beta: 0.1,
            gamma: 0.1,
            leaky_slope: 0.2,
            seed: 0,
            eval_every: 1000,
            eval_samples: 100,
            pretrain_epochs: 20,
            pretrain_lr: 0.01,
            pretrain_batch: 128,
        }
    }
}

impl GanConfig {
    /// Desk-scale dimensions with the same loss weights and D/G ratio.
    pub fn toy(feature_dim: usize) -> Self {
        GanConfig {
            d_z: feature_dim,
            feature_dim,
            cond_dim: 16,
            hidden: 64,
            lr: 1e-2,
            batch: 32,
            max_iter: 2000,
            eval_every: 200,
            eval_samples: 50,
            pretrain_epochs: 30,
            pretrain_lr: 0.05,
            pretrain_batch: 32,
            ..GanConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_z", self.d_z),
            ("feature_dim", self.feature_dim),
            ("cond_dim", self.cond_dim),
            ("hidden", self.hidden),
            ("batch", self.batch),
            ("d_train_iter", self.d_train_iter),
            ("eval_every", self.eval_every),
            ("eval_samples", self.eval_samples),
            ("pretrain_batch", self.pretrain_batch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        let rates = [
            ("lr", self.lr),
            ("lambda_gp", self.lambda_gp),
            ("pretrain_lr", self.pretrain_lr),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.beta >= 0.0 && self.gamma >= 0.0) {
            return Err(invalid("beta and gamma must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(invalid(format!("leaky_slope = {} outside [0, 1)", self.leaky_slope)));
        }
        Ok(())
    }
}

/// Real features with their class labels.
#[derive(Debug, Clone)]
pub struct LabeledFeatures {
    /// Distinct classes, ascending; classifier outputs follow this order.
    pub classes: Vec<u32>,
    pub rows: Vec<Vec<f64>>,
    /// Index into `classes` per row.
    pub labels: Vec<usize>,
}

impl LabeledFeatures {
    pub fn new(rows: Vec<Vec<f64>>, classes: &[u32]) -> Result<Self> {
        if rows.len() != classes.len() {
            return Err(invalid("one class per feature row required"));
        }
        if rows.is_empty() {
            return Err(invalid("no training features"));
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(invalid("feature rows differ in length"));
        }
        let mut distinct: Vec<u32> = classes.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let labels = classes
            .iter()
            .map(|c| distinct.binary_search(c).unwrap_or_default())
            .collect();
        Ok(LabeledFeatures {
            classes: distinct,
            rows,
            labels,
        })
    }

    pub fn from_store(store: &FeatureStore) -> Result<Self> {
        let (rows, classes) = store.to_f64_rows();
        LabeledFeatures::new(rows, &classes)
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

fn minibatches<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Linear softmax classifier trained by cross-entropy with minibatch SGD.
pub fn pretrain_classifier<R: Rng + ?Sized>(
    data: &LabeledFeatures,
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<Mlp> {
    let mut net = Mlp::init(&[data.dim(), data.classes.len()], &[Activation::Softmax], rng)?;
    for _ in 0..cfg.epochs {
        for idx in minibatches(data.rows.len(), cfg.batch, rng) {
            let x: Vec<Vec<f64>> = idx.iter().map(|&i| data.rows[i].clone()).collect();
            let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let mut grads = MlpGrad::zeros_like(&net);
            let inv = 1.0 / x.len() as f64;
            for (xi, &yi) in x.iter().zip(&y) {
                let c = net.forward(xi)?;
                let mut g = vec![0.0; c.output.len()];
                g[yi] = -inv / c.output[yi].max(f64::MIN_POSITIVE);
                net.backward(&c, &g, Some(&mut grads))?;
            }
            net.sgd_step(&grads, cfg.lr);
        }
    }
    Ok(net)
}

/// Reconstructor `feature → condition`, trained on mean squared L2 error.
pub fn pretrain_reconstructor<R: Rng + ?Sized>(
    data: &LabeledFeatures,
    cond: &ConditionTable,
    hidden: usize,
    slope: f64,
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<Mlp> {
    let targets = class_conditions(data, cond)?;
    let mut net = Mlp::init(
        &[data.dim(), hidden, cond.dim()],
        &[Activation::LeakyRelu(slope), Activation::Identity],
        rng,
    )?;
    for _ in 0..cfg.epochs {
        for idx in minibatches(data.rows.len(), cfg.batch, rng) {
            let mut grads = MlpGrad::zeros_like(&net);
            let inv = 1.0 / idx.len() as f64;
            for &i in &idx {
                let c = net.forward(&data.rows[i])?;
                let g: Vec<f64> = c
                    .output
                    .iter()
                    .zip(&targets[data.labels[i]])
                    .map(|(a, b)| 2.0 * (a - b) * inv)
                    .collect();
                net.backward(&c, &g, Some(&mut grads))?;
            }
            net.sgd_step(&grads, cfg.lr);
        }
    }
    Ok(net)
}

fn class_conditions(data: &LabeledFeatures, cond: &ConditionTable) -> Result<Vec<Vec<f64>>> {
    data.classes
        .iter()
        .map(|&c| {
            cond.get(c)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| invalid(format!("no condition vector for class {c}")))
        })
        .collect()
}

/// Trained generator with the networks it was judged by.
#[derive(Debug, Clone)]
pub struct GanState {
    pub config: GanConfig,
    pub classes: Vec<u32>,
    pub generator: Mlp,
    pub critic: Mlp,
    pub classifier: Mlp,
    pub reconstructor: Mlp,
    pub cond: ConditionTable,
    /// Iteration whose generator was kept (0 = initialization).
    pub best_iteration: usize,
    /// `(iteration, accuracy)` for every scored checkpoint.
    pub history: Vec<(usize, f64)>,
}

fn noise<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Fraction of generated features the classifier assigns to their class.
/// Uses a fixed noise stream so checkpoints are compared on equal footing.
pub fn generated_accuracy(
    generator: &Mlp,
    classifier: &Mlp,
    conds: &[Vec<f64>],
    cfg: &GanConfig,
) -> Result<f64> {
    let mut rng = indexed_substream(cfg.seed, "featgen-eval", 0);
    let mut hits = 0usize;
    for (label, s) in conds.iter().enumerate() {
        for _ in 0..cfg.eval_samples {
            let x = generator.apply(&concat(&noise(cfg.d_z, &mut rng), s))?;
            let p = classifier.apply(&x)?;
            if argmax(&p) == label {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (conds.len() * cfg.eval_samples) as f64)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Alternating critic/generator training against frozen judges. The kept
/// generator is the scored checkpoint with the highest classifier accuracy
/// (earliest on ties).
pub fn train_gan(
    data: &LabeledFeatures,
    cond: &ConditionTable,
    classifier: Mlp,
    reconstructor: Mlp,
    cfg: &GanConfig,
) -> Result<GanState> {
    cfg.validate()?;
    if data.dim() != cfg.feature_dim {
        return Err(invalid(format!(
            "features have {} dims, config says {}",
            data.dim(),
            cfg.feature_dim
        )));
    }
    if cond.dim() != cfg.cond_dim {
        return Err(invalid(format!(
            "conditions have {} dims, config says {}",
            cond.dim(),
            cfg.cond_dim
        )));
    }
    let conds = class_conditions(data, cond)?;
    let slope = Activation::LeakyRelu(cfg.leaky_slope);
    let mut init = substream(cfg.seed, "featgen-init");
    let mut generator = Mlp::init(
        &[cfg.d_z + cfg.cond_dim, cfg.hidden, cfg.feature_dim],
        &[slope, Activation::Identity],
        &mut init,
    )?;
    let mut critic = Mlp::init(
        &[cfg.feature_dim + cfg.cond_dim, cfg.hidden, 1],
        &[slope, Activation::Identity],
        &mut init,
    )?;
    let mut rng = substream(cfg.seed, "featgen-train");
    let n = data.rows.len();
    let mut best = generator.clone();
    let mut best_acc = generated_accuracy(&generator, &classifier, &conds, cfg)?;
    let mut best_iteration = 0;
    let mut history = vec![(0, best_acc)];
    let non_finite = |iteration: usize, what: &str| Error::NonFinite {
        module: MODULE,
        iteration,
        what: what.into(),
    };

    for it in 1..=cfg.max_iter {
        for _ in 0..cfg.d_train_iter {
            let idx: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..n)).collect();
            let real: Vec<Vec<f64>> = idx.iter().map(|&i| data.rows[i].clone()).collect();
            let cb: Vec<Vec<f64>> = idx.iter().map(|&i| conds[data.labels[i]].clone()).collect();
            let fake = cb
                .iter()
                .map(|s| generator.apply(&concat(&noise(cfg.d_z, &mut rng), s)))
                .collect::<Result<Vec<_>>>()?;
            let alphas: Vec<f64> = (0..cfg.batch).map(|_| rng.random::<f64>()).collect();
            let l = wgan_gp_loss(&critic, &real, &fake, &cb, &alphas, cfg.lambda_gp)?;
            if !l.loss.is_finite() || !l.grads.is_finite() {
                return Err(non_finite(it, "critic loss"));
            }
            critic.sgd_step(&l.grads, cfg.lr);
        }
        let labels: Vec<usize> = (0..cfg.batch)
            .map(|_| data.labels[rng.random_range(0..n)])
            .collect();
        let cb: Vec<Vec<f64>> = labels.iter().map(|&y| conds[y].clone()).collect();
        let z: Vec<Vec<f64>> = (0..cfg.batch).map(|_| noise(cfg.d_z, &mut rng)).collect();
        let judges = Judges {
            critic: &critic,
            classifier: &classifier,
            reconstructor: &reconstructor,
        };
        let l = generator_loss(&generator, judges, &z, &cb, &labels, cfg.beta, cfg.gamma)?;
        if !l.loss.is_finite() || !l.grads.is_finite() {
            return Err(non_finite(it, "generator loss"));
        }
        generator.sgd_step(&l.grads, cfg.lr);

        if it % cfg.eval_every == 0 || it == cfg.max_iter {
            let acc = generated_accuracy(&generator, &classifier, &conds, cfg)?;
            history.push((it, acc));
            if acc > best_acc {
                best_acc = acc;
                best = generator.clone();
                best_iteration = it;
            }
        }
    }
    Ok(GanState {
        config: *cfg,
        classes: data.classes.clone(),
        generator: best,
        critic,
        classifier,
        reconstructor,
        cond: cond.clone(),
        best_iteration,
        history,
    })
}

/// Pretrains both judges on `data`, then trains the generator.
pub fn fit(data: &LabeledFeatures, cond: &ConditionTable, cfg: &GanConfig) -> Result<GanState> {
    cfg.validate()?;
    let pre = PretrainConfig {
        epochs: cfg.pretrain_epochs,
        lr: cfg.pretrain_lr,
        batch: cfg.pretrain_batch,
    };
    let classifier = pretrain_classifier(data, &pre, &mut substream(cfg.seed, "featgen-classifier"))?;
    let reconstructor = pretrain_reconstructor(
        data,
        cond,
        cfg.hidden,
        cfg.leaky_slope,
        &pre,
        &mut substream(cfg.seed, "featgen-reconstructor"),
    )?;
    train_gan(data, cond, classifier, reconstructor, cfg)
}

impl GanState {
    /// `G(z, s_class)` with `z ~ N(0, I)`.
    pub fn generate<R: Rng + ?Sized>(&self, class: u32, rng: &mut R) -> Result<Vec<f64>> {
        let s = self
            .cond
            .get(class)
            .ok_or_else(|| invalid(format!("no condition vector for class {class}")))?;
        self.generator.apply(&concat(&noise(self.config.d_z, rng), s))
    }
}

impl ObjectGenerator for GanState {
    fn generate(&self, class: u32, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        GanState::generate(self, class, rng)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TFGN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: GanConfig,
    classes: Vec<u32>,
    best_iteration: usize,
    history: Vec<(usize, f64)>,
}

fn put_u32(w: &mut Vec<u8>, v: u32) {
    w.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(w: &mut Vec<u8>, vs: &[f64]) {
    for &v in vs {
        w.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn put_mlp(w: &mut Vec<u8>, net: &Mlp) {
    put_u32(w, net.layers.len() as u32);
    for l in &net.layers {
        put_u32(w, l.input_dim as u32);
        put_u32(w, l.output_dim as u32);
        let (tag, slope) = match l.activation {
            Activation::Identity => (0, 0.0),
            Activation::LeakyRelu(s) => (1, s),
            Activation::Softmax => (2, 0.0),
        };
        put_u32(w, tag);
        put_f32s(w, &[slope]);
        put_f32s(w, &l.weight);
        put_f32s(w, &l.bias);
    }
}

/// Serialises the state: magic, version, JSON header length and bytes,
/// then generator, critic, classifier and reconstructor tensors (f32,
/// little-endian) and the condition table.
pub fn write_checkpoint<W: Write>(state: &GanState, mut w: W) -> std::io::Result<()> {
    let header = serde_json::to_vec(&CheckpointHeader {
        config: state.config,
        classes: state.classes.clone(),
        best_iteration: state.best_iteration,
        history: state.history.clone(),
    })
    .map_err(std::io::Error::other)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_u32(&mut buf, header.len() as u32);
    buf.extend_from_slice(&header);
    for net in [&state.generator, &state.critic, &state.classifier, &state.reconstructor] {
        put_mlp(&mut buf, net);
    }
    put_u32(&mut buf, state.cond.vectors.len() as u32);
    put_u32(&mut buf, state.cond.dim as u32);
    for (&c, v) in &state.cond.vectors {
        put_u32(&mut buf, c);
        put_f32s(&mut buf, v);
    }
    w.write_all(&buf)
}

pub fn save_checkpoint(state: &GanState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(state, std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GanState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    origin: &'a Path,
}

impl Reader<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.origin.to_path_buf(),
            line: 0,
            message: format!("byte {}: {}", self.at, message.into()),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.at < n {
            return Err(self.err("truncated checkpoint"));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n.checked_mul(4).ok_or_else(|| self.err("size overflow"))?)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    fn mlp(&mut self) -> Result<Mlp> {
        let n = self.u32()? as usize;
        let mut layers = Vec::with_capacity(n.min(16));
        for _ in 0..n {
            let input_dim = self.u32()? as usize;
            let output_dim = self.u32()? as usize;
            let tag = self.u32()?;
            let slope = self.f32s(1)?[0];
            let activation = match tag {
                0 => Activation::Identity,
                1 => Activation::LeakyRelu(slope),
                2 => Activation::Softmax,
                t => return Err(self.err(format!("unknown activation tag {t}"))),
            };
            let weight = self.f32s(input_dim * output_dim)?;
            let bias = self.f32s(output_dim)?;
            layers.push(Layer {
                input_dim,
                output_dim,
                weight,
                bias,
                activation,
            });
        }
        Mlp::new(layers)
    }
}

pub fn parse_checkpoint(bytes: &[u8], origin: &Path) -> Result<GanState> {
    let mut r = Reader { bytes, at: 0, origin };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.err("not a generator checkpoint"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let hlen = r.u32()? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| r.err(format!("bad header: {e}")))?;
    let generator = r.mlp()?;
    let critic = r.mlp()?;
    let classifier = r.mlp()?;
    let reconstructor = r.mlp()?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mut vectors = BTreeMap::new();
    for _ in 0..count {
        let c = r.u32()?;
        vectors.insert(c, r.f32s(dim)?);
    }
    if r.at != bytes.len() {
        return Err(r.err("trailing bytes after checkpoint"));
    }
    Ok(GanState {
        config: header.config,
        classes: header.classes,
        generator,
        critic,
        classifier,
        reconstructor,
        cond: ConditionTable::new(dim, vectors)?,
        best_iteration: header.best_iteration,
        history: header.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(i: u64) -> crate::rng::Rng {
        indexed_substream(99, "featgen-test", i)
    }

    #[test]
    fn zero_network_gives_zero_output() {
        let net = Mlp::new(vec![Layer {
            input_dim: 3,
            output_dim: 2,
            weight: vec![0.0; 6],
            bias: vec![0.0; 2],
            activation: Activation::Identity,
        }])
        .unwrap();
        assert_eq!(net.apply(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert!(net.apply(&[1.0]).is_err());
    }

    #[test]
    fn leaky_relu_identity_layer() {
        let net = Mlp::new(vec![Layer {
            input_dim: 2,
            output_dim: 2,
            weight: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0; 2],
            activation: Activation::LeakyRelu(0.2),
        }])
        .unwrap();
        assert_eq!(net.apply(&[-1.0, 2.0]).unwrap(), vec![-0.2, 2.0]);
    }

    #[test]
    fn sum_loss_weight_grad_is_outer_with_ones() {
        let mut r = rng(0);
        let net = Mlp::init(&[3, 2], &[Activation::Identity], &mut r).unwrap();
        let x = [0.5, -1.0, 2.0];
        let c = net.forward(&x).unwrap();
        let mut g = MlpGrad::zeros_like(&net);
        net.backward(&c, &[1.0, 1.0], Some(&mut g)).unwrap();
        assert_eq!(g.layers[0].weight, vec![0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        assert_eq!(g.layers[0].bias, vec![1.0, 1.0]);
    }

    #[test]
    fn leaky_relu_kink_takes_negative_branch() {
        let net = Mlp::new(vec![Layer {
            input_dim: 1,
            output_dim: 1,
            weight: vec![1.0],
            bias: vec![0.0],
            activation: Activation::LeakyRelu(0.2),
        }])
        .unwrap();
        let c = net.forward(&[0.0]).unwrap();
        assert_eq!(net.backward(&c, &[1.0], None).unwrap(), vec![0.2]);
    }

    #[test]
    fn gradient_penalty_edge_cases() {
        // Unit-norm input gradient everywhere: penalty 0.
        let d = Mlp::new(vec![
            Layer {
                input_dim: 3,
                output_dim: 1,
                weight: vec![0.6, 0.8, 0.0],
                bias: vec![5.0],
                activation: Activation::LeakyRelu(0.2),
            },
            Layer {
                input_dim: 1,
                output_dim: 1,
                weight: vec![1.0],
                bias: vec![0.0],
                activation: Activation::Identity,
            },
        ])
        .unwrap();
        let (p, n) = gradient_penalty(&d, &[0.1, 0.2], &[1.0], None, 1.0).unwrap();
        assert!(p.abs() < 1e-24 && (n - 1.0).abs() < 1e-12);
        // Zero critic: penalty 1 per sample.
        let mut z = d.clone();
        z.set_flat_params(&vec![0.0; z.num_params()]).unwrap();
        let (p, _) = gradient_penalty(&z, &[0.1, 0.2], &[1.0], None, 1.0).unwrap();
        assert_eq!(p, 1.0);
        let l = wgan_gp_loss(&z, &[vec![1.0, 2.0]], &[vec![0.0, 0.0]], &[vec![1.0]], &[0.5], 10.0).unwrap();
        assert_eq!(l.loss, 10.0);
    }

    #[test]
    fn cls_and_recon_loss_examples() {
        let cls = Mlp::new(vec![Layer {
            input_dim: 1,
            output_dim: 2,
            weight: vec![0.0, 0.0],
            bias: vec![0.0, 0.0],
            activation: Activation::Softmax,
        }])
        .unwrap();
        let (l, _) = cls_loss(&cls, &[vec![1.0]], &[0]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert!(cls_loss(&cls, &[vec![1.0]], &[2]).is_err());
        let id = Mlp::new(vec![Layer {
            input_dim: 2,
            output_dim: 2,
            weight: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0; 2],
            activation: Activation::Identity,
        }])
        .unwrap();
        let (l, _) = recon_loss(&id, &[vec![1.0, 2.0]], &[vec![1.0, 2.0]]).unwrap();
        assert_eq!(l, 0.0);
        let (l, _) = recon_loss(&id, &[vec![1.0, 3.0]], &[vec![1.0, 2.0]]).unwrap();
        assert_eq!(l, 1.0);
        assert!(recon_loss(&id, &[vec![1.0, 3.0]], &[vec![1.0]]).is_err());
    }

    #[test]
    fn condition_table_synthesis() {
        let t = ConditionTable::synthesize(&[0, 3, 5], 8, 1).unwrap();
        for c in [0, 3, 5] {
            let n: f64 = t.get(c).unwrap().iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert_eq!(t, ConditionTable::synthesize(&[0, 3, 5], 8, 1).unwrap());
        assert!(ConditionTable::new(2, BTreeMap::from([(0, vec![0.0, 0.0])])).is_err());
    }

    #[test]
    fn default_config_echoes_reference_values() {
        let c = GanConfig::default();
        assert_eq!((c.lambda_gp, c.beta, c.gamma, c.lr), (10.0, 0.1, 0.1, 1e-4));
        assert_eq!((c.batch, c.d_train_iter, c.d_z), (128, 5, 1024));
        assert!(c.validate().is_ok());
        assert!(GanConfig { d_train_iter: 0, ..c }.validate().is_err());
    }
}
