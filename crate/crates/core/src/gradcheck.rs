//! Finite-difference verification of [`ModelGraph::backward`].
//!
//! The reduced profile is run in f64 on a small random batch. The objective
//! is the joint loss with a classification term, so every layer including
//! the global path and classifier receives gradient.
//!
//! Each numeric derivative is a Ridders extrapolation of central
//! differences. The network is piecewise smooth: a stencil whose two ends
//! see a different ReLU mask or max-pool choice than the unperturbed point
//! is discarded and the step halved. Some directions are nearly invariant
//! (the fusion batch norm removes most of what `global.fc3` does), so a
//! single fixed step cannot resolve every gradient above rounding noise.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::loss::joint_loss;
use crate::model::{ModelConfig, ModelGraph, ParamKind};
use crate::tensor::Tensor;

/// Name of the fusion weight matrix (a 3x3 convolution over the concatenated
/// global and local channels).
pub const FUSION_WEIGHT: &str = "up1.fuse.weight";
/// The fusion bias: the batch-norm shift applied to the concatenation,
/// which reaches the output only through the fusion weights.
pub const FUSION_BIAS: &str = "up1.norm.bias";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Conv,
    TransposedConv,
    Dense,
    Bias,
    BnScale,
    BnShift,
    FusionWeight,
    FusionBias,
}

impl Family {
    fn of(name: &str, kind: ParamKind) -> Self {
        match (name, kind) {
            (FUSION_WEIGHT, _) => Self::FusionWeight,
            (FUSION_BIAS, _) => Self::FusionBias,
            (_, ParamKind::ConvWeight) => Self::Conv,
            (_, ParamKind::TransposedConvWeight) => Self::TransposedConv,
            (_, ParamKind::DenseWeight) => Self::Dense,
            (_, ParamKind::Bias) => Self::Bias,
            (_, ParamKind::BnScale) => Self::BnScale,
            _ => Self::BnShift,
        }
    }

    pub const ALL: [Family; 8] = [
        Self::Conv,
        Self::TransposedConv,
        Self::Dense,
        Self::Bias,
        Self::BnScale,
        Self::BnShift,
        Self::FusionWeight,
        Self::FusionBias,
    ];
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Conv => "conv",
            Self::TransposedConv => "tconv",
            Self::Dense => "fc",
            Self::Bias => "bias",
            Self::BnScale => "bn scale",
            Self::BnShift => "bn shift",
            Self::FusionWeight => "fusion W",
            Self::FusionBias => "fusion b",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub seed: u64,
    /// Minimum number of sampled scalars; every trainable tensor
    /// contributes at least one.
    pub samples: usize,
    pub batch: usize,
    /// Largest central-difference step; the extrapolation halves it.
    pub step: f64,
    pub alpha: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::reduced(),
            seed: 0,
            samples: 256,
            batch: 4,
            step: 1e-4,
            alpha: 1.0,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub family: Family,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub samples: Vec<GradSample>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Stencils rejected because a ReLU or pooling choice flipped inside
    /// `[theta - h, theta + h]`.
    pub kinks: usize,
}

impl GradCheckReport {
    /// Samples compared by relative error.
    pub fn relative(&self) -> impl Iterator<Item = &GradSample> {
        self.samples.iter().filter(|s| s.family != Family::Bias)
    }

    /// Bias samples, whose exact gradient is zero because every bias in the
    /// network feeds a train-mode batch norm.
    pub fn vanishing(&self) -> impl Iterator<Item = &GradSample> {
        self.samples.iter().filter(|s| s.family == Family::Bias)
    }

    pub fn vanishing_ok(&self) -> bool {
        self.vanishing().all(|s| s.analytic.abs() <= VANISHING_TOL && s.numeric.abs() <= VANISHING_TOL)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance && self.vanishing_ok()
    }

    pub fn coverage(&self) -> BTreeMap<Family, usize> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            *out.entry(s.family).or_insert(0) += 1;
        }
        out
    }

    pub fn worst(&self) -> Option<&GradSample> {
        self.relative().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "seed {}: {} sampled parameters, {} stencils rejected at activation kinks",
            self.seed,
            self.samples.len(),
            self.kinks
        )?;
        for (family, n) in self.coverage() {
            let of = || self.samples.iter().filter(move |s| s.family == family);
            if family == Family::Bias {
                let max = of().map(|s| s.analytic.abs().max(s.numeric.abs())).fold(0.0, f64::max);
                writeln!(f, "  {family:<9} {n:>4} samples, max |gradient| {max:.3e} (exactly zero, bound {VANISHING_TOL:.0e})")?;
            } else {
                let max = of().map(|s| s.rel_error).fold(0.0, f64::max);
                writeln!(f, "  {family:<9} {n:>4} samples, max rel. error {max:.3e}")?;
            }
        }
        if let Some(w) = self.worst() {
            writeln!(f, "worst: {}[{}] analytic {:.9e} numeric {:.9e}", w.name, w.index, w.analytic, w.numeric)?;
        }
        write!(
            f,
            "max rel. error {:.3e} (tolerance {:.0e}): {}",
            self.max_rel_error,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Bound on both analytic and numeric values for biases that a following
/// batch norm removes exactly.
pub const VANISHING_TOL: f64 = 1e-8;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Random input, chroma target and labels for a check batch.
pub fn random_batch(cfg: &ModelConfig, n: usize, rng: &mut impl Rng) -> (Tensor<f64>, Tensor<f64>, Vec<usize>) {
    let s = cfg.input_size;
    let mut x = Vec::with_capacity(n * 3 * s * s);
    for _ in 0..n {
        let plane: Vec<f64> = (0..s * s).map(|_| rng.random_range(0.0..1.0)).collect();
        for _ in 0..3 {
            x.extend_from_slice(&plane);
        }
    }
    let target = (0..n * 2 * s * s).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..cfg.num_classes)).collect();
    (
        Tensor::from_vec(&[n, 3, s, s], x).unwrap(),
        Tensor::from_vec(&[n, 2, s, s], target).unwrap(),
        labels,
    )
}

/// Train-mode chroma output and logits of `g` on a batch.
fn outputs(g: &mut ModelGraph<f64>, x: &Tensor<f64>) -> Result<(Tensor<f64>, Option<Tensor<f64>>)> {
    let out = g.forward_train(x)?;
    Ok((out.ab, out.logits))
}

/// `loss(plus) - loss(minus)` for the joint objective, evaluated in a form
/// that avoids cancellation between two nearly equal totals.
pub fn loss_difference(
    plus: &(Tensor<f64>, Option<Tensor<f64>>),
    minus: &(Tensor<f64>, Option<Tensor<f64>>),
    target: &Tensor<f64>,
    labels: &[usize],
    alpha: f64,
) -> f64 {
    let (p, q, t) = (plus.0.data(), minus.0.data(), target.data());
    let mse: f64 = (0..p.len()).map(|i| (p[i] - q[i]) * (p[i] + q[i] - 2.0 * t[i])).sum::<f64>() / p.len() as f64;
    let ce = match (&plus.1, &minus.1) {
        (Some(zp), Some(zm)) if alpha != 0.0 => {
            let k = zp.dim(1);
            let mut sum = 0.0;
            for (i, &label) in labels.iter().enumerate() {
                let (a, b) = (&zp.data()[i * k..(i + 1) * k], &zm.data()[i * k..(i + 1) * k]);
                let max = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = b.iter().map(|v| (v - max).exp()).collect();
                let s: f64 = weights.iter().sum();
                let change: f64 = weights.iter().zip(a.iter().zip(b)).map(|(w, (x, y))| w * (x - y).exp_m1()).sum();
                sum += (change / s).ln_1p() - (a[label] - b[label]);
            }
            sum / labels.len() as f64
        }
        _ => 0.0,
    };
    mse + alpha * ce
}

/// Analytic gradients of the joint loss for every trainable parameter,
/// left in each parameter's `grad`.
pub fn analytic_gradients(
    g: &mut ModelGraph<f64>,
    x: &Tensor<f64>,
    target: &Tensor<f64>,
    labels: &[usize],
    alpha: f64,
) -> Result<f64> {
    g.zero_grad();
    let out = g.forward_train(x)?;
    let obj = joint_loss(&out.ab, target, out.logits.as_ref(), labels, alpha)?;
    g.backward(&obj.d_ab, obj.d_logits.as_ref())?;
    Ok(obj.loss.total)
}

/// Moves batch-norm scales and shifts and all biases off their initial
/// values so no layer sits at a symmetric point.
pub fn generic_point(g: &mut ModelGraph<f64>, rng: &mut impl Rng) {
    for p in g.params_mut() {
        let range = match p.kind {
            ParamKind::BnScale => 0.5..1.5,
            ParamKind::BnShift => -0.5..0.5,
            ParamKind::Bias => -0.2..0.2,
            _ => continue,
        };
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(range.clone()));
    }
}

/// Picks `(tensor name, flat index)` pairs: one per trainable tensor, then
/// uniformly over non-bias tensors until `count` relative samples exist.
fn sample_points(g: &ModelGraph<f64>, count: usize, rng: &mut impl Rng) -> Vec<(String, usize)> {
    let tensors: Vec<(String, usize, bool)> = g
        .params()
        .iter()
        .filter(|p| p.is_trainable())
        .map(|p| (p.name.clone(), p.value.len(), p.kind == ParamKind::Bias))
        .collect();
    let mut out: Vec<(String, usize)> =
        tensors.iter().map(|(n, len, _)| (n.clone(), rng.random_range(0..*len))).collect();
    let weights: Vec<&(String, usize, bool)> = tensors.iter().filter(|t| !t.2).collect();
    let mut relative = weights.len();
    while relative < count {
        let (n, len, _) = weights.choose(rng).expect("graph has weights");
        out.push((n.clone(), rng.random_range(0..*len)));
        relative += 1;
    }
    out
}

/// Largest number of step halvings in one extrapolation tableau.
const LEVELS: usize = 12;
/// Stop once the extrapolation error grows by this factor.
const SAFE: f64 = 2.0;
const REDRAWS: usize = 8;

/// One derivative estimate by Ridders' polynomial extrapolation of central
/// differences `D(h)` for `h = step, step/2, ...`. A level whose stencil
/// changes the activation pattern is skipped; the tableau starts at the
/// first kink-free level. Returns the estimate and its error, or `None`
/// when every level crosses a kink.
fn ridders(step: f64, mut diff: impl FnMut(f64) -> Result<Option<f64>>, kinks: &mut usize) -> Result<Option<(f64, f64)>> {
    let mut table: Vec<Vec<f64>> = Vec::new();
    let mut best = None;
    let mut err = f64::INFINITY;
    let mut h = step;
    for _ in 0..LEVELS {
        let d = diff(h)?;
        h /= 2.0;
        let Some(d) = d else {
            if table.is_empty() {
                *kinks += 1;
                continue;
            }
            break;
        };
        let mut row = vec![d];
        let mut fac = 4.0;
        for j in 1..=table.len() {
            let prev = &table[table.len() - 1];
            let next = (row[j - 1] * fac - prev[j - 1]) / (fac - 1.0);
            fac *= 4.0;
            let e = (next - row[j - 1]).abs().max((next - prev[j - 1]).abs());
            if e <= err {
                err = e;
                best = Some(next);
            }
            row.push(next);
        }
        if let (Some(last), Some(prev)) = (row.last(), table.last().and_then(|r| r.last())) {
            if table.len() > 1 && (last - prev).abs() >= SAFE * err {
                break;
            }
        }
        table.push(row);
    }
    Ok(match (best, table.first()) {
        (Some(b), _) => Some((b, err)),
        (None, Some(row)) => Some((row[0], f64::INFINITY)),
        (None, None) => None,
    })
}

/// Finite-difference derivatives of the joint loss on a fixed batch.
pub struct Probe<'a> {
    x: &'a Tensor<f64>,
    target: &'a Tensor<f64>,
    labels: &'a [usize],
    alpha: f64,
    base: Option<u64>,
    /// Stencils rejected so far because they crossed an activation kink.
    pub kinks: usize,
}

impl<'a> Probe<'a> {
    /// Records the activation pattern of `g` at its current parameters.
    pub fn new(
        g: &mut ModelGraph<f64>,
        x: &'a Tensor<f64>,
        target: &'a Tensor<f64>,
        labels: &'a [usize],
        alpha: f64,
    ) -> Result<Self> {
        outputs(g, x)?;
        Ok(Self { x, target, labels, alpha, base: g.activation_pattern(), kinks: 0 })
    }

    /// Derivative with respect to `name[index]`, or `None` if every
    /// stencil down to `step / 2^(LEVELS-1)` crosses a kink. The parameter
    /// is restored afterwards.
    pub fn derivative(&mut self, g: &mut ModelGraph<f64>, name: &str, index: usize, step: f64) -> Result<Option<f64>> {
        let orig = g.param(name).ok_or_else(|| crate::Error::Config(format!("no parameter `{name}`")))?.value.data()[index];
        let (x, target, labels, alpha, base) = (self.x, self.target, self.labels, self.alpha, self.base);
        let diff = |h: f64| -> Result<Option<f64>> {
            let mut at = |v: f64| -> Result<_> {
                g.param_mut(name).expect("checked above").value.data_mut()[index] = v;
                let out = outputs(g, x)?;
                Ok((out, g.activation_pattern()))
            };
            let (plus, p_plus) = at(orig + h)?;
            let (minus, p_minus) = at(orig - h)?;
            g.param_mut(name).expect("checked above").value.data_mut()[index] = orig;
            Ok((p_plus == base && p_minus == base)
                .then(|| loss_difference(&plus, &minus, target, labels, alpha) / (2.0 * h)))
        };
        Ok(ridders(step, diff, &mut self.kinks)?.map(|(d, _)| d))
    }
}

pub fn gradient_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut g = ModelGraph::<f64>::new(cfg.model, cfg.seed)?;
    generic_point(&mut g, &mut rng);
    let (x, target, labels) = random_batch(&cfg.model, cfg.batch, &mut rng);
    analytic_gradients(&mut g, &x, &target, &labels, cfg.alpha)?;
    let mut probe = Probe::new(&mut g, &x, &target, &labels, cfg.alpha)?;
    let points = sample_points(&g, cfg.samples, &mut rng);

    let mut samples = Vec::with_capacity(points.len());
    for (name, first) in points {
        let p = g.param(&name).expect("sampled from graph");
        let (kind, len) = (p.kind, p.value.len());
        let mut index = first;
        let mut numeric = None;
        for _ in 0..REDRAWS {
            numeric = probe.derivative(&mut g, &name, index, cfg.step)?;
            if numeric.is_some() {
                break;
            }
            index = rng.random_range(0..len);
        }
        let numeric = numeric
            .ok_or_else(|| crate::Error::State(format!("{name}: no kink-free finite-difference stencil found")))?;
        let analytic = g.param(&name).expect("sampled from graph").grad.data()[index];
        samples.push(GradSample {
            family: Family::of(&name, kind),
            name,
            index,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    let max_rel_error = samples.iter().filter(|s| s.family != Family::Bias).map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { seed: cfg.seed, samples, max_rel_error, tolerance: cfg.tolerance, kinks: probe.kinks })
}
