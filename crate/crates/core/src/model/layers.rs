//! Building blocks of the colorization network.
//!
//! Layers are immutable during the forward pass. In train mode every layer
//! pushes what its backward pass needs onto a [`Tape`]; backward pops in
//! reverse order and accumulates into each [`Param`]'s gradient.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::ops::{self, BnCache, BnStats, Window};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    ConvWeight,
    TransposedConvWeight,
    DenseWeight,
    Bias,
    BnScale,
    BnShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
    /// Accumulated gradient; empty for running statistics.
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    fn new(name: String, kind: ParamKind, value: Tensor<T>) -> Self {
        let grad = if kind.is_trainable() { Tensor::zeros(value.shape()) } else { Tensor::zeros(&[0]) };
        Self { name, kind, value, grad }
    }

    pub fn is_trainable(&self) -> bool {
        self.kind.is_trainable()
    }

    fn accumulate(&mut self, g: &[T]) {
        self.grad.data_mut().iter_mut().zip(g).for_each(|(a, &b)| *a += b);
    }
}

/// Values saved by a train-mode forward pass.
pub(crate) enum Saved<T> {
    Input(Tensor<T>),
    Norm(BnCache<T>),
    Output(Tensor<T>),
    Pool { argmax: Vec<u32>, shape: Vec<usize> },
}

#[derive(Default)]
pub struct Tape<T> {
    saved: Vec<Saved<T>>,
    /// Batch statistics per batch-norm layer, keyed by parameter prefix.
    pub(crate) stats: Vec<(String, BnStats)>,
}

impl<T> Tape<T> {
    pub fn new() -> Self {
        Self { saved: Vec::new(), stats: Vec::new() }
    }

    fn pop(&mut self) -> Saved<T> {
        self.saved.pop().expect("backward popped more values than forward saved")
    }

    pub(crate) fn pop_input(&mut self) -> Tensor<T> {
        match self.pop() {
            Saved::Input(t) => t,
            _ => panic!("tape out of sync: expected a saved input"),
        }
    }

    pub(crate) fn pop_output(&mut self) -> Tensor<T> {
        match self.pop() {
            Saved::Output(t) => t,
            _ => panic!("tape out of sync: expected a saved output"),
        }
    }

    fn pop_norm(&mut self) -> BnCache<T> {
        match self.pop() {
            Saved::Norm(c) => c,
            _ => panic!("tape out of sync: expected a batch-norm cache"),
        }
    }

    fn pop_pool(&mut self) -> (Vec<u32>, Vec<usize>) {
        match self.pop() {
            Saved::Pool { argmax, shape } => (argmax, shape),
            _ => panic!("tape out of sync: expected pooling indices"),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.saved.is_empty()
    }

    /// Hash of the piecewise-linear state: which saved outputs are positive
    /// and which inputs won each pooling window.
    pub(crate) fn pattern(&self) -> u64
    where
        T: Scalar,
    {
        let mut h = DefaultHasher::new();
        for s in &self.saved {
            match s {
                Saved::Output(y) => {
                    for chunk in y.data().chunks(64) {
                        let bits = chunk.iter().enumerate().fold(0u64, |b, (i, v)| b | (u64::from(v.f64() > 0.0) << i));
                        h.write_u64(bits);
                    }
                }
                Saved::Pool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }
}

/// Forward-pass context: `Some(tape)` means train mode.
pub(crate) struct Ctx<'a, T> {
    pub tape: Option<&'a mut Tape<T>>,
}

impl<T> Ctx<'_, T> {
    pub fn save(&mut self, s: Saved<T>) {
        if let Some(t) = self.tape.as_deref_mut() {
            t.saved.push(s);
        }
    }
}

pub(crate) type ParamRefs<'a, T> = Vec<&'a Param<T>>;
pub(crate) type ParamMuts<'a, T> = Vec<&'a mut Param<T>>;

pub(crate) trait Module<T> {
    fn params<'a>(&'a self, out: &mut ParamRefs<'a, T>);
    fn params_mut<'a>(&'a mut self, out: &mut ParamMuts<'a, T>);
}

pub(crate) fn kaiming<T: Scalar, R: Rng>(shape: &[usize], fan_out: usize, rng: &mut R) -> Tensor<T> {
    let std = (2.0 / fan_out as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive standard deviation");
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| T::of(normal.sample(rng))).collect()).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Op {
    Conv(Window),
    Transposed(Window),
    Dense,
}

/// Convolution, transposed convolution or fully connected layer.
pub(crate) struct Affine<T> {
    pub op: Op,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Scalar> Affine<T> {
    pub fn conv<R: Rng>(name: &str, cin: usize, cout: usize, win: Window, bias: bool, rng: &mut R) -> Self {
        let k = win.kernel;
        let w = kaiming(&[cout, cin, k, k], cout * k * k, rng);
        Self::assemble(name, Op::Conv(win), ParamKind::ConvWeight, w, bias.then_some(cout))
    }

    pub fn transposed<R: Rng>(name: &str, cin: usize, cout: usize, win: Window, rng: &mut R) -> Self {
        let k = win.kernel;
        let w = kaiming(&[cin, cout, k, k], cout * k * k, rng);
        Self::assemble(name, Op::Transposed(win), ParamKind::TransposedConvWeight, w, None)
    }

    pub fn dense<R: Rng>(name: &str, fin: usize, fout: usize, rng: &mut R) -> Self {
        let w = kaiming(&[fout, fin], fout, rng);
        Self::assemble(name, Op::Dense, ParamKind::DenseWeight, w, Some(fout))
    }

    fn assemble(name: &str, op: Op, kind: ParamKind, w: Tensor<T>, bias: Option<usize>) -> Self {
        Self {
            op,
            weight: Param::new(format!("{name}.weight"), kind, w),
            bias: bias.map(|n| Param::new(format!("{name}.bias"), ParamKind::Bias, Tensor::zeros(&[n]))),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<'_, T>) -> Tensor<T> {
        let bias = self.bias.as_ref().map(|b| b.value.data());
        let y = match self.op {
            Op::Conv(win) => ops::conv2d(x, &self.weight.value, bias, win),
            Op::Transposed(win) => ops::conv_transpose2d(x, &self.weight.value, win),
            Op::Dense => ops::linear(x, &self.weight.value, bias),
        };
        ctx.save(Saved::Input(x.clone()));
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>, need_dx: bool, tape: &mut Tape<T>) -> Option<Tensor<T>> {
        let x = tape.pop_input();
        let g = match self.op {
            Op::Conv(win) => ops::conv2d_backward(&x, &self.weight.value, dy, win, need_dx),
            Op::Transposed(win) => ops::conv_transpose2d_backward(&x, &self.weight.value, dy, win),
            Op::Dense => ops::linear_backward(&x, &self.weight.value, dy),
        };
        self.weight.accumulate(&g.dweight);
        if let Some(b) = self.bias.as_mut() {
            b.accumulate(&g.dbias);
        }
        g.dx
    }
}

impl<T> Module<T> for Affine<T> {
    fn params<'a>(&'a self, out: &mut ParamRefs<'a, T>) {
        out.push(&self.weight);
        out.extend(self.bias.as_ref());
    }

    fn params_mut<'a>(&'a mut self, out: &mut ParamMuts<'a, T>) {
        out.push(&mut self.weight);
        out.extend(self.bias.as_mut());
    }
}

pub(crate) struct BatchNorm<T> {
    pub prefix: String,
    pub scale: Param<T>,
    pub shift: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(prefix: &str, channels: usize) -> Self {
        let p = |suffix: &str, kind, v| Param::new(format!("{prefix}.{suffix}"), kind, Tensor::full(&[channels], v));
        Self {
            prefix: prefix.to_string(),
            scale: p("weight", ParamKind::BnScale, T::one()),
            shift: p("bias", ParamKind::BnShift, T::zero()),
            running_mean: p("running_mean", ParamKind::RunningMean, T::zero()),
            running_var: p("running_var", ParamKind::RunningVar, T::one()),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<'_, T>) -> Tensor<T> {
        let (gamma, beta) = (self.scale.value.data(), self.shift.value.data());
        match ctx.tape.as_deref_mut() {
            Some(tape) => {
                let (y, cache, stats) = ops::batch_norm_train(x, gamma, beta, BN_EPS);
                tape.saved.push(Saved::Norm(cache));
                tape.stats.push((self.prefix.clone(), stats));
                y
            }
            None => ops::batch_norm_infer(
                x,
                gamma,
                beta,
                self.running_mean.value.data(),
                self.running_var.value.data(),
                BN_EPS,
            ),
        }
    }

    pub fn backward(&mut self, dy: &Tensor<T>, tape: &mut Tape<T>) -> Tensor<T> {
        let cache = tape.pop_norm();
        let (dx, dgamma, dbeta) = ops::batch_norm_backward(dy, &cache, self.scale.value.data());
        self.scale.accumulate(&dgamma);
        self.shift.accumulate(&dbeta);
        dx
    }
}

/// Exponential moving average of batch statistics. The running variance
/// tracks the unbiased estimate.
pub(crate) fn update_running<T: Scalar>(mean: &mut Tensor<T>, var: &mut Tensor<T>, stats: &BnStats) {
    let m = BN_MOMENTUM;
    let correction = if stats.count > 1 { stats.count as f64 / (stats.count as f64 - 1.0) } else { 1.0 };
    for (r, &v) in mean.data_mut().iter_mut().zip(&stats.mean) {
        *r = T::of((1.0 - m) * r.f64() + m * v);
    }
    for (r, &v) in var.data_mut().iter_mut().zip(&stats.var) {
        *r = T::of((1.0 - m) * r.f64() + m * v * correction);
    }
}

impl<T> Module<T> for BatchNorm<T> {
    fn params<'a>(&'a self, out: &mut ParamRefs<'a, T>) {
        out.extend([&self.scale, &self.shift, &self.running_mean, &self.running_var]);
    }

    fn params_mut<'a>(&'a mut self, out: &mut ParamMuts<'a, T>) {
        out.extend([&mut self.scale, &mut self.shift, &mut self.running_mean, &mut self.running_var]);
    }
}

/// Affine layer, batch norm, optional ReLU.
pub(crate) struct Unit<T> {
    pub affine: Affine<T>,
    pub bn: BatchNorm<T>,
    pub relu: bool,
}

impl<T: Scalar> Unit<T> {
    pub fn new(affine: Affine<T>, bn: BatchNorm<T>, relu: bool) -> Self {
        Self { affine, bn, relu }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<'_, T>) -> Tensor<T> {
        let z = self.affine.forward(x, ctx);
        let mut y = self.bn.forward(&z, ctx);
        if self.relu {
            ops::relu_inplace(&mut y);
            ctx.save(Saved::Output(y.clone()));
        }
        y
    }

    pub fn backward(&mut self, dy: Tensor<T>, need_dx: bool, tape: &mut Tape<T>) -> Option<Tensor<T>> {
        let mut dy = dy;
        if self.relu {
            let y = tape.pop_output();
            ops::relu_backward_inplace(&mut dy, &y);
        }
        let dz = self.bn.backward(&dy, tape);
        self.affine.backward(&dz, need_dx, tape)
    }

    pub fn out_channels(&self) -> usize {
        self.bn.scale.value.len()
    }
}

impl<T> Module<T> for Unit<T> {
    fn params<'a>(&'a self, out: &mut ParamRefs<'a, T>) {
        self.affine.params(out);
        self.bn.params(out);
    }

    fn params_mut<'a>(&'a mut self, out: &mut ParamMuts<'a, T>) {
        self.affine.params_mut(out);
        self.bn.params_mut(out);
    }
}

pub(crate) struct MaxPool {
    pub win: Window,
}

impl MaxPool {
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>, ctx: &mut Ctx<'_, T>) -> Tensor<T> {
        let (y, argmax) = ops::max_pool2d(x, self.win);
        ctx.save(Saved::Pool { argmax, shape: x.shape().to_vec() });
        y
    }

    pub fn backward<T: Scalar>(&self, dy: &Tensor<T>, tape: &mut Tape<T>) -> Tensor<T> {
        let (argmax, shape) = tape.pop_pool();
        ops::max_pool2d_backward(dy, &argmax, &shape)
    }
}

/// ResNet basic block: two 3x3 conv+BN, identity or 1x1 projection
/// shortcut, ReLU after the sum.
pub(crate) struct BasicBlock<T> {
    pub first: Unit<T>,
    pub second: Unit<T>,
    pub downsample: Option<Unit<T>>,
}

impl<T: Scalar> BasicBlock<T> {
    pub fn new<R: Rng>(prefix: &str, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        let first = Unit::new(
            Affine::conv(&format!("{prefix}.conv1"), cin, cout, Window::new(3, stride, 1), false, rng),
            BatchNorm::new(&format!("{prefix}.bn1"), cout),
            true,
        );
        let second = Unit::new(
            Affine::conv(&format!("{prefix}.conv2"), cout, cout, Window::new(3, 1, 1), false, rng),
            BatchNorm::new(&format!("{prefix}.bn2"), cout),
            false,
        );
        let downsample = (stride != 1 || cin != cout).then(|| {
            Unit::new(
                Affine::conv(&format!("{prefix}.downsample.0"), cin, cout, Window::new(1, stride, 0), false, rng),
                BatchNorm::new(&format!("{prefix}.downsample.1"), cout),
                false,
            )
        });
        Self { first, second, downsample }
    }

    pub fn forward(&self, x: &Tensor<T>, ctx: &mut Ctx<'_, T>) -> Tensor<T> {
        let h = self.first.forward(x, ctx);
        let mut y = self.second.forward(&h, ctx);
        match &self.downsample {
            Some(d) => y.add_assign(&d.forward(x, ctx)),
            None => y.add_assign(x),
        }
        ops::relu_inplace(&mut y);
        ctx.save(Saved::Output(y.clone()));
        y
    }

    pub fn backward(&mut self, dy: Tensor<T>, tape: &mut Tape<T>) -> Tensor<T> {
        let y = tape.pop_output();
        let mut dy = dy;
        ops::relu_backward_inplace(&mut dy, &y);
        let shortcut = match self.downsample.as_mut() {
            Some(d) => d.backward(dy.clone(), true, tape).expect("dx requested"),
            None => dy.clone(),
        };
        let dh = self.second.backward(dy, true, tape).expect("dx requested");
        let mut dx = self.first.backward(dh, true, tape).expect("dx requested");
        dx.add_assign(&shortcut);
        dx
    }
}

impl<T> Module<T> for BasicBlock<T> {
    fn params<'a>(&'a self, out: &mut ParamRefs<'a, T>) {
        self.first.params(out);
        self.second.params(out);
        if let Some(d) = &self.downsample {
            d.params(out);
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut ParamMuts<'a, T>) {
        self.first.params_mut(out);
        self.second.params_mut(out);
        if let Some(d) = self.downsample.as_mut() {
            d.params_mut(out);
        }
    }
}

/// Decoder stage: 2x2 stride-2 transposed conv, concatenate the skip, then
/// two 3x3 convolutions.
pub(crate) struct UpBlock<T> {
    pub up: Unit<T>,
    pub merge: Unit<T>,
    pub refine: Unit<T>,
}

impl<T: Scalar> UpBlock<T> {
    pub fn new<R: Rng>(prefix: &str, cin: usize, cout: usize, skip: usize, rng: &mut R) -> Self {
        let up = Unit::new(
            Affine::transposed(&format!("{prefix}.up"), cin, cout, Window::new(2, 2, 0), rng),
            BatchNorm::new(&format!("{prefix}.up_bn"), cout),
            true,
        );
        let merge = Unit::new(
            Affine::conv(&format!("{prefix}.conv1"), cout + skip, cout, Window::new(3, 1, 1), true, rng),
            BatchNorm::new(&format!("{prefix}.bn1"), cout),
            true,
        );
        let refine = Unit::new(
            Affine::conv(&format!("{prefix}.conv2"), cout, cout, Window::new(3, 1, 1), false, rng),
            BatchNorm::new(&format!("{prefix}.bn2"), cout),
            true,
        );
        Self { up, merge, refine }
    }

    pub fn forward(&self, x: &Tensor<T>, skip: &Tensor<T>, ctx: &mut Ctx<'_, T>) -> Tensor<T> {
        let u = self.up.forward(x, ctx);
        let cat = ops::concat_channels(&u, skip);
        let m = self.merge.forward(&cat, ctx);
        self.refine.forward(&m, ctx)
    }

    /// Returns the gradients for the block input and for the skip.
    pub fn backward(&mut self, dy: Tensor<T>, tape: &mut Tape<T>) -> (Tensor<T>, Tensor<T>) {
        let dm = self.refine.backward(dy, true, tape).expect("dx requested");
        let dcat = self.merge.backward(dm, true, tape).expect("dx requested");
        let (du, dskip) = ops::split_channels(&dcat, self.up.out_channels());
        let dx = self.up.backward(du, true, tape).expect("dx requested");
        (dx, dskip)
    }
}

impl<T> Module<T> for UpBlock<T> {
    fn params<'a>(&'a self, out: &mut ParamRefs<'a, T>) {
        self.up.params(out);
        self.merge.params(out);
        self.refine.params(out);
    }

    fn params_mut<'a>(&'a mut self, out: &mut ParamMuts<'a, T>) {
        self.up.params_mut(out);
        self.merge.params_mut(out);
        self.refine.params_mut(out);
    }
}
