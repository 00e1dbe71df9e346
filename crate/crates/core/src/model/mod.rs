//! The colorization network: a ResNet34 encoder, a two-convolution bridge,
//! a global/classification path, a fusion decoder with skip connections and
//! a sigmoid chroma head.
//!
//! Widths below are for channel scale 1 and a 256x256 input:
//!
//! | stage          | output            | notes                                        |
//! |----------------|-------------------|----------------------------------------------|
//! | input block    | 64 x 128 x 128    | 7x7/2 conv, BN, ReLU                         |
//! | input pool     | 64 x 64 x 64      | 3x3/2 max pool                               |
//! | layer 1..4     | 64..512, /2 each  | 3/4/6/3 basic blocks, stride-2 stage entry   |
//! | bridge         | 512 x 8 x 8       | 2 x (3x3 conv + bias, BN, ReLU)              |
//! | global         | 512, 256          | FC 32768->1024->512->256, each BN + ReLU     |
//! | classifier     | K                 | FC 512->256 (BN, ReLU), FC 256->K, BN        |
//! | up 1 (fusion)  | 256 x 16 x 16     | upsample bridge, concat broadcast global,    |
//! |                |                   | BN(768), 3x3 conv, ReLU                      |
//! | up 2..5        | 128..16, x2 each  | 2x2/2 tconv, skip concat, two 3x3 convs      |
//! | conv out       | 2 x 256 x 256     | 1x1 conv + bias, BN, sigmoid                 |
//!
//! Skips: up 2 takes layer 2, up 3 takes layer 1, up 4 takes the input
//! block, up 5 takes the 3-channel network input. Without fusion, the global
//! path and classifier are absent and up 1 concatenates the layer 3 output in
//! place of the broadcast global vector.

mod fusion;
mod layers;
mod report;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use fusion::{fuse, FusionParams, GlobalFeature};
pub use layers::{Param, ParamKind, Tape, BN_EPS, BN_MOMENTUM};
pub use report::{parameter_report, shape_trace, LayerReport, ParameterReport, TABLE_ROWS};

use crate::error::{Error, Result};
use crate::ops::{self, BnStats, Window};
use crate::tensor::{Scalar, Tensor};
use layers::{Affine, BasicBlock, BatchNorm, Ctx, MaxPool, Module, ParamMuts, ParamRefs, Saved, Unit, UpBlock};

pub const DEFAULT_CLASSES: usize = 137;
pub const DEFAULT_INPUT_SIZE: usize = 256;
pub const INPUT_CHANNELS: usize = 3;
pub const OUTPUT_CHANNELS: usize = 2;

const STAGE_BLOCKS: [usize; 4] = [3, 4, 6, 3];

/// Positive rational multiplier applied to every hidden width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelScale {
    num: usize,
    den: usize,
}

impl ChannelScale {
    pub const ONE: Self = Self { num: 1, den: 1 };

    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Config(format!("channel scale {num}/{den} must be positive")));
        }
        let g = gcd(num, den);
        Ok(Self { num: num / g, den: den / g })
    }

    pub fn apply(&self, base: usize) -> Result<usize> {
        let scaled = base * self.num;
        if !scaled.is_multiple_of(self.den) || scaled == 0 {
            return Err(Error::Config(format!("channel scale {self} turns width {base} into a non-integer")));
        }
        Ok(scaled / self.den)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl fmt::Display for ChannelScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for ChannelScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid channel scale `{s}`, expected N or N/D"));
        let s = s.trim();
        match s.split_once('/') {
            Some((n, d)) => Self::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?),
            None => Self::new(s.parse().map_err(|_| bad())?, 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub input_size: usize,
    pub fusion_enabled: bool,
    pub channel_scale: ChannelScale,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_classes: DEFAULT_CLASSES,
            input_size: DEFAULT_INPUT_SIZE,
            fusion_enabled: true,
            channel_scale: ChannelScale::ONE,
        }
    }
}

/// Hidden widths after channel scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Widths {
    pub stem: usize,
    pub stages: [usize; 4],
    pub global: [usize; 3],
    pub class_hidden: usize,
    pub up: [usize; 5],
}

impl ModelConfig {
    /// The small profile used by gradient checks and overfit runs: 1/8 of
    /// every width on a 64x64 input.
    pub fn reduced() -> Self {
        Self { input_size: 64, channel_scale: ChannelScale { num: 1, den: 8 }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<Widths> {
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return Err(Error::Config(format!("input size {} must be a positive multiple of 32", self.input_size)));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        let s = |c| self.channel_scale.apply(c);
        Ok(Widths {
            stem: s(64)?,
            stages: [s(64)?, s(128)?, s(256)?, s(512)?],
            global: [s(1024)?, s(512)?, s(256)?],
            class_hidden: s(256)?,
            up: [s(256)?, s(128)?, s(64)?, s(32)?, s(16)?],
        })
    }

    /// Side length of the bridge output.
    pub fn bottleneck_size(&self) -> usize {
        self.input_size / 32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Per-sample output shapes of one named stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// `N x 2 x S x S` normalized chroma, strictly inside (0, 1).
    pub ab: Tensor<T>,
    /// `N x K` pre-softmax scores; absent without fusion.
    pub logits: Option<Tensor<T>>,
    pub probs: Option<Tensor<T>>,
    pub trace: Vec<LayerShape>,
}

struct GlobalPath<T> {
    fc: Vec<Unit<T>>,
    class_hidden: Unit<T>,
    class_out: Unit<T>,
}

impl<T> Module<T> for GlobalPath<T> {
    fn params<'a>(&'a self, out: &mut ParamRefs<'a, T>) {
        self.fc.iter().for_each(|u| u.params(out));
        self.class_hidden.params(out);
        self.class_out.params(out);
    }

    fn params_mut<'a>(&'a mut self, out: &mut ParamMuts<'a, T>) {
        self.fc.iter_mut().for_each(|u| u.params_mut(out));
        self.class_hidden.params_mut(out);
        self.class_out.params_mut(out);
    }
}

/// The full network with named parameters.
pub struct ModelGraph<T: Scalar = f32> {
    cfg: ModelConfig,
    widths: Widths,
    stem: Unit<T>,
    pool: MaxPool,
    stages: Vec<Vec<BasicBlock<T>>>,
    bridge: Vec<Unit<T>>,
    global: Option<GlobalPath<T>>,
    fusion_norm: BatchNorm<T>,
    fusion_conv: Affine<T>,
    ups: Vec<UpBlock<T>>,
    head: Unit<T>,
    tape: Option<Tape<T>>,
}

/// Skip connection feeding a decoder stage; used to ablate wiring in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[allow(dead_code)]
enum Skip {
    Layer1,
    Layer2,
    Stem,
}

impl<T: Scalar> ModelGraph<T> {
    /// Builds the network with fan-out scaled Gaussian weights, zero biases
    /// and identity batch norms.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let widths = cfg.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let Widths { stem: c0, stages: cs, global: gw, class_hidden: ch, up } = widths;

        let stem = Unit::new(
            Affine::conv("encoder.conv1", INPUT_CHANNELS, c0, Window::new(7, 2, 3), false, rng),
            BatchNorm::new("encoder.bn1", c0),
            true,
        );
        let mut stages = Vec::with_capacity(4);
        let mut cin = c0;
        for (s, (&blocks, &cout)) in STAGE_BLOCKS.iter().zip(&cs).enumerate() {
            let stride = if s == 0 { 1 } else { 2 };
            let stage = (0..blocks)
                .map(|b| {
                    let (i, st) = if b == 0 { (cin, stride) } else { (cout, 1) };
                    BasicBlock::new(&format!("encoder.layer{}.{b}", s + 1), i, cout, st, rng)
                })
                .collect();
            stages.push(stage);
            cin = cout;
        }
        let c512 = cs[3];
        let bridge = (0..2)
            .map(|i| {
                Unit::new(
                    Affine::conv(&format!("bridge.{i}.conv"), c512, c512, Window::new(3, 1, 1), true, rng),
                    BatchNorm::new(&format!("bridge.{i}.bn"), c512),
                    true,
                )
            })
            .collect();

        let fused_width = if cfg.fusion_enabled { gw[2] } else { cs[2] };
        let global = cfg.fusion_enabled.then(|| {
            let flat = c512 * cfg.bottleneck_size() * cfg.bottleneck_size();
            let dims = [flat, gw[0], gw[1], gw[2]];
            let fc = (0..3)
                .map(|i| {
                    Unit::new(
                        Affine::dense(&format!("global.fc{}", i + 1), dims[i], dims[i + 1], rng),
                        BatchNorm::new(&format!("global.bn{}", i + 1), dims[i + 1]),
                        true,
                    )
                })
                .collect();
            let class_hidden = Unit::new(
                Affine::dense("classifier.fc1", gw[1], ch, rng),
                BatchNorm::new("classifier.bn1", ch),
                true,
            );
            let class_out = Unit::new(
                Affine::dense("classifier.fc2", ch, cfg.num_classes, rng),
                BatchNorm::new("classifier.bn2", cfg.num_classes),
                false,
            );
            GlobalPath { fc, class_hidden, class_out }
        });

        let fusion_in = fused_width + c512;
        let fusion_norm = BatchNorm::new("up1.norm", fusion_in);
        let fusion_conv = Affine::conv("up1.fuse", fusion_in, up[0], Window::new(3, 1, 1), false, rng);

        let skips = [cs[1], cs[0], c0, INPUT_CHANNELS];
        let ups = (0..4).map(|i| UpBlock::new(&format!("up{}", i + 2), up[i], up[i + 1], skips[i], rng)).collect();
        let head = Unit::new(
            Affine::conv("out.conv", up[4], OUTPUT_CHANNELS, Window::new(1, 1, 0), true, rng),
            BatchNorm::new("out.bn", OUTPUT_CHANNELS),
            false,
        );

        Ok(Self {
            cfg,
            widths,
            stem,
            pool: MaxPool { win: Window::new(3, 2, 1) },
            stages,
            bridge,
            global,
            fusion_norm,
            fusion_conv,
            ups,
            head,
            tape: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn widths(&self) -> &Widths {
        &self.widths
    }

    /// All tensors in a fixed order, including batch-norm running statistics.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        self.stem.params(&mut out);
        self.stages.iter().flatten().for_each(|b| b.params(&mut out));
        self.bridge.iter().for_each(|u| u.params(&mut out));
        if let Some(g) = &self.global {
            g.params(&mut out);
        }
        self.fusion_norm.params(&mut out);
        self.fusion_conv.params(&mut out);
        self.ups.iter().for_each(|u| u.params(&mut out));
        self.head.params(&mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        self.stem.params_mut(&mut out);
        self.stages.iter_mut().flatten().for_each(|b| b.params_mut(&mut out));
        self.bridge.iter_mut().for_each(|u| u.params_mut(&mut out));
        if let Some(g) = self.global.as_mut() {
            g.params_mut(&mut out);
        }
        self.fusion_norm.params_mut(&mut out);
        self.fusion_conv.params_mut(&mut out);
        self.ups.iter_mut().for_each(|u| u.params_mut(&mut out));
        self.head.params_mut(&mut out);
        out
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params().into_iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params_mut().into_iter().find(|p| p.name == name)
    }

    pub fn trainable_count(&self) -> usize {
        self.params().iter().filter(|p| p.is_trainable()).map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(T::zero());
        }
    }

    /// Sets every convolution and dense weight and bias to zero; batch norms
    /// keep scale 1, shift 0.
    pub fn zero_weights(&mut self) {
        for p in self.params_mut() {
            if matches!(
                p.kind,
                ParamKind::ConvWeight | ParamKind::TransposedConvWeight | ParamKind::DenseWeight | ParamKind::Bias
            ) {
                p.value.fill(T::zero());
            }
        }
    }

    /// Converts every tensor to another element type.
    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        let mut out = ModelGraph::<U>::new(self.cfg, 0).expect("config already validated");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            dst.value = src.value.cast();
        }
        out
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = self.cfg.input_size;
        let ok = x.shape().len() == 4 && x.dim(0) >= 1 && x.shape()[1..] == [INPUT_CHANNELS, s, s];
        if !ok {
            return Err(Error::Shape(format!("expected input N x {INPUT_CHANNELS} x {s} x {s}, got {:?}", x.shape())));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite { layer: "network input".into() });
        }
        if let Some(p) = self.params().into_iter().find(|p| !p.value.is_finite()) {
            return Err(Error::NonFinite { layer: p.name.clone() });
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<ForwardOutput<T>> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Inference => self.infer(x),
        }
    }

    /// Inference-mode forward pass using batch-norm running statistics.
    pub fn infer(&self, x: &Tensor<T>) -> Result<ForwardOutput<T>> {
        self.check_input(x)?;
        Ok(self.run(x, &mut Ctx { tape: None }, None))
    }

    /// Train-mode forward pass: batch statistics, running-statistic update,
    /// and a saved tape for [`ModelGraph::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<ForwardOutput<T>> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let out = self.run(x, &mut Ctx { tape: Some(&mut tape) }, None);
        let stats = std::mem::take(&mut tape.stats);
        self.commit_running_stats(&stats);
        self.tape = Some(tape);
        Ok(out)
    }

    /// Fingerprint of the ReLU masks and pooling choices of the last
    /// train-mode forward pass, `None` before the first one or after
    /// `backward`.
    pub fn activation_pattern(&self) -> Option<u64> {
        self.tape.as_ref().map(Tape::pattern)
    }

    fn commit_running_stats(&mut self, stats: &[(String, BnStats)]) {
        let by_prefix: HashMap<&str, &BnStats> = stats.iter().map(|(k, v)| (k.as_str(), v)).collect();
        let mut params = self.params_mut();
        for i in 0..params.len() {
            if params[i].kind != ParamKind::RunningMean {
                continue;
            }
            let prefix = params[i].name.trim_end_matches(".running_mean").to_string();
            if let Some(s) = by_prefix.get(prefix.as_str()) {
                let (head, tail) = params.split_at_mut(i + 1);
                debug_assert_eq!(tail[0].kind, ParamKind::RunningVar);
                layers::update_running(&mut head[i].value, &mut tail[0].value, s);
            }
        }
    }

    fn run(&self, x: &Tensor<T>, ctx: &mut Ctx<'_, T>, ablate: Option<Skip>) -> ForwardOutput<T> {
        let mut trace = Vec::new();
        let mut record = |name: &'static str, ts: &[&Tensor<T>]| {
            trace.push(LayerShape { name, shapes: ts.iter().map(|t| t.shape()[1..].to_vec()).collect() });
        };
        let ablated = |skip: Skip, t: &Tensor<T>| {
            if ablate == Some(skip) {
                Tensor::zeros(t.shape())
            } else {
                t.clone()
            }
        };

        let a1 = self.stem.forward(x, ctx);
        record(TABLE_ROWS[0], &[&a1]);
        let mut h = self.pool.forward(&a1, ctx);
        record(TABLE_ROWS[1], &[&h]);
        let mut skips = Vec::with_capacity(4);
        for (i, stage) in self.stages.iter().enumerate() {
            for block in stage {
                h = block.forward(&h, ctx);
            }
            record(TABLE_ROWS[2 + i], &[&h]);
            skips.push(h.clone());
        }
        for unit in &self.bridge {
            h = unit.forward(&h, ctx);
        }
        record(TABLE_ROWS[6], &[&h]);
        let bridge = h;
        let n = bridge.dim(0);

        let (first, logits) = match &self.global {
            Some(g) => {
                let flat = bridge.clone().reshape(&[n, bridge.item_len()]).unwrap();
                let g1 = g.fc[0].forward(&flat, ctx);
                let g512 = g.fc[1].forward(&g1, ctx);
                let g256 = g.fc[2].forward(&g512, ctx);
                record(TABLE_ROWS[7], &[&g512, &g256]);
                let hidden = g.class_hidden.forward(&g512, ctx);
                let logits = g.class_out.forward(&hidden, ctx);
                record(TABLE_ROWS[8], &[&logits]);
                let side = 2 * bridge.dim(2);
                (ops::broadcast_spatial(&g256, side, side), Some(logits))
            }
            None => (skips[2].clone(), None),
        };
        let cat = ops::concat_channels(&first, &ops::upsample_nearest2(&bridge));
        let normed = self.fusion_norm.forward(&cat, ctx);
        let mut u = self.fusion_conv.forward(&normed, ctx);
        ops::relu_inplace(&mut u);
        ctx.save(Saved::Output(u.clone()));
        record(TABLE_ROWS[9], &[&u]);

        let skip_inputs = [ablated(Skip::Layer2, &skips[1]), ablated(Skip::Layer1, &skips[0]), ablated(Skip::Stem, &a1)];
        for (i, up) in self.ups.iter().enumerate() {
            let skip = if i < 3 { &skip_inputs[i] } else { x };
            u = up.forward(&u, skip, ctx);
            record(TABLE_ROWS[10 + i], &[&u]);
        }
        let z = self.head.forward(&u, ctx);
        let ab = ops::sigmoid(&z);
        ctx.save(Saved::Output(ab.clone()));
        record(TABLE_ROWS[14], &[&ab]);

        let probs = logits.as_ref().map(ops::softmax_rows);
        ForwardOutput { ab, logits, probs, trace }
    }

    /// Back-propagates gradients of the loss with respect to the chroma output
    /// and (with fusion) the class logits, accumulating into every trainable
    /// parameter's `grad`. Consumes the tape of the last train-mode forward.
    pub fn backward(&mut self, d_ab: &Tensor<T>, d_logits: Option<&Tensor<T>>) -> Result<()> {
        let mut tape = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward requires a preceding train-mode forward pass".into()))?;
        let finite = |t: &Tensor<T>, layer: &str| {
            if t.is_finite() {
                Ok(())
            } else {
                Err(Error::NonFinite { layer: layer.to_string() })
            }
        };

        let ab = tape.pop_output();
        if ab.shape() != d_ab.shape() {
            return Err(Error::Shape(format!("chroma gradient {:?} vs output {:?}", d_ab.shape(), ab.shape())));
        }
        let mut dz = d_ab.clone();
        dz.data_mut().iter_mut().zip(ab.data()).for_each(|(g, &s)| *g *= s * (T::one() - s));
        let mut du = self.head.backward(dz, true, &mut tape).expect("dx requested");
        finite(&du, "out")?;

        let mut skip_grads = Vec::with_capacity(3);
        for i in (0..4).rev() {
            let (dx, dskip) = self.ups[i].backward(du, &mut tape);
            finite(&dx, &format!("up{}", i + 2))?;
            if i < 3 {
                skip_grads.push(dskip);
            }
            du = dx;
        }
        // skip_grads now holds [stem, layer1, layer2].
        let y = tape.pop_output();
        ops::relu_backward_inplace(&mut du, &y);
        let dnorm = self.fusion_conv.backward(&du, true, &mut tape).expect("dx requested");
        let dcat = self.fusion_norm.backward(&dnorm, &mut tape);
        finite(&dcat, "up1")?;
        let first_channels = dcat.dim(1) - self.widths.stages[3];
        let (dfirst, dup) = ops::split_channels(&dcat, first_channels);
        let mut dbridge = ops::upsample_nearest2_backward(&dup);

        let mut dlayer3 = None;
        match self.global.as_mut() {
            Some(g) => {
                let n = dbridge.dim(0);
                let dlogits = match d_logits {
                    Some(d) if d.shape() == [n, self.cfg.num_classes] => d.clone(),
                    Some(d) => return Err(Error::Shape(format!("logit gradient has shape {:?}", d.shape()))),
                    None => Tensor::zeros(&[n, self.cfg.num_classes]),
                };
                let dh = g.class_out.backward(dlogits, true, &mut tape).expect("dx requested");
                let dg512_class = g.class_hidden.backward(dh, true, &mut tape).expect("dx requested");
                finite(&dg512_class, "classifier")?;
                let dg256 = ops::broadcast_spatial_backward(&dfirst);
                let mut dg512 = g.fc[2].backward(dg256, true, &mut tape).expect("dx requested");
                dg512.add_assign(&dg512_class);
                let dg1 = g.fc[1].backward(dg512, true, &mut tape).expect("dx requested");
                let dflat = g.fc[0].backward(dg1, true, &mut tape).expect("dx requested");
                finite(&dflat, "global")?;
                dbridge.add_assign(&dflat.reshape(dbridge.shape())?);
            }
            None => dlayer3 = Some(dfirst),
        }

        let mut dh = dbridge;
        for unit in self.bridge.iter_mut().rev() {
            dh = unit.backward(dh, true, &mut tape).expect("dx requested");
        }
        finite(&dh, "bridge")?;

        for s in (0..4).rev() {
            for block in self.stages[s].iter_mut().rev() {
                dh = block.backward(dh, &mut tape);
            }
            finite(&dh, &format!("encoder.layer{}", s + 1))?;
            match s {
                3 => {
                    if let Some(d) = dlayer3.take() {
                        dh.add_assign(&d);
                    }
                }
                2 => dh.add_assign(&skip_grads[2]),
                1 => dh.add_assign(&skip_grads[1]),
                _ => {}
            }
        }
        let mut da1 = self.pool.backward(&dh, &mut tape);
        da1.add_assign(&skip_grads[0]);
        self.stem.backward(da1, false, &mut tape);
        debug_assert!(tape.is_empty(), "tape fully consumed");
        if let Some(p) = self.params().into_iter().find(|p| p.is_trainable() && !p.grad.is_finite()) {
            return Err(Error::NonFinite { layer: p.name.clone() });
        }
        Ok(())
    }
}
