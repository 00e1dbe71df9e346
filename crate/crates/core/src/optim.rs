//! Adam and Adadelta over the trainable parameters of a graph.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Param;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Adadelta,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::Adadelta => "adadelta",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adam" => Ok(Self::Adam),
            "adadelta" => Ok(Self::Adadelta),
            other => Err(Error::Config(format!("unknown optimizer `{other}`, expected adam or adadelta"))),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const ADADELTA_RHO: f64 = 0.9;
pub const ADADELTA_EPS: f64 = 1e-6;

/// One bias-corrected Adam update of `p` at step `t` (1-based).
pub fn adam_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64) {
    let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
    }
}

/// One Adadelta update with the step scaled by `lr`.
pub fn adadelta_update(p: &mut [f64], g: &[f64], sq: &mut [f64], acc: &mut [f64], lr: f64) {
    for i in 0..p.len() {
        sq[i] = ADADELTA_RHO * sq[i] + (1.0 - ADADELTA_RHO) * g[i] * g[i];
        let delta = (acc[i] + ADADELTA_EPS).sqrt() / (sq[i] + ADADELTA_EPS).sqrt() * g[i];
        acc[i] = ADADELTA_RHO * acc[i] + (1.0 - ADADELTA_RHO) * delta * delta;
        p[i] -= lr * delta;
    }
}

/// Per-parameter accumulators, kept in f64 whatever the parameter type.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    /// Adam: first moments. Adadelta: squared-gradient averages.
    first: Vec<Vec<f64>>,
    /// Adam: second moments. Adadelta: squared-update averages.
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self { kind, lr, step: 0, first: Vec::new(), second: Vec::new() })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Lengths of the accumulator vectors, one per trainable parameter.
    pub fn state_lens(&self) -> Vec<usize> {
        self.first.iter().map(Vec::len).collect()
    }

    /// Applies one update to every trainable parameter from its `grad`.
    pub fn step<T: Scalar>(&mut self, params: Vec<&mut Param<T>>) -> Result<()> {
        let params: Vec<_> = params.into_iter().filter(|p| p.is_trainable()).collect();
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() || params.iter().zip(&self.first).any(|(p, s)| p.value.len() != s.len()) {
            return Err(Error::State("parameter set changed under the optimizer".into()));
        }
        self.step += 1;
        for (i, p) in params.into_iter().enumerate() {
            let mut value: Vec<f64> = p.value.data().iter().map(|v| v.f64()).collect();
            let grad: Vec<f64> = p.grad.data().iter().map(|v| v.f64()).collect();
            match self.kind {
                OptimizerKind::Adam => {
                    adam_update(&mut value, &grad, &mut self.first[i], &mut self.second[i], self.step, self.lr)
                }
                OptimizerKind::Adadelta => {
                    adadelta_update(&mut value, &grad, &mut self.first[i], &mut self.second[i], self.lr)
                }
            }
            p.value.data_mut().iter_mut().zip(value).for_each(|(v, x)| *v = T::of(x));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ChannelScale, ModelConfig, ModelGraph};

    // Scalar recurrences written out longhand.
    fn adam_oracle(mut x: f64, grad: impl Fn(f64) -> f64, steps: u32, lr: f64) -> f64 {
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=steps {
            let g = grad(x);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32));
            let vh = v / (1.0 - 0.999f64.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + 1e-8);
        }
        x
    }

    #[test]
    fn adam_matches_scalar_oracle() {
        let grad = |x: f64| 2.0 * (x - 3.0);
        let (mut p, mut m, mut v) = ([0.5], [0.0], [0.0]);
        for t in 1..=2 {
            let g = [grad(p[0])];
            adam_update(&mut p, &g, &mut m, &mut v, t, 0.01);
        }
        assert!((p[0] - adam_oracle(0.5, grad, 2, 0.01)).abs() < 1e-10);
    }

    #[test]
    fn adam_first_step_is_sign() {
        let (mut p, mut m, mut v) = ([1.0, 1.0, 1.0], [0.0; 3], [0.0; 3]);
        adam_update(&mut p, &[3.0, -0.2, 1e-3], &mut m, &mut v, 1, 0.01);
        assert!((p[0] - 0.99).abs() < 1e-8);
        assert!((p[1] - 1.01).abs() < 1e-8);
        assert!((p[2] - 0.99).abs() < 1e-7);
    }

    #[test]
    fn adadelta_first_step() {
        for g in [0.5, -2.0, 1e-3] {
            let (mut p, mut sq, mut acc) = ([0.0], [0.0], [0.0]);
            adadelta_update(&mut p, &[g], &mut sq, &mut acc, 0.03);
            let expected = 0.03 * 1e-6f64.sqrt() / (0.1 * g * g + 1e-6).sqrt() * g;
            assert!((p[0] + expected).abs() < 1e-15);
        }
    }

    fn graph() -> ModelGraph<f32> {
        let cfg = ModelConfig { num_classes: 3, input_size: 32, channel_scale: ChannelScale::new(1, 16).unwrap(), ..Default::default() };
        ModelGraph::new(cfg, 0).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        for kind in [OptimizerKind::Adam, OptimizerKind::Adadelta] {
            let mut g = graph();
            let before: Vec<_> = g.params().iter().map(|p| p.value.clone()).collect();
            let mut opt = Optimizer::new(kind, 0.01).unwrap();
            opt.step(g.params_mut()).unwrap();
            assert_eq!(opt.steps(), 1);
            for (p, b) in g.params().iter().zip(&before) {
                assert_eq!(&p.value, b);
            }
        }
    }

    #[test]
    fn state_mirrors_parameters() {
        let mut g = graph();
        let mut opt = Optimizer::new(OptimizerKind::Adadelta, 0.03).unwrap();
        opt.step(g.params_mut()).unwrap();
        let lens: Vec<usize> = g.params().iter().filter(|p| p.is_trainable()).map(|p| p.value.len()).collect();
        assert_eq!(opt.state_lens(), lens);
    }

    #[test]
    fn parses_kinds() {
        assert_eq!("Adam".parse::<OptimizerKind>().unwrap(), OptimizerKind::Adam);
        assert_eq!(OptimizerKind::Adadelta.to_string(), "adadelta");
        assert!("sgd".parse::<OptimizerKind>().is_err());
        assert!(Optimizer::new(OptimizerKind::Adam, 0.0).is_err());
    }
}
