//! Fusion of the global image descriptor with local features.
//!
//! At every position `(u, v)` the fused feature is
//! `relu(b + W [g; local(u, v)])`: the global vector `g` is concatenated to
//! the local feature vector and passed through one shared affine map. Since
//! the same `g` is used everywhere, the layer has no cross-position terms.

use crate::error::{Error, Result};
use crate::ops::{self, Window};
use crate::tensor::{Scalar, Tensor};

/// Output of the global path: the 512-wide feature feeding the classifier
/// and the 256-wide vector that gets broadcast during fusion (widths at
/// channel scale 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalFeature<T> {
    pub g512: Vec<T>,
    pub g256: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<T> {
    /// `out x (global + local)`; the first columns act on the global vector.
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> FusionParams<T> {
    pub fn new(weight: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        if weight.shape().len() != 2 || weight.dim(0) != bias.len() {
            return Err(Error::Shape(format!(
                "fusion weight {:?} does not match bias of length {}",
                weight.shape(),
                bias.len()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }
}

/// Fuses `global.g256` into every position of `local` (`C x H x W`).
pub fn fuse<T: Scalar>(global: &GlobalFeature<T>, local: &Tensor<T>, p: &FusionParams<T>) -> Result<Tensor<T>> {
    if local.shape().len() != 3 {
        return Err(Error::Shape(format!("local features must be C x H x W, got {:?}", local.shape())));
    }
    let (c, h, w) = (local.dim(0), local.dim(1), local.dim(2));
    let g = global.g256.len();
    if p.in_channels() != g + c {
        return Err(Error::Shape(format!(
            "fusion weight expects {} input channels, got {g} global + {c} local",
            p.in_channels()
        )));
    }
    let gvec = Tensor::from_vec(&[1, g], global.g256.clone())?;
    let cat = ops::concat_channels(&ops::broadcast_spatial(&gvec, h, w), &local.clone().reshape(&[1, c, h, w])?);
    let kernel = p.weight.clone().reshape(&[p.out_channels(), g + c, 1, 1])?;
    let mut y = ops::conv2d(&cat, &kernel, Some(&p.bias), Window::new(1, 1, 0));
    ops::relu_inplace(&mut y);
    y.reshape(&[p.out_channels(), h, w])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn global(g: Vec<f64>) -> GlobalFeature<f64> {
        GlobalFeature { g512: Vec::new(), g256: g }
    }

    #[test]
    fn zero_weight_gives_relu_of_bias_everywhere() {
        let p = FusionParams::new(Tensor::zeros(&[3, 5]), vec![0.4, -1.0, 2.0]).unwrap();
        let local = Tensor::from_vec(&[3, 2, 2], (0..12).map(f64::from).collect()).unwrap();
        let y = fuse(&global(vec![1.0, -2.0]), &local, &p).unwrap();
        assert_eq!(y.shape(), &[3, 2, 2]);
        assert_eq!(y.data(), &[0.4, 0.4, 0.4, 0.4, 0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn single_position_matches_hand_arithmetic() {
        // W = [0.5, -1, 2, 0.25], b = 0.1, g = (1, 2), local = (3, -4):
        // 0.1 + 0.5 - 2 + 6 - 1 = 3.6
        let p = FusionParams::new(Tensor::from_vec(&[1, 4], vec![0.5, -1.0, 2.0, 0.25]).unwrap(), vec![0.1]).unwrap();
        let local = Tensor::from_vec(&[2, 1, 1], vec![3.0, -4.0]).unwrap();
        let y = fuse(&global(vec![1.0, 2.0]), &local, &p).unwrap();
        assert!((y.data()[0] - 3.6).abs() < 1e-12);

        // Negative pre-activation is clipped.
        let p = FusionParams::new(Tensor::from_vec(&[1, 4], vec![-0.5, -1.0, 2.0, 0.25]).unwrap(), vec![0.1]).unwrap();
        let y = fuse(&global(vec![1.0, 2.0]), &Tensor::from_vec(&[2, 1, 1], vec![-3.0, -4.0]).unwrap(), &p).unwrap();
        assert_eq!(y.data()[0], 0.0);
    }

    #[test]
    fn constant_local_map_gives_constant_output() {
        let weight = Tensor::from_vec(&[2, 4], vec![0.3, -0.2, 0.7, 0.1, -0.4, 0.9, 0.05, 0.6]).unwrap();
        let p = FusionParams::new(weight, vec![0.05, 0.2]).unwrap();
        let local = Tensor::from_vec(&[2, 3, 3], [vec![0.8; 9], vec![-0.3; 9]].concat()).unwrap();
        for g in [vec![1.0, 0.5], vec![-2.0, 3.0]] {
            let y = fuse(&global(g), &local, &p).unwrap();
            for ch in y.data().chunks(9) {
                assert!(ch.iter().all(|&v| v == ch[0]));
            }
        }
    }

    #[test]
    fn global_change_shifts_every_position_alike() {
        // Positive pre-activations keep ReLU linear, so a change in g moves
        // all positions by the same amount.
        let weight = Tensor::from_vec(&[1, 3], vec![1.0, 0.5, 0.25]).unwrap();
        let p = FusionParams::new(weight, vec![10.0]).unwrap();
        let local = Tensor::from_vec(&[2, 1, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 4.0]).unwrap();
        let a = fuse(&global(vec![1.0]), &local, &p).unwrap();
        let b = fuse(&global(vec![3.0]), &local, &p).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((y - x - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = FusionParams::new(Tensor::zeros(&[1, 4]), vec![0.0]).unwrap();
        let local = Tensor::zeros(&[3, 2, 2]);
        assert!(fuse(&global(vec![1.0, 2.0]), &local, &p).is_err());
        assert!(FusionParams::<f64>::new(Tensor::zeros(&[2, 4]), vec![0.0]).is_err());
    }
}
