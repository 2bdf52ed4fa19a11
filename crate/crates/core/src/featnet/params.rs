use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub blocks: usize,
    pub feature_dim: usize,
    /// Query/key width; `None` means `feature_dim / 2`.
    pub attention_dim: Option<usize>,
    pub init_seed: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { blocks: 3, feature_dim: 32, attention_dim: None, init_seed: 0 }
    }
}

impl NetConfig {
    pub fn attention_dim(&self) -> usize {
        self.attention_dim.unwrap_or((self.feature_dim / 2).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks < 1 || self.feature_dim < 4 || self.attention_dim() < 1 {
            return Err(Error::InvalidConfig("net: need blocks >= 1, feature_dim >= 4, attention_dim >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub perc_w: Array2<f64>,
    pub perc_b: Array1<f64>,
    pub norm_scale: Array1<f64>,
    pub norm_shift: Array1<f64>,
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    pub mlp_w1: Array2<f64>,
    pub mlp_b1: Array1<f64>,
    pub mlp_w2: Array2<f64>,
    pub mlp_b2: Array1<f64>,
}

/// Weights of the correspondence embedding network. The same struct holds
/// parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub config: NetConfig,
    pub lift_w: Array2<f64>,
    pub lift_b: Array1<f64>,
    pub blocks: Vec<BlockParams>,
}

pub const INPUT_DIM: usize = 6;

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-a..a))
}

impl NetParams {
    /// Glorot-uniform weights, zero biases, unit normalization scale.
    pub fn init(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let d = config.feature_dim;
        let att = config.attention_dim();
        let mut rng = seed::rng(config.init_seed);
        let lift_w = glorot(&mut rng, INPUT_DIM, d);
        let blocks = (0..config.blocks)
            .map(|_| BlockParams {
                perc_w: glorot(&mut rng, d, d),
                perc_b: Array1::zeros(d),
                norm_scale: Array1::ones(d),
                norm_shift: Array1::zeros(d),
                query: glorot(&mut rng, d, att),
                key: glorot(&mut rng, d, att),
                value: glorot(&mut rng, d, d),
                mlp_w1: glorot(&mut rng, d, d),
                mlp_b1: Array1::zeros(d),
                mlp_w2: glorot(&mut rng, d, d),
                mlp_b2: Array1::zeros(d),
            })
            .collect();
        Ok(Self { config: config.clone(), lift_w, lift_b: Array1::zeros(d), blocks })
    }

    /// Same shapes as `self`, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("lift.weight".to_string(), self.lift_w.view().into_dyn()),
            ("lift.bias".to_string(), self.lift_b.view().into_dyn()),
        ];
        for (k, b) in self.blocks.iter().enumerate() {
            let named = [
                ("perceptron.weight", b.perc_w.view().into_dyn()),
                ("perceptron.bias", b.perc_b.view().into_dyn()),
                ("norm.scale", b.norm_scale.view().into_dyn()),
                ("norm.shift", b.norm_shift.view().into_dyn()),
                ("attention.query", b.query.view().into_dyn()),
                ("attention.key", b.key.view().into_dyn()),
                ("attention.value", b.value.view().into_dyn()),
                ("mlp.weight1", b.mlp_w1.view().into_dyn()),
                ("mlp.bias1", b.mlp_b1.view().into_dyn()),
                ("mlp.weight2", b.mlp_w2.view().into_dyn()),
                ("mlp.bias2", b.mlp_b2.view().into_dyn()),
            ];
            out.extend(named.into_iter().map(|(name, t)| (format!("block{k}.{name}"), t)));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("lift.weight".to_string(), self.lift_w.view_mut().into_dyn()),
            ("lift.bias".to_string(), self.lift_b.view_mut().into_dyn()),
        ];
        for (k, b) in self.blocks.iter_mut().enumerate() {
            let named = [
                ("perceptron.weight", b.perc_w.view_mut().into_dyn()),
                ("perceptron.bias", b.perc_b.view_mut().into_dyn()),
                ("norm.scale", b.norm_scale.view_mut().into_dyn()),
                ("norm.shift", b.norm_shift.view_mut().into_dyn()),
                ("attention.query", b.query.view_mut().into_dyn()),
                ("attention.key", b.key.view_mut().into_dyn()),
                ("attention.value", b.value.view_mut().into_dyn()),
                ("mlp.weight1", b.mlp_w1.view_mut().into_dyn()),
                ("mlp.bias1", b.mlp_b1.view_mut().into_dyn()),
                ("mlp.weight2", b.mlp_w2.view_mut().into_dyn()),
                ("mlp.bias2", b.mlp_b2.view_mut().into_dyn()),
            ];
            out.extend(named.into_iter().map(|(name, t)| (format!("block{k}.{name}"), t)));
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied().collect::<Vec<_>>()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut off = 0;
        for (_, mut t) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = flat[off];
                off += 1;
            }
        }
    }

    /// Checks every tensor shape against `self.config`.
    pub fn check_shapes(&self) -> Result<()> {
        let reference = Self::init(&self.config)?;
        if reference.blocks.len() != self.blocks.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} blocks, config says {}",
                self.blocks.len(),
                reference.blocks.len()
            )));
        }
        for ((name, a), (_, b)) in self.tensors().iter().zip(reference.tensors().iter()) {
            if a.shape() != b.shape() {
                return Err(Error::ShapeMismatch(format!("{name}: {:?}, expected {:?}", a.shape(), b.shape())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        let cfg = NetConfig { init_seed: 4, ..NetConfig::default() };
        assert_eq!(NetParams::init(&cfg).unwrap(), NetParams::init(&cfg).unwrap());
        let other = NetConfig { init_seed: 5, ..cfg.clone() };
        assert_ne!(NetParams::init(&cfg).unwrap(), NetParams::init(&other).unwrap());
    }

    #[test]
    fn init_ranges_and_shapes() {
        let cfg = NetConfig { blocks: 2, feature_dim: 8, attention_dim: Some(3), init_seed: 1 };
        let p = NetParams::init(&cfg).unwrap();
        p.check_shapes().unwrap();
        assert_eq!(p.blocks[0].query.dim(), (8, 3));
        let a = (6.0f64 / 16.0).sqrt();
        assert!(p.blocks[1].mlp_w1.iter().all(|v| v.abs() <= a));
        assert!(p.blocks[0].norm_scale.iter().all(|&v| v == 1.0));
        assert!(p.blocks[0].perc_b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flat_round_trip() {
        let p = NetParams::init(&NetConfig::default()).unwrap();
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat());
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_tiny_config() {
        assert!(NetParams::init(&NetConfig { feature_dim: 2, ..NetConfig::default() }).is_err());
    }
}
