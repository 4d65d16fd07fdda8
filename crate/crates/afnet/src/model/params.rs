use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, BRANCH_KW, CONV1_KH, CONV1_KW};
use crate::error::{Error, Result};
use crate::numeric::params::ParamBlocks;
use crate::numeric::tensor::{Scalar, Tensor};

/// One channel-attention fusion module: shared squeeze W1 (C x d), two
/// expand maps W2, W3 (d x C) producing the attention logits, and the
/// fixed softmax factor lambda. No biases anywhere, so the trainable
/// value count is exactly 3*C*d.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<F> {
    pub w1: Tensor<F>,
    pub w2: Tensor<F>,
    pub w3: Tensor<F>,
    pub lambda: F,
}

impl<F: Scalar> FusionParams<F> {
    pub fn channels(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn squeeze_dim(&self) -> usize {
        self.w1.shape()[1]
    }

    /// Trainable values stored in this module (lambda is a fixed
    /// hyperparameter, not a parameter).
    pub fn value_count(&self) -> usize {
        self.w1.len() + self.w2.len() + self.w3.len()
    }
}

/// One adaptive-fusion unit: two grouped branch kernels (the large branch
/// is dilated), branch fusion with lambda=1, and input fusion with
/// lambda=2.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitParams<F> {
    pub small: Tensor<F>,
    pub large: Tensor<F>,
    pub fusion1: FusionParams<F>,
    pub fusion2: FusionParams<F>,
}

/// The full parameter set. Checkpoints, Adam state, and gradient
/// flattening all follow the block order of [`ParamBlocks`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<F> {
    pub conv1_kernels: Tensor<F>,
    pub conv1_bias: Tensor<F>,
    pub units: Vec<UnitParams<F>>,
    pub head_weights: Tensor<F>,
    pub head_bias: Tensor<F>,
}

fn he_uniform<F: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<F> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| F::from_f64(rng.gen_range(-bound..bound)))
}

fn fusion_init<F: Scalar>(
    rng: &mut ChaCha8Rng,
    c: usize,
    d: usize,
    lambda: f64,
) -> FusionParams<F> {
    FusionParams {
        w1: he_uniform(rng, &[c, d], c),
        w2: he_uniform(rng, &[d, c], d),
        w3: he_uniform(rng, &[d, c], d),
        lambda: F::from_f64(lambda),
    }
}

impl<F: Scalar> NetParams<F> {
    /// He-uniform initialization (bound sqrt(6/fan_in)) for all kernels
    /// and dense maps, zero biases. Draw order is fixed: conv1, then each
    /// unit (small, large, fusion1 W1/W2/W3, fusion2 W1/W2/W3), then the
    /// head; identical seeds give identical parameters.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.channels;
        let d = cfg.squeeze_dim();
        let cpg = c / cfg.groups;

        let conv1_kernels = he_uniform(&mut rng, &[CONV1_KH, CONV1_KW, 1, c], CONV1_KH * CONV1_KW);
        let conv1_bias = Tensor::zeros(&[c]);
        let mut units = Vec::with_capacity(cfg.units);
        for _ in 0..cfg.units {
            units.push(UnitParams {
                small: he_uniform(&mut rng, &[1, BRANCH_KW, cpg, c], BRANCH_KW * cpg),
                large: he_uniform(&mut rng, &[1, BRANCH_KW, cpg, c], BRANCH_KW * cpg),
                fusion1: fusion_init(&mut rng, c, d, 1.0),
                fusion2: fusion_init(&mut rng, c, d, 2.0),
            });
        }
        let head_weights = he_uniform(&mut rng, &[c, cfg.classes], c);
        let head_bias = Tensor::zeros(&[cfg.classes]);
        Ok(NetParams {
            conv1_kernels,
            conv1_bias,
            units,
            head_weights,
            head_bias,
        })
    }

    /// All-zero parameters with the same structure (gradient buffers).
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let d = cfg.squeeze_dim();
        let cpg = c / cfg.groups;
        let zero_fusion = |lambda: f64| FusionParams {
            w1: Tensor::zeros(&[c, d]),
            w2: Tensor::zeros(&[d, c]),
            w3: Tensor::zeros(&[d, c]),
            lambda: F::from_f64(lambda),
        };
        Ok(NetParams {
            conv1_kernels: Tensor::zeros(&[CONV1_KH, CONV1_KW, 1, c]),
            conv1_bias: Tensor::zeros(&[c]),
            units: (0..cfg.units)
                .map(|_| UnitParams {
                    small: Tensor::zeros(&[1, BRANCH_KW, cpg, c]),
                    large: Tensor::zeros(&[1, BRANCH_KW, cpg, c]),
                    fusion1: zero_fusion(1.0),
                    fusion2: zero_fusion(2.0),
                })
                .collect(),
            head_weights: Tensor::zeros(&[c, cfg.classes]),
            head_bias: Tensor::zeros(&[cfg.classes]),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let zero_fusion = |f: &FusionParams<F>| FusionParams {
            w1: f.w1.zeros_like(),
            w2: f.w2.zeros_like(),
            w3: f.w3.zeros_like(),
            lambda: f.lambda,
        };
        NetParams {
            conv1_kernels: self.conv1_kernels.zeros_like(),
            conv1_bias: self.conv1_bias.zeros_like(),
            units: self
                .units
                .iter()
                .map(|u| UnitParams {
                    small: u.small.zeros_like(),
                    large: u.large.zeros_like(),
                    fusion1: zero_fusion(&u.fusion1),
                    fusion2: zero_fusion(&u.fusion2),
                })
                .collect(),
            head_weights: self.head_weights.zeros_like(),
            head_bias: self.head_bias.zeros_like(),
        }
    }

    /// Checks that the stored shapes match the config exactly.
    pub fn check_config(&self, cfg: &ModelConfig) -> Result<()> {
        cfg.validate()?;
        let c = cfg.channels;
        let d = cfg.squeeze_dim();
        let cpg = c / cfg.groups;
        let expect = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::shape(format!("params do not match config: {what}")))
            }
        };
        expect(
            self.conv1_kernels.shape() == [CONV1_KH, CONV1_KW, 1, c],
            "first conv kernels",
        )?;
        expect(self.conv1_bias.shape() == [c], "first conv bias")?;
        expect(self.units.len() == cfg.units, "unit count")?;
        for (i, u) in self.units.iter().enumerate() {
            let tag = format!("unit{}", i + 1);
            expect(
                u.small.shape() == [1, BRANCH_KW, cpg, c],
                &format!("{tag} small"),
            )?;
            expect(
                u.large.shape() == [1, BRANCH_KW, cpg, c],
                &format!("{tag} large"),
            )?;
            for (f, name) in [(&u.fusion1, "fusion1"), (&u.fusion2, "fusion2")] {
                expect(f.w1.shape() == [c, d], &format!("{tag} {name} w1"))?;
                expect(f.w2.shape() == [d, c], &format!("{tag} {name} w2"))?;
                expect(f.w3.shape() == [d, c], &format!("{tag} {name} w3"))?;
            }
            expect(
                u.fusion1.lambda == F::one() && u.fusion2.lambda == F::from_f64(2.0),
                &format!("{tag} lambda values"),
            )?;
        }
        expect(
            self.head_weights.shape() == [c, cfg.classes],
            "head weights",
        )?;
        expect(self.head_bias.shape() == [cfg.classes], "head bias")?;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.value_count()
    }
}

impl<F: Scalar> ParamBlocks<F> for NetParams<F> {
    fn blocks(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out: Vec<(String, &Tensor<F>)> = vec![
            ("conv1.kernels".to_string(), &self.conv1_kernels),
            ("conv1.bias".to_string(), &self.conv1_bias),
        ];
        for (i, u) in self.units.iter().enumerate() {
            let n = i + 1;
            out.push((format!("unit{n}.small"), &u.small));
            out.push((format!("unit{n}.large"), &u.large));
            out.push((format!("unit{n}.fusion1.w1"), &u.fusion1.w1));
            out.push((format!("unit{n}.fusion1.w2"), &u.fusion1.w2));
            out.push((format!("unit{n}.fusion1.w3"), &u.fusion1.w3));
            out.push((format!("unit{n}.fusion2.w1"), &u.fusion2.w1));
            out.push((format!("unit{n}.fusion2.w2"), &u.fusion2.w2));
            out.push((format!("unit{n}.fusion2.w3"), &u.fusion2.w3));
        }
        out.push(("head.weights".to_string(), &self.head_weights));
        out.push(("head.bias".to_string(), &self.head_bias));
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out: Vec<(String, &mut Tensor<F>)> = vec![
            ("conv1.kernels".to_string(), &mut self.conv1_kernels),
            ("conv1.bias".to_string(), &mut self.conv1_bias),
        ];
        for (i, u) in self.units.iter_mut().enumerate() {
            let n = i + 1;
            out.push((format!("unit{n}.small"), &mut u.small));
            out.push((format!("unit{n}.large"), &mut u.large));
            out.push((format!("unit{n}.fusion1.w1"), &mut u.fusion1.w1));
            out.push((format!("unit{n}.fusion1.w2"), &mut u.fusion1.w2));
            out.push((format!("unit{n}.fusion1.w3"), &mut u.fusion1.w3));
            out.push((format!("unit{n}.fusion2.w1"), &mut u.fusion2.w1));
            out.push((format!("unit{n}.fusion2.w2"), &mut u.fusion2.w2));
            out.push((format!("unit{n}.fusion2.w3"), &mut u.fusion2.w3));
        }
        out.push(("head.weights".to_string(), &mut self.head_weights));
        out.push(("head.bias".to_string(), &mut self.head_bias));
        out
    }
}
