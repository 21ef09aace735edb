//! SGD with momentum and weight decay, plus the annealed learning-rate
//! schedule `eta0 * (1 + 10 p)^-0.75`.

use serde::{Deserialize, Serialize};

use super::{Gradients, ModelParams, Partitions};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub eta0: f64,
    pub batch_size: usize,
    /// Client training budget in epochs; rounds sweeps divide it across rounds.
    pub total_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            eta0: 0.005,
            batch_size: 128,
            total_epochs: 120,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0.is_finite() && self.eta0 > 0.0) {
            return Err(Error::Config(format!("eta0 must be positive, got {}", self.eta0)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.total_epochs == 0 {
            return Err(Error::Config("total_epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0,1), got {}", self.momentum)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        Ok(())
    }
}

pub fn lr_schedule(eta0: f64, progress: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::Input(format!("progress {progress} outside [0,1]")));
    }
    Ok(eta0 * (1.0 + 10.0 * progress).powf(-0.75))
}

/// Momentum SGD. The velocity buffer is allocated on the first step.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Option<Gradients>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: None,
        }
    }

    pub fn from_hyper(hyper: &HyperParams) -> Self {
        Self::new(hyper.momentum, hyper.weight_decay)
    }

    /// `v <- momentum * v + (g + weight_decay * theta)`, `theta <- theta - rate * v`,
    /// applied to the selected partitions only. A non-finite gradient aborts
    /// the step with both parameters and velocity untouched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, rate: f64, partitions: Partitions) -> Result<()> {
        let congruent = |p: &[Tensor], g: &[Tensor]| p.len() == g.len() && p.iter().zip(g).all(|(a, b)| a.shape() == b.shape());
        if !congruent(&params.generator, &grads.generator) || !congruent(&params.head, &grads.head) {
            return Err(Error::dim("sgd", "gradients are not shape-congruent with parameters"));
        }
        let selected = |gen: bool| if gen { partitions.generator() } else { partitions.head() };
        for (gen, part) in [(true, &grads.generator), (false, &grads.head)] {
            if selected(gen) && !part.iter().all(Tensor::is_finite) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in {} partition",
                    if gen { "generator" } else { "head" }
                )));
            }
        }
        if !rate.is_finite() {
            return Err(Error::Numerical(format!("non-finite learning rate {rate}")));
        }
        let velocity = self.velocity.get_or_insert_with(|| Gradients::zeros_like(params));
        let (mu, wd) = (self.momentum, self.weight_decay);
        let pairs = [
            (
                partitions.generator(),
                &mut params.generator,
                &grads.generator,
                &mut velocity.generator,
            ),
            (partitions.head(), &mut params.head, &grads.head, &mut velocity.head),
        ];
        for (on, ps, gs, vs) in pairs {
            if !on {
                continue;
            }
            for ((p, g), v) in ps.iter_mut().zip(gs).zip(vs.iter_mut()) {
                for ((theta, &grad), vel) in p.values_mut().iter_mut().zip(g.values()).zip(v.values_mut()) {
                    let d = if wd != 0.0 { grad + wd * *theta } else { grad };
                    *vel = mu * *vel + d;
                    *theta -= rate * *vel;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, LayerSpec};

    fn scalar_model(theta: f64) -> ModelParams {
        let spec = LayerSpec {
            input_dim: 1,
            generator: vec![Layer::Linear { inputs: 1, outputs: 1 }],
            head: vec![Layer::Linear { inputs: 1, outputs: 2 }],
        };
        let mut p = ModelParams::zeros(&spec).unwrap();
        p.generator[0].values_mut()[0] = theta;
        p
    }

    fn grad_for(p: &ModelParams, g: f64) -> Gradients {
        let mut grads = Gradients::zeros_like(p);
        grads.generator[0].values_mut()[0] = g;
        grads
    }

    #[test]
    fn schedule_values() {
        assert_eq!(lr_schedule(0.005, 0.0).unwrap(), 0.005);
        // 0.005 * 11^-0.75 = 8.2780013038085...e-4 (mpmath, 30 digits)
        assert!((lr_schedule(0.005, 1.0).unwrap() - 8.278_001_303_808_509e-4).abs() < 1e-15);
        let a = lr_schedule(0.005, 0.37).unwrap();
        let b = lr_schedule(0.010, 0.37).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-18);
        assert!(lr_schedule(0.005, -0.01).is_err());
        assert!(lr_schedule(0.005, 1.01).is_err());
    }

    #[test]
    fn plain_step_arithmetic() {
        let mut p = scalar_model(1.0);
        let g = grad_for(&p, 0.5);
        Sgd::new(0.0, 0.0).step(&mut p, &g, 0.1, Partitions::Both).unwrap();
        assert_eq!(p.generator[0].values()[0], 0.95);
    }

    #[test]
    fn zero_rate_is_noop() {
        let mut p = scalar_model(1.0);
        let before = p.clone();
        let g = grad_for(&p, 0.5);
        Sgd::new(0.9, 0.0).step(&mut p, &g, 0.0, Partitions::Both).unwrap();
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn momentum_two_steps_match_unrolled() {
        // v1 = g1 + wd*t0; t1 = t0 - r v1; v2 = mu v1 + g2 + wd*t1; t2 = t1 - r v2
        let (t0, g1, g2, r, mu, wd) = (1.0f64, 0.5f64, -0.25f64, 0.1f64, 0.9f64, 0.01f64);
        let v1 = g1 + wd * t0;
        let t1 = t0 - r * v1;
        let v2 = mu * v1 + (g2 + wd * t1);
        let t2 = t1 - r * v2;

        let mut p = scalar_model(t0);
        let mut opt = Sgd::new(mu, wd);
        let g = grad_for(&p, g1);
        opt.step(&mut p, &g, r, Partitions::Both).unwrap();
        assert_eq!(p.generator[0].values()[0], t1);
        let g = grad_for(&p, g2);
        opt.step(&mut p, &g, r, Partitions::Both).unwrap();
        assert_eq!(p.generator[0].values()[0], t2);
        assert!((t2 - 0.927_151).abs() < 1e-12);
    }

    #[test]
    fn frozen_partition_untouched() {
        let mut p = scalar_model(1.0);
        p.head[0].values_mut()[0] = 0.3;
        let before = p.clone();
        let mut g = grad_for(&p, 0.5);
        g.head[0].values_mut()[0] = 1.0;
        Sgd::new(0.9, 5e-4).step(&mut p, &g, 0.1, Partitions::Generator).unwrap();
        assert_eq!(p.head_hash(), before.head_hash());
        assert_ne!(p.generator_hash(), before.generator_hash());
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = scalar_model(1.0);
        let before = p.clone();
        let g = grad_for(&p, f64::NAN);
        let err = Sgd::new(0.9, 0.0).step(&mut p, &g, 0.1, Partitions::Both).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn hyper_validation() {
        assert!(HyperParams::default().validate().is_ok());
        let bad = HyperParams {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = HyperParams {
            eta0: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = HyperParams {
            momentum: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
