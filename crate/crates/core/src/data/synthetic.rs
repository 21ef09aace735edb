//! Gaussian-cluster domains under affine covariate shift.
//!
//! A domain draws class-conditional samples around shared class means, maps
//! them through `translation + R(angle) * (scale .* x)` (rotation acts on the
//! first two coordinates), adds isotropic noise and optionally permutes the
//! feature axes. Labels are untouched by the transform.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseTask {
    /// One mean per class, all of the same dimension.
    pub means: Vec<Vec<f64>>,
    /// Within-class standard deviation.
    pub sigma: f64,
}

impl BaseTask {
    /// Class means on the unit circle at the given angles (degrees).
    pub fn circle(angles_deg: &[f64], sigma: f64) -> Self {
        BaseTask {
            means: angles_deg
                .iter()
                .map(|a| {
                    let r = a.to_radians();
                    vec![r.cos(), r.sin()]
                })
                .collect(),
            sigma,
        }
    }

    /// Three classes at 90, 210 and 330 degrees with sigma 0.35.
    pub fn three_class() -> Self {
        Self::circle(&[90.0, 210.0, 330.0], 0.35)
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map(Vec::len).unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.means.len() < 2 {
            return Err(Error::Config("base task needs at least 2 classes".into()));
        }
        let d = self.dim();
        if d == 0 || self.means.iter().any(|m| m.len() != d || m.iter().any(|v| !v.is_finite())) {
            return Err(Error::Config("class means must be finite and share one positive dimension".into()));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Transform {
    pub rotation_deg: f64,
    /// Per-axis scale; empty means all ones.
    pub scale: Vec<f64>,
    /// Empty means the origin.
    pub translation: Vec<f64>,
    pub permutation: Option<Vec<usize>>,
}

impl Default for Transform {
    fn default() -> Self {
        Transform {
            rotation_deg: 0.0,
            scale: Vec::new(),
            translation: Vec::new(),
            permutation: None,
        }
    }
}

impl Transform {
    pub fn rotation(deg: f64) -> Self {
        Transform {
            rotation_deg: deg,
            ..Default::default()
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if !self.rotation_deg.is_finite() {
            return Err(Error::Config("rotation angle must be finite".into()));
        }
        if d < 2 && self.rotation_deg.rem_euclid(360.0) != 0.0 {
            return Err(Error::Config("rotation needs at least 2 feature dimensions".into()));
        }
        if !self.scale.is_empty() {
            if self.scale.len() != d {
                return Err(Error::Config(format!("scale has {} entries for {d} dimensions", self.scale.len())));
            }
            if self.scale.iter().any(|s| !s.is_finite() || *s == 0.0) {
                return Err(Error::Config(format!(
                    "degenerate transform: scale {:?} is not invertible",
                    self.scale
                )));
            }
        }
        if !self.translation.is_empty() && (self.translation.len() != d || self.translation.iter().any(|t| !t.is_finite())) {
            return Err(Error::Config(format!("translation must have {d} finite entries")));
        }
        if let Some(p) = &self.permutation {
            let mut seen = vec![false; d];
            if p.len() != d || p.iter().any(|&i| i >= d || std::mem::replace(&mut seen[i], true)) {
                return Err(Error::Config(format!("{p:?} is not a permutation of {d} axes")));
            }
        }
        Ok(())
    }

    /// Applies the affine map (without permutation) to one point in place.
    pub fn apply_affine(&self, x: &mut [f64]) {
        if !self.scale.is_empty() {
            for (v, s) in x.iter_mut().zip(&self.scale) {
                *v *= s;
            }
        }
        if x.len() >= 2 && self.rotation_deg != 0.0 {
            let (s, c) = self.rotation_deg.to_radians().sin_cos();
            let (a, b) = (x[0], x[1]);
            x[0] = c * a - s * b;
            x[1] = s * a + c * b;
        }
        if !self.translation.is_empty() {
            for (v, t) in x.iter_mut().zip(&self.translation) {
                *v += t;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub base: BaseTask,
    pub transform: Transform,
    pub noise_sigma: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Samples a labeled domain. Labels cycle through the classes, so class
/// counts differ by at most one, and are then shuffled.
pub fn make_domain(spec: &DomainSpec) -> Result<Dataset> {
    spec.base.validate()?;
    let d = spec.base.dim();
    let k = spec.base.num_classes();
    spec.transform.validate(d)?;
    if spec.n_samples < k {
        return Err(Error::Config(format!("{} samples cannot cover {k} classes", spec.n_samples)));
    }
    if !(spec.noise_sigma.is_finite() && spec.noise_sigma >= 0.0) {
        return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", spec.noise_sigma)));
    }
    let mut rng = seeded(spec.seed);
    let mut labels: Vec<usize> = (0..spec.n_samples).map(|i| i % k).collect();
    labels.shuffle(&mut rng);

    let mut values = Vec::with_capacity(spec.n_samples * d);
    let mut x = vec![0.0; d];
    for &y in &labels {
        for (v, m) in x.iter_mut().zip(&spec.base.means[y]) {
            let z: f64 = rng.sample(StandardNormal);
            *v = m + spec.base.sigma * z;
        }
        spec.transform.apply_affine(&mut x);
        for v in x.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += spec.noise_sigma * z;
        }
        match &spec.transform.permutation {
            Some(p) => values.extend(p.iter().map(|&j| x[j])),
            None => values.extend_from_slice(&x),
        }
    }
    let features = Tensor::new(vec![spec.n_samples, d], values)?;
    Dataset::new(features, Some(labels), spec.name.clone(), k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(transform: Transform, noise: f64) -> DomainSpec {
        DomainSpec {
            name: "d".into(),
            base: BaseTask::three_class(),
            transform,
            noise_sigma: noise,
            n_samples: 100,
            seed: 11,
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let s = spec(Transform::rotation(25.0), 0.1);
        assert_eq!(make_domain(&s).unwrap(), make_domain(&s).unwrap());
        let other = DomainSpec { seed: 12, ..s.clone() };
        assert_ne!(make_domain(&s).unwrap(), make_domain(&other).unwrap());
    }

    #[test]
    fn balanced_labels() {
        let ds = make_domain(&spec(Transform::default(), 0.0)).unwrap();
        let counts = ds.class_counts().unwrap();
        assert_eq!(counts.iter().sum::<usize>(), 100);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn zero_scatter_identity_lands_on_means() {
        let mut s = spec(Transform::default(), 0.0);
        s.base.sigma = 0.0;
        let ds = make_domain(&s).unwrap();
        for (i, &y) in ds.labels().unwrap().iter().enumerate() {
            assert_eq!(ds.features().row(i), s.base.means[y].as_slice());
        }
    }

    #[test]
    fn full_turn_is_identity() {
        let a = make_domain(&spec(Transform::default(), 0.2)).unwrap();
        let b = make_domain(&spec(Transform::rotation(360.0), 0.2)).unwrap();
        assert_eq!(a.labels(), b.labels());
        for (x, y) in a.features().values().iter().zip(b.features().values()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn half_turn_negates_about_translation() {
        let t = vec![0.7, -1.3];
        let base = Transform {
            translation: t.clone(),
            scale: vec![1.5, 0.5],
            ..Default::default()
        };
        let half = Transform {
            rotation_deg: 180.0,
            ..base.clone()
        };
        let a = make_domain(&spec(base, 0.0)).unwrap();
        let b = make_domain(&spec(half, 0.0)).unwrap();
        for i in 0..a.len() {
            let (p, q) = (a.features().row(i), b.features().row(i));
            for j in 0..2 {
                assert!(((q[j] - t[j]) + (p[j] - t[j])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permutation_swaps_axes() {
        let a = make_domain(&spec(Transform::default(), 0.0)).unwrap();
        let p = Transform {
            permutation: Some(vec![1, 0]),
            ..Default::default()
        };
        let b = make_domain(&spec(p, 0.0)).unwrap();
        for i in 0..a.len() {
            assert_eq!(a.features().row(i)[0], b.features().row(i)[1]);
        }
    }

    #[test]
    fn degenerate_transforms_rejected() {
        let bad = Transform {
            scale: vec![1.0, 0.0],
            ..Default::default()
        };
        assert!(matches!(make_domain(&spec(bad, 0.0)), Err(Error::Config(_))));
        let bad = Transform {
            permutation: Some(vec![0, 0]),
            ..Default::default()
        };
        assert!(matches!(make_domain(&spec(bad, 0.0)), Err(Error::Config(_))));
        let mut s = spec(Transform::default(), 0.0);
        s.n_samples = 2;
        assert!(matches!(make_domain(&s), Err(Error::Config(_))));
    }

    #[test]
    fn transforms_preserve_label_marginals() {
        let a = make_domain(&spec(Transform::default(), 0.0)).unwrap();
        let b = make_domain(&spec(Transform::rotation(60.0), 0.3)).unwrap();
        assert_eq!(a.class_counts(), b.class_counts());
    }
}
