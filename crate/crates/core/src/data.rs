//! Deterministic synthetic datasets.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{flow_to_convergence, KnownField};
use crate::rng::{derive_seed, seeded, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Moons,
    Circles,
    Blobs,
    Spirals,
    /// Initial conditions of `h' = h^3 - h`, labeled 0 inside the basin
    /// `(-1, 1)` of the origin and 1 outside.
    System1d,
    /// Initial conditions of the reversed Van der Pol field (`mu = 1`),
    /// labeled 0 when the simulation converges to the origin.
    SystemVdp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub samples: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_classes")]
    pub classes: usize,
    pub seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_classes() -> usize {
    2
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_test_fraction() -> f64 {
    0.2
}

/// Margin added around the data bounding box to form the attack domain.
pub const DOMAIN_MARGIN: f64 = 0.5;

impl DatasetSpec {
    pub fn moons(samples: usize, noise: f64, seed: u64) -> Self {
        Self {
            kind: DatasetKind::Moons,
            samples,
            noise,
            classes: 2,
            seed,
            train_fraction: 0.8,
            test_fraction: 0.2,
        }
    }

    pub fn classes(&self) -> usize {
        match self.kind {
            DatasetKind::Blobs | DatasetKind::Spirals => self.classes,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.classes();
        if l < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {l}")));
        }
        if self.samples < 10 * l {
            return Err(Error::Config(format!("need at least {} samples for {l} classes, got {}", 10 * l, self.samples)));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config(format!("noise must be nonnegative, got {}", self.noise)));
        }
        let (a, b) = (self.train_fraction, self.test_fraction);
        if !(a > 0.0 && b >= 0.0) || (a + b - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("split fractions must be positive and sum to 1, got {a} + {b}")));
        }
        Ok(())
    }
}

/// Labeled points, one row per example.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let d = self.dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.x.row_slice(i));
        }
        Dataset {
            x: Tensor::matrix(idx.len(), d, data).expect("rows copied from a finite tensor"),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &y in &self.y {
            c[y] += 1;
        }
        c
    }

    /// Per-dimension bounding box of the inputs.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|j| {
                (0..self.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    let v = self.x.get(r, j);
                    (lo.min(v), hi.max(v))
                })
            })
            .collect()
    }
}

/// Train/test split plus the input domain used to clip perturbations.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    pub domain: Vec<(f64, f64)>,
}

fn per_class(n: usize, classes: usize) -> Vec<usize> {
    (0..classes).map(|k| n / classes + usize::from(k < n % classes)).collect()
}

fn jitter(rng: &mut Rng, noise: f64, p: &mut [f64]) {
    if noise > 0.0 {
        let g = Normal::new(0.0, noise).expect("noise checked nonnegative");
        for v in p {
            *v += g.sample(rng);
        }
    }
}

fn linspace(k: usize, n: usize, hi: f64) -> f64 {
    if n <= 1 {
        0.0
    } else {
        hi * k as f64 / (n - 1) as f64
    }
}

/// All points in generation order (class by class), before splitting.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let l = spec.classes();
    let counts = per_class(spec.samples, l);
    let mut rng = seeded(derive_seed(spec.seed, 0));
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(spec.samples);
    let mut labels = Vec::with_capacity(spec.samples);
    use std::f64::consts::PI;
    match spec.kind {
        DatasetKind::Moons => {
            for (class, &n) in counts.iter().enumerate() {
                for k in 0..n {
                    let t = linspace(k, n, PI);
                    let mut p = if class == 0 {
                        vec![t.cos(), t.sin()]
                    } else {
                        vec![1.0 - t.cos(), 0.5 - t.sin()]
                    };
                    jitter(&mut rng, spec.noise, &mut p);
                    rows.push(p);
                    labels.push(class);
                }
            }
        }
        DatasetKind::Circles => {
            for (class, &n) in counts.iter().enumerate() {
                let r = if class == 0 { 1.0 } else { 0.5 };
                for k in 0..n {
                    let t = 2.0 * PI * k as f64 / n as f64;
                    let mut p = vec![r * t.cos(), r * t.sin()];
                    jitter(&mut rng, spec.noise, &mut p);
                    rows.push(p);
                    labels.push(class);
                }
            }
        }
        DatasetKind::Blobs => {
            let std = if spec.noise > 0.0 { spec.noise } else { 0.3 };
            let g = Normal::new(0.0, std).expect("positive std");
            for (class, &n) in counts.iter().enumerate() {
                let t = 2.0 * PI * class as f64 / l as f64;
                let center = [2.0 * t.cos(), 2.0 * t.sin()];
                for _ in 0..n {
                    rows.push(vec![center[0] + g.sample(&mut rng), center[1] + g.sample(&mut rng)]);
                    labels.push(class);
                }
            }
        }
        DatasetKind::Spirals => {
            for (class, &n) in counts.iter().enumerate() {
                let phase = 2.0 * PI * class as f64 / l as f64;
                for k in 0..n {
                    let r = 0.2 + 1.8 * k as f64 / n.max(1) as f64;
                    let t = phase + 1.75 * PI * k as f64 / n.max(1) as f64;
                    let mut p = vec![r * t.cos(), r * t.sin()];
                    jitter(&mut rng, spec.noise, &mut p);
                    rows.push(p);
                    labels.push(class);
                }
            }
        }
        DatasetKind::System1d => {
            // Rejection keeps the two labels balanced.
            for (class, &n) in counts.iter().enumerate() {
                let mut got = 0;
                while got < n {
                    let h: f64 = rng.random_range(-2.0..2.0);
                    if usize::from(h.abs() >= 1.0) == class {
                        rows.push(vec![h]);
                        labels.push(class);
                        got += 1;
                    }
                }
            }
        }
        DatasetKind::SystemVdp => {
            let field = KnownField::ReversedVanDerPol { mu: 1.0 };
            let origin = vec![vec![0.0, 0.0]];
            for (class, &n) in counts.iter().enumerate() {
                let mut got = 0;
                while got < n {
                    let p = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                    let inside = flow_to_convergence(&field, &p, &origin, 200.0, 0.05)?.is_some();
                    if usize::from(!inside) == class {
                        rows.push(p);
                        labels.push(class);
                        got += 1;
                    }
                }
            }
        }
    }
    Ok(Dataset {
        x: Tensor::from_rows(&rows)?,
        y: labels,
        classes: l,
    })
}

/// Generates, shuffles deterministically, and splits a dataset. Each class
/// is split separately so both halves stay balanced.
pub fn generate_splits(spec: &DatasetSpec) -> Result<Splits> {
    let all = generate_dataset(spec)?;
    let mut rng = seeded(derive_seed(spec.seed, 1));
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for class in 0..all.classes {
        let mut idx: Vec<usize> = (0..all.len()).filter(|&i| all.y[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_train = ((idx.len() as f64) * spec.train_fraction).round() as usize;
        train_idx.extend_from_slice(&idx[..n_train]);
        test_idx.extend_from_slice(&idx[n_train..]);
    }
    train_idx.shuffle(&mut rng);
    test_idx.shuffle(&mut rng);
    let domain = all
        .bounds()
        .into_iter()
        .map(|(lo, hi)| (lo - DOMAIN_MARGIN, hi + DOMAIN_MARGIN))
        .collect();
    Ok(Splits {
        train: all.subset(&train_idx),
        test: all.subset(&test_idx),
        domain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_moons_lie_on_arcs() {
        let ds = generate_dataset(&DatasetSpec::moons(100, 0.0, 3)).unwrap();
        for r in 0..ds.len() {
            let (x, y) = (ds.x.get(r, 0), ds.x.get(r, 1));
            let radius = if ds.y[r] == 0 {
                (x * x + y * y).sqrt()
            } else {
                ((x - 1.0).powi(2) + (y - 0.5).powi(2)).sqrt()
            };
            assert!((radius - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_and_balanced() {
        for kind in [
            DatasetKind::Moons,
            DatasetKind::Circles,
            DatasetKind::Blobs,
            DatasetKind::Spirals,
            DatasetKind::System1d,
        ] {
            let spec = DatasetSpec {
                kind,
                samples: 101,
                noise: 0.1,
                classes: 3,
                seed: 9,
                train_fraction: 0.75,
                test_fraction: 0.25,
            };
            let a = generate_splits(&spec).unwrap();
            assert_eq!(a, generate_splits(&spec).unwrap());
            let counts = generate_dataset(&spec).unwrap().class_counts();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{kind:?} {counts:?}");
            assert_eq!(a.train.len() + a.test.len(), 101);
        }
    }

    #[test]
    fn system_labels_follow_basin() {
        let spec = DatasetSpec {
            kind: DatasetKind::System1d,
            samples: 40,
            noise: 0.0,
            classes: 2,
            seed: 1,
            train_fraction: 0.5,
            test_fraction: 0.5,
        };
        let ds = generate_dataset(&spec).unwrap();
        for r in 0..ds.len() {
            assert_eq!(ds.y[r], usize::from(ds.x.get(r, 0).abs() >= 1.0));
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut s = DatasetSpec::moons(10, 0.1, 0);
        assert!(s.validate().is_err());
        s.samples = 100;
        s.train_fraction = 0.9;
        assert!(s.validate().is_err());
        assert!(serde_json::from_str::<DatasetSpec>(r#"{"kind":"torus","samples":100,"seed":0}"#).is_err());
    }
}
