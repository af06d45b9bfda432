//! Flat parameter storage. Every layer owns named slices of one `Vec<f64>`,
//! which keeps the optimizer, gradient checks and checkpoints trivial.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Uniform init bound; zero means the slice starts at zero.
    pub init_bound: f64,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init_bound: f64) -> Range<usize> {
        let spec = ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
            init_bound,
        };
        debug_assert!(
            self.specs.iter().all(|s| s.name != spec.name),
            "duplicate parameter {}",
            spec.name
        );
        let r = spec.range();
        self.total += spec.len();
        self.specs.push(spec);
        r
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn find(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Zero-mean uniform init, scaled per slice.
    pub fn init<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.total];
        for spec in &self.specs {
            if spec.init_bound > 0.0 {
                for v in &mut out[spec.range()] {
                    *v = rng.gen_range(-spec.init_bound..spec.init_bound);
                }
            }
        }
        out
    }
}

/// He-uniform bound for layers followed by a rectifier.
pub fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// LeCun-uniform bound for linear outputs.
pub fn lecun_bound(fan_in: usize) -> f64 {
    (3.0 / fan_in as f64).sqrt()
}
