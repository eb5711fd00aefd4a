use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named tensors packed back to back into one flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    total: usize,
}

impl Layout {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Range<usize> {
        let spec = TensorSpec {
            name: name.into(),
            shape,
        };
        let range = self.total..self.total + spec.len();
        self.total += spec.len();
        self.tensors.push(spec);
        range
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn ranges(&self) -> Vec<(String, Range<usize>)> {
        let mut at = 0;
        self.tensors
            .iter()
            .map(|t| {
                let r = at..at + t.len();
                at = r.end;
                (t.name.clone(), r)
            })
            .collect()
    }
}

/// Fills `dst` with zero-mean Gaussian values of standard deviation `std`.
pub fn fill_normal<F: Scalar, R: Rng + ?Sized>(dst: &mut [F], std: f64, rng: &mut R) {
    for v in dst {
        let z: f64 = rng.sample(StandardNormal);
        *v = F::of(z * std);
    }
}
