use serde::{Deserialize, Serialize};

/// `a(x) = c0 + <grad, x>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct AffineFn {
    pub c0: f64,
    pub grad: Vec<f64>,
}

impl AffineFn {
    pub fn new(c0: f64, grad: Vec<f64>) -> Self {
        AffineFn { c0, grad }
    }

    pub fn zero(dim: usize) -> Self {
        AffineFn { c0: 0.0, grad: vec![0.0; dim] }
    }

    pub fn constant(dim: usize, c0: f64) -> Self {
        AffineFn { c0, grad: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.c0 + self.grad.iter().zip(x).map(|(g, xi)| g * xi).sum::<f64>()
    }

    pub fn neg(&self) -> AffineFn {
        self.scale(-1.0)
    }

    pub fn scale(&self, s: f64) -> AffineFn {
        AffineFn { c0: self.c0 * s, grad: self.grad.iter().map(|g| g * s).collect() }
    }

    pub fn add(&self, other: &AffineFn) -> AffineFn {
        AffineFn { c0: self.c0 + other.c0, grad: self.grad.iter().zip(&other.grad).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, other: &AffineFn) -> AffineFn {
        self.add(&other.neg())
    }

    pub fn is_zero(&self) -> bool {
        self.c0 == 0.0 && self.grad.iter().all(|g| *g == 0.0)
    }
}
