//! Dense polynomials in `n` variables of total degree at most [`MAX_DEGREE`].

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 4;

/// Largest number of variables with a monomial table.
pub const MAX_DIM: usize = 4;

/// Exponent vectors of all monomials of degree `<= MAX_DEGREE`, in graded order.
#[derive(Debug)]
pub struct Monomials {
    dim: usize,
    exps: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

impl Monomials {
    fn build(dim: usize) -> Self {
        let mut exps = Vec::new();
        for deg in 0..=MAX_DEGREE as u32 {
            let mut cur = vec![0u32; dim];
            push_with_degree(&mut exps, &mut cur, 0, deg);
        }
        let index = exps.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        Monomials { dim, exps, index }
    }

    /// Shared table for dimension `dim`.
    ///
    /// # Panics
    ///
    /// Panics if `dim > MAX_DIM`.
    pub fn of(dim: usize) -> &'static Monomials {
        static TABLES: OnceLock<Vec<Monomials>> = OnceLock::new();
        let tables = TABLES.get_or_init(|| (0..=MAX_DIM).map(Monomials::build).collect());
        assert!(dim <= MAX_DIM, "polynomials in {dim} variables are not supported");
        &tables[dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn exponents(&self, i: usize) -> &[u32] {
        &self.exps[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.exps[i].iter().sum::<u32>() as usize
    }

    pub fn index_of(&self, exps: &[u32]) -> Option<usize> {
        self.index.get(exps).copied()
    }

    /// Number of monomials of degree `<= deg`.
    pub fn count_up_to(&self, deg: usize) -> usize {
        self.exps.iter().filter(|e| e.iter().sum::<u32>() as usize <= deg).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> {
        self.exps.iter().map(|e| e.as_slice())
    }
}

fn push_with_degree(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, var: usize, left: u32) {
    if cur.is_empty() {
        if left == 0 {
            out.push(Vec::new());
        }
        return;
    }
    if var + 1 == cur.len() {
        cur[var] = left;
        out.push(cur.clone());
        cur[var] = 0;
        return;
    }
    for k in (0..=left).rev() {
        cur[var] = k;
        push_with_degree(out, cur, var + 1, left - k);
    }
    cur[var] = 0;
}

/// A polynomial stored as a dense coefficient table over [`Monomials::of`]`(dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    dim: usize,
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Polynomial { dim, coeffs: vec![0.0; Monomials::of(dim).len()] }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = Self::zero(dim);
        p.coeffs[0] = c;
        p
    }

    /// `c0 + <grad, x>`.
    pub fn affine(c0: f64, grad: &[f64]) -> Self {
        let dim = grad.len();
        let mut p = Self::constant(dim, c0);
        for (i, g) in grad.iter().enumerate() {
            p.coeffs[1 + i] = *g;
        }
        p
    }

    /// `coef * x^exps`.
    pub fn monomial(exps: &[u32], coef: f64) -> Result<Self> {
        let dim = exps.len();
        let deg = exps.iter().sum::<u32>() as usize;
        let idx =
            Monomials::of(dim).index_of(exps).ok_or(Error::UnsupportedDegree { degree: deg, bound: MAX_DEGREE })?;
        let mut p = Self::zero(dim);
        p.coeffs[idx] = coef;
        Ok(p)
    }

    /// The coordinate function `x_i`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut p = Self::zero(dim);
        p.coeffs[1 + i] = 1.0;
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, exps: &[u32]) -> f64 {
        Monomials::of(self.dim).index_of(exps).map_or(0.0, |i| self.coeffs[i])
    }

    pub fn set_coeff(&mut self, exps: &[u32], value: f64) -> Result<()> {
        let deg = exps.iter().sum::<u32>() as usize;
        let idx = Monomials::of(self.dim)
            .index_of(exps)
            .ok_or(Error::UnsupportedDegree { degree: deg, bound: MAX_DEGREE })?;
        self.coeffs[idx] = value;
        Ok(())
    }

    /// Largest degree with a nonzero coefficient (0 for the zero polynomial).
    pub fn degree(&self) -> usize {
        let m = Monomials::of(self.dim);
        (0..m.len()).filter(|&i| self.coeffs[i] != 0.0).map(|i| m.degree(i)).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let m = Monomials::of(self.dim);
        let mut s = 0.0;
        for (i, c) in self.coeffs.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            let mut t = *c;
            for (xi, e) in x.iter().zip(m.exponents(i)) {
                t *= xi.powi(*e as i32);
            }
            s += t;
        }
        s
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Polynomial { dim: self.dim, coeffs }
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial { dim: self.dim, coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    /// Product; fails if the result would exceed [`MAX_DEGREE`].
    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial> {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        let deg = self.degree() + other.degree();
        if deg > MAX_DEGREE {
            return Err(Error::UnsupportedDegree { degree: deg, bound: MAX_DEGREE });
        }
        let m = Monomials::of(self.dim);
        let mut out = Polynomial::zero(self.dim);
        let mut e = vec![0u32; self.dim];
        for (i, a) in self.coeffs.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                if *b == 0.0 {
                    continue;
                }
                for (k, ek) in e.iter_mut().enumerate() {
                    *ek = m.exponents(i)[k] + m.exponents(j)[k];
                }
                let idx = m.index_of(&e).expect("degree checked above");
                out.coeffs[idx] += a * b;
            }
        }
        Ok(out)
    }
}
