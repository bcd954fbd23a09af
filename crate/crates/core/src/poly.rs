//! Sparse multivariate polynomials with real coefficients.
//!
//! Terms are kept in a `BTreeMap` keyed by [`Monomial`], whose ordering is
//! graded: lower total degree first, and within a degree `x1` precedes `x2`
//! (so the basis reads `1, x1, x2, x1^2, x1 x2, x2^2, ...`). Every moment
//! basis in the crate is enumerated in this order.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Exponent vector of a monomial, one entry per variable.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    /// The monomial `x_j` (0-based index).
    pub fn var(nvars: usize, j: usize) -> Self {
        let mut e = vec![0; nvars];
        e[j] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&e, &xi)| if e == 0 { 1.0 } else { xi.powi(e as i32) })
            .product()
    }

    /// All monomials in `nvars` variables of total degree `<= max_degree`,
    /// in graded order.
    pub fn all_up_to(nvars: usize, max_degree: u32) -> Vec<Monomial> {
        let mut out = Vec::new();
        for d in 0..=max_degree {
            let mut cur = vec![0u32; nvars];
            exponents_of_degree(nvars, d, 0, &mut cur, &mut out);
        }
        out
    }
}

fn exponents_of_degree(nvars: usize, rem: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<Monomial>) {
    if nvars == 0 {
        if rem == 0 {
            out.push(Monomial(Vec::new()));
        }
        return;
    }
    if pos == nvars - 1 {
        cur[pos] = rem;
        out.push(Monomial(cur.clone()));
        cur[pos] = 0;
        return;
    }
    for e in (0..=rem).rev() {
        cur[pos] = e;
        exponents_of_degree(nvars, rem - e, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse real polynomial in `nvars` variables. Zero coefficients are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::one(nvars), c);
        p
    }

    /// The polynomial `x_j` (0-based).
    pub fn var(nvars: usize, j: usize) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::var(nvars, j), 1.0);
        p
    }

    /// Build from `(exponents, coefficient)` pairs; repeated monomials are summed.
    pub fn from_terms<I>(nvars: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, f64)>,
    {
        let mut p = Self::zero(nvars);
        for (e, c) in terms {
            if e.len() != nvars {
                return Err(Error::DimensionMismatch {
                    expected: nvars,
                    got: e.len(),
                });
            }
            p.add_term(Monomial(e), c);
        }
        Ok(p)
    }

    /// Affine polynomial `c0 + sum_j a_j x_j`.
    pub fn affine(a: &[f64], c0: f64) -> Self {
        let n = a.len();
        let mut p = Self::constant(n, c0);
        for (j, &aj) in a.iter().enumerate() {
            p.add_term(Monomial::var(n, j), aj);
        }
        p
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        debug_assert_eq!(m.nvars(), self.nvars);
        if c == 0.0 {
            return;
        }
        let entry = self.terms.entry(m);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Degree restricted to the variables in `vars`.
    pub fn degree_in(&self, vars: &[usize]) -> u32 {
        self.terms
            .keys()
            .map(|m| vars.iter().map(|&j| m.0[j]).sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x.len())?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.eval(x)).sum()
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.nvars {
            return Err(Error::DimensionMismatch {
                expected: self.nvars,
                got,
            });
        }
        Ok(())
    }

    fn check_same(&self, other: &Polynomial) -> Result<()> {
        self.check_len(other.nvars)
    }

    /// Partial derivative with respect to `x_j` (0-based index).
    pub fn diff(&self, j: usize) -> Result<Polynomial> {
        if j >= self.nvars {
            return Err(Error::IndexOutOfRange {
                index: j,
                len: self.nvars,
            });
        }
        let mut out = Polynomial::zero(self.nvars);
        for (m, &c) in &self.terms {
            let e = m.0[j];
            if e == 0 {
                continue;
            }
            let mut dm = m.clone();
            dm.0[j] -= 1;
            out.add_term(dm, c * e as f64);
        }
        Ok(out)
    }

    pub fn gradient(&self) -> PolyVector {
        PolyVector(
            (0..self.nvars)
                .map(|j| self.diff(j).expect("index in range"))
                .collect(),
        )
    }

    /// Hessian matrix of second partials. Only the upper triangle is computed;
    /// the lower triangle is a copy, so the result is symmetric by construction.
    pub fn hessian(&self) -> PolyMatrix {
        let n = self.nvars;
        let g = self.gradient();
        let mut entries = vec![Polynomial::zero(n); n * n];
        for j in 0..n {
            for k in j..n {
                let h = g.0[j].diff(k).expect("index in range");
                entries[k * n + j] = h.clone();
                entries[j * n + k] = h;
            }
        }
        PolyMatrix { n, entries }
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), -c);
        }
        Ok(out)
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial> {
        self.check_same(other)?;
        let mut out = Polynomial::zero(self.nvars);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut out = Polynomial::zero(self.nvars);
        for (m, &c) in &self.terms {
            out.add_term(m.clone(), c * s);
        }
        out
    }

    pub fn add_constant(&self, c: f64) -> Polynomial {
        let mut out = self.clone();
        out.add_term(Monomial::one(self.nvars), c);
        out
    }

    pub fn powi(&self, k: u32) -> Polynomial {
        let mut out = Polynomial::constant(self.nvars, 1.0);
        for _ in 0..k {
            out = out.mul(self).expect("same ring");
        }
        out
    }

    /// Re-embed into a ring with `nvars` variables; variable `j` maps to
    /// `map[j]` in the new ring.
    pub fn embed(&self, nvars: usize, map: &[usize]) -> Polynomial {
        assert_eq!(map.len(), self.nvars);
        let mut out = Polynomial::zero(nvars);
        for (m, &c) in &self.terms {
            let mut e = vec![0; nvars];
            for (j, &ej) in m.0.iter().enumerate() {
                e[map[j]] += ej;
            }
            out.add_term(Monomial(e), c);
        }
        out
    }

    /// Largest absolute coefficient (0 for the zero polynomial).
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// Coefficient-wise comparison within an absolute tolerance.
    pub fn approx_eq(&self, other: &Polynomial, tol: f64) -> bool {
        if self.nvars != other.nvars {
            return false;
        }
        let diff = self.sub(other).expect("same ring");
        diff.max_abs_coeff() <= tol
    }

    /// Linear part `[a_1..a_n]` and constant of an affine polynomial.
    pub fn affine_parts(&self) -> Option<(Vec<f64>, f64)> {
        if self.degree() > 1 {
            return None;
        }
        let n = self.nvars;
        let a = (0..n).map(|j| self.coeff(&Monomial::var(n, j))).collect();
        Some((a, self.coeff(&Monomial::one(n))))
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (m, &c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " {} ", if c < 0.0 { '-' } else { '+' })?;
            } else if c < 0.0 {
                write!(f, "-")?;
            }
            let a = c.abs();
            let vars: Vec<String> = m
                .0
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(j, &e)| {
                    if e == 1 {
                        format!("x{}", j + 1)
                    } else {
                        format!("x{}^{}", j + 1, e)
                    }
                })
                .collect();
            if vars.is_empty() {
                write!(f, "{a}")?;
            } else if a == 1.0 {
                write!(f, "{}", vars.join("*"))?;
            } else {
                write!(f, "{}*{}", a, vars.join("*"))?;
            }
        }
        Ok(())
    }
}

/// Length-n vector of polynomials (a gradient).
#[derive(Clone, Debug, PartialEq)]
pub struct PolyVector(pub Vec<Polynomial>);

impl PolyVector {
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.0.iter().map(|p| p.eval(x)).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Symmetric n-by-n matrix of polynomials, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyMatrix {
    n: usize,
    entries: Vec<Polynomial>,
}

impl PolyMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, j: usize, k: usize) -> &Polynomial {
        &self.entries[j * self.n + k]
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        (0..self.n)
            .map(|j| (0..self.n).map(|k| self.get(j, k).eval(x)).collect())
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    exp: Vec<u32>,
    coef: f64,
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    n: usize,
    terms: Vec<TermRepr>,
}

impl Serialize for Polynomial {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PolyRepr {
            n: self.nvars,
            terms: self
                .terms
                .iter()
                .map(|(m, &c)| TermRepr {
                    exp: m.0.clone(),
                    coef: c,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = PolyRepr::deserialize(d)?;
        Polynomial::from_terms(r.n, r.terms.into_iter().map(|t| (t.exp, t.coef)))
            .map_err(serde::de::Error::custom)
    }
}

/// Shorthand used by fixtures: build a polynomial from `(coef, exponents)` pairs.
pub fn poly(nvars: usize, terms: &[(f64, &[u32])]) -> Polynomial {
    Polynomial::from_terms(nvars, terms.iter().map(|(c, e)| (e.to_vec(), *c)))
        .expect("fixture exponents match nvars")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn egg() -> Polynomial {
        poly(2, &[(1.0, &[4, 0]), (1.0, &[0, 4]), (1.0, &[2, 0]), (1.0, &[0, 1])])
    }

    #[test]
    fn graded_order() {
        let b = Monomial::all_up_to(2, 2);
        let e: Vec<Vec<u32>> = b.iter().map(|m| m.exponents().to_vec()).collect();
        assert_eq!(
            e,
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        let mut sorted = b.clone();
        sorted.sort();
        assert_eq!(sorted, b);
        assert_eq!(Monomial::all_up_to(4, 3).len(), 35);
    }

    #[test]
    fn eval_examples() {
        let hyperbola = poly(2, &[(-1.0, &[0, 0]), (1.0, &[1, 1])]);
        assert_eq!(hyperbola.eval(&[1.0, 1.0]).unwrap(), 0.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((hyperbola.eval(&[h, h]).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(Polynomial::zero(2).eval(&[3.0, -7.0]).unwrap(), 0.0);
        // 1e-4 + 0.0625 + 0.01 - 0.5
        assert!((egg().eval(&[0.1, -0.5]).unwrap() + 0.4274).abs() < 1e-14);
        assert!(matches!(
            egg().eval(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn diff_examples() {
        let p = poly(3, &[(1.0, &[2, 0, 0]), (-1.0, &[0, 2, 0]), (-1.0, &[0, 0, 1])]);
        assert_eq!(p.diff(0).unwrap(), poly(3, &[(2.0, &[1, 0, 0])]));
        assert!(Polynomial::constant(2, 5.0).diff(1).unwrap().is_zero());
        assert_eq!(
            egg().diff(0).unwrap(),
            poly(2, &[(4.0, &[3, 0]), (2.0, &[1, 0])])
        );
        assert!(matches!(p.diff(3), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn hessian_examples() {
        let p = poly(3, &[(1.0, &[2, 0, 0]), (-1.0, &[0, 2, 0]), (-1.0, &[0, 0, 1])]);
        let h = p.hessian().eval(&[0.3, 0.1, -2.0]).unwrap();
        assert_eq!(h, vec![vec![2.0, 0.0, 0.0], vec![0.0, -2.0, 0.0], vec![0.0, 0.0, 0.0]]);
        let aff = Polynomial::affine(&[1.0, -2.0], 3.0);
        let ha = aff.hessian();
        for j in 0..2 {
            for k in 0..2 {
                assert!(ha.get(j, k).is_zero());
            }
        }
        let hyp = poly(2, &[(-1.0, &[0, 0]), (1.0, &[1, 1])]).hessian();
        assert_eq!(hyp.eval(&[5.0, 5.0]).unwrap(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn arithmetic_examples() {
        let x1 = Polynomial::var(2, 0);
        let x2 = Polynomial::var(2, 1);
        assert_eq!(x1.mul(&x2).unwrap(), poly(2, &[(1.0, &[1, 1])]));
        let yy = x1.mul(&x1).unwrap().add(&x2.mul(&x2).unwrap()).unwrap();
        assert_eq!(yy, poly(2, &[(1.0, &[2, 0]), (1.0, &[0, 2])]));
        let p3 = x1.add(&x2).unwrap().scale(-1.0).add_constant(-2.0);
        assert_eq!(p3, Polynomial::affine(&[-1.0, -1.0], -2.0));
        assert!(x1.add(&Polynomial::var(3, 0)).is_err());
        // exact cancellation prunes the term
        assert!(x1.sub(&x1).unwrap().is_zero());
    }

    #[test]
    fn json_roundtrip() {
        let s = r#"{"n": 2, "terms": [{"exp": [1,1], "coef": 1.0}, {"exp": [0,0], "coef": -1.0}]}"#;
        let p: Polynomial = serde_json::from_str(s).unwrap();
        assert_eq!(p, poly(2, &[(-1.0, &[0, 0]), (1.0, &[1, 1])]));
        let back: Polynomial = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        let bad = r#"{"n": 2, "terms": [{"exp": [1], "coef": 1.0}]}"#;
        assert!(serde_json::from_str::<Polynomial>(bad).is_err());
    }

    #[test]
    fn display() {
        assert_eq!(Polynomial::affine(&[1.0, -1.0], -2.0).to_string(), "-2 + x1 - x2");
    }
}
