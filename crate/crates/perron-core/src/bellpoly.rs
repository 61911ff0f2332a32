//! Exact multivariate polynomials and the complete Bell polynomial family:
//! the recursion B_{i+1} = sum_j C(i,j) B_{i-j} x_{j+1}, the shifted
//! expansion B_i(lambda + x_1, x_2, ...), the nonlinear remainders
//! f_i = B_{i+1} - x_{i+1}, and their split into homogeneous pieces h_{k,i}.

use num_complex::Complex64;
use std::collections::BTreeMap;
use thiserror::Error;

use crate::binom;

/// Hard cap on the Bell index; combinatorial growth beyond this is never needed.
pub const MAX_BELL_INDEX: usize = 16;

#[derive(Debug, Error)]
pub enum BellError {
    #[error("bell index {0} exceeds the cap {MAX_BELL_INDEX}")]
    CapExceeded(usize),
    #[error("arity mismatch: polynomial has arity {expected}, point has length {got}")]
    ArityMismatch { expected: usize, got: usize },
}

/// Exponent vector of a monomial. Ordered graded-lexicographically:
/// total degree first, then lexicographic on the exponents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse multivariate polynomial over complex coefficients. Coefficients of
/// the Bell family are exact (small) integers; complex values only enter when
/// a spectral parameter is substituted.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiIndexPoly {
    arity: usize,
    terms: BTreeMap<Monomial, Complex64>,
}

impl MultiIndexPoly {
    pub fn zero(arity: usize) -> Self {
        MultiIndexPoly {
            arity,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(arity: usize, c: Complex64) -> Self {
        let mut p = Self::zero(arity);
        p.add_term(vec![0; arity], c);
        p
    }

    /// The single variable x_{idx+1} (zero-based `idx`).
    pub fn variable(arity: usize, idx: usize) -> Self {
        assert!(idx < arity);
        let mut e = vec![0u32; arity];
        e[idx] = 1;
        let mut p = Self::zero(arity);
        p.add_term(e, Complex64::new(1.0, 0.0));
        p
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &Complex64)> {
        self.terms.iter()
    }

    /// Coefficient of the given exponent vector (0 if absent).
    pub fn coeff(&self, exps: &[u32]) -> Complex64 {
        assert_eq!(exps.len(), self.arity);
        self.terms
            .get(&Monomial(exps.to_vec()))
            .copied()
            .unwrap_or(Complex64::new(0.0, 0.0))
    }

    pub fn add_term(&mut self, exps: Vec<u32>, c: Complex64) {
        assert_eq!(exps.len(), self.arity, "exponent vector length != arity");
        if c == Complex64::new(0.0, 0.0) {
            return;
        }
        let key = Monomial(exps);
        let cur = self.terms.get(&key).copied().unwrap_or(Complex64::new(0.0, 0.0)) + c;
        if cur == Complex64::new(0.0, 0.0) {
            // exact cancellation: never store a zero coefficient
            self.terms.remove(&key);
        } else {
            self.terms.insert(key, cur);
        }
    }

    /// Re-embed into a larger arity (pads exponent vectors with zeros).
    pub fn with_arity(&self, arity: usize) -> Self {
        assert!(arity >= self.arity);
        let mut out = Self::zero(arity);
        for (m, c) in &self.terms {
            let mut e = m.0.clone();
            e.resize(arity, 0);
            out.add_term(e, *c);
        }
        out
    }

    /// Drop trailing unused variables down to `arity`; panics if any term uses them.
    pub fn truncate_arity(&self, arity: usize) -> Self {
        assert!(arity <= self.arity);
        let mut out = Self::zero(arity);
        for (m, c) in &self.terms {
            assert!(
                m.0[arity..].iter().all(|&e| e == 0),
                "term uses a variable beyond the target arity"
            );
            out.add_term(m.0[..arity].to_vec(), *c);
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.arity, other.arity);
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.0.clone(), *c);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = Self::zero(self.arity);
        for (m, k) in &self.terms {
            out.add_term(m.0.clone(), *k * c);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.arity, other.arity);
        let mut out = Self::zero(self.arity);
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                let e: Vec<u32> = m1.0.iter().zip(&m2.0).map(|(a, b)| a + b).collect();
                out.add_term(e, c1 * c2);
            }
        }
        out
    }

    pub fn max_degree(&self) -> u32 {
        self.terms.keys().map(|m| m.degree()).max().unwrap_or(0)
    }

    pub fn min_degree(&self) -> u32 {
        self.terms.keys().map(|m| m.degree()).min().unwrap_or(0)
    }

    /// Evaluate at a point (length must equal arity).
    pub fn eval(&self, point: &[Complex64]) -> Result<Complex64, BellError> {
        if point.len() != self.arity {
            return Err(BellError::ArityMismatch {
                expected: self.arity,
                got: point.len(),
            });
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (m, c) in &self.terms {
            let mut term = *c;
            for (x, &e) in point.iter().zip(&m.0) {
                if e > 0 {
                    term *= x.powu(e);
                }
            }
            acc += term;
        }
        Ok(acc)
    }

    /// Keep only terms of total degree `k`.
    pub fn homogeneous_part(&self, k: u32) -> Self {
        let mut out = Self::zero(self.arity);
        for (m, c) in &self.terms {
            if m.degree() == k {
                out.add_term(m.0.clone(), *c);
            }
        }
        out
    }

    /// Pretty-print in the source notation, e.g. "x1^3+3*x1*x2+x3".
    /// Terms in descending total degree, lexicographic within a degree.
    pub fn pretty(&self) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut entries: Vec<(&Monomial, &Complex64)> = self.terms.iter().collect();
        entries.sort_by(|a, b| {
            b.0.degree()
                .cmp(&a.0.degree())
                .then_with(|| b.0 .0.cmp(&a.0 .0))
        });
        let mut out = String::new();
        for (idx, (m, c)) in entries.iter().enumerate() {
            let mono = Self::pretty_mono(m);
            let (sign, mag) = Self::pretty_coeff(**c);
            if idx == 0 {
                if sign < 0 {
                    out.push('-');
                }
            } else if sign < 0 {
                out.push('-');
            } else {
                out.push('+');
            }
            match (mag.as_str(), mono.as_str()) {
                ("1", "") => out.push('1'),
                ("1", mo) => out.push_str(mo),
                (ma, "") => out.push_str(ma),
                (ma, mo) => {
                    out.push_str(ma);
                    out.push('*');
                    out.push_str(mo);
                }
            }
        }
        out
    }

    fn pretty_mono(m: &Monomial) -> String {
        let mut parts = Vec::new();
        for (i, &e) in m.0.iter().enumerate() {
            match e {
                0 => {}
                1 => parts.push(format!("x{}", i + 1)),
                _ => parts.push(format!("x{}^{}", i + 1, e)),
            }
        }
        parts.join("*")
    }

    fn pretty_coeff(c: Complex64) -> (i32, String) {
        if c.im == 0.0 && c.re.fract() == 0.0 {
            let sign = if c.re < 0.0 { -1 } else { 1 };
            (sign, format!("{}", c.re.abs() as i64))
        } else if c.im == 0.0 {
            let sign = if c.re < 0.0 { -1 } else { 1 };
            (sign, format!("{}", c.re.abs()))
        } else {
            (1, format!("({}+{}i)", c.re, c.im))
        }
    }
}

fn check_cap(i: usize) -> Result<(), BellError> {
    if i > MAX_BELL_INDEX {
        Err(BellError::CapExceeded(i))
    } else {
        Ok(())
    }
}

/// Complete Bell polynomial B_i in variables x_1..x_i (B_0 = 1), via
/// B_{i+1}(x_1..x_{i+1}) = sum_{j=0}^{i} C(i,j) B_{i-j}(x_1..x_{i-j}) x_{j+1}.
pub fn complete_bell(i: usize) -> Result<MultiIndexPoly, BellError> {
    check_cap(i)?;
    let mut table: Vec<MultiIndexPoly> = Vec::with_capacity(i + 1);
    table.push(MultiIndexPoly::constant(0, Complex64::new(1.0, 0.0)));
    for m in 0..i {
        // build B_{m+1} with arity m+1
        let mut next = MultiIndexPoly::zero(m + 1);
        for j in 0..=m {
            let c = Complex64::new(binom(m, j), 0.0);
            let prev = table[m - j].with_arity(m + 1);
            let xj = MultiIndexPoly::variable(m + 1, j);
            next = next.add(&prev.mul(&xj).scale(c));
        }
        table.push(next);
    }
    Ok(table.pop().unwrap())
}

/// B_i(lambda + x_1, x_2, ..., x_i) expanded via the binomial relation
/// sum_j C(i,j) lambda^{i-j} B_j(x_1..x_j); the constant term is lambda^i.
pub fn bell_shift_expand(i: usize, lambda: Complex64) -> Result<MultiIndexPoly, BellError> {
    check_cap(i)?;
    let mut out = MultiIndexPoly::zero(i);
    for j in 0..=i {
        let c = Complex64::new(binom(i, j), 0.0) * lambda.powu((i - j) as u32);
        let bj = complete_bell(j)?.with_arity(i);
        out = out.add(&bj.scale(c));
    }
    Ok(out)
}

/// Nonlinear remainder f_i = B_{i+1} - x_{i+1}, a polynomial in x_1..x_i whose
/// monomials all have total degree >= 2 (f_0 = 0).
pub fn nonlinear_remainder(i: usize) -> Result<MultiIndexPoly, BellError> {
    check_cap(i + 1)?;
    let b = complete_bell(i + 1)?;
    let x_last = MultiIndexPoly::variable(i + 1, i);
    // x_{i+1} only ever appears linearly in B_{i+1}, so the difference
    // lives in the first i variables.
    Ok(b.sub(&x_last).truncate_arity(i))
}

/// Split f_i = sum_{k=2}^{i+1} h_{k,i} into homogeneous pieces of degree k.
pub fn degree_split(i: usize) -> Result<Vec<(u32, MultiIndexPoly)>, BellError> {
    assert!(i >= 1, "degree_split needs i >= 1");
    let f = nonlinear_remainder(i)?;
    let mut out = Vec::new();
    for k in 2..=(i as u32 + 1) {
        out.push((k, f.homogeneous_part(k)));
    }
    Ok(out)
}

/// Free-function evaluation alias.
pub fn eval_poly(p: &MultiIndexPoly, point: &[Complex64]) -> Result<Complex64, BellError> {
    p.eval(point)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn bell_low_orders_pretty() {
        assert_eq!(complete_bell(0).unwrap().pretty(), "1");
        assert_eq!(complete_bell(1).unwrap().pretty(), "x1");
        assert_eq!(complete_bell(2).unwrap().pretty(), "x1^2+x2");
        assert_eq!(complete_bell(3).unwrap().pretty(), "x1^3+3*x1*x2+x3");
        assert_eq!(
            complete_bell(4).unwrap().pretty(),
            "x1^4+6*x1^2*x2+4*x1*x3+3*x2^2+x4"
        );
        assert_eq!(
            complete_bell(5).unwrap().pretty(),
            "x1^5+10*x1^3*x2+10*x1^2*x3+15*x1*x2^2+5*x1*x4+10*x2*x3+x5"
        );
    }

    #[test]
    fn bell_linear_term_unique() {
        for i in 1..=8 {
            let b = complete_bell(i).unwrap();
            let mut linear = Vec::new();
            for (m, coeff) in b.terms() {
                if m.degree() == 1 {
                    linear.push((m.clone(), *coeff));
                }
            }
            assert_eq!(linear.len(), 1, "B_{i} must have exactly one linear term");
            let (m, coeff) = &linear[0];
            assert_eq!(m.0[i - 1], 1);
            assert_eq!(*coeff, c(1.0));
        }
    }

    #[test]
    fn cap_enforced() {
        assert!(complete_bell(MAX_BELL_INDEX).is_ok());
        assert!(matches!(
            complete_bell(MAX_BELL_INDEX + 1),
            Err(BellError::CapExceeded(_))
        ));
    }

    #[test]
    fn shift_expand_example() {
        // oracle: the recursion itself, B_2(1 + x1, x2) = (1+x1)^2 + x2
        let p = bell_shift_expand(2, c(1.0)).unwrap();
        assert_eq!(p.coeff(&[0, 0]), c(1.0));
        assert_eq!(p.coeff(&[1, 0]), c(2.0));
        assert_eq!(p.coeff(&[2, 0]), c(1.0));
        assert_eq!(p.coeff(&[0, 1]), c(1.0));
        assert_eq!(p.num_terms(), 4);
    }

    #[test]
    fn shift_expand_degenerate() {
        let lam = Complex64::new(0.3, -0.7);
        let p = bell_shift_expand(1, lam).unwrap();
        assert_eq!(p.coeff(&[0]), lam);
        assert_eq!(p.coeff(&[1]), c(1.0));
        // all x_k = 0 leaves lambda^i
        for i in 0..=6 {
            let p = bell_shift_expand(i, lam).unwrap();
            let zeros = vec![Complex64::new(0.0, 0.0); i];
            let v = p.eval(&zeros).unwrap();
            let expect = lam.powu(i as u32);
            assert!((v - expect).norm() <= 1e-12 * (1.0 + expect.norm()));
        }
    }

    #[test]
    fn shift_expand_matches_direct_substitution() {
        // oracle: evaluate B_i at (lambda + x1, x2, ...) directly
        let lam = Complex64::new(-0.4, 0.9);
        for i in 1..=7 {
            let shifted = bell_shift_expand(i, lam).unwrap();
            let b = complete_bell(i).unwrap();
            let pt: Vec<Complex64> = (0..i)
                .map(|k| Complex64::new(0.3 + 0.1 * k as f64, -0.2 + 0.05 * k as f64))
                .collect();
            let mut shifted_pt = pt.clone();
            shifted_pt[0] += lam;
            let lhs = shifted.eval(&pt).unwrap();
            let rhs = b.eval(&shifted_pt).unwrap();
            assert!((lhs - rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
        }
    }

    #[test]
    fn remainder_table() {
        assert!(nonlinear_remainder(0).unwrap().is_zero());
        assert_eq!(nonlinear_remainder(1).unwrap().pretty(), "x1^2");
        assert_eq!(nonlinear_remainder(2).unwrap().pretty(), "x1^3+3*x1*x2");
        assert_eq!(
            nonlinear_remainder(3).unwrap().pretty(),
            "x1^4+6*x1^2*x2+4*x1*x3+3*x2^2"
        );
        for i in 1..=8 {
            assert!(nonlinear_remainder(i).unwrap().min_degree() >= 2);
        }
    }

    #[test]
    fn degree_split_table() {
        let split = degree_split(2).unwrap();
        assert_eq!(split.len(), 2);
        assert_eq!(split[0].0, 2);
        assert_eq!(split[0].1.pretty(), "3*x1*x2");
        assert_eq!(split[1].0, 3);
        assert_eq!(split[1].1.pretty(), "x1^3");

        let split3 = degree_split(3).unwrap();
        assert_eq!(split3[0].1.pretty(), "4*x1*x3+3*x2^2");
        assert_eq!(split3[1].1.pretty(), "6*x1^2*x2");
        assert_eq!(split3[2].1.pretty(), "x1^4");
    }

    #[test]
    fn degree_split_sums_to_remainder() {
        for i in 1..=8 {
            let f = nonlinear_remainder(i).unwrap();
            let mut sum = MultiIndexPoly::zero(i);
            for (k, h) in degree_split(i).unwrap() {
                for (m, _) in h.terms() {
                    assert_eq!(m.degree(), k);
                }
                sum = sum.add(&h);
            }
            assert_eq!(sum, f);
        }
    }

    #[test]
    fn eval_examples() {
        let b3 = complete_bell(3).unwrap();
        assert_eq!(b3.eval(&[c(1.0), c(0.0), c(0.0)]).unwrap(), c(1.0));
        let b2 = complete_bell(2).unwrap();
        assert_eq!(b2.eval(&[c(1.0), c(1.0)]).unwrap(), c(2.0));
        // oracle: the recursion collapses to Bell numbers at all-ones
        let b4 = complete_bell(4).unwrap();
        assert_eq!(b4.eval(&[c(1.0); 4]).unwrap(), c(15.0));
        let b5 = complete_bell(5).unwrap();
        assert_eq!(b5.eval(&[c(1.0); 5]).unwrap(), c(52.0));
    }

    #[test]
    fn eval_arity_mismatch() {
        let b2 = complete_bell(2).unwrap();
        assert!(matches!(
            b2.eval(&[c(1.0)]),
            Err(BellError::ArityMismatch { .. })
        ));
    }

    fn arb_point(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
        proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), len)
            .prop_map(|v| v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        // Recursion consistency: B_{i+1}(pt) = sum_j C(i,j) B_{i-j}(pt) * x_{j+1}
        #[test]
        fn recursion_consistency(pt in arb_point(11), i in 0usize..10) {
            let b_next = complete_bell(i + 1).unwrap();
            let lhs = b_next.eval(&pt[..i + 1]).unwrap();
            let mut rhs = Complex64::new(0.0, 0.0);
            for j in 0..=i {
                let b = complete_bell(i - j).unwrap();
                rhs += Complex64::new(binom(i, j), 0.0)
                    * b.eval(&pt[..i - j]).unwrap()
                    * pt[j];
            }
            prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + lhs.norm()));
        }

        // Binomial identity: B_i(X+Y) = sum_j C(i,j) B_{i-j}(X) B_j(Y)
        #[test]
        fn binomial_identity(x in arb_point(8), y in arb_point(8), i in 0usize..=8) {
            let bi = complete_bell(i).unwrap();
            let xy: Vec<Complex64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            let lhs = bi.eval(&xy[..i]).unwrap();
            let mut rhs = Complex64::new(0.0, 0.0);
            for j in 0..=i {
                rhs += Complex64::new(binom(i, j), 0.0)
                    * complete_bell(i - j).unwrap().eval(&x[..i - j]).unwrap()
                    * complete_bell(j).unwrap().eval(&y[..j]).unwrap();
            }
            prop_assert!((lhs - rhs).norm() <= 1e-9 * (1.0 + lhs.norm()));
        }

        // Printer output parses back to the same term multiset via eval sampling.
        #[test]
        fn homogeneous_parts_partition(i in 1usize..=8) {
            let f = nonlinear_remainder(i).unwrap();
            let total: usize = degree_split(i).unwrap().iter().map(|(_, h)| h.num_terms()).sum();
            prop_assert_eq!(total, f.num_terms());
        }
    }
}
