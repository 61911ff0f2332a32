//! Characteristic polynomial machinery: scaled derivatives, root finding,
//! the shifted spectrum gamma_j = lambda_j - lambda with its partial-fraction
//! weights Gamma_j, and the derived constants used by the contraction
//! estimates.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::binom;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Error)]
pub enum CharPolyError {
    #[error("polynomial must be monic with degree >= 2 (got degree {0})")]
    BadDegree(usize),
    #[error("leading coefficient must be 1, got {0}")]
    NotMonic(Complex64),
    #[error("root finder did not converge; residuals: {0:?}")]
    RootsDiverged(Vec<f64>),
    #[error("lambda = {0} is not a root (|P(lambda)| = {1:.3e})")]
    NotARoot(Complex64, f64),
    #[error("real parts of roots {0} and {1} coincide within tolerance")]
    CoincidentRealParts(Complex64, Complex64),
    #[error("gap parameter beta = {beta} outside (0, {max})")]
    BadBeta { beta: f64, max: f64 },
}

/// Monic polynomial x^n + a_{n-1} x^{n-1} + ... + a_0.
#[derive(Clone, Debug, PartialEq)]
pub struct CharPoly {
    /// coefficients a_0..a_n with a_n = 1
    coeffs: Vec<Complex64>,
}

impl CharPoly {
    /// Build from the full coefficient list a_0..a_n (a_n must equal 1).
    pub fn new(coeffs: Vec<Complex64>) -> Result<Self, CharPolyError> {
        if coeffs.len() < 3 {
            return Err(CharPolyError::BadDegree(coeffs.len().saturating_sub(1)));
        }
        let lead = *coeffs.last().unwrap();
        if (lead - Complex64::new(1.0, 0.0)).norm() > 1e-14 {
            return Err(CharPolyError::NotMonic(lead));
        }
        Ok(CharPoly { coeffs })
    }

    /// Build from the lower coefficients a_0..a_{n-1}; the leading 1 is implied.
    pub fn from_lower(a: &[Complex64]) -> Result<Self, CharPolyError> {
        let mut coeffs = a.to_vec();
        coeffs.push(Complex64::new(1.0, 0.0));
        Self::new(coeffs)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// a_i, 0 <= i <= n.
    pub fn coeff(&self, i: usize) -> Complex64 {
        self.coeffs[i]
    }

    pub fn eval(&self, x: Complex64) -> Complex64 {
        let mut acc = ZERO;
        for &c in self.coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }

    fn eval_derivative(&self, x: Complex64) -> Complex64 {
        let mut acc = ZERO;
        for (i, &c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * x + c * Complex64::new(i as f64, 0.0);
        }
        acc
    }
}

/// (1/j!) * P^(j)(lambda), via sum_{i >= j} a_i C(i,j) lambda^{i-j}.
pub fn poly_derivative_at(p: &CharPoly, lambda: Complex64, j: usize) -> Complex64 {
    let n = p.degree();
    if j > n {
        return ZERO;
    }
    let mut acc = ZERO;
    for i in j..=n {
        acc += p.coeff(i) * Complex64::new(binom(i, j), 0.0) * lambda.powu((i - j) as u32);
    }
    acc
}

/// All n roots by simultaneous (Durand–Kerner) iteration with a perturbed
/// initial circle and deterministic restarts; sorted by (Re, Im).
/// Residual contract: |P(root)| <= tol * (1 + |root|)^n.
pub fn find_roots(p: &CharPoly, tol: f64) -> Result<Vec<Complex64>, CharPolyError> {
    let n = p.degree();
    // Cauchy-style radius bound
    let radius = 1.0
        + p.coeffs[..n]
            .iter()
            .map(|c| c.norm())
            .fold(0.0f64, f64::max);

    let mut best: Option<(Vec<Complex64>, f64)> = None;
    for attempt in 0..8 {
        // deterministic, slightly detuned initial circle; the offset angle
        // avoids symmetry traps for real-coefficient polynomials
        let rot = 0.40 + 0.13 * attempt as f64;
        let scale = radius * (0.55 + 0.17 * attempt as f64);
        let mut z: Vec<Complex64> = (0..n)
            .map(|k| {
                let ang = rot + 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                Complex64::from_polar(scale, ang)
            })
            .collect();

        let mut converged = false;
        for _ in 0..600 {
            let mut max_step = 0.0f64;
            for k in 0..n {
                let mut denom = Complex64::new(1.0, 0.0);
                for j in 0..n {
                    if j != k {
                        denom *= z[k] - z[j];
                    }
                }
                if denom.norm() == 0.0 {
                    // coincident iterates: nudge and continue
                    z[k] += Complex64::new(1e-6 * (k as f64 + 1.0), 1e-6);
                    continue;
                }
                let step = p.eval(z[k]) / denom;
                z[k] -= step;
                max_step = max_step.max(step.norm() / (1.0 + z[k].norm()));
            }
            if max_step < 1e-15 {
                converged = true;
                break;
            }
        }
        if converged {
            // Newton polish
            for zk in z.iter_mut() {
                for _ in 0..4 {
                    let d = p.eval_derivative(*zk);
                    if d.norm() > 0.0 {
                        *zk -= p.eval(*zk) / d;
                    }
                }
            }
        }
        let worst = z
            .iter()
            .map(|&r| p.eval(r).norm() / (1.0 + r.norm()).powi(n as i32))
            .fold(0.0f64, f64::max);
        if best.as_ref().map_or(true, |(_, w)| worst < *w) {
            best = Some((z.clone(), worst));
        }
        if worst <= tol {
            break;
        }
    }

    let (mut roots, worst) = best.unwrap();
    if worst > tol {
        let residuals = roots.iter().map(|&r| p.eval(r).norm()).collect();
        return Err(CharPolyError::RootsDiverged(residuals));
    }
    roots.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    });
    Ok(roots)
}

/// Spectrum shifted by the selected root, with everything the Green operators
/// and contraction estimates need.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralData {
    /// all n roots, sorted by (Re, Im)
    pub roots: Vec<Complex64>,
    /// the selected root
    pub lambda: Complex64,
    /// gamma_j = lambda_j - lambda over the n-1 other roots (sorted order)
    pub gammas: Vec<Complex64>,
    /// alpha_j = Re gamma_j
    pub alphas: Vec<f64>,
    /// Gamma_j = prod_{k != j} (gamma_j - gamma_k)
    pub big_gammas: Vec<Complex64>,
    /// alpha~_j = sum_{i=0}^{n-2} |gamma_j|^i
    pub alpha_tildes: Vec<f64>,
    /// gamma~ = sum_j alpha~_j / |Gamma_j|
    pub gamma_tilde: f64,
    /// gap parameter, 0 < beta < min |alpha_j|
    pub beta: f64,
}

impl SpectralData {
    pub fn order(&self) -> usize {
        self.roots.len()
    }

    /// (-1)^n prod gamma_j^{-1}; equals sum_j 1/(Gamma_j gamma_j).
    pub fn prefactor(&self) -> Complex64 {
        let n = self.order();
        let mut prod = Complex64::new(1.0, 0.0);
        for &g in &self.gammas {
            prod *= g;
        }
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        Complex64::new(sign, 0.0) / prod
    }
}

fn real_part_tolerance(roots: &[Complex64]) -> f64 {
    let max_mod = roots.iter().map(|r| r.norm()).fold(0.0f64, f64::max);
    1e-8 * (1.0 + max_mod)
}

/// Assemble SpectralData for a chosen root. `beta_opt` defaults to
/// 0.5 * min |alpha_j|.
pub fn spectral_data(
    roots: &[Complex64],
    lambda: Complex64,
    beta_opt: Option<f64>,
) -> Result<SpectralData, CharPolyError> {
    let tol = real_part_tolerance(roots);
    // lambda must be (numerically) one of the roots
    let (idx, dist) = roots
        .iter()
        .enumerate()
        .map(|(i, r)| (i, (r - lambda).norm()))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    if dist > tol {
        return Err(CharPolyError::NotARoot(lambda, dist));
    }
    // pairwise distinct real parts
    for i in 0..roots.len() {
        for j in (i + 1)..roots.len() {
            if (roots[i].re - roots[j].re).abs() < tol {
                return Err(CharPolyError::CoincidentRealParts(roots[i], roots[j]));
            }
        }
    }
    let mut sorted = roots.to_vec();
    sorted.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    });
    let lambda_exact = roots[idx];
    let gammas: Vec<Complex64> = sorted
        .iter()
        .filter(|r| (**r - lambda_exact).norm() > 0.0)
        .map(|r| r - lambda_exact)
        .collect();
    let n = roots.len();
    assert_eq!(gammas.len(), n - 1);

    let alphas: Vec<f64> = gammas.iter().map(|g| g.re).collect();
    let big_gammas: Vec<Complex64> = (0..gammas.len())
        .map(|j| {
            let mut prod = Complex64::new(1.0, 0.0);
            for k in 0..gammas.len() {
                if k != j {
                    prod *= gammas[j] - gammas[k];
                }
            }
            prod
        })
        .collect();
    let alpha_tildes: Vec<f64> = gammas
        .iter()
        .map(|g| (0..=n - 2).map(|i| g.norm().powi(i as i32)).sum())
        .collect();
    let gamma_tilde = alpha_tildes
        .iter()
        .zip(&big_gammas)
        .map(|(a, g)| a / g.norm())
        .sum();
    let min_alpha = alphas.iter().map(|a| a.abs()).fold(f64::INFINITY, f64::min);
    let beta = beta_opt.unwrap_or(0.5 * min_alpha);
    if !(beta > 0.0 && beta < min_alpha) {
        return Err(CharPolyError::BadBeta {
            beta,
            max: min_alpha,
        });
    }
    Ok(SpectralData {
        roots: sorted,
        lambda: lambda_exact,
        gammas,
        alphas,
        big_gammas,
        alpha_tildes,
        gamma_tilde,
        beta,
    })
}

/// Verify the partial-fraction weight identities over the m = n-1 shifted
/// roots: sum_j gamma_j^i / Gamma_j = 0 for i <= m-2 and = 1 for i = m-1
/// (these are what make the composite Green operator invert the reduced,
/// order-(n-1) operator). Returns (ok within 1e-10, max residual).
pub fn partial_fraction_weights_check(s: &SpectralData) -> (bool, f64) {
    let m = s.gammas.len();
    let mut max_resid = 0.0f64;
    for i in 0..m {
        let mut acc = ZERO;
        for (g, big) in s.gammas.iter().zip(&s.big_gammas) {
            acc += g.powu(i as u32) / big;
        }
        let expect = if i == m - 1 {
            Complex64::new(1.0, 0.0)
        } else {
            ZERO
        };
        max_resid = max_resid.max((acc - expect).norm());
    }
    (max_resid <= 1e-10, max_resid)
}
