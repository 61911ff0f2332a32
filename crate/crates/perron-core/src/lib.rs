//! Asymptotics of `y^(n) + sum (a_i + r_i(t)) y^(i) = 0` with decaying
//! perturbations `r_i`: logarithmic-derivative (Riccati) reduction driven by
//! complete Bell polynomials, scalar Green operators with exponential
//! dichotomy, a certified Picard fixed point for the correction `z`, and
//! evaluators for the classical asymptotic formulas (Levinson,
//! Hartman–Wintner, theta-ladder refinements).

pub mod asympt;
pub mod bellpoly;
pub mod charpoly;
pub mod expr;
pub mod green;
pub mod perturb;
pub mod riccati;
pub mod solver;
pub mod validate;

pub use asympt::{AsymptoticReport, FormulaKind};
pub use bellpoly::MultiIndexPoly;
pub use charpoly::{CharPoly, SpectralData};
pub use expr::Expr;
pub use green::{GridFunction, QuadConfig};
pub use perturb::PerturbationBundle;
pub use riccati::{PerturbedODE, RiccatiSystem};
pub use solver::{ContractionReport, ZSolution};
pub use validate::Trajectory;

/// Binomial coefficient as an exact f64 (exact for everything this crate needs).
pub fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0_f64;
    for j in 0..k {
        acc = acc * (n - j) as f64 / (j + 1) as f64;
    }
    acc.round()
}
