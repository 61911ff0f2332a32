//! Perturbation bundle: the r_i(t) expressions together with the selected
//! rate lambda, the scaled lambda-derivatives of P(r; lambda), and the
//! decay diagnostics (unit-window integral, running average, I_gamma).

use num_complex::Complex64;
use thiserror::Error;

use crate::binom;
use crate::expr::{EvalError, Expr};
use crate::green::{self, FnIntegrand, FnIntegrandEnv, QuadConfig};

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("expected {expected} perturbation expressions, got {got}")]
    WrongCount { expected: usize, got: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Green(#[from] green::GreenError),
}

/// r_0..r_{n-1} plus the selected root lambda (r_n = 0 implicitly).
#[derive(Clone, Debug)]
pub struct PerturbationBundle {
    n: usize,
    exprs: Vec<Expr>,
    pub lambda: Complex64,
}

impl PerturbationBundle {
    pub fn new(n: usize, exprs: Vec<Expr>, lambda: Complex64) -> Result<Self, PerturbError> {
        if exprs.len() != n {
            return Err(PerturbError::WrongCount {
                expected: n,
                got: exprs.len(),
            });
        }
        Ok(PerturbationBundle { n, exprs, lambda })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.exprs
    }

    pub fn all_zero(&self) -> bool {
        self.exprs.iter().all(|e| e.is_zero())
    }

    /// r_i(t); i = n yields 0 (the implicit r_n).
    pub fn r(&self, i: usize, t: f64) -> Result<f64, EvalError> {
        if i >= self.n {
            return Ok(0.0);
        }
        self.exprs[i].eval(t)
    }

    /// (1/k!) d^k/dx^k P(r(t); x) at x = lambda:
    /// sum_{i >= k} r_i(t) C(i,k) lambda^{i-k}. k = 0 gives P(r; lambda);
    /// k >= n gives 0.
    pub fn p_r_lambda(&self, k: usize, t: f64) -> Result<Complex64, EvalError> {
        if k >= self.n {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for i in k..self.n {
            let ri = self.exprs[i].eval(t)?;
            if ri != 0.0 {
                acc += Complex64::new(ri * binom(i, k), 0.0)
                    * self.lambda.powu((i - k) as u32);
            }
        }
        Ok(acc)
    }

    /// Upper bound sum_i |r_i(t)| |lambda|^i used as the decay envelope for
    /// P(r; lambda) and friends in tail truncation.
    pub fn p_envelope(&self, t: f64) -> f64 {
        let lm = self.lambda.norm();
        let mut acc = 0.0;
        for (i, e) in self.exprs.iter().enumerate() {
            if let Ok(v) = e.eval(t) {
                acc += v.abs() * lm.powi(i as i32);
            }
        }
        acc
    }

    /// |(1/k!) d^k P| bound with absolute values of r and lambda.
    pub fn p_abs(&self, k: usize, t: f64) -> Result<f64, EvalError> {
        if k >= self.n {
            return Ok(0.0);
        }
        let lm = self.lambda.norm();
        let mut acc = 0.0;
        for i in k..self.n {
            let ri = self.exprs[i].eval(t)?;
            acc += ri.abs() * binom(i, k) * lm.powi((i - k) as i32);
        }
        Ok(acc)
    }
}

/// Grid-sampled decay diagnostics for a single perturbation expression.
#[derive(Clone, Debug)]
pub struct SmallnessReport {
    pub grid: Vec<f64>,
    /// r*(t) = int_t^{t+1} |r|
    pub r_star: Vec<f64>,
    /// r_bar(t) = sup_{t < s <= H} (1+s-t)^{-1} int_t^s |r| (finite horizon)
    pub r_bar: Vec<f64>,
    /// I_gamma[r](t)
    pub i_gamma: Vec<f64>,
    /// the sup horizon actually used for r_bar
    pub horizon: f64,
}

/// Lemma-2.1-style equivalence diagnostics on a grid. The true r_bar takes a
/// supremum over an unbounded tail; `horizon` truncates it and is reported.
pub fn smallness_diagnostics(
    r: &Expr,
    gamma: Complex64,
    t_grid: &[f64],
    horizon: Option<f64>,
    q: &QuadConfig,
) -> Result<SmallnessReport, PerturbError> {
    assert!(gamma.re != 0.0, "I_gamma needs Re gamma != 0");
    let t_end = *t_grid.last().unwrap();
    let horizon = horizon.unwrap_or(t_end);

    let abs_r = |s: f64| Complex64::new(r.eval(s).map(|v| v.abs()).unwrap_or(f64::NAN), 0.0);

    // r*: unit-window integrals
    let mut r_star = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mut g = |s: f64| abs_r(s);
        let v = green::integrate(&mut g, t, t + 1.0, q.panel_width, q.panel_order);
        r_star.push(v.re);
    }

    // r_bar: cumulative integral on a refined grid up to the horizon, then a
    // discrete sup of the running averages
    let step = q.panel_width.min(0.25);
    let m = (((horizon - t_grid[0]) / step).ceil() as usize).max(1);
    let fine: Vec<f64> = (0..=m)
        .map(|k| t_grid[0] + (horizon - t_grid[0]) * k as f64 / m as f64)
        .collect();
    let cum = green::cumulative_integral(&FnIntegrand(abs_r), &fine, q);
    let mut r_bar = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        // cumulative value at t by interpolation on the fine grid
        let cum_at = |x: f64| -> f64 {
            let idx = fine.partition_point(|&g| g <= x).saturating_sub(1);
            if idx + 1 >= fine.len() {
                return cum[fine.len() - 1].re;
            }
            let w = (x - fine[idx]) / (fine[idx + 1] - fine[idx]);
            cum[idx].re * (1.0 - w) + cum[idx + 1].re * w
        };
        let base = cum_at(t);
        let mut sup = 0.0f64;
        for (k, &s) in fine.iter().enumerate() {
            if s > t {
                let avg = (cum[k].re - base) / (1.0 + s - t);
                sup = sup.max(avg);
            }
        }
        r_bar.push(sup);
    }

    // I_gamma[r]
    let integrand = FnIntegrandEnv {
        f: abs_r,
        env: |s: f64| r.eval(s).map(|v| v.abs()).unwrap_or(0.0),
    };
    let i_gamma = green::abs_profile(gamma, &integrand, t_grid, q)?;

    Ok(SmallnessReport {
        grid: t_grid.to_vec(),
        r_star,
        r_bar,
        i_gamma,
        horizon,
    })
}
