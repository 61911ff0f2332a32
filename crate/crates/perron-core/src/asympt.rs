//! Assembly and evaluation of the asymptotic solution formulas: the general
//! fixed-point form, the L^1 (Levinson-type) and L^p (Hartman-Wintner-type)
//! corollaries, the refined u = z - theta forms, and the ladder formula built
//! from theta_1..theta_m. All factors are kept in log-space.

use num_complex::Complex64;
use serde::Serialize;

use crate::charpoly::SpectralData;
use crate::green::{
    abs_profile, cumulative_integral, green_profile, GridFunction, GridIntegrand, QuadConfig,
};
use crate::riccati::RiccatiSystem;
use crate::solver::{SolverError, ThetaLadder, ZSolution};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulaKind {
    General,
    Levinson,
    HartmanWintner,
    Refined,
    Ladder,
}

/// One asymptotic formula in log-space:
/// log y(t) = lambda (t - t0) + green_correction(t) + integral_correction(t),
/// valid up to the 1 + O(error_envelope) factor of the corresponding theorem.
#[derive(Clone, Debug, Serialize)]
pub struct AsymptoticReport {
    pub kind: FormulaKind,
    pub lambda: Complex64,
    pub t0: f64,
    /// (-1)^n prod_j gamma_j^{-1}, equal to sum_j 1/(Gamma_j gamma_j)
    pub prefactor: Complex64,
    /// -sum_j G_{gamma_j}[.](t) / (Gamma_j gamma_j)
    pub green_correction: GridFunction,
    /// prefactor * int_{t0}^t of the kind's integrand
    pub integral_correction: GridFunction,
    /// lambda + z(t) (or lambda + sum theta_l for the ladder)
    pub log_derivative: GridFunction,
    /// samples of the O(.) argument of the theorem used
    pub error_envelope: Vec<f64>,
    pub applicable: bool,
    pub note: String,
}

pub struct FormulaValue {
    pub y: Complex64,
    pub log_derivative: Complex64,
}

/// Evaluate the assembled formula at t (inside the report grid).
pub fn eval_formula(rep: &AsymptoticReport, t: f64) -> FormulaValue {
    let log_y = rep.lambda * Complex64::new(t - rep.t0, 0.0)
        + rep.green_correction.eval(t)
        + rep.integral_correction.eval(t);
    FormulaValue {
        y: log_y.exp(),
        log_derivative: rep.log_derivative.eval(t),
    }
}

fn zeros(grid: &[f64]) -> GridFunction {
    GridFunction::new(grid.to_vec(), vec![ZERO; grid.len()])
}

/// -sum_j G_{gamma_j}[w](t) / (Gamma_j gamma_j) on the grid.
fn green_correction(
    sys: &RiccatiSystem,
    s: &SpectralData,
    w: &GridFunction,
    q: &QuadConfig,
) -> Result<GridFunction, SolverError> {
    let integrand = GridIntegrand {
        gf: w,
        env: |t: f64| sys.bundle.p_envelope(t),
    };
    let mut out = vec![ZERO; w.grid.len()];
    for (j, g) in s.gammas.iter().enumerate() {
        let prof = green_profile(*g, &integrand, &w.grid, q)?;
        let coeff = Complex64::new(1.0, 0.0) / (s.big_gammas[j] * g);
        for (o, v) in out.iter_mut().zip(&prof) {
            *o -= coeff * v;
        }
    }
    Ok(GridFunction::new(w.grid.clone(), out))
}

/// prefactor * int_{t0}^t w on the grid.
fn integral_correction(
    sys: &RiccatiSystem,
    s: &SpectralData,
    w: &GridFunction,
    q: &QuadConfig,
) -> GridFunction {
    let integrand = GridIntegrand {
        gf: w,
        env: |t: f64| sys.bundle.p_envelope(t),
    };
    let pre = s.prefactor();
    let cum = cumulative_integral(&integrand, &w.grid, q);
    GridFunction::new(w.grid.clone(), cum.into_iter().map(|v| pre * v).collect())
}

/// sum_j I_{alpha_j}[|f|] on the grid.
fn stacked_i_profile(
    sys: &RiccatiSystem,
    s: &SpectralData,
    f: &GridFunction,
    q: &QuadConfig,
) -> Result<Vec<f64>, SolverError> {
    let integrand = GridIntegrand {
        gf: f,
        env: |t: f64| sys.bundle.p_envelope(t),
    };
    let mut out = vec![0.0; f.grid.len()];
    for &a in &s.alphas {
        let prof = abs_profile(Complex64::new(a, 0.0), &integrand, &f.grid, q)?;
        for (o, v) in out.iter_mut().zip(&prof) {
            *o += v;
        }
    }
    Ok(out)
}

/// int_t^{t_end} f(s) ds by trapezoid from the right, plus a power-law tail
/// estimate beyond the grid end: when the integrand decays like t^p with
/// p < -1 (fitted on the last quarter), the analytic tail f(T) T / (-p - 1)
/// is added; otherwise the envelope is grid-truncated.
fn reverse_cumulative(grid: &[f64], f: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut out = vec![0.0; n];
    let p = loglog_tail_slope(grid, f);
    let tail = if p.is_finite() && p < -1.05 {
        f[n - 1] * grid[n - 1] / (-p - 1.0)
    } else {
        0.0
    };
    out[n - 1] = tail;
    for k in (0..n - 1).rev() {
        let h = grid[k + 1] - grid[k];
        out[k] = out[k + 1] + 0.5 * h * (f[k] + f[k + 1]);
    }
    out
}

/// Least-squares slope of log|f| against log t over the last half of the
/// grid; NaN when the window has no usable samples.
pub fn loglog_tail_slope(grid: &[f64], f: &[f64]) -> f64 {
    let n = grid.len();
    let pts: Vec<(f64, f64)> = (n / 2..n)
        .filter(|&k| grid[k] > 0.0 && f[k] > 0.0)
        .map(|k| (grid[k].ln(), f[k].ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (m * sxy - sx * sy) / (m * sxx - sx * sx)
}

fn check_prefactor(s: &SpectralData) -> Complex64 {
    let pre = s.prefactor();
    let alt: Complex64 = s
        .gammas
        .iter()
        .zip(&s.big_gammas)
        .map(|(g, big)| Complex64::new(1.0, 0.0) / (big * g))
        .sum();
    debug_assert!(
        (pre - alt).norm() <= 1e-8 * (1.0 + pre.norm()),
        "prefactor identity violated: {pre} vs {alt}"
    );
    pre
}

/// lambda + z as a grid function.
fn log_derivative_from(z: &ZSolution, lambda: Complex64) -> GridFunction {
    GridFunction::new(
        z.grid.clone(),
        z.stack[0].values.iter().map(|v| lambda + v).collect(),
    )
}

/// |L + F| at the solution: |w - P(r;lambda)| on the grid.
fn nonlinear_part(
    sys: &RiccatiSystem,
    z: &ZSolution,
) -> Result<GridFunction, SolverError> {
    let vals: Result<Vec<Complex64>, SolverError> = z
        .grid
        .iter()
        .zip(&z.rhs.values)
        .map(|(&t, &w)| {
            let p0 = sys
                .bundle
                .p_r_lambda(0, t)
                .map_err(crate::riccati::RiccatiError::from)?;
            Ok(w - p0)
        })
        .collect();
    Ok(GridFunction::new(z.grid.clone(), vals?))
}

/// P(r;lambda) samples.
fn p_grid(sys: &RiccatiSystem, grid: &[f64]) -> Result<GridFunction, SolverError> {
    let vals: Result<Vec<Complex64>, SolverError> = grid
        .iter()
        .map(|&t| {
            sys.bundle
                .p_r_lambda(0, t)
                .map_err(|e| crate::riccati::RiccatiError::from(e).into())
        })
        .collect();
    Ok(GridFunction::new(grid.to_vec(), vals?))
}

/// General fixed-point formula: both correction factors plus the
/// sum_j I_{alpha_j}[L + F] envelope.
pub fn assemble_general(
    z: &ZSolution,
    s: &SpectralData,
    sys: &RiccatiSystem,
    q: &QuadConfig,
) -> Result<AsymptoticReport, SolverError> {
    let pre = check_prefactor(s);
    let p = p_grid(sys, &z.grid)?;
    let lf = nonlinear_part(sys, z)?;
    Ok(AsymptoticReport {
        kind: FormulaKind::General,
        lambda: sys.lambda,
        t0: z.grid[0],
        prefactor: pre,
        green_correction: green_correction(sys, s, &p, q)?,
        integral_correction: integral_correction(sys, s, &z.rhs, q),
        log_derivative: log_derivative_from(z, sys.lambda),
        error_envelope: stacked_i_profile(sys, s, &lf, q)?,
        applicable: true,
        note: "log y = lambda (t - t0) - sum_j G_gamma_j[P]/(Gamma_j gamma_j) \
               + prefactor * int [P + L + F]"
            .into(),
    })
}

/// L^1 formula: bare exponential with the integrated-envelope error factor.
/// Applicability = numerical L^1 tail of P below `l1_threshold` over the
/// last half of the grid.
pub fn assemble_levinson(
    z: &ZSolution,
    s: &SpectralData,
    sys: &RiccatiSystem,
    q: &QuadConfig,
    l1_threshold: f64,
) -> Result<AsymptoticReport, SolverError> {
    let pre = check_prefactor(s);
    let _ = q;
    let grid = &z.grid;
    // int_t^{t_end} (I_beta + I_-beta)[P](s) ds from the solution envelope
    let env = reverse_cumulative(grid, &z.envelope);
    // L^1 check: tail mass of |P| over the last half of the grid
    let pabs: Vec<f64> = grid
        .iter()
        .map(|&t| sys.bundle.p_abs(0, t).unwrap_or(f64::INFINITY))
        .collect();
    let tail_mass = reverse_cumulative(grid, &pabs)[grid.len() / 2];
    let applicable = tail_mass <= l1_threshold;
    Ok(AsymptoticReport {
        kind: FormulaKind::Levinson,
        lambda: sys.lambda,
        t0: grid[0],
        prefactor: pre,
        green_correction: zeros(grid),
        integral_correction: zeros(grid),
        log_derivative: log_derivative_from(z, sys.lambda),
        error_envelope: env,
        applicable,
        note: format!(
            "y = [1 + O(int_t^inf (I_b + I_-b)[P])] e^(lambda (t - t0)); \
             L1 tail of |P| over last half = {tail_mass:.3e} (threshold {l1_threshold:.3e})"
        ),
    })
}

/// L^p (1 < p <= 2) formula: Green correction of P plus prefactor * int P,
/// with the L + F remainder as the error envelope.
pub fn assemble_hw(
    z: &ZSolution,
    s: &SpectralData,
    sys: &RiccatiSystem,
    q: &QuadConfig,
) -> Result<AsymptoticReport, SolverError> {
    let pre = check_prefactor(s);
    let p = p_grid(sys, &z.grid)?;
    let lf = nonlinear_part(sys, z)?;
    let lf_abs: Vec<f64> = lf.values.iter().map(|v| v.norm()).collect();
    let mut env = stacked_i_profile(sys, s, &lf, q)?;
    for (e, t) in env.iter_mut().zip(reverse_cumulative(&z.grid, &lf_abs)) {
        *e += t;
    }
    Ok(AsymptoticReport {
        kind: FormulaKind::HartmanWintner,
        lambda: sys.lambda,
        t0: z.grid[0],
        prefactor: pre,
        green_correction: green_correction(sys, s, &p, q)?,
        integral_correction: integral_correction(sys, s, &p, q),
        log_derivative: log_derivative_from(z, sys.lambda),
        error_envelope: env,
        applicable: true,
        note: "log y = lambda (t - t0) - sum_j G_gamma_j[P]/(Gamma_j gamma_j) \
               + prefactor * int P; eps = O(sum_j I_a_j[L + F] + int_t^inf |L + F|)"
            .into(),
    })
}

/// Intermediate data for the u = z - theta split.
pub struct RefinedParts {
    /// theta = -G[P(r;lambda)] with its derivative stack
    pub theta: Vec<GridFunction>,
    /// R(., theta) = L(., theta) + F(., Theta)
    pub r_theta: GridFunction,
    /// u = z - theta
    pub u: GridFunction,
    /// L(., u) + F(., Z) - F(., Theta) (the remainder driving eps(t))
    pub remainder: GridFunction,
    /// log-log tail slope of |R(., theta)|
    pub r_theta_slope: f64,
}

/// Materialize theta, R(., theta), u and the refined remainder.
pub fn refined_parts(
    z: &ZSolution,
    s: &SpectralData,
    sys: &RiccatiSystem,
    q: &QuadConfig,
) -> Result<RefinedParts, SolverError> {
    let lad = crate::solver::theta_ladder(sys, s, 1, &z.grid, q, None)?;
    let theta = lad.thetas.into_iter().next().unwrap();
    let n = sys.n;
    let mut r_theta = Vec::with_capacity(z.grid.len());
    let mut remainder = Vec::with_capacity(z.grid.len());
    for (k, &t) in z.grid.iter().enumerate() {
        let th: Vec<Complex64> = (0..n - 1).map(|i| theta[i].values[k]).collect();
        let zz: Vec<Complex64> = (0..n - 1).map(|i| z.stack[i].values[k]).collect();
        let uu: Vec<Complex64> = (0..n - 1).map(|i| zz[i] - th[i]).collect();
        let l_th = sys.eval_l(t, &th)?;
        let f_th = sys.eval_f(t, &th)?;
        let f_z = sys.eval_f(t, &zz)?;
        let l_u = sys.eval_l(t, &uu)?;
        r_theta.push(l_th + f_th);
        remainder.push(l_u + f_z - f_th);
    }
    let r_abs: Vec<f64> = r_theta.iter().map(|v| v.norm()).collect();
    let slope = loglog_tail_slope(&z.grid, &r_abs);
    let u = GridFunction::new(
        z.grid.clone(),
        z.stack[0]
            .values
            .iter()
            .zip(&theta[0].values)
            .map(|(a, b)| a - b)
            .collect(),
    );
    Ok(RefinedParts {
        theta,
        r_theta: GridFunction::new(z.grid.clone(), r_theta),
        u,
        remainder: GridFunction::new(z.grid.clone(), remainder),
        r_theta_slope: slope,
    })
}

/// Refined formulas built on u = z - theta. `full_correction = false` keeps
/// only the P-corrections (R integrable, absorbed into 1 + eps);
/// `full_correction = true` carries P + R(., theta) in both corrections.
pub fn assemble_refined(
    z: &ZSolution,
    s: &SpectralData,
    sys: &RiccatiSystem,
    q: &QuadConfig,
    full_correction: bool,
) -> Result<AsymptoticReport, SolverError> {
    let pre = check_prefactor(s);
    let parts = refined_parts(z, s, sys, q)?;
    let p = p_grid(sys, &z.grid)?;
    let (gc, ic, env, note) = if full_correction {
        let pr = GridFunction::new(
            z.grid.clone(),
            p.values
                .iter()
                .zip(&parts.r_theta.values)
                .map(|(a, b)| a + b)
                .collect(),
        );
        let rem_abs: Vec<f64> = parts.remainder.values.iter().map(|v| v.norm()).collect();
        let mut env = stacked_i_profile(sys, s, &parts.remainder, q)?;
        for (e, t) in env.iter_mut().zip(reverse_cumulative(&z.grid, &rem_abs)) {
            *e += t;
        }
        (
            green_correction(sys, s, &pr, q)?,
            integral_correction(sys, s, &pr, q),
            env,
            format!(
                "log y = lambda (t - t0) - sum_j G_gamma_j[P + R(., theta)]/(Gamma_j gamma_j) \
                 + prefactor * int [P + R(., theta)]; |R(., theta)| tail slope {:.3}",
                parts.r_theta_slope
            ),
        )
    } else {
        // R integrable: only P-corrections, eps from int_t^inf (I_b+I_-b)[R]
        let r_abs = GridFunction::new(
            z.grid.clone(),
            parts.r_theta.values.clone(),
        );
        let integrand = GridIntegrand {
            gf: &r_abs,
            env: |t: f64| sys.bundle.p_envelope(t),
        };
        let ib = abs_profile(Complex64::new(s.beta, 0.0), &integrand, &z.grid, q)?;
        let im = abs_profile(Complex64::new(-s.beta, 0.0), &integrand, &z.grid, q)?;
        let both: Vec<f64> = ib.iter().zip(&im).map(|(a, b)| a + b).collect();
        (
            green_correction(sys, s, &p, q)?,
            integral_correction(sys, s, &p, q),
            reverse_cumulative(&z.grid, &both),
            format!(
                "log y = lambda (t - t0) - sum_j G_gamma_j[P]/(Gamma_j gamma_j) \
                 + prefactor * int P; eps = O(int_t^inf (I_b + I_-b)[R(., theta)]); \
                 |R(., theta)| tail slope {:.3}",
                parts.r_theta_slope
            ),
        )
    };
    Ok(AsymptoticReport {
        kind: FormulaKind::Refined,
        lambda: sys.lambda,
        t0: z.grid[0],
        prefactor: pre,
        green_correction: gc,
        integral_correction: ic,
        log_derivative: log_derivative_from(z, sys.lambda),
        error_envelope: env,
        applicable: true,
        note,
    })
}

/// Ladder formula: log y = lambda (t - t0) + int_{t0}^t sum_l theta_l, with
/// log-derivative lambda + sum_l theta_l and, when a solution is attached,
/// |psi_m| as the error envelope.
pub fn assemble_ladder(
    ladder: &ThetaLadder,
    s: &SpectralData,
    sys: &RiccatiSystem,
    q: &QuadConfig,
) -> Result<AsymptoticReport, SolverError> {
    let pre = check_prefactor(s);
    let grid = ladder.thetas[0][0].grid.clone();
    let sum_theta: Vec<Complex64> = (0..grid.len())
        .map(|k| ladder.thetas.iter().map(|th| th[0].values[k]).sum())
        .collect();
    let st = GridFunction::new(grid.clone(), sum_theta.clone());
    let integrand = GridIntegrand {
        gf: &st,
        env: |t: f64| sys.bundle.p_envelope(t),
    };
    let cum = cumulative_integral(&integrand, &grid, q);
    let env = match &ladder.psi {
        Some(psi) => psi.values.iter().map(|v| v.norm()).collect(),
        None => vec![0.0; grid.len()],
    };
    Ok(AsymptoticReport {
        kind: FormulaKind::Ladder,
        lambda: sys.lambda,
        t0: grid[0],
        prefactor: pre,
        green_correction: zeros(&grid),
        integral_correction: GridFunction::new(grid.clone(), cum),
        log_derivative: GridFunction::new(
            grid.clone(),
            sum_theta.iter().map(|v| sys.lambda + v).collect(),
        ),
        error_envelope: env,
        applicable: true,
        note: "log y = lambda (t - t0) + int_{t0}^t sum_l theta_l".into(),
    })
}
