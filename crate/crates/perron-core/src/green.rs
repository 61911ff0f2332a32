//! Scalar Green kernel g_omega and operators G_omega, I_omega with the
//! dichotomy-respecting direction of integration, the composite operator
//! G[f] = sum_j G_{gamma_j}[f]/Gamma_j for the reduced equation, and the
//! panel quadrature they run on.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::charpoly::SpectralData;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Error)]
pub enum GreenError {
    #[error("Re omega = 0: the kernel needs an exponential dichotomy")]
    ZeroRealPart,
    #[error("tail bound {bound:.3e} not reached within max interval length {max_len}")]
    TailTruncated { bound: f64, max_len: f64 },
}

/// Quadrature settings for the semi-infinite Green integrals.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct QuadConfig {
    /// Gauss–Legendre nodes per panel (>= 4)
    pub panel_order: usize,
    /// nominal panel width (shrunk automatically for fast exponentials)
    pub panel_width: f64,
    /// absolute tolerance for truncating the infinite tail
    pub tail_tol: f64,
    /// hard cap on the truncated interval length
    pub max_len: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            panel_order: 8,
            panel_width: 0.25,
            tail_tol: 1e-12,
            max_len: 300.0,
        }
    }
}

impl QuadConfig {
    fn effective_width(&self, omega_mod: f64) -> f64 {
        self.panel_width.min(1.0 / omega_mod.max(1.0))
    }
}

/// Something the Green operators can integrate: a complex value plus a
/// nonincreasing decay envelope used to truncate the infinite tail.
pub trait Integrand {
    fn value(&self, s: f64) -> Complex64;
    /// |value| bound for large s; defaults to sampling the value itself.
    fn envelope(&self, s: f64) -> f64 {
        self.value(s).norm()
    }
}

/// Closure-backed integrand with the default envelope.
pub struct FnIntegrand<F: Fn(f64) -> Complex64>(pub F);

impl<F: Fn(f64) -> Complex64> Integrand for FnIntegrand<F> {
    fn value(&self, s: f64) -> Complex64 {
        (self.0)(s)
    }
}

/// Closure-backed integrand with an explicit envelope.
pub struct FnIntegrandEnv<F: Fn(f64) -> Complex64, E: Fn(f64) -> f64> {
    pub f: F,
    pub env: E,
}

impl<F: Fn(f64) -> Complex64, E: Fn(f64) -> f64> Integrand for FnIntegrandEnv<F, E> {
    fn value(&self, s: f64) -> Complex64 {
        (self.f)(s)
    }
    fn envelope(&self, s: f64) -> f64 {
        (self.env)(s)
    }
}

// ---------------------------------------------------------------------------
// Gauss–Legendre nodes

/// Nodes and weights on [-1, 1], by Newton iteration on the Legendre
/// polynomial (classical Chebyshev initial guesses).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // evaluate P_n and P_n' by the three-term recurrence
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Integrate f over [a, b] with a single Gauss–Legendre panel.
fn gl_panel(f: &mut impl FnMut(f64) -> Complex64, a: f64, b: f64, nw: &(Vec<f64>, Vec<f64>)) -> Complex64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = ZERO;
    for (&x, &w) in nw.0.iter().zip(&nw.1) {
        acc += Complex64::new(w, 0.0) * f(c + h * x);
    }
    acc * Complex64::new(h, 0.0)
}

/// Integrate f over [a, b] with panels of width <= `width`.
pub fn integrate(f: &mut impl FnMut(f64) -> Complex64, a: f64, b: f64, width: f64, order: usize) -> Complex64 {
    if b <= a {
        return ZERO;
    }
    let nw = gauss_legendre(order);
    let n_panels = ((b - a) / width).ceil().max(1.0) as usize;
    let h = (b - a) / n_panels as f64;
    let mut acc = ZERO;
    for k in 0..n_panels {
        let pa = a + k as f64 * h;
        acc += gl_panel(f, pa, pa + h, &nw);
    }
    acc
}

// ---------------------------------------------------------------------------
// kernel and scalar operators

/// One-sided exponential kernel: -sgn(Re w) e^{w(t-s)} when
/// sgn(Re w)(t-s) < 0, else 0 (including t = s).
pub fn kernel(omega: Complex64, t: f64, s: f64) -> Result<Complex64, GreenError> {
    if omega.re == 0.0 {
        return Err(GreenError::ZeroRealPart);
    }
    let sgn = omega.re.signum();
    if sgn * (t - s) < 0.0 {
        Ok(Complex64::new(-sgn, 0.0) * (omega * (t - s)).exp())
    } else {
        Ok(ZERO)
    }
}

/// Result of a semi-infinite quadrature; `truncation` carries the unreached
/// tail-bound estimate when the cutoff hit the max interval length.
#[derive(Clone, Copy, Debug)]
pub struct GreenEval<T> {
    pub value: T,
    pub truncation: Option<f64>,
}

/// Smallest cutoff T (stepping by panel width) with
/// e^{-Re w (T-t)} envelope(T) / Re w < tol.
pub fn tail_bound(
    omega: Complex64,
    envelope: &dyn Fn(f64) -> f64,
    t: f64,
    q: &QuadConfig,
) -> Result<f64, GreenError> {
    assert!(omega.re > 0.0, "tail_bound needs Re omega > 0");
    let a = omega.re;
    let step = q.panel_width;
    let mut excess = 0.0;
    loop {
        let bound = (-a * excess).exp() * envelope(t + excess) / a;
        if bound < q.tail_tol {
            return Ok(t + excess);
        }
        if excess >= q.max_len {
            return Err(GreenError::TailTruncated {
                bound,
                max_len: q.max_len,
            });
        }
        excess += step;
    }
}

/// G_omega[f](t): for Re w > 0, -int_t^{T_cut} e^{w(t-s)} f(s) ds;
/// for Re w < 0, +int_{t0}^{t} e^{w(t-s)} f(s) ds.
pub fn scalar_green(
    omega: Complex64,
    f: &dyn Integrand,
    t0: f64,
    t: f64,
    q: &QuadConfig,
) -> Result<GreenEval<Complex64>, GreenError> {
    if omega.re == 0.0 {
        return Err(GreenError::ZeroRealPart);
    }
    let width = q.effective_width(omega.norm());
    if omega.re > 0.0 {
        let (t_cut, truncation) = match tail_bound(omega, &|s| f.envelope(s), t, q) {
            Ok(tc) => (tc, None),
            Err(GreenError::TailTruncated { bound, .. }) => (t + q.max_len, Some(bound)),
            Err(e) => return Err(e),
        };
        let mut g = |s: f64| (omega * (t - s)).exp() * f.value(s);
        let integral = integrate(&mut g, t, t_cut, width, q.panel_order);
        Ok(GreenEval {
            value: -integral,
            truncation,
        })
    } else {
        let mut g = |s: f64| (omega * (t - s)).exp() * f.value(s);
        let integral = integrate(&mut g, t0, t, width, q.panel_order);
        Ok(GreenEval {
            value: integral,
            truncation: None,
        })
    }
}

/// I_omega[f](t) = int |g_{Re w}(t,s) f(s)| ds (absolute-value companion;
/// only Re omega enters).
pub fn scalar_abs(
    omega: Complex64,
    f: &dyn Integrand,
    t0: f64,
    t: f64,
    q: &QuadConfig,
) -> Result<GreenEval<f64>, GreenError> {
    let a = Complex64::new(omega.re, 0.0);
    if a.re == 0.0 {
        return Err(GreenError::ZeroRealPart);
    }
    let width = q.effective_width(a.norm());
    if a.re > 0.0 {
        let (t_cut, truncation) = match tail_bound(a, &|s| f.envelope(s), t, q) {
            Ok(tc) => (tc, None),
            Err(GreenError::TailTruncated { bound, .. }) => (t + q.max_len, Some(bound)),
            Err(e) => return Err(e),
        };
        let mut g = |s: f64| Complex64::new((a.re * (t - s)).exp() * f.value(s).norm(), 0.0);
        let integral = integrate(&mut g, t, t_cut, width, q.panel_order);
        Ok(GreenEval {
            value: integral.re,
            truncation,
        })
    } else {
        let mut g = |s: f64| Complex64::new((a.re * (t - s)).exp() * f.value(s).norm(), 0.0);
        let integral = integrate(&mut g, t0, t, width, q.panel_order);
        Ok(GreenEval {
            value: integral.re,
            truncation: None,
        })
    }
}

/// i-th derivative of the composite operator:
/// G[f]^(i)(t) = sum_j gamma_j^i / Gamma_j G_{gamma_j}[f](t), with the extra
/// +f(t) when i = n-1.
pub fn composite_green(
    s: &SpectralData,
    f: &dyn Integrand,
    t0: f64,
    t: f64,
    i: usize,
    q: &QuadConfig,
) -> Result<GreenEval<Complex64>, GreenError> {
    let n = s.order();
    assert!(i <= n - 1);
    let mut acc = ZERO;
    let mut truncation: Option<f64> = None;
    for (g, big) in s.gammas.iter().zip(&s.big_gammas) {
        let ev = scalar_green(*g, f, t0, t, q)?;
        acc += g.powu(i as u32) / big * ev.value;
        truncation = match (truncation, ev.truncation) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
    }
    if i == n - 1 {
        acc += f.value(t);
    }
    Ok(GreenEval {
        value: acc,
        truncation,
    })
}

// ---------------------------------------------------------------------------
// grid machinery

/// Complex samples on a strictly increasing grid with local cubic
/// interpolation (clamped at the ends).
#[derive(Clone, Debug, Serialize)]
pub struct GridFunction {
    pub grid: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl GridFunction {
    pub fn new(grid: Vec<f64>, values: Vec<Complex64>) -> Self {
        assert_eq!(grid.len(), values.len());
        assert!(grid.windows(2).all(|w| w[1] > w[0]), "grid must increase");
        GridFunction { grid, values }
    }

    pub fn real(grid: Vec<f64>, values: Vec<f64>) -> Self {
        Self::new(
            grid,
            values.into_iter().map(|v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn t_start(&self) -> f64 {
        self.grid[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Local cubic (4-point Lagrange) interpolation; clamps outside the grid.
    pub fn eval(&self, t: f64) -> Complex64 {
        let n = self.grid.len();
        if n == 1 || t <= self.grid[0] {
            return self.values[0];
        }
        if t >= self.grid[n - 1] {
            return self.values[n - 1];
        }
        let idx = match self
            .grid
            .binary_search_by(|g| g.partial_cmp(&t).unwrap())
        {
            Ok(i) => return self.values[i],
            Err(i) => i - 1, // grid[idx] < t < grid[idx+1]
        };
        if n < 4 {
            // linear fallback on short grids
            let (a, b) = (self.grid[idx], self.grid[idx + 1]);
            let w = (t - a) / (b - a);
            return self.values[idx] * Complex64::new(1.0 - w, 0.0)
                + self.values[idx + 1] * Complex64::new(w, 0.0);
        }
        let lo = idx.saturating_sub(1).min(n - 4);
        let xs = &self.grid[lo..lo + 4];
        let ys = &self.values[lo..lo + 4];
        let mut acc = ZERO;
        for i in 0..4 {
            let mut l = 1.0;
            for j in 0..4 {
                if j != i {
                    l *= (t - xs[j]) / (xs[i] - xs[j]);
                }
            }
            acc += ys[i] * Complex64::new(l, 0.0);
        }
        acc
    }
}

/// Grid-backed integrand: cubic interpolation inside the grid; beyond the
/// grid end the declared decay envelope extends the last value by its ratio.
pub struct GridIntegrand<'a, E: Fn(f64) -> f64> {
    pub gf: &'a GridFunction,
    pub env: E,
}

impl<'a, E: Fn(f64) -> f64> Integrand for GridIntegrand<'a, E> {
    fn value(&self, s: f64) -> Complex64 {
        let end = self.gf.t_end();
        if s <= end {
            self.gf.eval(s)
        } else {
            let e_end = (self.env)(end);
            if e_end == 0.0 {
                ZERO
            } else {
                self.gf.values[self.gf.values.len() - 1]
                    * Complex64::new((self.env)(s) / e_end, 0.0)
            }
        }
    }

    fn envelope(&self, s: f64) -> f64 {
        let end = self.gf.t_end();
        if s <= end {
            self.gf.eval(s).norm()
        } else {
            self.value(s).norm()
        }
    }
}

/// G_omega[f] sampled on a whole grid in O(N) via the semigroup recursion
/// (the pointwise scalar_green is the test oracle for this).
/// The grid start is the operator's lower limit t0.
pub fn green_profile(
    omega: Complex64,
    f: &dyn Integrand,
    grid: &[f64],
    q: &QuadConfig,
) -> Result<Vec<Complex64>, GreenError> {
    if omega.re == 0.0 {
        return Err(GreenError::ZeroRealPart);
    }
    let n = grid.len();
    let width = q.effective_width(omega.norm());
    let order = q.panel_order;
    let mut out = vec![ZERO; n];
    if omega.re < 0.0 {
        // v(t) = int_{t0}^{t} e^{w(t-s)} f(s) ds, v(t0) = 0
        let mut v = ZERO;
        for k in 1..n {
            let (a, b) = (grid[k - 1], grid[k]);
            let mut g = |s: f64| (omega * (b - s)).exp() * f.value(s);
            let local = integrate(&mut g, a, b, width, order);
            v = (omega * (b - a)).exp() * v + local;
            out[k] = v;
        }
    } else {
        // v(t) = -int_t^{inf} e^{w(t-s)} f(s) ds, backward recursion
        let t_end = grid[n - 1];
        let t_cut = match tail_bound(omega, &|s| f.envelope(s), t_end, q) {
            Ok(tc) => tc,
            Err(GreenError::TailTruncated { .. }) => t_end + q.max_len,
            Err(e) => return Err(e),
        };
        let mut g_tail = |s: f64| (omega * (t_end - s)).exp() * f.value(s);
        let mut v = -integrate(&mut g_tail, t_end, t_cut, width, order);
        out[n - 1] = v;
        for k in (0..n - 1).rev() {
            let (a, b) = (grid[k], grid[k + 1]);
            let mut g = |s: f64| (omega * (a - s)).exp() * f.value(s);
            let local = integrate(&mut g, a, b, width, order);
            v = (omega * (a - b)).exp() * v - local;
            out[k] = v;
        }
    }
    Ok(out)
}

/// I_omega[f] sampled on a whole grid (same recursion on |f|, rate Re omega).
pub fn abs_profile(
    omega: Complex64,
    f: &dyn Integrand,
    grid: &[f64],
    q: &QuadConfig,
) -> Result<Vec<f64>, GreenError> {
    let absf = FnIntegrandEnv {
        f: |s: f64| Complex64::new(f.value(s).norm(), 0.0),
        env: |s: f64| f.envelope(s),
    };
    let a = Complex64::new(omega.re, 0.0);
    let prof = green_profile(a, &absf, grid, q)?;
    // G_{Re w}[|f|] = -I for Re w > 0, +I for Re w < 0 by the kernel sign
    let sgn = if omega.re > 0.0 { -1.0 } else { 1.0 };
    Ok(prof.iter().map(|v| sgn * v.re).collect())
}

/// Cumulative integral int_{grid[0]}^{grid[k]} f ds per grid node.
pub fn cumulative_integral(
    f: &dyn Integrand,
    grid: &[f64],
    q: &QuadConfig,
) -> Vec<Complex64> {
    let mut out = vec![ZERO; grid.len()];
    let mut acc = ZERO;
    for k in 1..grid.len() {
        let mut g = |s: f64| f.value(s);
        acc += integrate(&mut g, grid[k - 1], grid[k], q.panel_width, q.panel_order);
        out[k] = acc;
    }
    out
}
