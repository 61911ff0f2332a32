//! Config-driven orchestration: parse a run configuration, drive the
//! pipeline (roots -> Riccati -> Picard -> formulas -> validation), and emit
//! deterministic CSV/JSON artifacts.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use perron_core::asympt::{
    assemble_general, assemble_hw, assemble_ladder, assemble_levinson, assemble_refined,
    AsymptoticReport, FormulaKind,
};
use perron_core::charpoly::{find_roots, spectral_data, SpectralData};
use perron_core::expr::{parse_expr, Expr};
use perron_core::green::QuadConfig;
use perron_core::riccati::{build_riccati, PerturbedODE, RiccatiSystem};
use perron_core::solver::{contraction_constants, picard_solve, theta_ladder, ZSolution};
use perron_core::validate::{example5_harness, ode_residual_along_z, shadowed_reference};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    /// exit code 2
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    /// exit code 3
    #[error("numeric failure in {stage}: {message}")]
    Numeric { stage: String, message: String },
    /// exit code 4
    #[error("checks failed: {0}")]
    Acceptance(String),
    /// exit code 3
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numeric { .. } | CliError::Io(_) => 3,
            CliError::Acceptance(_) => 4,
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn numeric<E: std::fmt::Display>(stage: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Numeric {
        stage: stage.to_string(),
        message: e.to_string(),
    }
}

// ---------------------------------------------------------------------------
// configuration

/// Root-selection strategy: "index:k" into the sorted root list, or an
/// explicit complex value [re, im].
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum LambdaSelector {
    Named(String),
    Value([f64; 2]),
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct QuadSection {
    pub panel_order: Option<usize>,
    pub panel_width: Option<f64>,
    pub tail_tol: Option<f64>,
    pub max_len: Option<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSection {
    pub tol: f64,
    pub max_iter: usize,
    /// sup-norm ball radius used by the contraction certificate
    pub ball: f64,
}

impl Default for PicardSection {
    fn default() -> Self {
        PicardSection {
            tol: 1e-10,
            max_iter: 60,
            ball: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub csv_dir: Option<String>,
    pub json_report: Option<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    /// complex coefficients a_0..a_{n-1} as [re, im] pairs
    pub a: Vec<[f64; 2]>,
    /// perturbation expressions r_0(t)..r_{n-1}(t); "0" for absent terms
    pub perturbations: Vec<String>,
    pub t0: f64,
    pub t_end: f64,
    pub step: f64,
    pub lambda: LambdaSelector,
    pub beta: Option<f64>,
    pub quad: Option<QuadSection>,
    #[serde(default)]
    pub picard: PicardSection,
    /// ladder depth m >= 1
    #[serde(default = "default_depth")]
    pub ladder_depth: usize,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_depth() -> usize {
    2
}

/// Everything derived from a validated config that commands share.
pub struct Prepared {
    pub ode: PerturbedODE,
    pub lambda: Complex64,
    pub roots: Vec<Complex64>,
    pub spectral: SpectralData,
    pub system: RiccatiSystem,
    pub grid: Vec<f64>,
    pub quad: QuadConfig,
    pub config: RunConfig,
    pub config_sha256: String,
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    toml::from_str(text).map_err(|e| config_err("<root>", e.to_string()))
}

pub fn validate_config(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.n < 2 {
        return Err(config_err("n", "order must be at least 2"));
    }
    if cfg.a.len() != cfg.n {
        return Err(config_err(
            "a",
            format!("expected {} coefficients, got {}", cfg.n, cfg.a.len()),
        ));
    }
    if cfg.perturbations.len() != cfg.n {
        return Err(config_err(
            "perturbations",
            format!(
                "expected {} perturbation expressions, got {}",
                cfg.n,
                cfg.perturbations.len()
            ),
        ));
    }
    if !(cfg.t_end > cfg.t0) {
        return Err(config_err("t_end", "t_end must exceed t0"));
    }
    if !(cfg.step > 0.0) {
        return Err(config_err("step", "step must be positive"));
    }
    if let Some(b) = cfg.beta {
        if !(b > 0.0) {
            return Err(config_err("beta", "beta must be positive when given"));
        }
    }
    if cfg.picard.tol <= 0.0 {
        return Err(config_err("picard.tol", "tolerance must be positive"));
    }
    if cfg.ladder_depth == 0 || cfg.ladder_depth > 4 {
        return Err(config_err("ladder_depth", "depth must be in 1..=4"));
    }
    if let LambdaSelector::Named(s) = &cfg.lambda {
        let rest = s
            .strip_prefix("index:")
            .ok_or_else(|| config_err("lambda", "expected \"index:k\" or [re, im]"))?;
        let k: usize = rest
            .parse()
            .map_err(|_| config_err("lambda", "index is not an integer"))?;
        if k >= cfg.n {
            return Err(config_err("lambda", format!("index {k} out of 0..{}", cfg.n)));
        }
    }
    Ok(())
}

pub fn prepare(text: &str) -> Result<Prepared, CliError> {
    let cfg = parse_config(text)?;
    validate_config(&cfg)?;
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let config_sha256 = format!("{:x}", hasher.finalize());

    let mut exprs: Vec<Expr> = Vec::with_capacity(cfg.n);
    for (i, src) in cfg.perturbations.iter().enumerate() {
        let e = parse_expr(src)
            .map_err(|e| config_err(&format!("perturbations[{i}]"), e.to_string()))?;
        exprs.push(e);
    }
    let a: Vec<Complex64> = cfg.a.iter().map(|&[re, im]| Complex64::new(re, im)).collect();
    let ode = PerturbedODE {
        n: cfg.n,
        a,
        r: exprs,
        t0: cfg.t0,
    };
    let p = ode.char_poly();
    let roots = find_roots(&p, 1e-10).map_err(numeric("root finding"))?;
    let lambda = match &cfg.lambda {
        LambdaSelector::Named(s) => {
            let k: usize = s.strip_prefix("index:").unwrap().parse().unwrap();
            roots[k]
        }
        LambdaSelector::Value([re, im]) => Complex64::new(*re, *im),
    };
    let spectral =
        spectral_data(&roots, lambda, cfg.beta).map_err(numeric("spectral data"))?;
    let system = build_riccati(&ode, lambda).map_err(numeric("riccati assembly"))?;
    let steps = ((cfg.t_end - cfg.t0) / cfg.step).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| cfg.t0 + k as f64 * cfg.step).collect();
    let mut quad = QuadConfig::default();
    if let Some(qs) = &cfg.quad {
        if let Some(v) = qs.panel_order {
            quad.panel_order = v;
        }
        if let Some(v) = qs.panel_width {
            quad.panel_width = v;
        }
        if let Some(v) = qs.tail_tol {
            quad.tail_tol = v;
        }
        if let Some(v) = qs.max_len {
            quad.max_len = v;
        }
    }
    Ok(Prepared {
        ode,
        lambda,
        roots,
        spectral,
        system,
        grid,
        quad,
        config: cfg,
        config_sha256,
    })
}

// ---------------------------------------------------------------------------
// report envelope

#[derive(Serialize)]
pub struct ReportEnvelope<T: Serialize> {
    pub tool_version: &'static str,
    pub config_sha256: String,
    pub command: String,
    pub report: T,
}

pub fn to_json<T: Serialize>(p: &Prepared, command: &str, report: T) -> String {
    let env = ReportEnvelope {
        tool_version: TOOL_VERSION,
        config_sha256: p.config_sha256.clone(),
        command: command.to_string(),
        report,
    };
    serde_json::to_string_pretty(&env).expect("serializable report")
}

// ---------------------------------------------------------------------------
// commands

#[derive(Serialize)]
pub struct AnalyzeReport {
    pub roots: Vec<[f64; 2]>,
    pub lambda: [f64; 2],
    pub gammas: Vec<[f64; 2]>,
    pub big_gammas: Vec<[f64; 2]>,
    pub beta: f64,
    pub gamma_tilde: f64,
    pub prefactor: [f64; 2],
    pub contraction: perron_core::solver::ContractionReport,
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

pub fn cmd_analyze(p: &Prepared) -> Result<String, CliError> {
    let rep = contraction_constants(&p.system, &p.spectral, p.config.picard.ball, &p.grid, &p.quad)
        .map_err(numeric("contraction constants"))?;
    let out = AnalyzeReport {
        roots: p.roots.iter().copied().map(pair).collect(),
        lambda: pair(p.lambda),
        gammas: p.spectral.gammas.iter().copied().map(pair).collect(),
        big_gammas: p.spectral.big_gammas.iter().copied().map(pair).collect(),
        beta: p.spectral.beta,
        gamma_tilde: p.spectral.gamma_tilde,
        prefactor: pair(p.spectral.prefactor()),
        contraction: rep,
    };
    Ok(to_json(p, "analyze", out))
}

#[derive(Serialize)]
pub struct SolveSummary {
    pub iterations: usize,
    pub final_update: f64,
    pub residual: f64,
    pub sup_z: f64,
    pub grid_points: usize,
}

fn solve(p: &Prepared) -> Result<ZSolution, CliError> {
    picard_solve(
        &p.system,
        &p.spectral,
        &p.grid,
        p.config.picard.tol,
        p.config.picard.max_iter,
        &p.quad,
    )
    .map_err(numeric("picard iteration"))
}

/// CSV with header `t, z0_re, z0_im, ..., z{n-2}_re, z{n-2}_im`.
pub fn solution_csv(z: &ZSolution) -> String {
    let mut head = String::from("t");
    for i in 0..z.stack.len() {
        head.push_str(&format!(",z{i}_re,z{i}_im"));
    }
    let mut out = head;
    out.push('\n');
    for (k, &t) in z.grid.iter().enumerate() {
        out.push_str(&format!("{t:.17e}"));
        for g in &z.stack {
            out.push_str(&format!(",{:.17e},{:.17e}", g.values[k].re, g.values[k].im));
        }
        out.push('\n');
    }
    out
}

pub fn cmd_solve(p: &Prepared) -> Result<(String, String), CliError> {
    let z = solve(p)?;
    let sup = z.z().values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let summary = SolveSummary {
        iterations: z.iterations,
        final_update: z.final_update,
        residual: z.residual,
        sup_z: sup,
        grid_points: z.grid.len(),
    };
    Ok((to_json(p, "solve", summary), solution_csv(&z)))
}

pub fn cmd_formula(p: &Prepared, kind: FormulaKind) -> Result<String, CliError> {
    let z = solve(p)?;
    let rep: AsymptoticReport = match kind {
        FormulaKind::General => assemble_general(&z, &p.spectral, &p.system, &p.quad),
        FormulaKind::Levinson => {
            assemble_levinson(&z, &p.spectral, &p.system, &p.quad, 1.0)
        }
        FormulaKind::HartmanWintner => assemble_hw(&z, &p.spectral, &p.system, &p.quad),
        FormulaKind::Refined => assemble_refined(&z, &p.spectral, &p.system, &p.quad, false),
        FormulaKind::Ladder => {
            let lad = theta_ladder(
                &p.system,
                &p.spectral,
                p.config.ladder_depth,
                &p.grid,
                &p.quad,
                Some(&z),
            )
            .map_err(numeric("theta ladder"))?;
            assemble_ladder(&lad, &p.spectral, &p.system, &p.quad)
        }
    }
    .map_err(numeric("formula assembly"))?;
    Ok(to_json(p, "formula", rep))
}

#[derive(Serialize)]
pub struct ValidateReport {
    pub tail_log_derivative_gap: f64,
    pub max_interior_residual: f64,
    pub checks: Vec<(String, bool)>,
}

pub fn cmd_validate(p: &Prepared) -> Result<(String, bool), CliError> {
    let z = solve(p)?;
    let sh = shadowed_reference(&p.ode, &z, p.lambda, 2.5, p.config.step / 10.0)
        .map_err(numeric("reference integration"))?;
    let nn = p.grid.len();
    let mut gap = 0.0f64;
    for k in 3 * nn / 4..nn {
        let want = p.lambda + z.stack[0].values[k];
        gap = gap.max((sh.log_deriv.values[k] - want).norm());
    }
    let mut resid = 0.0f64;
    for k in (8..nn.saturating_sub(8)).step_by((nn / 16).max(1)) {
        let r = ode_residual_along_z(&p.ode, &p.system, &z, k)
            .map_err(numeric("residual re-substitution"))?;
        resid = resid.max(r.norm());
    }
    let checks = vec![
        ("picard converged".to_string(), true),
        ("tail log-derivative gap <= 1e-2".to_string(), gap <= 1e-2),
        ("interior residual <= 1e-4".to_string(), resid <= 1e-4),
    ];
    let ok = checks.iter().all(|(_, b)| *b);
    let rep = ValidateReport {
        tail_log_derivative_gap: gap,
        max_interior_residual: resid,
        checks,
    };
    Ok((to_json(p, "validate", rep), ok))
}

pub fn cmd_example5(p: &Prepared) -> Result<(String, bool), CliError> {
    let rep = example5_harness(p.config.t_end).map_err(numeric("golden run"))?;
    let ok = rep.checks.iter().all(|(_, b)| *b);
    Ok((to_json(p, "example5", rep), ok))
}

#[derive(Serialize)]
pub struct SelftestReport {
    pub checks: Vec<(String, bool)>,
}

/// Fast self-contained identity checks (no config needed beyond the envelope).
pub fn cmd_selftest(p: &Prepared) -> Result<(String, bool), CliError> {
    use perron_core::bellpoly::{bell_shift_expand, complete_bell};
    let mut checks: Vec<(String, bool)> = Vec::new();

    // Bell shift identity at a fixed probe point
    let lam = Complex64::new(0.7, -0.3);
    let x: Vec<Complex64> = (0..6)
        .map(|i| Complex64::new(0.1 + 0.13 * i as f64, -0.2 + 0.07 * i as f64))
        .collect();
    let mut shifted = x.clone();
    shifted[0] += lam;
    let lhs = complete_bell(6).unwrap().eval(&shifted).unwrap();
    let rhs = bell_shift_expand(6, lam).unwrap().eval(&x).unwrap();
    checks.push((
        "bell shift identity".to_string(),
        (lhs - rhs).norm() <= 1e-9 * (1.0 + lhs.norm()),
    ));

    // partial-fraction weights on the prepared spectrum
    let (ok, dev) = perron_core::charpoly::partial_fraction_weights_check(&p.spectral);
    checks.push((format!("partial-fraction weights (dev {dev:.1e})"), ok));

    // prefactor identity
    let mut sum = Complex64::new(0.0, 0.0);
    for (g, big) in p.spectral.gammas.iter().zip(&p.spectral.big_gammas) {
        sum += 1.0 / (big * g);
    }
    checks.push((
        "prefactor identity".to_string(),
        (sum - p.spectral.prefactor()).norm() <= 1e-10,
    ));

    let ok = checks.iter().all(|(_, b)| *b);
    Ok((to_json(p, "selftest", SelftestReport { checks }), ok))
}
