//! Shared fixtures for the pipeline benchmarks.

use num_complex::Complex64;
use perron_core::charpoly::{find_roots, spectral_data, SpectralData};
use perron_core::expr::parse_expr;
use perron_core::riccati::{build_riccati, PerturbedODE, RiccatiSystem};

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// The perturbed quintic used throughout the test suite.
pub fn quintic_ode(t0: f64) -> PerturbedODE {
    PerturbedODE {
        n: 5,
        a: vec![c(0.0), c(4.0), c(0.0), c(-5.0), c(0.0)],
        r: vec![
            parse_expr("(t^2+1)^(-1/3)").unwrap(),
            parse_expr("(t^2+1)^(-1/3)").unwrap(),
            parse_expr("0").unwrap(),
            parse_expr("t^(-2/3)").unwrap(),
            parse_expr("0").unwrap(),
        ],
        t0,
    }
}

pub fn quintic_system(t0: f64) -> (RiccatiSystem, SpectralData) {
    let ode = quintic_ode(t0);
    let roots = find_roots(&ode.char_poly(), 1e-10).unwrap();
    let s = spectral_data(&roots, c(1.0), None).unwrap();
    let sys = build_riccati(&ode, c(1.0)).unwrap();
    (sys, s)
}

pub fn grid(a: f64, b: f64, h: f64) -> Vec<f64> {
    let n = ((b - a) / h).round() as usize;
    (0..=n).map(|k| a + k as f64 * h).collect()
}
