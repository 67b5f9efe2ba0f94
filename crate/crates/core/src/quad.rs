//! Adaptive quadrature.
//!
//! A recursive adaptive Simpson rule, sufficient for the smooth integrands
//! that appear in the generator and in the regime functionals. On failure the
//! error carries the tolerance actually achieved so callers can report it.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("quadrature did not converge: requested tol {requested:e}, achieved {achieved:e}")]
    NotConverged { requested: f64, achieved: f64 },
    #[error("invalid quadrature interval [{a}, {b}]")]
    BadInterval { a: f64, b: f64 },
}

const MAX_DEPTH: u32 = 40;

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    worst: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let err = (left + right - whole) / 15.0;
    if err.abs() <= tol || depth >= MAX_DEPTH {
        if depth >= MAX_DEPTH && err.abs() > *worst {
            *worst = err.abs();
        }
        return left + right + err;
    }
    adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1, worst)
        + adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1, worst)
}

/// Integrate `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64, QuadError> {
    if !a.is_finite() || !b.is_finite() || b < a {
        return Err(QuadError::BadInterval { a, b });
    }
    if a == b {
        return Ok(0.0);
    }
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    let mut worst = 0.0f64;
    let value = adapt(&f, a, b, fa, fm, fb, whole, tol, 0, &mut worst);
    if worst > tol {
        return Err(QuadError::NotConverged {
            requested: tol,
            achieved: worst,
        });
    }
    Ok(value)
}
