//! Long-time regime classification functionals and the checks built on them.
//!
//! The central object is the drift functional `D(a, x)`: the expected growth
//! rate of `X^{1-a}` per unit of `1 - a`, combining the continuous flow, the
//! parasite jumps and the reservoir doses. Its tail behavior in `x` separates
//! the regimes: when `D(a, .)` stays dominated for some `a < 1` loads stay
//! moderate; when it grows at least like `ln x (ln ln x)^{1+eta}` for an
//! admissible `a > 1` single lineages can reach infinity in finite time.
//! These tail conditions are existential and asymptotic, so every verdict
//! produced here is an explicitly labeled finite-grid heuristic.
//!
//! The module also evaluates the division-aware companion `G_a` and the
//! associated corridor-stopped quantity `Z^(a)_t = Y_t^{1-a} exp(int_0^t G_a
//! ds)`, whose constant expectation is a sharp self-test of the whole spinal
//! machinery, plus the explosion-probability estimate and the logarithmic
//! corridor-passage schedule `l`.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{mean_se, Ensemble};
use crate::model::{FragmentationLaw, JumpSizeLaw, ModelSpec, NumericsSpec};
use crate::quad::{self, QuadError};
use crate::rng::DriverStream;
use crate::spinal::{MeanFieldCurve, SpinalError, SpinalVariant, SpinalWalker};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CriteriaError {
    #[error("exponent out of domain: {0}")]
    BadExponent(String),
    #[error("a = {a} is not admissible for this fragmentation law (infinite moment)")]
    NotAdmissible { a: f64 },
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("corridor must satisfy 0 < lower < x0 < upper")]
    BadCorridor,
    #[error("the lysis rate is active but no mean-field curve was supplied")]
    MissingMeanField,
    #[error("schedule diverges: eta must be > 0")]
    DivergentSchedule,
    #[error("schedule requires ln ln of the corridor top > 0 and delta > 0")]
    BadSchedule,
    #[error(transparent)]
    Spinal(#[from] SpinalError),
}

/// Net mean drift of the load: dose inflows plus growth minus the division
/// outflow `b x`.
pub fn rho(x: f64, model: &ModelSpec) -> f64 {
    model.dose_reservoir.mean() * model.lambda.eval(x)
        + model.dose_lysis.mean() * model.r.eval(x)
        + model.g.eval(x)
        - model.b * x
}

fn check_exponent(a: f64) -> Result<(), CriteriaError> {
    if !(a > 0.0) || a == 1.0 || !a.is_finite() {
        return Err(CriteriaError::BadExponent(alloc::format!(
            "need a > 0, a != 1, got {a}"
        )));
    }
    Ok(())
}

/// Jump curvature functional
/// `a x^-2 int z^2 (int_0^1 (1 + z v / x)^{-1-a} (1 - v) dv) pi(dz)`.
///
/// The inner integral runs by adaptive quadrature; the outer integral uses
/// the law's expectation (closed form for a point mass) times its mass.
pub fn i_a(a: f64, x: f64, pi: &JumpSizeLaw, quad_tol: f64) -> Result<f64, CriteriaError> {
    check_exponent(a)?;
    if !(x > 0.0) {
        return Err(CriteriaError::BadExponent(alloc::format!(
            "need x > 0, got {x}"
        )));
    }
    if pi.mass() == 0.0 {
        return Ok(0.0);
    }
    let inner = |z: f64| -> Result<f64, QuadError> {
        quad::integrate(
            |v| libm::pow(1.0 + z * v / x, -1.0 - a) * (1.0 - v),
            0.0,
            1.0,
            quad_tol,
        )
    };
    let outer = pi.expect(|z| z * z * inner(z).unwrap_or(f64::NAN), quad_tol)?;
    if outer.is_nan() {
        // rerun the inner integral at a representative point to surface the error
        inner(pi.mean())?;
    }
    Ok(a / (x * x) * pi.mass() * outer)
}

/// `E[((1 + Z/x)^{1-a} - 1) / (1 - a)]` under a dose law, with the removable
/// `a = 1` limit `E[ln(1 + Z/x)]`.
pub fn dose_drift_term(law: &JumpSizeLaw, x: f64, a: f64, quad_tol: f64) -> Result<f64, QuadError> {
    if a == 1.0 {
        return law.expect(|z| libm::log(1.0 + z / x), quad_tol);
    }
    let e = law.expect(|z| libm::pow(1.0 + z / x, 1.0 - a), quad_tol)?;
    Ok((e - 1.0) / (1.0 - a))
}

/// The regime drift functional
/// `D(a, x) = g(x)/x - a sigma^2(x)/x^2 - p(x) I_a(x) + lambda(x) E[((1 +
/// I/x)^{1-a} - 1)/(1 - a)]`.
pub fn d_criterion(a: f64, x: f64, model: &ModelSpec, quad_tol: f64) -> Result<f64, CriteriaError> {
    check_exponent(a)?;
    let mut d = model.g.eval(x) / x - a * model.sigma2.eval(x) / (x * x);
    let p = model.p.eval(x);
    if p > 0.0 {
        d -= p * i_a(a, x, &model.pi, quad_tol)?;
    }
    let lam = model.lambda.eval(x);
    if lam > 0.0 {
        d += lam * dose_drift_term(&model.dose_reservoir, x, a, quad_tol)?;
    }
    Ok(d)
}

/// Moment `E[Theta^{1-a}]` of the fragmentation fraction, rejecting
/// inadmissible exponents.
fn theta_term(a: f64, kappa: &FragmentationLaw) -> Result<f64, CriteriaError> {
    let m = kappa.theta_moment(1.0 - a);
    if !m.is_finite() {
        return Err(CriteriaError::NotAdmissible { a });
    }
    Ok(m)
}

/// Membership of `a > 1` in the admissible set: `E[Theta^{1-a}] < inf`.
pub fn in_a_set(a: f64, kappa: &FragmentationLaw) -> Result<bool, CriteriaError> {
    if !(a > 1.0) {
        return Err(CriteriaError::BadExponent(alloc::format!(
            "admissible-set membership is defined for a > 1, got {a}"
        )));
    }
    Ok(kappa.theta_moment(1.0 - a).is_finite())
}

/// The division-aware drift functional behind `Z^(a)`:
/// `G_a = (a-1) [g/x - a sigma^2/x^2 - 2b(1 - E[Theta^{1-a}])/(1-a) - p I_a
/// + lambda E[((1+I/x)^{1-a} - 1)/(1-a)]] - r(r_arg) E[(1+P/x)^{1-a} - 1]`.
///
/// `r_arg` is the mean-field value at the query time; an infinite value uses
/// the lysis rate at its saturation bound.
pub fn g_a(
    a: f64,
    x: f64,
    r_arg: f64,
    model: &ModelSpec,
    quad_tol: f64,
) -> Result<f64, CriteriaError> {
    check_exponent(a)?;
    let theta = theta_term(a, &model.kappa)?;
    let mut bracket = model.g.eval(x) / x - a * model.sigma2.eval(x) / (x * x)
        - 2.0 * model.b * (1.0 - theta) / (1.0 - a);
    let p = model.p.eval(x);
    if p > 0.0 {
        bracket -= p * i_a(a, x, &model.pi, quad_tol)?;
    }
    let lam = model.lambda.eval(x);
    if lam > 0.0 {
        bracket += lam * dose_drift_term(&model.dose_reservoir, x, a, quad_tol)?;
    }
    let mut out = (a - 1.0) * bracket;
    let lysis = model.r.eval(r_arg);
    if lysis > 0.0 {
        let e = model
            .dose_lysis
            .expect(|z| libm::pow(1.0 + z / x, 1.0 - a) - 1.0, quad_tol)?;
        out -= lysis * e;
    }
    Ok(out)
}

fn ols_slope(u: &[f64], y: &[f64]) -> (f64, f64) {
    let n = u.len() as f64;
    let ub = u.iter().sum::<f64>() / n;
    let yb = y.iter().sum::<f64>() / n;
    let sxx: f64 = u.iter().map(|ui| (ui - ub) * (ui - ub)).sum();
    let sxy: f64 = u.iter().zip(y).map(|(ui, yi)| (ui - ub) * (yi - yb)).sum();
    let slope = sxy / sxx;
    let intercept = yb - slope * ub;
    let ss_res: f64 = u
        .iter()
        .zip(y)
        .map(|(ui, yi)| {
            let e = yi - intercept - slope * ui;
            e * e
        })
        .sum();
    let dof = (u.len().max(3) - 2) as f64;
    let se = libm::sqrt(ss_res / dof / sxx);
    (slope, se)
}

pub const HEURISTIC_MARKER: &str =
    "finite-grid heuristic: consistency check only, not a proof of the asymptotic condition";

/// Tail-domination check for the moderate-load condition: on the upper half
/// of the grid, `D(a, .)` regressed against `ln x` must have a non-positive
/// slope within its confidence band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnCheck {
    pub a: f64,
    pub tail_slope: f64,
    pub tail_slope_se: f64,
    pub consistent: bool,
    pub marker: String,
}

pub fn check_sn(
    model: &ModelSpec,
    a: f64,
    grid: &[f64],
    quad_tol: f64,
) -> Result<SnCheck, CriteriaError> {
    if !(a < 1.0) {
        return Err(CriteriaError::BadExponent(alloc::format!(
            "the moderate-load condition needs a < 1, got {a}"
        )));
    }
    check_exponent(a)?;
    if grid.len() < 6 {
        return Err(CriteriaError::BadExponent("grid too small".into()));
    }
    let tail = &grid[grid.len() / 2..];
    let u: Vec<f64> = tail.iter().map(|&x| libm::log(x)).collect();
    let mut y = Vec::with_capacity(tail.len());
    for &x in tail {
        y.push(d_criterion(a, x, model, quad_tol)?);
    }
    let (slope, se) = ols_slope(&u, &y);
    Ok(SnCheck {
        a,
        tail_slope: slope,
        tail_slope_se: se,
        consistent: slope <= 2.0 * se + 1e-12,
        marker: HEURISTIC_MARKER.into(),
    })
}

/// Pointwise tail check for the explosive condition: `D(a, x) >= ln x (ln ln
/// x)^{1+eta}` from some grid point on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LnCheck {
    pub a: f64,
    pub eta: f64,
    /// First grid point from which the bound holds through the grid top.
    pub x0_observed: Option<f64>,
    pub consistent: bool,
    pub marker: String,
}

pub fn check_ln(
    model: &ModelSpec,
    a: f64,
    eta: f64,
    grid: &[f64],
    quad_tol: f64,
) -> Result<LnCheck, CriteriaError> {
    if !in_a_set(a, &model.kappa)? {
        return Err(CriteriaError::NotAdmissible { a });
    }
    if !(eta > 0.0) {
        return Err(CriteriaError::BadExponent(alloc::format!(
            "need eta > 0, got {eta}"
        )));
    }
    // the bound needs ln ln x > 0
    let tail: Vec<f64> = grid.iter().copied().filter(|&x| libm::log(x) > 1.0).collect();
    let mut holds = Vec::with_capacity(tail.len());
    for &x in &tail {
        let bound = libm::log(x) * libm::pow(libm::log(libm::log(x)), 1.0 + eta);
        holds.push(d_criterion(a, x, model, quad_tol)? >= bound);
    }
    // longest true suffix, at least 3 points
    let suffix = holds.iter().rev().take_while(|&&h| h).count();
    let x0_observed = (suffix >= 3).then(|| tail[tail.len() - suffix]);
    Ok(LnCheck {
        a,
        eta,
        consistent: x0_observed.is_some(),
        x0_observed,
        marker: HEURISTIC_MARKER.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeVerdict {
    SnConsistent,
    LnConsistent,
    Inconclusive,
}

/// Grid evaluation of the classification functionals with the regime
/// verdict; the heuristic marker is part of every serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub marker: String,
    pub a: f64,
    pub eta: Option<f64>,
    pub grid: Vec<f64>,
    pub rho_values: Vec<f64>,
    pub d_values: Vec<f64>,
    pub g_values: Vec<f64>,
    pub in_admissible_set: Option<bool>,
    pub tail_slope: f64,
    pub verdict: RegimeVerdict,
}

/// Evaluate `rho`, `D(a, .)` and `G_a(., r_arg)` on the grid and classify.
pub fn criteria_report(
    model: &ModelSpec,
    a: f64,
    eta: Option<f64>,
    r_arg: f64,
    grid: &[f64],
    quad_tol: f64,
) -> Result<CriteriaReport, CriteriaError> {
    check_exponent(a)?;
    let mut rho_values = Vec::with_capacity(grid.len());
    let mut d_values = Vec::with_capacity(grid.len());
    let mut g_values = Vec::with_capacity(grid.len());
    for &x in grid {
        rho_values.push(rho(x, model));
        d_values.push(d_criterion(a, x, model, quad_tol)?);
        g_values.push(g_a(a, x, r_arg, model, quad_tol)?);
    }
    let in_admissible_set = (a > 1.0).then(|| in_a_set(a, &model.kappa)).transpose()?;
    let (verdict, tail_slope) = if a < 1.0 {
        let sn = check_sn(model, a, grid, quad_tol)?;
        (
            if sn.consistent {
                RegimeVerdict::SnConsistent
            } else {
                RegimeVerdict::Inconclusive
            },
            sn.tail_slope,
        )
    } else {
        let tail = &grid[grid.len() / 2..];
        let u: Vec<f64> = tail.iter().map(|&x| libm::log(x)).collect();
        let y = &d_values[grid.len() / 2..];
        let (slope, _) = ols_slope(&u, y);
        let verdict = match eta {
            Some(eta) if in_admissible_set == Some(true) => {
                if check_ln(model, a, eta, grid, quad_tol)?.consistent {
                    RegimeVerdict::LnConsistent
                } else {
                    RegimeVerdict::Inconclusive
                }
            }
            _ => RegimeVerdict::Inconclusive,
        };
        (verdict, slope)
    };
    Ok(CriteriaReport {
        marker: HEURISTIC_MARKER.into(),
        a,
        eta,
        grid: grid.into(),
        rho_values,
        d_values,
        g_values,
        in_admissible_set,
        tail_slope,
        verdict,
    })
}

/// Estimates of `E[Z^(a)_{t and T}]` on a time grid, `T` the first corridor
/// exit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleCheckResult {
    pub a: f64,
    pub corridor: (f64, f64),
    pub t_grid: Vec<f64>,
    /// Per grid time: (estimate, standard error).
    pub estimates: Vec<(f64, f64)>,
    /// Largest |z| of the drift away from the constant `x0^{1-a}`.
    pub max_drift_z: f64,
}

/// Simulate `Z^(a)_{t and T} = Y^{1-a} exp(int_0^{t and T} G_a(s, Y_s) ds)`
/// along spinal paths stopped at the first exit from `(lower, upper)`, and
/// report its expectation on the time grid.
///
/// The integral uses the trapezoid rule on the simulation sub-steps, whose
/// boundaries include every event time, with the pre-event load at the right
/// node.
#[allow(clippy::too_many_arguments)]
pub fn martingale_za_check<E: Ensemble>(
    a: f64,
    lower: f64,
    upper: f64,
    t_grid: &[f64],
    model: &ModelSpec,
    mean_field: Option<&MeanFieldCurve>,
    replicates: u32,
    numerics: &NumericsSpec,
    ensemble: &E,
) -> Result<MartingaleCheckResult, CriteriaError> {
    check_exponent(a)?;
    theta_term(a, &model.kappa)?;
    if !(0.0 < lower && lower < model.x0 && model.x0 < upper) {
        return Err(CriteriaError::BadCorridor);
    }
    let t_max = t_grid.iter().copied().fold(0.0f64, f64::max);
    let lysis_active = [0.0, 1e-3, 1.0, 1e3, 1e9]
        .iter()
        .any(|&x| model.r.eval(x) != 0.0);
    if lysis_active && mean_field.is_none() {
        return Err(CriteriaError::MissingMeanField);
    }
    let fallback;
    let curve = match mean_field {
        Some(mf) => mf,
        None => {
            fallback = MeanFieldCurve::constant(&[0.0, t_max], model.x0);
            &fallback
        }
    };

    let rows: Vec<Result<Vec<f64>, CriteriaError>> = ensemble.map(replicates, |rep| {
        let stream = DriverStream::derive(numerics.master_seed, "martingale", rep as u64);
        let mut walker = SpinalWalker::new(
            SpinalVariant::Full,
            model.x0,
            model,
            numerics,
            Some(curve),
            &stream,
        )?;
        let mut integral = 0.0f64;
        let mut stopped: Option<f64> = None; // frozen Z after corridor exit
        let mut failure: Option<CriteriaError> = None;
        let mut out = Vec::with_capacity(t_grid.len());
        for &t in t_grid {
            if stopped.is_none() && failure.is_none() {
                walker.advance_with(t, |sub| {
                    if stopped.is_some() || failure.is_some() {
                        return;
                    }
                    let g0 = g_a(a, sub.y0, curve.value_at(sub.t0), model, numerics.quad_tol);
                    let right = if sub.y_flow > 0.0 { sub.y_flow } else { sub.y0 };
                    let g1 = g_a(a, right, curve.value_at(sub.t1), model, numerics.quad_tol);
                    match (g0, g1) {
                        (Ok(g0), Ok(g1)) => {
                            integral += 0.5 * (sub.t1 - sub.t0) * (g0 + g1);
                        }
                        (Err(e), _) | (_, Err(e)) => {
                            failure = Some(e);
                            return;
                        }
                    }
                    if sub.y1 <= lower || sub.y1 >= upper {
                        stopped =
                            Some(libm::pow(sub.y1, 1.0 - a) * libm::exp(integral));
                    }
                });
            }
            if let Some(z) = stopped {
                out.push(z);
            } else {
                out.push(libm::pow(walker.load().value(), 1.0 - a) * libm::exp(integral));
            }
        }
        match failure {
            Some(e) => Err(e),
            None => Ok(out),
        }
    });

    let mut samples: Vec<Vec<f64>> = alloc::vec![Vec::with_capacity(replicates as usize); t_grid.len()];
    for row in rows {
        let row = row?;
        for (col, z) in samples.iter_mut().zip(row) {
            col.push(z);
        }
    }
    let target = libm::pow(model.x0, 1.0 - a);
    let mut estimates = Vec::with_capacity(t_grid.len());
    let mut max_drift_z = 0.0f64;
    for col in &samples {
        let (mean, se) = mean_se(col);
        let z = if se > 0.0 {
            (mean - target) / se
        } else if mean == target {
            0.0
        } else {
            f64::INFINITY
        };
        max_drift_z = max_drift_z.max(z.abs());
        estimates.push((mean, se));
    }
    Ok(MartingaleCheckResult {
        a,
        corridor: (lower, upper),
        t_grid: t_grid.into(),
        estimates,
        max_drift_z,
    })
}

/// Fraction of spinal paths that reach the explosion sentinel by `t_end`,
/// with standard error.
pub fn explosion_probability<E: Ensemble>(
    model: &ModelSpec,
    t_end: f64,
    mean_field: Option<&MeanFieldCurve>,
    replicates: u32,
    numerics: &NumericsSpec,
    ensemble: &E,
) -> Result<(f64, f64), CriteriaError> {
    let lysis_active = [0.0, 1e-3, 1.0, 1e3, 1e9]
        .iter()
        .any(|&x| model.r.eval(x) != 0.0);
    if lysis_active && mean_field.is_none() {
        return Err(CriteriaError::MissingMeanField);
    }
    let fallback;
    let curve = match mean_field {
        Some(mf) => mf,
        None => {
            fallback = MeanFieldCurve::constant(&[0.0, t_end.max(1.0)], model.x0);
            &fallback
        }
    };
    let samples = ensemble.map(replicates, |rep| {
        let stream = DriverStream::derive(numerics.master_seed, "explosion", rep as u64);
        let mut walker = SpinalWalker::new(
            SpinalVariant::Full,
            model.x0,
            model,
            numerics,
            Some(curve),
            &stream,
        )
        .expect("curve provided");
        walker.advance_to(t_end);
        if walker.load().exploded() {
            1.0
        } else {
            0.0
        }
    });
    Ok(mean_se(&samples))
}

/// Bracket of a positive series value: the partial sum and the partial sum
/// plus an integral tail bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesBracket {
    pub lower: f64,
    pub upper: f64,
}

impl SeriesBracket {
    pub fn value(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// The corridor-passage schedule
/// `l(bfrak, delta, eta) = sum_{n>=1} ((n-1) ln(1+delta) + ln ln bfrak)^{-(1+eta)}`,
/// summed until the integral tail bound drops below `tol`; the bound is the
/// bracket width.
pub fn l_schedule(
    b_frak: f64,
    delta: f64,
    eta: f64,
    tol: f64,
) -> Result<SeriesBracket, CriteriaError> {
    if !(eta > 0.0) {
        return Err(CriteriaError::DivergentSchedule);
    }
    let c = libm::log(libm::log(b_frak));
    if !(c > 0.0) || !(delta > 0.0) || !(tol > 0.0) {
        return Err(CriteriaError::BadSchedule);
    }
    let step = libm::log(1.0 + delta);
    let mut partial = 0.0f64;
    let mut n: u64 = 0;
    loop {
        n += 1;
        partial += libm::pow((n - 1) as f64 * step + c, -(1.0 + eta));
        // integral tail bound for the terms beyond n
        let tail = libm::pow((n - 1) as f64 * step + c, -eta) / (eta * step);
        if tail < tol {
            return Ok(SeriesBracket {
                lower: partial,
                upper: partial + tail,
            });
        }
        if n >= 2_000_000_000 {
            return Err(CriteriaError::BadSchedule);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Serial;
    use crate::model::{DoseRole, FunctionSpec, Role};

    fn base_model() -> ModelSpec {
        ModelSpec {
            g: FunctionSpec::constant(Role::GrowthG, 0.0),
            sigma2: FunctionSpec::constant(Role::DiffusionSigma2, 0.0),
            p: FunctionSpec::constant(Role::JumpRateP, 0.0),
            lambda: FunctionSpec::constant(Role::ReservoirRateLambda, 0.0),
            r: FunctionSpec::constant(Role::LysisRateR, 0.0),
            pi: JumpSizeLaw::point_mass(DoseRole::ParasiteJumpPi, 1.0),
            dose_reservoir: JumpSizeLaw::point_mass(DoseRole::ReservoirDose, 1.0),
            dose_lysis: JumpSizeLaw::point_mass(DoseRole::LysisDose, 1.0),
            kappa: FragmentationLaw::point_mass_half(),
            b: 1.0,
            d: 0.0,
            x0: 1.0,
        }
    }

    fn numerics(dt: f64) -> NumericsSpec {
        NumericsSpec {
            dt,
            horizon: 4.0,
            x_explode: 1e12,
            max_cells: 100_000,
            replicates: 1_000,
            master_seed: 31,
            tol_fp: 1e-3,
            k_max_fp: 20,
            quad_tol: 1e-9,
        }
    }

    #[test]
    fn rho_direct_evaluation() {
        // g = 2x, lambda = 1 with dose mean 0.5, r = 0, b = 1: rho = x + 0.5
        let mut model = base_model();
        model.g = FunctionSpec::linear(Role::GrowthG, 2.0);
        model.lambda = FunctionSpec::constant(Role::ReservoirRateLambda, 1.0);
        model.dose_reservoir = JumpSizeLaw::point_mass(DoseRole::ReservoirDose, 0.5);
        for x in [0.0, 0.3, 2.0, 1e4] {
            assert!((rho(x, &model) - (x + 0.5)).abs() < 1e-12);
        }

        // doubling the dose mean doubles the reservoir contribution exactly
        let mut doubled = model.clone();
        doubled.dose_reservoir = JumpSizeLaw::point_mass(DoseRole::ReservoirDose, 1.0);
        let x = 3.7;
        let contribution = rho(x, &model) - (model.g.eval(x) - model.b * x);
        let contribution2 = rho(x, &doubled) - (model.g.eval(x) - model.b * x);
        assert!((contribution2 - 2.0 * contribution).abs() < 1e-12);
    }

    #[test]
    fn rho_vanishes_at_origin() {
        let mut model = base_model();
        model.g = FunctionSpec::logistic(Role::GrowthG, 2.0, 10.0);
        model.lambda = FunctionSpec::linear(Role::ReservoirRateLambda, 0.5);
        assert_eq!(rho(0.0, &model), 0.0);
    }

    #[test]
    fn rho_no_reservoir_decay_preset() {
        // g = -x, lambda = 0, r = 0, b = 1: rho = -2x <= -(2x and eta)
        let mut model = base_model();
        model.g = FunctionSpec::linear(Role::GrowthG, -1.0);
        for x in [0.1, 1.0, 10.0] {
            let r = rho(x, &model);
            assert!((r + 2.0 * x).abs() < 1e-12);
            assert!(r <= -(2.0 * x).min(0.1));
        }
    }

    /// Closed form of `int_0^1 (1 + c v)^{-1-a} (1 - v) dv` for a != 1.
    fn inner_closed(c: f64, a: f64) -> f64 {
        let first = (1.0 - libm::pow(1.0 + c, -a)) / (a * c);
        let anti = |u: f64| libm::pow(u, 1.0 - a) / (1.0 - a) + libm::pow(u, -a) / a;
        let second = (anti(1.0 + c) - anti(1.0)) / (c * c);
        first - second
    }

    #[test]
    fn i_a_point_mass_matches_closed_form() {
        let pi = JumpSizeLaw::point_mass(DoseRole::ParasiteJumpPi, 1.0);
        for (a, x) in [(2.0, 10.0), (0.5, 3.0), (3.0, 0.7), (1.5, 100.0)] {
            let got = i_a(a, x, &pi, 1e-12).unwrap();
            let want = a / (x * x) * inner_closed(1.0 / x, a);
            assert!((got - want).abs() < 1e-10, "a={a} x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn i_a_small_jump_limit() {
        // z0/x -> 0: I_a -> a z0^2 / (2 x^2); a=2, z0=1, x=1e3 -> 1e-6
        let pi = JumpSizeLaw::point_mass(DoseRole::ParasiteJumpPi, 1.0);
        let got = i_a(2.0, 1e3, &pi, 1e-12).unwrap();
        assert!((got / 1e-6 - 1.0).abs() < 0.01, "got {got}");
    }

    #[test]
    fn i_a_monte_carlo_oracle() {
        // uniform v-samples as an independent quadrature oracle
        let pi = JumpSizeLaw::point_mass(DoseRole::ParasiteJumpPi, 1.0);
        let (a, x) = (2.0, 10.0);
        let got = i_a(a, x, &pi, 1e-12).unwrap();
        assert!((got - 9.05e-3).abs() < 1e-4, "got {got}");
        let mut s = DriverStream::derive(1, "ia-mc", 0);
        let n = 2_000_000;
        let mc: f64 = (0..n)
            .map(|_| {
                let v = s.uniform();
                libm::pow(1.0 + v / x, -1.0 - a) * (1.0 - v)
            })
            .sum::<f64>()
            / n as f64;
        let mc_value = a / (x * x) * mc;
        assert!((got - mc_value).abs() < 1e-4, "{got} vs {mc_value}");
    }

    #[test]
    fn i_a_zero_mass_and_positivity() {
        let none = JumpSizeLaw::point_mass(DoseRole::ParasiteJumpPi, 1.0).with_mass(0.0);
        assert_eq!(i_a(2.0, 1.0, &none, 1e-9).unwrap(), 0.0);
        let pi = JumpSizeLaw::exponential(DoseRole::ParasiteJumpPi, 0.5);
        assert!(i_a(0.5, 2.0, &pi, 1e-9).unwrap() > 0.0);
        assert!(i_a(1.0, 1.0, &pi, 1e-9).is_err());
        assert!(i_a(2.0, 0.0, &pi, 1e-9).is_err());
    }

    #[test]
    fn i_a_decays_like_x_minus_two() {
        let pi = JumpSizeLaw::point_mass(DoseRole::ParasiteJumpPi, 1.0);
        let grid: Vec<f64> = (2..=6).map(|k| libm::pow(10.0, k as f64)).collect();
        let logs: Vec<f64> = grid.iter().map(|&x| libm::log(x)).collect();
        let vals: Vec<f64> = grid
            .iter()
            .map(|&x| libm::log(i_a(2.0, x, &pi, 1e-12).unwrap()))
            .collect();
        let (slope, _) = ols_slope(&logs, &vals);
        assert!((slope + 2.0).abs() < 0.05 * 2.0, "slope {slope}");
    }

    #[test]
    fn d_reduces_to_flow_terms_without_jumps() {
        let mut model = base_model();
        model.g = FunctionSpec::linear(Role::GrowthG, 0.7);
        model.sigma2 = FunctionSpec::power(Role::DiffusionSigma2, 0.3, 2.0);
        for (a, x) in [(0.5, 2.0), (2.0, 5.0)] {
            let want = 0.7 - a * 0.3;
            assert!((d_criterion(a, x, &model, 1e-9).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn d_reservoir_term_series_oracle_at_large_x() {
        // point-mass dose iota: lambda(x) ((1+iota/x)^{1-a} - 1)/(1-a)
        // ~ lambda(x) iota / x for x -> inf
        let mut model = base_model();
        model.lambda = FunctionSpec::constant(Role::ReservoirRateLambda, 2.0);
        model.dose_reservoir = JumpSizeLaw::point_mass(DoseRole::ReservoirDose, 3.0);
        let (a, x) = (2.5, 1e6);
        let got = d_criterion(a, x, &model, 1e-9).unwrap();
        let leading = 2.0 * 3.0 / x;
        assert!((got / leading - 1.0).abs() < 0.01, "{got} vs {leading}");
    }

    #[test]
    fn d_handles_removable_limit_at_a_one_in_dose_term() {
        let law = JumpSizeLaw::point_mass(DoseRole::ReservoirDose, 2.0);
        let got = dose_drift_term(&law, 4.0, 1.0, 1e-9).unwrap();
        assert!((got - libm::log(1.5)).abs() < 1e-12);
        // continuity: a -> 1 approaches the limit
        let near = dose_drift_term(&law, 4.0, 1.0 + 1e-7, 1e-9).unwrap();
        assert!((near - got).abs() < 1e-6);
    }

    #[test]
    fn g_a_identity_with_d_when_no_lysis() {
        let mut model = base_model();
        model.g = FunctionSpec::logistic(Role::GrowthG, 1.3, 50.0);
        model.sigma2 = FunctionSpec::power(Role::DiffusionSigma2, 0.2, 2.0);
        model.p = FunctionSpec::linear(Role::JumpRateP, 0.4);
        model.lambda = FunctionSpec::affine(Role::ReservoirRateLambda, 0.1, 0.3);
        model.kappa = FragmentationLaw::uniform01();
        let grid: Vec<f64> = (0..20).map(|k| libm::pow(10.0, -1.0 + 0.3 * k as f64)).collect();
        for a in [0.25, 0.5, 1.5, 1.9] {
            let theta = model.kappa.theta_moment(1.0 - a);
            for &x in &grid {
                let d = d_criterion(a, x, &model, 1e-11).unwrap();
                let lhs = (a - 1.0) * (d - 2.0 * model.b * (1.0 - theta) / (1.0 - a));
                let rhs = g_a(a, x, 0.0, &model, 1e-11).unwrap();
                let scale = lhs.abs().max(1.0);
                assert!((lhs - rhs).abs() / scale < 1e-10, "a={a} x={x}");
            }
        }
    }

    #[test]
    fn g_a_pure_fragmentation_is_constant() {
        let model = base_model(); // point-mass-half kappa, b = 1
        let a = 0.5;
        let theta = libm::pow(2.0, -(1.0 - a));
        let want = -(a - 1.0) * 2.0 * (1.0 - theta) / (1.0 - a);
        for x in [0.01, 1.0, 1e8] {
            let got = g_a(a, x, 0.0, &model, 1e-9).unwrap();
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn g_a_lysis_term_is_non_positive_for_small_a() {
        let mut model = base_model();
        model.r = FunctionSpec::constant(Role::LysisRateR, 0.7);
        let a = 0.5;
        let without = {
            let mut m = model.clone();
            m.r = FunctionSpec::constant(Role::LysisRateR, 0.0);
            g_a(a, 2.0, 1.0, &m, 1e-9).unwrap()
        };
        let with = g_a(a, 2.0, 1.0, &model, 1e-9).unwrap();
        assert!(with <= without + 1e-15);
    }

    #[test]
    fn admissible_set_membership() {
        assert!(in_a_set(1.5, &FragmentationLaw::uniform01()).unwrap());
        assert!(!in_a_set(3.0, &FragmentationLaw::beta_symmetric(2.0)).unwrap());
        for a in [1.5, 5.0, 50.0] {
            assert!(in_a_set(a, &FragmentationLaw::point_mass_half()).unwrap());
        }
        assert!(in_a_set(0.5, &FragmentationLaw::uniform01()).is_err());
        assert!(g_a(3.0, 1.0, 0.0, &base_model_beta2(), 1e-9).is_err());
    }

    fn base_model_beta2() -> ModelSpec {
        let mut m = base_model();
        m.kappa = FragmentationLaw::beta_symmetric(2.0);
        m
    }

    fn log_grid(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| libm::pow(10.0, lo_exp + (hi_exp - lo_exp) * k as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn sn_check_moderate_growth_preset() {
        // g + E[I] lambda = 0.5 x, b = 1: moderate-load condition holds
        let mut model = base_model();
        model.g = FunctionSpec::linear(Role::GrowthG, 0.3);
        model.lambda = FunctionSpec::linear(Role::ReservoirRateLambda, 0.4);
        model.dose_reservoir = JumpSizeLaw::point_mass(DoseRole::ReservoirDose, 0.5);
        let grid = log_grid(0.0, 10.0, 40);
        let sn = check_sn(&model, 0.5, &grid, 1e-10).unwrap();
        assert!(sn.consistent, "slope {} se {}", sn.tail_slope, sn.tail_slope_se);
    }

    #[test]
    fn sn_check_null_model_and_marker() {
        let model = base_model();
        let grid = log_grid(0.0, 10.0, 30);
        let sn = check_sn(&model, 0.5, &grid, 1e-10).unwrap();
        assert!(sn.consistent);
        assert_eq!(sn.marker, HEURISTIC_MARKER);
    }

    #[test]
    fn sn_check_rejects_strong_growth() {
        let mut model = base_model();
        model.g = FunctionSpec::log_growth(Role::GrowthG, 1.0, 2.2);
        let grid = log_grid(4.0, 12.0, 40);
        let sn = check_sn(&model, 0.5, &grid, 1e-10).unwrap();
        assert!(!sn.consistent);
    }

    #[test]
    fn ln_check_strong_growth_preset() {
        let mut model = base_model();
        model.g = FunctionSpec::log_growth(Role::GrowthG, 1.0, 2.2);
        model.kappa = FragmentationLaw::uniform01();
        let grid = log_grid(4.0, 12.0, 40);
        let ln = check_ln(&model, 1.5, 0.5, &grid, 1e-10).unwrap();
        assert!(ln.consistent);
        assert!(ln.x0_observed.unwrap() <= 1e6, "x0 {:?}", ln.x0_observed);
    }

    #[test]
    fn ln_check_rejects_inadmissible_a() {
        let model = base_model_beta2();
        let grid = log_grid(4.0, 12.0, 20);
        assert!(matches!(
            check_ln(&model, 3.0, 0.5, &grid, 1e-9),
            Err(CriteriaError::NotAdmissible { .. })
        ));
    }

    #[test]
    fn report_carries_marker_and_verdicts() {
        let mut model = base_model();
        model.g = FunctionSpec::log_growth(Role::GrowthG, 1.0, 2.2);
        model.kappa = FragmentationLaw::uniform01();
        let grid = log_grid(4.0, 12.0, 30);
        let report = criteria_report(&model, 1.5, Some(0.5), 0.0, &grid, 1e-10).unwrap();
        assert_eq!(report.verdict, RegimeVerdict::LnConsistent);
        assert_eq!(report.in_admissible_set, Some(true));
        assert_eq!(report.marker, HEURISTIC_MARKER);

        let null = criteria_report(&base_model(), 0.5, None, 0.0, &grid, 1e-10).unwrap();
        assert_eq!(null.verdict, RegimeVerdict::SnConsistent);
    }

    #[test]
    fn martingale_initial_time_is_exact() {
        let model = base_model();
        let num = numerics(1e-2);
        let res = martingale_za_check(
            0.5,
            1e-3,
            1e3,
            &[0.0],
            &model,
            None,
            100,
            &num,
            &Serial,
        )
        .unwrap();
        assert_eq!(res.estimates[0], (1.0, 0.0));
        assert_eq!(res.max_drift_z, 0.0);
    }

    #[test]
    fn martingale_pure_fragmentation() {
        let model = base_model();
        let num = numerics(1e-2);
        let res = martingale_za_check(
            0.5,
            1e-3,
            1e3,
            &[0.5, 1.0, 2.0],
            &model,
            None,
            10_000,
            &num,
            &Serial,
        )
        .unwrap();
        assert!(res.max_drift_z < 3.0, "max z {}", res.max_drift_z);
    }

    #[test]
    fn martingale_deterministic_drift_path() {
        // linear growth only, vanishing division rate: Z is constant up to
        // the time-stepping bias
        let mut model = base_model();
        model.g = FunctionSpec::linear(Role::GrowthG, 0.2);
        model.b = 1e-12;
        let mut num = numerics(1e-5);
        let res = martingale_za_check(
            0.5,
            1e-3,
            1e3,
            &[2.0],
            &model,
            None,
            1,
            &mut num,
            &Serial,
        )
        .unwrap();
        let (mean, _) = res.estimates[0];
        assert!((mean - 1.0).abs() < 1e-6, "mean {mean}");
    }

    #[test]
    fn martingale_rejects_bad_corridor() {
        let model = base_model();
        let num = numerics(1e-2);
        assert_eq!(
            martingale_za_check(0.5, 2.0, 1e3, &[1.0], &model, None, 10, &num, &Serial)
                .unwrap_err(),
            CriteriaError::BadCorridor
        );
    }

    #[test]
    fn explosion_null_and_strong_growth() {
        let model = base_model();
        let num = numerics(1e-2);
        let (p, _) = explosion_probability(&model, 2.0, None, 1_000, &num, &Serial).unwrap();
        assert_eq!(p, 0.0);

        let mut strong = base_model();
        strong.g = FunctionSpec::log_growth(Role::GrowthG, 1.0, 2.2);
        strong.x0 = 1e6;
        let (p, _) = explosion_probability(&strong, 10.0, None, 1_000, &num, &Serial).unwrap();
        assert!(p > 0.0);

        let (p0, _) = explosion_probability(&model, 0.0, None, 100, &num, &Serial).unwrap();
        assert_eq!(p0, 0.0);
    }

    #[test]
    fn l_schedule_series_oracle() {
        // bfrak = e^e, delta = 1, eta = 1: sum ((n-1) ln 2 + 1)^{-2}
        let b_frak = libm::exp(libm::exp(1.0));
        let got = l_schedule(b_frak, 1.0, 1.0, 1e-8).unwrap();
        let step = libm::log(2.0);
        let mut oracle = 0.0;
        for n in 0..40_000_000u64 {
            oracle += libm::pow(n as f64 * step + 1.0, -2.0);
        }
        // remaining tail of the oracle, bracketed by integrals
        let tail_hi = libm::pow(40_000_000.0 * step + 1.0 - step, -1.0) / step;
        assert!(got.lower <= oracle + tail_hi && oracle <= got.upper, "{got:?} vs {oracle}");
        assert!(got.width() < 1e-7);
    }

    #[test]
    fn l_schedule_rejections_and_monotonicity() {
        assert_eq!(
            l_schedule(100.0, 1.0, 0.0, 1e-6).unwrap_err(),
            CriteriaError::DivergentSchedule
        );
        assert_eq!(
            l_schedule(2.0, 1.0, 1.0, 1e-6).unwrap_err(),
            CriteriaError::BadSchedule
        );
        let bs = [20.0, 100.0, 1000.0];
        let etas = [1.0, 1.5, 2.0];
        for pair in bs.windows(2) {
            for &eta in &etas {
                let hi = l_schedule(pair[0], 0.5, eta, 1e-5).unwrap().value();
                let lo = l_schedule(pair[1], 0.5, eta, 1e-5).unwrap().value();
                assert!(lo < hi, "b {} -> {}", pair[0], pair[1]);
            }
        }
        for &b in &bs {
            for pair in etas.windows(2) {
                let hi = l_schedule(b, 0.5, pair[0], 1e-5).unwrap().value();
                let lo = l_schedule(b, 0.5, pair[1], 1e-5).unwrap().value();
                assert!(lo < hi, "eta {} -> {} at b {b}", pair[0], pair[1]);
            }
        }
    }
}
