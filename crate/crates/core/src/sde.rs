//! Single-cell flow: Euler-Maruyama integration of the within-cell load
//! between demographic events, explosion detection, and the infinitesimal
//! generator by quadrature.
//!
//! The load follows a diffusion with positive compensated jumps. With the
//! finite-activity jump families of this crate the compensator is exact: it
//! contributes the drift correction `-p(x) * mass * mean` while genuine jumps
//! arrive at rate `p(x) * mass` with sizes from the normalized law.
//!
//! Explosion is operationalized as crossing the configurable sentinel
//! `x_explode` and is absorbing: once a load reads `+inf` it stays there.
//! Negative Gaussian overshoots are clamped to zero and counted; the clamp
//! frequency vanishes as `dt -> 0` for admissible coefficients and is
//! surfaced as a diagnostic.

use alloc::vec::Vec;

use crate::ensemble::mean_se;
use crate::model::{ModelSpec, NumericsSpec};
use crate::quad::QuadError;
use crate::rng::DriverStream;

/// A parasite load in `[0, inf]` with its explosion state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellLoad {
    x: f64,
    explosion_time: Option<f64>,
}

impl CellLoad {
    pub fn new(x: f64) -> Self {
        assert!(x >= 0.0, "load must be nonnegative");
        CellLoad {
            x,
            explosion_time: None,
        }
    }

    pub fn exploded_at(t: f64) -> Self {
        CellLoad {
            x: f64::INFINITY,
            explosion_time: Some(t),
        }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.x
    }

    #[inline]
    pub fn exploded(&self) -> bool {
        self.x.is_infinite()
    }

    pub fn explosion_time(&self) -> Option<f64> {
        self.explosion_time
    }
}

/// Per-run diagnostics of the stepping scheme.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepDiagnostics {
    /// Number of negative intermediate values clamped to zero.
    pub clamps: u64,
    /// Number of sub-steps taken.
    pub steps: u64,
}

/// Largest admissible sub-step at load `x`: keeps the drift move below
/// `0.05 * max(x, 1)` and the 1-sigma diffusion move below the same envelope.
pub(crate) fn flow_substep(x: f64, dt_max: f64, model: &ModelSpec) -> f64 {
    let mut h = dt_max;
    let envelope = 0.05 * x.max(1.0);
    let g = model.g.eval(x).abs();
    if g * h > envelope {
        h = envelope / g;
    }
    let s2 = model.sigma2.eval(x);
    if s2 > 0.0 && 2.0 * s2 * h > envelope * envelope {
        h = envelope * envelope / (2.0 * s2);
    }
    h
}

/// One Euler-Maruyama step of length `dt` from `load` at time `t`.
///
/// Exploded input is returned unchanged. The result is clamped to
/// `[0, inf)` and absorbed to `+inf` when it crosses the sentinel.
pub fn step_flow(
    load: CellLoad,
    t: f64,
    dt: f64,
    model: &ModelSpec,
    numerics: &NumericsSpec,
    stream: &mut DriverStream,
    diag: &mut StepDiagnostics,
) -> CellLoad {
    if load.exploded() {
        return load;
    }
    let x = load.x;
    let jump_mass = model.pi.mass();
    let p = model.p.eval(x);
    let mut next = x + (model.g.eval(x) - p * jump_mass * model.pi.mean()) * dt;
    let s2 = model.sigma2.eval(x);
    if s2 > 0.0 {
        next += libm::sqrt(2.0 * s2 * dt) * stream.normal();
    }
    if p * jump_mass > 0.0 {
        let count = stream.poisson(p * jump_mass * dt);
        for _ in 0..count {
            next += model.pi.sample(stream);
        }
    }
    diag.steps += 1;
    if next < 0.0 {
        diag.clamps += 1;
        next = 0.0;
    }
    if next >= numerics.x_explode {
        return CellLoad::exploded_at(t + dt);
    }
    CellLoad {
        x: next,
        explosion_time: None,
    }
}

/// A flow path on its (adaptive) time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPath {
    pub times: Vec<f64>,
    pub loads: Vec<CellLoad>,
    pub diagnostics: StepDiagnostics,
}

impl FlowPath {
    pub fn end(&self) -> CellLoad {
        *self.loads.last().expect("non-empty path")
    }

    pub fn exploded(&self) -> bool {
        self.end().exploded()
    }
}

/// Integrate the pure flow from `x0` over `[t0, t1]` with adaptive
/// sub-stepping; the path ends early at explosion with the explosion time
/// recorded.
pub fn simulate_flow(
    x0: f64,
    t0: f64,
    t1: f64,
    model: &ModelSpec,
    numerics: &NumericsSpec,
    stream: &mut DriverStream,
) -> FlowPath {
    assert!(t1 >= t0, "time interval must be ordered");
    let mut diag = StepDiagnostics::default();
    let mut times = alloc::vec![t0];
    let mut loads = alloc::vec![CellLoad::new(x0)];
    let mut t = t0;
    let mut load = CellLoad::new(x0);
    while t < t1 && !load.exploded() {
        let h = flow_substep(load.x, numerics.dt, model).min(t1 - t);
        load = step_flow(load, t, h, model, numerics, stream, &mut diag);
        t += h;
        times.push(t);
        loads.push(load);
    }
    FlowPath {
        times,
        loads,
        diagnostics: diag,
    }
}

/// A twice-differentiable test function given in closed form.
#[derive(Clone, Copy)]
pub struct TestFn {
    pub f: fn(f64) -> f64,
    pub df: fn(f64) -> f64,
    pub d2f: fn(f64) -> f64,
}

impl TestFn {
    /// `f(x) = x^2`.
    pub fn square() -> Self {
        TestFn {
            f: |x| x * x,
            df: |x| 2.0 * x,
            d2f: |_| 2.0,
        }
    }

    /// `f(x) = x`.
    pub fn identity() -> Self {
        TestFn {
            f: |x| x,
            df: |_| 1.0,
            d2f: |_| 0.0,
        }
    }

    /// `f(x) = 1`.
    pub fn one() -> Self {
        TestFn {
            f: |_| 1.0,
            df: |_| 0.0,
            d2f: |_| 0.0,
        }
    }
}

/// The infinitesimal generator applied to a test function:
/// `g(x) f'(x) + sigma2(x) f''(x) + p(x) * integral of
/// (f(x+z) - f(x) - z f'(x)) against the jump measure`,
/// the integral by adaptive quadrature (closed form for point mass).
pub fn apply_generator(
    tf: &TestFn,
    x: f64,
    model: &ModelSpec,
    quad_tol: f64,
) -> Result<f64, QuadError> {
    assert!(x.is_finite(), "generator requires a finite load");
    let mut value = model.g.eval(x) * (tf.df)(x) + model.sigma2.eval(x) * (tf.d2f)(x);
    let rate = model.p.eval(x) * model.pi.mass();
    if rate > 0.0 {
        let fx = (tf.f)(x);
        let dfx = (tf.df)(x);
        let jump = model
            .pi
            .expect(|z| (tf.f)(x + z) - fx - z * dfx, quad_tol)?;
        value += rate * jump;
    }
    Ok(value)
}

/// Consistency of flow and generator at small times: z-score of the Monte
/// Carlo estimate of `(E[f(X_h)] - f(x)) / h` against the generator value.
pub fn weak_error_check(
    tf: &TestFn,
    x: f64,
    model: &ModelSpec,
    numerics: &NumericsSpec,
    h: f64,
    replicates: u32,
    master_seed: u64,
) -> Result<f64, QuadError> {
    assert!(h <= 0.01, "weak-error horizon must be small");
    let generator = apply_generator(tf, x, model, numerics.quad_tol)?;
    let mut samples = Vec::with_capacity(replicates as usize);
    for rep in 0..replicates {
        let mut stream = DriverStream::derive(master_seed, "weak-error", rep as u64);
        let path = simulate_flow(x, 0.0, h, model, numerics, &mut stream);
        samples.push((tf.f)(path.end().value()));
    }
    let (mean, se) = mean_se(&samples);
    let drift = (mean - (tf.f)(x)) / h - generator;
    if se == 0.0 {
        return Ok(if drift == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(drift / (se / h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DoseRole, FragmentationLaw, FunctionSpec, JumpSizeLaw, Role};

    pub(crate) fn null_model() -> ModelSpec {
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

    pub(crate) fn numerics(dt: f64) -> NumericsSpec {
        NumericsSpec {
            dt,
            horizon: 1.0,
            x_explode: 1e12,
            max_cells: 100_000,
            replicates: 100,
            master_seed: 0,
            tol_fp: 1e-3,
            k_max_fp: 20,
            quad_tol: 1e-9,
        }
    }

    #[test]
    fn null_dynamics_is_identity() {
        let model = null_model();
        let num = numerics(1e-2);
        let mut s = DriverStream::derive(1, "flow", 0);
        for x in [0.0, 0.3, 7.0] {
            let path = simulate_flow(x, 0.0, 1.0, &model, &num, &mut s);
            assert!(path.loads.iter().all(|l| l.value() == x));
        }
    }

    #[test]
    fn origin_is_absorbing_for_admissible_models() {
        let mut model = null_model();
        model.g = FunctionSpec::linear(Role::GrowthG, 1.0);
        model.sigma2 = FunctionSpec::linear(Role::DiffusionSigma2, 0.5);
        model.p = FunctionSpec::linear(Role::JumpRateP, 0.3);
        let num = numerics(1e-3);
        let mut s = DriverStream::derive(2, "flow", 0);
        let path = simulate_flow(0.0, 0.0, 1.0, &model, &num, &mut s);
        assert_eq!(path.end().value(), 0.0);
    }

    #[test]
    fn linear_drift_matches_exponential_oracle() {
        // dx = x dt from 1 over t = 1: exact e
        let mut model = null_model();
        model.g = FunctionSpec::linear(Role::GrowthG, 1.0);
        let num = numerics(1e-3);
        let mut s = DriverStream::derive(3, "flow", 0);
        let path = simulate_flow(1.0, 0.0, 1.0, &model, &num, &mut s);
        let rel = (path.end().value() - core::f64::consts::E).abs() / core::f64::consts::E;
        assert!(rel < 3e-3, "rel error {rel}");
    }

    #[test]
    fn weak_order_one_in_dt() {
        let mut model = null_model();
        model.g = FunctionSpec::linear(Role::GrowthG, 1.0);
        let exact = core::f64::consts::E;
        let mut errors = Vec::new();
        for dt in [4e-3, 2e-3, 1e-3] {
            let num = numerics(dt);
            let mut s = DriverStream::derive(4, "flow", 0);
            let path = simulate_flow(1.0, 0.0, 1.0, &model, &num, &mut s);
            errors.push((path.end().value() - exact).abs());
        }
        // halving dt at least halves the error, within 20% slack
        assert!(errors[1] <= errors[0] * 0.6, "{:?}", errors);
        assert!(errors[2] <= errors[1] * 0.6, "{:?}", errors);
    }

    #[test]
    fn strong_growth_explodes_like_the_ode_oracle() {
        // x' = x (1 + ln(1+x))^{2.2} from 1e6 blows up in finite time;
        // oracle: dt/du = (1 + ln(1+e^u))^{-2.2} with u = ln x, integrated
        // numerically to the sentinel.
        let mut model = null_model();
        model.g = FunctionSpec::log_growth(Role::GrowthG, 1.0, 2.2);
        let num = numerics(1e-3);
        let mut s = DriverStream::derive(5, "flow", 0);
        let path = simulate_flow(1e6, 0.0, 10.0, &model, &num, &mut s);
        assert!(path.exploded(), "deterministic blow-up expected");
        let t_explode = path.end().explosion_time().unwrap();

        // independent ODE oracle in log space, fine fixed-step RK4
        let mut u = libm::log(1e6);
        let target = libm::log(1e12);
        let mut t_oracle = 0.0;
        let h = 1e-5;
        let f = |u: f64| libm::pow(1.0 + libm::log1p(libm::exp(u)), 2.2);
        while u < target {
            let k1 = f(u);
            let k2 = f(u + 0.5 * h * k1);
            let k3 = f(u + 0.5 * h * k2);
            let k4 = f(u + h * k3);
            u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t_oracle += h;
        }
        assert!(
            (t_explode - t_oracle).abs() < 0.1 * t_oracle + 1e-3,
            "stepped {t_explode} vs oracle {t_oracle}"
        );
    }

    #[test]
    fn driftless_diffusion_is_a_martingale() {
        let mut model = null_model();
        model.sigma2 = FunctionSpec::linear(Role::DiffusionSigma2, 1.0);
        let num = numerics(1e-2);
        let n = 10_000u32;
        let mut ends = Vec::with_capacity(n as usize);
        for rep in 0..n {
            let mut s = DriverStream::derive(6, "martingale-flow", rep as u64);
            ends.push(simulate_flow(1.0, 0.0, 1.0, &model, &num, &mut s).end().value());
        }
        let (mean, se) = mean_se(&ends);
        assert!((mean - 1.0).abs() < 4.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn generator_symbolic_examples() {
        // f = x^2, g(x) = x, sigma2(x) = x, p = 0: Gf(3) = 2*9 + 2*3 = 24
        let mut model = null_model();
        model.g = FunctionSpec::linear(Role::GrowthG, 1.0);
        model.sigma2 = FunctionSpec::linear(Role::DiffusionSigma2, 1.0);
        let v = apply_generator(&TestFn::square(), 3.0, &model, 1e-10).unwrap();
        assert!((v - 24.0).abs() < 1e-10);

        // constants are in the kernel
        let v = apply_generator(&TestFn::one(), 3.0, &model, 1e-10).unwrap();
        assert_eq!(v, 0.0);

        // linear f with point-mass jumps: compensation cancels exactly
        let mut model = null_model();
        model.g = FunctionSpec::linear(Role::GrowthG, 0.7);
        model.p = FunctionSpec::linear(Role::JumpRateP, 2.0);
        model.pi = JumpSizeLaw::point_mass(DoseRole::ParasiteJumpPi, 5.0);
        let v = apply_generator(&TestFn::identity(), 2.0, &model, 1e-10).unwrap();
        assert!((v - 0.7 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn generator_jump_integral_quadrature() {
        // f = x^2: integrand (x+z)^2 - x^2 - 2xz = z^2, so the jump term is
        // p(x) * mass * E[z^2]; exponential(mean m): E[z^2] = 2 m^2.
        let mut model = null_model();
        model.p = FunctionSpec::constant(Role::JumpRateP, 1.5);
        model.pi = JumpSizeLaw::exponential(DoseRole::ParasiteJumpPi, 0.5);
        let v = apply_generator(&TestFn::square(), 2.0, &model, 1e-10).unwrap();
        let exact = 1.5 * 2.0 * 0.5 * 0.5;
        assert!((v - exact).abs() < 1e-8, "{v} vs {exact}");
    }

    #[test]
    fn weak_error_null_dynamics_is_exact() {
        let model = null_model();
        let num = numerics(1e-3);
        let z = weak_error_check(&TestFn::identity(), 1.0, &model, &num, 1e-3, 100, 7).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn weak_error_linear_drift() {
        let mut model = null_model();
        model.g = FunctionSpec::linear(Role::GrowthG, 1.0);
        model.sigma2 = FunctionSpec::linear(Role::DiffusionSigma2, 0.5);
        let num = numerics(1e-4);
        let z = weak_error_check(&TestFn::identity(), 1.0, &model, &num, 1e-3, 100_000, 8).unwrap();
        assert!(z.abs() < 3.0, "z = {z}");
    }

    #[test]
    fn weak_error_square_function_diffusion() {
        let mut model = null_model();
        model.g = FunctionSpec::linear(Role::GrowthG, 0.3);
        model.sigma2 = FunctionSpec::linear(Role::DiffusionSigma2, 1.0);
        let num = numerics(1e-4);
        let z = weak_error_check(&TestFn::square(), 2.0, &model, &num, 1e-3, 100_000, 9).unwrap();
        assert!(z.abs() < 3.0, "z = {z}");
    }

    #[test]
    fn determinism_same_stream_same_path() {
        let mut model = null_model();
        model.g = FunctionSpec::linear(Role::GrowthG, 0.5);
        model.sigma2 = FunctionSpec::linear(Role::DiffusionSigma2, 0.5);
        model.p = FunctionSpec::constant(Role::JumpRateP, 1.0);
        model.pi = JumpSizeLaw::exponential(DoseRole::ParasiteJumpPi, 0.3);
        let num = numerics(1e-3);
        let mut s1 = DriverStream::derive(10, "flow", 3);
        let mut s2 = DriverStream::derive(10, "flow", 3);
        let p1 = simulate_flow(1.0, 0.0, 2.0, &model, &num, &mut s1);
        let p2 = simulate_flow(1.0, 0.0, 2.0, &model, &num, &mut s2);
        assert_eq!(p1, p2);
    }
}
