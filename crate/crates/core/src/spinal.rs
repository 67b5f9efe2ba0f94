//! The auxiliary single-lineage ("spinal") process and its variants.
//!
//! The spinal process follows the trait of a typical lineage in the branching
//! population: between events it obeys the single-cell flow; divisions arrive
//! at the size-biased rate `2b` and multiply the load by a fraction drawn
//! from the fragmentation law; reservoir doses arrive at the load-dependent
//! rate `lambda`; lysis doses arrive at a rate driven by the mean load per
//! cell, `r(E[Y_s])`.
//!
//! That last rate makes the process self-referential: the lysis rate reads
//! the process's own mean. [`solve_mean_field`] closes the loop by Picard
//! iteration over the mean curve, using common random numbers across
//! iterations so the map is deterministic given the seed and contracts in
//! practice.
//!
//! The reduced variants freeze or drop reinfection terms and are used by the
//! comparison and explosion arguments: a frozen lysis rate, no reinfection at
//! all, or a constant reservoir rate with no lysis.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{mean_se, Ensemble};
use crate::model::{ModelSpec, NumericsSpec};
use crate::rng::DriverStream;
use crate::sde::{flow_substep, step_flow, CellLoad, StepDiagnostics};

/// Which spinal dynamics to simulate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpinalVariant {
    /// The full process: lysis rate `r(m(s))` read from a mean-field curve.
    Full,
    /// Lysis rate frozen at `r(ybar)`.
    FrozenLysis { ybar: f64 },
    /// Flow and divisions only; no reservoir, no lysis.
    NoReinfection,
    /// Constant reservoir rate, no lysis.
    ConstantReservoir { lambda_floor: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpinalError {
    #[error("the full spinal variant requires a mean-field curve for the lysis rate")]
    MissingMeanField,
    #[error("invalid variant parameter: {0}")]
    BadVariant(String),
}

/// The self-consistent mean curve `t -> m(t) ~ E[Y_t]` on a time grid.
///
/// Interpolation between grid points is piecewise constant and
/// left-continuous: the value on `[t_j, t_{j+1})` is `m(t_j)`. Values may be
/// `+inf` past the detected explosion time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub converged: bool,
    pub iterations: u32,
    pub residual: f64,
    /// Set when the iteration was aborted because the ensemble exploded.
    pub exploded: bool,
}

impl MeanFieldCurve {
    /// A constant curve (the Picard starting point).
    pub fn constant(times: &[f64], value: f64) -> Self {
        MeanFieldCurve {
            times: times.into(),
            values: alloc::vec![value; times.len()],
            converged: false,
            iterations: 0,
            residual: f64::INFINITY,
            exploded: false,
        }
    }

    /// Piecewise-constant, left-continuous lookup.
    pub fn value_at(&self, t: f64) -> f64 {
        debug_assert!(!self.times.is_empty());
        match self.times.iter().rposition(|&tj| tj <= t) {
            Some(j) => self.values[j],
            None => self.values[0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// Division on the spine: the load is multiplied by the drawn fraction.
    Division,
    ReservoirDose,
    LysisDose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinalEvent {
    pub kind: EventKind,
    pub time: f64,
    /// The fraction for divisions, the dose for infections.
    pub magnitude: f64,
}

/// One spinal path with its event log.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinalTrajectory {
    pub times: Vec<f64>,
    pub loads: Vec<CellLoad>,
    pub events: Vec<SpinalEvent>,
    pub diagnostics: StepDiagnostics,
}

impl SpinalTrajectory {
    pub fn end(&self) -> CellLoad {
        *self.loads.last().expect("non-empty path")
    }

    pub fn exploded(&self) -> bool {
        self.end().exploded()
    }
}

/// One completed sub-step, as seen by an observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubStep {
    pub t0: f64,
    pub t1: f64,
    pub y0: f64,
    /// Load after the flow move but before any event.
    pub y_flow: f64,
    /// Load at the end of the sub-step.
    pub y1: f64,
    pub event: Option<(EventKind, f64)>,
}

// driver channels within one stream
const CH_FLOW: u64 = 0;
const CH_DIVISION: u64 = 1;
const CH_RESERVOIR: u64 = 2;
const CH_LYSIS: u64 = 3;

/// Incremental spinal simulation: one adaptive sub-step at a time.
///
/// Each driver draws from its own channel of the trajectory's stream, so
/// consumption in one channel cannot shift another. This is what keeps
/// common random numbers aligned when the lysis rate changes between Picard
/// iterations.
pub struct SpinalWalker<'a> {
    variant: SpinalVariant,
    model: &'a ModelSpec,
    numerics: &'a NumericsSpec,
    mean_field: Option<&'a MeanFieldCurve>,
    time: f64,
    load: CellLoad,
    running_max: f64,
    flow: DriverStream,
    division: DriverStream,
    reservoir: DriverStream,
    lysis: DriverStream,
    diag: StepDiagnostics,
}

impl<'a> SpinalWalker<'a> {
    pub fn new(
        variant: SpinalVariant,
        x0: f64,
        model: &'a ModelSpec,
        numerics: &'a NumericsSpec,
        mean_field: Option<&'a MeanFieldCurve>,
        stream: &DriverStream,
    ) -> Result<Self, SpinalError> {
        match variant {
            SpinalVariant::Full if mean_field.is_none() => {
                return Err(SpinalError::MissingMeanField)
            }
            SpinalVariant::FrozenLysis { ybar } if ybar < 0.0 => {
                return Err(SpinalError::BadVariant("frozen lysis level must be >= 0".into()))
            }
            SpinalVariant::ConstantReservoir { lambda_floor } if !(lambda_floor > 0.0) => {
                return Err(SpinalError::BadVariant("reservoir floor rate must be > 0".into()))
            }
            _ => {}
        }
        Ok(SpinalWalker {
            variant,
            model,
            numerics,
            mean_field,
            time: 0.0,
            load: CellLoad::new(x0),
            running_max: x0,
            flow: stream.channel(CH_FLOW),
            division: stream.channel(CH_DIVISION),
            reservoir: stream.channel(CH_RESERVOIR),
            lysis: stream.channel(CH_LYSIS),
            diag: StepDiagnostics::default(),
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn load(&self) -> CellLoad {
        self.load
    }

    /// Running maximum of the load along the discretized path.
    pub fn running_max(&self) -> f64 {
        self.running_max
    }

    pub fn diagnostics(&self) -> StepDiagnostics {
        self.diag
    }

    fn reservoir_rate(&self, y: f64) -> f64 {
        match self.variant {
            SpinalVariant::Full | SpinalVariant::FrozenLysis { .. } => self.model.lambda.eval(y),
            SpinalVariant::NoReinfection => 0.0,
            SpinalVariant::ConstantReservoir { lambda_floor } => lambda_floor,
        }
    }

    fn lysis_rate(&self, t: f64) -> f64 {
        match self.variant {
            SpinalVariant::Full => {
                let m = self.mean_field.expect("checked at construction").value_at(t);
                self.model.r.eval(m)
            }
            SpinalVariant::FrozenLysis { ybar } => self.model.r.eval(ybar),
            SpinalVariant::NoReinfection | SpinalVariant::ConstantReservoir { .. } => 0.0,
        }
    }

    /// Advance by one sub-step, never past `t_end`. Returns `None` once at
    /// `t_end` or exploded (explosion is absorbing; time no longer advances
    /// the state).
    pub fn step(&mut self, t_end: f64) -> Option<SubStep> {
        if self.time >= t_end || self.load.exploded() {
            return None;
        }
        let y0 = self.load.value();
        let div_rate = 2.0 * self.model.b;
        let res_rate = self.reservoir_rate(y0);
        let lys_rate = self.lysis_rate(self.time);
        let total = div_rate + res_rate + lys_rate;

        let mut h = flow_substep(y0, self.numerics.dt, self.model).min(t_end - self.time);
        if total > 0.0 {
            h = h.min(0.1 / total);
        }

        // event proposal with collision retry at halved step
        let mut fired: Option<EventKind> = None;
        for _ in 0..64 {
            let mut count = 0u32;
            fired = None;
            if self.division.uniform() < div_rate * h {
                fired = Some(EventKind::Division);
                count += 1;
            }
            if self.reservoir.uniform() < res_rate * h {
                fired = fired.or(Some(EventKind::ReservoirDose));
                count += 1;
            }
            if self.lysis.uniform() < lys_rate * h {
                fired = fired.or(Some(EventKind::LysisDose));
                count += 1;
            }
            if count <= 1 {
                break;
            }
            h *= 0.5;
        }

        let flowed = step_flow(
            self.load,
            self.time,
            h,
            self.model,
            self.numerics,
            &mut self.flow,
            &mut self.diag,
        );
        let y_flow = flowed.value();
        let t1 = self.time + h;

        let (next, event) = if flowed.exploded() {
            (flowed, None)
        } else {
            match fired {
                Some(EventKind::Division) => {
                    let theta = self.model.kappa.sample(&mut self.division);
                    (CellLoad::new(y_flow * theta), Some((EventKind::Division, theta)))
                }
                Some(EventKind::ReservoirDose) => {
                    let dose = self.model.dose_reservoir.sample(&mut self.reservoir);
                    let y = y_flow + dose;
                    let next = if y >= self.numerics.x_explode {
                        CellLoad::exploded_at(t1)
                    } else {
                        CellLoad::new(y)
                    };
                    (next, Some((EventKind::ReservoirDose, dose)))
                }
                Some(EventKind::LysisDose) => {
                    let dose = self.model.dose_lysis.sample(&mut self.lysis);
                    let y = y_flow + dose;
                    let next = if y >= self.numerics.x_explode {
                        CellLoad::exploded_at(t1)
                    } else {
                        CellLoad::new(y)
                    };
                    (next, Some((EventKind::LysisDose, dose)))
                }
                None => (flowed, None),
            }
        };

        let sub = SubStep {
            t0: self.time,
            t1,
            y0,
            y_flow,
            y1: next.value(),
            event,
        };
        self.time = t1;
        self.load = next;
        self.running_max = self.running_max.max(next.value());
        Some(sub)
    }

    /// Run to `t_end`, feeding every sub-step to the observer.
    pub fn advance_with<F: FnMut(&SubStep)>(&mut self, t_end: f64, mut observe: F) {
        while let Some(sub) = self.step(t_end) {
            observe(&sub);
        }
        if self.load.exploded() {
            self.time = t_end.max(self.time);
        }
    }

    pub fn advance_to(&mut self, t_end: f64) {
        self.advance_with(t_end, |_| {});
    }
}

/// Simulate one spinal path to `t_end`, recording the full sub-step grid and
/// the event log.
pub fn simulate_spinal(
    variant: SpinalVariant,
    x0: f64,
    t_end: f64,
    mean_field: Option<&MeanFieldCurve>,
    model: &ModelSpec,
    numerics: &NumericsSpec,
    stream: &DriverStream,
) -> Result<SpinalTrajectory, SpinalError> {
    let mut walker = SpinalWalker::new(variant, x0, model, numerics, mean_field, stream)?;
    let mut times = alloc::vec![0.0];
    let mut loads = alloc::vec![CellLoad::new(x0)];
    let mut events = Vec::new();
    walker.advance_with(t_end, |sub| {
        times.push(sub.t1);
        loads.push(if sub.y1.is_infinite() {
            CellLoad::exploded_at(sub.t1)
        } else {
            CellLoad::new(sub.y1)
        });
        if let Some((kind, magnitude)) = sub.event {
            events.push(SpinalEvent {
                kind,
                time: sub.t1,
                magnitude,
            });
        }
    });
    Ok(SpinalTrajectory {
        times,
        loads,
        events,
        diagnostics: walker.diagnostics(),
    })
}

/// Values of one spinal path at the requested (sorted) grid times.
pub fn spinal_values_at(
    variant: SpinalVariant,
    x0: f64,
    grid: &[f64],
    mean_field: Option<&MeanFieldCurve>,
    model: &ModelSpec,
    numerics: &NumericsSpec,
    stream: &DriverStream,
) -> Result<Vec<f64>, SpinalError> {
    let mut walker = SpinalWalker::new(variant, x0, model, numerics, mean_field, stream)?;
    let mut out = Vec::with_capacity(grid.len());
    for &t in grid {
        walker.advance_to(t);
        out.push(walker.load().value());
    }
    Ok(out)
}

/// Solve the mean-field self-consistency `m(t) = E[Y_t]` by Picard iteration
/// with common random numbers.
///
/// Iterate `k+1` simulates `replicates` spinal paths whose lysis rate reads
/// `r(m_k(.))`, each path driven by the stream for its replicate index, and
/// averages them on the grid. The same streams are replayed every iteration.
/// Convergence is declared when successive curves agree to `tol_fp` in sup
/// norm (or, immediately, when the driving rate curve did not change at
/// all). If the ensemble explodes, the curve is set to the sentinel from the
/// first grid time where more than 1e-3 of the paths have exploded and the
/// iteration aborts unconverged.
pub fn solve_mean_field<E: Ensemble>(
    model: &ModelSpec,
    numerics: &NumericsSpec,
    grid: &[f64],
    ensemble: &E,
) -> MeanFieldCurve {
    assert!(!grid.is_empty() && grid[0] == 0.0, "grid must start at 0");
    let replicates = numerics.replicates;
    let mut current = MeanFieldCurve::constant(grid, model.x0);
    let mut iterations = 0u32;

    for k in 1..=numerics.k_max_fp {
        iterations = k;
        let mf = current.clone();
        let rows = ensemble.map(replicates, |rep| {
            let stream = DriverStream::derive(numerics.master_seed, "mean-field", rep as u64);
            spinal_values_at(
                SpinalVariant::Full,
                model.x0,
                grid,
                Some(&mf),
                model,
                numerics,
                &stream,
            )
            .expect("curve provided")
        });

        // column means with explosion accounting
        let mut next_values = Vec::with_capacity(grid.len());
        let mut explosion_from: Option<usize> = None;
        for j in 0..grid.len() {
            let exploded = rows.iter().filter(|r| r[j].is_infinite()).count();
            if exploded as f64 > 1e-3 * replicates as f64 {
                explosion_from = Some(j);
                break;
            }
            let sum: f64 = rows.iter().map(|r| r[j]).sum();
            next_values.push(sum / replicates as f64);
        }
        if let Some(j) = explosion_from {
            let mut values = next_values;
            values.resize(grid.len(), f64::INFINITY);
            let _ = j;
            return MeanFieldCurve {
                times: grid.into(),
                values,
                converged: false,
                iterations,
                residual: f64::INFINITY,
                exploded: true,
            };
        }

        let next = MeanFieldCurve {
            times: grid.into(),
            values: next_values,
            converged: false,
            iterations,
            residual: f64::INFINITY,
            exploded: false,
        };

        // residual between successive iterates; on the first iterate compare
        // the driving rate curves instead (a rate-independent model is done
        // after one pass)
        let residual = current
            .values
            .iter()
            .zip(&next.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let rate_unchanged = current
            .values
            .iter()
            .zip(&next.values)
            .all(|(a, b)| model.r.eval(*a) == model.r.eval(*b));

        current = next;
        current.residual = residual;
        if (k >= 2 && residual <= numerics.tol_fp) || rate_unchanged {
            current.converged = true;
            if rate_unchanged && k == 1 {
                current.residual = 0.0;
            }
            break;
        }
    }
    current.iterations = iterations;
    current
}

/// Path functionals for spinal and population expectations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Functional {
    /// Constant 1.
    One,
    /// `1{load at t >= K}`.
    IndicatorGe { threshold: f64 },
    /// `1{sup of the load over [0, t] <= K}`, on the discretized path.
    SupIndicatorLe { threshold: f64 },
    /// `1{load at t < inf}`.
    IndicatorFinite,
    /// The load itself.
    Identity,
}

impl Functional {
    /// Evaluate on (terminal load, running max).
    pub fn eval(&self, terminal: f64, running_max: f64) -> f64 {
        match *self {
            Functional::One => 1.0,
            Functional::IndicatorGe { threshold } => {
                if terminal >= threshold {
                    1.0
                } else {
                    0.0
                }
            }
            Functional::SupIndicatorLe { threshold } => {
                if running_max <= threshold {
                    1.0
                } else {
                    0.0
                }
            }
            Functional::IndicatorFinite => {
                if terminal.is_finite() {
                    1.0
                } else {
                    0.0
                }
            }
            Functional::Identity => terminal,
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, Functional::Identity)
    }
}

/// Monte Carlo estimate with standard error of a spinal path functional at
/// time `t`.
#[allow(clippy::too_many_arguments)]
pub fn spinal_expectation<E: Ensemble>(
    functional: Functional,
    variant: SpinalVariant,
    t: f64,
    model: &ModelSpec,
    numerics: &NumericsSpec,
    mean_field: Option<&MeanFieldCurve>,
    replicates: u32,
    purpose: &str,
    ensemble: &E,
) -> Result<(f64, f64), SpinalError> {
    // surface variant errors before launching the ensemble
    SpinalWalker::new(variant, model.x0, model, numerics, mean_field, &DriverStream::derive(0, "probe", 0))?;
    let samples = ensemble.map(replicates, |rep| {
        let stream = DriverStream::derive(numerics.master_seed, purpose, rep as u64);
        let mut walker =
            SpinalWalker::new(variant, model.x0, model, numerics, mean_field, &stream)
                .expect("validated variant");
        walker.advance_to(t);
        functional.eval(walker.load().value(), walker.running_max())
    });
    Ok(mean_se(&samples))
}

/// Why a coupling precondition was rejected.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CouplingError {
    #[error("coupled models must share {0}")]
    MismatchedComponent(&'static str),
    #[error("ordering precondition violated: {0}")]
    NotOrdered(String),
    #[error(transparent)]
    Spinal(#[from] SpinalError),
}

/// A coupled pair of spinal paths on a shared sub-step grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPair {
    pub times: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Grid on which the pointwise ordering preconditions are checked.
fn ordering_grid() -> impl Iterator<Item = f64> {
    // 0 plus log-spaced loads up to the default sentinel
    core::iter::once(0.0).chain((0..=240).map(|i| libm::pow(10.0, -6.0 + i as f64 * 0.075)))
}

/// Simulate two spinal processes under the same drivers so that the lower
/// one stays below the upper one pathwise.
///
/// The models may differ only in growth, reservoir rate and initial load,
/// with `g_lo <= g_hi` and `lambda_lo <= lambda_hi` pointwise; events are
/// proposed at shared dominating rates and thinned per side, so every event
/// of the lower process is an event of the upper one.
#[allow(clippy::too_many_arguments)]
pub fn couple(
    variant: SpinalVariant,
    x0_lo: f64,
    model_lo: &ModelSpec,
    x0_hi: f64,
    model_hi: &ModelSpec,
    t_end: f64,
    mean_field: Option<&MeanFieldCurve>,
    numerics: &NumericsSpec,
    stream: &mut DriverStream,
) -> Result<CoupledPair, CouplingError> {
    if model_lo.kappa != model_hi.kappa {
        return Err(CouplingError::MismatchedComponent("kappa"));
    }
    if model_lo.pi != model_hi.pi {
        return Err(CouplingError::MismatchedComponent("pi"));
    }
    if model_lo.sigma2 != model_hi.sigma2 {
        return Err(CouplingError::MismatchedComponent("sigma2"));
    }
    if model_lo.p != model_hi.p {
        return Err(CouplingError::MismatchedComponent("p"));
    }
    if model_lo.r != model_hi.r
        || model_lo.dose_lysis != model_hi.dose_lysis
        || model_lo.dose_reservoir != model_hi.dose_reservoir
    {
        return Err(CouplingError::MismatchedComponent("lysis terms"));
    }
    if model_lo.b != model_hi.b || model_lo.d != model_hi.d {
        return Err(CouplingError::MismatchedComponent("b and d"));
    }
    if x0_lo > x0_hi {
        return Err(CouplingError::NotOrdered(alloc::format!(
            "x0: {x0_lo} > {x0_hi}"
        )));
    }
    for x in ordering_grid() {
        if model_lo.g.eval(x) > model_hi.g.eval(x) + 1e-12 {
            return Err(CouplingError::NotOrdered(alloc::format!("g at x={x}")));
        }
        if model_lo.lambda.eval(x) > model_hi.lambda.eval(x) + 1e-12 {
            return Err(CouplingError::NotOrdered(alloc::format!("lambda at x={x}")));
        }
    }
    if matches!(variant, SpinalVariant::Full) && mean_field.is_none() {
        return Err(SpinalError::MissingMeanField.into());
    }

    let lysis_rate = |t: f64| -> f64 {
        match variant {
            SpinalVariant::Full => model_lo
                .r
                .eval(mean_field.expect("checked").value_at(t)),
            SpinalVariant::FrozenLysis { ybar } => model_lo.r.eval(ybar),
            _ => 0.0,
        }
    };
    let reservoir_rate = |model: &ModelSpec, y: f64| -> f64 {
        match variant {
            SpinalVariant::NoReinfection => 0.0,
            SpinalVariant::ConstantReservoir { lambda_floor } => lambda_floor,
            _ => model.lambda.eval(y),
        }
    };

    let mut t = 0.0;
    let mut lo = CellLoad::new(x0_lo);
    let mut hi = CellLoad::new(x0_hi);
    let mut times = alloc::vec![0.0];
    let mut lower = alloc::vec![x0_lo];
    let mut upper = alloc::vec![x0_hi];
    let mut diag = StepDiagnostics::default();
    let jump_mass = model_lo.pi.mass();

    while t < t_end && !(lo.exploded() && hi.exploded()) {
        let y_lo = lo.value();
        let y_hi = hi.value();
        let div_rate = 2.0 * model_lo.b;
        let res_lo = if lo.exploded() { 0.0 } else { reservoir_rate(model_lo, y_lo) };
        let res_hi = if hi.exploded() { 0.0 } else { reservoir_rate(model_hi, y_hi) };
        let res_dom = res_lo.max(res_hi);
        let lys = lysis_rate(t);
        let p_lo = if lo.exploded() { 0.0 } else { model_lo.p.eval(y_lo) * jump_mass };
        let p_hi = if hi.exploded() { 0.0 } else { model_hi.p.eval(y_hi) * jump_mass };
        let p_dom = p_lo.max(p_hi);
        let total = div_rate + res_dom + lys;

        let mut h = numerics.dt.min(t_end - t);
        if !lo.exploded() {
            h = h.min(flow_substep(y_lo, numerics.dt, model_lo));
        }
        if !hi.exploded() {
            h = h.min(flow_substep(y_hi, numerics.dt, model_hi));
        }
        if total > 0.0 {
            h = h.min(0.1 / total);
        }

        // shared proposals, thinned per side; collision retry is shared
        let mut division: Option<f64> = None;
        let mut reservoir: Option<(f64, f64)> = None; // (u, dose)
        let mut lysis_dose: Option<f64> = None;
        for _ in 0..64 {
            division = None;
            reservoir = None;
            lysis_dose = None;
            let mut count = 0u32;
            if stream.uniform() < div_rate * h {
                division = Some(model_lo.kappa.sample(stream));
                count += 1;
            }
            if stream.uniform() < res_dom * h {
                let u = stream.uniform();
                reservoir = Some((u, model_lo.dose_reservoir.sample(stream)));
                count += 1;
            }
            if stream.uniform() < lys * h {
                lysis_dose = Some(model_lo.dose_lysis.sample(stream));
                count += 1;
            }
            if count <= 1 {
                break;
            }
            h *= 0.5;
        }

        // shared Gaussian increment and shared jump proposals
        let xi = stream.normal();
        let n_jumps = stream.poisson(p_dom * h);
        let mut jumps: Vec<(f64, f64)> = Vec::with_capacity(n_jumps as usize);
        for _ in 0..n_jumps {
            let u = stream.uniform();
            let z = model_lo.pi.sample(stream);
            jumps.push((u, z));
        }

        let advance = |load: CellLoad,
                       model: &ModelSpec,
                       p_own: f64,
                       res_own: f64,
                       diag: &mut StepDiagnostics|
         -> CellLoad {
            if load.exploded() {
                return load;
            }
            let y = load.value();
            let mut next = y + (model.g.eval(y) - model.p.eval(y) * jump_mass * model.pi.mean()) * h;
            let s2 = model.sigma2.eval(y);
            if s2 > 0.0 {
                next += libm::sqrt(2.0 * s2 * h) * xi;
            }
            for &(u, z) in &jumps {
                if u * p_dom < p_own {
                    next += z;
                }
            }
            diag.steps += 1;
            if next < 0.0 {
                diag.clamps += 1;
                next = 0.0;
            }
            if let Some(theta) = division {
                next *= theta;
            }
            if let Some((u, dose)) = reservoir {
                if u * res_dom < res_own {
                    next += dose;
                }
            }
            if let Some(dose) = lysis_dose {
                next += dose;
            }
            if next >= numerics.x_explode {
                CellLoad::exploded_at(t + h)
            } else {
                CellLoad::new(next)
            }
        };

        lo = advance(lo, model_lo, p_lo, res_lo, &mut diag);
        hi = advance(hi, model_hi, p_hi, res_hi, &mut diag);
        t += h;
        times.push(t);
        lower.push(lo.value());
        upper.push(hi.value());
    }

    Ok(CoupledPair {
        times,
        lower,
        upper,
    })
}
