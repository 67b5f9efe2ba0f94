//! The branching cell population.
//!
//! Cells carry a parasite load, divide at rate `b` (splitting the load by a
//! fraction from the fragmentation law), die at rate `d`, and receive
//! reservoir and lysis doses; between events each load follows the
//! single-cell flow. Individuals are identified by binary genealogy words:
//! the root is the empty word and the children of `u` are `u0` and `u1`.
//!
//! Besides the simulator this module holds the exact law of the cell count
//! (a geometric mixture), the population-to-lineage consistency check that
//! equates rescaled population sums with single-path expectations, and the
//! per-cell survival statistics used by the long-time regime experiments.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ensemble::{mean_se, Ensemble};
use crate::model::{ModelSpec, NumericsSpec};
use crate::rng::DriverStream;
use crate::sde::{flow_substep, step_flow, CellLoad, StepDiagnostics};
use crate::spinal::{
    spinal_expectation, Functional, MeanFieldCurve, SpinalError, SpinalVariant,
};

/// Genealogy word over `{0, 1}`; the root is the empty word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellLabel(Vec<u8>);

impl CellLabel {
    pub fn root() -> Self {
        CellLabel(Vec::new())
    }

    pub fn child(&self, which: u8) -> Self {
        debug_assert!(which <= 1);
        let mut bits = self.0.clone();
        bits.push(which);
        CellLabel(bits)
    }

    /// Number of divisions in the ancestry.
    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_ancestor_of(&self, other: &CellLabel) -> bool {
        self.0.len() < other.0.len() && other.0[..self.0.len()] == self.0[..]
    }
}

impl core::fmt::Display for CellLabel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        if self.0.is_empty() {
            return f.write_str("*");
        }
        for &b in &self.0 {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub load: CellLoad,
    /// Running maximum of the load along the cell's lineage path.
    pub path_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PopulationEventKind {
    Division { theta: f64 },
    Death,
    ReservoirDose { dose: f64 },
    LysisDose { dose: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationEvent {
    pub time: f64,
    pub label: CellLabel,
    #[serde(flatten)]
    pub kind: PopulationEventKind,
}

/// State of one population replicate at its final time, with the event log.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub time: f64,
    pub living: Vec<(CellLabel, Cell)>,
    pub events: Vec<PopulationEvent>,
    /// The run stopped early because the cell count exceeded the cap; the
    /// state is the partial result at `time`.
    pub capped: bool,
    pub diagnostics: StepDiagnostics,
}

impl Population {
    pub fn count(&self) -> usize {
        self.living.len()
    }

    pub fn extinct(&self) -> bool {
        self.living.is_empty()
    }

    pub fn any_exploded(&self) -> bool {
        self.living.iter().any(|(_, c)| c.load.exploded())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PopulationError {
    #[error("the lysis rate is active but no mean-field curve was supplied")]
    MissingMeanField,
    #[error(transparent)]
    Spinal(#[from] SpinalError),
}

/// True when the lysis rate vanishes on a probe grid (so no curve is needed).
fn lysis_inactive(model: &ModelSpec) -> bool {
    [0.0, 1e-3, 1.0, 1e3, 1e9]
        .iter()
        .all(|&x| model.r.eval(x) == 0.0)
}

/// Simulate one population replicate from a single root cell at load
/// `model.x0` up to `t_end`.
///
/// Per sub-step each living cell independently dies, divides, or receives a
/// dose, with first-order probabilities `rate * h`; the sub-step keeps the
/// total per-cell event probability below 0.1. If several events of one cell
/// land in the same sub-step, the priority is death, division, reservoir,
/// lysis. Exploded cells stay in the population (division and death still
/// apply; their load is absorbing).
pub fn simulate_population(
    model: &ModelSpec,
    t_end: f64,
    mean_field: Option<&MeanFieldCurve>,
    numerics: &NumericsSpec,
    stream: &mut DriverStream,
) -> Result<Population, PopulationError> {
    if mean_field.is_none() && !lysis_inactive(model) {
        return Err(PopulationError::MissingMeanField);
    }

    let mut t = 0.0;
    let mut living = alloc::vec![(
        CellLabel::root(),
        Cell {
            load: CellLoad::new(model.x0),
            path_max: model.x0,
        }
    )];
    let mut events = Vec::new();
    let mut diag = StepDiagnostics::default();
    let mut capped = false;

    while t < t_end && !living.is_empty() {
        if living.len() > numerics.max_cells as usize {
            capped = true;
            break;
        }
        let lysis_rate = match mean_field {
            Some(mf) => model.r.eval(mf.value_at(t)),
            None => 0.0,
        };
        // sub-step budget over the whole population
        let mut h = numerics.dt.min(t_end - t);
        for (_, cell) in &living {
            if cell.load.exploded() {
                h = h.min(0.1 / (model.b + model.d).max(1e-300));
                continue;
            }
            let x = cell.load.value();
            h = h.min(flow_substep(x, numerics.dt, model));
            let total = model.b + model.d + model.lambda.eval(x) + lysis_rate;
            if total > 0.0 {
                h = h.min(0.1 / total);
            }
        }
        let t1 = t + h;

        let mut next: Vec<(CellLabel, Cell)> = Vec::with_capacity(living.len() + 1);
        for (label, cell) in living.drain(..) {
            // event draws first, flow after, event applied to the flowed load
            let dies = model.d > 0.0 && stream.uniform() < model.d * h;
            let divides = stream.uniform() < model.b * h;
            let exploded = cell.load.exploded();
            let res_rate = if exploded { 0.0 } else { model.lambda.eval(cell.load.value()) };
            let res_dose = res_rate > 0.0 && stream.uniform() < res_rate * h;
            let lys_dose = !exploded && lysis_rate > 0.0 && stream.uniform() < lysis_rate * h;

            let flowed = if exploded {
                cell.load
            } else {
                step_flow(cell.load, t, h, model, numerics, stream, &mut diag)
            };
            let x = flowed.value();

            if dies {
                events.push(PopulationEvent {
                    time: t1,
                    label,
                    kind: PopulationEventKind::Death,
                });
                continue;
            }
            if divides {
                let theta = model.kappa.sample(stream);
                events.push(PopulationEvent {
                    time: t1,
                    label: label.clone(),
                    kind: PopulationEventKind::Division { theta },
                });
                let make = |frac: f64| {
                    let y = x * frac;
                    let load = if y >= numerics.x_explode || y.is_infinite() {
                        CellLoad::exploded_at(t1)
                    } else {
                        CellLoad::new(y)
                    };
                    Cell {
                        load,
                        path_max: cell.path_max.max(load.value()),
                    }
                };
                next.push((label.child(0), make(theta)));
                next.push((label.child(1), make(1.0 - theta)));
                continue;
            }
            let mut load = flowed;
            if res_dose {
                let dose = model.dose_reservoir.sample(stream);
                events.push(PopulationEvent {
                    time: t1,
                    label: label.clone(),
                    kind: PopulationEventKind::ReservoirDose { dose },
                });
                let y = load.value() + dose;
                load = if y >= numerics.x_explode {
                    CellLoad::exploded_at(t1)
                } else {
                    CellLoad::new(y)
                };
            } else if lys_dose {
                let dose = model.dose_lysis.sample(stream);
                events.push(PopulationEvent {
                    time: t1,
                    label: label.clone(),
                    kind: PopulationEventKind::LysisDose { dose },
                });
                let y = load.value() + dose;
                load = if y >= numerics.x_explode {
                    CellLoad::exploded_at(t1)
                } else {
                    CellLoad::new(y)
                };
            }
            next.push((
                label,
                Cell {
                    load,
                    path_max: cell.path_max.max(load.value()),
                },
            ));
        }
        living = next;
        t = t1;
    }

    Ok(Population {
        time: t,
        living,
        events,
        capped,
        diagnostics: diag,
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LawError {
    #[error("the cell-count law requires b > 0, d >= 0, b != d, t > 0")]
    OutOfDomain,
}

fn alpha_beta(b: f64, d: f64, t: f64) -> Result<(f64, f64), LawError> {
    if !(b > 0.0) || !(d >= 0.0) || b == d || !(t > 0.0) {
        return Err(LawError::OutOfDomain);
    }
    let e = libm::exp((b - d) * t);
    let denom = b * e - d;
    Ok(((d * e - d) / denom, (b * e - b) / denom))
}

/// Exact probability `P(N_t = n)` for the cell count of a binary
/// birth-death process started from one cell.
///
/// `P(N_t = 0) = alpha_t` and `P(N_t = n) = (1 - alpha_t)(1 - beta_t)
/// beta_t^{n-1}` for `n >= 1`, a geometric mixture.
pub fn birth_death_pmf(b: f64, d: f64, t: f64, n: u64) -> Result<f64, LawError> {
    let (alpha, beta) = alpha_beta(b, d, t)?;
    Ok(match n {
        0 => alpha,
        n => (1.0 - alpha) * (1.0 - beta) * libm::pow(beta, (n - 1) as f64),
    })
}

/// Exact sample of the cell count `N_t` from the geometric mixture.
pub fn sample_cell_count(b: f64, d: f64, t: f64, stream: &mut DriverStream) -> Result<u64, LawError> {
    let (alpha, beta) = alpha_beta(b, d, t)?;
    if stream.uniform() < alpha {
        return Ok(0);
    }
    if beta <= 0.0 {
        return Ok(1);
    }
    let u = 1.0 - stream.uniform(); // in (0, 1]
    Ok(1 + libm::floor(libm::log(u) / libm::log(beta)) as u64)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManyToOneError {
    #[error("unbounded functional on a preset with explosions is outside the identity's hypotheses")]
    UnboundedFunctional,
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error(transparent)]
    Spinal(#[from] SpinalError),
}

/// Result of the population-vs-lineage consistency check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManyToOneReport {
    /// `e^{-(b-d)t}` times the mean population sum of the functional.
    pub lhs: f64,
    pub lhs_se: f64,
    /// The single-lineage expectation of the same functional.
    pub rhs: f64,
    pub rhs_se: f64,
    pub z: f64,
    /// Population replicates stopped early at the cell cap.
    pub capped_runs: u32,
}

/// Check that the rescaled population sum of a functional matches the
/// single-lineage expectation: `e^{-(b-d)t} E[sum_u F(X^u)] = E[F(Y_t)]`.
///
/// Both sides are estimated by independent Monte Carlo ensembles; the
/// z-score uses the pooled standard error.
#[allow(clippy::too_many_arguments)]
pub fn many_to_one_check<E: Ensemble>(
    functional: Functional,
    t: f64,
    model: &ModelSpec,
    mean_field: Option<&MeanFieldCurve>,
    m_pop: u32,
    m_spine: u32,
    numerics: &NumericsSpec,
    ensemble: &E,
) -> Result<ManyToOneReport, ManyToOneError> {
    if mean_field.is_none() && !lysis_inactive(model) {
        return Err(PopulationError::MissingMeanField.into());
    }
    let scale = libm::exp(-(model.b - model.d) * t);

    let rows = ensemble.map(m_pop, |rep| {
        let mut stream = DriverStream::derive(numerics.master_seed, "many-to-one-pop", rep as u64);
        let pop = simulate_population(model, t, mean_field, numerics, &mut stream)
            .expect("preconditions checked");
        let exploded = pop.any_exploded();
        let sum: f64 = pop
            .living
            .iter()
            .map(|(_, c)| functional.eval(c.load.value(), c.path_max))
            .sum();
        (sum, exploded, pop.capped)
    });
    if !functional.is_bounded() && rows.iter().any(|&(_, exploded, _)| exploded) {
        return Err(ManyToOneError::UnboundedFunctional);
    }
    let capped_runs = rows.iter().filter(|&&(_, _, capped)| capped).count() as u32;
    let sums: Vec<f64> = rows.iter().map(|&(s, _, _)| s).collect();
    let (mean, se) = mean_se(&sums);
    let (lhs, lhs_se) = (scale * mean, scale * se);

    // a constant placeholder curve when lysis is inactive
    let fallback;
    let curve = match mean_field {
        Some(mf) => mf,
        None => {
            fallback = MeanFieldCurve::constant(&[0.0, t], model.x0);
            &fallback
        }
    };
    let (rhs, rhs_se) = spinal_expectation(
        functional,
        SpinalVariant::Full,
        t,
        model,
        numerics,
        Some(curve),
        m_spine,
        "many-to-one-spine",
        ensemble,
    )?;

    let pooled = libm::sqrt(lhs_se * lhs_se + rhs_se * rhs_se);
    let z = if pooled > 0.0 {
        (lhs - rhs) / pooled
    } else if lhs == rhs {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(ManyToOneReport {
        lhs,
        lhs_se,
        rhs,
        rhs_se,
        z,
        capped_runs,
    })
}

/// Per-threshold survival statistics, each as (estimate, standard error).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalStats {
    pub t: f64,
    pub thresholds: Vec<f64>,
    /// Mean fraction of cells with load at `t` at or above the threshold
    /// (0 on extinct replicates).
    pub frac_at_least: Vec<(f64, f64)>,
    /// Mean fraction of cells whose path maximum stayed at or below the
    /// threshold.
    pub frac_path_below: Vec<(f64, f64)>,
    /// Mean fraction of cells with finite load at `t`.
    pub frac_finite: (f64, f64),
    pub survival_prob: (f64, f64),
    /// Replicates stopped early at the cell cap (statistics then cover the
    /// partial state).
    pub capped_runs: u32,
}

/// Estimate the per-cell survival fractions behind the long-time regime
/// statements, over `m` population replicates.
///
/// Extinct replicates contribute 0 to every fraction, matching the
/// convention that the survival indicator annihilates the undefined ratio.
pub fn survival_fraction_stats<E: Ensemble>(
    model: &ModelSpec,
    t: f64,
    thresholds: &[f64],
    mean_field: Option<&MeanFieldCurve>,
    m: u32,
    numerics: &NumericsSpec,
    ensemble: &E,
) -> Result<SurvivalStats, PopulationError> {
    if mean_field.is_none() && !lysis_inactive(model) {
        return Err(PopulationError::MissingMeanField);
    }
    struct Row {
        ge: Vec<f64>,
        path_le: Vec<f64>,
        finite: f64,
        alive: f64,
        capped: bool,
    }
    let rows = ensemble.map(m, |rep| {
        let mut stream = DriverStream::derive(numerics.master_seed, "survival", rep as u64);
        let pop = simulate_population(model, t, mean_field, numerics, &mut stream)
            .expect("preconditions checked");
        let n = pop.count() as f64;
        if pop.extinct() {
            return Row {
                ge: alloc::vec![0.0; thresholds.len()],
                path_le: alloc::vec![0.0; thresholds.len()],
                finite: 0.0,
                alive: 0.0,
                capped: pop.capped,
            };
        }
        let ge = thresholds
            .iter()
            .map(|&k| {
                pop.living
                    .iter()
                    .filter(|(_, c)| c.load.value() >= k)
                    .count() as f64
                    / n
            })
            .collect();
        let path_le = thresholds
            .iter()
            .map(|&k| {
                pop.living.iter().filter(|(_, c)| c.path_max <= k).count() as f64 / n
            })
            .collect();
        let finite =
            pop.living.iter().filter(|(_, c)| !c.load.exploded()).count() as f64 / n;
        Row {
            ge,
            path_le,
            finite,
            alive: 1.0,
            capped: pop.capped,
        }
    });

    let column = |pick: &dyn Fn(&Row) -> f64| -> (f64, f64) {
        let vals: Vec<f64> = rows.iter().map(pick).collect();
        mean_se(&vals)
    };
    let frac_at_least = (0..thresholds.len())
        .map(|j| column(&|r: &Row| r.ge[j]))
        .collect();
    let frac_path_below = (0..thresholds.len())
        .map(|j| column(&|r: &Row| r.path_le[j]))
        .collect();
    Ok(SurvivalStats {
        t,
        thresholds: thresholds.into(),
        frac_at_least,
        frac_path_below,
        frac_finite: column(&|r: &Row| r.finite),
        survival_prob: column(&|r: &Row| r.alive),
        capped_runs: rows.iter().filter(|r| r.capped).count() as u32,
    })
}

/// Empirical total-variation distance between counts and the exact law.
pub fn count_law_tv(samples: &[u64], b: f64, d: f64, t: f64) -> Result<f64, LawError> {
    let max = samples.iter().copied().max().unwrap_or(0);
    let n = samples.len() as f64;
    let mut tv = 0.0;
    let mut covered = 0.0;
    for k in 0..=max {
        let emp = samples.iter().filter(|&&s| s == k).count() as f64 / n;
        let exact = birth_death_pmf(b, d, t, k)?;
        tv += (emp - exact).abs();
        covered += exact;
    }
    // mass of the exact law beyond the largest observed count
    tv += 1.0 - covered;
    Ok(tv / 2.0)
}
