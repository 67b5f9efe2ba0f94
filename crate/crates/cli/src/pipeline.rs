//! Experiment orchestration: mean-field solve, simulations and checks,
//! file emission, manifest assembly.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use lysim_core::criteria::{
    criteria_report, explosion_probability, in_a_set, martingale_za_check, CriteriaReport,
};
use lysim_core::ensemble::Ensemble;
use lysim_core::population::{
    birth_death_pmf, many_to_one_check, sample_cell_count, survival_fraction_stats,
    SurvivalStats,
};
use lysim_core::rng::DriverStream;
use lysim_core::spinal::{solve_mean_field, Functional, MeanFieldCurve};
use serde::Serialize;
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::manifest::{
    config_sha256, file_sha256, OutputRecord, RunManifest, StageTiming, TOOL_VERSION,
};
use crate::outputs::{csv_writer, write_json, write_mean_field_csv};
use crate::parallel::RayonEnsemble;

pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub partial: bool,
}

struct Emitter {
    out_dir: PathBuf,
    files: Vec<String>,
    stages: Vec<StageTiming>,
}

impl Emitter {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.out_dir.join(name)
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let value = f(self)?;
        self.stages.push(StageTiming {
            stage: name.to_string(),
            wall_seconds: start.elapsed().as_secs_f64(),
        });
        Ok(value)
    }
}

fn mean_field_grid(horizon: f64) -> Vec<f64> {
    let n = 32;
    (0..=n).map(|i| horizon * i as f64 / n as f64).collect()
}

pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<RunOutcome> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let ensemble = RayonEnsemble::new(workers);
    let mut em = Emitter {
        out_dir: out_dir.to_path_buf(),
        files: Vec::new(),
        stages: Vec::new(),
    };

    let horizon = config
        .numerics
        .horizon
        .max(config.t_list.iter().copied().fold(0.0, f64::max));
    let curve = em.stage("mean-field", |em| {
        let grid = mean_field_grid(horizon);
        let curve = solve_mean_field(&config.model, &config.numerics, &grid, &ensemble);
        write_mean_field_csv(&em.path("mean_field.csv"), &curve)?;
        Ok(curve)
    })?;

    let (stats, partial) = em.stage("experiment", |em| match config.experiment {
        ExperimentKind::ManyToOneSuite => many_to_one_suite(config, &curve, &ensemble, em),
        ExperimentKind::MartingaleSuite => martingale_suite(config, &curve, &ensemble, em),
        ExperimentKind::CriteriaScan => criteria_scan(config, &curve, em),
        ExperimentKind::RegimeSubcritical => regime_subcritical(config, &curve, &ensemble, em),
        ExperimentKind::RegimeSupercritical
        | ExperimentKind::NoReservoirExtinction
        | ExperimentKind::ComingDown => fraction_trend(config, &curve, &ensemble, em),
        ExperimentKind::RegimeExplosive | ExperimentKind::NoReservoirExplosive => {
            explosive_regime(config, &curve, &ensemble, em)
        }
    })?;

    let partial = partial || curve.exploded;
    em.stage("stats", |em| write_json(&em.path("stats.json"), &stats))?;

    let mut outputs = Vec::new();
    for name in &em.files {
        outputs.push(OutputRecord {
            name: name.clone(),
            sha256: file_sha256(&out_dir.join(name))?,
        });
    }
    outputs.sort_by(|a, b| a.name.cmp(&b.name));
    let manifest = RunManifest {
        version: TOOL_VERSION.to_string(),
        config_sha256: config_sha256(config)?,
        config: config.clone(),
        partial,
        stages: em.stages,
        outputs,
    };
    let manifest_path = out_dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;

    Ok(RunOutcome {
        out_dir: out_dir.to_path_buf(),
        manifest_path,
        partial,
    })
}

#[derive(Serialize)]
struct ManyToOneRow {
    functional: String,
    t: f64,
    lhs: f64,
    lhs_se: f64,
    rhs: f64,
    rhs_se: f64,
    z: f64,
}

fn many_to_one_suite(
    config: &ExperimentConfig,
    curve: &MeanFieldCurve,
    ensemble: &impl Ensemble,
    em: &mut Emitter,
) -> Result<(serde_json::Value, bool)> {
    let times = if config.t_list.is_empty() {
        vec![1.0]
    } else {
        config.t_list.clone()
    };
    let m = config.numerics.replicates;
    let functionals = [
        ("one".to_string(), Functional::One),
        ("indicator-ge-0.3".to_string(), Functional::IndicatorGe { threshold: 0.3 }),
        ("indicator-ge-0.7".to_string(), Functional::IndicatorGe { threshold: 0.7 }),
    ];
    let mut rows = Vec::new();
    let mut partial = false;
    for &t in &times {
        for (name, f) in &functionals {
            let report = many_to_one_check(
                *f,
                t,
                &config.model,
                Some(curve),
                m,
                m,
                &config.numerics,
                ensemble,
            )
            .map_err(|e| anyhow::anyhow!("{e}"))?;
            partial |= report.capped_runs > 0;
            rows.push(ManyToOneRow {
                functional: name.clone(),
                t,
                lhs: report.lhs,
                lhs_se: report.lhs_se,
                rhs: report.rhs,
                rhs_se: report.rhs_se,
                z: report.z,
            });
        }
    }

    // exact cell-count law versus its sampler, as plot data
    let (b, d, t) = (config.model.b, config.model.d, times[0]);
    if b != d && t > 0.0 {
        let mut stream =
            DriverStream::derive(config.numerics.master_seed, "pmf-comparison", 0);
        let n_samples = (m as usize * 10).max(10_000);
        let mut counts = vec![0u64; 64];
        for _ in 0..n_samples {
            let s = sample_cell_count(b, d, t, &mut stream)? as usize;
            if s < counts.len() {
                counts[s] += 1;
            }
        }
        let mut w = csv_writer(&em.path("pmf_comparison.csv"))?;
        w.write_record(["n", "exact", "empirical", "samples"])?;
        for (n, &c) in counts.iter().enumerate() {
            let exact = birth_death_pmf(b, d, t, n as u64)?;
            if exact < 1e-9 && c == 0 && n > 2 {
                break;
            }
            w.write_record([
                n.to_string(),
                exact.to_string(),
                (c as f64 / n_samples as f64).to_string(),
                n_samples.to_string(),
            ])?;
        }
        w.flush()?;
    }

    let all_ok = rows.iter().all(|r| r.z.abs() < 3.0);
    Ok((
        json!({
            "experiment": config.experiment.name(),
            "rows": rows,
            "all-z-below-3": all_ok,
        }),
        partial,
    ))
}

#[derive(Serialize)]
struct MartingaleRow {
    a: f64,
    t: f64,
    estimate: f64,
    se: f64,
    z: f64,
}

fn martingale_suite(
    config: &ExperimentConfig,
    curve: &MeanFieldCurve,
    ensemble: &impl Ensemble,
    em: &mut Emitter,
) -> Result<(serde_json::Value, bool)> {
    let t_grid = if config.t_list.is_empty() {
        vec![0.5, 1.0, 2.0]
    } else {
        config.t_list.clone()
    };
    let x0 = config.model.x0;
    let (lower, upper) = (1e-3 * x0, 1e3 * x0);
    let mut a_values = vec![0.5];
    if in_a_set(1.5, &config.model.kappa).unwrap_or(false) {
        a_values.push(1.5);
    }
    let target = |a: f64| x0.powf(1.0 - a);

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &a in &a_values {
        let res = martingale_za_check(
            a,
            lower,
            upper,
            &t_grid,
            &config.model,
            Some(curve),
            config.numerics.replicates,
            &config.numerics,
            ensemble,
        )
        .map_err(|e| anyhow::anyhow!("{e}"))?;
        for (&t, &(estimate, se)) in res.t_grid.iter().zip(&res.estimates) {
            let z = if se > 0.0 {
                (estimate - target(a)) / se
            } else {
                0.0
            };
            rows.push(MartingaleRow {
                a,
                t,
                estimate,
                se,
                z,
            });
        }
        summaries.push(json!({"a": a, "max-drift-z": res.max_drift_z}));
    }

    let mut w = csv_writer(&em.path("martingale_drift.csv"))?;
    w.write_record(["a", "t", "estimate", "se", "z"])?;
    for r in &rows {
        w.write_record([
            r.a.to_string(),
            r.t.to_string(),
            r.estimate.to_string(),
            r.se.to_string(),
            r.z.to_string(),
        ])?;
    }
    w.flush()?;

    Ok((
        json!({
            "experiment": config.experiment.name(),
            "corridor": [lower, upper],
            "rows": rows,
            "summaries": summaries,
        }),
        false,
    ))
}

fn criteria_scan(
    config: &ExperimentConfig,
    curve: &MeanFieldCurve,
    em: &mut Emitter,
) -> Result<(serde_json::Value, bool)> {
    let grid: Vec<f64> = (0..=44)
        .map(|k| 10f64.powf(12.0 * k as f64 / 44.0))
        .collect();
    let r_arg = *curve.values.last().expect("non-empty curve");
    let mut a_values = vec![0.25, 0.5, 0.75];
    for a in [1.5, 2.0, 3.0] {
        if in_a_set(a, &config.model.kappa).unwrap_or(false) {
            a_values.push(a);
        }
    }

    let mut reports: Vec<CriteriaReport> = Vec::new();
    for &a in &a_values {
        let eta = (a > 1.0).then_some(0.5);
        reports.push(
            criteria_report(&config.model, a, eta, r_arg, &grid, config.numerics.quad_tol)
                .map_err(|e| anyhow::anyhow!("{e}"))?,
        );
    }
    write_json(&em.path("criteria_report.json"), &reports)?;

    let mut w = csv_writer(&em.path("criteria_grid.csv"))?;
    w.write_record(["a", "x", "rho", "d", "g_a"])?;
    for report in &reports {
        for (j, &x) in report.grid.iter().enumerate() {
            w.write_record([
                report.a.to_string(),
                x.to_string(),
                report.rho_values[j].to_string(),
                report.d_values[j].to_string(),
                report.g_values[j].to_string(),
            ])?;
        }
    }
    w.flush()?;

    let verdicts: Vec<_> = reports
        .iter()
        .map(|r| json!({"a": r.a, "verdict": r.verdict, "tail-slope": r.tail_slope}))
        .collect();
    Ok((
        json!({
            "experiment": config.experiment.name(),
            "marker": lysim_core::criteria::HEURISTIC_MARKER,
            "verdicts": verdicts,
        }),
        false,
    ))
}

fn survival_sweep(
    config: &ExperimentConfig,
    curve: &MeanFieldCurve,
    times: &[f64],
    thresholds: &[f64],
    ensemble: &impl Ensemble,
) -> Result<Vec<SurvivalStats>> {
    times
        .iter()
        .map(|&t| {
            survival_fraction_stats(
                &config.model,
                t,
                thresholds,
                Some(curve),
                config.numerics.replicates,
                &config.numerics,
                ensemble,
            )
            .map_err(|e| anyhow::anyhow!("{e}"))
        })
        .collect()
}

fn write_fraction_vs_t(em: &mut Emitter, sweep: &[SurvivalStats]) -> Result<()> {
    let mut w = csv_writer(&em.path("fraction_vs_t.csv"))?;
    w.write_record([
        "t",
        "k",
        "frac_at_least",
        "frac_at_least_se",
        "frac_path_below",
        "frac_path_below_se",
        "frac_finite",
        "frac_finite_se",
        "survival_prob",
        "survival_prob_se",
    ])?;
    for stats in sweep {
        for (j, &k) in stats.thresholds.iter().enumerate() {
            w.write_record([
                stats.t.to_string(),
                k.to_string(),
                stats.frac_at_least[j].0.to_string(),
                stats.frac_at_least[j].1.to_string(),
                stats.frac_path_below[j].0.to_string(),
                stats.frac_path_below[j].1.to_string(),
                stats.frac_finite.0.to_string(),
                stats.frac_finite.1.to_string(),
                stats.survival_prob.0.to_string(),
                stats.survival_prob.1.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One-sided z for "later < earlier"; positive favors a decrease.
fn decrease_z(earlier: (f64, f64), later: (f64, f64)) -> f64 {
    let pooled = (earlier.1 * earlier.1 + later.1 * later.1).sqrt();
    if pooled > 0.0 {
        (earlier.0 - later.0) / pooled
    } else if earlier.0 > later.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

fn regime_subcritical(
    config: &ExperimentConfig,
    curve: &MeanFieldCurve,
    ensemble: &impl Ensemble,
    em: &mut Emitter,
) -> Result<(serde_json::Value, bool)> {
    let t = *config.t_list.first().unwrap_or(&2.0);
    let thresholds = config.thresholds();
    let sweep = survival_sweep(config, curve, &[t], &thresholds, ensemble)?;
    let stats = &sweep[0];

    let mut w = csv_writer(&em.path("fraction_vs_k.csv"))?;
    w.write_record(["t", "k", "frac_at_least", "se"])?;
    for (j, &k) in stats.thresholds.iter().enumerate() {
        w.write_record([
            t.to_string(),
            k.to_string(),
            stats.frac_at_least[j].0.to_string(),
            stats.frac_at_least[j].1.to_string(),
        ])?;
    }
    w.flush()?;

    // envelope C / sqrt(K), C fitted at the smallest positive threshold
    let envelope = stats
        .thresholds
        .iter()
        .position(|&k| k > 0.0)
        .map(|anchor| {
            let c = stats.frac_at_least[anchor].0 * stats.thresholds[anchor].sqrt();
            let checks: Vec<_> = (anchor + 1..stats.thresholds.len())
                .map(|j| {
                    let k = stats.thresholds[j];
                    let (est, se) = stats.frac_at_least[j];
                    json!({
                        "k": k,
                        "estimate": est,
                        "se": se,
                        "bound": c / k.sqrt(),
                        "within": est <= c / k.sqrt() + 3.0 * se,
                    })
                })
                .collect();
            json!({"c": c, "checks": checks})
        });

    let partial = stats.capped_runs > 0;
    Ok((
        json!({
            "experiment": config.experiment.name(),
            "t": t,
            "envelope": envelope,
            "capped-runs": stats.capped_runs,
        }),
        partial,
    ))
}

fn fraction_trend(
    config: &ExperimentConfig,
    curve: &MeanFieldCurve,
    ensemble: &impl Ensemble,
    em: &mut Emitter,
) -> Result<(serde_json::Value, bool)> {
    let times = config.times();
    let thresholds = match config.experiment {
        ExperimentKind::NoReservoirExtinction if config.k_list.is_empty() => vec![0.1],
        _ => config.thresholds(),
    };
    let sweep = survival_sweep(config, curve, &times, &thresholds, ensemble)?;
    write_fraction_vs_t(em, &sweep)?;

    // trend per threshold: the monitored fraction must decrease in t
    let pick = |stats: &SurvivalStats, j: usize| match config.experiment {
        ExperimentKind::RegimeSupercritical => stats.frac_path_below[j],
        _ => stats.frac_at_least[j],
    };
    let comparisons = thresholds.len() * (times.len() - 1).max(1);
    let level = 0.01 / comparisons as f64;
    let mut trends = Vec::new();
    for (j, &k) in thresholds.iter().enumerate() {
        let mut zs = Vec::new();
        for w in sweep.windows(2) {
            zs.push(decrease_z(pick(&w[0], j), pick(&w[1], j)));
        }
        trends.push(json!({
            "k": k,
            "decrease-z": zs,
            "bonferroni-level": level,
        }));
    }

    let partial = sweep.iter().any(|s| s.capped_runs > 0);
    Ok((
        json!({
            "experiment": config.experiment.name(),
            "times": times,
            "trends": trends,
        }),
        partial,
    ))
}

fn explosive_regime(
    config: &ExperimentConfig,
    curve: &MeanFieldCurve,
    ensemble: &impl Ensemble,
    em: &mut Emitter,
) -> Result<(serde_json::Value, bool)> {
    let times = config.times();
    let thresholds = config.thresholds();
    let sweep = survival_sweep(config, curve, &times, &thresholds, ensemble)?;
    write_fraction_vs_t(em, &sweep)?;

    let mut explosion = Vec::new();
    for &t in &times {
        let (p, se) = explosion_probability(
            &config.model,
            t,
            Some(curve),
            config.numerics.replicates,
            &config.numerics,
            ensemble,
        )
        .map_err(|e| anyhow::anyhow!("{e}"))?;
        explosion.push(json!({"t": t, "estimate": p, "se": se}));
    }

    let partial = sweep.iter().any(|s| s.capped_runs > 0);
    Ok((
        json!({
            "experiment": config.experiment.name(),
            "times": times,
            "lineage-explosion-probability": explosion,
        }),
        partial,
    ))
}

pub fn replay(
    manifest_path: &Path,
    out_dir: &Path,
    workers: usize,
) -> Result<(RunOutcome, bool)> {
    let manifest = RunManifest::load(manifest_path)?;
    if manifest.version != TOOL_VERSION {
        anyhow::bail!(
            "version mismatch: manifest written by {}, this tool is {}",
            manifest.version,
            TOOL_VERSION
        );
    }
    let outcome = run_experiment(&manifest.config, out_dir, workers)?;
    let fresh = RunManifest::load(&outcome.manifest_path)?;
    let mut identical = fresh.outputs.len() == manifest.outputs.len();
    for record in &manifest.outputs {
        match fresh.outputs.iter().find(|r| r.name == record.name) {
            Some(got) if got.sha256 == record.sha256 => {
                println!("match    {}", record.name);
            }
            Some(got) => {
                println!(
                    "differs  {} (expected {}, got {})",
                    record.name, record.sha256, got.sha256
                );
                identical = false;
            }
            None => {
                println!("missing  {}", record.name);
                identical = false;
            }
        }
    }
    Ok((outcome, identical))
}
