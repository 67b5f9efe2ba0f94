//! Experiment configuration: a single JSON document that captures everything
//! a run needs, so that a manifest can reproduce it exactly.

use std::path::PathBuf;

use lysim_core::model::validate_model;
use lysim_core::{ModelSpec, NumericsSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The experiment families. The regime presets pin the hypothesis-relevant
/// model fields and reject configs that violate them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Moderate growth: per-cell load tail fractions versus the threshold.
    RegimeSubcritical,
    /// Strong growth: fraction of lineages whose path stayed below a
    /// threshold, versus time.
    RegimeSupercritical,
    /// Explosive growth: fraction of cells with finite load versus time,
    /// plus the single-lineage explosion probability.
    RegimeExplosive,
    /// No reservoir, negative net drift: loads die out.
    NoReservoirExtinction,
    /// No reservoir, strong growth: explosion still occurs.
    NoReservoirExplosive,
    /// No lysis, constant reservoir floor: loads come down from high
    /// initial values.
    ComingDown,
    /// Population-sum versus single-lineage consistency checks.
    ManyToOneSuite,
    /// Corridor-stopped martingale drift checks.
    MartingaleSuite,
    /// Grid evaluation of the classification functionals.
    CriteriaScan,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::RegimeSubcritical => "regime-subcritical",
            ExperimentKind::RegimeSupercritical => "regime-supercritical",
            ExperimentKind::RegimeExplosive => "regime-explosive",
            ExperimentKind::NoReservoirExtinction => "no-reservoir-extinction",
            ExperimentKind::NoReservoirExplosive => "no-reservoir-explosive",
            ExperimentKind::ComingDown => "coming-down",
            ExperimentKind::ManyToOneSuite => "many-to-one-suite",
            ExperimentKind::MartingaleSuite => "martingale-suite",
            ExperimentKind::CriteriaScan => "criteria-scan",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub numerics: NumericsSpec,
    pub experiment: ExperimentKind,
    /// Load thresholds for fraction statistics.
    #[serde(default)]
    pub k_list: Vec<f64>,
    /// Observation times.
    #[serde(default)]
    pub t_list: Vec<f64>,
    /// Default output directory; overridable on the command line.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config validation failed:\n{0}")]
    Invalid(String),
}

const PROBE_LOADS: [f64; 5] = [0.0, 1e-3, 1.0, 1e3, 1e9];

fn rate_active(f: &lysim_core::model::FunctionSpec) -> bool {
    PROBE_LOADS.iter().any(|&x| f.eval(x) != 0.0)
}

impl ExperimentConfig {
    /// Full validation: model structural checks, numerics sanity, and the
    /// experiment's pinned hypotheses.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut clauses: Vec<String> = Vec::new();
        let report = validate_model(&self.model);
        for failure in report.failures() {
            clauses.push(format!("model.{}: {}", failure.clause, failure.detail));
        }
        if let Err(e) = self.numerics.check() {
            clauses.push(format!("numerics: {e}"));
        }
        for t in &self.t_list {
            if !(*t >= 0.0) {
                clauses.push(format!("t-list: times must be >= 0, got {t}"));
            }
        }
        for k in &self.k_list {
            if !(*k >= 0.0) {
                clauses.push(format!("k-list: thresholds must be >= 0, got {k}"));
            }
        }

        match self.experiment {
            ExperimentKind::NoReservoirExtinction | ExperimentKind::NoReservoirExplosive => {
                if rate_active(&self.model.lambda) {
                    clauses.push(format!(
                        "experiment {}: pinned hypothesis requires a vanishing reservoir \
                         rate (lambda must be identically 0)",
                        self.experiment.name()
                    ));
                }
            }
            ExperimentKind::ComingDown => {
                if rate_active(&self.model.r) {
                    clauses.push(format!(
                        "experiment {}: pinned hypothesis requires a vanishing lysis \
                         rate (r must be identically 0)",
                        self.experiment.name()
                    ));
                }
            }
            _ => {}
        }

        if clauses.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(clauses.join("\n")))
        }
    }

    pub fn thresholds(&self) -> Vec<f64> {
        if self.k_list.is_empty() {
            vec![0.1, 1.0, 10.0, 100.0]
        } else {
            self.k_list.clone()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        if self.t_list.is_empty() {
            vec![2.0, 4.0, 8.0]
        } else {
            self.t_list.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lysim_core::model::{
        DoseRole, FragmentationLaw, FunctionSpec, JumpSizeLaw, Role,
    };

    fn valid_config(experiment: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            model: ModelSpec {
                g: FunctionSpec::linear(Role::GrowthG, 0.5),
                sigma2: FunctionSpec::constant(Role::DiffusionSigma2, 0.0),
                p: FunctionSpec::constant(Role::JumpRateP, 0.0),
                lambda: FunctionSpec::constant(Role::ReservoirRateLambda, 0.0),
                r: FunctionSpec::constant(Role::LysisRateR, 0.0),
                pi: JumpSizeLaw::point_mass(DoseRole::ParasiteJumpPi, 1.0),
                dose_reservoir: JumpSizeLaw::point_mass(DoseRole::ReservoirDose, 1.0),
                dose_lysis: JumpSizeLaw::point_mass(DoseRole::LysisDose, 1.0),
                kappa: FragmentationLaw::uniform01(),
                b: 1.0,
                d: 0.5,
                x0: 1.0,
            },
            numerics: NumericsSpec {
                dt: 1e-2,
                horizon: 2.0,
                x_explode: 1e12,
                max_cells: 10_000,
                replicates: 100,
                master_seed: 1,
                tol_fp: 1e-3,
                k_max_fp: 20,
                quad_tol: 1e-9,
            },
            experiment,
            k_list: vec![],
            t_list: vec![],
            output_dir: None,
        }
    }

    #[test]
    fn valid_config_passes() {
        valid_config(ExperimentKind::ManyToOneSuite).validate().unwrap();
    }

    #[test]
    fn coming_down_rejects_active_lysis() {
        let mut cfg = valid_config(ExperimentKind::ComingDown);
        cfg.model.r = FunctionSpec::constant(Role::LysisRateR, 0.3);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("coming-down"), "{err}");
        assert!(err.contains("lysis"), "{err}");
    }

    #[test]
    fn no_reservoir_rejects_active_lambda() {
        let mut cfg = valid_config(ExperimentKind::NoReservoirExtinction);
        cfg.model.lambda = FunctionSpec::linear(Role::ReservoirRateLambda, 0.2);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("reservoir rate"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut value = serde_json::to_value(valid_config(ExperimentKind::CriteriaScan)).unwrap();
        value
            .as_object_mut()
            .unwrap()
            .insert("surprise".into(), serde_json::json!(1));
        let parsed: Result<ExperimentConfig, _> = serde_json::from_value(value);
        assert!(parsed.is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = valid_config(ExperimentKind::MartingaleSuite);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
