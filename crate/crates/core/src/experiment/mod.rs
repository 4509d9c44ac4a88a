//! Config-driven experiment runner: each named experiment reproduces one
//! table at desk or paper scale and returns a [`ResultTable`].

mod runners;
pub mod table;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{FimError, Result};

pub use table::{format_g6, Cell, Format, Metadata, ResultTable, UNDEFINED};

/// The ten reproducible experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    #[serde(rename = "mixture_table_3_1")]
    MixtureTable31,
    #[serde(rename = "spn_table_3_2")]
    SpnTable32,
    #[serde(rename = "statespace_table_3_3")]
    StatespaceTable33,
    #[serde(rename = "statespace_table_3_4")]
    StatespaceTable34,
    #[serde(rename = "spsa_table_A2")]
    SpsaTableA2,
    #[serde(rename = "spsa_table_A3")]
    SpsaTableA3,
    #[serde(rename = "mcfim_table_B1")]
    McfimTableB1,
    #[serde(rename = "mcfim_table_B2")]
    McfimTableB2,
    #[serde(rename = "mcfim_table_B3")]
    McfimTableB3,
    #[serde(rename = "diagnostics_ch2")]
    DiagnosticsCh2,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 10] = [
        ExperimentName::MixtureTable31,
        ExperimentName::SpnTable32,
        ExperimentName::StatespaceTable33,
        ExperimentName::StatespaceTable34,
        ExperimentName::SpsaTableA2,
        ExperimentName::SpsaTableA3,
        ExperimentName::McfimTableB1,
        ExperimentName::McfimTableB2,
        ExperimentName::McfimTableB3,
        ExperimentName::DiagnosticsCh2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::MixtureTable31 => "mixture_table_3_1",
            ExperimentName::SpnTable32 => "spn_table_3_2",
            ExperimentName::StatespaceTable33 => "statespace_table_3_3",
            ExperimentName::StatespaceTable34 => "statespace_table_3_4",
            ExperimentName::SpsaTableA2 => "spsa_table_A2",
            ExperimentName::SpsaTableA3 => "spsa_table_A3",
            ExperimentName::McfimTableB1 => "mcfim_table_B1",
            ExperimentName::McfimTableB2 => "mcfim_table_B2",
            ExperimentName::McfimTableB3 => "mcfim_table_B3",
            ExperimentName::DiagnosticsCh2 => "diagnostics_ch2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| FimError::UnknownExperiment(s.to_string()))
    }

    pub fn paper_table(self) -> &'static str {
        match self {
            ExperimentName::MixtureTable31 => "Table 3.1",
            ExperimentName::SpnTable32 => "Table 3.2",
            ExperimentName::StatespaceTable33 => "Table 3.3",
            ExperimentName::StatespaceTable34 => "Table 3.4",
            ExperimentName::SpsaTableA2 => "Table A.2",
            ExperimentName::SpsaTableA3 => "Table A.3",
            ExperimentName::McfimTableB1 => "Table B.1",
            ExperimentName::McfimTableB2 => "Table B.2",
            ExperimentName::McfimTableB3 => "Table B.3",
            ExperimentName::DiagnosticsCh2 => "Chapter 2 diagnostics",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentName::MixtureTable31 => "two-component Gaussian mixture: observed vs expected information as MLE covariance",
            ExperimentName::SpnTable32 => "four-dimensional signal-plus-noise model with diagonal signal covariance",
            ExperimentName::StatespaceTable33 => "three-state linear state-space model, n = 100",
            ExperimentName::StatespaceTable34 => "three-state linear state-space model, n = 200",
            ExperimentName::SpsaTableA2 => "SPSA on a quadratic loss: Bernoulli vs segmented uniform perturbations",
            ExperimentName::SpsaTableA3 => "SPSA on a quartic loss: Bernoulli vs segmented uniform perturbations",
            ExperimentName::McfimTableB1 => "Monte Carlo FIM for signal-plus-noise: basic vs feedback",
            ExperimentName::McfimTableB2 => "Monte Carlo FIM with per-observation perturbations: alone vs with feedback",
            ExperimentName::McfimTableB3 => "Monte Carlo FIM for a free-scale Gaussian mixture: basic vs feedback",
            ExperimentName::DiagnosticsCh2 => "score cumulants, residual correlations and the MSE-gap check on the mixture",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Desk,
    Paper,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        }
    }
}

/// Value kinds accepted by overrides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OverrideKind {
    Count,
    Real,
    RealVector,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct OverrideSpec {
    pub key: &'static str,
    pub kind: OverrideKind,
    pub description: &'static str,
}

const fn spec(key: &'static str, kind: OverrideKind, description: &'static str) -> OverrideSpec {
    OverrideSpec { key, kind, description }
}

use OverrideKind::{Count, Real, RealVector};

const STUDY_KEYS: [OverrideSpec; 6] = [
    spec("reps", Count, "shorthand: reps_outer = reps, reps_target = 2·reps"),
    spec("reps_outer", Count, "replications for M_H, M_F"),
    spec("reps_target", Count, "replications for the n·cov(θ̂) target"),
    spec("n", Count, "sample size"),
    spec("theta", RealVector, "true parameter θ*"),
    spec("max_failure_fraction", Real, "largest tolerated fraction of failed replications"),
];

const SPSA_KEYS: [OverrideSpec; 8] = [
    spec("reps", Count, "paired replications for short runs"),
    spec("reps_long", Count, "paired replications for the k = 1000 row"),
    spec("iterations", RealVector, "iteration counts, one row each"),
    spec("a_su", Real, "gain a for segmented uniform"),
    spec("a_b", Real, "gain a for Bernoulli"),
    spec("c", Real, "gain c (both distributions)"),
    spec("sigma2", Real, "measurement noise variance"),
    spec("theta0", RealVector, "initial point"),
];

const MCFIM_KEYS: [OverrideSpec; 8] = [
    spec("reps", Count, "shorthand for runs"),
    spec("runs", Count, "independent benchmark repetitions"),
    spec("N", Count, "pseudo-datasets per estimate"),
    spec("M", Count, "Hessian estimates per pseudo-dataset"),
    spec("c", Real, "perturbation scale"),
    spec("n", Count, "observations per pseudo-dataset"),
    spec("q", Count, "observation dimension (signal-plus-noise)"),
    spec("theta", RealVector, "parameter at which F_n(θ) is estimated"),
];

const DIAG_KEYS: [OverrideSpec; 9] = [
    spec("reps", Count, "shorthand for score_draws"),
    spec("score_draws", Count, "datasets for Z_r, Y_st and A²"),
    spec("cumulant_reps", Count, "datasets for the cumulant estimates"),
    spec("reps_outer", Count, "replications for M_H, M_F in the gap check"),
    spec("reps_target", Count, "replications for the n·cov(θ̂) target in the gap check"),
    spec("a9_reps", Count, "replications per observation for the A9 variance"),
    spec("n", Count, "sample size"),
    spec("theta", RealVector, "true mixture parameter θ*"),
    spec("poisson_theta", Real, "Poisson mean for the exact-cancellation check"),
];

/// Published override schema for an experiment.
pub fn override_schema(name: ExperimentName) -> &'static [OverrideSpec] {
    match name {
        ExperimentName::MixtureTable31
        | ExperimentName::SpnTable32
        | ExperimentName::StatespaceTable33
        | ExperimentName::StatespaceTable34 => &STUDY_KEYS,
        ExperimentName::SpsaTableA2 | ExperimentName::SpsaTableA3 => &SPSA_KEYS,
        ExperimentName::McfimTableB1 | ExperimentName::McfimTableB2 | ExperimentName::McfimTableB3 => &MCFIM_KEYS,
        ExperimentName::DiagnosticsCh2 => &DIAG_KEYS,
    }
}

/// The complete schema as json: config fields plus per-experiment overrides.
pub fn schema_json() -> Value {
    let experiments: serde_json::Map<String, Value> = ExperimentName::ALL
        .iter()
        .map(|e| (e.as_str().to_string(), serde_json::to_value(override_schema(*e)).expect("schema serializes")))
        .collect();
    serde_json::json!({
        "config": {
            "experiment": "string, one of the experiment names",
            "scale": "\"desk\" (default) or \"paper\"",
            "seed": "unsigned 64-bit integer (default 1)",
            "overrides": "object, keys per experiment below"
        },
        "overrides": experiments,
    })
}

/// A parsed, validated experiment configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentName,
    pub scale: Scale,
    pub seed: u64,
    pub overrides: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: String,
    #[serde(default)]
    scale: Option<String>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    overrides: BTreeMap<String, Value>,
}

pub const DEFAULT_SEED: u64 = 1;

impl ExperimentConfig {
    pub fn new(experiment: ExperimentName) -> Self {
        ExperimentConfig {
            experiment,
            scale: Scale::Desk,
            seed: DEFAULT_SEED,
            overrides: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| FimError::Config(e.to_string()))?;
        let experiment = ExperimentName::parse(&raw.experiment)?;
        let scale = match raw.scale.as_deref() {
            None | Some("desk") => Scale::Desk,
            Some("paper") => Scale::Paper,
            Some(other) => return Err(FimError::Config(format!("scale must be desk or paper, got {other:?}"))),
        };
        let cfg = ExperimentConfig {
            experiment,
            scale,
            seed: raw.seed.unwrap_or(DEFAULT_SEED),
            overrides: raw.overrides,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets an override and re-validates.
    pub fn with_override(mut self, key: &str, value: Value) -> Result<Self> {
        self.overrides.insert(key.to_string(), value);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let schema = override_schema(self.experiment);
        for (key, value) in &self.overrides {
            let spec = schema.iter().find(|s| s.key == key).ok_or_else(|| FimError::InvalidOverride {
                key: key.clone(),
                reason: format!("not an override of {}", self.experiment.as_str()),
            })?;
            check_kind(key, spec.kind, value)?;
        }
        Ok(())
    }

    fn count(&self, key: &str) -> Option<usize> {
        self.overrides.get(key).and_then(Value::as_u64).map(|v| v as usize)
    }

    fn real(&self, key: &str) -> Option<f64> {
        self.overrides.get(key).and_then(Value::as_f64)
    }

    fn reals(&self, key: &str) -> Option<Vec<f64>> {
        self.overrides
            .get(key)
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_f64).collect())
    }
}

fn check_kind(key: &str, kind: OverrideKind, value: &Value) -> Result<()> {
    let bad = |reason: &str| {
        Err(FimError::InvalidOverride {
            key: key.to_string(),
            reason: reason.to_string(),
        })
    };
    match kind {
        OverrideKind::Count => match value.as_u64() {
            Some(v) if v >= 1 => Ok(()),
            _ => bad("expected a positive integer"),
        },
        OverrideKind::Real => match value.as_f64() {
            Some(v) if v.is_finite() => Ok(()),
            _ => bad("expected a finite number"),
        },
        OverrideKind::RealVector => match value.as_array() {
            Some(a) if !a.is_empty() && a.iter().all(|v| v.as_f64().is_some_and(f64::is_finite)) => Ok(()),
            _ => bad("expected a non-empty array of finite numbers"),
        },
    }
}

/// One-line descriptions of every experiment.
pub fn list_experiments() -> Vec<(&'static str, &'static str, &'static str)> {
    ExperimentName::ALL
        .iter()
        .map(|e| (e.as_str(), e.paper_table(), e.description()))
        .collect()
}

/// Rough single-core runtime of a paper-scale run, for the warning printed before it starts.
pub fn paper_scale_estimate(name: ExperimentName) -> &'static str {
    match name {
        ExperimentName::MixtureTable31 => "about 1 hour",
        ExperimentName::SpnTable32 => "about 20 hours",
        ExperimentName::StatespaceTable33 | ExperimentName::StatespaceTable34 => "about 20 minutes to 1 hour",
        ExperimentName::SpsaTableA2 | ExperimentName::SpsaTableA3 => "about 1 to 2 hours",
        ExperimentName::McfimTableB1 | ExperimentName::McfimTableB2 | ExperimentName::McfimTableB3 => "several hours",
        ExperimentName::DiagnosticsCh2 => "about 1 hour",
    }
}

/// Runs an experiment on the current rayon pool.
pub fn run(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    runners::dispatch(config)
}

/// Runs an experiment on a dedicated pool of `threads` workers. The output
/// does not depend on `threads`.
pub fn run_with_threads(config: &ExperimentConfig, threads: usize) -> Result<ResultTable> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| FimError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run(config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn names_round_trip_and_map_to_tables() {
        let list = list_experiments();
        assert_eq!(list.len(), 10);
        let mut tables: Vec<&str> = list.iter().map(|l| l.1).collect();
        tables.sort();
        tables.dedup();
        assert_eq!(tables.len(), 10);
        for e in ExperimentName::ALL {
            assert_eq!(ExperimentName::parse(e.as_str()).unwrap(), e);
            assert!(!e.description().is_empty());
        }
    }

    #[test]
    fn config_parsing() {
        let c = ExperimentConfig::from_json(r#"{"experiment": "spsa_table_A2", "seed": 7, "overrides": {"reps": 10}}"#).unwrap();
        assert_eq!(c.experiment, ExperimentName::SpsaTableA2);
        assert_eq!(c.seed, 7);
        assert_eq!(c.count("reps"), Some(10));
        assert!(matches!(ExperimentConfig::from_json(r#"{"experiment": "nope"}"#), Err(FimError::UnknownExperiment(_))));
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"experiment": "spsa_table_A2", "overrides": {"N": 3}}"#),
            Err(FimError::InvalidOverride { .. })
        ));
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"experiment": "spsa_table_A2", "overrides": {"reps": -1}}"#),
            Err(FimError::InvalidOverride { .. })
        ));
        assert!(matches!(ExperimentConfig::from_json("{"), Err(FimError::Config(_))));
        assert!(ExperimentConfig::new(ExperimentName::McfimTableB1).with_override("theta", json!([1, "x"])).is_err());
    }

    #[test]
    fn schema_lists_every_experiment() {
        let s = schema_json();
        for e in ExperimentName::ALL {
            assert!(s["overrides"][e.as_str()].is_array());
        }
    }
}
