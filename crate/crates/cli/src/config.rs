use std::path::{Path, PathBuf};

use bsmp_core::bsde::{BasisKind, RegressionBasis, SolverOptions};
use bsmp_core::diagnostics::{validate_theta_grid, DEFAULT_THETA_GRID};
use bsmp_core::registry::{self, RegisteredModel};
use bsmp_core::smp::OptimizerOptions;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub key: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisChoice {
    Polynomial,
    PiecewiseConstant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    #[serde(default = "default_basis_kind")]
    pub kind: BasisChoice,
    /// Total degree for polynomials, cells per axis for indicators.
    #[serde(default = "default_degree")]
    pub degree_or_cells: usize,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            kind: default_basis_kind(),
            degree_or_cells: default_degree(),
            ridge: default_ridge(),
        }
    }
}

impl BasisConfig {
    pub fn to_basis(&self) -> RegressionBasis {
        let kind = match self.kind {
            BasisChoice::Polynomial => BasisKind::Polynomial {
                degree: self.degree_or_cells,
            },
            BasisChoice::PiecewiseConstant => BasisKind::PiecewiseConstant {
                cells: self.degree_or_cells,
            },
        };
        RegressionBasis {
            kind,
            ridge: self.ridge,
        }
    }
}

/// How a control process is built on an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpec {
    /// The same value on every path and step.
    Constant { value: Vec<f64> },
    /// The registered model's closed-form optimum.
    Oracle,
    /// `amplitude * sin(frequency * W_t)` per component, projected onto the set.
    SinW { amplitude: f64, frequency: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_zero_control")]
    pub u0: ControlSpec,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_size: default_step_size(),
            max_iters: default_max_iters(),
            tolerance: default_tolerance(),
            u0: default_zero_control(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Seed of the fresh ensemble used to validate optimized controls;
    /// `seed + 1` when absent.
    #[serde(default)]
    pub validation_seed: Option<u64>,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default = "default_picard")]
    pub picard_iters: usize,
    #[serde(default)]
    pub winsor_cap: Option<f64>,
    /// Control for `solve`, `cost` and the base point of `verify`.
    #[serde(default = "default_zero_control")]
    pub control: ControlSpec,
    /// Perturbation target `v` for the sensitivity and duality diagnostics.
    #[serde(default = "default_probe_control")]
    pub probe_control: ControlSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_theta_grid")]
    pub theta_grid: Vec<f64>,
    #[serde(default = "default_stationarity_tolerance")]
    pub stationarity_tolerance: f64,
    /// Random constant probes for the variational inequality.
    #[serde(default = "default_probe_count")]
    pub probe_count: usize,
    /// Random points for the assumption and derivative checks.
    #[serde(default = "default_assumption_probes")]
    pub assumption_probes: usize,
    /// Paths written to the trajectory and adjoint CSVs.
    #[serde(default = "default_dump_paths")]
    pub dump_paths: usize,
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
}

fn default_basis_kind() -> BasisChoice {
    BasisChoice::Polynomial
}
fn default_degree() -> usize {
    3
}
fn default_ridge() -> f64 {
    1e-8
}
fn default_step_size() -> f64 {
    0.5
}
fn default_max_iters() -> usize {
    50
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_zero_control() -> ControlSpec {
    ControlSpec::Constant { value: vec![0.0] }
}
fn default_probe_control() -> ControlSpec {
    ControlSpec::Constant { value: vec![1.0] }
}
fn default_horizon() -> f64 {
    1.0
}
fn default_steps() -> usize {
    50
}
fn default_paths() -> usize {
    10_000
}
fn default_seed() -> u64 {
    7
}
fn default_picard() -> usize {
    2
}
fn default_theta_grid() -> Vec<f64> {
    DEFAULT_THETA_GRID.to_vec()
}
fn default_stationarity_tolerance() -> f64 {
    1e-3
}
fn default_probe_count() -> usize {
    5
}
fn default_assumption_probes() -> usize {
    200
}
fn default_dump_paths() -> usize {
    20
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("bsmp-out")
}

/// Command-line values that replace file values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply(overrides);
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(seed) = overrides.seed {
            self.seed = seed;
        }
        if let Some(out) = &overrides.out {
            self.output_dir = out.clone();
        }
    }

    /// Validates and fills every implicit default, including the model's
    /// parameter map.
    pub fn resolve(&mut self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Config(msg.to_string()));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be finite and > 0");
        }
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if self.paths < 2 {
            return bad("paths must be >= 2");
        }
        if self.antithetic && !self.paths.is_multiple_of(2) {
            return bad("antithetic sampling needs an even number of paths");
        }
        if let Some(cap) = self.winsor_cap {
            if !(cap > 0.0) {
                return bad("winsor_cap must be > 0");
            }
        }
        self.basis
            .to_basis()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        validate_theta_grid(&self.theta_grid).map_err(|e| CliError::Config(e.to_string()))?;
        let opt = &self.optimizer;
        if !(opt.step_size >= 0.0 && opt.step_size.is_finite()) {
            return bad("optimizer.step_size must be finite and >= 0");
        }
        if !(opt.tolerance >= 0.0) {
            return bad("optimizer.tolerance must be >= 0");
        }
        if !(self.stationarity_tolerance > 0.0) {
            return bad("stationarity_tolerance must be > 0");
        }
        if self.probe_count == 0 || self.assumption_probes == 0 {
            return bad("probe counts must be >= 1");
        }
        for spec in [&self.control, &self.probe_control, &self.optimizer.u0] {
            if let ControlSpec::SinW {
                amplitude,
                frequency,
            } = spec
            {
                if !(amplitude.is_finite() && frequency.is_finite()) {
                    return bad("sin_w parameters must be finite");
                }
            }
        }
        self.validation_seed
            .get_or_insert(self.seed.wrapping_add(1));
        let model = self.build_model()?;
        self.model.params = model.params;
        Ok(())
    }

    pub fn build_model(&self) -> Result<RegisteredModel, CliError> {
        registry::build(&self.model.key, &self.model.params, self.horizon).map_err(|e| match e {
            bsmp_core::Error::UnknownModel(k) => CliError::UnknownModel(format!(
                "{k:?} (known: {})",
                registry::keys().collect::<Vec<_>>().join(", ")
            )),
            other => CliError::Config(other.to_string()),
        })
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            basis: self.basis.to_basis(),
            picard_iters: self.picard_iters,
            winsor_cap: self.winsor_cap,
        }
    }

    pub fn optimizer_options(&self) -> OptimizerOptions {
        OptimizerOptions {
            step_size: self.optimizer.step_size,
            max_iters: self.optimizer.max_iters,
            tolerance: self.optimizer.tolerance,
            solver: self.solver_options(),
        }
    }

    pub fn validation_seed(&self) -> u64 {
        self.validation_seed.unwrap_or(self.seed.wrapping_add(1))
    }

    /// Pretty JSON of the resolved configuration; the output directory is
    /// left out so that relocated runs stay byte-identical.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// SHA-256 of [`Self::resolved_json`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.resolved_json().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> RunConfig {
        let mut c = RunConfig::parse(r#"{"model": {"key": "lq"}}"#).unwrap();
        c.resolve().unwrap();
        c
    }

    #[test]
    fn defaults_are_explicit_in_the_resolved_copy() {
        let c = minimal();
        let v: Value = serde_json::from_str(&c.resolved_json()).unwrap();
        assert_eq!(v["paths"], Value::from(10_000));
        assert_eq!(v["validation_seed"], Value::from(8));
        assert_eq!(v["model"]["params"]["kappa"], Value::from(0.5));
        assert_eq!(v["basis"]["kind"], Value::from("polynomial"));
        assert!(v.get("output_dir").is_none());
    }

    #[test]
    fn resolved_copy_round_trips_to_the_same_hash() {
        let c = minimal();
        let mut again = RunConfig::parse(&c.resolved_json()).unwrap();
        again.resolve().unwrap();
        assert_eq!(again.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn overrides_beat_file_values() {
        let mut c = RunConfig::parse(r#"{"model": {"key": "lq"}, "seed": 3}"#).unwrap();
        c.apply(&Overrides {
            seed: Some(11),
            out: Some("x".into()),
        });
        c.resolve().unwrap();
        assert_eq!(c.seed, 11);
        assert_eq!(c.validation_seed, Some(12));
        assert_eq!(c.output_dir, PathBuf::from("x"));
    }

    #[test]
    fn output_dir_does_not_change_the_hash() {
        let mut a = minimal();
        let h = a.hash();
        a.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), h);
    }

    #[test]
    fn invalid_documents_are_config_errors() {
        for text in [
            r#"{"model": {"key": "lq"}, "paths": 1}"#,
            r#"{"model": {"key": "lq"}, "theta_grid": [0.5, 1.5]}"#,
            r#"{"model": {"key": "lq"}, "pathz": 10}"#,
            r#"{"model": {"key": "lq", "params": {"gamma": 1}}}"#,
            r#"{"model": {"key": "lq"}, "control": {"kind": "spline"}}"#,
            r#"{"model": {"key": "lq"}, "antithetic": true, "paths": 11}"#,
            r#"{"horizon": 1.0}"#,
        ] {
            let res = RunConfig::parse(text).and_then(|mut c| c.resolve());
            assert!(matches!(res, Err(CliError::Config(_))), "{text}: {res:?}");
        }
    }

    #[test]
    fn unknown_model_has_its_own_kind() {
        let mut c = RunConfig::parse(r#"{"model": {"key": "nope"}}"#).unwrap();
        assert!(matches!(c.resolve(), Err(CliError::UnknownModel(_))));
    }
}
