//! Experiment configuration file.
//!
//! TOML with six optional tables; anything omitted takes its default and
//! unknown keys are rejected. Model-dependent defaults (`n`, variances,
//! observed components) are filled in by [`ExperimentConfig::resolved`].
//!
//! ```toml
//! [model]
//! kind = "lorenz63"        # or "lorenz96"
//! dt = 0.025
//! rk2 = "heun"             # or "midpoint"; Lorenz-63 only
//! params = { sigma = 10.0, rho = 28.0, beta = 2.6666666666666665 }
//!
//! [window]
//! t_a = 1.0
//!
//! [noise]
//! var_b = 25.0
//! var_o = 1.0
//!
//! [obs]
//! layout = "Nobs1"         # none, Nobs1, Nobs2, Nobs3, Nobs4
//! components = [0, 2]
//!
//! [ensemble]
//! n_r = 100
//! base_seed = 20210601
//! workers = 0              # 0 = all cores
//! reference = "fixed"      # or "per_realization"
//!
//! [solvers]
//! methods = ["GN", "LS", "REG"]
//! tau_e = 8
//! tau_s = 1e-5
//! tau_g = 1e-5
//! stop_mode = "relfunc"    # or "gradnorm"
//! ls = { alpha0 = 1.0, beta = 0.1, tau = 0.5, max_backtracks = 60 }
//! reg = { gamma0 = 1.0, eta1 = 0.1, eta2 = 0.9, decrease = 0.5, increase = 2.0 }
//!
//! [output]
//! directory = "out"
//! prefix = "run"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::models::{ModelSpec, Rk2Variant, DEFAULT_DT};
use crate::solvers::{LineSearchOptions, Method, RegularisationOptions, SolverOptions, StopMode};
use crate::twin::{ObsLayout, ReferenceMode, TwinConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    #[default]
    Lorenz63,
    Lorenz96,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forcing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub dt: f64,
    pub rk2: Rk2Variant,
    pub params: ModelParams,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { kind: ModelName::Lorenz63, n: None, dt: DEFAULT_DT, rk2: Rk2Variant::Heun, params: ModelParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSection {
    pub t_a: f64,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self { t_a: 1.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var_o: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObsSection {
    pub layout: ObsLayout,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub n_r: usize,
    pub base_seed: u64,
    pub workers: usize,
    pub reference: ReferenceMode,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self { n_r: 100, base_seed: DEFAULT_SEED, workers: 0, reference: ReferenceMode::Fixed }
    }
}

pub const DEFAULT_SEED: u64 = 20_210_601;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolversSection {
    pub methods: Vec<Method>,
    pub tau_e: usize,
    pub tau_s: f64,
    pub tau_g: f64,
    pub stop_mode: StopMode,
    pub ls: LineSearchOptions,
    pub reg: RegularisationOptions,
}

impl Default for SolversSection {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            methods: Method::ALL.to_vec(),
            tau_e: o.tau_e,
            tau_s: o.tau_s,
            tau_g: o.tau_g,
            stop_mode: o.stop_mode,
            ls: o.ls,
            reg: o.reg,
        }
    }
}

impl SolversSection {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tau_e: self.tau_e,
            tau_s: self.tau_s,
            tau_g: self.tau_g,
            stop_mode: self.stop_mode,
            ls: self.ls,
            reg: self.reg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: String,
    pub prefix: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { directory: "out".into(), prefix: "run".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub window: WindowSection,
    pub noise: NoiseSection,
    pub obs: ObsSection,
    pub ensemble: EnsembleSection,
    pub solvers: SolversSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a TOML config, or the `config` member of a run's metadata JSON
    /// when the path ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            super::io::RunMetadata::from_json(&text)
                .map(|m| m.config)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        parsed.resolved()?;
        Ok(parsed)
    }

    /// Copy with every model-dependent default made explicit; validates.
    pub fn resolved(&self) -> Result<Self, CliError> {
        let mut out = self.clone();
        let p = &self.model.params;
        let bad = |m: String| Err(CliError::Config(m));
        match self.model.kind {
            ModelName::Lorenz63 => {
                if p.forcing.is_some() {
                    return bad("params.forcing applies to lorenz96 only".into());
                }
                if self.model.n.is_some_and(|n| n != 3) {
                    return bad(format!("lorenz63 has n = 3, got {}", self.model.n.unwrap_or(0)));
                }
                out.model.n = Some(3);
                out.model.params = ModelParams {
                    sigma: Some(p.sigma.unwrap_or(10.0)),
                    rho: Some(p.rho.unwrap_or(28.0)),
                    beta: Some(p.beta.unwrap_or(8.0 / 3.0)),
                    forcing: None,
                };
                out.noise.var_b.get_or_insert(25.0);
                out.noise.var_o.get_or_insert(1.0);
            }
            ModelName::Lorenz96 => {
                if p.sigma.is_some() || p.rho.is_some() || p.beta.is_some() {
                    return bad("params.sigma, rho and beta apply to lorenz63 only".into());
                }
                out.model.n.get_or_insert(40);
                out.model.params = ModelParams { forcing: Some(p.forcing.unwrap_or(8.0)), ..ModelParams::default() };
                out.noise.var_b.get_or_insert(6.25);
                out.noise.var_o.get_or_insert(0.25);
            }
        }
        let spec = out.model_spec()?;
        out.obs.components.get_or_insert_with(|| TwinConfig::default_components(&spec));
        out.twin_config_unchecked(spec).validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(out)
    }

    fn model_spec(&self) -> Result<ModelSpec, CliError> {
        let p = &self.model.params;
        let spec = match self.model.kind {
            ModelName::Lorenz63 => ModelSpec::lorenz63_with(
                p.sigma.unwrap_or(10.0),
                p.rho.unwrap_or(28.0),
                p.beta.unwrap_or(8.0 / 3.0),
                self.model.rk2,
                self.model.dt,
            ),
            ModelName::Lorenz96 => {
                ModelSpec::lorenz96_with(self.model.n.unwrap_or(40), p.forcing.unwrap_or(8.0), self.model.dt)
            }
        };
        spec.map_err(|e| CliError::Config(e.to_string()))
    }

    fn twin_config_unchecked(&self, spec: ModelSpec) -> TwinConfig {
        TwinConfig {
            components: self.obs.components.clone().unwrap_or_else(|| TwinConfig::default_components(&spec)),
            spec,
            t_a: self.window.t_a,
            var_b: self.noise.var_b.unwrap_or(f64::NAN),
            var_o: self.noise.var_o.unwrap_or(f64::NAN),
            layout: self.obs.layout,
            n_r: self.ensemble.n_r,
            base_seed: self.ensemble.base_seed,
            reference: self.ensemble.reference,
            methods: self.solvers.methods.clone(),
            solver: self.solvers.options(),
            workers: self.ensemble.workers,
        }
    }

    /// The twin-experiment configuration this file describes.
    pub fn twin_config(&self) -> Result<TwinConfig, CliError> {
        let resolved = self.resolved()?;
        let spec = resolved.model_spec()?;
        Ok(resolved.twin_config_unchecked(spec))
    }
}
