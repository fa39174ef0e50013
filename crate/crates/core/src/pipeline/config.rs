use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::case_model::NetworkCase;
use crate::gpe::{BasisSpec, KernelFamily};
use crate::powerflow::BusInjections;
use crate::uncertainty::{Marginal, VineSpec};

use super::PipelineError;

/// Where an input acts: a bus id, or the keyword `"load-factor"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputTarget {
    Bus(u32),
    Keyword(String),
}

/// How a bus-attached input enters the case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputRole {
    /// MW injected at the bus (unity power factor), e.g. wind output.
    #[default]
    Injection,
    /// Multiplier on that bus's own load.
    LoadScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub name: String,
    pub bus: InputTarget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<InputRole>,
    pub marginal: Marginal,
    /// Upper limit applied to injections (MW).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap_mw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
}

/// Resolved meaning of one input column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputKind {
    /// Multiplier on every bus load.
    LoadFactor,
    LoadScale { bus: u32 },
    Injection { bus: u32, cap_mw: Option<f64> },
}

impl InputSpec {
    pub fn kind(&self) -> Result<InputKind, PipelineError> {
        match (&self.bus, self.role) {
            (InputTarget::Keyword(k), None) if k == "load-factor" => Ok(InputKind::LoadFactor),
            (InputTarget::Keyword(k), _) => Err(PipelineError::Config(format!(
                "input '{}': bus must be a bus id or \"load-factor\", got \"{k}\"",
                self.name
            ))),
            (InputTarget::Bus(b), None | Some(InputRole::Injection)) => {
                Ok(InputKind::Injection { bus: *b, cap_mw: self.cap_mw })
            }
            (InputTarget::Bus(b), Some(InputRole::LoadScale)) => Ok(InputKind::LoadScale { bus: *b }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthMode {
    /// Every load grows in proportion to its nominal value.
    #[default]
    System,
    /// Only the target bus load grows.
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GrowthSettings {
    #[serde(default)]
    pub mode: GrowthMode,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// One assessment scenario, read from a TOML or JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// MATPOWER case file, relative to the config file's directory.
    pub case_path: PathBuf,
    pub inputs: Vec<InputSpec>,
    /// Dependence between inputs; omitted means independent inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vine: Option<VineSpec>,
    #[serde(default)]
    pub growth: GrowthSettings,
    pub target_bus: u32,
    pub n_train: usize,
    pub n_mc: usize,
    pub basis: BasisSpec,
    pub kernel: KernelFamily,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

pub const MIN_MC_SAMPLES: usize = 100;

impl ScenarioConfig {
    /// Parses JSON when the extension is `.json`, TOML otherwise.
    pub fn from_str_with_format(text: &str, json: bool) -> Result<Self, PipelineError> {
        let cfg: ScenarioConfig = if json {
            serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?
        };
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut cfg = Self::from_str_with_format(&text, json)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolved_case_path(&self) -> PathBuf {
        if self.case_path.is_absolute() {
            self.case_path.clone()
        } else {
            self.base_dir.join(&self.case_path)
        }
    }

    pub fn marginals(&self) -> Vec<Marginal> {
        self.inputs.iter().map(|i| i.marginal).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.inputs.iter().map(|i| i.name.clone()).collect()
    }

    /// Checks that do not need the network case.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let p = self.inputs.len();
        if p == 0 {
            return bad("at least one input is required".into());
        }
        let mut names: Vec<&str> = self.inputs.iter().map(|i| i.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("input names must be unique".into());
        }
        let mut load_factors = 0;
        for input in &self.inputs {
            input.marginal.validate().map_err(|e| PipelineError::Config(format!("input '{}': {e}", input.name)))?;
            match input.kind()? {
                InputKind::LoadFactor => load_factors += 1,
                InputKind::Injection { cap_mw: Some(c), .. } if !(c >= 0.0) => {
                    return bad(format!("input '{}': cap_mw must be nonnegative", input.name));
                }
                _ => {}
            }
        }
        if load_factors > 1 {
            return bad("only one load-factor input is allowed".into());
        }
        match &self.vine {
            Some(v) if v.dim() != p => {
                return bad(format!("vine has dimension {} but there are {p} inputs", v.dim()));
            }
            None if p > 1 => log::info!("no vine given; inputs are sampled independently"),
            _ => {}
        }
        let width = self.basis.width(p);
        if self.n_train < width + 1 {
            return bad(format!("n_train = {} is too small for a basis of width {width}; need at least {}", self.n_train, width + 1));
        }
        if self.n_mc < MIN_MC_SAMPLES {
            return bad(format!("n_mc = {} is below the minimum of {MIN_MC_SAMPLES}", self.n_mc));
        }
        if let KernelFamily::RationalQuadratic { alpha } = self.kernel {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return bad(format!("rational quadratic alpha must be positive, got {alpha}"));
            }
        }
        Ok(())
    }

    /// Checks that every referenced bus exists in `case`.
    pub fn validate_against(&self, case: &NetworkCase) -> Result<(), PipelineError> {
        let known = |b: u32| case.bus_index(b).is_some();
        if !known(self.target_bus) {
            return Err(PipelineError::Config(format!("target bus {} is not in the case", self.target_bus)));
        }
        for input in &self.inputs {
            if let InputKind::Injection { bus, .. } | InputKind::LoadScale { bus } = input.kind()? {
                if !known(bus) {
                    return Err(PipelineError::Config(format!("input '{}' refers to unknown bus {bus}", input.name)));
                }
            }
        }
        Ok(())
    }
}

/// Per-bus scheduled injections for one physical input row. Load scales are
/// applied first, then injections are subtracted from the net bus load.
pub fn apply_inputs(case: &NetworkCase, x: &[f64], config: &ScenarioConfig) -> Result<BusInjections, PipelineError> {
    if x.len() != config.inputs.len() {
        return Err(PipelineError::Config(format!(
            "input row has {} values, scenario has {} inputs",
            x.len(),
            config.inputs.len()
        )));
    }
    let mut inj = BusInjections::from_case(case);
    let base = case.base_mva();
    let index = |bus: u32| case.bus_index(bus).ok_or_else(|| PipelineError::Config(format!("unknown bus {bus}")));
    for (input, &v) in config.inputs.iter().zip(x) {
        match input.kind()? {
            InputKind::LoadFactor => {
                inj.p_load.iter_mut().for_each(|p| *p *= v);
                inj.q_load.iter_mut().for_each(|q| *q *= v);
            }
            InputKind::LoadScale { bus } => {
                let i = index(bus)?;
                inj.p_load[i] *= v;
                inj.q_load[i] *= v;
            }
            InputKind::Injection { .. } => {}
        }
    }
    for (input, &v) in config.inputs.iter().zip(x) {
        if let InputKind::Injection { bus, cap_mw } = input.kind()? {
            let mw = cap_mw.map_or(v, |c| v.min(c));
            inj.p_load[index(bus)?] -= mw / base;
        }
    }
    Ok(inj)
}
