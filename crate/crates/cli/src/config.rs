//! Run configuration: scenario and solver selection, parameter files and
//! `key=value` overrides, resolved into a hashable form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use trigger_ocp::homotopy::HomotopyParams;
use trigger_ocp::minlp::BnbOptions;
use trigger_ocp::scenarios::docking::DockingParams;
use trigger_ocp::scenarios::pdg::{default_pyramids, LanderParams};
use trigger_ocp::scenarios::ugv::{default_regions, UgvParams};
use trigger_ocp::scenarios::{load_polytopes, Formulation, Polytope};
use trigger_ocp::IpmOptions;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("solver {solver:?} cannot run formulation {formulation:?}")]
    Incompatible { solver: SolverKind, formulation: Formulation },
    #[error("override `{0}` is not of the form key=value")]
    BadOverride(String),
    #[error("reading {path}: {msg}")]
    File { path: PathBuf, msg: String },
    #[error("parameters: {0}")]
    Params(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Ugv,
    Pdg,
    Docking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Bnb,
    Homotopy,
    Enumerate,
}

impl SolverKind {
    pub fn accepts(self, f: Formulation) -> bool {
        match self {
            SolverKind::Bnb | SolverKind::Enumerate => f == Formulation::Minlp,
            SolverKind::Homotopy => f == Formulation::Mpvc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Override {
    pub key: String,
    pub value: String,
}

impl std::str::FromStr for Override {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => Ok(Override {
                key: k.trim().to_string(),
                value: v.trim().to_string(),
            }),
            _ => Err(ConfigError::BadOverride(s.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub formulation: Formulation,
    pub solver: SolverKind,
    pub params: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub overrides: Vec<Override>,
    pub trace: bool,
}

/// Solver knobs reachable through `solver.<key>=<value>` overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Branch-and-bound node limit; 0 picks the scenario default.
    pub node_limit: usize,
    pub enumerate_cap: usize,
    pub heuristic_interval: usize,
    pub tol: f64,
    pub constr_viol_tol: f64,
    pub max_iter: usize,
    pub mu_init: f64,
    pub tau0: f64,
    pub eps0: f64,
    /// Falls back to the scenario's `tau_min`.
    pub tau_min: Option<f64>,
    pub kappa0: f64,
    pub kappa1: f64,
    pub max_outer: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let ipm = IpmOptions::default();
        let hp = HomotopyParams::default();
        let bnb = BnbOptions::default();
        SolverSettings {
            node_limit: 0,
            enumerate_cap: 16,
            heuristic_interval: bnb.heuristic_interval,
            tol: ipm.tol,
            constr_viol_tol: ipm.constr_viol_tol,
            max_iter: ipm.max_iter,
            mu_init: ipm.mu_init,
            tau0: hp.tau0,
            eps0: hp.eps0,
            tau_min: None,
            kappa0: hp.kappa0,
            kappa1: hp.kappa1,
            max_outer: hp.max_outer,
        }
    }
}

impl SolverSettings {
    pub fn ipm(&self) -> IpmOptions {
        IpmOptions {
            tol: self.tol,
            constr_viol_tol: self.constr_viol_tol,
            max_iter: self.max_iter,
            mu_init: self.mu_init,
            ..IpmOptions::default()
        }
    }

    pub fn bnb(&self) -> BnbOptions {
        BnbOptions {
            ipm: self.ipm(),
            node_limit: self.node_limit,
            heuristic_interval: self.heuristic_interval,
            ..BnbOptions::default()
        }
    }

    pub fn homotopy(&self, scenario_tau_min: f64) -> HomotopyParams {
        HomotopyParams {
            tau0: self.tau0,
            eps0: self.eps0,
            tau_min: self.tau_min.unwrap_or(scenario_tau_min),
            kappa0: self.kappa0,
            kappa1: self.kappa1,
            max_outer: self.max_outer,
            ..HomotopyParams::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", content = "values", rename_all = "snake_case")]
pub enum ScenarioParams {
    Ugv(UgvParams),
    Pdg(LanderParams),
    Docking(DockingParams),
}

impl ScenarioParams {
    pub fn scenario(&self) -> Scenario {
        match self {
            ScenarioParams::Ugv(_) => Scenario::Ugv,
            ScenarioParams::Pdg(_) => Scenario::Pdg,
            ScenarioParams::Docking(_) => Scenario::Docking,
        }
    }

    pub fn tau_min(&self) -> f64 {
        match self {
            ScenarioParams::Ugv(p) => p.tau_min,
            ScenarioParams::Pdg(p) => p.tau_min,
            ScenarioParams::Docking(p) => p.tau_min,
        }
    }

    fn default_node_limit(&self) -> usize {
        match self {
            ScenarioParams::Ugv(_) => 300,
            ScenarioParams::Pdg(_) => 100,
            ScenarioParams::Docking(_) => 50,
        }
    }
}

/// Everything a run depends on, after files and overrides are applied.
/// Serialized into the solution file so a run can be rebuilt without the
/// original inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub formulation: Formulation,
    pub solver: SolverKind,
    pub seed: u64,
    pub params: ScenarioParams,
    pub regions: Vec<Polytope>,
    pub settings: SolverSettings,
}

impl ResolvedConfig {
    pub fn scenario(&self) -> Scenario {
        self.params.scenario()
    }

    /// SHA-256 of the canonical JSON form (object keys sorted).
    pub fn hash(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_id(&self) -> String {
        let f = match self.formulation {
            Formulation::Minlp => "minlp",
            Formulation::Mpvc => "mpvc",
        };
        let s = serde_json::to_value(self.scenario()).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        let k = serde_json::to_value(self.solver).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        format!("{s}-{f}-{k}-{}", &self.hash()[..12])
    }
}

fn read_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::File {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Parameter file as a JSON value; `.json` files are JSON, anything else TOML.
fn load_params_value(path: &Path) -> Result<Value, ConfigError> {
    let text = read_text(path)?;
    let file_err = |msg: String| ConfigError::File {
        path: path.to_path_buf(),
        msg,
    };
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))
    } else {
        let t: toml::Value = toml::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        serde_json::to_value(t).map_err(|e| file_err(e.to_string()))
    }
}

/// Numbers, booleans and arrays parse as JSON; anything else is a string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| ConfigError::Params(format!("`{key}`: `{part}` is not inside a table")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Merge `overlay` into `base`, recursing into tables.
fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn typed<T: for<'de> Deserialize<'de>>(v: Value) -> Result<T, ConfigError> {
    serde_json::from_value(v).map_err(|e| ConfigError::Params(e.to_string()))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.solver.accepts(self.formulation) {
            return Err(ConfigError::Incompatible {
                solver: self.solver,
                formulation: self.formulation,
            });
        }
        if self.scenario == Scenario::Docking && self.regions.is_some() {
            return Err(ConfigError::Other("the docking scenario takes no region file".into()));
        }
        Ok(())
    }

    pub fn resolve(&self) -> Result<ResolvedConfig, ConfigError> {
        self.validate()?;
        let mut params = match self.scenario {
            Scenario::Ugv => serde_json::to_value(UgvParams::default()),
            Scenario::Pdg => serde_json::to_value(LanderParams::default()),
            Scenario::Docking => serde_json::to_value(DockingParams::default()),
        }
        .expect("defaults serialize");
        if let Some(path) = &self.params {
            merge(&mut params, load_params_value(path)?);
        }
        let mut settings = serde_json::to_value(SolverSettings::default()).expect("defaults serialize");
        for o in &self.overrides {
            let v = parse_value(&o.value);
            match o.key.strip_prefix("solver.") {
                Some(k) => set_path(&mut settings, k, v)?,
                None => {
                    let key = if o.key == "N" { "n" } else { o.key.as_str() };
                    set_path(&mut params, key, v)?
                }
            }
        }
        let params = match self.scenario {
            Scenario::Ugv => ScenarioParams::Ugv(typed(params)?),
            Scenario::Pdg => ScenarioParams::Pdg(typed(params)?),
            Scenario::Docking => ScenarioParams::Docking(typed(params)?),
        };
        let mut settings: SolverSettings = typed(settings)?;
        if settings.node_limit == 0 {
            settings.node_limit = params.default_node_limit();
        }
        let regions = match (&self.regions, self.scenario) {
            (Some(path), _) => load_polytopes(path).map_err(|e| ConfigError::File {
                path: path.clone(),
                msg: e.to_string(),
            })?,
            (None, Scenario::Ugv) => default_regions(),
            (None, Scenario::Pdg) => default_pyramids(),
            (None, Scenario::Docking) => Vec::new(),
        };
        Ok(ResolvedConfig {
            formulation: self.formulation,
            solver: self.solver,
            seed: self.seed,
            params,
            regions,
            settings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(solver: SolverKind, formulation: Formulation) -> RunConfig {
        RunConfig {
            scenario: Scenario::Ugv,
            formulation,
            solver,
            params: None,
            regions: None,
            out: PathBuf::from("unused"),
            seed: 0,
            overrides: vec![],
            trace: false,
        }
    }

    #[test]
    fn compatibility() {
        assert!(base(SolverKind::Bnb, Formulation::Minlp).validate().is_ok());
        assert!(base(SolverKind::Enumerate, Formulation::Minlp).validate().is_ok());
        assert!(base(SolverKind::Homotopy, Formulation::Mpvc).validate().is_ok());
        assert!(base(SolverKind::Bnb, Formulation::Mpvc).validate().is_err());
        assert!(base(SolverKind::Homotopy, Formulation::Minlp).validate().is_err());
    }

    #[test]
    fn overrides_reach_params_and_settings() {
        let mut c = base(SolverKind::Homotopy, Formulation::Mpvc);
        c.overrides = vec!["N=12".parse().unwrap(), "w=-10".parse().unwrap(), "solver.tau_min=1e-3".parse().unwrap()];
        let r = c.resolve().unwrap();
        match &r.params {
            ScenarioParams::Ugv(p) => {
                assert_eq!(p.n, 12);
                assert_eq!(p.w, -10.0);
            }
            _ => panic!("wrong scenario"),
        }
        assert_eq!(r.settings.homotopy(1e-4).tau_min, 1e-3);
        assert_eq!(r.settings.node_limit, 300);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = base(SolverKind::Homotopy, Formulation::Mpvc);
        c.overrides = vec!["no_such_key=1".parse().unwrap()];
        assert!(matches!(c.resolve(), Err(ConfigError::Params(_))));
        c.overrides = vec!["solver.bogus=1".parse().unwrap()];
        assert!(matches!(c.resolve(), Err(ConfigError::Params(_))));
        assert!("novalue".parse::<Override>().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = base(SolverKind::Homotopy, Formulation::Mpvc).resolve().unwrap();
        let mut c = base(SolverKind::Homotopy, Formulation::Mpvc);
        assert_eq!(a.hash(), c.resolve().unwrap().hash());
        c.overrides = vec!["t_d=3.9".parse().unwrap()];
        assert_ne!(a.hash(), c.resolve().unwrap().hash());
        assert!(a.run_id().starts_with("ugv-mpvc-homotopy-"));
    }
}
