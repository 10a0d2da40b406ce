use std::path::Path;

use serde::Deserialize;

use super::{ExperimentSpec, Method, SweepKind};
use crate::chanmodel::{dbm_to_watts, SystemConfig};
use crate::gmml::GmmlHyper;
use crate::{Error, Result};

/// TOML experiment description. Every section and key is optional; missing
/// values fall back to the reference scenario.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentFile {
    pub experiment: ExperimentSection,
    pub system: SystemSection,
    pub gmml: GmmlHyper,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: Option<SweepKind>,
    pub values: Option<Vec<f64>>,
    pub samples: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub seed: Option<u64>,
    pub upper_bound_restarts: Option<usize>,
    pub timing_reps: Option<usize>,
}

/// System parameters with powers in dBm.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub power_dbm: Option<f64>,
    pub noise_dbm: Option<f64>,
    pub weights: Option<Vec<f64>>,
    pub carrier_freq: Option<f64>,
    pub bs_pos: Option<[f64; 2]>,
    pub ris_pos: Option<[f64; 2]>,
    pub user_center: Option<[f64; 2]>,
    pub user_radius: Option<f64>,
    pub rician_h: Option<f64>,
    pub rician_g: Option<f64>,
    pub antenna_spacing: Option<f64>,
}

impl SystemSection {
    pub fn to_config(&self) -> SystemConfig {
        let base = SystemConfig::reference();
        let mut c = base.with_dims(self.m.unwrap_or(base.m), self.n.unwrap_or(base.n), self.k.unwrap_or(base.k));
        if let Some(p) = self.power_dbm {
            c.power = dbm_to_watts(p);
        }
        if let Some(p) = self.noise_dbm {
            c.noise_power = dbm_to_watts(p);
        }
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        set!(weights, carrier_freq, bs_pos, ris_pos, user_center, user_radius, rician_h, rician_g, antenna_spacing);
        c
    }
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("experiment file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Spec for `kind`, taking values from the file only when its kind
    /// matches (or is absent).
    pub fn spec(&self, kind: SweepKind, default_values: Vec<f64>) -> ExperimentSpec {
        let e = &self.experiment;
        let mut s = ExperimentSpec::new(kind, default_values);
        if e.kind.is_none() || e.kind == Some(kind) {
            if let Some(v) = &e.values {
                s.values = v.clone();
            }
        }
        if let Some(n) = e.samples {
            s.samples = n;
        }
        if let Some(m) = &e.methods {
            s.methods = m.clone();
        }
        if let Some(seed) = e.seed {
            s.seed = seed;
        }
        if let Some(r) = e.upper_bound_restarts {
            s.upper_bound_restarts = r;
        }
        if let Some(r) = e.timing_reps {
            s.timing_reps = r;
        }
        s.base = self.system.to_config();
        s.hyper = self.gmml.clone();
        s
    }
}
