//! Pipeline configuration: one struct holding every tunable, a key=value file format and a stable hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::avlrepair::RepairParams;
use crate::chains::ChainParams;
use crate::choice::ChoiceParams;
use crate::genesis::CityConfig;
use crate::journeys::JourneyParams;
use crate::optimize::{MetricParams, Objective, PsoParams};
use crate::timesync::SyncParams;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub loss_rate: f64,
    /// Inject a clock offset on every vehicle-day.
    pub offsets: bool,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        CorruptionConfig {
            loss_rate: 0.037,
            offsets: true,
            seed: 11,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignMode {
    #[default]
    None,
    Redistribute,
    Optimize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignConfig {
    pub mode: DesignMode,
    /// Base route of the design; empty picks the first route of the network.
    pub route: String,
    /// JSON file with the new route for `redistribute`; empty derives an express variant of `route`.
    pub new_route: String,
    pub objective: Objective,
    pub ridership_floor: f64,
    pub min_rt: f64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            mode: DesignMode::None,
            route: String::new(),
            new_route: String::new(),
            objective: Objective::Ps,
            ridership_floor: 50.0,
            min_rt: 0.75,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub city: CityConfig,
    pub corruption: CorruptionConfig,
    pub sync: SyncParams,
    pub repair: RepairParams,
    pub journeys: JourneyParams,
    pub chains: ChainParams,
    pub choice: ChoiceParams,
    pub metrics: MetricParams,
    pub pso: PsoParams,
    pub design: DesignConfig,
    /// Worker cap; 0 uses every core. Not part of the hash.
    pub threads: usize,
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg.to_owned()))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.city.validate()?;
        check((0.0..1.0).contains(&self.corruption.loss_rate), "corruption.loss_rate must lie in [0,1)")?;
        let s = &self.sync;
        check(s.epsilon > 0, "sync.epsilon must be positive")?;
        check(s.pulse_width > 0, "sync.pulse_width must be positive")?;
        check(s.resample >= 1, "sync.resample must be at least 1")?;
        check(s.tau_max > 0, "sync.tau_max must be positive")?;
        check(s.eta > 0.0 && s.eta <= 1.0, "sync.eta must lie in (0,1]")?;
        check(s.board_window >= 0, "sync.board_window must be non-negative")?;
        check(self.repair.fit.min_support >= 1, "repair.fit.min_support must be at least 1")?;
        check(self.repair.fit.delta_t > 0, "repair.fit.delta_t must be positive")?;
        check(self.repair.epsilon > 0, "repair.epsilon must be positive")?;
        let j = &self.journeys;
        check(j.walk_radius_m > 0.0, "journeys.walk_radius_m must be positive")?;
        check(
            j.transfer_downtown_m > 0.0 && j.transfer_suburb_m > 0.0,
            "journeys transfer radii must be positive",
        )?;
        check((0.0..=1.0).contains(&j.similar_eps), "journeys.similar_eps must lie in [0,1]")?;
        let c = &self.chains;
        check(c.link_m > 0.0 && c.closure_m > 0.0, "chain distances must be positive")?;
        check((0.0..1.0).contains(&c.min_share), "chains.min_share must lie in [0,1)")?;
        check(c.max_len >= 2, "chains.max_len must be at least 2")?;
        check(c.window_days.is_none_or(|w| w > 0), "chains.window_days must be positive")?;
        check(c.coverage > 0.0 && c.coverage <= 1.0, "chains.coverage must lie in (0,1]")?;
        let ch = &self.choice;
        check(ch.walk_eps_m > 0.0, "choice.walk_eps_m must be positive")?;
        check(ch.regular_kmh > 0.0 && ch.express_kmh > 0.0 && ch.walk_speed > 0.0, "choice speeds must be positive")?;
        check(ch.max_alternatives >= 2, "choice.max_alternatives must be at least 2")?;
        check(ch.max_weight > 0.0, "choice.max_weight must be positive")?;
        let m = &self.metrics;
        check(m.express_kmh > 0.0, "metrics.express_kmh must be positive")?;
        check(m.dwell_s >= 0.0, "metrics.dwell_s must be non-negative")?;
        check(m.service_hours > 0.0 && m.service_hours <= 24.0, "metrics.service_hours must lie in (0,24]")?;
        check((1..=1000).contains(&self.pso.swarm), "pso.swarm must lie in [1,1000]")?;
        check(self.pso.c1 >= 0.0 && self.pso.c2 >= 0.0, "pso coefficients must be non-negative")?;
        check(self.design.ridership_floor >= 0.0, "design.ridership_floor must be non-negative")?;
        check((0.0..=1.0).contains(&self.design.min_rt), "design.min_rt must lie in [0,1]")?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (sorted keys), excluding `threads`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("threads");
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }

    /// Applies `key = value` overrides in order; dotted keys address nested sections.
    pub fn with_overrides<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        for (k, raw) in pairs {
            set_key(&mut v, k, raw)?;
        }
        let cfg: PipelineConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Parses the key=value text format: one assignment per line, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            pairs.push((k.trim(), v.trim()));
        }
        Self::default().with_overrides(pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every settable key with its current value, in the file format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        flatten(&serde_json::to_value(self).expect("config serializes"), "", &mut out);
        out
    }
}

fn flatten(v: &Value, prefix: &str, out: &mut String) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(x, &key, out);
            }
        }
        Value::String(s) => out.push_str(&format!("{prefix} = {s}\n")),
        other => out.push_str(&format!("{prefix} = {other}\n")),
    }
}

fn set_key(root: &mut Value, key: &str, raw: &str) -> Result<()> {
    let unknown = || Error::Config(format!("unknown config key {key:?}"));
    let mut slot = root;
    for part in key.split('.') {
        slot = slot.as_object_mut().and_then(|m| m.get_mut(part)).ok_or_else(unknown)?;
    }
    if slot.is_object() {
        return Err(Error::Config(format!("{key:?} is a section, not a value")));
    }
    *slot = match slot {
        Value::String(_) => Value::String(raw.to_owned()),
        _ => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned())),
    };
    Ok(())
}
