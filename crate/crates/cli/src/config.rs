//! Layered run configuration: built-in defaults, then a TOML file, then
//! `INTENTGATE_*` environment variables, then command-line overrides.

use std::path::{Path, PathBuf};

use intentgate::acl::TrainConfig;
use intentgate::benchmark::{FPR_BUDGET, TEST_STREAM_SEED, VALIDATION_STREAM_SEED};
use intentgate::loadgen::BenchConfig;
use intentgate::simulator::{AttackerConfig, PollutionConfig, SynthConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::fail::Failure;

pub const ENV_PREFIX: &str = "INTENTGATE_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub k: usize,
    pub stage1_enabled: bool,
    pub write_back_lag: u64,
    /// Entries per store; 0 leaves both stores unbounded.
    pub capacity: usize,
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection { k: 1, stage1_enabled: true, write_back_lag: 0, capacity: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSection {
    pub validation_seed: u64,
    pub test_seed: u64,
    pub fpr_budget: f64,
}

impl Default for StreamSection {
    fn default() -> Self {
        StreamSection { validation_seed: VALIDATION_STREAM_SEED, test_seed: TEST_STREAM_SEED, fpr_budget: FPR_BUDGET }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PollutionSection {
    pub n_poison: Vec<usize>,
    pub sweeps: usize,
    pub candidates: usize,
    pub suffix_tokens: usize,
    pub seed: u64,
}

impl PollutionSection {
    pub fn craft(&self) -> PollutionConfig {
        PollutionConfig {
            sweeps: self.sweeps,
            candidates: self.candidates,
            suffix_tokens: self.suffix_tokens,
            seed: self.seed,
        }
    }
}

impl Default for PollutionSection {
    fn default() -> Self {
        let c = PollutionConfig::default();
        PollutionSection {
            n_poison: vec![0, 10, 100, 1000],
            sweeps: c.sweeps,
            candidates: c.candidates,
            suffix_tokens: c.suffix_tokens,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacitySection {
    pub ratios: Vec<f64>,
}

impl Default for CapacitySection {
    fn default() -> Self {
        CapacitySection { ratios: vec![0.1, 0.15, 0.25, 0.5, 1.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    pub tau_int: f64,
    pub r_mal: f64,
    pub d_int: u32,
    pub gamma: f64,
    pub fragments: usize,
}

impl Default for BoundsSection {
    fn default() -> Self {
        BoundsSection { tau_int: 0.95, r_mal: 0.15, d_int: 8, gamma: 0.3, fragments: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub addr: String,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection { addr: "127.0.0.1:7878".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Working directory holding corpus splits, the model and thresholds.
    pub dir: PathBuf,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub engine: EngineSection,
    pub streams: StreamSection,
    pub attack: AttackerConfig,
    pub pollution: PollutionSection,
    pub capacity: CapacitySection,
    pub bounds: BoundsSection,
    pub serve: ServeSection,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dir: PathBuf::from("run"),
            synth: SynthConfig::benchmark(),
            train: TrainConfig::benchmark(),
            engine: EngineSection::default(),
            streams: StreamSection::default(),
            attack: AttackerConfig { max_attempts: 64, ..AttackerConfig::default() },
            pollution: PollutionSection::default(),
            capacity: CapacitySection::default(),
            bounds: BoundsSection::default(),
            serve: ServeSection::default(),
            bench: BenchConfig::default(),
        }
    }
}

const SECTIONS: [&str; 10] =
    ["synth", "train", "engine", "streams", "attack", "pollution", "capacity", "bounds", "serve", "bench"];

/// One `key = value` override. Keys are `section.field` or a top-level field.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: Value,
}

impl Override {
    pub fn new(key: &str, value: impl Into<Value>) -> Self {
        Override { path: key.split('.').map(str::to_owned).collect(), value: value.into() }
    }

    /// Parses `section.key=value`. The value is read as a TOML literal and
    /// falls back to a plain string.
    pub fn parse(s: &str) -> Result<Self, Failure> {
        let (key, raw) = s.split_once('=').ok_or_else(|| Failure::config(format!("override {s:?} lacks '='")))?;
        Ok(Override::new(key.trim(), parse_literal(raw.trim())))
    }
}

fn parse_literal(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.into())),
        Err(_) => Value::String(raw.into()),
    }
}

/// `INTENTGATE_TRAIN_LEARNING_RATE=0.1` becomes `train.learning_rate = 0.1`;
/// a name without a known section prefix is a top-level key.
pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<Override> {
    let mut out: Vec<Override> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
            if rest == "config" {
                return None;
            }
            let key = match rest.split_once('_') {
                Some((section, field)) if SECTIONS.contains(&section) => format!("{section}.{field}"),
                _ => rest,
            };
            Some(Override::new(&key, parse_literal(&v)))
        })
        .collect();
    out.sort_by(|a, b| a.path.cmp(&b.path));
    out
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply(table: &mut Table, o: &Override) -> Result<(), Failure> {
    let (last, parents) = o.path.split_last().ok_or_else(|| Failure::config("empty override key"))?;
    let mut t = table;
    for p in parents {
        t = match t.entry(p.clone()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(inner) => inner,
            _ => return Err(Failure::config(format!("{} is not a section", o.path.join(".")))),
        };
    }
    t.insert(last.clone(), o.value.clone());
    Ok(())
}

fn defaults_table() -> Table {
    let text = toml::to_string(&RunConfig::default()).expect("defaults serialize");
    toml::from_str(&text).expect("defaults parse")
}

/// Resolves the effective configuration. Later layers win.
pub fn load(file: Option<&Path>, env: &[Override], flags: &[Override]) -> Result<RunConfig, Failure> {
    let mut table = defaults_table();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        let file_table: Table =
            toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {}", path.display(), e.message())))?;
        merge(&mut table, file_table);
    }
    for o in env.iter().chain(flags) {
        apply(&mut table, o)?;
    }
    Value::Table(table).try_into().map_err(|e: toml::de::Error| Failure::config(e.message().to_owned()))
}
