//! Scenario configuration: the JSON document, its validation, and overrides.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bridge::{BridgeFamily, FamilyKind};
use crate::error::ConfigError;
use crate::expr::parse_sequence;
use crate::feedback::{EquationPairList, Gains, ProbeSchedule};
use crate::superlaw::{LawSpec, SuperLaw};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotSpec {
    pub kind: FamilyKind,
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub pad: usize,
}

impl From<BridgeFamily> for SlotSpec {
    fn from(f: BridgeFamily) -> Self {
        Self {
            kind: f.kind,
            m: f.m,
            arity: Some(f.arity()),
            hidden: (f.kind == FamilyKind::Mlp1h).then_some(f.hidden),
            pad: f.pad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    FixedSet,
    Resample,
}

fn default_log_every() -> u64 {
    1
}

/// The scenario document. Key names are part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub m: usize,
    pub slots: Vec<SlotSpec>,
    pub init_seed: u64,
    pub eta: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub drift: f64,
    pub probe_mode: ProbeMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probes: Vec<Vec<f64>>,
    #[serde(rename = "K")]
    pub k: u64,
    pub law: LawSpec,
    pub steps: u64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
}

impl ScenarioConfig {
    /// Parses a config document; type errors report the JSON path.
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| ConfigError::new("<document>", e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(path, e.into_inner().to_string())
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    pub fn validate(&self) -> Result<Scenario, ConfigError> {
        Scenario::new(self.clone())
    }
}

/// Sets `path` (dot-separated, e.g. `law.period`) in a JSON document. The
/// value is read as JSON when it parses, otherwise as a string.
pub fn set_path(doc: &mut Value, path: &str, raw: &str) -> Result<(), ConfigError> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cursor = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(ConfigError::new(path, "empty key segment"));
        }
        let last = k + 1 == parts.len();
        cursor = match cursor {
            Value::Object(map) if last => {
                map.insert((*part).to_string(), value);
                return Ok(());
            }
            Value::Object(map) => map
                .get_mut(*part)
                .ok_or_else(|| ConfigError::new(path, format!("no key `{part}`")))?,
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| {
                    ConfigError::new(path, format!("`{part}` is not an array index"))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    ConfigError::new(path, format!("index {idx} out of range ({len})"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(ConfigError::new(
                    path,
                    format!("`{part}` is not inside an object or array"),
                ))
            }
        };
    }
    Err(ConfigError::new(path, "empty key"))
}

/// A validated scenario with its derived tables.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub families: Vec<BridgeFamily>,
    pub arities: Vec<usize>,
    pub probes: ProbeSchedule<f64>,
    pub law: SuperLaw,
}

fn check_pairs(list: &EquationPairList, arities: &[usize], key: &str) -> Result<(), ConfigError> {
    for (k, pair) in list.iter().enumerate() {
        for (side, seq) in [(0, &pair.left), (1, &pair.right)] {
            parse_sequence(seq, arities)
                .map_err(|e| ConfigError::new(format!("{key}[{k}][{side}]"), e.to_string()))?;
        }
    }
    Ok(())
}

fn unit_interval(value: f64, key: &str) -> Result<(), ConfigError> {
    if (0.0..1.0).contains(&value) {
        Ok(())
    } else {
        Err(ConfigError::new(
            key,
            format!("must lie in [0, 1), got {value}"),
        ))
    }
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self, ConfigError> {
        let m = config.m;
        if m == 0 {
            return Err(ConfigError::new("m", "must be positive"));
        }
        if config.slots.is_empty() {
            return Err(ConfigError::new("slots", "at least one slot is required"));
        }
        let families = config
            .slots
            .iter()
            .enumerate()
            .map(|(i, spec)| family_of(spec, m, i))
            .collect::<Result<Vec<_>, _>>()?;
        let arities: Vec<usize> = families.iter().map(BridgeFamily::arity).collect();

        if !(config.eta.is_finite() && config.eta > 0.0) {
            return Err(ConfigError::new("eta", "must be a positive finite number"));
        }
        unit_interval(config.mu, "mu")?;
        unit_interval(config.drift, "drift")?;
        if config.k == 0 {
            return Err(ConfigError::new("K", "must be at least 1"));
        }
        if config.log_every == 0 {
            return Err(ConfigError::new("log_every", "must be at least 1"));
        }

        let probes = match config.probe_mode {
            ProbeMode::FixedSet => {
                if config.probes.is_empty() {
                    return Err(ConfigError::new(
                        "probes",
                        "fixed_set needs at least one probe",
                    ));
                }
                for (j, d) in config.probes.iter().enumerate() {
                    if d.len() != m {
                        return Err(ConfigError::new(
                            format!("probes[{j}]"),
                            format!("expected length {m}, got {}", d.len()),
                        ));
                    }
                    if d.iter().any(|x| !x.is_finite()) {
                        return Err(ConfigError::new(
                            format!("probes[{j}]"),
                            "entries must be finite",
                        ));
                    }
                }
                ProbeSchedule::FixedSet(config.probes.clone())
            }
            ProbeMode::Resample => {
                if !config.probes.is_empty() {
                    return Err(ConfigError::new(
                        "probes",
                        "resample mode draws its own probes",
                    ));
                }
                ProbeSchedule::Resample
            }
        };

        match &config.law {
            LawSpec::Identity { pairs } => check_pairs(pairs, &arities, "law.pairs")?,
            LawSpec::Schedule { period, program } => {
                if *period == 0 {
                    return Err(ConfigError::new("law.period", "must be at least 1"));
                }
                if program.is_empty() {
                    return Err(ConfigError::new("law.program", "must not be empty"));
                }
                for (p, entry) in program.iter().enumerate() {
                    check_pairs(entry, &arities, &format!("law.program[{p}]"))?;
                }
            }
            LawSpec::GrammarWalk {
                mutation_weights,
                pairs,
                max_len,
                ..
            } => {
                if mutation_weights
                    .iter()
                    .any(|w| !(w.is_finite() && *w >= 0.0))
                    || mutation_weights.iter().sum::<f64>() <= 0.0
                {
                    return Err(ConfigError::new(
                        "law.mutation_weights",
                        "weights must be non-negative with a positive sum",
                    ));
                }
                if *max_len == 0 {
                    return Err(ConfigError::new("law.max_len", "must be at least 1"));
                }
                check_pairs(pairs, &arities, "law.pairs")?;
                for (k, pair) in pairs.iter().enumerate() {
                    for (side, seq) in [(0, &pair.left), (1, &pair.right)] {
                        if seq.index_count() > *max_len {
                            return Err(ConfigError::new(
                                format!("law.pairs[{k}][{side}]"),
                                format!("longer than max_len = {max_len}"),
                            ));
                        }
                    }
                }
            }
        }

        let law = SuperLaw::new(config.law.clone(), arities.clone());
        Ok(Self {
            config,
            families,
            arities,
            probes,
            law,
        })
    }

    pub fn gains(&self) -> Gains<f64> {
        Gains {
            eta: self.config.eta,
            mu: self.config.mu,
            drift: self.config.drift,
        }
    }

    /// `true` iff the supervenient law is the identity, i.e. the supervenient
    /// level has no dynamics of its own and is epiphenomenal.
    pub fn is_epiphenomenal(&self) -> bool {
        self.config.law.is_identity()
    }
}

fn family_of(spec: &SlotSpec, m: usize, i: usize) -> Result<BridgeFamily, ConfigError> {
    let key = |field: &str| format!("slots[{i}].{field}");
    if spec.m != m {
        return Err(ConfigError::new(
            key("m"),
            format!("slot dimension {} differs from m = {m}", spec.m),
        ));
    }
    let family = match spec.kind {
        FamilyKind::Affine1 => BridgeFamily::affine1(m),
        FamilyKind::Affine2 => BridgeFamily::affine2(m),
        FamilyKind::Mlp1h => match spec.hidden {
            Some(h) if h > 0 => BridgeFamily::mlp1h(m, h),
            _ => {
                return Err(ConfigError::new(
                    key("hidden"),
                    "mlp1h needs a positive hidden width",
                ))
            }
        },
    };
    if spec.kind != FamilyKind::Mlp1h && spec.hidden.is_some() {
        return Err(ConfigError::new(
            key("hidden"),
            "only mlp1h slots take a hidden width",
        ));
    }
    if let Some(arity) = spec.arity {
        if arity != family.arity() {
            return Err(ConfigError::new(
                key("arity"),
                format!("{:?} has arity {}, got {arity}", spec.kind, family.arity()),
            ));
        }
    }
    Ok(family.with_pad(spec.pad))
}
