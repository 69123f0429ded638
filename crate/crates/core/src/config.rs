//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer};
use serde::Deserialize;

use crate::env::{AdversarialEnv, DemandEnvironment, LinearDemandEnv};
use crate::error::{Error, Result};
use crate::harness::{Cell, Overrides, PolicyKind, PolicySpec};
use crate::partition::HypercubePartition;
use crate::policy::{Preset, SensitivityMode};
use crate::prng::derive_stream;

/// Horizons of the simulation study.
pub const STUDY_HORIZONS: [u64; 4] = [500, 2500, 12500, 62500];
/// Privacy budgets of the simulation study, in table order.
pub const STUDY_EPS: [f64; 4] = [10.0, 1.0, 0.1, 0.01];
pub const STUDY_REPS: usize = 30;

/// Named experiment grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyPreset {
    TableCppq,
    TableLppq,
    SlopeLppq,
}

impl StudyPreset {
    pub fn as_str(&self) -> &'static str {
        match self {
            StudyPreset::TableCppq => "table-cppq",
            StudyPreset::TableLppq => "table-lppq",
            StudyPreset::SlopeLppq => "slope-lppq",
        }
    }

    /// Policies run by the preset. The tables carry a non-private reference row.
    pub fn policies(&self) -> Vec<PolicyKind> {
        match self {
            StudyPreset::TableCppq => vec![PolicyKind::Nonprivate, PolicyKind::Cppq],
            StudyPreset::TableLppq => vec![PolicyKind::Nonprivate, PolicyKind::Lppq],
            StudyPreset::SlopeLppq => vec![PolicyKind::Lppq],
        }
    }
}

/// A privacy budget as written in a config: a positive number or `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eps(pub f64);

impl<'de> Deserialize<'de> for Eps {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v > 0.0 && v.is_finite() => Ok(Eps(v)),
            Raw::Num(v) => Err(de::Error::custom(format!(
                "eps must be positive or \"inf\", got {v}"
            ))),
            Raw::Text(s) if s == "inf" => Ok(Eps(f64::INFINITY)),
            Raw::Text(s) => Err(de::Error::custom(format!(
                "eps must be positive or \"inf\", got \"{s}\""
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyObject {
    kind: PolicyKind,
    #[serde(default)]
    preset: Preset,
    #[serde(default)]
    overrides: Overrides,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
enum PolicyEntry {
    Kind(PolicyKind),
    Object(PolicyObject),
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    Many(Vec<PolicyEntry>),
    One(PolicyEntry),
}

/// Demand environment selection.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvSpec {
    Linear {
        #[serde(default = "default_theta")]
        theta: [f64; 4],
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_p_lo")]
        p_lo: f64,
        #[serde(default = "default_p_hi")]
        p_hi: f64,
    },
    Adversarial {
        #[serde(default = "default_dim")]
        dim: usize,
        /// Number of cubes `J`.
        #[serde(rename = "J")]
        cubes: usize,
        /// Per-cube bits; drawn from the seed when absent.
        nu: Option<Vec<bool>>,
    },
}

fn default_theta() -> [f64; 4] {
    LinearDemandEnv::standard().theta()
}
fn default_noise() -> f64 {
    LinearDemandEnv::standard().noise_half_width()
}
fn default_p_lo() -> f64 {
    LinearDemandEnv::standard().price_bounds().0
}
fn default_p_hi() -> f64 {
    LinearDemandEnv::standard().price_bounds().1
}
fn default_dim() -> usize {
    2
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::Linear {
            theta: default_theta(),
            noise: default_noise(),
            p_lo: default_p_lo(),
            p_hi: default_p_hi(),
        }
    }
}

impl EnvSpec {
    pub fn build(&self, seed: u64) -> Result<Box<dyn DemandEnvironment>> {
        match self {
            EnvSpec::Linear {
                theta,
                noise,
                p_lo,
                p_hi,
            } => Ok(Box::new(LinearDemandEnv::new(
                *theta, *noise, *p_lo, *p_hi,
            )?)),
            EnvSpec::Adversarial { dim, cubes, nu } => {
                let partition = HypercubePartition::build(*dim, *cubes)?;
                let nu = match nu {
                    Some(bits) => bits.clone(),
                    None => {
                        let mut s = derive_stream(seed, "env/nu");
                        (0..partition.cube_count())
                            .map(|_| s.next_unit() < 0.5)
                            .collect()
                    }
                };
                Ok(Box::new(AdversarialEnv::new(partition, nu)?))
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<StudyPreset>,
    policy: Option<OneOrMany>,
    #[serde(default)]
    env: EnvSpec,
    #[serde(rename = "T")]
    horizons: Option<Vec<u64>>,
    eps: Option<Vec<Eps>>,
    reps: Option<usize>,
    seed: Option<u64>,
    #[serde(default)]
    sensitivity: SensitivityMode,
    out: Option<PathBuf>,
    /// Also write the privatized LPPQ vectors of replication 0.
    #[serde(default)]
    trace: bool,
}

/// A validated experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub policies: Vec<PolicySpec>,
    pub env: EnvSpec,
    pub horizons: Vec<u64>,
    pub eps: Vec<f64>,
    pub reps: usize,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trace: bool,
}

impl ExperimentConfig {
    /// The full study grid of a named preset.
    pub fn from_preset(preset: StudyPreset) -> Self {
        Self {
            policies: preset.policies().into_iter().map(PolicySpec::new).collect(),
            env: EnvSpec::default(),
            horizons: STUDY_HORIZONS.to_vec(),
            eps: STUDY_EPS.to_vec(),
            reps: STUDY_REPS,
            seed: None,
            out: None,
            trace: false,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {} column {}: {e}", e.line(), e.column())))?;
        let base = raw.preset.map(Self::from_preset);
        let policies = match raw.policy {
            Some(OneOrMany::One(p)) => vec![p],
            Some(OneOrMany::Many(ps)) => ps,
            None => Vec::new(),
        };
        let policies: Vec<PolicySpec> = if policies.is_empty() {
            base.as_ref()
                .map(|b| b.policies.clone())
                .unwrap_or_default()
        } else {
            policies
                .into_iter()
                .map(|p| match p {
                    PolicyEntry::Kind(kind) => PolicySpec::new(kind),
                    PolicyEntry::Object(o) => PolicySpec {
                        kind: o.kind,
                        preset: o.preset,
                        overrides: o.overrides,
                        sensitivity: SensitivityMode::default(),
                    },
                })
                .collect()
        };
        let policies = policies
            .into_iter()
            .map(|p| PolicySpec {
                sensitivity: raw.sensitivity,
                ..p
            })
            .collect();
        let cfg = Self {
            policies,
            env: raw.env,
            horizons: raw
                .horizons
                .or_else(|| base.as_ref().map(|b| b.horizons.clone()))
                .unwrap_or_default(),
            eps: raw
                .eps
                .map(|v| v.into_iter().map(|e| e.0).collect())
                .or_else(|| base.as_ref().map(|b| b.eps.clone()))
                .unwrap_or_default(),
            reps: raw.reps.or(base.as_ref().map(|b| b.reps)).unwrap_or(0),
            seed: raw.seed,
            out: raw.out,
            trace: raw.trace,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::Config(
                "`policy` must name at least one policy".into(),
            ));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config(
                "`T` must be a non-empty list of positive integers".into(),
            ));
        }
        if self.eps.is_empty() {
            return Err(Error::Config("`eps` must be a non-empty list".into()));
        }
        if let Some(bad) = self.eps.iter().find(|e| !(**e > 0.0) || e.is_nan()) {
            return Err(Error::Config(format!(
                "eps must be positive or \"inf\", got {bad}"
            )));
        }
        if self.reps == 0 {
            return Err(Error::Config("`reps` must be at least 1".into()));
        }
        Ok(())
    }

    /// Grid cells in output order: policy, then eps, then T.
    ///
    /// The non-private baseline ignores `eps`, so it contributes one cell per T.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for spec in &self.policies {
            let eps_list: Vec<f64> = match spec.kind {
                PolicyKind::Nonprivate => vec![f64::INFINITY],
                _ => self.eps.clone(),
            };
            for &eps in &eps_list {
                for &horizon in &self.horizons {
                    cells.push(Cell {
                        spec: spec.clone(),
                        eps,
                        horizon,
                    });
                }
            }
        }
        cells
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_is_valid() {
        let cfg = ExperimentConfig::parse(
            r#"{"policy": "lppq", "T": [500], "eps": [1], "reps": 1, "seed": 7}"#,
        )
        .unwrap();
        assert_eq!(cfg.policies, vec![PolicySpec::new(PolicyKind::Lppq)]);
        assert_eq!(cfg.horizons, vec![500]);
        assert_eq!(cfg.eps, vec![1.0]);
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.cells().len(), 1);
    }

    #[test]
    fn rejects_non_positive_eps() {
        for bad in ["[-1]", "[0]", "[\"infinity\"]", "[]"] {
            let text = format!(r#"{{"policy": "cppq", "T": [500], "eps": {bad}, "reps": 1}}"#);
            let err = ExperimentConfig::parse(&text).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{bad}: {err}");
        }
    }

    #[test]
    fn inf_selects_unbounded_budget() {
        let cfg = ExperimentConfig::parse(
            r#"{"policy": "cppq", "T": [10], "eps": ["inf", 2], "reps": 1}"#,
        )
        .unwrap();
        assert!(cfg.eps[0].is_infinite());
        assert_eq!(cfg.eps[1], 2.0);
    }

    #[test]
    fn unknown_keys_rejected_with_position() {
        let err = ExperimentConfig::parse(
            "{\"policy\": \"cppq\",\n \"T\": [500],\n \"epsilon\": [1], \"reps\": 1}",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("epsilon"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_override_rejected() {
        let text = r#"{"policy": {"kind": "cppq", "overrides": {"c3": 1}}, "T": [5], "eps": [1], "reps": 1}"#;
        assert!(ExperimentConfig::parse(text).is_err());
    }

    #[test]
    fn zero_reps_rejected() {
        let text = r#"{"policy": "cppq", "T": [5], "eps": [1], "reps": 0}"#;
        assert!(ExperimentConfig::parse(text).is_err());
    }

    #[test]
    fn study_preset_expands_grid() {
        let cfg = ExperimentConfig::parse(r#"{"preset": "table-lppq"}"#).unwrap();
        assert_eq!(cfg.horizons, vec![500, 2500, 12500, 62500]);
        let mut eps = cfg.eps.clone();
        eps.sort_by(f64::total_cmp);
        assert_eq!(eps, vec![0.01, 0.1, 1.0, 10.0]);
        assert_eq!(cfg.reps, 30);
        // 4 non-private cells plus 16 private ones.
        assert_eq!(cfg.cells().len(), 20);
    }

    #[test]
    fn preset_fields_can_be_overridden() {
        let cfg =
            ExperimentConfig::parse(r#"{"preset": "slope-lppq", "reps": 2, "T": [100]}"#).unwrap();
        assert_eq!(cfg.reps, 2);
        assert_eq!(cfg.horizons, vec![100]);
        assert_eq!(cfg.cells().len(), 4);
    }

    #[test]
    fn policy_object_and_list() {
        let text = r#"{
            "policy": ["nonprivate", {"kind": "cppq", "preset": "custom",
                       "overrides": {"J": 4, "c1": 0.1, "c1_prime": 0.1, "c2": 5}}],
            "T": [100, 200], "eps": [1, 0.1], "reps": 3,
            "sensitivity": "sensitivity-correct"
        }"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.policies.len(), 2);
        assert_eq!(cfg.policies[1].preset, Preset::Custom);
        assert_eq!(cfg.policies[1].overrides.cubes, Some(4));
        assert!(cfg
            .policies
            .iter()
            .all(|p| p.sensitivity == SensitivityMode::SensitivityCorrect));
        assert_eq!(cfg.cells().len(), 2 + 4);
    }

    #[test]
    fn adversarial_env_builds() {
        let text = r#"{"policy": "cppq", "T": [5], "eps": [1], "reps": 1,
                       "env": {"kind": "adversarial", "J": 4, "nu": [true, false, true, false]}}"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        let env = cfg.env.build(1).unwrap();
        assert_eq!(env.price_bounds(), (0.0, 1.0));
        let drawn = EnvSpec::Adversarial {
            dim: 2,
            cubes: 9,
            nu: None,
        };
        drawn.build(3).unwrap();
    }
}
