//! Run configuration: a plain TOML file with nested sections, every value
//! overridable from the command line by its dotted name ("sac.utd=9").
//! The resolved config is what the manifest records, so a run is
//! reproducible from the manifest alone.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regularizers::RegularizerConfig;
use crate::sac::{BackupMode, SacConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Online,
    Avtd,
    LogDataset,
    OfflineStream,
    OfflineShuffled,
}

impl RunKind {
    pub fn label(&self) -> &'static str {
        match self {
            RunKind::Online => "online",
            RunKind::Avtd => "avtd",
            RunKind::LogDataset => "log_dataset",
            RunKind::OfflineStream => "offline_stream",
            RunKind::OfflineShuffled => "offline_shuffled",
        }
    }
}

/// Agent hyperparameters as they appear in config files. Observation and
/// action dimensions come from the environment, the regularizer from the
/// preset string, so neither lives here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacSection {
    pub hidden: Vec<usize>,
    pub discount: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub init_temperature: f64,
    pub warmup_steps: u64,
    pub utd: u32,
    pub policy_delay: u32,
    pub backup: String,
}

impl Default for SacSection {
    fn default() -> SacSection {
        let d = SacConfig::new(1, 1);
        SacSection {
            hidden: d.hidden,
            discount: d.discount,
            tau: d.tau,
            lr: d.lr,
            batch_size: d.batch_size,
            init_temperature: d.init_temperature,
            warmup_steps: d.warmup_steps,
            utd: d.utd,
            policy_delay: d.policy_delay,
            backup: "entropy".into(),
        }
    }
}

pub fn parse_backup(s: &str) -> Result<BackupMode> {
    match s {
        "entropy" => Ok(BackupMode::Entropy),
        "deterministic" => Ok(BackupMode::Deterministic),
        other => Err(Error::InvalidConfig(format!(
            "sac.backup must be \"entropy\" or \"deterministic\", got {other:?}"
        ))),
    }
}

impl SacSection {
    /// Resolves the section into a full agent config for the given
    /// environment dimensions and regularizer preset.
    pub fn to_config(&self, obs_dim: usize, action_dim: usize, reg: &str) -> Result<SacConfig> {
        let mut cfg = SacConfig::new(obs_dim, action_dim);
        cfg.hidden = self.hidden.clone();
        cfg.discount = self.discount;
        cfg.tau = self.tau;
        cfg.lr = self.lr;
        cfg.batch_size = self.batch_size;
        cfg.init_temperature = self.init_temperature;
        cfg.warmup_steps = self.warmup_steps;
        cfg.utd = self.utd;
        cfg.policy_delay = self.policy_delay;
        cfg.backup = parse_backup(&self.backup)?;
        cfg.reg = RegularizerConfig::parse(reg)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Agent-pool settings for selection runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolSection {
    pub presets: Vec<String>,
    pub epsilon: f64,
    pub selection: String,
    pub heldout_every: u64,
    pub update_during_heldout: bool,
}

impl Default for PoolSection {
    fn default() -> PoolSection {
        PoolSection {
            presets: vec![
                "ln".into(),
                "ln+wd0.01".into(),
                "wd0.01".into(),
                "ln+do0.03".into(),
                "ln+do0.01".into(),
            ],
            epsilon: 0.1,
            selection: "valid_td".into(),
            heldout_every: 10,
            update_during_heldout: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kind: RunKind,
    pub env: String,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    /// Regularizer preset for single-agent runs (online, dataset logging).
    pub reg: String,
    /// Regularizer sweep for offline analysis; empty means just "fn".
    pub regs: Vec<String>,
    /// UTD sweep for offline analysis; empty means just sac.utd.
    pub utd_list: Vec<u32>,
    /// Extra methods run next to the selection pool: "uniform" for the
    /// per-episode-uniform baseline, or any preset to train that agent
    /// alone on the same seeds and budget.
    pub baselines: Vec<String>,
    /// Held-out episodes appended after a dataset-logging run.
    pub heldout_episodes: u64,
    /// Dataset file consumed by offline analysis.
    pub dataset: String,
    /// Held-out file for offline analysis; empty derives it from `dataset`
    /// by swapping the extension to "heldout".
    pub heldout: String,
    pub out: String,
    pub log_every: u64,
    pub eval_episodes: usize,
    pub mc_traj: usize,
    pub metric_batch: usize,
    pub sac: SacSection,
    pub pool: PoolSection,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            kind: RunKind::Online,
            env: "pendulum".into(),
            seeds: vec![0],
            total_steps: 30_000,
            reg: "plain".into(),
            regs: Vec::new(),
            utd_list: Vec::new(),
            baselines: Vec::new(),
            heldout_episodes: 5,
            dataset: String::new(),
            heldout: String::new(),
            out: "runs".into(),
            log_every: 5000,
            eval_episodes: 10,
            mc_traj: 10,
            metric_batch: 256,
            sac: SacSection::default(),
            pool: PoolSection::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        if self.out.is_empty() {
            return bad("out directory must be set".into());
        }
        if !(0.0..=1.0).contains(&self.pool.epsilon) || !self.pool.epsilon.is_finite() {
            return bad(format!(
                "pool.epsilon must lie in [0, 1], got {}",
                self.pool.epsilon
            ));
        }
        match self.kind {
            RunKind::Online | RunKind::LogDataset => {
                RegularizerConfig::parse(&self.reg)?;
            }
            RunKind::Avtd => {
                if self.pool.presets.is_empty() {
                    return bad("pool.presets must be non-empty for avtd runs".into());
                }
                for p in &self.pool.presets {
                    RegularizerConfig::parse(p)?;
                }
                for b in &self.baselines {
                    if b != "uniform" {
                        RegularizerConfig::parse(b)?;
                    }
                }
                crate::pool::SelectionMode::parse(&self.pool.selection)?;
            }
            RunKind::OfflineStream | RunKind::OfflineShuffled => {
                if self.dataset.is_empty() {
                    return bad("dataset path must be set for offline analysis".into());
                }
                for r in &self.regs {
                    RegularizerConfig::parse(r)?;
                }
            }
        }
        parse_backup(&self.sac.backup)?;
        // dimensions are placeholders here; real ones come from the env
        self.sac.to_config(1, 1, "plain").map(|_| ())
    }

    /// Held-out dataset path, derived from the dataset path when not set
    /// explicitly.
    pub fn heldout_path(&self) -> String {
        if !self.heldout.is_empty() {
            return self.heldout.clone();
        }
        Path::new(&self.dataset)
            .with_extension("heldout")
            .to_string_lossy()
            .into_owned()
    }
}

/// Loads a config file (or starts from defaults when absent) and applies
/// dotted-name overrides in order.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            text.parse::<toml::Table>().map_err(|e| {
                Error::InvalidConfig(format!("{}: {e}", p.display()))
            })?
        }
        None => toml::Table::new(),
    };
    for ov in overrides {
        apply_override(&mut table, ov)?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::InvalidConfig(format!("config: {e}")))
}

/// Applies one "section.key=value" override. The value is parsed as TOML
/// (so numbers, booleans, and arrays work); anything that does not parse is
/// taken as a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        Error::InvalidConfig(format!("override {spec:?} is not of the form key=value"))
    })?;
    let path = path.trim();
    if path.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "override {spec:?} has an empty key"
        )));
    }
    let value = parse_value(raw.trim());
    let mut segs = path.split('.').peekable();
    let mut cur = table;
    loop {
        let seg = segs.next().expect("split yields at least one segment");
        if segs.peek().is_none() {
            cur.insert(seg.to_string(), value);
            return Ok(());
        }
        let entry = cur
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Error::InvalidConfig(format!(
                "override {path:?}: {seg:?} is not a section"
            ))
        })?;
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("just inserted"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn default_pool_has_five_presets() {
        let cfg = RunConfig::default();
        assert_eq!(
            cfg.pool.presets,
            vec!["ln", "ln+wd0.01", "wd0.01", "ln+do0.03", "ln+do0.01"]
        );
        assert_eq!(cfg.pool.epsilon, 0.1);
        assert_eq!(cfg.pool.heldout_every, 10);
    }

    #[test]
    fn toml_round_trip_preserves_config() {
        let mut cfg = RunConfig::default();
        cfg.kind = RunKind::Avtd;
        cfg.seeds = vec![3, 7];
        cfg.sac.utd = 9;
        cfg.baselines = vec!["uniform".into(), "plain".into()];
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_reach_nested_sections() {
        let mut table = toml::Table::new();
        apply_override(&mut table, "sac.utd=9").unwrap();
        apply_override(&mut table, "sac.hidden=[32, 32]").unwrap();
        apply_override(&mut table, "env=point-mass").unwrap();
        apply_override(&mut table, "seeds=[1, 2]").unwrap();
        apply_override(&mut table, "pool.epsilon=0.25").unwrap();
        let cfg: RunConfig = toml::Value::Table(table).try_into().unwrap();
        assert_eq!(cfg.sac.utd, 9);
        assert_eq!(cfg.sac.hidden, vec![32, 32]);
        assert_eq!(cfg.env, "point-mass");
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.pool.epsilon, 0.25);
    }

    #[test]
    fn later_overrides_win() {
        let mut table = toml::Table::new();
        apply_override(&mut table, "total_steps=100").unwrap();
        apply_override(&mut table, "total_steps=200").unwrap();
        let cfg: RunConfig = toml::Value::Table(table).try_into().unwrap();
        assert_eq!(cfg.total_steps, 200);
    }

    #[test]
    fn unknown_field_is_rejected_with_its_name() {
        let mut table = toml::Table::new();
        apply_override(&mut table, "sac.learning_rate=0.001").unwrap();
        let err = toml::Value::Table(table)
            .try_into::<RunConfig>()
            .unwrap_err()
            .to_string();
        assert!(err.contains("learning_rate"), "{err}");
    }

    #[test]
    fn bad_override_shapes_are_errors() {
        let mut table = toml::Table::new();
        assert!(apply_override(&mut table, "no_equals_sign").is_err());
        assert!(apply_override(&mut table, "=5").is_err());
        apply_override(&mut table, "sac.utd=9").unwrap();
        // sac.utd is a leaf; treating it as a section must fail
        assert!(apply_override(&mut table, "sac.utd.nested=1").is_err());
    }

    #[test]
    fn validation_catches_kind_specific_gaps() {
        let mut cfg = RunConfig::default();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.kind = RunKind::OfflineShuffled;
        assert!(cfg.validate().is_err()); // dataset missing
        cfg.dataset = "d.dataset".into();
        cfg.validate().unwrap();
        assert_eq!(cfg.heldout_path(), "d.heldout");
        cfg.heldout = "other.heldout".into();
        assert_eq!(cfg.heldout_path(), "other.heldout");

        let mut cfg = RunConfig::default();
        cfg.kind = RunKind::Avtd;
        cfg.pool.presets.clear();
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.reg = "banana".into();
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.sac.backup = "optimistic".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn bare_strings_parse_as_strings() {
        let mut table = toml::Table::new();
        apply_override(&mut table, "reg=ln+wd0.01").unwrap();
        let cfg: RunConfig = toml::Value::Table(table).try_into().unwrap();
        assert_eq!(cfg.reg, "ln+wd0.01");
    }
}
