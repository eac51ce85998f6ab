//! Critic regularizer recipes: a declarative config plus the mapping onto
//! network specs, optimizer decay masks, and reset schedules. Recipes are
//! addressable from config files by preset strings such as "ln+wd0.01" or
//! "droq0.01".
//!
//! All recipes shape the critic only; the actor stays plain. Reset is the
//! exception and reinitializes the whole agent.

use crate::error::{Error, Result};
use crate::nn::{MlpSpec, ParamKind};

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerConfig {
    pub feature_norm: bool,
    pub layer_norm: bool,
    pub weight_decay: f64,
    pub spectral_norm: bool,
    pub dropout_rate: f64,
    pub reset_period: Option<u64>,
    /// Zero-mean Gaussian noise of this scale added to the critic's TD
    /// targets. Not a regularizer: a harness-level sabotage knob used to
    /// construct a deliberately bad pool member for selection experiments.
    pub critic_noise_std: f64,
}

impl Default for RegularizerConfig {
    fn default() -> RegularizerConfig {
        RegularizerConfig {
            feature_norm: false,
            layer_norm: false,
            weight_decay: 0.0,
            spectral_norm: false,
            dropout_rate: 0.0,
            reset_period: None,
            critic_noise_std: 0.0,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.reset_period == Some(0) {
            return Err(Error::InvalidConfig(
                "reset_period must be positive".to_string(),
            ));
        }
        if !(self.critic_noise_std >= 0.0 && self.critic_noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "critic_noise_std must be finite and >= 0, got {}",
                self.critic_noise_std
            )));
        }
        Ok(())
    }

    /// Parses a preset string: '+'-joined tokens from
    ///   plain | fn | ln | sn | wd<float> | do<float> | droq<float>
    ///   | reset<int> | noise<float>
    /// "droq<r>" is shorthand for layer norm plus dropout rate r. "plain"
    /// must stand alone. Setting the same field twice is rejected.
    pub fn parse(preset: &str) -> Result<RegularizerConfig> {
        let tokens: Vec<&str> = preset.split('+').map(str::trim).collect();
        if tokens.iter().any(|t| t.is_empty()) {
            return Err(Error::UnknownPreset(preset.to_string()));
        }
        if tokens.contains(&"plain") {
            if tokens.len() == 1 {
                return Ok(RegularizerConfig::default());
            }
            return Err(Error::InvalidConfig(format!(
                "preset \"{preset}\": \"plain\" cannot combine with other tokens"
            )));
        }

        let mut cfg = RegularizerConfig::default();
        let set = |field: &mut bool, name: &str| -> Result<()> {
            if *field {
                return Err(Error::InvalidConfig(format!(
                    "preset \"{preset}\" sets {name} twice"
                )));
            }
            *field = true;
            Ok(())
        };
        let (mut has_fn, mut has_ln, mut has_sn) = (false, false, false);
        let (mut has_wd, mut has_do, mut has_reset, mut has_noise) = (false, false, false, false);
        for tok in &tokens {
            if *tok == "fn" {
                set(&mut has_fn, "fn")?;
                cfg.feature_norm = true;
            } else if *tok == "ln" {
                set(&mut has_ln, "ln")?;
                cfg.layer_norm = true;
            } else if *tok == "sn" {
                set(&mut has_sn, "sn")?;
                cfg.spectral_norm = true;
            } else if let Some(rest) = tok.strip_prefix("droq") {
                set(&mut has_ln, "ln")?;
                set(&mut has_do, "do")?;
                cfg.layer_norm = true;
                cfg.dropout_rate = parse_num(preset, tok, rest)?;
            } else if let Some(rest) = tok.strip_prefix("wd") {
                set(&mut has_wd, "wd")?;
                cfg.weight_decay = parse_num(preset, tok, rest)?;
            } else if let Some(rest) = tok.strip_prefix("do") {
                set(&mut has_do, "do")?;
                cfg.dropout_rate = parse_num(preset, tok, rest)?;
            } else if let Some(rest) = tok.strip_prefix("reset") {
                set(&mut has_reset, "reset")?;
                let period: u64 = rest.parse().map_err(|_| {
                    Error::InvalidConfig(format!(
                        "preset \"{preset}\": bad integer in token \"{tok}\""
                    ))
                })?;
                cfg.reset_period = Some(period);
            } else if let Some(rest) = tok.strip_prefix("noise") {
                set(&mut has_noise, "noise")?;
                cfg.critic_noise_std = parse_num(preset, tok, rest)?;
            } else {
                return Err(Error::UnknownPreset(preset.to_string()));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical preset string for logs; parse(label()) round-trips.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.feature_norm {
            parts.push("fn".to_string());
        }
        if self.layer_norm {
            parts.push("ln".to_string());
        }
        if self.spectral_norm {
            parts.push("sn".to_string());
        }
        if self.weight_decay > 0.0 {
            parts.push(format!("wd{}", self.weight_decay));
        }
        if self.dropout_rate > 0.0 {
            parts.push(format!("do{}", self.dropout_rate));
        }
        if let Some(p) = self.reset_period {
            parts.push(format!("reset{p}"));
        }
        if self.critic_noise_std > 0.0 {
            parts.push(format!("noise{}", self.critic_noise_std));
        }
        if parts.is_empty() {
            "plain".to_string()
        } else {
            parts.join("+")
        }
    }
}

/// Critic network spec for a width chain (input, hidden..., output),
/// applying the configured placements: layer norm and dropout on every
/// hidden layer, feature norm before the final linear map, spectral norm on
/// the penultimate linear map.
pub fn build_critic_spec(reg: &RegularizerConfig, widths: &[usize]) -> MlpSpec {
    let hidden = widths.len().saturating_sub(2);
    MlpSpec {
        layer_widths: widths.to_vec(),
        layer_norm: vec![reg.layer_norm; hidden],
        dropout_rate: vec![reg.dropout_rate; hidden],
        feature_norm: reg.feature_norm,
        spectral_norm_penultimate: reg.spectral_norm,
        init_gain: std::f64::consts::SQRT_2,
    }
}

/// Per-tensor weight-decay mask over a parameter layout: true exactly on
/// weight matrices that are not the final layer. Biases, the final weight
/// matrix, and normalization scale/bias parameters never decay.
pub fn build_decay_mask(layout: &[(ParamKind, usize)]) -> Vec<bool> {
    layout.iter().map(|(kind, _)| kind.decayable()).collect()
}

/// True iff a reset schedule is set and `env_step` is a positive multiple
/// of it.
pub fn reset_due(reg: &RegularizerConfig, env_step: u64) -> bool {
    match reg.reset_period {
        Some(p) => env_step > 0 && env_step % p == 0,
        None => false,
    }
}

fn parse_num(preset: &str, tok: &str, rest: &str) -> Result<f64> {
    rest.parse().map_err(|_| {
        Error::InvalidConfig(format!(
            "preset \"{preset}\": bad number in token \"{tok}\""
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamSet;
    use crate::rng;

    #[test]
    fn plain_parses_to_default_and_maps_to_plain_spec() {
        let cfg = RegularizerConfig::parse("plain").unwrap();
        assert_eq!(cfg, RegularizerConfig::default());
        let widths = [5, 256, 256, 1];
        assert_eq!(build_critic_spec(&cfg, &widths), MlpSpec::plain(&widths));
        assert_eq!(cfg.label(), "plain");
    }

    #[test]
    fn droq_is_layer_norm_plus_dropout() {
        let cfg = RegularizerConfig::parse("droq0.01").unwrap();
        assert!(cfg.layer_norm);
        assert_eq!(cfg.dropout_rate, 0.01);
        let spec = build_critic_spec(&cfg, &[5, 256, 256, 1]);
        assert_eq!(spec.layer_norm, vec![true, true]);
        assert_eq!(spec.dropout_rate, vec![0.01, 0.01]);
        assert_eq!(cfg.label(), "ln+do0.01");
    }

    #[test]
    fn weight_decay_only_leaves_spec_plain() {
        let cfg = RegularizerConfig::parse("wd0.01").unwrap();
        assert_eq!(cfg.weight_decay, 0.01);
        let widths = [5, 32, 32, 1];
        assert_eq!(build_critic_spec(&cfg, &widths), MlpSpec::plain(&widths));
    }

    #[test]
    fn feature_norm_only_sets_the_final_map_flag() {
        let cfg = RegularizerConfig::parse("fn").unwrap();
        let spec = build_critic_spec(&cfg, &[5, 32, 32, 1]);
        assert!(spec.feature_norm);
        assert!(!spec.spectral_norm_penultimate);
        assert_eq!(spec.layer_norm, vec![false, false]);
    }

    #[test]
    fn compound_presets_round_trip_through_labels() {
        for preset in [
            "ln+wd0.01",
            "fn+sn",
            "ln+do0.03",
            "wd0.01+reset200000",
            "noise3",
            "sn+noise0.5",
        ] {
            let cfg = RegularizerConfig::parse(preset).unwrap();
            let back = RegularizerConfig::parse(&cfg.label()).unwrap();
            assert_eq!(cfg, back, "preset {preset}");
        }
    }

    #[test]
    fn named_recipes_map_to_distinct_configs() {
        let recipes = [
            "plain",
            "fn",
            "ln",
            "wd0.01",
            "sn",
            "do0.03",
            "droq0.01",
            "reset200000",
            "ln+wd0.01",
        ];
        let cfgs: Vec<RegularizerConfig> = recipes
            .iter()
            .map(|p| RegularizerConfig::parse(p).unwrap())
            .collect();
        for i in 0..cfgs.len() {
            for j in (i + 1)..cfgs.len() {
                assert_ne!(cfgs[i], cfgs[j], "{} vs {}", recipes[i], recipes[j]);
            }
        }
    }

    #[test]
    fn malformed_presets_are_rejected() {
        assert!(RegularizerConfig::parse("frobnicate").is_err());
        assert!(RegularizerConfig::parse("plain+ln").is_err());
        assert!(RegularizerConfig::parse("wd0.01+wd0.02").is_err());
        assert!(RegularizerConfig::parse("droq0.01+ln").is_err());
        assert!(RegularizerConfig::parse("do1.5").is_err());
        assert!(RegularizerConfig::parse("wd-3").is_err());
        assert!(RegularizerConfig::parse("wdx").is_err());
        assert!(RegularizerConfig::parse("reset0").is_err());
        assert!(RegularizerConfig::parse("ln+").is_err());
        assert!(RegularizerConfig::parse("").is_err());
    }

    #[test]
    fn decay_mask_marks_exactly_the_hidden_weight_matrices() {
        let spec = build_critic_spec(
            &RegularizerConfig::parse("ln+wd0.01").unwrap(),
            &[4, 8, 8, 1],
        );
        let mut rng = rng::stream(0, 0);
        let params = ParamSet::init(&spec, &mut rng).unwrap();
        let layout = params.param_layout();
        let mask = build_decay_mask(&layout);
        let decayed: Vec<&ParamKind> = layout
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|((k, _), _)| k)
            .collect();
        assert_eq!(decayed.len(), 2);
        for kind in decayed {
            assert!(matches!(kind, ParamKind::Weight { last: false, .. }));
        }
        for ((kind, _), &m) in layout.iter().zip(&mask) {
            match kind {
                ParamKind::Weight { last, .. } => assert_eq!(m, !last),
                _ => assert!(!m, "non-weight {kind:?} must not decay"),
            }
        }
    }

    #[test]
    fn decay_mask_is_all_false_without_weight_kinds() {
        let layout = vec![
            (ParamKind::Bias { layer: 0 }, 8),
            (ParamKind::LnScale { layer: 0 }, 8),
            (ParamKind::LnBias { layer: 0 }, 8),
        ];
        assert_eq!(build_decay_mask(&layout), vec![false, false, false]);
    }

    #[test]
    fn reset_schedule_fires_on_positive_multiples_only() {
        let cfg = RegularizerConfig::parse("reset200000").unwrap();
        assert!(!reset_due(&cfg, 0));
        assert!(!reset_due(&cfg, 199_999));
        assert!(reset_due(&cfg, 200_000));
        assert!(!reset_due(&cfg, 200_001));
        assert!(reset_due(&cfg, 400_000));
        let plain = RegularizerConfig::default();
        assert!(!reset_due(&plain, 200_000));
    }
}
