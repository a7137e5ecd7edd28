//! Declarative network description and its JSON form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedules::{AffineSchedule, LambdaMode, PhaseSchedule, ScheduleConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tiny,
    Base,
    Custom,
}

/// How the channel and spatial gates are blended.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// `sigmoid(alpha) * A_c + sigmoid(beta) * A_s`.
    #[default]
    Additive,
    /// The additive gate divided by `sigmoid(alpha) + sigmoid(beta)`.
    Normalized,
}

pub const TINY_EXPANSIONS: [usize; 4] = [2, 2, 2, 2];
pub const BASE_EXPANSIONS: [usize; 4] = [2, 4, 6, 8];
pub const MAX_LAYERS: usize = 8;
/// Deepest halving of a block's output width inside its MBConv stack.
const MAX_HALVINGS: u32 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub variant: Variant,
    pub stem_out: usize,
    pub stage_channels: Vec<usize>,
    pub expansions: Vec<Vec<usize>>,
    pub layers_per_block: usize,
    pub channel_dropout_p: f64,
    pub classifier_hidden: usize,
    pub classifier_dropout: f64,
    pub num_classes: usize,
    pub fusion_mode: FusionMode,
    pub beta_schedule: AffineSchedule,
    pub phase_schedule: PhaseSchedule,
    pub lambda_mode: LambdaMode,
}

impl ArchConfig {
    fn with_pattern(variant: Variant, pattern: &[usize], num_classes: usize) -> Self {
        Self {
            variant,
            stem_out: 32,
            stage_channels: vec![64, 128, 256],
            expansions: vec![pattern.to_vec(); 3],
            layers_per_block: pattern.len(),
            channel_dropout_p: 0.1,
            classifier_hidden: 128,
            classifier_dropout: 0.2,
            num_classes,
            fusion_mode: FusionMode::default(),
            beta_schedule: AffineSchedule::BETA,
            phase_schedule: PhaseSchedule::default(),
            lambda_mode: LambdaMode::default(),
        }
    }

    pub fn tiny(num_classes: usize) -> Self {
        Self::with_pattern(Variant::Tiny, &TINY_EXPANSIONS, num_classes)
    }

    pub fn base(num_classes: usize) -> Self {
        Self::with_pattern(Variant::Base, &BASE_EXPANSIONS, num_classes)
    }

    /// Standard macro-architecture with one expansion pattern shared by all blocks.
    pub fn with_expansions(pattern: &[usize], num_classes: usize) -> Self {
        let variant = match pattern {
            p if p == TINY_EXPANSIONS => Variant::Tiny,
            p if p == BASE_EXPANSIONS => Variant::Base,
            _ => Variant::Custom,
        };
        Self::with_pattern(variant, pattern, num_classes)
    }

    pub fn schedule_config(&self) -> ScheduleConfig {
        ScheduleConfig {
            beta: self.beta_schedule,
            phase: self.phase_schedule,
            lambda_mode: self.lambda_mode,
        }
    }

    /// Input width of every block, starting with the stem output.
    pub fn block_inputs(&self) -> Vec<usize> {
        std::iter::once(self.stem_out)
            .chain(self.stage_channels.iter().copied())
            .take(self.stage_channels.len())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.stage_channels.is_empty() {
            return fail("at least one stage is required".into());
        }
        if self.expansions.len() != self.stage_channels.len() {
            return fail(format!(
                "{} expansion lists for {} stages",
                self.expansions.len(),
                self.stage_channels.len()
            ));
        }
        if !(1..=MAX_LAYERS).contains(&self.layers_per_block) {
            return fail(format!("layers_per_block {} outside 1..={MAX_LAYERS}", self.layers_per_block));
        }
        for (i, exps) in self.expansions.iter().enumerate() {
            if exps.len() != self.layers_per_block {
                return fail(format!(
                    "stage {i} lists {} expansions but layers_per_block is {}",
                    exps.len(),
                    self.layers_per_block
                ));
            }
            if exps.contains(&0) {
                return fail(format!("stage {i} has a zero expansion"));
            }
        }
        for &c in &self.stage_channels {
            channel_progression(c, self.layers_per_block)?;
        }
        if self.stem_out == 0 || self.classifier_hidden == 0 || self.num_classes < 2 {
            return fail("stem_out, classifier_hidden must be positive and num_classes at least 2".into());
        }
        for (name, p) in [
            ("channel_dropout_p", self.channel_dropout_p),
            ("classifier_dropout", self.classifier_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} {p} outside [0, 1)"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Expansion pattern of the first stage as `a-b-c-d`.
    pub fn pattern_label(&self) -> String {
        self.expansions
            .first()
            .map(|e| e.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("-"))
            .unwrap_or_default()
    }
}

/// Output widths of the MBConv layers of a block ending at `c_out`.
///
/// The last layer emits `c_out`; each earlier layer halves it, at most three
/// times: `[c/8, c/4, c/2, c]` for four layers, `[c/4, c/2, c]` for three.
pub fn channel_progression(c_out: usize, layers: usize) -> Result<Vec<usize>> {
    if layers == 0 {
        return Err(Error::Config("a block needs at least one layer".into()));
    }
    let halvings = ((layers - 1) as u32).min(MAX_HALVINGS);
    let div = 1usize << halvings;
    if c_out == 0 || !c_out.is_multiple_of(div) {
        return Err(Error::Config(format!(
            "block width {c_out} is not divisible by {div} for a {layers}-layer stack"
        )));
    }
    Ok((0..layers)
        .map(|i| {
            let h = ((layers - 1 - i) as u32).min(MAX_HALVINGS);
            c_out >> h
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn progressions() {
        assert_eq!(channel_progression(64, 4).unwrap(), vec![8, 16, 32, 64]);
        assert_eq!(channel_progression(64, 3).unwrap(), vec![16, 32, 64]);
        assert_eq!(channel_progression(64, 1).unwrap(), vec![64]);
        assert_eq!(channel_progression(64, 6).unwrap(), vec![8, 8, 8, 16, 32, 64]);
        assert!(channel_progression(60, 4).is_err());
    }

    #[test]
    fn presets() {
        let t = ArchConfig::tiny(10);
        assert_eq!(t.expansions, vec![vec![2, 2, 2, 2]; 3]);
        assert_eq!(t.block_inputs(), vec![32, 64, 128]);
        let b = ArchConfig::base(100);
        assert_eq!(b.expansions, vec![vec![2, 4, 6, 8]; 3]);
        assert_eq!(b.stage_channels, vec![64, 128, 256]);
        assert_eq!(ArchConfig::with_expansions(&[2, 4, 6, 8], 10), ArchConfig::base(10));
        t.validate().unwrap();
        b.validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_strictness() {
        let cfg = ArchConfig::base(10);
        let text = cfg.to_json().unwrap();
        assert_eq!(ArchConfig::from_json(&text).unwrap(), cfg);
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value["surprise"] = serde_json::json!(1);
        assert!(ArchConfig::from_json(&value.to_string()).is_err());
    }

    #[test]
    fn validation_errors() {
        let mut cfg = ArchConfig::tiny(10);
        cfg.expansions[1] = vec![2, 2, 2];
        assert!(cfg.validate().is_err());
        let mut cfg = ArchConfig::tiny(10);
        cfg.stage_channels[0] = 60;
        assert!(cfg.validate().is_err());
        let mut cfg = ArchConfig::tiny(10);
        cfg.channel_dropout_p = 1.0;
        assert!(cfg.validate().is_err());
    }
}
