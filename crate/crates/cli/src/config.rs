//! TOML run configuration.
//!
//! Every key except `master_seed` and `rounds` has a default; see the
//! section `Default` impls and the README for the full key list. Reals are read
//! as binary64 and rounded to binary32 when the run is built.

use std::path::PathBuf;

use psfedgan::attacker::AttackMode;
use psfedgan::channel::ChannelKind;
use psfedgan::data::{DatasetSpec, SplitKind, GLYPH_SIDE};
use psfedgan::gan::CGanConfig;
use psfedgan::nnkernel::{InitScheme, OptimizerKind};
use psfedgan::protocol::{AttackerSpec, ClassifierConfig, FederationConfig, RoundConfig, TrainerConfig};
use psfedgan::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub rounds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub gan: GanSection,
    #[serde(default)]
    pub round: RoundSection,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default, rename = "attacker", skip_serializing_if = "Vec::is_empty")]
    pub attackers: Vec<AttackerSection>,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum DatasetSection {
    Glyphs {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
    },
    Gaussian {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        spread: f64,
    },
    Idx {
        classes: usize,
        data_dim: usize,
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection::Glyphs {
            classes: 10,
            per_class: 300,
            test_per_class: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    /// split1, split2, split3, setup1 or custom.
    pub kind: String,
    pub users: usize,
    /// Class list per user, for `custom` only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assignment: Vec<Vec<usize>>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            kind: "split1".into(),
            users: 10,
            assignment: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanSection {
    pub z_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub leaky_slope: f64,
    pub batch_size: usize,
    pub d_steps_per_g_step: usize,
    pub gen_lr: f64,
    pub disc_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// zero_bias or uniform_bias.
    pub init: String,
    pub bias_range: f64,
}

impl Default for GanSection {
    fn default() -> Self {
        Self {
            z_dim: 16,
            gen_hidden: vec![128, 128],
            disc_hidden: vec![128, 128],
            leaky_slope: 0.2,
            batch_size: 64,
            d_steps_per_g_step: 1,
            gen_lr: 2e-4,
            disc_lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            init: "zero_bias".into(),
            bias_range: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundSection {
    /// 0 selects one local epoch.
    pub steps_per_round: usize,
    pub synth_per_user: usize,
    pub cloud_fraction: f64,
    pub classifier_epochs: usize,
}

impl Default for RoundSection {
    fn default() -> Self {
        Self {
            steps_per_round: 0,
            synth_per_user: 200,
            cloud_fraction: 0.01,
            classifier_epochs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let c = ClassifierConfig::default();
        Self {
            hidden: c.hidden,
            learning_rate: widen(c.learning_rate),
            batch_size: c.batch_size,
            pretrain_epochs: c.pretrain_epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    /// ideal or quantized.
    pub kind: String,
    pub bits: u32,
    pub clip: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            kind: "ideal".into(),
            bits: 16,
            clip: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSection {
    pub user: u32,
    /// weight_scale, bias_scale or oracle.
    pub mode: String,
    #[serde(default = "one")]
    pub r: f64,
}

/// The decimal an `f32` prints as, read back as `f64`, so defaults taken from
/// the core crate serialize as `0.001` rather than `0.0010000000474974513`.
fn widen(x: f32) -> f64 {
    x.to_string().parse().expect("f32 display is a valid f64")
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub probe_size: usize,
    pub judge_epochs: usize,
    pub sync_check: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            probe_size: 200,
            judge_epochs: 20,
            sync_check: false,
        }
    }
}

/// A parse failure with its 1-based position, when known.
#[derive(Debug)]
pub struct ParseError {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

pub fn parse(text: &str) -> std::result::Result<RunConfig, ParseError> {
    toml::from_str(text).map_err(|e| {
        let pos = e.span().map(|s| line_col(text, s.start));
        ParseError {
            line: pos.map(|p| p.0),
            column: pos.map(|p| p.1),
            message: e.message().to_string(),
        }
    })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.chars().rev().take_while(|&c| c != '\n').count() + 1;
    (line, col)
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn federation(&self, threads: usize) -> Result<FederationConfig> {
        let (dataset, num_classes, data_dim) = match &self.dataset {
            DatasetSection::Glyphs {
                classes,
                per_class,
                test_per_class,
            } => (
                DatasetSpec::Glyphs {
                    classes: *classes,
                    per_class: *per_class,
                    test_per_class: *test_per_class,
                },
                *classes,
                GLYPH_SIDE * GLYPH_SIDE,
            ),
            DatasetSection::Gaussian {
                classes,
                per_class,
                test_per_class,
                spread,
            } => (
                DatasetSpec::GaussianMixture {
                    classes: *classes,
                    per_class: *per_class,
                    test_per_class: *test_per_class,
                    spread: *spread as f32,
                },
                *classes,
                2,
            ),
            DatasetSection::Idx {
                classes,
                data_dim,
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => (
                DatasetSpec::Idx {
                    train_images: train_images.clone(),
                    train_labels: train_labels.clone(),
                    test_images: test_images.clone(),
                    test_labels: test_labels.clone(),
                },
                *classes,
                *data_dim,
            ),
        };
        let split = match self.split.kind.as_str() {
            "split1" => SplitKind::Split1,
            "split2" => SplitKind::Split2,
            "split3" => SplitKind::Split3,
            "setup1" => SplitKind::Setup1,
            "custom" => SplitKind::Custom(self.split.assignment.clone()),
            other => return Err(Error::config(format!("unknown split kind {other:?}"))),
        };
        if !matches!(split, SplitKind::Custom(_)) && !self.split.assignment.is_empty() {
            return Err(Error::config("split.assignment is only valid with kind = \"custom\""));
        }
        let g = &self.gan;
        let mut gan = CGanConfig::mlp(
            g.z_dim,
            num_classes,
            data_dim,
            &g.gen_hidden,
            &g.disc_hidden,
            g.leaky_slope as f32,
            g.batch_size,
        );
        gan.d_steps_per_g_step = g.d_steps_per_g_step;
        let init = match g.init.as_str() {
            "zero_bias" => InitScheme::GlorotZeroBias,
            "uniform_bias" => InitScheme::GlorotUniformBias(g.bias_range as f32),
            other => return Err(Error::config(format!("unknown init {other:?}"))),
        };
        let adam = OptimizerKind::Adam {
            beta1: g.beta1 as f32,
            beta2: g.beta2 as f32,
            eps: 1e-8,
        };
        let channel = match self.channel.kind.as_str() {
            "ideal" => ChannelKind::Ideal,
            "quantized" => ChannelKind::Quantized {
                bits: self.channel.bits,
                clip: self.channel.clip as f32,
            },
            other => return Err(Error::config(format!("unknown channel kind {other:?}"))),
        };
        let attackers = self
            .attackers
            .iter()
            .map(|a| {
                Ok(AttackerSpec {
                    target_user: a.user,
                    mode: a.mode.parse::<AttackMode>()?,
                    r: a.r as f32,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = FederationConfig {
            master_seed: self.master_seed,
            dataset,
            split,
            num_users: self.split.users,
            gan,
            trainer: TrainerConfig {
                init,
                gen_optimizer: adam,
                gen_lr: g.gen_lr as f32,
                disc_optimizer: adam,
                disc_lr: g.disc_lr as f32,
            },
            round: RoundConfig {
                steps_per_round: self.round.steps_per_round,
                synth_per_user: self.round.synth_per_user,
                cloud_fraction: self.round.cloud_fraction,
                classifier_epochs_per_round: self.round.classifier_epochs,
            },
            classifier: ClassifierConfig {
                hidden: self.classifier.hidden.clone(),
                learning_rate: self.classifier.learning_rate as f32,
                batch_size: self.classifier.batch_size,
                pretrain_epochs: self.classifier.pretrain_epochs,
            },
            channel,
            attackers,
            rounds: self.rounds,
            probe_size: self.eval.probe_size,
            judge_epochs: self.eval.judge_epochs,
            sync_check: self.eval.sync_check,
            threads,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
