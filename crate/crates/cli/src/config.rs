//! Run configuration: a TOML file overlaid by command-line flags.
//!
//! Every key is optional. Unknown keys are rejected. Relative `data` paths are
//! resolved against the directory holding the config file.
//!
//! ```toml
//! seed = 7
//! model = "edd"          # or "ste"
//! preset = "tiny"        # g3d | fntu | tiny, ignored when [edd] is given
//! loss = "l1"            # or "l2"
//! joint_order = "paper"  # or "disorder" (seeded by `seed`)
//! joints = "default"     # file joint ids: default | kinect-v1 | kinect-v2
//! recursive = false
//! out = "runs/tiny"
//! data = ["data/train"]
//!
//! [window]
//! window = 20
//! overlap = 5
//! input_len = 10
//! output_len = 10
//!
//! [train]
//! steps = 2000
//! batch_size = 1
//! checkpoint_every = 500
//! normalize = true
//! adam = { lr = 1e-4, beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8 }
//!
//! [synth]
//! kind = "noisy-sinusoid"
//! sequences = 25
//! length = 125
//! test_fraction = 0.2
//! params = { amplitude = 0.3, period = 25.0, noise_std = 0.01 }
//!
//! [gradcheck]
//! eps = 1e-4
//! tolerance = 1e-4
//! samples = 24
//! ```
//!
//! `[edd]` and `[ste]` tables take the full model configuration and replace
//! the preset.

use std::path::{Path, PathBuf};

use pisep_core::data::{JointSelection, WindowSpec};
use pisep_core::edd::EddConfig;
use pisep_core::loss::LossKind;
use pisep_core::optim::AdamConfig;
use pisep_core::repr::{make_disorder_order, JointOrder};
use pisep_core::ste::SteConfig;
use pisep_core::synth::{MotionKind, MotionParams};
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Edd,
    Ste,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OrderKind {
    Paper,
    Disorder,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub model: Option<ModelKind>,
    pub preset: Option<String>,
    pub edd: Option<EddConfig>,
    pub ste: Option<SteConfig>,
    pub loss: Option<LossKind>,
    pub joint_order: Option<OrderKind>,
    pub joints: Option<String>,
    pub recursive: Option<bool>,
    pub out: Option<PathBuf>,
    pub data: Vec<PathBuf>,
    pub window: Option<WindowSpec>,
    pub train: TrainSection,
    pub synth: SynthSection,
    pub gradcheck: GradSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    /// Steps between intermediate checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Fit a normalization on the training data.
    pub normalize: bool,
    pub adam: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 1,
            checkpoint_every: 500,
            normalize: true,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub kind: MotionKind,
    pub sequences: usize,
    pub length: usize,
    /// Fraction of sequences written to `test/`; 0 writes all to the output
    /// directory itself.
    pub test_fraction: f64,
    pub params: MotionParams,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            kind: MotionKind::NoisySinusoid,
            sequences: 25,
            length: 125,
            test_fraction: 0.0,
            params: MotionParams::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradSection {
    pub eps: f64,
    pub tolerance: f64,
    pub samples: usize,
}

impl Default for GradSection {
    fn default() -> Self {
        let d = pisep_core::gradcheck::GradCheckConfig::default();
        Self {
            eps: d.eps,
            tolerance: d.tolerance,
            samples: d.samples,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text)
            .map_err(|e| CliError::Config(format!("{}: {e}", origin.display())))?;
        let base = origin.parent().unwrap_or(Path::new(""));
        for p in &mut cfg.data {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, path)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn loss(&self) -> LossKind {
        self.loss.unwrap_or(LossKind::L1)
    }

    pub fn recursive(&self) -> bool {
        self.recursive.unwrap_or(false)
    }

    pub fn out(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("an output directory is required (--out or `out`)".into()))
    }

    pub fn joint_selection(&self) -> Result<JointSelection, CliError> {
        JointSelection::preset(self.joints.as_deref().unwrap_or("default")).map_err(CliError::config)
    }

    /// The requested joint order, if one was given.
    pub fn requested_order(&self) -> Option<JointOrder> {
        self.joint_order.map(|o| match o {
            OrderKind::Paper => JointOrder::paper(),
            OrderKind::Disorder => make_disorder_order(self.seed()),
        })
    }

    /// True when the model shape was given explicitly.
    pub fn model_requested(&self) -> bool {
        self.model.is_some() || self.preset.is_some() || self.edd.is_some() || self.ste.is_some()
    }

    pub fn model_config(&self) -> Result<pisep_core::checkpoint::ModelConfig, CliError> {
        use pisep_core::checkpoint::ModelConfig;
        let kind = self.model.unwrap_or(if self.ste.is_some() { ModelKind::Ste } else { ModelKind::Edd });
        let cfg = match kind {
            ModelKind::Edd => {
                if self.ste.is_some() {
                    return Err(CliError::Config("[ste] given but model is edd".into()));
                }
                let c = match (&self.edd, &self.preset) {
                    (Some(_), Some(_)) => {
                        return Err(CliError::Config("give either a preset or an [edd] table, not both".into()))
                    }
                    (Some(c), None) => *c,
                    (None, p) => EddConfig::preset(p.as_deref().unwrap_or("g3d")).map_err(CliError::config)?,
                };
                c.validate().map_err(CliError::config)?;
                ModelConfig::Edd(c)
            }
            ModelKind::Ste => {
                if self.edd.is_some() || self.preset.is_some() {
                    return Err(CliError::Config("presets and [edd] apply only to the edd model".into()));
                }
                let c = self.ste.clone().unwrap_or_default();
                c.validate().map_err(CliError::config)?;
                ModelConfig::Ste(c)
            }
        };
        Ok(cfg)
    }

    /// Window spec matching a model's input and output lengths.
    pub fn window_for(&self, input_len: usize, output_len: usize) -> Result<WindowSpec, CliError> {
        let spec = self.window.unwrap_or(WindowSpec {
            window: input_len + output_len,
            overlap: WindowSpec::default().overlap.min(input_len + output_len - 1),
            input_len,
            output_len,
        });
        spec.validate().map_err(CliError::config)?;
        if (spec.input_len, spec.output_len) != (input_len, output_len) {
            return Err(CliError::Config(format!(
                "window takes {} input and {} output frames but the model expects {input_len} and {output_len}",
                spec.input_len, spec.output_len
            )));
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example_parses() {
        let doc = include_str!("config.rs");
        let start = doc.find("```toml\n").unwrap() + 8;
        let end = start + doc[start..].find("//! ```").unwrap();
        let text: String = doc[start..end]
            .lines()
            .map(|l| l.strip_prefix("//! ").or(l.strip_prefix("//!")).unwrap_or(l))
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = RunConfig::from_toml(&text, Path::new("conf/run.toml")).unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.data, vec![PathBuf::from("conf/data/train")]);
        assert_eq!(cfg.train.checkpoint_every, 500);
        assert_eq!(cfg.synth.params.period, 25.0);
        assert!(cfg.model_config().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["sed = 1", "[train]\nstep = 3", "[window]\nstride = 15", "[synth.params]\nnoise = 0.1"] {
            assert!(RunConfig::from_toml(text, Path::new("x.toml")).is_err(), "{text}");
        }
    }

    #[test]
    fn preset_and_table_conflict() {
        let cfg = RunConfig::from_toml(
            "preset = \"tiny\"\n[edd]\ninput_len = 10\noutput_len = 10\nencoder_blocks = 1\ndecoder_blocks = 1\nchannels = 2\njoints = 18",
            Path::new("x.toml"),
        )
        .unwrap();
        assert!(cfg.model_config().is_err());
    }

    #[test]
    fn window_must_match_model() {
        let cfg = RunConfig::from_toml(
            "[window]\nwindow = 12\noverlap = 0\ninput_len = 6\noutput_len = 6",
            Path::new("x.toml"),
        )
        .unwrap();
        assert!(cfg.window_for(10, 10).is_err());
        assert!(cfg.window_for(6, 6).is_ok());
        assert_eq!(RunConfig::default().window_for(10, 10).unwrap(), WindowSpec::default());
    }
}
