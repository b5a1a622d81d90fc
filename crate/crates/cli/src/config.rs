//! Run configuration file (TOML) and command-line overrides.
//!
//! Every table rejects unknown keys, so a misspelt option is an error rather
//! than a silently ignored line. Missing keys take the defaults below.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gorqat::data::Provenance;
use gorqat::dynamics::{LossScript, Variant};
use gorqat::losses::{Distance, KdConfig};
use gorqat::quant::{QuantConfig, DEFAULT_ACT_MOMENTUM, DEFAULT_WARMUP_BATCHES};
use gorqat::regularizer::DEFAULT_ALPHA_LR;
use gorqat::train::{Mode, TrainConfig};
use gorqat::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: Provenance,
    pub train: TrainSection,
    pub sweep: SweepSection,
    pub dynamics: DynamicsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: Provenance::Blobs {
                k: 2,
                n: 2000,
                sigma: 0.9,
                seed: 7,
                dim: 2,
                radius: 2.0,
            },
            train: TrainSection::default(),
            sweep: SweepSection::default(),
            dynamics: DynamicsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// One of ptq_eval, qat_only, qat_kd_static, qat_kd_gor, qat_ekd_gor.
    pub mode: String,
    /// Static distillation weight, only for qat_kd_static.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub widths: Vec<usize>,
    pub eta_theta: f64,
    pub momentum: f64,
    pub eta_alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub wbits: u8,
    pub abits: u8,
    pub act_momentum: f64,
    pub warmup_batches: usize,
    pub exempt_first_last: bool,
    pub clip_gradient: bool,
    pub tau: f64,
    pub distance: Distance,
    pub tau_squared: bool,
    pub learnable_tau: bool,
    /// Teacher checkpoint files, in ensemble order.
    pub teachers: Vec<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            mode: "qat_kd_gor".into(),
            alpha: None,
            widths: d.widths,
            eta_theta: d.lr_theta,
            momentum: d.momentum,
            eta_alpha: DEFAULT_ALPHA_LR,
            epochs: d.epochs,
            batch_size: d.batch_size,
            seed: d.seed,
            wbits: 4,
            abits: 4,
            act_momentum: DEFAULT_ACT_MOMENTUM,
            warmup_batches: DEFAULT_WARMUP_BATCHES,
            exempt_first_last: false,
            clip_gradient: true,
            tau: d.kd.temperature,
            distance: Distance::KlOnSoftmax,
            tau_squared: true,
            learnable_tau: false,
            teachers: Vec::new(),
        }
    }
}

impl TrainSection {
    pub fn mode(&self) -> Result<Mode, Error> {
        Ok(match self.mode.as_str() {
            "ptq_eval" => Mode::PtqEval,
            "qat_only" => Mode::QatOnly,
            "qat_kd_static" => Mode::QatKdStatic {
                alpha: self
                    .alpha
                    .ok_or_else(|| Error::Config("qat_kd_static needs alpha".into()))?,
            },
            "qat_kd_gor" => Mode::QatKdGor,
            "qat_ekd_gor" => Mode::QatEkdGor {
                teachers: self.teachers.len(),
            },
            other => return Err(Error::Config(format!("unknown mode {other:?}"))),
        })
    }

    pub fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut quant = QuantConfig::new(self.wbits, self.abits);
        quant.act_momentum = self.act_momentum;
        quant.warmup_batches = self.warmup_batches;
        quant.exempt_first_last = self.exempt_first_last;
        quant.clip_gradient = self.clip_gradient;
        let cfg = TrainConfig {
            mode: self.mode()?,
            widths: self.widths.clone(),
            lr_theta: self.eta_theta,
            momentum: self.momentum,
            lr_alpha: self.eta_alpha,
            kd: KdConfig {
                temperature: self.tau,
                distance: self.distance,
                tau_squared: self.tau_squared,
                learnable_tau: self.learnable_tau,
            },
            quant,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub grid: Vec<f64>,
    /// Number of seeds, counting up from `train.seed`.
    pub seeds: usize,
    pub include_gor: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            grid: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            seeds: 5,
            include_gor: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantChoice {
    Gor,
    SingleScalar,
    Both,
}

impl VariantChoice {
    pub fn variants(self) -> Vec<Variant> {
        match self {
            Self::Gor => vec![Variant::Gor],
            Self::SingleScalar => vec![Variant::SingleScalar],
            Self::Both => vec![Variant::Gor, Variant::SingleScalar],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    pub alpha_task: f64,
    pub alpha_kd: f64,
    pub eta_alpha: f64,
    pub steps: usize,
    pub variant: VariantChoice,
    pub script: LossScript,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basin: Option<BasinSection>,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        Self {
            alpha_task: 1.0,
            alpha_kd: 1.0,
            eta_alpha: 1e-2,
            steps: 10_000,
            variant: VariantChoice::Both,
            script: LossScript::constant(4.0, 1.0),
            basin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasinSection {
    /// Log-spaced axis shared by both scalars.
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Residual threshold for the reported converged fraction.
    pub tolerance: f64,
}

impl Default for BasinSection {
    fn default() -> Self {
        Self {
            lo: 0.1,
            hi: 10.0,
            points: 5,
            tolerance: 0.05,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()).into())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration is always representable in TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "[train]\nepochz = 3\n",
            "[trian]\nepochs = 3\n",
            "[dynamics.script]\nkind = \"constant\"\nloss_task = 1.0\nloss_kd = 1.0\nextra = 2\n",
        ] {
            let err = RunConfig::parse(text).unwrap_err();
            assert!(matches!(err.downcast_ref::<Error>(), Some(Error::Config(_))), "{text}: {err}");
        }
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let mut cfg = RunConfig::parse(
            "[train]\nmode = \"qat_kd_static\"\nalpha = 0.25\nwbits = 8\n\
             [dynamics]\nbasin = { points = 3 }\n\
             [dynamics.script]\nkind = \"piecewise\"\n\
             segments = [{ step = 0, loss_task = 1.0, loss_kd = 2.0 }, { step = 10, loss_task = 3.0, loss_kd = 1.0 }]\n",
        )
        .unwrap();
        cfg.train.teachers = vec!["a.ckpt".into()];
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        let t = cfg.train.resolve().unwrap();
        assert_eq!(t.mode, Mode::QatKdStatic { alpha: 0.25 });
        assert_eq!(t.quant.wbits, 8);
    }

    #[test]
    fn static_mode_without_alpha_is_a_config_error() {
        let cfg = RunConfig::parse("[train]\nmode = \"qat_kd_static\"\n").unwrap();
        assert!(matches!(cfg.train.resolve(), Err(Error::Config(_))));
        let cfg = RunConfig::parse("[train]\nmode = \"distill\"\n").unwrap();
        assert!(matches!(cfg.train.resolve(), Err(Error::Config(_))));
    }
}
