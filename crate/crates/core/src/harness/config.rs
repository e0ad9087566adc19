use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::SmoothL1Reduction;
use crate::backbone::VitConfig;
use crate::datapipe::{AugmentConfig, BatchSpec};
use crate::error::{Error, Result};
use crate::evaluator::DistanceMetric;
use crate::objectives::ObjectiveConfig;
use crate::selection::TokenSelection;
use crate::spectral::{AlphaMode, FmaConfig};

/// Which parts of the two-stream model are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Single-stream ViT.
    Baseline,
    /// Second stream sees the high-pass image only; all tokens, no equilibrium term.
    PureHf,
    /// Adds spectral mixing.
    Fma,
    /// Adds top-Z token selection.
    Ods,
    /// Adds the equilibrium term: the complete model.
    Full,
}

impl Stage {
    pub const LADDER: [Stage; 5] = [Stage::Baseline, Stage::PureHf, Stage::Fma, Stage::Ods, Stage::Full];

    /// Row label as it appears in ablation tables.
    pub fn label(self) -> &'static str {
        match self {
            Stage::Baseline => "baseline",
            Stage::PureHf => "pure_hf",
            Stage::Fma => "+FMA",
            Stage::Ods => "+ODS",
            Stage::Full => "+L_F",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().trim_start_matches('+') {
            "baseline" => Stage::Baseline,
            "pure_hf" | "pure-hf" => Stage::PureHf,
            "fma" => Stage::Fma,
            "ods" => Stage::Ods,
            "full" | "l_f" | "lf" => Stage::Full,
            other => return Err(Error::Config(format!("unknown stage {other:?}"))),
        })
    }

    pub fn uses_high_frequency(self) -> bool {
        self != Stage::Baseline
    }
}

/// Every training knob, flat so it round-trips through a `key = value` file.
/// Defaults are the full-scale settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub stage: Stage,

    pub image_height: usize,
    pub image_width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,

    pub lr: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub p: usize,
    pub k: usize,

    pub mu: f64,
    pub lambda: f64,
    pub margin: f64,
    pub label_smoothing: f64,
    pub reduction: SmoothL1Reduction,
    /// Batch-norm layer between the class feature and the classifier.
    pub neck: bool,

    pub cutoff: f64,
    pub max_rotation: f64,
    pub jitter: f64,
    pub jitter_prob: f64,
    pub pad: usize,

    pub metric: DistanceMetric,
    /// Evaluate every this many epochs (and after the last); 0 disables snapshots.
    pub eval_every: usize,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Stop once a snapshot measures training-set Rank-1 of 1.0.
    pub stop_at_train_rank1: bool,
    /// Threads preparing augmented views.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let vit = VitConfig::base();
        let obj = ObjectiveConfig::default();
        TrainConfig {
            seed: 0,
            stage: Stage::Full,
            image_height: vit.image_height,
            image_width: vit.image_width,
            patch_size: vit.patch_size,
            embed_dim: vit.embed_dim,
            depth: vit.depth,
            heads: vit.heads,
            mlp_ratio: vit.mlp_ratio,
            lr: 0.001,
            epochs: 150,
            warmup_epochs: 0,
            momentum: 0.9,
            weight_decay: 1e-4,
            grad_clip: 0.0,
            p: BatchSpec::STANDARD.p,
            k: BatchSpec::STANDARD.k,
            mu: 0.5,
            lambda: obj.lambda,
            margin: obj.margin,
            label_smoothing: obj.label_smoothing,
            reduction: obj.reduction,
            neck: false,
            cutoff: crate::spectral::DEFAULT_CUTOFF,
            max_rotation: 15.0,
            jitter: 0.2,
            jitter_prob: 0.5,
            pad: 10,
            metric: DistanceMetric::default(),
            eval_every: 10,
            checkpoint_every: 0,
            stop_at_train_rank1: false,
            workers: 1,
        }
    }
}

impl TrainConfig {
    /// Tiny CPU setting: 64×64 input, D=32, two layers. Trained from scratch,
    /// so the step size is larger than the full-scale default and the
    /// batch-norm neck is on (without it the triplet term collapses every
    /// feature onto one point before the classifier has learned anything).
    pub fn toy() -> Self {
        let mut c = Self::default().with_model(VitConfig::toy());
        c.lr = 0.05;
        c.neck = true;
        c.epochs = 60;
        c.pad = 4;
        c.eval_every = 10;
        c
    }

    /// 64×64 input with a mid-sized encoder.
    pub fn desk() -> Self {
        let mut c = Self::default().with_model(VitConfig::desk());
        c.lr = 0.02;
        c.neck = true;
        c.pad = 4;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "base" | "full" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            "toy" => Ok(Self::toy()),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }

    pub fn with_model(mut self, v: VitConfig) -> Self {
        self.image_height = v.image_height;
        self.image_width = v.image_width;
        self.patch_size = v.patch_size;
        self.embed_dim = v.embed_dim;
        self.depth = v.depth;
        self.heads = v.heads;
        self.mlp_ratio = v.mlp_ratio;
        self
    }

    pub fn model(&self) -> VitConfig {
        VitConfig {
            image_height: self.image_height,
            image_width: self.image_width,
            patch_size: self.patch_size,
            embed_dim: self.embed_dim,
            depth: self.depth,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
        }
    }

    pub fn batch(&self) -> BatchSpec {
        BatchSpec { p: self.p, k: self.k }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            lambda: if self.stage == Stage::Full { self.lambda } else { 0.0 },
            margin: self.margin,
            label_smoothing: self.label_smoothing,
            reduction: self.reduction,
        }
    }

    pub fn selection(&self) -> TokenSelection {
        match self.stage {
            Stage::Ods | Stage::Full => TokenSelection::TopZ(self.mu),
            _ => TokenSelection::All,
        }
    }

    pub fn fma(&self) -> FmaConfig {
        match self.stage {
            Stage::PureHf | Stage::Baseline => FmaConfig::pure_high_pass(self.cutoff),
            _ => FmaConfig {
                cutoff_fraction: self.cutoff,
                alpha: AlphaMode::Random,
                ..FmaConfig::default()
            },
        }
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            height: self.image_height,
            width: self.image_width,
            max_rotation: self.max_rotation,
            jitter: self.jitter,
            jitter_prob: self.jitter_prob,
            pad: self.pad,
            fma: self.fma(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.batch().validate()?;
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.warmup_epochs >= self.epochs && self.warmup_epochs > 0 {
            return bad("warmup_epochs must be below epochs");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must lie in [0, 1) and weight_decay be non-negative");
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return bad("grad_clip must be non-negative (0 disables it)");
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return bad("mu must lie in (0, 1]");
        }
        if self.lambda < 0.0 || self.margin < 0.0 {
            return bad("lambda and margin must be non-negative");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must lie in [0, 1)");
        }
        if !(self.cutoff > 0.0 && self.cutoff < 1.0) {
            return bad("cutoff must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.jitter_prob) || !(0.0..1.0).contains(&self.jitter) {
            return bad("jitter must lie in [0, 1) and jitter_prob in [0, 1]");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serialises")
    }

    /// Parses `key = value` text; missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file on top of `base`, then applies `key=value` overrides.
    pub fn load_with(base: Self, path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&base.to_toml()).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let file: toml::Table =
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            table.extend(file);
        }
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let key = key.trim();
            let parsed: toml::Table = toml::from_str(&format!("v = {}", value.trim()))
                .or_else(|_| toml::from_str(&format!("v = {:?}", value.trim())))
                .map_err(|e| Error::Config(format!("override {o:?}: {e}")))?;
            table.insert(key.to_string(), parsed["v"].clone());
        }
        let c: TrainConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}
