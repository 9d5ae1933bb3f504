use serde::{Deserialize, Serialize};

use crate::contrastive::AnchorWeightMode;
use crate::error::{Error, Result};
use crate::rebalance::{Composition, RebalanceConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AblationVariant {
    Full,
    NoSSHM,
    NoCL,
    NoCLS,
    NoSS,
    NoHM,
    NoMI,
    NoDeltaBoth,
    NoDeltaCLS,
    NoDeltaCL,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 10] = [
        AblationVariant::Full,
        AblationVariant::NoSSHM,
        AblationVariant::NoCL,
        AblationVariant::NoCLS,
        AblationVariant::NoSS,
        AblationVariant::NoHM,
        AblationVariant::NoMI,
        AblationVariant::NoDeltaBoth,
        AblationVariant::NoDeltaCLS,
        AblationVariant::NoDeltaCL,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "Full",
            AblationVariant::NoSSHM => "NoSSHM",
            AblationVariant::NoCL => "NoCL",
            AblationVariant::NoCLS => "NoCLS",
            AblationVariant::NoSS => "NoSS",
            AblationVariant::NoHM => "NoHM",
            AblationVariant::NoMI => "NoMI",
            AblationVariant::NoDeltaBoth => "NoDeltaBoth",
            AblationVariant::NoDeltaCLS => "NoDeltaCLS",
            AblationVariant::NoDeltaCL => "NoDeltaCL",
        }
    }
}

impl std::fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown ablation variant {s:?}")))
    }
}

/// Hyperparameters of one training run. Unknown keys are rejected when
/// deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub tau: f64,
    pub mu: f64,
    pub lambda: f64,
    pub k: usize,
    pub m_pos: usize,
    pub m_neg: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: AblationVariant,
    pub embed_dim: usize,
    pub feat_dim: usize,
    pub hidden_dim: usize,
    pub proj_dim: usize,
    pub min_freq: usize,
    /// Full-batch steps for the post-hoc linear probe (NoCLS only).
    pub probe_steps: usize,
    pub probe_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            tau: 0.5,
            mu: 1.0,
            lambda: 0.5,
            k: 20,
            m_pos: 10,
            m_neg: 50,
            epochs: 10,
            seed: 0,
            ablation: AblationVariant::Full,
            embed_dim: 64,
            feat_dim: 64,
            hidden_dim: 128,
            proj_dim: 64,
            min_freq: 1,
            probe_steps: 200,
            probe_learning_rate: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_counts = [
            ("batch_size", self.batch_size),
            ("k", self.k),
            ("m_pos", self.m_pos),
            ("m_neg", self.m_neg),
            ("epochs", self.epochs),
            ("embed_dim", self.embed_dim),
            ("feat_dim", self.feat_dim),
            ("hidden_dim", self.hidden_dim),
            ("proj_dim", self.proj_dim),
            ("min_freq", self.min_freq),
            ("probe_steps", self.probe_steps),
        ];
        for (name, v) in positive_counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        let positive_reals = [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("lambda", self.lambda),
            ("probe_learning_rate", self.probe_learning_rate),
        ];
        for (name, v) in positive_reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.tau > 0.0 && self.tau <= 10.0) {
            return Err(Error::Config(format!("tau must lie in (0, 10], got {}", self.tau)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be non-negative, got {}", self.mu)));
        }
        Ok(())
    }

    pub fn flags(&self) -> PipelineFlags {
        apply_ablation(self, self.ablation)
    }
}

/// What a variant switches on or off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineFlags {
    pub cls_weight: f64,
    pub mu: f64,
    /// `None` leaves the rebalanced sets empty.
    pub composition: Option<Composition>,
    /// Prototypes are free parameters instead of projections of the classifier.
    pub free_prototypes: bool,
    pub delta_in_cls: bool,
    pub weight_mode: AnchorWeightMode,
    /// Evaluate through a post-hoc linear probe on frozen features.
    pub probe: bool,
}

impl PipelineFlags {
    pub fn uses_cl(&self) -> bool {
        self.mu > 0.0
    }

    pub fn rebalance_config(&self, cfg: &TrainConfig) -> Option<RebalanceConfig> {
        self.composition.map(|composition| RebalanceConfig {
            k: cfg.k,
            m_pos: cfg.m_pos,
            m_neg: cfg.m_neg,
            lambda: cfg.lambda,
            composition,
        })
    }
}

pub fn apply_ablation(cfg: &TrainConfig, variant: AblationVariant) -> PipelineFlags {
    let mut f = PipelineFlags {
        cls_weight: 1.0,
        mu: cfg.mu,
        composition: Some(Composition::Scheduled),
        free_prototypes: false,
        delta_in_cls: true,
        weight_mode: AnchorWeightMode::NegLogPrior,
        probe: false,
    };
    match variant {
        AblationVariant::Full => {}
        AblationVariant::NoSSHM => f.composition = None,
        AblationVariant::NoCL => f.mu = 0.0,
        AblationVariant::NoCLS => {
            f.cls_weight = 0.0;
            f.probe = true;
        }
        AblationVariant::NoSS => f.composition = Some(Composition::SyntheticOnly),
        AblationVariant::NoHM => f.composition = Some(Composition::SampledOnly),
        AblationVariant::NoMI => f.free_prototypes = true,
        AblationVariant::NoDeltaBoth => {
            f.delta_in_cls = false;
            f.weight_mode = AnchorWeightMode::Uniform;
        }
        AblationVariant::NoDeltaCLS => f.delta_in_cls = false,
        AblationVariant::NoDeltaCL => f.weight_mode = AnchorWeightMode::Uniform,
    }
    f
}
