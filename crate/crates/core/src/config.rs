//! Model variants and hyperparameters, and the flat `key = value` config
//! file format.
//!
//! Variant names follow the permutation scheme
//! `{baseline|attn}_{char|3}[_tropetrip[-500]][_{ks|rw}-mem][_ndialogN]`,
//! e.g. `attn_3_tropetrip-500_ks-mem_ndialog16`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;
use crate::error::{AmnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    /// Single snippet, no inter-snippet encoder.
    Baseline,
    Attn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Character lines only: the mixture is forced to `(1, 0, 0)`.
    Char,
    /// Character lines, context, and other characters' lines.
    Three,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TropeTrip {
    Off,
    On,
    /// Description vectors pass through a learned projection first.
    On500,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryKind {
    None,
    Ks,
    Rw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginMode {
    Fixed,
    /// Trainable, clamped to at least [`LEARNABLE_MARGIN_FLOOR`].
    Learnable,
}

pub const LEARNABLE_MARGIN_FLOOR: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaMode {
    Learnable,
    /// Loss weights frozen at uniform over the active set.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Average,
    Single,
    Complete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Cosine,
    Euclidean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    None,
}

macro_rules! keyword_enum {
    ($ty:ty { $($text:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = AmnError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(AmnError::Config(format!(
                        "unknown {} `{other}`", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

keyword_enum!(MarginMode { "fixed" => MarginMode::Fixed, "learnable" => MarginMode::Learnable });
keyword_enum!(BetaMode { "learnable" => BetaMode::Learnable, "uniform" => BetaMode::Uniform });
keyword_enum!(Linkage {
    "average" => Linkage::Average,
    "single" => Linkage::Single,
    "complete" => Linkage::Complete,
});
keyword_enum!(Distance { "cosine" => Distance::Cosine, "euclidean" => Distance::Euclidean });
keyword_enum!(Activation { "tanh" => Activation::Tanh, "none" => Activation::None });

/// Everything that defines a model and its training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub attention: AttentionMode,
    pub input: InputMode,
    pub tropetrip: TropeTrip,
    pub memory: MemoryKind,
    pub n_diag: usize,

    pub vocab_size: usize,
    pub seq_len: usize,
    pub d_emb: usize,
    pub d_h: usize,
    pub d_a: usize,
    pub d_v: usize,
    pub n_hop: usize,
    pub mem_size: usize,
    pub top_k: usize,
    pub desc_proj_dim: usize,

    pub margin_t: f64,
    pub margin_mt: f64,
    pub margin_mr: f64,
    pub margin_mode: MarginMode,
    pub beta_mode: BetaMode,

    pub share_streams: bool,
    pub inter_recurrence: bool,
    pub attn_activation: Activation,
    pub init_scale: f64,

    pub adam: AdamConfig,
    pub epochs: usize,
    pub seed: u64,

    pub linkage: Linkage,
    pub distance: Distance,
    pub pretrained_embeddings: Option<String>,
}

impl Default for VariantConfig {
    /// Full-scale `attn_3`.
    fn default() -> Self {
        VariantConfig {
            attention: AttentionMode::Attn,
            input: InputMode::Three,
            tropetrip: TropeTrip::Off,
            memory: MemoryKind::None,
            n_diag: 8,
            vocab_size: 20000,
            seq_len: 64,
            d_emb: 300,
            d_h: 200,
            d_a: 100,
            d_v: 200,
            n_hop: 1,
            mem_size: 150,
            top_k: 8,
            desc_proj_dim: 500,
            margin_t: 0.2,
            margin_mt: 0.2,
            margin_mr: 0.2,
            margin_mode: MarginMode::Fixed,
            beta_mode: BetaMode::Learnable,
            share_streams: false,
            inter_recurrence: true,
            attn_activation: Activation::Tanh,
            init_scale: 0.08,
            adam: AdamConfig::default(),
            epochs: 30,
            seed: 0,
            linkage: Linkage::Average,
            distance: Distance::Cosine,
            pretrained_embeddings: None,
        }
    }
}

/// The structural part of a variant name.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariantName {
    pub attention: AttentionMode,
    pub input: InputMode,
    pub tropetrip: TropeTrip,
    pub memory: MemoryKind,
    pub n_diag: Option<usize>,
}

impl FromStr for VariantName {
    type Err = AmnError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || AmnError::Config(format!("malformed variant name `{s}`"));
        let mut parts = s.split('_');
        let attention = match parts.next() {
            Some("baseline") => AttentionMode::Baseline,
            Some("attn") => AttentionMode::Attn,
            _ => return Err(bad()),
        };
        let input = match parts.next() {
            Some("char") => InputMode::Char,
            Some("3") => InputMode::Three,
            _ => return Err(bad()),
        };
        let mut name = VariantName {
            attention,
            input,
            tropetrip: TropeTrip::Off,
            memory: MemoryKind::None,
            n_diag: None,
        };
        // Optional parts must appear in this order, at most once each.
        let mut stage = 0;
        for part in parts {
            let (next, apply): (usize, Box<dyn FnOnce(&mut VariantName)>) = match part {
                "tropetrip" => (1, Box::new(|n| n.tropetrip = TropeTrip::On)),
                "tropetrip-500" => (1, Box::new(|n| n.tropetrip = TropeTrip::On500)),
                "ks-mem" => (2, Box::new(|n| n.memory = MemoryKind::Ks)),
                "rw-mem" => (2, Box::new(|n| n.memory = MemoryKind::Rw)),
                p if p.starts_with("ndialog") => {
                    let n: usize = p["ndialog".len()..].parse().map_err(|_| bad())?;
                    (3, Box::new(move |v| v.n_diag = Some(n)))
                }
                _ => return Err(bad()),
            };
            if next <= stage {
                return Err(bad());
            }
            stage = next;
            apply(&mut name);
        }
        Ok(name)
    }
}

impl VariantConfig {
    /// The smallest configuration used by gradient checks.
    pub fn tiny() -> Self {
        VariantConfig {
            n_diag: 2,
            vocab_size: 50,
            seq_len: 6,
            d_emb: 8,
            d_h: 8,
            d_a: 4,
            d_v: 6,
            n_hop: 2,
            mem_size: 10,
            top_k: 3,
            desc_proj_dim: 5,
            ..VariantConfig::default()
        }
    }

    pub fn set_variant(&mut self, name: VariantName) {
        self.attention = name.attention;
        self.input = name.input;
        self.tropetrip = name.tropetrip;
        self.memory = name.memory;
        self.n_diag = match (name.attention, name.n_diag) {
            (AttentionMode::Baseline, _) => 1,
            (AttentionMode::Attn, Some(n)) => n,
            (AttentionMode::Attn, None) => 8,
        };
    }

    pub fn with_variant(mut self, name: &str) -> Result<Self> {
        self.set_variant(name.parse()?);
        Ok(self)
    }

    pub fn variant_name(&self) -> String {
        let mut s = match self.attention {
            AttentionMode::Baseline => "baseline".to_string(),
            AttentionMode::Attn => "attn".to_string(),
        };
        s.push_str(match self.input {
            InputMode::Char => "_char",
            InputMode::Three => "_3",
        });
        s.push_str(match self.tropetrip {
            TropeTrip::Off => "",
            TropeTrip::On => "_tropetrip",
            TropeTrip::On500 => "_tropetrip-500",
        });
        s.push_str(match self.memory {
            MemoryKind::None => "",
            MemoryKind::Ks => "_ks-mem",
            MemoryKind::Rw => "_rw-mem",
        });
        if self.attention == AttentionMode::Attn && self.n_diag != 8 {
            s.push_str(&format!("_ndialog{}", self.n_diag));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(AmnError::Config(m));
        if self.attention == AttentionMode::Baseline && self.n_diag != 1 {
            return err(format!("baseline requires n_diag = 1, got {}", self.n_diag));
        }
        if self.n_diag == 0 {
            return err("n_diag must be at least 1".into());
        }
        for (name, v) in [
            ("seq_len", self.seq_len),
            ("d_emb", self.d_emb),
            ("d_h", self.d_h),
            ("d_a", self.d_a),
            ("d_v", self.d_v),
            ("n_hop", self.n_hop),
            ("desc_proj_dim", self.desc_proj_dim),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if self.vocab_size < 3 {
            return err(format!("vocab_size {} is too small", self.vocab_size));
        }
        if self.top_k == 0 || self.top_k > self.mem_size {
            return err(format!(
                "top_k must satisfy 1 <= top_k <= mem_size, got {} and {}",
                self.top_k, self.mem_size
            ));
        }
        for (name, m) in [
            ("margin_t", self.margin_t),
            ("margin_mt", self.margin_mt),
            ("margin_mr", self.margin_mr),
        ] {
            if !(m >= 0.0 && m.is_finite()) {
                return err(format!("{name} must be a non-negative number"));
            }
        }
        if !(self.adam.lr > 0.0) || !(self.init_scale > 0.0) {
            return err("lr and init_scale must be positive".into());
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = VariantConfig::default();
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                AmnError::Config(format!("line {}: expected `key = value`", i + 1))
            })?;
            pairs.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        // The variant sets n_diag, so it is applied before explicit keys.
        if let Some((_, _, v)) = pairs.iter().find(|(_, k, _)| k == "variant") {
            cfg.set_variant(v.parse()?);
        }
        for (line, key, value) in &pairs {
            cfg.set(key, value)
                .map_err(|e| AmnError::Config(format!("line {line}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| AmnError::Config(format!("invalid value `{v}` for {key}")))
        }
        match key {
            "variant" => {}
            "n_diag" => self.n_diag = num(key, value)?,
            "vocab_size" => self.vocab_size = num(key, value)?,
            "seq_len" => self.seq_len = num(key, value)?,
            "d_emb" => self.d_emb = num(key, value)?,
            "d_h" => self.d_h = num(key, value)?,
            "d_a" => self.d_a = num(key, value)?,
            "d_v" => self.d_v = num(key, value)?,
            "n_hop" => self.n_hop = num(key, value)?,
            "mem_size" => self.mem_size = num(key, value)?,
            "top_k" => self.top_k = num(key, value)?,
            "desc_proj_dim" => self.desc_proj_dim = num(key, value)?,
            "margin_t" => self.margin_t = num(key, value)?,
            "margin_mt" => self.margin_mt = num(key, value)?,
            "margin_mr" => self.margin_mr = num(key, value)?,
            "margin_mode" => self.margin_mode = value.parse()?,
            "beta_mode" => self.beta_mode = value.parse()?,
            "share_streams" => self.share_streams = num(key, value)?,
            "inter_recurrence" => self.inter_recurrence = num(key, value)?,
            "attn_activation" => self.attn_activation = value.parse()?,
            "init_scale" => self.init_scale = num(key, value)?,
            "lr" => self.adam.lr = num(key, value)?,
            "beta1" => self.adam.beta1 = num(key, value)?,
            "beta2" => self.adam.beta2 = num(key, value)?,
            "adam_eps" => self.adam.eps = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "linkage" => self.linkage = value.parse()?,
            "distance" => self.distance = value.parse()?,
            "pretrained_embeddings" => self.pretrained_embeddings = Some(value.to_string()),
            other => return Err(AmnError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn uses_memory(&self) -> bool {
        self.memory != MemoryKind::None
    }

    /// Width of the persona representation and of every stream summary.
    pub fn persona_dim(&self) -> usize {
        2 * self.d_h
    }
}

impl fmt::Display for VariantConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.variant_name())
    }
}

/// Every structural variant, each with the given `n_diag` for attention
/// models.
pub fn variant_matrix(n_diag: usize) -> Vec<VariantName> {
    let mut out = Vec::new();
    for attention in [AttentionMode::Baseline, AttentionMode::Attn] {
        for input in [InputMode::Char, InputMode::Three] {
            for tropetrip in [TropeTrip::Off, TropeTrip::On, TropeTrip::On500] {
                for memory in [MemoryKind::None, MemoryKind::Ks, MemoryKind::Rw] {
                    out.push(VariantName {
                        attention,
                        input,
                        tropetrip,
                        memory,
                        n_diag: Some(n_diag),
                    });
                }
            }
        }
    }
    out
}
