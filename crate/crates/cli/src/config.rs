//! Run configuration.
//!
//! The config file is plain text, one `key = value` per line; `#` starts a
//! comment and blank lines are ignored. Keys are the field names below, in
//! `snake_case` or `kebab-case`. Command-line flags override file values.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adamw,
}

impl FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adamw" => Ok(Self::Adamw),
            other => Err(format!("unknown optimizer `{other}` (expected sgd or adamw)")),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adamw => "adamw",
        })
    }
}

macro_rules! run_config {
    ($( $(#[doc = $doc:literal])* $field:ident : $ty:ty = $default:expr; )*) => {
        /// Every tunable of a run; paths are kept separately in [`Paths`].
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        pub struct RunConfig {
            $( $(#[doc = $doc])* pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($field), )*];

            /// Sets one field from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
                let key = key.trim().replace('-', "_");
                let value = value.trim();
                match key.as_str() {
                    $( stringify!($field) => {
                        self.$field = value.parse::<$ty>().map_err(|e| {
                            CliError::Config(format!("bad value `{value}` for `{key}`: {e}"))
                        })?;
                    } )*
                    _ => return Err(CliError::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            /// `key = value` lines in declaration order.
            pub fn to_kv(&self) -> String {
                let mut s = String::new();
                $( s.push_str(&format!("{} = {}\n", stringify!($field), self.$field)); )*
                s
            }
        }

        /// Flag overrides, one per [`RunConfig`] field.
        #[derive(Clone, Debug, Default, clap::Args)]
        pub struct ConfigArgs {
            $( $(#[doc = $doc])* #[arg(long)] pub $field: Option<$ty>, )*
        }

        impl ConfigArgs {
            pub fn apply(&self, cfg: &mut RunConfig) {
                $( if let Some(v) = &self.$field { cfg.$field = v.clone(); } )*
            }
        }
    };
}

run_config! {
    /// Master seed.
    seed: u64 = 0;
    /// Embedding dimension n.
    dim: usize = 16;
    /// Curvature magnitude c.
    curvature: f64 = 1.0;
    /// Entailment aperture constant K.
    k_aperture: f64 = 0.1;
    eps_clamp: f64 = 1e-8;
    /// Point-cloud centroid target distance.
    target_p: f64 = 1.5;
    /// Text centroid target distance.
    target_q: f64 = 1.0;
    /// Image centroid target distance.
    target_r: f64 = 0.5;
    /// Fraction of the cloud kept in the part view.
    mask_ratio: f64 = 0.25;
    batch_size: usize = 128;
    steps: usize = 3000;
    /// Peak learning rate.
    lr: f64 = 5e-4;
    warmup_steps: usize = 10;
    optimizer: OptimizerKind = OptimizerKind::Sgd;
    momentum: f64 = 0.9;
    /// Decoupled weight decay (AdamW only).
    weight_decay: f64 = 0.0;
    temperature: f64 = 0.07;
    use_cent: bool = true;
    use_entail: bool = true;
    use_rec: bool = true;
    use_con: bool = true;
    /// Adds a whole-to-part cone term for point clouds to the entailment loss.
    part_entail: bool = true;
    /// Adds InfoNCE terms to the contrastive loss.
    con_infonce: bool = true;
    /// Encodes a truncated text view and places it in the text cone.
    text_part: bool = false;
    /// Stops updates to the text and image encoders.
    freeze_teachers: bool = false;
    branching: usize = 3;
    /// Number of tree levels, root included.
    depth: usize = 5;
    tree_noise: f64 = 1.0;
    feat_dim: usize = 32;
    /// Held-out samples used by `eval`.
    eval_samples: usize = 512;
    /// Batch size of the hyperbolicity protocol.
    hyp_batch_size: usize = 128;
    hist_bins: usize = 20;
    /// Also write a checkpoint every this many steps; 0 disables.
    checkpoint_every: usize = 0;
}

impl RunConfig {
    /// Reads a config file over the defaults.
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.merge_kv(&text)?;
        Ok(cfg)
    }

    pub fn merge_kv(&mut self, text: &str) -> CliResult<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`, got `{raw}`", no + 1))
            })?;
            self.set(k, v)
                .map_err(|e| CliError::Config(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    /// Hex SHA-256 of [`to_kv`](Self::to_kv).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_kv().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.dim == 0 || self.feat_dim == 0 {
            return bad("dim and feat_dim must be positive".into());
        }
        if !(self.curvature.is_finite() && self.curvature > 0.0) {
            return bad(format!("curvature must be positive, got {}", self.curvature));
        }
        if !(self.k_aperture.is_finite() && self.k_aperture > 0.0) {
            return bad(format!("k_aperture must be positive, got {}", self.k_aperture));
        }
        if !(self.eps_clamp > 0.0 && self.eps_clamp < 1e-4) {
            return bad(format!("eps_clamp must lie in (0, 1e-4), got {}", self.eps_clamp));
        }
        if !(self.target_p > self.target_q && self.target_q > self.target_r && self.target_r > 0.0) {
            return bad(format!(
                "targets must satisfy target_p > target_q > target_r > 0, got {} {} {}",
                self.target_p, self.target_q, self.target_r
            ));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad(format!("mask_ratio must lie in (0, 1), got {}", self.mask_ratio));
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 (InfoNCE needs negatives)".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be nonnegative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative".into());
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.use_cent || self.use_entail || self.use_rec || self.use_con) {
            return bad("at least one loss term must be enabled".into());
        }
        if self.branching < 2 || self.depth < 2 {
            return bad("branching and depth must both be at least 2".into());
        }
        if !(self.tree_noise.is_finite() && self.tree_noise > 0.0) {
            return bad("tree_noise must be positive".into());
        }
        if self.hyp_batch_size < 4 {
            return bad("hyp_batch_size must be at least 4".into());
        }
        if self.eval_samples < 2 {
            return bad("eval_samples must be at least 2".into());
        }
        if self.hist_bins == 0 {
            return bad("hist_bins must be positive".into());
        }
        Ok(())
    }
}

/// Filesystem locations; never part of the config hash.
#[derive(Clone, Debug, PartialEq)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
}
