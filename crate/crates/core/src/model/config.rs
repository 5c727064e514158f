use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchingMode {
    /// One token per latitude row.
    Circular,
    /// Square planar patches of `grid_patch_deg`.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadDimMode {
    /// Each head projects to `in_width / M`.
    Split,
    /// Each head projects the full input width (`2D` with the Fourier
    /// transform), so the concatenated heads are `M` times wider.
    PaperLiteral,
}

/// Temperature of the attention scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreScale {
    /// `1/sqrt(per-head key width)`.
    KeyWidth,
    /// `1/sqrt(D)` regardless of the key width.
    HiddenDim,
}

/// What the output head predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Weeks 3-4 and weeks 5-6 mean fields in one pass.
    Direct,
    /// The next day's state, for autoregressive rollout.
    NextDay,
}

impl OutputKind {
    pub fn windows(self) -> usize {
        match self {
            OutputKind::Direct => 2,
            OutputKind::NextDay => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub patching_mode: PatchingMode,
    pub grid_patch_deg: f64,
    pub use_fourier: bool,
    pub head_dim_mode: HeadDimMode,
    pub score_scale: ScoreScale,
    pub output: OutputKind,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 256,
            num_layers: 8,
            num_heads: 16,
            patching_mode: PatchingMode::Circular,
            grid_patch_deg: 3.0,
            use_fourier: true,
            head_dim_mode: HeadDimMode::Split,
            score_scale: ScoreScale::KeyWidth,
            output: OutputKind::Direct,
            seed: 0,
        }
    }
}

/// Widths inside one attention block derived from a [`ModelConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDims {
    pub hidden: usize,
    pub heads: usize,
    /// Width the attention projections read: `2D` with the Fourier transform.
    pub in_width: usize,
    /// Per-head query/key/value width.
    pub head_width: usize,
    /// Per-head output width after the inverse transform.
    pub head_out: usize,
    pub fourier: bool,
}

impl BlockDims {
    pub fn concat_width(&self) -> usize {
        self.heads * self.head_out
    }

    pub fn qkv_width(&self) -> usize {
        self.heads * self.head_width
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_layers == 0 || self.num_heads == 0 {
            return Err(Error::config(
                "hidden_dim, num_layers and num_heads must all be positive",
            ));
        }
        if self.patching_mode == PatchingMode::Grid
            && !(self.grid_patch_deg.is_finite() && self.grid_patch_deg > 0.0)
        {
            return Err(Error::config(format!(
                "grid_patch_deg = {} must be positive",
                self.grid_patch_deg
            )));
        }
        self.block_dims().map(|_| ())
    }

    pub fn block_dims(&self) -> Result<BlockDims> {
        let d = self.hidden_dim;
        let m = self.num_heads;
        let in_width = if self.use_fourier { 2 * d } else { d };
        let head_width = match self.head_dim_mode {
            HeadDimMode::PaperLiteral => in_width,
            HeadDimMode::Split => {
                if in_width % m != 0 {
                    return Err(Error::config(format!(
                        "num_heads = {m} does not divide the attention width {in_width}"
                    )));
                }
                in_width / m
            }
        };
        let head_out = if self.use_fourier {
            if head_width % 2 != 0 {
                return Err(Error::config(format!(
                    "per-head width {head_width} must be even to hold real and imaginary halves \
                     (num_heads = {m} must divide hidden_dim = {d})"
                )));
            }
            head_width / 2
        } else {
            head_width
        };
        Ok(BlockDims {
            hidden: d,
            heads: m,
            in_width,
            head_width,
            head_out,
            fourier: self.use_fourier,
        })
    }

    /// Multiplier applied to `Q·Kᵀ`.
    pub fn score_factor(&self) -> Result<f64> {
        let dims = self.block_dims()?;
        let width = match self.score_scale {
            ScoreScale::KeyWidth => dims.head_width,
            ScoreScale::HiddenDim => dims.hidden,
        };
        Ok(1.0 / (width as f64).sqrt())
    }

    /// Ordered `key = value` lines describing the architecture.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("model.hidden_dim".into(), self.hidden_dim.to_string()),
            ("model.num_layers".into(), self.num_layers.to_string()),
            ("model.num_heads".into(), self.num_heads.to_string()),
            ("model.patching_mode".into(), enum_str(&self.patching_mode)),
            ("model.grid_patch_deg".into(), self.grid_patch_deg.to_string()),
            ("model.use_fourier".into(), self.use_fourier.to_string()),
            ("model.head_dim_mode".into(), enum_str(&self.head_dim_mode)),
            ("model.score_scale".into(), enum_str(&self.score_scale)),
            ("model.output".into(), enum_str(&self.output)),
            ("model.seed".into(), self.seed.to_string()),
        ]
    }

    pub fn from_kv(kv: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            kv.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::config(format!("missing key `{key}`")))
        };
        fn num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
            v.parse()
                .map_err(|_| Error::config(format!("bad value `{v}` for `{key}`")))
        }
        let cfg = ModelConfig {
            hidden_dim: num("model.hidden_dim", get("model.hidden_dim")?)?,
            num_layers: num("model.num_layers", get("model.num_layers")?)?,
            num_heads: num("model.num_heads", get("model.num_heads")?)?,
            patching_mode: parse_enum("model.patching_mode", get("model.patching_mode")?)?,
            grid_patch_deg: num("model.grid_patch_deg", get("model.grid_patch_deg")?)?,
            use_fourier: num("model.use_fourier", get("model.use_fourier")?)?,
            head_dim_mode: parse_enum("model.head_dim_mode", get("model.head_dim_mode")?)?,
            score_scale: parse_enum("model.score_scale", get("model.score_scale")?)?,
            output: parse_enum("model.output", get("model.output")?)?,
            seed: num("model.seed", get("model.seed")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// snake_case name of a unit enum variant.
pub(crate) fn enum_str<E: Serialize>(e: &E) -> String {
    #[derive(Serialize)]
    struct Wrap<'a, E> {
        v: &'a E,
    }
    let text = toml::to_string(&Wrap { v: e }).expect("unit enum serializes");
    text.trim()
        .trim_start_matches("v = ")
        .trim_matches('"')
        .to_string()
}

pub(crate) fn parse_enum<E: for<'de> Deserialize<'de>>(key: &str, value: &str) -> Result<E> {
    #[derive(Deserialize)]
    struct Wrap<E> {
        v: E,
    }
    toml::from_str::<Wrap<E>>(&format!("v = \"{value}\""))
        .map(|w| w.v)
        .map_err(|_| Error::config(format!("bad value `{value}` for `{key}`")))
}
