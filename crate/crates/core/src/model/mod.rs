//! The circular transformer: patch embedding, a stack of Fourier-domain
//! attention blocks, and a per-token output head that is unpatched back into
//! gridded fields.

mod block;
pub mod checkpoint;
mod config;
mod layers;

use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, ArrayViewD, ArrayViewMutD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use block::{frequency_attention, standard_attention, BlockCache, FrequencyAttentionBlock};
pub use config::{BlockDims, HeadDimMode, ModelConfig, OutputKind, PatchingMode, ScoreScale};
pub use layers::{
    gelu, gelu_grad, softmax_rows, truncated_normal, LayerNorm, Linear, Parameters, Real, INIT_STD, LAYER_NORM_EPS,
};

use crate::error::{Error, Result};
use crate::geometry::{
    circular_patch_values, circular_unpatch_values, grid_patch_values, grid_unpatch_values, make_graticule,
    CircularPatchSet, Graticule, GridLayout, PatchLayout, RowPadding, WeatherState,
};
use layers::prefixed;

/// Grid resolution and variable count a model is built for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputShape {
    pub lat_res_deg: f64,
    pub lon_res_deg: f64,
    pub num_vars: usize,
}

impl InputShape {
    pub fn graticule(&self) -> Result<Graticule> {
        make_graticule(self.lat_res_deg, self.lon_res_deg)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("shape.lat_res_deg".into(), self.lat_res_deg.to_string()),
            ("shape.lon_res_deg".into(), self.lon_res_deg.to_string()),
            ("shape.num_vars".into(), self.num_vars.to_string()),
        ]
    }

    pub fn from_kv(kv: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| {
            kv.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::config(format!("missing key `{key}`")))
        };
        let bad = |key: &str| Error::config(format!("bad value for `{key}`"));
        Ok(InputShape {
            lat_res_deg: get("shape.lat_res_deg")?.parse().map_err(|_| bad("shape.lat_res_deg"))?,
            lon_res_deg: get("shape.lon_res_deg")?.parse().map_err(|_| bad("shape.lon_res_deg"))?,
            num_vars: get("shape.num_vars")?.parse().map_err(|_| bad("shape.num_vars"))?,
        })
    }
}

/// How fields become token matrices for a given model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tokenizer {
    Circular(PatchLayout),
    Grid(GridLayout),
}

impl Tokenizer {
    pub fn new(cfg: &ModelConfig, grid: &Graticule, num_vars: usize) -> Result<Self> {
        Ok(match cfg.patching_mode {
            PatchingMode::Circular => Tokenizer::Circular(PatchLayout {
                num_lat: grid.num_lat(),
                num_lon: grid.num_lon(),
                num_vars,
            }),
            PatchingMode::Grid => Tokenizer::Grid(GridLayout::for_grid(grid, num_vars, cfg.grid_patch_deg)?),
        })
    }

    pub fn num_tokens(&self) -> usize {
        match self {
            Tokenizer::Circular(l) => l.num_lat,
            Tokenizer::Grid(l) => l.num_patches(),
        }
    }

    pub fn token_width(&self) -> usize {
        match self {
            Tokenizer::Circular(l) => l.num_lon * l.num_vars,
            Tokenizer::Grid(l) => l.patch_len(),
        }
    }

    pub fn field_dim(&self) -> (usize, usize, usize) {
        match self {
            Tokenizer::Circular(l) => (l.num_lat, l.num_lon, l.num_vars),
            Tokenizer::Grid(l) => (l.num_lat, l.num_lon, l.num_vars),
        }
    }

    pub fn patch<T: Real>(&self, values: ArrayView3<'_, T>, padding: RowPadding) -> Result<Array2<T>> {
        if values.dim() != self.field_dim() {
            return Err(Error::structural(format!(
                "field shape {:?} does not match the model grid {:?}",
                values.dim(),
                self.field_dim()
            )));
        }
        match self {
            Tokenizer::Circular(_) => Ok(circular_patch_values(values)),
            Tokenizer::Grid(l) => grid_patch_values(values, l, padding),
        }
    }

    pub fn unpatch<T: Real>(&self, flat: ArrayView2<'_, T>) -> Result<Array3<T>> {
        match self {
            Tokenizer::Circular(l) => circular_unpatch_values(flat, *l),
            Tokenizer::Grid(l) => grid_unpatch_values(flat, l),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedding<T> {
    /// `W_p`, `(token_width, D)`.
    pub projection: Array2<T>,
    /// `W_pos`, one row per token.
    pub position: Array2<T>,
}

impl<T: Real> PatchEmbedding<T> {
    pub fn zeros_like(&self) -> Self {
        PatchEmbedding {
            projection: Array2::zeros(self.projection.raw_dim()),
            position: Array2::zeros(self.position.raw_dim()),
        }
    }

    /// `E = X·W_p + W_pos` over a stack of `batch` token matrices.
    pub fn forward(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let tokens = self.position.nrows();
        if x.ncols() != self.projection.nrows() || !x.nrows().is_multiple_of(tokens) {
            return Err(Error::structural(format!(
                "embedding expects a stack of ({tokens}, {}) token matrices, got {:?}",
                self.projection.nrows(),
                x.dim()
            )));
        }
        let mut e = x.dot(&self.projection);
        for mut chunk in e.axis_chunks_iter_mut(Axis(0), tokens) {
            chunk += &self.position;
        }
        Ok(e)
    }

    pub fn backward(&self, x: ArrayView2<'_, T>, de: ArrayView2<'_, T>, grad: &mut Self) {
        grad.projection += &x.t().dot(&de);
        for chunk in de.axis_chunks_iter(Axis(0), self.position.nrows()) {
            grad.position += &chunk;
        }
    }
}

/// Embeds one circular patch set.
pub fn embed<T: Real>(patches: &CircularPatchSet, emb: &PatchEmbedding<T>) -> Result<Array2<T>> {
    if patches.flat.nrows() != emb.position.nrows() {
        return Err(Error::structural(format!(
            "{} patches but {} position rows",
            patches.flat.nrows(),
            emb.position.nrows()
        )));
    }
    let x = patches.flat.mapv(|v| T::lit(v as f64));
    emb.forward(x.view())
}

impl<T> Parameters<T> for PatchEmbedding<T> {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        vec![
            ("projection".into(), self.projection.view().into_dyn()),
            ("position".into(), self.position.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        vec![
            ("projection".into(), self.projection.view_mut().into_dyn()),
            ("position".into(), self.position.view_mut().into_dyn()),
        ]
    }
}

/// Per-token map `D → D → windows·token_width`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead<T> {
    pub norm: LayerNorm<T>,
    pub hidden: Linear<T>,
    pub out: Linear<T>,
}

#[derive(Debug, Clone)]
struct HeadCache<T> {
    ln: layers::LayerNormCache<T>,
    normed: Array2<T>,
    pre_act: Array2<T>,
    act: Array2<T>,
}

impl<T: Real> OutputHead<T> {
    fn zeros_like(&self) -> Self {
        OutputHead {
            norm: self.norm.zeros_like(),
            hidden: self.hidden.zeros_like(),
            out: self.out.zeros_like(),
        }
    }

    fn forward(&self, e: ArrayView2<'_, T>) -> (Array2<T>, HeadCache<T>) {
        let (normed, ln) = self.norm.forward(e);
        let pre_act = self.hidden.forward(normed.view());
        let act = pre_act.mapv(gelu);
        let y = self.out.forward(act.view());
        (
            y,
            HeadCache {
                ln,
                normed,
                pre_act,
                act,
            },
        )
    }

    fn backward(&self, cache: &HeadCache<T>, dy: ArrayView2<'_, T>, grad: &mut Self) -> Array2<T> {
        let dact = self.out.backward(cache.act.view(), dy, &mut grad.out);
        let dpre = &dact * &cache.pre_act.mapv(gelu_grad);
        let dnormed = self.hidden.backward(cache.normed.view(), dpre.view(), &mut grad.hidden);
        self.norm.backward(&cache.ln, dnormed.view(), &mut grad.norm)
    }
}

impl<T> Parameters<T> for OutputHead<T> {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = prefixed("norm", self.norm.tensors());
        out.extend(prefixed("hidden", self.hidden.tensors()));
        out.extend(prefixed("out", self.out.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = prefixed("norm", self.norm.tensors_mut());
        out.extend(prefixed("hidden", self.hidden.tensors_mut()));
        out.extend(prefixed("out", self.out.tensors_mut()));
        out
    }
}

/// Predicted weeks 3-4 and weeks 5-6 mean fields, each `(H, W, K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPair {
    pub weeks34: Array3<f32>,
    pub weeks56: Array3<f32>,
}

#[derive(Debug, Clone)]
pub struct ModelCache<T> {
    batch: usize,
    input: Array2<T>,
    blocks: Vec<BlockCache<T>>,
    head: HeadCache<T>,
}

impl<T> ModelCache<T> {
    pub fn block_caches(&self) -> &[BlockCache<T>] {
        &self.blocks
    }
}

#[derive(Debug, Clone)]
pub struct Cirt<T> {
    config: ModelConfig,
    shape: InputShape,
    grid: Arc<Graticule>,
    tokenizer: Tokenizer,
    pub embedding: PatchEmbedding<T>,
    pub blocks: Vec<FrequencyAttentionBlock<T>>,
    pub head: OutputHead<T>,
}

impl<T: Real> Cirt<T> {
    /// Builds a freshly initialized model; identical inputs give identical
    /// parameters.
    pub fn new(config: ModelConfig, shape: InputShape) -> Result<Self> {
        config.validate()?;
        if shape.num_vars == 0 {
            return Err(Error::config("model needs at least one variable"));
        }
        let grid = shape.graticule()?;
        let tokenizer = Tokenizer::new(&config, &grid, shape.num_vars)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.hidden_dim;
        let embedding = PatchEmbedding {
            projection: truncated_normal(&mut rng, (tokenizer.token_width(), d), INIT_STD),
            position: Array2::zeros((tokenizer.num_tokens(), d)),
        };
        let blocks = (0..config.num_layers)
            .map(|_| FrequencyAttentionBlock::new(&config, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head = OutputHead {
            norm: LayerNorm::new(d),
            hidden: Linear::new(&mut rng, d, d, true),
            out: Linear::new(&mut rng, d, config.output.windows() * tokenizer.token_width(), true),
        };
        Ok(Cirt {
            config,
            shape,
            grid: Arc::new(grid),
            tokenizer,
            embedding,
            blocks,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Cirt {
            config: self.config.clone(),
            shape: self.shape,
            grid: self.grid.clone(),
            tokenizer: self.tokenizer,
            embedding: self.embedding.zeros_like(),
            blocks: self.blocks.iter().map(|b| b.zeros_like()).collect(),
            head: self.head.zeros_like(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn shape(&self) -> InputShape {
        self.shape
    }

    pub fn grid(&self) -> &Arc<Graticule> {
        &self.grid
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn num_tokens(&self) -> usize {
        self.tokenizer.num_tokens()
    }

    pub fn windows(&self) -> usize {
        self.config.output.windows()
    }

    /// Stacks the token matrices of a batch of `(H, W, K)` fields.
    pub fn encode_batch(&self, inputs: &[ArrayView3<'_, T>]) -> Result<Array2<T>> {
        let t = self.num_tokens();
        let mut x = Array2::zeros((inputs.len() * t, self.tokenizer.token_width()));
        for (b, field) in inputs.iter().enumerate() {
            x.slice_mut(s![b * t..(b + 1) * t, ..])
                .assign(&self.tokenizer.patch(field.view(), RowPadding::Replicate)?);
        }
        Ok(x)
    }

    /// Splits stacked head output into per-sample, per-window fields.
    pub fn decode_batch(&self, out: ArrayView2<'_, T>) -> Result<Vec<Vec<Array3<T>>>> {
        let t = self.num_tokens();
        let width = self.tokenizer.token_width();
        if out.ncols() != self.windows() * width || !out.nrows().is_multiple_of(t) {
            return Err(Error::structural(format!("head output {:?} has the wrong layout", out.dim())));
        }
        out.axis_chunks_iter(Axis(0), t)
            .map(|rows| {
                (0..self.windows())
                    .map(|w| self.tokenizer.unpatch(rows.slice(s![.., w * width..(w + 1) * width])))
                    .collect()
            })
            .collect()
    }

    /// Adjoint of [`Cirt::decode_batch`]: maps field gradients back onto the
    /// head output layout.
    pub fn encode_output_grad(&self, grads: &[Vec<Array3<T>>]) -> Result<Array2<T>> {
        let t = self.num_tokens();
        let width = self.tokenizer.token_width();
        let mut out = Array2::zeros((grads.len() * t, self.windows() * width));
        for (b, windows) in grads.iter().enumerate() {
            if windows.len() != self.windows() {
                return Err(Error::structural("gradient window count does not match the head"));
            }
            for (w, g) in windows.iter().enumerate() {
                out.slice_mut(s![b * t..(b + 1) * t, w * width..(w + 1) * width])
                    .assign(&self.tokenizer.patch(g.view(), RowPadding::Zero)?);
            }
        }
        Ok(out)
    }

    pub fn forward_tokens(&self, x: ArrayView2<'_, T>) -> Result<(Array2<T>, ModelCache<T>)> {
        let t = self.num_tokens();
        let mut e = self.embedding.forward(x)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(e.view(), t)?;
            e = next;
            caches.push(cache);
        }
        let (y, head) = self.head.forward(e.view());
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("output_head"));
        }
        Ok((
            y,
            ModelCache {
                batch: x.nrows() / t,
                input: x.to_owned(),
                blocks: caches,
                head,
            },
        ))
    }

    /// Gradients of all parameters given the gradient of the head output.
    pub fn backward_tokens(&self, cache: &ModelCache<T>, dy: ArrayView2<'_, T>) -> Self {
        let mut grad = self.zeros_like();
        let mut de = self.head.backward(&cache.head, dy, &mut grad.head);
        for ((block, bc), gb) in self
            .blocks
            .iter()
            .zip(&cache.blocks)
            .zip(grad.blocks.iter_mut())
            .rev()
        {
            de = block.backward(bc, de.view(), gb);
        }
        self.embedding.backward(cache.input.view(), de.view(), &mut grad.embedding);
        debug_assert_eq!(cache.batch * self.num_tokens(), cache.input.nrows());
        grad
    }

    /// Forward pass from fields to per-sample, per-window fields.
    pub fn predict(&self, inputs: &[ArrayView3<'_, T>]) -> Result<Vec<Vec<Array3<T>>>> {
        let x = self.encode_batch(inputs)?;
        let (y, _) = self.forward_tokens(x.view())?;
        self.decode_batch(y.view())
    }
}

impl Cirt<f32> {
    /// Forecast from one (already normalized) state.
    pub fn forward(&self, state: &WeatherState) -> Result<ForecastPair> {
        if self.config.output != OutputKind::Direct {
            return Err(Error::config("forward() needs a direct-output model"));
        }
        if state.grid.num_lat() != self.grid.num_lat()
            || state.grid.num_lon() != self.grid.num_lon()
            || state.num_vars() != self.shape.num_vars
        {
            return Err(Error::config(format!(
                "state grid ({}, {}, {}) does not match the model ({}, {}, {})",
                state.grid.num_lat(),
                state.grid.num_lon(),
                state.num_vars(),
                self.grid.num_lat(),
                self.grid.num_lon(),
                self.shape.num_vars
            )));
        }
        let mut out = self.predict(&[state.values.view()])?;
        let mut windows = out.pop().expect("one sample").into_iter();
        Ok(ForecastPair {
            weeks34: windows.next().expect("two windows"),
            weeks56: windows.next().expect("two windows"),
        })
    }
}

impl<T> Parameters<T> for Cirt<T> {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = prefixed("embedding", self.embedding.tensors());
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(prefixed(&format!("blocks.{i}"), b.tensors()));
        }
        out.extend(prefixed("head", self.head.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = prefixed("embedding", self.embedding.tensors_mut());
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(prefixed(&format!("blocks.{i}"), b.tensors_mut()));
        }
        out.extend(prefixed("head", self.head.tensors_mut()));
        out
    }
}
