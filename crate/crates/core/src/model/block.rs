//! Transformer block whose multi-head attention runs on the Fourier
//! coefficients of each token embedding.
//!
//! For one block with pre-normalization:
//!
//! ```text
//! N  = LN1(E)
//! C  = [A | B] = N·[Cos | Sin]                    (per-row DFT, width 2D)
//! per head m: Q, K, V = C·W_m^{Q,K,V}
//!             O_m = softmax(Q·Kᵀ · scale)·V = [Ã | B̃]
//!             U_m = [Ã | B̃]·[Cos ; Sin] / n       (per-row inverse DFT)
//! U  = [U_1, ..., U_M]
//! Z  = E + U                         when U has width D (split heads)
//! out = Z + MLP(LN2(Z))
//! ```
//!
//! With paper-literal heads `U` is `M·D` wide, so the block becomes
//! `out = E + MLP(LN2(U))` with the MLP mapping `M·D → D`. The standard
//! attention variant skips both transforms.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use super::config::{BlockDims, ModelConfig};
use super::layers::{
    gelu, gelu_grad, prefixed, softmax_rows, softmax_rows_backward, truncated_normal, LayerNorm,
    LayerNormCache, Linear, Parameters, Real, INIT_STD,
};
use crate::error::{Error, Result};
use crate::spectral::FourierBasis;

#[derive(Debug, Clone)]
pub struct FrequencyAttentionBlock<T> {
    pub norm1: LayerNorm<T>,
    /// `(in_width, M·head_width)`; head `m` owns columns `m·head_width..`.
    pub query: Array2<T>,
    pub key: Array2<T>,
    pub value: Array2<T>,
    pub norm2: LayerNorm<T>,
    pub mlp_hidden: Linear<T>,
    pub mlp_out: Linear<T>,
    dims: BlockDims,
    score_factor: T,
    token_basis: Option<Arc<FourierBasis<T>>>,
    head_basis: Option<Arc<FourierBasis<T>>>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    tokens: usize,
    ln1: LayerNormCache<T>,
    coeffs: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    mixed: Array2<T>,
    ln2: LayerNormCache<T>,
    normed2: Array2<T>,
    pre_act: Array2<T>,
    act: Array2<T>,
}

fn check_finite<T: Real>(stage: &str, m: &Array2<T>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(stage))
    }
}

impl<T: Real> FrequencyAttentionBlock<T> {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let dims = cfg.block_dims()?;
        let (token_basis, head_basis) = if dims.fourier {
            (
                Some(Arc::new(FourierBasis::new(dims.hidden))),
                Some(Arc::new(FourierBasis::new(dims.head_out))),
            )
        } else {
            (None, None)
        };
        let qkv = (dims.in_width, dims.qkv_width());
        Ok(FrequencyAttentionBlock {
            norm1: LayerNorm::new(dims.hidden),
            query: truncated_normal(rng, qkv, INIT_STD),
            key: truncated_normal(rng, qkv, INIT_STD),
            value: truncated_normal(rng, qkv, INIT_STD),
            norm2: LayerNorm::new(dims.concat_width()),
            mlp_hidden: Linear::new(rng, dims.concat_width(), dims.concat_width(), true),
            mlp_out: Linear::new(rng, dims.concat_width(), dims.hidden, true),
            dims,
            score_factor: T::lit(cfg.score_factor()?),
            token_basis,
            head_basis,
        })
    }

    pub fn dims(&self) -> BlockDims {
        self.dims
    }

    pub fn uses_fourier(&self) -> bool {
        self.dims.fourier
    }

    fn residual_around_attention(&self) -> bool {
        self.dims.concat_width() == self.dims.hidden
    }

    pub fn zeros_like(&self) -> Self {
        FrequencyAttentionBlock {
            norm1: self.norm1.zeros_like(),
            query: Array2::zeros(self.query.raw_dim()),
            key: Array2::zeros(self.key.raw_dim()),
            value: Array2::zeros(self.value.raw_dim()),
            norm2: self.norm2.zeros_like(),
            mlp_hidden: self.mlp_hidden.zeros_like(),
            mlp_out: self.mlp_out.zeros_like(),
            dims: self.dims,
            score_factor: self.score_factor,
            token_basis: self.token_basis.clone(),
            head_basis: self.head_basis.clone(),
        }
    }

    /// Forward pass over a batch stacked as `(batch·tokens, D)`. Attention
    /// only mixes rows belonging to the same sample.
    pub fn forward(&self, x: ArrayView2<'_, T>, tokens: usize) -> Result<(Array2<T>, BlockCache<T>)> {
        let d = self.dims;
        if x.ncols() != d.hidden || tokens == 0 || !x.nrows().is_multiple_of(tokens) {
            return Err(Error::structural(format!(
                "block input {:?} is not a stack of ({tokens}, {}) token matrices",
                x.dim(),
                d.hidden
            )));
        }
        let batch = x.nrows() / tokens;
        let (normed1, ln1) = self.norm1.forward(x);
        let coeffs = match &self.token_basis {
            Some(basis) => normed1.dot(basis.forward()),
            None => normed1,
        };
        check_finite("dft", &coeffs)?;

        let q = coeffs.dot(&self.query);
        let k = coeffs.dot(&self.key);
        let v = coeffs.dot(&self.value);
        check_finite("qkv_projection", &q)?;
        check_finite("qkv_projection", &k)?;
        check_finite("qkv_projection", &v)?;

        let mut attended = Array2::zeros((x.nrows(), d.qkv_width()));
        let mut probs = Vec::with_capacity(batch * d.heads);
        for b in 0..batch {
            let rows = b * tokens..(b + 1) * tokens;
            for m in 0..d.heads {
                let cols = m * d.head_width..(m + 1) * d.head_width;
                let qs = q.slice(s![rows.clone(), cols.clone()]);
                let ks = k.slice(s![rows.clone(), cols.clone()]);
                let vs = v.slice(s![rows.clone(), cols.clone()]);
                let mut p = qs.dot(&ks.t()) * self.score_factor;
                softmax_rows(&mut p);
                attended
                    .slice_mut(s![rows.clone(), cols])
                    .assign(&p.dot(&vs));
                probs.push(p);
            }
        }
        check_finite("attention", &attended)?;

        let mixed = match &self.head_basis {
            Some(basis) => {
                let mut out = Array2::zeros((x.nrows(), d.concat_width()));
                for m in 0..d.heads {
                    let src = attended.slice(s![.., m * d.head_width..(m + 1) * d.head_width]);
                    out.slice_mut(s![.., m * d.head_out..(m + 1) * d.head_out])
                        .assign(&src.dot(basis.inverse()));
                }
                out
            }
            None => attended,
        };
        check_finite("idft", &mixed)?;

        let stream = if self.residual_around_attention() {
            &x + &mixed
        } else {
            mixed.clone()
        };
        let (normed2, ln2) = self.norm2.forward(stream.view());
        let pre_act = self.mlp_hidden.forward(normed2.view());
        let act = pre_act.mapv(gelu);
        let mlp = self.mlp_out.forward(act.view());
        check_finite("mlp", &mlp)?;
        let out = if self.residual_around_attention() {
            stream + &mlp
        } else {
            &x + &mlp
        };
        let cache = BlockCache {
            tokens,
            ln1,
            coeffs,
            q,
            k,
            v,
            probs,
            mixed,
            ln2,
            normed2,
            pre_act,
            act,
        };
        Ok((out, cache))
    }

    /// Returns the input gradient and accumulates parameter gradients in `grad`.
    pub fn backward(&self, cache: &BlockCache<T>, dout: ArrayView2<'_, T>, grad: &mut Self) -> Array2<T> {
        let d = self.dims;
        let tokens = cache.tokens;
        let batch = dout.nrows() / tokens;

        let dact = self.mlp_out.backward(cache.act.view(), dout, &mut grad.mlp_out);
        let dpre = &dact * &cache.pre_act.mapv(gelu_grad);
        let dnormed2 = self
            .mlp_hidden
            .backward(cache.normed2.view(), dpre.view(), &mut grad.mlp_hidden);
        let dstream = self.norm2.backward(&cache.ln2, dnormed2.view(), &mut grad.norm2);

        let (mut dx, dmixed) = if self.residual_around_attention() {
            let dz = &dstream + &dout;
            (dz.clone(), dz)
        } else {
            (dout.to_owned(), dstream)
        };

        let dattended = match &self.head_basis {
            Some(basis) => {
                let mut out = Array2::zeros((dout.nrows(), d.qkv_width()));
                for m in 0..d.heads {
                    let src = dmixed.slice(s![.., m * d.head_out..(m + 1) * d.head_out]);
                    out.slice_mut(s![.., m * d.head_width..(m + 1) * d.head_width])
                        .assign(&src.dot(&basis.inverse().t()));
                }
                out
            }
            None => dmixed,
        };

        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for b in 0..batch {
            let rows = b * tokens..(b + 1) * tokens;
            for m in 0..d.heads {
                let cols = m * d.head_width..(m + 1) * d.head_width;
                let p = &cache.probs[b * d.heads + m];
                let qs = cache.q.slice(s![rows.clone(), cols.clone()]);
                let ks = cache.k.slice(s![rows.clone(), cols.clone()]);
                let vs = cache.v.slice(s![rows.clone(), cols.clone()]);
                let dos = dattended.slice(s![rows.clone(), cols.clone()]);
                dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&p.t().dot(&dos));
                let dp = dos.dot(&vs.t());
                let ds = softmax_rows_backward(p, &dp) * self.score_factor;
                dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&ks));
                dk.slice_mut(s![rows.clone(), cols]).assign(&ds.t().dot(&qs));
            }
        }

        let coeffs_t = cache.coeffs.t();
        grad.query += &coeffs_t.dot(&dq);
        grad.key += &coeffs_t.dot(&dk);
        grad.value += &coeffs_t.dot(&dv);
        let dcoeffs = dq.dot(&self.query.t()) + dk.dot(&self.key.t()) + dv.dot(&self.value.t());
        let dnormed1 = match &self.token_basis {
            Some(basis) => dcoeffs.dot(&basis.forward().t()),
            None => dcoeffs,
        };
        dx += &self.norm1.backward(&cache.ln1, dnormed1.view(), &mut grad.norm1);
        dx
    }

    /// Attention probabilities of sample `b`, head `m` from a forward cache.
    pub fn attention_probs<'a>(&self, cache: &'a BlockCache<T>, b: usize, m: usize) -> &'a Array2<T> {
        &cache.probs[b * self.dims.heads + m]
    }

    /// Mixed (post-attention, post-inverse-transform) features of a forward pass.
    pub fn mixed<'a>(&self, cache: &'a BlockCache<T>) -> &'a Array2<T> {
        &cache.mixed
    }
}

/// Runs a Fourier-domain block over one `(H, D)` token matrix.
pub fn frequency_attention<T: Real>(e: ArrayView2<'_, T>, block: &FrequencyAttentionBlock<T>) -> Result<Array2<T>> {
    if !block.uses_fourier() {
        return Err(Error::config("block was built without the Fourier transform"));
    }
    block.forward(e, e.nrows()).map(|(out, _)| out)
}

/// Runs a spatial-domain block over one `(H, D)` token matrix.
pub fn standard_attention<T: Real>(e: ArrayView2<'_, T>, block: &FrequencyAttentionBlock<T>) -> Result<Array2<T>> {
    if block.uses_fourier() {
        return Err(Error::config("block was built with the Fourier transform"));
    }
    block.forward(e, e.nrows()).map(|(out, _)| out)
}

impl<T> Parameters<T> for FrequencyAttentionBlock<T> {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = prefixed("norm1", self.norm1.tensors());
        out.push(("attn.query".into(), self.query.view().into_dyn()));
        out.push(("attn.key".into(), self.key.view().into_dyn()));
        out.push(("attn.value".into(), self.value.view().into_dyn()));
        out.extend(prefixed("norm2", self.norm2.tensors()));
        out.extend(prefixed("mlp.hidden", self.mlp_hidden.tensors()));
        out.extend(prefixed("mlp.out", self.mlp_out.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = prefixed("norm1", self.norm1.tensors_mut());
        out.push(("attn.query".into(), self.query.view_mut().into_dyn()));
        out.push(("attn.key".into(), self.key.view_mut().into_dyn()));
        out.push(("attn.value".into(), self.value.view_mut().into_dyn()));
        out.extend(prefixed("norm2", self.norm2.tensors_mut()));
        out.extend(prefixed("mlp.hidden", self.mlp_hidden.tensors_mut()));
        out.extend(prefixed("mlp.out", self.mlp_out.tensors_mut()));
        out
    }
}
