//! Dense building blocks with hand-written backward passes.
//!
//! Activations are `(rows, features)` matrices. Every `backward` accumulates
//! parameter gradients into a same-shaped gradient layer and returns the
//! gradient with respect to its input.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, NdFloat, Zip};
use num_traits::FromPrimitive;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Floating-point element type of model tensors.
pub trait Real: NdFloat + FromPrimitive {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normal(0, std) truncated to two standard deviations.
pub fn truncated_normal<T: Real, R: Rng>(rng: &mut R, shape: (usize, usize), std: f64) -> Array2<T> {
    let normal = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_simple_fn(shape, || loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            break T::lit(v);
        }
    })
}

/// Named views over every learned tensor of a module, in a stable order.
pub trait Parameters<T> {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)>;
    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)>;

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

pub(crate) fn prefixed<V>(prefix: &str, items: Vec<(String, V)>) -> Vec<(String, V)> {
    items
        .into_iter()
        .map(|(name, v)| (format!("{prefix}.{name}"), v))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `(in, out)`.
    pub weight: Array2<T>,
    pub bias: Option<Array1<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng>(rng: &mut R, inputs: usize, outputs: usize, bias: bool) -> Self {
        Linear {
            weight: truncated_normal(rng, (inputs, outputs), INIT_STD),
            bias: bias.then(|| Array1::zeros(outputs)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: self.bias.as_ref().map(|b| Array1::zeros(b.raw_dim())),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut y = x.dot(&self.weight);
        if let Some(b) = &self.bias {
            y += b;
        }
        y
    }

    pub fn backward(&self, x: ArrayView2<'_, T>, dy: ArrayView2<'_, T>, grad: &mut Linear<T>) -> Array2<T> {
        grad.weight += &x.t().dot(&dy);
        if let Some(gb) = &mut grad.bias {
            *gb += &dy.sum_axis(Axis(0));
        }
        dy.dot(&self.weight.t())
    }
}

impl<T> Parameters<T> for Linear<T> {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = vec![("weight".to_string(), self.weight.view().into_dyn())];
        if let Some(b) = &self.bias {
            out.push(("bias".to_string(), b.view().into_dyn()));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let mut out = vec![("weight".to_string(), self.weight.view_mut().into_dyn())];
        if let Some(b) = &mut self.bias {
            out.push(("bias".to_string(), b.view_mut().into_dyn()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    normalized: Array2<T>,
    inv_std: Array1<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(width: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
        }
    }

    pub fn zeros_like(&self) -> Self {
        LayerNorm {
            gamma: Array1::zeros(self.gamma.raw_dim()),
            beta: Array1::zeros(self.beta.raw_dim()),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> (Array2<T>, LayerNormCache<T>) {
        let width = T::from_usize(x.ncols()).expect("width fits");
        let eps = T::lit(LAYER_NORM_EPS);
        let mut normalized = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in normalized.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
            let mean = row.sum() / width;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().fold(T::zero(), |acc, v| acc + *v * *v) / width;
            let inv = T::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * inv);
            *s = inv;
        }
        let y = &normalized * &self.gamma + &self.beta;
        (y, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<T>, dy: ArrayView2<'_, T>, grad: &mut LayerNorm<T>) -> Array2<T> {
        grad.gamma += &(&dy * &cache.normalized).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let width = T::from_usize(dy.ncols()).expect("width fits");
        let dxhat = &dy * &self.gamma;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (((mut out, g), xh), inv) in dx
            .axis_iter_mut(Axis(0))
            .zip(dxhat.axis_iter(Axis(0)))
            .zip(cache.normalized.axis_iter(Axis(0)))
            .zip(cache.inv_std.iter())
        {
            let sum_g = g.sum();
            let sum_gx = g.iter().zip(xh.iter()).fold(T::zero(), |acc, (a, b)| acc + *a * *b);
            let scale = *inv / width;
            Zip::from(&mut out)
                .and(&g)
                .and(&xh)
                .for_each(|o, &gi, &xi| *o = scale * (width * gi - sum_g - xi * sum_gx));
        }
        dx
    }
}

impl<T> Parameters<T> for LayerNorm<T> {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        vec![
            ("gamma".to_string(), self.gamma.view().into_dyn()),
            ("beta".to_string(), self.beta.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        vec![
            ("gamma".to_string(), self.gamma.view_mut().into_dyn()),
            ("beta".to_string(), self.beta.view_mut().into_dyn()),
        ]
    }
}

// tanh approximation of GELU
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu<T: Real>(x: T) -> T {
    let (c, a, half) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5));
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let (c, a, half, three) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5), T::lit(3.0));
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

/// Row-wise softmax, in place.
pub fn softmax_rows<T: Real>(scores: &mut Array2<T>) {
    for mut row in scores.axis_iter_mut(Axis(0)) {
        let max = row.fold(T::neg_infinity(), |m, v| m.max(*v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Gradient of the scores given softmax output `p` and output gradient `dp`.
pub fn softmax_rows_backward<T: Real>(p: &Array2<T>, dp: &Array2<T>) -> Array2<T> {
    let mut ds = Array2::zeros(p.raw_dim());
    for ((mut out, pr), dr) in ds
        .axis_iter_mut(Axis(0))
        .zip(p.axis_iter(Axis(0)))
        .zip(dp.axis_iter(Axis(0)))
    {
        let dot = pr.iter().zip(dr.iter()).fold(T::zero(), |acc, (a, b)| acc + *a * *b);
        Zip::from(&mut out)
            .and(&pr)
            .and(&dr)
            .for_each(|o, &pi, &di| *o = pi * (di - dot));
    }
    ds
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
        Array::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    /// Central differences of `f` with respect to every entry of `x`.
    fn numeric_grad(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
        let h = 1e-5;
        let mut g = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            g.as_slice_mut().unwrap()[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let diff = (a - b).mapv(|v| v * v).sum().sqrt();
        let scale = a.mapv(|v| v * v).sum().sqrt().max(b.mapv(|v| v * v).sum().sqrt());
        diff / scale.max(1e-300)
    }

    #[test]
    fn truncated_normal_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w: Array2<f64> = truncated_normal(&mut rng, (100, 100), 0.02);
        assert!(w.iter().all(|v| v.abs() <= 0.04));
        let std = w.mapv(|v| v * v).mean().unwrap().sqrt();
        assert!((0.015..0.02).contains(&std), "{std}");
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Linear::<f64>::new(&mut rng, 5, 3, true);
        let x = random(&mut rng, (4, 5));
        let r = random(&mut rng, (4, 3));
        let mut grad = layer.zeros_like();
        let dx = layer.backward(x.view(), r.view(), &mut grad);
        let num_x = numeric_grad(&x, |x| (layer.forward(x.view()) * &r).sum());
        assert!(rel_err(&dx, &num_x) < 1e-8);
        let num_w = numeric_grad(&layer.weight, |w| {
            let l = Linear { weight: w.clone(), bias: layer.bias.clone() };
            (l.forward(x.view()) * &r).sum()
        });
        assert!(rel_err(&grad.weight, &num_w) < 1e-8);
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ln = LayerNorm::<f64>::new(6);
        ln.gamma = Array::from_shape_simple_fn(6, || rng.random_range(0.5..1.5));
        ln.beta = Array::from_shape_simple_fn(6, || rng.random_range(-0.5..0.5));
        let x = random(&mut rng, (3, 6));
        let r = random(&mut rng, (3, 6));
        let (y, cache) = ln.forward(x.view());
        for row in cache.normalized.axis_iter(Axis(0)) {
            assert!(row.mean().unwrap().abs() < 1e-12);
        }
        assert_eq!(y.dim(), (3, 6));
        let mut grad = ln.zeros_like();
        let dx = ln.backward(&cache, r.view(), &mut grad);
        let num = numeric_grad(&x, |x| (ln.forward(x.view()).0 * &r).sum());
        assert!(rel_err(&dx, &num) < 1e-7, "{}", rel_err(&dx, &num));
    }

    #[test]
    fn gelu_derivative() {
        for x in [-3.0f64, -1.0, -0.1, 0.0, 0.3, 2.0] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - num).abs() < 1e-8);
        }
        assert_eq!(gelu(0.0f64), 0.0);
    }

    #[test]
    fn softmax_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random(&mut rng, (3, 4)) * 3.0;
        let r = random(&mut rng, (3, 4));
        let mut p = s.clone();
        softmax_rows(&mut p);
        for row in p.axis_iter(Axis(0)) {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let ds = softmax_rows_backward(&p, &r);
        let num = numeric_grad(&s, |s| {
            let mut p = s.clone();
            softmax_rows(&mut p);
            (p * &r).sum()
        });
        assert!(rel_err(&ds, &num) < 1e-8);
    }
}
