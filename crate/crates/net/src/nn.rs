//! Small layer library on top of candle tensors.
//!
//! Layers are built from candle primitives, so candle's autograd covers them
//! in both f32 and f64. Softmax is the one fused kernel.

use std::collections::BTreeMap;

use candle_core::{CpuStorage, CustomOp1, CustomOp2, DType, Device, Layout, Result, Shape, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Which optimizer group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    /// Point-cloud backbone.
    PointBackbone,
    /// Text backbone; excluded from optimization when frozen.
    TextBackbone,
    Rest,
}

/// Named, grouped parameters with seeded initialization.
pub struct ParamStore {
    vars: BTreeMap<String, (Var, ParamGroup)>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn builder(&mut self, prefix: &str, group: ParamGroup) -> Builder<'_> {
        Builder {
            store: self,
            prefix: prefix.to_string(),
            group,
        }
    }

    fn create(&mut self, name: String, group: ParamGroup, shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        assert!(!self.vars.contains_key(&name), "parameter {name} registered twice");
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name, (var, group));
        Ok(out)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var, ParamGroup)> {
        self.vars.iter().map(|(n, (v, g))| (n.as_str(), v, *g))
    }

    pub fn vars_in(&self, groups: &[ParamGroup]) -> Vec<Var> {
        self.vars
            .values()
            .filter(|(_, g)| groups.contains(g))
            .map(|(v, _)| v.clone())
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name).map(|(v, _)| v)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|(v, _)| v.elem_count()).sum()
    }
}

pub struct Builder<'a> {
    store: &'a mut ParamStore,
    prefix: String,
    group: ParamGroup,
}

impl Builder<'_> {
    pub fn sub(&mut self, name: &str) -> Builder<'_> {
        Builder {
            prefix: format!("{}.{name}", self.prefix),
            group: self.group,
            store: self.store,
        }
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| self.store.rng.random_range(-bound..=bound)).collect();
        self.store.create(format!("{}.{name}", self.prefix), self.group, shape, values)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.store
            .create(format!("{}.{name}", self.prefix), self.group, shape, vec![value; n])
    }

    pub fn linear(&mut self, name: &str, d_in: usize, d_out: usize) -> Result<Linear> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let mut b = self.sub(name);
        Ok(Linear {
            w: b.uniform("weight", &[d_in, d_out], bound)?,
            b: b.uniform("bias", &[d_out], bound)?,
        })
    }

    pub fn layer_norm(&mut self, name: &str, dim: usize) -> Result<LayerNorm> {
        let mut b = self.sub(name);
        Ok(LayerNorm {
            gamma: b.constant("weight", &[dim], 1.0)?,
            beta: b.constant("bias", &[dim], 0.0)?,
        })
    }

    /// Linear layers with ReLU between them; `dims` lists every width.
    pub fn mlp(&mut self, name: &str, dims: &[usize]) -> Result<Mlp> {
        let mut b = self.sub(name);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| b.linear(&i.to_string(), w[0], w[1]))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers })
    }

    pub fn attention(&mut self, name: &str, dim: usize, heads: usize) -> Result<Attention> {
        let mut b = self.sub(name);
        Ok(Attention {
            q: b.linear("q", dim, dim)?,
            k: b.linear("k", dim, dim)?,
            v: b.linear("v", dim, dim)?,
            o: b.linear("o", dim, dim)?,
            heads,
        })
    }
}

/// `y = x W + b` with `W` stored as `(in, out)`; applies to the last axis.
#[derive(Clone)]
pub struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().expect("linear input has a last axis");
        let rows = x.elem_count() / d_in.max(1);
        let y = x.reshape((rows, d_in))?.matmul(&self.w)?.broadcast_add(&self.b)?;
        let mut out = dims;
        *out.last_mut().unwrap() = self.w.dim(1)?;
        y.reshape(out)
    }
}

#[derive(Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + 1e-5)?.sqrt()?)?;
        normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)
    }
}

#[derive(Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.relu()?;
            }
        }
        Ok(h)
    }
}

/// Softmax over the last axis as one fused kernel with an analytic backward.
/// The attention score tensors are the largest in the network, so a
/// composed softmax costs several full passes each way.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    x.contiguous()?.apply_op1(SoftmaxLast)
}

fn contiguous<'a, T>(s: &'a [T], l: &Layout) -> Result<&'a [T]> {
    let (a, b) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("softmax input must be contiguous".into()))?;
    Ok(&s[a..b])
}

fn softmax_rows<T: num_like::Float>(x: &[T], w: usize) -> Vec<T> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(w) {
        let m = row.iter().copied().fold(T::NEG_INF, T::max);
        let mut z = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z = z + *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    out
}

fn softmax_grad_rows<T: num_like::Float>(y: &[T], g: &[T], w: usize) -> Vec<T> {
    let mut out = g.to_vec();
    for (yr, gr) in y.chunks(w).zip(out.chunks_mut(w)) {
        let dot = yr.iter().zip(gr.iter()).fold(T::ZERO, |acc, (a, b)| acc + *a * *b);
        for (gv, yv) in gr.iter_mut().zip(yr) {
            *gv = *yv * (*gv - dot);
        }
    }
    out
}

/// Just enough float abstraction for the two kernels above.
mod num_like {
    pub trait Float: Copy + std::ops::Add<Output = Self> + std::ops::Sub<Output = Self> + std::ops::Mul<Output = Self> + std::ops::Div<Output = Self> {
        const ZERO: Self;
        const NEG_INF: Self;
        fn exp(self) -> Self;
        fn max(self, o: Self) -> Self;
    }
    macro_rules! impl_float {
        ($t:ty) => {
            impl Float for $t {
                const ZERO: Self = 0.0;
                const NEG_INF: Self = <$t>::NEG_INFINITY;
                fn exp(self) -> Self {
                    <$t>::exp(self)
                }
                fn max(self, o: Self) -> Self {
                    <$t>::max(self, o)
                }
            }
        };
    }
    impl_float!(f32);
    impl_float!(f64);
}

fn unsupported() -> candle_core::Error {
    candle_core::Error::Msg("softmax supports f32 and f64 only".into())
}

struct SoftmaxLast;

impl CustomOp1 for SoftmaxLast {
    fn name(&self) -> &'static str {
        "softmax-last"
    }

    fn cpu_fwd(&self, s: &CpuStorage, l: &Layout) -> Result<(CpuStorage, Shape)> {
        let w = l.dims().last().copied().unwrap_or(1).max(1);
        let out = match s {
            CpuStorage::F32(v) => CpuStorage::F32(softmax_rows(contiguous(v, l)?, w)),
            CpuStorage::F64(v) => CpuStorage::F64(softmax_rows(contiguous(v, l)?, w)),
            _ => return Err(unsupported()),
        };
        Ok((out, l.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad: &Tensor) -> Result<Option<Tensor>> {
        Ok(Some(res.contiguous()?.apply_op2_no_bwd(&grad.contiguous()?, &SoftmaxGrad)?))
    }
}

/// `y ⊙ (g − Σ g·y)` row-wise, with `y` the softmax output.
struct SoftmaxGrad;

impl CustomOp2 for SoftmaxGrad {
    fn name(&self) -> &'static str {
        "softmax-last-grad"
    }

    fn cpu_fwd(&self, ys: &CpuStorage, yl: &Layout, gs: &CpuStorage, gl: &Layout) -> Result<(CpuStorage, Shape)> {
        let w = yl.dims().last().copied().unwrap_or(1).max(1);
        let out = match (ys, gs) {
            (CpuStorage::F32(y), CpuStorage::F32(g)) => CpuStorage::F32(softmax_grad_rows(contiguous(y, yl)?, contiguous(g, gl)?, w)),
            (CpuStorage::F64(y), CpuStorage::F64(g)) => CpuStorage::F64(softmax_grad_rows(contiguous(y, yl)?, contiguous(g, gl)?, w)),
            _ => return Err(unsupported()),
        };
        Ok((out, yl.shape().clone()))
    }
}

pub fn log_softmax_last(x: &Tensor) -> Result<Tensor> {
    x.broadcast_sub(&logsumexp(x, x.rank() - 1)?)
}

/// `log(sum(exp(x)))` along `dim`, kept as a size-1 axis.
pub fn logsumexp(x: &Tensor, dim: usize) -> Result<Tensor> {
    let m = x.max_keepdim(dim)?.detach();
    x.broadcast_sub(&m)?.exp()?.sum_keepdim(dim)?.log()?.broadcast_add(&m)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    (x.neg()?.exp()? + 1.0)?.recip()
}

/// Row-wise `x / max(|x|, eps)`; a zero row stays zero.
pub fn l2_normalize_rows(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?;
    let floor = norm.ones_like()?.affine(1e-12, 0.0)?;
    x.broadcast_div(&norm.maximum(&floor)?)
}

/// Large negative bias for masked keys.
const MASK_BIAS: f64 = -1e9;

/// Multi-head scaled dot-product attention.
#[derive(Clone)]
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    /// `x: (B, Lq, c)` attends over `kv: (B, Lk, c)`. `key_mask: (B, Lk)` holds
    /// 1 for valid keys and 0 for padding. A row whose keys are all masked
    /// gets a zero output.
    pub fn forward(&self, x: &Tensor, kv: &Tensor, key_mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, lq, c) = x.dims3()?;
        let lk = kv.dim(1)?;
        let h = self.heads;
        let dh = c / h;
        let split = |t: Tensor, l: usize| t.reshape((b, l, h, dh))?.transpose(1, 2)?.contiguous();
        let q = split(self.q.forward(x)?.affine(1.0 / (dh as f64).sqrt(), 0.0)?, lq)?;
        let k = split(self.k.forward(kv)?, lk)?;
        let v = split(self.v.forward(kv)?, lk)?;
        let mut scores = q.matmul(&k.t()?)?;
        if let Some(mask) = key_mask {
            let bias = mask.affine(-MASK_BIAS, MASK_BIAS)?.reshape((b, 1, 1, lk))?;
            scores = scores.broadcast_add(&bias)?;
        }
        let attn = softmax_last(&scores)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, lq, c))?;
        let out = self.o.forward(&out)?;
        match key_mask {
            Some(mask) => out.broadcast_mul(&mask.max_keepdim(1)?.reshape((b, 1, 1))?),
            None => Ok(out),
        }
    }
}

/// Pre-norm residual sub-layer: `x + f(LN(x))`.
pub fn residual<F>(x: &Tensor, norm: &LayerNorm, f: F) -> Result<Tensor>
where
    F: FnOnce(&Tensor) -> Result<Tensor>,
{
    x + f(&norm.forward(x)?)?
}
