//! Layers with explicit forward caches and reverse-mode backward passes.

use super::ops::{self, gemm_into, matmul, View};
use super::params::{Grads, ParamId, ParamStore};
use crate::matrix::Matrix;
use crate::rng::Rng;

/// `y = x W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            w: store.add_uniform(format!("{name}.w"), &[input, output], input, rng),
            b: store.add_uniform(format!("{name}.b"), &[output], input, rng),
            input,
            output,
        }
    }

    /// Looks the layer up in a loaded store.
    pub fn find(store: &ParamStore, name: &str) -> Option<Self> {
        let w = store.find(&format!("{name}.w"))?;
        let b = store.find(&format!("{name}.b"))?;
        let shape = &store.param(w).shape;
        if shape.len() != 2 || store.param(b).shape != [shape[1]] {
            return None;
        }
        Some(Self {
            w,
            b,
            input: shape[0],
            output: shape[1],
        })
    }

    fn weight<'a>(&self, store: &'a ParamStore) -> View<'a> {
        View::new(store.get(self.w), self.input, self.output)
    }

    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> Matrix {
        let mut y = matmul(View::of(x), self.weight(store));
        ops::add_row(&mut y, store.get(self.b));
        y
    }

    /// Accumulates dW, db and returns dx.
    pub fn backward(&self, store: &ParamStore, x: &Matrix, dy: &Matrix, grads: &mut Grads) -> Matrix {
        let dw = matmul(View::of(x).t(), View::of(dy));
        ops::add_assign(grads.get_mut(self.w), dw.as_slice());
        ops::col_sums_into(dy, grads.get_mut(self.b));
        matmul(View::of(dy), self.weight(store).t())
    }

    /// Like [`Linear::backward`] without computing dx.
    pub fn backward_params(&self, x: &Matrix, dy: &Matrix, grads: &mut Grads) {
        let dw = matmul(View::of(x).t(), View::of(dy));
        ops::add_assign(grads.get_mut(self.w), dw.as_slice());
        ops::col_sums_into(dy, grads.get_mut(self.b));
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub width: usize,
}

pub struct LayerNormCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add_const(format!("{name}.gamma"), &[width], 1.0),
            beta: store.add_const(format!("{name}.beta"), &[width], 0.0),
            width,
        }
    }

    pub fn find(store: &ParamStore, name: &str) -> Option<Self> {
        let gamma = store.find(&format!("{name}.gamma"))?;
        let beta = store.find(&format!("{name}.beta"))?;
        Some(Self {
            gamma,
            beta,
            width: store.param(gamma).value.len(),
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> (Matrix, LayerNormCache) {
        let (g, b) = (store.get(self.gamma), store.get(self.beta));
        let n = x.cols() as f64;
        let mut xhat = x.clone();
        let mut y = x.clone();
        let mut rstd = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(r);
            for (j, (h, out)) in xhat.row_mut(i).iter_mut().zip(y.row_mut(i)).enumerate() {
                *h = (*h - mean) * r;
                *out = *h * g[j] + b[j];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(&self, store: &ParamStore, cache: &LayerNormCache, dy: &Matrix, grads: &mut Grads) -> Matrix {
        let g = store.get(self.gamma);
        let n = dy.cols() as f64;
        let mut dx = Matrix::zeros(dy.rows(), dy.cols());
        let mut dgamma = vec![0.0; self.width];
        let mut dbeta = vec![0.0; self.width];
        for i in 0..dy.rows() {
            let (d, h) = (dy.row(i), cache.xhat.row(i));
            let mut mean_dh = 0.0;
            let mut mean_dh_h = 0.0;
            for j in 0..d.len() {
                dgamma[j] += d[j] * h[j];
                dbeta[j] += d[j];
                let dh = d[j] * g[j];
                mean_dh += dh;
                mean_dh_h += dh * h[j];
            }
            mean_dh /= n;
            mean_dh_h /= n;
            let r = cache.rstd[i];
            for (j, out) in dx.row_mut(i).iter_mut().enumerate() {
                *out = r * (d[j] * g[j] - mean_dh - h[j] * mean_dh_h);
            }
        }
        ops::add_assign(grads.get_mut(self.gamma), &dgamma);
        ops::add_assign(grads.get_mut(self.beta), &dbeta);
        dx
    }
}

/// Multi-head self-attention over one token sequence.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

pub struct AttentionCache {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Row-softmaxed scores per head.
    probs: Vec<Matrix>,
    concat: Matrix,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut Rng) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), width, width, rng),
            k: Linear::new(store, &format!("{name}.k"), width, width, rng),
            v: Linear::new(store, &format!("{name}.v"), width, width, rng),
            o: Linear::new(store, &format!("{name}.o"), width, width, rng),
            heads,
        }
    }

    pub fn find(store: &ParamStore, name: &str, heads: usize) -> Option<Self> {
        Some(Self {
            q: Linear::find(store, &format!("{name}.q"))?,
            k: Linear::find(store, &format!("{name}.k"))?,
            v: Linear::find(store, &format!("{name}.v"))?,
            o: Linear::find(store, &format!("{name}.o"))?,
            heads,
        })
    }

    fn head_width(&self) -> usize {
        self.q.output / self.heads
    }

    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> (Matrix, AttentionCache) {
        let q = self.q.forward(store, x);
        let k = self.k.forward(store, x);
        let v = self.v.forward(store, x);
        let dh = self.head_width();
        let scale = 1.0 / (dh as f64).sqrt();
        let n = x.rows();
        let mut concat = Matrix::zeros(n, self.q.output);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = View::of(&q).cols(h * dh, dh);
            let kh = View::of(&k).cols(h * dh, dh);
            let mut s = Matrix::zeros(n, n);
            gemm_into(scale, qh, kh.t(), 0.0, &mut s, 0);
            ops::softmax_rows(&mut s);
            gemm_into(1.0, View::of(&s), View::of(&v).cols(h * dh, dh), 0.0, &mut concat, h * dh);
            probs.push(s);
        }
        let y = self.o.forward(store, &concat);
        (
            y,
            AttentionCache {
                x: x.clone(),
                q,
                k,
                v,
                probs,
                concat,
            },
        )
    }

    pub fn backward(&self, store: &ParamStore, c: &AttentionCache, dy: &Matrix, grads: &mut Grads) -> Matrix {
        let dconcat = self.o.backward(store, &c.concat, dy, grads);
        let dh = self.head_width();
        let scale = 1.0 / (dh as f64).sqrt();
        let n = dy.rows();
        let width = self.q.output;
        let mut dq = Matrix::zeros(n, width);
        let mut dk = Matrix::zeros(n, width);
        let mut dv = Matrix::zeros(n, width);
        for h in 0..self.heads {
            let a = &c.probs[h];
            let doh = View::of(&dconcat).cols(h * dh, dh);
            // dV_h = Aᵀ dO_h
            gemm_into(1.0, View::of(a).t(), doh, 0.0, &mut dv, h * dh);
            // dA = dO_h V_hᵀ, then softmax backward
            let mut ds = matmul(doh, View::of(&c.v).cols(h * dh, dh).t());
            for i in 0..n {
                let (arow, drow) = (a.row(i), ds.row_mut(i));
                let dot: f64 = arow.iter().zip(drow.iter()).map(|(p, d)| p * d).sum();
                for (d, p) in drow.iter_mut().zip(arow) {
                    *d = p * (*d - dot);
                }
            }
            gemm_into(scale, View::of(&ds), View::of(&c.k).cols(h * dh, dh), 0.0, &mut dq, h * dh);
            gemm_into(scale, View::of(&ds).t(), View::of(&c.q).cols(h * dh, dh), 0.0, &mut dk, h * dh);
        }
        let mut dx = self.q.backward(store, &c.x, &dq, grads);
        let dxk = self.k.backward(store, &c.x, &dk, grads);
        let dxv = self.v.backward(store, &c.x, &dv, grads);
        ops::add_assign(dx.as_mut_slice(), dxk.as_slice());
        ops::add_assign(dx.as_mut_slice(), dxv.as_slice());
        dx
    }
}

/// Pre-norm transformer block: `x + attn(ln1(x))`, then `x + ff(ln2(x))`.
#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

pub struct BlockCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    ln2: LayerNormCache,
    ln2_out: Matrix,
    ff_pre: Matrix,
    ff_act: Matrix,
}

impl Block {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, ff: usize, rng: &mut Rng) -> Self {
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), width),
            attn: Attention::new(store, &format!("{name}.attn"), width, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), width),
            ff1: Linear::new(store, &format!("{name}.ff1"), width, ff, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), ff, width, rng),
        }
    }

    pub fn find(store: &ParamStore, name: &str, heads: usize) -> Option<Self> {
        Some(Self {
            ln1: LayerNorm::find(store, &format!("{name}.ln1"))?,
            attn: Attention::find(store, &format!("{name}.attn"), heads)?,
            ln2: LayerNorm::find(store, &format!("{name}.ln2"))?,
            ff1: Linear::find(store, &format!("{name}.ff1"))?,
            ff2: Linear::find(store, &format!("{name}.ff2"))?,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> (Matrix, BlockCache) {
        let (n1, ln1) = self.ln1.forward(store, x);
        let (a, attn) = self.attn.forward(store, &n1);
        let mut h = x.clone();
        ops::add_assign(h.as_mut_slice(), a.as_slice());
        let (n2, ln2) = self.ln2.forward(store, &h);
        let ff_pre = self.ff1.forward(store, &n2);
        let ff_act = ff_pre.map(ops::gelu);
        let f = self.ff2.forward(store, &ff_act);
        ops::add_assign(h.as_mut_slice(), f.as_slice());
        (
            h,
            BlockCache {
                ln1,
                attn,
                ln2,
                ln2_out: n2,
                ff_pre,
                ff_act,
            },
        )
    }

    pub fn backward(&self, store: &ParamStore, c: &BlockCache, dy: &Matrix, grads: &mut Grads) -> Matrix {
        let dact = self.ff2.backward(store, &c.ff_act, dy, grads);
        let mut dpre = dact;
        for (d, &x) in dpre.as_mut_slice().iter_mut().zip(c.ff_pre.as_slice()) {
            *d *= ops::gelu_grad(x);
        }
        let dn2 = self.ff1.backward(store, &c.ln2_out, &dpre, grads);
        let mut dh = self.ln2.backward(store, &c.ln2, &dn2, grads);
        ops::add_assign(dh.as_mut_slice(), dy.as_slice());
        let dn1 = self.attn.backward(store, &c.attn, &dh, grads);
        let dx1 = self.ln1.backward(store, &c.ln1, &dn1, grads);
        ops::add_assign(dh.as_mut_slice(), dx1.as_slice());
        dh
    }
}
