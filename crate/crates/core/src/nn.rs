//! Pre-norm transformer building blocks shared by every network in the crate.

use std::sync::Arc;

use crate::autograd::{Tape, Var};
use crate::params::{Init, Initializer, ParamId};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(init: &mut Initializer<'_, T>, name: &str, inp: usize, out: usize, std: f64) -> Self {
        let w = init.add(format!("{name}.w"), inp, out, Init::Normal(std));
        let b = init.add(format!("{name}.b"), 1, out, Init::Zeros);
        Self { w, b }
    }

    /// Xavier-style scale `1/sqrt(inp)`.
    pub fn glorot<T: Scalar>(init: &mut Initializer<'_, T>, name: &str, inp: usize, out: usize) -> Self {
        Self::new(init, name, inp, out, 1.0 / (inp.max(1) as f64).sqrt())
    }

    pub fn forward<T: Scalar>(&self, t: &mut Tape<'_, T>, x: Var) -> Var {
        let w = t.param(self.w);
        let b = t.param(self.b);
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub g: ParamId,
    pub b: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(init: &mut Initializer<'_, T>, name: &str, dim: usize) -> Self {
        Self { g: init.add(format!("{name}.g"), 1, dim, Init::Ones), b: init.add(format!("{name}.b"), 1, dim, Init::Zeros) }
    }

    pub fn forward<T: Scalar>(&self, t: &mut Tape<'_, T>, x: Var) -> Var {
        let g = t.param(self.g);
        let b = t.param(self.b);
        t.layer_norm(x, g, b)
    }
}

/// Row-major `q_len × k_len` attention permission mask.
#[derive(Clone, Debug)]
pub struct AttnMask {
    pub allowed: Arc<Vec<bool>>,
}

impl AttnMask {
    /// Every query may see every non-padding key.
    pub fn keys(q_len: usize, key_padding: &[bool]) -> Self {
        let allowed = (0..q_len).flat_map(|_| key_padding.iter().map(|&p| !p)).collect();
        Self { allowed: Arc::new(allowed) }
    }

    pub fn causal(len: usize) -> Self {
        let allowed = (0..len).flat_map(|q| (0..len).map(move |k| k <= q)).collect();
        Self { allowed: Arc::new(allowed) }
    }
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new<T: Scalar>(init: &mut Initializer<'_, T>, name: &str, d: usize, heads: usize) -> Self {
        Self {
            q: Linear::glorot(init, &format!("{name}.q"), d, d),
            k: Linear::glorot(init, &format!("{name}.k"), d, d),
            v: Linear::glorot(init, &format!("{name}.v"), d, d),
            o: Linear::glorot(init, &format!("{name}.o"), d, d),
            heads,
        }
    }

    pub fn forward<T: Scalar>(&self, t: &mut Tape<'_, T>, xq: Var, xkv: Var, mask: &AttnMask) -> Var {
        let q = self.q.forward(t, xq);
        let k = self.k.forward(t, xkv);
        let v = self.v.forward(t, xkv);
        let d = t.value(q).cols();
        let dh = d / self.heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (t.slice_cols(q, h * dh, dh), t.slice_cols(k, h * dh, dh), t.slice_cols(v, h * dh, dh))
            };
            let s = t.matmul_nt(qh, kh);
            let s = t.scale(s, scale);
            let p = t.masked_softmax(s, mask.allowed.clone());
            outs.push(t.matmul(p, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { t.concat_cols(&outs) };
        self.o.forward(t, cat)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(init: &mut Initializer<'_, T>, name: &str, d: usize, hidden: usize) -> Self {
        Self {
            up: Linear::glorot(init, &format!("{name}.up"), d, hidden),
            down: Linear::glorot(init, &format!("{name}.down"), hidden, d),
        }
    }

    pub fn forward<T: Scalar>(&self, t: &mut Tape<'_, T>, x: Var) -> Var {
        let h = self.up.forward(t, x);
        let h = t.gelu(h);
        self.down.forward(t, h)
    }
}

#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
}

impl EncoderBlock {
    pub fn new<T: Scalar>(init: &mut Initializer<'_, T>, name: &str, d: usize, heads: usize, ffn: usize) -> Self {
        Self {
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), d),
            attn: Attention::new(init, &format!("{name}.attn"), d, heads),
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), d),
            ff: FeedForward::new(init, &format!("{name}.ff"), d, ffn),
        }
    }

    pub fn forward<T: Scalar>(&self, t: &mut Tape<'_, T>, x: Var, mask: &AttnMask) -> Var {
        let h = self.ln1.forward(t, x);
        let a = self.attn.forward(t, h, h, mask);
        let a = t.dropout(a);
        let x = t.add(x, a);
        let h = self.ln2.forward(t, x);
        let f = self.ff.forward(t, h);
        let f = t.dropout(f);
        t.add(x, f)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub ln1: LayerNorm,
    pub self_attn: Attention,
    pub ln2: LayerNorm,
    pub cross: Attention,
    pub ln3: LayerNorm,
    pub ff: FeedForward,
}

impl DecoderBlock {
    pub fn new<T: Scalar>(init: &mut Initializer<'_, T>, name: &str, d: usize, heads: usize, ffn: usize) -> Self {
        Self {
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), d),
            self_attn: Attention::new(init, &format!("{name}.self"), d, heads),
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), d),
            cross: Attention::new(init, &format!("{name}.cross"), d, heads),
            ln3: LayerNorm::new(init, &format!("{name}.ln3"), d),
            ff: FeedForward::new(init, &format!("{name}.ff"), d, ffn),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        t: &mut Tape<'_, T>,
        y: Var,
        memory: Var,
        self_mask: &AttnMask,
        cross_mask: &AttnMask,
    ) -> Var {
        let h = self.ln1.forward(t, y);
        let a = self.self_attn.forward(t, h, h, self_mask);
        let a = t.dropout(a);
        let y = t.add(y, a);
        let h = self.ln2.forward(t, y);
        let c = self.cross.forward(t, h, memory, cross_mask);
        let c = t.dropout(c);
        let y = t.add(y, c);
        let h = self.ln3.forward(t, y);
        let f = self.ff.forward(t, h);
        let f = t.dropout(f);
        t.add(y, f)
    }
}
