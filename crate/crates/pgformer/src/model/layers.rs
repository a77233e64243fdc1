//! Transformer building blocks: linear/norm parameter bundles, multi-head
//! attention, the feed-forward block, and sinusoidal positional embeddings.

use crate::error::Result;
use crate::numerics::{NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::xqa::xavier;

#[derive(Clone, Copy, Debug)]
pub(crate) struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearIds {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        Self {
            w: store.add(format!("{prefix}.w"), xavier(rng, d_in, d_out), true),
            b: store.add(format!("{prefix}.b"), Tensor::zeros(vec![d_out]), true),
        }
    }

    /// Xavier weights shrunk by `scale`; near-zero output layers keep a
    /// fresh model close to a neutral baseline without killing gradients
    /// or input sensitivity.
    pub fn init_scaled(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        scale: f64,
        rng: &mut impl rand::Rng,
    ) -> Self {
        Self {
            w: store.add(format!("{prefix}.w"), xavier(rng, d_in, d_out).scale(scale), true),
            b: store.add(format!("{prefix}.b"), Tensor::zeros(vec![d_out]), true),
        }
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.param(ps, self.w);
        let b = tape.param(ps, self.b);
        tape.linear(x, w, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerNormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormIds {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize) -> Self {
        Self {
            gain: store.add(format!("{prefix}.g"), Tensor::full(vec![d], 1.0), true),
            bias: store.add(format!("{prefix}.b"), Tensor::zeros(vec![d]), true),
        }
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamStore, x: NodeId) -> Result<NodeId> {
        let g = tape.param(ps, self.gain);
        let b = tape.param(ps, self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Standard multi-head attention with `1/√d_h` scaling. Heads project to
/// `heads * head_width` and an output projection maps back to the model
/// width.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MhaIds {
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub out: LinearIds,
    pub heads: usize,
    pub head_width: usize,
}

impl MhaIds {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        heads: usize,
        head_width: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let inner = heads * head_width;
        Self {
            q: LinearIds::init(store, &format!("{prefix}.q"), width, inner, rng),
            k: LinearIds::init(store, &format!("{prefix}.k"), width, inner, rng),
            v: LinearIds::init(store, &format!("{prefix}.v"), width, inner, rng),
            out: LinearIds::init(store, &format!("{prefix}.out"), inner, width, rng),
            heads,
            head_width,
        }
    }

    /// `queries` attends over `memory`; pass the same node for self-attention.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ps: &ParamStore,
        queries: NodeId,
        memory: NodeId,
    ) -> Result<NodeId> {
        let q = self.q.forward(tape, ps, queries)?;
        let k = self.k.forward(tape, ps, memory)?;
        let v = self.v.forward(tape, ps, memory)?;
        let scale = 1.0 / (self.head_width as f64).sqrt();
        let mut heads_out = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (c0, c1) = (h * self.head_width, (h + 1) * self.head_width);
            let qh = tape.slice_cols(q, c0, c1)?;
            let kh = tape.slice_cols(k, c0, c1)?;
            let vh = tape.slice_cols(v, c0, c1)?;
            let kt = tape.transpose(kh);
            let scores = tape.matmul(qh, kt)?;
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scaled);
            heads_out.push(tape.matmul(attn, vh)?);
        }
        let cat = if heads_out.len() == 1 {
            heads_out[0]
        } else {
            tape.concat_cols(&heads_out)?
        };
        self.out.forward(tape, ps, cat)
    }
}

/// Two-layer feed-forward block with ReLU.
#[derive(Clone, Copy, Debug)]
pub(crate) struct FfnIds {
    pub fc1: LinearIds,
    pub fc2: LinearIds,
}

impl FfnIds {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        hidden: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        Self {
            fc1: LinearIds::init(store, &format!("{prefix}.fc1"), width, hidden, rng),
            fc2: LinearIds::init(store, &format!("{prefix}.fc2"), hidden, width, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamStore, x: NodeId) -> Result<NodeId> {
        let h = self.fc1.forward(tape, ps, x)?;
        let r = tape.relu(h);
        self.fc2.forward(tape, ps, r)
    }
}

/// Sinusoidal positional embedding table `[length, width]`:
/// `pe[p, 2i] = sin(p / 10000^(2i/width))`, `pe[p, 2i+1] = cos(...)`.
pub fn positional_encoding(length: usize, width: usize) -> Tensor {
    let mut pe = Tensor::zeros(vec![length, width]);
    for p in 0..length {
        for j in 0..width {
            let i = (j / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * i / width as f64);
            let v = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            pe.set2(p, j, v);
        }
    }
    pe
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_encoding_row_zero_is_sin0_cos0() {
        let pe = positional_encoding(3, 6);
        for j in 0..6 {
            let expect = if j % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(pe.get2(0, j), expect);
        }
    }

    #[test]
    fn positional_rows_differ() {
        let pe = positional_encoding(4, 8);
        assert!(pe.get2(1, 0) != pe.get2(2, 0));
    }
}
