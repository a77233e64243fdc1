//! Cross-query attention with a shared attention map, plus the proxy that
//! bridges the two interacting streams.
//!
//! Both persons' streams act as queries against each other and share one
//! score matrix `A`: one direction reads `softmax(A)`, the other
//! `softmax(Aᵀ)`. The raw module inputs serve as the attention values. The
//! proxy `P = Tᵀ Wtᵀ Wt T` is a symmetric PSD bilinear form inserted between
//! the two query matrices; `Wt` aggregates both streams, `T` is a small
//! learnable template matrix. No `1/√D` scaling is applied to the shared
//! map; the future-template attention uses the standard scaled form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{NodeId, ParamId, ParamStore, Tape, Tensor};

/// How the proxy enters the shared attention map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyMode {
    /// `A = Q_l · P · Q_fᵀ` with the `D×D` proxy.
    Bilinear,
    /// Plain `A = Q_l · Q_fᵀ`.
    Off,
    /// `A ∘ P'` with the `T×T` variant `P' = Wt T Tᵀ Wtᵀ`.
    GateMultiply,
    /// `A + P'`.
    GateAdd,
}

impl ProxyMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Self::Bilinear),
            "off" => Ok(Self::Off),
            "gate_mul" | "gate_multiply" => Ok(Self::GateMultiply),
            "gate_add" => Ok(Self::GateAdd),
            other => Err(Error::Config(format!(
                "unknown proxy mode '{other}' (expected bilinear, off, gate_mul or gate_add)"
            ))),
        }
    }
}

/// Parameter handles for one cross-query attention module.
///
/// The query and `Wt` projections belong to the module; the template
/// matrices and the future-template attention projections are typically
/// shared across modules (every id is `Copy`, so sharing is just reuse).
#[derive(Clone, Debug)]
pub struct XqaParams {
    /// Shared query projection, applied to both streams.
    pub query_w: ParamId,
    pub query_b: ParamId,
    /// Separate follower projection; `None` keeps the projection shared.
    pub query_f: Option<(ParamId, ParamId)>,
    /// Template weighting `Wt`: channel-concat of both streams, `2D -> M`.
    pub wt_w: ParamId,
    pub wt_b: ParamId,
    /// Encoder template matrix `T_en`, `[M, D]`.
    pub t_en: ParamId,
    /// Future-query matrix `T_q`, `[M, D]`.
    pub t_q: ParamId,
    /// Query/key/value projections for the future-template attention.
    pub fut_q: (ParamId, ParamId),
    pub fut_k: (ParamId, ParamId),
    pub fut_v: (ParamId, ParamId),
    pub proxy_mode: ProxyMode,
    /// Column blocks of the shared map; 1 reproduces the written equations.
    pub heads: usize,
}

pub(crate) fn xavier(rng: &mut impl rand::Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// The template matrices and future-template attention projections. One set
/// typically serves every module in a model.
#[derive(Clone, Copy, Debug)]
pub struct TemplateIds {
    pub t_en: ParamId,
    pub t_q: ParamId,
    pub fut_q: (ParamId, ParamId),
    pub fut_k: (ParamId, ParamId),
    pub fut_v: (ParamId, ParamId),
}

impl TemplateIds {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        m: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let t_en = store.add(format!("{prefix}.t_en"), xavier(rng, m, d).scale(0.5), true);
        let t_q = store.add(format!("{prefix}.t_q"), xavier(rng, m, d).scale(0.5), true);
        let fut_q = (
            store.add(format!("{prefix}.fut_q.w"), xavier(rng, d, d), true),
            store.add(format!("{prefix}.fut_q.b"), Tensor::zeros(vec![d]), true),
        );
        let fut_k = (
            store.add(format!("{prefix}.fut_k.w"), xavier(rng, d, d), true),
            store.add(format!("{prefix}.fut_k.b"), Tensor::zeros(vec![d]), true),
        );
        let fut_v = (
            store.add(format!("{prefix}.fut_v.w"), xavier(rng, d, d), true),
            store.add(format!("{prefix}.fut_v.b"), Tensor::zeros(vec![d]), true),
        );
        Self {
            t_en,
            t_q,
            fut_q,
            fut_k,
            fut_v,
        }
    }
}

impl XqaParams {
    /// Register a fresh self-contained module under `prefix` with its own
    /// templates.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        m: usize,
        proxy_mode: ProxyMode,
        heads: usize,
        shared_query: bool,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        let templates = TemplateIds::init(store, prefix, d, m, rng);
        Self::with_templates(
            store,
            prefix,
            d,
            m,
            proxy_mode,
            heads,
            shared_query,
            templates,
            rng,
        )
    }

    /// Register the per-module projections while referencing shared templates.
    #[allow(clippy::too_many_arguments)]
    pub fn with_templates(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        m: usize,
        proxy_mode: ProxyMode,
        heads: usize,
        shared_query: bool,
        templates: TemplateIds,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "xqa heads ({heads}) must divide the model width ({d})"
            )));
        }
        if m == 0 {
            return Err(Error::Config("template count M must be positive".into()));
        }
        let query_w = store.add(format!("{prefix}.query.w"), xavier(rng, d, d), true);
        let query_b = store.add(format!("{prefix}.query.b"), Tensor::zeros(vec![d]), true);
        let query_f = if shared_query {
            None
        } else {
            let w = store.add(format!("{prefix}.query_f.w"), xavier(rng, d, d), true);
            let b = store.add(format!("{prefix}.query_f.b"), Tensor::zeros(vec![d]), true);
            Some((w, b))
        };
        let wt_w = store.add(format!("{prefix}.wt.w"), xavier(rng, 2 * d, m), true);
        let wt_b = store.add(format!("{prefix}.wt.b"), Tensor::zeros(vec![m]), true);
        Ok(Self {
            query_w,
            query_b,
            query_f,
            wt_w,
            wt_b,
            t_en: templates.t_en,
            t_q: templates.t_q,
            fut_q: templates.fut_q,
            fut_k: templates.fut_k,
            fut_v: templates.fut_v,
            proxy_mode,
            heads,
        })
    }

    /// `Q = ReLU(FC(E))` for both streams.
    pub fn cross_queries(
        &self,
        tape: &mut Tape,
        ps: &ParamStore,
        e_l: NodeId,
        e_f: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let w = tape.param(ps, self.query_w);
        let b = tape.param(ps, self.query_b);
        let lin_l = tape.linear(e_l, w, b)?;
        let q_l = tape.relu(lin_l);
        let lin_f = match self.query_f {
            None => tape.linear(e_f, w, b)?,
            Some((wf, bf)) => {
                let wf = tape.param(ps, wf);
                let bf = tape.param(ps, bf);
                tape.linear(e_f, wf, bf)?
            }
        };
        let q_f = tape.relu(lin_f);
        Ok((q_l, q_f))
    }

    /// `Wt = FC(Concat[E_l, E_f])`, the aggregated spatial features `[T, M]`.
    pub fn weight_matrix(
        &self,
        tape: &mut Tape,
        ps: &ParamStore,
        e_l: NodeId,
        e_f: NodeId,
    ) -> Result<NodeId> {
        let cat = tape.concat_cols(&[e_l, e_f])?;
        let w = tape.param(ps, self.wt_w);
        let b = tape.param(ps, self.wt_b);
        tape.linear(cat, w, b)
    }

    /// Encoder templates as a tape node.
    pub fn template_node(&self, tape: &mut Tape, ps: &ParamStore) -> NodeId {
        tape.param(ps, self.t_en)
    }

    /// `T_de = Attention(T_q, T_en, T_en)` with projections and `1/√D` scaling.
    pub fn future_templates(&self, tape: &mut Tape, ps: &ParamStore) -> Result<NodeId> {
        let t_en = tape.param(ps, self.t_en);
        let t_q = tape.param(ps, self.t_q);
        let (qw, qb) = (tape.param(ps, self.fut_q.0), tape.param(ps, self.fut_q.1));
        let (kw, kb) = (tape.param(ps, self.fut_k.0), tape.param(ps, self.fut_k.1));
        let (vw, vb) = (tape.param(ps, self.fut_v.0), tape.param(ps, self.fut_v.1));
        let q = tape.linear(t_q, qw, qb)?;
        let k = tape.linear(t_en, kw, kb)?;
        let v = tape.linear(t_en, vw, vb)?;
        let d = tape.value(q).mat_dims().1 as f64;
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt)?;
        let scaled = tape.scale(scores, 1.0 / d.sqrt());
        let attn = tape.softmax_rows(scaled);
        tape.matmul(attn, v)
    }

    /// Full bidirectional module: `(O_l, O_f)` from the shared map.
    /// `templates` is `T_en` in the encoder and `T_de` in the decoder.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ps: &ParamStore,
        e_l: NodeId,
        e_f: NodeId,
        templates: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let (q_l, q_f) = self.cross_queries(tape, ps, e_l, e_f)?;
        let wt = if self.proxy_mode == ProxyMode::Off {
            None
        } else {
            Some(self.weight_matrix(tape, ps, e_l, e_f)?)
        };
        let d = tape.value(e_l).mat_dims().1;
        let dh = d / self.heads;
        let mut outs_l = Vec::with_capacity(self.heads);
        let mut outs_f = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let q_l_h = slice_head(tape, q_l, c0, c1, self.heads)?;
            let q_f_h = slice_head(tape, q_f, c0, c1, self.heads)?;
            let e_l_h = slice_head(tape, e_l, c0, c1, self.heads)?;
            let e_f_h = slice_head(tape, e_f, c0, c1, self.heads)?;
            let t_h = slice_head(tape, templates, c0, c1, self.heads)?;
            let a = match (self.proxy_mode, wt) {
                (ProxyMode::Off, _) | (_, None) => shared_attention(tape, q_l_h, q_f_h, None)?,
                (ProxyMode::Bilinear, Some(wt)) => {
                    let p = build_proxy(tape, wt, t_h)?;
                    shared_attention(tape, q_l_h, q_f_h, Some(p))?
                }
                (mode, Some(wt)) => {
                    let plain = shared_attention(tape, q_l_h, q_f_h, None)?;
                    let p_prime = gate_prime(tape, wt, t_h)?;
                    apply_gate(tape, plain, p_prime, mode)?
                }
            };
            let sm_l = tape.softmax_rows(a);
            let at = tape.transpose(a);
            let sm_f = tape.softmax_rows(at);
            outs_l.push(tape.matmul(sm_l, e_f_h)?);
            outs_f.push(tape.matmul(sm_f, e_l_h)?);
        }
        let o_l = concat_heads(tape, &outs_l)?;
        let o_f = concat_heads(tape, &outs_f)?;
        Ok((o_l, o_f))
    }

    /// Iterative extension to `n >= 2` persons with shared parameters.
    ///
    /// For each person the other streams are concatenated by time as the
    /// partner; only that person's output is produced per pair. The proxy's
    /// `Wt` aggregates the person with the mean of the other streams so the
    /// projection shape stays fixed for any `n`.
    pub fn forward_multi(
        &self,
        tape: &mut Tape,
        ps: &ParamStore,
        streams: &[NodeId],
        templates: NodeId,
    ) -> Result<Vec<NodeId>> {
        if streams.len() < 2 {
            return Err(Error::Contract(format!(
                "xqa_multi needs at least 2 persons, got {}",
                streams.len()
            )));
        }
        let d = tape.value(streams[0]).mat_dims().1;
        let dh = d / self.heads;
        let mut outputs = Vec::with_capacity(streams.len());
        for (l, &e_l) in streams.iter().enumerate() {
            let others: Vec<NodeId> = streams
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != l)
                .map(|(_, &s)| s)
                .collect();
            let e_all = tape.concat_rows(&others)?;
            let mut pseudo = others[0];
            for &o in &others[1..] {
                pseudo = tape.add(pseudo, o)?;
            }
            let pseudo = tape.scale(pseudo, 1.0 / others.len() as f64);
            let (q_l, q_f) = self.cross_queries(tape, ps, e_l, e_all)?;
            let wt = if self.proxy_mode == ProxyMode::Off {
                None
            } else {
                Some(self.weight_matrix(tape, ps, e_l, pseudo)?)
            };
            let mut outs = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let (c0, c1) = (h * dh, (h + 1) * dh);
                let q_l_h = slice_head(tape, q_l, c0, c1, self.heads)?;
                let q_f_h = slice_head(tape, q_f, c0, c1, self.heads)?;
                let e_all_h = slice_head(tape, e_all, c0, c1, self.heads)?;
                let t_h = slice_head(tape, templates, c0, c1, self.heads)?;
                let a = match (self.proxy_mode, wt) {
                    (ProxyMode::Off, _) | (_, None) => shared_attention(tape, q_l_h, q_f_h, None)?,
                    (ProxyMode::Bilinear, Some(wt)) => {
                        let p = build_proxy(tape, wt, t_h)?;
                        shared_attention(tape, q_l_h, q_f_h, Some(p))?
                    }
                    (mode, Some(_)) => {
                        // A is [T, (n-1)T] here while P' is square; the gate
                        // combinations only exist for the pairwise module.
                        return Err(Error::Config(format!(
                            "proxy mode {mode:?} is not defined for n > 2 streams"
                        )));
                    }
                };
                let sm = tape.softmax_rows(a);
                outs.push(tape.matmul(sm, e_all_h)?);
            }
            outputs.push(concat_heads(tape, &outs)?);
        }
        Ok(outputs)
    }
}

fn slice_head(
    tape: &mut Tape,
    x: NodeId,
    c0: usize,
    c1: usize,
    heads: usize,
) -> Result<NodeId> {
    if heads == 1 {
        Ok(x)
    } else {
        tape.slice_cols(x, c0, c1)
    }
}

fn concat_heads(tape: &mut Tape, parts: &[NodeId]) -> Result<NodeId> {
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        tape.concat_cols(parts)
    }
}

/// `P = Tᵀ Wtᵀ Wt T`, the symmetric PSD proxy `[D, D]`.
pub fn build_proxy(tape: &mut Tape, wt: NodeId, templates: NodeId) -> Result<NodeId> {
    let g = tape.matmul(wt, templates)?; // [T, D]
    let gt = tape.transpose(g);
    tape.matmul(gt, g)
}

/// `A = Q_l · Qᶠᵀ`, optionally `Q_l · P · Qᶠᵀ`; no `1/√D` scaling.
pub fn shared_attention(
    tape: &mut Tape,
    q_l: NodeId,
    q_f: NodeId,
    proxy: Option<NodeId>,
) -> Result<NodeId> {
    let q_f_t = tape.transpose(q_f);
    match proxy {
        None => tape.matmul(q_l, q_f_t),
        Some(p) => {
            let qp = tape.matmul(q_l, p)?;
            tape.matmul(qp, q_f_t)
        }
    }
}

/// `P' = Wt T Tᵀ Wtᵀ`, the `[T, T]` gate variant of the proxy.
pub fn gate_prime(tape: &mut Tape, wt: NodeId, templates: NodeId) -> Result<NodeId> {
    let g = tape.matmul(wt, templates)?; // [T, D]
    let gt = tape.transpose(g);
    tape.matmul(g, gt)
}

/// Combine the plain map with `P'` per the ablation mode.
pub fn apply_gate(tape: &mut Tape, a: NodeId, p_prime: NodeId, mode: ProxyMode) -> Result<NodeId> {
    match mode {
        ProxyMode::GateMultiply => tape.mul(a, p_prime),
        ProxyMode::GateAdd => tape.add(a, p_prime),
        other => Err(Error::Config(format!(
            "apply_gate called with non-gate mode {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    fn fresh(
        rng: &mut ChaCha8Rng,
        d: usize,
        m: usize,
        mode: ProxyMode,
    ) -> (ParamStore, XqaParams) {
        let mut store = ParamStore::new();
        let params = XqaParams::init(&mut store, "xqa", d, m, mode, 1, true, rng).unwrap();
        (store, params)
    }

    fn set_value(store: &mut ParamStore, id: ParamId, t: Tensor) {
        store.get_mut(id).value = t;
    }

    #[test]
    fn queries_identity_projection_passes_nonnegative_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (mut store, params) = fresh(&mut rng, 3, 2, ProxyMode::Off);
        set_value(&mut store, params.query_w, Tensor::identity(3));
        set_value(&mut store, params.query_b, Tensor::zeros(vec![3]));
        let e = Tensor::from_rows(&[vec![0.5, 0.0, 2.0], vec![1.0, 3.0, 0.25]]);
        let mut tape = Tape::new();
        let e_l = tape.input(e.clone());
        let e_f = tape.input(e.clone());
        let (q_l, q_f) = params.cross_queries(&mut tape, &store, e_l, e_f).unwrap();
        assert_eq!(tape.value(q_l).data(), e.data());
        assert_eq!(tape.value(q_l).data(), tape.value(q_f).data());
    }

    #[test]
    fn queries_are_nonnegative_and_shared() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let (store, params) = fresh(&mut rng, 4, 2, ProxyMode::Off);
        let e = rand_tensor(&mut rng, vec![5, 4]);
        let mut tape = Tape::new();
        let e_l = tape.input(e.clone());
        let e_f = tape.input(e);
        let (q_l, q_f) = params.cross_queries(&mut tape, &store, e_l, e_f).unwrap();
        assert!(tape.value(q_l).data().iter().all(|&v| v >= 0.0));
        assert_eq!(tape.value(q_l).data(), tape.value(q_f).data());
    }

    #[test]
    fn proxy_zero_wt_gives_zero_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (mut store, params) = fresh(&mut rng, 4, 2, ProxyMode::Bilinear);
        set_value(&mut store, params.wt_w, Tensor::zeros(vec![8, 2]));
        set_value(&mut store, params.wt_b, Tensor::zeros(vec![2]));
        let mut tape = Tape::new();
        let e_l = tape.input(rand_tensor(&mut rng, vec![3, 4]));
        let e_f = tape.input(rand_tensor(&mut rng, vec![3, 4]));
        let wt = params.weight_matrix(&mut tape, &store, e_l, e_f).unwrap();
        let t = params.template_node(&mut tape, &store);
        let p = build_proxy(&mut tape, wt, t).unwrap();
        assert_eq!(tape.value(p).max_abs(), 0.0);
    }

    #[test]
    fn proxy_rank_one_case_has_trace_five() {
        // M=1, Wt column [1, 2], template row e_1: trace(P) = (wᵀw)(tᵀt) = 5.
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let d = 4;
        let (mut store, params) = fresh(&mut rng, d, 1, ProxyMode::Bilinear);
        // Wt = FC(concat(E_l, E_f)) picks the first channel of E_l.
        let mut pick = Tensor::zeros(vec![2 * d, 1]);
        pick.set2(0, 0, 1.0);
        set_value(&mut store, params.wt_w, pick);
        set_value(&mut store, params.wt_b, Tensor::zeros(vec![1]));
        let mut t_row = Tensor::zeros(vec![1, d]);
        t_row.set2(0, 0, 1.0);
        set_value(&mut store, params.t_en, t_row);
        let mut e_l = Tensor::zeros(vec![2, d]);
        e_l.set2(0, 0, 1.0);
        e_l.set2(1, 0, 2.0);
        let mut tape = Tape::new();
        let e_l = tape.input(e_l);
        let e_f = tape.input(Tensor::zeros(vec![2, d]));
        let wt = params.weight_matrix(&mut tape, &store, e_l, e_f).unwrap();
        assert_eq!(tape.value(wt).data(), &[1.0, 2.0]);
        let t = params.template_node(&mut tape, &store);
        let p = build_proxy(&mut tape, wt, t).unwrap();
        let trace: f64 = (0..d).map(|i| tape.value(p).get2(i, i)).sum();
        assert!((trace - 5.0).abs() < 1e-12);
        // Rank 1: P = 5 e_1 e_1ᵀ.
        assert!((tape.value(p).get2(0, 0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn proxy_is_symmetric_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let (store, params) = fresh(&mut rng, 6, 3, ProxyMode::Bilinear);
        let mut tape = Tape::new();
        let e_l = tape.input(rand_tensor(&mut rng, vec![4, 6]));
        let e_f = tape.input(rand_tensor(&mut rng, vec![4, 6]));
        let wt = params.weight_matrix(&mut tape, &store, e_l, e_f).unwrap();
        let t = params.template_node(&mut tape, &store);
        let p = build_proxy(&mut tape, wt, t).unwrap();
        let pv = tape.value(p);
        let sym = pv.sub(&pv.transpose()).unwrap().max_abs();
        assert!(sym < 1e-12, "proxy asymmetric: {sym}");
        for _ in 0..100 {
            let x = rand_tensor(&mut rng, vec![6, 1]);
            let quad = x.transpose().matmul(pv).unwrap().matmul(&x).unwrap();
            assert!(quad.data()[0] >= -1e-9, "negative Rayleigh quotient");
        }
    }

    #[test]
    fn attention_gram_symmetry_and_hand_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let q = rand_tensor(&mut rng, vec![4, 3]);
        let mut tape = Tape::new();
        let q_l = tape.input(q.clone());
        let q_f = tape.input(q);
        let a = shared_attention(&mut tape, q_l, q_f, None).unwrap();
        let av = tape.value(a);
        assert!(av.sub(&av.transpose()).unwrap().max_abs() < 1e-12);

        let mut tape = Tape::new();
        let q_l = tape.input(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let q_f = tape.input(Tensor::from_rows(&[vec![1.0, 1.0], vec![2.0, 0.0]]));
        let a = shared_attention(&mut tape, q_l, q_f, None).unwrap();
        assert_eq!(tape.value(a).data(), &[1.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn identity_proxy_reduces_to_plain_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut tape = Tape::new();
        let q_l = tape.input(rand_tensor(&mut rng, vec![3, 4]));
        let q_f = tape.input(rand_tensor(&mut rng, vec![3, 4]));
        let eye = tape.input(Tensor::identity(4));
        let plain = shared_attention(&mut tape, q_l, q_f, None).unwrap();
        let with_p = shared_attention(&mut tape, q_l, q_f, Some(eye)).unwrap();
        assert_eq!(tape.value(plain).data(), tape.value(with_p).data());
    }

    #[test]
    fn xqa_t1_returns_partner_inputs_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let (store, params) = fresh(&mut rng, 4, 2, ProxyMode::Bilinear);
        let el = rand_tensor(&mut rng, vec![1, 4]);
        let ef = rand_tensor(&mut rng, vec![1, 4]);
        let mut tape = Tape::new();
        let e_l = tape.input(el.clone());
        let e_f = tape.input(ef.clone());
        let t = params.template_node(&mut tape, &store);
        let (o_l, o_f) = params.forward(&mut tape, &store, e_l, e_f, t).unwrap();
        assert_eq!(tape.value(o_l).data(), ef.data());
        assert_eq!(tape.value(o_f).data(), el.data());
    }

    #[test]
    fn uniform_attention_returns_column_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let (mut store, params) = fresh(&mut rng, 3, 2, ProxyMode::Off);
        set_value(&mut store, params.query_w, Tensor::zeros(vec![3, 3]));
        set_value(&mut store, params.query_b, Tensor::zeros(vec![3]));
        let ef = rand_tensor(&mut rng, vec![4, 3]);
        let mut tape = Tape::new();
        let e_l = tape.input(rand_tensor(&mut rng, vec![4, 3]));
        let e_f = tape.input(ef.clone());
        let t = params.template_node(&mut tape, &store);
        let (o_l, _) = params.forward(&mut tape, &store, e_l, e_f, t).unwrap();
        for i in 0..4 {
            for c in 0..3 {
                let mean: f64 = (0..4).map(|r| ef.get2(r, c)).sum::<f64>() / 4.0;
                assert!((tape.value(o_l).get2(i, c) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swap_symmetry_with_proxy_off() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let (store, params) = fresh(&mut rng, 4, 2, ProxyMode::Off);
        let el = rand_tensor(&mut rng, vec![3, 4]);
        let ef = rand_tensor(&mut rng, vec![3, 4]);
        let mut tape = Tape::new();
        let e_l = tape.input(el.clone());
        let e_f = tape.input(ef.clone());
        let t = params.template_node(&mut tape, &store);
        let (o_l, o_f) = params.forward(&mut tape, &store, e_l, e_f, t).unwrap();
        let mut tape2 = Tape::new();
        let e_f2 = tape2.input(ef);
        let e_l2 = tape2.input(el);
        let t2 = params.template_node(&mut tape2, &store);
        let (o_l_swapped, o_f_swapped) =
            params.forward(&mut tape2, &store, e_f2, e_l2, t2).unwrap();
        assert_eq!(tape.value(o_l).data(), tape2.value(o_f_swapped).data());
        assert_eq!(tape.value(o_f).data(), tape2.value(o_l_swapped).data());
    }

    #[test]
    fn row_stochastic_in_both_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let q_l = rand_tensor(&mut rng, vec![5, 4]);
        let q_f = rand_tensor(&mut rng, vec![5, 4]);
        let mut tape = Tape::new();
        let q_l = tape.input(q_l);
        let q_f = tape.input(q_f);
        let a = shared_attention(&mut tape, q_l, q_f, None).unwrap();
        let sm = tape.softmax_rows(a);
        let at = tape.transpose(a);
        let sm_t = tape.softmax_rows(at);
        for node in [sm, sm_t] {
            let v = tape.value(node);
            for r in 0..5 {
                let sum: f64 = (0..5).map(|c| v.get2(r, c)).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gate_variants_are_neutral_at_identity_elements() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a_val = rand_tensor(&mut rng, vec![3, 3]);
        let mut tape = Tape::new();
        let a = tape.input(a_val.clone());
        let ones = tape.input(Tensor::full(vec![3, 3], 1.0));
        let zeros = tape.input(Tensor::zeros(vec![3, 3]));
        let mul = apply_gate(&mut tape, a, ones, ProxyMode::GateMultiply).unwrap();
        let add = apply_gate(&mut tape, a, zeros, ProxyMode::GateAdd).unwrap();
        assert_eq!(tape.value(mul).data(), a_val.data());
        assert_eq!(tape.value(add).data(), a_val.data());
        assert!(apply_gate(&mut tape, a, ones, ProxyMode::Bilinear).is_err());
    }

    #[test]
    fn gate_prime_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (store, params) = fresh(&mut rng, 4, 3, ProxyMode::GateMultiply);
        let mut tape = Tape::new();
        let e_l = tape.input(rand_tensor(&mut rng, vec![5, 4]));
        let e_f = tape.input(rand_tensor(&mut rng, vec![5, 4]));
        let wt = params.weight_matrix(&mut tape, &store, e_l, e_f).unwrap();
        let t = params.template_node(&mut tape, &store);
        let p = gate_prime(&mut tape, wt, t).unwrap();
        let pv = tape.value(p);
        assert!(pv.sub(&pv.transpose()).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn future_templates_single_and_identical_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let d = 4;
        let (store, params) = fresh(&mut rng, d, 1, ProxyMode::Bilinear);
        let mut tape = Tape::new();
        let t_de = params.future_templates(&mut tape, &store).unwrap();
        // With one key the softmax weight is 1: T_de = proj_v(T_en).
        let t_en = tape.param(&store, params.t_en);
        let (vw, vb) = (tape.param(&store, params.fut_v.0), tape.param(&store, params.fut_v.1));
        let projected = tape.linear(t_en, vw, vb).unwrap();
        let diff = tape
            .value(t_de)
            .sub(tape.value(projected))
            .unwrap()
            .max_abs();
        assert!(diff < 1e-12);

        let (mut store3, params3) = fresh(&mut rng, d, 3, ProxyMode::Bilinear);
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let same = Tensor::from_rows(&[row.clone(), row.clone(), row]);
        set_value(&mut store3, params3.t_en, same);
        let mut tape3 = Tape::new();
        let t_de3 = params3.future_templates(&mut tape3, &store3).unwrap();
        let v = tape3.value(t_de3);
        for r in 1..3 {
            for c in 0..d {
                assert!((v.get2(r, c) - v.get2(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn future_templates_match_direct_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let d = 5;
        let m = 3;
        let (store, params) = fresh(&mut rng, d, m, ProxyMode::Bilinear);
        let mut tape = Tape::new();
        let t_de = params.future_templates(&mut tape, &store).unwrap();

        // Direct softmax-weighted-sum reference on plain tensors.
        let t_en = &store.get(params.t_en).value;
        let t_q = &store.get(params.t_q).value;
        let lin = |x: &Tensor, w: ParamId, b: ParamId| {
            let y = x.matmul(&store.get(w).value).unwrap();
            let bias = &store.get(b).value;
            let mut out = y.clone();
            for r in 0..out.rows() {
                for c in 0..out.cols() {
                    let v = out.get2(r, c) + bias.data()[c];
                    out.set2(r, c, v);
                }
            }
            out
        };
        let q = lin(t_q, params.fut_q.0, params.fut_q.1);
        let k = lin(t_en, params.fut_k.0, params.fut_k.1);
        let v = lin(t_en, params.fut_v.0, params.fut_v.1);
        let mut expect = Tensor::zeros(vec![m, d]);
        for r in 0..m {
            let scores: Vec<f64> = (0..m)
                .map(|i| {
                    (0..d).map(|c| q.get2(r, c) * k.get2(i, c)).sum::<f64>() / (d as f64).sqrt()
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in 0..d {
                let val = (0..m).map(|i| exps[i] / z * v.get2(i, c)).sum::<f64>();
                expect.set2(r, c, val);
            }
        }
        let diff = tape.value(t_de).sub(&expect).unwrap().max_abs();
        assert!(diff < 1e-12, "future templates mismatch {diff}");
    }

    #[test]
    fn multi_with_two_matches_pairwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let (store, params) = fresh(&mut rng, 4, 2, ProxyMode::Bilinear);
        let el = rand_tensor(&mut rng, vec![3, 4]);
        let ef = rand_tensor(&mut rng, vec![3, 4]);
        let mut tape = Tape::new();
        let e_l = tape.input(el.clone());
        let e_f = tape.input(ef.clone());
        let t = params.template_node(&mut tape, &store);
        let (o_l, _) = params.forward(&mut tape, &store, e_l, e_f, t).unwrap();
        let mut tape2 = Tape::new();
        let s0 = tape2.input(el);
        let s1 = tape2.input(ef);
        let t2 = params.template_node(&mut tape2, &store);
        let outs = params
            .forward_multi(&mut tape2, &store, &[s0, s1], t2)
            .unwrap();
        let diff = tape
            .value(o_l)
            .sub(tape2.value(outs[0]))
            .unwrap()
            .max_abs();
        assert!(diff < 1e-12, "n=2 multi mismatch {diff}");
    }

    #[test]
    fn multi_duplicated_persons_get_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let (store, params) = fresh(&mut rng, 4, 2, ProxyMode::Bilinear);
        let a = rand_tensor(&mut rng, vec![3, 4]);
        let b = rand_tensor(&mut rng, vec![3, 4]);
        let mut tape = Tape::new();
        let s0 = tape.input(a);
        let s1 = tape.input(b.clone());
        let s2 = tape.input(b);
        let t = params.template_node(&mut tape, &store);
        let outs = params
            .forward_multi(&mut tape, &store, &[s0, s1, s2], t)
            .unwrap();
        assert_eq!(tape.value(outs[1]).data(), tape.value(outs[2]).data());
    }

    #[test]
    fn multi_attention_rows_sum_to_one_over_partner_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(48);
        let (store, params) = fresh(&mut rng, 4, 2, ProxyMode::Off);
        let streams: Vec<Tensor> = (0..3).map(|_| rand_tensor(&mut rng, vec![3, 4])).collect();
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = streams.iter().map(|s| tape.input(s.clone())).collect();
        let t = params.template_node(&mut tape, &store);
        let outs = params.forward_multi(&mut tape, &store, &ids, t).unwrap();
        // Convexity: each output entry lies in [min, max] of the partner column.
        for (l, &o) in outs.iter().enumerate() {
            let others: Vec<&Tensor> = streams
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != l)
                .map(|(_, s)| s)
                .collect();
            for c in 0..4 {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for part in &others {
                    for r in 0..3 {
                        lo = lo.min(part.get2(r, c));
                        hi = hi.max(part.get2(r, c));
                    }
                }
                for r in 0..3 {
                    let v = tape.value(o).get2(r, c);
                    assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn convex_combination_bound_pairwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(49);
        let (store, params) = fresh(&mut rng, 4, 2, ProxyMode::Bilinear);
        let ef = rand_tensor(&mut rng, vec![6, 4]);
        let mut tape = Tape::new();
        let e_l = tape.input(rand_tensor(&mut rng, vec![6, 4]));
        let e_f = tape.input(ef.clone());
        let t = params.template_node(&mut tape, &store);
        let (o_l, _) = params.forward(&mut tape, &store, e_l, e_f, t).unwrap();
        for c in 0..4 {
            let lo = (0..6).map(|r| ef.get2(r, c)).fold(f64::INFINITY, f64::min);
            let hi = (0..6)
                .map(|r| ef.get2(r, c))
                .fold(f64::NEG_INFINITY, f64::max);
            for r in 0..6 {
                let v = tape.value(o_l).get2(r, c);
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn gradients_pass_finite_difference_checks() {
        let h = 1e-6;
        for seed in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (mut store, params) = fresh(&mut rng, 4, 2, ProxyMode::Bilinear);
            let el = rand_tensor(&mut rng, vec![3, 4]);
            let ef = rand_tensor(&mut rng, vec![3, 4]);
            let run = |store: &ParamStore| -> f64 {
                let mut tape = Tape::new();
                let e_l = tape.input(el.clone());
                let e_f = tape.input(ef.clone());
                let t_de = params.future_templates(&mut tape, store).unwrap();
                let (o_l, o_f) = params.forward(&mut tape, store, e_l, e_f, t_de).unwrap();
                let both = tape.concat_rows(&[o_l, o_f]).unwrap();
                let sq = tape.mul(both, both).unwrap();
                let loss = tape.mean_all(sq);
                tape.value(loss).data()[0]
            };
            store.zero_grads();
            {
                let mut tape = Tape::new();
                let e_l = tape.input(el.clone());
                let e_f = tape.input(ef.clone());
                let t_de = params.future_templates(&mut tape, &store).unwrap();
                let (o_l, o_f) = params.forward(&mut tape, &store, e_l, e_f, t_de).unwrap();
                let both = tape.concat_rows(&[o_l, o_f]).unwrap();
                let sq = tape.mul(both, both).unwrap();
                let loss = tape.mean_all(sq);
                tape.backward(loss, &mut store).unwrap();
            }
            for id in store.ids().collect::<Vec<_>>() {
                for k in 0..store.get(id).value.numel() {
                    let orig = store.get(id).value.data()[k];
                    store.get_mut(id).value.data_mut()[k] = orig + h;
                    let fp = run(&store);
                    store.get_mut(id).value.data_mut()[k] = orig - h;
                    let fm = run(&store);
                    store.get_mut(id).value.data_mut()[k] = orig;
                    let fd = (fp - fm) / (2.0 * h);
                    let ad = store.get(id).grad.data()[k];
                    let rel = (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-3);
                    assert!(
                        rel < 1e-5,
                        "param {} [{k}]: fd={fd} ad={ad} rel={rel}",
                        store.name(id)
                    );
                }
            }
        }
    }
}
