//! Graph-convolutional pose decoding: each joint is a node, the adjacency is
//! dense and learnable (symmetrized at use), and a four-layer stack with
//! per-layer 3x3 feature transforms refines each token's pose with a
//! residual across the whole block.

use crate::error::Result;
use crate::model::layers::LinearIds;
use crate::numerics::{NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::xqa::xavier;

pub(crate) const GCN_LAYERS: usize = 4;

#[derive(Clone, Debug)]
pub(crate) struct GcnIds {
    /// Per-token projection from model width to 3J.
    pub proj: LinearIds,
    /// Learnable dense adjacency `[J, J]`.
    pub adjacency: ParamId,
    /// Bias-free per-layer feature transforms `[3, 3]`.
    pub layer_weights: Vec<ParamId>,
}

impl GcnIds {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        joints: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        // Near-zero projection: a fresh model decodes tokens to almost
        // nothing, so with the anchor token the initial prediction stays
        // close to a hold of the last observed pose.
        let proj = LinearIds::init_scaled(store, &format!("{prefix}.proj"), width, 3 * joints, 1e-3, rng);
        let adj_data = (0..joints * joints)
            .map(|_| rng.random_range(-0.1..0.1))
            .collect();
        let adjacency = store.add(
            format!("{prefix}.adjacency"),
            Tensor::new(vec![joints, joints], adj_data).unwrap(),
            true,
        );
        let layer_weights = (0..GCN_LAYERS)
            .map(|i| store.add(format!("{prefix}.layer{i}.w"), xavier(rng, 3, 3), true))
            .collect();
        Self {
            proj,
            adjacency,
            layer_weights,
        }
    }

    /// Run the graph stack over each token of a `[N, 3J]` sequence.
    ///
    /// Per token: reshape to `[J, 3]`, apply `tanh(Â X W)` for the first
    /// layers and a linear last layer, then add the token back (residual
    /// across the block). Zeroed layer weights therefore pass tokens through
    /// unchanged.
    pub fn forward(
        &self,
        tape: &mut Tape,
        ps: &ParamStore,
        tokens: NodeId,
        joints: usize,
    ) -> Result<NodeId> {
        let (n, cols) = tape.value(tokens).mat_dims();
        debug_assert_eq!(cols, 3 * joints);
        let adj = tape.param(ps, self.adjacency);
        let adj_t = tape.transpose(adj);
        let sum = tape.add(adj, adj_t)?;
        let sym = tape.scale(sum, 0.5);
        let weights: Vec<NodeId> = self
            .layer_weights
            .iter()
            .map(|&w| tape.param(ps, w))
            .collect();
        let mut out_tokens = Vec::with_capacity(n);
        for t in 0..n {
            let row = tape.slice_rows(tokens, t, t + 1)?;
            let pose = tape.reshape(row, vec![joints, 3])?;
            let mut x = pose;
            for (i, &w) in weights.iter().enumerate() {
                let mixed = tape.matmul(sym, x)?;
                let y = tape.matmul(mixed, w)?;
                x = if i + 1 < weights.len() { tape.tanh(y) } else { y };
            }
            let res = tape.add(pose, x)?;
            out_tokens.push(tape.reshape(res, vec![1, 3 * joints])?);
        }
        tape.concat_rows(&out_tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeroed_weights_pass_tokens_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut store = ParamStore::new();
        let gcn = GcnIds::init(&mut store, "gcn", 8, 4, &mut rng);
        for &w in &gcn.layer_weights {
            store.get_mut(w).value = Tensor::zeros(vec![3, 3]);
        }
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..2 * 12).map(|i| i as f64).collect();
        let tokens = tape.input(Tensor::new(vec![2, 12], data.clone()).unwrap());
        let out = gcn.forward(&mut tape, &store, tokens, 4).unwrap();
        assert_eq!(tape.value(out).data(), data.as_slice());
    }

    #[test]
    fn output_shape_matches_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut store = ParamStore::new();
        let gcn = GcnIds::init(&mut store, "gcn", 8, 5, &mut rng);
        let mut tape = Tape::new();
        let tokens = tape.input(Tensor::full(vec![3, 15], 0.5));
        let out = gcn.forward(&mut tape, &store, tokens, 5).unwrap();
        assert_eq!(tape.value(out).shape(), &[3, 15]);
        assert!(tape.value(out).is_finite());
    }
}
