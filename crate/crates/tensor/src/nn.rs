//! Neural-network building blocks on top of the graph: linear layers,
//! layer normalization, and multi-head attention.

use rand::Rng;

use crate::graph::{Graph, TensorId};
use crate::init;
use crate::store::{ParamId, ParamStore};

/// y = x W (+ b). The weight is in×out.
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Self {
        let w = store.add(&format!("{name}.w"), d_in, d_out, init::xavier_uniform(rng, d_in, d_out));
        let b = bias.then(|| store.add(&format!("{name}.b"), 1, d_out, init::zeros(1, d_out)));
        Linear { w, b }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: TensorId) -> TensorId {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let bn = g.param(store, b);
                g.add_bias(y, bn)
            }
            None => y,
        }
    }
}

/// Row-wise layer normalization with learned gamma and beta.
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: store.add(&format!("{name}.gamma"), 1, d, init::ones(1, d)),
            beta: store.add(&format!("{name}.beta"), 1, d, init::zeros(1, d)),
        }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: TensorId) -> TensorId {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Multi-head scaled dot-product attention with bias-free q/k/v/output
/// projections.
pub struct MultiHeadAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub d: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d: usize,
        heads: usize,
    ) -> Self {
        assert!(
            heads > 0 && d % heads == 0,
            "multi_head_attention: dim {d} not divisible by {heads} heads"
        );
        let proj = |suffix: &str, rng: &mut R, store: &mut ParamStore| {
            store.add(&format!("{name}.{suffix}"), d, d, init::xavier_uniform(rng, d, d))
        };
        MultiHeadAttention {
            wq: proj("wq", rng, store),
            wk: proj("wk", rng, store),
            wv: proj("wv", rng, store),
            wo: proj("wo", rng, store),
            heads,
            d,
        }
    }

    /// Attend queries over keys/values. `causal` masks scores above the
    /// diagonal; it requires queries and keys of equal length.
    pub fn apply(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        queries: TensorId,
        keys: TensorId,
        values: TensorId,
        causal: bool,
    ) -> TensorId {
        let (nq, dq) = g.shape(queries);
        let (nk, _) = g.shape(keys);
        assert!(
            dq == self.d,
            "multi_head_attention: input dim {dq} does not match layer dim {}",
            self.d
        );
        if causal {
            assert!(
                nq == nk,
                "multi_head_attention: causal mask needs square scores, got {nq}x{nk}"
            );
        }
        let dh = self.d / self.heads;
        let wq = g.param(store, self.wq);
        let wk = g.param(store, self.wk);
        let wv = g.param(store, self.wv);
        let q = g.matmul(queries, wq);
        let k = g.matmul(keys, wk);
        let v = g.matmul(values, wv);

        let mask = causal.then(|| {
            let mut m = vec![0.0; nq * nk];
            for i in 0..nq {
                for j in (i + 1)..nk {
                    m[i * nk + j] = -1e9;
                }
            }
            g.input(nq, nk, m)
        });

        let mut heads_out = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt());
            let masked = match mask {
                Some(m) => g.add(scaled, m),
                None => scaled,
            };
            let attn = g.softmax_rows(masked);
            heads_out.push(g.matmul(attn, vh));
        }
        let cat = g.concat_cols(&heads_out);
        let wo = g.param(store, self.wo);
        g.matmul(cat, wo)
    }
}
