//! Append-only computation record with eager forward evaluation and
//! reverse-mode backward.

use std::collections::BTreeMap;

use crate::store::{ParamId, ParamStore};
use crate::Precision;

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TensorId(usize);

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Add,
    AddBias,
    AddConst,
    Mul,
    Scale(f64),
    Matmul,
    Transpose,
    ConcatCols,
    ConcatRows,
    SliceCols { start: usize },
    SliceRows { start: usize },
    Embedding { rows: Vec<usize> },
    SoftmaxRows,
    LogSoftmaxRows,
    LayerNorm,
    Gelu,
    Log,
    Exp,
    MeanPoolRows,
    SumAll,
    CosineSim,
    Gather { coords: Vec<(usize, usize)> },
}

struct Node {
    op: Op,
    inputs: Vec<TensorId>,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    /// Parameter gradients, keyed by id, in deterministic order.
    pub params: BTreeMap<ParamId, Vec<f64>>,
    node_grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to any node (input nodes included), if the
    /// node was reached from a seed.
    pub fn wrt(&self, id: TensorId) -> Option<&[f64]> {
        self.node_grads[id.0].as_deref()
    }
}

/// The computation record. Building an op computes its value at once.
pub struct Graph {
    precision: Precision,
    nodes: Vec<Node>,
}

fn matmul_slices(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

impl Graph {
    pub fn new(precision: Precision) -> Self {
        Graph { precision, nodes: Vec::new() }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        let n = &self.nodes[id.0];
        assert!(
            n.rows == 1 && n.cols == 1,
            "scalar_value: node is {}x{}, not 1x1",
            n.rows,
            n.cols
        );
        n.value[0]
    }

    fn push(&mut self, op: Op, inputs: Vec<TensorId>, rows: usize, cols: usize, mut value: Vec<f64>) -> TensorId {
        debug_assert_eq!(value.len(), rows * cols);
        self.precision.round_vec(&mut value);
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node { op, inputs, rows, cols, value });
        id
    }

    fn node(&self, id: TensorId) -> &Node {
        &self.nodes[id.0]
    }

    // -- leaves ------------------------------------------------------

    pub fn input(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> TensorId {
        assert_eq!(
            values.len(),
            rows * cols,
            "input: {} values for shape {rows}x{cols}",
            values.len()
        );
        self.push(Op::Input, vec![], rows, cols, values)
    }

    pub fn input_row(&mut self, values: Vec<f64>) -> TensorId {
        let cols = values.len();
        self.input(1, cols, values)
    }

    pub fn scalar(&mut self, value: f64) -> TensorId {
        self.input(1, 1, vec![value])
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> TensorId {
        let (rows, cols) = store.shape(id);
        self.push(Op::Param(id), vec![], rows, cols, store.values(id).to_vec())
    }

    // -- elementwise -------------------------------------------------

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert!(
            ar == br && ac == bc,
            "add: shape mismatch ({ar}x{ac} vs {br}x{bc})"
        );
        let value = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add, vec![a, b], ar, ac, value)
    }

    /// Add a 1×n bias row to every row of an m×n matrix.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> TensorId {
        let (xr, xc) = self.shape(x);
        let (br, bc) = self.shape(bias);
        assert!(
            br == 1 && bc == xc,
            "add_bias: shape mismatch ({xr}x{xc} vs {br}x{bc})"
        );
        let bv = self.node(bias).value.clone();
        let value = self
            .node(x)
            .value
            .chunks(xc)
            .flat_map(|row| row.iter().zip(&bv).map(|(v, b)| v + b).collect::<Vec<_>>())
            .collect();
        self.push(Op::AddBias, vec![x, bias], xr, xc, value)
    }

    pub fn add_const(&mut self, a: TensorId, c: f64) -> TensorId {
        let (r, cl) = self.shape(a);
        let value = self.node(a).value.iter().map(|v| v + c).collect();
        self.push(Op::AddConst, vec![a], r, cl, value)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert!(
            ar == br && ac == bc,
            "mul: shape mismatch ({ar}x{ac} vs {br}x{bc})"
        );
        let value = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(x, y)| x * y)
            .collect();
        self.push(Op::Mul, vec![a, b], ar, ac, value)
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let (r, cl) = self.shape(a);
        let value = self.node(a).value.iter().map(|v| v * c).collect();
        self.push(Op::Scale(c), vec![a], r, cl, value)
    }

    // -- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        assert!(
            ka == kb,
            "matmul: shape mismatch ({m}x{ka} vs {kb}x{n})"
        );
        let mut value = vec![0.0; m * n];
        matmul_slices(&self.node(a).value, m, ka, &self.node(b).value, n, &mut value);
        self.push(Op::Matmul, vec![a, b], m, n, value)
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let av = &self.node(a).value;
        let mut value = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                value[j * m + i] = av[i * n + j];
            }
        }
        self.push(Op::Transpose, vec![a], n, m, value)
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat_cols: no inputs");
        let rows = self.shape(parts[0]).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            assert!(
                r == rows,
                "concat_cols: shape mismatch ({rows} rows vs {r} rows)"
            );
            cols += c;
        }
        let mut value = vec![0.0; rows * cols];
        let mut at = 0;
        for &p in parts {
            let (_, c) = self.shape(p);
            let pv = &self.node(p).value;
            for i in 0..rows {
                value[i * cols + at..i * cols + at + c].copy_from_slice(&pv[i * c..(i + 1) * c]);
            }
            at += c;
        }
        self.push(Op::ConcatCols, parts.to_vec(), rows, cols, value)
    }

    pub fn concat_rows(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let cols = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut value = Vec::new();
        for &p in parts {
            let (r, c) = self.shape(p);
            assert!(
                c == cols,
                "concat_rows: shape mismatch ({cols} cols vs {c} cols)"
            );
            rows += r;
            value.extend_from_slice(&self.node(p).value);
        }
        self.push(Op::ConcatRows, parts.to_vec(), rows, cols, value)
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> TensorId {
        let (m, n) = self.shape(a);
        assert!(
            start + len <= n,
            "slice_cols: columns {start}..{} out of range for {m}x{n}",
            start + len
        );
        let av = &self.node(a).value;
        let mut value = Vec::with_capacity(m * len);
        for i in 0..m {
            value.extend_from_slice(&av[i * n + start..i * n + start + len]);
        }
        self.push(Op::SliceCols { start }, vec![a], m, len, value)
    }

    pub fn slice_rows(&mut self, a: TensorId, start: usize, len: usize) -> TensorId {
        let (m, n) = self.shape(a);
        assert!(
            start + len <= m,
            "slice_rows: rows {start}..{} out of range for {m}x{n}",
            start + len
        );
        let value = self.node(a).value[start * n..(start + len) * n].to_vec();
        self.push(Op::SliceRows { start }, vec![a], len, n, value)
    }

    /// Gather whole rows of a table (used for embedding lookup).
    pub fn embedding(&mut self, table: TensorId, rows: Vec<usize>) -> TensorId {
        let (v, d) = self.shape(table);
        for &r in &rows {
            assert!(r < v, "embedding: row {r} out of range for {v}x{d} table");
        }
        let tv = &self.node(table).value;
        let mut value = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            value.extend_from_slice(&tv[r * d..(r + 1) * d]);
        }
        let n = rows.len();
        self.push(Op::Embedding { rows }, vec![table], n, d, value)
    }

    /// Pick individual elements (row, col) into a 1×len row.
    pub fn gather(&mut self, a: TensorId, coords: Vec<(usize, usize)>) -> TensorId {
        let (m, n) = self.shape(a);
        let av = &self.node(a).value;
        let mut value = Vec::with_capacity(coords.len());
        for &(r, c) in &coords {
            assert!(r < m && c < n, "gather: ({r},{c}) out of range for {m}x{n}");
            value.push(av[r * n + c]);
        }
        let len = coords.len();
        self.push(Op::Gather { coords }, vec![a], 1, len, value)
    }

    // -- nonlinearities ----------------------------------------------

    pub fn softmax_rows(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let av = &self.node(a).value;
        let mut value = vec![0.0; m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                value[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                value[i * n + j] /= sum;
            }
        }
        self.push(Op::SoftmaxRows, vec![a], m, n, value)
    }

    pub fn log_softmax_rows(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let av = &self.node(a).value;
        let mut value = vec![0.0; m * n];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..n {
                value[i * n + j] = row[j] - lse;
            }
        }
        self.push(Op::LogSoftmaxRows, vec![a], m, n, value)
    }

    /// Row-wise layer normalization with affine output: gamma and beta
    /// are 1×n.
    pub fn layer_norm(&mut self, x: TensorId, gamma: TensorId, beta: TensorId) -> TensorId {
        let (m, n) = self.shape(x);
        let (gr, gc) = self.shape(gamma);
        let (br, bc) = self.shape(beta);
        assert!(
            gr == 1 && gc == n && br == 1 && bc == n,
            "layer_norm: shape mismatch ({m}x{n} vs gamma {gr}x{gc}, beta {br}x{bc})"
        );
        let xv = &self.node(x).value;
        let gv = &self.node(gamma).value;
        let bv = &self.node(beta).value;
        let mut value = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..n {
                value[i * n + j] = (row[j] - mean) * rstd * gv[j] + bv[j];
            }
        }
        self.push(Op::LayerNorm, vec![x, gamma, beta], m, n, value)
    }

    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let value = self.node(a).value.iter().map(|&x| gelu_fwd(x)).collect();
        self.push(Op::Gelu, vec![a], m, n, value)
    }

    pub fn log(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let value = self
            .node(a)
            .value
            .iter()
            .map(|&x| {
                // NaN flows through so training code can diagnose it.
                assert!(!(x <= 0.0), "log: non-positive input {x}");
                x.ln()
            })
            .collect();
        self.push(Op::Log, vec![a], m, n, value)
    }

    pub fn exp(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        let value = self.node(a).value.iter().map(|&x| x.exp()).collect();
        self.push(Op::Exp, vec![a], m, n, value)
    }

    // -- reductions ---------------------------------------------------

    /// Column means: m×n → 1×n.
    pub fn mean_pool_rows(&mut self, a: TensorId) -> TensorId {
        let (m, n) = self.shape(a);
        assert!(m > 0, "mean_pool_rows: empty input");
        let av = &self.node(a).value;
        let mut value = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                value[j] += av[i * n + j];
            }
        }
        for v in &mut value {
            *v /= m as f64;
        }
        self.push(Op::MeanPoolRows, vec![a], 1, n, value)
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let value = vec![self.node(a).value.iter().sum::<f64>()];
        self.push(Op::SumAll, vec![a], 1, 1, value)
    }

    /// Cosine similarity of two 1×n rows. Panics on zero-norm input;
    /// non-finite values propagate so callers can report them.
    pub fn cosine_sim(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert!(
            ar == 1 && br == 1 && ac == bc,
            "cosine_sim: shape mismatch ({ar}x{ac} vs {br}x{bc})"
        );
        let av = &self.node(a).value;
        let bv = &self.node(b).value;
        let na = av.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = bv.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(na != 0.0 && nb != 0.0, "cosine_sim: zero-norm input");
        let dot = av.iter().zip(bv).map(|(x, y)| x * y).sum::<f64>();
        let value = vec![dot / (na * nb)];
        self.push(Op::CosineSim, vec![a, b], 1, 1, value)
    }

    // -- backward ------------------------------------------------------

    /// Backward from a scalar loss with seed 1. Panics if the node is
    /// not 1×1.
    pub fn backward(&self, loss: TensorId) -> Gradients {
        let (r, c) = self.shape(loss);
        assert!(r == 1 && c == 1, "backward: loss is {r}x{c}, not scalar");
        self.backward_seeded(&[(loss, vec![1.0])])
    }

    /// Backward from several seed nodes at once; each seed supplies the
    /// incoming gradient for its node.
    pub fn backward_seeded(&self, seeds: &[(TensorId, Vec<f64>)]) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (id, seed) in seeds {
            let node = &self.nodes[id.0];
            assert_eq!(
                seed.len(),
                node.value.len(),
                "backward: seed for node {} has {} values, node is {}x{}",
                id.0,
                seed.len(),
                node.rows,
                node.cols
            );
            match &mut grads[id.0] {
                Some(g) => {
                    for (gv, sv) in g.iter_mut().zip(seed) {
                        *gv += sv;
                    }
                }
                slot => *slot = Some(seed.clone()),
            }
        }

        let mut params: BTreeMap<ParamId, Vec<f64>> = BTreeMap::new();
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.step_backward(idx, &g, &mut grads, &mut params);
            grads[idx] = Some(g);
        }
        Gradients { params, node_grads: grads }
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], node_len: usize, id: TensorId, add: impl FnOnce(&mut [f64])) {
        let slot = grads[id.0].get_or_insert_with(|| vec![0.0; node_len]);
        add(slot);
    }

    fn step_backward(
        &self,
        idx: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        params: &mut BTreeMap<ParamId, Vec<f64>>,
    ) {
        let node = &self.nodes[idx];
        let ins = &node.inputs;
        match &node.op {
            Op::Input => {}
            Op::Param(pid) => {
                let acc = params.entry(*pid).or_insert_with(|| vec![0.0; g.len()]);
                for (a, gv) in acc.iter_mut().zip(g) {
                    *a += gv;
                }
            }
            Op::Add => {
                for &inp in ins {
                    let len = self.node(inp).value.len();
                    Self::accumulate(grads, len, inp, |slot| {
                        for (s, gv) in slot.iter_mut().zip(g) {
                            *s += gv;
                        }
                    });
                }
            }
            Op::AddBias => {
                let (m, n) = (node.rows, node.cols);
                let xlen = self.node(ins[0]).value.len();
                Self::accumulate(grads, xlen, ins[0], |slot| {
                    for (s, gv) in slot.iter_mut().zip(g) {
                        *s += gv;
                    }
                });
                Self::accumulate(grads, n, ins[1], |slot| {
                    for i in 0..m {
                        for j in 0..n {
                            slot[j] += g[i * n + j];
                        }
                    }
                });
            }
            Op::AddConst => {
                let len = self.node(ins[0]).value.len();
                Self::accumulate(grads, len, ins[0], |slot| {
                    for (s, gv) in slot.iter_mut().zip(g) {
                        *s += gv;
                    }
                });
            }
            Op::Mul => {
                let av = &self.node(ins[0]).value;
                let bv = &self.node(ins[1]).value;
                Self::accumulate(grads, av.len(), ins[0], |slot| {
                    for i in 0..slot.len() {
                        slot[i] += g[i] * bv[i];
                    }
                });
                Self::accumulate(grads, bv.len(), ins[1], |slot| {
                    for i in 0..slot.len() {
                        slot[i] += g[i] * av[i];
                    }
                });
            }
            Op::Scale(c) => {
                let len = self.node(ins[0]).value.len();
                let c = *c;
                Self::accumulate(grads, len, ins[0], |slot| {
                    for (s, gv) in slot.iter_mut().zip(g) {
                        *s += gv * c;
                    }
                });
            }
            Op::Matmul => {
                let (m, k) = (self.node(ins[0]).rows, self.node(ins[0]).cols);
                let n = node.cols;
                let av = &self.node(ins[0]).value;
                let bv = &self.node(ins[1]).value;
                // dA = g @ B^T
                Self::accumulate(grads, m * k, ins[0], |slot| {
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            if gv == 0.0 {
                                continue;
                            }
                            for l in 0..k {
                                slot[i * k + l] += gv * bv[l * n + j];
                            }
                        }
                    }
                });
                // dB = A^T @ g
                Self::accumulate(grads, k * n, ins[1], |slot| {
                    for i in 0..m {
                        for l in 0..k {
                            let av_il = av[i * k + l];
                            if av_il == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                slot[l * n + j] += av_il * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Transpose => {
                let (m, n) = (node.rows, node.cols);
                Self::accumulate(grads, m * n, ins[0], |slot| {
                    // node is n_in x m_in transposed: node.rows = cols of input.
                    for i in 0..m {
                        for j in 0..n {
                            slot[j * m + i] += g[i * n + j];
                        }
                    }
                });
            }
            Op::ConcatCols => {
                let cols = node.cols;
                let rows = node.rows;
                let mut at = 0;
                for &inp in ins {
                    let c = self.node(inp).cols;
                    Self::accumulate(grads, rows * c, inp, |slot| {
                        for i in 0..rows {
                            for j in 0..c {
                                slot[i * c + j] += g[i * cols + at + j];
                            }
                        }
                    });
                    at += c;
                }
            }
            Op::ConcatRows => {
                let cols = node.cols;
                let mut at = 0;
                for &inp in ins {
                    let r = self.node(inp).rows;
                    Self::accumulate(grads, r * cols, inp, |slot| {
                        // Each input occupies a contiguous block of rows.
                        for (i, gv) in g[at * cols..(at + r) * cols].iter().enumerate() {
                            slot[i] += *gv;
                        }
                    });
                    at += r;
                }
            }
            Op::SliceCols { start } => {
                let (m, len) = (node.rows, node.cols);
                let n = self.node(ins[0]).cols;
                let start = *start;
                Self::accumulate(grads, m * n, ins[0], |slot| {
                    for i in 0..m {
                        for j in 0..len {
                            slot[i * n + start + j] += g[i * len + j];
                        }
                    }
                });
            }
            Op::SliceRows { start } => {
                let n = node.cols;
                let m_in = self.node(ins[0]).rows;
                let start = *start;
                Self::accumulate(grads, m_in * n, ins[0], |slot| {
                    // The sliced rows are contiguous in the input.
                    for (i, gv) in g.iter().enumerate() {
                        slot[start * n + i] += *gv;
                    }
                });
            }
            Op::Embedding { rows } => {
                let d = node.cols;
                let tlen = self.node(ins[0]).value.len();
                Self::accumulate(grads, tlen, ins[0], |slot| {
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..d {
                            slot[r * d + j] += g[i * d + j];
                        }
                    }
                });
            }
            Op::SoftmaxRows => {
                let (m, n) = (node.rows, node.cols);
                let y = &node.value;
                Self::accumulate(grads, m * n, ins[0], |slot| {
                    for i in 0..m {
                        let yr = &y[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            slot[i * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows => {
                let (m, n) = (node.rows, node.cols);
                let y = &node.value;
                Self::accumulate(grads, m * n, ins[0], |slot| {
                    for i in 0..m {
                        let yr = &y[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..n {
                            slot[i * n + j] += gr[j] - yr[j].exp() * gsum;
                        }
                    }
                });
            }
            Op::LayerNorm => {
                let (m, n) = (node.rows, node.cols);
                let xv = &self.node(ins[0]).value;
                let gv_gamma = &self.node(ins[1]).value;
                // dx
                Self::accumulate(grads, m * n, ins[0], |slot| {
                    for i in 0..m {
                        let row = &xv[i * n..(i + 1) * n];
                        let mean = row.iter().sum::<f64>() / n as f64;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let gr = &g[i * n..(i + 1) * n];
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..n {
                            let xhat = (row[j] - mean) * rstd;
                            let dxhat = gr[j] * gv_gamma[j];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xhat;
                        }
                        mean_dxhat /= n as f64;
                        mean_dxhat_xhat /= n as f64;
                        for j in 0..n {
                            let xhat = (row[j] - mean) * rstd;
                            let dxhat = gr[j] * gv_gamma[j];
                            slot[i * n + j] +=
                                rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                        }
                    }
                });
                // dgamma, dbeta
                Self::accumulate(grads, n, ins[1], |slot| {
                    for i in 0..m {
                        let row = &xv[i * n..(i + 1) * n];
                        let mean = row.iter().sum::<f64>() / n as f64;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        for j in 0..n {
                            let xhat = (row[j] - mean) * rstd;
                            slot[j] += g[i * n + j] * xhat;
                        }
                    }
                });
                Self::accumulate(grads, n, ins[2], |slot| {
                    for i in 0..m {
                        for j in 0..n {
                            slot[j] += g[i * n + j];
                        }
                    }
                });
            }
            Op::Gelu => {
                let xv = &self.node(ins[0]).value;
                Self::accumulate(grads, xv.len(), ins[0], |slot| {
                    for i in 0..slot.len() {
                        slot[i] += g[i] * gelu_bwd(xv[i]);
                    }
                });
            }
            Op::Log => {
                let xv = &self.node(ins[0]).value;
                Self::accumulate(grads, xv.len(), ins[0], |slot| {
                    for i in 0..slot.len() {
                        slot[i] += g[i] / xv[i];
                    }
                });
            }
            Op::Exp => {
                let y = &node.value;
                Self::accumulate(grads, y.len(), ins[0], |slot| {
                    for i in 0..slot.len() {
                        slot[i] += g[i] * y[i];
                    }
                });
            }
            Op::MeanPoolRows => {
                let n = node.cols;
                let m_in = self.node(ins[0]).rows;
                Self::accumulate(grads, m_in * n, ins[0], |slot| {
                    for i in 0..m_in {
                        for j in 0..n {
                            slot[i * n + j] += g[j] / m_in as f64;
                        }
                    }
                });
            }
            Op::SumAll => {
                let len = self.node(ins[0]).value.len();
                Self::accumulate(grads, len, ins[0], |slot| {
                    for s in slot.iter_mut() {
                        *s += g[0];
                    }
                });
            }
            Op::CosineSim => {
                let av = &self.node(ins[0]).value;
                let bv = &self.node(ins[1]).value;
                let na = av.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb = bv.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dot = av.iter().zip(bv).map(|(x, y)| x * y).sum::<f64>();
                let g0 = g[0];
                Self::accumulate(grads, av.len(), ins[0], |slot| {
                    for i in 0..slot.len() {
                        slot[i] += g0 * (bv[i] / (na * nb) - dot * av[i] / (na * na * na * nb));
                    }
                });
                Self::accumulate(grads, bv.len(), ins[1], |slot| {
                    for i in 0..slot.len() {
                        slot[i] += g0 * (av[i] / (na * nb) - dot * bv[i] / (nb * nb * nb * na));
                    }
                });
            }
            Op::Gather { coords } => {
                let n = self.node(ins[0]).cols;
                let len = self.node(ins[0]).value.len();
                Self::accumulate(grads, len, ins[0], |slot| {
                    for (i, &(r, c)) in coords.iter().enumerate() {
                        slot[r * n + c] += g[i];
                    }
                });
            }
        }
    }
}

fn gelu_fwd(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

fn gelu_bwd(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    const A: f64 = 0.044715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}
