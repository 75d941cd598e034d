use super::kernels::{axpy, dot, matmul_acc, matmul_grad_a, matmul_grad_b};
use super::{Gradients, NumericsError, ParamId, ParamStore, Result, Tensor, LAYER_NORM_EPS};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    Gather {
        src: usize,
        ids: Vec<usize>,
    },
    Assemble {
        parts: Vec<(usize, Vec<usize>)>,
    },
    Matmul {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Relu {
        x: usize,
    },
    Conv {
        x: usize,
        kernel: usize,
        bias: usize,
        dilation: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxXent {
        logits: usize,
        targets: Vec<usize>,
        lse: Vec<f64>,
    },
    Sum {
        x: usize,
    },
    Scale {
        x: usize,
        factor: f64,
    },
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation over parameters borrowed from a
/// [`ParamStore`] and replays it backwards into a [`Gradients`] buffer.
pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.tensor(*id),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    /// Non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf reading the registry buffer of `id`.
    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Selects rows of `src`; backward scatters additively.
    pub fn gather_rows(&mut self, src: Var, ids: &[usize]) -> Result<Var> {
        let s = self.value(src);
        let (rows, cols) = s.require_matrix("gather_rows")?;
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(NumericsError::Index {
                    index: id,
                    bound: rows,
                });
            }
            data.extend_from_slice(s.row(id));
        }
        let out = Tensor::new(vec![ids.len(), cols], data)?;
        let rg = self.req(src.0);
        Ok(self.push(
            out,
            Op::Gather {
                src: src.0,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Places the rows of each part at the given output positions; rows not
    /// covered by any part are zero and carry no gradient.
    pub fn assemble_rows(
        &mut self,
        rows: usize,
        cols: usize,
        parts: Vec<(Var, Vec<usize>)>,
    ) -> Result<Var> {
        let mut data = vec![0.0; rows * cols];
        let mut filled = vec![false; rows];
        let mut rg = false;
        for (part, positions) in &parts {
            let p = self.value(*part);
            let (pr, pc) = p.require_matrix("assemble_rows")?;
            if pc != cols || pr != positions.len() {
                return Err(NumericsError::Shape {
                    op: "assemble_rows",
                    left: vec![positions.len(), cols],
                    right: p.shape().to_vec(),
                });
            }
            for (r, &pos) in positions.iter().enumerate() {
                if pos >= rows || filled[pos] {
                    return Err(NumericsError::Contract(format!(
                        "assemble_rows: position {pos} out of range or duplicated"
                    )));
                }
                filled[pos] = true;
                data[pos * cols..(pos + 1) * cols].copy_from_slice(p.row(r));
            }
            rg |= self.req(part.0);
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        let parts = parts.into_iter().map(|(v, pos)| (v.0, pos)).collect();
        Ok(self.push(out, Op::Assemble { parts }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        let (m, k) = av.require_matrix("matmul")?;
        let (k2, n) = bv.require_matrix("matmul")?;
        if k != k2 {
            return Err(NumericsError::Shape {
                op: "matmul",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(av.data(), bv.data(), &mut out, m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        let rg = self.req(a.0) || self.req(b.0);
        Ok(self.push(out, Op::Matmul { a: a.0, b: b.0 }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(NumericsError::Shape {
                op: "add",
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.req(a.0) || self.req(b.0);
        Ok(self.push(out, Op::Add { a: a.0, b: b.0 }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let rg = self.req(x.0);
        self.push(out, Op::Relu { x: x.0 }, rg)
    }

    /// Causal 1-D convolution over the rows of `x` (positions × channels).
    /// Kernel tap `k` reads position `τ − (w−1−k)·dilation`; earlier
    /// positions read as zero.
    pub fn dilated_causal_conv1d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        dilation: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        let kv = self.value(kernel);
        let bv = self.value(bias);
        let (t, d_in) = xv.require_matrix("dilated_causal_conv1d")?;
        if kv.shape().len() != 3 || kv.shape()[1] != d_in || kv.shape()[0] == 0 {
            return Err(NumericsError::Shape {
                op: "dilated_causal_conv1d",
                left: xv.shape().to_vec(),
                right: kv.shape().to_vec(),
            });
        }
        let (w, d_out) = (kv.shape()[0], kv.shape()[2]);
        if bv.len() != d_out {
            return Err(NumericsError::Shape {
                op: "dilated_causal_conv1d bias",
                left: vec![d_out],
                right: bv.shape().to_vec(),
            });
        }
        if dilation == 0 {
            return Err(NumericsError::Contract("dilation must be positive".into()));
        }
        let kd = kv.data();
        let xd = xv.data();
        let mut out = vec![0.0; t * d_out];
        for tau in 0..t {
            let out_row = &mut out[tau * d_out..(tau + 1) * d_out];
            out_row.copy_from_slice(bv.data());
            for k in 0..w {
                let offset = (w - 1 - k) * dilation;
                if offset > tau {
                    continue;
                }
                let src = tau - offset;
                let x_row = &xd[src * d_in..(src + 1) * d_in];
                let tap = &kd[k * d_in * d_out..(k + 1) * d_in * d_out];
                for (i, &a) in x_row.iter().enumerate() {
                    if a != 0.0 {
                        axpy(a, &tap[i * d_out..(i + 1) * d_out], out_row);
                    }
                }
            }
        }
        let out = Tensor::new(vec![t, d_out], out)?;
        let rg = self.req(x.0) || self.req(kernel.0) || self.req(bias.0);
        Ok(self.push(
            out,
            Op::Conv {
                x: x.0,
                kernel: kernel.0,
                bias: bias.0,
                dilation,
            },
            rg,
        ))
    }

    /// Per-row normalization to zero mean and unit variance, then affine.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let gv = self.value(gain);
        let bv = self.value(bias);
        let (t, d) = xv.require_matrix("layer_norm")?;
        if d == 0 || gv.len() != d || bv.len() != d {
            return Err(NumericsError::Shape {
                op: "layer_norm",
                left: xv.shape().to_vec(),
                right: gv.shape().to_vec(),
            });
        }
        let mut normalized = vec![0.0; t * d];
        let mut inv_std = vec![0.0; t];
        let mut out = vec![0.0; t * d];
        for r in 0..t {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..d {
                let xh = (row[c] - mean) * inv;
                normalized[r * d + c] = xh;
                out[r * d + c] = gv.data()[c] * xh + bv.data()[c];
            }
        }
        let out = Tensor::new(vec![t, d], out)?;
        let rg = self.req(x.0) || self.req(gain.0) || self.req(bias.0);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// Sum over rows of `−log softmax(row)[target]`; targets are 0-based
    /// column indices, one per row.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (m, c) = lv.require_matrix("softmax_cross_entropy")?;
        if targets.len() != m {
            return Err(NumericsError::Shape {
                op: "softmax_cross_entropy",
                left: vec![m],
                right: vec![targets.len()],
            });
        }
        let mut lse = Vec::with_capacity(m);
        let mut total = 0.0;
        for (r, &target) in targets.iter().enumerate() {
            if target >= c {
                return Err(NumericsError::Index {
                    index: target,
                    bound: c,
                });
            }
            let row = lv.row(r);
            let l = super::log_sum_exp(row);
            lse.push(l);
            total += l - row[target];
        }
        let rg = self.req(logits.0);
        Ok(self.push(
            Tensor::scalar(total),
            Op::SoftmaxXent {
                logits: logits.0,
                targets: targets.to_vec(),
                lse,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.req(x.0);
        self.push(Tensor::scalar(total), Op::Sum { x: x.0 }, rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let rg = self.req(x.0);
        self.push(out, Op::Scale { x: x.0, factor }, rg)
    }

    /// Reverse-mode accumulation from a scalar `loss` into `grads`.
    /// Parameters reached through several graph sites receive the sum of
    /// all contributions.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward requires a scalar loss, found shape {:?}",
                lv.shape()
            )));
        }
        let mut node_grads: Vec<Option<Vec<f64>>> = Vec::new();
        node_grads.resize_with(loss.0 + 1, || None);
        node_grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = node_grads[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let mut sink = Sink {
                tape: self,
                node_grads: &mut node_grads,
                params: grads,
            };
            match &self.nodes[i].op {
                Op::Leaf | Op::Param(_) => {}
                Op::Gather { src, ids } => {
                    if let Some(s) = sink.slot(*src) {
                        let cols = g.len() / ids.len().max(1);
                        for (r, &id) in ids.iter().enumerate() {
                            let dst = &mut s[id * cols..(id + 1) * cols];
                            for (d, v) in dst.iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::Assemble { parts } => {
                    let cols = self.value(Var(i)).cols();
                    for (part, positions) in parts {
                        if let Some(s) = sink.slot(*part) {
                            for (r, &pos) in positions.iter().enumerate() {
                                let dst = &mut s[r * cols..(r + 1) * cols];
                                for (d, v) in dst.iter_mut().zip(&g[pos * cols..(pos + 1) * cols]) {
                                    *d += v;
                                }
                            }
                        }
                    }
                }
                Op::Matmul { a, b } => {
                    let av = self.value(Var(*a));
                    let bv = self.value(Var(*b));
                    let (m, k) = (av.rows(), av.cols());
                    let n = bv.cols();
                    if let Some(s) = sink.slot(*a) {
                        matmul_grad_a(&g, bv.data(), s, m, k, n);
                    }
                    if let Some(s) = sink.slot(*b) {
                        matmul_grad_b(av.data(), &g, s, m, k, n);
                    }
                }
                Op::Add { a, b } => {
                    for p in [*a, *b] {
                        if let Some(s) = sink.slot(p) {
                            for (d, v) in s.iter_mut().zip(&g) {
                                *d += v;
                            }
                        }
                    }
                }
                Op::Relu { x } => {
                    let xv = self.value(Var(*x));
                    if let Some(s) = sink.slot(*x) {
                        for ((d, v), &xi) in s.iter_mut().zip(&g).zip(xv.data()) {
                            if xi > 0.0 {
                                *d += v;
                            }
                        }
                    }
                }
                Op::Conv {
                    x,
                    kernel,
                    bias,
                    dilation,
                } => {
                    let xv = self.value(Var(*x));
                    let kv = self.value(Var(*kernel));
                    let (t, d_in) = (xv.rows(), xv.cols());
                    let (w, d_out) = (kv.shape()[0], kv.shape()[2]);
                    let taps = |tau: usize| {
                        (0..w).filter_map(move |k| {
                            let offset = (w - 1 - k) * dilation;
                            (offset <= tau).then(|| (k, tau - offset))
                        })
                    };
                    if let Some(s) = sink.slot(*bias) {
                        for tau in 0..t {
                            for (d, v) in s.iter_mut().zip(&g[tau * d_out..(tau + 1) * d_out]) {
                                *d += v;
                            }
                        }
                    }
                    if let Some(s) = sink.slot(*x) {
                        let kd = kv.data();
                        for tau in 0..t {
                            let dr = &g[tau * d_out..(tau + 1) * d_out];
                            for (k, src) in taps(tau) {
                                let tap = &kd[k * d_in * d_out..(k + 1) * d_in * d_out];
                                for i in 0..d_in {
                                    s[src * d_in + i] += dot(dr, &tap[i * d_out..(i + 1) * d_out]);
                                }
                            }
                        }
                    }
                    if let Some(s) = sink.slot(*kernel) {
                        let xd = xv.data();
                        for tau in 0..t {
                            let dr = &g[tau * d_out..(tau + 1) * d_out];
                            for (k, src) in taps(tau) {
                                let tap = &mut s[k * d_in * d_out..(k + 1) * d_in * d_out];
                                for i in 0..d_in {
                                    let a = xd[src * d_in + i];
                                    if a != 0.0 {
                                        axpy(a, dr, &mut tap[i * d_out..(i + 1) * d_out]);
                                    }
                                }
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let d = self.value(Var(*gain)).len();
                    let t = inv_std.len();
                    let gv = self.value(Var(*gain)).data();
                    if let Some(s) = sink.slot(*gain) {
                        for r in 0..t {
                            for c in 0..d {
                                s[c] += g[r * d + c] * normalized[r * d + c];
                            }
                        }
                    }
                    if let Some(s) = sink.slot(*bias) {
                        for r in 0..t {
                            for c in 0..d {
                                s[c] += g[r * d + c];
                            }
                        }
                    }
                    if let Some(s) = sink.slot(*x) {
                        let mut dxhat = vec![0.0; d];
                        for r in 0..t {
                            let xh = &normalized[r * d..(r + 1) * d];
                            for c in 0..d {
                                dxhat[c] = g[r * d + c] * gv[c];
                            }
                            let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                            let mean_dx = dot(&dxhat, xh) / d as f64;
                            for c in 0..d {
                                s[r * d + c] += inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                            }
                        }
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    lse,
                } => {
                    let lv = self.value(Var(*logits));
                    let c = lv.cols();
                    let scale = g[0];
                    if let Some(s) = sink.slot(*logits) {
                        for (r, &target) in targets.iter().enumerate() {
                            let row = lv.row(r);
                            let dst = &mut s[r * c..(r + 1) * c];
                            for (d, &z) in dst.iter_mut().zip(row) {
                                *d += scale * (z - lse[r]).exp();
                            }
                            dst[target] -= scale;
                        }
                    }
                }
                Op::Sum { x } => {
                    if let Some(s) = sink.slot(*x) {
                        for d in s.iter_mut() {
                            *d += g[0];
                        }
                    }
                }
                Op::Scale { x, factor } => {
                    if let Some(s) = sink.slot(*x) {
                        for (d, v) in s.iter_mut().zip(&g) {
                            *d += factor * v;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

struct Sink<'s, 't> {
    tape: &'s Tape<'t>,
    node_grads: &'s mut Vec<Option<Vec<f64>>>,
    params: &'s mut Gradients,
}

impl Sink<'_, '_> {
    /// Gradient buffer of node `idx`, or `None` when it needs no gradient.
    fn slot(&mut self, idx: usize) -> Option<&mut [f64]> {
        let node = &self.tape.nodes[idx];
        if !node.requires_grad {
            return None;
        }
        let len = self.tape.value(Var(idx)).len();
        match node.op {
            Op::Param(id) => Some(self.params.slot_mut(id, len)),
            _ => Some(self.node_grads[idx].get_or_insert_with(|| vec![0.0; len])),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn column(values: &[f64]) -> Tensor {
        Tensor::new(vec![values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn gather_selects_rows() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let e = tape.constant(matrix(&[&[1., 2.], &[3., 4.], &[5., 6.]]));
        let out = tape.gather_rows(e, &[2, 0]).unwrap();
        assert_eq!(tape.value(out).data(), &[5., 6., 1., 2.]);
        let empty = tape.gather_rows(e, &[]).unwrap();
        assert_eq!(tape.value(empty).shape(), &[0, 2]);
    }

    #[test]
    fn gather_out_of_range_names_id() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let e = tape.constant(matrix(&[&[1., 2.]]));
        let err = tape.gather_rows(e, &[0, 7]).unwrap_err();
        assert_eq!(err, NumericsError::Index { index: 7, bound: 1 });
        assert!(err.to_string().contains('7'));
    }

    #[test]
    fn repeated_gather_accumulates() {
        let mut store = ParamStore::new();
        let id = store.add("e", matrix(&[&[1., 2.], &[3., 4.], &[5., 6.]]));
        let mut tape = Tape::new(&store);
        let e = tape.param(id);
        let g = tape.gather_rows(e, &[1, 1]).unwrap();
        let loss = tape.sum(g);
        let mut grads = Gradients::new();
        tape.backward(loss, &mut grads).unwrap();
        assert_eq!(grads.get(id).unwrap(), &[0., 0., 2., 2., 0., 0.]);
    }

    #[test]
    fn matmul_examples() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let eye = tape.constant(matrix(&[&[1., 0.], &[0., 1.]]));
        let b = tape.constant(matrix(&[&[7., 8.], &[9., 0.]]));
        let out = tape.matmul(eye, b).unwrap();
        assert_eq!(tape.value(out).data(), &[7., 8., 9., 0.]);
        let a = tape.constant(matrix(&[&[3.]]));
        let b = tape.constant(matrix(&[&[1., 2.]]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).data(), &[3., 6.]);
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        match tape.matmul(a, b).unwrap_err() {
            NumericsError::Shape { left, right, .. } => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn conv_ones(dilation: usize) -> Vec<f64> {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(column(&[1.0; 5]));
        let k = tape.constant(Tensor::new(vec![3, 1, 1], vec![1.0; 3]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![1]));
        let out = tape.dilated_causal_conv1d(x, k, b, dilation).unwrap();
        tape.value(out).data().to_vec()
    }

    #[test]
    fn conv_zero_padding_arithmetic() {
        assert_eq!(conv_ones(1), vec![1., 2., 3., 3., 3.]);
        assert_eq!(conv_ones(2), vec![1., 1., 2., 2., 3.]);
    }

    #[test]
    fn conv_rejects_zero_dilation() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(column(&[1.0; 3]));
        let k = tape.constant(Tensor::new(vec![2, 1, 1], vec![1.0; 2]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![1]));
        assert!(tape.dilated_causal_conv1d(x, k, b, 0).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(matrix(&[&[5., 5., 5.]]));
        let g = tape.constant(Tensor::new(vec![3], vec![1.0; 3]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![3]));
        let y = tape.layer_norm(x, g, b).unwrap();
        assert_eq!(tape.value(y).data(), &[0., 0., 0.]);

        let x = tape.constant(matrix(&[&[-1., 1.]]));
        let g = tape.constant(Tensor::new(vec![2], vec![1.0; 2]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![2]));
        let y = tape.layer_norm(x, g, b).unwrap();
        for (got, want) in tape.value(y).data().iter().zip([-1.0, 1.0]) {
            assert!((got - want).abs() < 1e-8);
        }
    }

    #[test]
    fn relu_examples() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::new(vec![3], vec![-1., 0., 2.]).unwrap());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0., 0., 2.]);
        let x = tape.constant(Tensor::new(vec![2], vec![-3., -0.5]).unwrap());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0., 0.]);
    }

    #[test]
    fn relu_gradient_mask() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::new(vec![4], vec![-1., 0., 0.5, 2.]).unwrap());
        let mut tape = Tape::new(&store);
        let x = tape.param(id);
        let y = tape.relu(x);
        let loss = tape.sum(y);
        let mut grads = Gradients::new();
        tape.backward(loss, &mut grads).unwrap();
        assert_eq!(grads.get(id).unwrap(), &[0., 0., 1., 1.]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::zeros(vec![2, 3]));
        let mut tape = Tape::new(&store);
        let x = tape.param(id);
        let loss = tape.sum(x);
        let mut grads = Gradients::new();
        tape.backward(loss, &mut grads).unwrap();
        assert_eq!(grads.get(id).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::zeros(vec![2]));
        let mut tape = Tape::new(&store);
        let x = tape.param(id);
        let mut grads = Gradients::new();
        assert!(matches!(
            tape.backward(x, &mut grads),
            Err(NumericsError::Contract(_))
        ));
    }

    #[test]
    fn shared_kernel_gradient_doubles() {
        let mut store = ParamStore::new();
        let k = store.add("k", Tensor::new(vec![2, 1, 1], vec![0.3, -0.7]).unwrap());
        let b = store.add("b", Tensor::zeros(vec![1]));
        let input = column(&[0.5, -1.0, 2.0, 1.5]);

        let single = {
            let mut tape = Tape::new(&store);
            let x = tape.constant(input.clone());
            let (kv, bv) = (tape.param(k), tape.param(b));
            let y = tape.dilated_causal_conv1d(x, kv, bv, 1).unwrap();
            let loss = tape.sum(y);
            let mut grads = Gradients::new();
            tape.backward(loss, &mut grads).unwrap();
            grads.get(k).unwrap().to_vec()
        };
        let mut tape = Tape::new(&store);
        let x = tape.constant(input);
        let (k1, b1) = (tape.param(k), tape.param(b));
        let y1 = tape.dilated_causal_conv1d(x, k1, b1, 1).unwrap();
        let (k2, b2) = (tape.param(k), tape.param(b));
        let y2 = tape.dilated_causal_conv1d(x, k2, b2, 1).unwrap();
        let s1 = tape.sum(y1);
        let s2 = tape.sum(y2);
        let loss = tape.add(s1, s2).unwrap();
        let mut grads = Gradients::new();
        tape.backward(loss, &mut grads).unwrap();
        let shared = grads.get(k).unwrap();
        for (s, g) in shared.iter().zip(&single) {
            assert_eq!(*s, 2.0 * g);
        }
    }

    #[test]
    fn softmax_xent_of_zeros_is_log_classes() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let z = tape.constant(Tensor::zeros(vec![2, 4]));
        let loss = tape.softmax_cross_entropy(z, &[0, 3]).unwrap();
        let v = tape.value(loss).item().unwrap();
        assert!((v - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!(tape.softmax_cross_entropy(z, &[0, 4]).is_err());
    }
}
