//! Define-by-run computation tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Operations append nodes
//! in topological order (inputs always precede their consumers), so the
//! backward sweep is a single reverse iteration that visits each node
//! exactly once. Gradients are plain `f64` accumulations in a fixed
//! order, which makes two backward runs over identical inputs
//! bit-identical.

use std::collections::BTreeMap;

use super::{NdError, Tensor};

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Sentinel slot for [`Graph::scatter_add`]: the input coordinate
/// contributes nowhere and receives zero gradient.
pub const DROP_SLOT: usize = usize::MAX;

/// Gradients keyed by parameter name, as produced by [`Graph::backward`].
pub type GradMap = BTreeMap<String, Tensor>;

#[derive(Debug)]
enum Op {
    Leaf,
    /// [m,k]·[k,n] -> [m,n]; [m,k]·[k] -> [m]; [k]·[k,n] -> [n]
    MatMul,
    /// [k]·[k] -> [1]
    Dot,
    /// Same shape, or [m,n] + [n] (row-broadcast bias)
    Add,
    /// Elementwise product, same shape
    Mul,
    /// [n] scaled by a [1] node
    MulScalar,
    /// Elementwise scale*x + shift; only the scale matters to the gradient
    Affine { scale: f64 },
    Sigmoid,
    Tanh,
    /// ln(max(x, floor)); gradient is zero on the clamped branch
    LnClamped { floor: f64 },
    /// Masked-out entries are exactly zero; enabled entries exp-normalized
    SoftmaxMasked { mask: Vec<bool> },
    /// 1-D inputs joined end to end
    Concat,
    /// Select rows of a matrix; duplicate ids accumulate gradient
    GatherRows { ids: Vec<usize> },
    /// Single matrix row as a vector
    Row { index: usize },
    /// 1-D inputs stacked as matrix rows
    StackRows,
    /// out[slots[i]] += in[i]
    ScatterAdd { slots: Vec<usize> },
    /// Single vector element as a [1] tensor
    Pick { index: usize },
    /// Sum of all elements -> [1]
    Sum,
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
    name: Option<String>,
}

/// The tape. See module docs.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Largest tensor materialized by any non-leaf node: an upper bound
    /// on the rows any single operation touched.
    pub fn max_intermediate_len(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .map(|n| n.value.len())
            .max()
            .unwrap_or(0)
    }

    /// Bind a constant input. Cheap: the data buffer is shared, not copied.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        let mut v = t.clone();
        v.requires_grad = false;
        self.push(Op::Leaf, vec![], v, None)
    }

    /// Bind a named parameter. Gradient is tracked when
    /// `t.requires_grad` is set.
    pub fn param(&mut self, name: &str, t: &Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], t.clone(), Some(name.to_string()))
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, name: Option<String>) -> NodeId {
        let needs_grad = match op {
            Op::Leaf => value.requires_grad,
            _ => inputs.iter().any(|i| self.nodes[i.0].needs_grad),
        };
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            inputs,
            value,
            grad: None,
            needs_grad,
            name,
        });
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NdError> {
        let value = matmul_value(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        Ok(self.push(Op::MatMul, vec![a, b], value, None))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NdError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rank() != 1 || tb.rank() != 1 || ta.len() != tb.len() {
            return Err(NdError::ShapeMismatch {
                op: "dot",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let v: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        Ok(self.push(Op::Dot, vec![a, b], Tensor::scalar(v), None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NdError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if ta.rank() == 2 && tb.rank() == 1 && ta.cols() == tb.len() {
            // row-broadcast bias
            let w = ta.cols();
            let data = ta
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + tb.data()[i % w])
                .collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else {
            return Err(NdError::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        };
        Ok(self.push(Op::Add, vec![a, b], value, None))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NdError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(NdError::ShapeMismatch {
                op: "mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul, vec![a, b], value, None))
    }

    pub fn mul_scalar(&mut self, v: NodeId, s: NodeId) -> Result<NodeId, NdError> {
        let (tv, ts) = (&self.nodes[v.0].value, &self.nodes[s.0].value);
        if !ts.is_scalar() {
            return Err(NdError::ShapeMismatch {
                op: "mul_scalar",
                lhs: tv.shape().to_vec(),
                rhs: ts.shape().to_vec(),
            });
        }
        let k = ts.item();
        let data = tv.data().iter().map(|x| x * k).collect();
        let value = Tensor::new(tv.shape().to_vec(), data)?;
        Ok(self.push(Op::MulScalar, vec![v, s], value, None))
    }

    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let tx = &self.nodes[x.0].value;
        let data = tx.data().iter().map(|v| scale * v + shift).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(Op::Affine { scale }, vec![x], value, None)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let tx = &self.nodes[x.0].value;
        let data = tx.data().iter().map(|&v| sigmoid_scalar(v)).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(Op::Sigmoid, vec![x], value, None)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let tx = &self.nodes[x.0].value;
        let data = tx.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(Op::Tanh, vec![x], value, None)
    }

    pub fn ln_clamped(&mut self, x: NodeId, floor: f64) -> NodeId {
        let tx = &self.nodes[x.0].value;
        let data = tx.data().iter().map(|&v| v.max(floor).ln()).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(Op::LnClamped { floor }, vec![x], value, None)
    }

    pub fn softmax_masked(&mut self, logits: NodeId, mask: &[bool]) -> Result<NodeId, NdError> {
        let tl = &self.nodes[logits.0].value;
        let value = softmax_masked_value(tl, mask)?;
        Ok(self.push(
            Op::SoftmaxMasked {
                mask: mask.to_vec(),
            },
            vec![logits],
            value,
            None,
        ))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NdError> {
        let mut data = Vec::new();
        for &p in parts {
            let t = &self.nodes[p.0].value;
            if t.rank() != 1 {
                return Err(NdError::ShapeMismatch {
                    op: "concat",
                    lhs: t.shape().to_vec(),
                    rhs: vec![],
                });
            }
            data.extend_from_slice(t.data());
        }
        let value = Tensor::from_vec(data);
        Ok(self.push(Op::Concat, parts.to_vec(), value, None))
    }

    pub fn gather_rows(&mut self, m: NodeId, ids: &[usize]) -> Result<NodeId, NdError> {
        let tm = &self.nodes[m.0].value;
        if tm.rank() != 2 {
            return Err(NdError::ShapeMismatch {
                op: "gather_rows",
                lhs: tm.shape().to_vec(),
                rhs: vec![ids.len()],
            });
        }
        let (rows, w) = (tm.rows(), tm.cols());
        let mut data = Vec::with_capacity(ids.len() * w);
        for &id in ids {
            if id >= rows {
                return Err(NdError::IndexOutOfRange { index: id, len: rows });
            }
            data.extend_from_slice(tm.row_slice(id));
        }
        let value = Tensor::new(vec![ids.len(), w], data)?;
        Ok(self.push(
            Op::GatherRows { ids: ids.to_vec() },
            vec![m],
            value,
            None,
        ))
    }

    pub fn row(&mut self, m: NodeId, index: usize) -> Result<NodeId, NdError> {
        let tm = &self.nodes[m.0].value;
        if tm.rank() != 2 || index >= tm.rows() {
            return Err(NdError::IndexOutOfRange {
                index,
                len: tm.rows(),
            });
        }
        let value = Tensor::from_vec(tm.row_slice(index).to_vec());
        Ok(self.push(Op::Row { index }, vec![m], value, None))
    }

    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId, NdError> {
        if rows.is_empty() {
            return Err(NdError::Contract("stack_rows needs at least one row".into()));
        }
        let w = self.nodes[rows[0].0].value.len();
        let mut data = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            let t = &self.nodes[r.0].value;
            if t.rank() != 1 || t.len() != w {
                return Err(NdError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![w],
                    rhs: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
        }
        let value = Tensor::new(vec![rows.len(), w], data)?;
        Ok(self.push(Op::StackRows, rows.to_vec(), value, None))
    }

    /// `out[slots[i]] += in[i]` over a fresh zero vector of length `len`.
    /// A slot equal to [`DROP_SLOT`] discards that coordinate.
    pub fn scatter_add(&mut self, v: NodeId, slots: &[usize], len: usize) -> Result<NodeId, NdError> {
        let tv = &self.nodes[v.0].value;
        if tv.rank() != 1 || tv.len() != slots.len() {
            return Err(NdError::ShapeMismatch {
                op: "scatter_add",
                lhs: tv.shape().to_vec(),
                rhs: vec![slots.len()],
            });
        }
        let mut data = vec![0.0; len];
        for (i, &s) in slots.iter().enumerate() {
            if s == DROP_SLOT {
                continue;
            }
            if s >= len {
                return Err(NdError::IndexOutOfRange { index: s, len });
            }
            data[s] += tv.data()[i];
        }
        let value = Tensor::from_vec(data);
        Ok(self.push(
            Op::ScatterAdd {
                slots: slots.to_vec(),
            },
            vec![v],
            value,
            None,
        ))
    }

    pub fn pick(&mut self, v: NodeId, index: usize) -> Result<NodeId, NdError> {
        let tv = &self.nodes[v.0].value;
        if index >= tv.len() {
            return Err(NdError::IndexOutOfRange {
                index,
                len: tv.len(),
            });
        }
        let value = Tensor::scalar(tv.data()[index]);
        Ok(self.push(Op::Pick { index }, vec![v], value, None))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v: f64 = self.nodes[x.0].value.data().iter().sum();
        self.push(Op::Sum, vec![x], Tensor::scalar(v), None)
    }

    /// Reverse sweep from a scalar loss node. Returns the gradient for
    /// every named leaf with `requires_grad`, keyed by name.
    pub fn backward(&mut self, loss: NodeId) -> Result<GradMap, NdError> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(NdError::NonScalarLoss {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = node.grad.as_ref() else {
                continue;
            };
            backprop_node(node, gout, before);
        }

        let mut map = GradMap::new();
        for n in &self.nodes {
            if let (Some(name), true) = (&n.name, n.value.requires_grad) {
                let g = n
                    .grad
                    .clone()
                    .unwrap_or_else(|| vec![0.0; n.value.len()]);
                let t = Tensor::new(n.value.shape().to_vec(), g)?;
                map.insert(name.clone(), t);
            }
        }
        Ok(map)
    }
}

fn grad_buf(node: &mut Node) -> &mut Vec<f64> {
    let len = node.value.len();
    node.grad.get_or_insert_with(|| vec![0.0; len])
}

/// Accumulate this node's output gradient into its inputs. `before` is
/// the tape prefix, which by construction contains every input.
fn backprop_node(node: &Node, gout: &[f64], before: &mut [Node]) {
    let ins = &node.inputs;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul => {
            let (ia, ib) = (ins[0].0, ins[1].0);
            // Split so both inputs can be borrowed; values are read via
            // raw copies of the slices we need.
            let a_val = before[ia].value.clone();
            let b_val = before[ib].value.clone();
            let (m, k, n) = matmul_dims(&a_val, &b_val);
            if before[ia].needs_grad {
                let ga = grad_buf(&mut before[ia]);
                for i in 0..m {
                    for j in 0..n {
                        let g = gout[i * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        for kk in 0..k {
                            ga[i * k + kk] += g * b_val.data()[kk * n + j];
                        }
                    }
                }
            }
            if before[ib].needs_grad {
                let gb = grad_buf(&mut before[ib]);
                for i in 0..m {
                    for kk in 0..k {
                        let a = a_val.data()[i * k + kk];
                        if a == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[kk * n + j] += a * gout[i * n + j];
                        }
                    }
                }
            }
        }
        Op::Dot => {
            let (ia, ib) = (ins[0].0, ins[1].0);
            let a_val = before[ia].value.clone();
            let b_val = before[ib].value.clone();
            let g = gout[0];
            if before[ia].needs_grad {
                let ga = grad_buf(&mut before[ia]);
                for (gi, bv) in ga.iter_mut().zip(b_val.data()) {
                    *gi += g * bv;
                }
            }
            if before[ib].needs_grad {
                let gb = grad_buf(&mut before[ib]);
                for (gi, av) in gb.iter_mut().zip(a_val.data()) {
                    *gi += g * av;
                }
            }
        }
        Op::Add => {
            let (ia, ib) = (ins[0].0, ins[1].0);
            let broadcast = before[ia].value.shape() != before[ib].value.shape();
            if before[ia].needs_grad {
                let ga = grad_buf(&mut before[ia]);
                for (gi, &g) in ga.iter_mut().zip(gout) {
                    *gi += g;
                }
            }
            if before[ib].needs_grad {
                let w = before[ib].value.len();
                let gb = grad_buf(&mut before[ib]);
                if broadcast {
                    for (i, &g) in gout.iter().enumerate() {
                        gb[i % w] += g;
                    }
                } else {
                    for (gi, &g) in gb.iter_mut().zip(gout) {
                        *gi += g;
                    }
                }
            }
        }
        Op::Mul => {
            let (ia, ib) = (ins[0].0, ins[1].0);
            let a_val = before[ia].value.clone();
            let b_val = before[ib].value.clone();
            if before[ia].needs_grad {
                let ga = grad_buf(&mut before[ia]);
                for i in 0..gout.len() {
                    ga[i] += gout[i] * b_val.data()[i];
                }
            }
            if before[ib].needs_grad {
                let gb = grad_buf(&mut before[ib]);
                for i in 0..gout.len() {
                    gb[i] += gout[i] * a_val.data()[i];
                }
            }
        }
        Op::MulScalar => {
            let (iv, is) = (ins[0].0, ins[1].0);
            let v_val = before[iv].value.clone();
            let s = before[is].value.item();
            if before[iv].needs_grad {
                let gv = grad_buf(&mut before[iv]);
                for (gi, &g) in gv.iter_mut().zip(gout) {
                    *gi += g * s;
                }
            }
            if before[is].needs_grad {
                let acc: f64 = gout
                    .iter()
                    .zip(v_val.data())
                    .map(|(&g, &v)| g * v)
                    .sum();
                grad_buf(&mut before[is])[0] += acc;
            }
        }
        Op::Affine { scale } => {
            let ia = ins[0].0;
            if before[ia].needs_grad {
                let ga = grad_buf(&mut before[ia]);
                for (gi, &g) in ga.iter_mut().zip(gout) {
                    *gi += g * scale;
                }
            }
        }
        Op::Sigmoid => {
            let ia = ins[0].0;
            if before[ia].needs_grad {
                let y = node.value.data().to_vec();
                let ga = grad_buf(&mut before[ia]);
                for i in 0..gout.len() {
                    ga[i] += gout[i] * y[i] * (1.0 - y[i]);
                }
            }
        }
        Op::Tanh => {
            let ia = ins[0].0;
            if before[ia].needs_grad {
                let y = node.value.data().to_vec();
                let ga = grad_buf(&mut before[ia]);
                for i in 0..gout.len() {
                    ga[i] += gout[i] * (1.0 - y[i] * y[i]);
                }
            }
        }
        Op::LnClamped { floor } => {
            let ia = ins[0].0;
            if before[ia].needs_grad {
                let x = before[ia].value.clone();
                let floor = *floor;
                let ga = grad_buf(&mut before[ia]);
                for i in 0..gout.len() {
                    let xv = x.data()[i];
                    if xv > floor {
                        ga[i] += gout[i] / xv;
                    }
                }
            }
        }
        Op::SoftmaxMasked { mask } => {
            let ia = ins[0].0;
            if before[ia].needs_grad {
                let y = node.value.data().to_vec();
                let dot: f64 = gout
                    .iter()
                    .zip(&y)
                    .map(|(&g, &yv)| g * yv)
                    .sum();
                let ga = grad_buf(&mut before[ia]);
                for i in 0..gout.len() {
                    if mask[i] {
                        ga[i] += y[i] * (gout[i] - dot);
                    }
                }
            }
        }
        Op::Concat => {
            let mut off = 0;
            for &inp in ins {
                let len = before[inp.0].value.len();
                if before[inp.0].needs_grad {
                    let ga = grad_buf(&mut before[inp.0]);
                    for i in 0..len {
                        ga[i] += gout[off + i];
                    }
                }
                off += len;
            }
        }
        Op::GatherRows { ids } => {
            let ia = ins[0].0;
            if before[ia].needs_grad {
                let w = before[ia].value.cols();
                let ga = grad_buf(&mut before[ia]);
                for (out_r, &src_r) in ids.iter().enumerate() {
                    for c in 0..w {
                        ga[src_r * w + c] += gout[out_r * w + c];
                    }
                }
            }
        }
        Op::Row { index } => {
            let ia = ins[0].0;
            if before[ia].needs_grad {
                let w = before[ia].value.cols();
                let ga = grad_buf(&mut before[ia]);
                for c in 0..w {
                    ga[index * w + c] += gout[c];
                }
            }
        }
        Op::StackRows => {
            let w = node.value.cols();
            for (r, &inp) in ins.iter().enumerate() {
                if before[inp.0].needs_grad {
                    let ga = grad_buf(&mut before[inp.0]);
                    for c in 0..w {
                        ga[c] += gout[r * w + c];
                    }
                }
            }
        }
        Op::ScatterAdd { slots } => {
            let ia = ins[0].0;
            if before[ia].needs_grad {
                let ga = grad_buf(&mut before[ia]);
                for (i, &s) in slots.iter().enumerate() {
                    if s != DROP_SLOT {
                        ga[i] += gout[s];
                    }
                }
            }
        }
        Op::Pick { index } => {
            let ia = ins[0].0;
            if before[ia].needs_grad {
                grad_buf(&mut before[ia])[*index] += gout[0];
            }
        }
        Op::Sum => {
            let ia = ins[0].0;
            if before[ia].needs_grad {
                let ga = grad_buf(&mut before[ia]);
                for gi in ga.iter_mut() {
                    *gi += gout[0];
                }
            }
        }
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matmul_dims(a: &Tensor, b: &Tensor) -> (usize, usize, usize) {
    match (a.rank(), b.rank()) {
        (2, 2) => (a.shape()[0], a.shape()[1], b.shape()[1]),
        (2, 1) => (a.shape()[0], a.shape()[1], 1),
        (1, 2) => (1, a.shape()[0], b.shape()[1]),
        _ => (1, a.shape()[0], 1),
    }
}

pub(crate) fn matmul_value(a: &Tensor, b: &Tensor) -> Result<Tensor, NdError> {
    let err = || NdError::ShapeMismatch {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    let out_shape: Vec<usize> = match (a.rank(), b.rank()) {
        (2, 2) => {
            if a.shape()[1] != b.shape()[0] {
                return Err(err());
            }
            vec![a.shape()[0], b.shape()[1]]
        }
        (2, 1) => {
            if a.shape()[1] != b.shape()[0] {
                return Err(err());
            }
            vec![a.shape()[0]]
        }
        (1, 2) => {
            if a.shape()[0] != b.shape()[0] {
                return Err(err());
            }
            vec![b.shape()[1]]
        }
        _ => return Err(err()),
    };
    let (m, k, n) = matmul_dims(a, b);
    let mut out = vec![0.0; m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        for kk in 0..k {
            let av = ad[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::new(out_shape, out)
}

pub(crate) fn softmax_masked_value(logits: &Tensor, mask: &[bool]) -> Result<Tensor, NdError> {
    if logits.rank() != 1 || logits.len() != mask.len() {
        return Err(NdError::ShapeMismatch {
            op: "softmax_masked",
            lhs: logits.shape().to_vec(),
            rhs: vec![mask.len()],
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(NdError::DegenerateMask);
    }
    // max-subtraction keeps exp in range
    let mut mx = f64::NEG_INFINITY;
    for (v, &m) in logits.data().iter().zip(mask) {
        if m && *v > mx {
            mx = *v;
        }
    }
    let mut out = vec![0.0; logits.len()];
    let mut z = 0.0;
    for (i, (&v, &m)) in logits.data().iter().zip(mask).enumerate() {
        if m {
            let e = (v - mx).exp();
            out[i] = e;
            z += e;
        }
    }
    for o in out.iter_mut() {
        *o /= z;
    }
    Ok(Tensor::from_vec(out))
}
