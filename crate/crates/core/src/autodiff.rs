//! Reverse-mode differentiation over symbolic graphs of small dense ops.
//!
//! A [`Graph`] is built first and evaluated afterwards, either node by node
//! or in buckets of same-shaped ops at equal dependency depth. Both paths use
//! the same per-element arithmetic (in particular the same summation order in
//! every dot product), so their forward values agree bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

/// `(rows, cols)`; vectors are `(n, 1)` and scalars `(1, 1)`.
pub type Shape = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u32);

impl ParamId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("loss node has shape {0:?}, expected a scalar")]
    NonScalarLoss(Shape),
    #[error("non-finite value produced by {op} node {node}")]
    NonFinite { node: usize, op: &'static str },
    #[error("parameter `{0}` already exists")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// A dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            values: vec![0.0; shape.0 * shape.1],
        }
    }

    pub fn from_values(shape: Shape, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), shape.0 * shape.1, "tensor size does not match its shape");
        Tensor { shape, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.shape.1..(r + 1) * self.shape.1]
    }
}

/// Named learnable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<ParamId, GraphError> {
        if self.index.contains_key(name) {
            return Err(GraphError::DuplicateParam(name.into()));
        }
        let id = ParamId(self.tensors.len() as u32);
        self.names.push(name.into());
        self.index.insert(name.into(), id);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, p: ParamId) -> &str {
        &self.names[p.index()]
    }

    pub fn get(&self, p: ParamId) -> &Tensor {
        &self.tensors[p.index()]
    }

    pub fn get_mut(&mut self, p: ParamId) -> &mut Tensor {
        &mut self.tensors[p.index()]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len() as u32).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            tensors: self.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    /// Text checkpoint. Floats use the shortest round-trip representation, so
    /// `load(save(p))` restores every value bit for bit.
    pub fn save(&self, meta: &BTreeMap<String, String>) -> String {
        let mut out = String::from("proofgym-params 1\n");
        for (k, v) in meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in self.names.iter().zip(&self.tensors) {
            let _ = writeln!(out, "tensor {name} {} {}", t.shape.0, t.shape.1);
            let mut line = String::new();
            for (i, v) in t.values.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{v:?}");
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn load(text: &str) -> Result<(ParamStore, BTreeMap<String, String>), GraphError> {
        let bad = |m: String| GraphError::Checkpoint(m);
        let mut lines = text.lines();
        match lines.next() {
            Some("proofgym-params 1") => {}
            other => return Err(bad(format!("unrecognized header {other:?}"))),
        }
        let mut store = ParamStore::new();
        let mut meta = BTreeMap::new();
        while let Some(line) = lines.next() {
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.insert(k.to_owned(), v.to_owned());
                continue;
            }
            let Some(rest) = line.strip_prefix("tensor ") else {
                return Err(bad(format!("unexpected line `{line}`")));
            };
            let parts: Vec<&str> = rest.split(' ').collect();
            let [name, rows, cols] = parts.as_slice() else {
                return Err(bad(format!("malformed tensor header `{line}`")));
            };
            let shape: Shape = (
                rows.parse().map_err(|_| bad(format!("bad row count in `{line}`")))?,
                cols.parse().map_err(|_| bad(format!("bad column count in `{line}`")))?,
            );
            let body = lines.next().ok_or_else(|| bad(format!("missing values for `{name}`")))?;
            let values = if body.is_empty() {
                Vec::new()
            } else {
                body.split(' ')
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| bad(format!("tensor `{name}`: {e}")))?
            };
            if values.len() != shape.0 * shape.1 {
                return Err(bad(format!("tensor `{name}` has {} values for shape {shape:?}", values.len())));
            }
            store.add(name, Tensor { shape, values })?;
        }
        Ok((store, meta))
    }
}

/// Gradients indexed like the parameters of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub tensors: Vec<Vec<f64>>,
}

impl Grads {
    pub fn get(&self, p: ParamId) -> &[f64] {
        &self.tensors[p.index()]
    }

    pub fn max_abs_diff(&self, other: &Grads) -> f64 {
        self.tensors
            .iter()
            .flatten()
            .zip(other.tensors.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    /// A whole parameter tensor.
    Param(ParamId),
    /// A constant vector from the graph's constant table.
    Input(u32),
    /// One row of a matrix parameter, as a vector.
    Row(ParamId, u32),
    /// Matrix (first operand) times vector.
    MatVec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// Multiplication by a constant, stored as raw bits.
    Scale(NodeId, u64),
    Concat(Vec<NodeId>),
    SumN(Vec<NodeId>),
    /// Sum of all elements.
    Sum(NodeId),
    /// Elementwise product with a fixed mask from the mask table.
    Dropout(NodeId, u32),
    /// `-weight * log softmax(logits)[target]`; weight stored as raw bits.
    SoftmaxCe { logits: NodeId, target: u32, weight: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Param,
    Input,
    Row,
    MatVec,
    Add,
    Sub,
    Mul,
    Tanh,
    Sigmoid,
    Scale,
    Concat,
    SumN,
    Sum,
    Dropout,
    SoftmaxCe,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Param => "param",
            OpKind::Input => "input",
            OpKind::Row => "row",
            OpKind::MatVec => "matvec",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Scale => "scale",
            OpKind::Concat => "concat",
            OpKind::SumN => "sum_n",
            OpKind::Sum => "sum",
            OpKind::Dropout => "dropout",
            OpKind::SoftmaxCe => "softmax_ce",
        }
    }
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Param(_) => OpKind::Param,
            Op::Input(_) => OpKind::Input,
            Op::Row(..) => OpKind::Row,
            Op::MatVec(..) => OpKind::MatVec,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Tanh(_) => OpKind::Tanh,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Scale(..) => OpKind::Scale,
            Op::Concat(_) => OpKind::Concat,
            Op::SumN(_) => OpKind::SumN,
            Op::Sum(_) => OpKind::Sum,
            Op::Dropout(..) => OpKind::Dropout,
            Op::SoftmaxCe { .. } => OpKind::SoftmaxCe,
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Param(_) | Op::Input(_) | Op::Row(..) => Vec::new(),
            Op::MatVec(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Tanh(a) | Op::Sigmoid(a) | Op::Scale(a, _) | Op::Sum(a) | Op::Dropout(a, _) => vec![*a],
            Op::Concat(xs) | Op::SumN(xs) => xs.clone(),
            Op::SoftmaxCe { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub shape: Shape,
    pub depth: u32,
    needs_grad: bool,
    /// Arena offset of computed nodes; leaves read their storage directly.
    offset: Option<usize>,
}

/// Evaluation strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    /// Node by node in construction order.
    Naive,
    /// Buckets of (depth, op, shape), matrix products stacked per weight.
    Batched,
}

/// A symbolic computation graph.
///
/// With sharing enabled, structurally identical ops are created once
/// (common-subexpression elimination) and keyed constants are reused.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    consts: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    param_shapes: Vec<Shape>,
    share: bool,
    cse: HashMap<Op, NodeId>,
    keyed: HashMap<u64, NodeId>,
    arena: usize,
}

impl Graph {
    pub fn new(params: &ParamStore, share: bool) -> Self {
        Graph {
            nodes: Vec::new(),
            consts: Vec::new(),
            masks: Vec::new(),
            param_shapes: params.tensors.iter().map(|t| t.shape).collect(),
            share,
            cse: HashMap::new(),
            keyed: HashMap::new(),
            arena: 0,
        }
    }

    pub fn sharing(&self) -> bool {
        self.share
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, n: NodeId) -> &Node {
        &self.nodes[n.index()]
    }

    pub fn shape(&self, n: NodeId) -> Shape {
        self.nodes[n.index()].shape
    }

    fn push(&mut self, op: Op, shape: Shape) -> NodeId {
        if self.share {
            if let Some(&n) = self.cse.get(&op) {
                return n;
            }
        }
        let inputs = op.inputs();
        let depth = inputs.iter().map(|i| self.nodes[i.index()].depth + 1).max().unwrap_or(0);
        let needs_grad = match op {
            Op::Param(_) | Op::Row(..) => true,
            Op::Input(_) => false,
            _ => inputs.iter().any(|i| self.nodes[i.index()].needs_grad),
        };
        let offset = match op {
            Op::Param(_) | Op::Row(..) | Op::Input(_) => None,
            _ => {
                let o = self.arena;
                self.arena += shape.0 * shape.1;
                Some(o)
            }
        };
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            op: op.clone(),
            shape,
            depth,
            needs_grad,
            offset,
        });
        if self.share {
            self.cse.insert(op, id);
        }
        id
    }

    fn vec_len(&self, n: NodeId) -> usize {
        let (r, c) = self.shape(n);
        assert_eq!(c, 1, "expected a vector, got shape {:?}", (r, c));
        r
    }

    pub fn param(&mut self, p: ParamId) -> NodeId {
        let shape = self.param_shapes[p.index()];
        self.push(Op::Param(p), shape)
    }

    /// A constant vector. Never deduplicated; see [`Graph::input_keyed`].
    pub fn input(&mut self, values: Vec<f64>) -> NodeId {
        let n = values.len();
        self.consts.push(values);
        let op = Op::Input(self.consts.len() as u32 - 1);
        self.push(op, (n, 1))
    }

    /// A constant vector identified by `key`. With sharing on, a second
    /// request for the same key returns the first node without calling `make`.
    pub fn input_keyed(&mut self, key: u64, make: impl FnOnce() -> Vec<f64>) -> NodeId {
        if self.share {
            if let Some(&n) = self.keyed.get(&key) {
                return n;
            }
        }
        let n = self.input(make());
        if self.share {
            self.keyed.insert(key, n);
        }
        n
    }

    pub fn zeros(&mut self, n: usize) -> NodeId {
        self.input_keyed(0x7a65_726f_0000_0000 ^ n as u64, || vec![0.0; n])
    }

    pub fn row(&mut self, p: ParamId, r: usize) -> NodeId {
        let (rows, cols) = self.param_shapes[p.index()];
        assert!(r < rows, "row {r} out of range for {rows} rows");
        self.push(Op::Row(p, r as u32), (cols, 1))
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let (rows, cols) = self.shape(w);
        assert_eq!(self.vec_len(x), cols, "matvec: matrix has {cols} columns");
        self.push(Op::MatVec(w, x), (rows, 1))
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> Shape {
        let s = self.shape(a);
        assert_eq!(s, self.shape(b), "elementwise op on mismatched shapes");
        s
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.same_shape(a, b);
        self.push(Op::Add(a, b), s)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.same_shape(a, b);
        self.push(Op::Sub(a, b), s)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let s = self.same_shape(a, b);
        self.push(Op::Mul(a, b), s)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Tanh(a), s)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Sigmoid(a), s)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let s = self.shape(a);
        self.push(Op::Scale(a, c.to_bits()), s)
    }

    pub fn concat(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "concat of nothing");
        let n = xs.iter().map(|x| self.vec_len(*x)).sum();
        self.push(Op::Concat(xs.to_vec()), (n, 1))
    }

    pub fn sum_n(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty(), "sum of nothing");
        let s = self.shape(xs[0]);
        for x in xs {
            assert_eq!(self.shape(*x), s, "sum_n on mismatched shapes");
        }
        if xs.len() == 1 {
            return xs[0];
        }
        self.push(Op::SumN(xs.to_vec()), s)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), (1, 1))
    }

    /// Multiplies by `mask` elementwise; callers pass inverted-dropout masks
    /// (zeros and `1 / (1 - rate)`).
    pub fn dropout(&mut self, a: NodeId, mask: Vec<f64>) -> NodeId {
        let (r, c) = self.shape(a);
        assert_eq!(mask.len(), r * c, "dropout mask size");
        self.masks.push(mask);
        let m = self.masks.len() as u32 - 1;
        self.push(Op::Dropout(a, m), (r, c))
    }

    pub fn softmax_ce(&mut self, logits: NodeId, target: usize, weight: f64) -> NodeId {
        let k = self.vec_len(logits);
        assert!(target < k, "target class {target} out of range for {k} logits");
        self.push(
            Op::SoftmaxCe {
                logits,
                target: target as u32,
                weight: weight.to_bits(),
            },
            (1, 1),
        )
    }

    /// Bucket keys of the batched schedule, in execution order.
    pub fn buckets(&self) -> Vec<(u32, OpKind, Shape, usize)> {
        self.schedule().into_iter().map(|(k, v)| (k.depth, k.kind, k.shape, v.len())).collect()
    }

    fn schedule(&self) -> Vec<(BucketKey, Vec<NodeId>)> {
        let mut buckets: BTreeMap<BucketKey, Vec<NodeId>> = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.offset.is_none() {
                continue;
            }
            let weight = match n.op {
                Op::MatVec(w, _) => Some(w),
                _ => None,
            };
            let key = BucketKey {
                depth: n.depth,
                kind: n.op.kind(),
                weight,
                shape: n.shape,
            };
            buckets.entry(key).or_default().push(NodeId(i as u32));
        }
        buckets.into_iter().collect()
    }

    pub fn forward<'g>(&'g self, params: &'g ParamStore, exec: Exec) -> Result<Evaluation<'g>, GraphError> {
        let mut ev = Evaluation {
            graph: self,
            params,
            data: vec![0.0; self.arena],
        };
        match exec {
            Exec::Naive => {
                for i in 0..self.nodes.len() {
                    ev.eval_node(NodeId(i as u32))?;
                }
            }
            Exec::Batched => {
                for (key, nodes) in self.schedule() {
                    if key.kind == OpKind::MatVec {
                        ev.eval_matvec_bucket(&nodes)?;
                    } else {
                        for n in nodes {
                            ev.eval_node(n)?;
                        }
                    }
                }
            }
        }
        Ok(ev)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct BucketKey {
    depth: u32,
    kind: OpKind,
    weight: Option<NodeId>,
    shape: Shape,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(w: &[f64], x: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..w.len() {
        s += w[k] * x[k];
    }
    s
}

/// Items per block in the stacked matrix product. Each item keeps its own
/// sequential accumulator, so results match [`dot`] exactly.
const BLOCK: usize = 8;

/// Forward values of a graph, ready for a backward pass.
pub struct Evaluation<'g> {
    graph: &'g Graph,
    params: &'g ParamStore,
    data: Vec<f64>,
}

fn leaf_value<'a>(graph: &'a Graph, params: &'a ParamStore, data: &'a [f64], n: NodeId) -> &'a [f64] {
    let node = &graph.nodes[n.index()];
    match node.op {
        Op::Param(p) => &params.tensors[p.index()].values,
        Op::Row(p, r) => params.tensors[p.index()].row(r as usize),
        Op::Input(c) => &graph.consts[c as usize],
        _ => {
            let o = node.offset.expect("computed nodes have storage");
            &data[o..o + node.shape.0 * node.shape.1]
        }
    }
}

impl<'g> Evaluation<'g> {
    pub fn value(&self, n: NodeId) -> &[f64] {
        leaf_value(self.graph, self.params, &self.data, n)
    }

    pub fn scalar(&self, n: NodeId) -> f64 {
        self.value(n)[0]
    }

    fn check(&self, n: NodeId) -> Result<(), GraphError> {
        if self.value(n).iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(GraphError::NonFinite {
                node: n.index(),
                op: self.graph.nodes[n.index()].op.kind().as_str(),
            })
        }
    }

    fn eval_node(&mut self, n: NodeId) -> Result<(), GraphError> {
        let g = self.graph;
        let node = &g.nodes[n.index()];
        let Some(off) = node.offset else {
            return Ok(());
        };
        let len = node.shape.0 * node.shape.1;
        let (before, rest) = self.data.split_at_mut(off);
        let out = &mut rest[..len];
        let val = |m: NodeId| leaf_value(g, self.params, before, m);
        match &node.op {
            Op::Param(_) | Op::Row(..) | Op::Input(_) => unreachable!("leaves are not computed"),
            Op::MatVec(w, x) => {
                let (w, x) = (val(*w), val(*x));
                let cols = x.len();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = dot(&w[i * cols..(i + 1) * cols], x);
                }
            }
            Op::Add(a, b) => {
                for ((o, a), b) in out.iter_mut().zip(val(*a)).zip(val(*b)) {
                    *o = a + b;
                }
            }
            Op::Sub(a, b) => {
                for ((o, a), b) in out.iter_mut().zip(val(*a)).zip(val(*b)) {
                    *o = a - b;
                }
            }
            Op::Mul(a, b) => {
                for ((o, a), b) in out.iter_mut().zip(val(*a)).zip(val(*b)) {
                    *o = a * b;
                }
            }
            Op::Tanh(a) => {
                for (o, a) in out.iter_mut().zip(val(*a)) {
                    *o = a.tanh();
                }
            }
            Op::Sigmoid(a) => {
                for (o, a) in out.iter_mut().zip(val(*a)) {
                    *o = sigmoid(*a);
                }
            }
            Op::Scale(a, c) => {
                let c = f64::from_bits(*c);
                for (o, a) in out.iter_mut().zip(val(*a)) {
                    *o = a * c;
                }
            }
            Op::Concat(xs) => {
                let mut k = 0;
                for x in xs {
                    let v = val(*x);
                    out[k..k + v.len()].copy_from_slice(v);
                    k += v.len();
                }
            }
            Op::SumN(xs) => {
                out.copy_from_slice(val(xs[0]));
                for x in &xs[1..] {
                    for (o, v) in out.iter_mut().zip(val(*x)) {
                        *o += v;
                    }
                }
            }
            Op::Sum(a) => {
                let mut s = 0.0;
                for v in val(*a) {
                    s += v;
                }
                out[0] = s;
            }
            Op::Dropout(a, m) => {
                for ((o, a), m) in out.iter_mut().zip(val(*a)).zip(&g.masks[*m as usize]) {
                    *o = a * m;
                }
            }
            Op::SoftmaxCe { logits, target, weight } => {
                let z = val(*logits);
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in z {
                    s += (v - max).exp();
                }
                let log_p = z[*target as usize] - max - s.ln();
                out[0] = -f64::from_bits(*weight) * log_p;
            }
        }
        self.check(n)
    }

    /// Matrix products sharing one weight matrix, `BLOCK` items at a time.
    fn eval_matvec_bucket(&mut self, nodes: &[NodeId]) -> Result<(), GraphError> {
        let g = self.graph;
        let Op::MatVec(w, _) = g.nodes[nodes[0].index()].op else {
            unreachable!("matvec bucket");
        };
        let rows = g.nodes[nodes[0].index()].shape.0;
        let mut tmp = vec![0.0; BLOCK * rows];
        for chunk in nodes.chunks(BLOCK) {
            {
                let wv = leaf_value(g, self.params, &self.data, w);
                let xs: Vec<&[f64]> = chunk
                    .iter()
                    .map(|n| match g.nodes[n.index()].op {
                        Op::MatVec(_, x) => leaf_value(g, self.params, &self.data, x),
                        _ => unreachable!("matvec bucket"),
                    })
                    .collect();
                let cols = xs[0].len();
                for i in 0..rows {
                    let wr = &wv[i * cols..(i + 1) * cols];
                    if xs.len() == BLOCK {
                        let mut acc = [0.0f64; BLOCK];
                        for k in 0..cols {
                            let wk = wr[k];
                            for (a, x) in acc.iter_mut().zip(&xs) {
                                *a += wk * x[k];
                            }
                        }
                        for (b, a) in acc.iter().enumerate() {
                            tmp[b * rows + i] = *a;
                        }
                    } else {
                        for (b, x) in xs.iter().enumerate() {
                            tmp[b * rows + i] = dot(wr, x);
                        }
                    }
                }
            }
            for (b, n) in chunk.iter().enumerate() {
                let o = g.nodes[n.index()].offset.expect("matvec has storage");
                self.data[o..o + rows].copy_from_slice(&tmp[b * rows..(b + 1) * rows]);
                self.check(*n)?;
            }
        }
        Ok(())
    }

    /// Reverse pass from a scalar loss. Nodes reached along several paths
    /// accumulate their gradient from every consumer.
    pub fn backward(&self, loss: NodeId, exec: Exec) -> Result<Grads, GraphError> {
        let g = self.graph;
        let shape = g.shape(loss);
        if shape != (1, 1) {
            return Err(GraphError::NonScalarLoss(shape));
        }
        let mut grads = self.params.zero_grads();
        let mut adj = vec![0.0; g.arena];
        match g.nodes[loss.index()].offset {
            Some(o) => adj[o] = 1.0,
            None => {
                // a scalar parameter or constant as its own loss
                if let Op::Param(p) = g.nodes[loss.index()].op {
                    grads.tensors[p.index()][0] += 1.0;
                }
                return Ok(grads);
            }
        }
        match exec {
            Exec::Naive => {
                for i in (0..=loss.index()).rev() {
                    self.back_node(NodeId(i as u32), &mut adj, &mut grads);
                }
            }
            Exec::Batched => {
                for (key, nodes) in g.schedule().into_iter().rev() {
                    if key.kind == OpKind::MatVec {
                        self.back_matvec_bucket(&nodes, &mut adj, &mut grads);
                    } else {
                        for n in nodes.into_iter().rev() {
                            self.back_node(n, &mut adj, &mut grads);
                        }
                    }
                }
            }
        }
        for t in &grads.tensors {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(GraphError::NonFinite {
                    node: loss.index(),
                    op: "backward",
                });
            }
        }
        Ok(grads)
    }

    fn back_matvec_bucket(&self, nodes: &[NodeId], adj: &mut [f64], grads: &mut Grads) {
        let g = self.graph;
        let Op::MatVec(w, _) = g.nodes[nodes[0].index()].op else {
            unreachable!("matvec bucket");
        };
        let (rows, cols) = g.shape(w);
        let mut dw = vec![0.0; rows * cols];
        let mut any = false;
        let wv = self.value(w);
        for n in nodes.iter().rev() {
            let node = &g.nodes[n.index()];
            if !node.needs_grad {
                continue;
            }
            let Op::MatVec(_, x) = node.op else { unreachable!() };
            let o = node.offset.expect("matvec has storage");
            let dy: Vec<f64> = adj[o..o + rows].to_vec();
            if dy.iter().all(|v| *v == 0.0) {
                continue;
            }
            if g.nodes[w.index()].needs_grad {
                any = true;
                let xv = self.value(x);
                for i in 0..rows {
                    let d = dy[i];
                    for (a, xk) in dw[i * cols..(i + 1) * cols].iter_mut().zip(xv) {
                        *a += d * xk;
                    }
                }
            }
            if g.nodes[x.index()].needs_grad {
                let mut dx = vec![0.0; cols];
                for i in 0..rows {
                    let d = dy[i];
                    for (a, wk) in dx.iter_mut().zip(&wv[i * cols..(i + 1) * cols]) {
                        *a += d * wk;
                    }
                }
                self.accumulate(x, &dx, adj, grads);
            }
        }
        if any {
            self.accumulate(w, &dw, adj, grads);
        }
    }

    /// Adds `d` into the adjoint of `n` (or of its parameter).
    fn accumulate(&self, n: NodeId, d: &[f64], adj: &mut [f64], grads: &mut Grads) {
        let node = &self.graph.nodes[n.index()];
        if !node.needs_grad {
            return;
        }
        let target: &mut [f64] = match node.op {
            Op::Param(p) => &mut grads.tensors[p.index()],
            Op::Row(p, r) => {
                let cols = self.graph.param_shapes[p.index()].1;
                let r = r as usize;
                &mut grads.tensors[p.index()][r * cols..(r + 1) * cols]
            }
            Op::Input(_) => return,
            _ => {
                let o = node.offset.expect("computed nodes have storage");
                &mut adj[o..o + d.len()]
            }
        };
        for (t, v) in target.iter_mut().zip(d) {
            *t += v;
        }
    }

    fn back_node(&self, n: NodeId, adj: &mut [f64], grads: &mut Grads) {
        let g = self.graph;
        let node = &g.nodes[n.index()];
        let Some(off) = node.offset else {
            return;
        };
        if !node.needs_grad {
            return;
        }
        let len = node.shape.0 * node.shape.1;
        let dy: Vec<f64> = adj[off..off + len].to_vec();
        if dy.iter().all(|v| *v == 0.0) {
            return;
        }
        let y = self.value(n);
        let needs = |m: NodeId| g.nodes[m.index()].needs_grad;
        match &node.op {
            Op::Param(_) | Op::Row(..) | Op::Input(_) => {}
            Op::MatVec(w, x) => {
                let (wv, xv) = (self.value(*w), self.value(*x));
                let cols = xv.len();
                if needs(*w) {
                    let mut dw = vec![0.0; wv.len()];
                    for i in 0..len {
                        for (a, xk) in dw[i * cols..(i + 1) * cols].iter_mut().zip(xv) {
                            *a += dy[i] * xk;
                        }
                    }
                    self.accumulate(*w, &dw, adj, grads);
                }
                if needs(*x) {
                    let mut dx = vec![0.0; cols];
                    for i in 0..len {
                        for (a, wk) in dx.iter_mut().zip(&wv[i * cols..(i + 1) * cols]) {
                            *a += dy[i] * wk;
                        }
                    }
                    self.accumulate(*x, &dx, adj, grads);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(*a, &dy, adj, grads);
                self.accumulate(*b, &dy, adj, grads);
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, &dy, adj, grads);
                let neg: Vec<f64> = dy.iter().map(|v| -v).collect();
                self.accumulate(*b, &neg, adj, grads);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    let da: Vec<f64> = dy.iter().zip(bv).map(|(d, b)| d * b).collect();
                    self.accumulate(*a, &da, adj, grads);
                }
                if needs(*b) {
                    let db: Vec<f64> = dy.iter().zip(av).map(|(d, a)| d * a).collect();
                    self.accumulate(*b, &db, adj, grads);
                }
            }
            Op::Tanh(a) => {
                let da: Vec<f64> = dy.iter().zip(y).map(|(d, y)| d * (1.0 - y * y)).collect();
                self.accumulate(*a, &da, adj, grads);
            }
            Op::Sigmoid(a) => {
                let da: Vec<f64> = dy.iter().zip(y).map(|(d, y)| d * y * (1.0 - y)).collect();
                self.accumulate(*a, &da, adj, grads);
            }
            Op::Scale(a, c) => {
                let c = f64::from_bits(*c);
                let da: Vec<f64> = dy.iter().map(|d| d * c).collect();
                self.accumulate(*a, &da, adj, grads);
            }
            Op::Concat(xs) => {
                let mut k = 0;
                for x in xs {
                    let l = g.shape(*x).0;
                    self.accumulate(*x, &dy[k..k + l], adj, grads);
                    k += l;
                }
            }
            Op::SumN(xs) => {
                for x in xs {
                    self.accumulate(*x, &dy, adj, grads);
                }
            }
            Op::Sum(a) => {
                let da = vec![dy[0]; g.shape(*a).0 * g.shape(*a).1];
                self.accumulate(*a, &da, adj, grads);
            }
            Op::Dropout(a, m) => {
                let da: Vec<f64> = dy.iter().zip(&g.masks[*m as usize]).map(|(d, m)| d * m).collect();
                self.accumulate(*a, &da, adj, grads);
            }
            Op::SoftmaxCe { logits, target, weight } => {
                let z = self.value(*logits);
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for v in z {
                    s += (v - max).exp();
                }
                let w = f64::from_bits(*weight);
                let dz: Vec<f64> = z
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let p = (v - max).exp() / s;
                        let t = if i == *target as usize { 1.0 } else { 0.0 };
                        dy[0] * w * (p - t)
                    })
                    .collect();
                self.accumulate(*logits, &dz, adj, grads);
            }
        }
    }
}

/// Softmax of a slice, computed stably.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros = params.zero_grads().tensors;
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (p, t) in params.tensors.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[p], &mut self.v[p], &grads.tensors[p]);
            for i in 0..t.values.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                t.values[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
