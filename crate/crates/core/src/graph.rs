//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a Wengert list built while the forward pass runs: every
//! operator call appends a node holding its output value, so topological
//! order is the tape order and the backward pass is a single reverse sweep
//! that visits each node exactly once.
//!
//! The operator set is closed and enumerated in [`Op`]. There is no general
//! broadcasting; the only broadcast forms are the bias add over rows
//! ([`Graph::add_row`]), the per-row scale ([`Graph::scale_rows`]) and the
//! scalar-tensor forms ([`Graph::bcast`]).

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::Stream;
use crate::tensor::{Real, Tensor};
use indexmap::IndexMap;
use rand::Rng;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Scalar-broadcast arithmetic kinds (second operand has exactly one element).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcastKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// The closed operator set.
#[derive(Clone, Debug)]
pub enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `mul * x + add`, element-wise with constant coefficients.
    AffineConst(Var, T, T),
    Tanh(Var),
    Sigmoid(Var),
    Sqrt(Var),
    /// Element-wise `max(x, c)`.
    MaxConst(Var, T),
    /// `a @ b` for `a: [m,k]`, `b: [k,n]`.
    MatMul(Var, Var),
    /// `a @ b^T` for `a: [m,k]`, `b: [n,k]`.
    MatMulNT(Var, Var),
    /// Row-broadcast bias add: `a: [r,c] + v: [c]`.
    AddRow(Var, Var),
    /// Per-row scalar multiply: `out[i,:] = a[i,:] * s[i]`.
    ScaleRows(Var, Var),
    /// Tensor (any shape) combined with a one-element tensor.
    Bcast(BcastKind, Var, Var),
    Sum(Var),
    Mean(Var),
    /// Row-wise softmax (rank-1 input treated as a single row).
    Softmax(Var),
    /// Row-wise log-softmax.
    LogSoftmax(Var),
    /// Concatenation along `axis` (0 for rank-1, 0 or 1 for rank-2).
    Concat(Vec<Var>, usize),
    /// Contiguous slice `[start, start+len)` along `axis`.
    Slice(Var, usize, usize, usize),
    /// Row gather from a `[vocab, dim]` table.
    Embedding(Var, Vec<usize>),
    /// `out[i] = a[i, idx[i]]`.
    Pick(Var, Vec<usize>),
    /// Element-wise multiply by a sampled inverted-dropout mask.
    Dropout(Var, Vec<T>),
    /// `out[i] = mask[i] ? a[i] : b[i]`, row granularity.
    RowSelect(Var, Var, Vec<bool>),
    /// Same element count, new shape; backward is identity.
    Reshape(Var, Vec<usize>),
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Gradients keyed by parameter name after a backward pass.
pub type GradMap<T> = IndexMap<String, Tensor<T>>;

/// A forward tape plus the parameter leaves bound onto it.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    params: IndexMap<String, Var>,
    training: bool,
}

impl<T: Real> Graph<T> {
    /// Tape in training mode (dropout active).
    pub fn training() -> Self {
        Graph {
            nodes: Vec::new(),
            params: IndexMap::new(),
            training: true,
        }
    }

    /// Tape in evaluation mode (dropout is the identity).
    pub fn eval() -> Self {
        Graph {
            nodes: Vec::new(),
            params: IndexMap::new(),
            training: false,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Copies a node's value out of the tape (used for state carry-over).
    pub fn detach(&self, v: Var) -> Tensor<T> {
        self.nodes[v.0].value.clone()
    }

    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    /// Constant leaf; no gradient flows into it.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn leaf_vec(&mut self, data: Vec<T>) -> Var {
        self.leaf(Tensor::from_vec(data))
    }

    pub fn constant(&mut self, v: T) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    /// Differentiable leaf that is not a named parameter.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Binds a named parameter from the store onto the tape. Binding the
    /// same name twice returns the same leaf, so gradients from every use
    /// site accumulate into one tensor.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let tensor = store
            .get(name)
            .ok_or_else(|| Error::UnknownParameter {
                name: name.to_string(),
            })?
            .clone();
        let v = self.push(Op::Leaf, tensor, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(n, &v)| (n.as_str(), v))
    }

    // ── Element-wise binary ─────────────────────────────────────────────

    fn ewise(&mut self, op_name: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op: op_name,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), data, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise("sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), data, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise("mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), data, rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise("div", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x / y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Div(a, b), data, rg))
    }

    // ── Element-wise unary ──────────────────────────────────────────────

    pub fn affine_const(&mut self, a: Var, mul: T, add: T) -> Var {
        let data = map(self.value(a), |x| mul * x + add);
        let rg = self.needs(a);
        self.push(Op::AffineConst(a, mul, add), data, rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.affine_const(a, T::of(-1.0), T::zero())
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = map(self.value(a), |x| x.tanh());
        let rg = self.needs(a);
        self.push(Op::Tanh(a), data, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = map(self.value(a), sigmoid_scalar);
        let rg = self.needs(a);
        self.push(Op::Sigmoid(a), data, rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let data = map(self.value(a), |x| x.sqrt());
        let rg = self.needs(a);
        self.push(Op::Sqrt(a), data, rg)
    }

    pub fn max_const(&mut self, a: Var, c: T) -> Var {
        let data = map(self.value(a), |x| if x > c { x } else { c });
        let rg = self.needs(a);
        self.push(Op::MaxConst(a, c), data, rg)
    }

    // ── Matrix products ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        matmul_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            Op::MatMul(a, b),
            Tensor::new(vec![m, n], out).expect("matmul shape"),
            rg,
        ))
    }

    /// `a @ b^T`: the natural form for `x @ W^T` linear layers and for tied
    /// embedding/output products.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![T::zero(); m * n];
        matmul_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            Op::MatMulNT(a, b),
            Tensor::new(vec![m, n], out).expect("matmul_nt shape"),
            rg,
        ))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(bias).shape());
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (r, c) = (sa[0], sa[1]);
        let bias_data = self.value(bias).data();
        let mut out = Vec::with_capacity(r * c);
        for row in self.value(a).data().chunks_exact(c) {
            out.extend(row.iter().zip(bias_data).map(|(&x, &b)| x + b));
        }
        let rg = self.needs(a) || self.needs(bias);
        Ok(self.push(
            Op::AddRow(a, bias),
            Tensor::new(vec![r, c], out).expect("add_row shape"),
            rg,
        ))
    }

    /// Linear layer `x @ w^T + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul_nt(x, w)?;
        self.add_row(h, b)
    }

    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (sa, ss) = (self.value(a).shape(), self.value(s).shape());
        if sa.len() != 2 || ss.len() != 1 || sa[0] != ss[0] {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                lhs: sa.to_vec(),
                rhs: ss.to_vec(),
            });
        }
        let (r, c) = (sa[0], sa[1]);
        let s_data = self.value(s).data();
        let mut out = Vec::with_capacity(r * c);
        for (row, &f) in self.value(a).data().chunks_exact(c).zip(s_data) {
            out.extend(row.iter().map(|&x| x * f));
        }
        let rg = self.needs(a) || self.needs(s);
        Ok(self.push(
            Op::ScaleRows(a, s),
            Tensor::new(vec![r, c], out).expect("scale_rows shape"),
            rg,
        ))
    }

    pub fn bcast(&mut self, kind: BcastKind, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "bcast_scalar",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(s).shape().to_vec(),
            });
        }
        let sv = self.value(s).data()[0];
        let data = map(self.value(a), |x| match kind {
            BcastKind::Add => x + sv,
            BcastKind::Sub => x - sv,
            BcastKind::Mul => x * sv,
            BcastKind::Div => x / sv,
        });
        let rg = self.needs(a) || self.needs(s);
        Ok(self.push(Op::Bcast(kind, a, s), data, rg))
    }

    // ── Reductions ──────────────────────────────────────────────────────

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self
            .value(a)
            .data()
            .iter()
            .fold(T::zero(), |acc, &x| acc + x);
        let rg = self.needs(a);
        self.push(Op::Sum(a), Tensor::scalar(total), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::of(self.value(a).numel() as f64);
        let total = self
            .value(a)
            .data()
            .iter()
            .fold(T::zero(), |acc, &x| acc + x);
        let rg = self.needs(a);
        self.push(Op::Mean(a), Tensor::scalar(total / n), rg)
    }

    // ── Row-wise normalizations ─────────────────────────────────────────

    pub fn softmax(&mut self, a: Var) -> Var {
        let value = rowwise(self.value(a), softmax_row);
        let rg = self.needs(a);
        self.push(Op::Softmax(a), value, rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let value = rowwise(self.value(a), log_softmax_row);
        let rg = self.needs(a);
        self.push(Op::LogSoftmax(a), value, rg)
    }

    // ── Structure ───────────────────────────────────────────────────────

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat", "no inputs"));
        }
        let first = self.value(parts[0]).shape().to_vec();
        let rank = first.len();
        if axis >= rank {
            return Err(Error::invalid(
                "concat",
                format!("axis {axis} out of range for rank {rank}"),
            ));
        }
        let mut cat_dim = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != rank
                || (0..rank).any(|d| d != axis && s[d] != first[d])
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            cat_dim += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = cat_dim;
        let value = if rank == 1 || axis == 0 {
            // Contiguous along rows (or plain vectors): straight append.
            let mut data = Vec::with_capacity(shape.iter().product());
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::new(shape.clone(), data).expect("concat shape")
        } else {
            // Column concat: interleave per row.
            let rows = first[0];
            let mut data = Vec::with_capacity(shape.iter().product());
            for r in 0..rows {
                for &p in parts {
                    let t = self.value(p);
                    let c = t.cols();
                    data.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
                }
            }
            Tensor::new(shape.clone(), data).expect("concat shape")
        };
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::Concat(parts.to_vec(), axis), value, rg))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.value(a).shape().to_vec();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {s:?}", start + len),
            ));
        }
        let value = if s.len() == 1 || axis == 0 {
            let width: usize = if s.len() == 2 { s[1] } else { 1 };
            let data = self.value(a).data()[start * width..(start + len) * width].to_vec();
            let mut shape = s.clone();
            shape[0] = len;
            Tensor::new(shape, data).expect("slice shape")
        } else {
            let (rows, cols) = (s[0], s[1]);
            let src = self.value(a).data();
            let mut data = Vec::with_capacity(rows * len);
            for r in 0..rows {
                data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
            }
            Tensor::new(vec![rows, len], data).expect("slice shape")
        };
        let rg = self.needs(a);
        Ok(self.push(Op::Slice(a, axis, start, len), value, rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.slice(a, 1, start, len)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() || shape.is_empty() || shape.len() > 2 {
            return Err(Error::invalid(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.value(a).shape()),
            ));
        }
        let data = self.value(a).data().to_vec();
        let rg = self.needs(a);
        Ok(self.push(
            Op::Reshape(a, shape.clone()),
            Tensor::new(shape, data).expect("reshape"),
            rg,
        ))
    }

    /// Gathers rows of `table: [vocab, dim]` for each token id.
    pub fn embedding(&mut self, table: Var, tokens: &[usize]) -> Result<Var> {
        let s = self.value(table).shape().to_vec();
        if s.len() != 2 {
            return Err(Error::invalid("embedding", "table must be rank 2"));
        }
        if tokens.is_empty() {
            return Err(Error::invalid("embedding", "empty token batch"));
        }
        let (vocab, dim) = (s[0], s[1]);
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
            return Err(Error::invalid(
                "embedding",
                format!("token id {bad} out of vocabulary {vocab}"),
            ));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(tokens.len() * dim);
        for &t in tokens {
            data.extend_from_slice(&src[t * dim..(t + 1) * dim]);
        }
        let rg = self.needs(table);
        Ok(self.push(
            Op::Embedding(table, tokens.to_vec()),
            Tensor::new(vec![tokens.len(), dim], data).expect("embedding shape"),
            rg,
        ))
    }

    /// `out[i] = a[i, idx[i]]` — per-row element gather (e.g. target
    /// log-probabilities out of a log-softmax matrix).
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let s = self.value(a).shape().to_vec();
        if s.len() != 2 || idx.len() != s[0] {
            return Err(Error::invalid(
                "pick",
                format!("need one index per row of {s:?}, got {}", idx.len()),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&c| c >= s[1]) {
            return Err(Error::invalid(
                "pick",
                format!("column {bad} out of range {}", s[1]),
            ));
        }
        let src = self.value(a).data();
        let data: Vec<T> = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| src[r * s[1] + c])
            .collect();
        let rg = self.needs(a);
        Ok(self.push(Op::Pick(a, idx.to_vec()), Tensor::from_vec(data), rg))
    }

    /// Inverted dropout. In training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`; in
    /// evaluation mode this is the identity.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut Stream) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(
                "dropout",
                format!("rate must be in [0,1), got {rate}"),
            ));
        }
        if !self.training || rate == 0.0 {
            return Ok(a);
        }
        let mask = sample_dropout_mask::<T>(self.value(a).numel(), rate, rng);
        let data = Tensor::new(
            self.value(a).shape().to_vec(),
            self.value(a)
                .data()
                .iter()
                .zip(&mask)
                .map(|(&x, &m)| x * m)
                .collect(),
        )
        .expect("dropout shape");
        let rg = self.needs(a);
        Ok(self.push(Op::Dropout(a, mask), data, rg))
    }

    /// Row-level select between two same-shape tensors. Rows where
    /// `mask[i]` is true come from `a`, the rest are copied from `b`
    /// bit-for-bit (no arithmetic is applied to carried rows).
    pub fn row_select(&mut self, a: Var, b: Var, mask: &[bool]) -> Result<Var> {
        self.ewise("row_select", a, b)?;
        let rows = self.value(a).rows();
        if mask.len() != rows {
            return Err(Error::invalid(
                "row_select",
                format!("mask length {} vs {rows} rows", mask.len()),
            ));
        }
        let width = self.value(a).numel() / rows;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(av.len());
        for (i, &keep_a) in mask.iter().enumerate() {
            let src = if keep_a { av } else { bv };
            data.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            Op::RowSelect(a, b, mask.to_vec()),
            Tensor::new(self.value(a).shape().to_vec(), data).expect("row_select shape"),
            rg,
        ))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns one gradient per bound
    /// parameter; parameters with no path to the loss get zero tensors.
    pub fn backward(&self, loss: Var) -> Result<GradMap<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::invalid("backward", "loss is not a node of this graph"));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::LossNotScalar {
                shape: self.nodes[loss.0].value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad || matches!(self.nodes[id].op, Op::Leaf) {
                // Leaves keep their accumulated gradient for collection below.
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
        }

        let mut out = GradMap::new();
        for (name, &var) in &self.params {
            let t = &self.nodes[var.0].value;
            let grad = match &grads[var.0] {
                Some(g) => Tensor::new(t.shape().to_vec(), g.clone()).expect("grad shape"),
                None => Tensor::zeros(t.shape().to_vec()),
            };
            out.insert(name.clone(), grad);
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contribution: &[T]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (dst, &src) in g.iter_mut().zip(contribution) {
                    *dst = *dst + src;
                }
            }
            None => grads[v.0] = Some(contribution.to_vec()),
        }
    }

    fn propagate(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g);
                if self.needs(*b) {
                    let neg: Vec<T> = g.iter().map(|&x| -x).collect();
                    self.accumulate(grads, *b, &neg);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let da: Vec<T> = g
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&gi, &bi)| gi * bi)
                        .collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    let db: Vec<T> = g
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&gi, &ai)| gi * ai)
                        .collect();
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b).data();
                if self.needs(*a) {
                    let da: Vec<T> = g.iter().zip(bv).map(|(&gi, &bi)| gi / bi).collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    let cv = node.value.data();
                    let db: Vec<T> = g
                        .iter()
                        .zip(cv.iter().zip(bv))
                        .map(|(&gi, (&ci, &bi))| -gi * ci / bi)
                        .collect();
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::AffineConst(a, mul, _) => {
                let da: Vec<T> = g.iter().map(|&gi| gi * *mul).collect();
                self.accumulate(grads, *a, &da);
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let da: Vec<T> = g
                    .iter()
                    .zip(y)
                    .map(|(&gi, &yi)| gi * (T::one() - yi * yi))
                    .collect();
                self.accumulate(grads, *a, &da);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let da: Vec<T> = g
                    .iter()
                    .zip(y)
                    .map(|(&gi, &yi)| gi * yi * (T::one() - yi))
                    .collect();
                self.accumulate(grads, *a, &da);
            }
            Op::Sqrt(a) => {
                let y = node.value.data();
                let half = T::of(0.5);
                let da: Vec<T> = g.iter().zip(y).map(|(&gi, &yi)| gi * half / yi).collect();
                self.accumulate(grads, *a, &da);
            }
            Op::MaxConst(a, c) => {
                let av = self.value(*a).data();
                let da: Vec<T> = g
                    .iter()
                    .zip(av)
                    .map(|(&gi, &ai)| if ai > *c { gi } else { T::zero() })
                    .collect();
                self.accumulate(grads, *a, &da);
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                if self.needs(*a) {
                    // dA = g @ B^T
                    let mut da = vec![T::zero(); m * k];
                    matmul_nt(g, self.value(*b).data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    // dB = A^T @ g
                    let mut db = vec![T::zero(); k * n];
                    matmul_tn(self.value(*a).data(), g, &mut db, m, k, n);
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).rows();
                if self.needs(*a) {
                    // dA = g @ B
                    let mut da = vec![T::zero(); m * k];
                    matmul_nn(g, self.value(*b).data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    // dB = g^T @ A
                    let mut db = vec![T::zero(); n * k];
                    matmul_tn(g, self.value(*a).data(), &mut db, m, n, k);
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, g);
                if self.needs(*bias) {
                    let c = self.value(*bias).numel();
                    let mut db = vec![T::zero(); c];
                    for row in g.chunks_exact(c) {
                        for (dst, &src) in db.iter_mut().zip(row) {
                            *dst = *dst + src;
                        }
                    }
                    self.accumulate(grads, *bias, &db);
                }
            }
            Op::ScaleRows(a, s) => {
                let c = self.value(*a).cols();
                let sv = self.value(*s).data();
                if self.needs(*a) {
                    let mut da = Vec::with_capacity(g.len());
                    for (row, &f) in g.chunks_exact(c).zip(sv) {
                        da.extend(row.iter().map(|&gi| gi * f));
                    }
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*s) {
                    let av = self.value(*a).data();
                    let ds: Vec<T> = g
                        .chunks_exact(c)
                        .zip(av.chunks_exact(c))
                        .map(|(gr, ar)| {
                            gr.iter()
                                .zip(ar)
                                .fold(T::zero(), |acc, (&gi, &ai)| acc + gi * ai)
                        })
                        .collect();
                    self.accumulate(grads, *s, &ds);
                }
            }
            Op::Bcast(kind, a, s) => {
                let sv = self.value(*s).data()[0];
                if self.needs(*a) {
                    let da: Vec<T> = match kind {
                        BcastKind::Add | BcastKind::Sub => g.to_vec(),
                        BcastKind::Mul => g.iter().map(|&gi| gi * sv).collect(),
                        BcastKind::Div => g.iter().map(|&gi| gi / sv).collect(),
                    };
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*s) {
                    let av = self.value(*a).data();
                    let ds = match kind {
                        BcastKind::Add => g.iter().fold(T::zero(), |acc, &gi| acc + gi),
                        BcastKind::Sub => -g.iter().fold(T::zero(), |acc, &gi| acc + gi),
                        BcastKind::Mul => g
                            .iter()
                            .zip(av)
                            .fold(T::zero(), |acc, (&gi, &ai)| acc + gi * ai),
                        BcastKind::Div => {
                            let c = node.value.data();
                            g.iter()
                                .zip(c)
                                .fold(T::zero(), |acc, (&gi, &ci)| acc - gi * ci / sv)
                        }
                    };
                    self.accumulate(grads, *s, &[ds]);
                }
            }
            Op::Sum(a) => {
                let da = vec![g[0]; self.value(*a).numel()];
                self.accumulate(grads, *a, &da);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let scale = g[0] / T::of(n as f64);
                let da = vec![scale; n];
                self.accumulate(grads, *a, &da);
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let c = self.value(*a).cols().max(1);
                let mut da = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks_exact(c).zip(y.chunks_exact(c)) {
                    let dot = gr
                        .iter()
                        .zip(yr)
                        .fold(T::zero(), |acc, (&gi, &yi)| acc + gi * yi);
                    da.extend(gr.iter().zip(yr).map(|(&gi, &yi)| yi * (gi - dot)));
                }
                self.accumulate(grads, *a, &da);
            }
            Op::LogSoftmax(a) => {
                let y = node.value.data();
                let c = self.value(*a).cols().max(1);
                let mut da = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks_exact(c).zip(y.chunks_exact(c)) {
                    let gsum = gr.iter().fold(T::zero(), |acc, &gi| acc + gi);
                    da.extend(
                        gr.iter()
                            .zip(yr)
                            .map(|(&gi, &yi)| gi - yi.exp() * gsum),
                    );
                }
                self.accumulate(grads, *a, &da);
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 || self.value(parts[0]).shape().len() == 1 {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        if self.needs(p) {
                            self.accumulate(grads, p, &g[offset..offset + n]);
                        }
                        offset += n;
                    }
                } else {
                    let rows = self.value(parts[0]).rows();
                    let total_c: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                    let mut col_off = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        if self.needs(p) {
                            let mut dp = Vec::with_capacity(rows * c);
                            for r in 0..rows {
                                dp.extend_from_slice(
                                    &g[r * total_c + col_off..r * total_c + col_off + c],
                                );
                            }
                            self.accumulate(grads, p, &dp);
                        }
                        col_off += c;
                    }
                }
            }
            Op::Slice(a, axis, start, len) => {
                let s = self.value(*a).shape();
                let mut da = vec![T::zero(); self.value(*a).numel()];
                if s.len() == 1 || *axis == 0 {
                    let width = if s.len() == 2 { s[1] } else { 1 };
                    da[start * width..(start + len) * width].copy_from_slice(g);
                } else {
                    let cols = s[1];
                    for r in 0..s[0] {
                        da[r * cols + start..r * cols + start + len]
                            .copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                }
                self.accumulate(grads, *a, &da);
            }
            Op::Embedding(table, tokens) => {
                let dim = self.value(*table).cols();
                let mut dt = vec![T::zero(); self.value(*table).numel()];
                for (i, &t) in tokens.iter().enumerate() {
                    let dst = &mut dt[t * dim..(t + 1) * dim];
                    let src = &g[i * dim..(i + 1) * dim];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
                self.accumulate(grads, *table, &dt);
            }
            Op::Pick(a, idx) => {
                let cols = self.value(*a).cols();
                let mut da = vec![T::zero(); self.value(*a).numel()];
                for (r, &c) in idx.iter().enumerate() {
                    da[r * cols + c] = g[r];
                }
                self.accumulate(grads, *a, &da);
            }
            Op::Dropout(a, mask) => {
                let da: Vec<T> = g.iter().zip(mask).map(|(&gi, &mi)| gi * mi).collect();
                self.accumulate(grads, *a, &da);
            }
            Op::RowSelect(a, b, mask) => {
                let width = node.value.numel() / mask.len();
                let mut da = vec![T::zero(); node.value.numel()];
                let mut db = vec![T::zero(); node.value.numel()];
                for (i, &keep_a) in mask.iter().enumerate() {
                    let dst = if keep_a { &mut da } else { &mut db };
                    dst[i * width..(i + 1) * width]
                        .copy_from_slice(&g[i * width..(i + 1) * width]);
                }
                if self.needs(*a) {
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Reshape(a, _) => {
                self.accumulate(grads, *a, g);
            }
        }
    }
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, else
/// `1/(1-rate)`, so the expectation of the masked signal is unchanged.
pub fn sample_dropout_mask<T: Real>(numel: usize, rate: f64, rng: &mut Stream) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..numel)
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

/// Mask-producing form of the spec'd operation: all-ones outside training.
pub fn dropout_mask_tensor<T: Real>(
    shape: Vec<usize>,
    rate: f64,
    training: bool,
    rng: &mut Stream,
) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(
            "dropout",
            format!("rate must be in [0,1), got {rate}"),
        ));
    }
    let numel: usize = shape.iter().product();
    if !training || rate == 0.0 {
        return Tensor::new(shape, vec![T::one(); numel]);
    }
    Tensor::new(shape, sample_dropout_mask(numel, rate, rng))
}

fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn map<T: Real>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
        .expect("map preserves shape")
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::new(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
    .expect("zip_map preserves shape")
}

fn rowwise<T: Real>(t: &Tensor<T>, f: impl Fn(&[T], &mut [T])) -> Tensor<T> {
    let c = t.cols().max(1);
    let mut data = vec![T::zero(); t.numel()];
    for (src, dst) in t.data().chunks_exact(c).zip(data.chunks_exact_mut(c)) {
        f(src, dst);
    }
    Tensor::new(t.shape().to_vec(), data).expect("rowwise preserves shape")
}

fn softmax_row<T: Real>(row: &[T], out: &mut [T]) {
    let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

fn log_softmax_row<T: Real>(row: &[T], out: &mut [T]) {
    let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for &x in row {
        total = total + (x - max).exp();
    }
    let log_z = max + total.ln();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = x - log_z;
    }
}

// ── Raw matrix kernels ──────────────────────────────────────────────────
//
// Loop orders are chosen so the inner loop runs over contiguous memory and
// auto-vectorizes.

/// `c += a @ b` with `a: [m,k]`, `b: [k,n]`.
pub fn matmul_nn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c += a @ b^T` with `a: [m,k]`, `b: [n,k]`.
///
/// The dot product runs over eight accumulator lanes so the reduction has
/// no serial dependency chain and vectorizes.
pub fn matmul_nt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            *cv = *cv + dot_lanes(a_row, b_row);
        }
    }
}

const LANES: usize = 8;

#[inline]
fn dot_lanes<T: Real>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    let (a_main, a_tail) = a.split_at(chunks * LANES);
    let (b_main, b_tail) = b.split_at(chunks * LANES);
    for (a_chunk, b_chunk) in a_main.chunks_exact(LANES).zip(b_main.chunks_exact(LANES)) {
        for l in 0..LANES {
            lanes[l] = lanes[l] + a_chunk[l] * b_chunk[l];
        }
    }
    let mut acc = T::zero();
    for &l in &lanes {
        acc = acc + l;
    }
    for (&av, &bv) in a_tail.iter().zip(b_tail) {
        acc = acc + av * bv;
    }
    acc
}

/// `c += a^T @ b` with `a: [m,k]`, `b: [m,n]`, producing `[k,n]`.
pub fn matmul_tn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for r in 0..m {
        let a_row = &a[r * k..(r + 1) * k];
        let b_row = &b[r * n..(r + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}
