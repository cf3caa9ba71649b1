//! Baseline recurrent cells and sequence unrolling.
//!
//! Cells use a fused weight layout: all gates are stacked into one input
//! matrix and one hidden matrix, with named column views sliced off after
//! the affine step. The math is identical to per-gate matrices but records
//! fewer tape nodes.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::rng::Stream;
use crate::tensor::{Real, Tensor};

/// Recurrent cell family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Rnn,
    Lstm,
}

impl CellKind {
    /// Stacked gate count: 1 for vanilla RNN, 4 for LSTM (i, f, g, o).
    pub fn gate_factor(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Lstm => 4,
        }
    }
}

/// Descriptor for one cell's parameters inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Cell {
    pub kind: CellKind,
    pub in_dim: usize,
    pub hidden: usize,
    pub name: String,
}

/// Parameter handles bound onto a live graph.
#[derive(Clone, Copy, Debug)]
pub struct BoundCell {
    pub kind: CellKind,
    pub hidden: usize,
    w_ih: Var,
    w_hh: Var,
    b_ih: Var,
    b_hh: Var,
}

/// LSTM gate activations for one step.
#[derive(Clone, Copy, Debug)]
pub struct LstmGates {
    pub input: Var,
    pub forget: Var,
    pub cell_in: Var,
    pub output: Var,
}

impl Cell {
    pub fn new(kind: CellKind, in_dim: usize, hidden: usize, name: impl Into<String>) -> Self {
        Cell {
            kind,
            in_dim,
            hidden,
            name: name.into(),
        }
    }

    /// Initializes this cell's parameters: matrices uniform in
    /// `±1/sqrt(fan_in)`, biases zero.
    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut Stream) {
        let rows = self.kind.gate_factor() * self.hidden;
        store.insert_uniform(
            format!("{}.w_ih", self.name),
            vec![rows, self.in_dim],
            self.in_dim,
            rng,
        );
        store.insert_uniform(
            format!("{}.w_hh", self.name),
            vec![rows, self.hidden],
            self.hidden,
            rng,
        );
        store.insert_zeros(format!("{}.b_ih", self.name), vec![rows]);
        store.insert_zeros(format!("{}.b_hh", self.name), vec![rows]);
    }

    pub fn param_names(&self) -> Vec<String> {
        ["w_ih", "w_hh", "b_ih", "b_hh"]
            .iter()
            .map(|s| format!("{}.{s}", self.name))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        let rows = self.kind.gate_factor() * self.hidden;
        rows * self.in_dim + rows * self.hidden + 2 * rows
    }

    pub fn bind<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>) -> Result<BoundCell> {
        Ok(BoundCell {
            kind: self.kind,
            hidden: self.hidden,
            w_ih: g.param(store, &format!("{}.w_ih", self.name))?,
            w_hh: g.param(store, &format!("{}.w_hh", self.name))?,
            b_ih: g.param(store, &format!("{}.b_ih", self.name))?,
            b_hh: g.param(store, &format!("{}.b_hh", self.name))?,
        })
    }
}

impl BoundCell {
    fn preactivation<T: Real>(&self, g: &mut Graph<T>, x: Var, h_prev: Var) -> Result<Var> {
        let from_x = g.linear(x, self.w_ih, self.b_ih)?;
        let from_h = g.linear(h_prev, self.w_hh, self.b_hh)?;
        g.add(from_x, from_h)
    }

    /// `h_t = tanh(W_ih x_t + b_ih + W_hh h_prev + b_hh)`.
    pub fn rnn_step<T: Real>(&self, g: &mut Graph<T>, x: Var, h_prev: Var) -> Result<Var> {
        debug_assert_eq!(self.kind, CellKind::Rnn);
        let pre = self.preactivation(g, x, h_prev)?;
        Ok(g.tanh(pre))
    }

    /// Standard LSTM step: gates through sigmoid, candidate through tanh,
    /// `c_t = f ⊙ c_prev + i ⊙ g`, `h_t = o ⊙ tanh(c_t)`.
    pub fn lstm_step<T: Real>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var, LstmGates)> {
        debug_assert_eq!(self.kind, CellKind::Lstm);
        let (c_new, gates) = self.lstm_cell_update(g, x, h_prev, c_prev)?;
        let h_new = self.lstm_hidden(g, c_new, gates)?;
        Ok((h_new, c_new, gates))
    }

    /// The cell-state half of the LSTM step. Split out because the
    /// fixation-gated variants gate the cell update and the hidden
    /// recomputation differently.
    pub fn lstm_cell_update<T: Real>(
        &self,
        g: &mut Graph<T>,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, LstmGates)> {
        let h = self.hidden;
        let pre = self.preactivation(g, x, h_prev)?;
        let i_pre = g.slice_cols(pre, 0, h)?;
        let f_pre = g.slice_cols(pre, h, h)?;
        let g_pre = g.slice_cols(pre, 2 * h, h)?;
        let o_pre = g.slice_cols(pre, 3 * h, h)?;
        let gates = LstmGates {
            input: g.sigmoid(i_pre),
            forget: g.sigmoid(f_pre),
            cell_in: g.tanh(g_pre),
            output: g.sigmoid(o_pre),
        };
        let keep = g.mul(gates.forget, c_prev)?;
        let write = g.mul(gates.input, gates.cell_in)?;
        let c_new = g.add(keep, write)?;
        Ok((c_new, gates))
    }

    /// `h = o ⊙ tanh(c)` for an already-decided cell state.
    pub fn lstm_hidden<T: Real>(&self, g: &mut Graph<T>, c: Var, gates: LstmGates) -> Result<Var> {
        let squashed = g.tanh(c);
        g.mul(gates.output, squashed)
    }
}

/// Per-timestep record of a plain unrolled cell.
#[derive(Clone, Debug)]
pub struct CellTrace<T> {
    /// Hidden state after each step.
    pub h: Vec<Tensor<T>>,
    /// Cell state after each step (LSTM only, empty for RNN).
    pub c: Vec<Tensor<T>>,
    /// Final state, reusable as the initial state of a continuation.
    pub final_state: (Tensor<T>, Option<Tensor<T>>),
}

/// Runs a cell over a sequence in evaluation mode, threading state, and
/// returns the full trace. `init` defaults to zero states.
pub fn unroll<T: Real>(
    cell: &Cell,
    store: &ParamStore<T>,
    inputs: &[Tensor<T>],
    init: Option<(Tensor<T>, Option<Tensor<T>>)>,
) -> Result<CellTrace<T>> {
    if inputs.is_empty() {
        return Err(Error::invalid("unroll", "empty input sequence"));
    }
    let batch = inputs[0].rows();
    let mut g = Graph::eval();
    let bound = cell.bind(&mut g, store)?;
    let (h0, c0) = match init {
        Some((h, c)) => (h, c.unwrap_or_else(|| Tensor::zeros(vec![batch, cell.hidden]))),
        None => (
            Tensor::zeros(vec![batch, cell.hidden]),
            Tensor::zeros(vec![batch, cell.hidden]),
        ),
    };
    let mut h = g.leaf(h0);
    let mut c = g.leaf(c0);
    let mut trace = CellTrace {
        h: Vec::with_capacity(inputs.len()),
        c: Vec::new(),
        final_state: (Tensor::zeros(vec![1]), None),
    };
    for x_t in inputs {
        let x = g.leaf(x_t.clone());
        match cell.kind {
            CellKind::Rnn => {
                h = bound.rnn_step(&mut g, x, h)?;
                trace.h.push(g.detach(h));
            }
            CellKind::Lstm => {
                let (h_new, c_new, _) = bound.lstm_step(&mut g, x, h, c)?;
                h = h_new;
                c = c_new;
                trace.h.push(g.detach(h));
                trace.c.push(g.detach(c));
            }
        }
    }
    trace.final_state = (
        g.detach(h),
        match cell.kind {
            CellKind::Rnn => None,
            CellKind::Lstm => Some(g.detach(c)),
        },
    );
    Ok(trace)
}
