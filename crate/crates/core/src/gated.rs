//! Fixation-gated recurrent architectures.
//!
//! Two families share the same gating idea — more fixation, more
//! computation — but spend it differently:
//!
//! * **Parallel components** ([`FgpStack`]): `K` cells run side by side at
//!   every layer; component `k` updates only when `k <= d_t`. The model
//!   output is the concatenation of all component states. With more than
//!   one layer, a learned projection compresses each layer's concatenated
//!   bank into the next layer's input, and the same `d_t` gates every layer.
//! * **Gated layers** ([`FglStack`]): a stack of `L` cells where layer `l`
//!   updates only when `l <= d_t`; the output concatenates every layer's
//!   hidden state.
//!
//! Gating semantics differ per cell family. For parallel LSTMs only the
//! cell state is gated: gates are computed every step and the hidden state
//! is recomputed from the (possibly frozen) cell. For layer-gated LSTMs an
//! inactive layer freezes both its cell and hidden state.
//!
//! Every hard branch has a soft counterpart: the keep/update decision
//! becomes a convex combination weighted by a steepened sigmoid of the
//! continuous duration, applied to exactly the quantities the hard gate
//! freezes. As the steepness grows the soft path converges to the hard one.

use crate::cells::{Cell, CellKind};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::rng::Stream;
use crate::tensor::{Real, Tensor};

/// Gate input for one timestep.
#[derive(Clone, Copy, Debug)]
pub enum StepGate<'a> {
    /// Every component / layer updates (also what vanilla models see).
    Full,
    /// Hard integer bins, one per batch row, each in `1..=max_gate`.
    Hard(&'a [usize]),
    /// Continuous durations as a rank-1 tape node `[batch]`; gradients flow
    /// through the gating coefficients.
    Soft(Var),
}

/// A recurrent trunk that can be driven token by token inside a graph.
///
/// Lifecycle per tape: `begin` binds parameters and lifts carried state,
/// `step` advances one token, `finish` detaches state so the next segment
/// can continue where this one stopped (gradients truncate at the
/// boundary). `reset_state` drops the carry entirely.
pub trait SeqModel<T: Real> {
    fn register(&self, store: &mut ParamStore<T>, rng: &mut Stream);
    fn begin(&mut self, g: &mut Graph<T>, store: &ParamStore<T>, batch: usize) -> Result<()>;
    fn step(&mut self, g: &mut Graph<T>, rng: &mut Stream, x: Var, gate: StepGate) -> Result<Var>;
    fn finish(&mut self, g: &Graph<T>);
    fn reset_state(&mut self);
    /// Width of the step output (concatenated bank for gated variants).
    fn out_dim(&self) -> usize;
    /// Highest valid hard gate value (`K`, `L`, or 1 for vanilla).
    fn max_gate(&self) -> usize;
    /// Trainable parameter count of the trunk (embedding excluded).
    fn param_count(&self) -> usize;
    fn param_names(&self) -> Vec<String>;
}

// ── Shared gating helpers ───────────────────────────────────────────────

fn check_hard(d: &[usize], max_gate: usize) -> Result<()> {
    for &v in d {
        if v < 1 || v > max_gate {
            return Err(Error::GateOutOfRange {
                got: v,
                max: max_gate,
            });
        }
    }
    Ok(())
}

/// Active rows for 0-based component/layer index: active iff `index0 < d`.
fn hard_mask(d: &[usize], index0: usize) -> (Vec<bool>, bool, bool) {
    let mask: Vec<bool> = d.iter().map(|&v| index0 < v).collect();
    let any = mask.iter().any(|&m| m);
    let all = mask.iter().all(|&m| m);
    (mask, any, all)
}

/// `alpha = sigmoid((index0 - dbar) * s)` — the keep-old coefficient of the
/// component/layer with 0-based index `index0` (i.e. `k - 1`).
fn alpha_node<T: Real>(g: &mut Graph<T>, dbar: Var, index0: usize, steepness: f64) -> Var {
    let s = T::of(steepness);
    let pre = g.affine_const(dbar, -s, T::of(index0 as f64) * s);
    g.sigmoid(pre)
}

/// `(1 - alpha) * candidate + alpha * previous`, row-wise.
fn soft_combine<T: Real>(g: &mut Graph<T>, cand: Var, prev: Var, alpha: Var) -> Result<Var> {
    let keep = g.scale_rows(prev, alpha)?;
    let open = g.affine_const(alpha, T::of(-1.0), T::one());
    let update = g.scale_rows(cand, open)?;
    g.add(update, keep)
}

/// Hard keep/update merge. Carried rows are copied bit-for-bit; fully
/// inactive steps return the previous node untouched.
fn hard_merge<T: Real>(
    g: &mut Graph<T>,
    cand: Var,
    prev: Var,
    mask: &[bool],
    any: bool,
    all: bool,
) -> Result<Var> {
    if !any {
        Ok(prev)
    } else if all {
        Ok(cand)
    } else {
        g.row_select(cand, prev, mask)
    }
}

fn zeros_state<T: Real>(g: &mut Graph<T>, batch: usize, hidden: usize) -> Var {
    g.leaf(Tensor::zeros(vec![batch, hidden]))
}

type CarriedState<T> = Vec<(Tensor<T>, Option<Tensor<T>>)>;

// ── Vanilla stack ───────────────────────────────────────────────────────

/// Plain (optionally multi-layer) RNN/LSTM trunk: the comparison baseline
/// and the recurrent body of adaptive fixation predictors.
pub struct VanillaStack<T: Real> {
    cells: Vec<Cell>,
    kind: CellKind,
    hidden: usize,
    inter_dropout: f64,
    carried: Option<CarriedState<T>>,
    bound: Vec<crate::cells::BoundCell>,
    state: Vec<(Var, Option<Var>)>,
}

impl<T: Real> VanillaStack<T> {
    pub fn new(
        kind: CellKind,
        in_dim: usize,
        hidden: usize,
        layers: usize,
        inter_dropout: f64,
        prefix: &str,
    ) -> Self {
        let cells = (0..layers)
            .map(|l| {
                let input = if l == 0 { in_dim } else { hidden };
                Cell::new(kind, input, hidden, format!("{prefix}.l{l}"))
            })
            .collect();
        VanillaStack {
            cells,
            kind,
            hidden,
            inter_dropout,
            carried: None,
            bound: Vec::new(),
            state: Vec::new(),
        }
    }
}

impl<T: Real> SeqModel<T> for VanillaStack<T> {
    fn register(&self, store: &mut ParamStore<T>, rng: &mut Stream) {
        for cell in &self.cells {
            cell.register(store, rng);
        }
    }

    fn begin(&mut self, g: &mut Graph<T>, store: &ParamStore<T>, batch: usize) -> Result<()> {
        self.bound.clear();
        self.state.clear();
        for cell in &self.cells {
            self.bound.push(cell.bind(g, store)?);
        }
        match self.carried.take() {
            Some(states) => {
                for (h, c) in states {
                    self.state.push((g.leaf(h), c.map(|t| g.leaf(t))));
                }
            }
            None => {
                for _ in &self.cells {
                    let h = zeros_state(g, batch, self.hidden);
                    let c = match self.kind {
                        CellKind::Rnn => None,
                        CellKind::Lstm => Some(zeros_state(g, batch, self.hidden)),
                    };
                    self.state.push((h, c));
                }
            }
        }
        Ok(())
    }

    fn step(&mut self, g: &mut Graph<T>, rng: &mut Stream, x: Var, _gate: StepGate) -> Result<Var> {
        let mut input = x;
        for (l, bound) in self.bound.iter().enumerate() {
            if l > 0 {
                input = g.dropout(input, self.inter_dropout, rng)?;
            }
            let (h_prev, c_prev) = self.state[l];
            match self.kind {
                CellKind::Rnn => {
                    let h = bound.rnn_step(g, input, h_prev)?;
                    self.state[l] = (h, None);
                    input = h;
                }
                CellKind::Lstm => {
                    let (h, c, _) =
                        bound.lstm_step(g, input, h_prev, c_prev.expect("lstm state"))?;
                    self.state[l] = (h, Some(c));
                    input = h;
                }
            }
        }
        Ok(input)
    }

    fn finish(&mut self, g: &Graph<T>) {
        self.carried = Some(
            self.state
                .iter()
                .map(|&(h, c)| (g.detach(h), c.map(|cv| g.detach(cv))))
                .collect(),
        );
    }

    fn reset_state(&mut self) {
        self.carried = None;
    }

    fn out_dim(&self) -> usize {
        self.hidden
    }

    fn max_gate(&self) -> usize {
        1
    }

    fn param_count(&self) -> usize {
        self.cells.iter().map(Cell::param_count).sum()
    }

    fn param_names(&self) -> Vec<String> {
        self.cells.iter().flat_map(Cell::param_names).collect()
    }
}

// ── Parallel components (FGP) ───────────────────────────────────────────

/// `K` parallel cells per layer, gated by fixation bins; optionally stacked
/// with learned bank→input projections between layers.
pub struct FgpStack<T: Real> {
    layers: Vec<Vec<Cell>>,
    proj: Vec<(String, String)>,
    kind: CellKind,
    components: usize,
    hidden: usize,
    proj_dim: usize,
    steepness: f64,
    inter_dropout: f64,
    carried: Option<Vec<CarriedState<T>>>,
    bound: Vec<Vec<crate::cells::BoundCell>>,
    proj_bound: Vec<(Var, Var)>,
    bank: Vec<Vec<(Var, Option<Var>)>>,
}

impl<T: Real> FgpStack<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: CellKind,
        in_dim: usize,
        hidden: usize,
        components: usize,
        layers: usize,
        proj_dim: usize,
        steepness: f64,
        inter_dropout: f64,
        prefix: &str,
    ) -> Self {
        let layer_cells = (0..layers)
            .map(|l| {
                let input = if l == 0 { in_dim } else { proj_dim };
                (0..components)
                    .map(|k| Cell::new(kind, input, hidden, format!("{prefix}.l{l}.k{k}")))
                    .collect()
            })
            .collect();
        let proj = (0..layers.saturating_sub(1))
            .map(|l| (format!("{prefix}.proj{l}.w"), format!("{prefix}.proj{l}.b")))
            .collect();
        FgpStack {
            layers: layer_cells,
            proj,
            kind,
            components,
            hidden,
            proj_dim,
            steepness,
            inter_dropout,
            carried: None,
            bound: Vec::new(),
            proj_bound: Vec::new(),
            bank: Vec::new(),
        }
    }

    fn bank_concat(&self, g: &mut Graph<T>, layer: usize) -> Result<Var> {
        let parts: Vec<Var> = self.bank[layer].iter().map(|&(h, _)| h).collect();
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            g.concat(&parts, 1)
        }
    }

    /// Current `(h, c)` values per layer and component (state inspection
    /// for gating-semantics tests).
    pub fn bank_values(&self, g: &Graph<T>) -> Vec<Vec<(Tensor<T>, Option<Tensor<T>>)>> {
        self.bank
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|&(h, c)| (g.detach(h), c.map(|cv| g.detach(cv))))
                    .collect()
            })
            .collect()
    }
}

impl<T: Real> SeqModel<T> for FgpStack<T> {
    fn register(&self, store: &mut ParamStore<T>, rng: &mut Stream) {
        for layer in &self.layers {
            for cell in layer {
                cell.register(store, rng);
            }
        }
        let bank_dim = self.components * self.hidden;
        for (w, b) in &self.proj {
            store.insert_uniform(w.clone(), vec![self.proj_dim, bank_dim], bank_dim, rng);
            store.insert_zeros(b.clone(), vec![self.proj_dim]);
        }
    }

    fn begin(&mut self, g: &mut Graph<T>, store: &ParamStore<T>, batch: usize) -> Result<()> {
        self.bound.clear();
        self.proj_bound.clear();
        self.bank.clear();
        for layer in &self.layers {
            let mut row = Vec::with_capacity(layer.len());
            for cell in layer {
                row.push(cell.bind(g, store)?);
            }
            self.bound.push(row);
        }
        for (w, b) in &self.proj {
            self.proj_bound
                .push((g.param(store, w)?, g.param(store, b)?));
        }
        match self.carried.take() {
            Some(layers) => {
                for states in layers {
                    self.bank.push(
                        states
                            .into_iter()
                            .map(|(h, c)| (g.leaf(h), c.map(|t| g.leaf(t))))
                            .collect(),
                    );
                }
            }
            None => {
                for _ in &self.layers {
                    let mut states = Vec::with_capacity(self.components);
                    for _ in 0..self.components {
                        let h = zeros_state(g, batch, self.hidden);
                        let c = match self.kind {
                            CellKind::Rnn => None,
                            CellKind::Lstm => Some(zeros_state(g, batch, self.hidden)),
                        };
                        states.push((h, c));
                    }
                    self.bank.push(states);
                }
            }
        }
        Ok(())
    }

    fn step(&mut self, g: &mut Graph<T>, rng: &mut Stream, x: Var, gate: StepGate) -> Result<Var> {
        if let StepGate::Hard(d) = gate {
            check_hard(d, self.components)?;
        }
        let mut input = x;
        for l in 0..self.layers.len() {
            if l > 0 {
                // The same d_t gates every layer; only the input changes.
                let bank = self.bank_concat(g, l - 1)?;
                let (w, b) = self.proj_bound[l - 1];
                input = g.linear(bank, w, b)?;
                input = g.dropout(input, self.inter_dropout, rng)?;
            }
            for k in 0..self.components {
                let (h_prev, c_prev) = self.bank[l][k];
                let bound = self.bound[l][k];
                match (self.kind, gate) {
                    (CellKind::Rnn, StepGate::Full) => {
                        let h = bound.rnn_step(g, input, h_prev)?;
                        self.bank[l][k] = (h, None);
                    }
                    (CellKind::Rnn, StepGate::Hard(d)) => {
                        let (mask, any, all) = hard_mask(d, k);
                        let h = if !any {
                            h_prev
                        } else {
                            let cand = bound.rnn_step(g, input, h_prev)?;
                            hard_merge(g, cand, h_prev, &mask, any, all)?
                        };
                        self.bank[l][k] = (h, None);
                    }
                    (CellKind::Rnn, StepGate::Soft(dbar)) => {
                        let cand = bound.rnn_step(g, input, h_prev)?;
                        let alpha = alpha_node(g, dbar, k, self.steepness);
                        let h = soft_combine(g, cand, h_prev, alpha)?;
                        self.bank[l][k] = (h, None);
                    }
                    (CellKind::Lstm, _) => {
                        // Gates run every step; only the cell write is
                        // gated, and the hidden state is recomputed from
                        // whatever cell state survives.
                        let c_prev = c_prev.expect("lstm state");
                        let (c_cand, gates) = bound.lstm_cell_update(g, input, h_prev, c_prev)?;
                        let c_new = match gate {
                            StepGate::Full => c_cand,
                            StepGate::Hard(d) => {
                                let (mask, any, all) = hard_mask(d, k);
                                hard_merge(g, c_cand, c_prev, &mask, any, all)?
                            }
                            StepGate::Soft(dbar) => {
                                let alpha = alpha_node(g, dbar, k, self.steepness);
                                soft_combine(g, c_cand, c_prev, alpha)?
                            }
                        };
                        let h_new = bound.lstm_hidden(g, c_new, gates)?;
                        self.bank[l][k] = (h_new, Some(c_new));
                    }
                }
            }
        }
        self.bank_concat(g, self.layers.len() - 1)
    }

    fn finish(&mut self, g: &Graph<T>) {
        self.carried = Some(
            self.bank
                .iter()
                .map(|layer| {
                    layer
                        .iter()
                        .map(|&(h, c)| (g.detach(h), c.map(|cv| g.detach(cv))))
                        .collect()
                })
                .collect(),
        );
    }

    fn reset_state(&mut self) {
        self.carried = None;
    }

    fn out_dim(&self) -> usize {
        self.components * self.hidden
    }

    fn max_gate(&self) -> usize {
        self.components
    }

    fn param_count(&self) -> usize {
        let cells: usize = self
            .layers
            .iter()
            .flat_map(|layer| layer.iter().map(Cell::param_count))
            .sum();
        let bank_dim = self.components * self.hidden;
        cells + self.proj.len() * (self.proj_dim * bank_dim + self.proj_dim)
    }

    fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .layers
            .iter()
            .flat_map(|layer| layer.iter().flat_map(Cell::param_names))
            .collect();
        for (w, b) in &self.proj {
            names.push(w.clone());
            names.push(b.clone());
        }
        names
    }
}

// ── Gated layers (FGL) ──────────────────────────────────────────────────

/// A stack of `L` cells where the fixation bin decides how many layers,
/// bottom up, execute at each step. Inactive layers freeze their hidden
/// (and cell) states; the output concatenates every layer's hidden state.
pub struct FglStack<T: Real> {
    cells: Vec<Cell>,
    kind: CellKind,
    hidden: usize,
    steepness: f64,
    inter_dropout: f64,
    carried: Option<CarriedState<T>>,
    bound: Vec<crate::cells::BoundCell>,
    state: Vec<(Var, Option<Var>)>,
}

impl<T: Real> FglStack<T> {
    pub fn new(
        kind: CellKind,
        in_dim: usize,
        hidden: usize,
        layers: usize,
        steepness: f64,
        inter_dropout: f64,
        prefix: &str,
    ) -> Self {
        let cells = (0..layers)
            .map(|l| {
                let input = if l == 0 { in_dim } else { hidden };
                Cell::new(kind, input, hidden, format!("{prefix}.l{l}"))
            })
            .collect();
        FglStack {
            cells,
            kind,
            hidden,
            steepness,
            inter_dropout,
            carried: None,
            bound: Vec::new(),
            state: Vec::new(),
        }
    }

    /// Current `(h, c)` values per layer (state inspection for
    /// gating-semantics tests).
    pub fn layer_values(&self, g: &Graph<T>) -> Vec<(Tensor<T>, Option<Tensor<T>>)> {
        self.state
            .iter()
            .map(|&(h, c)| (g.detach(h), c.map(|cv| g.detach(cv))))
            .collect()
    }
}

impl<T: Real> SeqModel<T> for FglStack<T> {
    fn register(&self, store: &mut ParamStore<T>, rng: &mut Stream) {
        for cell in &self.cells {
            cell.register(store, rng);
        }
    }

    fn begin(&mut self, g: &mut Graph<T>, store: &ParamStore<T>, batch: usize) -> Result<()> {
        self.bound.clear();
        self.state.clear();
        for cell in &self.cells {
            self.bound.push(cell.bind(g, store)?);
        }
        match self.carried.take() {
            Some(states) => {
                for (h, c) in states {
                    self.state.push((g.leaf(h), c.map(|t| g.leaf(t))));
                }
            }
            None => {
                for _ in &self.cells {
                    let h = zeros_state(g, batch, self.hidden);
                    let c = match self.kind {
                        CellKind::Rnn => None,
                        CellKind::Lstm => Some(zeros_state(g, batch, self.hidden)),
                    };
                    self.state.push((h, c));
                }
            }
        }
        Ok(())
    }

    fn step(&mut self, g: &mut Graph<T>, rng: &mut Stream, x: Var, gate: StepGate) -> Result<Var> {
        if let StepGate::Hard(d) = gate {
            check_hard(d, self.cells.len())?;
        }
        let mut below = x;
        for l in 0..self.cells.len() {
            let input = if l == 0 {
                below
            } else {
                g.dropout(below, self.inter_dropout, rng)?
            };
            let (h_prev, c_prev) = self.state[l];
            let bound = self.bound[l];
            match (self.kind, gate) {
                (CellKind::Rnn, StepGate::Full) => {
                    let h = bound.rnn_step(g, input, h_prev)?;
                    self.state[l] = (h, None);
                }
                (CellKind::Rnn, StepGate::Hard(d)) => {
                    let (mask, any, all) = hard_mask(d, l);
                    let h = if !any {
                        h_prev
                    } else {
                        let cand = bound.rnn_step(g, input, h_prev)?;
                        hard_merge(g, cand, h_prev, &mask, any, all)?
                    };
                    self.state[l] = (h, None);
                }
                (CellKind::Rnn, StepGate::Soft(dbar)) => {
                    let cand = bound.rnn_step(g, input, h_prev)?;
                    let alpha = alpha_node(g, dbar, l, self.steepness);
                    let h = soft_combine(g, cand, h_prev, alpha)?;
                    self.state[l] = (h, None);
                }
                (CellKind::Lstm, StepGate::Full) => {
                    let c_prev = c_prev.expect("lstm state");
                    let (h, c, _) = bound.lstm_step(g, input, h_prev, c_prev)?;
                    self.state[l] = (h, Some(c));
                }
                (CellKind::Lstm, StepGate::Hard(d)) => {
                    // Both h and c freeze above the gate.
                    let (mask, any, all) = hard_mask(d, l);
                    if any {
                        let c_prev = c_prev.expect("lstm state");
                        let (c_cand, gates) = bound.lstm_cell_update(g, input, h_prev, c_prev)?;
                        let c_new = hard_merge(g, c_cand, c_prev, &mask, any, all)?;
                        let h_cand = bound.lstm_hidden(g, c_new, gates)?;
                        let h_new = hard_merge(g, h_cand, h_prev, &mask, any, all)?;
                        self.state[l] = (h_new, Some(c_new));
                    }
                }
                (CellKind::Lstm, StepGate::Soft(dbar)) => {
                    let c_prev = c_prev.expect("lstm state");
                    let (c_cand, gates) = bound.lstm_cell_update(g, input, h_prev, c_prev)?;
                    let alpha = alpha_node(g, dbar, l, self.steepness);
                    let c_new = soft_combine(g, c_cand, c_prev, alpha)?;
                    let h_cand = bound.lstm_hidden(g, c_new, gates)?;
                    let h_new = soft_combine(g, h_cand, h_prev, alpha)?;
                    self.state[l] = (h_new, Some(c_new));
                }
            }
            below = self.state[l].0;
        }
        let parts: Vec<Var> = self.state.iter().map(|&(h, _)| h).collect();
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            g.concat(&parts, 1)
        }
    }

    fn finish(&mut self, g: &Graph<T>) {
        self.carried = Some(
            self.state
                .iter()
                .map(|&(h, c)| (g.detach(h), c.map(|cv| g.detach(cv))))
                .collect(),
        );
    }

    fn reset_state(&mut self) {
        self.carried = None;
    }

    fn out_dim(&self) -> usize {
        self.cells.len() * self.hidden
    }

    fn max_gate(&self) -> usize {
        self.cells.len()
    }

    fn param_count(&self) -> usize {
        self.cells.iter().map(Cell::param_count).sum()
    }

    fn param_names(&self) -> Vec<String> {
        self.cells.iter().flat_map(Cell::param_names).collect()
    }
}

// ── Architecture descriptor ─────────────────────────────────────────────

/// Model family selector, combining the cell kind with the gating scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Rnn,
    Lstm,
    FgpRnn,
    FgpLstm,
    FglRnn,
    FglLstm,
}

impl Variant {
    pub fn cell_kind(self) -> CellKind {
        match self {
            Variant::Rnn | Variant::FgpRnn | Variant::FglRnn => CellKind::Rnn,
            Variant::Lstm | Variant::FgpLstm | Variant::FglLstm => CellKind::Lstm,
        }
    }

    pub fn is_gated(self) -> bool {
        !matches!(self, Variant::Rnn | Variant::Lstm)
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "rnn" => Variant::Rnn,
            "lstm" => Variant::Lstm,
            "fgp_rnn" => Variant::FgpRnn,
            "fgp_lstm" => Variant::FgpLstm,
            "fgl_rnn" => Variant::FglRnn,
            "fgl_lstm" => Variant::FglLstm,
            other => return Err(Error::config(format!("unknown variant '{other}'"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rnn => "rnn",
            Variant::Lstm => "lstm",
            Variant::FgpRnn => "fgp_rnn",
            Variant::FgpLstm => "fgp_lstm",
            Variant::FglRnn => "fgl_rnn",
            Variant::FglLstm => "fgl_lstm",
        }
    }
}

/// Everything needed to instantiate a trunk.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Parallel components per layer (FGP; ignored elsewhere).
    pub components: usize,
    /// Stack depth (vanilla/stacked-FGP) or gated layer count (FGL).
    pub layers: usize,
    pub hidden: usize,
    pub emb_dim: usize,
    /// Inter-layer projection width for stacked FGP; defaults to `emb_dim`.
    pub proj_dim: Option<usize>,
    pub steepness: f64,
    pub inter_dropout: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.emb_dim == 0 {
            return Err(Error::config("hidden, layers and emb_dim must be positive"));
        }
        if matches!(self.variant, Variant::FgpRnn | Variant::FgpLstm) && self.components == 0 {
            return Err(Error::config("fgp variants need k_components >= 1"));
        }
        if self.variant.is_gated() && self.steepness <= 1.0 {
            return Err(Error::config(format!(
                "gate steepness must exceed 1, got {}",
                self.steepness
            )));
        }
        Ok(())
    }

    /// `K` for FGP, `L` for FGL, 1 otherwise.
    pub fn max_gate(&self) -> usize {
        match self.variant {
            Variant::FgpRnn | Variant::FgpLstm => self.components,
            Variant::FglRnn | Variant::FglLstm => self.layers,
            _ => 1,
        }
    }

    pub fn build<T: Real>(&self, prefix: &str) -> Box<dyn SeqModel<T>> {
        let kind = self.variant.cell_kind();
        match self.variant {
            Variant::Rnn | Variant::Lstm => Box::new(VanillaStack::new(
                kind,
                self.emb_dim,
                self.hidden,
                self.layers,
                self.inter_dropout,
                prefix,
            )),
            Variant::FgpRnn | Variant::FgpLstm => Box::new(FgpStack::new(
                kind,
                self.emb_dim,
                self.hidden,
                self.components,
                self.layers,
                self.proj_dim.unwrap_or(self.emb_dim),
                self.steepness,
                self.inter_dropout,
                prefix,
            )),
            Variant::FglRnn | Variant::FglLstm => Box::new(FglStack::new(
                kind,
                self.emb_dim,
                self.hidden,
                self.layers,
                self.steepness,
                self.inter_dropout,
                prefix,
            )),
        }
    }
}

/// Runs a model over a full sequence in one evaluation graph and returns
/// the per-step output values. Convenience for tests and equivalence
/// oracles; training drives `begin`/`step`/`finish` itself.
pub fn run_sequence<T: Real>(
    model: &mut dyn SeqModel<T>,
    store: &ParamStore<T>,
    inputs: &[Tensor<T>],
    schedule: Option<&crate::schedule::GateSchedule>,
) -> Result<Vec<Tensor<T>>> {
    use crate::schedule::GateSchedule;
    if inputs.is_empty() {
        return Err(Error::invalid("run_sequence", "empty input sequence"));
    }
    if let Some(s) = schedule {
        if s.len() != inputs.len() {
            return Err(Error::invalid(
                "run_sequence",
                format!("schedule length {} vs {} inputs", s.len(), inputs.len()),
            ));
        }
        s.validate()?;
    }
    let batch = inputs[0].rows();
    let mut g = Graph::eval();
    let mut rng = crate::rng::RngPool::new(0).stream("unused");
    model.begin(&mut g, store, batch)?;
    let mut outputs = Vec::with_capacity(inputs.len());
    for (t, x_t) in inputs.iter().enumerate() {
        let x = g.leaf(x_t.clone());
        let out = match schedule {
            None => model.step(&mut g, &mut rng, x, StepGate::Full)?,
            Some(GateSchedule::Hard { values, .. }) => {
                let d = vec![values[t]; batch];
                model.step(&mut g, &mut rng, x, StepGate::Hard(&d))?
            }
            Some(GateSchedule::Soft { values, .. }) => {
                let dbar = g.leaf_vec(vec![T::of(values[t]); batch]);
                model.step(&mut g, &mut rng, x, StepGate::Soft(dbar))?
            }
        };
        outputs.push(g.detach(out));
    }
    model.finish(&g);
    Ok(outputs)
}
