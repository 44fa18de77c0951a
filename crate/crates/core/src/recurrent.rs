//! Recurrent cells, the two-layer peephole LSTM classifier, and exact
//! backpropagation through time.
//!
//! Gate order everywhere is input, forget, candidate, output. Peepholes are
//! diagonal: one weight per hidden unit for the input, forget and output
//! gates. The output gate looks at the freshly updated cell state, the other
//! two at the previous one.

use crate::error::{HarError, Result};
use crate::numerics::{init_matrix, log_sum_exp, sigmoid, softmax, Activation, InitScheme, Matrix, SeededRng, Vector};

pub const INPUT_CHANNELS: usize = 3;
pub const NUM_CLASSES: usize = 6;
pub const DEFAULT_HIDDEN: usize = 30;
/// Value every bias starts at.
pub const BIAS_INIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Candidate = 2,
    Output = 3,
}

pub const GATES: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Candidate, Gate::Output];

impl Gate {
    pub fn name(self) -> &'static str {
        match self {
            Gate::Input => "i",
            Gate::Forget => "f",
            Gate::Candidate => "c",
            Gate::Output => "o",
        }
    }
}

/// How layer-2 hidden outputs are pooled over time before the dense head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Sum of the hidden vectors over every time step.
    #[default]
    Sum,
    /// Hidden vector at the final time step only.
    Last,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Sum => "sum",
            Aggregation::Last => "last",
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = HarError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(Aggregation::Sum),
            "last" => Ok(Aggregation::Last),
            other => Err(HarError::InvalidHyperparameter(format!(
                "unknown aggregation `{other}`"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// Plain RNN cell

/// Single-layer Elman cell; kept as a baseline next to the LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnCellParams {
    pub w_ih: Matrix,
    pub w_hh: Matrix,
    pub w_ho: Matrix,
    pub b_h: Vector,
    pub b_o: Vector,
    pub act: Activation,
}

impl RnnCellParams {
    pub fn zeros(input: usize, hidden: usize, output: usize, act: Activation) -> Self {
        Self {
            w_ih: Matrix::zeros(hidden, input),
            w_hh: Matrix::zeros(hidden, hidden),
            w_ho: Matrix::zeros(output, hidden),
            b_h: Vector::zeros(hidden),
            b_o: Vector::zeros(output),
            act,
        }
    }

    fn check(&self, h_prev: &Vector, x: &Vector) -> Result<()> {
        let hidden = self.w_hh.rows();
        let checks = [
            ("rnn w_ih", self.w_ih.shape(), (hidden, x.len())),
            ("rnn w_hh", self.w_hh.shape(), (hidden, h_prev.len())),
            ("rnn w_ho", (self.w_ho.cols(), 1), (hidden, 1)),
            ("rnn b_h", (self.b_h.len(), 1), (hidden, 1)),
            ("rnn b_o", (self.b_o.len(), 1), (self.w_ho.rows(), 1)),
        ];
        for (op, left, right) in checks {
            if left != right {
                return Err(HarError::ShapeMismatch { op, left, right });
            }
        }
        Ok(())
    }
}

/// Returns the new hidden state and the cell output.
pub fn rnn_cell_forward(p: &RnnCellParams, h_prev: &Vector, x: &Vector) -> Result<(Vector, Vector)> {
    p.check(h_prev, x)?;
    let mut pre = p.b_h.data.clone();
    p.w_hh.add_matvec(&h_prev.data, &mut pre);
    p.w_ih.add_matvec(&x.data, &mut pre);
    let h = Vector::from_vec(pre.into_iter().map(|v| p.act.apply_scalar(v)).collect());
    let mut out = p.b_o.data.clone();
    p.w_ho.add_matvec(&h.data, &mut out);
    let y = Vector::from_vec(out.into_iter().map(|v| p.act.apply_scalar(v)).collect());
    Ok((h, y))
}

// ---------------------------------------------------------------------------
// Peephole LSTM layer

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    /// Input weights per gate, `hidden × input`.
    pub w_x: [Matrix; 4],
    /// Recurrent weights per gate, `hidden × hidden`.
    pub w_h: [Matrix; 4],
    pub b: [Vector; 4],
    pub peep_i: Vector,
    pub peep_f: Vector,
    pub peep_o: Vector,
}

impl LstmLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: std::array::from_fn(|_| Matrix::zeros(hidden, input)),
            w_h: std::array::from_fn(|_| Matrix::zeros(hidden, hidden)),
            b: std::array::from_fn(|_| Vector::zeros(hidden)),
            peep_i: Vector::zeros(hidden),
            peep_f: Vector::zeros(hidden),
            peep_o: Vector::zeros(hidden),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_x[0].cols()
    }

    pub fn hidden(&self) -> usize {
        self.w_x[0].rows()
    }

    /// Peephole vector for a gate; the candidate has none.
    pub fn peephole(&self, gate: Gate) -> Option<&Vector> {
        match gate {
            Gate::Input => Some(&self.peep_i),
            Gate::Forget => Some(&self.peep_f),
            Gate::Candidate => None,
            Gate::Output => Some(&self.peep_o),
        }
    }

    fn validate(&self, what: &'static str) -> Result<()> {
        let (hidden, input) = (self.hidden(), self.input_size());
        for g in 0..4 {
            if self.w_x[g].shape() != (hidden, input) {
                return Err(HarError::ShapeMismatch {
                    op: what,
                    left: self.w_x[g].shape(),
                    right: (hidden, input),
                });
            }
            if self.w_h[g].shape() != (hidden, hidden) {
                return Err(HarError::ShapeMismatch {
                    op: what,
                    left: self.w_h[g].shape(),
                    right: (hidden, hidden),
                });
            }
            if self.b[g].len() != hidden {
                return Err(HarError::ShapeMismatch {
                    op: what,
                    left: (self.b[g].len(), 1),
                    right: (hidden, 1),
                });
            }
        }
        for p in [&self.peep_i, &self.peep_f, &self.peep_o] {
            if p.len() != hidden {
                return Err(HarError::ShapeMismatch {
                    op: what,
                    left: (p.len(), 1),
                    right: (hidden, 1),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vector,
    pub c: Vector,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: Vector::zeros(hidden),
            c: Vector::zeros(hidden),
        }
    }
}

/// Gate pre-activations and activations for one step, indexed by [`Gate`].
#[derive(Debug, Clone, PartialEq)]
pub struct GateRecord {
    pub pre: [Vec<f64>; 4],
    pub act: [Vec<f64>; 4],
}

impl GateRecord {
    pub fn get(&self, gate: Gate) -> &[f64] {
        &self.act[gate as usize]
    }
}

/// Everything one layer produced at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub gates: GateRecord,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

fn cell_step(p: &LstmLayerParams, h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> StepRecord {
    let hidden = p.hidden();
    let mut pre: [Vec<f64>; 4] = std::array::from_fn(|g| p.b[g].data.clone());
    for (g, z) in pre.iter_mut().enumerate() {
        p.w_x[g].add_matvec(x, z);
        p.w_h[g].add_matvec(h_prev, z);
    }
    let mut act: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hidden]);
    let mut c = vec![0.0; hidden];
    let mut h = vec![0.0; hidden];
    for k in 0..hidden {
        pre[0][k] += p.peep_i.data[k] * c_prev[k];
        pre[1][k] += p.peep_f.data[k] * c_prev[k];
        let i = sigmoid(pre[0][k]);
        let f = sigmoid(pre[1][k]);
        let g = pre[2][k].tanh();
        c[k] = f * c_prev[k] + i * g;
        pre[3][k] += p.peep_o.data[k] * c[k];
        let o = sigmoid(pre[3][k]);
        h[k] = o * c[k].tanh();
        act[0][k] = i;
        act[1][k] = f;
        act[2][k] = g;
        act[3][k] = o;
    }
    StepRecord {
        gates: GateRecord { pre, act },
        c,
        h,
    }
}

pub fn lstm_cell_forward(p: &LstmLayerParams, s_prev: &LstmState, x: &Vector) -> Result<(LstmState, GateRecord)> {
    p.validate("lstm params")?;
    if x.len() != p.input_size() {
        return Err(HarError::ShapeMismatch {
            op: "lstm input",
            left: (p.hidden(), p.input_size()),
            right: (x.len(), 1),
        });
    }
    for v in [&s_prev.h, &s_prev.c] {
        if v.len() != p.hidden() {
            return Err(HarError::ShapeMismatch {
                op: "lstm state",
                left: (p.hidden(), 1),
                right: (v.len(), 1),
            });
        }
    }
    let step = cell_step(p, &s_prev.h.data, &s_prev.c.data, &x.data);
    Ok((
        LstmState {
            h: Vector::from_vec(step.h),
            c: Vector::from_vec(step.c),
        },
        step.gates,
    ))
}

fn layer_forward<R: AsRef<[f64]>>(p: &LstmLayerParams, inputs: &[R]) -> Vec<StepRecord> {
    let hidden = p.hidden();
    let zeros = vec![0.0; hidden];
    let mut steps: Vec<StepRecord> = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (h_prev, c_prev) = match steps.last() {
            Some(s) => (&s.h[..], &s.c[..]),
            None => (&zeros[..], &zeros[..]),
        };
        let rec = cell_step(p, h_prev, c_prev, x.as_ref());
        steps.push(rec);
    }
    steps
}

/// Reverse pass through one layer. `dh_ext[t]` is the loss gradient reaching
/// `h_t` from outside the recurrence. Gradients are accumulated into `grad`.
/// Returns the gradient with respect to each input vector when `want_dx`.
fn layer_backward<R: AsRef<[f64]>>(
    p: &LstmLayerParams,
    inputs: &[R],
    steps: &[StepRecord],
    dh_ext: &[Vec<f64>],
    grad: &mut LstmLayerParams,
    want_dx: bool,
) -> Vec<Vec<f64>> {
    let hidden = p.hidden();
    let input = p.input_size();
    let zeros = vec![0.0; hidden];
    let mut dx_all = if want_dx {
        vec![vec![0.0; input]; steps.len()]
    } else {
        Vec::new()
    };
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hidden]);

    for t in (0..steps.len()).rev() {
        let s = &steps[t];
        let (h_prev, c_prev) = if t == 0 {
            (&zeros[..], &zeros[..])
        } else {
            (&steps[t - 1].h[..], &steps[t - 1].c[..])
        };
        let [i, f, g, o] = &s.gates.act;
        let mut dc_prev = vec![0.0; hidden];
        for k in 0..hidden {
            let dh = dh_ext[t][k] + dh_next[k];
            let tc = s.c[k].tanh();
            let da_o = dh * tc * o[k] * (1.0 - o[k]);
            let dc = dc_next[k] + dh * o[k] * (1.0 - tc * tc) + da_o * p.peep_o.data[k];
            let da_f = dc * c_prev[k] * f[k] * (1.0 - f[k]);
            let da_i = dc * g[k] * i[k] * (1.0 - i[k]);
            let da_g = dc * i[k] * (1.0 - g[k] * g[k]);

            grad.peep_o.data[k] += da_o * s.c[k];
            grad.peep_i.data[k] += da_i * c_prev[k];
            grad.peep_f.data[k] += da_f * c_prev[k];
            dc_prev[k] = dc * f[k] + da_i * p.peep_i.data[k] + da_f * p.peep_f.data[k];

            da[0][k] = da_i;
            da[1][k] = da_f;
            da[2][k] = da_g;
            da[3][k] = da_o;
        }
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        let x = inputs[t].as_ref();
        for (gi, da_g) in da.iter().enumerate() {
            grad.w_x[gi].add_outer(da_g, x);
            grad.w_h[gi].add_outer(da_g, h_prev);
            for (b, d) in grad.b[gi].data.iter_mut().zip(da_g) {
                *b += d;
            }
            p.w_h[gi].add_transpose_matvec(da_g, &mut dh_next);
            if want_dx {
                p.w_x[gi].add_transpose_matvec(da_g, &mut dx_all[t]);
            }
        }
        dc_next = dc_prev;
    }
    dx_all
}

// ---------------------------------------------------------------------------
// Network

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Peephole,
    Bias,
}

/// Read-only view of one parameter tensor.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub kind: TensorKind,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct TensorMut<'a> {
    pub name: String,
    pub kind: TensorKind,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a mut [f64],
}

/// Both LSTM layers plus the dense softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layer1: LstmLayerParams,
    pub layer2: LstmLayerParams,
    pub head_w: Matrix,
    pub head_b: Vector,
}

/// Gradients mirror the parameter layout exactly.
pub type Gradients = NetworkParams;

impl NetworkParams {
    pub fn zeros(input: usize, hidden: usize, classes: usize) -> Self {
        Self {
            layer1: LstmLayerParams::zeros(input, hidden),
            layer2: LstmLayerParams::zeros(hidden, hidden),
            head_w: Matrix::zeros(classes, hidden),
            head_b: Vector::zeros(classes),
        }
    }

    /// Weights and peepholes uniform on `±sqrt(6 / (rows + cols))`, biases at
    /// [`BIAS_INIT`].
    pub fn init(input: usize, hidden: usize, classes: usize, rng: &mut SeededRng) -> Result<Self> {
        if input == 0 || hidden == 0 || classes == 0 {
            return Err(HarError::ZeroDimension {
                rows: hidden,
                cols: input.min(classes),
            });
        }
        let mut np = Self::zeros(input, hidden, classes);
        for t in np.tensors_mut() {
            let scheme = match t.kind {
                TensorKind::Bias => InitScheme::Constant(BIAS_INIT),
                TensorKind::Weight | TensorKind::Peephole => InitScheme::UniformScaled,
            };
            let m = init_matrix(t.rows, t.cols, scheme, rng)?;
            t.data.copy_from_slice(m.as_slice());
        }
        Ok(np)
    }

    /// Network at the default width: 3 channels in, 30 units per layer, 6 classes out.
    pub fn init_default(rng: &mut SeededRng) -> Result<Self> {
        Self::init(INPUT_CHANNELS, DEFAULT_HIDDEN, NUM_CLASSES, rng)
    }

    pub fn input_size(&self) -> usize {
        self.layer1.input_size()
    }

    pub fn hidden(&self) -> usize {
        self.layer1.hidden()
    }

    pub fn classes(&self) -> usize {
        self.head_w.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_size(), self.hidden(), self.classes())
    }

    pub fn validate(&self) -> Result<()> {
        self.layer1.validate("layer1 params")?;
        self.layer2.validate("layer2 params")?;
        if self.layer2.input_size() != self.layer1.hidden() {
            return Err(HarError::ShapeMismatch {
                op: "layer2 input",
                left: (self.layer2.hidden(), self.layer2.input_size()),
                right: (self.layer1.hidden(), 1),
            });
        }
        if self.head_w.cols() != self.layer2.hidden() || self.head_b.len() != self.head_w.rows() {
            return Err(HarError::ShapeMismatch {
                op: "head",
                left: self.head_w.shape(),
                right: (self.head_b.len(), self.layer2.hidden()),
            });
        }
        Ok(())
    }

    /// Every tensor in storage order: for each layer and each gate
    /// (i, f, c, o) the input weights, recurrent weights, bias and peephole
    /// (none for c); then the head weights and head bias.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::with_capacity(30);
        for (lname, layer) in [("layer1", &self.layer1), ("layer2", &self.layer2)] {
            for gate in GATES {
                let g = gate as usize;
                let gn = gate.name();
                let m = &layer.w_x[g];
                out.push(TensorRef {
                    name: format!("{lname}.w_x.{gn}"),
                    kind: TensorKind::Weight,
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.as_slice(),
                });
                let m = &layer.w_h[g];
                out.push(TensorRef {
                    name: format!("{lname}.w_h.{gn}"),
                    kind: TensorKind::Weight,
                    rows: m.rows(),
                    cols: m.cols(),
                    data: m.as_slice(),
                });
                out.push(TensorRef {
                    name: format!("{lname}.b.{gn}"),
                    kind: TensorKind::Bias,
                    rows: layer.b[g].len(),
                    cols: 1,
                    data: layer.b[g].as_slice(),
                });
                if let Some(p) = layer.peephole(gate) {
                    out.push(TensorRef {
                        name: format!("{lname}.peep.{gn}"),
                        kind: TensorKind::Peephole,
                        rows: p.len(),
                        cols: 1,
                        data: p.as_slice(),
                    });
                }
            }
        }
        out.push(TensorRef {
            name: "head.w".into(),
            kind: TensorKind::Weight,
            rows: self.head_w.rows(),
            cols: self.head_w.cols(),
            data: self.head_w.as_slice(),
        });
        out.push(TensorRef {
            name: "head.b".into(),
            kind: TensorKind::Bias,
            rows: self.head_b.len(),
            cols: 1,
            data: self.head_b.as_slice(),
        });
        out
    }

    /// Mutable counterpart of [`NetworkParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::with_capacity(30);
        for (lname, layer) in [("layer1", &mut self.layer1), ("layer2", &mut self.layer2)] {
            let LstmLayerParams {
                w_x,
                w_h,
                b,
                peep_i,
                peep_f,
                peep_o,
            } = layer;
            let mut peeps = [Some(peep_i), Some(peep_f), None, Some(peep_o)];
            for ((gate, (wx, wh)), (bias, peep)) in GATES
                .iter()
                .zip(w_x.iter_mut().zip(w_h.iter_mut()))
                .zip(b.iter_mut().zip(peeps.iter_mut()))
            {
                let gn = gate.name();
                let (rows, cols) = wx.shape();
                out.push(TensorMut {
                    name: format!("{lname}.w_x.{gn}"),
                    kind: TensorKind::Weight,
                    rows,
                    cols,
                    data: wx.as_mut_slice(),
                });
                let (rows, cols) = wh.shape();
                out.push(TensorMut {
                    name: format!("{lname}.w_h.{gn}"),
                    kind: TensorKind::Weight,
                    rows,
                    cols,
                    data: wh.as_mut_slice(),
                });
                out.push(TensorMut {
                    name: format!("{lname}.b.{gn}"),
                    kind: TensorKind::Bias,
                    rows: bias.len(),
                    cols: 1,
                    data: bias.as_mut_slice(),
                });
                if let Some(p) = peep.take() {
                    out.push(TensorMut {
                        name: format!("{lname}.peep.{gn}"),
                        kind: TensorKind::Peephole,
                        rows: p.len(),
                        cols: 1,
                        data: p.as_mut_slice(),
                    });
                }
            }
        }
        let (rows, cols) = self.head_w.shape();
        out.push(TensorMut {
            name: "head.w".into(),
            kind: TensorKind::Weight,
            rows,
            cols,
            data: self.head_w.as_mut_slice(),
        });
        out.push(TensorMut {
            name: "head.b".into(),
            kind: TensorKind::Bias,
            rows: self.head_b.len(),
            cols: 1,
            data: self.head_b.as_mut_slice(),
        });
        out
    }

    /// Adds `other * scale` into `self`. Shapes must already agree.
    pub fn axpy(&mut self, scale: f64, other: &NetworkParams) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Number of scalar parameters.
pub fn parameter_count(np: &NetworkParams) -> usize {
    np.tensors().iter().map(|t| t.data.len()).sum()
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub inputs: Vec<Vec<f64>>,
    pub layer1: Vec<StepRecord>,
    pub layer2: Vec<StepRecord>,
    pub aggregation: Aggregation,
    /// Pooled layer-2 hidden vector fed to the head.
    pub pooled: Vec<f64>,
    pub logits: Vector,
    pub probs: Vector,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Cross-entropy of the true label, as `logsumexp(z) - z_label`.
    pub fn loss(&self, label: usize) -> f64 {
        log_sum_exp(&self.logits) - self.logits.data[label]
    }
}

/// Pools a sequence of hidden vectors.
pub fn aggregate(hidden: &[Vec<f64>], mode: Aggregation) -> Vec<f64> {
    let width = hidden.first().map_or(0, Vec::len);
    match mode {
        Aggregation::Sum => {
            let mut acc = vec![0.0; width];
            for h in hidden {
                for (a, v) in acc.iter_mut().zip(h) {
                    *a += v;
                }
            }
            acc
        }
        Aggregation::Last => hidden.last().cloned().unwrap_or_default(),
    }
}

fn check_window<R: AsRef<[f64]>>(np: &NetworkParams, window: &[R]) -> Result<()> {
    if window.is_empty() {
        return Err(HarError::EmptyWindow);
    }
    let expected = np.input_size();
    for (step, row) in window.iter().enumerate() {
        let got = row.as_ref().len();
        if got != expected {
            return Err(HarError::ChannelCount { step, got, expected });
        }
    }
    Ok(())
}

/// Runs both layers from zero state, pools layer-2 outputs, applies the head
/// and softmax.
pub fn network_forward<R: AsRef<[f64]>>(
    np: &NetworkParams,
    window: &[R],
    aggregation: Aggregation,
) -> Result<(Vector, ForwardTrace)> {
    np.validate()?;
    check_window(np, window)?;
    let inputs: Vec<Vec<f64>> = window.iter().map(|r| r.as_ref().to_vec()).collect();
    let layer1 = layer_forward(&np.layer1, &inputs);
    let h1: Vec<&[f64]> = layer1.iter().map(|s| &s.h[..]).collect();
    let layer2 = layer_forward(&np.layer2, &h1);
    let h2: Vec<Vec<f64>> = layer2.iter().map(|s| s.h.clone()).collect();
    let pooled = aggregate(&h2, aggregation);
    let mut logits = np.head_b.data.clone();
    np.head_w.add_matvec(&pooled, &mut logits);
    let logits = Vector::from_vec(logits);
    let probs = softmax(&logits);
    Ok((
        probs.clone(),
        ForwardTrace {
            inputs,
            layer1,
            layer2,
            aggregation,
            pooled,
            logits,
            probs,
        },
    ))
}

/// Forward pass without keeping the trace. Returns class probabilities.
pub fn predict<R: AsRef<[f64]>>(np: &NetworkParams, window: &[R], aggregation: Aggregation) -> Result<Vector> {
    np.validate()?;
    check_window(np, window)?;
    let zeros = vec![0.0; np.hidden()];
    let (mut h1, mut c1) = (zeros.clone(), zeros.clone());
    let (mut h2, mut c2) = (zeros.clone(), zeros);
    let mut pooled = vec![0.0; np.hidden()];
    for x in window {
        let s1 = cell_step(&np.layer1, &h1, &c1, x.as_ref());
        let s2 = cell_step(&np.layer2, &h2, &c2, &s1.h);
        match aggregation {
            Aggregation::Sum => pooled.iter_mut().zip(&s2.h).for_each(|(a, v)| *a += v),
            Aggregation::Last => pooled.copy_from_slice(&s2.h),
        }
        (h1, c1) = (s1.h, s1.c);
        (h2, c2) = (s2.h, s2.c);
    }
    let mut logits = np.head_b.data.clone();
    np.head_w.add_matvec(&pooled, &mut logits);
    Ok(softmax(&Vector::from_vec(logits)))
}

/// Gradient of the cross-entropy of `true_label` with respect to every parameter.
pub fn network_backward(np: &NetworkParams, trace: &ForwardTrace, true_label: usize) -> Result<Gradients> {
    np.validate()?;
    let t_len = trace.len();
    if t_len == 0 || trace.layer1.len() != t_len || trace.layer2.len() != t_len {
        return Err(HarError::TraceMismatch(format!(
            "trace lengths {}/{}/{}",
            t_len,
            trace.layer1.len(),
            trace.layer2.len()
        )));
    }
    let hidden = np.hidden();
    if trace.layer1[0].h.len() != hidden
        || trace.layer2[0].h.len() != np.layer2.hidden()
        || trace.inputs[0].len() != np.input_size()
        || trace.probs.len() != np.classes()
    {
        return Err(HarError::TraceMismatch(
            "trace widths differ from parameter shapes".into(),
        ));
    }
    if true_label >= np.classes() {
        return Err(HarError::LabelOutOfRange(true_label));
    }

    let mut grad = np.zeros_like();

    // softmax + cross-entropy
    let mut dlogits = trace.probs.data.clone();
    dlogits[true_label] -= 1.0;
    grad.head_w.add_outer(&dlogits, &trace.pooled);
    grad.head_b.data.copy_from_slice(&dlogits);
    let mut dpooled = vec![0.0; np.layer2.hidden()];
    np.head_w.add_transpose_matvec(&dlogits, &mut dpooled);

    let mut dh2 = vec![vec![0.0; np.layer2.hidden()]; t_len];
    match trace.aggregation {
        Aggregation::Sum => dh2.iter_mut().for_each(|d| d.copy_from_slice(&dpooled)),
        Aggregation::Last => dh2[t_len - 1].copy_from_slice(&dpooled),
    }

    let h1: Vec<&[f64]> = trace.layer1.iter().map(|s| &s.h[..]).collect();
    let dh1 = layer_backward(&np.layer2, &h1, &trace.layer2, &dh2, &mut grad.layer2, true);
    layer_backward(&np.layer1, &trace.inputs, &trace.layer1, &dh1, &mut grad.layer1, false);
    Ok(grad)
}

/// Cross-entropy of one window, recomputed from scratch.
pub fn window_loss<R: AsRef<[f64]>>(
    np: &NetworkParams,
    window: &[R],
    label: usize,
    aggregation: Aggregation,
) -> Result<f64> {
    let (_, trace) = network_forward(np, window, aggregation)?;
    Ok(trace.loss(label))
}
