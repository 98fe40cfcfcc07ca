//! Small layers built on the graph: dense, MLP, stacked LSTM, conv stack.
//!
//! Each layer has two forward paths: `bind` + bound `forward` records onto
//! a [`Graph`] for training, and a plain `forward` that evaluates the same
//! arithmetic without a tape for acting.

use rand::Rng;

use super::graph::{sigmoid, Graph, Var};
use super::params::Parameterized;
use super::tensor::{self, Tensor};
use crate::error::{shape_err, Result};

fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    fn record(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }
}

/// `y = x · W + b` with `W [in × out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// Fan-in scaled uniform initialization, `U(−1/√in, 1/√in)`.
    pub fn new(name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            name: name.to_string(),
            weight: uniform(&[input, output], bound, rng),
            bias: uniform(&[output], bound, rng),
        }
    }

    pub fn input(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn zero(&mut self) {
        self.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        self.bias.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundLinear> {
        Ok(BoundLinear {
            weight: g.param(&format!("{}.w", self.name), &self.weight)?,
            bias: g.param(&format!("{}.b", self.name), &self.bias)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        tensor::add_bias(&tensor::matmul(x, &self.weight)?, &self.bias)
    }
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.matmul(x, self.weight)?;
        g.add_bias(y, self.bias)
    }
}

impl Parameterized for Linear {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&format!("{}.w", self.name), &self.weight);
        f(&format!("{}.b", self.name), &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&format!("{}.w", self.name), &mut self.weight);
        f(&format!("{}.b", self.name), &mut self.bias);
    }
}

/// Dense layers with a hidden activation; the last layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<BoundLinear>,
    activation: Activation,
}

impl Mlp {
    /// `sizes` lists every width from input to output.
    pub fn new(name: &str, sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn input(&self) -> usize {
        self.layers[0].input()
    }

    pub fn output(&self) -> usize {
        self.layers.last().expect("non-empty").output()
    }

    pub fn last_mut(&mut self) -> &mut Linear {
        self.layers.last_mut().expect("non-empty")
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundMlp> {
        Ok(BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(g)).collect::<Result<_>>()?,
            activation: self.activation,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = h.map(|v| self.activation.apply(v));
            }
        }
        Ok(h)
    }
}

impl BoundMlp {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h)?;
            if i < last {
                h = self.activation.record(g, h)?;
            }
        }
        Ok(h)
    }
}

impl Parameterized for Mlp {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }
}

/// Stacked LSTM followed by a linear projection of the top hidden state.
/// Gate layout along the fused weight's columns is `[input, forget, cell, output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub hidden: usize,
    /// One fused `[in + hidden, 4·hidden]` layer per stacked cell.
    pub cells: Vec<Linear>,
    pub head: Linear,
}

/// Per-layer `(h, c)`, each `[1 × hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<Tensor>,
    pub c: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct BoundLstm {
    hidden: usize,
    cells: Vec<BoundLinear>,
    head: BoundLinear,
}

#[derive(Clone, Debug)]
pub struct BoundLstmState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

impl Lstm {
    pub fn new(
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let cells = (0..layers)
            .map(|l| {
                let fan = if l == 0 { input } else { hidden };
                Linear {
                    name: format!("{name}.cell{l}"),
                    weight: uniform(&[fan + hidden, 4 * hidden], bound, rng),
                    bias: uniform(&[4 * hidden], bound, rng),
                }
            })
            .collect();
        let head = Linear::new(&format!("{name}.head"), hidden, output, rng);
        Self { hidden, cells, head }
    }

    pub fn input(&self) -> usize {
        self.cells[0].input() - self.hidden
    }

    pub fn output(&self) -> usize {
        self.head.output()
    }

    pub fn zero_state(&self) -> LstmState {
        let z = Tensor::zeros(&[1, self.hidden]);
        LstmState {
            h: vec![z.clone(); self.cells.len()],
            c: vec![z; self.cells.len()],
        }
    }

    /// Consumes one `[1 × in]` input, updates `state`, returns `[1 × out]`.
    pub fn step(&self, x: &Tensor, state: &mut LstmState) -> Result<Tensor> {
        if x.shape() != [1, self.input()] {
            return shape_err("lstm step", format!("input {:?}", x.shape()));
        }
        let hsz = self.hidden;
        let mut input = x.data().to_vec();
        for (l, cell) in self.cells.iter().enumerate() {
            input.extend_from_slice(state.h[l].data());
            let joined = Tensor::new(vec![1, input.len()], std::mem::take(&mut input))?;
            let gates = cell.forward(&joined)?;
            let gd = gates.data();
            let c_prev = state.c[l].data();
            let mut c = vec![0.0; hsz];
            let mut h = vec![0.0; hsz];
            for k in 0..hsz {
                let i = sigmoid(gd[k]);
                let f = sigmoid(gd[hsz + k]);
                let gg = gd[2 * hsz + k].tanh();
                let o = sigmoid(gd[3 * hsz + k]);
                c[k] = f * c_prev[k] + i * gg;
                h[k] = o * c[k].tanh();
            }
            input = h.clone();
            state.c[l] = Tensor::new(vec![1, hsz], c)?;
            state.h[l] = Tensor::new(vec![1, hsz], h)?;
        }
        self.head.forward(&Tensor::new(vec![1, hsz], input)?)
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundLstm> {
        Ok(BoundLstm {
            hidden: self.hidden,
            cells: self.cells.iter().map(|c| c.bind(g)).collect::<Result<_>>()?,
            head: self.head.bind(g)?,
        })
    }
}

impl BoundLstm {
    pub fn zero_state(&self, g: &mut Graph) -> Result<BoundLstmState> {
        let mut h = Vec::new();
        let mut c = Vec::new();
        for _ in &self.cells {
            h.push(g.constant(Tensor::zeros(&[1, self.hidden]))?);
            c.push(g.constant(Tensor::zeros(&[1, self.hidden]))?);
        }
        Ok(BoundLstmState { h, c })
    }

    pub fn step(&self, g: &mut Graph, x: Var, state: &mut BoundLstmState) -> Result<Var> {
        let hsz = self.hidden;
        let mut input = x;
        for (l, cell) in self.cells.iter().enumerate() {
            let joined = g.concat_cols(&[input, state.h[l]])?;
            let gates = cell.forward(g, joined)?;
            let i_pre = g.slice_cols(gates, 0, hsz)?;
            let f_pre = g.slice_cols(gates, hsz, hsz)?;
            let g_pre = g.slice_cols(gates, 2 * hsz, hsz)?;
            let o_pre = g.slice_cols(gates, 3 * hsz, hsz)?;
            let i = g.sigmoid(i_pre)?;
            let f = g.sigmoid(f_pre)?;
            let gg = g.tanh(g_pre)?;
            let o = g.sigmoid(o_pre)?;
            let keep = g.mul(f, state.c[l])?;
            let write = g.mul(i, gg)?;
            let c = g.add(keep, write)?;
            let ct = g.tanh(c)?;
            let h = g.mul(o, ct)?;
            state.c[l] = c;
            state.h[l] = h;
            input = h;
        }
        self.head.forward(g, input)
    }
}

impl Parameterized for Lstm {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.cells.iter().for_each(|c| c.visit_params(f));
        self.head.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.cells.iter_mut().for_each(|c| c.visit_params_mut(f));
        self.head.visit_params_mut(f);
    }
}

/// Two valid 3×3 stride-2 convolutions (8 then 16 channels) with relu,
/// flattened. Input is NHWC.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack {
    pub name: String,
    pub side: usize,
    pub channels: usize,
    pub kernels: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct BoundConvStack {
    side: usize,
    channels: usize,
    kernels: Vec<Var>,
    biases: Vec<Var>,
}

const CONV_CHANNELS: [usize; 2] = [8, 16];
const CONV_KERNEL: usize = 3;
const CONV_STRIDE: usize = 2;

impl ConvStack {
    pub fn new(name: &str, side: usize, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut s = side;
        for _ in CONV_CHANNELS {
            if s < CONV_KERNEL {
                return shape_err("ConvStack::new", format!("image side {side} too small"));
            }
            s = (s - CONV_KERNEL) / CONV_STRIDE + 1;
        }
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        let mut cin = channels;
        for cout in CONV_CHANNELS {
            let bound = 1.0 / ((CONV_KERNEL * CONV_KERNEL * cin) as f64).sqrt();
            kernels.push(uniform(&[cout, CONV_KERNEL, CONV_KERNEL, cin], bound, rng));
            biases.push(uniform(&[cout], bound, rng));
            cin = cout;
        }
        Ok(Self {
            name: name.to_string(),
            side,
            channels,
            kernels,
            biases,
        })
    }

    pub fn out_features(&self) -> usize {
        let mut s = self.side;
        for _ in CONV_CHANNELS {
            s = (s - CONV_KERNEL) / CONV_STRIDE + 1;
        }
        s * s * CONV_CHANNELS[CONV_CHANNELS.len() - 1]
    }

    fn check_input(&self, shape: &[usize]) -> Result<usize> {
        match shape {
            [n, h, w, c] if *h == self.side && *w == self.side && *c == self.channels => Ok(*n),
            s => shape_err(
                "conv stack",
                format!("input {s:?}, expected [N, {0}, {0}, {1}]", self.side, self.channels),
            ),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.check_input(x.shape())?;
        let mut h = x.clone();
        for (k, b) in self.kernels.iter().zip(&self.biases) {
            h = tensor::conv2d(&h, k, b, CONV_STRIDE)?.map(|v| v.max(0.0));
        }
        h.reshape(&[n, self.out_features()])
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundConvStack> {
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        for (i, (k, b)) in self.kernels.iter().zip(&self.biases).enumerate() {
            kernels.push(g.param(&format!("{}.conv{i}.w", self.name), k)?);
            biases.push(g.param(&format!("{}.conv{i}.b", self.name), b)?);
        }
        Ok(BoundConvStack {
            side: self.side,
            channels: self.channels,
            kernels,
            biases,
        })
    }
}

impl BoundConvStack {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = match g.value(x).shape() {
            [n, h, w, c] if *h == self.side && *w == self.side && *c == self.channels => *n,
            s => return shape_err("conv stack", format!("input {s:?}")),
        };
        let mut h = x;
        for (&k, &b) in self.kernels.iter().zip(&self.biases) {
            let y = g.conv2d(h, k, b, CONV_STRIDE)?;
            h = g.relu(y)?;
        }
        let feats = g.value(h).len() / n;
        g.reshape(h, &[n, feats])
    }
}

impl Parameterized for ConvStack {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, (k, b)) in self.kernels.iter().zip(&self.biases).enumerate() {
            f(&format!("{}.conv{i}.w", self.name), k);
            f(&format!("{}.conv{i}.b", self.name), b);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, (k, b)) in self.kernels.iter_mut().zip(self.biases.iter_mut()).enumerate() {
            f(&format!("{}.conv{i}.w", self.name), k);
            f(&format!("{}.conv{i}.b", self.name), b);
        }
    }
}
