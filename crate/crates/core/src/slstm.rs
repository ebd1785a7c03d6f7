//! Spatial LSTM layers over a 2-D grid.
//!
//! Each cell (i, j) has two predecessors, the cell to its left and the cell
//! above, each with its own forget gate:
//!
//! ```text
//! (g, o, i, f_r, f_c) = (tanh, σ, σ, σ, σ)(A · [x_ij; h_{i,j-1}; h_{i-1,j}] + bias)
//! c_ij = g ⊙ i + c_{i,j-1} ⊙ f_c + c_{i-1,j} ⊙ f_r
//! h_ij = tanh(c_ij ⊙ o)
//! ```
//!
//! The extended variant also feeds `c_{i,j-1}` and `c_{i-1,j}` into the
//! affine map. States outside the grid are zero. Cells are visited in
//! raster order, so h_ij only sees inputs at cells that precede or equal
//! (i, j) in that order.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};
use crate::math::{axpy, dot, sigmoid};

/// Number of gate blocks, in the order (g, o, i, f_r, f_c).
const GATES: usize = 5;

/// A `height`×`width` grid of `channels`-long vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Grid {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        ensure!(
            data.len() == height * width * channels,
            "grid {height}x{width}x{channels} needs {} values, got {}",
            height * width * channels,
            data.len()
        );
        Ok(Grid {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> &[f64] {
        let k = (i * self.width + j) * self.channels;
        &self.data[k..k + self.channels]
    }

    #[inline]
    pub fn cell_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let k = (i * self.width + j) * self.channels;
        &mut self.data[k..k + self.channels]
    }
}

/// Parameters of one spatial LSTM layer. `weights` is a row-major
/// `(5·hidden_dim) × input_width()` matrix whose row blocks are the gates
/// (g, o, i, f_r, f_c).
#[derive(Debug, Clone, PartialEq)]
pub struct SlstmLayerParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub extended: bool,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SlstmLayerParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, extended: bool) -> Result<Self> {
        ensure!(input_dim >= 1 && hidden_dim >= 1, "SLSTM sizes must be positive");
        let cols = Self::width_for(input_dim, hidden_dim, extended);
        Ok(SlstmLayerParams {
            input_dim,
            hidden_dim,
            extended,
            weights: vec![0.0; GATES * hidden_dim * cols],
            bias: vec![0.0; GATES * hidden_dim],
        })
    }

    /// Weights drawn from N(0, 1/fan_in), zero biases.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, extended: bool, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(input_dim, hidden_dim, extended)?;
        let scale = 1.0 / (p.input_width() as f64).sqrt();
        for w in p.weights.iter_mut() {
            *w = scale * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(p)
    }

    fn width_for(input_dim: usize, hidden_dim: usize, extended: bool) -> usize {
        input_dim + if extended { 4 } else { 2 } * hidden_dim
    }

    /// Length of the affine map's input vector.
    pub fn input_width(&self) -> usize {
        Self::width_for(self.input_dim, self.hidden_dim, self.extended)
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden_dim, self.extended).unwrap()
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
    }

    pub fn read_flat<'a>(&mut self, flat: &'a [f64]) -> &'a [f64] {
        let (w, rest) = flat.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        let (b, rest) = rest.split_at(self.bias.len());
        self.bias.copy_from_slice(b);
        rest
    }

    pub fn add_scaled(&mut self, sign: f64, other: &SlstmLayerParams) {
        axpy(sign, &other.weights, &mut self.weights);
        axpy(sign, &other.bias, &mut self.bias);
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.input_dim >= 1 && self.hidden_dim >= 1, "SLSTM sizes must be positive");
        ensure!(
            self.weights.len() == GATES * self.hidden_dim * self.input_width() && self.bias.len() == GATES * self.hidden_dim,
            "SLSTM parameter arrays do not match input_dim={} hidden_dim={} extended={}",
            self.input_dim,
            self.hidden_dim,
            self.extended
        );
        ensure!(
            self.weights.iter().chain(&self.bias).all(|v| v.is_finite()),
            "SLSTM parameters must be finite"
        );
        Ok(())
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        let w = self.input_width();
        &self.weights[r * w..(r + 1) * w]
    }
}

/// Forward activations of one layer over one grid, kept for the backward
/// pass.
#[derive(Debug, Clone)]
pub struct GridState {
    pub inputs: Grid,
    pub h: Grid,
    pub c: Grid,
    /// Activated gates per cell, `5·hidden_dim` values each.
    gates: Grid,
    scratch: Vec<f64>,
}

impl GridState {
    /// Empty state for incremental, cell-by-cell evaluation.
    pub fn new(params: &SlstmLayerParams, height: usize, width: usize) -> Self {
        let hd = params.hidden_dim;
        GridState {
            inputs: Grid::zeros(height, width, params.input_dim),
            h: Grid::zeros(height, width, hd),
            c: Grid::zeros(height, width, hd),
            gates: Grid::zeros(height, width, GATES * hd),
            scratch: vec![0.0; params.input_width()],
        }
    }

    pub fn height(&self) -> usize {
        self.h.height
    }

    pub fn width(&self) -> usize {
        self.h.width
    }

    /// Concatenated affine-map input of cell (i, j).
    fn gather(&self, params: &SlstmLayerParams, i: usize, j: usize, out: &mut [f64]) {
        let (k, hd) = (params.input_dim, params.hidden_dim);
        out[..k].copy_from_slice(self.inputs.cell(i, j));
        let zero_fill = |dst: &mut [f64]| dst.iter_mut().for_each(|v| *v = 0.0);
        if j > 0 {
            out[k..k + hd].copy_from_slice(self.h.cell(i, j - 1));
        } else {
            zero_fill(&mut out[k..k + hd]);
        }
        if i > 0 {
            out[k + hd..k + 2 * hd].copy_from_slice(self.h.cell(i - 1, j));
        } else {
            zero_fill(&mut out[k + hd..k + 2 * hd]);
        }
        if params.extended {
            if j > 0 {
                out[k + 2 * hd..k + 3 * hd].copy_from_slice(self.c.cell(i, j - 1));
            } else {
                zero_fill(&mut out[k + 2 * hd..k + 3 * hd]);
            }
            if i > 0 {
                out[k + 3 * hd..k + 4 * hd].copy_from_slice(self.c.cell(i - 1, j));
            } else {
                zero_fill(&mut out[k + 3 * hd..k + 4 * hd]);
            }
        }
    }

    /// Evaluates cell (i, j). Its left and upper neighbors must already be
    /// evaluated. Returns the new hidden vector.
    pub fn step(&mut self, params: &SlstmLayerParams, i: usize, j: usize, input: &[f64]) -> &[f64] {
        debug_assert_eq!(input.len(), params.input_dim);
        let hd = params.hidden_dim;
        self.inputs.cell_mut(i, j).copy_from_slice(input);
        let mut v = std::mem::take(&mut self.scratch);
        self.gather(params, i, j, &mut v);
        {
            let gates = self.gates.cell_mut(i, j);
            for (r, z) in gates.iter_mut().enumerate() {
                let pre = params.bias[r] + dot(params.row(r), &v);
                *z = if r < hd { pre.tanh() } else { sigmoid(pre) };
            }
        }
        self.scratch = v;
        for u in 0..hd {
            let gates = self.gates.cell(i, j);
            let (g, o, ig, fr, fc) = (gates[u], gates[hd + u], gates[2 * hd + u], gates[3 * hd + u], gates[4 * hd + u]);
            let c_left = if j > 0 { self.c.cell(i, j - 1)[u] } else { 0.0 };
            let c_up = if i > 0 { self.c.cell(i - 1, j)[u] } else { 0.0 };
            let c = g * ig + c_left * fc + c_up * fr;
            self.c.cell_mut(i, j)[u] = c;
            self.h.cell_mut(i, j)[u] = (c * o).tanh();
        }
        self.h.cell(i, j)
    }
}

fn check_inputs(params: &SlstmLayerParams, inputs: &Grid) -> Result<()> {
    ensure!(
        inputs.channels == params.input_dim,
        "layer expects {}-dimensional inputs, grid has {} channels",
        params.input_dim,
        inputs.channels
    );
    ensure!(inputs.height > 0 && inputs.width > 0, "empty input grid");
    Ok(())
}

/// Runs one layer over a grid in raster order.
pub fn slstm_forward(params: &SlstmLayerParams, inputs: &Grid) -> Result<GridState> {
    check_inputs(params, inputs)?;
    let mut state = GridState::new(params, inputs.height, inputs.width);
    for i in 0..inputs.height {
        for j in 0..inputs.width {
            state.step(params, i, j, inputs.cell(i, j));
        }
    }
    Ok(state)
}

/// Reverse-mode gradients of a scalar loss given `dh = ∂loss/∂h` at every
/// cell. Returns gradients with respect to the inputs and the parameters.
pub fn slstm_backward(params: &SlstmLayerParams, state: &GridState, dh: &Grid) -> Result<(Grid, SlstmLayerParams)> {
    let (height, width, hd, k) = (state.height(), state.width(), params.hidden_dim, params.input_dim);
    ensure!(
        dh.height == height && dh.width == width && dh.channels == hd,
        "gradient grid {}x{}x{} does not match state {height}x{width}x{hd}",
        dh.height,
        dh.width,
        dh.channels
    );
    ensure!(
        state.inputs.channels == k && state.h.channels == hd,
        "state was not produced by a layer of this shape"
    );
    let mut grads = params.zeros_like();
    let mut dinputs = Grid::zeros(height, width, k);
    let mut dh_acc = dh.clone();
    let mut dc_acc = Grid::zeros(height, width, hd);
    let cols = params.input_width();
    let mut v = vec![0.0; cols];
    let mut dv = vec![0.0; cols];
    let mut dz = vec![0.0; GATES * hd];

    for i in (0..height).rev() {
        for j in (0..width).rev() {
            state.gather(params, i, j, &mut v);
            let gates = state.gates.cell(i, j);
            let h = state.h.cell(i, j);
            let c = state.c.cell(i, j);
            let mut dc_left = vec![0.0; hd];
            let mut dc_up = vec![0.0; hd];
            {
                let dhc = dh_acc.cell(i, j);
                let dcc = dc_acc.cell(i, j);
                for u in 0..hd {
                    let (g, o, ig, fr, fc) = (gates[u], gates[hd + u], gates[2 * hd + u], gates[3 * hd + u], gates[4 * hd + u]);
                    let dpre = dhc[u] * (1.0 - h[u] * h[u]);
                    let dc = dcc[u] + dpre * o;
                    let d_o = dpre * c[u];
                    let c_left = if j > 0 { state.c.cell(i, j - 1)[u] } else { 0.0 };
                    let c_up = if i > 0 { state.c.cell(i - 1, j)[u] } else { 0.0 };
                    dc_left[u] = dc * fc;
                    dc_up[u] = dc * fr;
                    dz[u] = dc * ig * (1.0 - g * g);
                    dz[hd + u] = d_o * o * (1.0 - o);
                    dz[2 * hd + u] = dc * g * ig * (1.0 - ig);
                    dz[3 * hd + u] = dc * c_up * fr * (1.0 - fr);
                    dz[4 * hd + u] = dc * c_left * fc * (1.0 - fc);
                }
            }
            dv.iter_mut().for_each(|x| *x = 0.0);
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                axpy(d, &v, &mut grads.weights[r * cols..(r + 1) * cols]);
                grads.bias[r] += d;
                axpy(d, params.row(r), &mut dv);
            }
            dinputs.cell_mut(i, j).copy_from_slice(&dv[..k]);
            if j > 0 {
                axpy(1.0, &dv[k..k + hd], dh_acc.cell_mut(i, j - 1));
                let dst = dc_acc.cell_mut(i, j - 1);
                axpy(1.0, &dc_left, dst);
                if params.extended {
                    axpy(1.0, &dv[k + 2 * hd..k + 3 * hd], dst);
                }
            }
            if i > 0 {
                axpy(1.0, &dv[k + hd..k + 2 * hd], dh_acc.cell_mut(i - 1, j));
                let dst = dc_acc.cell_mut(i - 1, j);
                axpy(1.0, &dc_up, dst);
                if params.extended {
                    axpy(1.0, &dv[k + 3 * hd..k + 4 * hd], dst);
                }
            }
        }
    }
    Ok((dinputs, grads))
}

fn check_chain(layers: &[SlstmLayerParams], input_dim: usize) -> Result<()> {
    let mut dim = input_dim;
    for (n, layer) in layers.iter().enumerate() {
        ensure!(
            layer.input_dim == dim,
            "layer {n} expects {}-dimensional input but receives {dim}",
            layer.input_dim
        );
        dim = layer.hidden_dim;
    }
    Ok(())
}

/// Runs a stack of layers, each reading the hidden grid of the one below.
/// Returns the top hidden grid and every layer's state.
pub fn stack_forward(layers: &[SlstmLayerParams], inputs: &Grid) -> Result<(Grid, Vec<GridState>)> {
    check_chain(layers, inputs.channels)?;
    let mut states: Vec<GridState> = Vec::with_capacity(layers.len());
    for layer in layers {
        let below = states.last().map(|s| &s.h).unwrap_or(inputs);
        let state = slstm_forward(layer, below)?;
        states.push(state);
    }
    let top = states.last().map(|s| s.h.clone()).unwrap_or_else(|| inputs.clone());
    Ok((top, states))
}

/// Backpropagates `dh_top` through a stack evaluated by [`stack_forward`].
pub fn stack_backward(
    layers: &[SlstmLayerParams],
    states: &[GridState],
    dh_top: &Grid,
) -> Result<(Grid, Vec<SlstmLayerParams>)> {
    ensure!(layers.len() == states.len(), "{} layers but {} states", layers.len(), states.len());
    let mut grads: Vec<SlstmLayerParams> = Vec::with_capacity(layers.len());
    let mut upstream = dh_top.clone();
    for (layer, state) in layers.iter().zip(states).rev() {
        let (dinputs, g) = slstm_backward(layer, state, &upstream)?;
        grads.push(g);
        upstream = dinputs;
    }
    grads.reverse();
    Ok((upstream, grads))
}

/// Cell-by-cell evaluation of a whole stack, used where inputs are only
/// known once earlier cells have been processed (ancestral sampling).
#[derive(Debug, Clone)]
pub struct StackCursor {
    states: Vec<GridState>,
}

impl StackCursor {
    pub fn new(layers: &[SlstmLayerParams], height: usize, width: usize) -> Self {
        StackCursor {
            states: layers.iter().map(|l| GridState::new(l, height, width)).collect(),
        }
    }

    /// Feeds `input` at (i, j) through every layer and returns the top hidden
    /// vector (or `input` itself for an empty stack).
    pub fn step<'a>(&'a mut self, layers: &[SlstmLayerParams], i: usize, j: usize, input: &'a [f64]) -> &'a [f64] {
        let mut below: Option<Vec<f64>> = None;
        for (n, (layer, state)) in layers.iter().zip(self.states.iter_mut()).enumerate() {
            let x = below.as_deref().unwrap_or(input);
            let h = state.step(layer, i, j, x);
            if n + 1 < layers.len() {
                below = Some(h.to_vec());
            }
        }
        match self.states.last() {
            Some(state) => state.h.cell(i, j),
            None => input,
        }
    }
}
