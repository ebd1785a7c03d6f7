//! The recurrent image density estimator.
//!
//! For every pixel the raw causal neighborhood is whitened, the whitened
//! contexts are run through a stack of spatial LSTM layers, and an MCGSM
//! head predicts the whitened pixel from the top hidden vector concatenated
//! with the whitened context. Log-densities are converted back to pixel
//! space with the whitening log-Jacobian.

mod container;
mod train;
mod whitening;

pub use container::{decode_tensors, encode_tensors, load_model, save_model, Tensor};
pub use train::{
    collect_pairs, train_mcgsm, train_ride, EpochLog, McgsmTrainConfig, McgsmTrainLog, TrainSchedule,
};
pub use whitening::WhiteningTransform;

use rand::Rng;

use crate::error::{ensure, Result};
use crate::imaging::{Image, NeighborhoodSpec};
use crate::mcgsm::{McgsmParams, Sample, Workspace};
use crate::slstm::{stack_backward, stack_forward, Grid, SlstmLayerParams};

/// Version tag written into model containers.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RideModel {
    pub neighborhood: NeighborhoodSpec,
    pub whitening: WhiteningTransform,
    pub layers: Vec<SlstmLayerParams>,
    pub head: McgsmParams,
    pub version: u32,
}

/// Gradient of a scalar with respect to every model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub layers: Vec<SlstmLayerParams>,
    pub head: McgsmParams,
}

impl ModelGrad {
    pub fn add_scaled(&mut self, sign: f64, other: &ModelGrad) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_scaled(sign, b);
        }
        self.head.add_scaled(sign, &other.head);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.write_flat(&mut out);
        }
        self.head.write_flat(&mut out);
        out
    }
}

/// Head sizes: components, scales, features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSizes {
    pub components: usize,
    pub scales: usize,
    pub features: usize,
}

impl RideModel {
    pub fn new(
        neighborhood: NeighborhoodSpec,
        whitening: WhiteningTransform,
        layers: Vec<SlstmLayerParams>,
        head: McgsmParams,
    ) -> Result<Self> {
        let model = RideModel {
            neighborhood,
            whitening,
            layers,
            head,
            version: FORMAT_VERSION,
        };
        model.validate()?;
        Ok(model)
    }

    /// Random initialization. `hidden` lists the hidden size of each layer;
    /// an empty list gives a plain MCGSM on whitened neighborhoods.
    pub fn init<R: Rng + ?Sized>(
        neighborhood: NeighborhoodSpec,
        whitening: WhiteningTransform,
        hidden: &[usize],
        extended: bool,
        head: HeadSizes,
        rng: &mut R,
    ) -> Result<Self> {
        let d = neighborhood.dim();
        let mut layers = Vec::with_capacity(hidden.len());
        let mut input = d;
        for &h in hidden {
            layers.push(SlstmLayerParams::init(input, h, extended, rng)?);
            input = h;
        }
        let top = hidden.last().copied().unwrap_or(0);
        let head = McgsmParams::init(top + d, head.components, head.scales, head.features, rng)?;
        Self::new(neighborhood, whitening, layers, head)
    }

    /// Wraps a standalone MCGSM trained on whitened neighborhoods.
    pub fn from_mcgsm(neighborhood: NeighborhoodSpec, whitening: WhiteningTransform, head: McgsmParams) -> Result<Self> {
        Self::new(neighborhood, whitening, Vec::new(), head)
    }

    /// Adds randomly initialized SLSTM layers below an MCGSM-only model. The
    /// head's weights on the new hidden inputs start at zero, so the widened
    /// model initially assigns the same densities as the original.
    pub fn widen<R: Rng + ?Sized>(&self, hidden: &[usize], extended: bool, rng: &mut R) -> Result<Self> {
        ensure!(self.layers.is_empty(), "only MCGSM-only models can be widened");
        ensure!(!hidden.is_empty(), "widening needs at least one layer");
        let d = self.neighborhood.dim();
        let mut layers = Vec::with_capacity(hidden.len());
        let mut input = d;
        for &h in hidden {
            layers.push(SlstmLayerParams::init(input, h, extended, rng)?);
            input = h;
        }
        let top = input;
        let old = &self.head;
        let mut head = McgsmParams::zeros(top + d, old.components, old.scales, old.features)?;
        head.eta.copy_from_slice(&old.eta);
        head.alpha.copy_from_slice(&old.alpha);
        head.beta.copy_from_slice(&old.beta);
        for (dst, src) in [(&mut head.b, &old.b), (&mut head.a, &old.a)] {
            for (row_dst, row_src) in dst.chunks_mut(top + d).zip(src.chunks(d)) {
                row_dst[top..].copy_from_slice(row_src);
            }
        }
        Self::new(self.neighborhood, self.whitening.clone(), layers, head)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.neighborhood.dim();
        ensure!(
            self.version == FORMAT_VERSION,
            "unsupported model version {}",
            self.version
        );
        ensure!(
            self.whitening.dim() == d,
            "whitening is {}-dimensional but the neighborhood has {d} pixels",
            self.whitening.dim()
        );
        self.whitening.validate()?;
        let mut input = d;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            ensure!(
                layer.input_dim == input,
                "layer {k} expects {}-dimensional input but receives {input}",
                layer.input_dim
            );
            input = layer.hidden_dim;
        }
        self.head.validate()?;
        ensure!(
            self.head.dim == self.head_input_dim(),
            "head takes {} inputs, expected {}",
            self.head.dim,
            self.head_input_dim()
        );
        Ok(())
    }

    pub fn top_hidden_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden_dim)
    }

    pub fn head_input_dim(&self) -> usize {
        self.top_hidden_dim() + self.neighborhood.dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum::<usize>() + self.head.num_params()
    }

    /// All trainable parameters: layers bottom to top, then the head.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            l.write_flat(&mut out);
        }
        self.head.write_flat(&mut out);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure!(flat.len() == self.num_params(), "expected {} parameters, got {}", self.num_params(), flat.len());
        let mut rest = flat;
        for l in self.layers.iter_mut() {
            rest = l.read_flat(rest);
        }
        self.head.read_flat(rest);
        Ok(())
    }

    pub fn zero_grad(&self) -> ModelGrad {
        ModelGrad {
            layers: self.layers.iter().map(|l| l.zeros_like()).collect(),
            head: self.head.zeros_like(),
        }
    }

    /// Whitened context grid and whitened pixel values of `image`.
    pub fn whiten(&self, image: &Image) -> (Grid, Vec<f64>) {
        let d = self.neighborhood.dim();
        let (h, w) = (image.height(), image.width());
        let mut grid = Grid::zeros(h, w, d);
        let mut y_hat = Vec::with_capacity(h * w);
        let mut ctx = vec![0.0; d];
        for i in 0..h {
            for j in 0..w {
                self.neighborhood.fill_context(image, i, j, &mut ctx);
                let out = grid.cell_mut(i, j);
                self.whitening.whiten_context(&ctx, out);
                y_hat.push(self.whitening.whiten_value(out, image.get(i, j)));
            }
        }
        (grid, y_hat)
    }

    /// (h ⊕ x̂, ŷ) head training pairs for every pixel of `image`.
    pub fn head_samples(&self, image: &Image) -> Result<Vec<Sample>> {
        let (grid, y_hat) = self.whiten(image);
        let (top, _) = stack_forward(&self.layers, &grid)?;
        let hd = self.top_hidden_dim();
        let mut out = Vec::with_capacity(y_hat.len());
        for i in 0..image.height() {
            for j in 0..image.width() {
                let mut ctx = Vec::with_capacity(self.head_input_dim());
                if hd > 0 {
                    ctx.extend_from_slice(top.cell(i, j));
                }
                ctx.extend_from_slice(grid.cell(i, j));
                out.push(Sample {
                    ctx,
                    y: y_hat[i * image.width() + j],
                });
            }
        }
        Ok(out)
    }

    /// Per-pixel log-densities in nats and their sum.
    pub fn log_density(&self, image: &Image) -> Result<(Image, f64)> {
        let (grid, y_hat) = self.whiten(image);
        let (top, _) = stack_forward(&self.layers, &grid)?;
        let hd = self.top_hidden_dim();
        let mut ws = Workspace::new(&self.head);
        let mut input = vec![0.0; self.head_input_dim()];
        let mut values = Vec::with_capacity(y_hat.len());
        let mut total = 0.0;
        for i in 0..image.height() {
            for j in 0..image.width() {
                if hd > 0 {
                    input[..hd].copy_from_slice(top.cell(i, j));
                }
                input[hd..].copy_from_slice(grid.cell(i, j));
                let lp = ws.forward(&self.head, &input, y_hat[i * image.width() + j]) + self.whitening.log_jacobian;
                values.push(lp);
                total += lp;
            }
        }
        Ok((Image::new(image.height(), image.width(), values)?, total))
    }

    /// Adds `weight · ∇ log p(image)` into `grad` and returns log p(image).
    pub fn accumulate_grad(&self, image: &Image, weight: f64, grad: &mut ModelGrad) -> Result<f64> {
        let (grid, y_hat) = self.whiten(image);
        let (top, states) = stack_forward(&self.layers, &grid)?;
        let hd = self.top_hidden_dim();
        let (h, w) = (image.height(), image.width());
        let mut ws = Workspace::new(&self.head);
        let mut input = vec![0.0; self.head_input_dim()];
        let mut dinput = vec![0.0; self.head_input_dim()];
        let mut dh_top = Grid::zeros(h, w, hd.max(1));
        let mut total = 0.0;
        for i in 0..h {
            for j in 0..w {
                if hd > 0 {
                    input[..hd].copy_from_slice(top.cell(i, j));
                }
                input[hd..].copy_from_slice(grid.cell(i, j));
                dinput.iter_mut().for_each(|v| *v = 0.0);
                let need_dx = hd > 0;
                let lp = ws.accumulate(
                    &self.head,
                    &input,
                    y_hat[i * w + j],
                    weight,
                    &mut grad.head,
                    if need_dx { Some(&mut dinput) } else { None },
                );
                if need_dx {
                    dh_top.cell_mut(i, j).copy_from_slice(&dinput[..hd]);
                }
                total += lp;
            }
        }
        if hd > 0 {
            let (_, layer_grads) = stack_backward(&self.layers, &states, &dh_top)?;
            for (g, lg) in grad.layers.iter_mut().zip(&layer_grads) {
                g.add_scaled(1.0, lg);
            }
        }
        Ok(total + (h * w) as f64 * self.whitening.log_jacobian)
    }

    /// Mean negative log-likelihood per pixel over `images` (nats) and its
    /// gradient. Images are processed in parallel with a fixed reduction
    /// order.
    pub fn neg_loglik_grad(&self, images: &[Image]) -> Result<(f64, ModelGrad)> {
        ensure!(!images.is_empty(), "empty batch");
        let pixels: usize = images.iter().map(|im| im.len()).sum();
        let weight = -1.0 / pixels as f64;
        let parts = crate::par::map(images, |im| -> Result<(f64, ModelGrad)> {
            let mut g = self.zero_grad();
            let lp = self.accumulate_grad(im, weight, &mut g)?;
            Ok((lp, g))
        });
        let mut total = 0.0;
        let mut grad = self.zero_grad();
        for part in parts {
            let (lp, g) = part?;
            total += lp;
            grad.add_scaled(1.0, &g);
        }
        Ok((-total / pixels as f64, grad))
    }

    /// Total log-density of each image, evaluated in parallel.
    pub fn log_densities(&self, images: &[Image]) -> Result<Vec<f64>> {
        crate::par::map(images, |im| self.log_density(im).map(|(_, t)| t))
            .into_iter()
            .collect()
    }
}

/// Per-pixel log-density grid (nats) and total.
pub fn ride_log_density(model: &RideModel, image: &Image) -> Result<(Image, f64)> {
    model.log_density(image)
}
