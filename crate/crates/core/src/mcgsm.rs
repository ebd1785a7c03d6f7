//! Factorized mixture of conditional Gaussian scale mixtures.
//!
//! The conditional density of a scalar `y` given a context vector `x` is a
//! mixture of experts over components `c` and scales `s`:
//!
//! ```text
//! p(c, s | x)  ∝ exp(η_cs − ½ e^{α_cs} xᵀ K_c x),   K_c = Σ_n β_cn² b_n b_nᵀ
//! p(y | x, c, s) = N(y; a_cᵀ x, e^{−α_cs})
//! ```
//!
//! All mixture arithmetic happens in the log domain.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};
use crate::math::{axpy, dot, softmax_in_place, HALF_LN_2PI};
use crate::par;

/// Log-precisions are clamped to this value on use, flooring expert
/// variances at e^-30.
pub const MAX_LOG_PRECISION: f64 = 30.0;

/// Parameters of a factorized MCGSM. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct McgsmParams {
    pub dim: usize,
    pub components: usize,
    pub scales: usize,
    pub features: usize,
    /// components × scales gate biases.
    pub eta: Vec<f64>,
    /// components × scales log-precisions.
    pub alpha: Vec<f64>,
    /// components × features feature weights, squared on use.
    pub beta: Vec<f64>,
    /// features × dim feature vectors.
    pub b: Vec<f64>,
    /// components × dim linear predictors.
    pub a: Vec<f64>,
}

/// A (context, value) training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub ctx: Vec<f64>,
    pub y: f64,
}

impl McgsmParams {
    pub fn zeros(dim: usize, components: usize, scales: usize, features: usize) -> Result<Self> {
        ensure!(
            dim >= 1 && components >= 1 && scales >= 1 && features >= 1,
            "MCGSM sizes must be positive: D={dim} C={components} S={scales} N={features}"
        );
        Ok(McgsmParams {
            dim,
            components,
            scales,
            features,
            eta: vec![0.0; components * scales],
            alpha: vec![0.0; components * scales],
            beta: vec![0.0; components * features],
            b: vec![0.0; features * dim],
            a: vec![0.0; components * dim],
        })
    }

    /// Random initialization. Gate biases start at zero, log-precisions are
    /// spread evenly over [-1, 1] across scales, and β, b, a are drawn from
    /// N(0, 1/D).
    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        components: usize,
        scales: usize,
        features: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(dim, components, scales, features)?;
        for c in 0..components {
            for s in 0..scales {
                p.alpha[c * scales + s] = if scales == 1 {
                    0.0
                } else {
                    -1.0 + 2.0 * s as f64 / (scales - 1) as f64
                };
            }
        }
        let scale = 1.0 / (dim as f64).sqrt();
        for v in p.beta.iter_mut().chain(p.b.iter_mut()).chain(p.a.iter_mut()) {
            *v = scale * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(p)
    }

    pub fn num_params(&self) -> usize {
        self.eta.len() + self.alpha.len() + self.beta.len() + self.b.len() + self.a.len()
    }

    /// Parameters in the fixed order (η, α, β, b, a).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.write_flat(&mut out);
        out
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.eta);
        out.extend_from_slice(&self.alpha);
        out.extend_from_slice(&self.beta);
        out.extend_from_slice(&self.b);
        out.extend_from_slice(&self.a);
    }

    /// Loads parameters from the front of `flat`, returning the rest.
    pub fn read_flat<'a>(&mut self, flat: &'a [f64]) -> &'a [f64] {
        let mut rest = flat;
        for field in [&mut self.eta, &mut self.alpha, &mut self.beta, &mut self.b, &mut self.a] {
            let (head, tail) = rest.split_at(field.len());
            field.copy_from_slice(head);
            rest = tail;
        }
        rest
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure!(flat.len() == self.num_params(), "expected {} parameters, got {}", self.num_params(), flat.len());
        self.read_flat(flat);
        Ok(())
    }

    /// Same shape, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dim, self.components, self.scales, self.features).unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        let (c, s, n, d) = (self.components, self.scales, self.features, self.dim);
        ensure!(c >= 1 && s >= 1 && n >= 1 && d >= 1, "MCGSM sizes must be positive");
        ensure!(
            self.eta.len() == c * s
                && self.alpha.len() == c * s
                && self.beta.len() == c * n
                && self.b.len() == n * d
                && self.a.len() == c * d,
            "MCGSM parameter arrays do not match sizes D={d} C={c} S={s} N={n}"
        );
        ensure!(self.to_flat().iter().all(|v| v.is_finite()), "MCGSM parameters must be finite");
        Ok(())
    }

    /// Quadratic form xᵀ K_c x for component `c`.
    pub fn gate_precision_form(&self, c: usize, x: &[f64]) -> f64 {
        (0..self.features)
            .map(|n| {
                let beta = self.beta[c * self.features + n];
                let u = dot(&self.b[n * self.dim..(n + 1) * self.dim], x);
                beta * beta * u * u
            })
            .sum()
    }

    /// Adds `sign * other` to every parameter.
    pub fn add_scaled(&mut self, sign: f64, other: &McgsmParams) {
        axpy(sign, &other.eta, &mut self.eta);
        axpy(sign, &other.alpha, &mut self.alpha);
        axpy(sign, &other.beta, &mut self.beta);
        axpy(sign, &other.b, &mut self.b);
        axpy(sign, &other.a, &mut self.a);
    }

    fn check_ctx(&self, ctx: &[f64]) -> Result<()> {
        ensure!(ctx.len() == self.dim, "context has length {}, model expects {}", ctx.len(), self.dim);
        Ok(())
    }

    /// Posterior over (c, s) given the context, row-major components × scales.
    pub fn gate_posterior(&self, ctx: &[f64]) -> Result<Vec<f64>> {
        self.check_ctx(ctx)?;
        let mut ws = Workspace::new(self);
        ws.forward(self, ctx, 0.0);
        Ok(ws.gate)
    }

    /// log p(y | ctx).
    pub fn log_density(&self, ctx: &[f64], y: f64) -> Result<f64> {
        self.check_ctx(ctx)?;
        ensure!(y.is_finite(), "pixel value must be finite, got {y}");
        let mut ws = Workspace::new(self);
        Ok(ws.forward(self, ctx, y))
    }

    /// Draws (c, s) from the gate, then y from that expert.
    pub fn sample<R: Rng + ?Sized>(&self, ctx: &[f64], rng: &mut R) -> Result<f64> {
        self.check_ctx(ctx)?;
        let mut ws = Workspace::new(self);
        Ok(ws.sample(self, ctx, rng))
    }

    /// Mean negative log-likelihood over `batch` and its gradient.
    pub fn neg_loglik_grad(&self, batch: &[Sample]) -> Result<(f64, McgsmParams)> {
        ensure!(!batch.is_empty(), "empty batch");
        for (k, s) in batch.iter().enumerate() {
            ensure!(s.ctx.len() == self.dim, "sample {k} has context length {}, expected {}", s.ctx.len(), self.dim);
        }
        let weight = -1.0 / batch.len() as f64;
        let (value, grad) = par::map_reduce(
            batch,
            par::DEFAULT_CHUNK,
            |chunk| {
                let mut ws = Workspace::new(self);
                let mut grad = self.zeros_like();
                let mut sum = 0.0;
                for s in chunk {
                    sum += ws.accumulate(self, &s.ctx, s.y, weight, &mut grad, None);
                }
                (sum, grad)
            },
            |(va, mut ga), (vb, gb)| {
                ga.add_scaled(1.0, &gb);
                (va + vb, ga)
            },
        )
        .expect("non-empty batch");
        Ok((-value / batch.len() as f64, grad))
    }

    /// Mean log-likelihood of `batch`.
    pub fn mean_log_likelihood(&self, batch: &[Sample]) -> Result<f64> {
        ensure!(!batch.is_empty(), "empty batch");
        let total = par::map_reduce(
            batch,
            par::DEFAULT_CHUNK,
            |chunk| {
                let mut ws = Workspace::new(self);
                chunk.iter().map(|s| ws.forward(self, &s.ctx, s.y)).sum::<f64>()
            },
            |a, b| a + b,
        )
        .unwrap();
        Ok(total / batch.len() as f64)
    }
}

/// Scratch buffers for evaluating one point. Reusable across points.
#[derive(Debug, Clone)]
pub struct Workspace {
    /// b_n · x
    proj: Vec<f64>,
    /// xᵀ K_c x
    quad: Vec<f64>,
    /// a_c · x
    pred: Vec<f64>,
    /// gate probabilities
    gate: Vec<f64>,
    /// posterior over (component, scale) given y
    joint: Vec<f64>,
    /// exp(alpha), cached for the alpha values in `lam_of`
    lam: Vec<f64>,
    lam_of: Vec<f64>,
    wq: Vec<f64>,
    wr: Vec<f64>,
    du: Vec<f64>,
}

impl Workspace {
    pub fn new(p: &McgsmParams) -> Self {
        let cs = p.components * p.scales;
        Workspace {
            proj: vec![0.0; p.features],
            quad: vec![0.0; p.components],
            pred: vec![0.0; p.components],
            gate: vec![0.0; cs],
            joint: vec![0.0; cs],
            lam: vec![0.0; cs],
            lam_of: vec![f64::NAN; cs],
            wq: vec![0.0; p.components],
            wr: vec![0.0; p.components],
            du: vec![0.0; p.features],
        }
    }

    /// Fills the gate and posterior probabilities and returns log p(y | x).
    pub fn forward(&mut self, p: &McgsmParams, x: &[f64], y: f64) -> f64 {
        let (d, n_feat, scales) = (p.dim, p.features, p.scales);
        if self.lam_of != p.alpha {
            self.lam_of.copy_from_slice(&p.alpha);
            for (lam, &alpha) in self.lam.iter_mut().zip(&p.alpha) {
                *lam = alpha.min(MAX_LOG_PRECISION).exp();
            }
        }
        for n in 0..n_feat {
            self.proj[n] = dot(&p.b[n * d..(n + 1) * d], x);
        }
        for c in 0..p.components {
            let betas = &p.beta[c * n_feat..(c + 1) * n_feat];
            let mut q = 0.0;
            for (beta, u) in betas.iter().zip(&self.proj) {
                let bu = beta * u;
                q += bu * bu;
            }
            self.quad[c] = q;
            let pred = dot(&p.a[c * d..(c + 1) * d], x);
            self.pred[c] = pred;
            let r = y - pred;
            for s in 0..scales {
                let k = c * scales + s;
                let alpha = p.alpha[k].min(MAX_LOG_PRECISION);
                let lam = self.lam[k];
                let l = p.eta[k] - 0.5 * lam * q;
                self.gate[k] = l;
                self.joint[k] = l + 0.5 * alpha - HALF_LN_2PI - 0.5 * lam * r * r;
            }
        }
        let lse_joint = softmax_in_place(&mut self.joint);
        let lse_gate = softmax_in_place(&mut self.gate);
        lse_joint - lse_gate
    }

    /// Adds `weight * ∇ log p(y | x)` into `grad` and, if given, into `dx`;
    /// returns log p(y | x).
    pub fn accumulate(
        &mut self,
        p: &McgsmParams,
        x: &[f64],
        y: f64,
        weight: f64,
        grad: &mut McgsmParams,
        dx: Option<&mut [f64]>,
    ) -> f64 {
        let logp = self.forward(p, x, y);
        let (d, n_feat, scales) = (p.dim, p.features, p.scales);
        for c in 0..p.components {
            let r = y - self.pred[c];
            let q = self.quad[c];
            let (mut wq, mut wr) = (0.0, 0.0);
            for s in 0..scales {
                let k = c * scales + s;
                let (post, gate) = (self.joint[k], self.gate[k]);
                let clamped = p.alpha[k] > MAX_LOG_PRECISION;
                let lam = self.lam[k];
                grad.eta[k] += weight * (post - gate);
                if !clamped {
                    grad.alpha[k] += weight * (post * (0.5 - 0.5 * lam * (q + r * r)) + gate * 0.5 * lam * q);
                }
                wq += (post - gate) * (-0.5 * lam);
                wr += post * lam * r;
            }
            self.wq[c] = wq;
            self.wr[c] = wr;
        }
        self.du.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..p.components {
            let wq = self.wq[c];
            let betas = &p.beta[c * n_feat..(c + 1) * n_feat];
            let gbeta = &mut grad.beta[c * n_feat..(c + 1) * n_feat];
            for n in 0..n_feat {
                let u = self.proj[n];
                let beta = betas[n];
                gbeta[n] += weight * wq * 2.0 * beta * u * u;
                self.du[n] += wq * 2.0 * beta * beta * u;
            }
            axpy(weight * self.wr[c], x, &mut grad.a[c * d..(c + 1) * d]);
        }
        for n in 0..n_feat {
            axpy(weight * self.du[n], x, &mut grad.b[n * d..(n + 1) * d]);
        }
        if let Some(dx) = dx {
            for n in 0..n_feat {
                axpy(weight * self.du[n], &p.b[n * d..(n + 1) * d], dx);
            }
            for c in 0..p.components {
                axpy(weight * self.wr[c], &p.a[c * d..(c + 1) * d], dx);
            }
        }
        logp
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, p: &McgsmParams, x: &[f64], rng: &mut R) -> f64 {
        self.forward(p, x, 0.0);
        let u: f64 = rng.random();
        let mut k = self.gate.len() - 1;
        let mut acc = 0.0;
        for (idx, &g) in self.gate.iter().enumerate() {
            acc += g;
            if u < acc {
                k = idx;
                break;
            }
        }
        let c = k / p.scales;
        let alpha = p.alpha[k].min(MAX_LOG_PRECISION);
        let z: f64 = rng.sample(StandardNormal);
        self.pred[c] + (-0.5 * alpha).exp() * z
    }
}
