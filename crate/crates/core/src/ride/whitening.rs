use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{ensure, Error, Result};
use crate::math::dot;
use crate::mcgsm::Sample;

/// Conditional whitening of (context, pixel) pairs:
///
/// ```text
/// x̂ = C_xx^{-1/2} (x − m_x)
/// ŷ = W (y − C_yx C_xx^{-1/2} x̂ − m_y),   W = (C_yy − C_yx C_xx^{-1} C_xy)^{-1/2}
/// ```
///
/// Densities over ŷ convert to densities over y by adding `log_jacobian`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub mean_x: Vec<f64>,
    pub mean_y: f64,
    /// Row-major D×D symmetric matrix C_xx^{-1/2}.
    pub cxx_inv_sqrt: Vec<f64>,
    /// C_yx C_xx^{-1/2}.
    pub cyx_white: Vec<f64>,
    pub w: f64,
    pub log_jacobian: f64,
}

impl WhiteningTransform {
    pub fn identity(dim: usize) -> Self {
        let mut cxx_inv_sqrt = vec![0.0; dim * dim];
        for k in 0..dim {
            cxx_inv_sqrt[k * dim + k] = 1.0;
        }
        WhiteningTransform {
            mean_x: vec![0.0; dim],
            mean_y: 0.0,
            cxx_inv_sqrt,
            cyx_white: vec![0.0; dim],
            w: 1.0,
            log_jacobian: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean_x.len()
    }

    /// Fits means and population covariances of `pairs`.
    ///
    /// A ridge of 1e-8·trace(C_xx)/D is added to C_xx before taking the
    /// inverse square root.
    pub fn fit(pairs: &[Sample]) -> Result<Self> {
        ensure!(!pairs.is_empty(), "cannot fit whitening to zero pairs");
        let d = pairs[0].ctx.len();
        ensure!(d >= 1, "contexts must be non-empty");
        ensure!(pairs.len() >= d + 2, "whitening a {d}-dimensional context needs at least {} pairs, got {}", d + 2, pairs.len());
        for (k, s) in pairs.iter().enumerate() {
            ensure!(s.ctx.len() == d, "pair {k} has context length {}, expected {d}", s.ctx.len());
        }
        let n = pairs.len() as f64;
        let mut mean_x = vec![0.0; d];
        let mut mean_y = 0.0;
        for s in pairs {
            crate::math::axpy(1.0, &s.ctx, &mut mean_x);
            mean_y += s.y;
        }
        mean_x.iter_mut().for_each(|v| *v /= n);
        mean_y /= n;

        let mut cxx = DMatrix::<f64>::zeros(d, d);
        let mut cyx = vec![0.0; d];
        let mut cyy = 0.0;
        let mut centered = vec![0.0; d];
        for s in pairs {
            for k in 0..d {
                centered[k] = s.ctx[k] - mean_x[k];
            }
            let dy = s.y - mean_y;
            for r in 0..d {
                let cr = centered[r];
                for c in r..d {
                    cxx[(r, c)] += cr * centered[c];
                }
                cyx[r] += dy * cr;
            }
            cyy += dy * dy;
        }
        for r in 0..d {
            for c in r..d {
                let v = cxx[(r, c)] / n;
                cxx[(r, c)] = v;
                cxx[(c, r)] = v;
            }
        }
        cyx.iter_mut().for_each(|v| *v /= n);
        cyy /= n;
        Self::from_moments(mean_x, mean_y, cxx, cyx, cyy)
    }

    fn from_moments(mean_x: Vec<f64>, mean_y: f64, mut cxx: DMatrix<f64>, cyx: Vec<f64>, cyy: f64) -> Result<Self> {
        let d = mean_x.len();
        let ridge = 1e-8 * cxx.trace() / d as f64;
        for k in 0..d {
            cxx[(k, k)] += ridge;
        }
        let eig = SymmetricEigen::new(cxx);
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::Numeric(format!(
                    "context covariance is degenerate: eigenvalue {k} is {lambda:e} after ridge {ridge:e}"
                )));
            }
        }
        let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.sqrt());
        let m = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
        let mut cxx_inv_sqrt = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                // Average with the transpose so the stored matrix is exactly symmetric.
                cxx_inv_sqrt[r * d + c] = 0.5 * (m[(r, c)] + m[(c, r)]);
            }
        }
        let cyx_white: Vec<f64> = (0..d).map(|c| (0..d).map(|r| cyx[r] * cxx_inv_sqrt[r * d + c]).sum()).collect();
        let residual = cyy - dot(&cyx_white, &cyx_white);
        if !(residual > 0.0 && residual.is_finite()) {
            return Err(Error::Numeric(format!(
                "pixel is (numerically) a linear function of its context: residual variance {residual:e}"
            )));
        }
        let w = 1.0 / residual.sqrt();
        Ok(WhiteningTransform {
            mean_x,
            mean_y,
            cxx_inv_sqrt,
            cyx_white,
            w,
            log_jacobian: w.ln(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        ensure!(d >= 1, "whitening needs a non-empty context");
        ensure!(
            self.cxx_inv_sqrt.len() == d * d && self.cyx_white.len() == d,
            "whitening arrays do not match context dimension {d}"
        );
        ensure!(
            self.mean_x
                .iter()
                .chain(&self.cxx_inv_sqrt)
                .chain(&self.cyx_white)
                .chain([&self.mean_y, &self.w, &self.log_jacobian])
                .all(|v| v.is_finite()),
            "whitening parameters must be finite"
        );
        ensure!(self.w > 0.0, "whitening scale must be positive, got {}", self.w);
        ensure!(
            self.log_jacobian == self.w.ln(),
            "whitening log-Jacobian {} disagrees with ln W = {}",
            self.log_jacobian,
            self.w.ln()
        );
        for r in 0..d {
            for c in 0..r {
                ensure!(
                    self.cxx_inv_sqrt[r * d + c] == self.cxx_inv_sqrt[c * d + r],
                    "whitening matrix must be symmetric"
                );
            }
        }
        Ok(())
    }

    /// Writes x̂ for context `ctx` into `out`.
    pub fn whiten_context(&self, ctx: &[f64], out: &mut [f64]) {
        let d = self.dim();
        debug_assert!(ctx.len() == d && out.len() == d);
        for r in 0..d {
            let row = &self.cxx_inv_sqrt[r * d..(r + 1) * d];
            let mut acc = 0.0;
            for c in 0..d {
                acc += row[c] * (ctx[c] - self.mean_x[c]);
            }
            out[r] = acc;
        }
    }

    /// ŷ given the whitened context.
    pub fn whiten_value(&self, ctx_hat: &[f64], y: f64) -> f64 {
        self.w * (y - dot(&self.cyx_white, ctx_hat) - self.mean_y)
    }

    /// Inverse of [`whiten_value`](Self::whiten_value).
    pub fn unwhiten_value(&self, ctx_hat: &[f64], y_hat: f64) -> f64 {
        y_hat / self.w + dot(&self.cyx_white, ctx_hat) + self.mean_y
    }

    /// Returns (x̂, ŷ).
    pub fn precondition(&self, ctx: &[f64], y: f64) -> Result<(Vec<f64>, f64)> {
        ensure!(ctx.len() == self.dim(), "context has length {}, whitening expects {}", ctx.len(), self.dim());
        let mut out = vec![0.0; self.dim()];
        self.whiten_context(ctx, &mut out);
        let y_hat = self.whiten_value(&out, y);
        Ok((out, y_hat))
    }
}
