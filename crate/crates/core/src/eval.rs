//! Log-likelihood rates, transformation ensembles and unit conversion.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{ensure, Error, Result};
use crate::imaging::{extract_patches, Image};
use crate::math::log_sum_exp;
use crate::ride::RideModel;

/// Constants for converting a 63-dimensional patch log-likelihood (DC
/// component removed, whitened by a linear map A) to a per-pixel rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConversionConstants {
    /// Log-likelihood of the missing DC component, nats.
    pub ell_dc: f64,
    /// ln |det A|, nats.
    pub log_det_a: f64,
    pub dims: usize,
}

pub const CONVERSION: ConversionConstants = ConversionConstants {
    ell_dc: 0.5020,
    log_det_a: -4.1589,
    dims: 64,
};

/// `(ell + ℓ_DC + ln|det A|) / 64 / ln 2`.
pub fn nats63_to_bits_per_px(ell: f64) -> f64 {
    (ell + CONVERSION.ell_dc + CONVERSION.log_det_a) / CONVERSION.dims as f64 / std::f64::consts::LN_2
}

/// A pixel permutation from the symmetry group of the square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GridTransform {
    Identity,
    /// Counter-clockwise quarter turn.
    Rot90,
    Rot180,
    Rot270,
    /// Mirror left to right.
    FlipHorizontal,
    /// Mirror top to bottom.
    FlipVertical,
    Transpose,
    AntiTranspose,
}

impl GridTransform {
    pub const ALL: [GridTransform; 8] = [
        GridTransform::Identity,
        GridTransform::Rot90,
        GridTransform::Rot180,
        GridTransform::Rot270,
        GridTransform::FlipHorizontal,
        GridTransform::FlipVertical,
        GridTransform::Transpose,
        GridTransform::AntiTranspose,
    ];

    pub fn inverse(self) -> Self {
        match self {
            GridTransform::Rot90 => GridTransform::Rot270,
            GridTransform::Rot270 => GridTransform::Rot90,
            other => other,
        }
    }

    /// Every transform permutes pixels, so |det T| = 1.
    pub fn log_det(self) -> f64 {
        0.0
    }

    pub fn is_rotation_or_transpose(self) -> bool {
        !matches!(
            self,
            GridTransform::Identity | GridTransform::FlipHorizontal | GridTransform::FlipVertical
        )
    }

    pub fn apply(self, image: &Image) -> Result<Image> {
        let (h, w) = (image.height(), image.width());
        ensure!(
            h == w || !self.is_rotation_or_transpose(),
            "{self:?} needs a square image, got {h}x{w}"
        );
        let n = h;
        let src = |i: usize, j: usize| -> f64 {
            match self {
                GridTransform::Identity => image.get(i, j),
                GridTransform::Rot90 => image.get(j, n - 1 - i),
                GridTransform::Rot180 => image.get(n - 1 - i, n - 1 - j),
                GridTransform::Rot270 => image.get(n - 1 - j, i),
                GridTransform::FlipHorizontal => image.get(i, w - 1 - j),
                GridTransform::FlipVertical => image.get(h - 1 - i, j),
                GridTransform::Transpose => image.get(j, i),
                GridTransform::AntiTranspose => image.get(n - 1 - j, n - 1 - i),
            }
        };
        Image::from_fn(h, w, src)
    }
}

/// A set of transforms defining the ensemble (1/K) Σ_k p(T_k x) |det T_k|.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformSet {
    transforms: Vec<GridTransform>,
}

impl TransformSet {
    pub fn new(transforms: Vec<GridTransform>) -> Result<Self> {
        ensure!(!transforms.is_empty(), "an ensemble needs at least one transform");
        Ok(TransformSet { transforms })
    }

    pub fn identity() -> Self {
        TransformSet {
            transforms: vec![GridTransform::Identity],
        }
    }

    pub fn dihedral8() -> Self {
        TransformSet {
            transforms: GridTransform::ALL.to_vec(),
        }
    }

    pub fn transforms(&self) -> &[GridTransform] {
        &self.transforms
    }
}

impl FromStr for TransformSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" | "none" => Ok(TransformSet::identity()),
            "dihedral8" => Ok(TransformSet::dihedral8()),
            other => Err(Error::domain(format!(
                "unknown ensemble {other:?} (expected identity or dihedral8)"
            ))),
        }
    }
}

/// log (1/K) Σ_k p(T_k x) |det T_k|, in nats.
pub fn ensemble_log_density(model: &RideModel, ts: &TransformSet, image: &Image) -> Result<f64> {
    let transformed = ts
        .transforms
        .iter()
        .map(|t| t.apply(image))
        .collect::<Result<Vec<_>>>()?;
    let mut terms = model.log_densities(&transformed)?;
    for (term, t) in terms.iter_mut().zip(&ts.transforms) {
        *term += t.log_det();
    }
    Ok(log_sum_exp(&terms) - (terms.len() as f64).ln())
}

fn patches_of(images: &[Image], patch_side: usize) -> Result<Vec<Image>> {
    ensure!(!images.is_empty(), "no images to evaluate");
    let mut patches = Vec::new();
    for (k, im) in images.iter().enumerate() {
        ensure!(
            im.height() >= patch_side && im.width() >= patch_side,
            "image {k} ({}x{}) is smaller than the {patch_side}-pixel patch",
            im.height(),
            im.width()
        );
        patches.extend(extract_patches(im, patch_side, patch_side)?);
    }
    Ok(patches)
}

/// Log-likelihood rate in bit/px over disjoint `patch_side` patches.
pub fn loglik_rate(model: &RideModel, images: &[Image], patch_side: usize) -> Result<f64> {
    let patches = patches_of(images, patch_side)?;
    let totals = model.log_densities(&patches)?;
    let pixels: usize = patches.iter().map(|p| p.len()).sum();
    Ok(totals.iter().sum::<f64>() / pixels as f64 / std::f64::consts::LN_2)
}

/// Rate of the transformation ensemble, bit/px over disjoint patches.
pub fn ensemble_rate(model: &RideModel, ts: &TransformSet, images: &[Image], patch_side: usize) -> Result<f64> {
    let patches = patches_of(images, patch_side)?;
    let mut total = 0.0;
    for p in &patches {
        total += ensemble_log_density(model, ts, p)?;
    }
    let pixels: usize = patches.iter().map(|p| p.len()).sum();
    Ok(total / pixels as f64 / std::f64::consts::LN_2)
}

/// Ordered `metric<TAB>value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, metric: &str, value: impl std::fmt::Display) {
        self.entries.push((metric.to_string(), value.to_string()));
    }

    pub fn get(&self, metric: &str) -> Option<&str> {
        self.entries.iter().find(|(m, _)| m == metric).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (m, v) in &self.entries {
            writeln!(out, "{m}\t{v}").unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut report = Report::default();
        for (n, line) in text.lines().enumerate() {
            let (m, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::domain(format!("report line {} has no tab", n + 1)))?;
            report.push(m, v);
        }
        Ok(report)
    }
}
