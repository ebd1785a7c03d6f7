//! Ancestral sampling and Metropolis-within-Gibbs inpainting.

mod inpaint;

pub use inpaint::{inpaint, InpaintConfig, InpaintStats};

use rand::Rng;

use crate::error::{ensure, Result};
use crate::imaging::Image;
use crate::mcgsm::Workspace;
use crate::ride::RideModel;
use crate::slstm::StackCursor;

/// Axis-aligned rectangle of pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Rect {
            top,
            left,
            height,
            width,
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.top && i < self.top + self.height && j >= self.left && j < self.left + self.width
    }

    pub fn fits_in(&self, height: usize, width: usize) -> bool {
        self.height > 0 && self.width > 0 && self.top + self.height <= height && self.left + self.width <= width
    }

    /// A `size`×`size` window centered on `inner`, clipped to the image.
    pub fn window_around(inner: &Rect, size: usize, height: usize, width: usize) -> Rect {
        let clip = |start: usize, len: usize, extent: usize| -> (usize, usize) {
            let pad = size.saturating_sub(len);
            let lo = start.saturating_sub(pad / 2);
            let hi = (start + len + (pad - pad / 2)).min(extent);
            (lo, hi - lo)
        };
        let (top, h) = clip(inner.top, inner.height, height);
        let (left, w) = clip(inner.left, inner.width, width);
        Rect::new(top, left, h, w)
    }
}

/// A set of pixel coordinates, kept sorted in raster order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Region {
    pixels: Vec<(usize, usize)>,
}

impl Region {
    pub fn from_pixels(mut pixels: Vec<(usize, usize)>) -> Self {
        pixels.sort_unstable();
        pixels.dedup();
        Region { pixels }
    }

    pub fn block(rect: Rect) -> Self {
        let mut pixels = Vec::with_capacity(rect.height * rect.width);
        for i in rect.top..rect.top + rect.height {
            for j in rect.left..rect.left + rect.width {
                pixels.push((i, j));
            }
        }
        Region { pixels }
    }

    /// Pixels of `rect` where `mask` is nonzero.
    pub fn masked(rect: Rect, mask: &Image) -> Self {
        let mut pixels = Vec::new();
        for i in rect.top..(rect.top + rect.height).min(mask.height()) {
            for j in rect.left..(rect.left + rect.width).min(mask.width()) {
                if mask.get(i, j) != 0.0 {
                    pixels.push((i, j));
                }
            }
        }
        Region { pixels }
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.pixels.binary_search(&(i, j)).is_ok()
    }
}

/// Known pixels copied into a sample instead of drawn. The region must be a
/// raster prefix: placed at the origin and either spanning full rows or
/// lying within the first row.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRegion {
    pub image: Image,
    pub top: usize,
    pub left: usize,
}

impl SeedRegion {
    fn check(&self, height: usize, width: usize) -> Result<()> {
        let (h, w) = (self.image.height(), self.image.width());
        ensure!(
            self.top == 0 && self.left == 0,
            "seed region at ({}, {}) is not a raster prefix",
            self.top,
            self.left
        );
        ensure!(h <= height && w <= width, "{h}x{w} seed region exceeds {height}x{width} sample");
        ensure!(
            w == width || h == 1,
            "{h}x{w} seed region is not a raster prefix of a {height}x{width} image"
        );
        Ok(())
    }

    fn covers(&self, i: usize, j: usize) -> bool {
        i < self.image.height() && j < self.image.width()
    }
}

/// Walks `canvas` in raster order, replacing pixels for which `resample`
/// holds with draws from the model conditional. Returns the summed
/// log-density (nats) of the drawn pixels under the conditionals they were
/// drawn from.
fn ancestral_fill<R: Rng + ?Sized>(
    model: &RideModel,
    canvas: &mut Image,
    resample: impl Fn(usize, usize) -> bool,
    rng: &mut R,
) -> f64 {
    let d = model.neighborhood.dim();
    let hd = model.top_hidden_dim();
    let (h, w) = (canvas.height(), canvas.width());
    let mut cursor = StackCursor::new(&model.layers, h, w);
    let mut ws = Workspace::new(&model.head);
    let mut ctx = vec![0.0; d];
    let mut input = vec![0.0; model.head_input_dim()];
    let mut log_q = 0.0;
    for i in 0..h {
        for j in 0..w {
            model.neighborhood.fill_context(canvas, i, j, &mut ctx);
            let (hidden, white) = input.split_at_mut(hd);
            model.whitening.whiten_context(&ctx, white);
            if hd > 0 {
                hidden.copy_from_slice(cursor.step(&model.layers, i, j, white));
            }
            if resample(i, j) {
                let y_hat = ws.sample(&model.head, &input, rng);
                let y = model.whitening.unwhiten_value(&input[hd..], y_hat);
                // Round-tripping through pixel space may move ŷ by an ulp;
                // score the value actually written.
                let y_hat = model.whitening.whiten_value(&input[hd..], y);
                log_q += ws.forward(&model.head, &input, y_hat) + model.whitening.log_jacobian;
                canvas.set(i, j, y);
            }
        }
    }
    log_q
}

/// Draws an image pixel by pixel in raster order from the model.
pub fn ancestral_sample<R: Rng + ?Sized>(
    model: &RideModel,
    height: usize,
    width: usize,
    rng: &mut R,
    seed: Option<&SeedRegion>,
) -> Result<Image> {
    ensure!(height >= 1 && width >= 1, "sample dimensions must be positive");
    model.validate()?;
    let mut canvas = Image::zeros(height, width);
    if let Some(s) = seed {
        s.check(height, width)?;
        canvas.paste(0, 0, &s.image)?;
    }
    ancestral_fill(model, &mut canvas, |i, j| seed.is_none_or(|s| !s.covers(i, j)), rng);
    Ok(canvas)
}

/// Resamples the `region` pixels of `image` ancestrally, using the model on
/// the `window` crop only. Returns the proposed image and the log proposal
/// density of the new values.
pub fn propose_in_window<R: Rng + ?Sized>(
    model: &RideModel,
    image: &Image,
    region: &Region,
    window: Rect,
    rng: &mut R,
) -> Result<(Image, f64)> {
    check_region(image, region, window)?;
    let mut crop = image.crop(window.top, window.left, window.height, window.width)?;
    let log_q = ancestral_fill(
        model,
        &mut crop,
        |i, j| region.contains(i + window.top, j + window.left),
        rng,
    );
    let mut out = image.clone();
    out.paste(window.top, window.left, &crop)?;
    Ok((out, log_q))
}

fn check_region(image: &Image, region: &Region, window: Rect) -> Result<()> {
    ensure!(
        window.fits_in(image.height(), image.width()),
        "window {window:?} is not inside the {}x{} image",
        image.height(),
        image.width()
    );
    ensure!(
        region.pixels().iter().all(|&(i, j)| window.contains(i, j)),
        "region is not inside window {window:?}"
    );
    Ok(())
}

/// Window joint log-density and the summed conditionals of the region
/// pixels (the density an ancestral proposal of the region would have).
fn window_terms(model: &RideModel, image: &Image, region: &Region, window: Rect) -> Result<(f64, f64)> {
    let crop = image.crop(window.top, window.left, window.height, window.width)?;
    let (per_pixel, joint) = model.log_density(&crop)?;
    let proposal = region
        .pixels()
        .iter()
        .map(|&(i, j)| per_pixel.get(i - window.top, j - window.left))
        .sum();
    Ok((joint, proposal))
}

/// log of p(x′)/p(x) · q(x)/q(x′) over the window, where q is the ancestral
/// proposal density of the region given the pixels before it in the window.
pub fn log_acceptance_ratio(
    model: &RideModel,
    current: &Image,
    proposed: &Image,
    region: &Region,
    window: Rect,
) -> Result<f64> {
    ensure!(
        current.height() == proposed.height() && current.width() == proposed.width(),
        "current and proposed images differ in shape"
    );
    check_region(current, region, window)?;
    for i in 0..current.height() {
        for j in 0..current.width() {
            if current.get(i, j).to_bits() != proposed.get(i, j).to_bits() && !region.contains(i, j) {
                return Err(crate::error::Error::domain(format!(
                    "images differ at ({i}, {j}), outside the proposal region"
                )));
            }
        }
    }
    let (joint_x, q_x) = window_terms(model, current, region, window)?;
    let (joint_y, q_y) = window_terms(model, proposed, region, window)?;
    Ok((joint_y - joint_x) + (q_x - q_y))
}

/// min{1, exp(Δ)}, with Δ = −∞ or NaN mapped to 0.
pub fn acceptance_from_log_ratio(delta: f64) -> f64 {
    if delta.is_nan() {
        0.0
    } else if delta >= 0.0 {
        1.0
    } else {
        delta.exp()
    }
}

pub fn acceptance_probability(
    model: &RideModel,
    current: &Image,
    proposed: &Image,
    region: &Region,
    window: Rect,
) -> Result<f64> {
    log_acceptance_ratio(model, current, proposed, region, window).map(acceptance_from_log_ratio)
}
