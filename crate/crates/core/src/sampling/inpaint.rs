use rand::Rng;

use crate::error::{ensure, Result};
use crate::imaging::Image;
use crate::ride::RideModel;

use super::{acceptance_probability, ancestral_fill, propose_in_window, Rect, Region};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InpaintConfig {
    pub sweeps: usize,
    pub block_size: usize,
    pub block_overlap: usize,
    pub local_window: usize,
    pub init_candidates: usize,
    pub flip_between_sweeps: bool,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        InpaintConfig {
            sweeps: 100,
            block_size: 5,
            block_overlap: 2,
            local_window: 19,
            init_candidates: 5,
            flip_between_sweeps: true,
        }
    }
}

impl InpaintConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.block_size >= 1, "block size must be positive");
        ensure!(
            self.block_overlap < self.block_size,
            "block overlap {} must be smaller than block size {}",
            self.block_overlap,
            self.block_size
        );
        ensure!(
            self.local_window >= self.block_size,
            "local window {} is smaller than block size {}",
            self.local_window,
            self.block_size
        );
        ensure!(self.init_candidates >= 1, "need at least one initialization candidate");
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InpaintStats {
    /// Joint log-density (nats) of each initialization candidate.
    pub candidate_scores: Vec<f64>,
    /// (proposed, accepted) block updates per sweep.
    pub sweeps: Vec<(usize, usize)>,
}

impl InpaintStats {
    pub fn acceptance_rate(&self) -> f64 {
        let (p, a) = self.sweeps.iter().fold((0, 0), |(p, a), (sp, sa)| (p + sp, a + sa));
        if p == 0 {
            1.0
        } else {
            a as f64 / p as f64
        }
    }
}

fn mask_bounds(mask: &Image) -> Option<Rect> {
    let (mut top, mut left, mut bottom, mut right) = (usize::MAX, usize::MAX, 0, 0);
    for i in 0..mask.height() {
        for j in 0..mask.width() {
            if mask.get(i, j) != 0.0 {
                top = top.min(i);
                left = left.min(j);
                bottom = bottom.max(i + 1);
                right = right.max(j + 1);
            }
        }
    }
    (top != usize::MAX).then(|| Rect::new(top, left, bottom - top, right - left))
}

/// Block corners along one axis: stride `size − overlap` from `start`, until
/// the span `[start, start + len)` is covered.
fn block_starts(start: usize, len: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut out = vec![start];
    let end = start + len;
    while out.last().unwrap() + size < end {
        let next = out.last().unwrap() + stride;
        out.push(next);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flip {
    Horizontal,
    Vertical,
}

fn apply_flip(image: &Image, flip: Flip) -> Image {
    match flip {
        Flip::Horizontal => image.flip_horizontal(),
        Flip::Vertical => image.flip_vertical(),
    }
}

/// Fills the pixels where `mask` is 1 with a sample from the model posterior
/// given the pixels where it is 0, by Metropolis-within-Gibbs over
/// overlapping blocks with ancestral proposals.
pub fn inpaint<R: Rng + ?Sized>(
    model: &RideModel,
    image: &Image,
    mask: &Image,
    cfg: &InpaintConfig,
    rng: &mut R,
) -> Result<(Image, InpaintStats)> {
    cfg.validate()?;
    ensure!(
        mask.height() == image.height() && mask.width() == image.width(),
        "mask is {}x{} but image is {}x{}",
        mask.height(),
        mask.width(),
        image.height(),
        image.width()
    );
    ensure!(
        mask.values().iter().all(|&v| v == 0.0 || v == 1.0),
        "mask values must be 0 (observed) or 1 (missing)"
    );
    let mut stats = InpaintStats::default();
    if mask_bounds(mask).is_none() {
        return Ok((image.clone(), stats));
    }

    // Initialization: best of several ancestral fills by joint density.
    let mut best: Option<(f64, Image)> = None;
    for _ in 0..cfg.init_candidates {
        let mut cand = image.clone();
        ancestral_fill(model, &mut cand, |i, j| mask.get(i, j) != 0.0, rng);
        let score = model.log_density(&cand)?.1;
        stats.candidate_scores.push(score);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, cand));
        }
    }
    let mut current = best.unwrap().1;
    let mut cur_mask = mask.clone();
    let mut flips: Vec<Flip> = Vec::new();
    let stride = cfg.block_size - cfg.block_overlap;

    for sweep in 0..cfg.sweeps {
        let bounds = mask_bounds(&cur_mask).unwrap();
        let (h, w) = (current.height(), current.width());
        let (mut proposed, mut accepted) = (0, 0);
        for &top in &block_starts(bounds.top, bounds.height, cfg.block_size, stride) {
            for &left in &block_starts(bounds.left, bounds.width, cfg.block_size, stride) {
                let block = Rect::new(top, left, cfg.block_size.min(h - top), cfg.block_size.min(w - left));
                let region = Region::masked(block, &cur_mask);
                if region.is_empty() {
                    continue;
                }
                let window = Rect::window_around(&block, cfg.local_window, h, w);
                let (candidate, _) = propose_in_window(model, &current, &region, window, rng)?;
                let alpha = acceptance_probability(model, &current, &candidate, &region, window)?;
                proposed += 1;
                if rng.random::<f64>() < alpha {
                    current = candidate;
                    accepted += 1;
                }
            }
        }
        stats.sweeps.push((proposed, accepted));
        if cfg.flip_between_sweeps && sweep + 1 < cfg.sweeps {
            let flip = if rng.random::<bool>() {
                Flip::Horizontal
            } else {
                Flip::Vertical
            };
            current = apply_flip(&current, flip);
            cur_mask = apply_flip(&cur_mask, flip);
            flips.push(flip);
        }
    }
    for &flip in flips.iter().rev() {
        current = apply_flip(&current, flip);
    }
    // Observed pixels are never proposed, but copy them anyway so the
    // output is bit-exact regardless of any arithmetic above.
    let mut out = image.clone();
    for i in 0..image.height() {
        for j in 0..image.width() {
            if mask.get(i, j) != 0.0 {
                out.set(i, j, current.get(i, j));
            }
        }
    }
    Ok((out, stats))
}
