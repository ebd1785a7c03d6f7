use rand::Rng;

use super::Image;
use crate::error::{ensure, Result};

/// Parameters of the dead-leaves occlusion model.
#[derive(Debug, Clone, PartialEq)]
pub struct DeadLeavesConfig {
    pub size: usize,
    pub disk_count: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Radii follow p(r) ∝ r^(-radius_exponent) on [radius_min, radius_max].
    pub radius_exponent: f64,
    pub intensity_range: (f64, f64),
    pub background: f64,
}

impl Default for DeadLeavesConfig {
    fn default() -> Self {
        DeadLeavesConfig {
            size: 256,
            disk_count: 4000,
            radius_min: 2.0,
            radius_max: 64.0,
            radius_exponent: 3.0,
            intensity_range: (0.0, 1.0),
            background: 0.5,
        }
    }
}

impl DeadLeavesConfig {
    /// Defaults for a `size`×`size` image, keeping the disk density of the
    /// 256×256 default (4000 disks).
    pub fn for_size(size: usize) -> Self {
        let area_ratio = (size * size) as f64 / (256.0 * 256.0);
        DeadLeavesConfig {
            size,
            disk_count: ((4000.0 * area_ratio).ceil() as usize).max(1),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.size > 0, "dead leaves size must be positive");
        ensure!(
            self.radius_min > 0.0 && self.radius_min <= self.radius_max && self.radius_max.is_finite(),
            "invalid radius range [{}, {}]",
            self.radius_min,
            self.radius_max
        );
        ensure!(self.radius_exponent.is_finite(), "radius exponent must be finite");
        let (lo, hi) = self.intensity_range;
        ensure!(
            (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi,
            "intensity range ({lo}, {hi}) must lie within [0, 1]"
        );
        ensure!((0.0..=1.0).contains(&self.background), "background must lie within [0, 1]");
        Ok(())
    }

    /// Inverse-CDF draw from the truncated power law.
    fn sample_radius<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = (self.radius_min, self.radius_max);
        if lo == hi {
            return lo;
        }
        let u: f64 = rng.random();
        let k = self.radius_exponent;
        if (k - 1.0).abs() < 1e-12 {
            (lo.ln() + u * (hi.ln() - lo.ln())).exp()
        } else {
            let e = 1.0 - k;
            (lo.powf(e) + u * (hi.powf(e) - lo.powf(e))).powf(1.0 / e)
        }
    }
}

/// One occluding disk, in pixel units. Pixel (i, j) has its center at
/// (i + 0.5, j + 0.5).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub center_row: f64,
    pub center_col: f64,
    pub radius: f64,
    pub intensity: f64,
}

impl Disk {
    fn paint(&self, img: &mut Image) {
        let (h, w) = (img.height() as f64, img.width() as f64);
        let r2 = self.radius * self.radius;
        let i0 = (self.center_row - self.radius - 0.5).floor().max(0.0) as usize;
        let i1 = (self.center_row + self.radius - 0.5).ceil().min(h - 1.0).max(0.0) as usize;
        let j0 = (self.center_col - self.radius - 0.5).floor().max(0.0) as usize;
        let j1 = (self.center_col + self.radius - 0.5).ceil().min(w - 1.0).max(0.0) as usize;
        for i in i0..=i1 {
            let di = i as f64 + 0.5 - self.center_row;
            for j in j0..=j1 {
                let dj = j as f64 + 0.5 - self.center_col;
                if di * di + dj * dj <= r2 {
                    img.set(i, j, self.intensity);
                }
            }
        }
    }
}

/// Paints `disks` back to front over a constant background.
pub fn render_disks(size: usize, background: f64, disks: &[Disk]) -> Image {
    let mut img = Image::filled(size, size, background);
    for d in disks {
        d.paint(&mut img);
    }
    img
}

/// Draws a dead-leaves image: `disk_count` disks with uniform centers,
/// power-law radii and uniform intensities, later disks occluding earlier
/// ones.
pub fn generate_dead_leaves<R: Rng + ?Sized>(cfg: &DeadLeavesConfig, rng: &mut R) -> Result<Image> {
    cfg.validate()?;
    let size = cfg.size as f64;
    let (lo, hi) = cfg.intensity_range;
    let disks: Vec<Disk> = (0..cfg.disk_count)
        .map(|_| {
            let center_row = rng.random::<f64>() * size;
            let center_col = rng.random::<f64>() * size;
            let radius = cfg.sample_radius(rng);
            let intensity = lo + (hi - lo) * rng.random::<f64>();
            Disk {
                center_row,
                center_col,
                radius,
                intensity,
            }
        })
        .collect();
    Ok(render_disks(cfg.size, cfg.background, &disks))
}
