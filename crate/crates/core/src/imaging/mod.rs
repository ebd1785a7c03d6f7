//! Grayscale images, codecs, causal neighborhoods and synthetic data.

mod deadleaves;
mod io;
mod neighborhood;

pub use deadleaves::{generate_dead_leaves, render_disks, DeadLeavesConfig, Disk};
pub use io::{load_fgrd, load_image, load_pgm, save_fgrd, save_pgm, ImageFormat};
pub use neighborhood::{extract_context, NeighborhoodSpec};

use rand::Rng;

use crate::error::{ensure, Error, Result};

/// A row-major grid of finite real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        ensure!(height > 0 && width > 0, "image must be at least 1x1, got {height}x{width}");
        ensure!(
            values.len() == height * width,
            "expected {} values for a {height}x{width} image, got {}",
            height * width,
            values.len()
        );
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite value {} at index {k}", values[k])));
        }
        Ok(Image { height, width, values })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && value.is_finite());
        Image {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    /// Builds an image by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                values.push(f(i, j));
            }
        }
        Image::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    /// Pixel at signed coordinates, 0.0 outside the grid.
    #[inline]
    pub fn get_padded(&self, i: isize, j: isize) -> f64 {
        if i < 0 || j < 0 || i as usize >= self.height || j as usize >= self.width {
            0.0
        } else {
            self.values[i as usize * self.width + j as usize]
        }
    }

    /// Sets a pixel. Panics on a non-finite value or out-of-range index.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(value.is_finite(), "non-finite pixel value {value}");
        self.values[i * self.width + j] = value;
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        ensure!(
            height > 0 && width > 0 && top + height <= self.height && left + width <= self.width,
            "crop {height}x{width} at ({top},{left}) exceeds {}x{} image",
            self.height,
            self.width
        );
        let mut values = Vec::with_capacity(height * width);
        for i in top..top + height {
            values.extend_from_slice(&self.values[i * self.width + left..i * self.width + left + width]);
        }
        Ok(Image { height, width, values })
    }

    /// Writes `patch` into this image with its top-left corner at (top, left).
    pub fn paste(&mut self, top: usize, left: usize, patch: &Image) -> Result<()> {
        ensure!(
            top + patch.height <= self.height && left + patch.width <= self.width,
            "paste of {}x{} at ({top},{left}) exceeds {}x{} image",
            patch.height,
            patch.width,
            self.height,
            self.width
        );
        for i in 0..patch.height {
            let dst = (top + i) * self.width + left;
            self.values[dst..dst + patch.width]
                .copy_from_slice(&patch.values[i * patch.width..(i + 1) * patch.width]);
        }
        Ok(())
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.height, self.width, |i, j| self.get(i, self.width - 1 - j)).unwrap()
    }

    pub fn flip_vertical(&self) -> Image {
        Image::from_fn(self.height, self.width, |i, j| self.get(self.height - 1 - i, j)).unwrap()
    }

    pub fn transpose(&self) -> Image {
        Image::from_fn(self.width, self.height, |i, j| self.get(j, i)).unwrap()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Adds uniform dequantization noise to 8-bit intensities and rescales to
/// [0, 1): each output is `(v + u) / 256` with `u ~ U[0, 1)`.
pub fn dequantize<R: Rng + ?Sized>(img8: &Image, rng: &mut R) -> Result<Image> {
    let below_one = f64::from_bits(1.0f64.to_bits() - 1);
    let mut values = Vec::with_capacity(img8.len());
    for (k, &v) in img8.values.iter().enumerate() {
        ensure!(
            v.fract() == 0.0 && (0.0..=255.0).contains(&v),
            "dequantize expects integers in [0,255], found {v} at index {k}"
        );
        let u: f64 = rng.random();
        // (255 + u)/256 can round up to exactly 1.0 for u close to 1.
        values.push(((v + u) / 256.0).min(below_one));
    }
    Ok(Image {
        height: img8.height,
        width: img8.width,
        values,
    })
}

/// Maps intensities in [0, 1) to 8-bit levels `floor(256 v)`, clamped to
/// [0, 255].
pub fn quantize(img: &Image) -> Image {
    Image {
        height: img.height,
        width: img.width,
        values: img.values.iter().map(|&v| (v * 256.0).floor().clamp(0.0, 255.0)).collect(),
    }
}

/// All axis-aligned `side`×`side` patches with the given stride, in raster
/// order of their top-left corners. Remainders smaller than `side` are
/// dropped.
pub fn extract_patches(image: &Image, side: usize, stride: usize) -> Result<Vec<Image>> {
    ensure!(side > 0 && stride > 0, "patch side and stride must be positive");
    ensure!(
        side <= image.height.min(image.width),
        "patch side {side} exceeds {}x{} image",
        image.height,
        image.width
    );
    let rows = (image.height - side) / stride + 1;
    let cols = (image.width - side) / stride + 1;
    let mut patches = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            patches.push(image.crop(r * stride, c * stride, side, side)?);
        }
    }
    Ok(patches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        assert!(Image::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Image::new(0, 2, vec![]).is_err());
        assert!(Image::new(1, 2, vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn dequantize_boundaries() {
        struct Fixed(u64);
        impl rand::RngCore for Fixed {
            fn next_u32(&mut self) -> u32 {
                self.0 as u32
            }
            fn next_u64(&mut self) -> u64 {
                self.0
            }
            fn fill_bytes(&mut self, dst: &mut [u8]) {
                rand_core_fill(self.0, dst)
            }
        }
        fn rand_core_fill(v: u64, dst: &mut [u8]) {
            for (k, b) in dst.iter_mut().enumerate() {
                *b = (v >> (8 * (k % 8))) as u8;
            }
        }
        let img = Image::new(1, 2, vec![0.0, 255.0]).unwrap();
        let lo = dequantize(&img, &mut Fixed(0)).unwrap();
        assert_eq!(lo.get(0, 0), 0.0);
        let hi = dequantize(&img, &mut Fixed(u64::MAX)).unwrap();
        assert!(hi.get(0, 1) < 1.0);
        assert!(hi.get(0, 1) > 255.0 / 256.0);
    }

    #[test]
    fn dequantize_rejects_non_integral() {
        let mut rng = stream(0, &[]);
        assert!(dequantize(&Image::new(1, 1, vec![0.5]).unwrap(), &mut rng).is_err());
        assert!(dequantize(&Image::new(1, 1, vec![256.0]).unwrap(), &mut rng).is_err());
        assert!(dequantize(&Image::new(1, 1, vec![-1.0]).unwrap(), &mut rng).is_err());
    }

    #[test]
    fn dequantize_mean_matches_bin_center() {
        let v = 77.0;
        let n = 100_000;
        let img = Image::filled(1, n, v);
        let out = dequantize(&img, &mut stream(3, &[])).unwrap();
        let mean = out.mean();
        // u ~ U[0,1) has sd 1/sqrt(12); the mean of n draws scaled by 1/256.
        let sigma = (1.0 / 12f64).sqrt() / 256.0 / (n as f64).sqrt();
        assert!((mean - (v + 0.5) / 256.0).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn quantize_inverts_dequantize() {
        let img8 = Image::from_fn(4, 4, |i, j| ((i * 61 + j * 17) % 256) as f64).unwrap();
        let deq = dequantize(&img8, &mut stream(1, &[])).unwrap();
        assert_eq!(quantize(&deq), img8);
    }

    #[test]
    fn patch_counts() {
        let img = Image::from_fn(64, 64, |i, j| (i * 64 + j) as f64).unwrap();
        let p = extract_patches(&img, 64, 64).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0], img);

        let img = Image::from_fn(128, 128, |i, j| (i * 128 + j) as f64).unwrap();
        let p = extract_patches(&img, 64, 64).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p[1].get(0, 0), img.get(0, 64));
        assert_eq!(p[2].get(0, 0), img.get(64, 0));
        assert_eq!(p[3].get(63, 63), img.get(127, 127));

        let img = Image::zeros(100, 100);
        let per_axis = 1;
        assert_eq!(extract_patches(&img, 64, 64).unwrap().len(), per_axis * per_axis);
        assert!(extract_patches(&img, 101, 1).is_err());
    }

    #[test]
    fn flips_are_involutions() {
        let img = Image::from_fn(3, 5, |i, j| (i * 5 + j) as f64).unwrap();
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_vertical().flip_vertical(), img);
        assert_eq!(img.transpose().transpose(), img);
        assert_eq!(img.flip_horizontal().get(0, 0), 4.0);
    }
}
