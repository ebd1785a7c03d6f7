use super::Image;
use crate::error::{ensure, Result};

/// Shape of a causal pixel neighborhood.
///
/// For pixel (i, j) the neighborhood holds every pixel of rows
/// `i - rows_above ..= i - 1` within columns `j - width/2 ..= j + width/2`,
/// followed by the `width/2` pixels immediately left of (i, j) in row i.
/// Offsets are listed in raster order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborhoodSpec {
    width: usize,
    rows_above: usize,
}

impl NeighborhoodSpec {
    pub fn new(width: usize, rows_above: usize) -> Result<Self> {
        ensure!(width % 2 == 1, "neighborhood width must be odd, got {width}");
        ensure!(rows_above >= 1, "neighborhood needs at least one row above");
        Ok(NeighborhoodSpec { width, rows_above })
    }

    /// Neighborhood `width` pixels wide and `height` pixels high, the
    /// current row included.
    pub fn with_height(width: usize, height: usize) -> Result<Self> {
        ensure!(height >= 2, "neighborhood height must be at least 2, got {height}");
        Self::new(width, height - 1)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows_above(&self) -> usize {
        self.rows_above
    }

    pub fn half_width(&self) -> usize {
        self.width / 2
    }

    /// Context dimensionality D.
    pub fn dim(&self) -> usize {
        self.rows_above * self.width + self.half_width()
    }

    /// (row, column) offsets relative to the predicted pixel.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let half = self.half_width() as isize;
        let mut out = Vec::with_capacity(self.dim());
        for di in -(self.rows_above as isize)..0 {
            for dj in -half..=half {
                out.push((di, dj));
            }
        }
        for dj in -half..0 {
            out.push((0, dj));
        }
        out
    }

    /// Writes the context of (i, j) into `out`, reading 0.0 outside the image.
    pub fn fill_context(&self, image: &Image, i: usize, j: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        let half = self.half_width() as isize;
        let (i, j) = (i as isize, j as isize);
        let mut k = 0;
        for di in -(self.rows_above as isize)..0 {
            let row = i + di;
            for dj in -half..=half {
                out[k] = image.get_padded(row, j + dj);
                k += 1;
            }
        }
        for dj in -half..0 {
            out[k] = image.get_padded(i, j + dj);
            k += 1;
        }
    }
}

/// Context vector of pixel (i, j) under zero padding.
pub fn extract_context(image: &Image, i: usize, j: usize, spec: &NeighborhoodSpec) -> Result<Vec<f64>> {
    ensure!(
        i < image.height() && j < image.width(),
        "pixel ({i},{j}) outside {}x{} image",
        image.height(),
        image.width()
    );
    let mut out = vec![0.0; spec.dim()];
    spec.fill_context(image, i, j, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    #[test]
    fn validates_shape() {
        assert!(NeighborhoodSpec::new(4, 2).is_err());
        assert!(NeighborhoodSpec::new(5, 0).is_err());
        let spec = NeighborhoodSpec::with_height(9, 5).unwrap();
        assert_eq!((spec.width(), spec.rows_above()), (9, 4));
        assert_eq!(spec.dim(), 4 * 9 + 4);
        assert_eq!(NeighborhoodSpec::new(5, 2).unwrap().dim(), 12);
    }

    #[test]
    fn offsets_are_strictly_causal() {
        for w in [1, 3, 5, 9] {
            for r in 1..5 {
                let spec = NeighborhoodSpec::new(w, r).unwrap();
                let offs = spec.offsets();
                assert_eq!(offs.len(), spec.dim());
                for &(di, dj) in &offs {
                    assert!(di < 0 || (di == 0 && dj < 0), "({di},{dj})");
                }
                // raster order, no duplicates
                for pair in offs.windows(2) {
                    assert!(pair[0] < pair[1]);
                }
            }
        }
    }

    #[test]
    fn origin_context_is_all_padding() {
        let img = Image::from_fn(4, 4, |i, j| 1.0 + (i * 4 + j) as f64).unwrap();
        let spec = NeighborhoodSpec::new(5, 2).unwrap();
        assert!(extract_context(&img, 0, 0, &spec).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn small_example_ordering() {
        let img = Image::from_fn(3, 3, |i, j| (10 * i + j) as f64 + 1.0).unwrap();
        let spec = NeighborhoodSpec::new(3, 1).unwrap();
        let ctx = extract_context(&img, 1, 1, &spec).unwrap();
        assert_eq!(ctx, vec![img.get(0, 0), img.get(0, 1), img.get(0, 2), img.get(1, 0)]);
        assert!(extract_context(&img, 3, 0, &spec).is_err());
    }

    #[test]
    fn matches_index_arithmetic_oracle() {
        let mut rng = stream(11, &[]);
        let (h, w) = (12, 15);
        let img = Image::from_fn(h, w, |_, _| rng.random()).unwrap();
        let spec = NeighborhoodSpec::new(5, 3).unwrap();
        for i in 0..h {
            for j in 0..w {
                let ctx = extract_context(&img, i, j, &spec).unwrap();
                // independent enumeration over the flat buffer
                let mut expect = Vec::new();
                for r in (i as i64 - 3)..(i as i64) {
                    for c in (j as i64 - 2)..=(j as i64 + 2) {
                        expect.push(flat(&img, r, c));
                    }
                }
                for c in (j as i64 - 2)..(j as i64) {
                    expect.push(flat(&img, i as i64, c));
                }
                assert_eq!(ctx, expect, "pixel ({i},{j})");
            }
        }
    }

    fn flat(img: &Image, r: i64, c: i64) -> f64 {
        if r < 0 || c < 0 || r >= img.height() as i64 || c >= img.width() as i64 {
            0.0
        } else {
            img.values()[r as usize * img.width() + c as usize]
        }
    }

    #[test]
    fn context_ignores_current_and_future_pixels() {
        let mut rng = stream(5, &[]);
        let (h, w) = (6, 7);
        let img = Image::from_fn(h, w, |_, _| rng.random()).unwrap();
        let spec = NeighborhoodSpec::new(5, 2).unwrap();
        for i in 0..h {
            for j in 0..w {
                let base = extract_context(&img, i, j, &spec).unwrap();
                for k in (i * w + j)..(h * w) {
                    let mut m = img.clone();
                    m.set(k / w, k % w, 99.0);
                    let ctx = extract_context(&m, i, j, &spec).unwrap();
                    assert!(base.iter().zip(&ctx).all(|(a, b)| a.to_bits() == b.to_bits()));
                }
            }
        }
    }
}
