use crate::tensor::{Scalar, Tensor};
use crate::nn::FcnModel;

/// Downscales a full-resolution binary mask to the FCN output grid.
///
/// A grid cell is foreground when at least half of the pixels in its
/// receptive field are. If no cell qualifies, the cell with the largest
/// foreground fraction (lowest index on ties) is switched on so the grid is
/// never empty.
pub fn downscale_mask<T: Scalar>(full_mask: &Tensor<f32>, model: &FcnModel<T>) -> Tensor<f32> {
    downscale_mask_with(full_mask, model.receptive_field(), model.downsample())
}

pub fn downscale_mask_with(full_mask: &Tensor<f32>, field: usize, stride: usize) -> Tensor<f32> {
    let (h, w) = (full_mask.shape()[0], full_mask.shape()[1]);
    assert!(h >= field && w >= field, "mask {h}×{w} smaller than field {field}");
    let (gh, gw) = ((h - field) / stride + 1, (w - field) / stride + 1);
    let integral = IntegralMask::new(full_mask);
    let counts: Vec<usize> = (0..gh * gw)
        .map(|cell| {
            let (i, j) = (cell / gw, cell % gw);
            integral.count(i * stride, j * stride, field, field)
        })
        .collect();
    let area = field * field;
    let mut grid: Vec<f32> = counts
        .iter()
        .map(|&c| if 2 * c >= area { 1.0 } else { 0.0 })
        .collect();
    if grid.iter().all(|&g| g == 0.0) {
        let best = counts
            .iter()
            .enumerate()
            .fold(0, |best, (i, &c)| if c > counts[best] { i } else { best });
        grid[best] = 1.0;
    }
    Tensor::new(&[gh, gw], grid).expect("grid shape")
}

/// Summed-area table over a binary `H × W` mask.
pub(crate) struct IntegralMask {
    width: usize,
    sums: Vec<usize>,
}

impl IntegralMask {
    pub(crate) fn new(mask: &Tensor<f32>) -> Self {
        let (h, w) = (mask.shape()[0], mask.shape()[1]);
        let stride = w + 1;
        let mut sums = vec![0usize; (h + 1) * stride];
        for y in 0..h {
            let mut row = 0;
            for x in 0..w {
                row += usize::from(mask.data()[y * w + x] != 0.0);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        Self { width: stride, sums }
    }

    /// Foreground pixels in the `rows × cols` window at `(y, x)`.
    pub(crate) fn count(&self, y: usize, x: usize, rows: usize, cols: usize) -> usize {
        let s = |yy: usize, xx: usize| self.sums[yy * self.width + xx];
        s(y + rows, x + cols) + s(y, x) - s(y, x + cols) - s(y + rows, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(mask: &Tensor<f32>, field: usize, stride: usize) -> Vec<f32> {
        let (h, w) = (mask.shape()[0], mask.shape()[1]);
        let (gh, gw) = ((h - field) / stride + 1, (w - field) / stride + 1);
        let mut out = Vec::new();
        for i in 0..gh {
            for j in 0..gw {
                let mut n = 0;
                for y in i * stride..i * stride + field {
                    for x in j * stride..j * stride + field {
                        n += (mask.at(&[y, x]) != 0.0) as usize;
                    }
                }
                out.push(if n * 2 >= field * field { 1.0 } else { 0.0 });
            }
        }
        out
    }

    #[test]
    fn constant_masks() {
        let ones = downscale_mask_with(&Tensor::full(&[64, 64], 1.0), 11, 4);
        assert_eq!(ones.shape(), &[14, 14]);
        assert!(ones.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_pixel_uses_fallback() {
        let mut m = Tensor::<f32>::zeros(&[32, 32]);
        let o = m.offset(&[20, 9]);
        m.data_mut()[o] = 1.0;
        let g = downscale_mask_with(&m, 11, 4);
        assert_eq!(g.sum(), 1.0);
        // Cells covering (20, 9): rows i with 4i ≤ 20 < 4i+11 → i ∈ {3,4,5}; the
        // first with a hit in scan order is (3, 0).
        assert_eq!(g.at(&[3, 0]), 1.0);
    }

    #[test]
    fn half_planes_match_brute_force() {
        for (h, w, cut) in [(64, 64, 30), (40, 33, 17), (11, 11, 5), (50, 50, 0)] {
            let m = Tensor::from_fn(&[h, w], |i| if i % w >= cut { 1.0 } else { 0.0 });
            let expected = brute(&m, 11, 4);
            let got = downscale_mask_with(&m, 11, 4);
            if expected.iter().any(|&v| v == 1.0) {
                assert_eq!(got.data(), &expected[..]);
            }
            let diagonal = Tensor::from_fn(&[h, w], |i| if i % w + i / w >= cut + 10 { 1.0 } else { 0.0 });
            let expected = brute(&diagonal, 11, 4);
            if expected.iter().any(|&v| v == 1.0) {
                assert_eq!(downscale_mask_with(&diagonal, 11, 4).data(), &expected[..]);
            }
        }
    }
}
