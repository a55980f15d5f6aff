use std::io::Write;
use std::path::Path;

use crate::agg::{argmax, InstanceGrid};
use crate::error::{Error, Result};
use crate::nn::FcnModel;
use crate::tensor::{Scalar, Tensor};

/// Opacity of the class color painted over the image.
pub const HEATMAP_ALPHA: f32 = 0.5;

/// Receptive field and downsampling factor of the network behind a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridGeometry {
    pub field: usize,
    pub stride: usize,
}

impl GridGeometry {
    pub fn of<T: Scalar>(model: &FcnModel<T>) -> Self {
        Self {
            field: model.receptive_field(),
            stride: model.downsample(),
        }
    }
}

/// Pink, purple, tan, then distinct fallbacks.
pub fn default_palette() -> Vec<[u8; 3]> {
    vec![[230, 60, 60], [60, 90, 230], [240, 200, 40], [40, 190, 90], [160, 60, 200], [40, 200, 200]]
}

/// An RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB bytes.
    pub pixels: Vec<u8>,
}

impl Heatmap {
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    /// Binary PPM (P6).
    pub fn write_ppm<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)?;
        Ok(())
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ppm(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Paints the `d × d` centre block of every foreground cell in its argmax
/// class color over `image` (`H × W × 3`, values in `[0, 1]`).
pub fn render_heatmap<T: Scalar>(
    image: &Tensor<f32>,
    grid: &InstanceGrid<T>,
    geometry: GridGeometry,
    palette: &[[u8; 3]],
) -> Result<Heatmap> {
    let shape = image.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::InvalidArgument(format!("heatmap needs an RGB image, got {shape:?}")));
    }
    if palette.len() < grid.classes() {
        return Err(Error::InvalidArgument(format!(
            "palette has {} colors for {} classes",
            palette.len(),
            grid.classes()
        )));
    }
    let (h, w) = (shape[0], shape[1]);
    let (gh, gw) = (grid.probs().shape()[0], grid.probs().shape()[1]);
    let GridGeometry { field, stride } = geometry;
    if h < field || (h - field) / stride + 1 != gh || (w - field) / stride + 1 != gw {
        return Err(Error::InvalidArgument(format!(
            "grid {gh}×{gw} does not belong to a {h}×{w} image"
        )));
    }
    let mut pixels: Vec<u8> = image.data().iter().map(|&v| to_byte(v)).collect();
    let offset = (field - stride) / 2;
    for &cell in grid.foreground() {
        let color = palette[argmax(grid.instance(cell))];
        let (gy, gx) = (cell / gw, cell % gw);
        for y in gy * stride + offset..gy * stride + offset + stride {
            for x in gx * stride + offset..gx * stride + offset + stride {
                let o = (y * w + x) * 3;
                for ch in 0..3 {
                    let base = pixels[o + ch] as f32;
                    pixels[o + ch] = ((1.0 - HEATMAP_ALPHA) * base + HEATMAP_ALPHA * color[ch] as f32).round() as u8;
                }
            }
        }
    }
    Ok(Heatmap {
        width: w,
        height: h,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const GEO: GridGeometry = GridGeometry { field: 11, stride: 4 };

    fn grid_from(cells: &[[f32; 2]], mask: Vec<bool>) -> InstanceGrid<f32> {
        let side = (cells.len() as f64).sqrt() as usize;
        let data = cells.iter().flatten().copied().collect();
        InstanceGrid::from_flat(Tensor::new(&[side, side, 2], data).unwrap(), mask).unwrap()
    }

    #[test]
    fn uniform_predictions_paint_one_color() {
        let image = Tensor::zeros(&[23, 23, 3]);
        let grid = grid_from(&[[0.2, 0.8]; 16], vec![true; 16]);
        let hm = render_heatmap(&image, &grid, GEO, &default_palette()).unwrap();
        let expected = [30, 45, 115];
        for y in 3..19 {
            for x in 3..19 {
                assert_eq!(hm.pixel(y, x), expected);
            }
        }
        assert_eq!(hm.pixel(0, 0), [0, 0, 0]);
        assert_eq!(hm.pixel(19, 19), [0, 0, 0]);
    }

    #[test]
    fn one_changed_cell_changes_one_block() {
        let image = Tensor::full(&[23, 23, 3], 0.5);
        let mut cells = [[0.9, 0.1]; 16];
        let a = render_heatmap(&image, &grid_from(&cells, vec![true; 16]), GEO, &default_palette()).unwrap();
        cells[5] = [0.1, 0.9];
        let b = render_heatmap(&image, &grid_from(&cells, vec![true; 16]), GEO, &default_palette()).unwrap();
        let mut changed = Vec::new();
        for y in 0..23 {
            for x in 0..23 {
                if a.pixel(y, x) != b.pixel(y, x) {
                    changed.push((y, x));
                }
            }
        }
        assert_eq!(changed.len(), 16);
        assert!(changed.iter().all(|&(y, x)| (7..11).contains(&y) && (7..11).contains(&x)));
    }

    #[test]
    fn blocks_follow_argmax_and_skip_background() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let palette = default_palette();
        let image = Tensor::zeros(&[23, 23, 3]);
        let cells: Vec<[f32; 2]> = (0..16)
            .map(|_| {
                let p: f32 = rng.gen_range(0.0..1.0);
                [p, 1.0 - p]
            })
            .collect();
        let mut mask = vec![true; 16];
        mask[0] = false;
        let grid = grid_from(&cells, mask);
        let hm = render_heatmap(&image, &grid, GEO, &palette).unwrap();
        for cell in 0..16 {
            let (y, x) = (3 + (cell / 4) * 4, 3 + (cell % 4) * 4);
            let expected = if cell == 0 {
                [0, 0, 0]
            } else {
                let c = palette[if cells[cell][1] > cells[cell][0] { 1 } else { 0 }];
                [c[0] / 2 + c[0] % 2, c[1] / 2 + c[1] % 2, c[2] / 2 + c[2] % 2]
            };
            assert_eq!(hm.pixel(y, x), expected, "cell {cell}");
        }
    }

    #[test]
    fn small_palette_and_bad_geometry_fail() {
        let image = Tensor::zeros(&[23, 23, 3]);
        let grid = grid_from(&[[0.5, 0.5]; 16], vec![true; 16]);
        assert!(render_heatmap(&image, &grid, GEO, &[[0, 0, 0]]).is_err());
        let wrong = Tensor::zeros(&[27, 27, 3]);
        assert!(render_heatmap(&wrong, &grid, GEO, &default_palette()).is_err());
    }

    #[test]
    fn ppm_header() {
        let hm = Heatmap { width: 2, height: 1, pixels: vec![1, 2, 3, 4, 5, 6] };
        let mut buf = Vec::new();
        hm.write_ppm(&mut buf).unwrap();
        assert_eq!(&buf[..11], b"P6\n2 1\n255\n");
        assert_eq!(&buf[11..], &[1, 2, 3, 4, 5, 6]);
    }
}
