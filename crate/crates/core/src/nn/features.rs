//! Grid-mean region features: each cell yields mean RGB plus the normalized
//! cell-center coordinates.

use crate::img::{MaskGrid, RGBImage};
use crate::matcher::apply_mask;

use super::NnError;

/// Split the image into `grid x grid` cells and return per-cell
/// `[mean R, mean G, mean B, cx, cy]` with channels in [0,1] and centers
/// normalized by the grid. When a mask is given the image is masked first.
pub fn extract_object_features(
    image: &RGBImage,
    grid: usize,
    mask: Option<&MaskGrid>,
) -> Result<Vec<Vec<f64>>, NnError> {
    if grid == 0 || !image.width.is_multiple_of(grid) || image.width != image.height {
        return Err(NnError::BadGrid {
            grid,
            size: image.width,
        });
    }
    let masked;
    let img = match mask {
        Some(m) => {
            masked = apply_mask(image, m).map_err(|_| NnError::ShapeMismatch {
                what: "mask pixels",
                want: image.width * image.height,
                got: m.values.len(),
            })?;
            &masked
        }
        None => image,
    };
    let cell = image.width / grid;
    let mut out = Vec::with_capacity(grid * grid);
    for row in 0..grid {
        for col in 0..grid {
            let mut sums = [0.0f64; 3];
            for y in row * cell..(row + 1) * cell {
                for x in col * cell..(col + 1) * cell {
                    let p = img.get(x, y);
                    sums[0] += p[0] as f64;
                    sums[1] += p[1] as f64;
                    sums[2] += p[2] as f64;
                }
            }
            let denom = (cell * cell) as f64 * 255.0;
            out.push(vec![
                sums[0] / denom,
                sums[1] / denom,
                sums[2] / denom,
                (col as f64 + 0.5) / grid as f64,
                (row as f64 + 0.5) / grid as f64,
            ]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_image_has_identical_colors_distinct_coords() {
        let img = RGBImage::filled(64, 64, [102, 102, 102]);
        let feats = extract_object_features(&img, 8, None).unwrap();
        assert_eq!(feats.len(), 64);
        for f in &feats {
            assert_eq!(f.len(), 5);
            assert!((f[0] - 102.0 / 255.0).abs() < 1e-12);
            assert_eq!(f[0], f[1]);
            assert_eq!(f[1], f[2]);
        }
        let coords: std::collections::BTreeSet<String> = feats
            .iter()
            .map(|f| format!("{:.6},{:.6}", f[3], f[4]))
            .collect();
        assert_eq!(coords.len(), 64);
    }

    #[test]
    fn zero_mask_zeroes_colors_keeps_coords() {
        let img = RGBImage::filled(64, 64, [200, 100, 50]);
        let mask = MaskGrid::zeros(64, 64);
        let feats = extract_object_features(&img, 4, Some(&mask)).unwrap();
        for (i, f) in feats.iter().enumerate() {
            assert_eq!(&f[..3], &[0.0, 0.0, 0.0]);
            let col = i % 4;
            let row = i / 4;
            assert!((f[3] - (col as f64 + 0.5) / 4.0).abs() < 1e-12);
            assert!((f[4] - (row as f64 + 0.5) / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_grid_rejected() {
        let img = RGBImage::filled(64, 64, [0, 0, 0]);
        assert!(matches!(
            extract_object_features(&img, 7, None),
            Err(NnError::BadGrid { .. })
        ));
    }
}
