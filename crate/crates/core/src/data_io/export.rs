//! 8-bit binary PGM export of images and deformed coordinate grids.

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{ScalarField, Transform};

use super::atomic_write;

/// Upsampling factor of [`export_grid`] rasters.
pub const GRID_SCALE: usize = 4;

fn pgm(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Pixel values after normalization: min-max to `[0, 255]`, or, for a
/// constant image, the value clamped to `[0, 1]` and scaled.
pub fn to_gray(f: &ScalarField) -> Vec<u8> {
    let v = f.values();
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|&x| ((x - lo) / (hi - lo) * 255.0).round() as u8).collect()
    } else {
        v.iter().map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }
}

pub fn export_image(f: &ScalarField, path: &Path) -> Result<()> {
    let grid = f.grid();
    if grid.ndim() != 2 {
        return Err(Error::UnsupportedDimension(grid.ndim()));
    }
    let d = grid.dims();
    atomic_write(path, &pgm(d[0], d[1], &to_gray(f)))
}

/// Raster of every `stride`-th grid line mapped through `phi`, drawn white on
/// black at [`GRID_SCALE`] pixels per cell.
pub fn grid_raster(phi: &Transform, stride: usize) -> Result<(usize, usize, Vec<u8>)> {
    let grid = *phi.grid();
    if grid.ndim() != 2 {
        return Err(Error::UnsupportedDimension(grid.ndim()));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    let [n0, n1, _] = grid.dims3();
    let h = grid.spacing3();
    let (rows, cols) = (n0 * GRID_SCALE, n1 * GRID_SCALE);
    let mut px = vec![0u8; rows * cols];
    let u = phi.displacement();
    let mut plot = |x: [f64; 3]| {
        let d = u.sample(&x);
        let r = ((x[0] + d[0]) / h[0] * GRID_SCALE as f64).round() as i64;
        let c = ((x[1] + d[1]) / h[1] * GRID_SCALE as f64).round() as i64;
        let r = r.rem_euclid(rows as i64) as usize;
        let c = c.rem_euclid(cols as i64) as usize;
        px[r * cols + c] = 255;
    };
    for i in (0..n0).step_by(stride) {
        for s in 0..cols {
            plot([i as f64 * h[0], s as f64 * h[1] / GRID_SCALE as f64, 0.0]);
        }
    }
    for j in (0..n1).step_by(stride) {
        for s in 0..rows {
            plot([s as f64 * h[0] / GRID_SCALE as f64, j as f64 * h[1], 0.0]);
        }
    }
    Ok((rows, cols, px))
}

pub fn export_grid(phi: &Transform, stride: usize, path: &Path) -> Result<()> {
    let (rows, cols, px) = grid_raster(phi, stride)?;
    atomic_write(path, &pgm(rows, cols, &px))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Grid, VectorField};
    use std::f64::consts::PI;

    fn read_pgm(path: &Path) -> (usize, usize, Vec<u8>) {
        let bytes = std::fs::read(path).unwrap();
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            let start = pos;
            while !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            fields.push(String::from_utf8(bytes[start..pos].to_vec()).unwrap());
            pos += 1;
        }
        assert_eq!(fields[0], "P5");
        let cols: usize = fields[1].parse().unwrap();
        let rows: usize = fields[2].parse().unwrap();
        (rows, cols, bytes[pos..].to_vec())
    }

    #[test]
    fn constant_half_image_is_all_128() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        export_image(&ScalarField::constant(Grid::square(8).unwrap(), 0.5), &p).unwrap();
        let (r, c, px) = read_pgm(&p);
        assert_eq!((r, c), (8, 8));
        assert!(px.iter().all(|&x| x == 128));
    }

    #[test]
    fn min_max_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.pgm");
        let g = Grid::new(&[8, 12]).unwrap();
        export_image(&ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin() * 7.0 - 3.0), &p).unwrap();
        let (r, c, px) = read_pgm(&p);
        assert_eq!((r, c), (8, 12));
        assert_eq!(*px.iter().min().unwrap(), 0);
        assert_eq!(*px.iter().max().unwrap(), 255);
    }

    #[test]
    fn identity_grid_is_straight_evenly_spaced_lines() {
        let g = Grid::square(16).unwrap();
        let (rows, cols, px) = grid_raster(&Transform::identity(g), 4).unwrap();
        for r in 0..rows {
            for c in 0..cols {
                let on = (r % 16 == 0) || (c % 16 == 0);
                assert_eq!(px[r * cols + c] == 255, on, "pixel {r},{c}");
            }
        }
        let dir = tempfile::tempdir().unwrap();
        export_grid(&Transform::identity(g), 4, &dir.path().join("g.pgm")).unwrap();
    }

    #[test]
    fn deformed_grid_bends_lines() {
        let g = Grid::square(16).unwrap();
        let phi = Transform::from_displacement(VectorField::from_fn(g, |p| {
            [0.03 * (2.0 * PI * p[1]).sin(), 0.0, 0.0]
        }));
        let (_, cols, px) = grid_raster(&phi, 4).unwrap();
        let straight: Vec<u8> = (0..cols).map(|c| px[16 * cols + c]).collect();
        assert!(straight.iter().any(|&x| x == 0));
    }

    #[test]
    fn three_dimensional_input_is_rejected() {
        let g = Grid::new(&[4, 4, 4]).unwrap();
        let p = Path::new("/nonexistent/x.pgm");
        assert!(matches!(export_image(&ScalarField::zeros(g), p), Err(Error::UnsupportedDimension(3))));
        assert!(matches!(export_grid(&Transform::identity(g), 2, p), Err(Error::UnsupportedDimension(3))));
    }
}
