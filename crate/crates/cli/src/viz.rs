//! Static renderings of 2-D registration results.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use diffeo_core::geodesic::MomentumField;
use diffeo_core::grid_image::io::write_ppm;
use diffeo_core::{ScalarImage, VectorField};

/// Pixels per image pixel in the raster outputs.
pub const ZOOM: usize = 6;
/// Arrow length multiplier for the quiver plot.
pub const QUIVER_SCALE: f64 = 5.0;

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<[u8; 3]>,
}

impl Canvas {
    fn from_image(img: &ScalarImage) -> Self {
        let (rows, cols) = (img.shape()[0], img.shape()[1]);
        let (lo, hi) = img.min_max();
        let span = if hi > lo { hi - lo } else { 1.0 };
        let (w, h) = (cols * ZOOM, rows * ZOOM);
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let v = (img.get(&[y / ZOOM, x / ZOOM]) - lo) / span;
                let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                px.push([g, g, g]);
            }
        }
        Self { w, h, px }
    }

    fn plot(&mut self, x: f64, y: f64, c: [u8; 3]) {
        if x >= 0.0 && y >= 0.0 && (x as usize) < self.w && (y as usize) < self.h {
            self.px[y as usize * self.w + x as usize] = c;
        }
    }

    /// Segment between two points in image (row, col) coordinates.
    fn line(&mut self, a: [f64; 2], b: [f64; 2], c: [u8; 3]) {
        let to = |p: [f64; 2]| [(p[1] + 0.5) * ZOOM as f64, (p[0] + 0.5) * ZOOM as f64];
        let (a, b) = (to(a), to(b));
        let n = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as usize).max(1);
        for i in 0..=n {
            let t = i as f64 / n as f64;
            self.plot(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), c);
        }
    }
}

/// Draws the image of a regular lattice (every `every` pixels) under `map`
/// on top of `img`.
pub fn grid_overlay(path: &Path, img: &ScalarImage, map: &VectorField, every: usize) -> Result<()> {
    let mut canvas = Canvas::from_image(img);
    let (rows, cols) = (map.shape()[0], map.shape()[1]);
    let at = |r: usize, c: usize| {
        let n = map.node(r * cols + c);
        [n[0], n[1]]
    };
    let every = every.max(1);
    let red = [230, 40, 40];
    for r in (0..rows).step_by(every) {
        for c in 1..cols {
            canvas.line(at(r, c - 1), at(r, c), red);
        }
    }
    for c in (0..cols).step_by(every) {
        for r in 1..rows {
            canvas.line(at(r - 1, c), at(r, c), red);
        }
    }
    write_ppm(path, canvas.w, canvas.h, &canvas.px)?;
    Ok(())
}

/// Blue (0) to red (max) through green.
fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        (0.0, 2.0 * t, 1.0 - 2.0 * t)
    } else {
        (2.0 * t - 1.0, 2.0 - 2.0 * t, 0.0)
    };
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

/// Linear colormap over the velocity norm, one block per pixel.
pub fn heatmap(path: &Path, norms: &ScalarImage) -> Result<()> {
    let (rows, cols) = (norms.shape()[0], norms.shape()[1]);
    let (_, hi) = norms.min_max();
    let top = if hi > 0.0 { hi } else { 1.0 };
    let (w, h) = (cols * ZOOM, rows * ZOOM);
    let px = (0..w * h)
        .map(|i| colormap(norms.get(&[i / w / ZOOM, i % w / ZOOM]) / top))
        .collect::<Vec<_>>();
    write_ppm(path, w, h, &px)?;
    Ok(())
}

/// SVG with the image as grey cells and one orange arrow per control point.
pub fn quiver_svg(img: &ScalarImage, momenta: &MomentumField) -> Result<String> {
    let (rows, cols) = (img.shape()[0], img.shape()[1]);
    let (lo, hi) = img.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="-0.5 -0.5 {cols} {rows}" width="{}" height="{}">"#,
        cols * ZOOM,
        rows * ZOOM
    );
    for r in 0..rows {
        for c in 0..cols {
            let g = (((img.get(&[r, c]) - lo) / span) * 255.0).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="1" height="1" fill="rgb({g},{g},{g})"/>"#,
                c as f64 - 0.5,
                r as f64 - 0.5
            );
        }
    }
    for (p, a) in momenta.grid().points::<2>()?.iter().zip(momenta.to_points::<2>()?) {
        if a[0] == 0.0 && a[1] == 0.0 {
            continue;
        }
        let (x1, y1) = (p[1] + QUIVER_SCALE * a[1], p[0] + QUIVER_SCALE * a[0]);
        let _ = writeln!(
            s,
            r#"<line x1="{:.3}" y1="{:.3}" x2="{x1:.3}" y2="{y1:.3}" stroke="orange" stroke-width="0.15"/>"#,
            p[1], p[0]
        );
        let _ = writeln!(s, r#"<circle cx="{x1:.3}" cy="{y1:.3}" r="0.2" fill="orange"/>"#);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use diffeo_core::geodesic::{grid_points, ControlGrid};

    #[test]
    fn colormap_ends() {
        assert_eq!(colormap(0.0), [0, 0, 255]);
        assert_eq!(colormap(1.0), [255, 0, 0]);
        assert_eq!(colormap(0.5), [0, 255, 0]);
    }

    #[test]
    fn identity_grid_draws_straight_lines() {
        let dir = tempfile::tempdir().unwrap();
        let img = ScalarImage::zeros(vec![8, 10]).unwrap();
        let map = VectorField::from_points(vec![8, 10], &grid_points::<2>(&[8, 10])).unwrap();
        let p = dir.path().join("g.ppm");
        grid_overlay(&p, &img, &map, 4).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = format!("P6\n{} {}\n255\n", 10 * ZOOM, 8 * ZOOM);
        assert!(bytes.starts_with(header.as_bytes()));
        let body = &bytes[header.len()..];
        // row 0 of the lattice sits at canvas row ZOOM/2
        let y = ZOOM / 2;
        let x = 5 * ZOOM;
        assert_eq!(&body[(y * 10 * ZOOM + x) * 3..][..3], &[230, 40, 40]);
        // between lattice lines the background is untouched
        let y = 2 * ZOOM + ZOOM / 2;
        let x = 2 * ZOOM + ZOOM / 2;
        assert_eq!(&body[(y * 10 * ZOOM + x) * 3..][..3], &[0, 0, 0]);
    }

    #[test]
    fn quiver_has_one_arrow_per_nonzero_momentum() {
        let img = ScalarImage::zeros(vec![6, 6]).unwrap();
        let grid = ControlGrid::covering(&[6, 6], 2.0).unwrap();
        let mut m = MomentumField::zeros(grid);
        m.alphas_mut()[0] = 1.0;
        m.alphas_mut()[5] = -0.5;
        let svg = quiver_svg(&img, &m).unwrap();
        assert_eq!(svg.matches("<line").count(), 2);
        assert!(svg.ends_with("</svg>\n"));
    }
}
