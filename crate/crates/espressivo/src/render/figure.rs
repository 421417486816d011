//! Spectrogram figure emission: a grid of heatmap panels (time on x, Mel
//! bin on y, low bands at the bottom) with one label per panel, written as
//! PNG. Pure function of its inputs, so output bytes are reproducible.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::repr::mel::MelSpectrogram;

const LABEL_STRIP: u32 = 12;
const GAP: u32 = 4;
const BG: Rgb<u8> = Rgb([18, 18, 28]);
const FG: Rgb<u8> = Rgb([235, 235, 235]);

/// Viridis-like colormap from anchor points.
fn colormap(v: f32) -> Rgb<u8> {
    const ANCHORS: [(f32, [f32; 3]); 5] = [
        (0.00, [68.0, 1.0, 84.0]),
        (0.25, [59.0, 82.0, 139.0]),
        (0.50, [33.0, 145.0, 140.0]),
        (0.75, [94.0, 201.0, 98.0]),
        (1.00, [253.0, 231.0, 37.0]),
    ];
    let v = v.clamp(0.0, 1.0);
    let mut lo = ANCHORS[0];
    let mut hi = ANCHORS[ANCHORS.len() - 1];
    for w in ANCHORS.windows(2) {
        if v >= w[0].0 && v <= w[1].0 {
            lo = w[0];
            hi = w[1];
            break;
        }
    }
    let t = if hi.0 > lo.0 { (v - lo.0) / (hi.0 - lo.0) } else { 0.0 };
    let mix = |a: f32, b: f32| (a + (b - a) * t).round() as u8;
    Rgb([
        mix(lo.1[0], hi.1[0]),
        mix(lo.1[1], hi.1[1]),
        mix(lo.1[2], hi.1[2]),
    ])
}

/// 5x7 glyphs, 5 low bits per row, MSB-left. Uppercase-only; lowercase
/// input is uppercased before lookup.
fn glyph(c: char) -> [u8; 7] {
    match c {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0E],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11],
        'X' => [0x11, 0x0A, 0x04, 0x04, 0x04, 0x0A, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x06, 0x08, 0x10, 0x1F],
        '3' => [0x0E, 0x11, 0x01, 0x06, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '>' => [0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '=' => [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        ',' => [0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08],
        _ => [0x00; 7], // unknown characters render as space
    }
}

fn draw_text(img: &mut RgbImage, x0: u32, y0: u32, text: &str) {
    let mut x = x0;
    for c in text.to_ascii_uppercase().chars() {
        let rows = glyph(c);
        for (dy, bits) in rows.iter().enumerate() {
            for dx in 0..5u32 {
                if bits & (0x10 >> dx) != 0 {
                    let (px, py) = (x + dx, y0 + dy as u32);
                    if px < img.width() && py < img.height() {
                        img.put_pixel(px, py, FG);
                    }
                }
            }
        }
        x += 6;
        if x + 5 >= img.width() {
            break;
        }
    }
}

/// Grid layout for `n` panels: 2x2 for the four morphing scenarios, one row
/// for up to three panels, otherwise near-square.
fn grid_dims(n: usize) -> (usize, usize) {
    match n {
        0 => (0, 0),
        1..=3 => (1, n),
        4 => (2, 2),
        _ => {
            let cols = (n as f64).sqrt().ceil() as usize;
            (n.div_ceil(cols), cols)
        }
    }
}

/// Render labelled spectrogram heatmaps into one PNG at `path`.
///
/// All panels share one color scale so their amplitudes are comparable.
pub fn emit_figure(panels: &[&MelSpectrogram], labels: &[&str], path: &Path) -> Result<()> {
    if panels.is_empty() {
        return Err(Error::Config("emit_figure needs at least one panel".into()));
    }
    if panels.len() != labels.len() {
        return Err(Error::Config(format!(
            "emit_figure: {} panels but {} labels",
            panels.len(),
            labels.len()
        )));
    }

    let (vmin, vmax) = panels.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |acc, p| {
        p.data
            .iter()
            .fold(acc, |(lo, hi), &v| (lo.min(v), hi.max(v)))
    });
    let span = (vmax - vmin).max(1e-6);

    let max_t = panels.iter().map(|p| p.num_frames()).max().unwrap() as u32;
    let bands = panels[0].num_bands() as u32;
    let panel_w = max_t.max(64);
    let panel_h = bands * 2 + LABEL_STRIP;
    let (rows, cols) = grid_dims(panels.len());
    let width = GAP + (panel_w + GAP) * cols as u32;
    let height = GAP + (panel_h + GAP) * rows as u32;

    let mut img = RgbImage::from_pixel(width, height, BG);
    for (i, (panel, label)) in panels.iter().zip(labels).enumerate() {
        let (r, c) = (i / cols, i % cols);
        let x0 = GAP + c as u32 * (panel_w + GAP);
        let y0 = GAP + r as u32 * (panel_h + GAP);
        draw_text(&mut img, x0, y0 + 2, label);

        let heat_y0 = y0 + LABEL_STRIP;
        for (t, row) in panel.data.rows().into_iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                let color = colormap((v - vmin) / span);
                let px = x0 + t as u32;
                // Mel bin 0 at the bottom of the panel
                let py = heat_y0 + (bands - 1 - b as u32) * 2;
                if px < width {
                    img.put_pixel(px, py, color);
                    img.put_pixel(px, py + 1, color);
                }
            }
        }
    }

    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn panel(t: usize, fill: f32) -> MelSpectrogram {
        MelSpectrogram {
            data: Array2::from_shape_fn((t, 80), |(i, j)| fill + (i + j) as f32 * 0.01),
        }
    }

    #[test]
    fn single_panel_renders() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fig.png");
        emit_figure(&[&panel(120, -4.0)], &["reconstruction"], &path).unwrap();
        let img = image::open(&path).unwrap();
        assert!(img.width() >= 120);
    }

    #[test]
    fn four_panels_make_a_2x2_grid() {
        assert_eq!(grid_dims(4), (2, 2));
        assert_eq!(grid_dims(3), (1, 3));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.png");
        let p = panel(64, -6.0);
        emit_figure(
            &[&p, &p, &p, &p],
            &["art 0>1", "art 1>0", "dyn 0>1", "dyn 1>0"],
            &path,
        )
        .unwrap();
        let img = image::open(&path).unwrap();
        // two columns of >= 64 px plus gaps
        assert!(img.width() >= 2 * 64 + 3 * GAP);
        assert!(img.height() >= 2 * (160 + LABEL_STRIP) + 3 * GAP);
    }

    #[test]
    fn output_bytes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        let p = panel(80, -5.0);
        emit_figure(&[&p], &["x"], &a).unwrap();
        emit_figure(&[&p], &["x"], &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn mismatched_labels_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = panel(10, 0.0);
        assert!(emit_figure(&[&p], &["a", "b"], &dir.path().join("x.png")).is_err());
        assert!(emit_figure(&[], &[], &dir.path().join("y.png")).is_err());
    }
}
