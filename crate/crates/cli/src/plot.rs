//! Minimal line-plot rasterizer for PNG output.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

const W: u32 = 480;
const H: u32 = 360;
const LEFT: i64 = 48;
const RIGHT: i64 = 16;
const TOP: i64 = 16;
const BOTTOM: i64 = 40;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const INK: Rgb<u8> = Rgb([20, 20, 20]);
const LINE: Rgb<u8> = Rgb([31, 90, 180]);

// 3x5 glyphs, one row per u8, top to bottom, bit 2 = left column
const DIGITS: [[u8; 5]; 10] = [
    [7, 5, 5, 5, 7],
    [2, 6, 2, 2, 7],
    [7, 1, 7, 4, 7],
    [7, 1, 7, 1, 7],
    [5, 5, 7, 1, 1],
    [7, 4, 7, 1, 7],
    [7, 4, 7, 5, 7],
    [7, 1, 1, 1, 1],
    [7, 5, 7, 5, 7],
    [7, 5, 7, 1, 7],
];
const DOT: [u8; 5] = [0, 0, 0, 0, 2];

pub struct Plot {
    img: RgbImage,
    x_max: f64,
    y_max: f64,
}

impl Plot {
    /// Axes spanning `[0, x_max] x [0, y_max]` with gridlines at quarters.
    pub fn new(x_max: f64, y_max: f64) -> Self {
        let mut p =
            Self { img: RgbImage::from_pixel(W, H, WHITE), x_max: x_max.max(1e-9), y_max: y_max.max(1e-9) };
        for q in 0..=4 {
            let f = q as f64 / 4.0;
            let (gx, _) = p.to_px(f * p.x_max, 0.0);
            let (_, gy) = p.to_px(0.0, f * p.y_max);
            p.line((gx, TOP), (gx, H as i64 - BOTTOM), GRID);
            p.line((LEFT, gy), (W as i64 - RIGHT, gy), GRID);
            p.text(&tick(f * p.x_max), gx - 6, H as i64 - BOTTOM + 8);
            p.text(&tick(f * p.y_max), 4, gy - 3);
        }
        p.line((LEFT, TOP), (LEFT, H as i64 - BOTTOM), INK);
        p.line((LEFT, H as i64 - BOTTOM), (W as i64 - RIGHT, H as i64 - BOTTOM), INK);
        p
    }

    fn to_px(&self, x: f64, y: f64) -> (i64, i64) {
        let pw = (W as i64 - LEFT - RIGHT) as f64;
        let ph = (H as i64 - TOP - BOTTOM) as f64;
        (
            LEFT + (x / self.x_max * pw).round() as i64,
            H as i64 - BOTTOM - (y / self.y_max * ph).round() as i64,
        )
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if (0..W as i64).contains(&x) && (0..H as i64).contains(&y) {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    /// Bresenham.
    fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    fn text(&mut self, s: &str, x: i64, y: i64) {
        let mut cx = x;
        for ch in s.chars() {
            let glyph = match ch {
                '0'..='9' => DIGITS[ch as usize - '0' as usize],
                '.' => DOT,
                _ => continue,
            };
            for (r, bits) in glyph.iter().enumerate() {
                for col in 0..3 {
                    if bits & (4 >> col) != 0 {
                        self.put(cx + col, y + r as i64, INK);
                    }
                }
            }
            cx += 4;
        }
    }

    /// Polyline through `points` (data coordinates), 2 px thick.
    pub fn series(&mut self, points: &[(f64, f64)]) {
        let px: Vec<(i64, i64)> = points.iter().map(|&(x, y)| self.to_px(x, y)).collect();
        for w in px.windows(2) {
            for (ox, oy) in [(0, 0), (1, 0), (0, 1)] {
                self.line((w[0].0 + ox, w[0].1 + oy), (w[1].0 + ox, w[1].1 + oy), LINE);
            }
        }
        for &(x, y) in &px {
            for (ox, oy) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (0, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
                self.put(x + ox, y + oy, LINE);
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.img.save(path).with_context(|| format!("writing {}", path.display()))
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_trim() {
        assert_eq!(tick(0.0), "0");
        assert_eq!(tick(0.5), "0.5");
        assert_eq!(tick(0.25), "0.25");
        assert_eq!(tick(1.0), "1");
    }

    #[test]
    fn series_lands_inside_the_frame() {
        let mut p = Plot::new(1.0, 1.0);
        p.series(&[(0.0, 0.0), (0.5, 1.0), (1.0, 0.2)]);
        let (x, y) = p.to_px(0.5, 1.0);
        assert_eq!(*p.img.get_pixel(x as u32, y as u32), LINE);
        assert_eq!(p.to_px(0.0, 0.0), (LEFT, H as i64 - BOTTOM));
    }
}
