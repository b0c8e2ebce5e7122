use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::metrics::Band;

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: u32 = 30;
const COLOURS: [[u8; 3]; 4] = [[200, 40, 40], [40, 80, 200], [40, 160, 60], [160, 100, 20]];

/// Line plot of each series' mean with a lighter band for the confidence
/// interval, one colour per series, on shared axes.
pub fn plot_index(path: &Path, series: &[&[Band]]) -> Result<()> {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let finite = |v: f64| v.is_finite();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for b in s.iter().filter(|b| finite(b.mean)) {
            let hw = if finite(b.half_width) { b.half_width } else { 0.0 };
            lo = lo.min(b.mean - hw);
            hi = hi.max(b.mean + hw);
        }
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let len = series.iter().map(|s| s.len()).max().unwrap_or(0).max(2);
    let plot_w = (WIDTH - 2 * MARGIN) as f64;
    let plot_h = (HEIGHT - 2 * MARGIN) as f64;
    let x_of = |t: usize| MARGIN as f64 + plot_w * t as f64 / (len - 1) as f64;
    let y_of = |v: f64| MARGIN as f64 + plot_h * (1.0 - (v - lo) / (hi - lo));

    for (k, s) in series.iter().enumerate() {
        let c = COLOURS[k % COLOURS.len()];
        let light = Rgb([c[0] / 4 + 191, c[1] / 4 + 191, c[2] / 4 + 191]);
        for (t, b) in s.iter().enumerate() {
            if !(finite(b.mean) && finite(b.half_width)) {
                continue;
            }
            let x = x_of(t).round() as u32;
            let (top, bottom) = (y_of(b.mean + b.half_width), y_of(b.mean - b.half_width));
            for y in top.round() as u32..=bottom.round() as u32 {
                for dx in 0..=(plot_w / len as f64).ceil() as u32 {
                    put(&mut img, x + dx, y, light);
                }
            }
        }
    }
    let axis = Rgb([0, 0, 0]);
    for x in MARGIN..=WIDTH - MARGIN {
        put(&mut img, x, HEIGHT - MARGIN, axis);
    }
    for y in MARGIN..=HEIGHT - MARGIN {
        put(&mut img, MARGIN, y, axis);
    }
    for (k, s) in series.iter().enumerate() {
        let c = Rgb(COLOURS[k % COLOURS.len()]);
        let points: Vec<(f64, f64)> = s
            .iter()
            .enumerate()
            .filter(|(_, b)| finite(b.mean))
            .map(|(t, b)| (x_of(t), y_of(b.mean)))
            .collect();
        for w in points.windows(2) {
            line(&mut img, w[0], w[1], c);
        }
        if points.len() == 1 {
            put(&mut img, points[0].0 as u32, points[0].1 as u32, c);
        }
    }
    img.save(path)?;
    Ok(())
}

fn put(img: &mut RgbImage, x: u32, y: u32, c: Rgb<u8>) {
    if x < img.width() && y < img.height() {
        img.put_pixel(x, y, c);
    }
}

fn line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = a.0 + t * (b.0 - a.0);
        let y = a.1 + t * (b.1 - a.1);
        put(img, x.round() as u32, y.round() as u32, c);
        put(img, x.round() as u32, y.round() as u32 + 1, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_png_of_fixed_size() {
        let dir = tempfile::tempdir().unwrap();
        let a: Vec<Band> = (0..20)
            .map(|t| Band {
                mean: t as f64,
                half_width: 1.0,
            })
            .collect();
        let b: Vec<Band> = (0..20)
            .map(|t| Band {
                mean: 20.0 - t as f64,
                half_width: f64::NAN,
            })
            .collect();
        let path = dir.path().join("u.png");
        plot_index(&path, &[&a, &b]).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!((img.width(), img.height()), (WIDTH, HEIGHT));
    }
}
