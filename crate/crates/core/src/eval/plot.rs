//! Minimal raster charts and mask panels.

use image::{Rgb, RgbImage};

use crate::mask::ClassIndexMask;

const WIDTH: u32 = 480;
const HEIGHT: u32 = 320;
const MARGIN: i64 = 30;

/// Series colours; the report legend lists them in the same order.
pub const SERIES: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

pub fn series_colour(i: usize) -> [u8; 3] {
    SERIES[i % SERIES.len()]
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, Rgb(c));
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for s in 0..=steps {
        let x = x0 + (x1 - x0) * s / steps;
        let y = y0 + (y1 - y0) * s / steps;
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            put(img, x + dx, y + dy, c);
        }
    }
}

/// Line chart of `series` (points `(x, y)` with `y` in `[0, 1]`) over
/// integer x positions `0..=x_max`. Horizontal grid lines mark tenths.
pub fn line_chart(series: &[Vec<(usize, f64)>], x_max: usize) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let (w, h) = (WIDTH as i64 - 2 * MARGIN, HEIGHT as i64 - 2 * MARGIN);
    let to_px = |x: usize, y: f64| -> (i64, i64) {
        let px = MARGIN + if x_max == 0 { w / 2 } else { w * x as i64 / x_max as i64 };
        let py = MARGIN + h - (y.clamp(0.0, 1.0) * h as f64).round() as i64;
        (px, py)
    };
    for t in 0..=10 {
        let y = MARGIN + h - h * t / 10;
        let c = if t == 0 { [0, 0, 0] } else { [225, 225, 225] };
        for x in MARGIN..=MARGIN + w {
            put(&mut img, x, y, c);
        }
    }
    for x in 0..=x_max {
        let (px, _) = to_px(x, 0.0);
        for y in MARGIN..=MARGIN + h {
            put(&mut img, px, y, if x == 0 { [0, 0, 0] } else { [235, 235, 235] });
        }
    }
    for (i, s) in series.iter().enumerate() {
        let c = series_colour(i);
        for pair in s.windows(2) {
            line(&mut img, to_px(pair[0].0, pair[0].1), to_px(pair[1].0, pair[1].1), c);
        }
        for &(x, y) in s {
            let (px, py) = to_px(x, y);
            for dy in -3..=3 {
                for dx in -3..=3 {
                    put(&mut img, px + dx, py + dy, c);
                }
            }
        }
    }
    img
}

/// Fixed colour per class index; 0 (background) is black.
pub fn class_colour(c: u8) -> [u8; 3] {
    if c == 0 {
        return [0, 0, 0];
    }
    const P: [[u8; 3]; 9] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
    ];
    P[(c as usize - 1) % P.len()]
}

pub fn colourize(mask: &ClassIndexMask) -> RgbImage {
    RgbImage::from_fn(mask.width as u32, mask.height as u32, |x, y| Rgb(class_colour(mask.get(y as usize, x as usize))))
}

/// Tiles equally sized tiles left to right with a 2-pixel grey gutter;
/// `None` tiles are drawn as mid grey.
pub fn panel(tiles: &[Option<RgbImage>], tile_w: u32, tile_h: u32) -> RgbImage {
    let gutter = 2;
    let n = tiles.len() as u32;
    let mut img = RgbImage::from_pixel(n * tile_w + (n + 1) * gutter, tile_h + 2 * gutter, Rgb([200, 200, 200]));
    for (i, t) in tiles.iter().enumerate() {
        let x0 = gutter + i as u32 * (tile_w + gutter);
        for y in 0..tile_h {
            for x in 0..tile_w {
                let p = match t {
                    Some(t) if x < t.width() && y < t.height() => *t.get_pixel(x, y),
                    _ => Rgb([128, 128, 128]),
                };
                img.put_pixel(x0 + x, gutter + y, p);
            }
        }
    }
    img
}
