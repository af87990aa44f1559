//! Minimal PNG plotting: learning-curve line charts and perturbation sheets.
//! Everything is rendered directly into an RGB buffer — no external plotting
//! stack, so outputs are bit-stable across machines.

use std::path::Path;

use image::{Rgb, RgbImage};
use ule_core::crafting::PerturbationBank;
use ule_core::{Error, Result};

const BG: Rgb<u8> = Rgb([255, 255, 255]);
const FG: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const PALETTE: [Rgb<u8>; 6] = [
    Rgb([214, 69, 65]),
    Rgb([31, 119, 180]),
    Rgb([44, 160, 44]),
    Rgb([255, 127, 14]),
    Rgb([148, 103, 189]),
    Rgb([127, 127, 127]),
];

// --- 5x7 bitmap font ---------------------------------------------------------
// Each glyph is five column bytes, bit 0 = top row. Text is folded to
// uppercase; anything unknown renders as a hollow box.

fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        'A' => [0x7E, 0x11, 0x11, 0x11, 0x7E],
        'B' => [0x7F, 0x49, 0x49, 0x49, 0x36],
        'C' => [0x3E, 0x41, 0x41, 0x41, 0x22],
        'D' => [0x7F, 0x41, 0x41, 0x22, 0x1C],
        'E' => [0x7F, 0x49, 0x49, 0x49, 0x41],
        'F' => [0x7F, 0x09, 0x09, 0x09, 0x01],
        'G' => [0x3E, 0x41, 0x49, 0x49, 0x7A],
        'H' => [0x7F, 0x08, 0x08, 0x08, 0x7F],
        'I' => [0x00, 0x41, 0x7F, 0x41, 0x00],
        'J' => [0x20, 0x40, 0x41, 0x3F, 0x01],
        'K' => [0x7F, 0x08, 0x14, 0x22, 0x41],
        'L' => [0x7F, 0x40, 0x40, 0x40, 0x40],
        'M' => [0x7F, 0x02, 0x0C, 0x02, 0x7F],
        'N' => [0x7F, 0x04, 0x08, 0x10, 0x7F],
        'O' => [0x3E, 0x41, 0x41, 0x41, 0x3E],
        'P' => [0x7F, 0x09, 0x09, 0x09, 0x06],
        'Q' => [0x3E, 0x41, 0x51, 0x21, 0x5E],
        'R' => [0x7F, 0x09, 0x19, 0x29, 0x46],
        'S' => [0x46, 0x49, 0x49, 0x49, 0x31],
        'T' => [0x01, 0x01, 0x7F, 0x01, 0x01],
        'U' => [0x3F, 0x40, 0x40, 0x40, 0x3F],
        'V' => [0x1F, 0x20, 0x40, 0x20, 0x1F],
        'W' => [0x3F, 0x40, 0x38, 0x40, 0x3F],
        'X' => [0x63, 0x14, 0x08, 0x14, 0x63],
        'Y' => [0x07, 0x08, 0x70, 0x08, 0x07],
        'Z' => [0x61, 0x51, 0x49, 0x45, 0x43],
        '0' => [0x3E, 0x51, 0x49, 0x45, 0x3E],
        '1' => [0x00, 0x42, 0x7F, 0x40, 0x00],
        '2' => [0x42, 0x61, 0x51, 0x49, 0x46],
        '3' => [0x21, 0x41, 0x45, 0x4B, 0x31],
        '4' => [0x18, 0x14, 0x12, 0x7F, 0x10],
        '5' => [0x27, 0x45, 0x45, 0x45, 0x39],
        '6' => [0x3C, 0x4A, 0x49, 0x49, 0x30],
        '7' => [0x01, 0x71, 0x09, 0x05, 0x03],
        '8' => [0x36, 0x49, 0x49, 0x49, 0x36],
        '9' => [0x06, 0x49, 0x49, 0x29, 0x1E],
        '.' => [0x00, 0x60, 0x60, 0x00, 0x00],
        ',' => [0x00, 0xA0, 0x60, 0x00, 0x00],
        ':' => [0x00, 0x36, 0x36, 0x00, 0x00],
        '-' => [0x08, 0x08, 0x08, 0x08, 0x08],
        '+' => [0x08, 0x08, 0x3E, 0x08, 0x08],
        '=' => [0x14, 0x14, 0x14, 0x14, 0x14],
        '%' => [0x23, 0x13, 0x08, 0x64, 0x62],
        '/' => [0x20, 0x10, 0x08, 0x04, 0x02],
        '(' => [0x00, 0x1C, 0x22, 0x41, 0x00],
        ')' => [0x00, 0x41, 0x22, 0x1C, 0x00],
        '_' => [0x40, 0x40, 0x40, 0x40, 0x40],
        ' ' => [0x00, 0x00, 0x00, 0x00, 0x00],
        _ => [0x7F, 0x41, 0x41, 0x41, 0x7F],
    }
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for c in text.chars() {
        let cols = glyph(c);
        for (dx, col) in cols.iter().enumerate() {
            for dy in 0..7 {
                if col & (1 << dy) != 0 {
                    put(img, cx + dx as i64, y + dy, color);
                }
            }
        }
        cx += 6;
    }
}

fn text_width(text: &str) -> i64 {
    text.chars().count() as i64 * 6
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_line(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    // Bresenham, with a 2px brush for series visibility.
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, color);
        put(img, x + 1, y, color);
        put(img, x, y + 1, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// One named series of y-values plotted against its index (epoch).
pub type Series = (String, Vec<f64>);

/// Render a line chart of the given series to a PNG. The x axis is the
/// sample index (epoch number); the y axis is auto-scaled with headroom.
pub fn line_chart(path: &Path, title: &str, y_label: &str, series: &[Series]) -> Result<()> {
    if series.iter().all(|(_, v)| v.is_empty()) {
        return Err(Error::Config("nothing to plot: all series are empty".into()));
    }
    let (width, height) = (900u32, 560u32);
    let (left, right, top, bottom) = (70i64, 30i64, 50i64, 50i64);
    let mut img = RgbImage::from_pixel(width, height, BG);

    let ys = series.iter().flat_map(|(_, v)| v.iter().copied());
    let (mut y_min, mut y_max) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !y_min.is_finite() || !y_max.is_finite() {
        return Err(Error::Config("cannot plot non-finite values".into()));
    }
    if (y_max - y_min).abs() < 1e-9 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let pad = (y_max - y_min) * 0.08;
    let (y_min, y_max) = (y_min - pad, y_max + pad);
    let x_max = series.iter().map(|(_, v)| v.len()).max().unwrap_or(1).max(2) - 1;

    let plot_w = width as i64 - left - right;
    let plot_h = height as i64 - top - bottom;
    let to_px = |i: usize, v: f64| -> (i64, i64) {
        let x = left + (i as f64 / x_max as f64 * plot_w as f64).round() as i64;
        let y = top + ((y_max - v) / (y_max - y_min) * plot_h as f64).round() as i64;
        (x, y)
    };

    // Grid and tick labels.
    for t in 0..=4 {
        let v = y_min + (y_max - y_min) * f64::from(t) / 4.0;
        let y = top + ((y_max - v) / (y_max - y_min) * plot_h as f64).round() as i64;
        draw_line(&mut img, left, y, left + plot_w, y, GRID);
        draw_text(&mut img, 8, y - 3, &format!("{v:>6.3}"), FG);
    }
    let x_ticks = x_max.min(8).max(1);
    for t in 0..=x_ticks {
        let i = (x_max as f64 * t as f64 / x_ticks as f64).round() as usize;
        let (x, _) = to_px(i, y_min);
        draw_line(&mut img, x, top, x, top + plot_h, GRID);
        let label = format!("{i}");
        draw_text(&mut img, x - text_width(&label) / 2, top + plot_h + 8, &label, FG);
    }
    // Axes over the grid.
    draw_line(&mut img, left, top, left, top + plot_h, FG);
    draw_line(&mut img, left, top + plot_h, left + plot_w, top + plot_h, FG);

    draw_text(&mut img, left, 20, title, FG);
    draw_text(&mut img, 8, 34, y_label, FG);
    draw_text(&mut img, left + plot_w - text_width("epoch"), top + plot_h + 24, "epoch", FG);

    // Series and legend.
    let mut legend_y = top + 8;
    for (k, (label, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        for pair in (0..values.len()).collect::<Vec<_>>().windows(2) {
            let (x0, y0) = to_px(pair[0], values[pair[0]]);
            let (x1, y1) = to_px(pair[1], values[pair[1]]);
            draw_line(&mut img, x0, y0, x1, y1, color);
        }
        if values.len() == 1 {
            let (x, y) = to_px(0, values[0]);
            draw_line(&mut img, x - 2, y, x + 2, y, color);
        }
        let lx = left + plot_w - 170;
        draw_line(&mut img, lx, legend_y + 3, lx + 18, legend_y + 3, color);
        draw_text(&mut img, lx + 24, legend_y, label, FG);
        legend_y += 14;
    }

    img.save(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: format!("write plot: {e}"),
    })
}

/// Render the first `max_tiles` perturbations of a bank as a contact sheet.
/// Values are scaled by 255/8 (the usual presentation for an 8/255 budget)
/// and centered at mid-gray, so an all-zero δ renders as a flat gray tile.
pub fn delta_sheet(path: &Path, bank: &PerturbationBank, max_tiles: usize) -> Result<()> {
    if bank.is_empty() {
        return Err(Error::Config("cannot render an empty bank".into()));
    }
    let tiles = bank.len().min(max_tiles.max(1));
    let (h, w) = bank.image_shape();
    let cols = (tiles as f64).sqrt().ceil() as usize;
    let rows = tiles.div_ceil(cols);
    let scale = 4usize;
    let gutter = 2usize;
    let width = (cols * (w * scale + gutter) + gutter) as u32;
    let height = (rows * (h * scale + gutter) + gutter) as u32;
    let mut img = RgbImage::from_pixel(width, height, BG);

    let deltas = bank.deltas();
    for t in 0..tiles {
        let (row, col) = (t / cols, t % cols);
        let oy = gutter + row * (h * scale + gutter);
        let ox = gutter + col * (w * scale + gutter);
        for y in 0..h {
            for x in 0..w {
                let px = Rgb([
                    delta_byte(deltas[[t, y, x, 0]]),
                    delta_byte(deltas[[t, y, x, 1]]),
                    delta_byte(deltas[[t, y, x, 2]]),
                ]);
                for sy in 0..scale {
                    for sx in 0..scale {
                        img.put_pixel(
                            (ox + x * scale + sx) as u32,
                            (oy + y * scale + sy) as u32,
                            px,
                        );
                    }
                }
            }
        }
    }
    img.save(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: format!("write delta sheet: {e}"),
    })
}

/// Map δ ∈ [-8/255, 8/255] to a byte centered at mid-gray: δ·255/8 lands in
/// [-1, 1], which maps affinely onto [0, 255].
fn delta_byte(d: f32) -> u8 {
    let v = f64::from(d) * 255.0 / 8.0;
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}
