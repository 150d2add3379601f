//! Minimal deterministic PNG line charts.
//!
//! Plots are pure views of already-written data: rendering never touches the
//! CSVs, embeds no timestamps, and produces byte-identical images for
//! identical input.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::font::{glyph, text_width, GLYPH_HEIGHT, GLYPH_WIDTH};

pub const PALETTE: [[u8; 3]; 5] = [
    [38, 139, 210],  // blue
    [220, 50, 47],   // red
    [133, 153, 0],   // green
    [181, 137, 0],   // yellow
    [108, 113, 196], // violet
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: [u8; 3],
    pub points: Vec<(f64, f64)>,
    /// Draw circular markers at each point (for sparse sweeps).
    pub markers: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, color: [u8; 3], points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            color,
            points,
            markers: false,
        }
    }

    pub fn with_markers(mut self) -> Self {
        self.markers = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub width: u32,
    pub height: u32,
}

const MARGIN_LEFT: u32 = 84;
const MARGIN_RIGHT: u32 = 24;
const MARGIN_TOP: u32 = 36;
const MARGIN_BOTTOM: u32 = 56;

impl LineChart {
    pub fn new(
        title: impl Into<String>,
        x_label: impl Into<String>,
        y_label: impl Into<String>,
    ) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            width: 960,
            height: 600,
        }
    }

    pub fn push(&mut self, series: Series) {
        self.series.push(series);
    }

    pub fn save_png(&self, path: &Path) -> anyhow::Result<()> {
        let img = self.render();
        img.save(path)?;
        Ok(())
    }

    pub fn render(&self) -> RgbImage {
        let mut img = RgbImage::from_pixel(self.width, self.height, Rgb([255, 255, 255]));
        let (x0, y0) = (MARGIN_LEFT, MARGIN_TOP);
        let (x1, y1) = (self.width - MARGIN_RIGHT, self.height - MARGIN_BOTTOM);

        let (xmin, xmax) = bounds(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
        let (ymin, ymax) = padded(bounds(
            self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)),
        ));

        let to_px = |x: f64, y: f64| -> (i64, i64) {
            let fx = if xmax > xmin { (x - xmin) / (xmax - xmin) } else { 0.5 };
            let fy = if ymax > ymin { (y - ymin) / (ymax - ymin) } else { 0.5 };
            (
                x0 as i64 + (fx * (x1 - x0) as f64).round() as i64,
                y1 as i64 - (fy * (y1 - y0) as f64).round() as i64,
            )
        };

        // Gridlines and tick labels.
        let grid = Rgb([225, 225, 225]);
        let axis = Rgb([40, 40, 40]);
        for (tick, label) in ticks(xmin, xmax) {
            let (px, _) = to_px(tick, ymin);
            if px >= x0 as i64 && px <= x1 as i64 {
                draw_vline(&mut img, px, y0 as i64, y1 as i64, grid);
                let w = text_width(&label, 1);
                draw_text(
                    &mut img,
                    px - w as i64 / 2,
                    y1 as i64 + 6,
                    &label,
                    axis,
                    1,
                );
            }
        }
        for (tick, label) in ticks(ymin, ymax) {
            let (_, py) = to_px(xmin, tick);
            if py >= y0 as i64 && py <= y1 as i64 {
                draw_hline(&mut img, x0 as i64, x1 as i64, py, grid);
                let w = text_width(&label, 1);
                draw_text(
                    &mut img,
                    x0 as i64 - w as i64 - 8,
                    py - GLYPH_HEIGHT as i64 / 2,
                    &label,
                    axis,
                    1,
                );
            }
        }

        // Axes frame.
        draw_hline(&mut img, x0 as i64, x1 as i64, y1 as i64, axis);
        draw_vline(&mut img, x0 as i64, y0 as i64, y1 as i64, axis);

        // Series.
        for s in &self.series {
            let color = Rgb(s.color);
            let mut prev: Option<(i64, i64)> = None;
            for &(x, y) in &s.points {
                if !x.is_finite() || !y.is_finite() {
                    prev = None;
                    continue;
                }
                let p = to_px(x, y);
                if let Some(q) = prev {
                    draw_line(&mut img, q, p, color);
                }
                if s.markers {
                    draw_disc(&mut img, p, 3, color);
                }
                prev = Some(p);
            }
        }

        // Title and axis labels.
        let title = self.title.clone();
        let tw = text_width(&title, 2);
        draw_text(
            &mut img,
            (self.width as i64 - tw as i64) / 2,
            8,
            &title,
            axis,
            2,
        );
        let xw = text_width(&self.x_label, 1);
        draw_text(
            &mut img,
            (x0 as i64 + x1 as i64 - xw as i64) / 2,
            y1 as i64 + 24,
            &self.x_label,
            axis,
            1,
        );
        draw_text(&mut img, 8, y0 as i64 - 18, &self.y_label, axis, 1);

        // Legend, top-right inside the frame.
        let mut ly = y0 as i64 + 8;
        for s in &self.series {
            let lw = text_width(&s.label, 1) as i64;
            let lx = x1 as i64 - lw - 34;
            draw_hline(&mut img, lx, lx + 22, ly + 3, Rgb(s.color));
            draw_text(&mut img, lx + 28, ly, &s.label, axis, 1);
            ly += 14;
        }

        img
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn padded((lo, hi): (f64, f64)) -> (f64, f64) {
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// Roughly five ticks at a 1/2/5 step, with labels sized to the step.
fn ticks(lo: f64, hi: f64) -> Vec<(f64, String)> {
    let span = hi - lo;
    if span <= 0.0 || !span.is_finite() {
        return vec![(lo, format_value(lo, 0))];
    }
    let raw_step = span / 5.0;
    let mag = 10f64.powf(raw_step.log10().floor());
    let norm = raw_step / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let decimals = (-step.log10().floor() as i64).max(0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last)
        .map(|i| {
            let v = i as f64 * step;
            (v, format_value(v, decimals))
        })
        .collect()
}

fn format_value(v: f64, decimals: usize) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.1e}")
    } else {
        format!("{v:.decimals$}")
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_hline(img: &mut RgbImage, x_from: i64, x_to: i64, y: i64, c: Rgb<u8>) {
    for x in x_from.min(x_to)..=x_from.max(x_to) {
        put(img, x, y, c);
    }
}

fn draw_vline(img: &mut RgbImage, x: i64, y_from: i64, y_to: i64, c: Rgb<u8>) {
    for y in y_from.min(y_to)..=y_from.max(y_to) {
        put(img, x, y, c);
    }
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = x0 as f64 + t * (x1 - x0) as f64;
        let y = y0 as f64 + t * (y1 - y0) as f64;
        put(img, x.round() as i64, y.round() as i64, c);
        // Thicken vertically for visibility.
        put(img, x.round() as i64, y.round() as i64 + 1, c);
    }
}

fn draw_disc(img: &mut RgbImage, (cx, cy): (i64, i64), r: i64, c: Rgb<u8>) {
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                put(img, cx + dx, cy + dy, c);
            }
        }
    }
}

pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, c: Rgb<u8>, scale: u32) {
    let mut cx = x;
    for ch in text.chars() {
        let g = glyph(ch);
        for (row, bits) in g.iter().enumerate() {
            for col in 0..GLYPH_WIDTH {
                if bits & (1 << (GLYPH_WIDTH - 1 - col)) != 0 {
                    for sy in 0..scale {
                        for sx in 0..scale {
                            put(
                                img,
                                cx + (col as u32 * scale + sx) as i64,
                                y + (row as u32 * scale + sy) as i64,
                                c,
                            );
                        }
                    }
                }
            }
        }
        cx += ((GLYPH_WIDTH as u32 + 1) * scale) as i64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic() {
        let mut chart = LineChart::new("TEST", "X", "Y");
        chart.push(Series::new(
            "A",
            PALETTE[0],
            (0..50).map(|i| (i as f64, (i as f64 * 0.3).sin())).collect(),
        ));
        let a = chart.render();
        let b = chart.render();
        assert_eq!(a.as_raw(), b.as_raw());
    }

    #[test]
    fn ticks_cover_range() {
        let t = ticks(0.0, 100.0);
        assert!(t.len() >= 4 && t.len() <= 7);
        assert!(t.first().unwrap().0 >= 0.0);
        assert!(t.last().unwrap().0 <= 100.0);

        let t = ticks(-0.01, 0.01);
        assert!(!t.is_empty());
    }

    #[test]
    fn empty_series_still_renders() {
        let chart = LineChart::new("EMPTY", "X", "Y");
        let img = chart.render();
        assert_eq!(img.width(), 960);
    }
}
