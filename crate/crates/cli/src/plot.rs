//! Heatmap rendering of scored point clouds.

use affordloop::geometry::ScoredPoint;
use image::{Rgb, RgbImage};

pub const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
pub const MIN_SIZE: u32 = 32;
const MARGIN: f64 = 12.0;

// Viridis sampled at 0, .25, .5, .75, 1.
const STOPS: [[u8; 3]; 5] = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];

/// Color of `score` on the fixed `[0, 1]` scale; values outside are clamped.
pub fn color(score: f64) -> Rgb<u8> {
    let s = score.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (s.floor() as usize).min(STOPS.len() - 2);
    let t = s - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    Rgb(std::array::from_fn(|c| {
        (a[c] as f64 + (b[c] as f64 - a[c] as f64) * t).round() as u8
    }))
}

/// Marker radius in pixels for a `size`-pixel image.
pub fn marker_radius(size: u32) -> i64 {
    (size as i64 / 128).max(2)
}

/// Pixel center of every point: the cloud's bounding box is scaled
/// uniformly into the image, centered, with y pointing up.
pub fn pixel_positions(points: &[ScoredPoint], size: u32) -> Vec<(i64, i64)> {
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in points {
        lo = (lo.0.min(p.point.x), lo.1.min(p.point.y));
        hi = (hi.0.max(p.point.x), hi.1.max(p.point.y));
    }
    let span = (hi.0 - lo.0).max(hi.1 - lo.1);
    let inner = size as f64 - 2.0 * MARGIN;
    let scale = if span > 0.0 { inner / span } else { 0.0 };
    let mid = ((lo.0 + hi.0) / 2.0, (lo.1 + hi.1) / 2.0);
    let c = size as f64 / 2.0;
    points
        .iter()
        .map(|p| {
            let x = c + (p.point.x - mid.0) * scale;
            let y = c - (p.point.y - mid.1) * scale;
            (x.round() as i64, y.round() as i64)
        })
        .collect()
}

/// Draws each point as a disc colored by its score in `channel`. Higher
/// scores are drawn last so they stay visible where discs overlap.
pub fn render(points: &[ScoredPoint], channel: usize, size: u32) -> Result<RgbImage, String> {
    if size < MIN_SIZE {
        return Err(format!("image size must be at least {MIN_SIZE} pixels"));
    }
    if points.is_empty() {
        return Err("score file has no points".into());
    }
    let scores = points
        .iter()
        .map(|p| {
            p.scores
                .get(channel)
                .copied()
                .ok_or_else(|| format!("line {}: no score for channel {channel}", p.line))
        })
        .collect::<Result<Vec<f64>, String>>()?;
    let pos = pixel_positions(points, size);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut img = RgbImage::from_pixel(size, size, BACKGROUND);
    let r = marker_radius(size);
    for i in order {
        let (cx, cy) = pos[i];
        let col = color(scores[i]);
        for y in (cy - r).max(0)..=(cy + r).min(size as i64 - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(size as i64 - 1) {
                if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                    img.put_pixel(x as u32, y as u32, col);
                }
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_endpoints_and_clamping() {
        assert_eq!(color(0.0), Rgb(STOPS[0]));
        assert_eq!(color(1.0), Rgb(STOPS[4]));
        assert_eq!(color(0.5), Rgb(STOPS[2]));
        assert_eq!(color(-3.0), color(0.0));
        assert_eq!(color(7.0), color(1.0));
        assert_eq!(color(0.125), Rgb([64, 42, 112]));
    }
}
