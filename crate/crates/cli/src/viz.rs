//! Optical-flow color wheel rendering.

use image::{Rgb, RgbImage};
use sdff_core::flow::FlowField;

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;

/// The 55-entry Middlebury color wheel.
pub fn color_wheel() -> Vec<[f32; 3]> {
    let mut w = Vec::with_capacity(RY + YG + GC + CB + BM + MR);
    let ramp = |i: usize, n: usize| i as f32 / n as f32;
    for i in 0..RY {
        w.push([1.0, ramp(i, RY), 0.0]);
    }
    for i in 0..YG {
        w.push([1.0 - ramp(i, YG), 1.0, 0.0]);
    }
    for i in 0..GC {
        w.push([0.0, 1.0, ramp(i, GC)]);
    }
    for i in 0..CB {
        w.push([0.0, 1.0 - ramp(i, CB), 1.0]);
    }
    for i in 0..BM {
        w.push([ramp(i, BM), 0.0, 1.0]);
    }
    for i in 0..MR {
        w.push([1.0, 0.0, 1.0 - ramp(i, MR)]);
    }
    w
}

/// 99th-percentile magnitude over valid pixels, 0 when none are valid.
pub fn percentile_99(flow: &FlowField) -> f32 {
    let mut mags: Vec<f32> = (0..flow.len())
        .filter(|&i| flow.valid[i])
        .map(|i| flow.u[i].hypot(flow.v[i]))
        .filter(|m| m.is_finite())
        .collect();
    if mags.is_empty() {
        return 0.0;
    }
    mags.sort_by(f32::total_cmp);
    let idx = ((mags.len() - 1) as f64 * 0.99).round() as usize;
    mags[idx]
}

/// Hue encodes direction, saturation encodes magnitude relative to the
/// 99th percentile. Invalid pixels are black.
pub fn flow_to_image(flow: &FlowField) -> RgbImage {
    let wheel = color_wheel();
    let n = wheel.len();
    let scale = percentile_99(flow).max(1e-6);
    let mut img = RgbImage::new(flow.width as u32, flow.height as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        if !flow.valid[i] || !flow.u[i].is_finite() || !flow.v[i].is_finite() {
            *px = Rgb([0, 0, 0]);
            continue;
        }
        let (u, v) = (flow.u[i] / scale, flow.v[i] / scale);
        let rad = u.hypot(v);
        let a = (-v).atan2(-u) / std::f32::consts::PI;
        let fk = (a + 1.0) / 2.0 * (n - 1) as f32;
        let k0 = (fk.floor() as usize).min(n - 1);
        let k1 = (k0 + 1) % n;
        let f = fk - k0 as f32;
        let mut rgb = [0u8; 3];
        for c in 0..3 {
            let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
            let col = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
            rgb[c] = (255.0 * col).round().clamp(0.0, 255.0) as u8;
        }
        *px = Rgb(rgb);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_flow_is_uniform_and_saturated() {
        let img = flow_to_image(&FlowField::constant(8, 6, 1.0, 0.0));
        let first = *img.get_pixel(0, 0);
        assert!(img.pixels().all(|p| *p == first));
        assert_ne!(first, Rgb([255, 255, 255]));
    }

    #[test]
    fn zero_flow_is_white_and_invalid_is_black() {
        let mut f = FlowField::constant(2, 1, 0.0, 0.0);
        f.valid[1] = false;
        let img = flow_to_image(&f);
        assert_eq!(*img.get_pixel(0, 0), Rgb([255, 255, 255]));
        assert_eq!(*img.get_pixel(1, 0), Rgb([0, 0, 0]));
    }

    #[test]
    fn opposite_directions_differ() {
        let a = flow_to_image(&FlowField::constant(1, 1, 1.0, 0.0));
        let b = flow_to_image(&FlowField::constant(1, 1, -1.0, 0.0));
        assert_ne!(a.get_pixel(0, 0), b.get_pixel(0, 0));
    }

    #[test]
    fn outliers_do_not_wash_out() {
        let mut f = FlowField::constant(100, 1, 1.0, 0.0);
        f.u[0] = 1000.0;
        assert!((percentile_99(&f) - 1.0).abs() < 1e-6);
        let img = flow_to_image(&f);
        assert_eq!(img.get_pixel(1, 0), flow_to_image(&FlowField::constant(1, 1, 1.0, 0.0)).get_pixel(0, 0));
    }
}
