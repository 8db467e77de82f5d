//! Spatial resampling of a single `[H][W][C]` field: block-mean pooling
//! down, cell-centered bilinear up.

use super::DataError;

/// Mean over non-overlapping blocks. Source extent must be divisible by the
/// target extent.
pub fn downsample_mean(
    field: &[f32],
    src: usize,
    channels: usize,
    target: usize,
) -> Result<Vec<f32>, DataError> {
    if target == 0 || src % target != 0 {
        return Err(DataError::invalid(format!(
            "cannot pool {src}x{src} down to {target}x{target}: indivisible factor"
        )));
    }
    if field.len() != src * src * channels {
        return Err(DataError::invalid("field length does not match resolution".to_string()));
    }
    let k = src / target;
    let mut out = vec![0.0f32; target * target * channels];
    let inv = 1.0 / (k * k) as f64;
    for oy in 0..target {
        for ox in 0..target {
            for c in 0..channels {
                let mut acc = 0.0f64;
                for dy in 0..k {
                    for dx in 0..k {
                        let (y, x) = (oy * k + dy, ox * k + dx);
                        acc += field[(y * src + x) * channels + c] as f64;
                    }
                }
                out[(oy * target + ox) * channels + c] = (acc * inv) as f32;
            }
        }
    }
    Ok(out)
}

/// Bilinear upsampling with cell-centered sampling (align-corners disabled):
/// output pixel center (i+0.5)/target maps to source coordinate
/// (i+0.5)*src/target - 0.5, clamped at the borders.
pub fn upsample_bilinear(
    field: &[f32],
    src: usize,
    channels: usize,
    target: usize,
) -> Result<Vec<f32>, DataError> {
    if target < src {
        return Err(DataError::invalid(format!(
            "upsample target {target} smaller than source {src}"
        )));
    }
    if field.len() != src * src * channels {
        return Err(DataError::invalid("field length does not match resolution".to_string()));
    }
    let mut out = vec![0.0f32; target * target * channels];
    let ratio = src as f64 / target as f64;
    let coord = |i: usize| ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
    for oy in 0..target {
        let fy = coord(oy);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src - 1);
        let wy = fy - y0 as f64;
        for ox in 0..target {
            let fx = coord(ox);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src - 1);
            let wx = fx - x0 as f64;
            for c in 0..channels {
                let v = |y: usize, x: usize| field[(y * src + x) * channels + c] as f64;
                let top = v(y0, x0) * (1.0 - wx) + v(y0, x1) * wx;
                let bot = v(y1, x0) * (1.0 - wx) + v(y1, x1) * wx;
                out[(oy * target + ox) * channels + c] = (top * (1.0 - wy) + bot * wy) as f32;
            }
        }
    }
    Ok(out)
}
