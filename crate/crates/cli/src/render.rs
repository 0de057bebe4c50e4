//! Binary PPM (P6) rendering of signed feature vectors: positive values in
//! blue, negative in red, both scaled by the largest magnitude.

use std::path::Path;

use bilinear_core::Error as CoreError;

use crate::{write_file, Result};

pub fn render_ppm(values: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(CoreError::LengthMismatch {
            context: "rendered feature (width × height)",
            expected: width * height,
            found: values.len(),
        }
        .into());
    }
    let m = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(3 * values.len());
    for &v in values {
        let (red, blue) = if m > 0.0 {
            (channel(-v / m), channel(v / m))
        } else {
            (0, 0)
        };
        out.extend_from_slice(&[red, 0, blue]);
    }
    Ok(out)
}

fn channel(x: f64) -> u8 {
    (255.0 * x.max(0.0)).round().min(255.0) as u8
}

pub fn render_feature(values: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    write_file(path, &render_ppm(values, width, height)?)
}
