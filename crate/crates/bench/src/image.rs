//! Binary PPM (P6) images and the image fitting experiment: chains with
//! bonds `(R1, R2, R1)` over `H x W x 3`, fitted with and without
//! sensitivity control from a shared start.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use tchain::conv::tc_param_count;
use tchain::decompose::{als_fit, fit_with_ss_control, init_model};
use tchain::{relative_error, CorrectionConfig, DenseTensor, Error, FitConfig, Result};

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Reads the next header token, skipping whitespace and `#` comments.
fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(format_err("truncated PPM header"));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    tok.parse().map_err(|_| format_err(format!("bad PPM {what}: {tok:?}")))
}

/// Binary PPM as an `H x W x 3` tensor with values scaled to `[0, 1]`.
pub fn read_ppm(r: &mut impl Read) -> Result<DenseTensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    if header_token(&bytes, &mut pos)? != "P6" {
        return Err(format_err("not a binary PPM (P6) file"));
    }
    let w = header_number(&bytes, &mut pos, "width")?;
    let h = header_number(&bytes, &mut pos, "height")?;
    let maxval = header_number(&bytes, &mut pos, "maxval")?;
    if w == 0 || h == 0 || !(1..=65535).contains(&maxval) {
        return Err(format_err(format!("bad PPM header: {w}x{h}, maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the pixels.
    pos += 1;
    let width = if maxval < 256 { 1 } else { 2 };
    let need = w * h * 3 * width;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != need {
        return Err(format_err(format!("PPM pixel data has {} bytes, expected {need}", body.len())));
    }
    let scale = 1.0 / maxval as f64;
    let sample = |k: usize| -> f64 {
        if width == 1 {
            body[k] as f64
        } else {
            u16::from_be_bytes([body[2 * k], body[2 * k + 1]]) as f64
        }
    };
    DenseTensor::from_fn(vec![h, w, 3], |i| sample((i[0] * w + i[1]) * 3 + i[2]) * scale)
}

/// Writes an `H x W x 3` tensor with values in `[0, 1]` as an 8-bit PPM.
pub fn write_ppm(wr: &mut impl Write, t: &DenseTensor) -> Result<()> {
    if t.order() != 3 || t.dims()[2] != 3 {
        return Err(Error::InvalidArgument(format!("expected H x W x 3, got {:?}", t.dims())));
    }
    let (h, w) = (t.dims()[0], t.dims()[1]);
    write!(wr, "P6\n{w} {h}\n255\n")?;
    let mut px = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            for k in 0..3 {
                px.push((t.get(&[r, c, k]).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    wr.write_all(&px)?;
    Ok(())
}

pub fn load_ppm(path: impl AsRef<Path>) -> anyhow::Result<DenseTensor> {
    let path = path.as_ref();
    let mut f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_ppm(&mut f)?)
}

/// Parameters of a chain with bonds `(R1, R2, R1)` over `H x W x C`.
pub fn image_params(dims: &[usize], r1: usize, r2: usize) -> usize {
    tc_param_count(dims, &[r1, r2, r1])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub r1: usize,
    pub r2: usize,
    pub seed: u64,
    pub rel_err_als: f64,
    pub rel_err_ssc: f64,
    pub params: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageFitResult {
    pub rows: Vec<ImageRow>,
    /// Grid points dropped by the parameter bound.
    pub pruned: Vec<(usize, usize)>,
}

/// Fits `img` with bonds `(R1, R2, R1)` for each grid point within
/// `param_bound`, once with plain ALS and once with sensitivity control,
/// both from the same seeded start.
pub fn image_fit_experiment(
    img: &DenseTensor,
    grid: &[(usize, usize)],
    param_bound: Option<usize>,
    seed: u64,
    fit: &FitConfig,
    corr: &CorrectionConfig,
) -> Result<ImageFitResult> {
    if img.order() != 3 {
        return Err(Error::InvalidArgument(format!("expected an order-3 image, got {:?}", img.dims())));
    }
    let dims = img.dims().to_vec();
    let mut out = ImageFitResult::default();
    for &(r1, r2) in grid {
        let params = image_params(&dims, r1, r2);
        if param_bound.is_some_and(|b| params > b) {
            out.pruned.push((r1, r2));
            continue;
        }
        let bonds = [r1, r2, r1];
        let m0 = init_model(&dims, &bonds, seed, fit.init_scheme, Some(img.frobenius_norm()))?;
        let (ma, _) = als_fit(img, &m0, fit)?;
        let (ms, _) = fit_with_ss_control(img, &m0, fit, corr)?;
        out.rows.push(ImageRow {
            r1,
            r2,
            seed,
            rel_err_als: relative_error(img, &ma.reconstruct())?,
            rel_err_ssc: relative_error(img, &ms.reconstruct())?,
            params,
        });
    }
    Ok(out)
}

pub fn write_image_csv(path: &Path, rows: &[ImageRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["R1", "R2", "seed", "rel_err_als", "rel_err_ssc", "params"])?;
    for r in rows {
        w.write_record([
            r.r1.to_string(),
            r.r2.to_string(),
            r.seed.to_string(),
            format!("{:e}", r.rel_err_als),
            format!("{:e}", r.rel_err_ssc),
            r.params.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
