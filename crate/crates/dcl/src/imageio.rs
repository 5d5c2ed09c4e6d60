//! Binary portable pixmap/graymap I/O.
//!
//! Frames are 8-bit binary PPM (P6) scaled to [0,1] on load. Scalar maps
//! (rewards, value images) are exported as 8-bit binary PGM (P5) under
//! min/max scaling, with the scale recorded in a JSON sidecar next to the
//! file so the map can be reconstructed. Masks are PGM where nonzero means
//! positive.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{DclError, Result};
use crate::eval::Mask;
use crate::tensor::{Map2f, Tensor3f};

fn bad(path: &Path, reason: impl Into<String>) -> DclError {
    DclError::BadImage { path: path.to_path_buf(), reason: reason.into() }
}

/// Pull one whitespace-delimited header token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize, path: &Path) -> Result<String> {
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
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(bad(path, "truncated header"));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

struct PnmHeader {
    width: usize,
    height: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &str, path: &Path) -> Result<PnmHeader> {
    let mut pos = 0usize;
    let m = next_token(bytes, &mut pos, path)?;
    if m != magic {
        return Err(bad(path, format!("expected {magic}, found {m}")));
    }
    let width: usize =
        next_token(bytes, &mut pos, path)?.parse().map_err(|_| bad(path, "bad width"))?;
    let height: usize =
        next_token(bytes, &mut pos, path)?.parse().map_err(|_| bad(path, "bad height"))?;
    let maxval: usize =
        next_token(bytes, &mut pos, path)?.parse().map_err(|_| bad(path, "bad maxval"))?;
    if maxval != 255 {
        return Err(bad(path, format!("only 8-bit files supported, maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad(path, "missing raster separator"));
    }
    Ok(PnmHeader { width, height, data_start: pos + 1 })
}

/// Load an 8-bit binary PPM as an h×w×3 frame with values in [0,1].
pub fn load_ppm(path: &Path) -> Result<Tensor3f> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let hdr = parse_header(&bytes, "P6", path)?;
    let need = hdr.width * hdr.height * 3;
    let raster = &bytes[hdr.data_start..];
    if raster.len() < need {
        return Err(bad(path, format!("raster holds {} bytes, need {need}", raster.len())));
    }
    let data: Vec<f32> = raster[..need].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor3f::from_vec(hdr.height, hdr.width, 3, data)
}

/// Write a [0,1] frame as 8-bit binary PPM (values are clamped and rounded).
pub fn save_ppm(path: &Path, frame: &Tensor3f) -> Result<()> {
    if frame.channels() != 3 {
        return Err(bad(path, format!("PPM needs 3 channels, got {}", frame.channels())));
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", frame.width(), frame.height())?;
    let bytes: Vec<u8> = frame
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

/// Scaling information stored next to exported maps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapSidecar {
    pub min: f64,
    pub max: f64,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Write a scalar map as 8-bit PGM with min/max scaling; the scale goes into
/// `<path>.json`. A constant map writes zeros with min = max recorded.
pub fn save_map_pgm(path: &Path, map: &Map2f) -> Result<()> {
    let (lo, hi) = map.min_max();
    let span = hi - lo;
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", map.width(), map.height())?;
    let bytes: Vec<u8> = map
        .data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                (((v as f64 - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    w.write_all(&bytes)?;
    drop(w);
    let sidecar = MapSidecar { min: lo, max: hi };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Reconstruct a map written by [`save_map_pgm`] from the PGM + sidecar.
pub fn load_map_pgm(path: &Path) -> Result<Map2f> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let hdr = parse_header(&bytes, "P5", path)?;
    let need = hdr.width * hdr.height;
    let raster = &bytes[hdr.data_start..];
    if raster.len() < need {
        return Err(bad(path, format!("raster holds {} bytes, need {need}", raster.len())));
    }
    let sidecar: MapSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let span = sidecar.max - sidecar.min;
    let data: Vec<f32> = raster[..need]
        .iter()
        .map(|&b| (sidecar.min + span * (b as f64 / 255.0)) as f32)
        .collect();
    Map2f::from_vec(hdr.height, hdr.width, data)
}

/// Load a PGM as a binary mask: nonzero pixels are positive.
pub fn load_mask_pgm(path: &Path) -> Result<Mask> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let hdr = parse_header(&bytes, "P5", path)?;
    let need = hdr.width * hdr.height;
    let raster = &bytes[hdr.data_start..];
    if raster.len() < need {
        return Err(bad(path, format!("raster holds {} bytes, need {need}", raster.len())));
    }
    Ok(Mask::from_fn(hdr.height, hdr.width, |i, j| raster[i * hdr.width + j] != 0))
}

/// Write a binary mask as PGM (255 for positive pixels).
pub fn save_mask_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", mask.width(), mask.height())?;
    let bytes: Vec<u8> =
        mask.data().iter().map(|&m| if m { 255u8 } else { 0 }).collect();
    w.write_all(&bytes)?;
    Ok(())
}
