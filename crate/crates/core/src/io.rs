//! On-disk formats: raw float volumes with JSON sidecars, NIfTI-1 input and
//! 8-bit PGM previews.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use crate::data_sim::NoiseLevelSpec;
use crate::error::{Error, Result};
use crate::volume::{Image, Volume};

pub const RAW_DTYPE: &str = "float32-le";
pub const RAW_EXT: &str = "f32";

/// Links one volume of a training or test pair to its partner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub role: String,
    pub partner: Option<String>,
}

/// Sidecar written next to every raw volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeManifest {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: String,
    pub data_file: String,
    pub pairing: Option<Pairing>,
    pub noise_spec: Option<NoiseLevelSpec>,
    pub mask_file: Option<String>,
}

/// Optional manifest fields supplied by the writer.
#[derive(Clone, Debug, Default)]
pub struct ManifestExtras {
    pub pairing: Option<Pairing>,
    pub noise_spec: Option<NoiseLevelSpec>,
    pub mask_file: Option<String>,
}

fn sidecar(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension(RAW_EXT), stem.with_extension("json"))
}

pub fn write_f32(path: &Path, data: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format {
            path: path.into(),
            reason: format!("length {} is not a multiple of 4", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.into(),
        reason: e.to_string(),
    })
}

/// Writes `stem.f32` and `stem.json`.
pub fn write_volume(stem: &Path, vol: &Volume, extras: ManifestExtras) -> Result<VolumeManifest> {
    let (raw, json) = sidecar(stem);
    if let Some(dir) = stem.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_f32(&raw, vol.data())?;
    let manifest = VolumeManifest {
        shape: vol.shape(),
        spacing: vol.spacing(),
        dtype: RAW_DTYPE.into(),
        data_file: raw
            .file_name()
            .expect("file name")
            .to_string_lossy()
            .into_owned(),
        pairing: extras.pairing,
        noise_spec: extras.noise_spec,
        mask_file: extras.mask_file,
    };
    write_json(&json, &manifest)?;
    Ok(manifest)
}

/// Reads a volume from its stem (or either of its two files).
pub fn read_volume(stem: &Path) -> Result<(Volume, VolumeManifest)> {
    let (_, json) = sidecar(stem);
    let manifest: VolumeManifest = read_json(&json)?;
    if manifest.dtype != RAW_DTYPE {
        return Err(Error::Format {
            path: json,
            reason: format!("unsupported dtype {}", manifest.dtype),
        });
    }
    let raw = json.with_file_name(&manifest.data_file);
    let data = read_f32(&raw)?;
    let vol = Volume::new(manifest.shape, manifest.spacing, data).map_err(|e| Error::Format {
        path: raw,
        reason: e.to_string(),
    })?;
    Ok((vol, manifest))
}

/// Reads a NIfTI-1 volume (`.nii` or `.nii.gz`) as `D×H×W` with `W` the
/// fastest axis. Scaling slope and intercept are applied.
pub fn read_nifti(path: &Path) -> Result<Volume> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        out
    } else {
        raw
    };
    let bad = |reason: String| Error::Format {
        path: path.into(),
        reason,
    };
    if bytes.len() < 348 {
        return Err(bad("shorter than a NIfTI-1 header".into()));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap()) == 348;
    if !le && i32::from_be_bytes(bytes[0..4].try_into().unwrap()) != 348 {
        return Err(bad("sizeof_hdr is not 348".into()));
    }
    let i16_at = |o: usize| {
        let b = [bytes[o], bytes[o + 1]];
        if le {
            i16::from_le_bytes(b)
        } else {
            i16::from_be_bytes(b)
        }
    };
    let f32_at = |o: usize| {
        let b: [u8; 4] = bytes[o..o + 4].try_into().unwrap();
        if le {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    };
    let ndim = i16_at(40);
    if !(1..=7).contains(&ndim) {
        return Err(bad(format!("invalid dim[0] = {ndim}")));
    }
    let dim = |k: usize| {
        if (k as i16) <= ndim {
            i16_at(40 + 2 * k).max(1) as usize
        } else {
            1
        }
    };
    if (4..=ndim as usize).any(|k| dim(k) != 1) {
        return Err(bad("only 3D volumes are supported".into()));
    }
    let (nx, ny, nz) = (dim(1), dim(2), dim(3));
    let datatype = i16_at(70);
    let pix = |k: usize| {
        let v = f32_at(76 + 4 * k).abs() as f64;
        if v > 0.0 && v.is_finite() {
            v
        } else {
            1.0
        }
    };
    let vox_offset = f32_at(108).max(348.0) as usize;
    let (slope, inter) = (f32_at(112), f32_at(116));
    let n = nx * ny * nz;
    let size = match datatype {
        2 | 256 => 1,
        4 | 512 => 2,
        8 | 16 => 4,
        64 => 8,
        other => return Err(bad(format!("unsupported datatype {other}"))),
    };
    let body = bytes
        .get(vox_offset..vox_offset + n * size)
        .ok_or_else(|| bad("truncated voxel data".into()))?;
    macro_rules! num {
        ($t:ty, $c:expr) => {{
            let b = $c.try_into().unwrap();
            (if le {
                <$t>::from_le_bytes(b)
            } else {
                <$t>::from_be_bytes(b)
            }) as f64
        }};
    }
    let word = |c: &[u8]| -> f64 {
        match datatype {
            2 => c[0] as f64,
            256 => c[0] as i8 as f64,
            4 => num!(i16, c),
            512 => num!(u16, c),
            8 => num!(i32, c),
            16 => num!(f32, c),
            _ => num!(f64, c),
        }
    };
    let scale = slope != 0.0 && slope.is_finite();
    let data = body
        .chunks_exact(size)
        .map(|c| {
            let v = word(c);
            (if scale {
                v * slope as f64 + inter as f64
            } else {
                v
            }) as f32
        })
        .collect();
    Volume::new([nz, ny, nx], [pix(3), pix(2), pix(1)], data)
}

/// Linear-interpolated percentile, `q` in `[0, 100]`.
pub fn percentile(values: &[f32], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("values", "percentile of an empty set"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::invalid("q", "must lie in [0, 100]"));
    }
    let mut v: Vec<f32> = values.to_vec();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("percentile input"));
    }
    v.sort_by(f32::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let (lo, frac) = (pos.floor() as usize, pos.fract());
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] as f64 + frac * (v[hi] as f64 - v[lo] as f64))
}

pub const NORMALIZATION_PERCENTILE: f64 = 99.5;

/// Divides by the 99.5th percentile and clips to `[0, 1]`.
pub fn normalize_volume(vol: &Volume) -> Result<Volume> {
    let p = percentile(vol.data(), NORMALIZATION_PERCENTILE)?;
    if p <= 0.0 {
        return Err(Error::Domain(format!(
            "99.5th percentile is {p}; cannot normalize"
        )));
    }
    let data = vol
        .data()
        .iter()
        .map(|&v| (v as f64 / p).clamp(0.0, 1.0) as f32)
        .collect();
    Volume::new(vol.shape(), vol.spacing(), data)
}

/// Binary 8-bit PGM mapping `[lo, hi]` to `[0, 255]`.
pub fn write_pgm(path: &Path, img: &Image, lo: f32, hi: f32) -> Result<()> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{} {}\n255\n", img.w(), img.h()).into_bytes();
    out.extend(
        img.data()
            .iter()
            .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
