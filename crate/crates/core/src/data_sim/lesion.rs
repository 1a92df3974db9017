use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::volume::Volume;

/// Attempts made by [`place_lesion`] before giving up.
const PLACEMENT_TRIES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    /// `(d, y, x)` voxel coordinate.
    pub center: [usize; 3],
    /// Radius in voxels; the taper reaches zero at this distance.
    pub radius: f64,
    pub t1_intensity_delta: f32,
    pub t2_intensity_delta: f32,
}

/// Cosine taper: 1 at the centre, 0 at and beyond `radius`.
fn taper(dist: f64, radius: f64) -> f64 {
    if dist >= radius {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * dist / radius).cos())
    }
}

/// Voxel indices strictly inside the lesion sphere with their taper weights.
pub fn lesion_support(shape: [usize; 3], spec: &LesionSpec) -> Result<Vec<(usize, f64)>> {
    let r = spec.radius;
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::invalid("radius", "must be finite and >= 0"));
    }
    if spec.center.iter().zip(shape).any(|(&c, n)| c >= n) {
        return Err(Error::invalid(
            "center",
            format!("{:?} outside volume {shape:?}", spec.center),
        ));
    }
    let reach = r.ceil() as usize;
    for (axis, (&c, n)) in spec.center.iter().zip(shape).enumerate() {
        if reach > 0 && (c < reach - 1 || c + reach - 1 >= n) {
            return Err(Error::invalid(
                "radius",
                format!(
                    "lesion of radius {r} at {:?} leaves the volume along axis {axis}",
                    spec.center
                ),
            ));
        }
    }
    let mut out = Vec::new();
    if r == 0.0 {
        return Ok(out);
    }
    let [_, h, w] = shape;
    let lo = |c: usize| c.saturating_sub(reach);
    for d in lo(spec.center[0])..=(spec.center[0] + reach).min(shape[0] - 1) {
        for y in lo(spec.center[1])..=(spec.center[1] + reach).min(h - 1) {
            for x in lo(spec.center[2])..=(spec.center[2] + reach).min(w - 1) {
                let dist = [d, y, x]
                    .iter()
                    .zip(spec.center)
                    .map(|(&p, c)| (p as f64 - c as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let wgt = taper(dist, r);
                if wgt > 0.0 {
                    out.push(((d * h + y) * w + x, wgt));
                }
            }
        }
    }
    Ok(out)
}

/// Adds a tapered spherical perturbation to both volumes. Every voxel of
/// the support must lie in `foreground`.
pub fn insert_lesion(
    t1: &Volume,
    t2: &Volume,
    spec: &LesionSpec,
    foreground: &[bool],
) -> Result<(Volume, Volume)> {
    if t1.shape() != t2.shape() {
        return Err(Error::ShapeMismatch {
            expected: t1.shape().to_vec(),
            actual: t2.shape().to_vec(),
        });
    }
    if foreground.len() != t1.data().len() {
        return Err(Error::ShapeMismatch {
            expected: vec![t1.data().len()],
            actual: vec![foreground.len()],
        });
    }
    let support = lesion_support(t1.shape(), spec)?;
    if let Some(&(i, _)) = support.iter().find(|&&(i, _)| !foreground[i]) {
        return Err(Error::invalid(
            "center",
            format!("lesion voxel {i} falls outside the foreground"),
        ));
    }
    let mut a = t1.clone();
    let mut b = t2.clone();
    if spec.t1_intensity_delta != 0.0 {
        for &(i, wgt) in &support {
            a.data_mut()[i] += (wgt * spec.t1_intensity_delta as f64) as f32;
        }
    }
    if spec.t2_intensity_delta != 0.0 {
        for &(i, wgt) in &support {
            b.data_mut()[i] += (wgt * spec.t2_intensity_delta as f64) as f32;
        }
    }
    Ok((a, b))
}

/// Draws a lesion centre whose whole support lies inside `allowed`.
pub fn place_lesion(
    shape: [usize; 3],
    allowed: &[bool],
    radius: f64,
    deltas: (f32, f32),
    seed: u64,
) -> Result<LesionSpec> {
    if allowed.len() != shape.iter().product::<usize>() {
        return Err(Error::ShapeMismatch {
            expected: shape.to_vec(),
            actual: vec![allowed.len()],
        });
    }
    let mut rng = rng_from_seed(seed);
    for _ in 0..PLACEMENT_TRIES {
        let spec = LesionSpec {
            center: shape.map(|n| rng.random_range(0..n)),
            radius,
            t1_intensity_delta: deltas.0,
            t2_intensity_delta: deltas.1,
        };
        if let Ok(support) = lesion_support(shape, &spec) {
            if support.iter().all(|&(i, _)| allowed[i]) && allowed[spec_index(shape, &spec)] {
                return Ok(spec);
            }
        }
    }
    Err(Error::invalid(
        "radius",
        format!("no room for a lesion of radius {radius}"),
    ))
}

fn spec_index(shape: [usize; 3], spec: &LesionSpec) -> usize {
    let [d, y, x] = spec.center;
    (d * shape[1] + y) * shape[2] + x
}
