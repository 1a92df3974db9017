//! Ellipsoidal head phantoms with piecewise-constant tissue classes.

use rand::Rng;

use crate::seed::rng_from_seed;
use crate::volume::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Tissue {
    Background = 0,
    Scalp = 1,
    Csf = 2,
    GrayMatter = 3,
    WhiteMatter = 4,
    DeepNuclei = 5,
}

impl Tissue {
    pub const ALL: [Tissue; 6] = [
        Tissue::Background,
        Tissue::Scalp,
        Tissue::Csf,
        Tissue::GrayMatter,
        Tissue::WhiteMatter,
        Tissue::DeepNuclei,
    ];

    pub fn from_label(label: u8) -> Option<Self> {
        Self::ALL.get(label as usize).copied()
    }

    /// T1-weighted-like intensity.
    pub fn t1(self) -> f32 {
        match self {
            Tissue::Background => 0.0,
            Tissue::Scalp => 0.80,
            Tissue::Csf => 0.18,
            Tissue::GrayMatter => 0.48,
            Tissue::WhiteMatter => 0.72,
            Tissue::DeepNuclei => 0.58,
        }
    }

    /// T2-weighted-like intensity.
    pub fn t2(self) -> f32 {
        match self {
            Tissue::Background => 0.0,
            Tissue::Scalp => 0.45,
            Tissue::Csf => 0.95,
            Tissue::GrayMatter => 0.62,
            Tissue::WhiteMatter => 0.38,
            Tissue::DeepNuclei => 0.52,
        }
    }
}

/// Label volume plus the paired T1-like and T2-like renderings.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub labels: Vec<u8>,
    pub t1: Volume,
    pub t2: Volume,
}

impl Phantom {
    /// Voxels inside the head (any non-background label).
    pub fn foreground(&self) -> Vec<bool> {
        self.labels
            .iter()
            .map(|&l| l != Tissue::Background as u8)
            .collect()
    }

    /// Brain tissue proper: gray matter, white matter and deep nuclei.
    pub fn brain_mask(&self) -> Vec<bool> {
        self.labels
            .iter()
            .map(|&l| {
                matches!(
                    Tissue::from_label(l),
                    Some(Tissue::GrayMatter | Tissue::WhiteMatter | Tissue::DeepNuclei)
                )
            })
            .collect()
    }
}

/// Axis-aligned-in-z ellipsoid, rotated by `angle` in the axial plane.
#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
    angle: f64,
}

impl Ellipsoid {
    /// Normalized squared radius; ≤ 1 inside.
    fn rho2(&self, z: f64, y: f64, x: f64) -> f64 {
        let (dz, dy, dx) = (z - self.center[0], y - self.center[1], x - self.center[2]);
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        (dz / self.radii[0]).powi(2) + (v / self.radii[1]).powi(2) + (u / self.radii[2]).powi(2)
    }
}

/// Builds a deterministic phantom of shape `[D, H, W]`.
///
/// The head spans every slice (a mid-brain slab), so no slice is empty.
pub fn make_phantom(seed: u64, shape: [usize; 3]) -> Phantom {
    let [d, h, w] = shape;
    let mut rng = rng_from_seed(seed);
    let mut jitter = |scale: f64| rng.random_range(-scale..scale);
    let center = [
        d as f64 / 2.0 - 0.5 + jitter(0.5),
        h as f64 / 2.0 - 0.5 + jitter(0.04 * h as f64),
        w as f64 / 2.0 - 0.5 + jitter(0.04 * w as f64),
    ];
    let grow = 1.0 + jitter(0.06);
    let head = Ellipsoid {
        center,
        radii: [
            1.1 * d as f64,
            0.44 * h as f64 * grow,
            0.37 * w as f64 * grow,
        ],
        angle: jitter(0.2),
    };
    let shrink = |e: &Ellipsoid, f: f64| Ellipsoid {
        radii: [e.radii[0] * f, e.radii[1] * f, e.radii[2] * f],
        ..*e
    };
    let skull_inner = shrink(&head, 0.88);
    let brain = shrink(&head, 0.80);
    let white = shrink(&head, 0.64);

    let mut inner: Vec<(Ellipsoid, Tissue)> = Vec::new();
    // Lateral ventricles.
    let vent_off = 0.12 * w as f64 * (1.0 + jitter(0.2));
    for side in [-1.0, 1.0] {
        inner.push((
            Ellipsoid {
                center: [
                    center[0],
                    center[1] + jitter(0.03 * h as f64),
                    center[2] + side * vent_off,
                ],
                radii: [
                    0.9 * d as f64,
                    0.16 * h as f64 * (1.0 + jitter(0.2)),
                    0.05 * w as f64 * (1.0 + jitter(0.2)),
                ],
                angle: head.angle + side * 0.15,
            },
            Tissue::Csf,
        ));
    }
    // Deep gray nuclei lateral to the ventricles.
    for side in [-1.0, 1.0] {
        inner.push((
            Ellipsoid {
                center: [
                    center[0],
                    center[1] + 0.08 * h as f64,
                    center[2] + side * 0.22 * w as f64,
                ],
                radii: [
                    0.7 * d as f64,
                    0.08 * h as f64 * (1.0 + jitter(0.2)),
                    0.06 * w as f64 * (1.0 + jitter(0.2)),
                ],
                angle: head.angle,
            },
            Tissue::DeepNuclei,
        ));
    }
    // Gray-matter folds reaching into the white matter.
    let folds = 4 + (jitter(1.0).abs() * 3.0) as usize;
    for k in 0..folds {
        let theta = std::f64::consts::TAU * (k as f64 + 0.5 + 0.3 * jitter(1.0)) / folds as f64;
        let r = 0.6;
        inner.push((
            Ellipsoid {
                center: [
                    center[0] + jitter(0.2 * d as f64),
                    center[1] + r * white.radii[1] * theta.sin(),
                    center[2] + r * white.radii[2] * theta.cos(),
                ],
                radii: [0.8 * d as f64, 0.07 * h as f64, 0.07 * w as f64],
                angle: theta,
            },
            Tissue::GrayMatter,
        ));
    }

    let mut labels = vec![0u8; d * h * w];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let (zf, yf, xf) = (z as f64, y as f64, x as f64);
                let tissue = if head.rho2(zf, yf, xf) > 1.0 {
                    Tissue::Background
                } else if skull_inner.rho2(zf, yf, xf) > 1.0 {
                    Tissue::Scalp
                } else if brain.rho2(zf, yf, xf) > 1.0 {
                    Tissue::Csf
                } else {
                    let base = if white.rho2(zf, yf, xf) > 1.0 {
                        Tissue::GrayMatter
                    } else {
                        Tissue::WhiteMatter
                    };
                    inner
                        .iter()
                        .rev()
                        .find(|(e, _)| e.rho2(zf, yf, xf) <= 1.0)
                        .map_or(base, |&(_, t)| t)
                };
                labels[(z * h + y) * w + x] = tissue as u8;
            }
        }
    }
    let t1 = render(&labels, shape, Tissue::t1);
    let t2 = render(&labels, shape, Tissue::t2);
    Phantom { labels, t1, t2 }
}

/// Width, in pixels, of the in-plane partial-volume blur.
pub const PARTIAL_VOLUME_SIGMA: f64 = 1.5;

fn render(labels: &[u8], shape: [usize; 3], f: fn(Tissue) -> f32) -> Volume {
    let [d, h, w] = shape;
    let r = (3.0 * PARTIAL_VOLUME_SIGMA).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * PARTIAL_VOLUME_SIGMA * PARTIAL_VOLUME_SIGMA)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let sharp: Vec<f64> = labels
        .iter()
        .map(|&l| f(Tissue::from_label(l).expect("valid label")) as f64)
        .collect();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0.0; h * w];
    let mut out = vec![0f32; d * h * w];
    for z in 0..d {
        let src = &sharp[z * h * w..(z + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                rows[y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, k)| k * src[y * w + clamp(x as isize + j as isize - r, w)])
                    .sum::<f64>()
                    / norm;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, k)| k * rows[clamp(y as isize + j as isize - r, h) * w + x])
                    .sum::<f64>()
                    / norm;
                out[(z * h + y) * w + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Volume::new(shape, [1.0; 3], out).expect("phantom shape")
}
