//! Procedural gesture families on the built-in hand skeletons.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SkeletonSequence;
use crate::skeleton::{DatasetKind, SkeletonTopology};
use crate::{Error, Result};

pub const MIN_FRAMES: usize = 20;
pub const MAX_FRAMES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GestureKind {
    SwipeLeft,
    SwipeRight,
    SwipeUp,
    SwipeDown,
    RotateCw,
    RotateCcw,
    Grab,
    Pinch,
}

impl GestureKind {
    pub const ALL: [GestureKind; 8] = [
        GestureKind::SwipeLeft,
        GestureKind::SwipeRight,
        GestureKind::SwipeUp,
        GestureKind::SwipeDown,
        GestureKind::RotateCw,
        GestureKind::RotateCcw,
        GestureKind::Grab,
        GestureKind::Pinch,
    ];

    pub fn parse(id: &str) -> Result<Self> {
        GestureKind::ALL
            .into_iter()
            .find(|k| k.as_str() == id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown generator id `{id}`")))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GestureKind::SwipeLeft => "swipe-left",
            GestureKind::SwipeRight => "swipe-right",
            GestureKind::SwipeUp => "swipe-up",
            GestureKind::SwipeDown => "swipe-down",
            GestureKind::RotateCw => "rotation-cw",
            GestureKind::RotateCcw => "rotation-ccw",
            GestureKind::Grab => "grab",
            GestureKind::Pinch => "pinch",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    /// One generator per class; the class index is the position.
    pub classes: Vec<GestureKind>,
    /// Standard deviation of the per-coordinate Gaussian noise.
    pub noise: f64,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn from_ids(ids: &[&str], noise: f64, samples_per_class: usize, seed: u64) -> Result<Self> {
        let classes = ids
            .iter()
            .map(|id| GestureKind::parse(id.trim()))
            .collect::<Result<_>>()?;
        let spec = SyntheticSpec {
            classes,
            noise,
            samples_per_class,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The eight-family set, one class per generator.
    pub fn all_families(noise: f64, samples_per_class: usize, seed: u64) -> Self {
        SyntheticSpec {
            classes: GestureKind::ALL.to_vec(),
            noise,
            samples_per_class,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::InvalidArgument(
                "a synthetic set needs at least 2 classes".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise {} must be finite and >= 0",
                self.noise
            )));
        }
        if self.samples_per_class == 0 {
            return Err(Error::InvalidArgument(
                "samples_per_class must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes
            .iter()
            .map(|k| k.as_str().to_string())
            .collect()
    }
}

/// Open hand in the x-y plane, fingers along +y, roughly 0.2 across.
pub fn rest_pose(topology: &SkeletonTopology) -> Result<Vec<[f64; 3]>> {
    let bases = topology.digit_bases().ok_or_else(|| {
        Error::InvalidArgument("synthetic gestures need a built-in hand topology".into())
    })?;
    let mut pose = vec![[0.0, 0.0, 0.0]; topology.joint_count()];
    if topology.kind() == DatasetKind::Dhg22 {
        pose[1] = [0.0, 0.05, 0.0];
    }
    let roots = [
        [-0.035, 0.03],
        [-0.02, 0.09],
        [0.0, 0.095],
        [0.02, 0.09],
        [0.038, 0.08],
    ];
    let dirs: [[f64; 2]; 5] = [
        [-0.7, 0.7],
        [-0.15, 1.0],
        [0.0, 1.0],
        [0.12, 1.0],
        [0.25, 1.0],
    ];
    let segs = [
        [0.035, 0.03, 0.025],
        [0.04, 0.025, 0.02],
        [0.045, 0.028, 0.022],
        [0.04, 0.025, 0.02],
        [0.032, 0.02, 0.017],
    ];
    for d in 0..5 {
        let norm = (dirs[d][0] * dirs[d][0] + dirs[d][1] * dirs[d][1]).sqrt();
        let (ux, uy) = (dirs[d][0] / norm, dirs[d][1] / norm);
        let mut p = [roots[d][0], roots[d][1], 0.0];
        pose[bases[d]] = p;
        for k in 0..3 {
            p[0] += ux * segs[d][k];
            p[1] += uy * segs[d][k];
            p[2] -= 0.004 * (k + 1) as f64;
            pose[bases[d] + k + 1] = p;
        }
    }
    Ok(pose)
}

fn smoothstep(p: f64) -> f64 {
    p * p * (3.0 - 2.0 * p)
}

fn centroid(pose: &[[f64; 3]]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for p in pose {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    c.map(|v| v / pose.len() as f64)
}

/// Per-sample shape: length, scale, placement, in-plane tilt, amplitude.
struct Variation {
    frames: usize,
    scale: f64,
    offset: [f64; 3],
    tilt: f64,
    amplitude: f64,
}

impl Variation {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Variation {
            frames: rng.random_range(MIN_FRAMES..=MAX_FRAMES),
            scale: rng.random_range(0.9..1.1),
            offset: [
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                0.4 + rng.random_range(-0.05..0.05),
            ],
            tilt: rng.random_range(-0.2..0.2),
            amplitude: rng.random_range(0.8..1.2),
        }
    }
}

fn place(rest: &[[f64; 3]], v: &Variation) -> Vec<[f64; 3]> {
    let (s, c) = v.tilt.sin_cos();
    rest.iter()
        .map(|p| {
            let x = v.scale * (c * p[0] - s * p[1]);
            let y = v.scale * (s * p[0] + c * p[1]);
            [
                x + v.offset[0],
                y + v.offset[1],
                v.scale * p[2] + v.offset[2],
            ]
        })
        .collect()
}

/// Noise-free frames of one gesture.
fn trajectory(
    kind: GestureKind,
    topology: &SkeletonTopology,
    base: &[[f64; 3]],
    v: &Variation,
) -> Vec<[f64; 3]> {
    let center = centroid(base);
    let bases = topology.digit_bases().expect("hand topology");
    let chain = |d: usize| bases[d]..bases[d] + 4;
    let contracted: Vec<bool> = (0..base.len())
        .map(|j| match kind {
            GestureKind::Grab => (0..5).any(|d| chain(d).contains(&j)),
            GestureKind::Pinch => chain(0).contains(&j) || chain(1).contains(&j),
            _ => false,
        })
        .collect();
    let mut out = Vec::with_capacity(v.frames * base.len());
    for t in 0..v.frames {
        let s = smoothstep(t as f64 / (v.frames - 1) as f64);
        for (j, p) in base.iter().enumerate() {
            let q = match kind {
                GestureKind::SwipeLeft
                | GestureKind::SwipeRight
                | GestureKind::SwipeUp
                | GestureKind::SwipeDown => {
                    let d = 0.25 * v.amplitude * s;
                    match kind {
                        GestureKind::SwipeLeft => [p[0] - d, p[1], p[2]],
                        GestureKind::SwipeRight => [p[0] + d, p[1], p[2]],
                        GestureKind::SwipeUp => [p[0], p[1] + d, p[2]],
                        _ => [p[0], p[1] - d, p[2]],
                    }
                }
                GestureKind::RotateCw | GestureKind::RotateCcw => {
                    let sign = if kind == GestureKind::RotateCcw {
                        1.0
                    } else {
                        -1.0
                    };
                    let (sn, cs) = (sign * FRAC_PI_2 * v.amplitude * s).sin_cos();
                    let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                    [
                        center[0] + cs * dx - sn * dy,
                        center[1] + sn * dx + cs * dy,
                        p[2],
                    ]
                }
                GestureKind::Grab | GestureKind::Pinch => {
                    if contracted[j] {
                        let f = 1.0 - 0.6 * v.amplitude * s;
                        [0, 1, 2].map(|k| center[k] + f * (p[k] - center[k]))
                    } else {
                        *p
                    }
                }
            };
            out.push(q);
        }
    }
    out
}

/// Generates `samples_per_class` sequences per class, class-major. The
/// per-sample shape depends only on `(seed, sample index)`, so the same
/// sample index yields the same length and placement in every class.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    topology: &SkeletonTopology,
) -> Result<Vec<SkeletonSequence>> {
    spec.validate()?;
    let rest = rest_pose(topology)?;
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = Vec::with_capacity(spec.classes.len() * spec.samples_per_class);
    for (label, &kind) in spec.classes.iter().enumerate() {
        for i in 0..spec.samples_per_class {
            let mut shape_rng = ChaCha8Rng::seed_from_u64(spec.seed);
            shape_rng.set_stream(i as u64);
            let v = Variation::draw(&mut shape_rng);
            let mut coords = trajectory(kind, topology, &place(&rest, &v), &v);
            if spec.noise > 0.0 {
                let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
                noise_rng.set_stream((1 << 40) | ((label as u64) << 24) | i as u64);
                for p in &mut coords {
                    for x in p.iter_mut() {
                        *x += normal.sample(&mut noise_rng);
                    }
                }
            }
            out.push(SkeletonSequence::new(
                topology.joint_count(),
                coords,
                label,
            )?);
        }
    }
    Ok(out)
}
