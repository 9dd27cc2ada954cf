//! Frame sampling, displacement features and batch assembly.

use super::SkeletonSequence;
use crate::skeleton::{PartitionedAdjacency, SkeletonTopology};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Frames fed to both streams.
pub const SAMPLED_FRAMES: usize = 20;

/// Frame indices chosen by [`sample_frames`]: `floor(i·T/target)` when
/// `T ≥ target`, otherwise every frame followed by repeats of the last.
pub fn sample_indices(len: usize, target: usize) -> Vec<usize> {
    if len >= target {
        (0..target).map(|i| i * len / target).collect()
    } else {
        (0..target).map(|i| i.min(len - 1)).collect()
    }
}

pub fn sample_frames(seq: &SkeletonSequence, target: usize) -> SkeletonSequence {
    let coords = sample_indices(seq.len(), target)
        .into_iter()
        .flat_map(|t| seq.frame(t).iter().copied())
        .collect();
    seq.with_coords(coords).expect("sampled frames are finite")
}

/// Per-joint frame differences; the first frame's displacement is zero.
pub fn displacement_features(seq: &SkeletonSequence) -> Vec<[f64; 3]> {
    let j = seq.joints();
    let c = seq.coords();
    (0..c.len())
        .map(|i| {
            if i < j {
                [0.0; 3]
            } else {
                let (a, b) = (c[i], c[i - j]);
                [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
            }
        })
        .collect()
}

/// Per-frame `[coordinates ‖ displacements]`, each joint-major, giving
/// `T × 6J` values.
pub fn recurrent_features(seq: &SkeletonSequence) -> Vec<f64> {
    let j = seq.joints();
    let disp = displacement_features(seq);
    let mut out = Vec::with_capacity(seq.len() * 6 * j);
    for t in 0..seq.len() {
        out.extend(seq.frame(t).iter().flatten());
        out.extend(disp[t * j..(t + 1) * j].iter().flatten());
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrepareOptions {
    pub frames: usize,
    pub wrist_center: bool,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            frames: SAMPLED_FRAMES,
            wrist_center: false,
        }
    }
}

/// One sequence sampled and laid out for both streams.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub joints: usize,
    pub frames: usize,
    /// `[3, T, J]`
    pub coords: Vec<f64>,
    /// `[T, 6J]`
    pub recurrent: Vec<f64>,
    /// Three normalized `[J, J]` groups from the temporal mean pose.
    pub adjacency: [Vec<f64>; 3],
    pub label: usize,
}

impl PreparedSample {
    pub fn new(
        seq: &SkeletonSequence,
        topology: &SkeletonTopology,
        opts: PrepareOptions,
    ) -> Result<Self> {
        let j = seq.joints();
        if j != topology.joint_count() {
            return Err(Error::shape(
                "prepare",
                format!(
                    "sequence has {j} joints, topology {}",
                    topology.joint_count()
                ),
            ));
        }
        let seq = if opts.wrist_center {
            seq.wrist_centered()
        } else {
            seq.clone()
        };
        let s = sample_frames(&seq, opts.frames);
        let t = s.len();
        let mut coords = vec![0.0; 3 * t * j];
        for (ti, frame) in s.frames().enumerate() {
            for (ji, p) in frame.iter().enumerate() {
                for k in 0..3 {
                    coords[(k * t + ti) * j + ji] = p[k];
                }
            }
        }
        let adj = PartitionedAdjacency::for_pose(topology, &s.mean_pose())?;
        let [a0, a1, a2] = adj.normalized()?.clone();
        Ok(PreparedSample {
            joints: j,
            frames: t,
            coords,
            recurrent: recurrent_features(&s),
            adjacency: [a0.into_data(), a1.into_data(), a2.into_data()],
            label: s.label,
        })
    }
}

/// A batch in both stream layouts.
#[derive(Clone, Debug)]
pub struct GestureBatch {
    /// `[B, 3, T, J]`
    pub coords: Tensor,
    /// `[B, T, 6J]`
    pub recurrent: Tensor,
    /// Three `[B, J, J]` normalized adjacency groups.
    pub adjacency: [Tensor; 3],
    pub labels: Vec<usize>,
}

impl GestureBatch {
    pub fn from_samples(samples: &[&PreparedSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (j, t) = (first.joints, first.frames);
        if samples.iter().any(|s| s.joints != j || s.frames != t) {
            return Err(Error::shape(
                "batch",
                "samples differ in joints or frames".to_string(),
            ));
        }
        let b = samples.len();
        let cat = |f: &dyn Fn(&PreparedSample) -> &[f64]| -> Vec<f64> {
            samples.iter().flat_map(|s| f(s).iter().copied()).collect()
        };
        let coords = Tensor::new(vec![b, 3, t, j], cat(&|s| &s.coords))?;
        let recurrent = Tensor::new(vec![b, t, 6 * j], cat(&|s| &s.recurrent))?;
        let adjacency = [0, 1, 2].map(|k| {
            Tensor::new(vec![b, j, j], cat(&|s| &s.adjacency[k])).expect("adjacency extents")
        });
        Ok(GestureBatch {
            coords,
            recurrent,
            adjacency,
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::DatasetKind;

    fn ramp(len: usize, joints: usize) -> SkeletonSequence {
        let coords = (0..len * joints)
            .map(|i| [(i / joints) as f64, (i % joints) as f64, 0.5])
            .collect();
        SkeletonSequence::new(joints, coords, 0).unwrap()
    }

    #[test]
    fn index_rule() {
        assert_eq!(sample_indices(20, 20), (0..20).collect::<Vec<_>>());
        assert_eq!(
            sample_indices(40, 20),
            (0..20).map(|i| 2 * i).collect::<Vec<_>>()
        );
        let mut short: Vec<usize> = (0..7).collect();
        short.extend([6; 13]);
        assert_eq!(sample_indices(7, 20), short);
    }

    #[test]
    fn sampling_is_idempotent() {
        for len in [1, 7, 20, 33, 50] {
            let once = sample_frames(&ramp(len, 2), 20);
            assert_eq!(sample_frames(&once, 20), once);
            assert_eq!(once.len(), 20);
        }
    }

    #[test]
    fn displacement_examples() {
        let still = SkeletonSequence::new(2, vec![[1.0, 2.0, 3.0]; 8], 0).unwrap();
        assert!(displacement_features(&still)
            .iter()
            .flatten()
            .all(|&v| v == 0.0));

        let moving = ramp(5, 3);
        let d = displacement_features(&moving);
        assert_eq!(&d[..3], &[[0.0; 3]; 3]);
        assert!(d[3..].iter().all(|v| *v == [1.0, 0.0, 0.0]));
    }

    #[test]
    fn displacement_matches_direct_subtraction() {
        let coords: Vec<[f64; 3]> = (0..6)
            .map(|i| {
                let x = i as f64;
                [(x * 1.3).sin(), (x * 0.7).cos(), x * x * 0.1]
            })
            .collect();
        let seq = SkeletonSequence::new(2, coords.clone(), 0).unwrap();
        let d = displacement_features(&seq);
        for i in 2..6 {
            for k in 0..3 {
                assert_eq!(d[i][k], coords[i][k] - coords[i - 2][k]);
            }
        }
    }

    #[test]
    fn batch_layouts_share_frames() {
        let topo = SkeletonTopology::hand(DatasetKind::Fpha21).unwrap();
        let seqs: Vec<_> = [25, 31]
            .iter()
            .map(|&n| {
                let coords = (0..n * 21)
                    .map(|i| [i as f64 * 0.01, (i % 21) as f64, (i / 21) as f64])
                    .collect();
                SkeletonSequence::new(21, coords, 1).unwrap()
            })
            .collect();
        let prepared: Vec<_> = seqs
            .iter()
            .map(|s| PreparedSample::new(s, &topo, PrepareOptions::default()).unwrap())
            .collect();
        let batch = GestureBatch::from_samples(&prepared.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(batch.coords.shape(), &[2, 3, 20, 21]);
        assert_eq!(batch.recurrent.shape(), &[2, 20, 126]);
        for b in 0..2 {
            for t in 0..20 {
                for j in 0..21 {
                    for k in 0..3 {
                        assert_eq!(
                            batch.coords.at(&[b, k, t, j]),
                            batch.recurrent.at(&[b, t, 3 * j + k])
                        );
                    }
                }
            }
        }
    }
}
