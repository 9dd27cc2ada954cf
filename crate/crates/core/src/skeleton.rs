//! Hand-skeleton topologies and the three-group partitioned adjacency
//! (root, centripetal, centrifugal) consumed by the graph convolution.
//!
//! Joint order for the built-in hands is wrist, [palm], then each digit
//! from thumb to pinky as base → first → second → tip.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Regularizer for [`ZeroDegree::Epsilon`].
pub const DEGREE_EPS: f64 = 1e-6;

/// How a row with zero degree enters `Λ^{-1/2}`.
///
/// With the one-sided partitions a joint can have zero degree in a group
/// while a neighbor still points at it; `Epsilon` then produces entries of
/// `1/√(d_i ε)` (about 1000 for `ε = 1e-6`). `Drop` treats `0^{-1/2}` as 0,
/// so such entries vanish and every other entry is `A_ij/√(d_i d_j)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum ZeroDegree {
    #[default]
    Drop,
    Epsilon(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    /// 22 joints, palm included.
    Dhg22,
    /// 21 joints, no palm.
    Fpha21,
    Custom,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dhg22" | "dhg" => Ok(Self::Dhg22),
            "fpha21" | "fpha" => Ok(Self::Fpha21),
            "custom" => Ok(Self::Custom),
            _ => Err(Error::InvalidArgument(format!(
                "unknown dataset kind `{s}`"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dhg22 => "dhg22",
            Self::Fpha21 => "fpha21",
            Self::Custom => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonTopology {
    joint_count: usize,
    edges: Vec<(usize, usize)>,
    kind: DatasetKind,
}

impl SkeletonTopology {
    /// Validates and normalizes an edge list: indices in range, no self
    /// loops, no duplicates (in either orientation), connected from joint 0.
    pub fn new(joint_count: usize, edges: Vec<(usize, usize)>, kind: DatasetKind) -> Result<Self> {
        if joint_count == 0 {
            return Err(Error::Topology("joint count must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        let mut norm = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a >= joint_count || b >= joint_count {
                return Err(Error::Topology(format!(
                    "edge ({a}, {b}) outside 0..{joint_count}"
                )));
            }
            if a == b {
                return Err(Error::Topology(format!("self loop at joint {a}")));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(Error::Topology(format!("duplicate edge ({a}, {b})")));
            }
            norm.push(key);
        }
        let topo = SkeletonTopology {
            joint_count,
            edges: norm,
            kind,
        };
        let reach = topo.reachable_from(0);
        if let Some(j) = reach.iter().position(|r| !r) {
            return Err(Error::Topology(format!(
                "joint {j} is not connected to joint 0"
            )));
        }
        Ok(topo)
    }

    /// The fixed hand topology for a dataset kind.
    pub fn hand(kind: DatasetKind) -> Result<Self> {
        let (joints, root, first_digit) = match kind {
            DatasetKind::Dhg22 => (22, 1, 2),
            DatasetKind::Fpha21 => (21, 0, 1),
            DatasetKind::Custom => {
                return Err(Error::InvalidArgument(
                    "custom topologies are built with SkeletonTopology::new".into(),
                ))
            }
        };
        let mut edges = Vec::new();
        if kind == DatasetKind::Dhg22 {
            edges.push((0, 1));
        }
        for digit in 0..5 {
            let base = first_digit + 4 * digit;
            edges.push((root, base));
            for k in 0..3 {
                edges.push((base + k, base + k + 1));
            }
        }
        Self::new(joints, edges, kind)
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    /// Index of the first joint of each digit chain (thumb..pinky).
    pub fn digit_bases(&self) -> Option<[usize; 5]> {
        let first = match self.kind {
            DatasetKind::Dhg22 => 2,
            DatasetKind::Fpha21 => 1,
            DatasetKind::Custom => return None,
        };
        Some(std::array::from_fn(|d| first + 4 * d))
    }

    fn reachable_from(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.joint_count];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(j) = stack.pop() {
            for &(a, b) in &self.edges {
                let other = if a == j {
                    b
                } else if b == j {
                    a
                } else {
                    continue;
                };
                if !seen[other] {
                    seen[other] = true;
                    stack.push(other);
                }
            }
        }
        seen
    }

    /// Symmetric 0/1 adjacency without self loops.
    pub fn adjacency_matrix(&self) -> Tensor {
        let n = self.joint_count;
        let mut a = Tensor::zeros(&[n, n]);
        for &(i, j) in &self.edges {
            a.set(&[i, j], 1.0);
            a.set(&[j, i], 1.0);
        }
        a
    }

    /// The same graph with joints relabeled: joint `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.joint_count {
            return Err(Error::Topology("permutation length".into()));
        }
        // joint 0 must stay connected; any relabeling of a connected graph is.
        let edges = self
            .edges
            .iter()
            .map(|&(a, b)| (perm[a], perm[b]))
            .collect();
        Self::new(self.joint_count, edges, DatasetKind::Custom)
    }
}

/// One pose of `J` joints in world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferencePose {
    coords: Vec<[f64; 3]>,
}

impl ReferencePose {
    pub fn new(coords: Vec<[f64; 3]>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidArgument(
                "pose needs at least one joint".into(),
            ));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("reference pose".into()));
        }
        Ok(ReferencePose { coords })
    }

    pub fn joints(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn joint_count(&self) -> usize {
        self.coords.len()
    }
}

/// Mean of the joint coordinates.
pub fn gravity_center(pose: &ReferencePose) -> [f64; 3] {
    let n = pose.coords.len() as f64;
    let mut c = [0.0; 3];
    for p in &pose.coords {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    c.map(|v| v / n)
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

/// Root / centripetal / centrifugal adjacency groups and, once
/// [`normalize`](Self::normalize)d, their symmetric normalizations.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedAdjacency {
    pub raw: [Tensor; 3],
    pub normalized: Option<[Tensor; 3]>,
}

impl PartitionedAdjacency {
    pub fn joint_count(&self) -> usize {
        self.raw[0].shape()[0]
    }

    /// Fills in `Λ^{-1/2} A Λ^{-1/2}` for each group.
    pub fn normalize(mut self) -> Result<Self> {
        let n = [
            normalize_matrix(&self.raw[0])?,
            normalize_matrix(&self.raw[1])?,
            normalize_matrix(&self.raw[2])?,
        ];
        self.normalized = Some(n);
        Ok(self)
    }

    /// Partitions and normalizes in one go.
    pub fn for_pose(topology: &SkeletonTopology, pose: &ReferencePose) -> Result<Self> {
        partition_adjacency(topology, pose)?.normalize()
    }

    pub fn normalized(&self) -> Result<&[Tensor; 3]> {
        self.normalized
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("adjacency has not been normalized".into()))
    }
}

/// Splits each joint's neighbors into the centripetal group (strictly
/// closer to the gravity center than the root) and the centrifugal group
/// (everything else, ties included). Group 0 is the identity.
pub fn partition_adjacency(
    topology: &SkeletonTopology,
    pose: &ReferencePose,
) -> Result<PartitionedAdjacency> {
    let n = topology.joint_count();
    if pose.joint_count() != n {
        return Err(Error::shape(
            "partition_adjacency",
            format!("pose has {} joints, topology {n}", pose.joint_count()),
        ));
    }
    let center = gravity_center(pose);
    let d: Vec<f64> = pose.coords.iter().map(|p| dist2(p, &center)).collect();
    let mut closer = Tensor::zeros(&[n, n]);
    let mut farther = Tensor::zeros(&[n, n]);
    for &(a, b) in topology.edges() {
        for (root, nb) in [(a, b), (b, a)] {
            if d[nb] < d[root] {
                closer.set(&[root, nb], 1.0);
            } else {
                farther.set(&[root, nb], 1.0);
            }
        }
    }
    Ok(PartitionedAdjacency {
        raw: [Tensor::eye(n), closer, farther],
        normalized: None,
    })
}

/// `Λ^{-1/2} A Λ^{-1/2}` with `Λ_ii = Σ_j A_ij`, zero degrees dropped.
pub fn normalize_matrix(a: &Tensor) -> Result<Tensor> {
    normalize_matrix_with(a, ZeroDegree::Drop)
}

pub fn normalize_matrix_with(a: &Tensor, zero: ZeroDegree) -> Result<Tensor> {
    let [n, m] = *a.shape() else {
        return Err(Error::shape(
            "normalize_adjacency",
            format!("{:?} is not square", a.shape()),
        ));
    };
    if n != m {
        return Err(Error::shape(
            "normalize_adjacency",
            format!("{:?} is not square", a.shape()),
        ));
    }
    if a.data().iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "adjacency entries must be finite and non-negative".into(),
        ));
    }
    let inv_sqrt: Vec<f64> = a
        .data()
        .chunks(n)
        .map(|row| {
            let deg: f64 = row.iter().sum();
            match zero {
                _ if deg > 0.0 => 1.0 / deg.sqrt(),
                ZeroDegree::Drop => 0.0,
                ZeroDegree::Epsilon(eps) => 1.0 / eps.sqrt(),
            }
        })
        .collect();
    let out = Tensor::from_fn(&[n, n], |k| {
        let (i, j) = (k / n, k % n);
        inv_sqrt[i] * a.data()[k] * inv_sqrt[j]
    });
    if !out.is_finite() {
        return Err(Error::NonFinite("normalize_adjacency".into()));
    }
    Ok(out)
}

/// Row-major CSV with shortest round-trip decimals.
pub fn matrix_csv(m: &Tensor) -> String {
    let cols = *m.shape().last().unwrap();
    let mut s = String::new();
    for row in m.data().chunks(cols) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{v:?}");
        }
        s.push('\n');
    }
    s
}
