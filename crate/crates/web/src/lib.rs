//! Browser bindings for the gesture demo page (`www/`).
//!
//! Three operations are exposed: generating a synthetic gesture clip, the
//! partitioned skeleton adjacency of that clip, and the attention maps a
//! small graph-stream network produces for it.

use wasm_bindgen::prelude::*;

use gesture_core::config::{StreamKind, TrainConfig};
use gesture_core::data::{
    generate_synthetic, GestureBatch, GestureKind, PrepareOptions, PreparedSample,
    SkeletonSequence, SyntheticSpec,
};
use gesture_core::model::StreamModel;
use gesture_core::skeleton::{DatasetKind, SkeletonTopology};

/// Channel plan of the in-browser attention network.
const DEMO_CHANNELS: [usize; 6] = [8, 8, 16, 16, 32, 32];

fn js(e: gesture_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Clip {
    joints: usize,
    frames: usize,
    coords: Vec<f64>,
    edges: Vec<u32>,
}

#[wasm_bindgen]
impl Clip {
    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// `frames × joints × 3`, frame-major.
    pub fn coords(&self) -> Vec<f64> {
        self.coords.clone()
    }

    /// Flattened `(a, b)` joint pairs.
    pub fn edges(&self) -> Vec<u32> {
        self.edges.clone()
    }
}

/// Comma-separated generator ids accepted by the other functions.
#[wasm_bindgen]
pub fn gesture_kinds() -> String {
    GestureKind::ALL.map(|k| k.as_str()).join(",")
}

pub fn topology(hand: &str) -> gesture_core::Result<SkeletonTopology> {
    SkeletonTopology::hand(DatasetKind::parse(hand)?)
}

pub fn clip_sequence(
    kind: &str,
    hand: &str,
    seed: u32,
    noise: f64,
) -> gesture_core::Result<(SkeletonTopology, SkeletonSequence)> {
    let topo = topology(hand)?;
    let kind = GestureKind::parse(kind)?;
    let spec = SyntheticSpec::all_families(noise, 1, u64::from(seed));
    let idx = GestureKind::ALL
        .iter()
        .position(|k| *k == kind)
        .expect("listed kind");
    let seq = generate_synthetic(&spec, &topo)?.swap_remove(idx);
    Ok((topo, seq))
}

fn prepared(
    kind: &str,
    hand: &str,
    seed: u32,
    noise: f64,
) -> gesture_core::Result<(SkeletonTopology, PreparedSample)> {
    let (topo, seq) = clip_sequence(kind, hand, seed, noise)?;
    let sample = PreparedSample::new(&seq, &topo, PrepareOptions::default())?;
    Ok((topo, sample))
}

/// Normalized root, centripetal and centrifugal matrices of the clip's
/// sampled mean pose, concatenated (`3 × J × J`).
pub fn partitions(kind: &str, hand: &str, seed: u32, noise: f64) -> gesture_core::Result<Vec<f64>> {
    let (_, sample) = prepared(kind, hand, seed, noise)?;
    Ok(sample.adjacency.concat())
}

/// Attention maps of each unit of a seeded, untrained graph-stream network
/// (`units × J × J`).
pub fn attention(
    kind: &str,
    hand: &str,
    seed: u32,
    noise: f64,
    net_seed: u32,
) -> gesture_core::Result<Vec<f64>> {
    let (topo, sample) = prepared(kind, hand, seed, noise)?;
    let mut cfg = TrainConfig::for_stream(StreamKind::Sagcn);
    cfg.channels = DEMO_CHANNELS.to_vec();
    cfg.seed = u64::from(net_seed);
    let model = StreamModel::new(&cfg, topo.joint_count(), GestureKind::ALL.len())?;
    let maps = model.attention_maps(&GestureBatch::from_samples(&[&sample])?)?;
    Ok(maps.iter().flat_map(|m| m.data().iter().copied()).collect())
}

#[wasm_bindgen]
pub fn synth_clip(kind: &str, hand: &str, seed: u32, noise: f64) -> Result<Clip, JsError> {
    let (topo, seq) = clip_sequence(kind, hand, seed, noise).map_err(js)?;
    Ok(Clip {
        joints: seq.joints(),
        frames: seq.len(),
        coords: seq.coords().iter().flatten().copied().collect(),
        edges: topo
            .edges()
            .iter()
            .flat_map(|&(a, b)| [a as u32, b as u32])
            .collect(),
    })
}

#[wasm_bindgen]
pub fn partition_heatmaps(
    kind: &str,
    hand: &str,
    seed: u32,
    noise: f64,
) -> Result<Vec<f64>, JsError> {
    partitions(kind, hand, seed, noise).map_err(js)
}

#[wasm_bindgen]
pub fn attention_heatmaps(
    kind: &str,
    hand: &str,
    seed: u32,
    noise: f64,
    net_seed: u32,
) -> Result<Vec<f64>, JsError> {
    attention(kind, hand, seed, noise, net_seed).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_has_whole_frames() {
        let (topo, seq) = clip_sequence("swipe-left", "dhg22", 3, 0.0).unwrap();
        assert_eq!(seq.joints(), 22);
        assert_eq!(topo.edges().len(), 21);
        assert!((20..=50).contains(&seq.len()));
        assert!(clip_sequence("wave", "dhg22", 3, 0.0).is_err());
        assert!(clip_sequence("grab", "custom", 3, 0.0).is_err());
    }

    #[test]
    fn partition_root_is_identity() {
        let p = partitions("grab", "fpha21", 1, 0.01).unwrap();
        let j = 21;
        assert_eq!(p.len(), 3 * j * j);
        for r in 0..j {
            for c in 0..j {
                assert_eq!(p[r * j + c], f64::from(r == c));
            }
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let a = attention("rotation-cw", "dhg22", 2, 0.0, 5).unwrap();
        let j = 22;
        assert_eq!(a.len(), DEMO_CHANNELS.len() * j * j);
        for row in a.chunks(j) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
