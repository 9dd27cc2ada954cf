//! Skeleton sequences and their text file format (`.skl`).
//!
//! ```text
//! J T label [subject] [finger_mode]
//! x0 y0 z0 x1 y1 z1 ...        T lines of 3·J numbers, joint-major
//! ```
//!
//! `finger_mode` is `one` or `whole`. Blank lines and lines starting with
//! `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use crate::skeleton::ReferencePose;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FingerMode {
    One,
    Whole,
}

impl FingerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FingerMode::One => "one",
            FingerMode::Whole => "whole",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    joints: usize,
    /// `T·J` joint positions, frame-major.
    coords: Vec<[f64; 3]>,
    pub label: usize,
    pub subject: Option<u32>,
    pub finger_mode: Option<FingerMode>,
}

impl SkeletonSequence {
    pub fn new(joints: usize, coords: Vec<[f64; 3]>, label: usize) -> Result<Self> {
        if joints == 0 || coords.is_empty() || coords.len() % joints != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} joint positions do not form whole frames of {joints} joints",
                coords.len()
            )));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("skeleton sequence".into()));
        }
        Ok(SkeletonSequence {
            joints,
            coords,
            label,
            subject: None,
            finger_mode: None,
        })
    }

    pub fn from_frames(frames: Vec<Vec<[f64; 3]>>, label: usize) -> Result<Self> {
        let joints = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != joints) {
            return Err(Error::InvalidArgument(
                "frames have differing joint counts".into(),
            ));
        }
        Self::new(joints, frames.into_iter().flatten().collect(), label)
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.joints
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn frame(&self, t: usize) -> &[[f64; 3]] {
        &self.coords[t * self.joints..(t + 1) * self.joints]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[[f64; 3]]> {
        self.coords.chunks(self.joints)
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    /// Same metadata, new frames.
    pub fn with_coords(&self, coords: Vec<[f64; 3]>) -> Result<Self> {
        let mut s = Self::new(self.joints, coords, self.label)?;
        s.subject = self.subject;
        s.finger_mode = self.finger_mode;
        Ok(s)
    }

    /// Temporal mean pose.
    pub fn mean_pose(&self) -> ReferencePose {
        let t = self.len() as f64;
        let mut mean = vec![[0.0; 3]; self.joints];
        for frame in self.frames() {
            for (m, p) in mean.iter_mut().zip(frame) {
                for k in 0..3 {
                    m[k] += p[k];
                }
            }
        }
        for m in &mut mean {
            for v in m.iter_mut() {
                *v /= t;
            }
        }
        ReferencePose::new(mean).expect("mean of finite frames")
    }

    /// Translates every frame so the first-frame wrist (joint 0) sits at the
    /// origin.
    pub fn wrist_centered(&self) -> Self {
        let w = self.coords[0];
        let coords = self
            .coords
            .iter()
            .map(|p| [p[0] - w[0], p[1] - w[1], p[2] - w[2]])
            .collect();
        self.with_coords(coords)
            .expect("translation keeps values finite")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = write!(s, "{} {} {}", self.joints, self.len(), self.label);
        if let Some(sub) = self.subject {
            let _ = write!(s, " {sub}");
        }
        if let Some(m) = self.finger_mode {
            let _ = write!(s, " {}", m.as_str());
        }
        s.push('\n');
        for frame in self.frames() {
            let mut first = true;
            for v in frame.iter().flatten() {
                if !first {
                    s.push(' ');
                }
                first = false;
                let _ = write!(s, "{v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (hno, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let tok: Vec<&str> = header.split_whitespace().collect();
        if !(3..=5).contains(&tok.len()) {
            return Err(err(
                hno,
                format!(
                    "header needs `J T label [subject] [finger_mode]`, got {} fields",
                    tok.len()
                ),
            ));
        }
        let num = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|e| err(hno, format!("bad {what} `{s}`: {e}")))
        };
        let joints = num(tok[0], "joint count")?;
        let frames = num(tok[1], "frame count")?;
        let label = num(tok[2], "label")?;
        if joints == 0 || frames == 0 {
            return Err(err(hno, "joint and frame counts must be positive".into()));
        }
        let mut subject = None;
        let mut finger_mode = None;
        for t in &tok[3..] {
            match *t {
                "one" => finger_mode = Some(FingerMode::One),
                "whole" => finger_mode = Some(FingerMode::Whole),
                other => {
                    subject =
                        Some(other.parse::<u32>().map_err(|_| {
                            err(hno, format!("unrecognized header field `{other}`"))
                        })?)
                }
            }
        }

        let mut coords = Vec::with_capacity(joints * frames);
        let mut last_line = hno;
        for _ in 0..frames {
            let (no, line) = lines
                .next()
                .ok_or_else(|| err(last_line + 1, format!("expected {frames} frame lines")))?;
            last_line = no;
            let vals = line
                .split_whitespace()
                .map(|v| {
                    let x: f64 = v
                        .parse()
                        .map_err(|_| err(no, format!("malformed number `{v}`")))?;
                    if x.is_finite() {
                        Ok(x)
                    } else {
                        Err(err(no, format!("non-finite value `{v}`")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != 3 * joints {
                return Err(err(
                    no,
                    format!("expected {} values, found {}", 3 * joints, vals.len()),
                ));
            }
            coords.extend(vals.chunks(3).map(|c| [c[0], c[1], c[2]]));
        }
        if let Some((no, _)) = lines.next() {
            return Err(err(no, format!("unexpected data after {frames} frames")));
        }
        let mut seq = Self::new(joints, coords, label).map_err(|e| err(hno, e.to_string()))?;
        seq.subject = subject;
        seq.finger_mode = finger_mode;
        Ok(seq)
    }
}

pub fn load_sequence(path: &Path) -> Result<SkeletonSequence> {
    let text = std::fs::read_to_string(path)?;
    SkeletonSequence::parse(&text, path)
}

pub fn save_sequence(seq: &SkeletonSequence, path: &Path) -> Result<()> {
    std::fs::write(path, seq.to_text())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("test.skl")
    }

    #[test]
    fn minimal_parse() {
        let s = SkeletonSequence::parse("2 2 1\n0 0 0 1 1 1\n2 2 2 3 3 3\n", p()).unwrap();
        assert_eq!((s.len(), s.joints(), s.label), (2, 2, 1));
        assert_eq!(s.frame(1)[1], [3.0, 3.0, 3.0]);
        assert_eq!(s.subject, None);
    }

    #[test]
    fn optional_header_fields() {
        let s = SkeletonSequence::parse("1 1 0 7 whole\n1 2 3\n", p()).unwrap();
        assert_eq!(s.subject, Some(7));
        assert_eq!(s.finger_mode, Some(FingerMode::Whole));
        assert!(SkeletonSequence::parse("1 1 0 seven\n1 2 3\n", p()).is_err());
    }

    #[test]
    fn arity_error_reports_line() {
        let r = SkeletonSequence::parse("2 2 0\n0 0 0 1 1 1\n1 2 3 4 5\n", p());
        match r {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("expected 6"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_values_report_line() {
        for (text, line) in [
            ("1 1 0\n1 x 3\n", 2),
            ("1 2 0\n1 2 3\nNaN 0 0\n", 3),
            ("1 2 0\n1 2 3\n", 3),
            ("1 1\n", 1),
        ] {
            match SkeletonSequence::parse(text, p()) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: unexpected {other:?}"),
            }
        }
    }

    proptest! {
        #[test]
        fn text_round_trip(joints in 1usize..5, frames in 1usize..6, label in 0usize..30,
                           seed in prop::collection::vec(-1e3f64..1e3, 1..200)) {
            let n = joints * frames;
            let coords: Vec<[f64; 3]> = (0..n).map(|i| {
                let v = |k: usize| seed[(3 * i + k) % seed.len()] * (1.0 + i as f64 * 1e-3);
                [v(0), v(1), v(2)]
            }).collect();
            let mut s = SkeletonSequence::new(joints, coords, label).unwrap();
            s.subject = Some(3);
            let back = SkeletonSequence::parse(&s.to_text(), p()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
