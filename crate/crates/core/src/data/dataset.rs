//! On-disk dataset layout: `<root>/<split>/<class_id>/<sequence_id>.skl`,
//! plus `classes.txt` (one class name per line) and `manifest.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{load_sequence, save_sequence, SkeletonSequence, Split};
use crate::{Error, Result};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sequence_id: String,
    pub split: String,
    pub class_id: usize,
    /// Relative to the dataset root.
    pub path: PathBuf,
}

pub fn manifest_csv(entries: &[ManifestEntry]) -> String {
    let mut s = String::from("sequence_id,split,class_id,path\n");
    for e in entries {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            e.sequence_id,
            e.split,
            e.class_id,
            e.path.display()
        );
    }
    s
}

/// Writes every split of `sequences` under `root`. Sequence ids are the
/// zero-padded input indices.
pub fn write_dataset(
    root: &Path,
    sequences: &[SkeletonSequence],
    split: &Split,
    class_names: &[String],
) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(root)?;
    fs::write(root.join("classes.txt"), class_names.join("\n") + "\n")?;
    let mut entries = Vec::with_capacity(sequences.len());
    for (name, idx) in SPLITS.iter().zip([&split.train, &split.val, &split.test]) {
        for &i in idx {
            let seq = &sequences[i];
            if seq.label >= class_names.len() {
                return Err(Error::InvalidArgument(format!(
                    "sequence {i} has label {} but only {} classes are named",
                    seq.label,
                    class_names.len()
                )));
            }
            let rel = PathBuf::from(name)
                .join(seq.label.to_string())
                .join(format!("{i:06}.skl"));
            fs::create_dir_all(root.join(rel.parent().expect("has parent")))?;
            save_sequence(seq, &root.join(&rel))?;
            entries.push(ManifestEntry {
                sequence_id: format!("{i:06}"),
                split: name.to_string(),
                class_id: seq.label,
                path: rel,
            });
        }
    }
    entries.sort_by(|a, b| a.sequence_id.cmp(&b.sequence_id));
    fs::write(root.join("manifest.csv"), manifest_csv(&entries))?;
    Ok(entries)
}

/// Class names from `classes.txt`, or `0..K` from the class directories
/// when the file is absent.
pub fn load_class_names(root: &Path) -> Result<Vec<String>> {
    let path = root.join("classes.txt");
    if path.exists() {
        let text = fs::read_to_string(&path)?;
        return Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect());
    }
    let mut max = None;
    for split in SPLITS {
        let dir = root.join(split);
        if !dir.is_dir() {
            continue;
        }
        for e in fs::read_dir(dir)? {
            if let Ok(c) = e?.file_name().to_string_lossy().parse::<usize>() {
                max = max.max(Some(c));
            }
        }
    }
    let k = max
        .map(|m| m + 1)
        .ok_or_else(|| Error::InvalidArgument(format!("no classes under {}", root.display())))?;
    Ok((0..k).map(|c| c.to_string()).collect())
}

/// Loads one split, sorted by path. A missing split directory is empty.
/// The directory name overrides the label stored in each file.
pub fn load_split(root: &Path, split: &str) -> Result<Vec<SkeletonSequence>> {
    let dir = root.join(split);
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files = Vec::new();
    for class_dir in fs::read_dir(&dir)? {
        let class_dir = class_dir?.path();
        let Some(class_id) = class_dir
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        for f in fs::read_dir(&class_dir)? {
            let f = f?.path();
            if f.extension().is_some_and(|e| e == "skl") {
                files.push((f, class_id));
            }
        }
    }
    files.sort();
    files
        .into_iter()
        .map(|(f, c)| {
            let mut s = load_sequence(&f)?;
            s.label = c;
            Ok(s)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub train: Vec<SkeletonSequence>,
    pub val: Vec<SkeletonSequence>,
    pub test: Vec<SkeletonSequence>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let ds = Dataset {
            class_names: load_class_names(root)?,
            train: load_split(root, "train")?,
            val: load_split(root, "val")?,
            test: load_split(root, "test")?,
        };
        let k = ds.class_names.len();
        if let Some(s) = ds
            .train
            .iter()
            .chain(&ds.val)
            .chain(&ds.test)
            .find(|s| s.label >= k)
        {
            return Err(Error::InvalidArgument(format!(
                "label {} outside the {k} named classes",
                s.label
            )));
        }
        Ok(ds)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}
