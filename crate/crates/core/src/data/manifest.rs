//! Line-oriented dataset index.
//!
//! One tab-separated line per frame: frame path, mask path, clip id, frame
//! index. Paths are relative to the manifest's directory. Lines starting
//! with `#` are comments.

use std::path::{Path, PathBuf};

use super::pnm::{load_frame, load_mask};
use super::Clip;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic_str;

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub frame: String,
    pub mask: String,
    pub clip: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# frame\tmask\tclip\tindex\n");
        for e in &self.entries {
            s += &format!("{}\t{}\t{}\t{}\n", e.frame, e.mask, e.clip, e.index);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let body = line.trim_end_matches(['\n', '\r']);
            if !body.is_empty() && !body.starts_with('#') {
                let fields: Vec<&str> = body.split('\t').collect();
                let bad = |message: String| Error::Parse { offset, message };
                if fields.len() != 4 {
                    return Err(bad(format!("expected 4 tab-separated fields, found {}", fields.len())));
                }
                let index = fields[3]
                    .parse()
                    .map_err(|_| bad(format!("invalid frame index {:?}", fields[3])))?;
                entries.push(ManifestEntry {
                    frame: fields[0].to_string(),
                    mask: fields[1].to_string(),
                    clip: fields[2].to_string(),
                    index,
                });
            }
            offset += line.len();
        }
        Ok(Self { entries })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        write_atomic_str(dir.as_ref().join(MANIFEST_NAME), &self.to_text())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }

    /// Clip ids in first-appearance order.
    pub fn clip_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for e in &self.entries {
            if ids.last() != Some(&e.clip) && !ids.contains(&e.clip) {
                ids.push(e.clip.clone());
            }
        }
        ids
    }

    /// Entries of `clip` sorted by frame index.
    pub fn clip_entries(&self, clip: &str) -> Vec<&ManifestEntry> {
        let mut v: Vec<&ManifestEntry> = self.entries.iter().filter(|e| e.clip == clip).collect();
        v.sort_by_key(|e| e.index);
        v
    }
}

/// Reads every frame and mask of `clip` from a dataset rooted at `dir`.
pub fn load_clip(dir: impl AsRef<Path>, manifest: &Manifest, clip: &str) -> Result<Clip> {
    let dir = dir.as_ref();
    let entries = manifest.clip_entries(clip);
    if entries.is_empty() {
        return Err(Error::arg(format!("clip {clip:?} is not in the manifest")));
    }
    for (i, e) in entries.iter().enumerate() {
        if e.index != i {
            return Err(Error::arg(format!("clip {clip:?}: frame index {i} missing or duplicated")));
        }
    }
    let mut out = Clip {
        frames: Vec::with_capacity(entries.len()),
        masks: Vec::with_capacity(entries.len()),
    };
    for e in entries {
        out.frames.push(load_frame(dir.join(&e.frame))?);
        out.masks.push(load_mask(dir.join(&e.mask))?);
    }
    Ok(out)
}

/// Relative frame and mask paths of frame `index` in `clip`.
pub fn frame_paths(clip: &str, index: usize) -> (PathBuf, PathBuf) {
    let d = PathBuf::from(clip);
    (d.join(format!("frame_{index:04}.ppm")), d.join(format!("mask_{index:04}.pgm")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let m = Manifest {
            entries: vec![
                ManifestEntry { frame: "a/f0.ppm".into(), mask: "a/m0.pgm".into(), clip: "a".into(), index: 0 },
                ManifestEntry { frame: "b/f0.ppm".into(), mask: "b/m0.pgm".into(), clip: "b".into(), index: 0 },
                ManifestEntry { frame: "a/f1.ppm".into(), mask: "a/m1.pgm".into(), clip: "a".into(), index: 1 },
            ],
        };
        let back = Manifest::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.clip_ids(), vec!["a", "b"]);
        assert_eq!(back.clip_entries("a").len(), 2);
    }

    #[test]
    fn malformed_line_reports_offset() {
        let text = "# header\nx\ty\tz\t0\nbroken line\n";
        match Manifest::parse(text).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 17),
            e => panic!("{e}"),
        }
    }
}
