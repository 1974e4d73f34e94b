//! Sequence directories: `img/0001.png ...` plus `groundtruth.txt`.
//!
//! Ground-truth lines are `x,y,w,h` with a 1-based top-left corner; commas,
//! tabs or spaces may separate the fields. Boxes are 0-based in memory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::image::Image;

pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";
pub const IMAGE_DIR: &str = "img";
const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "jpg", "jpeg"];

/// A sequence on disk: frame paths in order and one box per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub root: PathBuf,
    pub frames: Vec<PathBuf>,
    pub groundtruth: Vec<BBox>,
}

impl Sequence {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let img_dir = root.join(IMAGE_DIR);
        let entries = std::fs::read_dir(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        let mut frames = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&img_dir, e))?.path();
            let is_image = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
            if is_image {
                frames.push(path);
            }
        }
        frames.sort();
        let groundtruth = read_groundtruth(root.join(GROUNDTRUTH_FILE))?;
        Ok(Self {
            root,
            frames,
            groundtruth,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn load_frame(&self, i: usize) -> Result<Image> {
        Image::load(&self.frames[i])
    }
}

pub fn parse_groundtruth(text: &str, path: &Path) -> Result<Vec<BBox>> {
    let mut boxes = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            what: "groundtruth",
            path: path.to_path_buf(),
            line: no + 1,
            msg,
        };
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|e| err(format!("bad number {f:?}: {e}")))?;
            if !slot.is_finite() {
                return Err(err(format!("non-finite value {f:?}")));
            }
        }
        boxes.push(BBox::new(v[0] - 1.0, v[1] - 1.0, v[2], v[3]));
    }
    Ok(boxes)
}

pub fn read_groundtruth(path: impl AsRef<Path>) -> Result<Vec<BBox>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_groundtruth(&text, path)
}

pub fn format_groundtruth(boxes: &[BBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        let _ = writeln!(out, "{},{},{},{}", b.x + 1.0, b.y + 1.0, b.w, b.h);
    }
    out
}

pub fn write_groundtruth(path: impl AsRef<Path>, boxes: &[BBox]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_groundtruth(boxes)).map_err(|e| Error::io(path, e))
}

/// Writes `frames` as `img/0001.png ...` and `boxes` as `groundtruth.txt`.
pub fn write_sequence(dir: impl AsRef<Path>, frames: &[Image], boxes: &[BBox]) -> Result<()> {
    let dir = dir.as_ref();
    if frames.len() != boxes.len() {
        return Err(Error::InvalidParameter(format!(
            "{} frames but {} boxes",
            frames.len(),
            boxes.len()
        )));
    }
    let img_dir = dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        f.save(img_dir.join(format!("{:04}.png", i + 1)))?;
    }
    write_groundtruth(dir.join(GROUNDTRUTH_FILE), boxes)
}
