//! Frame sources. Videos arrive as directories of numbered PNG images.

use std::path::{Path, PathBuf};

use image::RgbImage;
use thiserror::Error;

use crate::model::FrameRef;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("no numbered png frames in {0}")]
    NoFrames(PathBuf),
    #[error("frame {0} out of range")]
    OutOfRange(usize),
    #[error("duplicate frame number {0} in {1}")]
    DuplicateNumber(u64, PathBuf),
}

pub trait FrameSource: Sync {
    fn frames(&self) -> &[FrameRef];
    fn load(&self, index: usize) -> Result<RgbImage, FrameError>;
}

/// Frames held in memory; used by tests and synthetic scenes.
pub struct MemoryFrames {
    refs: Vec<FrameRef>,
    images: Vec<RgbImage>,
}

impl MemoryFrames {
    pub fn new(images: Vec<RgbImage>) -> Self {
        let refs = images
            .iter()
            .enumerate()
            .map(|(index, img)| FrameRef {
                index,
                path_or_id: format!("mem:{index}"),
                width: img.width(),
                height: img.height(),
            })
            .collect();
        Self { refs, images }
    }

    pub fn images(&self) -> &[RgbImage] {
        &self.images
    }
}

impl FrameSource for MemoryFrames {
    fn frames(&self) -> &[FrameRef] {
        &self.refs
    }

    fn load(&self, index: usize) -> Result<RgbImage, FrameError> {
        self.images.get(index).cloned().ok_or(FrameError::OutOfRange(index))
    }
}

/// A directory of PNG files ordered by the number embedded in each file name
/// (`frame_0001.png`, `2.png`, ...).
pub struct DirFrames {
    dir: PathBuf,
    refs: Vec<FrameRef>,
}

fn frame_number(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

impl DirFrames {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, FrameError> {
        let dir = dir.as_ref().to_path_buf();
        let io = |source| FrameError::Io {
            path: dir.clone(),
            source,
        };
        let mut numbered = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            let is_png = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"));
            if !is_png {
                continue;
            }
            if let Some(n) = frame_number(&path) {
                numbered.push((n, path));
            }
        }
        if numbered.is_empty() {
            return Err(FrameError::NoFrames(dir));
        }
        numbered.sort();
        if let Some(w) = numbered.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(FrameError::DuplicateNumber(w[0].0, dir));
        }
        let mut refs = Vec::with_capacity(numbered.len());
        for (index, (_, path)) in numbered.into_iter().enumerate() {
            let (width, height) = image::image_dimensions(&path).map_err(|e| FrameError::Decode {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            refs.push(FrameRef {
                index,
                path_or_id: path.file_name().unwrap().to_string_lossy().into_owned(),
                width,
                height,
            });
        }
        Ok(Self { dir, refs })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl FrameSource for DirFrames {
    fn frames(&self) -> &[FrameRef] {
        &self.refs
    }

    fn load(&self, index: usize) -> Result<RgbImage, FrameError> {
        let f = self.refs.get(index).ok_or(FrameError::OutOfRange(index))?;
        let path = self.dir.join(&f.path_or_id);
        image::open(&path)
            .map(|img| img.to_rgb8())
            .map_err(|e| FrameError::Decode {
                path,
                reason: e.to_string(),
            })
    }
}

/// Writes images as `{prefix}{n:04}.png`, numbered from 1.
pub fn write_png_sequence(dir: &Path, prefix: &str, images: &[RgbImage]) -> Result<(), FrameError> {
    std::fs::create_dir_all(dir).map_err(|source| FrameError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for (i, img) in images.iter().enumerate() {
        let path = dir.join(format!("{prefix}{:04}.png", i + 1));
        img.save(&path).map_err(|e| FrameError::Decode {
            path,
            reason: e.to_string(),
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_from_names() {
        assert_eq!(frame_number(Path::new("frame_0012.png")), Some(12));
        assert_eq!(frame_number(Path::new("7.png")), Some(7));
        assert_eq!(frame_number(Path::new("cover.png")), None);
    }

    #[test]
    fn dir_frames_sorted_numerically() {
        let tmp = tempfile::tempdir().unwrap();
        for n in [10, 2, 1] {
            RgbImage::from_pixel(4, 3, image::Rgb([n as u8, 0, 0]))
                .save(tmp.path().join(format!("f{n}.png")))
                .unwrap();
        }
        std::fs::write(tmp.path().join("notes.txt"), "x").unwrap();
        let src = DirFrames::open(tmp.path()).unwrap();
        let names: Vec<_> = src.frames().iter().map(|f| f.path_or_id.as_str()).collect();
        assert_eq!(names, ["f1.png", "f2.png", "f10.png"]);
        assert_eq!(src.load(2).unwrap().get_pixel(0, 0).0, [10, 0, 0]);
        assert_eq!((src.frames()[0].width, src.frames()[0].height), (4, 3));
    }
}
