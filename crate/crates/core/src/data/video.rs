use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::ensure;
use crate::{Error, Result};

const CLIP_MAGIC: &[u8; 4] = b"MCVD";
const CLIP_VERSION: u32 = 1;

/// Grayscale clip with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub id: String,
    /// `[T, H, W]`
    pub frames: Array3<f32>,
    pub fps: f32,
}

impl VideoClip {
    pub fn new(id: impl Into<String>, frames: Array3<f32>, fps: f32) -> Result<Self> {
        let id = id.into();
        ensure!(frames.dim().0 >= 3, "clip {id}: needs at least 3 frames, got {}", frames.dim().0);
        ensure!(fps > 0. && fps.is_finite(), "clip {id}: fps must be positive");
        ensure!(
            frames.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)),
            "clip {id}: intensities must lie in [0, 1]"
        );
        Ok(Self { id, frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.frames.dim().1
    }

    pub fn width(&self) -> usize {
        self.frames.dim().2
    }

    pub fn frame(&self, t: usize) -> ArrayView2<'_, f32> {
        self.frames.index_axis(Axis(0), t)
    }

    pub fn frame_owned(&self, t: usize) -> Array2<f32> {
        self.frame(t).to_owned()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

pub const MANIFEST_NAME: &str = "manifest.csv";

pub fn clip_path(root: &Path, id: &str) -> PathBuf {
    root.join(format!("{id}.mcvd"))
}

/// Writes the raw clip container: magic `MCVD`, version, T, H, W, channels (u32 LE),
/// fps (f32 LE), then `T*H*W*C` u8 samples with channels interleaved.
pub fn write_clip(path: &Path, clip: &VideoClip) -> Result<()> {
    let (t, h, w) = clip.frames.dim();
    let mut buf = Vec::with_capacity(28 + t * h * w);
    buf.extend_from_slice(CLIP_MAGIC);
    for v in [CLIP_VERSION, t as u32, h as u32, w as u32, 1] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&clip.fps.to_le_bytes());
    buf.extend(clip.frames.iter().map(|v| (v.clamp(0., 1.) * 255.).round() as u8));
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a clip container, collapsing multi-channel samples by their mean.
pub fn read_clip(path: &Path, id: &str) -> Result<VideoClip> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let fmt_err = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| fmt_err("truncated header".into()))?;
    if &magic != CLIP_MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf(), expected: *CLIP_MAGIC, found: magic });
    }
    let mut header = [0u8; 24];
    r.read_exact(&mut header).map_err(|_| fmt_err("truncated header".into()))?;
    let word = |i: usize| u32::from_le_bytes(header[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (version, t, h, w, c) = (word(0), word(1), word(2), word(3), word(4));
    let fps = f32::from_le_bytes(header[20..24].try_into().unwrap());
    if version != CLIP_VERSION as usize {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    if t == 0 || h == 0 || w == 0 || c == 0 {
        return Err(fmt_err("zero-sized clip".into()));
    }
    let mut raw = vec![0u8; t * h * w * c];
    r.read_exact(&mut raw).map_err(|_| fmt_err("truncated sample data".into()))?;
    let frames = Array3::from_shape_fn((t, h, w), |(ti, y, x)| {
        let base = ((ti * h + y) * w + x) * c;
        raw[base..base + c].iter().map(|&v| v as f32).sum::<f32>() / (255. * c as f32)
    });
    VideoClip::new(id, frames, fps)
}

pub fn write_manifest(root: &Path, entries: &[(String, Split)]) -> Result<()> {
    let path = root.join(MANIFEST_NAME);
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for (id, split) in entries {
        writeln!(f, "{id},{split}").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Parses `id,split` lines; blank lines and `#` comments are ignored.
pub fn read_manifest(root: &Path) -> Result<Vec<(String, Split)>> {
    let path = root.join(MANIFEST_NAME);
    let file = std::fs::File::open(&path)
        .map_err(|e| Error::Config(format!("cannot open manifest {}: {e}", path.display())))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, split) = line
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected `id,split`", path.display(), n + 1)))?;
        let id = id.trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Config(format!("{}: duplicate id `{id}`", path.display())));
        }
        out.push((id, split.parse()?));
    }
    Ok(out)
}

/// Loads every clip of `split` listed in `root/manifest.csv`.
///
/// Unreadable or empty files are skipped with a warning; an empty result is an error.
pub fn load_video_dataset(root: &Path, split: Split) -> Result<Vec<VideoClip>> {
    let manifest = read_manifest(root)?;
    let mut clips = Vec::new();
    for (id, s) in manifest.into_iter().filter(|(_, s)| *s == split) {
        debug_assert_eq!(s, split);
        match read_clip(&clip_path(root, &id), &id) {
            Ok(clip) => clips.push(clip),
            Err(e) => log::warn!("skipping clip {id}: {e}"),
        }
    }
    if clips.is_empty() {
        return Err(Error::Config(format!("split `{split}` under {} has no readable clips", root.display())));
    }
    Ok(clips)
}
