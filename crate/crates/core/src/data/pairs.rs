use ndarray::{Array2, Zip};

use super::VideoClip;
use crate::error::ensure;
use crate::Result;

/// Two input frames and the ground-truth middle frame from one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    pub video_id: String,
    pub i0_index: usize,
    pub i1_index: usize,
    pub mid_index: usize,
    pub i0: Array2<f32>,
    pub i1: Array2<f32>,
    pub gt: Array2<f32>,
}

impl FramePair {
    pub fn from_indices(clip: &VideoClip, i0: usize, i1: usize) -> Result<Self> {
        ensure!(i0 + 2 <= i1 && i1 < clip.len(), "pair ({i0}, {i1}) needs a middle frame inside the clip");
        let mid = (i0 + i1) / 2;
        Ok(Self {
            video_id: clip.id.clone(),
            i0_index: i0,
            i1_index: i1,
            mid_index: mid,
            i0: clip.frame_owned(i0),
            i1: clip.frame_owned(i1),
            gt: clip.frame_owned(mid),
        })
    }

    /// The same pair with the input frames exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            i0_index: self.i1_index,
            i1_index: self.i0_index,
            i0: self.i1.clone(),
            i1: self.i0.clone(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairStrategy {
    /// Pair inside a window of `window` consecutive frames with the largest mean
    /// absolute difference; ties go to the lexicographically smallest indices.
    MaxDiff,
    /// `(start, start + window)`.
    FixedStride { start: usize },
}

fn mean_abs_diff(clip: &VideoClip, a: usize, b: usize) -> f64 {
    let mut s = 0f64;
    Zip::from(&clip.frame(a)).and(&clip.frame(b)).for_each(|x, y| s += (x - y).abs() as f64);
    s / (clip.height() * clip.width()) as f64
}

fn max_diff_in(clip: &VideoClip, lo: usize, hi: usize, window: usize) -> Option<(usize, usize)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for i0 in lo..hi {
        for i1 in (i0 + 2)..hi.min(i0 + window) {
            let d = mean_abs_diff(clip, i0, i1);
            if best.is_none_or(|(_, b)| d > b) {
                best = Some(((i0, i1), d));
            }
        }
    }
    best.map(|(p, _)| p)
}

pub fn select_frame_pair(clip: &VideoClip, strategy: PairStrategy, window: usize) -> Result<FramePair> {
    ensure!(window >= 3, "pair window must be at least 3, got {window}");
    ensure!(clip.len() >= window, "clip {} has {} frames, window needs {window}", clip.id, clip.len());
    let (i0, i1) = match strategy {
        PairStrategy::MaxDiff => max_diff_in(clip, 0, clip.len(), window).expect("window >= 3 admits a pair"),
        PairStrategy::FixedStride { start } => {
            ensure!(start + window < clip.len(), "fixed-stride pair ({start}, {}) exceeds clip length {}", start + window, clip.len());
            (start, start + window)
        }
    };
    FramePair::from_indices(clip, i0, i1)
}

/// Up to `count` pairs from disjoint segments of the clip (one per segment).
pub fn select_frame_pairs(clip: &VideoClip, strategy: PairStrategy, window: usize, count: usize) -> Result<Vec<FramePair>> {
    ensure!(count >= 1, "need at least one pair per clip");
    if count == 1 {
        return Ok(vec![select_frame_pair(clip, strategy, window)?]);
    }
    ensure!(window >= 3 && clip.len() >= window, "clip {} too short for window {window}", clip.id);
    let mut pairs = Vec::new();
    match strategy {
        PairStrategy::MaxDiff => {
            let seg = clip.len() / count;
            ensure!(seg >= 3, "clip {} too short for {count} pairs", clip.id);
            for k in 0..count {
                let (lo, hi) = (k * seg, if k + 1 == count { clip.len() } else { (k + 1) * seg });
                if let Some((a, b)) = max_diff_in(clip, lo, hi, window) {
                    pairs.push(FramePair::from_indices(clip, a, b)?);
                }
            }
        }
        PairStrategy::FixedStride { start } => {
            let mut s = start;
            while pairs.len() < count && s + window < clip.len() {
                pairs.push(FramePair::from_indices(clip, s, s + window)?);
                s += window;
            }
            ensure!(!pairs.is_empty(), "fixed-stride pair at {start} exceeds clip length {}", clip.len());
        }
    }
    Ok(pairs)
}
