use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub start: f64,
    pub duration: f64,
}

impl Frame {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    pub fn mid(&self) -> f64 {
        self.start + 0.5 * self.duration
    }
}

/// Contiguous acquisition frames, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSchedule {
    frames: Vec<Frame>,
}

/// Frame blocks of the standard 45.5 min protocol: (count, duration s).
pub const DEFAULT_BLOCKS: [(usize, f64); 4] = [(1, 30.0), (24, 5.0), (9, 20.0), (8, 300.0)];

impl FrameSchedule {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Config("frame schedule is empty".into()));
        }
        for (i, f) in frames.iter().enumerate() {
            if !(f.duration > 0.0) || !f.start.is_finite() || !f.duration.is_finite() {
                return Err(Error::Config(format!("frame {i} has non-positive duration")));
            }
            if i > 0 {
                let prev = frames[i - 1].end();
                if (f.start - prev).abs() > 1e-9 * prev.abs().max(1.0) {
                    return Err(Error::Config(format!(
                        "frame {i} starts at {} but the previous frame ends at {prev}",
                        f.start
                    )));
                }
            }
        }
        Ok(Self { frames })
    }

    /// Builds a schedule from `(count, duration)` blocks starting at `start`.
    pub fn from_blocks(blocks: &[(usize, f64)], start: f64) -> Result<Self> {
        let mut frames = Vec::new();
        let mut t = start;
        for &(count, duration) in blocks {
            for _ in 0..count {
                frames.push(Frame { start: t, duration });
                t += duration;
            }
        }
        Self::new(frames)
    }

    /// 1×30 s, 24×5 s, 9×20 s, 8×300 s: 42 frames over 2730 s.
    pub fn standard() -> Self {
        Self::from_blocks(&DEFAULT_BLOCKS, 0.0).expect("static schedule is valid")
    }

    /// Parses `"1x30,24x5,9x20,8x300"`.
    pub fn parse_blocks(spec: &str) -> Result<Self> {
        let mut blocks = Vec::new();
        for part in spec.split(',') {
            let (n, d) = part
                .trim()
                .split_once(['x', 'X'])
                .ok_or_else(|| Error::Config(format!("schedule block `{part}` is not COUNTxSECONDS")))?;
            let n: usize = n.trim().parse().map_err(|_| Error::Config(format!("bad frame count in `{part}`")))?;
            let d: f64 = d.trim().parse().map_err(|_| Error::Config(format!("bad duration in `{part}`")))?;
            blocks.push((n, d));
        }
        Self::from_blocks(&blocks, 0.0)
    }

    /// Reconstructs a contiguous schedule from frame mid-times, given the
    /// start of the first frame.
    pub fn from_mid_times(mids: &[f64], start: f64) -> Result<Self> {
        let mut frames = Vec::with_capacity(mids.len());
        let mut t = start;
        for &m in mids {
            let duration = 2.0 * (m - t);
            frames.push(Frame { start: t, duration });
            t += duration;
        }
        Self::new(frames)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.frames[0].start
    }

    pub fn end(&self) -> f64 {
        self.frames[self.frames.len() - 1].end()
    }

    pub fn span(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn mid_times(&self) -> Vec<f64> {
        self.frames.iter().map(Frame::mid).collect()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.duration).collect()
    }

    /// Keeps frames `range`, preserving their absolute times.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::Config(format!(
                "frame range {range:?} is invalid for {} frames",
                self.len()
            )));
        }
        Self::new(self.frames[range].to_vec())
    }

    /// Inserts a frame of `duration` before the first one; every existing
    /// frame moves later by `duration`.
    pub fn with_leading_frame(&self, duration: f64) -> Result<Self> {
        let start = self.start();
        let mut frames = vec![Frame { start, duration }];
        frames.extend(self.frames.iter().map(|f| Frame {
            start: f.start + duration,
            duration: f.duration,
        }));
        Self::new(frames)
    }
}
