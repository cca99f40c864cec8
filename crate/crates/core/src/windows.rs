//! Non-overlapping spatio-temporal windows over a `T×V` joint grid.
//!
//! Each window holds `M` consecutive frames of `N` consecutive joints; its
//! tokens are listed frame-major, then by joint id. When `T` is not a
//! multiple of `M` the last frame is repeated until it is.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::engine::Array;
use crate::error::{Error, Result};

/// Window extent: `frames` (M) by `joints` (N).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub frames: usize,
    pub joints: usize,
}

impl WindowSpec {
    pub fn new(frames: usize, joints: usize) -> Result<Self> {
        if frames == 0 || joints == 0 {
            return Err(Error::Config(format!("window {frames}x{joints} must be at least 1x1")));
        }
        Ok(Self { frames, joints })
    }

    pub fn tokens(&self) -> usize {
        self.frames * self.joints
    }

    /// Number of distinct `(Δt, Δv)` offsets: `(2M−1)(2N−1)`.
    pub fn bias_table_len(&self) -> usize {
        (2 * self.frames - 1) * (2 * self.joints - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowLayout {
    spec: WindowSpec,
    frames: usize,
    joints: usize,
    padded_frames: usize,
    num_windows: usize,
}

pub fn split_windows(frames: usize, joints: usize, spec: WindowSpec) -> Result<WindowLayout> {
    if frames == 0 || joints == 0 {
        return Err(Error::Config(format!("cannot window an empty {frames}x{joints} grid")));
    }
    if spec.frames == 0 || spec.joints == 0 {
        return Err(Error::Config("window extents must be positive".into()));
    }
    if !joints.is_multiple_of(spec.joints) {
        return Err(Error::Config(format!(
            "{joints} joints cannot be split into windows of {}",
            spec.joints
        )));
    }
    let padded_frames = frames.div_ceil(spec.frames) * spec.frames;
    Ok(WindowLayout {
        spec,
        frames,
        joints,
        padded_frames,
        num_windows: (padded_frames / spec.frames) * (joints / spec.joints),
    })
}

impl WindowLayout {
    pub fn spec(&self) -> WindowSpec {
        self.spec
    }

    pub fn num_windows(&self) -> usize {
        self.num_windows
    }

    pub fn padded_frames(&self) -> usize {
        self.padded_frames
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    /// `(frame, joint)` of every token in window `w`, on the padded grid.
    pub fn token_order(&self, w: usize) -> Vec<(usize, usize)> {
        let blocks_per_row = self.joints / self.spec.joints;
        let (tb, vb) = (w / blocks_per_row, w % blocks_per_row);
        let mut out = Vec::with_capacity(self.spec.tokens());
        for a in 0..self.spec.frames {
            for b in 0..self.spec.joints {
                out.push((tb * self.spec.frames + a, vb * self.spec.joints + b));
            }
        }
        out
    }

    /// For each token slot (windows concatenated), the source row `t·V + v`
    /// of the unpadded sequence. Padded frames read the last real frame.
    pub fn split_index(&self) -> Arc<[usize]> {
        (0..self.num_windows)
            .flat_map(|w| self.token_order(w))
            .map(|(t, v)| t.min(self.frames - 1) * self.joints + v)
            .collect()
    }

    /// For each padded-grid row `t·V + v`, the token slot holding it.
    pub fn merge_index(&self) -> Vec<usize> {
        let mut out = vec![0; self.padded_frames * self.joints];
        for w in 0..self.num_windows {
            for (p, (t, v)) in self.token_order(w).into_iter().enumerate() {
                out[t * self.joints + v] = w * self.spec.tokens() + p;
            }
        }
        out
    }

    /// Merge restricted to the real (unpadded) frames.
    pub fn merge_index_cropped(&self) -> Arc<[usize]> {
        let mut m = self.merge_index();
        m.truncate(self.frames * self.joints);
        m.into()
    }

    /// `[T,V,C]` → `[n, M·N, C]`.
    pub fn split(&self, x: &Array) -> Result<Array> {
        let c = self.check_grid(x)?;
        let rows = self.split_index();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows.iter() {
            out.extend_from_slice(&x.data()[r * c..(r + 1) * c]);
        }
        Array::new(&[self.num_windows, self.spec.tokens(), c], out)
    }

    /// `[n, M·N, C]` → `[T_padded, V, C]`; inverse of [`split`](Self::split)
    /// on the padded grid.
    pub fn merge(&self, windows: &Array) -> Result<Array> {
        let s = windows.shape();
        if s.len() != 3 || s[0] != self.num_windows || s[1] != self.spec.tokens() {
            return Err(Error::Shape {
                op: "merge_windows",
                detail: format!("{s:?} for {} windows of {}", self.num_windows, self.spec.tokens()),
            });
        }
        let c = s[2];
        let mut out = Vec::with_capacity(self.padded_frames * self.joints * c);
        for slot in self.merge_index() {
            out.extend_from_slice(&windows.data()[slot * c..(slot + 1) * c]);
        }
        Array::new(&[self.padded_frames, self.joints, c], out)
    }

    fn check_grid(&self, x: &Array) -> Result<usize> {
        let s = x.shape();
        if s.len() != 3 || s[0] != self.frames || s[1] != self.joints {
            return Err(Error::Shape {
                op: "split_windows",
                detail: format!("{s:?} for a {}x{} layout", self.frames, self.joints),
            });
        }
        Ok(s[2])
    }
}

/// Offset-based index into a `(2M−1)(2N−1)` bias table for every token pair
/// `(p, q)` of one window, flattened row-major over `(p, q)`.
pub fn relative_position_index(spec: WindowSpec) -> Vec<usize> {
    let (m, n) = (spec.frames, spec.joints);
    let tokens = spec.tokens();
    let mut out = Vec::with_capacity(tokens * tokens);
    for p in 0..tokens {
        let (tp, vp) = (p / n, p % n);
        for q in 0..tokens {
            let (tq, vq) = (q / n, q % n);
            let dt = tq + m - 1 - tp;
            let dv = vq + n - 1 - vp;
            out.push(dt * (2 * n - 1) + dv);
        }
    }
    out
}
