//! Joint/bone streams and late score fusion.

use crate::engine::Array;
use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;

/// Bone vectors `X[t][child] − X[t][parent]`; the root's bone is zero.
pub fn bone_transform(x: &Array, topology: &SkeletonTopology) -> Result<Array> {
    let s = x.shape();
    if s.len() != 3 || s[1] != topology.num_joints() {
        return Err(Error::Shape {
            op: "bone_transform",
            detail: format!("{s:?} for {} joints", topology.num_joints()),
        });
    }
    let (t, v, c) = (s[0], s[1], s[2]);
    let mut out = Array::zeros(s);
    let src = x.data();
    let dst = out.data_mut();
    for &(parent, child) in topology.edges() {
        for f in 0..t {
            let (po, co) = ((f * v + parent) * c, (f * v + child) * c);
            for k in 0..c {
                dst[co + k] = src[co + k] - src[po + k];
            }
        }
    }
    Ok(out)
}

/// Elementwise mean of two class-probability vectors.
pub fn fuse_scores(joint: &[f64], bone: &[f64]) -> Result<Vec<f64>> {
    if joint.len() != bone.len() {
        return Err(Error::Shape {
            op: "fuse_scores",
            detail: format!("{} vs {} classes", joint.len(), bone.len()),
        });
    }
    Ok(joint.iter().zip(bone).map(|(a, b)| 0.5 * (a + b)).collect())
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
