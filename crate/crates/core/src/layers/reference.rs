//! Direct per-vertex spatial graph convolution.
//!
//! A plain double loop over roots and their labelled neighbours. It shares no
//! code with the tape-based [`Cagc`](super::Cagc) and serves as its oracle.

use crate::engine::Array;
use crate::graph::{PartitionLabeling, SkeletonTopology};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Each neighbour weighted by `1/Z`, the size of its subset.
    Cardinality,
    /// Each neighbour weighted by `1/sqrt(d_k(i)·d_k(j))`, the subset degrees
    /// of root and neighbour.
    Symmetric,
}

/// `x: [T,V,C_in]`, `weights[k]: [C_in, C_out]` → `[T,V,C_out]`, no activation.
pub fn sgc_reference(
    x: &Array,
    topology: &SkeletonTopology,
    labeling: &PartitionLabeling,
    weights: &[Array],
    normalization: Normalization,
) -> Array {
    let (t, v, c_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    assert_eq!(v, topology.num_joints());
    assert_eq!(weights.len(), labeling.num_subsets());
    let c_out = weights[0].shape()[1];

    // Subset cardinality per (joint, k), by counting labels.
    let mut count = vec![vec![0usize; labeling.num_subsets()]; v];
    for (i, row) in count.iter_mut().enumerate() {
        for j in 0..v {
            if let Some(k) = labeling.label(i, j) {
                row[k] += 1;
            }
        }
    }

    let mut out = Array::zeros(&[t, v, c_out]);
    for f in 0..t {
        for i in 0..v {
            let mut neighborhood = topology.neighbors(i);
            neighborhood.push(i);
            for j in neighborhood {
                let k = labeling.label(i, j).expect("neighbour carries a label");
                let factor = match normalization {
                    Normalization::Cardinality => 1.0 / count[i][k] as f64,
                    // A neighbour with no subset-k entries of its own has zero degree.
                    Normalization::Symmetric if count[j][k] == 0 => 0.0,
                    Normalization::Symmetric => 1.0 / ((count[i][k] * count[j][k]) as f64).sqrt(),
                };
                for co in 0..c_out {
                    let mut s = 0.0;
                    for ci in 0..c_in {
                        s += x.get(&[f, j, ci]) * weights[k].get(&[ci, co]);
                    }
                    let cur = out.get(&[f, i, co]);
                    out.set(&[f, i, co], cur + factor * s);
                }
            }
        }
    }
    out
}
