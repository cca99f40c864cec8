//! Skeleton topology, directed adjacency and graph-convolution partition
//! strategies.
//!
//! A topology is a directed kinematic tree: edge `(i, j)` means joint `j`
//! moves around joint `i`. Convolution neighbourhoods are undirected one-hop
//! neighbourhoods plus the joint itself; the direction only enters through
//! out-degrees, which drive the activity partition.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::Array;
use crate::error::{Error, Result};

pub type JointId = usize;

/// Directed kinematic tree over `num_joints` joints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonTopology {
    num_joints: usize,
    root: JointId,
    edges: Vec<(JointId, JointId)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    names: Option<Vec<String>>,
}

/// 25-joint NTU RGB+D layout, 0-based, rooted at spine-mid (1).
const NTU25_NAMES: [&str; 25] = [
    "spine_base",
    "spine_mid",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "left_hand",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "right_hand",
    "left_hip",
    "left_knee",
    "left_ankle",
    "left_foot",
    "right_hip",
    "right_knee",
    "right_ankle",
    "right_foot",
    "spine_shoulder",
    "left_hand_tip",
    "left_thumb",
    "right_hand_tip",
    "right_thumb",
];

/// Parent → child, pointing away from spine-mid. Hand tips and thumbs both
/// hang off their hand.
const NTU25_EDGES: [(JointId, JointId); 24] = [
    (1, 0),
    (1, 20),
    (20, 2),
    (2, 3),
    (20, 4),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 21),
    (7, 22),
    (20, 8),
    (8, 9),
    (9, 10),
    (10, 11),
    (11, 23),
    (11, 24),
    (0, 12),
    (12, 13),
    (13, 14),
    (14, 15),
    (0, 16),
    (16, 17),
    (17, 18),
    (18, 19),
];

pub const BUILTIN_TOPOLOGIES: [&str; 4] = ["toy2", "toy5", "chain3", "ntu25"];

impl SkeletonTopology {
    /// Validates and builds a topology.
    ///
    /// The edges must form a tree whose arcs all point away from `root`, so
    /// every joint except the root has exactly one parent.
    pub fn new(
        num_joints: usize,
        root: JointId,
        edges: Vec<(JointId, JointId)>,
        names: Option<Vec<String>>,
    ) -> Result<Self> {
        let t = Self {
            num_joints,
            root,
            edges,
            names,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let v = self.num_joints;
        let err = |m: String| Err(Error::Topology(m));
        if v == 0 {
            return err("num_joints must be positive".into());
        }
        if self.root >= v {
            return err(format!("root {} out of range", self.root));
        }
        if let Some(names) = &self.names {
            if names.len() != v {
                return err(format!("{} names for {v} joints", names.len()));
            }
        }
        if self.edges.len() != v - 1 {
            return err(format!(
                "a tree over {v} joints needs {} edges, got {}",
                v - 1,
                self.edges.len()
            ));
        }
        let mut parent = vec![None; v];
        for &(i, j) in &self.edges {
            if i >= v || j >= v {
                return err(format!("edge ({i}, {j}) references a missing joint"));
            }
            if i == j {
                return err(format!("self-edge on joint {i}"));
            }
            if self.edges.iter().filter(|&&e| e == (i, j)).count() > 1 {
                return err(format!("duplicate edge ({i}, {j})"));
            }
            if parent[j].replace(i).is_some() {
                return err(format!("joint {j} has more than one parent"));
            }
        }
        if parent[self.root].is_some() {
            return err(format!("root {} has a parent", self.root));
        }
        if self.hop_distances().iter().any(Option::is_none) {
            return err("edges do not connect every joint".into());
        }
        Ok(())
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "toy2" => Self::new(2, 0, vec![(0, 1)], None),
            "toy5" => Self::new(5, 0, vec![(0, 1), (0, 2), (0, 3), (0, 4)], None),
            "chain3" => Self::new(3, 0, vec![(0, 1), (1, 2)], None),
            "ntu25" => Self::new(
                25,
                1,
                NTU25_EDGES.to_vec(),
                Some(NTU25_NAMES.iter().map(|s| s.to_string()).collect()),
            ),
            other => Err(Error::Topology(format!("unknown built-in topology {other:?}"))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text).map_err(|e| Error::Topology(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("topology serializes")
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn root(&self) -> JointId {
        self.root
    }

    pub fn edges(&self) -> &[(JointId, JointId)] {
        &self.edges
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    pub fn joint_name(&self, j: JointId) -> String {
        match &self.names {
            Some(n) => n[j].clone(),
            None => j.to_string(),
        }
    }

    pub fn parent(&self, j: JointId) -> Option<JointId> {
        self.edges.iter().find(|e| e.1 == j).map(|e| e.0)
    }

    /// Undirected one-hop neighbours, excluding the joint itself.
    pub fn neighbors(&self, i: JointId) -> Vec<JointId> {
        let mut n: Vec<JointId> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        n.sort_unstable();
        n
    }

    /// Undirected hop distance of every joint from the root.
    pub fn hop_distances(&self) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_joints];
        let mut queue = VecDeque::from([self.root]);
        dist[self.root] = Some(0);
        while let Some(i) = queue.pop_front() {
            let d = dist[i].unwrap();
            for j in self.neighbors(i) {
                if dist[j].is_none() {
                    dist[j] = Some(d + 1);
                    queue.push_back(j);
                }
            }
        }
        dist
    }

    /// Relabels joints: old joint `j` becomes `perm[j]`.
    pub fn permuted(&self, perm: &[JointId]) -> Result<Self> {
        if perm.len() != self.num_joints {
            return Err(Error::Topology("permutation length mismatch".into()));
        }
        let names = self.names.as_ref().map(|n| {
            let mut out = vec![String::new(); n.len()];
            for (j, name) in n.iter().enumerate() {
                out[perm[j]] = name.clone();
            }
            out
        });
        Self::new(
            self.num_joints,
            perm[self.root],
            self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect(),
            names,
        )
    }
}

/// Directed adjacency: `A[i][j] = 1` iff edge `i → j` exists.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    values: Array,
}

impl AdjacencyMatrix {
    pub fn num_joints(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn as_array(&self) -> &Array {
        &self.values
    }

    pub fn get(&self, i: JointId, j: JointId) -> f64 {
        self.values.get(&[i, j])
    }

    /// Undirected neighbourhood including self: `A + Aᵀ + I`.
    pub fn neighborhood(&self) -> Array {
        let v = self.num_joints();
        let mut n = Array::eye(v);
        for i in 0..v {
            for j in 0..v {
                if self.get(i, j) != 0.0 || self.get(j, i) != 0.0 {
                    n.set(&[i, j], 1.0);
                }
            }
        }
        n
    }
}

pub fn build_adjacency(topology: &SkeletonTopology) -> AdjacencyMatrix {
    let v = topology.num_joints();
    let mut values = Array::zeros(&[v, v]);
    for &(i, j) in topology.edges() {
        values.set(&[i, j], 1.0);
    }
    AdjacencyMatrix { values }
}

pub fn out_degree(topology: &SkeletonTopology, joint: JointId) -> usize {
    topology.edges().iter().filter(|e| e.0 == joint).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionStrategy {
    Uniform,
    Distance,
    Spatial,
    Activity,
}

impl PartitionStrategy {
    pub const ALL: [PartitionStrategy; 4] = [
        PartitionStrategy::Uniform,
        PartitionStrategy::Distance,
        PartitionStrategy::Spatial,
        PartitionStrategy::Activity,
    ];

    pub fn num_subsets(self) -> usize {
        match self {
            PartitionStrategy::Uniform => 1,
            PartitionStrategy::Distance => 2,
            PartitionStrategy::Spatial | PartitionStrategy::Activity => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PartitionStrategy::Uniform => "uniform",
            PartitionStrategy::Distance => "distance",
            PartitionStrategy::Spatial => "spatial",
            PartitionStrategy::Activity => "activity",
        }
    }
}

impl fmt::Display for PartitionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PartitionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown partition strategy {s:?}")))
    }
}

/// Subset index for every (root, neighbour) pair of the convolution
/// neighbourhood. Pairs outside the neighbourhood carry no label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionLabeling {
    strategy: PartitionStrategy,
    num_joints: usize,
    labels: Vec<Option<usize>>,
}

impl PartitionLabeling {
    fn build(
        topology: &SkeletonTopology,
        strategy: PartitionStrategy,
        rule: impl Fn(JointId, JointId) -> usize,
    ) -> Self {
        let v = topology.num_joints();
        let mut labels = vec![None; v * v];
        for i in 0..v {
            labels[i * v + i] = Some(rule(i, i));
            for j in topology.neighbors(i) {
                labels[i * v + j] = Some(rule(i, j));
            }
        }
        Self {
            strategy,
            num_joints: v,
            labels,
        }
    }

    pub fn strategy(&self) -> PartitionStrategy {
        self.strategy
    }

    pub fn num_subsets(&self) -> usize {
        self.strategy.num_subsets()
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn label(&self, root: JointId, neighbor: JointId) -> Option<usize> {
        self.labels[root * self.num_joints + neighbor]
    }

    /// Neighbours of `root` assigned to subset `k`.
    pub fn subset(&self, root: JointId, k: usize) -> Vec<JointId> {
        (0..self.num_joints)
            .filter(|&j| self.label(root, j) == Some(k))
            .collect()
    }

    /// Relabels joints consistently with [`SkeletonTopology::permuted`].
    pub fn permuted(&self, perm: &[JointId]) -> Self {
        let v = self.num_joints;
        let mut labels = vec![None; v * v];
        for i in 0..v {
            for j in 0..v {
                labels[perm[i] * v + perm[j]] = self.labels[i * v + j];
            }
        }
        Self {
            strategy: self.strategy,
            num_joints: v,
            labels,
        }
    }
}

pub fn partition(topology: &SkeletonTopology, strategy: PartitionStrategy) -> PartitionLabeling {
    match strategy {
        PartitionStrategy::Uniform => uniform_partition(topology),
        PartitionStrategy::Distance => distance_partition(topology),
        PartitionStrategy::Spatial => spatial_partition(topology),
        PartitionStrategy::Activity => activity_partition(topology),
    }
}

pub fn uniform_partition(topology: &SkeletonTopology) -> PartitionLabeling {
    PartitionLabeling::build(topology, PartitionStrategy::Uniform, |_, _| 0)
}

pub fn distance_partition(topology: &SkeletonTopology) -> PartitionLabeling {
    PartitionLabeling::build(topology, PartitionStrategy::Distance, |i, j| usize::from(i != j))
}

/// Self / centripetal / centrifugal, using hop distance to the root joint as
/// the distance to the body centre.
pub fn spatial_partition(topology: &SkeletonTopology) -> PartitionLabeling {
    let dist: Vec<usize> = topology
        .hop_distances()
        .into_iter()
        .map(|d| d.expect("validated topology is connected"))
        .collect();
    PartitionLabeling::build(topology, PartitionStrategy::Spatial, |i, j| {
        if i == j {
            0
        } else if dist[j] < dist[i] {
            1
        } else {
            2
        }
    })
}

/// Subset by the neighbour's out-degree: 0, 1, or at least 2.
pub fn activity_partition(topology: &SkeletonTopology) -> PartitionLabeling {
    let deg: Vec<usize> = (0..topology.num_joints()).map(|j| out_degree(topology, j)).collect();
    PartitionLabeling::build(topology, PartitionStrategy::Activity, |_, j| deg[j].min(2))
}

/// Entries of the neighbourhood `A + Aᵀ + I` whose pair is labelled `k`.
pub fn partition_adjacency(adjacency: &AdjacencyMatrix, labeling: &PartitionLabeling, k: usize) -> Result<Array> {
    let kk = labeling.num_subsets();
    if k >= kk {
        return Err(Error::SubsetOutOfRange { k, num_subsets: kk });
    }
    let v = adjacency.num_joints();
    if labeling.num_joints() != v {
        return Err(Error::Topology(format!(
            "labeling covers {} joints, adjacency {v}",
            labeling.num_joints()
        )));
    }
    let neighborhood = adjacency.neighborhood();
    let mut out = Array::zeros(&[v, v]);
    for i in 0..v {
        for j in 0..v {
            let present = neighborhood.get(&[i, j]) != 0.0;
            let label = labeling.label(i, j);
            if present != label.is_some() {
                return Err(Error::Topology(format!(
                    "labeling and adjacency disagree on pair ({i}, {j})"
                )));
            }
            if label == Some(k) {
                out.set(&[i, j], neighborhood.get(&[i, j]));
            }
        }
    }
    Ok(out)
}

/// `D^{-1/2} · A · D^{-1/2}` with `D` the row sums; zero-degree rows and
/// columns map to zero.
pub fn normalize_adjacency(a: &Array) -> Array {
    let v = a.shape()[0];
    assert_eq!(a.shape(), &[v, v], "normalize_adjacency needs a square matrix");
    let inv_sqrt: Vec<f64> = (0..v)
        .map(|i| {
            let d: f64 = a.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut out = Array::zeros(&[v, v]);
    for i in 0..v {
        for j in 0..v {
            out.set(&[i, j], inv_sqrt[i] * a.get(&[i, j]) * inv_sqrt[j]);
        }
    }
    out
}

/// Normalized masked adjacency for every subset of `labeling`.
pub fn normalized_subsets(adjacency: &AdjacencyMatrix, labeling: &PartitionLabeling) -> Result<Vec<Array>> {
    (0..labeling.num_subsets())
        .map(|k| partition_adjacency(adjacency, labeling, k).map(|a| normalize_adjacency(&a)))
        .collect()
}
