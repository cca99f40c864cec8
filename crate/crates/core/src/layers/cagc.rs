use rand::Rng;

use crate::engine::{Array, ParamId, ParamStore, Tape, Var};
use crate::error::{shape_err, Result};
use crate::graph::{
    build_adjacency, normalized_subsets, partition, AdjacencyMatrix, PartitionLabeling, PartitionStrategy,
    SkeletonTopology,
};

/// Topology-derived constants shared by every graph convolution of a model.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub topology: SkeletonTopology,
    pub adjacency: AdjacencyMatrix,
    pub labeling: PartitionLabeling,
    /// `D_k^{-1/2} Ā_k D_k^{-1/2}` for each subset `k`.
    pub normalized: Vec<Array>,
}

impl GraphContext {
    pub fn new(topology: SkeletonTopology, strategy: PartitionStrategy) -> Result<Self> {
        let labeling = partition(&topology, strategy);
        Self::with_labeling(topology, labeling)
    }

    pub fn with_labeling(topology: SkeletonTopology, labeling: PartitionLabeling) -> Result<Self> {
        let adjacency = build_adjacency(&topology);
        let normalized = normalized_subsets(&adjacency, &labeling)?;
        Ok(Self {
            topology,
            adjacency,
            labeling,
            normalized,
        })
    }

    pub fn num_joints(&self) -> usize {
        self.topology.num_joints()
    }

    pub fn num_subsets(&self) -> usize {
        self.normalized.len()
    }
}

/// Bottleneck width of the correlation branch.
pub fn reduced_channels(out_channels: usize) -> usize {
    (out_channels / 4).max(4)
}

/// Channel-wise adaptive graph convolution.
///
/// Features are mixed by `W_k` and aggregated over the normalized subset
/// adjacency `Â_k`. Subset 0 additionally aggregates through the learned,
/// per-channel correlation `α·A′`.
#[derive(Debug, Clone)]
pub struct Cagc {
    pub in_channels: usize,
    pub out_channels: usize,
    pub reduced: usize,
    pub weights: Vec<ParamId>,
    pub alpha: ParamId,
    pub theta: ParamId,
    pub phi: ParamId,
    pub xi: ParamId,
    pub xi_bias: ParamId,
}

impl Cagc {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        num_subsets: usize,
        rng: &mut R,
    ) -> Self {
        let reduced = reduced_channels(out_channels);
        let b_in = 1.0 / (in_channels as f64).sqrt();
        let weights = (0..num_subsets)
            .map(|k| {
                store.add(
                    format!("{prefix}.w{k}"),
                    Array::uniform(&[in_channels, out_channels], b_in, rng),
                )
            })
            .collect();
        let alpha = store.add(format!("{prefix}.alpha"), Array::scalar(0.0));
        let theta = store.add(
            format!("{prefix}.theta"),
            Array::uniform(&[in_channels, reduced], b_in, rng),
        );
        let phi = store.add(
            format!("{prefix}.phi"),
            Array::uniform(&[in_channels, reduced], b_in, rng),
        );
        let xi = store.add(
            format!("{prefix}.xi"),
            Array::uniform(&[reduced, out_channels], 1.0 / (reduced as f64).sqrt(), rng),
        );
        let xi_bias = store.add(format!("{prefix}.xi_bias"), Array::zeros(&[out_channels]));
        Self {
            in_channels,
            out_channels,
            reduced,
            weights,
            alpha,
            theta,
            phi,
            xi,
            xi_bias,
        }
    }

    fn check_input(&self, tape: &Tape, x: Var, v: Option<usize>) -> Result<(usize, usize)> {
        let s = tape.value(x).shape();
        if s.len() != 3 || s[2] != self.in_channels || v.is_some_and(|v| v != s[1]) {
            return Err(shape_err(
                "cagc",
                format!("input {s:?}, expected [T, V, {}]", self.in_channels),
            ));
        }
        Ok((s[0], s[1]))
    }

    /// `A′[c][i][j] = ξ(tanh(θ(x̄_i) − φ(x̄_j)))[c]` with `x̄` the temporal
    /// mean. Returns `[C_out, V, V]`.
    pub fn channel_correlation(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (_, v) = self.check_input(tape, x, None)?;
        let mean = tape.mean_axis(x, 0)?;
        let theta = tape.param(store, self.theta);
        let phi = tape.param(store, self.phi);
        let a = tape.matmul(mean, theta)?;
        let b = tape.matmul(mean, phi)?;
        let diff = tape.pairwise_sub(a, b)?;
        let act = tape.tanh(diff)?;
        let flat = tape.reshape(act, &[v * v, self.reduced])?;
        let xi = tape.param(store, self.xi);
        let xi_b = tape.param(store, self.xi_bias);
        let expanded = tape.matmul(flat, xi)?;
        let expanded = tape.add_broadcast(expanded, xi_b)?;
        let grid = tape.reshape(expanded, &[v, v, self.out_channels])?;
        tape.permute(grid, &[2, 0, 1])
    }

    /// `Σ_k Â_k (X W_k) + α·A′ ⊙ (X W_0)`, before the activation.
    pub fn forward_linear(&self, tape: &mut Tape, store: &ParamStore, graph: &GraphContext, x: Var) -> Result<Var> {
        let (t, v) = self.check_input(tape, x, Some(graph.num_joints()))?;
        if graph.num_subsets() != self.weights.len() {
            return Err(shape_err(
                "cagc",
                format!(
                    "{} subset weights for a {}-subset labeling",
                    self.weights.len(),
                    graph.num_subsets()
                ),
            ));
        }
        let flat = tape.reshape(x, &[t * v, self.in_channels])?;
        let mut total: Option<Var> = None;
        let mut first_branch = None;
        for (k, (&w, adj)) in self.weights.iter().zip(&graph.normalized).enumerate() {
            let w = tape.param(store, w);
            let y = tape.matmul(flat, w)?;
            let y = tape.reshape(y, &[t, v, self.out_channels])?;
            if k == 0 {
                first_branch = Some(y);
            }
            let adj = tape.constant(adj.clone());
            let agg = tape.node_mix(adj, y)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, agg)?,
                None => agg,
            });
        }
        let total = total.expect("at least one subset");
        let corr = self.channel_correlation(tape, store, x)?;
        let alpha = tape.param(store, self.alpha);
        let scaled = tape.scale(corr, alpha)?;
        let refined = tape.channel_node_mix(scaled, first_branch.expect("subset 0"))?;
        tape.add(total, refined)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, graph: &GraphContext, x: Var) -> Result<Var> {
        let pre = self.forward_linear(tape, store, graph, x)?;
        tape.relu(pre)
    }
}
