use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GraphContext, StgcLayer, StseConfig};
use crate::engine::{softmax_in_place, Array, Gradients, ParamId, ParamStore, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::graph::{PartitionStrategy, SkeletonTopology};
use crate::windows::WindowSpec;

/// Architecture of the stacked graph-attention network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub topology: SkeletonTopology,
    pub partition: PartitionStrategy,
    pub in_channels: usize,
    /// Output width of each STGC layer.
    pub channels: Vec<usize>,
    /// Temporal stride of each STGC layer.
    pub strides: Vec<usize>,
    pub window: WindowSpec,
    pub heads: usize,
    /// Temporal kernel length Γ of the grouped temporal convolution.
    pub kernel: usize,
    pub groups: usize,
    pub num_classes: usize,
    pub attention: bool,
    pub position_bias: bool,
}

pub const DEFAULT_CHANNELS: [usize; 10] = [64, 64, 64, 64, 128, 128, 128, 256, 256, 256];
pub const DEFAULT_STRIDES: [usize; 10] = [1, 1, 1, 1, 2, 1, 1, 2, 1, 1];

impl Default for ModelConfig {
    /// Ten layers on the 25-joint skeleton, 4×25 windows, 4 heads.
    fn default() -> Self {
        Self::for_topology(SkeletonTopology::builtin("ntu25").expect("built-in"), 60)
    }
}

impl ModelConfig {
    /// Default architecture for any topology; windows span every joint.
    pub fn for_topology(topology: SkeletonTopology, num_classes: usize) -> Self {
        let joints = topology.num_joints();
        Self {
            topology,
            partition: PartitionStrategy::Activity,
            in_channels: 3,
            channels: DEFAULT_CHANNELS.to_vec(),
            strides: DEFAULT_STRIDES.to_vec(),
            window: WindowSpec { frames: 4, joints },
            heads: 4,
            kernel: 5,
            groups: 4,
            num_classes,
            attention: true,
            position_bias: true,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.channels.is_empty() {
            return fail("at least one layer is required".into());
        }
        if self.channels.len() != self.strides.len() {
            return fail(format!(
                "{} channel entries but {} strides",
                self.channels.len(),
                self.strides.len()
            ));
        }
        if self.in_channels == 0 || self.num_classes == 0 {
            return fail("in_channels and num_classes must be positive".into());
        }
        if self.channels.contains(&0) || self.strides.contains(&0) {
            return fail("channel widths and strides must be positive".into());
        }
        WindowSpec::new(self.window.frames, self.window.joints)?;
        if !self.topology.num_joints().is_multiple_of(self.window.joints) {
            return fail(format!(
                "window width {} does not divide {} joints",
                self.window.joints,
                self.topology.num_joints()
            ));
        }
        Ok(())
    }

    fn stse_config(&self, stride: usize) -> StseConfig {
        StseConfig {
            window: self.window,
            heads: self.heads,
            kernel: self.kernel,
            groups: self.groups,
            stride,
            attention: self.attention,
            position_bias: self.position_bias,
        }
    }
}

/// Embedding, stacked STGC layers, global average pooling and a linear
/// classifier.
#[derive(Debug, Clone)]
pub struct DdGcn {
    config: ModelConfig,
    graph: GraphContext,
    params: ParamStore,
    embed_w: ParamId,
    embed_b: ParamId,
    layers: Vec<StgcLayer>,
    fc_w: ParamId,
    fc_b: ParamId,
}

impl DdGcn {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let graph = GraphContext::new(config.topology.clone(), config.partition)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c0 = config.channels[0];
        let embed_w = params.add(
            "embed.w",
            Array::uniform(
                &[config.in_channels, c0],
                1.0 / (config.in_channels as f64).sqrt(),
                &mut rng,
            ),
        );
        let embed_b = params.add("embed.b", Array::zeros(&[c0]));
        let mut layers = Vec::with_capacity(config.num_layers());
        let mut c_in = c0;
        for (i, (&c_out, &stride)) in config.channels.iter().zip(&config.strides).enumerate() {
            layers.push(StgcLayer::new(
                &mut params,
                &format!("layer{i}"),
                c_in,
                c_out,
                graph.num_subsets(),
                config.stse_config(stride),
                &mut rng,
            )?);
            c_in = c_out;
        }
        let fc_w = params.add(
            "fc.w",
            Array::uniform(&[c_in, config.num_classes], 1.0 / (c_in as f64).sqrt(), &mut rng),
        );
        let fc_b = params.add("fc.b", Array::zeros(&[config.num_classes]));
        Ok(Self {
            config,
            graph,
            params,
            embed_w,
            embed_b,
            layers,
            fc_w,
            fc_b,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &GraphContext {
        &self.graph
    }

    pub fn layers(&self) -> &[StgcLayer] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_input(&self, x: &Array) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[0] == 0 || s[1] != self.graph.num_joints() || s[2] != self.config.in_channels {
            return Err(shape_err(
                "model_forward",
                format!(
                    "input {s:?}, expected [T, {}, {}]",
                    self.graph.num_joints(),
                    self.config.in_channels
                ),
            ));
        }
        Ok(())
    }

    /// Records the network on `tape` using parameter values from `store`.
    pub fn forward_logits(&self, tape: &mut Tape, store: &ParamStore, x: &Array) -> Result<Var> {
        self.check_input(x)?;
        let (t, v) = (x.shape()[0], x.shape()[1]);
        let input = tape.constant(x.clone());
        let flat = tape.reshape(input, &[t * v, self.config.in_channels])?;
        let w = tape.param(store, self.embed_w);
        let b = tape.param(store, self.embed_b);
        let h = tape.matmul(flat, w)?;
        let h = tape.add_broadcast(h, b)?;
        let mut h = tape.reshape(h, &[t, v, self.config.channels[0]])?;
        for layer in &self.layers {
            h = layer.forward(tape, store, &self.graph, h)?;
        }
        let pooled = tape.mean_axis(h, 0)?;
        let pooled = tape.mean_axis(pooled, 0)?;
        let c = tape.value(pooled).len();
        let pooled = tape.reshape(pooled, &[1, c])?;
        let w = tape.param(store, self.fc_w);
        let b = tape.param(store, self.fc_b);
        let logits = tape.matmul(pooled, w)?;
        let logits = tape.add_broadcast(logits, b)?;
        tape.reshape(logits, &[self.config.num_classes])
    }

    pub fn logits(&self, x: &Array) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.forward_logits(&mut tape, &self.params, x)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Class probabilities for one sequence.
    pub fn predict(&self, x: &Array) -> Result<Vec<f64>> {
        let mut p = self.logits(x)?;
        softmax_in_place(&mut p);
        Ok(p)
    }

    /// Cross-entropy loss, its gradients, and the predicted probabilities.
    pub fn loss_and_grad(&self, x: &Array, label: usize) -> Result<(f64, Gradients, Vec<f64>)> {
        if label >= self.config.num_classes {
            return Err(Error::Data(format!(
                "label {label} outside {} classes",
                self.config.num_classes
            )));
        }
        let mut tape = Tape::new();
        let logits = self.forward_logits(&mut tape, &self.params, x)?;
        let mut probs = tape.value(logits).data().to_vec();
        softmax_in_place(&mut probs);
        let loss = tape.cross_entropy(logits, label)?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).item(), grads, probs))
    }
}
