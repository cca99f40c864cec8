//! Fixtures shared by the criterion benches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ddgcn::layers::{Cagc, GraphContext, Stse, StseConfig};
use ddgcn::{Array, DdGcn, ModelConfig, ParamStore, PartitionStrategy, SkeletonTopology, WindowSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn ntu25() -> SkeletonTopology {
    SkeletonTopology::builtin("ntu25").expect("built-in topology")
}

/// Random `[frames, 25, channels]` features.
pub fn features(frames: usize, channels: usize) -> Array {
    Array::uniform(&[frames, 25, channels], 1.0, &mut rng(1))
}

pub struct CagcFixture {
    pub graph: GraphContext,
    pub store: ParamStore,
    pub cagc: Cagc,
}

pub fn cagc(channels: usize) -> CagcFixture {
    let graph = GraphContext::new(ntu25(), PartitionStrategy::Activity).expect("valid graph");
    let mut store = ParamStore::new();
    let cagc = Cagc::new(&mut store, "cagc", channels, channels, graph.num_subsets(), &mut rng(2));
    CagcFixture { graph, store, cagc }
}

pub fn stse(channels: usize) -> (ParamStore, Stse) {
    let mut store = ParamStore::new();
    let config = StseConfig {
        window: WindowSpec { frames: 4, joints: 25 },
        heads: 4,
        kernel: 5,
        groups: 4,
        stride: 1,
        attention: true,
        position_bias: true,
    };
    let stse = Stse::new(&mut store, "stse", channels, config, &mut rng(3)).expect("valid config");
    (store, stse)
}

/// Four layers of widths 16/16/32/32 on the 25-joint skeleton.
pub fn small_model() -> DdGcn {
    let mut config = ModelConfig::for_topology(ntu25(), 60);
    config.channels = vec![16, 16, 32, 32];
    config.strides = vec![1, 1, 2, 1];
    DdGcn::new(config, 4).expect("valid model")
}
