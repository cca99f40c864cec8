//! Finite-difference gradient checks of every layer operation on small
//! shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Cagc, DdGcn, GraphContext, ModelConfig, Stse, StseConfig};
use crate::engine::{check_gradients, Array, ParamStore, Tape, Var};
use crate::error::Result;
use crate::graph::{PartitionStrategy, SkeletonTopology};
use crate::windows::WindowSpec;

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckSetup {
    pub topology: SkeletonTopology,
    pub partition: PartitionStrategy,
    pub frames: usize,
    pub channels: usize,
    pub window_frames: usize,
    pub heads: usize,
    pub kernel: usize,
    pub groups: usize,
    pub seed: u64,
}

impl GradCheckSetup {
    /// T=8, C=8 on the given topology, with 4-frame windows spanning every
    /// joint.
    pub fn small(topology: SkeletonTopology, partition: PartitionStrategy) -> Self {
        Self {
            topology,
            partition,
            frames: 8,
            channels: 8,
            window_frames: 4,
            heads: 4,
            kernel: 5,
            groups: 4,
            seed: 7,
        }
    }

    fn window(&self) -> WindowSpec {
        WindowSpec {
            frames: self.window_frames,
            joints: self.topology.num_joints(),
        }
    }

    fn stse_config(&self, stride: usize) -> StseConfig {
        StseConfig {
            window: self.window(),
            heads: self.heads,
            kernel: self.kernel,
            groups: self.groups,
            stride,
            attention: true,
            position_bias: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOutcome {
    pub name: &'static str,
    pub max_rel_err: f64,
}

impl GradCheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= GRADCHECK_TOL
    }
}

/// Moves zero/one initialisations (α, biases, bias tables, norm affine) off
/// their special values so every path carries gradient.
pub fn perturb_initial_values<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R) {
    for p in store.iter_mut() {
        let first = p.value.data()[0];
        if p.value.data().iter().all(|&x| x == first) {
            for x in p.value.data_mut() {
                *x = first + rng.random_range(-0.3..0.3);
            }
        }
        if p.name.ends_with(".alpha") {
            p.value.data_mut()[0] = 0.3 + rng.random_range(0.0..0.2);
        }
    }
}

/// Projects `out` onto a fixed random direction so every coordinate matters.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let r = Array::uniform(tape.value(out).shape(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let r = tape.constant(r);
    let m = tape.mul(out, r)?;
    tape.sum_all(m)
}

fn outcome(
    name: &'static str,
    store: &ParamStore,
    f: impl Fn(&mut Tape, &ParamStore) -> Result<Var>,
) -> Result<GradCheckOutcome> {
    let report = check_gradients(store, f, GRADCHECK_STEP)?;
    Ok(GradCheckOutcome {
        name,
        max_rel_err: report.max_error(),
    })
}

pub fn check_channel_correlation(setup: &GradCheckSetup) -> Result<GradCheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let mut store = ParamStore::new();
    let k = setup.partition.num_subsets();
    let c = setup.channels;
    let cagc = Cagc::new(&mut store, "cagc", c, c, k, &mut rng);
    let x = store.add(
        "x",
        Array::uniform(&[setup.frames, setup.topology.num_joints(), c], 1.0, &mut rng),
    );
    perturb_initial_values(&mut store, &mut rng);
    outcome("channel_correlation", &store, |tape, s| {
        let xv = tape.param(s, x);
        let a = cagc.channel_correlation(tape, s, xv)?;
        project(tape, a, setup.seed + 1)
    })
}

pub fn check_cagc(setup: &GradCheckSetup) -> Result<GradCheckOutcome> {
    let graph = GraphContext::new(setup.topology.clone(), setup.partition)?;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed + 2);
    let mut store = ParamStore::new();
    let c = setup.channels;
    let cagc = Cagc::new(&mut store, "cagc", c, c, graph.num_subsets(), &mut rng);
    let x = store.add(
        "x",
        Array::uniform(&[setup.frames, graph.num_joints(), c], 1.0, &mut rng),
    );
    perturb_initial_values(&mut store, &mut rng);
    outcome("cagc_forward", &store, |tape, s| {
        let xv = tape.param(s, x);
        let y = cagc.forward(tape, s, &graph, xv)?;
        project(tape, y, setup.seed + 3)
    })
}

pub fn check_msa_window(setup: &GradCheckSetup) -> Result<GradCheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed + 4);
    let mut store = ParamStore::new();
    let c = setup.channels;
    let cfg = setup.stse_config(1);
    let stse = Stse::new(&mut store, "stse", c, cfg, &mut rng)?;
    let x = store.add("tokens", Array::uniform(&[cfg.window.tokens(), c], 1.0, &mut rng));
    perturb_initial_values(&mut store, &mut rng);
    outcome("msa_window", &store, |tape, s| {
        let xv = tape.param(s, x);
        let y = stse.msa_window(tape, s, xv)?;
        project(tape, y, setup.seed + 5)
    })
}

pub fn check_stse(setup: &GradCheckSetup) -> Result<GradCheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed + 6);
    let mut store = ParamStore::new();
    let c = setup.channels;
    let stse = Stse::new(&mut store, "stse", c, setup.stse_config(1), &mut rng)?;
    let x = store.add(
        "x",
        Array::uniform(&[setup.frames, setup.topology.num_joints(), c], 1.0, &mut rng),
    );
    perturb_initial_values(&mut store, &mut rng);
    outcome("stse_forward", &store, |tape, s| {
        let xv = tape.param(s, x);
        let y = stse.forward(tape, s, xv)?;
        project(tape, y, setup.seed + 7)
    })
}

/// Reduced two-layer model (widths 8/8, second layer strided) trained with
/// cross-entropy.
pub fn check_model(setup: &GradCheckSetup) -> Result<GradCheckOutcome> {
    let mut config = ModelConfig::for_topology(setup.topology.clone(), 3);
    config.partition = setup.partition;
    config.channels = vec![setup.channels, setup.channels];
    config.strides = vec![1, 2];
    config.window = setup.window();
    config.heads = setup.heads;
    config.kernel = setup.kernel;
    config.groups = setup.groups;
    let mut model = DdGcn::new(config, setup.seed + 8)?;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed + 9);
    perturb_initial_values(model.params_mut(), &mut rng);
    let x = Array::uniform(&[setup.frames, setup.topology.num_joints(), 3], 1.0, &mut rng);
    outcome("model_forward", model.params(), |tape, s| {
        let logits = model.forward_logits(tape, s, &x)?;
        tape.cross_entropy(logits, 1)
    })
}

/// All layer checks, in order: correlation, CAGC, MSA, STSE, model.
pub fn run_gradient_suite(setup: &GradCheckSetup) -> Result<Vec<GradCheckOutcome>> {
    Ok(vec![
        check_channel_correlation(setup)?,
        check_cagc(setup)?,
        check_msa_window(setup)?,
        check_stse(setup)?,
        check_model(setup)?,
    ])
}
