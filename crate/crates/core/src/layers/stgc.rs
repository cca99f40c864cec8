use rand::Rng;

use super::{Cagc, GraphContext, Stse, StseConfig};
use crate::engine::{ParamStore, Tape, Var};
use crate::error::Result;

/// One spatial-temporal graph convolution layer: CAGC followed by STSE.
#[derive(Debug, Clone)]
pub struct StgcLayer {
    pub cagc: Cagc,
    pub stse: Stse,
}

impl StgcLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        num_subsets: usize,
        stse: StseConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let cagc = Cagc::new(
            store,
            &format!("{prefix}.cagc"),
            in_channels,
            out_channels,
            num_subsets,
            rng,
        );
        let stse = Stse::new(store, &format!("{prefix}.stse"), out_channels, stse, rng)?;
        Ok(Self { cagc, stse })
    }

    /// Adds the layer input back when channel count and frame count are kept.
    pub fn has_residual(&self) -> bool {
        self.cagc.in_channels == self.cagc.out_channels && self.stse.config.stride == 1
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, graph: &GraphContext, x: Var) -> Result<Var> {
        let g = self.cagc.forward(tape, store, graph, x)?;
        let y = self.stse.forward(tape, store, g)?;
        if self.has_residual() {
            tape.add(y, x)
        } else {
            Ok(y)
        }
    }
}
