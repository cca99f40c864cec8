use std::sync::Arc;

use rand::Rng;

use crate::engine::{Array, ParamId, ParamStore, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::windows::{relative_position_index, split_windows, WindowSpec};

pub const LAYER_NORM_EPS: f64 = 1e-9;

/// Hyper-parameters of one spatio-temporal synchronous encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StseConfig {
    pub window: WindowSpec,
    pub heads: usize,
    /// Temporal kernel length Γ (odd).
    pub kernel: usize,
    pub groups: usize,
    pub stride: usize,
    /// When false the windowed attention is skipped and features pass
    /// straight to the temporal convolution.
    pub attention: bool,
    pub position_bias: bool,
}

/// Windowed multi-head self-attention with relative position bias, grouped
/// temporal convolution, shortcut and layer normalization.
#[derive(Debug, Clone)]
pub struct Stse {
    pub channels: usize,
    pub config: StseConfig,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    /// `[(2M−1)(2N−1), heads]`.
    pub bias_table: ParamId,
    /// `[C, C/groups, Γ]`.
    pub gtc_weight: ParamId,
    pub gtc_bias: ParamId,
    pub ln_gamma: ParamId,
    pub ln_beta: ParamId,
    rel_index: Arc<[usize]>,
}

impl Stse {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        config: StseConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.heads == 0 || !channels.is_multiple_of(config.heads) {
            return Err(Error::Config(format!(
                "{} heads do not divide {channels} channels",
                config.heads
            )));
        }
        if config.groups == 0 || !channels.is_multiple_of(config.groups) {
            return Err(Error::Config(format!(
                "{} groups do not divide {channels} channels",
                config.groups
            )));
        }
        if config.kernel.is_multiple_of(2) || config.stride == 0 {
            return Err(Error::Config(format!(
                "temporal kernel {} must be odd and stride {} positive",
                config.kernel, config.stride
            )));
        }
        let b = 1.0 / (channels as f64).sqrt();
        let mut proj = |name: &str, rng: &mut R| {
            store.add(
                format!("{prefix}.{name}"),
                Array::uniform(&[channels, channels], b, rng),
            )
        };
        let wq = proj("wq", rng);
        let wk = proj("wk", rng);
        let wv = proj("wv", rng);
        let wo = proj("wo", rng);
        let bo = store.add(format!("{prefix}.bo"), Array::zeros(&[channels]));
        let bias_table = store.add(
            format!("{prefix}.pos_bias"),
            Array::zeros(&[config.window.bias_table_len(), config.heads]),
        );
        let per_group = channels / config.groups;
        let gtc_weight = store.add(
            format!("{prefix}.gtc_w"),
            Array::uniform(
                &[channels, per_group, config.kernel],
                1.0 / ((per_group * config.kernel) as f64).sqrt(),
                rng,
            ),
        );
        let gtc_bias = store.add(format!("{prefix}.gtc_b"), Array::zeros(&[channels]));
        let ln_gamma = store.add(format!("{prefix}.ln_gamma"), Array::full(&[channels], 1.0));
        let ln_beta = store.add(format!("{prefix}.ln_beta"), Array::zeros(&[channels]));
        Ok(Self {
            channels,
            config,
            wq,
            wk,
            wv,
            wo,
            bo,
            bias_table,
            gtc_weight,
            gtc_bias,
            ln_gamma,
            ln_beta,
            rel_index: relative_position_index(config.window).into(),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.config.heads
    }

    /// Attention over a batch of windows `[n, M·N, C]`. Returns the projected
    /// output and the attention weights `[n·heads, M·N, M·N]`.
    pub fn msa_windows(&self, tape: &mut Tape, store: &ParamStore, tokens: Var) -> Result<(Var, Var)> {
        let s = tape.value(tokens).shape().to_vec();
        let l = self.config.window.tokens();
        if s.len() != 3 || s[1] != l || s[2] != self.channels {
            return Err(shape_err(
                "msa_window",
                format!("tokens {s:?}, expected [n, {l}, {}]", self.channels),
            ));
        }
        let (n, c, h, d) = (s[0], self.channels, self.config.heads, self.head_dim());
        let flat = tape.reshape(tokens, &[n * l, c])?;

        let heads_of = |tape: &mut Tape, w: ParamId, axes: &[usize], shape: &[usize]| -> Result<Var> {
            let w = tape.param(store, w);
            let p = tape.matmul(flat, w)?;
            let p = tape.reshape(p, &[n, l, h, d])?;
            let p = tape.permute(p, axes)?;
            tape.reshape(p, shape)
        };
        let q = heads_of(tape, self.wq, &[0, 2, 1, 3], &[n * h, l, d])?;
        let k_t = heads_of(tape, self.wk, &[0, 2, 3, 1], &[n * h, d, l])?;
        let v = heads_of(tape, self.wv, &[0, 2, 1, 3], &[n * h, l, d])?;

        let scores = tape.batched_matmul(q, k_t)?;
        let mut scores = tape.scalar_mul(scores, 1.0 / (d as f64).sqrt())?;
        if self.config.position_bias {
            let table = tape.param(store, self.bias_table);
            let b = tape.gather(table, self.rel_index.clone())?;
            let b = tape.permute(b, &[1, 0])?;
            let b = tape.reshape(b, &[h, l, l])?;
            let s4 = tape.reshape(scores, &[n, h, l, l])?;
            let s4 = tape.add_broadcast(s4, b)?;
            scores = tape.reshape(s4, &[n * h, l, l])?;
        }
        let attn = tape.softmax(scores)?;
        let ctx = tape.batched_matmul(attn, v)?;
        let ctx = tape.reshape(ctx, &[n, h, l, d])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, &[n * l, c])?;
        let wo = tape.param(store, self.wo);
        let bo = tape.param(store, self.bo);
        let out = tape.matmul(ctx, wo)?;
        let out = tape.add_broadcast(out, bo)?;
        let out = tape.reshape(out, &[n, l, c])?;
        Ok((out, attn))
    }

    /// Attention inside a single window of `M·N` tokens: `[M·N, C] → [M·N, C]`.
    pub fn msa_window(&self, tape: &mut Tape, store: &ParamStore, tokens: Var) -> Result<Var> {
        let s = tape.value(tokens).shape().to_vec();
        if s.len() != 2 {
            return Err(shape_err("msa_window", format!("tokens {s:?}")));
        }
        let batched = tape.reshape(tokens, &[1, s[0], s[1]])?;
        let (out, _) = self.msa_windows(tape, store, batched)?;
        tape.reshape(out, &s)
    }

    /// `[T,V,C] → [ceil(T/stride),V,C]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let s = tape.value(x).shape().to_vec();
        if s.len() != 3 || s[2] != self.channels {
            return Err(shape_err(
                "stse",
                format!("input {s:?}, expected [T, V, {}]", self.channels),
            ));
        }
        let (t, v, c) = (s[0], s[1], s[2]);
        let mixed = if self.config.attention {
            let layout = split_windows(t, v, self.config.window)?;
            let flat = tape.reshape(x, &[t * v, c])?;
            let tokens = tape.gather(flat, layout.split_index())?;
            let tokens = tape.reshape(tokens, &[layout.num_windows(), self.config.window.tokens(), c])?;
            let (attended, _) = self.msa_windows(tape, store, tokens)?;
            let attended = tape.reshape(attended, &[layout.num_windows() * self.config.window.tokens(), c])?;
            let merged = tape.gather(attended, layout.merge_index_cropped())?;
            tape.reshape(merged, &[t, v, c])?
        } else {
            x
        };

        let w = tape.param(store, self.gtc_weight);
        let b = tape.param(store, self.gtc_bias);
        let conv = tape.temporal_conv(mixed, w, self.config.groups, self.config.stride)?;
        let conv = tape.add_broadcast(conv, b)?;

        let shortcut = if self.config.stride == 1 {
            x
        } else {
            let rows: Arc<[usize]> = (0..t).step_by(self.config.stride).collect();
            let t_out = rows.len();
            let by_frame = tape.reshape(x, &[t, v * c])?;
            let picked = tape.gather(by_frame, rows)?;
            tape.reshape(picked, &[t_out, v, c])?
        };
        let sum = tape.add(conv, shortcut)?;
        let normed = tape.layer_norm(sum, LAYER_NORM_EPS)?;
        let gamma = tape.param(store, self.ln_gamma);
        let beta = tape.param(store, self.ln_beta);
        let scaled = tape.mul_broadcast(normed, gamma)?;
        tape.add_broadcast(scaled, beta)
    }
}
