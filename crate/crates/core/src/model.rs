//! The forecasting network: channel lift, two residual spectral blocks with
//! frequency-domain temporal cells, basis-expansion heads for backcast and
//! forecast, and a gated output layer.
//!
//! Layout of one block: graph transform into the spectral basis, the
//! Spe-Seq cell on each component, per-eigenindex filtering with channel
//! mixing, inverse transform, then two affine-plus-basis heads. The second
//! block consumes the residual the first one failed to reconstruct.

use rand::{Rng, SeedableRng};

use crate::autodiff::Tape;
use crate::correlation::{latent_correlation, AttentionParams, GruParams};
use crate::error::{Error, Result};
use crate::spectral::{self, SpectralBasis};
use crate::tensor::Tensor;

/// Static sizes of one network instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Number of series (graph nodes).
    pub nodes: usize,
    /// Input window length K.
    pub window: usize,
    /// Direct head length; rolling inference keeps this at 1.
    pub head_len: usize,
    /// Channel count after the 1x1 lift.
    pub channels: usize,
    /// Number of basis vectors per head.
    pub basis_count: usize,
    /// Attention dimension d.
    pub attention_dim: usize,
    /// GRU hidden width.
    pub gru_hidden: usize,
    /// Width of the temporal convolution kernels (odd).
    pub kernel_size: usize,
    /// Reuse the value convolution as the gate, reproducing the tied form.
    pub tied_gate: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "temporal kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        let any_zero = [
            self.nodes,
            self.window,
            self.head_len,
            self.channels,
            self.basis_count,
            self.attention_dim,
            self.gru_hidden,
        ]
        .iter()
        .any(|v| *v == 0);
        if any_zero {
            return Err(Error::Config("all model dimensions must be positive".into()));
        }
        Ok(())
    }

    fn flat_len(&self) -> usize {
        self.channels * self.nodes * self.window
    }

    fn out_len(&self) -> usize {
        self.nodes * self.head_len
    }
}

/// Which components of the network are switched off. Pure configuration:
/// toggling a flag twice restores bit-identical behaviour.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AblationFlags {
    /// Use a provided graph instead of the learned correlation layer.
    pub without_latent_correlation: bool,
    /// Replace the Spe-Seq cell with the identity.
    pub without_spe_seq: bool,
    /// Apply the cell's convolutions in the time domain directly.
    pub without_dft: bool,
    /// Use the identity basis (and zero spectrum) instead of the Laplacian's.
    pub without_gft: bool,
    /// Drop the second (residual) block.
    pub without_residual: bool,
    /// Drop the backcast term from the training loss.
    pub without_backcast: bool,
}

/// Convolution kernels and biases of the frequency-domain cell, separate for
/// the real and imaginary halves and for value/gate paths.
#[derive(Clone, Debug)]
pub struct SpeSeqParams {
    pub real_value_kernels: Tensor,
    pub real_value_bias: Tensor,
    pub real_gate_kernels: Tensor,
    pub real_gate_bias: Tensor,
    pub imag_value_kernels: Tensor,
    pub imag_value_bias: Tensor,
    pub imag_gate_kernels: Tensor,
    pub imag_gate_bias: Tensor,
}

impl SpeSeqParams {
    /// Near-identity start: value kernels are a damped delta tap plus noise
    /// and gates open at sigma(2), so the cell begins as a mild pass-through
    /// and learns its filtering on top of that.
    fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        fn delta_plus_noise(rng: &mut impl Rng, c: usize, tau: usize) -> Tensor {
            let mut k = uniform(rng, &[c, c, tau], c * tau);
            let center = (tau - 1) / 2;
            for ch in 0..c {
                let v = k.at3(ch, ch, center) + 1.0;
                k.set3(ch, ch, center, v);
            }
            k
        }
        let c = cfg.channels;
        let tau = cfg.kernel_size;
        let fan_in = c * tau;
        SpeSeqParams {
            real_value_kernels: delta_plus_noise(rng, c, tau),
            real_value_bias: Tensor::zeros(&[c]),
            real_gate_kernels: uniform(rng, &[c, c, tau], fan_in),
            real_gate_bias: Tensor::full(&[c], 2.0),
            imag_value_kernels: delta_plus_noise(rng, c, tau),
            imag_value_bias: Tensor::zeros(&[c]),
            imag_gate_kernels: uniform(rng, &[c, c, tau], fan_in),
            imag_gate_bias: Tensor::full(&[c], 2.0),
        }
    }
}

/// Free diagonal spectral filter: one coefficient per eigenvalue index for
/// every input/output channel pair.
#[derive(Clone, Debug)]
pub struct GraphConvKernel {
    pub theta: Tensor,
}

/// Affine coefficient map plus learned basis vectors, shared shape for the
/// forecast and backcast branches.
#[derive(Clone, Debug)]
pub struct OutputHead {
    pub coeff_w: Tensor,
    pub coeff_b: Tensor,
    pub basis: Tensor,
}

impl OutputHead {
    fn init(cfg: &ModelConfig, out_len: usize, rng: &mut impl Rng) -> Self {
        let flat = cfg.flat_len();
        let b = cfg.basis_count;
        OutputHead {
            coeff_w: uniform(rng, &[b, flat], flat),
            coeff_b: Tensor::zeros(&[b, 1]),
            basis: uniform(rng, &[out_len, b], b),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockParams {
    pub spe_seq: SpeSeqParams,
    pub graph_kernel: GraphConvKernel,
    pub forecast_head: OutputHead,
    pub backcast_head: OutputHead,
}

impl BlockParams {
    fn init(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let c = cfg.channels;
        BlockParams {
            spe_seq: SpeSeqParams::init(cfg, rng),
            graph_kernel: GraphConvKernel {
                theta: uniform(rng, &[c, c, cfg.nodes], c),
            },
            forecast_head: OutputHead::init(cfg, cfg.out_len(), rng),
            backcast_head: OutputHead::init(cfg, cfg.nodes * cfg.window, rng),
        }
    }
}

/// Learned 1x1 map lifting the single physical channel to `channels`.
#[derive(Clone, Debug)]
pub struct ChannelLift {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// GLU-then-affine head applied to the summed block forecasts.
#[derive(Clone, Debug)]
pub struct OutputLayer {
    pub value_w: Tensor,
    pub value_b: Tensor,
    pub gate_w: Tensor,
    pub gate_b: Tensor,
    pub final_w: Tensor,
    pub final_b: Tensor,
}

impl OutputLayer {
    fn init(out_len: usize, rng: &mut impl Rng) -> Self {
        OutputLayer {
            value_w: uniform(rng, &[out_len, out_len], out_len),
            value_b: Tensor::zeros(&[out_len, 1]),
            gate_w: uniform(rng, &[out_len, out_len], out_len),
            gate_b: Tensor::zeros(&[out_len, 1]),
            final_w: uniform(rng, &[out_len, out_len], out_len),
            final_b: Tensor::zeros(&[out_len, 1]),
        }
    }
}

/// Every trainable parameter group of the network.
#[derive(Clone, Debug)]
pub struct NetworkParams {
    pub lift: ChannelLift,
    pub gru: GruParams,
    pub attn: AttentionParams,
    pub block1: BlockParams,
    pub block2: BlockParams,
    pub output: OutputLayer,
    pub config: ModelConfig,
}

fn uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}

impl NetworkParams {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        Ok(NetworkParams {
            lift: ChannelLift {
                weight: uniform(rng, &[config.channels], 1),
                bias: Tensor::zeros(&[config.channels]),
            },
            gru: GruParams::init(config.gru_hidden, rng),
            attn: AttentionParams::init(config.gru_hidden, config.attention_dim, rng),
            block1: BlockParams::init(&config, rng),
            block2: BlockParams::init(&config, rng),
            output: OutputLayer::init(config.out_len(), rng),
            config,
        })
    }

    /// Visit every tensor with its canonical dotted name, in a fixed order.
    pub fn for_each_tensor(&self, mut f: impl FnMut(&str, &Tensor)) {
        self.visit(|name, t| f(name, t));
    }

    fn visit(&self, mut f: impl FnMut(&str, &Tensor)) {
        f("lift.weight", &self.lift.weight);
        f("lift.bias", &self.lift.bias);
        f("gru.update_w", &self.gru.update_w);
        f("gru.update_b", &self.gru.update_b);
        f("gru.reset_w", &self.gru.reset_w);
        f("gru.reset_b", &self.gru.reset_b);
        f("gru.candidate_w", &self.gru.candidate_w);
        f("gru.candidate_b", &self.gru.candidate_b);
        f("attn.query_w", &self.attn.query_w);
        f("attn.key_w", &self.attn.key_w);
        for (prefix, block) in [("block1", &self.block1), ("block2", &self.block2)] {
            let s = &block.spe_seq;
            f(&format!("{prefix}.spe_seq.real_value_kernels"), &s.real_value_kernels);
            f(&format!("{prefix}.spe_seq.real_value_bias"), &s.real_value_bias);
            f(&format!("{prefix}.spe_seq.real_gate_kernels"), &s.real_gate_kernels);
            f(&format!("{prefix}.spe_seq.real_gate_bias"), &s.real_gate_bias);
            f(&format!("{prefix}.spe_seq.imag_value_kernels"), &s.imag_value_kernels);
            f(&format!("{prefix}.spe_seq.imag_value_bias"), &s.imag_value_bias);
            f(&format!("{prefix}.spe_seq.imag_gate_kernels"), &s.imag_gate_kernels);
            f(&format!("{prefix}.spe_seq.imag_gate_bias"), &s.imag_gate_bias);
            f(&format!("{prefix}.graph_kernel.theta"), &block.graph_kernel.theta);
            f(&format!("{prefix}.forecast.coeff_w"), &block.forecast_head.coeff_w);
            f(&format!("{prefix}.forecast.coeff_b"), &block.forecast_head.coeff_b);
            f(&format!("{prefix}.forecast.basis"), &block.forecast_head.basis);
            f(&format!("{prefix}.backcast.coeff_w"), &block.backcast_head.coeff_w);
            f(&format!("{prefix}.backcast.coeff_b"), &block.backcast_head.coeff_b);
            f(&format!("{prefix}.backcast.basis"), &block.backcast_head.basis);
        }
        f("output.value_w", &self.output.value_w);
        f("output.value_b", &self.output.value_b);
        f("output.gate_w", &self.output.gate_w);
        f("output.gate_b", &self.output.gate_b);
        f("output.final_w", &self.output.final_w);
        f("output.final_b", &self.output.final_b);
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.for_each_tensor(|name, t| out.push((name.to_string(), t.clone())));
        out
    }

    /// Mutable tensor lookup by canonical name.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let (block, rest) = match name.split_once('.') {
            Some(parts) => parts,
            None => return None,
        };
        match (block, rest) {
            ("lift", "weight") => Some(&mut self.lift.weight),
            ("lift", "bias") => Some(&mut self.lift.bias),
            ("gru", "update_w") => Some(&mut self.gru.update_w),
            ("gru", "update_b") => Some(&mut self.gru.update_b),
            ("gru", "reset_w") => Some(&mut self.gru.reset_w),
            ("gru", "reset_b") => Some(&mut self.gru.reset_b),
            ("gru", "candidate_w") => Some(&mut self.gru.candidate_w),
            ("gru", "candidate_b") => Some(&mut self.gru.candidate_b),
            ("attn", "query_w") => Some(&mut self.attn.query_w),
            ("attn", "key_w") => Some(&mut self.attn.key_w),
            ("output", "value_w") => Some(&mut self.output.value_w),
            ("output", "value_b") => Some(&mut self.output.value_b),
            ("output", "gate_w") => Some(&mut self.output.gate_w),
            ("output", "gate_b") => Some(&mut self.output.gate_b),
            ("output", "final_w") => Some(&mut self.output.final_w),
            ("output", "final_b") => Some(&mut self.output.final_b),
            ("block1", rest) => Self::block_tensor_mut(&mut self.block1, rest),
            ("block2", rest) => Self::block_tensor_mut(&mut self.block2, rest),
            _ => None,
        }
    }

    fn block_tensor_mut<'a>(block: &'a mut BlockParams, rest: &str) -> Option<&'a mut Tensor> {
        match rest {
            "spe_seq.real_value_kernels" => Some(&mut block.spe_seq.real_value_kernels),
            "spe_seq.real_value_bias" => Some(&mut block.spe_seq.real_value_bias),
            "spe_seq.real_gate_kernels" => Some(&mut block.spe_seq.real_gate_kernels),
            "spe_seq.real_gate_bias" => Some(&mut block.spe_seq.real_gate_bias),
            "spe_seq.imag_value_kernels" => Some(&mut block.spe_seq.imag_value_kernels),
            "spe_seq.imag_value_bias" => Some(&mut block.spe_seq.imag_value_bias),
            "spe_seq.imag_gate_kernels" => Some(&mut block.spe_seq.imag_gate_kernels),
            "spe_seq.imag_gate_bias" => Some(&mut block.spe_seq.imag_gate_bias),
            "graph_kernel.theta" => Some(&mut block.graph_kernel.theta),
            "forecast.coeff_w" => Some(&mut block.forecast_head.coeff_w),
            "forecast.coeff_b" => Some(&mut block.forecast_head.coeff_b),
            "forecast.basis" => Some(&mut block.forecast_head.basis),
            "backcast.coeff_w" => Some(&mut block.backcast_head.coeff_w),
            "backcast.coeff_b" => Some(&mut block.backcast_head.coeff_b),
            "backcast.basis" => Some(&mut block.backcast_head.basis),
            _ => None,
        }
    }

    /// Rebuild parameters from `(name, tensor)` pairs, validating names and
    /// shapes against the config.
    pub fn from_named(config: ModelConfig, entries: &[(String, Tensor)]) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut params = NetworkParams::init(config, &mut rng)?;
        let mut expected: std::collections::BTreeMap<String, Vec<usize>> = Default::default();
        params.for_each_tensor(|name, t| {
            expected.insert(name.to_string(), t.shape().to_vec());
        });
        let mut seen = std::collections::BTreeSet::new();
        for (name, tensor) in entries {
            let want = expected
                .get(name)
                .ok_or_else(|| Error::Data(format!("unknown parameter name '{name}'")))?;
            if tensor.shape() != want.as_slice() {
                return Err(Error::Data(format!(
                    "parameter '{}' has shape {:?}, config wants {:?}",
                    name,
                    tensor.shape(),
                    want
                )));
            }
            *params.tensor_mut(name).expect("name validated above") = tensor.detached();
            seen.insert(name.clone());
        }
        if seen.len() != expected.len() {
            let missing: Vec<&String> = expected.keys().filter(|k| !seen.contains(*k)).collect();
            return Err(Error::Data(format!("parameters missing from checkpoint: {missing:?}")));
        }
        Ok(params)
    }

    /// Leaf every tensor onto the tape, returning a copy whose tensors carry
    /// node ids. One bind per tape; gradients are fetched through the copy.
    pub fn bind(&self, tape: &mut Tape) -> Self {
        NetworkParams {
            lift: ChannelLift {
                weight: tape.leaf(self.lift.weight.clone()),
                bias: tape.leaf(self.lift.bias.clone()),
            },
            gru: self.gru.bind(tape),
            attn: self.attn.bind(tape),
            block1: Self::bind_block(&self.block1, tape),
            block2: Self::bind_block(&self.block2, tape),
            output: OutputLayer {
                value_w: tape.leaf(self.output.value_w.clone()),
                value_b: tape.leaf(self.output.value_b.clone()),
                gate_w: tape.leaf(self.output.gate_w.clone()),
                gate_b: tape.leaf(self.output.gate_b.clone()),
                final_w: tape.leaf(self.output.final_w.clone()),
                final_b: tape.leaf(self.output.final_b.clone()),
            },
            config: self.config,
        }
    }

    fn bind_block(block: &BlockParams, tape: &mut Tape) -> BlockParams {
        let s = &block.spe_seq;
        BlockParams {
            spe_seq: SpeSeqParams {
                real_value_kernels: tape.leaf(s.real_value_kernels.clone()),
                real_value_bias: tape.leaf(s.real_value_bias.clone()),
                real_gate_kernels: tape.leaf(s.real_gate_kernels.clone()),
                real_gate_bias: tape.leaf(s.real_gate_bias.clone()),
                imag_value_kernels: tape.leaf(s.imag_value_kernels.clone()),
                imag_value_bias: tape.leaf(s.imag_value_bias.clone()),
                imag_gate_kernels: tape.leaf(s.imag_gate_kernels.clone()),
                imag_gate_bias: tape.leaf(s.imag_gate_bias.clone()),
            },
            graph_kernel: GraphConvKernel {
                theta: tape.leaf(block.graph_kernel.theta.clone()),
            },
            forecast_head: OutputHead {
                coeff_w: tape.leaf(block.forecast_head.coeff_w.clone()),
                coeff_b: tape.leaf(block.forecast_head.coeff_b.clone()),
                basis: tape.leaf(block.forecast_head.basis.clone()),
            },
            backcast_head: OutputHead {
                coeff_w: tape.leaf(block.backcast_head.coeff_w.clone()),
                coeff_b: tape.leaf(block.backcast_head.coeff_b.clone()),
                basis: tape.leaf(block.backcast_head.basis.clone()),
            },
        }
    }
}

/// Gated linear unit: `value .* sigmoid(gate)`.
pub fn glu(tape: &mut Tape, value: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let s = tape.sigmoid(gate)?;
    tape.hadamard(value, &s)
}

fn conv_glu_path(
    tape: &mut Tape,
    x: &Tensor,
    value_k: &Tensor,
    value_b: &Tensor,
    gate_k: &Tensor,
    gate_b: &Tensor,
    tied_gate: bool,
) -> Result<Tensor> {
    let value = tape.conv1d_same(x, value_k, value_b)?;
    let gate = if tied_gate {
        value.clone()
    } else {
        tape.conv1d_same(x, gate_k, gate_b)?
    };
    glu(tape, &value, &gate)
}

/// Frequency-domain temporal cell over `x[C,N,K]`: transform each
/// (channel, node) series along time, filter the real and imaginary halves
/// with their own convolution + GLU stacks, recombine and invert. Output
/// shape equals input shape. With `without_dft` the convolutions run on the
/// time-domain signal directly and only the real-path parameters are used.
pub fn spe_seq_cell(
    tape: &mut Tape,
    params: &SpeSeqParams,
    x: &Tensor,
    without_dft: bool,
    tied_gate: bool,
) -> Result<Tensor> {
    let (_c, _n, _k) = x.dims3()?;
    if without_dft {
        return conv_glu_path(
            tape,
            x,
            &params.real_value_kernels,
            &params.real_value_bias,
            &params.real_gate_kernels,
            &params.real_gate_bias,
            tied_gate,
        );
    }
    let spectrum = spectral::dft_dense(tape, x)?;
    let m_re = conv_glu_path(
        tape,
        &spectrum.re,
        &params.real_value_kernels,
        &params.real_value_bias,
        &params.real_gate_kernels,
        &params.real_gate_bias,
        tied_gate,
    )?;
    let m_im = conv_glu_path(
        tape,
        &spectrum.im,
        &params.imag_value_kernels,
        &params.imag_value_bias,
        &params.imag_gate_kernels,
        &params.imag_gate_bias,
        tied_gate,
    )?;
    spectral::idft_dense(tape, &crate::spectral::ComplexMatrix::new(m_re, m_im)?)
}

/// Spectral graph convolution as a standalone operation: project onto the
/// basis, apply the per-eigenindex filter with channel mixing, and project
/// back.
pub fn spectral_graph_conv(
    tape: &mut Tape,
    basis: &SpectralBasis,
    kernel: &GraphConvKernel,
    x: &Tensor,
) -> Result<Tensor> {
    let (_, n, _) = x.dims3()?;
    if basis.values.numel() != n {
        return Err(Error::dim(format!(
            "basis covers {} nodes, input has {}",
            basis.values.numel(),
            n
        )));
    }
    let ut = tape.leaf(basis.vectors.transposed()?);
    let u = tape.leaf(basis.vectors.clone());
    let xl = if x.node_id().is_some() { x.clone() } else { tape.leaf(x.clone()) };
    let theta = if kernel.theta.node_id().is_some() {
        kernel.theta.clone()
    } else {
        tape.leaf(kernel.theta.clone())
    };
    let xhat = tape.matmul_batched(&ut, &xl)?;
    let filtered = tape.graph_filter(&theta, &xhat)?;
    tape.matmul_batched(&u, &filtered)
}

fn affine_column(tape: &mut Tape, w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
    let wx = tape.matmul(w, x)?;
    tape.add(&wx, b)
}

/// One block: spectral transform, temporal cell, filter, inverse transform,
/// then coefficient + basis heads. `u` is the (taped) eigenvector matrix.
fn block_forward(
    tape: &mut Tape,
    block: &BlockParams,
    u: &Tensor,
    lifted: &Tensor,
    cfg: &ModelConfig,
    flags: &AblationFlags,
) -> Result<(Tensor, Tensor)> {
    let ut = tape.transpose(u)?;
    let xhat = tape.matmul_batched(&ut, lifted)?;
    let cell_out = if flags.without_spe_seq {
        xhat
    } else {
        spe_seq_cell(tape, &block.spe_seq, &xhat, flags.without_dft, cfg.tied_gate)?
    };
    let filtered = tape.graph_filter(&block.graph_kernel.theta, &cell_out)?;
    let z = tape.matmul_batched(u, &filtered)?;

    let flat = tape.reshape(&z, &[cfg.flat_len(), 1])?;
    let fc_coeff = affine_column(tape, &block.forecast_head.coeff_w, &block.forecast_head.coeff_b, &flat)?;
    let fc = tape.matmul(&block.forecast_head.basis, &fc_coeff)?;
    let forecast = tape.reshape(&fc, &[cfg.nodes, cfg.head_len])?;
    let bc_coeff = affine_column(tape, &block.backcast_head.coeff_w, &block.backcast_head.coeff_b, &flat)?;
    let bc = tape.matmul(&block.backcast_head.basis, &bc_coeff)?;
    let backcast = tape.reshape(&bc, &[cfg.nodes, cfg.window])?;
    Ok((backcast, forecast))
}

/// Inputs to a forward pass beyond the window itself.
#[derive(Default)]
pub struct ForwardCtx<'a> {
    pub flags: AblationFlags,
    /// Fixed adjacency. Required when the latent correlation layer is
    /// ablated; also used for frozen-graph rolling.
    pub graph_override: Option<&'a Tensor>,
    /// Reuse a previously computed basis instead of decomposing per pass.
    pub frozen_basis: Option<&'a SpectralBasis>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub backcast: Tensor,
    pub forecast: Tensor,
    pub adjacency: Tensor,
}

/// Full forward pass over one window `x[N,K]`.
pub fn network_forward(
    tape: &mut Tape,
    params: &NetworkParams,
    x: &Tensor,
    ctx: &ForwardCtx,
) -> Result<ForwardOutput> {
    let cfg = &params.config;
    let (n, k) = x.dims2()?;
    if n != cfg.nodes || k != cfg.window {
        return Err(Error::dim(format!(
            "input {:?} does not match model window [{}, {}]",
            x.shape(),
            cfg.nodes,
            cfg.window
        )));
    }

    let adjacency = match ctx.graph_override {
        Some(graph) => {
            let (gr, gc) = graph.dims2()?;
            if gr != n || gc != n {
                return Err(Error::dim(format!(
                    "override graph {:?} does not match {} nodes",
                    graph.shape(),
                    n
                )));
            }
            tape.leaf(graph.detached())
        }
        None => {
            if ctx.flags.without_latent_correlation {
                return Err(Error::Config(
                    "ablating the latent correlation layer requires an override graph".into(),
                ));
            }
            latent_correlation(tape, &params.gru, &params.attn, x)?
        }
    };

    let u = if ctx.flags.without_gft {
        tape.leaf(Tensor::identity(n))
    } else if let Some(basis) = ctx.frozen_basis {
        tape.leaf(basis.vectors.clone())
    } else {
        let laplacian = spectral::normalized_laplacian(tape, &adjacency)?;
        let (u, _values) = tape.eigh(&laplacian)?;
        u
    };

    let x_leaf = tape.leaf(x.detached());
    let lifted1 = tape.channel_lift(&params.lift.weight, &params.lift.bias, &x_leaf)?;
    let (bc1, fc1) = block_forward(tape, &params.block1, &u, &lifted1, cfg, &ctx.flags)?;

    let (backcast, forecast_pre) = if ctx.flags.without_residual {
        (bc1, fc1)
    } else {
        let residual = tape.sub(&x_leaf, &bc1)?;
        let lifted2 = tape.channel_lift(&params.lift.weight, &params.lift.bias, &residual)?;
        let (bc2, fc2) = block_forward(tape, &params.block2, &u, &lifted2, cfg, &ctx.flags)?;
        (tape.add(&bc1, &bc2)?, tape.add(&fc1, &fc2)?)
    };

    let flat = tape.reshape(&forecast_pre, &[cfg.out_len(), 1])?;
    let value = affine_column(tape, &params.output.value_w, &params.output.value_b, &flat)?;
    let gate = affine_column(tape, &params.output.gate_w, &params.output.gate_b, &flat)?;
    let gated = glu(tape, &value, &gate)?;
    let out = affine_column(tape, &params.output.final_w, &params.output.final_b, &gated)?;
    let forecast = tape.reshape(&out, &[cfg.nodes, cfg.head_len])?;

    Ok(ForwardOutput { backcast, forecast, adjacency })
}
