//! Latent correlation layer: a shared univariate GRU encodes each node's
//! window into a hidden vector, and scaled dot-product self-attention over
//! those vectors produces the learned adjacency.
//!
//! One GRU is applied per node over its own scalar series, so the layer is
//! equivariant under node permutations and yields exactly one `d_h` vector
//! per node regardless of the window length.

use rand::Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::spectral::symmetrize;
use crate::tensor::Tensor;

/// Gate parameters of the shared univariate GRU. Each weight maps the
/// concatenated `[x; h]` of width `1 + hidden` to `hidden` units.
#[derive(Clone, Debug)]
pub struct GruParams {
    pub update_w: Tensor,
    pub update_b: Tensor,
    pub reset_w: Tensor,
    pub reset_b: Tensor,
    pub candidate_w: Tensor,
    pub candidate_b: Tensor,
    pub hidden_dim: usize,
}

fn uniform_fan_in(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}

impl GruParams {
    pub fn init(hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let fan_in = 1 + hidden_dim;
        GruParams {
            update_w: uniform_fan_in(rng, &[hidden_dim, fan_in], fan_in),
            update_b: Tensor::zeros(&[hidden_dim]),
            reset_w: uniform_fan_in(rng, &[hidden_dim, fan_in], fan_in),
            reset_b: Tensor::zeros(&[hidden_dim]),
            candidate_w: uniform_fan_in(rng, &[hidden_dim, fan_in], fan_in),
            candidate_b: Tensor::zeros(&[hidden_dim]),
            hidden_dim,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> Self {
        GruParams {
            update_w: tape.leaf(self.update_w.clone()),
            update_b: tape.leaf(self.update_b.clone()),
            reset_w: tape.leaf(self.reset_w.clone()),
            reset_b: tape.leaf(self.reset_b.clone()),
            candidate_w: tape.leaf(self.candidate_w.clone()),
            candidate_b: tape.leaf(self.candidate_b.clone()),
            hidden_dim: self.hidden_dim,
        }
    }
}

/// Query/key projections of the self-attention step.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub query_w: Tensor,
    pub key_w: Tensor,
    pub dim: usize,
}

impl AttentionParams {
    pub fn init(hidden_dim: usize, dim: usize, rng: &mut impl Rng) -> Self {
        AttentionParams {
            query_w: uniform_fan_in(rng, &[hidden_dim, dim], hidden_dim),
            key_w: uniform_fan_in(rng, &[hidden_dim, dim], hidden_dim),
            dim,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> Self {
        AttentionParams {
            query_w: tape.leaf(self.query_w.clone()),
            key_w: tape.leaf(self.key_w.clone()),
            dim: self.dim,
        }
    }
}

/// One gate: `act(W [x; h]^T + b)` batched over nodes.
fn gate(
    tape: &mut Tape,
    w: &Tensor,
    b: &Tensor,
    x: &Tensor,
    h: &Tensor,
    use_tanh: bool,
) -> Result<Tensor> {
    let cat = tape.concat_cols(x, h)?;
    let wt = tape.transpose(w)?;
    let pre = tape.matmul(&cat, &wt)?;
    let pre = tape.add_bias_rows(&pre, b)?;
    if use_tanh {
        tape.tanh(&pre)
    } else {
        tape.sigmoid(&pre)
    }
}

/// Run the shared GRU over the `K` columns of `x[N,K]` with `h0 = 0` and
/// return the last hidden state per node, stacked into `R[N,hidden]`.
pub fn gru_encode(tape: &mut Tape, params: &GruParams, x: &Tensor) -> Result<Tensor> {
    let (n, k) = x.dims2()?;
    if k == 0 {
        return Err(Error::dim("gru needs at least one timestep"));
    }
    let mut h = tape.leaf(Tensor::zeros(&[n, params.hidden_dim]));
    for t in 0..k {
        let xt = tape.leaf(x.column(t)?);
        let z = gate(tape, &params.update_w, &params.update_b, &xt, &h, false)?;
        let r = gate(tape, &params.reset_w, &params.reset_b, &xt, &h, false)?;
        let rh = tape.hadamard(&r, &h)?;
        let hcand = gate(tape, &params.candidate_w, &params.candidate_b, &xt, &rh, true)?;
        // h' = (1 - z) h + z h~, written without a ones constant
        let delta = tape.sub(&hcand, &h)?;
        let step = tape.hadamard(&z, &delta)?;
        h = tape.add(&h, &step)?;
    }
    Ok(h)
}

/// Row-softmaxed attention scores `softmax(Q K^T / sqrt(d))` over an encoded
/// representation `r[N,hidden]`.
pub fn attention_weights(tape: &mut Tape, params: &AttentionParams, r: &Tensor) -> Result<Tensor> {
    let q = tape.matmul(r, &params.query_w)?;
    let k = tape.matmul(r, &params.key_w)?;
    let kt = tape.transpose(&k)?;
    let scores = tape.matmul(&q, &kt)?;
    let scaled = tape.scale(&scores, 1.0 / (params.dim as f64).sqrt())?;
    tape.softmax_rows(&scaled)
}

/// Full latent correlation layer: GRU encoding, attention, symmetrization.
/// The result is a valid similarity matrix (symmetric, entries in (0, 1),
/// pre-symmetrization rows summing to one), fully recorded on the tape so
/// gradients reach both parameter groups through downstream consumers.
pub fn latent_correlation(
    tape: &mut Tape,
    gru: &GruParams,
    attn: &AttentionParams,
    x: &Tensor,
) -> Result<Tensor> {
    let r = gru_encode(tape, gru, x)?;
    let w_raw = attention_weights(tape, attn, &r)?;
    symmetrize(tape, &w_raw)
}
