//! Data preparation, the joint forecast/backcast loss, RMSprop with stepped
//! learning-rate decay, and the epoch loop.
//!
//! Everything here is deterministic given (dataset, config, seed): parameter
//! initialization, per-epoch window shuffling and batch order all derive
//! from the run seed, so identical runs produce identical trajectories and
//! an interrupted run can resume bit-exactly from a checkpoint.

use std::collections::BTreeMap;
use std::ops::Range;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{network_forward, AblationFlags, ForwardCtx, ModelConfig, NetworkParams};
use crate::tensor::Tensor;

/// A multivariate series: `values[node, t]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub values: Tensor,
    pub node_names: Vec<String>,
    pub granularity: String,
}

impl Dataset {
    pub fn new(values: Tensor, node_names: Vec<String>, granularity: impl Into<String>) -> Result<Self> {
        let (n, _t) = values.dims2()?;
        if node_names.len() != n {
            return Err(Error::Data(format!(
                "{} node names for {} series",
                node_names.len(),
                n
            )));
        }
        Ok(Dataset { values, node_names, granularity: granularity.into() })
    }

    pub fn nodes(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    ZScore,
    MinMax,
    None,
}

impl std::str::FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zscore" => Ok(NormKind::ZScore),
            "minmax" => Ok(NormKind::MinMax),
            "none" => Ok(NormKind::None),
            other => Err(Error::Config(format!("unknown normalization '{other}'"))),
        }
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NormKind::ZScore => "zscore",
            NormKind::MinMax => "minmax",
            NormKind::None => "none",
        };
        write!(f, "{s}")
    }
}

/// Per-node scaling fitted on the training range only.
#[derive(Clone, Debug)]
pub enum NormStats {
    ZScore { mean: Vec<f64>, std: Vec<f64> },
    MinMax { min: Vec<f64>, max: Vec<f64> },
    None { nodes: usize },
}

/// Fit statistics on training values and return them with the normalized
/// training block. The standard deviation is the population one
/// (divisor `T_train`).
pub fn normalize_fit(kind: NormKind, train_values: &Tensor) -> Result<(NormStats, Tensor)> {
    let (n, t) = train_values.dims2()?;
    if t == 0 {
        return Err(Error::Data("cannot fit normalization on an empty range".into()));
    }
    let stats = match kind {
        NormKind::None => NormStats::None { nodes: n },
        NormKind::ZScore => {
            let mut mean = vec![0.0; n];
            let mut std = vec![0.0; n];
            for i in 0..n {
                let row: Vec<f64> = (0..t).map(|j| train_values.at2(i, j)).collect();
                let mu = row.iter().sum::<f64>() / t as f64;
                let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / t as f64;
                if var == 0.0 {
                    return Err(Error::Data(format!(
                        "series {i} is constant on the training range; z-score is undefined"
                    )));
                }
                mean[i] = mu;
                std[i] = var.sqrt();
            }
            NormStats::ZScore { mean, std }
        }
        NormKind::MinMax => {
            let mut min = vec![f64::INFINITY; n];
            let mut max = vec![f64::NEG_INFINITY; n];
            for i in 0..n {
                for j in 0..t {
                    let v = train_values.at2(i, j);
                    min[i] = min[i].min(v);
                    max[i] = max[i].max(v);
                }
                if max[i] <= min[i] {
                    return Err(Error::Data(format!(
                        "series {i} has max == min on the training range; min-max is undefined"
                    )));
                }
            }
            NormStats::MinMax { min, max }
        }
    };
    let normalized = normalize_apply(&stats, train_values)?;
    Ok((stats, normalized))
}

pub fn normalize_apply(stats: &NormStats, values: &Tensor) -> Result<Tensor> {
    transform(stats, values, false)
}

pub fn normalize_invert(stats: &NormStats, values: &Tensor) -> Result<Tensor> {
    transform(stats, values, true)
}

fn transform(stats: &NormStats, values: &Tensor, invert: bool) -> Result<Tensor> {
    let (n, t) = values.dims2()?;
    let expected = match stats {
        NormStats::ZScore { mean, .. } => mean.len(),
        NormStats::MinMax { min, .. } => min.len(),
        NormStats::None { nodes } => *nodes,
    };
    if n != expected {
        return Err(Error::dim(format!(
            "normalization fitted for {expected} series, got {n}"
        )));
    }
    let mut out = values.detached();
    {
        let data = out.data_mut();
        for i in 0..n {
            let (scale, offset) = match stats {
                NormStats::ZScore { mean, std } => (std[i], mean[i]),
                NormStats::MinMax { min, max } => (max[i] - min[i], min[i]),
                NormStats::None { .. } => (1.0, 0.0),
            };
            for j in 0..t {
                let idx = i * t + j;
                data[idx] = if invert {
                    data[idx] * scale + offset
                } else {
                    (data[idx] - offset) / scale
                };
            }
        }
    }
    Ok(out)
}

/// One training sample: input columns `[start, start+k)` paired with target
/// columns `[start+k, start+k+h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub input: (usize, usize),
    pub target: (usize, usize),
}

/// Stride-1 sliding windows over `[0, t)`: exactly `t - k - h + 1` of them.
pub fn make_windows(t: usize, k: usize, h: usize) -> Result<Vec<Window>> {
    if k == 0 || h == 0 {
        return Err(Error::Config("window and horizon must be positive".into()));
    }
    if t < k + h {
        return Err(Error::dim(format!(
            "range of {t} timestamps cannot hold a window; needs at least {}",
            k + h
        )));
    }
    Ok((k..=t - h)
        .map(|t0| Window { input: (t0 - k, t0), target: (t0, t0 + h) })
        .collect())
}

/// Contiguous chronological split at `floor(T * cumulative ratio)`.
/// Windows never cross a boundary; they are generated per range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

pub fn split(t: usize, ratios: (f64, f64, f64)) -> Result<SplitRanges> {
    let (a, b, c) = ratios;
    if a <= 0.0 || b < 0.0 || c <= 0.0 {
        return Err(Error::Config(format!(
            "split ratios must be positive (validation may be zero), got {ratios:?}"
        )));
    }
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {ratios:?}")));
    }
    // nudge before flooring so ratios that are exact in intent (60/110 of
    // 110) do not fall one short through representation error
    let train_end = (t as f64 * a + 1e-9).floor() as usize;
    let val_end = (t as f64 * (a + b) + 1e-9).floor() as usize;
    Ok(SplitRanges { train: 0..train_end, val: train_end..val_end, test: val_end..t })
}

/// Joint loss of one window (squared forecast error plus, optionally, the
/// squared backcast reconstruction error), built on the tape.
pub fn window_loss(
    tape: &mut Tape,
    forecast: &Tensor,
    target: &Tensor,
    backcast: &Tensor,
    window_input: &Tensor,
    use_backcast: bool,
) -> Result<Tensor> {
    let target = if target.node_id().is_some() { target.clone() } else { tape.leaf(target.clone()) };
    let diff = tape.sub(forecast, &target)?;
    let sq = tape.hadamard(&diff, &diff)?;
    let mut loss = tape.sum_all(&sq)?;
    if use_backcast {
        let input = if window_input.node_id().is_some() {
            window_input.clone()
        } else {
            tape.leaf(window_input.clone())
        };
        let bdiff = tape.sub(backcast, &input)?;
        let bsq = tape.hadamard(&bdiff, &bdiff)?;
        let bloss = tape.sum_all(&bsq)?;
        loss = tape.add(&loss, &bloss)?;
    }
    Ok(loss)
}

/// Untaped convenience wrapper returning the loss value.
pub fn loss_value(
    forecast: &Tensor,
    target: &Tensor,
    backcast: &Tensor,
    window_input: &Tensor,
    use_backcast: bool,
) -> Result<f64> {
    let mut tape = Tape::new();
    let f = tape.leaf(forecast.detached());
    let b = tape.leaf(backcast.detached());
    Ok(window_loss(&mut tape, &f, target, &b, window_input, use_backcast)?.data()[0])
}

/// RMSprop accumulator state, keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct RmspropState {
    pub v: BTreeMap<String, Tensor>,
}

/// `v <- rho v + (1 - rho) g^2 ; theta <- theta - lr g / (sqrt(v) + eps)`.
pub fn rmsprop_step(
    state: &mut RmspropState,
    name: &str,
    param: &mut Tensor,
    grad: &Tensor,
    lr: f64,
    rho: f64,
    eps: f64,
) {
    let v = state
        .v
        .entry(name.to_string())
        .or_insert_with(|| Tensor::zeros(param.shape()));
    let vd = v.data_mut();
    let pd = param.data_mut();
    for (i, g) in grad.data().iter().enumerate() {
        vd[i] = rho * vd[i] + (1.0 - rho) * g * g;
        pd[i] -= lr * g / (vd[i].sqrt() + eps);
    }
}

/// `lr0 * decay^(floor(epoch / period))`.
pub fn lr_at_epoch(lr0: f64, decay: f64, period: usize, epoch: usize) -> f64 {
    lr0 * decay.powi((epoch / period.max(1)) as i32)
}

/// Everything the epoch loop needs beyond the dataset.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub window: usize,
    pub head_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub rho: f64,
    pub epsilon: f64,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub channels: usize,
    pub basis_count: usize,
    pub attention_dim: usize,
    pub gru_hidden: usize,
    pub kernel_size: usize,
    pub tied_gate: bool,
    pub normalization: NormKind,
    pub ablation: AblationFlags,
    /// Reuse one spectral basis per epoch instead of decomposing per window.
    pub freeze_graph: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window: 12,
            head_len: 1,
            epochs: 50,
            batch_size: 50,
            learning_rate: 0.001,
            decay_factor: 0.7,
            decay_every: 5,
            rho: 0.9,
            epsilon: 1e-8,
            ratios: (0.6, 0.2, 0.2),
            seed: 0,
            channels: 64,
            basis_count: 16,
            attention_dim: 32,
            gru_hidden: 32,
            kernel_size: 3,
            tied_gate: false,
            normalization: NormKind::ZScore,
            ablation: AblationFlags::default(),
            freeze_graph: false,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, nodes: usize) -> ModelConfig {
        ModelConfig {
            nodes,
            window: self.window,
            head_len: self.head_len,
            channels: self.channels,
            basis_count: self.basis_count,
            attention_dim: self.attention_dim,
            gru_hidden: self.gru_hidden,
            kernel_size: self.kernel_size,
            tied_gate: self.tied_gate,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// De-normalized one-step MAE on the validation range; NaN when the
    /// validation split is empty.
    pub val_mae: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best-validation epoch (final epoch when there is
    /// no validation split).
    pub best: NetworkParams,
    pub best_epoch: usize,
    /// Final-epoch parameters, the state a resumed run continues from.
    pub last: NetworkParams,
    pub log: Vec<TrainLogRow>,
    pub optimizer: RmspropState,
    pub stats: NormStats,
}

/// Fixed data preparation shared by every variant of a run: fit stats on the
/// train range, normalize the whole series with them, slice windows per
/// split.
pub struct Prepared {
    pub normalized: Tensor,
    pub stats: NormStats,
    pub splits: SplitRanges,
    pub train_windows: Vec<Window>,
    pub val_windows: Vec<Window>,
    pub test_windows: Vec<Window>,
}

pub fn prepare(dataset: &Dataset, cfg: &TrainConfig) -> Result<Prepared> {
    let t = dataset.len();
    let splits = split(t, cfg.ratios)?;
    let k = cfg.window;
    let h = cfg.head_len;
    if splits.train.len() < k + h {
        return Err(Error::dim(format!(
            "training range of {} timestamps cannot hold a window; needs at least {}",
            splits.train.len(),
            k + h
        )));
    }
    let train_block = dataset.values.columns(splits.train.start, splits.train.end)?;
    let (stats, _) = normalize_fit(cfg.normalization, &train_block)?;
    let normalized = normalize_apply(&stats, &dataset.values)?;

    let offset_windows = |range: &Range<usize>| -> Result<Vec<Window>> {
        if range.len() < k + h {
            return Ok(Vec::new());
        }
        Ok(make_windows(range.len(), k, h)?
            .into_iter()
            .map(|w| Window {
                input: (w.input.0 + range.start, w.input.1 + range.start),
                target: (w.target.0 + range.start, w.target.1 + range.start),
            })
            .collect())
    };

    Ok(Prepared {
        train_windows: offset_windows(&splits.train)?,
        val_windows: offset_windows(&splits.val)?,
        test_windows: offset_windows(&splits.test)?,
        normalized,
        stats,
        splits,
    })
}

/// Fingerprint of the prepared pipeline (split boundaries, window layout and
/// normalized data), used to confirm that ablation variants share identical
/// data handling.
pub fn pipeline_fingerprint(prep: &Prepared) -> u64 {
    let mut hash = crate::persist::Fnv1a::new();
    for r in [&prep.splits.train, &prep.splits.val, &prep.splits.test] {
        hash.update(&r.start.to_le_bytes());
        hash.update(&r.end.to_le_bytes());
    }
    for set in [&prep.train_windows, &prep.val_windows, &prep.test_windows] {
        hash.update(&set.len().to_le_bytes());
        if let Some(w) = set.first() {
            hash.update(&w.input.0.to_le_bytes());
            hash.update(&w.target.1.to_le_bytes());
        }
    }
    for v in prep.normalized.data() {
        hash.update(&v.to_le_bytes());
    }
    hash.finish()
}

fn batch_loss(
    params: &NetworkParams,
    normalized: &Tensor,
    batch: &[Window],
    ablation: &AblationFlags,
    frozen: Option<&crate::spectral::SpectralBasis>,
) -> Result<(Tape, Tensor, NetworkParams)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut acc: Option<Tensor> = None;
    for w in batch {
        let input = normalized.columns(w.input.0, w.input.1)?;
        let target = normalized.columns(w.target.0, w.target.1)?;
        let ctx = ForwardCtx { flags: *ablation, graph_override: None, frozen_basis: frozen };
        let out = network_forward(&mut tape, &bound, &input, &ctx)?;
        let loss = window_loss(
            &mut tape,
            &out.forecast,
            &target,
            &out.backcast,
            &input,
            !ablation.without_backcast,
        )?;
        acc = Some(match acc {
            None => loss,
            Some(prev) => tape.add(&prev, &loss)?,
        });
    }
    let total = acc.expect("batches are never empty");
    let mean = tape.scale(&total, 1.0 / batch.len() as f64)?;
    Ok((tape, mean, bound))
}

/// De-normalized one-step MAE over a window set.
fn mae_over_windows(
    params: &NetworkParams,
    prep: &Prepared,
    raw: &Tensor,
    windows: &[Window],
    ablation: &AblationFlags,
) -> Result<f64> {
    if windows.is_empty() {
        return Ok(f64::NAN);
    }
    let mut abs_sum = 0.0;
    let mut count = 0usize;
    for w in windows {
        let input = prep.normalized.columns(w.input.0, w.input.1)?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let ctx = ForwardCtx { flags: *ablation, ..Default::default() };
        let out = network_forward(&mut tape, &bound, &input, &ctx)?;
        let pred = normalize_invert(&prep.stats, &out.forecast.detached())?;
        let truth = raw.columns(w.target.0, w.target.1)?;
        for (p, t) in pred.data().iter().zip(truth.data()) {
            abs_sum += (p - t).abs();
            count += 1;
        }
    }
    Ok(abs_sum / count as f64)
}

pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let model_cfg = cfg.model_config(dataset.nodes());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = NetworkParams::init(model_cfg, &mut rng)?;
    train_from(dataset, cfg, params, RmspropState::default(), 0)
}

/// Continue training from `start_epoch` with given parameters and optimizer
/// state. Epoch shuffles derive from `(seed, epoch)`, so resuming from a
/// checkpoint replays exactly what an uninterrupted run would have done.
pub fn train_from(
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut params: NetworkParams,
    mut optimizer: RmspropState,
    start_epoch: usize,
) -> Result<TrainOutcome> {
    if cfg.ablation.without_latent_correlation {
        return Err(Error::Config(
            "training the latent-correlation ablation goes through the ablation harness, which supplies the override graph".into(),
        ));
    }
    let prep = prepare(dataset, cfg)?;
    let raw = &dataset.values;

    let mut log = Vec::with_capacity(cfg.epochs.saturating_sub(start_epoch));
    let mut best: Option<(f64, usize, NetworkParams)> = None;

    for epoch in start_epoch..cfg.epochs {
        let start = Instant::now();
        let lr = lr_at_epoch(cfg.learning_rate, cfg.decay_factor, cfg.decay_every, epoch);

        let mut order = prep.train_windows.clone();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut shuffle_rng);

        // optional per-epoch frozen basis, computed from the first window
        let frozen = if cfg.freeze_graph && !cfg.ablation.without_gft {
            let probe = prep.normalized.columns(order[0].input.0, order[0].input.1)?;
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let ctx = ForwardCtx { flags: cfg.ablation, ..Default::default() };
            let out = network_forward(&mut tape, &bound, &probe, &ctx)?;
            let lap = crate::spectral::normalized_laplacian_value(&out.adjacency.detached())?;
            Some(crate::spectral::jacobi_eigh(&lap)?)
        } else {
            None
        };

        let mut epoch_loss_sum = 0.0;
        let mut window_count = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (tape, loss, bound) =
                batch_loss(&params, &prep.normalized, batch, &cfg.ablation, frozen.as_ref())?;
            let loss_value = loss.data()[0];
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss diverged to {loss_value} at epoch {epoch}, batch {batch_idx}"
                )));
            }
            epoch_loss_sum += loss_value * batch.len() as f64;
            window_count += batch.len();

            let grads = tape.backward(&loss)?;
            for (name, bound_tensor) in bound.named_params() {
                let grad = grads.wrt(&bound_tensor)?;
                let param = params.tensor_mut(&name).expect("bound names match params");
                rmsprop_step(&mut optimizer, &name, param, grad, lr, cfg.rho, cfg.epsilon);
            }
        }
        let train_loss = epoch_loss_sum / window_count.max(1) as f64;
        let val_mae = mae_over_windows(&params, &prep, raw, &prep.val_windows, &cfg.ablation)?;

        if !val_mae.is_nan() {
            let better = match &best {
                None => true,
                Some((best_mae, _, _)) => val_mae < *best_mae,
            };
            if better {
                best = Some((val_mae, epoch, params.clone()));
            }
        }

        log.push(TrainLogRow {
            epoch,
            lr,
            train_loss,
            val_mae,
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (cfg.epochs.saturating_sub(1), params.clone()),
    };
    Ok(TrainOutcome {
        best: best_params,
        best_epoch,
        last: params,
        log,
        optimizer,
        stats: prep.stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn sine_dataset(n: usize, t: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Tensor::zeros(&[n, t]);
        for i in 0..n {
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            for j in 0..t {
                let v = (std::f64::consts::TAU * j as f64 / 24.0 + phase).sin()
                    + 0.1 * rng.gen_range(-1.0..1.0);
                values.set2(i, j, v);
            }
        }
        Dataset::new(values, (0..n).map(|i| format!("n{i}")).collect(), "test").unwrap()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            window: 8,
            epochs: 2,
            batch_size: 16,
            channels: 4,
            basis_count: 8,
            attention_dim: 4,
            gru_hidden: 4,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zscore_matches_hand_computation() {
        let values = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]);
        let (stats, normed) = normalize_fit(NormKind::ZScore, &values).unwrap();
        // population sigma of [1,2,3] is sqrt(2/3)
        let sigma = (2.0f64 / 3.0).sqrt();
        assert!((normed.data()[0] + 1.0 / sigma).abs() < 1e-12);
        assert!(normed.data()[1].abs() < 1e-12);
        assert!((normed.data()[2] - 1.0 / sigma).abs() < 1e-12);
        assert!((normed.data()[2] - 1.2247448713915890).abs() < 1e-12);
        let back = normalize_invert(&stats, &normed).unwrap();
        for (a, b) in back.data().iter().zip(values.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn none_and_minmax_normalization() {
        let values = Tensor::from_rows(&[vec![5.0, 5.0, 5.0]]);
        let (_, unchanged) = normalize_fit(NormKind::None, &values).unwrap();
        assert_eq!(unchanged.data(), values.data());

        let values = Tensor::from_rows(&[vec![0.0, 10.0]]);
        let (_, scaled) = normalize_fit(NormKind::MinMax, &values).unwrap();
        assert_eq!(scaled.data(), &[0.0, 1.0]);
    }

    #[test]
    fn constant_series_errors_under_zscore_and_minmax() {
        let constant = Tensor::from_rows(&[vec![2.0, 2.0, 2.0]]);
        assert!(matches!(normalize_fit(NormKind::ZScore, &constant), Err(Error::Data(_))));
        assert!(matches!(normalize_fit(NormKind::MinMax, &constant), Err(Error::Data(_))));
    }

    #[test]
    fn normalization_roundtrip_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let data: Vec<f64> = (0..40).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let values = Tensor::new(vec![4, 10], data).unwrap();
        for kind in [NormKind::ZScore, NormKind::MinMax, NormKind::None] {
            let (stats, normed) = normalize_fit(kind, &values).unwrap();
            let back = normalize_invert(&stats, &normed).unwrap();
            for (a, b) in back.data().iter().zip(values.data()) {
                assert!((a - b).abs() < 1e-12, "{kind} roundtrip");
            }
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(5, 2, 1).unwrap().len(), 3);
        let w = make_windows(5, 2, 1).unwrap();
        assert_eq!(w[0], Window { input: (0, 2), target: (2, 3) });
        assert_eq!(w[2], Window { input: (2, 4), target: (4, 5) });
        assert_eq!(make_windows(3, 2, 1).unwrap().len(), 1);
        assert_eq!(make_windows(110, 28, 1).unwrap().len(), 82);
        let err = make_windows(4, 4, 1).unwrap_err().to_string();
        assert!(err.contains('5'), "error should name the required minimum: {err}");
    }

    #[test]
    fn split_boundaries() {
        let s = split(10, (0.6, 0.2, 0.2)).unwrap();
        assert_eq!(s.train, 0..6);
        assert_eq!(s.val, 6..8);
        assert_eq!(s.test, 8..10);

        let s = split(110, (60.0 / 110.0, 0.0, 50.0 / 110.0)).unwrap();
        assert_eq!(s.train, 0..60);
        assert_eq!(s.val, 60..60);
        assert_eq!(s.test, 60..110);

        let s = split(100, (0.7, 0.2, 0.1)).unwrap();
        assert_eq!(s.train, 0..70);
        assert_eq!(s.val, 70..90);
        assert_eq!(s.test, 90..100);

        assert!(split(10, (0.5, 0.2, 0.2)).is_err());
        assert!(split(10, (0.0, 0.5, 0.5)).is_err());
    }

    #[test]
    fn loss_examples() {
        // perfect prediction
        let z = Tensor::zeros(&[2, 1]);
        let zk = Tensor::zeros(&[2, 2]);
        assert_eq!(loss_value(&z, &z, &zk, &zk, true).unwrap(), 0.0);
        // unit forecast error, no backcast
        let f = Tensor::from_rows(&[vec![1.0]]);
        let t = Tensor::from_rows(&[vec![0.0]]);
        let b = Tensor::zeros(&[1, 2]);
        assert_eq!(loss_value(&f, &t, &b, &b, false).unwrap(), 1.0);
        // forecast err [1,1], backcast err 0.5 everywhere over N=2, K=2
        let f = Tensor::from_rows(&[vec![1.0], vec![1.0]]);
        let t = Tensor::zeros(&[2, 1]);
        let bc = Tensor::full(&[2, 2], 0.5);
        let input = Tensor::zeros(&[2, 2]);
        assert_eq!(loss_value(&f, &t, &bc, &input, true).unwrap(), 3.0);
        assert_eq!(loss_value(&f, &t, &bc, &input, false).unwrap(), 2.0);
    }

    #[test]
    fn rmsprop_examples() {
        let mut state = RmspropState::default();
        let mut p = Tensor::vector(&[0.0]);
        rmsprop_step(&mut state, "p", &mut p, &Tensor::vector(&[0.0]), 0.1, 0.9, 1e-8);
        assert_eq!(p.data(), &[0.0], "zero gradient leaves parameters fixed");

        let mut p = Tensor::vector(&[0.0]);
        rmsprop_step(&mut state, "q", &mut p, &Tensor::vector(&[1.0]), 0.1, 0.9, 1e-8);
        let want = -0.1 / (0.1f64.sqrt() + 1e-8);
        assert!((p.data()[0] - want).abs() < 1e-12);
        assert!((p.data()[0] + 0.3162).abs() < 1e-4);

        let before = p.data()[0];
        rmsprop_step(&mut state, "q", &mut p, &Tensor::vector(&[1.0]), 0.1, 0.9, 1e-8);
        assert!(p.data()[0] < before, "constant gradient keeps pushing the same way");
    }

    #[test]
    fn lr_schedule() {
        assert_eq!(lr_at_epoch(0.001, 0.7, 5, 0), 0.001);
        assert!((lr_at_epoch(0.001, 0.7, 5, 5) - 0.0007).abs() < 1e-12);
        assert!((lr_at_epoch(0.001, 0.7, 5, 12) - 0.00049).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_the_null_update() {
        let ds = sine_dataset(3, 60, 1);
        let cfg = TrainConfig { learning_rate: 0.0, ..quick_config() };
        let before = {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            NetworkParams::init(cfg.model_config(3), &mut rng).unwrap()
        };
        let outcome = train(&ds, &cfg).unwrap();
        for ((_, a), (_, b)) in before.named_params().iter().zip(outcome.last.named_params().iter()) {
            assert_eq!(a.data(), b.data(), "lr = 0 must leave parameters bit-identical");
        }
    }

    #[test]
    fn identical_seeds_produce_identical_logs() {
        let ds = sine_dataset(3, 60, 2);
        let cfg = quick_config();
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.log.len(), b.log.len());
        for (ra, rb) in a.log.iter().zip(&b.log) {
            assert_eq!(ra.epoch, rb.epoch);
            assert_eq!(ra.lr, rb.lr);
            assert_eq!(ra.train_loss, rb.train_loss);
            assert!(ra.val_mae == rb.val_mae || (ra.val_mae.is_nan() && rb.val_mae.is_nan()));
        }
    }

    #[test]
    fn training_descends_on_sinusoids() {
        // seed-averaged comparison of epoch-10 loss against epoch-0 loss
        let mut improved = 0.0;
        for seed in [1u64, 2, 3] {
            let ds = sine_dataset(4, 200, seed);
            let cfg = TrainConfig {
                window: 12,
                epochs: 11,
                batch_size: 32,
                channels: 4,
                basis_count: 8,
                attention_dim: 8,
                gru_hidden: 8,
                learning_rate: 0.003,
                seed,
                ..Default::default()
            };
            let outcome = train(&ds, &cfg).unwrap();
            improved += outcome.log[0].train_loss - outcome.log[10].train_loss;
        }
        assert!(improved > 0.0, "mean epoch-10 loss should sit below epoch-0");
    }

    #[test]
    fn divergence_guard_names_epoch_and_batch() {
        let ds = sine_dataset(3, 40, 4);
        let cfg = TrainConfig { learning_rate: 1e120, epochs: 3, ..quick_config() };
        match train(&ds, &cfg) {
            Err(Error::Numeric(msg)) => {
                assert!(msg.contains("epoch"), "{msg}");
                assert!(msg.contains("batch"), "{msg}");
            }
            other => panic!("expected divergence, got {:?}", other.map(|o| o.best_epoch)),
        }
    }
}
