//! Rolling multi-step inference, the evaluation metrics, naive baselines,
//! the ablation harness and the case-study exports.
//!
//! Metrics are always computed on de-normalized values; predictions leave
//! the model in normalized space and are mapped back through the stored
//! statistics before any error is taken.

use std::time::Instant;

use serde::Serialize;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{network_forward, spe_seq_cell, AblationFlags, ForwardCtx, NetworkParams};
use crate::spectral::{self, SpectralBasis};
use crate::tensor::Tensor;
use crate::training::{
    self, normalize_invert, pipeline_fingerprint, prepare, train, Dataset, NormStats, TrainConfig,
    Window,
};

/// Mean absolute error.
pub fn metric_mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Root mean squared error.
pub fn metric_rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Mean absolute percentage error, in percent. Entries whose true value is
/// below 1e-8 in magnitude are excluded from the mean; the second component
/// reports how many were skipped.
pub fn metric_mape(pred: &[f64], truth: &[f64]) -> Result<(f64, usize)> {
    check_lengths(pred, truth)?;
    let mut acc = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if t.abs() < 1e-8 {
            skipped += 1;
        } else {
            acc += ((t - p) / t).abs();
            used += 1;
        }
    }
    if used == 0 {
        return Ok((f64::NAN, skipped));
    }
    Ok((acc / used as f64 * 100.0, skipped))
}

fn check_lengths(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Data("metrics need at least one value".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::dim(format!(
            "metric inputs disagree: {} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Multi-step prediction by rolling the one-step head: each step drops the
/// oldest column and appends the previous prediction. By default the latent
/// correlation (and with it the spectral basis) is recomputed every step,
/// since the input window has changed; `recompute_graph = false` freezes
/// both from the first step instead.
pub fn rolling_forecast(
    params: &NetworkParams,
    window: &Tensor,
    horizon: usize,
    flags: &AblationFlags,
    graph_override: Option<&Tensor>,
    recompute_graph: bool,
) -> Result<Tensor> {
    if horizon == 0 {
        return Err(Error::Config("rolling forecast needs a positive horizon".into()));
    }
    let (n, k) = window.dims2()?;
    let mut current = window.detached();
    let mut out = Tensor::zeros(&[n, horizon]);
    let mut frozen: Option<(Tensor, SpectralBasis)> = None;
    for step in 0..horizon {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let (override_ref, basis_ref) = match &frozen {
            Some((w, basis)) => (Some(w), Some(basis)),
            None => (graph_override, None),
        };
        let ctx = ForwardCtx {
            flags: *flags,
            graph_override: override_ref,
            frozen_basis: basis_ref,
        };
        let fw = network_forward(&mut tape, &bound, &current, &ctx)?;
        if !recompute_graph && frozen.is_none() {
            let adjacency = fw.adjacency.detached();
            let basis = if flags.without_gft {
                SpectralBasis::identity(n)
            } else {
                let lap = spectral::normalized_laplacian_value(&adjacency)?;
                spectral::jacobi_eigh(&lap)?
            };
            frozen = Some((adjacency, basis));
        }
        // first column of the head is the one-step prediction
        let pred = fw.forecast.detached();
        for node in 0..n {
            out.set2(node, step, pred.at2(node, 0));
        }
        // slide: drop the oldest column, append the prediction
        let mut next = Tensor::zeros(&[n, k]);
        for node in 0..n {
            for t in 0..k - 1 {
                next.set2(node, t, current.at2(node, t + 1));
            }
            next.set2(node, k - 1, pred.at2(node, 0));
        }
        current = next;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct StepMetrics {
    pub mae: f64,
    pub mape: f64,
    pub rmse: f64,
    pub mape_skipped: usize,
}

/// Prediction block for one evaluation window, on the original scale.
#[derive(Clone, Debug, Serialize)]
pub struct WindowPrediction {
    /// Timestamp of the first predicted step.
    pub start: usize,
    /// `predictions[node][step]`.
    pub predictions: Vec<Vec<f64>>,
    pub truths: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ForecastReport {
    pub horizon: usize,
    pub per_step: Vec<StepMetrics>,
    /// Mean of the per-step metrics over the horizon.
    pub averaged: StepMetrics,
    pub windows_evaluated: usize,
    pub config_fingerprint: String,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<WindowPrediction>,
}

fn summarize(per_step: Vec<StepMetrics>, horizon: usize, windows: usize, fp: String, secs: f64, preds: Vec<WindowPrediction>) -> ForecastReport {
    let h = per_step.len() as f64;
    let averaged = StepMetrics {
        mae: per_step.iter().map(|m| m.mae).sum::<f64>() / h,
        mape: per_step.iter().map(|m| m.mape).sum::<f64>() / h,
        rmse: per_step.iter().map(|m| m.rmse).sum::<f64>() / h,
        mape_skipped: per_step.iter().map(|m| m.mape_skipped).sum(),
    };
    ForecastReport {
        horizon,
        per_step,
        averaged,
        windows_evaluated: windows,
        config_fingerprint: fp,
        seconds: secs,
        predictions: preds,
    }
}

/// Score a `predict` function over evaluation windows: metrics per step on
/// the original scale, averaged across the horizon.
fn score_windows<F>(
    raw: &Tensor,
    windows: &[Window],
    horizon: usize,
    fingerprint: String,
    keep_predictions: bool,
    mut predict: F,
) -> Result<ForecastReport>
where
    F: FnMut(&Window) -> Result<Tensor>,
{
    if windows.is_empty() {
        return Err(Error::Data("no evaluation windows fit in the range".into()));
    }
    let started = Instant::now();
    let (n, _) = raw.dims2()?;
    let mut per_step_pred: Vec<Vec<f64>> = vec![Vec::new(); horizon];
    let mut per_step_truth: Vec<Vec<f64>> = vec![Vec::new(); horizon];
    let mut kept = Vec::new();
    for w in windows {
        let pred = predict(w)?;
        let t0 = w.target.0;
        for h in 0..horizon {
            for node in 0..n {
                per_step_pred[h].push(pred.at2(node, h));
                per_step_truth[h].push(raw.at2(node, t0 + h));
            }
        }
        if keep_predictions {
            kept.push(WindowPrediction {
                start: t0,
                predictions: (0..n)
                    .map(|node| (0..horizon).map(|h| pred.at2(node, h)).collect())
                    .collect(),
                truths: (0..n)
                    .map(|node| (0..horizon).map(|h| raw.at2(node, t0 + h)).collect())
                    .collect(),
            });
        }
    }
    let mut per_step = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let (mape, skipped) = metric_mape(&per_step_pred[h], &per_step_truth[h])?;
        per_step.push(StepMetrics {
            mae: metric_mae(&per_step_pred[h], &per_step_truth[h])?,
            mape,
            rmse: metric_rmse(&per_step_pred[h], &per_step_truth[h])?,
            mape_skipped: skipped,
        });
    }
    Ok(summarize(per_step, horizon, windows.len(), fingerprint, started.elapsed().as_secs_f64(), kept))
}

/// Evaluation windows for a horizon `h` inside a range: both the input and
/// all `h` target steps stay inside the range.
pub fn eval_windows(range: &std::ops::Range<usize>, k: usize, h: usize) -> Result<Vec<Window>> {
    if range.len() < k + h {
        return Err(Error::dim(format!(
            "evaluation range of {} timestamps cannot hold K={k} plus H={h}",
            range.len()
        )));
    }
    Ok(training::make_windows(range.len(), k, h)?
        .into_iter()
        .map(|w| Window {
            input: (w.input.0 + range.start, w.input.1 + range.start),
            target: (w.target.0 + range.start, w.target.1 + range.start),
        })
        .collect())
}

/// Roll the trained model over every evaluation window of a range.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_model(
    params: &NetworkParams,
    dataset: &Dataset,
    stats: &NormStats,
    range: &std::ops::Range<usize>,
    horizon: usize,
    flags: &AblationFlags,
    graph_override: Option<&Tensor>,
    recompute_graph: bool,
    fingerprint: String,
    keep_predictions: bool,
) -> Result<ForecastReport> {
    let k = params.config.window;
    let windows = eval_windows(range, k, horizon)?;
    let normalized = training::normalize_apply(stats, &dataset.values)?;
    score_windows(
        &dataset.values,
        &windows,
        horizon,
        fingerprint,
        keep_predictions,
        |w| {
            let input = normalized.columns(w.input.0, w.input.1)?;
            let pred = rolling_forecast(params, &input, horizon, flags, graph_override, recompute_graph)?;
            normalize_invert(stats, &pred)
        },
    )
}

/// Hold the last observed column for every step of the horizon.
pub fn repeat_last_forecast(window: &Tensor, horizon: usize) -> Result<Tensor> {
    let (n, k) = window.dims2()?;
    let mut out = Tensor::zeros(&[n, horizon]);
    for node in 0..n {
        for h in 0..horizon {
            out.set2(node, h, window.at2(node, k - 1));
        }
    }
    Ok(out)
}

/// Three-point moving average rolled forward on its own predictions.
pub fn moving_average_forecast(window: &Tensor, horizon: usize) -> Result<Tensor> {
    let (n, k) = window.dims2()?;
    if k < 3 {
        return Err(Error::dim(format!("moving average needs K >= 3, got {k}")));
    }
    let mut out = Tensor::zeros(&[n, horizon]);
    for node in 0..n {
        let mut tail = [window.at2(node, k - 3), window.at2(node, k - 2), window.at2(node, k - 1)];
        for h in 0..horizon {
            let pred = (tail[0] + tail[1] + tail[2]) / 3.0;
            out.set2(node, h, pred);
            tail = [tail[1], tail[2], pred];
        }
    }
    Ok(out)
}

/// Score the two naive baselines over the same evaluation windows a model
/// run would use. They read the raw series directly.
pub fn naive_baselines(
    dataset: &Dataset,
    range: &std::ops::Range<usize>,
    k: usize,
    horizon: usize,
) -> Result<Vec<(String, ForecastReport)>> {
    let windows = eval_windows(range, k, horizon)?;
    let repeat = score_windows(&dataset.values, &windows, horizon, String::new(), false, |w| {
        let input = dataset.values.columns(w.input.0, w.input.1)?;
        repeat_last_forecast(&input, horizon)
    })?;
    let ma = score_windows(&dataset.values, &windows, horizon, String::new(), false, |w| {
        let input = dataset.values.columns(w.input.0, w.input.1)?;
        moving_average_forecast(&input, horizon)
    })?;
    Ok(vec![("repeat-last".to_string(), repeat), ("ma3".to_string(), ma)])
}

/// The seven rows of the component study, with their canonical labels.
pub fn ablation_variants() -> Vec<(&'static str, AblationFlags)> {
    let base = AblationFlags::default();
    vec![
        ("StemGNN", base),
        ("w/o LC", AblationFlags { without_latent_correlation: true, ..base }),
        ("w/o Spe-Seq Cell", AblationFlags { without_spe_seq: true, ..base }),
        ("w/o DFT", AblationFlags { without_dft: true, ..base }),
        ("w/o GFT", AblationFlags { without_gft: true, ..base }),
        ("w/o Residual", AblationFlags { without_residual: true, ..base }),
        ("w/o Backcasting", AblationFlags { without_backcast: true, ..base }),
    ]
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub mae: f64,
    pub mape: f64,
    pub rmse: f64,
    /// Fingerprint of the prepared data pipeline; identical across variants.
    pub pipeline_fingerprint: u64,
}

/// Train and evaluate the full model plus all six ablations under one seed.
/// The latent-correlation ablation needs a fixed adjacency; evaluation runs
/// on the test range at `horizon`.
pub fn run_ablations(
    dataset: &Dataset,
    cfg: &TrainConfig,
    horizon: usize,
    override_graph: Option<&Tensor>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (label, flags) in ablation_variants() {
        if flags.without_latent_correlation && override_graph.is_none() {
            return Err(Error::Config(
                "the latent-correlation ablation needs an adjacency file".into(),
            ));
        }
        let variant_cfg = TrainConfig { ablation: flags, ..cfg.clone() };
        let prep = prepare(dataset, &variant_cfg)?;
        let fingerprint = pipeline_fingerprint(&prep);
        let outcome = if flags.without_latent_correlation {
            train_with_fixed_graph(dataset, &variant_cfg, override_graph.unwrap())?
        } else {
            train(dataset, &variant_cfg)?
        };
        let report = evaluate_model(
            &outcome.best,
            dataset,
            &outcome.stats,
            &prep.splits.test,
            horizon,
            &flags,
            if flags.without_latent_correlation { override_graph } else { None },
            true,
            String::new(),
            false,
        )?;
        rows.push(AblationRow {
            variant: label.to_string(),
            mae: report.averaged.mae,
            mape: report.averaged.mape,
            rmse: report.averaged.rmse,
            pipeline_fingerprint: fingerprint,
        });
    }
    Ok(rows)
}

/// Training loop variant for the fixed-graph ablation: the override graph
/// replaces the latent correlation layer in every forward pass.
pub fn train_with_fixed_graph(
    dataset: &Dataset,
    cfg: &TrainConfig,
    graph: &Tensor,
) -> Result<training::TrainOutcome> {
    use crate::training::{lr_at_epoch, rmsprop_step, window_loss, RmspropState};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let prep = prepare(dataset, cfg)?;
    let model_cfg = cfg.model_config(dataset.nodes());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = NetworkParams::init(model_cfg, &mut rng)?;
    let mut optimizer = RmspropState::default();
    let mut log = Vec::new();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = lr_at_epoch(cfg.learning_rate, cfg.decay_factor, cfg.decay_every, epoch);
        let mut order = prep.train_windows.clone();
        let mut shuffle_rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let mut acc: Option<Tensor> = None;
            for w in batch {
                let input = prep.normalized.columns(w.input.0, w.input.1)?;
                let target = prep.normalized.columns(w.target.0, w.target.1)?;
                let ctx = ForwardCtx {
                    flags: cfg.ablation,
                    graph_override: Some(graph),
                    frozen_basis: None,
                };
                let out = network_forward(&mut tape, &bound, &input, &ctx)?;
                let loss = window_loss(
                    &mut tape,
                    &out.forecast,
                    &target,
                    &out.backcast,
                    &input,
                    !cfg.ablation.without_backcast,
                )?;
                acc = Some(match acc {
                    None => loss,
                    Some(prev) => tape.add(&prev, &loss)?,
                });
            }
            let total = acc.expect("non-empty batch");
            let mean = tape.scale(&total, 1.0 / batch.len() as f64)?;
            let value = mean.data()[0];
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss diverged to {value} at epoch {epoch}, batch {batch_idx}"
                )));
            }
            loss_sum += value * batch.len() as f64;
            count += batch.len();
            let grads = tape.backward(&mean)?;
            for (name, bound_tensor) in bound.named_params() {
                let grad = grads.wrt(&bound_tensor)?;
                let param = params.tensor_mut(&name).expect("known name");
                rmsprop_step(&mut optimizer, &name, param, grad, lr, cfg.rho, cfg.epsilon);
            }
        }
        log.push(training::TrainLogRow {
            epoch,
            lr,
            train_loss: loss_sum / count.max(1) as f64,
            val_mae: f64::NAN,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(training::TrainOutcome {
        best: params.clone(),
        best_epoch: cfg.epochs.saturating_sub(1),
        last: params,
        log,
        optimizer,
        stats: prep.stats,
    })
}

/// Mean learned adjacency over all training windows.
pub fn export_adjacency(
    params: &NetworkParams,
    dataset: &Dataset,
    stats: &NormStats,
    train_range: &std::ops::Range<usize>,
) -> Result<Tensor> {
    let k = params.config.window;
    let n = params.config.nodes;
    let normalized = training::normalize_apply(stats, &dataset.values)?;
    let windows = training::make_windows(train_range.len(), k, 1)?;
    let mut mean = Tensor::zeros(&[n, n]);
    for w in &windows {
        let input = normalized.columns(w.input.0 + train_range.start, w.input.1 + train_range.start)?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let out = network_forward(&mut tape, &bound, &input, &ForwardCtx::default())?;
        mean.add_scaled(&out.adjacency.detached(), 1.0 / windows.len() as f64);
    }
    Ok(mean)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComponentOrder {
    LargestEigenvalue,
    SmallestEigenvalue,
}

/// One exported spectral component: the series projected onto an
/// eigenvector, and that projection after the first block's temporal cell.
#[derive(Clone, Debug)]
pub struct SpectralComponent {
    pub eigenvalue: f64,
    pub projected: Vec<f64>,
    pub post_cell: Vec<f64>,
}

/// Project the whole series onto the `k` leading eigenvectors of the mean
/// learned graph and pair each projection with its temporal-cell output.
pub fn export_spectral_components(
    params: &NetworkParams,
    dataset: &Dataset,
    stats: &NormStats,
    train_range: &std::ops::Range<usize>,
    k: usize,
    order: ComponentOrder,
) -> Result<Vec<SpectralComponent>> {
    let n = params.config.nodes;
    if k > n {
        return Err(Error::Config(format!("asked for {k} components of a {n}-node graph")));
    }
    let mean_w = export_adjacency(params, dataset, stats, train_range)?;
    let lap = spectral::normalized_laplacian_value(&mean_w)?;
    let basis = spectral::jacobi_eigh(&lap)?;

    let normalized = training::normalize_apply(stats, &dataset.values)?;
    let mut tape = Tape::new();
    let projected_all = spectral::gft(&mut tape, &basis, &normalized)?;

    // run the lifted projection through block 1's temporal cell and average
    // the channels back out
    let bound = params.bind(&mut tape);
    let lifted = tape.channel_lift(&bound.lift.weight, &bound.lift.bias, &projected_all)?;
    let cell = spe_seq_cell(
        &mut tape,
        &bound.block1.spe_seq,
        &lifted,
        false,
        params.config.tied_gate,
    )?;

    let t = dataset.len();
    let channels = params.config.channels;
    let pick = |i: usize| -> usize {
        match order {
            ComponentOrder::LargestEigenvalue => n - 1 - i,
            ComponentOrder::SmallestEigenvalue => i,
        }
    };
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let row = pick(i);
        let projected: Vec<f64> = (0..t).map(|j| projected_all.at2(row, j)).collect();
        let post_cell: Vec<f64> = (0..t)
            .map(|j| (0..channels).map(|c| cell.at3(c, row, j)).sum::<f64>() / channels as f64)
            .collect();
        out.push(SpectralComponent {
            eigenvalue: basis.values.data()[row],
            projected,
            post_cell,
        });
    }
    Ok(out)
}
