//! Seeded training loop, mIoU evaluation in all three head modes, and the
//! inference-overhead timing harness.
//!
//! Determinism contract: given equal `RunConfig` (seed included) and
//! datasets, two runs produce identical checkpoints and metric rows.
//! Per-image work may run on rayon workers, but gradients and metrics are
//! reduced in fixed image order, so the worker count never changes the
//! result.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::batch;
use crate::checkpoint::{Checkpoint, RngState, CHECKPOINT_VERSION};
use crate::config::{EvalMode, RunConfig};
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::head::{
    forward_full, make_context_classifier, ClassifierKind, ForwardMode, ForwardOutput, HeadConfig,
    LogitKind,
};
use crate::labels::LabelMap;
use crate::losses::{entropy_mask, total_loss};
use crate::metrics::{ConfusionCounts, MetricsRow, Split};
use crate::model::{Architecture, Model};
use crate::synth::Dataset;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Pre-extracted per-image inputs shared across epochs.
struct ImageInput {
    x: Tensor,
    labels: LabelMap,
}

fn prepare_inputs(dataset: &Dataset) -> Vec<ImageInput> {
    (0..dataset.len())
        .map(|i| ImageInput {
            x: dataset.features(i),
            labels: dataset.label_map(i),
        })
        .collect()
}

fn check_compatible(cfg: &RunConfig, train_set: &Dataset, val_set: &Dataset) -> Result<()> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("datasets must be non-empty".into()));
    }
    if train_set.n_classes != val_set.n_classes
        || train_set.d_in != val_set.d_in
        || train_set.height != val_set.height
        || train_set.width != val_set.width
    {
        return Err(Error::Config(
            "train and val datasets disagree on grid, classes or input channels".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Default)]
struct TermSums {
    ce: Option<f64>,
    ce_p: Option<f64>,
    ce_y: Option<f64>,
    kl: Option<f64>,
    total: f64,
    images: usize,
}

impl TermSums {
    fn add_term(slot: &mut Option<f64>, value: Option<f64>) {
        if let Some(v) = value {
            *slot = Some(slot.unwrap_or(0.0) + v);
        }
    }

    fn mean(v: Option<f64>, n: usize) -> Option<f64> {
        v.map(|s| s / n as f64)
    }
}

struct ImageStats {
    counts: ConfusionCounts,
    ce: Option<f64>,
    ce_p: Option<f64>,
    ce_y: Option<f64>,
    kl: Option<f64>,
    total: f64,
    entropy_mean: f64,
    cosdist_mean: f64,
}

struct TrainStep {
    grads: Vec<Tensor>,
    stats: ImageStats,
    non_finite: Option<&'static str>,
}

fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let (m, n) = (logits.rows(), logits.cols());
    (0..m)
        .map(|i| {
            let row = &logits.data()[i * n..(i + 1) * n];
            let mut best = 0;
            for j in 1..n {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn mean_valid_entropy(p_y: &Tensor, labels: &LabelMap) -> f64 {
    let h = entropy_mask(p_y);
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, &v) in h.values().iter().enumerate() {
        if labels.is_valid(i) {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean over classes of `1 - cos(A_p[k], C[k])`.
fn mean_cosine_distance(a_p: &Tensor, c: &Tensor) -> f64 {
    let (n, d) = (c.rows(), c.cols());
    let mut sum = 0.0;
    for k in 0..n {
        let a = &a_p.data()[k * d..(k + 1) * d];
        let b = &c.data()[k * d..(k + 1) * d];
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for j in 0..d {
            dot += a[j] * b[j];
            na += a[j] * a[j];
            nb += b[j] * b[j];
        }
        let denom = (na.sqrt() * nb.sqrt()).max(1e-300);
        sum += 1.0 - dot / denom;
    }
    sum / n as f64
}

fn predictions_for_mode<'t>(out: &ForwardOutput<'t>, mode: EvalMode) -> Tensor {
    match mode {
        EvalMode::Estimated => out.p_p.value(),
        EvalMode::Original => out.p.value(),
        EvalMode::Oracle => out
            .p_y
            .expect("oracle eval mode requires labels in the forward pass")
            .value(),
    }
}

fn image_stats(
    out: &ForwardOutput<'_>,
    labels: &LabelMap,
    classifier: &Tensor,
    cfg: &RunConfig,
    loss: Option<(&crate::losses::LossTerms<'_>,)>,
) -> ImageStats {
    let mut counts = ConfusionCounts::new(labels.n_classes());
    let preds = argmax_rows(&predictions_for_mode(out, cfg.eval_mode));
    counts.update(&preds, labels);
    let entropy_mean = out
        .p_y
        .map(|p_y| mean_valid_entropy(&p_y.value(), labels))
        .unwrap_or(0.0);
    let cosdist_mean = mean_cosine_distance(&out.a_p.value(), classifier);
    match loss {
        Some((terms,)) => ImageStats {
            counts,
            ce: terms.ce,
            ce_p: terms.ce_p,
            ce_y: terms.ce_y,
            kl: terms.kl,
            total: terms.total_value(),
            entropy_mean,
            cosdist_mean,
        },
        None => ImageStats {
            counts,
            ce: None,
            ce_p: None,
            ce_y: None,
            kl: None,
            total: 0.0,
            entropy_mean,
            cosdist_mean,
        },
    }
}

fn train_image(model: &Model, cfg: &RunConfig, head_cfg: &HeadConfig, input: &ImageInput, h: usize, w: usize) -> Result<TrainStep> {
    let tape = Tape::new();
    let mv = model.bind(&tape);
    let x = tape.constant(input.x.clone());
    let f = encode(x, &mv.encoder, h, w)?;
    let out = forward_full(
        &f,
        ForwardMode::Train(&input.labels),
        mv.classifier,
        &mv.theta_y,
        &mv.theta_p,
        head_cfg,
    )?;
    let terms = total_loss(&out, &input.labels, &cfg.loss)?;

    let non_finite = [
        ("ce", terms.ce),
        ("ce_p", terms.ce_p),
        ("ce_y", terms.ce_y),
        ("kl", terms.kl),
        ("total", Some(terms.total_value())),
    ]
    .into_iter()
    .find(|(_, v)| v.is_some_and(|v| !v.is_finite()))
    .map(|(name, _)| name);

    let grads = if non_finite.is_none() {
        let grads = tape.backward(terms.total)?;
        mv.leaves().iter().map(|&leaf| grads.wrt(leaf)).collect()
    } else {
        Vec::new()
    };

    let stats = image_stats(&out, &input.labels, &model.classifier.c, cfg, Some((&terms,)));
    Ok(TrainStep {
        grads,
        stats,
        non_finite,
    })
}

fn accumulate_stats(
    counts: &mut ConfusionCounts,
    sums: &mut TermSums,
    entropy: &mut (f64, usize),
    cosdist: &mut (f64, usize),
    stats: &ImageStats,
) {
    counts.merge(&stats.counts);
    TermSums::add_term(&mut sums.ce, stats.ce);
    TermSums::add_term(&mut sums.ce_p, stats.ce_p);
    TermSums::add_term(&mut sums.ce_y, stats.ce_y);
    TermSums::add_term(&mut sums.kl, stats.kl);
    sums.total += stats.total;
    sums.images += 1;
    entropy.0 += stats.entropy_mean;
    entropy.1 += 1;
    cosdist.0 += stats.cosdist_mean;
    cosdist.1 += 1;
}

fn finish_row(
    epoch: usize,
    split: Split,
    counts: &ConfusionCounts,
    sums: &TermSums,
    entropy: (f64, usize),
    cosdist: (f64, usize),
    with_loss: bool,
) -> MetricsRow {
    let (iou, miou) = counts.iou();
    let n = sums.images.max(1);
    MetricsRow {
        epoch,
        split,
        iou,
        miou,
        loss_ce: if with_loss { TermSums::mean(sums.ce, n) } else { None },
        loss_ce_p: if with_loss { TermSums::mean(sums.ce_p, n) } else { None },
        loss_ce_y: if with_loss { TermSums::mean(sums.ce_y, n) } else { None },
        loss_kl: if with_loss { TermSums::mean(sums.kl, n) } else { None },
        loss_total: if with_loss {
            Some(sums.total / n as f64)
        } else {
            None
        },
        mean_entropy_py: entropy.0 / entropy.1.max(1) as f64,
        mean_cosdist_ap_c: cosdist.0 / cosdist.1.max(1) as f64,
    }
}

/// SGD with momentum over all trainable parameters, deterministic given
/// the seed. Returns the final checkpoint and one train + one val metrics
/// row per epoch (plus an epoch-0 val row).
pub fn train(
    cfg: &RunConfig,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<(Checkpoint, Vec<MetricsRow>)> {
    check_compatible(cfg, train_set, val_set)?;
    let head_cfg = cfg.head_config();
    let arch = Architecture::resolve(cfg, train_set.n_classes, train_set.d_in);
    let mut model = Model::init(&arch, cfg.seed);

    // Stream 1 of the run seed drives epoch shuffles; stream 0 seeded the
    // parameters inside Model::init.
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let train_inputs = prepare_inputs(train_set);
    let (h, w) = (train_set.height, train_set.width);

    let mut velocity: Vec<Tensor> = model
        .param_values()
        .iter()
        .map(|t| Tensor::zeros(t.shape()))
        .collect();

    let mut metrics = Vec::new();
    metrics.push(evaluate_model(&model, cfg, val_set, cfg.eval_mode, 0, Split::Val)?);

    let mut order: Vec<usize> = (0..train_inputs.len()).collect();
    for epoch in 1..=cfg.epochs {
        // Fisher-Yates with our own loop, so the permutation depends only
        // on the ChaCha stream, not on rand's shuffle internals.
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut counts = ConfusionCounts::new(train_set.n_classes);
        let mut sums = TermSums::default();
        let mut entropy = (0.0, 0usize);
        let mut cosdist = (0.0, 0usize);

        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&ImageInput> = chunk.iter().map(|&i| &train_inputs[i]).collect();
            let steps = batch::map_ordered(&items, |input| {
                train_image(&model, cfg, &head_cfg, input, h, w)
            });

            let mut grad_sum: Option<Vec<Tensor>> = None;
            for step in steps {
                let step = step?;
                if let Some(term) = step.non_finite {
                    return Err(Error::Diverged {
                        term,
                        epoch,
                        batch: batch_index,
                    });
                }
                accumulate_stats(&mut counts, &mut sums, &mut entropy, &mut cosdist, &step.stats);
                grad_sum = Some(match grad_sum {
                    None => step.grads,
                    Some(mut acc) => {
                        for (a, g) in acc.iter_mut().zip(&step.grads) {
                            let data = crate::tensor::add_slices(a.data(), g.data());
                            *a = Tensor::new(a.shape().to_vec(), data)?;
                        }
                        acc
                    }
                });
            }

            let grads = grad_sum.expect("non-empty batch");
            let inv = 1.0 / chunk.len() as f64;
            let params = model.param_values();
            let mut updated = Vec::with_capacity(params.len());
            for ((param, v), g) in params.iter().zip(&mut velocity).zip(&grads) {
                let vel: Vec<f64> = v
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &g)| cfg.momentum * v + g * inv)
                    .collect();
                let next: Vec<f64> = param
                    .data()
                    .iter()
                    .zip(&vel)
                    .map(|(&p, &v)| p - cfg.learning_rate * v)
                    .collect();
                *v = Tensor::new(v.shape().to_vec(), vel)?;
                updated.push(Tensor::new(param.shape().to_vec(), next)?.requiring_grad());
            }
            model.set_params(updated);
        }

        metrics.push(finish_row(
            epoch,
            Split::Train,
            &counts,
            &sums,
            entropy,
            cosdist,
            true,
        ));
        metrics.push(evaluate_model(&model, cfg, val_set, cfg.eval_mode, epoch, Split::Val)?);
    }

    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        config_text: cfg.to_canonical_text(),
        epoch: cfg.epochs,
        rng: RngState::capture(&shuffle_rng),
        params: model
            .named_params()
            .into_iter()
            .map(|(name, t)| (name.to_string(), t.clone()))
            .collect(),
    };
    Ok((checkpoint, metrics))
}

/// One evaluation forward: deployment semantics for `p`/`p_p` (labels
/// never reach the estimated path), with the oracle path computed
/// alongside since labels are available here.
fn eval_forward<'t>(
    tape: &'t Tape,
    model: &Model,
    head_cfg: &HeadConfig,
    input: &ImageInput,
    h: usize,
    w: usize,
) -> Result<ForwardOutput<'t>> {
    let mv = model.bind(tape);
    let x = tape.constant(input.x.clone());
    let f = encode(x, &mv.encoder, h, w)?;
    let mut out = forward_full(
        &f,
        ForwardMode::Inference,
        mv.classifier,
        &mv.theta_y,
        &mv.theta_p,
        head_cfg,
    )?;
    // Oracle side for diagnostics and oracle-mode predictions.
    let c_y = crate::head::masked_prototypes(&f, &input.labels, mv.classifier)?;
    let a_y = make_context_classifier(
        ClassifierKind::Oracle,
        c_y,
        mv.classifier,
        &mv.theta_y,
        head_cfg.formation_y,
        head_cfg.tau,
    )?;
    let p_y = match head_cfg.context_logits {
        LogitKind::Cos => crate::head::cosine_logits(&f, &a_y)?,
        LogitKind::Dot => f.var().matmul_nt(a_y.weights())?,
    };
    out.p_y = Some(p_y);
    out.a_y = Some(a_y.weights());
    Ok(out)
}

/// Argmax mIoU of `model` on `dataset` under the requested head mode,
/// with per-class IoU, the run's loss terms and the head diagnostics.
pub fn evaluate_model(
    model: &Model,
    cfg: &RunConfig,
    dataset: &Dataset,
    mode: EvalMode,
    epoch: usize,
    split: Split,
) -> Result<MetricsRow> {
    if dataset.n_classes != model.n_classes() || dataset.d_in != model.d_in() {
        return Err(Error::Config(
            "dataset dimensions do not match the checkpointed model".into(),
        ));
    }
    let head_cfg = cfg.head_config();
    let inputs = prepare_inputs(dataset);
    let (height, width) = (dataset.height, dataset.width);
    let eval_cfg = RunConfig {
        eval_mode: mode,
        ..cfg.clone()
    };

    let results = batch::map_ordered(&inputs, |input| -> Result<ImageStats> {
        let tape = Tape::new();
        let out = eval_forward(&tape, model, &head_cfg, input, height, width)?;
        let terms = total_loss(&out, &input.labels, &cfg.loss)?;
        Ok(image_stats(
            &out,
            &input.labels,
            &model.classifier.c,
            &eval_cfg,
            Some((&terms,)),
        ))
    });

    let mut counts = ConfusionCounts::new(dataset.n_classes);
    let mut sums = TermSums::default();
    let mut entropy = (0.0, 0usize);
    let mut cosdist = (0.0, 0usize);
    for stats in results {
        accumulate_stats(&mut counts, &mut sums, &mut entropy, &mut cosdist, &stats?);
    }
    Ok(finish_row(epoch, split, &counts, &sums, entropy, cosdist, true))
}

/// Evaluates a stored checkpoint.
pub fn evaluate(ckpt: &Checkpoint, dataset: &Dataset, mode: EvalMode) -> Result<MetricsRow> {
    let cfg = ckpt.run_config()?;
    let model = ckpt.model()?;
    evaluate_model(&model, &cfg, dataset, mode, ckpt.epoch, Split::Val)
}

/// Timing comparison between the dot-product-only forward and the full
/// context-aware inference path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingReport {
    pub t_original: Duration,
    pub t_cac: Duration,
    /// `(t_cac - t_original) / t_original`
    pub relative_delta: f64,
}

impl TimingReport {
    /// Relative delta in percent, at the reporting precision of 0.1%.
    pub fn delta_percent(&self) -> f64 {
        (self.relative_delta * 1000.0).round() / 10.0
    }
}

impl std::fmt::Display for TimingReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "original {:.3} ms, context-aware {:.3} ms, relative delta {:+.1}%",
            self.t_original.as_secs_f64() * 1e3,
            self.t_cac.as_secs_f64() * 1e3,
            self.relative_delta * 100.0
        )
    }
}

fn dot_only_pass(model: &Model, inputs: &[ImageInput], h: usize, w: usize) -> Result<usize> {
    let mut sink = 0usize;
    for input in inputs {
        let tape = Tape::new();
        let mv = model.bind(&tape);
        let x = tape.constant(input.x.clone());
        let f = encode(x, &mv.encoder, h, w)?;
        let p = crate::head::dot_logits(&f, mv.classifier)?;
        sink = sink.wrapping_add(argmax_rows(&p.value())[0]);
    }
    Ok(sink)
}

fn cac_pass(
    model: &Model,
    head_cfg: &HeadConfig,
    inputs: &[ImageInput],
    h: usize,
    w: usize,
) -> Result<usize> {
    let mut sink = 0usize;
    for input in inputs {
        let tape = Tape::new();
        let mv = model.bind(&tape);
        let x = tape.constant(input.x.clone());
        let f = encode(x, &mv.encoder, h, w)?;
        let out = forward_full(
            &f,
            ForwardMode::Inference,
            mv.classifier,
            &mv.theta_y,
            &mv.theta_p,
            head_cfg,
        )?;
        sink = sink.wrapping_add(argmax_rows(&out.p_p.value())[0]);
    }
    Ok(sink)
}

fn median(mut samples: Vec<Duration>) -> Duration {
    samples.sort_unstable();
    samples[samples.len() / 2]
}

/// Median wall-time over `repeats` full-dataset passes of each path.
/// Requires a warmed-up process (one untimed pass of each path runs
/// first) and `repeats >= 20`.
pub fn time_overhead(ckpt: &Checkpoint, dataset: &Dataset, repeats: usize) -> Result<TimingReport> {
    if repeats < 20 {
        return Err(Error::Config(format!(
            "timing needs at least 20 repeats, got {repeats}"
        )));
    }
    let model = ckpt.model()?;
    let cfg = ckpt.run_config()?;
    let head_cfg = cfg.head_config();
    let inputs = prepare_inputs(dataset);
    let (h, w) = (dataset.height, dataset.width);

    std::hint::black_box(dot_only_pass(&model, &inputs, h, w)?);
    std::hint::black_box(cac_pass(&model, &head_cfg, &inputs, h, w)?);

    let mut t_orig = Vec::with_capacity(repeats);
    let mut t_cac = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        std::hint::black_box(dot_only_pass(&model, &inputs, h, w)?);
        t_orig.push(start.elapsed());

        let start = Instant::now();
        std::hint::black_box(cac_pass(&model, &head_cfg, &inputs, h, w)?);
        t_cac.push(start.elapsed());
    }

    let t_original = median(t_orig);
    let t_cac = median(t_cac);
    let relative_delta =
        (t_cac.as_secs_f64() - t_original.as_secs_f64()) / t_original.as_secs_f64();
    Ok(TimingReport {
        t_original,
        t_cac,
        relative_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::KlVariant;
    use crate::synth::{generate, SceneSpec};

    fn tiny_spec() -> SceneSpec {
        SceneSpec {
            n_classes: 4,
            n_scene_types: 2,
            d_in: 6,
            height: 6,
            width: 6,
            ..SceneSpec::default()
        }
    }

    fn tiny_cfg(epochs: usize) -> RunConfig {
        RunConfig {
            epochs,
            d: 16,
            batch_size: 4,
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_checkpoint_and_epoch0_row() {
        let spec = tiny_spec();
        let train_set = generate(&spec, 8).unwrap();
        let val_set = generate(&SceneSpec { seed: 1, ..spec }, 4).unwrap();
        let cfg = tiny_cfg(0);
        let (ckpt, metrics) = train(&cfg, &train_set, &val_set).unwrap();
        assert_eq!(ckpt.epoch, 0);
        assert_eq!(metrics.len(), 1);
        assert_eq!(metrics[0].epoch, 0);
        assert_eq!(metrics[0].split, Split::Val);

        let arch = Architecture::resolve(&cfg, train_set.n_classes, train_set.d_in);
        let fresh = Model::init(&arch, cfg.seed);
        assert_eq!(ckpt.model().unwrap(), fresh);
    }

    #[test]
    fn training_is_deterministic() {
        let spec = tiny_spec();
        let train_set = generate(&spec, 12).unwrap();
        let val_set = generate(&SceneSpec { seed: 1, ..spec }, 6).unwrap();
        let cfg = tiny_cfg(2);
        let (ckpt_a, rows_a) = train(&cfg, &train_set, &val_set).unwrap();
        let (ckpt_b, rows_b) = train(&cfg, &train_set, &val_set).unwrap();
        assert_eq!(ckpt_a, ckpt_b);
        assert_eq!(rows_a, rows_b);
    }

    #[test]
    fn perfect_predictions_reach_miou_one() {
        let labels = LabelMap::new(vec![0, 1], 2).unwrap();
        let mut counts = ConfusionCounts::new(2);
        counts.update(&[0, 1], &labels);
        assert_eq!(counts.iou().1, 1.0);
    }

    #[test]
    fn kl_only_training_never_moves_theta_y() {
        let spec = tiny_spec();
        let train_set = generate(&spec, 8).unwrap();
        let val_set = generate(&SceneSpec { seed: 1, ..spec }, 4).unwrap();
        let mut cfg = tiny_cfg(1);
        cfg.loss.ce = false;
        cfg.loss.ce_p = false;
        cfg.loss.ce_y = false;
        cfg.loss.kl_variant = KlVariant::ClasswiseEntropy;

        let arch = Architecture::resolve(&cfg, train_set.n_classes, train_set.d_in);
        let initial = Model::init(&arch, cfg.seed);
        let (ckpt, _) = train(&cfg, &train_set, &val_set).unwrap();
        let trained = ckpt.model().unwrap();
        assert_eq!(trained.theta_y, initial.theta_y, "stop-gradient breached");
        assert_ne!(trained.theta_p, initial.theta_p, "student never learned");
    }

    #[test]
    fn evaluation_of_loaded_checkpoint_matches_in_memory() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_spec();
        let train_set = generate(&spec, 8).unwrap();
        let val_set = generate(&SceneSpec { seed: 1, ..spec }, 4).unwrap();
        let cfg = tiny_cfg(1);
        let (ckpt, _) = train(&cfg, &train_set, &val_set).unwrap();

        let path = dir.path().join("m.cac");
        crate::checkpoint::save_checkpoint(&path, &ckpt).unwrap();
        let loaded = crate::checkpoint::load_checkpoint(&path).unwrap();

        for mode in [EvalMode::Estimated, EvalMode::Oracle, EvalMode::Original] {
            let a = evaluate(&ckpt, &val_set, mode).unwrap();
            let b = evaluate(&loaded, &val_set, mode).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn timing_rejects_too_few_repeats_and_orders_paths() {
        let spec = tiny_spec();
        let train_set = generate(&spec, 4).unwrap();
        let val_set = generate(&SceneSpec { seed: 1, ..spec }, 2).unwrap();
        let cfg = tiny_cfg(0);
        let (ckpt, _) = train(&cfg, &train_set, &val_set).unwrap();

        assert!(matches!(
            time_overhead(&ckpt, &val_set, 5),
            Err(Error::Config(_))
        ));
        let report = time_overhead(&ckpt, &val_set, 20).unwrap();
        assert!(report.t_cac >= report.t_original, "{report}");
    }
}
