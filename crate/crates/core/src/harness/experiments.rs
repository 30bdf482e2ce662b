use std::time::Instant;

use crate::autodiff::{backward, Node, Real, Tensor};
use crate::error::{Error, Result};
use crate::eventdata::SplitPart;
use crate::harness::{log_histogram, mean_std, Benchmark, Checkpoint, MetricsRecord, RunConfig};
use crate::meta::{
    adam_update, inner_adapt, meta_step, sgd_update, thresholded_inner_adapt, update_stats, AdamState, Learner,
    MetaHyper, SnnLearner,
};
use crate::rng;
use crate::snn::{build_network, readout_and_loss, readout_spec, snn_features, snn_forward, ParamSet};

const TAG_INIT: u64 = 0x1;
const TAG_TRAIN: u64 = 0x2;
const TAG_EVAL: u64 = 0x3;
const TAG_STATS: u64 = 0x4;
const TAG_BASELINE: u64 = 0x5;
const TAG_TRANSFER: u64 = 0x6;

fn part_tag(p: SplitPart) -> u64 {
    match p {
        SplitPart::Train => 0,
        SplitPart::Val => 1,
        SplitPart::Test => 2,
    }
}

fn learner(cfg: &RunConfig) -> Result<SnnLearner> {
    let (_, burn_in, window) = cfg.window()?;
    SnnLearner::new(cfg.network.clone(), burn_in, window)
}

/// The seed-derived initialization shared by every model of a run.
pub fn initial_params<F: Real>(cfg: &RunConfig) -> Result<ParamSet<F>> {
    build_network(&cfg.network, rng::derive(cfg.seed, &[TAG_INIT]))
}

fn leaves<F: Real>(theta: &[Tensor<F>]) -> Vec<Node<F>> {
    theta.iter().map(|t| Node::leaf(t.clone(), true)).collect()
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub metrics: MetricsRecord,
}

/// Meta-trains from the seed-derived initialization on tasks of the
/// meta-training split.
pub fn run_meta_train<F: Real>(cfg: &RunConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let bench = Benchmark::from_config(cfg)?;
    let learner = learner(cfg)?;
    let init = initial_params::<F>(cfg)?;
    let mut theta = init.tensors();
    let mut adam = AdamState::new(&theta);
    let mut metrics = MetricsRecord::default();
    let (mut val_iter, mut val_acc) = (Vec::new(), Vec::new());
    for it in 0..cfg.train.meta_iterations {
        let tasks = (0..cfg.meta.tasks_per_meta_batch)
            .map(|k| bench.task(cfg, SplitPart::Train, rng::derive(cfg.seed, &[TAG_TRAIN, it as u64, k as u64])))
            .collect::<Result<Vec<_>>>()?;
        let report = meta_step(&learner, &mut theta, &tasks, &cfg.meta, &mut adam)?;
        metrics.losses.push(report.outer_loss);
        let every = cfg.train.eval_every;
        if every > 0 && ((it + 1) % every == 0 || it + 1 == cfg.train.meta_iterations) {
            let rec = evaluate(cfg, &bench, &learner, &theta, SplitPart::Val, &cfg.meta, false, 1)?;
            val_iter.push((it + 1) as f64);
            val_acc.push(rec.mean());
        }
    }
    if !val_iter.is_empty() {
        metrics.series.push(("val_iteration".into(), val_iter));
        metrics.series.push(("val_accuracy".into(), val_acc));
    }
    let params = init.with_tensors(theta)?;
    let checkpoint = Checkpoint::new(cfg.model_hash(), cfg.train.meta_iterations as u64, &params, &adam);
    metrics.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(TrainOutput { checkpoint, metrics })
}

/// `trials` x `cfg.eval.episodes_per_trial` fresh episodes from `part`:
/// adapt on the support set, score the query set. Episode seeds depend
/// only on the run seed, the split part, the trial and the episode index,
/// so every evaluation of a config sees the same episodes.
#[allow(clippy::too_many_arguments)]
fn evaluate<F: Real>(
    cfg: &RunConfig,
    bench: &Benchmark,
    learner: &SnnLearner,
    theta: &[Tensor<F>],
    part: SplitPart,
    hyper: &MetaHyper,
    thresholded: bool,
    trials: usize,
) -> Result<MetricsRecord> {
    let start = Instant::now();
    let mut rec = MetricsRecord::default();
    for trial in 0..trials {
        let (mut correct, mut total) = (0, 0);
        for e in 0..cfg.eval.episodes_per_trial {
            let seed = rng::derive(cfg.seed, &[TAG_EVAL, part_tag(part), trial as u64, e as u64]);
            let task = bench.task::<F>(cfg, part, seed)?;
            let nodes = leaves(theta);
            let adapted = if thresholded {
                thresholded_inner_adapt(learner, &nodes, &task.support, hyper, false)?.0
            } else {
                inner_adapt(learner, &nodes, &task.support, hyper, false)?
            };
            let _guard = crate::autodiff::no_grad();
            let out = learner.readout(&adapted, &task.query)?;
            correct += out.correct(&task.query.labels);
            total += task.query.len();
        }
        rec.trial_accuracy.push(correct as f64 / total as f64);
    }
    rec.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(rec)
}

fn checkpoint_theta<F: Real>(ck: &Checkpoint, cfg: &RunConfig) -> Result<Vec<Tensor<F>>> {
    let expected = initial_params::<f64>(cfg)?;
    let params = expected.with_tensors(ck.params.tensors())?;
    Ok(params.cast::<F>().tensors())
}

/// Few-shot accuracy of a checkpoint on `cfg.eval.split`, one entry per
/// trial.
pub fn run_meta_eval<F: Real>(ck: &Checkpoint, cfg: &RunConfig) -> Result<MetricsRecord> {
    cfg.validate()?;
    let bench = Benchmark::from_config(cfg)?;
    let theta = checkpoint_theta::<F>(ck, cfg)?;
    evaluate(cfg, &bench, &learner(cfg)?, &theta, cfg.eval.split.into(), &cfg.meta, cfg.eval.thresholded, cfg.eval.trials)
}

/// [`run_meta_eval`] once per inner step count.
pub fn sweep_adaptation_steps<F: Real>(ck: &Checkpoint, cfg: &RunConfig, steps: &[usize]) -> Result<Vec<MetricsRecord>> {
    if steps.is_empty() {
        return Err(Error::config("the step list is empty"));
    }
    steps
        .iter()
        .map(|&n| {
            let mut c = cfg.clone();
            c.meta.inner_steps = n;
            run_meta_eval::<F>(ck, &c)
        })
        .collect()
}

/// [`run_meta_eval`] once per freeze plan; each plan lists the layers that
/// stay fixed during adaptation.
pub fn sweep_freeze_layers<F: Real>(
    ck: &Checkpoint,
    cfg: &RunConfig,
    plans: &[Vec<String>],
) -> Result<Vec<MetricsRecord>> {
    let names = cfg.network.layer_names();
    for plan in plans {
        if let Some(bad) = plan.iter().find(|l| !names.contains(l)) {
            return Err(Error::config(format!("freeze plan names unknown layer '{bad}'")));
        }
    }
    plans
        .iter()
        .map(|plan| {
            let mut c = cfg.clone();
            c.meta.freeze_set = plan.clone();
            run_meta_eval::<F>(ck, &c)
        })
        .collect()
}

/// Output of the update-magnitude study.
pub struct UpdateStudy {
    /// Output-layer statistics per regime plus scalars `ratio`,
    /// `threshold`, `accuracy`, `thresholded_accuracy`.
    pub metrics: MetricsRecord,
    /// `(regime, lower edge, upper edge, count)` over 50 log bins in `[1e-8, 1)`.
    pub histogram: Vec<(String, f64, f64, usize)>,
}

fn readout_tensors<F: Real>(theta: &[Tensor<F>]) -> Vec<Tensor<F>> {
    theta[theta.len() - 2..].to_vec()
}

fn readout_groups() -> Vec<String> {
    vec!["out".into(), "out".into()]
}

/// Output-layer update magnitudes of one MAML inner step, one MAML outer
/// step and one step of a conventionally trained twin, plus the gated
/// inner step and the accuracy cost of gating.
pub fn run_update_stats<F: Real>(ck: &Checkpoint, cfg: &RunConfig) -> Result<UpdateStudy> {
    cfg.validate()?;
    let start = Instant::now();
    let bench = Benchmark::from_config(cfg)?;
    let learner = learner(cfg)?;
    let theta0 = checkpoint_theta::<F>(ck, cfg)?;
    let mut rec = MetricsRecord::default();
    let mut histogram = Vec::new();
    let mut record = |name: &str, before: &[Tensor<F>], after: &[Tensor<F>], rec: &mut MetricsRecord| -> Result<f64> {
        let s = update_stats(&readout_tensors(before), &readout_tensors(after), &readout_groups())?;
        for (lo, hi, c) in log_histogram(&s.magnitudes, 1e-8, 1.0, 50) {
            histogram.push((name.to_string(), lo, hi, c));
        }
        rec.update_stats.push((name.to_string(), s.overall));
        Ok(s.overall.avg)
    };

    let task = bench.task::<F>(cfg, SplitPart::Train, rng::derive(cfg.seed, &[TAG_STATS]))?;
    let nodes = leaves(&theta0);
    let inner: Vec<Tensor<F>> =
        inner_adapt(&learner, &nodes, &task.support, &cfg.meta, false)?.iter().map(Node::to_tensor).collect();
    let inner_avg = record("maml_inner", &theta0, &inner, &mut rec)?;
    let (gated, gates) = thresholded_inner_adapt(&learner, &nodes, &task.support, &cfg.meta, false)?;
    let gated: Vec<Tensor<F>> = gated.iter().map(Node::to_tensor).collect();
    record("maml_inner_thresholded", &theta0, &gated, &mut rec)?;
    rec.scalars.push(("threshold".into(), gates.first().copied().unwrap_or(0.0)));

    let mut outer = theta0.clone();
    let mut adam = ck.adam.clone();
    let tasks = (0..cfg.meta.tasks_per_meta_batch)
        .map(|k| bench.task(cfg, SplitPart::Train, rng::derive(cfg.seed, &[TAG_STATS, 1, k as u64])))
        .collect::<Result<Vec<_>>>()?;
    if adam.m.len() != outer.len() {
        adam = AdamState::new(&outer);
    }
    meta_step(&learner, &mut outer, &tasks, &cfg.meta, &mut adam)?;
    record("maml_outer", &theta0, &outer, &mut rec)?;

    let (before, after, losses) = train_non_meta::<F>(cfg, &bench, &learner)?;
    let non_meta_avg = record("non_meta", &before, &after, &mut rec)?;
    rec.losses = losses;
    rec.scalars.push((
        "ratio".into(),
        if non_meta_avg > 0.0 { inner_avg / non_meta_avg } else { f64::INFINITY },
    ));

    let part = cfg.eval.split.into();
    let plain = evaluate(cfg, &bench, &learner, &theta0, part, &cfg.meta, false, cfg.eval.trials)?;
    let gated = evaluate(cfg, &bench, &learner, &theta0, part, &cfg.meta, true, cfg.eval.trials)?;
    rec.scalars.push(("accuracy".into(), plain.mean()));
    rec.scalars.push(("thresholded_accuracy".into(), gated.mean()));
    rec.trial_accuracy = gated.trial_accuracy;
    rec.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(UpdateStudy { metrics: rec, histogram })
}

/// Plain SGD at the inner rate on a fixed set of `ways` meta-training
/// classes, from the same initialization as the meta model. Returns the
/// parameters before and after the last iteration and the loss curve.
#[allow(clippy::type_complexity)]
fn train_non_meta<F: Real>(
    cfg: &RunConfig,
    bench: &Benchmark,
    learner: &SnnLearner,
) -> Result<(Vec<Tensor<F>>, Vec<Tensor<F>>, Vec<f64>)> {
    let mut theta = initial_params::<F>(cfg)?.tensors();
    let iterations = cfg.baseline.iterations.max(1);
    let classes = &bench.split.train[..cfg.episode.ways];
    let per = cfg.baseline.samples_per_class;
    let n = bench.source().samples_per_class();
    let mut losses = Vec::with_capacity(iterations);
    let mut before = theta.clone();
    for it in 0..iterations {
        let mut r = rng::stream(cfg.seed, &[TAG_BASELINE, it as u64]);
        let mut samples = Vec::with_capacity(per * classes.len());
        for (label, &class) in classes.iter().enumerate() {
            for i in rand::seq::index::sample(&mut r, n, per).into_iter() {
                samples.push(crate::eventdata::LabeledSample {
                    frames: bench.source().load(class, i)?,
                    label,
                    index: i,
                });
            }
        }
        let batch = bench.batch::<F>(&samples)?;
        let nodes = leaves(&theta);
        let loss = learner.loss(&nodes, &batch)?;
        if !loss.item().is_finite() {
            return Err(Error::Numerical(format!("non-meta loss is {}", loss.item())));
        }
        losses.push(loss.item().f64());
        let grads = backward(&loss, &nodes, false)?.into_vec();
        let next = sgd_update(&nodes, &grads, cfg.meta.inner_lr)?;
        before = theta;
        theta = next.iter().map(Node::to_tensor).collect();
    }
    Ok((before, theta, losses))
}

/// Accuracy of a frozen-feature transfer learner for each shot count.
pub struct TransferStudy {
    /// One record per shot count `0..=max_shots`, trial accuracies inside.
    pub per_shot: Vec<MetricsRecord>,
    pub pretrain_iterations: usize,
    pub pretrain_accuracy: f64,
}

impl TransferStudy {
    pub fn mean_accuracy(&self) -> Vec<f64> {
        self.per_shot.iter().map(MetricsRecord::mean).collect()
    }

    /// Fewest shots whose mean accuracy reaches `target`.
    pub fn shots_to_reach(&self, target: f64) -> Option<usize> {
        self.mean_accuracy().iter().position(|&a| a >= target)
    }
}

/// Pre-trains on all meta-training classes, then per trial transfers the
/// frozen features to a fresh readout for test-split classes. Shots arrive
/// one at a time (one sample per class), each followed by SGD on the
/// readout; after every shot the model scores `query_shots` held-out
/// samples per class.
pub fn run_transfer_baseline<F: Real>(cfg: &RunConfig) -> Result<TransferStudy> {
    cfg.validate()?;
    let bench = Benchmark::from_config(cfg)?;
    let t = &cfg.transfer;
    let n_classes = bench.split.train.len();
    let wide = cfg.network.with_ways(n_classes);
    let (_, burn_in, window) = cfg.window()?;
    let pre_learner = SnnLearner::new(wide.clone(), burn_in, window)?;
    let mut params = build_network::<F>(&wide, rng::derive(cfg.seed, &[TAG_TRANSFER, 0]))?;
    let mut theta = params.tensors();
    let mut adam = AdamState::new(&theta);
    let n = bench.source().samples_per_class();
    let mut recent: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut pretrain_accuracy = 0.0;
    while iterations < t.pretrain_max_iterations {
        let mut r = rng::stream(cfg.seed, &[TAG_TRANSFER, 1, iterations as u64]);
        let mut samples = Vec::new();
        for (label, &class) in bench.split.train.iter().enumerate() {
            for i in rand::seq::index::sample(&mut r, n, t.pretrain_samples_per_class).into_iter() {
                samples.push(crate::eventdata::LabeledSample { frames: bench.source().load(class, i)?, label, index: i });
            }
        }
        let batch = bench.batch::<F>(&samples)?;
        let nodes = leaves(&theta);
        let out = pre_learner.readout(&nodes, &batch)?;
        if !out.loss.item().is_finite() {
            return Err(Error::Numerical(format!("pre-training loss is {}", out.loss.item())));
        }
        recent.push(out.correct(&batch.labels) as f64 / batch.len() as f64);
        if recent.len() > 10 {
            recent.remove(0);
        }
        let grads: Vec<Tensor<F>> = backward(&out.loss, &nodes, false)?.iter().map(Node::to_tensor).collect();
        adam_update(&mut theta, &grads, &mut adam, t.pretrain_lr)?;
        iterations += 1;
        pretrain_accuracy = mean_std(&recent).0;
        if recent.len() == 10 && pretrain_accuracy >= t.pretrain_target_accuracy {
            break;
        }
    }
    params = params.with_tensors(theta)?;
    let hidden: Vec<Node<F>> = params.to_nodes(false);
    let hidden = &hidden[..hidden.len() - 2];
    let head = readout_spec(&cfg.network)?;
    let n_in = head.input.polarities;

    let features = |samples: &[crate::eventdata::LabeledSample]| -> Result<(Tensor<F>, Vec<usize>)> {
        let batch = bench.batch::<F>(samples)?;
        let f = snn_features(&cfg.network, hidden, &batch.frames)?;
        let (steps, b) = (f.shape()[0], f.shape()[1]);
        Ok((f.reshaped(&[steps, b, n_in, 1, 1])?, batch.labels))
    };

    let ways = cfg.episode.ways;
    let lr = t.readout_lr.unwrap_or(cfg.meta.inner_lr);
    let mut per_shot: Vec<MetricsRecord> = (0..=t.max_shots).map(|_| MetricsRecord::default()).collect();
    for trial in 0..t.trials {
        let seed = rng::derive(cfg.seed, &[TAG_TRANSFER, 2, trial as u64]);
        let ep = bench.episode(SplitPart::Test, ways, t.max_shots, t.query_shots, seed)?;
        let (qf, ql) = features(&ep.query)?;
        let mut w = build_network::<F>(&head, rng::derive(cfg.seed, &[TAG_TRANSFER, 3, trial as u64]))?.tensors();
        for shots in 0..=t.max_shots {
            if shots > 0 {
                let shot: Vec<_> = ep.support.chunks(t.max_shots).map(|per_class| per_class[shots - 1].clone()).collect();
                let (sf, sl) = features(&shot)?;
                for _ in 0..t.readout_steps {
                    let nodes = leaves(&w);
                    let m = snn_forward(&head, &nodes, &sf, burn_in, window)?;
                    let loss = readout_and_loss(&m, &sl)?.loss;
                    let grads = backward(&loss, &nodes, false)?.into_vec();
                    w = sgd_update(&nodes, &grads, lr)?.iter().map(Node::to_tensor).collect();
                }
            }
            let _guard = crate::autodiff::no_grad();
            let nodes = leaves(&w);
            let m = snn_forward(&head, &nodes, &qf, burn_in, window)?;
            let out = readout_and_loss(&m, &ql)?;
            per_shot[shots].trial_accuracy.push(out.correct(&ql) as f64 / ql.len() as f64);
        }
    }
    Ok(TransferStudy { per_shot, pretrain_iterations: iterations, pretrain_accuracy })
}
