//! End-to-end acceptance checks. Runs every criterion, prints one line per
//! criterion and exits non-zero if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikemeta::autodiff::{backward, Node, Tensor};
use spikemeta::eventdata::{
    compose_double, make_meta_splits, rasterize, read_events, synth_class, write_events, Event, EventStream,
    SynthParams,
};
use spikemeta::harness::{
    initial_params, run_meta_eval, run_meta_train, run_transfer_baseline, run_update_stats, sweep_adaptation_steps,
    sweep_freeze_layers, Benchmark, Checkpoint, MetricsRecord, RunConfig,
};
use spikemeta::meta::{
    inner_adapt, meta_gradient, outer_loss, thresholded_inner_adapt, AdamState, Learner, MetaHyper, MetaMode,
    SnnLearner, Task,
};
use spikemeta::snn::{
    lif_step, three_factor_grad, InputGeometry, LabeledBatch, LayerSpec, LifState, NetworkSpec, NeuronConfig,
    SpikeForward, Synapse,
};
use spikemeta::{eventdata::SplitPart, Result};

use common::central_diff;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Worst relative error over components where either value exceeds
/// `floor`, and worst absolute error elsewhere.
fn grad_errors(analytic: &[f64], numeric: &[f64], floor: f64) -> (f64, f64, usize) {
    let (mut rel, mut abs, mut checked) = (0.0f64, 0.0f64, 0);
    for (&a, &n) in analytic.iter().zip(numeric) {
        if a.abs().max(n.abs()) > floor {
            rel = rel.max((a - n).abs() / a.abs().max(n.abs()));
            checked += 1;
        } else {
            abs = abs.max((a - n).abs());
        }
    }
    (rel, abs, checked)
}

// ---------------------------------------------------------------------------
// Miniature network shared by the gradient checks.

const MINI_T: usize = 20;
// Burn-in steps run without recording, so the truncated gradient would not
// be the derivative of the full loss; the checks use the whole sequence.
const MINI_BURN_IN: usize = 0;

fn mini_spec() -> NetworkSpec {
    let neuron = NeuronConfig { u_th: 0.05, spike_forward: SpikeForward::Smooth, ..NeuronConfig::default() };
    NetworkSpec {
        input: InputGeometry { width: 4, height: 4, polarities: 2 },
        neuron,
        layers: vec![
            LayerSpec::Conv { name: "conv".into(), channels: 2, kernel: 3, stride: 1, padding: 1, neuron: None },
            LayerSpec::Dense { name: "out".into(), outputs: 3, neuron: None },
        ],
    }
}

fn mini_learner() -> SnnLearner {
    SnnLearner::new(mini_spec(), MINI_BURN_IN, MINI_T - MINI_BURN_IN).unwrap()
}

fn mini_batch(seed: u64, labels: &[usize]) -> LabeledBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<Tensor<f64>> = labels
        .iter()
        .map(|_| {
            let v: Vec<f64> = (0..MINI_T * 2 * 16).map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 }).collect();
            Tensor::new(vec![MINI_T, 2, 4, 4], v).unwrap()
        })
        .collect();
    let pairs: Vec<(&Tensor<f64>, usize)> = frames.iter().zip(labels.iter().copied()).collect();
    LabeledBatch::from_samples(&pairs).unwrap()
}

fn mini_theta(seed: u64) -> Vec<Tensor<f64>> {
    spikemeta::snn::build_network::<f64>(&mini_spec(), seed).unwrap().tensors()
}

fn flatten(ts: &[Tensor<f64>]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn unflatten(like: &[Tensor<f64>], flat: &[f64]) -> Vec<Node<f64>> {
    let mut at = 0;
    like.iter()
        .map(|t| {
            let v = flat[at..at + t.len()].to_vec();
            at += t.len();
            Node::leaf(Tensor::new(t.shape().to_vec(), v).unwrap(), true)
        })
        .collect()
}

fn c1_gradients() -> Outcome {
    let learner = mini_learner();
    let batch = mini_batch(11, &[0, 1, 2, 1]);
    let theta = mini_theta(5);
    let n_params: usize = theta.iter().map(Tensor::len).sum();
    let nodes = unflatten(&theta, &flatten(&theta));
    let loss = learner.loss(&nodes, &batch).unwrap();
    let analytic = flatten(&backward(&loss, &nodes, false).unwrap().iter().map(Node::to_tensor).collect::<Vec<_>>());
    let f = |x: &[f64]| learner.loss(&unflatten(&theta, x), &batch).unwrap().item();
    let numeric = central_diff(f, &flatten(&theta), 1e-5);
    let (rel, abs, checked) = grad_errors(&analytic, &numeric, 1e-8);
    outcome(
        rel < 1e-4 && n_params <= 500,
        format!("{n_params} params, {checked} checked, max rel err {rel:.2e}, max abs err elsewhere {abs:.1e}"),
    )
}

/// Scalar model `L(theta; t) = (theta - t)^2 / 2`.
struct Quadratic;

impl Learner<f64> for Quadratic {
    type Batch = f64;

    fn loss(&self, params: &[Node<f64>], target: &f64) -> Result<Node<f64>> {
        let d = params[0].offset(-target);
        Ok(d.mul(&d)?.scale(0.5))
    }

    fn groups(&self) -> Vec<String> {
        vec!["theta".into()]
    }
}

fn c2_second_order() -> Outcome {
    let learner = mini_learner();
    let hyper = MetaHyper { inner_lr: 0.5, inner_steps: 1, mode: MetaMode::SecondOrder, ..MetaHyper::default() };
    let tasks = vec![Task { support: mini_batch(21, &[0, 1, 2]), query: mini_batch(22, &[2, 0, 1]) }];
    let theta = mini_theta(6);
    let (_, grads) = meta_gradient(&learner, &theta, &tasks, &hyper).unwrap();
    let analytic = flatten(&grads);
    let f = |x: &[f64]| outer_loss(&learner, &unflatten(&theta, x), &tasks, &hyper).unwrap().item();
    let numeric = central_diff(f, &flatten(&theta), 1e-5);
    let (rel, _, checked) = grad_errors(&analytic, &numeric, 1e-8);

    let mut toy_err = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (theta0, t_trn, t_val, alpha) =
            (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.01..0.9));
        let hyper = MetaHyper { inner_lr: alpha, ..hyper.clone() };
        let (_, g) =
            meta_gradient(&Quadratic, &[Tensor::scalar(theta0)], &[Task { support: t_trn, query: t_val }], &hyper)
                .unwrap();
        let theta1 = theta0 - alpha * (theta0 - t_trn);
        let closed = (1.0 - alpha) * (theta1 - t_val);
        toy_err = toy_err.max((g[0].data()[0] - closed).abs());
    }
    outcome(
        rel < 1e-3 && toy_err < 1e-10,
        format!("SNN: {checked} components, max rel err {rel:.2e}; toy: max abs err {toy_err:.1e}"),
    )
}

fn c3_three_factor() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (k, n) = (rng.gen_range(1..7), rng.gen_range(1..9));
        let cfg = NeuronConfig { u_th: rng.gen_range(0.1..1.5), surrogate_beta: rng.gen_range(1.0..20.0), ..Default::default() };
        let rand_t = |rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64| {
            let len = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
        };
        let w = Node::leaf(rand_t(&mut rng, &[k, n], -1.0, 1.0), true);
        let b = Node::leaf(rand_t(&mut rng, &[k], -0.5, 0.5), true);
        let p = rand_t(&mut rng, &[1, n], 0.0, 1.0);
        let c = rand_t(&mut rng, &[1, k], -1.0, 1.0);
        let state = LifState { p: Node::constant(p.clone()), q: Node::zeros(&[1, n]), r: Node::zeros(&[1, k]) };
        let (_, s, u) = lif_step(&state, &Node::zeros(&[1, n]), &w, &b, Synapse::Dense, &cfg).unwrap();
        let loss = s.mul(&Node::constant(c.clone())).unwrap().sum();
        let auto = backward(&loss, std::slice::from_ref(&w), false).unwrap()[0].to_tensor();
        let rule = three_factor_grad(
            &c.reshaped(&[k]).unwrap(),
            &u.to_tensor().reshaped(&[k]).unwrap(),
            &p.reshaped(&[n]).unwrap(),
            &cfg,
        )
        .unwrap();
        for (a, r) in auto.data().iter().zip(rule.data()) {
            worst = worst.max((a - r).abs());
        }
    }
    outcome(worst < 1e-10, format!("100 instances, max abs diff {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// Benchmark-scale criteria share one meta-trained checkpoint.

struct Trained {
    cfg: RunConfig,
    ck: Checkpoint,
    test: MetricsRecord,
}

fn train_and_test(cfg: &RunConfig) -> (Checkpoint, MetricsRecord) {
    let out = run_meta_train::<f64>(cfg).unwrap();
    let test = run_meta_eval::<f64>(&out.checkpoint, cfg).unwrap();
    (out.checkpoint, test)
}

fn c4_few_shot() -> (Outcome, Trained) {
    let start = Instant::now();
    let cfg = RunConfig::desk();
    let (ck, test) = train_and_test(&cfg);
    let init = initial_params::<f64>(&cfg).unwrap();
    let random = Checkpoint::new(cfg.model_hash(), 0, &init, &AdamState::new(&init.tensors()));
    let baseline = run_meta_eval::<f64>(&random, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let o = outcome(
        test.mean() >= 0.90 && baseline.mean() <= 0.60 && secs <= 900.0,
        format!(
            "meta-trained {:.1}% +- {:.1}% vs random init {:.1}% over {} trials (chance 20%), {secs:.0}s",
            100.0 * test.mean(),
            100.0 * test.std(),
            100.0 * baseline.mean(),
            test.trial_accuracy.len()
        ),
    );
    (o, Trained { cfg, ck, test })
}

fn c5_maml_vs_fomaml(base: &Trained) -> Outcome {
    let (mut maml, mut fomaml) = (Vec::new(), Vec::new());
    for seed in 0..5u64 {
        let mut cfg = base.cfg.clone();
        cfg.seed = seed;
        let second = if seed == base.cfg.seed { base.test.mean() } else { train_and_test(&cfg).1.mean() };
        let first = train_and_test(&cfg.with_mode(MetaMode::FirstOrder)).1.mean();
        maml.push(second);
        fomaml.push(first);
    }
    let (m, f) = (spikemeta::harness::mean_std(&maml).0, spikemeta::harness::mean_std(&fomaml).0);
    let pct = |v: &[f64]| v.iter().map(|a| format!("{:.1}", 100.0 * a)).collect::<Vec<_>>().join(" ");
    outcome(m >= f, format!("MAML {:.2}% [{}] vs FOMAML {:.2}% [{}]", 100.0 * m, pct(&maml), 100.0 * f, pct(&fomaml)))
}

fn c6_steps(t: &Trained) -> Outcome {
    let recs = sweep_adaptation_steps::<f64>(&t.ck, &t.cfg, &[0, 1, 2, 5]).unwrap();
    let acc: Vec<f64> = recs.iter().map(MetricsRecord::mean).collect();
    let chance = 1.0 / t.cfg.episode.ways as f64;
    let zero_ok = (acc[0] - chance).abs() <= 0.10;
    let monotone = acc[1] <= acc[2] + 0.01 && acc[2] <= acc[3] + 0.01;
    outcome(
        zero_ok && monotone,
        format!(
            "steps 0/1/2/5: {:.1}% / {:.1}% / {:.1}% / {:.1}%",
            100.0 * acc[0],
            100.0 * acc[1],
            100.0 * acc[2],
            100.0 * acc[3]
        ),
    )
}

fn c7_freeze(t: &Trained) -> Outcome {
    let plans = vec![Vec::new(), vec!["conv1".to_string(), "conv2".to_string()]];
    let recs = sweep_freeze_layers::<f64>(&t.ck, &t.cfg, &plans).unwrap();
    let (full, frozen) = (recs[0].mean(), recs[1].mean());
    outcome(
        full - frozen <= 0.05,
        format!("full adaptation {:.1}%, conv layers frozen {:.1}%", 100.0 * full, 100.0 * frozen),
    )
}

fn c8_update_magnitudes(t: &Trained) -> (Outcome, MetricsRecord) {
    let study = run_update_stats::<f64>(&t.ck, &t.cfg).unwrap();
    let m = study.metrics;
    let inner = m.stats("maml_inner").unwrap().avg;
    let non_meta = m.stats("non_meta").unwrap().avg;
    let o = outcome(
        inner > non_meta,
        format!(
            "output-layer mean |dw|: inner {inner:.2e}, non-meta {non_meta:.2e}, ratio {:.2}",
            m.scalar("ratio").unwrap()
        ),
    );
    (o, m)
}

fn c9_thresholded(t: &Trained, stats: &MetricsRecord) -> Outcome {
    let cfg = &t.cfg;
    let bench = Benchmark::from_config(cfg).unwrap();
    let (_, burn_in, window) = cfg.window().unwrap();
    let learner = SnnLearner::new(cfg.network.clone(), burn_in, window).unwrap();
    let theta0 = initial_params::<f64>(cfg).unwrap().with_tensors(t.ck.params.tensors()).unwrap().tensors();
    let (mut below, mut gated_nz, mut plain_nz, mut checked) = (0usize, 0usize, 0usize, 0usize);
    let mut theta_min = f64::INFINITY;
    for k in 0..4u64 {
        let task = bench.task::<f64>(cfg, SplitPart::Test, 900 + k).unwrap();
        let nodes: Vec<Node<f64>> = theta0.iter().map(|x| Node::leaf(x.clone(), true)).collect();
        let plain = inner_adapt(&learner, &nodes, &task.support, &cfg.meta, false).unwrap();
        let (gated, gates) = thresholded_inner_adapt(&learner, &nodes, &task.support, &cfg.meta, false).unwrap();
        let theta_u = gates[0];
        theta_min = theta_min.min(theta_u);
        for ((p0, a), g) in theta0.iter().zip(&plain).zip(&gated) {
            for ((&x0, &xa), &xg) in p0.data().iter().zip(a.value()).zip(g.value()) {
                checked += 1;
                if xa != x0 {
                    plain_nz += 1;
                }
                if xg != x0 {
                    gated_nz += 1;
                    // Gated steps equal ungated ones where applied; the slack
                    // covers rounding in theta - lr * g.
                    if xg != xa || (xa - x0).abs() < theta_u * (1.0 - 1e-9) {
                        below += 1;
                    }
                }
            }
        }
    }
    let (acc, gated_acc) = (stats.scalar("accuracy").unwrap(), stats.scalar("thresholded_accuracy").unwrap());
    outcome(
        below == 0 && gated_nz < plain_nz && acc - gated_acc <= 0.05,
        format!(
            "{below} applied updates below the gate (min gate {theta_min:.2e}), nonzero {gated_nz} gated vs {plain_nz} ungated of {checked}, accuracy {:.1}% -> {:.1}%",
            100.0 * acc,
            100.0 * gated_acc
        ),
    )
}

fn c10_transfer(t: &Trained) -> Outcome {
    let study = run_transfer_baseline::<f64>(&t.cfg).unwrap();
    let target = t.test.mean();
    let curve: Vec<String> = study.mean_accuracy().iter().map(|a| format!("{:.1}", 100.0 * a)).collect();
    let shots = study.shots_to_reach(target);
    let parity = match shots {
        Some(s) => format!("{s} shots"),
        None => format!("more than {} shots", t.cfg.transfer.max_shots),
    };
    outcome(
        !matches!(shots, Some(0 | 1)),
        format!("MAML 1-shot {:.1}%, transfer by shots [{}], parity after {parity}", 100.0 * target, curve.join(" ")),
    )
}

// ---------------------------------------------------------------------------

fn random_stream(seed: u64, width: u16, height: u16, n: usize) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let duration = 100_000;
    let mut events: Vec<Event> = (0..n)
        .map(|_| Event {
            t: rng.gen_range(0..duration),
            x: rng.gen_range(0..width),
            y: rng.gen_range(0..height),
            p: rng.gen_range(0..2),
        })
        .collect();
    events.sort_by_key(|e| e.t);
    EventStream { width, height, duration, events }
}

fn c11_data_layer() -> Outcome {
    let mut failures = Vec::new();
    let mut streams: Vec<EventStream> = (0..20).map(|s| random_stream(s, 32, 32, 500 + 37 * s as usize)).collect();
    streams.push(synth_class(3, 9, &SynthParams::default()).unwrap());
    streams.push(EventStream::empty(8, 8, 1000));
    for s in &streams {
        let bytes = write_events(s);
        let back = read_events(&bytes).unwrap();
        if &back != s || write_events(&back) != bytes {
            failures.push("EVS1 round trip".to_string());
            break;
        }
    }
    let double = compose_double(&streams[0], &streams[1]).unwrap();
    if (double.width, double.height) != (64, 32) || double.events.len() != streams[0].events.len() + streams[1].events.len() {
        failures.push(format!("compose_double gave {}x{}", double.width, double.height));
    }
    for s in &streams[..21] {
        for bin in [1.0, 5.0, 7.5] {
            let f = rasterize(s, bin, false).unwrap();
            if f.total_count() != s.events.len() as f64 {
                failures.push(format!("rasterize at {bin} ms lost events"));
            }
        }
    }
    let mut counts = Vec::new();
    for (classes, sizes) in [(10u32, (64, 16, 20)), (24, (369, 92, 115))] {
        let ids: Vec<u32> = (0..classes).collect();
        let split = make_meta_splits(&ids, sizes, 7).unwrap();
        let mut all: Vec<_> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        let got = (split.train.len(), split.val.len(), split.test.len());
        if got != sizes || all.len() != n || n != (classes * classes) as usize {
            failures.push(format!("split {got:?} for {classes} classes"));
        }
        counts.push(format!("{}/{}/{}", got.0, got.1, got.2));
    }
    let detail = if failures.is_empty() {
        format!("{} streams round-trip, 64x32 composite, counts conserved, splits {}", streams.len(), counts.join(" and "))
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.seed = 77;
    cfg.train.meta_iterations = 4;
    cfg.train.eval_every = 2;
    cfg.eval.trials = 2;
    cfg.eval.episodes_per_trial = 1;
    cfg.baseline.iterations = 2;
    cfg.transfer.pretrain_max_iterations = 2;
    cfg.transfer.trials = 1;
    cfg.transfer.max_shots = 2;
    cfg.transfer.query_shots = 2;
    cfg.transfer.readout_steps = 3;
    cfg
}

fn run_all_commands(cfg: &RunConfig) -> (Vec<u8>, Vec<MetricsRecord>) {
    let train = run_meta_train::<f64>(cfg).unwrap();
    let ck = &train.checkpoint;
    let mut recs = vec![train.metrics.clone(), run_meta_eval::<f64>(ck, cfg).unwrap()];
    recs.extend(sweep_adaptation_steps::<f64>(ck, cfg, &[0, 2]).unwrap());
    recs.extend(sweep_freeze_layers::<f64>(ck, cfg, &[vec!["conv1".to_string()]]).unwrap());
    recs.push(run_update_stats::<f64>(ck, cfg).unwrap().metrics);
    recs.extend(run_transfer_baseline::<f64>(cfg).unwrap().per_shot);
    (ck.to_bytes(), recs)
}

fn c12_determinism() -> Outcome {
    let cfg = small_config();
    let (ck_a, a) = run_all_commands(&cfg);
    let (ck_b, b) = run_all_commands(&cfg);
    let csv = |r: &MetricsRecord| {
        let mut stripped = r.clone();
        stripped.wall_clock_s = 0.0;
        let mut out = Vec::new();
        stripped.write_csv(&mut out).unwrap();
        out
    };
    let same_metrics = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.same_results(y) && csv(x) == csv(y));
    outcome(
        ck_a == ck_b && same_metrics,
        format!("checkpoint {} bytes, {} metric records compared bitwise", ck_a.len(), a.len()),
    )
}

fn report(id: usize, name: &str, start: Instant, o: &Outcome, failed: &mut Vec<usize>) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {id:>2} {name}: {} ({:.1}s)", o.detail, start.elapsed().as_secs_f64());
    if !o.pass {
        failed.push(id);
    }
}

fn main() -> ExitCode {
    let mut failed = Vec::new();
    let t = Instant::now();
    report(1, "gradient correctness", t, &c1_gradients(), &mut failed);
    let t = Instant::now();
    report(2, "second-order correctness", t, &c2_second_order(), &mut failed);
    let t = Instant::now();
    report(3, "three-factor equivalence", t, &c3_three_factor(), &mut failed);
    let t = Instant::now();
    report(11, "data-layer exactness", t, &c11_data_layer(), &mut failed);
    let t = Instant::now();
    report(12, "determinism", t, &c12_determinism(), &mut failed);

    let t = Instant::now();
    let (o, trained) = c4_few_shot();
    report(4, "few-shot learning", t, &o, &mut failed);
    let t = Instant::now();
    report(6, "adaptation steps", t, &c6_steps(&trained), &mut failed);
    let t = Instant::now();
    report(7, "feature reuse", t, &c7_freeze(&trained), &mut failed);
    let t = Instant::now();
    let (o, stats) = c8_update_magnitudes(&trained);
    report(8, "update magnitudes", t, &o, &mut failed);
    let t = Instant::now();
    report(9, "thresholded updates", t, &c9_thresholded(&trained, &stats), &mut failed);
    let t = Instant::now();
    report(10, "transfer baseline", t, &c10_transfer(&trained), &mut failed);
    let t = Instant::now();
    report(5, "MAML >= FOMAML", t, &c5_maml_vs_fomaml(&trained), &mut failed);

    if failed.is_empty() {
        println!("all 12 acceptance criteria passed");
        ExitCode::SUCCESS
    } else {
        failed.sort_unstable();
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
