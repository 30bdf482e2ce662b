use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use spikemeta::autodiff::Real;
use spikemeta::eventdata::{synth_class, write_events};
use spikemeta::harness::{
    run_meta_eval, run_meta_train, run_transfer_baseline, run_update_stats, sweep_adaptation_steps,
    sweep_freeze_layers, write_table, Benchmark, Checkpoint, MetricsRecord, Precision, RunConfig,
};
use spikemeta::meta::MetaMode;
use spikemeta::snn::LayerSpec;
use spikemeta::{Error, Result};

#[derive(Parser)]
#[command(name = "spikemeta", version, about = "Meta-learning for spiking networks on event streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults to the built-in desk benchmark.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Evaluation trials (overrides `eval.trials` and `transfer.trials`).
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Load checkpoints even if they were written for another network.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Maml,
    Fomaml,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic base-class recordings as EVS1 files plus the split manifest.
    GenSynth {
        /// Recordings per base class.
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
    /// Meta-train from the seed-derived initialization.
    MetaTrain,
    /// Few-shot accuracy of a checkpoint.
    MetaEval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Accuracy against the number of inner steps.
    SweepSteps {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,5")]
        steps: Vec<usize>,
    },
    /// Accuracy with layers frozen during adaptation.
    FreezeLayers {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Plans separated by ';', layers by ','. Defaults to nothing, each
        /// conv prefix, and everything.
        #[arg(long)]
        plans: Option<String>,
    },
    /// Update magnitudes of meta and non-meta training, with and without gating.
    UpdateStats {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Readout-only transfer learning against the number of shots.
    TransferBaseline {
        /// Few-shot accuracy to report shots-to-parity against.
        #[arg(long)]
        maml_accuracy: Option<f64>,
    },
    /// Print the effective configuration as TOML.
    PrintConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Numerical(_) => 4,
                Error::Format { .. } | Error::Structural(_) | Error::Io(_) => 3,
            })
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(t) = cli.trials {
        cfg.eval.trials = t;
        cfg.transfer.trials = t;
    }
    if let Some(p) = cli.precision {
        cfg.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    if let Some(m) = cli.mode {
        cfg.meta.mode = match m {
            ModeArg::Maml => MetaMode::SecondOrder,
            ModeArg::Fomaml => MetaMode::FirstOrder,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load_checkpoint(cfg: &RunConfig, path: &Option<PathBuf>, force: bool) -> Result<Checkpoint> {
    let path = path.clone().unwrap_or_else(|| cfg.out_dir.join("checkpoint.smck"));
    Checkpoint::load(&path, &cfg.model_hash(), force)
}

fn summary_rows(labels: &[f64], recs: &[MetricsRecord]) -> Vec<Vec<f64>> {
    labels
        .iter()
        .zip(recs)
        .map(|(l, r)| {
            let mut row = vec![*l, r.mean(), r.std()];
            row.extend(&r.trial_accuracy);
            row
        })
        .collect()
}

fn header(first: &str, trials: usize) -> Vec<String> {
    let mut h = vec![first.to_string(), "mean".into(), "std".into()];
    h.extend((0..trials).map(|i| format!("trial_{i}")));
    h
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if let Command::PrintConfig = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    fs::create_dir_all(&cfg.out_dir)?;
    match cfg.precision {
        Precision::F64 => dispatch::<f64>(&cli, &cfg),
        Precision::F32 => dispatch::<f32>(&cli, &cfg),
    }
}

fn dispatch<F: Real>(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let out = &cfg.out_dir;
    match &cli.command {
        Command::PrintConfig => unreachable!("handled before dispatch"),
        Command::GenSynth { count } => {
            let params = cfg.data.synth_params();
            for class in 0..cfg.data.base_classes {
                let dir = out.join(class.to_string());
                fs::create_dir_all(&dir)?;
                for i in 0..*count {
                    let seed = cfg.data.split_seed ^ ((class as u64) << 32 | i as u64);
                    let s = synth_class(class, seed, &params)?;
                    fs::write(dir.join(format!("{i:05}.evs")), write_events(&s))?;
                }
            }
            let bench = Benchmark::from_config(cfg)?;
            fs::write(out.join("split.txt"), bench.split.to_manifest())?;
            println!("wrote {} classes x {count} recordings to {}", cfg.data.base_classes, out.display());
        }
        Command::MetaTrain => {
            let res = run_meta_train::<F>(cfg)?;
            res.checkpoint.save(&out.join("checkpoint.smck"))?;
            res.metrics.write_csv(create(&out.join("train_metrics.csv"))?)?;
            fs::write(out.join("split.txt"), Benchmark::from_config(cfg)?.split.to_manifest())?;
            let last = res.metrics.losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "{} meta-iterations in {:.1}s, final outer loss {last:.4}",
                cfg.train.meta_iterations, res.metrics.wall_clock_s
            );
            if let Some(v) = res.metrics.series("val_accuracy").and_then(|v| v.last()) {
                println!("validation accuracy {:.2}%", 100.0 * v);
            }
        }
        Command::MetaEval { checkpoint } => {
            let ck = load_checkpoint(cfg, checkpoint, cli.force)?;
            let rec = run_meta_eval::<F>(&ck, cfg)?;
            rec.write_csv(create(&out.join("eval_metrics.csv"))?)?;
            println!("accuracy {:.2}% +- {:.2}% over {} trials", 100.0 * rec.mean(), 100.0 * rec.std(), rec.trial_accuracy.len());
        }
        Command::SweepSteps { checkpoint, steps } => {
            let ck = load_checkpoint(cfg, checkpoint, cli.force)?;
            let recs = sweep_adaptation_steps::<F>(&ck, cfg, steps)?;
            let labels: Vec<f64> = steps.iter().map(|&s| s as f64).collect();
            let h = header("steps", cfg.eval.trials);
            let h: Vec<&str> = h.iter().map(String::as_str).collect();
            write_table(create(&out.join("sweep_steps.csv"))?, &h, &summary_rows(&labels, &recs))?;
            for (s, r) in steps.iter().zip(&recs) {
                println!("steps {s}: {:.2}% +- {:.2}%", 100.0 * r.mean(), 100.0 * r.std());
            }
        }
        Command::FreezeLayers { checkpoint, plans } => {
            let ck = load_checkpoint(cfg, checkpoint, cli.force)?;
            let plans = match plans {
                Some(text) => text
                    .split(';')
                    .map(|p| p.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
                    .collect(),
                None => default_plans(cfg),
            };
            let recs = sweep_freeze_layers::<F>(&ck, cfg, &plans)?;
            let labels: Vec<f64> = (0..plans.len()).map(|i| i as f64).collect();
            let h = header("plan", cfg.eval.trials);
            let h: Vec<&str> = h.iter().map(String::as_str).collect();
            write_table(create(&out.join("freeze_layers.csv"))?, &h, &summary_rows(&labels, &recs))?;
            for (i, (p, r)) in plans.iter().zip(&recs).enumerate() {
                println!("plan {i} [{}]: {:.2}% +- {:.2}%", p.join(","), 100.0 * r.mean(), 100.0 * r.std());
            }
        }
        Command::UpdateStats { checkpoint } => {
            let ck = load_checkpoint(cfg, checkpoint, cli.force)?;
            let study = run_update_stats::<F>(&ck, cfg)?;
            study.metrics.write_csv(create(&out.join("update_stats.csv"))?)?;
            let mut w = csv::Writer::from_writer(create(&out.join("update_histogram.csv"))?);
            let io = |e: csv::Error| Error::Io(e.into());
            w.write_record(["regime", "lower", "upper", "count"]).map_err(io)?;
            for (regime, lo, hi, c) in &study.histogram {
                w.write_record([regime.clone(), lo.to_string(), hi.to_string(), c.to_string()]).map_err(io)?;
            }
            w.flush()?;
            for (name, s) in &study.metrics.update_stats {
                println!("{name}: mean |dw| {:.3e}, max {:.3e}, nonzero {}/{}", s.avg, s.max, s.nonzero, s.count);
            }
            let m = &study.metrics;
            println!(
                "inner/non-meta ratio {:.2}; accuracy {:.2}% ungated, {:.2}% gated",
                m.scalar("ratio").unwrap_or(f64::NAN),
                100.0 * m.scalar("accuracy").unwrap_or(f64::NAN),
                100.0 * m.scalar("thresholded_accuracy").unwrap_or(f64::NAN)
            );
        }
        Command::TransferBaseline { maml_accuracy } => {
            let study = run_transfer_baseline::<F>(cfg)?;
            let labels: Vec<f64> = (0..study.per_shot.len()).map(|s| s as f64).collect();
            let h = header("shots", cfg.transfer.trials);
            let h: Vec<&str> = h.iter().map(String::as_str).collect();
            write_table(create(&out.join("transfer.csv"))?, &h, &summary_rows(&labels, &study.per_shot))?;
            println!(
                "pre-trained {} iterations to {:.2}% batch accuracy",
                study.pretrain_iterations,
                100.0 * study.pretrain_accuracy
            );
            for (s, a) in study.mean_accuracy().iter().enumerate() {
                println!("shots {s}: {:.2}%", 100.0 * a);
            }
            if let Some(target) = maml_accuracy {
                match study.shots_to_reach(*target) {
                    Some(s) => println!("reaches {:.2}% at {s} shots", 100.0 * target),
                    None => println!("does not reach {:.2}% within {} shots", 100.0 * target, cfg.transfer.max_shots),
                }
            }
        }
    }
    Ok(())
}

fn default_plans(cfg: &RunConfig) -> Vec<Vec<String>> {
    let convs: Vec<String> = cfg
        .network
        .layers
        .iter()
        .filter_map(|l| match l {
            LayerSpec::Conv { name, .. } => Some(name.clone()),
            _ => None,
        })
        .collect();
    let mut plans = vec![Vec::new()];
    for k in 1..=convs.len() {
        plans.push(convs[..k].to_vec());
    }
    plans.push(cfg.network.layer_names());
    plans
}
