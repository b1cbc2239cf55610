//! Command-line front end: run experiments, build reports, and probe saved models.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use forgetting::analytic::{
    head_sgd_simulate, lemma_bound, overlap_kernel, rotate_features, weight_drift_report, EvalPoints, FeatureMatrix,
    FrozenHead,
};
use forgetting::data::{CIFAR100_COARSE, CIFAR10_CLASSES, DATA_ROOT_ENV};
use forgetting::harness::record::CONFIG_FILE;
use forgetting::harness::{
    load_model, protocol, read_records, report, run, seed_dir_name, seed_everything, seed_pair, ExperimentConfig,
    FrozenSetup, PlotKind, RunStatus,
};
use forgetting::nn::{Model, Targets};
use forgetting::numeric::{Rng, Tensor};
use forgetting::probes::{
    freeze_sweep, linear_probe, probe_set, record_stage_activations, reset_sweep, stage_cka, ResetDirection, PROBE_CAP,
};
use forgetting::train::{accuracy, task_heads, Curves, FirstTask};

#[derive(Parser)]
#[command(name = "forgetting", version, about = "Sequential-task forgetting experiments and probes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment config.
    Run {
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Override the config's seeds (comma separated).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Summaries and SVG figures for a finished run directory.
    Report {
        dir: PathBuf,
        #[arg(long, value_delimiter = ',', value_enum)]
        plots: Option<Vec<Plot>>,
    },
    /// Probes on the models saved by a run.
    #[command(subcommand)]
    Probe(ProbeCmd),
    /// The frozen-feature model built on a saved task-1 network.
    #[command(subcommand)]
    Analytic(AnalyticCmd),
    /// Dataset sources and expected layout.
    #[command(subcommand)]
    Data(DataCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum Plot {
    Curves,
    Cka,
    Sweeps,
}

#[derive(Args)]
struct SavedRun {
    /// Run directory containing config.toml and seed-<n>/ models.
    dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum ProbeCmd {
    /// Stage CKA between the task-1 and task-2 models.
    Cka(SavedRun),
    /// Retrain task 2 from the task-1 model with the lowest k stages frozen.
    Freeze {
        #[command(flatten)]
        run: SavedRun,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
    /// Restore blocks of stages to their post-task-1 values and measure task 1.
    Reset {
        #[command(flatten)]
        run: SavedRun,
        #[arg(long, value_enum, default_value = "from-top")]
        direction: Direction,
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
    },
    /// Linear probes on all-stage activations before and after task 2, and on the untrained network.
    Linear(SavedRun),
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    FromTop,
    FromBottom,
}

#[derive(Subcommand)]
enum AnalyticCmd {
    /// Head-only task-2 training on frozen task-1 features.
    Simulate {
        #[command(flatten)]
        run: SavedRun,
        #[arg(long)]
        steps: Option<usize>,
        /// Write the trajectory CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// As `simulate`, with task-2 features rotated by each angle.
    Rotate {
        #[command(flatten)]
        run: SavedRun,
        /// Angles in radians (comma separated).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta: Vec<f64>,
    },
    /// Check the per-step logit bound on a random frozen-feature instance.
    LemmaCheck {
        #[arg(long, default_value_t = 32)]
        features: usize,
        #[arg(long, default_value_t = 64)]
        points: usize,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum DataCmd {
    /// Where to get CIFAR-10/100 and how to lay them out.
    FetchInfo,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            output_dir,
            seeds,
        } => cmd_run(&config, output_dir, seeds),
        Command::Report { dir, plots } => cmd_report(&dir, plots),
        Command::Probe(p) => cmd_probe(p),
        Command::Analytic(a) => cmd_analytic(a),
        Command::Data(DataCmd::FetchInfo) => {
            fetch_info();
            Ok(())
        }
    }
}

fn cmd_run(config: &Path, output_dir: Option<PathBuf>, seeds: Option<Vec<u64>>) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(d) = output_dir {
        cfg.output_dir = d;
    }
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    let records = run(&cfg)?;
    for r in &records {
        match r.status {
            RunStatus::Ok => {
                let drop = r
                    .outcome
                    .report
                    .as_ref()
                    .and_then(|rep| rep.tasks.first())
                    .map(|t| format!(" task1 {:.3} -> {:.3} ({:.1}% drop)", t.before, t.after, t.percent_drop))
                    .unwrap_or_default();
                println!("seed {}: ok, {} arms{drop}", r.seed, r.outcome.arms.len());
            }
            RunStatus::Failed => println!("seed {}: failed: {}", r.seed, r.error.as_deref().unwrap_or("")),
        }
    }
    println!("records written to {}", cfg.output_dir.display());
    if records.iter().all(|r| r.status == RunStatus::Failed) {
        bail!("every seed failed");
    }
    Ok(())
}

fn cmd_report(dir: &Path, plots: Option<Vec<Plot>>) -> Result<()> {
    let records = read_records(dir)?;
    let kinds: Vec<PlotKind> = match plots {
        None => PlotKind::ALL.to_vec(),
        Some(p) => p
            .into_iter()
            .map(|k| match k {
                Plot::Curves => PlotKind::Curves,
                Plot::Cka => PlotKind::Cka,
                Plot::Sweeps => PlotKind::Sweeps,
            })
            .collect(),
    };
    for f in report(dir, &records, &kinds)? {
        println!("{}", f.display());
    }
    Ok(())
}

struct Loaded {
    cfg: ExperimentConfig,
    pair: forgetting::data::TaskPair,
    dir: PathBuf,
}

impl Loaded {
    fn open(run: &SavedRun) -> Result<Self> {
        let cfg = ExperimentConfig::load(&run.dir.join(CONFIG_FILE))
            .with_context(|| format!("{} is not a run directory", run.dir.display()))?;
        let pair = seed_pair(&cfg, run.seed)?;
        Ok(Self {
            cfg,
            pair,
            dir: run.dir.join(seed_dir_name(run.seed)),
        })
    }

    fn model(&self, name: &str) -> Result<Model> {
        let path = self.dir.join(format!("{name}.model"));
        load_model(&path).with_context(|| format!("loading {}", path.display()))
    }
}

fn cmd_probe(p: ProbeCmd) -> Result<()> {
    match p {
        ProbeCmd::Cka(run) => {
            let l = Loaded::open(&run)?;
            let h = task_heads(l.pair.head_mode)[0];
            let cka = stage_cka(&l.model("task1")?, h, &l.model("task2")?, h, &probe_set(&l.pair.task1.test))?;
            println!("stage,cka");
            for (s, v) in cka {
                println!("{s},{v:.6}");
            }
        }
        ProbeCmd::Freeze { run, k } => {
            let l = Loaded::open(&run)?;
            let trained = l.model("task1")?;
            let k = k.unwrap_or_else(|| (0..=trained.stage_count()).collect());
            let first = FirstTask {
                initial: l.model("initial")?,
                trained,
                curves: Curves::new(),
            };
            let shuffle = seed_everything(run.seed).take("shuffle")?;
            println!("frozen,task1_final,task2_final");
            for a in freeze_sweep(&l.pair, &protocol(&l.cfg), &first, &k, &shuffle)? {
                println!("{},{:.4},{:.4}", a.frozen, a.task1_final, a.task2_final);
            }
        }
        ProbeCmd::Reset { run, direction, n } => {
            let l = Loaded::open(&run)?;
            let after = l.model("task2")?;
            let snap = l.model("task1")?.snapshot("post-task-1");
            let n = n.unwrap_or_else(|| (0..=after.stage_count()).collect());
            let dir = match direction {
                Direction::FromTop => ResetDirection::FromTop,
                Direction::FromBottom => ResetDirection::FromBottom,
            };
            let h = task_heads(l.pair.head_mode)[0];
            println!("stages,task1_accuracy");
            for a in reset_sweep(&after, &snap, dir, &n, h, &l.pair.task1.test)? {
                println!("{},{:.4}", a.stages, a.accuracy);
            }
        }
        ProbeCmd::Linear(run) => {
            let l = Loaded::open(&run)?;
            let h = task_heads(l.pair.head_mode)[0];
            let train = l.pair.task1.train.head(PROBE_CAP);
            let test = probe_set(&l.pair.task1.test);
            println!("model,probe_accuracy,head_accuracy,top_stage_mass");
            for name in ["initial", "task1", "task2"] {
                let m = l.model(name)?;
                let stages: Vec<usize> = (0..m.stage_count()).collect();
                let r = linear_probe(
                    &record_stage_activations(&m, h, &train, &stages)?,
                    train.hard_labels()?,
                    &record_stage_activations(&m, h, &test, &stages)?,
                    test.hard_labels()?,
                    l.pair.task1.train.n_classes(),
                    &l.cfg.probe.linear,
                )?;
                let top = r.stage_mass.last().map_or(0.0, |s| s.1);
                println!("{name},{:.4},{:.4},{top:.4}", r.accuracy, accuracy(&m, h, &test)?);
            }
        }
    }
    Ok(())
}

fn cmd_analytic(a: AnalyticCmd) -> Result<()> {
    match a {
        AnalyticCmd::Simulate { run, steps, csv } => {
            let l = Loaded::open(&run)?;
            let s = FrozenSetup::new(&l.model("task1")?, &l.pair, &l.cfg.analytic)?;
            let t = s.simulate_task2(&s.g2_train, steps.unwrap_or(l.cfg.analytic.steps), l.cfg.analytic.batch)?;
            let last = t.final_step();
            println!("task-1 head accuracy {:.4}", s.head_accuracy);
            println!(
                "after {} task-2 steps: task-1 accuracy {:.4}, max bound excess {:.3e}, max kernel error {:.3e}, weight distance {:.4}",
                last.step,
                last.task1_acc,
                t.max_bound_excess(),
                t.max_kernel_error(),
                last.weight_distance
            );
            if let Some(path) = csv {
                let mut buf = Vec::new();
                t.write_csv(&mut buf)?;
                forgetting::container::write_atomic(&path, &buf)?;
            }
        }
        AnalyticCmd::Rotate { run, theta } => {
            let l = Loaded::open(&run)?;
            let s = FrozenSetup::new(&l.model("task1")?, &l.pair, &l.cfg.analytic)?;
            let thetas = if theta.is_empty() { l.cfg.analytic.thetas.clone() } else { theta };
            println!("theta,overlap,task1_before,task1_after,max_logit_drift,weight_distance");
            for th in thetas {
                let g2 = rotate_features(&s.g2_train, th, &s.g1_test)?;
                let overlap = overlap_kernel(&s.g1_test, &g2)?.theta.frobenius_norm();
                let t = s.simulate_task2(&g2, l.cfg.analytic.steps, l.cfg.analytic.batch)?;
                let drift = t.steps.iter().map(|x| x.logit_drift).fold(0.0, f64::max);
                println!(
                    "{th:.4},{overlap:.4},{:.4},{:.4},{drift:.3e},{:.4}",
                    t.steps[0].task1_acc,
                    t.final_step().task1_acc,
                    t.final_step().weight_distance
                );
            }
        }
        AnalyticCmd::LemmaCheck {
            features,
            points,
            steps,
            lr,
            seed,
        } => lemma_check(features, points, steps, lr, seed)?,
    }
    Ok(())
}

fn random_features(n: usize, p: usize, rng: &mut Rng) -> Result<FeatureMatrix> {
    let t = Tensor::new(vec![n, p], (0..n * p).map(|_| rng.normal() / (p as f64).sqrt()).collect())?;
    Ok(FeatureMatrix::new(t, rng.next_u64())?)
}

fn lemma_check(p: usize, n: usize, steps: usize, lr: f64, seed: u64) -> Result<()> {
    let mut rng = Rng::new(seed);
    let train = random_features(n, p, &mut rng)?;
    let test = random_features(n, p, &mut rng)?;
    let y2: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
    let y1: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
    let mut head = FrozenHead::zeros(p, 2, lr);
    let t = head_sgd_simulate(
        &mut head,
        &train,
        &Targets::Hard(y2),
        EvalPoints {
            features: &test,
            labels: &y1,
        },
        steps,
        None,
    )?;
    let drift = weight_drift_report(&t);
    println!("steps {steps}, features {p}, points {n}, learning rate {lr}");
    println!("max bound excess   {:.3e}  (the bound holds when <= 1e-9)", t.max_bound_excess());
    println!("max kernel error   {:.3e}", t.max_kernel_error());
    println!("final weight drift {:.4}", drift.last().map_or(0.0, |d| d.distance));
    // also show the bound for the first test point at the first step
    let k = overlap_kernel(&test, &train)?;
    println!("example row bound  {:.4e}", lemma_bound(k.theta.row(0), &vec![1.0 / n as f64; n], lr)?);
    if t.max_bound_excess() > 1e-9 {
        bail!("bound violated");
    }
    Ok(())
}

fn fetch_info() {
    println!("CIFAR-10 binary:  https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz");
    println!("CIFAR-100 binary: https://www.cs.toronto.edu/~kriz/cifar-100-binary.tar.gz");
    println!();
    println!("Extract both archives into one directory and point {DATA_ROOT_ENV} (or `data.root`) at it:");
    println!("  <root>/cifar-10-batches-bin/data_batch_1.bin .. data_batch_5.bin, test_batch.bin");
    println!("  <root>/cifar-100-binary/train.bin, test.bin");
    println!();
    println!("CIFAR-10 classes: {}", CIFAR10_CLASSES.join(", "));
    println!("CIFAR-100 superclasses: {}", CIFAR100_COARSE.join(", "));
    println!();
    println!("Without the files, set `data.source = \"synthetic\"` to use the built-in generators.");
}
