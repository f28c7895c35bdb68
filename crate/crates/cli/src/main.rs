use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use fbnt::bench::{
    ablation_csv, ablation_row, evaluate, gen_maze, matched_hidden, render, sample_pairs, train_variant, FmmPlanner,
    LearnedPlanner, Overlay, Planner, RrtPlanner, RunConfig,
};
use fbnt::decomposition::Decomposition;
use fbnt::field::FieldModel;
use fbnt::fmm::{fmm_backtrack, solve_from};
use fbnt::gridworld::Environment;
use fbnt::planner::plan;
use fbnt::siren::EncoderArch;
use fbnt::Config2;

/// Output directory used when a command's `--out-dir` is omitted.
const OUT_DIR_VAR: &str = "FBNT_OUT_DIR";

#[derive(Parser)]
#[command(name = "fbnt", version, about = "Neural time fields for 2D motion planning")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a recursive-division maze as a PGM.
    GenMap {
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 6)]
        rooms: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write the checkpoint and per-epoch log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training log CSV; defaults next to the checkpoint.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Answer one query with a trained model.
    Plan {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint; defaults to the one named in the config.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_parser = parse_point)]
        start: Config2<f64>,
        #[arg(long, value_parser = parse_point)]
        goal: Config2<f64>,
        /// Path CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the learned, fast-marching and RRT-Connect planners.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Dump oracle arrival times from a source point.
    Fmm {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_point)]
        source: Config2<f64>,
        /// CSV with one row per cell: i,j,time.
        #[arg(long)]
        out: PathBuf,
        /// Backtracked path from this point, written as `<out>.path.csv`.
        #[arg(long, value_parser = parse_point)]
        start: Option<Config2<f64>>,
    },
    /// Render a field overlay and paths as PPM.
    Render {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = OverlayKind::Speed)]
        overlay: OverlayKind,
        /// Source point for time overlays.
        #[arg(long, value_parser = parse_point)]
        source: Option<Config2<f64>>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Path CSV files (x,y rows) to draw.
        #[arg(long = "path")]
        paths: Vec<PathBuf>,
        #[arg(long, default_value_t = 4)]
        scale: usize,
        /// Iso-band width in seconds.
        #[arg(long)]
        bands: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-domain versus decomposed sweep over model tiers.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = [String::from("small"), String::from("medium"), String::from("large")])]
        tiers: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8])]
        n_per_axis: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OverlayKind {
    Speed,
    Learned,
    Fmm,
}

enum Failure {
    Usage(anyhow::Error),
    Planner(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<fbnt::Error> for Failure {
    fn from(e: fbnt::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn parse_point(s: &str) -> Result<Config2<f64>, String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected `x,y`, got `{s}`"))?;
    let x: f64 = x.trim().parse().map_err(|e| format!("bad x in `{s}`: {e}"))?;
    let y: f64 = y.trim().parse().map_err(|e| format!("bad y in `{s}`: {e}"))?;
    if !(x.is_finite() && y.is_finite()) {
        return Err(format!("non-finite point `{s}`"));
    }
    Ok(Config2::new(x, y))
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(anyhow!("config file {} not found", path.display())));
    }
    RunConfig::load(path).map_err(|e| Failure::Usage(anyhow!("{}: {e}", path.display())))
}

fn out_dir(flag: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    let dir = flag
        .or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_model(run: &RunConfig, flag: Option<PathBuf>) -> Result<FieldModel<f64>, Failure> {
    let path = flag
        .or_else(|| run.model.as_ref().map(|m| m.checkpoint.clone()))
        .ok_or_else(|| Failure::Usage(anyhow!("no model given (use --model or set `model` in the config)")))?;
    if !path.is_file() {
        return Err(Failure::Usage(anyhow!("model file {} not found", path.display())));
    }
    FieldModel::load(&path).map_err(|e| Failure::Usage(anyhow!("{}: {e}", path.display())))
}

fn read_path_csv(path: &Path) -> Result<Vec<Config2<f64>>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(anyhow!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        out.push(parse_point(line).map_err(|e| Failure::Usage(anyhow!("{}: {e}", path.display())))?);
    }
    Ok(out)
}

fn train_or_load(run: &RunConfig, env: &Environment<f64>) -> Result<FieldModel<f64>, Failure> {
    match &run.model {
        Some(_) => load_model(run, None),
        None => {
            let arch = run.arch.resolve()?;
            let (model, _) = train_variant(env, run, run.decomposition.n_per_axis, &arch, run.train.seed)?;
            Ok(model)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::GenMap {
            width,
            height,
            rooms,
            seed,
            out,
        } => {
            let g = gen_maze::<f64>(width, height, rooms, 1.0, seed).map_err(|e| Failure::Usage(e.into()))?;
            write(&out, g.to_pgm())?;
        }
        Cmd::Train {
            config,
            out,
            log,
            epochs,
            seed,
        } => {
            let mut run = load_config(&config)?;
            if let Some(e) = epochs {
                run.train.epochs = e;
            }
            if let Some(s) = seed {
                run.train.seed = s;
            }
            run.train.validate().map_err(|e| Failure::Usage(e.into()))?;
            let env = run.environment()?;
            let arch = run.arch.resolve()?;
            let out = out.unwrap_or(out_dir(None)?.join("model.json"));
            let log_path = log.unwrap_or_else(|| out.with_extension("log.csv"));
            let d = Decomposition::build(env.bounds(), run.decomposition.n_per_axis, run.decomposition.overlap)?;
            let cfg = run.train.clone();
            let mut save_err = None;
            let (model, log) = fbnt::trainer::fit(&env, &d, &arch, &run.generator, &cfg, |epoch, m| {
                if let Err(e) = m.save(&out) {
                    save_err.get_or_insert(e);
                }
                eprintln!("epoch {epoch}: checkpoint written to {}", out.display());
            })?;
            if let Some(e) = save_err {
                return Err(e.into());
            }
            write(&log_path, log.to_csv())?;
            eprintln!(
                "{} parameters, final loss {:.5}, {:.4} s/epoch",
                model.param_count(),
                log.epochs.last().map(|e| e.mean_loss).unwrap_or(f64::NAN),
                log.mean_epoch_seconds()
            );
        }
        Cmd::Plan {
            config,
            model,
            start,
            goal,
            out,
        } => {
            let run = load_config(&config)?;
            let env = run.environment()?;
            let model = load_model(&run, model)?;
            let r = plan(&model, &env, &start, &goal, &run.plan).map_err(|e| Failure::Planner(e.to_string()))?;
            match out {
                Some(p) => write(&p, r.to_csv())?,
                None => print!("{}", r.to_csv()),
            }
            eprintln!(
                "success={} length={:.4} steps={} time={:.4}s",
                r.success,
                r.length,
                r.path.len(),
                r.wall_time
            );
            if !r.success {
                return Err(Failure::Planner(format!("planner failed: {}", r.failure_reason.as_str())));
            }
        }
        Cmd::Eval { config, out_dir: dir } => {
            let run = load_config(&config)?;
            let env = run.environment()?;
            let dir = out_dir(dir)?;
            let d_safe = run.d_safe();
            let model = if run.eval.methods.iter().any(|m| m == "learned") {
                Some(train_or_load(&run, &env)?)
            } else {
                None
            };
            let learned = model.as_ref().map(|m| LearnedPlanner {
                model: m,
                cfg: run.plan.clone(),
            });
            let fmm = FmmPlanner { d_safe };
            let rrt = RrtPlanner {
                cfg: fbnt::rrt::RrtConfig {
                    d_safe: run.rrt.d_safe.or(Some(d_safe)),
                    ..run.rrt.clone()
                },
            };
            let mut planners: Vec<&dyn Planner<f64>> = Vec::new();
            for m in &run.eval.methods {
                match m.as_str() {
                    "learned" => planners.push(learned.as_ref().expect("model loaded for learned method")),
                    "fmm" => planners.push(&fmm),
                    _ => planners.push(&rrt),
                }
            }
            let report = evaluate(&env, &run.env_id(), &planners, run.eval.n_pairs, run.eval.seed, d_safe)?;
            write(&dir.join("report.csv"), report.summary_csv())?;
            write(&dir.join("queries.csv"), report.queries_csv())?;
            print!("{}", report.summary_csv());
        }
        Cmd::Fmm {
            config,
            source,
            out,
            start,
        } => {
            let run = load_config(&config)?;
            let env = run.environment()?;
            let grid = solve_from(&env, &source).map_err(|e| Failure::Usage(e.into()))?;
            let mut csv = String::from("i,j,time\n");
            for j in 0..grid.height {
                for i in 0..grid.width {
                    csv.push_str(&format!("{i},{j},{}\n", grid.time_at(i, j)));
                }
            }
            write(&out, csv)?;
            if let Some(s) = start {
                let path = fmm_backtrack(&grid, &s).map_err(|e| Failure::Planner(e.to_string()))?;
                let mut p = String::from("x,y\n");
                for q in &path {
                    p.push_str(&format!("{},{}\n", q[0], q[1]));
                }
                write(&out.with_extension("path.csv"), p)?;
            }
        }
        Cmd::Render {
            config,
            overlay,
            source,
            model,
            paths,
            scale,
            bands,
            out,
        } => {
            let run = load_config(&config)?;
            let env = run.environment()?;
            let drawn = paths.iter().map(|p| read_path_csv(p)).collect::<Result<Vec<_>, _>>()?;
            let need_source = || source.ok_or_else(|| Failure::Usage(anyhow!("--source is required for this overlay")));
            let canvas = match overlay {
                OverlayKind::Speed => render(&env, &Overlay::Speed, &drawn, scale, bands)?,
                OverlayKind::Fmm => {
                    let grid = solve_from(&env, &need_source()?).map_err(|e| Failure::Usage(e.into()))?;
                    render(&env, &Overlay::Fmm(&grid), &drawn, scale, bands)?
                }
                OverlayKind::Learned => {
                    let m = load_model(&run, model)?;
                    let overlay = Overlay::Learned {
                        model: &m,
                        source: need_source()?,
                    };
                    render(&env, &overlay, &drawn, scale, bands)?
                }
            };
            write(&out, canvas.to_ppm())?;
        }
        Cmd::Ablate {
            config,
            out_dir: dir,
            tiers,
            n_per_axis,
            seeds,
        } => {
            let run = load_config(&config)?;
            let env = run.environment()?;
            let dir = out_dir(dir)?;
            let pairs = sample_pairs(&env, run.eval.n_pairs, run.eval.seed, run.d_safe())?;
            let mut rows = Vec::new();
            for tier in &tiers {
                let arch = EncoderArch::tier(tier).ok_or_else(|| Failure::Usage(anyhow!("unknown tier `{tier}`")))?;
                // The single-domain baseline matches the parameter count of the 4x4 model.
                let active = Decomposition::build(env.bounds(), 4, run.decomposition.overlap)?
                    .prune(&env.field)?
                    .active_count();
                let single = matched_hidden(&arch, active * arch.param_count());
                let mut variants = vec![(1, single)];
                variants.extend(n_per_axis.iter().map(|&n| (n, arch)));
                for (n, a) in variants {
                    for s in 0..seeds {
                        let (row, _) = ablation_row(&env, &run, tier, n, &a, run.train.seed + s, &pairs)?;
                        eprintln!(
                            "{tier} n={n} hidden={} params={} seed={} sr={:.1}",
                            row.hidden, row.params, row.seed, row.sr
                        );
                        rows.push(row);
                    }
                }
            }
            let csv = ablation_csv(&rows);
            write(&dir.join("ablation.csv"), &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Planner(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
