//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Runs without the libtest harness so the criteria execute sequentially (timing
//! checks are not disturbed by concurrent training) and every line is printed.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use fbnt::bench::{
    evaluate_pairs, matched_hidden, sample_pairs, train_variant, FmmPlanner, LearnedPlanner, ModelSource,
    RrtPlanner, RunConfig,
};
use fbnt::decomposition::{Decomposition, WeightTerm};
use fbnt::field::{FieldModel, GeneratorParams};
use fbnt::fmm::fmm_solve;
use fbnt::gridworld::{cell_distance, compute_edt, Environment, OccupancyGrid};
use fbnt::planner::plan;
use fbnt::rrt::RrtConfig;
use fbnt::siren::EncoderArch;
use fbnt::trainer::{batch_loss, batch_loss_and_grad, sample_batch, TrainConfig, TrainLog};
use fbnt::Config2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PAIRS: usize = 100;
const ABLATION_SEEDS: u64 = 3;
const ABLATION_MARGIN_PP: f64 = 15.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn report(id: &str, name: &str, o: &Outcome) {
    let line = format!("{} [{id}] {name}: {}\n", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn bundled_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/maze64.json")
}

fn close(a: f64, b: f64, rtol: f64, atol: f64) -> bool {
    (a - b).abs() <= rtol * a.abs().max(b.abs()) + atol
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn wall_env(w: usize) -> Environment<f64> {
    let mut g = OccupancyGrid::empty(w, w, 0.1).unwrap();
    for j in w / 6..w - w / 4 {
        g.set(w / 2, j, true);
        g.set(w / 2 + 1, j, true);
    }
    Environment::with_default_speed(g)
}

fn init_model(env: &Environment<f64>, n: usize, arch: &EncoderArch, seed: u64) -> FieldModel<f64> {
    let d = Decomposition::build(env.bounds(), n, 1.0).unwrap().prune(&env.field).unwrap();
    FieldModel::init(d, arch, &GeneratorParams::default(), env.speed, seed).unwrap()
}

fn uniform(rng: &mut ChaCha8Rng, env: &Environment<f64>) -> Config2<f64> {
    let b = env.bounds();
    Config2::new(rng.random_range(b.min[0]..b.max[0]), rng.random_range(b.min[1]..b.max[1]))
}

fn configuration_gradients() -> Outcome {
    let env = wall_env(32);
    let m = init_model(&env, 4, &EncoderArch::medium(), 17);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for _ in 0..100 {
        let (s, g) = (uniform(&mut rng, &env), uniform(&mut rng, &env));
        let e = m.evaluate(&s, &g).unwrap();
        for axis in 0..2 {
            let mut d = Config2::new(0.0, 0.0);
            d[axis] = h;
            let fs = (m.travel_time(&(s + d), &g).unwrap() - m.travel_time(&(s - d), &g).unwrap()) / (2.0 * h);
            let fg = (m.travel_time(&s, &(g + d)).unwrap() - m.travel_time(&s, &(g - d)).unwrap()) / (2.0 * h);
            for (an, fd) in [(e.grad_s[axis], fs), (e.grad_g[axis], fg)] {
                ok &= close(an, fd, 1e-3, 1e-9);
                worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-300));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ok && secs < 10.0,
        format!("max relative error {worst:.2e} (limit 1e-3), {secs:.2} s (limit 10 s)"),
    )
}

fn parameter_gradients() -> Outcome {
    let env = wall_env(24);
    let m = init_model(&env, 2, &EncoderArch::new(2, 2, 4, 4), 5);
    let params = m.param_count();
    let cfg = TrainConfig {
        batch_size: 16,
        ..Default::default()
    };
    let start = Instant::now();
    let batch = sample_batch(&env, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let (_, grads) = batch_loss_and_grad(&m, &batch).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for e in 0..m.encoders.len() {
        for i in 0..m.encoders[e].net.params.len() {
            let mut p = m.clone();
            p.encoders[e].net.params[i] += h;
            let up = batch_loss(&p, &batch).unwrap();
            p.encoders[e].net.params[i] -= 2.0 * h;
            let down = batch_loss(&p, &batch).unwrap();
            let fd = (up - down) / (2.0 * h);
            let an = grads.per_encoder[e][i];
            ok &= close(an, fd, 1e-3, 1e-9);
            worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-300));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ok && params <= 200 && secs < 60.0,
        format!("{params} parameters, max relative error {worst:.2e} (limit 1e-3), {secs:.2} s (limit 60 s)"),
    )
}

fn generator_exactness(env: &Environment<f64>) -> Outcome {
    let m = init_model(env, 4, &EncoderArch::medium(), 3);
    let floor = m.alpha * (m.embed_dim as f64).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_ulps = 0u64;
    let mut asym = 0;
    for _ in 0..1000 {
        let (a, b) = (uniform(&mut rng, env), uniform(&mut rng, env));
        let t = m.travel_time(&a, &a).unwrap();
        worst_ulps = worst_ulps.max(t.to_bits().abs_diff(floor.to_bits()));
        if m.travel_time(&a, &b).unwrap().to_bits() != m.travel_time(&b, &a).unwrap().to_bits() {
            asym += 1;
        }
    }
    outcome(
        worst_ulps <= 4 && asym == 0 && !m.subtract_floor,
        format!("T(q,q) within {worst_ulps} ulps of alpha*ln(k) (limit 4); {asym}/1000 asymmetric pairs"),
    )
}

fn weight_at(terms: &[WeightTerm<f64>], id: usize) -> (f64, Config2<f64>) {
    terms
        .iter()
        .find(|t| t.id == id)
        .map_or((0.0, Config2::new(0.0, 0.0)), |t| (t.w, t.grad))
}

fn partition_of_unity(env: &Environment<f64>) -> Outcome {
    let m = init_model(env, 4, &EncoderArch::small(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let sampler = fbnt::gridworld::FreeSampler::new(&env.field, 0.0).unwrap();
    let mut terms = Vec::new();
    let mut worst_sum: f64 = 0.0;
    for _ in 0..10_000 {
        let q = sampler.sample(&mut rng);
        m.normalized_weights(&q, &mut terms).unwrap();
        let s: f64 = terms.iter().map(|t| t.w).sum();
        worst_sum = worst_sum.max((s - 1.0).abs());
    }
    // Continuity: straddle every box edge of every active subdomain.
    let eps = 1e-9;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let mut checks = 0;
    let mut broken = 0;
    let bounds = env.bounds();
    let d = &m.decomposition;
    for s in d.subdomains.iter().filter(|s| s.active) {
        for axis in 0..2 {
            for edge in [s.b_min[axis], s.b_max[axis]] {
                if edge <= bounds.min[axis] || edge >= bounds.max[axis] {
                    continue;
                }
                let other = 1 - axis;
                for k in 1..20 {
                    let along = s.b_min[other] + s.side[other] * k as f64 / 20.0;
                    if along <= bounds.min[other] || along >= bounds.max[other] {
                        continue;
                    }
                    let mut lo = Config2::new(0.0, 0.0);
                    lo[axis] = edge - eps;
                    lo[other] = along;
                    let mut hi = lo;
                    hi[axis] = edge + eps;
                    m.normalized_weights(&lo, &mut a).unwrap();
                    m.normalized_weights(&hi, &mut b).unwrap();
                    for id in d.active_ids() {
                        let (wa, ga) = weight_at(&a, id);
                        let (wb, gb) = weight_at(&b, id);
                        checks += 1;
                        let ok = close(wa, wb, 1e-3, 1e-6)
                            && close(ga[0], gb[0], 1e-3, 1e-5)
                            && close(ga[1], gb[1], 1e-3, 1e-5);
                        if !ok {
                            broken += 1;
                        }
                    }
                }
            }
        }
    }
    outcome(
        worst_sum <= 1e-12 && broken == 0 && checks > 0,
        format!(
            "max |sum - 1| = {worst_sum:.1e} over 1e4 free points (limit 1e-12); {broken}/{checks} boundary checks discontinuous"
        ),
    )
}

fn brute_edt(g: &OccupancyGrid<f64>) -> Vec<f64> {
    let (w, h) = (g.width as i64, g.height as i64);
    let mut obstacles = Vec::new();
    for j in -1..=h {
        for i in -1..=w {
            if i < 0 || j < 0 || i == w || j == h || g.is_occupied(i as usize, j as usize) {
                obstacles.push((i, j));
            }
        }
    }
    let mut out = Vec::with_capacity((w * h) as usize);
    for j in 0..h {
        for i in 0..w {
            let d2 = obstacles.iter().map(|&(a, b)| (a - i).pow(2) + (b - j).pow(2)).min().unwrap();
            out.push(cell_distance(d2, g.cell_size));
        }
    }
    out
}

fn edt_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatched = 0;
    for map in 0..50 {
        let density = 0.02 + 0.5 * (map as f64 / 50.0);
        let mut g = OccupancyGrid::empty(32, 32, 0.05).unwrap();
        for j in 0..32 {
            for i in 0..32 {
                g.set(i, j, rng.random_bool(density));
            }
        }
        if compute_edt(&g).dist != brute_edt(&g) {
            mismatched += 1;
        }
    }
    outcome(mismatched == 0, format!("{mismatched}/50 random 32x32 maps differ from brute force"))
}

/// Max relative error vs Euclidean distance strictly beyond `radius` cells, unit speed,
/// domain side `side` meters. The radius test is exact in integer cell offsets.
fn fmm_error(cells: usize, side: f64, radius: usize) -> f64 {
    let h = side / cells as f64;
    let g = OccupancyGrid::empty(cells, cells, h).unwrap();
    let src = (cells / 2, cells / 2);
    let f = fmm_solve(&g, &vec![1.0; cells * cells], &[src]).unwrap();
    let c = g.cell_center(src.0, src.1);
    let mut worst: f64 = 0.0;
    for j in 0..cells {
        for i in 0..cells {
            if i.abs_diff(src.0).pow(2) + j.abs_diff(src.1).pow(2) > radius * radius {
                let d = g.cell_center(i, j).dist(&c);
                worst = worst.max((f.time_at(i, j) - d).abs() / d);
            }
        }
    }
    worst
}

fn fmm_accuracy() -> Outcome {
    let coarse = fmm_error(128, 12.8, 5);
    // The same 1 m exclusion radius at each resolution.
    let half_64 = fmm_error(64, 12.8, 5);
    let half_128 = fmm_error(128, 12.8, 10);
    let half_256 = fmm_error(256, 12.8, 20);
    outcome(
        coarse <= 0.05 && half_128 < half_64 && half_256 < half_128,
        format!(
            "128x128 max relative error {:.2}% beyond 5 cells (limit 5%); at a fixed radius h -> h/2 -> h/4 gives {:.2}% -> {:.2}% -> {:.2}%",
            100.0 * coarse,
            100.0 * half_64,
            100.0 * half_128,
            100.0 * half_256
        ),
    )
}

struct Trained {
    model: FieldModel<f64>,
    log: TrainLog,
    pairs: Vec<(Config2<f64>, Config2<f64>)>,
    learned: Vec<fbnt::bench::QueryRecord>,
    fmm: Vec<fbnt::bench::QueryRecord>,
    train_secs: f64,
}

fn learned_sr(
    env: &Environment<f64>,
    run: &RunConfig,
    model: &FieldModel<f64>,
    pairs: &[(Config2<f64>, Config2<f64>)],
) -> fbnt::bench::EvalReport {
    let p = LearnedPlanner {
        model,
        cfg: run.plan.clone(),
    };
    evaluate_pairs(env, &run.env_id(), &[&p], pairs, run.eval.seed).unwrap()
}

fn train_bundled(env: &Environment<f64>, run: &RunConfig) -> Trained {
    let arch = run.arch.resolve().unwrap();
    let start = Instant::now();
    let (model, log) = train_variant(env, run, run.decomposition.n_per_axis, &arch, run.train.seed).unwrap();
    let train_secs = start.elapsed().as_secs_f64();
    let pairs = sample_pairs(env, PAIRS, run.eval.seed, run.d_safe()).unwrap();
    let fmm = FmmPlanner { d_safe: run.d_safe() };
    let learned = learned_sr(env, run, &model, &pairs).queries;
    let fmm = evaluate_pairs(env, &run.env_id(), &[&fmm], &pairs, run.eval.seed).unwrap().queries;
    Trained {
        model,
        log,
        pairs,
        learned,
        fmm,
        train_secs,
    }
}

fn end_to_end(run: &RunConfig, t: &Trained) -> Outcome {
    let ok = t.learned.iter().filter(|q| q.success).count();
    let sr = 100.0 * ok as f64 / t.pairs.len() as f64;
    let mut ratios: Vec<f64> = t
        .learned
        .iter()
        .zip(&t.fmm)
        .filter(|(l, f)| l.success && f.success && f.length > 0.0)
        .map(|(l, f)| l.length / f.length)
        .collect();
    let ratio = median(&mut ratios);
    let arch = run.arch.resolve().unwrap();
    outcome(
        sr >= 90.0 && ratio <= 1.20,
        format!(
            "SR {sr:.1}% over {} pairs (limit 90%), median length ratio vs fast marching {ratio:.3} (limit 1.20); {} epochs x {} steps, {} parameters, k={}, trained in {:.0} s",
            t.pairs.len(),
            run.train.epochs,
            run.train.steps_per_epoch,
            t.model.param_count(),
            arch.embed_dim,
            t.train_secs
        ),
    )
}

fn loss_trend(log: &TrainLog) -> Outcome {
    let n = log.epochs.len();
    let tenth = (n / 10).max(1);
    let mut first: Vec<f64> = log.epochs[..tenth].iter().map(|e| e.mean_loss).collect();
    let mut last: Vec<f64> = log.epochs[n - tenth..].iter().map(|e| e.mean_loss).collect();
    let (a, b) = (median(&mut first), median(&mut last));
    outcome(b < a, format!("median epoch loss first 10% {a:.4} -> last 10% {b:.4}"))
}

fn ablation(env: &Environment<f64>, run: &RunConfig, t: &Trained) -> Outcome {
    let arch = run.arch.resolve().unwrap();
    let decomposed = t.model.param_count();
    let single = matched_hidden(&arch, decomposed);
    let mut best_dec = 100.0 * t.learned.iter().filter(|q| q.success).count() as f64 / t.pairs.len() as f64;
    let mut best_single = f64::NEG_INFINITY;
    let mut single_params = 0;
    for s in 0..ABLATION_SEEDS {
        let seed = run.train.seed + s;
        if s > 0 {
            let (m, _) = train_variant(env, run, run.decomposition.n_per_axis, &arch, seed).unwrap();
            best_dec = best_dec.max(learned_sr(env, run, &m, &t.pairs).methods[0].sr);
        }
        let (m, _) = train_variant(env, run, 1, &single, seed).unwrap();
        single_params = m.param_count();
        best_single = best_single.max(learned_sr(env, run, &m, &t.pairs).methods[0].sr);
    }
    let gap = best_dec - best_single;
    outcome(
        gap >= ABLATION_MARGIN_PP,
        format!(
            "best-of-{ABLATION_SEEDS} SR: {}x{} decomposed {best_dec:.1}% ({decomposed} params) vs single domain {best_single:.1}% ({single_params} params, hidden {}); gap {gap:.1} pp (limit {ABLATION_MARGIN_PP})",
            run.decomposition.n_per_axis, run.decomposition.n_per_axis, single.hidden
        ),
    )
}

fn planner_speed(env: &Environment<f64>, run: &RunConfig, t: &Trained) -> Outcome {
    let mut times = Vec::with_capacity(t.pairs.len());
    for (s, g) in &t.pairs {
        let start = Instant::now();
        let _ = plan(&t.model, env, s, g, &run.plan);
        times.push(start.elapsed().as_secs_f64());
    }
    let med = median(&mut times);
    let rrt_cfg = RrtConfig {
        d_safe: run.rrt.d_safe.or(Some(run.d_safe())),
        ..run.rrt.clone()
    };
    let limit = rrt_cfg.time_limit;
    let rrt = RrtPlanner { cfg: rrt_cfg };
    let r = evaluate_pairs(env, &run.env_id(), &[&rrt], &t.pairs, run.eval.seed).unwrap();
    let worst = r.queries.iter().map(|q| q.time).fold(0.0, f64::max);
    let sr = r.methods[0].sr;
    // Small allowance for the final iteration and smoothing after the deadline check.
    let respects = worst <= limit + 0.5;
    outcome(
        med <= 0.2 && sr >= 95.0 && respects,
        format!(
            "median plan time {:.4} s (limit 0.2 s); RRT-Connect SR {sr:.1}% (limit 95%), slowest query {worst:.3} s (limit {limit} s)",
            med
        ),
    )
}

fn strip_timing(csv: &str) -> String {
    let mut lines = csv.lines();
    let Some(header) = lines.next() else { return String::new() };
    let keep: Vec<usize> = header
        .split(',')
        .enumerate()
        .filter(|(_, c)| !c.contains("time"))
        .map(|(i, _)| i)
        .collect();
    std::iter::once(header)
        .chain(lines)
        .map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            keep.iter().map(|&i| cols[i]).collect::<Vec<_>>().join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn determinism(run: &RunConfig, t: &Trained) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.json");
    t.model.save(&ckpt).unwrap();
    let mut cfg = run.clone();
    cfg.map.path = std::fs::canonicalize(&run.map.path).unwrap();
    cfg.model = Some(ModelSource { checkpoint: ckpt });
    cfg.eval.n_pairs = PAIRS;
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, cfg.to_json().unwrap()).unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        let status = Command::new(env!("CARGO_BIN_EXE_fbnt"))
            .args(["eval", "--config"])
            .arg(&cfg_path)
            .arg("--out-dir")
            .arg(&out)
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(
                false,
                format!("eval exited with {}: {}", status.status, String::from_utf8_lossy(&status.stderr)),
            );
        }
        let read = |f: &str| strip_timing(&std::fs::read_to_string(out.join(f)).unwrap());
        outputs.push((read("report.csv"), read("queries.csv")));
    }
    let same = outputs[0] == outputs[1];
    let rows = outputs[0].1.lines().count() - 1;
    outcome(
        same,
        format!("two eval runs over {rows} query rows: CSVs {} apart from timing columns", if same { "identical" } else { "differ" }),
    )
}

fn main() {
    let start = Instant::now();
    let mut results = Vec::new();
    let mut run = |id: &str, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let o = f();
        report(id, name, &o);
        results.push((id.to_string(), o.pass));
    };
    let config = bundled_config();
    let run_cfg = RunConfig::load(&config).expect("bundled run config");
    let env = run_cfg.environment().expect("bundled map");

    run("1", "configuration gradients", &mut configuration_gradients);
    run("2", "parameter gradients", &mut parameter_gradients);
    run("3", "generator exactness", &mut || generator_exactness(&env));
    run("4", "partition of unity", &mut || partition_of_unity(&env));
    run("5", "distance transform exactness", &mut edt_exactness);
    run("6", "fast marching accuracy", &mut fmm_accuracy);
    let trained = train_bundled(&env, &run_cfg);
    run("7", "end-to-end learning", &mut || end_to_end(&run_cfg, &trained));
    run("7a", "training loss trend", &mut || loss_trend(&trained.log));
    run("9", "planner speed", &mut || planner_speed(&env, &run_cfg, &trained));
    run("10", "evaluation determinism", &mut || determinism(&run_cfg, &trained));
    run("8", "decomposition ablation", &mut || ablation(&env, &run_cfg, &trained));

    let failed: Vec<_> = results.iter().filter(|r| !r.1).map(|r| r.0.clone()).collect();
    println!(
        "acceptance: {}/{} passed in {:.0} s{}",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
