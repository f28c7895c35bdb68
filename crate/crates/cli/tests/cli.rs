use std::path::Path;
use std::process::{Command, Output};

use fbnt::bench::{MapSpec, ModelSource, RunConfig};
use fbnt::decomposition::Decomposition;
use fbnt::field::{FieldModel, GeneratorParams};
use fbnt::gridworld::{Environment, OccupancyGrid};
use fbnt::siren::EncoderArch;

fn fbnt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fbnt")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a 32x32 two-room map and a small config next to it.
fn fixture(dir: &Path, edit: impl FnOnce(&mut RunConfig)) -> std::path::PathBuf {
    let out = fbnt(&["gen-map", "--width", "32", "--height", "32", "--rooms", "2", "--seed", "3", "--out", p(&dir.join("map.pgm"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut cfg = RunConfig::new(MapSpec {
        path: "map.pgm".into(),
        cell_size: 0.1,
        origin: [0.0, 0.0],
        id: Some("two-room".into()),
    });
    cfg.eval.n_pairs = 12;
    cfg.eval.methods = vec!["fmm".into(), "rrt".into()];
    cfg.train.epochs = 3;
    cfg.train.batch_size = 16;
    edit(&mut cfg);
    let path = dir.join("run.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn gen_map_writes_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pgm");
    let out = fbnt(&["gen-map", "--rooms", "4", "--seed", "2", "--out", p(&path)]);
    assert!(out.status.success());
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"P5"));
    assert!(bytes.len() > 64 * 64);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(fbnt(&["eval", "--bogus"]).status.code(), Some(2));
    assert_eq!(fbnt(&["no-such-command"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), |_| {});
    std::fs::remove_file(dir.path().join("map.pgm")).unwrap();
    let out = fbnt(&["eval", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("map.pgm"), "{msg}");
}

#[test]
fn eval_report_is_recomputable_from_queries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), |_| {});
    let out_dir = dir.path().join("out");
    let out = fbnt(&["eval", "--config", p(&cfg), "--out-dir", p(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, summary) = parse_csv(&std::fs::read_to_string(out_dir.join("report.csv")).unwrap());
    assert_eq!(header, ["method", "sr", "mean_time", "std_time", "mean_len", "std_len"]);
    let (qh, queries) = parse_csv(&std::fs::read_to_string(out_dir.join("queries.csv")).unwrap());
    let col = |name: &str| qh.iter().position(|c| c == name).unwrap();
    for row in &summary {
        let mine: Vec<&Vec<String>> = queries.iter().filter(|q| q[col("method")] == row[0]).collect();
        assert_eq!(mine.len(), 12);
        let ok: Vec<&&Vec<String>> = mine.iter().filter(|q| q[col("success")] == "1").collect();
        let sr = 100.0 * ok.len() as f64 / mine.len() as f64;
        let lens: Vec<f64> = ok.iter().map(|q| q[col("length")].parse().unwrap()).collect();
        let mean = lens.iter().sum::<f64>() / lens.len() as f64;
        let std = (lens.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / lens.len() as f64).sqrt();
        let got = |k: usize| row[k].parse::<f64>().unwrap();
        assert!((got(1) - sr).abs() <= 1e-9);
        assert!((got(4) - mean).abs() <= 1e-9);
        assert!((got(5) - std).abs() <= 1e-9);
    }
    // Pair fairness: both methods saw the same start/goal list.
    let pairs = |m: &str| -> Vec<String> {
        queries
            .iter()
            .filter(|q| q[col("method")] == m)
            .map(|q| q[col("start_x")..=col("goal_y")].join(","))
            .collect()
    };
    assert_eq!(pairs("fmm"), pairs("rrt"));
}

#[test]
fn out_dir_defaults_to_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), |c| {
        c.eval.methods = vec!["fmm".into()];
        c.eval.n_pairs = 3;
    });
    let target = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_fbnt"))
        .args(["eval", "--config", p(&cfg)])
        .env("FBNT_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.join("report.csv").is_file());
}

fn saved_model(dir: &Path) -> std::path::PathBuf {
    let bytes = std::fs::read(dir.join("map.pgm")).unwrap();
    let g: OccupancyGrid<f64> = fbnt::gridworld::load_pgm(&bytes, 0.1, fbnt::Config2::new(0.0, 0.0)).unwrap();
    let env = Environment::with_default_speed(g);
    let d = Decomposition::build(env.bounds(), 2, 1.0).unwrap().prune(&env.field).unwrap();
    let m = FieldModel::init(d, &EncoderArch::small(), &GeneratorParams::default(), env.speed, 1).unwrap();
    let path = dir.join("model.json");
    m.save(&path).unwrap();
    path
}

#[test]
fn plan_between_coincident_points_is_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), |_| {});
    let model = saved_model(dir.path());
    let out = fbnt(&["plan", "--config", p(&cfg), "--model", p(&model), "--start", "0.5,0.5", "--goal", "0.5,0.5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2, "{text}");
    assert!(text.starts_with("x,y\n"));
}

#[test]
fn plan_into_obstacle_is_planner_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), |_| {});
    let model = saved_model(dir.path());
    // The border ring is occupied.
    let out = fbnt(&["plan", "--config", p(&cfg), "--model", p(&model), "--start", "0.01,0.01", "--goal", "1.5,1.5"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), |c| c.arch = fbnt::bench::ArchSpec::Tier("small".into()));
    let ckpt = dir.path().join("trained.json");
    let out = fbnt(&["train", "--config", p(&cfg), "--out", p(&ckpt), "--epochs", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(FieldModel::<f64>::load(&ckpt).is_ok());
    let log = std::fs::read_to_string(dir.path().join("trained.log.csv")).unwrap();
    assert!(log.starts_with("epoch,mean_loss,epoch_seconds\n"));
    assert_eq!(log.lines().count(), 5);

    // A config naming the checkpoint evaluates it without retraining.
    let with_model = fixture(dir.path(), |c| {
        c.model = Some(ModelSource { checkpoint: "trained.json".into() });
        c.eval.methods = vec!["learned".into()];
        c.eval.n_pairs = 4;
    });
    let out = fbnt(&["eval", "--config", p(&with_model), "--out-dir", p(&dir.path().join("e"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fmm_dump_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture(dir.path(), |_| {});
    let times = dir.path().join("times.csv");
    let out = fbnt(&["fmm", "--config", p(&cfg), "--source", "0.5,0.5", "--out", p(&times), "--start", "2.5,2.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (h, rows) = parse_csv(&std::fs::read_to_string(&times).unwrap());
    assert_eq!(h, ["i", "j", "time"]);
    assert_eq!(rows.len(), 32 * 32);
    let path = dir.path().join("times.path.csv");
    assert!(std::fs::read_to_string(&path).unwrap().lines().count() > 2);

    let img = dir.path().join("fmm.ppm");
    let out = fbnt(&[
        "render", "--config", p(&cfg), "--overlay", "fmm", "--source", "0.5,0.5", "--path", p(&path), "--scale", "2",
        "--out", p(&img),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read(&img).unwrap().starts_with(b"P6\n64 64\n255\n"));
    let out = fbnt(&["render", "--config", p(&cfg), "--overlay", "fmm", "--out", p(&img)]);
    assert_eq!(out.status.code(), Some(2));
}
