use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use gmop::evaljoint::{joint_min_ade, read_reports, read_summary, scene_seed, write_reports, MetricsReport};
use gmop::graphs::GraphStrategy;
use gmop::model::{predict_scene, ModelBundle};
use gmop::scene::load_scenes;
use tempfile::TempDir;

fn gmop(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmop")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = gmop(args, cwd);
    assert!(
        out.status.success(),
        "gmop {args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> i32 {
    gmop(args, cwd).status.code().expect("exit code")
}

const SMALL: &str = "\
[pretrain.autoencoder]
steps = 200
[pretrain.classifier]
epochs = 4
batch_size = 16
[train.model]
epochs = 3
latent_dim = 16
";

/// A tiny corpus with pretrained networks and two trained bundles, shared by the slower tests.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn path(&self) -> &Path {
        self.dir.path()
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        fs::write(p.join("small.toml"), SMALL).unwrap();
        ok(&["generate", "--out", "data", "--n", "60", "--seed", "3"], p);
        ok(&["generate", "--out", "test", "--n", "12", "--seed", "4"], p);
        ok(&["--config", "small.toml", "pretrain", "both", "--scenes", "data/scenes.jsonl", "--out", "pre"], p);
        for (variant, extra) in [("independence", None), ("crossing", Some("pre/classifier"))] {
            let out = format!("bundles/{variant}");
            let mut args = vec![
                "--config",
                "small.toml",
                "train",
                "--variant",
                variant,
                "--scenes",
                "data/scenes.jsonl",
                "--autoencoder",
                "pre/autoencoder",
                "--out",
                &out,
            ];
            if let Some(c) = extra {
                args.extend(["--classifier", c]);
            }
            ok(&args, p);
        }
        Fixture { dir }
    })
}

#[test]
fn generate_writes_preset_horizons_and_repeats_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let flags = ["--template", "crossing-intersection", "--n", "200", "--seed", "7", "--preset", "interaction-like"];
    for out in ["a", "b"] {
        let mut args = vec!["generate", "--out", out];
        args.extend(flags);
        ok(&args, p);
    }
    let a = fs::read(p.join("a/scenes.jsonl")).unwrap();
    assert_eq!(a, fs::read(p.join("b/scenes.jsonl")).unwrap());
    let scenes = load_scenes(&p.join("a/scenes.jsonl")).unwrap();
    assert_eq!(scenes.len(), 200);
    assert!(scenes.iter().all(|s| s.n_past() == 10 && s.n_future() == 30));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["count"], 200);
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["template_mix"]["crossing-intersection"], 200);
}

#[test]
fn generate_rejects_zero_scenes_and_unknown_templates() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["generate", "--n", "0", "--out", "x"], dir.path()), 2);
    assert_eq!(code(&["generate", "--template", "highway", "--out", "x"], dir.path()), 2);
    assert_eq!(code(&["generate", "--preset", "kitti-like", "--out", "x"], dir.path()), 2);
    assert!(!dir.path().join("x").exists());
}

#[test]
fn config_file_sits_between_defaults_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("c.toml"), "[generate]\nn = 5\nseed = 11\nmax_agents = 3\n").unwrap();
    ok(&["--config", "c.toml", "generate", "--out", "file"], p);
    ok(&["--config", "c.toml", "generate", "--out", "flag", "--n", "3"], p);
    ok(&["generate", "--out", "default"], p);
    let count = |d: &str| load_scenes(&p.join(d).join("scenes.jsonl")).unwrap().len();
    assert_eq!((count("file"), count("flag"), count("default")), (5, 3, 200));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("flag/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["n"], 3);
    assert_eq!(m["config"]["seed"], 11);
    assert_eq!(m["config"]["max_agents"], 3);
    assert_eq!(m["config"]["min_agents"], 2);

    fs::write(p.join("bad.toml"), "[generate]\nscenes_per_batch = 5\n").unwrap();
    assert_eq!(code(&["--config", "bad.toml", "generate", "--out", "bad"], p), 4);
    assert_eq!(code(&["--config", "missing.toml", "generate", "--out", "bad"], p), 2);
}

fn agreement(p: &Path, a: &str, b: &str) -> (f64, f64) {
    let mut r = csv::Reader::from_path(p).unwrap();
    for rec in r.records() {
        let rec = rec.unwrap();
        if &rec[0] == a && &rec[1] == b {
            return (rec[3].parse().unwrap(), rec[5].parse().unwrap());
        }
    }
    panic!("no row {a},{b}");
}

#[test]
fn graphs_report_empty_independence_and_exact_flip_disagreement() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["generate", "--out", "d", "--n", "150", "--seed", "5"], p);
    let before = fs::read(p.join("d/scenes.jsonl")).unwrap();
    ok(&["graphs", "--scenes", "d/scenes.jsonl", "--out", "g"], p);
    assert_eq!(before, fs::read(p.join("d/scenes.jsonl")).unwrap());

    let dumps = fs::read_to_string(p.join("g/graphs.jsonl")).unwrap();
    let mut per_strategy = std::collections::HashMap::<String, usize>::new();
    for line in dumps.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let s = v["strategy"].as_str().unwrap().to_string();
        if s == "independence" {
            assert!(v["edges"].as_array().unwrap().is_empty());
        }
        *per_strategy.entry(s).or_default() += 1;
    }
    assert_eq!(per_strategy.len(), 6);
    assert!(per_strategy.values().all(|&n| n == 150));

    let csv = p.join("g/agreement.csv");
    let (_, dir_flip) = agreement(&csv, "crossing", "flipped-crossing");
    assert_eq!(dir_flip, 0.0);
    let (_, dir_hflip) = agreement(&csv, "hypothetical-crossing", "flipped-hypothetical-crossing");
    assert_eq!(dir_hflip, 0.0);
    let (same, _) = agreement(&csv, "crossing", "crossing");
    assert_eq!(same, 1.0);

    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("g/manifest.json")).unwrap()).unwrap();
    let crossing = &m["strategies"]["crossing"];
    assert!(crossing["interacting_pairs"].as_u64().unwrap() > 50);
    assert!(crossing["direction_accuracy"].as_f64().unwrap() >= 0.95);
    assert!(m["strategies"]["flipped-crossing"]["reversed_accuracy"].as_f64().unwrap() >= 0.95);
    assert_eq!(m["strategies"]["independence"]["empty_graphs"], 150);
}

#[test]
fn graphs_reject_unknown_or_learned_strategies_and_missing_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["generate", "--out", "d", "--n", "5"], p);
    assert_eq!(code(&["graphs", "--scenes", "d/scenes.jsonl", "--strategies", "crossing,telepathy"], p), 2);
    assert_eq!(code(&["graphs", "--scenes", "d/scenes.jsonl", "--strategies", "no-heuristic"], p), 2);
    assert_eq!(code(&["graphs", "--scenes", "nowhere.jsonl"], p), 2);
    assert_eq!(code(&["graphs"], p), 2);
}

#[test]
fn pretrain_autoencoder_alone_needs_no_classifier_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["generate", "--out", "d", "--n", "30", "--seed", "2"], p);
    for out in ["p1", "p2"] {
        let stdout = ok(
            &["pretrain", "autoencoder", "--scenes", "d/scenes.jsonl", "--out", out, "--ae-steps", "60", "--ae-seed", "4"],
            p,
        );
        assert!(stdout.contains("reconstruction error"));
        assert!(!p.join(out).join("classifier").exists());
    }
    for f in ["autoencoder.ckpt", "curve.csv"] {
        let a = fs::read(p.join("p1/autoencoder").join(f)).unwrap();
        assert_eq!(a, fs::read(p.join("p2/autoencoder").join(f)).unwrap(), "{f} differs");
    }
    let curve = fs::read_to_string(p.join("p1/autoencoder/curve.csv")).unwrap();
    assert!(curve.starts_with("step,loss\n"));
    assert_eq!(code(&["pretrain", "autoencoder", "--scenes", "absent.jsonl"], p), 2);
    assert_eq!(code(&["pretrain", "classifier", "--scenes", "d/scenes.jsonl", "--strategy", "euclidean"], p), 2);
}

#[test]
fn classifier_pretraining_prints_confusion_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("c.toml"), "[pretrain.classifier]\nepochs = 3\nenc_dim = 8\nembed_dim = 16\n").unwrap();
    ok(&["generate", "--out", "d", "--n", "40", "--seed", "8"], p);
    let mut outputs = Vec::new();
    for out in ["c1", "c2"] {
        let stdout = ok(&["--config", "c.toml", "pretrain", "classifier", "--scenes", "d/scenes.jsonl", "--out", out], p);
        outputs.push(stdout);
    }
    let table: Vec<&str> = outputs[0].lines().skip_while(|l| !l.contains("true\\pred")).take(4).collect();
    assert_eq!(table.len(), 4);
    for (row, name) in table[1..].iter().zip(["none", "m->n", "n->m"]) {
        let cells: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(cells[0], name);
        assert_eq!(cells.len(), 4);
        assert!(cells[1..].iter().all(|c| c.parse::<usize>().is_ok()));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(
        fs::read(p.join("c1/classifier/classifier.ckpt")).unwrap(),
        fs::read(p.join("c2/classifier/classifier.ckpt")).unwrap()
    );
    assert!(!p.join("c1/autoencoder").exists());
}

#[test]
fn training_dependencies_are_checked_before_any_work() {
    let f = fixture();
    let p = f.path();
    let base = ["--config", "small.toml", "train", "--scenes", "data/scenes.jsonl"];
    let run = |extra: &[&str]| {
        let mut args: Vec<&str> = base.to_vec();
        args.extend(extra);
        gmop(&args, p)
    };
    let out = run(&["--variant", "crossing", "--autoencoder", "pre/autoencoder", "--out", "nope"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("classifier"));
    assert!(!p.join("nope").exists());

    let out = run(&["--variant", "independence", "--out", "nope"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("autoencoder"));
    assert_eq!(run(&["--variant", "independence", "--autoencoder", "missing-dir", "--out", "nope"]).status.code(), Some(3));

    let out = run(&["--variant", "hypothetical-crossing", "--autoencoder", "pre/autoencoder", "--classifier", "pre/classifier", "--out", "nope"]);
    assert_eq!(out.status.code(), Some(4), "classifier trained for another strategy");
    assert_eq!(run(&["--variant", "independence", "--autoencoder", "pre/autoencoder", "--lr", "1e200", "--out", "div"]).status.code(), Some(5));
    assert!(p.join("div/epochs.csv").is_file());
}

#[test]
fn locked_bundle_directory_refuses_a_second_writer() {
    let f = fixture();
    let p = f.path();
    fs::create_dir_all(p.join("locked")).unwrap();
    fs::write(p.join("locked/.lock"), "1\n").unwrap();
    let args = [
        "--config",
        "small.toml",
        "train",
        "--variant",
        "independence",
        "--scenes",
        "data/scenes.jsonl",
        "--autoencoder",
        "pre/autoencoder",
        "--out",
        "locked",
    ];
    assert_eq!(code(&args, p), 1);
    assert!(!p.join("locked/manifest.json").exists());
}

#[test]
fn trained_bundles_carry_config_and_a_monotone_best_column() {
    let f = fixture();
    for variant in ["independence", "crossing"] {
        let dir = f.path().join("bundles").join(variant);
        let mut r = csv::Reader::from_path(dir.join("epochs.csv")).unwrap();
        assert_eq!(r.headers().unwrap(), vec!["epoch", "train_nll", "val_nll", "best_val_nll"]);
        let rows: Vec<Vec<f64>> = r.records().map(|x| x.unwrap().iter().map(|c| c.parse().unwrap()).collect()).collect();
        assert_eq!(rows.len(), 4);
        let mut running = f64::INFINITY;
        for w in &rows {
            running = running.min(w[2]);
            assert_eq!(w[3], running);
        }
        assert!(rows.windows(2).all(|w| w[1][3] <= w[0][3]));
        let bundle = ModelBundle::load(&dir).unwrap();
        assert_eq!(bundle.manifest.variant.strategy.name(), variant);
        assert_eq!(bundle.manifest.extra["config"]["model"]["epochs"], 3);
        assert_eq!(bundle.manifest.classifier.is_some(), variant == "crossing");
        assert!(!dir.join(".lock").exists());
    }
}

#[test]
fn evaluation_defaults_and_seeding() {
    let f = fixture();
    let p = f.path();
    let eval = |out: &str, extra: &[&str]| {
        let mut args = vec!["evaluate", "--bundle", "bundles/crossing", "--scenes", "test/scenes.jsonl", "--out", out];
        args.extend(extra);
        ok(&args, p);
        fs::read(p.join(out)).unwrap()
    };
    let a = eval("e/a.csv", &[]);
    let b = eval("e/b.csv", &[]);
    let c = eval("e/c.csv", &["--eval-seed", "9"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let report = &read_reports(&p.join("e/a.csv")).unwrap()[0];
    assert_eq!((report.samples, report.max_samples, report.eval_seed), (6, 100, 0));
    assert_eq!(report.variant, "crossing");
    assert!(report.classifier_accuracy.is_some());
    assert!(p.join("e/a.manifest.json").is_file());

    assert_eq!(code(&["evaluate", "--bundle", "bundles/absent", "--scenes", "test/scenes.jsonl"], p), 2);
    assert_eq!(code(&["evaluate", "--scenes", "test/scenes.jsonl"], p), 2);
    assert_eq!(code(&["evaluate", "--bundle", "bundles/crossing", "--scenes", "test/scenes.jsonl", "--samples", "0", "--out", "e/z.csv"], p), 4);
}

#[test]
fn one_sample_min_ade_is_the_ade_of_that_sample() {
    let f = fixture();
    let p = f.path();
    ok(
        &["evaluate", "--bundle", "bundles/independence", "--scenes", "test/scenes.jsonl", "--out", "one/m.csv", "--samples", "1", "--eval-seed", "5"],
        p,
    );
    let report = &read_reports(&p.join("one/m.csv")).unwrap()[0];
    let bundle = ModelBundle::load(&p.join("bundles/independence")).unwrap();
    let scenes = load_scenes(&p.join("test/scenes.jsonl")).unwrap();
    let mut total = 0.0;
    for (i, s) in scenes.iter().enumerate() {
        let draws = predict_scene(&s.observed(), &bundle, 100, scene_seed(5, i)).unwrap();
        let truth: Vec<Vec<[f64; 2]>> = s.future_positions().iter().map(|t| t.iter().map(|v| v.to_array()).collect()).collect();
        let (n, steps) = (truth.len(), truth[0].len());
        let mut ade = 0.0;
        for (a, t) in draws[0].iter().zip(&truth) {
            for (x, y) in a.iter().zip(t) {
                ade += (x[0] - y[0]).hypot(x[1] - y[1]);
            }
        }
        ade /= (n * steps) as f64;
        assert_eq!(joint_min_ade(&draws[..1], &truth).unwrap(), ade);
        total += ade;
    }
    assert!((report.joint_min_ade - total / scenes.len() as f64).abs() < 1e-12);
}

fn synthetic_report(variant: &str, seed: u64, ade: f64, nll: f64, acc: Option<f64>) -> MetricsReport {
    MetricsReport {
        variant: variant.to_string(),
        seed,
        joint_min_ade: ade,
        joint_min_fde: 2.0 * ade,
        joint_nll: nll,
        classifier_accuracy: acc,
        n_scenes: 10,
        samples: 6,
        max_samples: 100,
        eval_seed: 0,
        nll_estimator: "gaussian-kde".into(),
    }
}

#[test]
fn compare_aggregates_every_variant_and_marks_the_best() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut expected = Vec::new();
    for (k, s) in GraphStrategy::ALL.iter().enumerate() {
        let mut nlls = Vec::new();
        for seed in 0..5u64 {
            let ade = 1.0 + 0.1 * k as f64 + 0.01 * seed as f64;
            let nll = 50.0 - 3.0 * ((k + 3) % 7) as f64 + seed as f64;
            let acc = s.needs_pretrained_classifier().then_some(0.8 + 0.01 * k as f64);
            nlls.push(nll);
            let path: PathBuf = p.join("runs").join(s.name()).join(format!("seed{seed}.csv"));
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            write_reports(&path, &[synthetic_report(s.name(), seed, ade, nll, acc)]).unwrap();
        }
        expected.push((s.name(), nlls.iter().sum::<f64>() / 5.0));
    }
    fs::write(p.join("runs/notes.txt"), "not a metrics file").unwrap();
    let stdout = ok(&["compare", "--runs", "runs", "--out", "out/summary.csv", "--plot", "out/plot.svg"], p);
    let rows = read_summary(&p.join("out/summary.csv")).unwrap();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.runs == 5));

    let best_nll = expected.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    for (name, mean) in &expected {
        let row = rows.iter().find(|r| r.variant == *name).unwrap();
        assert!((row.joint_nll_mean - mean).abs() < 1e-9);
        assert_eq!(row.best_nll, *mean == best_nll, "{name}");
        assert_eq!(row.best_ade, *name == "independence");
        assert!((row.joint_nll_std - (2.5f64).sqrt()).abs() < 1e-9);
    }
    let best_acc = rows.iter().filter(|r| r.best_accuracy).map(|r| r.variant.as_str()).collect::<Vec<_>>();
    assert_eq!(best_acc, vec!["flipped-hypothetical-crossing"]);
    assert!(stdout.contains("trend crossing <= no-heuristic on mean joint NLL"));
    let trend: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("out/trend.json")).unwrap()).unwrap();
    let nll_of = |n: &str| expected.iter().find(|e| e.0 == n).unwrap().1;
    assert_eq!(trend["holds"], nll_of("crossing") <= nll_of("no-heuristic"));
    let svg = fs::read_to_string(p.join("out/plot.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<circle").count(), 3 * 35);
}

#[test]
fn compare_single_run_has_zero_spread_and_empty_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_reports(&p.join("m.csv"), &[synthetic_report("euclidean", 3, 1.5, 40.0, None)]).unwrap();
    ok(&["compare", "--runs", "m.csv", "--out", "s.csv"], p);
    let rows = read_summary(&p.join("s.csv")).unwrap();
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!((r.joint_min_ade_std, r.joint_min_fde_std, r.joint_nll_std), (0.0, 0.0, 0.0));
    assert!(r.best_ade && r.best_fde && r.best_nll);
    let trend = fs::read_to_string(p.join("trend.json")).unwrap();
    assert_eq!(trend.trim(), "null");

    fs::create_dir_all(p.join("empty")).unwrap();
    assert_eq!(code(&["compare", "--runs", "empty"], p), 2);
    assert_eq!(code(&["compare"], p), 2);
    assert_eq!(code(&["compare", "--runs", "ghost.csv"], p), 2);
}
