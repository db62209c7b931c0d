use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aperture_forge::corpus;
use aperture_forge::io;
use aperture_forge::metrics::PatternEvaluator;
use aperture_forge::pattern::AperturePattern;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_aperture-forge");

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("APERTURE_FORGE_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run_in(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn manifest(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["focus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn bad_flag_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["evaluate", "--scales", "5:2"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run_in(dir.path(), &["search", "--out-dir", "s", "--population", "7"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_and_malformed_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["evaluate", "--pattern", "absent.txt"]);
    assert_eq!(o.status.code(), Some(2));
    fs::write(dir.path().join("bad.txt"), "0101\n").unwrap();
    let o = run_in(dir.path(), &["evaluate", "--pattern", "bad.txt"]);
    assert_eq!(o.status.code(), Some(2));
    // the manifest still comes first, without a duration
    let m = manifest(&dir.path().join("evaluate.manifest.json"));
    assert!(m["duration_s"].is_null());
}

#[test]
fn thread_variable_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args(["evaluate", "--csv"])
        .current_dir(dir.path())
        .env("APERTURE_FORGE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(BIN)
        .args(["evaluate", "--csv"])
        .current_dir(dir.path())
        .env("APERTURE_FORGE_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(manifest(&dir.path().join("evaluate.manifest.json"))["threads"], 1);
}

#[test]
fn evaluate_prints_the_three_scores() {
    let dir = tempfile::tempdir().unwrap();
    let p = AperturePattern::circular();
    io::write_pattern(&dir.path().join("p.txt"), &p).unwrap();
    io::write_config(&dir.path().join("c.cfg"), &Default::default()).unwrap();
    io::write_prior(&dir.path().join("a.txt"), &corpus::metric_prior()).unwrap();
    let out = ok(
        dir.path(),
        &[
            "evaluate",
            "--pattern",
            "p.txt",
            "--config",
            "c.cfg",
            "--prior",
            "a.txt",
            "--csv",
        ],
    );
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), "aperture,open,r_max,d_min,d_r_min");
    let cells: Vec<&str> = lines.next().unwrap().split(',').collect();
    let expect = PatternEvaluator::standard().score_pattern(&p).unwrap();
    let got: Vec<f64> = cells[2..].iter().map(|c| c.parse().unwrap()).collect();
    for (g, e) in got.iter().zip([expect.r_max, expect.d_min, expect.d_r_min]) {
        assert!((g - e).abs() <= 1e-9 * e.abs().max(1.0), "{g} vs {e}");
    }
    let m = manifest(&dir.path().join("evaluate.manifest.json"));
    assert_eq!(m["subcommand"], "evaluate");
    assert!(m["duration_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(m["parameters"]["evaluate"]["imaging"]["scales"], "1:10");
}

#[test]
fn identity_simulation_returns_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let sharp = corpus::dead_leaves(40, 30, 5);
    io::write_pgm(&dir.path().join("x.pgm"), &sharp).unwrap();
    ok(
        dir.path(),
        &[
            "simulate", "--image", "x.pgm", "--scale", "1", "--sigma", "0", "--out", "y.pgm",
        ],
    );
    let a = fs::read(dir.path().join("x.pgm")).unwrap();
    let b = fs::read(dir.path().join("y.pgm")).unwrap();
    assert_eq!(a, b);
    assert!(dir.path().join("y.pgm.manifest.json").exists());
    let truth = io::read_scale_map(&dir.path().join("y.pgm.truth.txt")).unwrap();
    assert_eq!(truth.legend(), &[1]);
}

#[test]
fn batch_grid_writes_every_cell_and_an_index() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "simulate",
            "--dead-leaves",
            "32",
            "--scales",
            "1:14",
            "--sigmas",
            "0.001,0.005,0.01",
            "--out-dir",
            "grid",
        ],
    );
    let grid = dir.path().join("grid");
    let pgms = fs::read_dir(&grid)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert_eq!(pgms, 42);
    let index = fs::read_to_string(grid.join("index.csv")).unwrap();
    assert_eq!(index.lines().count(), 43);
    for line in index.lines().skip(1) {
        let file = line.split(',').next().unwrap();
        assert!(io::read_pgm(&grid.join(file)).is_ok());
    }
    let m = manifest(&grid.join("manifest.json"));
    assert_eq!(m["outputs"].as_array().unwrap().len(), 43);
    assert_eq!(m["seeds"]["noise"], 0);
}

#[test]
fn two_region_scene_has_label_truth() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "simulate",
            "--dead-leaves",
            "40",
            "--scale",
            "3",
            "--region-scale",
            "-7",
            "--split",
            "10",
            "--out",
            "two.pgm",
        ],
    );
    let truth = io::read_scale_map(&dir.path().join("two.pgm.truth.txt")).unwrap();
    assert_eq!(truth.scale_at(9, 20), 3);
    assert_eq!(truth.scale_at(10, 0), -7);
    assert_eq!(io::read_pgm(&dir.path().join("two.pgm")).unwrap().dims(), (40, 40));
}

#[test]
fn rerunning_a_manifest_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--dead-leaves",
        "48",
        "--scale",
        "-6",
        "--sigma",
        "0.01",
        "--seed",
        "11",
        "--out",
        "a/y.pgm",
    ];
    ok(dir.path(), &args);
    let first = fs::read(dir.path().join("a/y.pgm")).unwrap();
    let m = manifest(&dir.path().join("a/y.pgm.manifest.json"));
    let argv: Vec<String> = m["argv"].as_array().unwrap()[1..]
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    fs::remove_dir_all(dir.path().join("a")).unwrap();
    let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
    ok(dir.path(), &argv);
    assert_eq!(fs::read(dir.path().join("a/y.pgm")).unwrap(), first);
}

#[test]
fn depth_recovers_a_uniform_signed_scale() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "simulate",
            "--dead-leaves",
            "64",
            "--scale",
            "5",
            "--sigma",
            "0.001",
            "--seed",
            "2",
            "--out",
            "y.pgm",
        ],
    );
    let out = ok(
        dir.path(),
        &[
            "depth",
            "--image",
            "y.pgm",
            "--scales=-10:10",
            "--stride",
            "16",
            "--out-dir",
            "d",
        ],
    );
    assert!(out.contains("modal scale: 5"), "{out}");
    let map = io::read_scale_map(&dir.path().join("d/depth.txt")).unwrap();
    assert_eq!(map.modal_scale(), 5);
    let (w, h, labels) = io::read_label_pgm(&dir.path().join("d/depth_labels.pgm")).unwrap();
    assert_eq!((w, h), (64, 64));
    // labels index the full -10..10 bank, where +5 sits at position 14
    assert!(labels.iter().all(|&l| l == 14));

    // the scale map drives a spatially varying deblur
    ok(
        dir.path(),
        &[
            "deblur",
            "--image",
            "y.pgm",
            "--depth",
            "d/depth.txt",
            "--method",
            "wiener",
            "--out",
            "x.pgm",
        ],
    );
    assert_eq!(io::read_pgm(&dir.path().join("x.pgm")).unwrap().dims(), (64, 64));
}

#[test]
fn deblur_improves_on_the_blurred_input() {
    let dir = tempfile::tempdir().unwrap();
    let sharp = corpus::dead_leaves(64, 64, 8);
    io::write_pgm(&dir.path().join("x.pgm"), &sharp).unwrap();
    ok(
        dir.path(),
        &[
            "simulate", "--image", "x.pgm", "--scale", "7", "--sigma", "0.002", "--out", "y.pgm",
        ],
    );
    ok(
        dir.path(),
        &["deblur", "--image", "y.pgm", "--scale", "7", "--out", "z.pgm"],
    );
    let blurred = io::read_pgm(&dir.path().join("y.pgm")).unwrap();
    let restored = io::read_pgm(&dir.path().join("z.pgm")).unwrap();
    assert!(restored.rmse(&sharp).unwrap() < blurred.rmse(&sharp).unwrap());
    let o = run_in(
        dir.path(),
        &[
            "deblur", "--image", "y.pgm", "--scale", "7", "--method", "lucy", "--out", "q.pgm",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn quality_ranks_the_true_kernel_first() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "simulate",
            "--dead-leaves",
            "48",
            "--scale",
            "6",
            "--sigma",
            "0.001",
            "--out",
            "y.pgm",
        ],
    );
    let out = ok(dir.path(), &["quality", "--blurred", "y.pgm", "--scales", "4:8"]);
    assert!(out.contains("best scale: 6"), "{out}");
    let csv = ok(
        dir.path(),
        &["quality", "--blurred", "y.pgm", "--deblurred", "y.pgm", "--csv"],
    );
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn prior_output_loads_and_matches_the_bundled_prior() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["prior", "--size", "64", "--out", "a.txt"]);
    let written = io::read_prior(&dir.path().join("a.txt"))
        .unwrap()
        .normalized_to_unit_mean();
    let bundled = corpus::metric_prior();
    for (a, b) in written.values().iter().zip(bundled.values()) {
        assert!((a - b).abs() <= 1e-9 * b.abs(), "{a} vs {b}");
    }
}

#[test]
fn small_search_writes_its_front() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "search",
            "--out-dir",
            "s",
            "--population",
            "12",
            "--generations",
            "3",
            "--seed",
            "4",
            "--scales",
            "1:6",
        ],
    );
    let s = dir.path().join("s");
    let selected = io::read_pattern(&s.join("selected.txt")).unwrap();
    let front = fs::read_to_string(s.join("front.csv")).unwrap();
    assert!(front
        .lines()
        .skip(1)
        .any(|l| l.starts_with(&selected.bit_string()) && l.ends_with(",1")));
    assert_eq!(fs::read_to_string(s.join("trace.csv")).unwrap().lines().count(), 5);
    assert_eq!(manifest(&s.join("manifest.json"))["seeds"]["ga"], 4);
}
