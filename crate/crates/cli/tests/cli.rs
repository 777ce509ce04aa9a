use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use ali_cli::config::{self, ExperimentConfig};
use ali_cli::plot::render_svg;
use ali_core::data::{gen_knot, KnotSpec, TrajectorySet};

const FAST: [&str; 6] = ["--set", "ali.iterations=40", "--set", "cfm.iterations=40", "--set", "rollout.steps=20"];

fn ali(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ali"))
        .args(args)
        .env("ALI_OUTPUT_ROOT", root)
        .output()
        .expect("run the ali binary")
}

fn gaussian(root: &Path, verb: &[&str], extra: &[&str]) -> Output {
    let mut args: Vec<&str> = verb.to_vec();
    args.extend(["--preset", "gaussian"]);
    args.extend(FAST);
    args.extend(extra);
    ali(root, &args)
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn configuration_errors_exit_with_2() {
    let root = tempfile::tempdir().unwrap();
    assert_code(&ali(root.path(), &["gen-data", "--preset", "nope"]), 2);
    assert_code(&ali(root.path(), &["gen-data"]), 2);
    assert_code(&gaussian(root.path(), &["gen-data"], &["--set", "ali.nope=1"]), 2);
    assert_code(&gaussian(root.path(), &["gen-data"], &["--set", "ali.batch_size=0"]), 2);
    assert_code(&gaussian(root.path(), &["gen-data"], &["--set", "novalue"]), 2);
    assert_code(&ali(root.path(), &["no-such-verb"]), 2);
}

#[test]
fn divergence_exits_with_3() {
    let root = tempfile::tempdir().unwrap();
    assert_code(&gaussian(root.path(), &["gen-data"], &[]), 0);
    let out = gaussian(root.path(), &["train-ali"], &["--set", "ali.divergence_threshold=1e-9"]);
    assert_code(&out, 3);
    // the checkpoint is still written for inspection
    assert!(root.path().join("gaussian/ali.ckpt").is_file());
}

#[test]
fn missing_and_corrupt_inputs_exit_with_4() {
    let root = tempfile::tempdir().unwrap();
    assert_code(&gaussian(root.path(), &["train-ali"], &[]), 4);
    assert_code(&ali(root.path(), &["gen-data", "--config", "/nonexistent/x.toml"]), 4);
    assert_code(&gaussian(root.path(), &["gen-data"], &[]), 0);
    assert_code(&gaussian(root.path(), &["rollout-eval"], &[]), 4);
    fs::write(root.path().join("gaussian/data.csv"), "t,x_1,x_2\n0.0,abc,1\n").unwrap();
    assert_code(&gaussian(root.path(), &["train-ali"], &[]), 4);
}

#[test]
fn overrides_reach_the_written_config() {
    let root = tempfile::tempdir().unwrap();
    let out = gaussian(root.path(), &["gen-data"], &["--set", "seed=17", "--set", "output_dir=custom"]);
    assert_code(&out, 0);
    let written = fs::read_to_string(root.path().join("custom/config.toml")).unwrap();
    let cfg = config::load(&written, &[]).unwrap();
    assert_eq!(cfg.seed, 17);
    assert_eq!(cfg.ali.iterations, 40);
    let shown = gaussian(root.path(), &["show-config"], &["--set", "seed=17", "--set", "output_dir=custom"]);
    assert_eq!(String::from_utf8(shown.stdout).unwrap(), written);
}

#[test]
fn config_serialisation_is_a_fixed_point() {
    for name in ["knot", "gaussian"] {
        let cfg = config::load(config::preset(name).unwrap(), &[]).unwrap();
        let text = cfg.to_toml();
        let again: ExperimentConfig = config::load(&text, &[]).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml(), text);
    }
}

#[test]
fn run_all_writes_every_artifact_in_the_documented_formats() {
    let root = tempfile::tempdir().unwrap();
    assert_code(&gaussian(root.path(), &["run-all"], &[]), 0);
    let dir = root.path().join("gaussian");
    let data = fs::read_to_string(dir.join("data.csv")).unwrap();
    let mut lines = data.lines();
    assert_eq!(lines.next(), Some("t,x_1,x_2"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    let mantissa = first[1].trim_start_matches('-').split('e').next().unwrap().replace('.', "");
    assert_eq!(mantissa.len(), 17, "{}", first[1]);
    let traj = fs::read_to_string(dir.join("trajectories.csv")).unwrap();
    assert!(traj.starts_with("traj_id,t,x_1,x_2\n"));
    let log = fs::read_to_string(dir.join("ali_log.csv")).unwrap();
    assert!(log.starts_with("iter,t_i,loss_disc,loss_gen,loss_reg\n"));
    assert_eq!(log.lines().count(), 41);
    let emd = fs::read_to_string(dir.join("emd.csv")).unwrap();
    assert!(emd.starts_with("t,emd_euclidean\n"));
    assert!(emd.lines().last().unwrap().starts_with("mean,"));
    let svg = fs::read_to_string(dir.join("plot.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn three_marginals_are_enough() {
    let root = tempfile::tempdir().unwrap();
    let out = gaussian(
        root.path(),
        &["run-all"],
        &["--set", "data.generator.means=[[0.0, 0.0], [1.0, 0.5], [2.0, 0.0]]", "--set", "data.generator.n=8"],
    );
    assert_code(&out, 0);
    let emd = fs::read_to_string(root.path().join("gaussian/emd.csv")).unwrap();
    assert_eq!(emd.lines().count(), 1 + 3 + 1);
}

#[test]
fn resuming_continues_the_log_and_matches_one_long_run() {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    assert_code(&gaussian(&a, &["gen-data"], &[]), 0);
    assert_code(&gaussian(&a, &["train-ali"], &["--set", "ali.iterations=25"]), 0);
    assert_code(&gaussian(&a, &["train-ali", "--resume"], &[]), 0);
    assert_code(&gaussian(&b, &["gen-data"], &[]), 0);
    assert_code(&gaussian(&b, &["train-ali"], &[]), 0);
    let read = |root: &Path, f: &str| fs::read(root.join("gaussian").join(f)).unwrap();
    assert_eq!(read(&a, "ali_log.csv"), read(&b, "ali_log.csv"));
    assert_eq!(read(&a, "ali.ckpt"), read(&b, "ali.ckpt"));

    assert_code(&gaussian(&a, &["train-cfm"], &["--set", "cfm.iterations=15"]), 0);
    assert_code(&gaussian(&a, &["train-cfm", "--resume"], &[]), 0);
    assert_code(&gaussian(&b, &["train-cfm"], &[]), 0);
    assert_eq!(read(&a, "cfm_log.csv"), read(&b, "cfm_log.csv"));
    assert_eq!(read(&a, "cfm.ckpt"), read(&b, "cfm.ckpt"));
}

#[test]
fn plotting_needs_only_data_and_is_deterministic() {
    let root = tempfile::tempdir().unwrap();
    assert_code(&gaussian(root.path(), &["gen-data"], &[]), 0);
    assert_code(&gaussian(root.path(), &["plot"], &[]), 0);
    let first = fs::read(root.path().join("gaussian/plot.svg")).unwrap();
    assert_code(&gaussian(root.path(), &["plot"], &[]), 0);
    assert_eq!(fs::read(root.path().join("gaussian/plot.svg")).unwrap(), first);
}

#[test]
fn plotting_rejects_other_dimensions() {
    let root = tempfile::tempdir().unwrap();
    let means = ["--set", "data.generator.means=[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 0.0, 1.0]]"];
    assert_code(&gaussian(root.path(), &["gen-data"], &means), 0);
    assert_code(&gaussian(root.path(), &["plot"], &means), 2);
}

#[test]
fn knot_scale_render_is_fast() {
    let data = gen_knot(&KnotSpec::default()).unwrap();
    assert_eq!(data.total_samples(), 12_000);
    let empty = TrajectorySet { times: Vec::new(), states: Vec::new(), divergent: Vec::new() };
    let start = Instant::now();
    let svg = render_svg(&data, &empty);
    assert!(start.elapsed().as_secs_f64() < 5.0);
    assert_eq!(svg.matches("<circle").count(), 12_000);
}

#[test]
fn output_root_defaults_to_the_working_directory() {
    let cwd = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ali"))
        .args(["gen-data", "--preset", "gaussian"])
        .env_remove("ALI_OUTPUT_ROOT")
        .current_dir(cwd.path())
        .output()
        .unwrap();
    assert_code(&out, 0);
    assert!(cwd.path().join("ali-output/gaussian/data.csv").is_file());
}
