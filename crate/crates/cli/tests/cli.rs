use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn npde(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_npde"));
    cmd.args(args).env_remove("NPDE_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Case {
    dir: TempDir,
    config: PathBuf,
}

impl Case {
    fn new(cfg: Value) -> Self {
        let dir = TempDir::new().unwrap();
        let config = dir.path().join("config.json");
        fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
        Case { dir, config }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn out(&self) -> PathBuf {
        self.path("out")
    }

    fn run(&self, cmd: &str, extra: &[&str]) -> Output {
        let out = self.out();
        let mut args = vec![cmd, "--config", self.config.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        npde(&args, &[])
    }

    fn write(&self, name: &str, v: &Value) {
        fs::write(self.path(name), serde_json::to_string(v).unwrap()).unwrap();
    }
}

fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .map(|l| l.split(',').map(|t| t.parse().unwrap()).collect())
        .collect()
}

#[test]
fn heat_with_zero_diffusion_keeps_the_input() {
    let init: Vec<f64> = (0..10).map(|j| (j as f64 * 0.7).sin()).collect();
    let case = Case::new(json!({
        "grid": { "n_points": 10, "h": 0.5, "k": 0.1, "bc": "periodic" },
        "model": { "pde": "heat", "a": 0.0, "initial": { "kind": "values", "values": init } },
        "run": { "n_steps": 25 }
    }));
    let o = case.run("solve", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let last = csv_rows(&fs::read_to_string(case.out().join("final.csv")).unwrap());
    assert_eq!(last[0], init);
    let traj = csv_rows(&fs::read_to_string(case.out().join("trajectory.csv")).unwrap());
    assert_eq!(traj.len(), 2);
    assert_eq!(traj[1][0], 1.0);
    assert!(stdout(&o).starts_with("min="));
}

#[test]
fn unstable_explicit_run_exits_2_with_step() {
    // r = k/h² = 0.6 > 1/2
    let case = Case::new(json!({
        "grid": { "n_points": 32, "h": 1.0, "k": 0.6, "bc": "periodic" },
        "model": { "pde": "heat", "a": 1.0, "initial": { "kind": "random", "amplitude": 1.0 } },
        "run": { "n_steps": 2000, "scheme": "explicit", "seed": 4 }
    }));
    let o = case.run("solve", &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged at step"), "{}", stderr(&o));

    // the growth reported above is real: the same run stopped just short blows past the initial size
    let short = Case::new(json!({
        "grid": { "n_points": 32, "h": 1.0, "k": 0.6, "bc": "periodic" },
        "model": { "pde": "heat", "a": 1.0, "initial": { "kind": "random", "amplitude": 1.0 } },
        "run": { "n_steps": 60, "scheme": "explicit", "seed": 4 }
    }));
    let o = short.run("solve", &[]);
    assert_eq!(code(&o), 0);
    let last = csv_rows(&fs::read_to_string(short.out().join("final.csv")).unwrap());
    assert!(last[0].iter().any(|v| v.abs() > 1e3));
}

#[test]
fn implicit_scheme_survives_the_same_step() {
    let case = Case::new(json!({
        "grid": { "n_points": 32, "h": 1.0, "k": 0.6, "bc": "periodic" },
        "model": { "pde": "heat", "a": 1.0, "initial": { "kind": "random", "amplitude": 1.0 } },
        "run": { "n_steps": 500, "scheme": "implicit", "seed": 4 }
    }));
    let o = case.run("solve", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn gray_scott_writes_one_frame_per_stride() {
    let case = Case::new(json!({
        "grid": { "n_points": 24, "h": 1.0, "k": 1.0, "bc": "periodic", "dims": 2 },
        "model": { "pde": "gray_scott", "du": 0.16, "dv": 0.08, "feed": 0.035, "kill": 0.065, "seed_half_width": 3 },
        "run": { "n_steps": 60, "frame_stride": 15, "seed": 2 }
    }));
    let o = case.run("solve", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let frames: Vec<_> = fs::read_dir(case.out())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".pgm"))
        .collect();
    assert_eq!(frames.len(), 60 / 15);
    let bytes = fs::read(case.out().join("frame_00000.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5\n24 24\n255\n"));
    assert_eq!(bytes.len(), b"P5\n24 24\n255\n".len() + 24 * 24);
}

#[test]
fn invalid_config_writes_nothing() {
    let case = Case::new(json!({
        "grid": { "n_points": 10, "h": 0.5, "k": 0.1, "bc": "periodic", "bc_value": 1.0 },
        "model": { "pde": "heat", "a": 1.0, "initial": { "kind": "constant", "value": 1.0 } },
        "run": { "n_steps": 5 }
    }));
    let o = case.run("solve", &[]);
    assert_eq!(code(&o), 1);
    assert!(!case.out().exists());

    let typo = Case::new(json!({ "grid": { "n_points": 10, "h": 0.5, "k": 0.1, "bc": "periodic", "nsteps": 3 } }));
    assert_eq!(code(&typo.run("solve", &[])), 1);
    assert!(!typo.out().exists());
}

fn xor_dataset() -> Value {
    json!({ "samples": [
        { "input": [0.0, 0.0], "target": [0.0] },
        { "input": [0.0, 1.0], "target": [1.0] },
        { "input": [1.0, 0.0], "target": [1.0] },
        { "input": [1.0, 1.0], "target": [0.0] }
    ]})
}

fn xor_config(target: Value) -> Value {
    json!({
        "train": {
            "dataset": "data.json",
            "pipeline": [
                { "kind": "dense", "in_dim": 2, "out_dim": 4, "activation": { "kind": "sigmoid", "gain": 1.0 } },
                { "kind": "dense", "in_dim": 4, "out_dim": 1, "activation": { "kind": "sigmoid", "gain": 1.0 } }
            ],
            "max_epochs": 50,
            "target_loss": target
        },
        "optimizer": { "kind": "adam" }
    })
}

#[test]
fn vacuous_target_exits_0_after_one_epoch() {
    let case = Case::new(xor_config(json!("inf")));
    case.write("data.json", &xor_dataset());
    let o = case.run("train", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("epochs=1 "), "{}", stdout(&o));
    assert!(stdout(&o).contains("converged=true"));
    let loss = fs::read_to_string(case.out().join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 2);
    let model: Vec<Value> = serde_json::from_str(&fs::read_to_string(case.out().join("model.json")).unwrap()).unwrap();
    assert_eq!(model.len(), 2);
    assert!(model.iter().all(|b| b["kind"] == "dense"));
}

#[test]
fn unreached_target_is_a_nonzero_exit() {
    let case = Case::new(xor_config(json!(1e-9)));
    case.write("data.json", &xor_dataset());
    let o = case.run("train", &[]);
    assert_eq!(code(&o), 5);
    assert!(stdout(&o).contains("epochs=50 "));
}

#[test]
fn linear_regression_with_gauss_newton_converges_in_one_epoch() {
    let samples: Vec<Value> = (0..8)
        .map(|i| {
            let x = [i as f64 * 0.25 - 1.0, (i * i) as f64 * 0.1];
            json!({ "input": x, "target": [0.7 * x[0] - 1.3 * x[1] + 0.2] })
        })
        .collect();
    let case = Case::new(json!({
        "train": {
            "dataset": "lin.json",
            "pipeline": [{ "kind": "dense", "in_dim": 2, "out_dim": 1 }],
            "max_epochs": 20,
            "target_loss": 1e-20
        },
        "optimizer": { "kind": "gauss_newton", "eta": 1.0 }
    }));
    case.write("lin.json", &json!({ "samples": samples }));
    let o = case.run("train", &[]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).starts_with("epochs=1 "), "{}", stdout(&o));
}

#[test]
fn missing_dataset_names_the_path() {
    let case = Case::new(xor_config(json!(0.01)));
    let o = case.run("train", &[]);
    assert_eq!(code(&o), 1);
    let want = case.path("data.json");
    assert!(stderr(&o).contains(want.to_str().unwrap()), "{}", stderr(&o));
    assert!(!case.out().exists());
}

#[test]
fn conv1d_block_from_unit_diffusion() {
    let case = Case::new(json!({
        "grid": { "n_points": 6, "h": 1.0, "k": 0.25, "bc": "periodic" },
        "model": { "pde": "heat", "a": 1.0 },
        "block": { "kind": "conv1d" }
    }));
    let o = case.run("gen-block", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let block: Value = serde_json::from_str(&fs::read_to_string(case.out().join("block.json")).unwrap()).unwrap();
    assert_eq!(block["kind"], "conv1d");
    let kernels = block["kernels"].as_array().unwrap();
    assert_eq!(kernels.len(), 6);
    for k in kernels {
        assert_eq!(k, &json!([0.25, 0.5, 0.25]));
    }
}

/// With no z-diffusion the previous slice drops out and the forcing enters
/// with weight −k/v.
#[test]
fn rnn_block_without_z_diffusion() {
    let (k, v) = (0.1, 2.0);
    let case = Case::new(json!({
        "grid": { "n_points": 4, "h": 1.0, "k": k, "bc": "periodic" },
        "block": { "kind": "rnn", "dxy": 1.0, "dz": 0.0, "v": v }
    }));
    let o = case.run("gen-block", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let block: Value = serde_json::from_str(&fs::read_to_string(case.out().join("block.json")).unwrap()).unwrap();
    let entries = |name: &str| -> Vec<f64> {
        block[name]["data"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
    };
    let (w2, u) = (entries("w2"), entries("u"));
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(w2[i * 4 + j], 0.0);
            assert_eq!(u[i * 4 + j], if i == j { -k / v } else { 0.0 });
        }
    }
}

#[test]
fn block_files_round_trip_byte_for_byte() {
    let configs = [
        json!({ "grid": { "n_points": 7, "h": 0.3, "k": 0.01, "bc": "mirror" },
                "model": { "pde": "reaction_diffusion", "a": [0.1, 0.7, 0.3, 1.1, 0.9, 0.2, 0.4],
                           "reaction": { "kind": "sigmoid", "gain": 0.3 } },
                "block": { "kind": "conv1d" } }),
        json!({ "grid": { "n_points": 5, "h": 0.7, "k": 0.05, "bc": "periodic", "dims": 2 },
                "model": { "pde": "heat", "a": 0.37 },
                "block": { "kind": "conv2d", "channels": 2 } }),
        json!({ "block": { "kind": "dense", "in_dim": 3, "out_dim": 2,
                           "activation": { "kind": "sigmoid", "gain": 1.0 } } }),
        json!({ "grid": { "n_points": 6, "h": 0.3, "k": 0.07, "bc": "periodic" },
                "block": { "kind": "rnn", "dxy": 0.3, "dz": 0.1, "v": 1.7 } }),
        json!({ "grid": { "n_points": 6, "h": 0.3, "k": 0.01, "bc": "periodic" },
                "model": { "pde": "heat", "a": 0.9 },
                "block": { "kind": "rbm" } }),
    ];
    for cfg in configs {
        let case = Case::new(cfg);
        let o = case.run("gen-block", &[]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let first = fs::read(case.out().join("block.json")).unwrap();
        let block = npde::io::load_block(&case.out().join("block.json")).unwrap();
        assert_eq!(npde::io::block_to_json(&block).unwrap().into_bytes(), first);
    }
}

#[test]
fn unknown_block_kind_is_a_config_error() {
    let case = Case::new(json!({ "block": { "kind": "lstm" } }));
    let o = case.run("gen-block", &[]);
    assert_eq!(code(&o), 1);
    assert!(!case.out().exists());
}

#[test]
fn verify_stencils_includes_the_nine_point_check() {
    let o = npde(&["verify", "--suite", "stencils"], &[]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("PASS stencils/nine_point_taps measured=")));
    assert!(out.lines().all(|l| l.starts_with("PASS ") && l.contains(" tol=")));
}

#[test]
fn verify_equivalence_covers_conv_dense_rnn() {
    let o = npde(&["verify", "--suite", "equivalence"], &[]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let out = stdout(&o);
    for name in ["conv1d", "dense", "rnn"] {
        assert!(out.contains(&format!("PASS equivalence/{name}")), "{out}");
    }
}

#[test]
fn unknown_suite_prints_usage() {
    let o = npde(&["verify", "--suite", "everything"], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage: npde verify"), "{}", stderr(&o));
}

#[test]
fn missing_subcommand_or_flag_exits_1() {
    assert_eq!(code(&npde(&[], &[])), 1);
    assert_eq!(code(&npde(&["solve"], &[])), 1);
    assert_eq!(code(&npde(&["--help"], &[])), 0);
}

#[test]
fn npde_out_selects_the_output_directory() {
    let case = Case::new(json!({
        "grid": { "n_points": 5, "h": 1.0, "k": 0.1, "bc": "extend" },
        "model": { "pde": "heat", "a": 1.0, "initial": { "kind": "constant", "value": 2.0 } },
        "run": { "n_steps": 3 },
        "io": { "out_dir": "from_config" }
    }));
    let env_dir = case.path("from_env");
    let o = npde(&["solve", "--config", case.config.to_str().unwrap()], &[("NPDE_OUT", &env_dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(env_dir.join("final.csv").exists());
    assert!(!case.path("from_config").exists());

    let o = npde(&["solve", "--config", case.config.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0);
    assert!(case.path("from_config").join("final.csv").exists());
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn runs_are_deterministic_for_a_seed() {
    let solve = json!({
        "grid": { "n_points": 12, "h": 1.0, "k": 0.2, "bc": "periodic", "dims": 2 },
        "model": { "pde": "heat", "a": 1.0, "initial": { "kind": "random", "mean": 0.5, "amplitude": 0.5 } },
        "run": { "n_steps": 20, "frame_stride": 5, "seed": 9 }
    });
    let train = xor_config(json!(0.2));
    for (cfg, cmd) in [(solve, "solve"), (train, "train")] {
        let a = Case::new(cfg.clone());
        let b = Case::new(cfg);
        a.write("data.json", &xor_dataset());
        b.write("data.json", &xor_dataset());
        let (oa, ob) = (a.run(cmd, &["--seed", "3"]), b.run(cmd, &["--seed", "3"]));
        assert_eq!(oa.stdout, ob.stdout);
        assert_eq!(code(&oa), code(&ob));
        assert_eq!(snapshot(&a.out()), snapshot(&b.out()));
    }
}
