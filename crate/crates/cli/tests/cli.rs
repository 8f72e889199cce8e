use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nps_core::fit::Checkpoint;
use nps_core::synth::{ellipsoid_target, sphere_target};
use tempfile::TempDir;

fn nps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nps"))
        .args(args)
        .env_remove("NPS_SEED")
        .output()
        .expect("run nps")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--batch_points", "150", "--dim", "6", "--layers", "3", "--hidden", "16",
    "--boundary_samples", "4", "--fair_samples", "5", "--warmup_iters", "2",
    "--fair_decay_start", "4", "--eval-samples", "400",
];

struct Sphere {
    dir: TempDir,
    layout: PathBuf,
    samples: PathBuf,
}

fn sphere() -> Sphere {
    let dir = TempDir::new().unwrap();
    let (layout, samples) = sphere_target(1500, 4);
    let lp = dir.path().join("sphere.json");
    let sp = dir.path().join("sphere.xyz");
    layout.write(&lp).unwrap();
    samples.write(&layout, &sp).unwrap();
    Sphere { dir, layout: lp, samples: sp }
}

fn fit(f: &Sphere, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["fit", "--layout", s(&f.layout), "--samples", s(&f.samples), "--out", s(out)];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    nps(&args)
}

#[test]
fn help_documents_every_flag() {
    let out = nps(&["--help"]);
    assert!(out.status.success());
    let expected: &[(&str, &[&str])] = &[
        ("validate", &["LAYOUT"]),
        ("fit", &["--layout", "--samples", "--out", "--log", "--config", "--eval-samples", "--threads", "--iterations", "--seed", "--lambda_smooth", "--beta", "--fair_samples"]),
        ("mesh", &["--checkpoint", "--out", "--density", "--shape", "--groups", "--seed"]),
        ("eval", &["--checkpoint", "--target", "--out", "--shape", "--samples", "--arc-samples", "--raw-frame", "--seed"]),
        ("train-space", &["--shapes", "--out", "--codes", "--raw-frame", "--log", "--epochs", "--freeze_codes", "--code_dim", "--lambda_reg"]),
        ("interp", &["--checkpoint", "--a", "--b", "--steps", "--out-dir", "--density", "--groups", "--seed"]),
        ("fit-cloud", &["--checkpoint", "--cloud", "--out", "--mesh", "--min_cosine", "--chamfer_points"]),
        ("edit", &["--checkpoint", "--constraints", "--out", "--shape", "--mesh", "--reg", "--iterations"]),
    ];
    for (cmd, flags) in expected {
        let out = nps(&[cmd, "--help"]);
        assert!(out.status.success(), "{cmd} --help");
        let text = String::from_utf8(out.stdout).unwrap();
        for f in *flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn validate_exit_codes() {
    let f = sphere();
    assert_eq!(nps(&["validate", s(&f.layout)]).status.code(), Some(0));

    let bad = f.dir.path().join("loop.json");
    fs::write(
        &bad,
        r#"{"corners":[{"id":0,"position":[0,0,0]},{"id":1,"position":[1,0,0]},{"id":2,"position":[0,1,0]}],
            "faces":[{"id":0,"corners":[0,1,1,2]}]}"#,
    )
    .unwrap();
    let out = nps(&["validate", s(&bad)]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("self-loop"));

    let missing = f.dir.path().join("missing.json");
    assert_eq!(nps(&["validate", s(&missing)]).status.code(), Some(2));
}

#[test]
fn zero_iteration_fit_writes_the_initial_checkpoint() {
    let f = sphere();
    let out = f.dir.path().join("a.nps");
    let log = f.dir.path().join("a.jsonl");
    let r = fit(&f, &out, &["--iterations", "0", "--seed", "3", "--log", s(&log)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let ckpt = Checkpoint::load(&out).unwrap();
    assert_eq!(ckpt.seed, 3);
    assert_eq!(ckpt.report.unwrap().iteration, 0);
    let lines: Vec<String> = fs::read_to_string(&log).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    let first: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    assert_eq!(first["iteration"], 0);
    let last: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
    assert_eq!(last["final"], true);
}

#[test]
fn config_errors_exit_2() {
    let f = sphere();
    let out = f.dir.path().join("a.nps");
    let cfg = f.dir.path().join("bad.cfg");
    fs::write(&cfg, "# comment\niterations = 1\nbogus_key = 4\n").unwrap();
    let r = fit(&f, &out, &["--config", s(&cfg)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("bogus_key"));
    let r = fit(&f, &out, &["--iterations", "many"]);
    assert_eq!(r.status.code(), Some(2));
    let r = fit(&f, &out, &["--lr_init", "-1"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn config_file_and_flags_merge_with_flags_winning() {
    let f = sphere();
    let cfg = f.dir.path().join("run.cfg");
    fs::write(&cfg, "iterations = 2\nseed = 9\nlambda_smooth = 0.0\n").unwrap();
    let out = f.dir.path().join("a.nps");
    let r = fit(&f, &out, &["--config", s(&cfg), "--seed", "4", "--eval-samples", "0"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let ckpt = Checkpoint::load(&out).unwrap();
    assert_eq!(ckpt.seed, 4);
    assert_eq!(ckpt.config["iterations"], 2);
    assert_eq!(ckpt.config["weights"]["smooth"], 0.0);
}

#[test]
fn nps_seed_is_the_fallback_seed() {
    let f = sphere();
    let a = f.dir.path().join("a.nps");
    let b = f.dir.path().join("b.nps");
    let mut args = vec!["fit", "--layout", s(&f.layout), "--samples", s(&f.samples), "--out", s(&a), "--iterations", "2"];
    args.extend_from_slice(TINY);
    let r = Command::new(env!("CARGO_BIN_EXE_nps")).args(&args).env("NPS_SEED", "17").output().unwrap();
    assert!(r.status.success());
    assert!(fit(&f, &b, &["--iterations", "2", "--seed", "17"]).status.success());
    assert_eq!(Checkpoint::load(&a).unwrap().seed, 17);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn single_thread_fits_are_byte_identical() {
    let f = sphere();
    let a = f.dir.path().join("a.nps");
    let b = f.dir.path().join("b.nps");
    for p in [&a, &b] {
        let r = fit(&f, p, &["--iterations", "8", "--seed", "2", "--threads", "1"]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(Checkpoint::load(&a).unwrap().config["deterministic"], true);
}

#[test]
fn non_finite_input_exits_3() {
    let f = sphere();
    let text = fs::read_to_string(&f.samples).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[0].split_whitespace().map(String::from).collect();
    fields[0] = "NaN".into();
    lines[0] = fields.join(" ");
    let bad = f.dir.path().join("nan.xyz");
    fs::write(&bad, lines.join("\n")).unwrap();
    let out = f.dir.path().join("a.nps");
    let mut args = vec!["fit", "--layout", s(&f.layout), "--samples", s(&bad), "--out", s(&out), "--iterations", "3"];
    args.extend_from_slice(TINY);
    let r = nps(&args);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn divergence_exits_3_with_the_last_good_checkpoint() {
    let f = sphere();
    let out = f.dir.path().join("a.nps");
    let r = fit(&f, &out, &["--iterations", "40", "--lr_init", "1e200", "--lr_final", "1e200"]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(Checkpoint::load(&out).is_ok(), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn fit_mesh_and_eval_agree_with_the_log() {
    let f = sphere();
    let ckpt = f.dir.path().join("a.nps");
    let log = f.dir.path().join("a.jsonl");
    let r = fit(&f, &ckpt, &["--iterations", "150", "--seed", "1", "--log", s(&log), "--eval-samples", "3000"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(&log).unwrap();
    let last: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    let logged = last["p2s"].as_f64().unwrap();

    let report = f.dir.path().join("eval.json");
    let r = nps(&["eval", "--checkpoint", s(&ckpt), "--target", s(&f.samples), "--samples", "3000", "--seed", "8", "--out", s(&report)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let eval: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let p2s = eval["p2s"].as_f64().unwrap();
    assert!((p2s - logged).abs() <= 0.2 * logged, "eval {p2s} vs log {logged}");
    assert!(eval["continuity"]["max_gap"].as_f64().unwrap() < 1e-9);

    let stdout = nps(&["eval", "--checkpoint", s(&ckpt), "--target", s(&f.samples), "--samples", "500"]);
    assert!(stdout.status.success());
    let _: serde_json::Value = serde_json::from_slice(&stdout.stdout).unwrap();

    let obj = f.dir.path().join("a.obj");
    let r = nps(&["mesh", "--checkpoint", s(&ckpt), "--out", s(&obj), "--density", "4", "--groups"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = fs::read_to_string(&obj).unwrap();
    assert!(text.lines().any(|l| l.starts_with("v ")));
    assert!(text.lines().any(|l| l.starts_with("f ")));
    assert_eq!(text.lines().filter(|l| l.starts_with("g ")).count(), 6);
}

fn train_tiny_space(dir: &Path) -> PathBuf {
    let mut manifest = String::new();
    for (m, axes) in [[0.8, 0.8, 0.8], [1.2, 1.0, 0.9], [1.0, 1.3, 1.1]].iter().enumerate() {
        let (layout, samples) = ellipsoid_target(*axes, 600, m as u64);
        let lp = dir.join(format!("shape{m}.json"));
        let sp = dir.join(format!("shape{m}.xyz"));
        layout.write(&lp).unwrap();
        samples.write(&layout, &sp).unwrap();
        manifest.push_str(&format!("shape{m}.json shape{m}.xyz\n"));
    }
    let mp = dir.join("shapes.txt");
    fs::write(&mp, manifest).unwrap();
    let out = dir.join("space.nps");
    let r = nps(&[
        "train-space", "--shapes", s(&mp), "--out", s(&out), "--raw-frame",
        "--epochs", "3", "--batch_shapes", "2", "--points_per_shape", "100", "--warmup_steps", "1",
        "--lr_drop_epochs", "1", "--code_dim", "3", "--decoder_hidden", "8", "--dim", "5",
        "--layers", "3", "--hidden", "12", "--boundary_samples", "3", "--fair_samples", "4",
        "--seed", "5", "--log", s(&dir.join("space.jsonl")),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    out
}

#[test]
fn shape_space_commands() {
    let dir = TempDir::new().unwrap();
    let space = train_tiny_space(dir.path());
    let ckpt = Checkpoint::load(&space).unwrap();
    assert!(ckpt.is_space());
    assert_eq!(ckpt.codes().unwrap().len(), 3);

    // interp with two steps re-emits the endpoint shapes
    let frames = dir.path().join("frames");
    let r = nps(&["interp", "--checkpoint", s(&space), "--a", "0", "--b", "2", "--steps", "2", "--out-dir", s(&frames), "--density", "3"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let files: Vec<_> = fs::read_dir(&frames).unwrap().collect();
    assert_eq!(files.len(), 2);
    for (k, shape) in [(0, "0"), (1, "2")] {
        let direct = dir.path().join(format!("direct{k}.obj"));
        let r = nps(&["mesh", "--checkpoint", s(&space), "--shape", shape, "--out", s(&direct), "--density", "3"]);
        assert!(r.status.success());
        assert_eq!(
            fs::read(frames.join(format!("step_{k}.obj"))).unwrap(),
            fs::read(&direct).unwrap()
        );
    }

    // an edit without constraints only feels the regularizer
    let cons = dir.path().join("none.json");
    fs::write(&cons, "[]").unwrap();
    let edited = dir.path().join("edit.json");
    let mesh = dir.path().join("edit.obj");
    let r = nps(&["edit", "--checkpoint", s(&space), "--constraints", s(&cons), "--out", s(&edited), "--shape", "1", "--iterations", "20", "--reg", "0.1", "--points", "50", "--mesh", s(&mesh), "--density", "2"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&edited).unwrap()).unwrap();
    let code: Vec<f64> = v["code"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let start = ckpt.codes().unwrap().code(1).unwrap();
    let norm = |c: &[f64]| c.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm(&code) < norm(start.as_slice().unwrap()));
    assert!(mesh.exists());

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"[{"faces":[1],"target":[0,0,0]}]"#).unwrap();
    let r = nps(&["edit", "--checkpoint", s(&space), "--constraints", s(&bad), "--out", s(&edited)]);
    assert_eq!(r.status.code(), Some(2));

    // point-cloud fitting picks a code and reports where it started
    let cloud = dir.path().join("cloud.xyz");
    let (_, samples) = ellipsoid_target([1.2, 1.0, 0.9], 400, 77);
    let text: String = samples
        .points
        .iter()
        .zip(&samples.normals)
        .map(|(p, n)| format!("{} {} {} {} {} {}\n", p[0], p[1], p[2], n[0], n[1], n[2]))
        .collect();
    fs::write(&cloud, text).unwrap();
    let fitted = dir.path().join("cloud.json");
    let r = nps(&["fit-cloud", "--checkpoint", s(&space), "--cloud", s(&cloud), "--out", s(&fitted), "--raw-frame", "--iterations", "5", "--points", "80", "--chamfer_points", "100"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&fitted).unwrap()).unwrap();
    assert_eq!(v["code"].as_array().unwrap().len(), 3);
    assert!(v["init_index"].as_u64().unwrap() < 3);

    // unknown shape ids are validation errors
    let r = nps(&["interp", "--checkpoint", s(&space), "--a", "0", "--b", "9", "--steps", "2", "--out-dir", s(&frames)]);
    assert_eq!(r.status.code(), Some(1));
}
