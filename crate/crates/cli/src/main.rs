mod config;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use nps_core::fit::{
    self, Checkpoint, CloudSettings, FitConfig, HandleConstraint, LatentSettings, SpaceConfig,
};
use nps_core::layout::{self, LabeledSamples, PatchLayout};
use nps_core::losses::LossReport;
use nps_core::{mesher, metrics, NpsError};

use config::{CLOUD_KEYS, EDIT_KEYS, FIT_KEYS, SPACE_KEYS};

/// A failure with its exit code: 1 validation, 2 I/O or configuration, 3 numerical.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }
}

impl From<NpsError> for CliError {
    fn from(e: NpsError) -> Self {
        let code = match &e {
            NpsError::Io { .. } | NpsError::Parse(_) | NpsError::Config(_) | NpsError::Checkpoint(_) => 2,
            NpsError::NonFinite(_) | NpsError::Diverged { .. } | NpsError::DegenerateJacobian(_) => 3,
            _ => 1,
        };
        CliError { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, CliError>;

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .value_parser(value_parser!(PathBuf))
        .required(true)
        .help(help)
}

fn opt_path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .value_parser(value_parser!(PathBuf))
        .help(help)
}

fn usize_arg(name: &'static str, default: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("N")
        .value_parser(value_parser!(usize))
        .default_value(default)
        .help(help)
}

fn seed_arg() -> Arg {
    Arg::new("seed")
        .long("seed")
        .value_name("SEED")
        .value_parser(value_parser!(u64))
        .help("Random seed [NPS_SEED or 0]")
}

fn shape_arg(help: &'static str) -> Arg {
    Arg::new("shape")
        .long("shape")
        .value_name("ID")
        .value_parser(value_parser!(usize))
        .help(help)
}

fn flag(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).action(ArgAction::SetTrue).help(help)
}

fn log_arg() -> Arg {
    opt_path_arg("log", "JSON-lines log file [stderr]")
}

fn cli() -> Command {
    Command::new("nps")
        .about("Fit, mesh and evaluate neural parametric surfaces")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("threads")
                .long("threads")
                .value_name("N")
                .value_parser(value_parser!(usize))
                .global(true)
                .help("Worker threads; 1 also marks runs as deterministic"),
        )
        .subcommand(
            Command::new("validate")
                .about("Check a layout file; exit 0 iff it is valid")
                .arg(Arg::new("layout").value_name("LAYOUT").value_parser(value_parser!(PathBuf)).required(true).help("Layout JSON file")),
        )
        .subcommand(config::with_keys(
            Command::new("fit")
                .about("Fit one shape and write a checkpoint")
                .arg(path_arg("layout", "Layout JSON file"))
                .arg(path_arg("samples", "Labeled samples: `x y z nx ny nz patch_id` per line"))
                .arg(path_arg("out", "Output checkpoint"))
                .arg(log_arg())
                .arg(usize_arg("eval-samples", "30000", "Samples of the final self-evaluation logged after fitting; 0 skips it")),
            FIT_KEYS,
        ))
        .subcommand(
            Command::new("mesh")
                .about("Tessellate a checkpoint into an OBJ mesh")
                .arg(path_arg("checkpoint", "Checkpoint file"))
                .arg(path_arg("out", "Output OBJ"))
                .arg(usize_arg("density", "16", "Segments per boundary edge"))
                .arg(shape_arg("Training shape of a shape-space checkpoint [0]"))
                .arg(flag("groups", "Write one `g patch_<id>` group per face"))
                .arg(seed_arg()),
        )
        .subcommand(
            Command::new("eval")
                .about("Compare a checkpoint with a target sample set")
                .arg(path_arg("checkpoint", "Checkpoint file"))
                .arg(path_arg("target", "Labeled target samples"))
                .arg(opt_path_arg("out", "Output JSON report [stdout]"))
                .arg(shape_arg("Training shape of a shape-space checkpoint [0]"))
                .arg(usize_arg("samples", "30000", "Samples on each side"))
                .arg(usize_arg("arc-samples", "32", "Continuity samples per arc"))
                .arg(flag("raw-frame", "Use the target as given instead of normalizing it"))
                .arg(seed_arg()),
        )
        .subcommand(config::with_keys(
            Command::new("train-space")
                .about("Train a shape space over a collection sharing one layout")
                .arg(path_arg("shapes", "Manifest of `layout samples` path pairs, one shape per line"))
                .arg(path_arg("out", "Output checkpoint"))
                .arg(opt_path_arg("codes", "Initial codes, one whitespace-separated row per shape"))
                .arg(flag("raw-frame", "Use the shapes as given instead of normalizing each"))
                .arg(log_arg()),
            SPACE_KEYS,
        ))
        .subcommand(
            Command::new("interp")
                .about("Mesh shapes along the line between two latent codes")
                .arg(path_arg("checkpoint", "Shape-space checkpoint"))
                .arg(Arg::new("a").long("a").value_name("ID").value_parser(value_parser!(usize)).required(true).help("First shape id"))
                .arg(Arg::new("b").long("b").value_name("ID").value_parser(value_parser!(usize)).required(true).help("Second shape id"))
                .arg(usize_arg("steps", "5", "Number of shapes, endpoints included"))
                .arg(path_arg("out-dir", "Directory receiving step_<k>.obj"))
                .arg(usize_arg("density", "16", "Segments per boundary edge"))
                .arg(flag("groups", "Write one `g patch_<id>` group per face"))
                .arg(seed_arg()),
        )
        .subcommand(config::with_keys(
            Command::new("fit-cloud")
                .about("Find the latent code of an unlabeled oriented point cloud")
                .arg(path_arg("checkpoint", "Shape-space checkpoint"))
                .arg(path_arg("cloud", "Cloud: `x y z nx ny nz [patch_id]` per line"))
                .arg(path_arg("out", "Output JSON with the code"))
                .arg(opt_path_arg("mesh", "Also write the fitted surface as OBJ"))
                .arg(usize_arg("density", "16", "Segments per boundary edge of --mesh"))
                .arg(flag("raw-frame", "Use the cloud as given instead of normalizing it"))
                .arg(log_arg()),
            CLOUD_KEYS,
        ))
        .subcommand(config::with_keys(
            Command::new("edit")
                .about("Move face groups toward target centres by optimizing the latent code")
                .arg(path_arg("checkpoint", "Shape-space checkpoint"))
                .arg(path_arg("constraints", "JSON array of {\"face_ids\": [...], \"target\": [x, y, z]}"))
                .arg(path_arg("out", "Output JSON with the code"))
                .arg(shape_arg("Training shape whose code starts the edit [0]"))
                .arg(opt_path_arg("mesh", "Also write the edited surface as OBJ"))
                .arg(usize_arg("density", "16", "Segments per boundary edge of --mesh"))
                .arg(log_arg()),
            EDIT_KEYS,
        ))
}

fn main() -> ExitCode {
    let m = cli().get_matches();
    match run(&m) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(m: &ArgMatches) -> CliResult<u8> {
    let threads = m.get_one::<usize>("threads").copied();
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    let forced: Vec<(&str, Value)> = match threads {
        Some(1) => vec![("deterministic", Value::Bool(true))],
        _ => Vec::new(),
    };
    match m.subcommand() {
        Some(("validate", s)) => cmd_validate(s),
        Some(("fit", s)) => cmd_fit(s, &forced).map(|_| 0),
        Some(("mesh", s)) => cmd_mesh(s).map(|_| 0),
        Some(("eval", s)) => cmd_eval(s).map(|_| 0),
        Some(("train-space", s)) => cmd_train_space(s, &forced).map(|_| 0),
        Some(("interp", s)) => cmd_interp(s).map(|_| 0),
        Some(("fit-cloud", s)) => cmd_fit_cloud(s).map(|_| 0),
        Some(("edit", s)) => cmd_edit(s).map(|_| 0),
        _ => unreachable!("subcommand required"),
    }
}

fn path<'a>(m: &'a ArgMatches, name: &str) -> &'a Path {
    m.get_one::<PathBuf>(name).expect("required path")
}

fn seed(m: &ArgMatches) -> CliResult<u64> {
    match m.get_one::<u64>("seed") {
        Some(&s) => Ok(s),
        None => Ok(config::env_seed()?.unwrap_or(0)),
    }
}

fn load_checkpoint(p: &Path) -> CliResult<Checkpoint> {
    Ok(Checkpoint::load(p)?)
}

fn write_text(p: &Path, text: &str) -> CliResult<()> {
    fs::write(p, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", p.display())))
}

/// JSON-lines sink: a file or stderr.
struct Log(Box<dyn Write>);

impl Log {
    fn open(p: Option<&PathBuf>) -> CliResult<Self> {
        Ok(Log(match p {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).map_err(|e| CliError::io(format!("cannot create {}: {e}", p.display())))?,
            )),
            None => Box::new(io::stderr()),
        }))
    }

    fn line(&mut self, text: &str) {
        let _ = writeln!(self.0, "{text}");
    }

    fn value(&mut self, v: &Value) {
        self.line(&v.to_string());
    }
}

impl Drop for Log {
    fn drop(&mut self) {
        let _ = self.0.flush();
    }
}

fn layout_checked(p: &Path) -> CliResult<PatchLayout> {
    let layout = layout::load_layout(p)?;
    let report = layout.validate();
    if !report.is_valid() {
        return Err(CliError::validation(format!("{}: {report}", p.display())));
    }
    Ok(layout)
}

fn cmd_validate(m: &ArgMatches) -> CliResult<u8> {
    let p = m.get_one::<PathBuf>("layout").expect("required");
    let layout = layout::load_layout(p)?;
    let report = layout.validate();
    if report.is_valid() {
        println!("valid: {} corners, {} faces, {} arcs", layout.num_corners(), layout.num_faces(), layout.arcs.len());
        Ok(0)
    } else {
        println!("{report}");
        Ok(1)
    }
}

fn cmd_fit(m: &ArgMatches, forced: &[(&str, Value)]) -> CliResult<()> {
    let cfg: FitConfig = config::resolve(m, FIT_KEYS, forced)?;
    cfg.validate()?;
    let mut layout = layout_checked(path(m, "layout"))?;
    let samples = layout::load_samples(path(m, "samples"), &mut layout)?;
    let out = path(m, "out");
    let mut log = Log::open(m.get_one::<PathBuf>("log"))?;
    let result = fit::fit_shape_with(&cfg, &layout, &samples, |r| log.line(&r.to_json_line()));
    let ckpt = match result {
        Ok(c) => c,
        Err(NpsError::Diverged { iteration, term, last_good }) => {
            last_good.save(out)?;
            return Err(CliError {
                code: 3,
                message: format!(
                    "loss became non-finite at iteration {iteration} ({term}); last good checkpoint written to {}",
                    out.display()
                ),
            });
        }
        Err(e) => return Err(e.into()),
    };
    ckpt.save(out)?;
    let n = *m.get_one::<usize>("eval-samples").expect("default");
    if n > 0 {
        let r = metrics::evaluate(&ckpt, None, &samples, n, cfg.seed)?;
        log.value(&json!({"final": true, "p2s": r.p2s, "hd": r.hd, "nae_degrees": r.nae_degrees}));
    }
    Ok(())
}

fn cmd_mesh(m: &ArgMatches) -> CliResult<()> {
    let ckpt = load_checkpoint(path(m, "checkpoint"))?;
    let density = *m.get_one::<usize>("density").expect("default");
    let shape = shape_of(&ckpt, m)?;
    let mesh = mesher::mesh_checkpoint(&ckpt, shape, density.max(1), seed(m)?)?;
    report_mesh(&mesh);
    mesher::export_obj(&mesh, path(m, "out"), m.get_flag("groups"))?;
    Ok(())
}

fn report_mesh(mesh: &mesher::SurfaceMesh) {
    if !mesh.degenerate.is_empty() {
        eprintln!("warning: {} degenerate triangles", mesh.degenerate.len());
    }
}

fn shape_of(ckpt: &Checkpoint, m: &ArgMatches) -> CliResult<Option<usize>> {
    let id = m.get_one::<usize>("shape").copied();
    match (ckpt.is_space(), id) {
        (true, id) => Ok(Some(id.unwrap_or(0))),
        (false, None) => Ok(None),
        (false, Some(_)) => Err(CliError::validation("--shape needs a shape-space checkpoint")),
    }
}

fn load_target(p: &Path, layout: &PatchLayout, raw: bool) -> CliResult<LabeledSamples> {
    let mut s = layout::load_samples_raw(p, layout)?;
    if !raw {
        let sim = s.normalization();
        s.apply_similarity(&sim);
    }
    Ok(s)
}

fn cmd_eval(m: &ArgMatches) -> CliResult<()> {
    let ckpt = load_checkpoint(path(m, "checkpoint"))?;
    let shape = shape_of(&ckpt, m)?;
    let target = load_target(path(m, "target"), &ckpt.layout, m.get_flag("raw-frame"))?;
    let n = *m.get_one::<usize>("samples").expect("default");
    let arc = *m.get_one::<usize>("arc-samples").expect("default");
    let mut report = metrics::evaluate(&ckpt, shape, &target, n, seed(m)?)?;
    report.continuity = Some(metrics::checkpoint_continuity(&ckpt, shape, arc)?);
    let text = serde_json::to_string_pretty(&report).expect("report json");
    match m.get_one::<PathBuf>("out") {
        Some(p) => write_text(p, &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn read_codes(p: &Path) -> CliResult<ndarray::Array2<f64>> {
    let text = fs::read_to_string(p).map_err(|e| CliError::io(format!("cannot read {}: {e}", p.display())))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|v| v.parse().map_err(|_| CliError::config(format!("bad code value {v:?}"))))
                .collect()
        })
        .collect::<CliResult<_>>()?;
    let width = rows.first().map_or(0, Vec::len);
    if width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(CliError::config("codes file needs equal-length, non-empty rows"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(ndarray::Array2::from_shape_vec((rows.len(), width), flat).expect("rectangular"))
}

fn cmd_train_space(m: &ArgMatches, forced: &[(&str, Value)]) -> CliResult<()> {
    let mut cfg: SpaceConfig = config::resolve(m, SPACE_KEYS, forced)?;
    let raw = m.get_flag("raw-frame");
    let mut shapes = Vec::new();
    for (lp, sp) in config::parse_manifest(path(m, "shapes"))? {
        let mut layout = layout_checked(&lp)?;
        let samples = if raw {
            let s = layout::load_samples_raw(&sp, &layout)?;
            layout.orient_faces(&s);
            s
        } else {
            layout::load_samples(&sp, &mut layout)?
        };
        shapes.push((layout, samples));
    }
    let codes = match m.get_one::<PathBuf>("codes") {
        Some(p) => {
            let c = read_codes(p)?;
            cfg.code_dim = c.ncols();
            Some(c)
        }
        None => None,
    };
    let mut log = Log::open(m.get_one::<PathBuf>("log"))?;
    let ckpt = fit::train_space_with(&cfg, &shapes, codes, |r| log.line(&r.to_json_line()))?;
    ckpt.save(path(m, "out"))?;
    Ok(())
}

fn cmd_interp(m: &ArgMatches) -> CliResult<()> {
    let ckpt = load_checkpoint(path(m, "checkpoint"))?;
    let a = *m.get_one::<usize>("a").expect("required");
    let b = *m.get_one::<usize>("b").expect("required");
    let steps = *m.get_one::<usize>("steps").expect("default");
    let density = *m.get_one::<usize>("density").expect("default");
    let dir = path(m, "out-dir");
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}: {e}", dir.display())))?;
    let seed = seed(m)?;
    for (k, complex) in fit::interpolate_codes(&ckpt, a, b, steps)?.iter().enumerate() {
        let mesh = mesher::mesh_surface(complex, &ckpt.mlp, &ckpt.orientation, density.max(1), seed)?;
        report_mesh(&mesh);
        mesher::export_obj(&mesh, dir.join(format!("step_{k}.obj")), m.get_flag("groups"))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CodeResult<'a> {
    code: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_chamfer: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    start_shape: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<&'a LossReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss: Option<f64>,
}

fn mesh_code(ckpt: &Checkpoint, code: &ndarray::Array1<f64>, m: &ArgMatches) -> CliResult<()> {
    if let Some(p) = m.get_one::<PathBuf>("mesh") {
        let density = *m.get_one::<usize>("density").expect("default");
        let complex = ckpt.complex_for_code(code.view())?;
        let mesh = mesher::mesh_surface(&complex, &ckpt.mlp, &ckpt.orientation, density.max(1), 0)?;
        report_mesh(&mesh);
        mesher::export_obj(&mesh, p, false)?;
    }
    Ok(())
}

fn cmd_fit_cloud(m: &ArgMatches) -> CliResult<()> {
    let settings: CloudSettings = config::resolve(m, CLOUD_KEYS, &[])?;
    let ckpt = load_checkpoint(path(m, "checkpoint"))?;
    let mut cloud = layout::load_cloud(path(m, "cloud"))?;
    if !m.get_flag("raw-frame") {
        let sim = cloud.normalization();
        cloud.apply_similarity(&sim);
    }
    let mut log = Log::open(m.get_one::<PathBuf>("log"))?;
    let fitted = fit::fit_cloud_with(&ckpt, &cloud, &settings, |r| log.line(&r.to_json_line()))?;
    let out = CodeResult {
        code: fitted.code.to_vec(),
        init_index: Some(fitted.init_index),
        init_chamfer: Some(fitted.init_chamfer),
        start_shape: None,
        report: fitted.report.as_ref(),
        loss: None,
    };
    write_text(path(m, "out"), &serde_json::to_string_pretty(&out).expect("json"))?;
    mesh_code(&ckpt, &fitted.code, m)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintRecord {
    face_ids: Vec<u32>,
    target: [f64; 3],
}

fn cmd_edit(m: &ArgMatches) -> CliResult<()> {
    let settings: LatentSettings = config::resolve(m, EDIT_KEYS, &[])?;
    let ckpt = load_checkpoint(path(m, "checkpoint"))?;
    let cp = path(m, "constraints");
    let text = fs::read_to_string(cp).map_err(|e| CliError::io(format!("cannot read {}: {e}", cp.display())))?;
    let records: Vec<ConstraintRecord> =
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("constraints: {e}")))?;
    let constraints: Vec<HandleConstraint> = records
        .into_iter()
        .map(|r| HandleConstraint { faces: r.face_ids, target: r.target })
        .collect();
    let start = m.get_one::<usize>("shape").copied().unwrap_or(0);
    let init = ckpt.codes()?.code(start)?;
    let mut log = Log::open(m.get_one::<PathBuf>("log"))?;
    let mut last = None;
    let code = fit::optimize_code_handles_with(&ckpt, &constraints, init.view(), &settings, |it, loss| {
        last = Some(loss);
        log.value(&json!({"iteration": it, "loss": loss}));
    })?;
    let out = CodeResult {
        code: code.to_vec(),
        init_index: None,
        init_chamfer: None,
        start_shape: Some(start),
        report: None,
        loss: last,
    };
    write_text(path(m, "out"), &serde_json::to_string_pretty(&out).expect("json"))?;
    mesh_code(&ckpt, &code, m)
}
