use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use slmm_core::eval::{
    aggregate, align_to_truth, run_realization, score_run, unmix, ExperimentReport, Method, MethodOutput, Scores,
    Setup, UnmixInputs,
};
use slmm_core::linops::{PsfOperator, SpatialDiffOperator};
use slmm_core::phantom::{generate_phantom, PhantomTruth};
use slmm_core::solver::IterationLog;
use slmm_core::{ImageGeometry, Mat};

use crate::config::RunConfig;
use crate::container::Container;
use crate::error::{CliError, Result};
use crate::fsutil::write_atomic;
use crate::report::{rows_from_report, rows_from_scores, slice_pgm, to_csv};

pub const PHANTOM_FILE: &str = "phantom.slmm";
pub const REPORT_FILE: &str = "report.csv";
pub const EVAL_FILE: &str = "eval.csv";

fn out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(&cfg.out_dir)
}

fn snr_value(snr: Option<f64>) -> Value {
    match snr {
        Some(db) => json!(db),
        None => json!("inf"),
    }
}

fn log_line(log: &IterationLog) -> String {
    format!(
        "iter={} cost={:e} fit={:e} smooth={:e} sim={:e} l1={:e}",
        log.iteration,
        log.cost.total(),
        log.cost.fit,
        log.cost.smoothness,
        log.cost.similarity,
        log.cost.sparsity
    )
}

/// Phantom bundle: `noisy`, `clean`, `M`, `A`, `B` and `V` sections.
pub fn truth_container(truth: &PhantomTruth, cfg: &RunConfig) -> Container {
    let mut c = Container::new(&truth.geometry, truth.seed);
    c.provenance.insert("command".into(), json!("phantom"));
    c.provenance.insert("config".into(), cfg.to_json());
    c.provenance.insert("snr_db".into(), snr_value(truth.snr_db));
    c.provenance.insert("snr_convention".into(), json!("global"));
    c.provenance.insert("noise_sigma".into(), json!(truth.noise_sigma));
    c.push("noisy", truth.noisy.clone());
    c.push("clean", truth.clean.clone());
    c.push("M", truth.m.clone());
    c.push("A", truth.a.clone());
    c.push("B", truth.b.clone());
    c.push("V", truth.v.clone());
    c
}

pub fn truth_from_container(c: &Container) -> Result<PhantomTruth> {
    let snr_db = match c.provenance.get("snr_db") {
        Some(Value::Number(n)) => n.as_f64(),
        _ => None,
    };
    let noise_sigma = c.provenance.get("noise_sigma").and_then(Value::as_f64).unwrap_or(0.0);
    let truth = PhantomTruth {
        geometry: c.geometry()?,
        m: c.require("M")?.clone(),
        a: c.require("A")?.clone(),
        b: c.require("B")?.clone(),
        v: c.require("V")?.clone(),
        clean: c.require("clean")?.clone(),
        noisy: c.require("noisy")?.clone(),
        snr_db,
        noise_sigma,
        seed: c.seed,
    };
    let (l, n) = (truth.geometry.n_frames(), truth.geometry.n_voxels());
    let k = truth.m.cols();
    let nv = truth.v.cols();
    for (name, m, shape) in [
        ("M", &truth.m, (l, k)),
        ("A", &truth.a, (k, n)),
        ("B", &truth.b, (nv, n)),
        ("V", &truth.v, (l, nv)),
        ("clean", &truth.clean, (l, n)),
        ("noisy", &truth.noisy, (l, n)),
    ] {
        if m.shape() != shape {
            return Err(CliError::Data(format!(
                "section `{name}` is {:?}, expected {shape:?}",
                m.shape()
            )));
        }
    }
    Ok(truth)
}

/// Generates a phantom and writes `phantom.slmm` under the output directory.
pub fn cmd_phantom(cfg: &RunConfig) -> Result<PathBuf> {
    let truth = generate_phantom(&cfg.phantom, cfg.seed)?;
    let path = out_dir(cfg).join(PHANTOM_FILE);
    truth_container(&truth, cfg).write(&path)?;
    Ok(path)
}

/// Configuration embedded in a container, if any.
pub fn embedded_config(c: &Container) -> Result<Option<RunConfig>> {
    c.provenance.get("config").map(RunConfig::from_json).transpose()
}

/// Runs one method on the image of `input` and writes `<method>.slmm`.
///
/// The nominal TAC and basis come from `basis` when given (sections
/// `nominal` and `V`), otherwise from the input's `M` and `V` sections. The
/// input's remaining `M` columns, when present, order the initial factors.
pub fn cmd_unmix(cfg: &RunConfig, input: &Path, basis: Option<&Path>) -> Result<PathBuf> {
    let c = Container::read(input)?;
    let geometry = c.geometry()?;
    let y = c
        .section("noisy")
        .or_else(|| c.section("image"))
        .ok_or_else(|| CliError::Data(format!("{}: no `noisy` or `image` section", input.display())))?;
    let l = geometry.n_frames();
    let basis_file = basis.map(Container::read).transpose()?;
    let (nominal, v) = match &basis_file {
        Some(b) => (Some(b.require("nominal")?.col(0)), Some(b.require("V")?.clone())),
        None => (c.section("M").map(|m| m.col(0)), c.section("V").cloned()),
    };
    for (name, rows) in [
        ("nominal", nominal.as_ref().map(Vec::len)),
        ("V", v.as_ref().map(Mat::rows)),
    ] {
        if let Some(r) = rows.filter(|&r| r != l) {
            return Err(CliError::Data(format!("{name} has {r} frames, the image has {l}")));
        }
    }
    let k = cfg.n_factors;
    let references = c
        .section("M")
        .filter(|m| m.cols() == k && m.rows() == l)
        .map(|m| m.select_cols(&(1..k).collect::<Vec<_>>()));
    let psf = PsfOperator::gaussian(&geometry, cfg.phantom.fwhm_mm)?;
    let sdiff = SpatialDiffOperator::new(&geometry);
    let inputs = UnmixInputs {
        geometry: &geometry,
        n_factors: k,
        nominal: nominal.as_deref(),
        references: references.as_ref(),
        basis: v.as_ref(),
        psf: &psf,
        sdiff: &sdiff,
        hp: cfg.hyperparameters,
        nmf_tol: cfg.nmf_tol,
        nmf_max_iters: cfg.nmf_max_iters,
        log_every: cfg.log_every,
    };
    let start = Instant::now();
    let run = unmix(&inputs, cfg.method, y, cfg.seed, |log| {
        eprintln!("{} {}", cfg.method.name(), log_line(log));
    })?;
    let elapsed = start.elapsed().as_secs_f64();

    let mut out = Container::new(&geometry, cfg.seed);
    out.provenance.insert("command".into(), json!("unmix"));
    out.provenance.insert("method".into(), json!(cfg.method.name()));
    out.provenance.insert("config".into(), cfg.to_json());
    out.provenance.insert("input_seed".into(), json!(c.seed));
    out.provenance.insert("iterations".into(), json!(run.iterations));
    if !cfg.deterministic {
        out.provenance.insert("elapsed_s".into(), json!(elapsed));
    }
    out.push("M", run.output.m);
    out.push("A", run.output.a);
    if let Some(b) = run.output.b {
        out.push("B", b);
    }
    if let Some(v) = run.output.v {
        out.push("V", v);
    }
    let hist = run.cost_history;
    out.push("cost_history", Mat::from_vec(1, hist.len(), hist)?);
    let path = out_dir(cfg).join(format!("{}.slmm", cfg.method.name()));
    out.write(&path)?;
    Ok(path)
}

/// Label of a result file: its method, or the file stem.
fn result_label(c: &Container, path: &Path) -> String {
    c.provenance
        .get("method")
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "result".into())
        })
}

fn write_maps(dir: &Path, prefix: &str, a: &Mat, geometry: &ImageGeometry, z: usize) -> Result<()> {
    for k in 0..a.rows() {
        write_atomic(&dir.join(format!("{prefix}_A{k}_z{z}.pgm")), &slice_pgm(a, k, geometry, z))?;
    }
    Ok(())
}

/// Scores result files against a phantom bundle. Files of the same method
/// are aggregated as realizations. Writes `eval.csv` and slice maps of the
/// aligned proportions under `maps/`.
pub fn cmd_eval(cfg: &RunConfig, truth_path: &Path, results: &[PathBuf]) -> Result<PathBuf> {
    if results.is_empty() {
        return Err(CliError::Usage("eval needs at least one result file".into()));
    }
    let truth = truth_from_container(&Container::read(truth_path)?)?;
    let nz = truth.geometry.dims()[2];
    let z = cfg.slice.unwrap_or(nz / 2);
    if z >= nz {
        return Err(CliError::Usage(format!("slice {z} is outside 0..{nz}")));
    }
    let dir = out_dir(cfg);
    let maps = dir.join("maps");
    write_maps(&maps, "truth", &truth.a, &truth.geometry, z)?;

    let mut groups: Vec<(String, Vec<Scores>)> = Vec::new();
    for path in results {
        let c = Container::read(path)?;
        if c.dims != truth.geometry.dims() || c.frame_times.len() != truth.geometry.n_frames() {
            return Err(CliError::Data(format!("{}: geometry differs from the truth", path.display())));
        }
        let label = result_label(&c, path);
        let out = MethodOutput {
            m: c.require("M")?.clone(),
            a: c.require("A")?.clone(),
            b: c.section("B").cloned(),
            v: c.section("V").cloned(),
        };
        let anchored = Method::parse(&label).map_or(true, Method::role_anchored);
        let aligned = align_to_truth(&out, &truth.m, anchored)?;
        let scores = score_run(&truth, &aligned)?;
        let idx = match groups.iter().position(|(l, _)| *l == label) {
            Some(i) => i,
            None => {
                groups.push((label.clone(), Vec::new()));
                groups.len() - 1
            }
        };
        write_maps(
            &maps,
            &format!("{label}_{}", groups[idx].1.len()),
            &aligned.a,
            &truth.geometry,
            z,
        )?;
        groups[idx].1.push(scores);
    }
    let rows: Vec<_> = groups.iter().flat_map(|(l, s)| rows_from_scores(l, s)).collect();
    let header = json!({
        "command": "eval",
        "truth_seed": truth.seed,
        "methods": groups.iter().map(|(l, _)| l.clone()).collect::<Vec<_>>(),
        "variance": "population",
        "slice": z,
        "config": cfg.to_json(),
    });
    let path = dir.join(EVAL_FILE);
    write_atomic(&path, to_csv(&header, &rows).as_bytes())?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointCell {
    method: Method,
    /// Per variable: `None` when not applicable, otherwise the value printed
    /// in shortest round-trip form (`NaN` for a failed run).
    scores: [Option<String>; 5],
    error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    fingerprint: Value,
    realization: u64,
    cells: Vec<CheckpointCell>,
}

impl CheckpointCell {
    fn new(method: Method, s: &Scores, error: Option<String>) -> Self {
        CheckpointCell {
            method,
            scores: s.0.map(|v| v.map(|x| format!("{x:?}"))),
            error,
        }
    }

    fn scores(&self) -> Option<Scores> {
        let mut out = [None; 5];
        for (o, s) in out.iter_mut().zip(&self.scores) {
            *o = match s {
                Some(text) => Some(text.parse::<f64>().ok()?),
                None => None,
            };
        }
        Some(Scores(out))
    }
}

/// Settings that determine the per-realization results.
fn fingerprint(cfg: &RunConfig) -> Value {
    let mut exp = cfg.experiment();
    exp.realizations = 0;
    json!({
        "seed": cfg.seed,
        "phantom": serde_json::to_value(&exp.phantom).expect("json"),
        "hyperparameters": serde_json::to_value(exp.hyperparameters).expect("json"),
        "methods": serde_json::to_value(&exp.methods).expect("json"),
        "nmf_tol": exp.nmf_tol,
        "nmf_max_iters": exp.nmf_max_iters,
    })
}

fn checkpoint_path(dir: &Path, r: u64) -> PathBuf {
    dir.join(format!("r{r:04}.json"))
}

fn load_checkpoint(dir: &Path, r: u64, fp: &Value, methods: &[Method]) -> Option<Vec<(Method, Scores)>> {
    let text = std::fs::read_to_string(checkpoint_path(dir, r)).ok()?;
    let ck: Checkpoint = serde_json::from_str(&text).ok()?;
    if ck.fingerprint != *fp || ck.realization != r || ck.cells.len() != methods.len() {
        return None;
    }
    ck.cells
        .iter()
        .zip(methods)
        .map(|(c, &m)| (c.method == m).then(|| c.scores().map(|s| (m, s))).flatten())
        .collect()
}

/// Options of [`cmd_compare`] that do not belong in the configuration.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompareOptions {
    /// Stop after this many newly computed realizations (simulates an
    /// interrupted sweep).
    pub stop_after: Option<usize>,
    /// Worker threads; 0 means one per available core.
    pub threads: usize,
}

/// Full sweep: phantom, every method on every noise realization, report.
///
/// Each finished realization is checkpointed under `checkpoints/`; a rerun
/// with the same settings reuses them. Iteration logs go to `logs/`.
/// Returns `None` when stopped early by `opts.stop_after`.
pub fn cmd_compare(cfg: &RunConfig, opts: CompareOptions) -> Result<Option<(PathBuf, ExperimentReport)>> {
    let exp = cfg.experiment();
    let mut setup = Setup::new(&exp, cfg.seed)?;
    setup.log_every = cfg.log_every;
    let dir = out_dir(cfg);
    let ck_dir = dir.join("checkpoints");
    let log_dir = dir.join("logs");
    let fp = fingerprint(cfg);
    let methods = exp.methods.clone();

    let mut done: BTreeMap<u64, Vec<(Method, Scores)>> = BTreeMap::new();
    let mut todo = Vec::new();
    for r in 0..exp.realizations as u64 {
        match load_checkpoint(&ck_dir, r, &fp, &methods) {
            Some(s) => {
                done.insert(r, s);
            }
            None => todo.push(r),
        }
    }
    if let Some(limit) = opts.stop_after {
        todo.truncate(limit);
    }
    let stopped_early = done.len() + todo.len() < exp.realizations;

    let threads = match opts.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        t => t,
    }
    .min(todo.len().max(1));
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::new());
    let failure: Mutex<Option<CliError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&r) = todo.get(i) else { break };
                let mut log = String::new();
                let cells = run_realization(&setup, &methods, r, |m, l| {
                    log.push_str(&format!("{} {}\n", m.name(), log_line(l)));
                });
                let mut ck = Checkpoint {
                    fingerprint: fp.clone(),
                    realization: r,
                    cells: Vec::new(),
                };
                for (m, s, err) in &cells {
                    if let Some(e) = err {
                        eprintln!("realization {r}: {} failed: {e}", m.name());
                        log.push_str(&format!("{} failed: {e}\n", m.name()));
                    }
                    ck.cells.push(CheckpointCell::new(*m, s, err.clone()));
                }
                let written = (cfg.log_every > 0 || !log.is_empty())
                    .then(|| write_atomic(&log_dir.join(format!("r{r:04}.log")), log.as_bytes()))
                    .transpose()
                    .and_then(|_| {
                        let text = serde_json::to_string(&ck).expect("checkpoint is JSON");
                        write_atomic(&checkpoint_path(&ck_dir, r), text.as_bytes())
                    });
                if let Err(e) = written {
                    failure.lock().expect("lock").get_or_insert(e);
                    break;
                }
                eprintln!("realization {r} done");
                let scores = cells.into_iter().map(|(m, s, _)| (m, s)).collect();
                results.lock().expect("lock").push((r, scores));
            });
        }
    });
    if let Some(e) = failure.into_inner().expect("lock") {
        return Err(e);
    }
    done.extend(results.into_inner().expect("lock"));
    if stopped_early {
        return Ok(None);
    }
    let runs: Vec<Vec<(Method, Scores)>> = done.into_values().collect();
    let report = aggregate(&methods, &runs, cfg.seed)?;
    let header = json!({
        "command": "compare",
        "seed": cfg.seed,
        "realizations": report.realizations,
        "variance": "population",
        "snr_convention": "global",
        "config": cfg.to_json(),
    });
    let path = dir.join(REPORT_FILE);
    write_atomic(&path, to_csv(&header, &rows_from_report(&report)).as_bytes())?;
    Ok(Some((path, report)))
}

/// What a CSV file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvKind {
    /// One row per voxel (`x, y, z` order, `z` fastest), one column per frame.
    Image,
    /// One row per frame: the nominal TAC, then one column per basis vector.
    Basis,
}

#[derive(Debug, Clone)]
pub struct ImportOptions {
    pub kind: CsvKind,
    /// Defaults to `[rows, 1, 1]` for images.
    pub dims: Option<[usize; 3]>,
    pub voxel_size_mm: f64,
    /// Frame durations in seconds; defaults to the configured frame scheme.
    pub frame_durations: Option<Vec<f64>>,
}

fn read_csv_matrix(path: &Path) -> Result<Mat> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::Data(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Data(format!("{}: line {}: non-finite value", path.display(), i + 1)));
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(CliError::Data(format!("{}: empty matrix", path.display())));
    }
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Mat::from_rows(&refs).map_err(|_| CliError::Data(format!("{}: rows have different lengths", path.display())))
}

/// Converts a CSV matrix into a container with an `image` section, or
/// `nominal` and `V` sections for a basis.
pub fn cmd_import_csv(cfg: &RunConfig, csv_path: &Path, out: &Path, opts: &ImportOptions) -> Result<PathBuf> {
    let raw = read_csv_matrix(csv_path)?;
    let n_frames = match opts.kind {
        CsvKind::Image => raw.cols(),
        CsvKind::Basis => raw.rows(),
    };
    let frames = match &opts.frame_durations {
        Some(d) => {
            if d.len() != n_frames {
                return Err(CliError::Usage(format!(
                    "{} frame durations given, the CSV has {n_frames} frames",
                    d.len()
                )));
            }
            let mut t = 0.0;
            d.iter()
                .map(|&len| {
                    let f = (t, t + len);
                    t += len;
                    f
                })
                .collect()
        }
        None => ImageGeometry::linear_frames(n_frames, cfg.phantom.first_frame_min, cfg.phantom.last_frame_min),
    };
    let dims = match opts.kind {
        CsvKind::Image => opts.dims.unwrap_or([raw.rows(), 1, 1]),
        CsvKind::Basis => opts.dims.unwrap_or([1, 1, 1]),
    };
    let geometry = ImageGeometry::new(dims, opts.voxel_size_mm, frames)?;
    let mut c = Container::new(&geometry, 0);
    c.provenance.insert("command".into(), json!("import-csv"));
    let source = csv_path.file_name().map(|s| s.to_string_lossy().into_owned());
    c.provenance.insert("source".into(), json!(source));
    match opts.kind {
        CsvKind::Image => {
            if raw.rows() != geometry.n_voxels() {
                return Err(CliError::Data(format!(
                    "{} rows, but dims {:?} need {}",
                    raw.rows(),
                    dims,
                    geometry.n_voxels()
                )));
            }
            c.push("image", raw.transpose());
        }
        CsvKind::Basis => {
            c.push("nominal", raw.select_cols(&[0]));
            c.push("V", raw.select_cols(&(1..raw.cols()).collect::<Vec<_>>()));
        }
    }
    c.write(out)?;
    Ok(out.to_path_buf())
}
