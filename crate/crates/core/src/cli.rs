//! Command-line front end. Exit codes: 0 success, 2 bad input or config,
//! 3 numeric failure during training or evaluation.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ndarray::Array2;
use serde::Serialize;

use crate::config::RunConfigFile;
use crate::error::{Error, Result};
use crate::eval::experiments::{ablation_grid, bottleneck_sweep, AblationRowSpec};
use crate::eval::report::{class_texts_or_derived, pair_task_report, write_reports_csv};
use crate::eval::{attack_accuracy, ocr_rate_report, read_attack_records, similarity_matrix};
use crate::projection::{load_projection, save_projection, ProjectionMatrix};
use crate::store::{load_matrix, load_tuples, save_matrix, save_tuples, split_dataset, EmbeddingMatrix, EmbeddingTuple};
use crate::synth::{generate_attack_world, generate_world, SyntheticWorldSpec};
use crate::train::{train, write_log_csv, TrainConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "clipdis", version, about = "Train and evaluate text/visual disentangling projections")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world with known visual and text subspaces.
    GenSynth {
        /// World spec JSON; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output tuple file.
        #[arg(long)]
        out: PathBuf,
        /// Also split off a validation file.
        #[arg(long)]
        val_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        /// Prefix for ground-truth bases, class texts and a JSON sidecar.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Prefix for a typographic-attack set (images, labels, map).
        #[arg(long)]
        attack: Option<PathBuf>,
        #[arg(long, default_value_t = 1.5)]
        attack_strength: f64,
    },
    /// Train a projection.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Class-text matrix; otherwise mean `y_i` per class of the validation set.
        #[arg(long)]
        classes: Option<PathBuf>,
        /// Report path; defaults to the model path with extension `report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a projection (or the raw space) on a tuple file.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        classes: Option<PathBuf>,
        /// JSON report; a CSV row is written next to it.
        #[arg(long)]
        report: PathBuf,
    },
    /// Train one `L4`-only projection per bottleneck size.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        classes: Option<PathBuf>,
        /// `start:stop:step` (inclusive) or a comma list.
        #[arg(long)]
        dims: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one projection per loss-term subset in a JSON grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        classes: Option<PathBuf>,
        #[arg(long)]
        grid: PathBuf,
        /// CSV table; a JSON copy goes next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy on images with misleading written text.
    AttackEval {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// `row_index,true_label_id,attack_label_id` CSV.
        #[arg(long)]
        map: PathBuf,
        /// JSON scores; the similarity matrix goes next to it as CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Text-detection rates from OCR output on generated images.
    OcrScore {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_INPUT
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenSynth {
            spec,
            out,
            val_out,
            val_fraction,
            truth,
            attack,
            attack_strength,
        } => cmd_gen_synth(
            spec.as_deref(),
            &out,
            val_out.as_deref(),
            val_fraction,
            truth.as_deref(),
            attack.as_deref(),
            attack_strength,
        ),
        Command::Train {
            config,
            data,
            val,
            out,
            log,
            classes,
            report,
        } => cmd_train(
            &config,
            &data,
            val.as_deref(),
            &out,
            log.as_deref(),
            classes.as_deref(),
            report.as_deref(),
        ),
        Command::Eval {
            model,
            data,
            classes,
            report,
        } => cmd_eval(model.as_deref(), &data, classes.as_deref(), &report),
        Command::Sweep {
            config,
            data,
            val,
            classes,
            dims,
            out,
        } => cmd_sweep(&config, &data, &val, classes.as_deref(), &dims, &out),
        Command::Ablate {
            config,
            data,
            val,
            classes,
            grid,
            out,
        } => cmd_ablate(&config, &data, &val, classes.as_deref(), &grid, &out),
        Command::AttackEval {
            model,
            images,
            labels,
            map,
            out,
        } => cmd_attack_eval(model.as_deref(), &images, &labels, &map, &out),
        Command::OcrScore { detections, out } => cmd_ocr_score(&detections, &out),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(Error::from)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// `model.wpr` + `report.json` -> `model.report.json`.
fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_data(path: &Path) -> Result<(usize, Vec<EmbeddingTuple>)> {
    let (header, tuples) = load_tuples(path)?;
    Ok((header.dim as usize, tuples))
}

fn load_config(path: &Path, dim: usize) -> Result<TrainConfig> {
    RunConfigFile::from_json(&read_text(path)?)?.resolve(Some(dim))
}

fn load_classes(path: Option<&Path>, tuples: &[EmbeddingTuple]) -> Result<Array2<f64>> {
    let explicit = path.map(|p| load_matrix(p).map(|m| m.to_f64())).transpose()?;
    class_texts_or_derived(explicit, tuples)
}

fn load_model(path: Option<&Path>, dim: usize) -> Result<Option<ProjectionMatrix>> {
    let Some(path) = path else { return Ok(None) };
    let (p, _) = load_projection(path)?;
    if p.d() != dim {
        return Err(Error::DimensionMismatch(format!(
            "model expects dimension {}, data has {dim}",
            p.d()
        )));
    }
    Ok(Some(p))
}

fn to_f32_matrix(m: &Array2<f64>) -> Array2<f32> {
    m.mapv(|x| x as f32)
}

#[derive(Serialize)]
struct TruthSidecar<'a> {
    spec: &'a SyntheticWorldSpec,
    vocabulary: &'a [String],
    real_words: usize,
}

fn cmd_gen_synth(
    spec: Option<&Path>,
    out: &Path,
    val_out: Option<&Path>,
    val_fraction: f64,
    truth_prefix: Option<&Path>,
    attack_prefix: Option<&Path>,
    attack_strength: f64,
) -> Result<()> {
    let spec: SyntheticWorldSpec = match spec {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| Error::Config(e.to_string()))?,
        None => SyntheticWorldSpec::default(),
    };
    let (tuples, truth) = generate_world(&spec)?;
    match val_out {
        Some(v) => {
            let (tr, va) = split_dataset(&tuples, val_fraction, spec.seed)?;
            save_tuples(out, spec.d, &tr)?;
            save_tuples(v, spec.d, &va)?;
        }
        None => save_tuples(out, spec.d, &tuples)?,
    }
    if let Some(prefix) = truth_prefix {
        save_matrix(suffixed(prefix, ".bvis.clipmat"), &EmbeddingMatrix::new(to_f32_matrix(&truth.b_vis))?)?;
        save_matrix(suffixed(prefix, ".btxt.clipmat"), &EmbeddingMatrix::new(to_f32_matrix(&truth.b_txt))?)?;
        let classes = truth.class_texts();
        let labels = (0..classes.nrows()).map(|c| format!("class_{c}")).collect();
        save_matrix(
            suffixed(prefix, ".classes.clipmat"),
            &EmbeddingMatrix::new(to_f32_matrix(&classes))?.with_labels(labels)?,
        )?;
        write_json(
            &suffixed(prefix, ".json"),
            &TruthSidecar {
                spec: &spec,
                vocabulary: &truth.vocabulary,
                real_words: spec.vocab.div_ceil(2),
            },
        )?;
    }
    if let Some(prefix) = attack_prefix {
        let world = generate_attack_world(&truth, 1, attack_strength, spec.noise_sigma, spec.seed + 1);
        save_matrix(suffixed(prefix, ".images.clipmat"), &EmbeddingMatrix::new(to_f32_matrix(&world.images))?)?;
        let labels = (0..world.label_texts.nrows()).map(|c| format!("class_{c}")).collect();
        save_matrix(
            suffixed(prefix, ".labels.clipmat"),
            &EmbeddingMatrix::new(to_f32_matrix(&world.label_texts))?.with_labels(labels)?,
        )?;
        let mut w = csv::Writer::from_writer(create(&suffixed(prefix, ".map.csv"))?);
        w.write_record(["row_index", "true_label_id", "attack_label_id"])?;
        for (i, (t, a)) in world.true_labels.iter().zip(&world.attack_labels).enumerate() {
            w.write_record([i.to_string(), t.to_string(), a.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn cmd_train(
    config: &Path,
    data: &Path,
    val: Option<&Path>,
    out: &Path,
    log: Option<&Path>,
    classes: Option<&Path>,
    report: Option<&Path>,
) -> Result<()> {
    let (dim, tuples) = load_data(data)?;
    let cfg = load_config(config, dim)?;
    if !cfg.has_objective() {
        return Err(Error::Config("no loss term enabled and gamma is 0: nothing to train".into()));
    }
    let outcome = train(&tuples, &cfg)?;
    let meta = serde_json::to_string(&cfg)?;
    save_projection(out, &outcome.projection, &meta)?;
    if let Some(log) = log {
        let mut w = create(log)?;
        write_log_csv(&mut w, &outcome.log)?;
        w.flush()?;
    }
    if let Some(val) = val {
        let (vdim, vtuples) = load_data(val)?;
        if vdim != dim {
            return Err(Error::DimensionMismatch(format!(
                "validation dimension {vdim}, training dimension {dim}"
            )));
        }
        let ct = load_classes(classes, &vtuples)?;
        let r = pair_task_report(&vtuples, ct.view(), Some(&outcome.projection))?;
        let path = report.map(Path::to_path_buf).unwrap_or_else(|| sibling(out, "report.json"));
        write_json(&path, &r)?;
    }
    Ok(())
}

fn cmd_eval(model: Option<&Path>, data: &Path, classes: Option<&Path>, report: &Path) -> Result<()> {
    let (dim, tuples) = load_data(data)?;
    let p = load_model(model, dim)?;
    let ct = load_classes(classes, &tuples)?;
    let r = pair_task_report(&tuples, ct.view(), p.as_ref())?;
    write_json(report, &r)?;
    let label = if p.is_some() { "model" } else { "baseline" };
    let mut w = create(&sibling(report, "csv"))?;
    write_reports_csv(&mut w, &[(label.to_string(), &r)])?;
    w.flush()?;
    Ok(())
}

/// Parses `start:stop:step` (inclusive of `stop` when on the grid) or `a,b,c`.
pub fn parse_dims(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidArgument(format!("bad --dims {s:?}; use start:stop:step or a,b,c"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if step == 0 || a == 0 || b < a {
            return Err(bad());
        }
        Ok((a..=b).step_by(step).collect())
    } else {
        let v = s.split(',').map(num).collect::<Result<Vec<_>>>()?;
        if v.is_empty() || v.contains(&0) {
            return Err(bad());
        }
        Ok(v)
    }
}

fn cmd_sweep(config: &Path, data: &Path, val: &Path, classes: Option<&Path>, dims: &str, out: &Path) -> Result<()> {
    let dims = parse_dims(dims)?;
    let (dim, tuples) = load_data(data)?;
    let (_, vtuples) = load_data(val)?;
    let cfg = load_config(config, dim)?;
    let ct = load_classes(classes, &vtuples)?;
    let rows = bottleneck_sweep(&tuples, &vtuples, ct.view(), &cfg, &dims)?;
    let mut w = csv::Writer::from_writer(create(out)?);
    w.write_record(["k", "score", "final_residual"])?;
    for r in &rows {
        w.write_record([
            r.k.to_string(),
            r.score.map(|x| x.to_string()).unwrap_or_default(),
            r.final_residual.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_ablate(config: &Path, data: &Path, val: &Path, classes: Option<&Path>, grid: &Path, out: &Path) -> Result<()> {
    let specs: Vec<AblationRowSpec> =
        serde_json::from_str(&read_text(grid)?).map_err(|e| Error::Config(format!("grid: {e}")))?;
    let (dim, tuples) = load_data(data)?;
    let (_, vtuples) = load_data(val)?;
    let cfg = load_config(config, dim)?;
    let ct = load_classes(classes, &vtuples)?;
    let rows = ablation_grid(&tuples, &vtuples, ct.view(), &cfg, &specs)?;
    let labelled: Vec<(String, &_)> = rows.iter().map(|r| (r.label(), &r.report)).collect();
    let mut w = create(out)?;
    write_reports_csv(&mut w, &labelled)?;
    w.flush()?;
    write_json(&sibling(out, "json"), &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct AttackReport {
    n_images: usize,
    n_labels: usize,
    baseline: crate::eval::AttackScores,
    model: Option<crate::eval::AttackScores>,
}

fn cmd_attack_eval(model: Option<&Path>, images: &Path, labels: &Path, map: &Path, out: &Path) -> Result<()> {
    let images = load_matrix(images)?;
    let labels = load_matrix(labels)?;
    if images.dim() != labels.dim() {
        return Err(Error::DimensionMismatch(format!(
            "images have dimension {}, labels {}",
            images.dim(),
            labels.dim()
        )));
    }
    let p = load_model(model, images.dim())?;
    let records = read_attack_records(&images, BufReader::new(File::open(map)?))?;
    let label_texts = labels.to_f64();
    let baseline = attack_accuracy(&records, label_texts.view(), None)?;
    let scored = p
        .as_ref()
        .map(|p| attack_accuracy(&records, label_texts.view(), Some(p)))
        .transpose()?;
    write_json(
        out,
        &AttackReport {
            n_images: records.len(),
            n_labels: labels.len(),
            baseline,
            model: scored,
        },
    )?;

    let sims = similarity_matrix(images.to_f64().view(), label_texts.view(), p.as_ref())?;
    let names: Vec<String> = match &labels.labels {
        Some(l) => l.clone(),
        None => (0..labels.len()).map(|i| format!("label_{i}")).collect(),
    };
    let mut w = csv::Writer::from_writer(create(&sibling(out, "similarity.csv"))?);
    let mut header = vec!["row_index".to_string()];
    header.extend(names);
    w.write_record(&header)?;
    for (i, row) in sims.rows().into_iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|x| format!("{x:.6}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_ocr_score(detections: &Path, out: &Path) -> Result<()> {
    let images = crate::eval::ocr::read_detections(BufReader::new(File::open(detections)?))?;
    let rows = ocr_rate_report(&images);
    let mut w = create(out)?;
    crate::eval::ocr::write_rate_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}
