//! Command implementations. Each takes parsed arguments and a writer for its
//! human-readable report.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use har_core::dataset::{
    build_runs, class_distribution, parse_raw, prepare_windows, ActivityLabel, ParseReport, Sample, Window,
};
use har_core::metrics::{confusion_matrix, ConfusionMatrix, MetricsReport};
use har_core::model_file::{load_model, save_model, ModelBundle};
use har_core::numerics::SeededRng;
use har_core::recurrent::{network_backward, network_forward, predict, NetworkParams, INPUT_CHANNELS, NUM_CLASSES};
use har_core::training::{evaluate, gradient_check_against, train_with_progress, EpochStats, Hyperparameters};
use har_core::HarError;

use crate::args::{
    Cli, Command, DataSource, EvalArgs, ExportPlotsArgs, GradcheckArgs, PredictArgs, SplitArg, StatsArgs, TrainArgs,
    DEFAULT_MODEL_FILE,
};
use crate::CliError;

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Stats(a) => stats(&a, out),
        Command::Train(a) => train(&a, out),
        Command::Eval(a) => eval(&a, out),
        Command::Predict(a) => predict_window(&a, out),
        Command::ExportPlots(a) => export_plots(&a, out),
        Command::Gradcheck(a) => gradcheck(&a, out).map(|_| ()),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::stage("output", e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io("write", path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io("write", dir, e))
}

fn data_path(source: &DataSource) -> Result<PathBuf, CliError> {
    source
        .resolve()
        .ok_or_else(|| CliError::Usage("no data file given: pass --data or set HAR_DATA_DIR".into()))
}

pub fn load_samples(path: &Path) -> Result<(Vec<Sample>, ParseReport), CliError> {
    let file = File::open(path).map_err(|e| CliError::io("read", path, e))?;
    parse_raw(BufReader::new(file)).map_err(|e| CliError::io("parse", path, e))
}

fn load_bundle(path: &Path) -> Result<ModelBundle, CliError> {
    load_model(path).map_err(|e| CliError::io("load model", path, e))
}

// ---------------------------------------------------------------------------
// stats

pub fn stats(args: &StatsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let path = data_path(&args.source)?;
    let (samples, report) = load_samples(&path)?;
    let dist = class_distribution(&samples);

    let mut text = String::new();
    let _ = writeln!(text, "data file: {}", path.display());
    let _ = writeln!(text, "total samples: {}", dist.total());
    let _ = writeln!(text, "{:<12}{:>10}{:>9}", "activity", "count", "percent");
    let mut csv = String::from("activity,count,percent\n");
    for label in ActivityLabel::ALL {
        let (count, pct) = (dist.counts[label.index()], dist.percent(label));
        let _ = writeln!(text, "{:<12}{:>10}{:>8.2}%", label.name(), count, pct);
        let _ = writeln!(csv, "{},{count},{pct}", label.name());
    }
    let _ = writeln!(text, "records read: {}", report.lines_read);
    let _ = writeln!(
        text,
        "skipped: {} (malformed {}, unknown label {}, non-finite {}, out of range {})",
        report.skipped(),
        report.malformed,
        report.unknown_label,
        report.non_finite,
        report.out_of_range
    );
    if let Some(dir) = &args.out_dir {
        ensure_dir(dir)?;
        write_file(&dir.join("class_distribution.csv"), &csv)?;
    }
    emit(out, &text)
}

// ---------------------------------------------------------------------------
// train

fn config_error(e: HarError) -> CliError {
    match e {
        HarError::InvalidHyperparameter(m) => CliError::Usage(m),
        HarError::InvalidRatio(r) => CliError::Usage(format!("split ratio {r} must lie strictly between 0 and 1")),
        other => CliError::stage("config", other),
    }
}

pub fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let hp = args.hp.resolve();
    hp.validate().map_err(config_error)?;
    if !(args.split_ratio > 0.0 && args.split_ratio < 1.0) {
        return Err(config_error(HarError::InvalidRatio(args.split_ratio)));
    }
    let path = data_path(&args.source)?;
    let (samples, _) = load_samples(&path)?;
    let data = prepare_windows(
        &samples,
        hp.window_size,
        hp.stride,
        args.split_ratio,
        args.subject_split,
        !args.no_normalize,
        hp.seed,
    )
    .map_err(|e| CliError::stage("prepare windows", e))?;
    if data.train.is_empty() {
        return Err(CliError::stage(
            "prepare windows",
            "training split is empty (are the runs shorter than the window size?)",
        ));
    }

    ensure_dir(&args.out_dir)?;
    let model_path = args
        .model
        .clone()
        .unwrap_or_else(|| args.out_dir.join(DEFAULT_MODEL_FILE));
    let history_path = args.out_dir.join("history.csv");

    let quiet = args.quiet;
    let epochs = hp.epochs;
    let (params, report) = train_with_progress(&data.train, &data.test, &hp, |e: &EpochStats| {
        if !quiet {
            eprintln!(
                "epoch {}/{epochs}  train_loss {:.4}  train_acc {:.4}  test_loss {:.4}  test_acc {:.4}",
                e.epoch, e.train_loss, e.train_acc, e.test_loss, e.test_acc
            );
        }
    })
    .map_err(|e| CliError::stage("train", e))?;

    let bundle = ModelBundle {
        params,
        hyperparameters: hp.clone(),
        preprocessing: data.preprocessing,
    };
    save_model(&bundle, &model_path).map_err(|e| CliError::io("save model", &model_path, e))?;
    write_file(&history_path, &report.to_csv())?;

    let mut text = String::new();
    let _ = writeln!(text, "windows: train {}, test {}", data.train.len(), data.test.len());
    let _ = writeln!(
        text,
        "epochs: {} in {:.1} s",
        report.epochs.len(),
        report.wall_time.as_secs_f64()
    );
    if let Some(last) = report.last() {
        let _ = writeln!(
            text,
            "final train_loss={} train_acc={}",
            last.train_loss, last.train_acc
        );
    }
    if data.test.is_empty() {
        let _ = writeln!(text, "test set is empty; no test metrics");
    } else {
        let scored = score(&bundle.params, &data.test, &hp)?;
        let _ = writeln!(text, "test metrics:");
        text.push_str(&scored.report.to_key_value());
    }
    let _ = writeln!(text, "model: {}", model_path.display());
    let _ = writeln!(text, "history: {}", history_path.display());
    emit(out, &text)
}

/// Per-window predictions in input order, their confusion matrix and metrics.
struct Scored {
    predictions: Vec<usize>,
    matrix: ConfusionMatrix,
    report: MetricsReport,
}

fn score(np: &NetworkParams, windows: &[Window], hp: &Hyperparameters) -> Result<Scored, CliError> {
    let evaluation = evaluate(np, windows, hp.aggregation).map_err(|e| CliError::stage("evaluate", e))?;
    let truth: Vec<usize> = windows.iter().map(|w| w.label.index()).collect();
    let matrix =
        confusion_matrix(&truth, &evaluation.predictions, NUM_CLASSES).map_err(|e| CliError::stage("metrics", e))?;
    let report = MetricsReport::from_matrix(&matrix).map_err(|e| CliError::stage("metrics", e))?;
    Ok(Scored {
        predictions: evaluation.predictions,
        matrix,
        report,
    })
}

// ---------------------------------------------------------------------------
// eval

/// Rebuilds the windows a model was trained and tested on, with its stored
/// normalisation applied.
pub fn model_windows(bundle: &ModelBundle, samples: &[Sample]) -> Result<(Vec<Window>, Vec<Window>), CliError> {
    let hp = &bundle.hyperparameters;
    let pre = &bundle.preprocessing;
    let mut data = prepare_windows(
        samples,
        hp.window_size,
        hp.stride,
        pre.split_ratio,
        pre.subject_split,
        false,
        hp.seed,
    )
    .map_err(|e| CliError::stage("prepare windows", e))?;
    if let Some(stats) = &pre.normalization {
        stats.apply(&mut data.train);
        stats.apply(&mut data.test);
    }
    Ok((data.train, data.test))
}

pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let bundle = load_bundle(&args.model)?;
    let path = data_path(&args.source)?;
    let (samples, _) = load_samples(&path)?;
    let (train, test) = model_windows(&bundle, &samples)?;
    let windows = match args.split {
        SplitArg::Train => train,
        SplitArg::Test => test,
        SplitArg::All => train.into_iter().chain(test).collect(),
    };
    if windows.is_empty() {
        return Err(CliError::stage("evaluate", "the selected split has no windows"));
    }
    let Scored {
        predictions: preds,
        matrix,
        report,
    } = score(&bundle.params, &windows, &bundle.hyperparameters)?;

    let names: Vec<&str> = ActivityLabel::ALL.iter().map(|l| l.name()).collect();
    let mut predictions = String::from("index,truth,prediction\n");
    for (i, (w, p)) in windows.iter().zip(&preds).enumerate() {
        let _ = writeln!(predictions, "{i},{},{}", w.label.name(), names[*p]);
    }
    ensure_dir(&args.out_dir)?;
    write_file(&args.out_dir.join("metrics.txt"), &report.to_key_value())?;
    write_file(&args.out_dir.join("per_class.csv"), &report.to_table())?;
    write_file(&args.out_dir.join("confusion_matrix.csv"), &matrix.to_csv(&names))?;
    write_file(&args.out_dir.join("predictions.csv"), &predictions)?;

    let mut text = String::new();
    let _ = writeln!(text, "windows: {}", windows.len());
    text.push_str(&report.to_key_value());
    let _ = writeln!(
        text,
        "{:<12}{:>10}{:>10}{:>10}{:>9}",
        "class", "precision", "recall", "f1", "support"
    );
    for (c, m) in report.per_class.iter().enumerate() {
        let _ = writeln!(
            text,
            "{:<12}{:>10.4}{:>10.4}{:>10.4}{:>9}",
            names[c], m.precision, m.recall, m.f1, m.support
        );
    }
    text.push_str("confusion matrix (rows: true class, columns: predicted)\n");
    text.push_str(&matrix.to_csv(&names));
    emit(out, &text)
}

// ---------------------------------------------------------------------------
// predict

/// Reads `x,y,z` rows (comma, semicolon or whitespace separated). Blank lines
/// and `#` comments are ignored.
pub fn read_rows<R: BufRead>(reader: R) -> Result<Vec<[f64; 3]>, CliError> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::stage("input", e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let bad = || CliError::stage("input", format!("line {}: expected three numbers, got {line:?}", i + 1));
        if fields.len() != INPUT_CHANNELS {
            return Err(bad());
        }
        let mut row = [0.0; 3];
        for (v, f) in row.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|_| bad())?;
        }
        if row.iter().any(|v: &f64| !v.is_finite()) {
            return Err(bad());
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Result of classifying one window.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: ActivityLabel,
    pub probabilities: Vec<f64>,
    pub latency_ms: f64,
}

/// Classifies the last `window_size` rows with the model's preprocessing.
pub fn classify(bundle: &ModelBundle, rows: &[[f64; 3]]) -> Result<Prediction, CliError> {
    let ws = bundle.hyperparameters.window_size;
    if rows.len() < ws {
        return Err(CliError::stage(
            "input",
            format!("need at least {ws} rows for one window, got {}", rows.len()),
        ));
    }
    let mut window = rows[rows.len() - ws..].to_vec();
    if let Some(stats) = &bundle.preprocessing.normalization {
        window.iter_mut().for_each(|r| stats.apply_row(r));
    }
    let start = Instant::now();
    let probs = predict(&bundle.params, &window, bundle.hyperparameters.aggregation)
        .map_err(|e| CliError::stage("predict", e))?;
    let latency_ms = start.elapsed().as_secs_f64() * 1e3;
    let label = ActivityLabel::from_index(probs.argmax()).expect("six classes");
    Ok(Prediction {
        label,
        probabilities: probs.data,
        latency_ms,
    })
}

pub fn predict_window(args: &PredictArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let bundle = load_bundle(&args.model)?;
    let rows = match &args.input {
        Some(p) if p.as_os_str() != "-" => {
            let file = File::open(p).map_err(|e| CliError::io("read", p, e))?;
            read_rows(BufReader::new(file))?
        }
        _ => {
            let mut buf = String::new();
            io::stdin()
                .read_to_string(&mut buf)
                .map_err(|e| CliError::stage("input", e))?;
            read_rows(buf.as_bytes())?
        }
    };
    let p = classify(&bundle, &rows)?;
    let mut text = String::new();
    let _ = writeln!(text, "label={}", p.label);
    for (label, prob) in ActivityLabel::ALL.iter().zip(&p.probabilities) {
        let _ = writeln!(text, "p.{}={prob}", label.name());
    }
    let _ = writeln!(text, "latency_ms={:.4}", p.latency_ms);
    emit(out, &text)
}

// ---------------------------------------------------------------------------
// export-plots

const AXES: [&str; 3] = ["x", "y", "z"];

pub fn export_plots(args: &ExportPlotsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if args.data.is_none() && args.history.is_none() {
        return Err(CliError::Usage("export-plots needs --data, --history or both".into()));
    }
    ensure_dir(&args.out_dir)?;
    let mut manifest = String::new();

    if let Some(path) = &args.data {
        let (samples, _) = load_samples(path)?;
        let runs = build_runs(&samples);
        for label in ActivityLabel::ALL {
            let Some(run) = runs.iter().find(|r| r.label == label) else {
                let _ = writeln!(manifest, "missing {}: no samples in {}", label.name(), path.display());
                continue;
            };
            let take = &run.samples[..run.samples.len().min(args.max_samples)];
            for (axis, axis_name) in AXES.iter().enumerate() {
                let file = format!("signal_{}_{axis_name}.csv", label.name().to_lowercase());
                let mut csv = format!("index,timestamp,{axis_name}\n");
                for (i, s) in take.iter().enumerate() {
                    let _ = writeln!(csv, "{i},{},{}", s.timestamp, s.accel[axis]);
                }
                write_file(&args.out_dir.join(&file), &csv)?;
                let _ = writeln!(
                    manifest,
                    "{file}: {} {axis_name}-axis, subject {}, {} samples",
                    label.name(),
                    run.subject,
                    take.len()
                );
            }
        }
    }

    if let Some(path) = &args.history {
        let text = fs::read_to_string(path).map_err(|e| CliError::io("read", path, e))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next() != Some(EpochStats::CSV_HEADER) {
            return Err(CliError::io(
                "read",
                path,
                "not an epoch history file (unexpected header)",
            ));
        }
        let mut csv = String::from("epoch,train_loss,test_loss,train_accuracy_pct,test_accuracy_pct\n");
        let mut rows = 0;
        for line in lines {
            let f: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::io("read", path, format!("bad history row {line:?}")))?;
            if f.len() != 5 {
                return Err(CliError::io("read", path, format!("bad history row {line:?}")));
            }
            let _ = writeln!(csv, "{},{},{},{},{}", f[0], f[1], f[3], 100.0 * f[2], 100.0 * f[4]);
            rows += 1;
        }
        write_file(&args.out_dir.join("curves.csv"), &csv)?;
        let _ = writeln!(manifest, "curves.csv: training curves, {rows} epochs");
    }

    write_file(&args.out_dir.join("manifest.txt"), &manifest)?;
    emit(out, &manifest)
}

// ---------------------------------------------------------------------------
// gradcheck

pub fn gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<f64, CliError> {
    if args.hidden == 0 || args.steps == 0 || args.step.is_nan() || args.step <= 0.0 {
        return Err(CliError::Usage("--hidden, --steps and --step must be positive".into()));
    }
    let mut rng = SeededRng::new(args.seed);
    let np = NetworkParams::init(INPUT_CHANNELS, args.hidden, NUM_CLASSES, &mut rng)
        .map_err(|e| CliError::stage("gradcheck", e))?;
    let window: Vec<[f64; 3]> = (0..args.steps)
        .map(|_| [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)])
        .collect();
    let label = rng.below(NUM_CLASSES);
    let aggregation = args.aggregation.into();

    let (_, trace) = network_forward(&np, &window, aggregation).map_err(|e| CliError::stage("gradcheck", e))?;
    let mut analytic = network_backward(&np, &trace, label).map_err(|e| CliError::stage("gradcheck", e))?;
    if args.inject_fault {
        let mut tensors = analytic.tensors_mut();
        let g = &mut tensors[0].data[0];
        *g = *g * 1.01 + 1e-4;
    }
    let err = gradient_check_against(&np, &window, label, args.step, aggregation, &analytic)
        .map_err(|e| CliError::stage("gradcheck", e))?;

    let passed = err < args.tolerance;
    let text = format!(
        "seed={} hidden={} steps={} label={label}\nmax_relative_error={err:e}\ntolerance={:e}\nresult={}\n",
        args.seed,
        args.hidden,
        args.steps,
        args.tolerance,
        if passed { "pass" } else { "fail" }
    );
    emit(out, &text)?;
    if passed {
        Ok(err)
    } else {
        Err(CliError::stage(
            "gradcheck",
            format!("max relative error {err:e} is not below {:e}", args.tolerance),
        ))
    }
}
