use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DMatrix;
use trainmap::ghmm::{
    kmeans_baseline, sample_runs, select_model, viterbi, FitConfig, GaussianHmm, ModelFile, SplitConfig,
};
use trainmap::ingest::read_bundle;
use trainmap::map::{annotate_edges, export_map, DecodedRun, MapFormat};
use trainmap::metrics::compute_metrics;
use trainmap::semantics::{
    convergence_time, detect_detours, dissimilarity, fit_regression, unigram_features, write_convergence_csv,
    RegressionReport, StateDistribution,
};
use trainmap::table::{MetricRow, MetricsTable};
use trainmap::trajectory::{normalize, trajectories_from_table, NormalizedTrajectory};

use crate::args::{BaselineArgs, Cli, Command, FitArgs, MapArgs, MetricsArgs, RegressArgs, SampleArgs, StateRange};
use crate::error::CliError;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Metrics(a) => metrics(a),
        Command::Fit(a) => fit(a),
        Command::Map(a) => map(a),
        Command::Regress(a) => regress(a),
        Command::Sample(a) => sample(a),
        Command::Baseline(a) => baseline(a),
    }
}

/// `<stem>.<suffix>` next to `output`.
fn sibling(output: &Path, suffix: &str) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
    output.with_file_name(format!("{stem}.{suffix}"))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_table(path: &Path, features: Option<&[String]>) -> Result<MetricsTable, CliError> {
    let table = MetricsTable::read_path(path)?;
    match features {
        Some(names) => table.select(names).map_err(CliError::at(path)),
        None => Ok(table),
    }
}

fn load_model(path: &Path) -> Result<GaussianHmm, CliError> {
    let text = read_file(path)?;
    ModelFile::from_json(&text)
        .and_then(|f| f.to_model())
        .map_err(CliError::at(path))
}

fn normalized(table: &MetricsTable, path: &Path) -> Result<Vec<NormalizedTrajectory>, CliError> {
    trajectories_from_table(table)
        .and_then(|ts| ts.iter().map(normalize).collect())
        .map_err(CliError::at(path))
}

fn decode(model: &GaussianHmm, trajs: &[NormalizedTrajectory]) -> Result<Vec<Vec<usize>>, CliError> {
    trajs
        .iter()
        .map(|t| {
            viterbi(model, &t.observations)
                .map(|v| v.states)
                .map_err(|e| CliError::Usage(format!("seed {}: {e}", t.seed)))
        })
        .collect()
}

fn check_range(range: &StateRange) -> Result<(), CliError> {
    if range.k_min == 0 || range.k_min > range.k_max {
        return Err(CliError::Usage(format!(
            "--k-min {} and --k-max {} must satisfy 1 <= k-min <= k-max",
            range.k_min, range.k_max
        )));
    }
    Ok(())
}

pub fn metrics(args: &MetricsArgs) -> Result<(), CliError> {
    let mut vectors = Vec::with_capacity(args.bundles.len());
    for path in &args.bundles {
        let snapshot = read_bundle(path).map_err(CliError::at(path))?;
        let (vector, _) = compute_metrics(&snapshot).map_err(CliError::at(path))?;
        vectors.push(vector);
    }
    let table = MetricsTable::from_vectors(vectors);
    if let Some(w) = table.rows.windows(2).find(|w| (w[0].seed, w[0].step) == (w[1].seed, w[1].step)) {
        return Err(CliError::Usage(format!(
            "two bundles share seed {} and step {}",
            w[0].seed, w[0].step
        )));
    }
    table.write_path(&args.output)?;
    info!("wrote {} rows to {}", table.rows.len(), args.output.display());
    Ok(())
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    check_range(&args.range)?;
    let table = load_table(&args.metrics, args.features.features.as_deref())?;
    let trajs = normalized(&table, &args.metrics)?;
    let config = FitConfig {
        max_iters: args.max_iters,
        tol: args.tol,
        restarts: args.restarts,
        rng_seed: args.fit_seed,
        ..FitConfig::default()
    };
    let split = SplitConfig {
        val_frac: args.val_frac,
        split_seed: args.split_seed,
    };
    let selection = select_model(&trajs, args.range.k_min..=args.range.k_max, &config, &split)
        .map_err(CliError::at(&args.metrics))?;
    info!(
        "chose {} states ({} training, {} validation seeds)",
        selection.model.n_states(),
        selection.train_seeds.len(),
        selection.val_seeds.len()
    );
    let file = ModelFile::from_model(&selection.model, Some(config.record()));
    write_file(&args.output, file.to_json()?)?;

    let path = args.selection.clone().unwrap_or_else(|| sibling(&args.output, "selection.csv"));
    let mut buf = Vec::new();
    selection
        .table
        .write_csv(&mut buf)
        .expect("writing to memory cannot fail");
    write_file(&path, buf)
}

/// Step at which each run first reaches `threshold`, `None` when it never does
/// or carries no accuracy column.
fn convergence(trajs: &[NormalizedTrajectory], threshold: f64) -> Result<Vec<Option<u64>>, CliError> {
    trajs
        .iter()
        .map(|t| {
            let series = t.eval_series();
            if series.is_empty() {
                return Ok(None);
            }
            convergence_time(&series, threshold).map_err(|e| CliError::Usage(format!("seed {}: {e}", t.seed)))
        })
        .collect()
}

pub fn map(args: &MapArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let table = load_table(&args.metrics, Some(model.feature_names()))?;
    let trajs = normalized(&table, &args.metrics)?;
    let paths = decode(&model, &trajs)?;
    let conv = convergence(&trajs, args.threshold)?;
    let runs: Vec<DecodedRun> = trajs
        .iter()
        .zip(&paths)
        .zip(&conv)
        .map(|((t, p), c)| DecodedRun {
            observations: &t.observations,
            path: p,
            convergence: *c,
        })
        .collect();
    let training_map = annotate_edges(&model, &runs)?;
    write_file(&args.output, export_map(&training_map, MapFormat::Dot)?)?;
    let mut json = args.json.clone().unwrap_or_else(|| args.output.with_extension("json"));
    if json == args.output {
        json = sibling(&args.output, "map.json");
    }
    write_file(&json, export_map(&training_map, MapFormat::Json)?)
}

pub fn regress(args: &RegressArgs) -> Result<(), CliError> {
    if !(args.gate > 0.0 && args.gate <= 1.0) {
        return Err(CliError::Usage(format!("--gate {} must lie in (0, 1]", args.gate)));
    }
    let model = load_model(&args.model)?;
    let k = model.n_states();
    let table = load_table(&args.metrics, Some(model.feature_names()))?;
    let trajs = normalized(&table, &args.metrics)?;
    if let Some(t) = trajs.iter().find(|t| t.eval_series().is_empty()) {
        return Err(CliError::Usage(format!(
            "{}: seed {} has no eval_acc values",
            args.metrics.display(),
            t.seed
        )));
    }
    let paths = decode(&model, &trajs)?;
    let conv = convergence(&trajs, args.threshold)?;

    let mut kept = Vec::new();
    for (i, c) in conv.iter().enumerate() {
        match c {
            Some(step) => kept.push((i, *step)),
            None => warn!(
                "seed {} never reaches accuracy {}; left out of the regression",
                trajs[i].seed, args.threshold
            ),
        }
    }
    if kept.is_empty() {
        return Err(CliError::Usage(format!("no seed reaches accuracy {}", args.threshold)));
    }

    let distributions: Vec<StateDistribution> = trajs
        .iter()
        .zip(&paths)
        .map(|(t, p)| unigram_features(t.seed, p, k))
        .collect::<trainmap::Result<_>>()?;
    let features = DMatrix::from_fn(kept.len(), k, |r, c| distributions[kept[r].0].probs[c]);
    let targets: Vec<f64> = kept.iter().map(|&(_, step)| step as f64).collect();
    let regression = fit_regression(&features, &targets)?;
    let kept_paths: Vec<&[usize]> = kept.iter().map(|&(i, _)| paths[i].as_slice()).collect();
    let detours = detect_detours(&regression, &kept_paths, args.gate)?;
    let dissim = dissimilarity(&distributions)?;
    info!(
        "R² {:.3}, p {:.3e}, detour states {:?}",
        regression.r_squared,
        regression.p_value,
        detours.detour_states()
    );

    let report = RegressionReport::new(&regression, &detours, args.threshold, dissim);
    write_file(&args.output, report.to_json()?)?;
    let rows: Vec<(i64, u64)> = kept.iter().map(|&(i, step)| (trajs[i].seed, step)).collect();
    let mut buf = Vec::new();
    write_convergence_csv(&rows, &mut buf).expect("writing to memory cannot fail");
    let path = args.histogram.clone().unwrap_or_else(|| sibling(&args.output, "convergence.csv"));
    write_file(&path, buf)
}

pub fn sample(args: &SampleArgs) -> Result<(), CliError> {
    if args.runs == 0 || args.length == 0 {
        return Err(CliError::Usage("--runs and --length must be positive".into()));
    }
    let model = load_model(&args.model)?;
    let mut table = MetricsTable::new(model.feature_names().to_vec()).map_err(CliError::at(&args.model))?;
    let mut states = String::from("seed,step,state\n");
    for (i, run) in sample_runs(&model, args.runs, args.length, args.sample_seed).into_iter().enumerate() {
        for (t, row) in run.observations.row_iter().enumerate() {
            table.rows.push(MetricRow {
                seed: i as i64,
                step: t as u64,
                eval_accuracy: None,
                values: row.iter().copied().collect(),
            });
            states.push_str(&format!("{i},{t},{}\n", run.states[t]));
        }
    }
    table.write_path(&args.output)?;
    let path = args.states.clone().unwrap_or_else(|| sibling(&args.output, "states.csv"));
    write_file(&path, states)
}

pub fn baseline(args: &BaselineArgs) -> Result<(), CliError> {
    check_range(&args.range)?;
    let table = load_table(&args.metrics, args.features.features.as_deref())?;
    let trajs = normalized(&table, &args.metrics)?;
    let base = kmeans_baseline(&trajs, args.range.k_min..=args.range.k_max, args.fit_seed)
        .map_err(CliError::at(&args.metrics))?;
    let mut buf = Vec::new();
    base.table.write_csv(&mut buf).expect("writing to memory cannot fail");
    write_file(&args.output, buf)?;

    let mut labels = String::from("seed,step,label\n");
    for (t, l) in trajs.iter().zip(&base.labels) {
        for (step, label) in t.steps.iter().zip(l) {
            labels.push_str(&format!("{},{step},{label}\n", t.seed));
        }
    }
    let path = args.labels.clone().unwrap_or_else(|| sibling(&args.output, "labels.csv"));
    write_file(&path, labels)
}
