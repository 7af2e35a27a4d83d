use std::path::{Path, PathBuf};

use log::warn;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sobl::ordinal_weights::{anova_f_pvalue, compute_weights, group_mean_tau, kendall_tau};
use sobl::pipeline::{
    evaluate_losses, fit_model, predict as predict_labels, screen_variables, tune_grid_cv, tune_two_step,
    FitOptions, FittedClassifier, FittedModel, TuneConfig, TuningMethod,
};
use sobl::simbench::{
    class_labels, monte_carlo_run, theory_diagnostics, MonteCarloConfig, MonteCarloResult, METRICS, RNG_ALGORITHM,
};
use sobl::{compute_group_statistics, LabeledDataset, MethodVariant, OrdinalWeightVector, SolverConfig, WeightMethod};

use crate::error::CliError;
use crate::io::{self, fmt_f64, write_json, write_matrix, CsvOut, ManifestBuilder};
use crate::{DataArgs, DiagnoseArgs, FitArgs, PredictArgs, SimulateArgs, TuneArgs, WeightsArgs};

/// Contents of `model.json`.
#[derive(Serialize, Deserialize)]
pub struct ModelFile {
    /// Predictor columns the classifier reads, in order.
    pub feature_names: Vec<String>,
    pub label_col: String,
    pub variant: MethodVariant,
    pub weights: WeightMethod,
    pub lambda: f64,
    pub eta: f64,
    pub classifier: FittedClassifier,
}

/// Training data after screening and optional standardization.
struct Prepared {
    data: LabeledDataset,
    /// All predictor names of the CSV.
    all_names: Vec<String>,
    /// Original indices of the analysed predictors.
    keep: Vec<usize>,
    scales: Option<Array1<f64>>,
}

impl Prepared {
    fn names(&self) -> Vec<String> {
        self.keep.iter().map(|&j| self.all_names[j].clone()).collect()
    }
}

fn load(args: &DataArgs, manifest: &mut ManifestBuilder) -> Result<Prepared, CliError> {
    let bytes = manifest.input(&args.data)?;
    let table = io::parse_table(&bytes, Some(&args.label_col), &[])?;
    let labels = table.labels.ok_or_else(|| CliError::Internal("labels not parsed".into()))?;
    let data = LabeledDataset::new(table.x, labels)?;
    if data.k() < 2 {
        return Err(CliError::Input("need at least two classes".into()));
    }
    let (data, keep) = match args.screen {
        Some(m) if m < data.p() => {
            let keep = screen_variables(&data, m)?;
            (data.select_columns(&keep), keep)
        }
        Some(0) => return Err(CliError::Input("--screen must be positive".into())),
        _ => {
            let p = data.p();
            (data, (0..p).collect())
        }
    };
    let (data, scales) = if args.standardize {
        let (d, s) = data.standardized();
        (d, Some(s))
    } else {
        (data, None)
    };
    Ok(Prepared {
        data,
        all_names: table.names,
        keep,
        scales,
    })
}

fn check_weights(w: &OrdinalWeightVector, names: &[String]) {
    for &j in &w.diagnostics().constant {
        warn!("predictor '{}' is constant; its weight is 0", names[j]);
    }
}

fn write_fit_outputs(
    out: &Path,
    prep: &Prepared,
    label_col: &str,
    variant: MethodVariant,
    weights: &OrdinalWeightVector,
    lambda: f64,
    eta: f64,
    model: FittedModel,
) -> Result<Vec<PathBuf>, CliError> {
    let est = &model.estimate;
    if !est.converged {
        warn!("solver stopped after {} sweeps without converging", est.iterations);
    }
    // basis rows for every CSV predictor, zero where screened out
    let mut basis = Array2::zeros((prep.all_names.len(), est.z.ncols()));
    for (r, &j) in prep.keep.iter().enumerate() {
        basis.row_mut(j).assign(&est.z.row(r));
    }
    let mut paths = vec![];
    let path = out.join("basis.csv");
    write_matrix(&path, &prep.all_names, basis.view(), "z")?;
    paths.push(path);

    let mut active = CsvOut::new(&["index", "variable"]);
    for &r in &est.active_set {
        let j = prep.keep[r];
        active.row([j.to_string(), prep.all_names[j].clone()]);
    }
    let path = out.join("active_set.csv");
    active.save(&path)?;
    paths.push(path);

    let mut wcsv = CsvOut::new(&["variable", "weight"]);
    for (r, &v) in weights.values().iter().enumerate() {
        wcsv.row([prep.all_names[prep.keep[r]].clone(), fmt_f64(v)]);
    }
    let path = out.join("weights.csv");
    wcsv.save(&path)?;
    paths.push(path);

    #[derive(Serialize)]
    struct EstimateSummary {
        lambda: f64,
        eta: f64,
        objective: f64,
        iterations: usize,
        converged: bool,
        kkt_residual: f64,
        active_size: usize,
    }
    let path = out.join("estimate.json");
    write_json(
        &path,
        &EstimateSummary {
            lambda,
            eta,
            objective: est.objective,
            iterations: est.iterations,
            converged: est.converged,
            kkt_residual: est.kkt_residual,
            active_size: est.active_set.len(),
        },
    )?;
    paths.push(path);

    let classifier = match &prep.scales {
        Some(s) => model.classifier.with_feature_scale(s.clone()),
        None => model.classifier,
    };
    let file = ModelFile {
        feature_names: prep.names(),
        label_col: label_col.to_string(),
        variant,
        weights: weights.method(),
        lambda,
        eta,
        classifier,
    };
    let path = out.join("model.json");
    write_json(&path, &file)?;
    paths.push(path);
    Ok(paths)
}

fn fit_options(ridge: f64) -> Result<FitOptions, CliError> {
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(CliError::Input(format!("--ridge must be a finite nonnegative number, got {ridge}")));
    }
    Ok(FitOptions {
        ridge_factor: ridge,
        solver: SolverConfig::default(),
    })
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("fit");
    let prep = load(&args.input, &mut manifest)?;
    let weights = compute_weights(&prep.data, args.weights)?;
    check_weights(&weights, &prep.names());
    let model = fit_model(&prep.data, args.variant, &weights, args.lambda, args.eta, &fit_options(args.ridge)?)?;
    let outputs = write_fit_outputs(
        &args.out,
        &prep,
        &args.input.label_col,
        args.variant,
        &weights,
        args.lambda,
        args.eta,
        model,
    )?;
    let m = manifest.finish(args, None, None, &outputs)?;
    write_json(&args.out.join("manifest.json"), &m)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn predict(args: &PredictArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("predict");
    let model_bytes = manifest.input(&args.model)?;
    let model: ModelFile = serde_json::from_slice(&model_bytes)
        .map_err(|e| CliError::Input(format!("{}: not a model file: {e}", args.model.display())))?;
    let bytes = manifest.input(&args.data)?;
    let drop = [model.label_col.as_str()];
    let table = match &args.truth {
        Some(col) => io::parse_table(&bytes, Some(col), &drop)?,
        None => io::parse_table(&bytes, None, &drop)?,
    };
    let cols: Vec<usize> = model
        .feature_names
        .iter()
        .map(|name| {
            table.names.iter().position(|n| n == name).ok_or_else(|| {
                CliError::Input(format!("dimension mismatch: model predictor '{name}' is not in the data"))
            })
        })
        .collect::<Result<_, _>>()?;
    let x = table.x.select(ndarray::Axis(1), &cols);
    let yhat = predict_labels(&model.classifier, x.view())?;

    let mut outputs = vec![args.out.clone()];
    let mut csv = CsvOut::new(if table.labels.is_some() { &["row", "predicted", "truth"] } else { &["row", "predicted"] });
    for (i, &g) in yhat.iter().enumerate() {
        let mut fields = vec![(i + 1).to_string(), g.to_string()];
        if let Some(y) = &table.labels {
            fields.push(y[i].to_string());
        }
        csv.row(fields);
    }
    csv.save(&args.out)?;
    if let Some(y) = &table.labels {
        let losses = evaluate_losses(&yhat, y)?;
        let path = sibling(&args.out, "losses.json");
        write_json(&path, &losses)?;
        outputs.push(path);
    }
    let m = manifest.finish(args, None, None, &outputs)?;
    write_json(&sibling(&args.out, "manifest.json"), &m)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn weights(args: &WeightsArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("weights");
    let prep = load(&args.input, &mut manifest)?;
    let data = &prep.data;
    let w = compute_weights(data, args.method)?;
    let names = prep.names();
    check_weights(&w, &names);
    let stats = compute_group_statistics(data)?;
    let diag = w.diagnostics();
    let mut header = vec!["variable", "weight", "tau_hat", "tau_tilde", "f_pvalue"];
    let trend = diag.p_inc.is_some();
    if trend {
        header.extend(["p_inc", "p_dec"]);
    }
    let mut csv = CsvOut::new(&header);
    for j in 0..data.p() {
        let tau_hat = match &diag.tau {
            Some(t) => Some(t.tau_hat[j]),
            None => kendall_tau(data.column(j), data.y(), true).ok(),
        };
        let tau_tilde = match &diag.tau {
            Some(t) => t.tau_tilde[j],
            None => group_mean_tau(&stats, j),
        };
        let f_p = match &diag.f_pvalues {
            Some(f) => Some(f[j]),
            None => anova_f_pvalue(data.column(j), data.y()).ok(),
        };
        let mut row = vec![names[j].clone(), fmt_f64(w.values()[j]), opt(tau_hat), fmt_f64(tau_tilde), opt(f_p)];
        if let (Some(pi), Some(pd)) = (&diag.p_inc, &diag.p_dec) {
            row.push(fmt_f64(pi[j]));
            row.push(fmt_f64(pd[j]));
        }
        csv.row(row);
    }
    csv.save(&args.out)?;
    let m = manifest.finish(args, None, None, &[args.out.clone()])?;
    write_json(&sibling(&args.out, "manifest.json"), &m)
}

pub fn tune(args: &TuneArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("tune");
    let prep = load(&args.input, &mut manifest)?;
    let weights = compute_weights(&prep.data, args.weights)?;
    check_weights(&weights, &prep.names());
    let config = TuneConfig {
        folds: args.folds,
        grid_size: args.grid_size,
        seed: args.seed,
        scoring: args.scoring,
        fit: fit_options(args.ridge)?,
        ..TuneConfig::default()
    };
    if args.mode == TuningMethod::TwoStep && (args.lambda_grid.is_some() || args.eta_grid.is_some()) {
        return Err(CliError::Input("--lambda-grid and --eta-grid apply to --mode grid".into()));
    }
    let tuned = match args.mode {
        TuningMethod::TwoStep => tune_two_step(&prep.data, args.variant, &weights, &config)?,
        TuningMethod::Grid => tune_grid_cv(
            &prep.data,
            args.variant,
            &weights,
            &config,
            args.lambda_grid.as_deref(),
            args.eta_grid.as_deref(),
        )?,
    };
    let mut table = CsvOut::new(&["lambda", "eta", "score", "active_size"]);
    for rec in &tuned.cv_table {
        table.row([fmt_f64(rec.lambda), fmt_f64(rec.eta), opt(rec.score), opt(rec.active_size)]);
    }
    let table_path = args.out.join("cv_table.csv");
    table.save(&table_path)?;

    #[derive(Serialize)]
    struct Selected {
        lambda_tilde: f64,
        eta_tilde: f64,
        lambda_max: f64,
        eta_max: Option<f64>,
        method: TuningMethod,
    }
    let sel_path = args.out.join("tuning.json");
    write_json(
        &sel_path,
        &Selected {
            lambda_tilde: tuned.lambda_tilde,
            eta_tilde: tuned.eta_tilde,
            lambda_max: tuned.lambda_max,
            eta_max: tuned.eta_max,
            method: tuned.method,
        },
    )?;
    let model = fit_model(&prep.data, args.variant, &weights, tuned.lambda_tilde, tuned.eta_tilde, &config.fit)?;
    let mut outputs = vec![table_path, sel_path];
    outputs.extend(write_fit_outputs(
        &args.out,
        &prep,
        &args.input.label_col,
        args.variant,
        &weights,
        tuned.lambda_tilde,
        tuned.eta_tilde,
        model,
    )?);
    let m = manifest.finish(&(args, &config), Some(args.seed), None, &outputs)?;
    write_json(&args.out.join("manifest.json"), &m)
}

fn wide_table(result: &MonteCarloResult, metrics: &[&str]) -> CsvOut {
    let mut header = vec!["method".to_string()];
    for m in metrics {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_stderr"));
    }
    header.extend(["n".to_string(), "failures".to_string()]);
    let mut csv = CsvOut::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for method in &result.config.methods {
        let name = method.to_string();
        let rows: Vec<_> = metrics
            .iter()
            .map(|m| result.summary.iter().find(|r| r.method == name && r.metric == *m).expect("summary row"))
            .collect();
        let mut fields = vec![name.clone()];
        for r in &rows {
            fields.push(fmt_f64(r.mean));
            fields.push(fmt_f64(r.stderr));
        }
        fields.push(rows[0].n.to_string());
        fields.push(rows[0].failures.to_string());
        csv.row(fields);
    }
    csv
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let manifest = ManifestBuilder::start("simulate");
    let model = args.model.build(args.p)?;
    let k = model.k();
    let config = MonteCarloConfig {
        model: args.model,
        p: model.p(),
        train_counts: vec![args.train_per_class; k],
        test_counts: vec![args.test_per_class.unwrap_or(args.train_per_class); k],
        replicates: args.reps,
        methods: args.methods.clone(),
        master_seed: args.seed,
        tune: TuneConfig {
            folds: args.folds,
            grid_size: args.grid_size,
            ..TuneConfig::default()
        },
        taxonomy_variant: args.taxonomy_variant,
    };
    let result = monte_carlo_run(&config)?;

    let mut summary = CsvOut::new(&["method", "metric", "mean", "stderr"]);
    for row in &result.summary {
        summary.row([row.method.clone(), row.metric.clone(), fmt_f64(row.mean), fmt_f64(row.stderr)]);
    }
    let paths: Vec<PathBuf> =
        ["summary.csv", "table2.csv", "table3.csv", "replicates.csv"].iter().map(|f| args.out.join(f)).collect();
    summary.save(&paths[0])?;
    wide_table(&result, &METRICS[..5]).save(&paths[1])?;
    wide_table(&result, &METRICS[5..]).save(&paths[2])?;

    let mut header = vec!["replicate", "method", "status", "lambda", "eta"];
    header.extend(METRICS);
    header.push("message");
    let mut reps = CsvOut::new(&header);
    for rec in &result.replicates {
        for (method, outcome) in config.methods.iter().zip(&rec.outcomes) {
            let mut fields = vec![rec.replicate.to_string(), method.to_string()];
            match outcome {
                Ok(o) => {
                    fields.extend(["ok".to_string(), fmt_f64(o.lambda), fmt_f64(o.eta)]);
                    fields.extend(o.metric_values().iter().map(|&v| fmt_f64(v)));
                    fields.push(String::new());
                }
                Err(msg) => {
                    warn!("replicate {} {method}: {msg}", rec.replicate);
                    fields.push("error".into());
                    fields.extend(std::iter::repeat_n(String::new(), 2 + METRICS.len()));
                    fields.push(msg.clone());
                }
            }
            reps.row(fields);
        }
    }
    reps.save(&paths[3])?;
    let m = manifest.finish(&config, Some(args.seed), Some(RNG_ALGORITHM), &paths)?;
    write_json(&args.out.join("manifest.json"), &m)
}

pub fn diagnose(args: &DiagnoseArgs) -> Result<(), CliError> {
    let manifest = ManifestBuilder::start("diagnose");
    let model = args.model.build(args.p)?;
    let labels = class_labels(&vec![args.per_class; model.k()]);
    let d = theory_diagnostics(&model, args.variant, &labels, args.lambda, args.eta)?;
    let json = io::to_sorted_json(&d)?;
    print!("{json}");
    if let Some(out) = &args.out {
        let path = out.join("diagnostics.json");
        io::write_atomic(&path, json.as_bytes())?;
        let m = manifest.finish(args, None, None, &[path])?;
        write_json(&out.join("manifest.json"), &m)?;
    }
    Ok(())
}
