use std::fs::File;
use std::path::Path;

use effcompute::analysis::{
    self, AllocationGainMethod, CegPath, DoublingTimes, LawSet, ScalingContext, ValueSpace, SUMMARY_PROBS,
};
use effcompute::cluster;
use effcompute::dataset::{
    self, cap_per_paper, generate_synthetic, parse_rows, IngestOptions, Severity, SyntheticOptions, TrainingData,
};
use effcompute::fit::{self, BootstrapOptions, Estimator, FitOptions};
use effcompute::select::{self, CvOptions, Folds};
use effcompute::zoo::{self, names, sigmoid, ModelKind, DELTA_GRID};
use effcompute::{Benchmark, BootstrapEnsemble, Dataset, Error, EvalRecord, FitResult, ModelSpec, ParamVector};

use crate::report::{
    digest_file, BootstrapInfo, ChinchillaCegSection, DoublingSection, FitSection, GainSection, InputInfo,
    ModelInfo, ParamBootstrap, ParamRow, RunReport, TransformerCegSection, ValidateSection,
};
use crate::{AnalyzeArgs, DataArgs, DataModeArg, Failure, FitArgs, LoocvArgs, Output, SynthArgs, ValidateArgs};

type CmdResult = std::result::Result<Output, Failure>;

struct Loaded {
    dataset: Dataset,
    info: InputInfo,
    warnings: Vec<String>,
}

fn load(path: &Path, data: &DataArgs) -> std::result::Result<Loaded, Failure> {
    let sha256 = digest_file(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    let opts = IngestOptions {
        keep_excluded: data.keep_excluded,
    };
    let ingested = dataset::load_dataset(path, &opts).map_err(|e| Failure::input(e.to_string()))?;
    let mut warnings = Vec::new();
    let skipped = ingested
        .diagnostics
        .iter()
        .filter(|d| d.severity == Severity::Error)
        .count();
    if skipped > 0 {
        warnings.push(format!("{skipped} rows skipped during ingestion; run validate for details"));
    }
    if !ingested.excluded.is_empty() {
        warnings.push(format!("{} rows dropped by exclusion flags", ingested.excluded.len()));
    }
    let mut ds = ingested.dataset;
    if let Some(cap) = data.cap_per_paper {
        ds = cap_per_paper(&ds, cap).map_err(|e| Failure::input(e.to_string()))?;
    }
    Ok(Loaded {
        info: InputInfo {
            path: path.display().to_string(),
            sha256,
            rows_read: ingested.rows_read,
            records_used: ds.len(),
        },
        dataset: ds,
        warnings,
    })
}

fn training_data(data: &DataArgs) -> Option<TrainingData> {
    match data.data_mode {
        DataModeArg::DatasetSize if !data.impute_epochs => None,
        DataModeArg::DatasetSize => Some(TrainingData {
            impute_missing_epochs: true,
            ..Default::default()
        }),
        DataModeArg::TokensSeen => Some(TrainingData::tokens_seen(data.impute_epochs)),
        DataModeArg::TokensSeenDiminishing => {
            Some(TrainingData::diminishing(data.impute_epochs, TrainingData::default().decay))
        }
    }
}

fn parse_spec(id: &str, delta: f64, data: &DataArgs) -> std::result::Result<ModelSpec, Failure> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Failure::input(format!("delta must be a nonnegative number, got {delta}")));
    }
    let spec: ModelSpec = id.parse().map_err(|e: Error| Failure::input(e.to_string()))?;
    let spec = spec.with_delta(delta);
    Ok(match training_data(data) {
        Some(d) => spec.with_data(d),
        None => spec,
    })
}

fn model_info(spec: &ModelSpec, clustered: bool) -> ModelInfo {
    ModelInfo {
        id: spec.id(),
        delta: spec.delta,
        data_mode: spec.data.mode,
        estimator: if clustered { "clustered_mle" } else { "least_squares" },
        n_params: spec.n_params(),
    }
}

pub fn validate(args: &ValidateArgs) -> CmdResult {
    let sha256 =
        digest_file(&args.input).map_err(|e| Failure::input(format!("cannot read {}: {e}", args.input.display())))?;
    let file = File::open(&args.input)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", args.input.display())))?;
    let opts = IngestOptions {
        keep_excluded: args.keep_excluded,
    };
    let parsed = parse_rows(file, &opts).map_err(|e| Failure::input(e.to_string()))?;
    let skipped = parsed
        .diagnostics
        .iter()
        .filter(|d| d.severity == Severity::Error)
        .count();
    let mut report = RunReport::new("validate", 0);
    report.input = Some(InputInfo {
        path: args.input.display().to_string(),
        sha256,
        rows_read: parsed.rows_read,
        records_used: parsed.records.len(),
    });
    report.validate = Some(ValidateSection {
        rows_read: parsed.rows_read,
        valid: parsed.records.len(),
        skipped,
        excluded: parsed.excluded.len(),
        warnings: parsed.diagnostics.len() - skipped,
        diagnostics: parsed.diagnostics,
        excluded_rows: parsed.excluded,
    });
    if parsed.records.is_empty() {
        return Err(Failure::input("no valid rows").with_report(report));
    }
    Ok(Output::Report(Box::new(report)))
}

fn full_fit(spec: &ModelSpec, ds: &Dataset, seed: u64, clustered: bool, starts: usize) -> effcompute::Result<FitResult> {
    let fit_opts = FitOptions {
        n_starts: starts,
        ..Default::default()
    };
    if clustered {
        let opts = cluster::ClusterOptions {
            fit: fit_opts,
            ..Default::default()
        };
        cluster::fit_clustered_with(spec, ds, seed, &opts)
    } else {
        fit::fit_with(spec, ds, seed, &fit_opts)
    }
}

fn param_rows(theta: &ParamVector, ens: Option<&BootstrapEnsemble>) -> effcompute::Result<Vec<ParamRow>> {
    let mut rows = Vec::new();
    for (name, value) in theta.iter() {
        let bootstrap = match ens {
            Some(ens) => {
                let std = fit::bootstrap_std(ens, &[name])?.get(name).unwrap_or(f64::NAN);
                let q = fit::quantiles(ens, |t| t.get(name).unwrap_or(f64::NAN), &SUMMARY_PROBS)?;
                Some(ParamBootstrap {
                    std,
                    q025: q[0],
                    median: q[1],
                    q975: q[2],
                })
            }
            None => None,
        };
        rows.push(ParamRow {
            name: name.to_string(),
            estimate: value,
            bootstrap,
        });
    }
    Ok(rows)
}

fn doubling_section(
    spec: &ModelSpec,
    theta: &ParamVector,
    ens: Option<&BootstrapEnsemble>,
    ds: &Dataset,
    budget: f64,
    warnings: &mut Vec<String>,
) -> Option<DoublingSection> {
    if spec.is_progress_free() {
        warnings.push(format!("model {} has no algorithmic-progress terms; no doubling times", spec.id()));
        return None;
    }
    let closed = |t: &ParamVector| analysis::doubling_times_for(spec, t, Benchmark::Wt103);
    match analysis::summarize(theta, ens, closed) {
        Ok(summary) => {
            return Some(DoublingSection {
                method: "closed_form",
                benchmark: Some(Benchmark::Wt103.to_string()),
                budget_flop: None,
                summary,
            })
        }
        Err(Error::Unsupported(_)) => {}
        Err(e) => {
            warnings.push(format!("doubling times: {e}"));
            return None;
        }
    }
    let ctx = ScalingContext::for_dataset(ds);
    let numeric = |t: &ParamVector| {
        analysis::doubling_times_optimal_scaling(spec, t, &ctx, budget).map(|t_c| DoublingTimes {
            t_n: f64::NAN,
            t_d: f64::NAN,
            t_c,
        })
    };
    match analysis::summarize(theta, ens, numeric) {
        Ok(mut summary) => {
            summary.infinite.retain(|f| *f == "t_c" && !summary.point.t_c.is_nan());
            warnings.push(format!(
                "model {} has no closed form; T_C from compute-optimal scaling at {budget:e} FLOP, T_N and T_D not separable",
                spec.id()
            ));
            Some(DoublingSection {
                method: "optimal_scaling",
                benchmark: Some(Benchmark::Wt103.to_string()),
                budget_flop: Some(budget),
                summary,
            })
        }
        Err(e) => {
            warnings.push(format!("doubling times: {e}"));
            None
        }
    }
}

pub fn fit(args: &FitArgs) -> CmdResult {
    let spec = parse_spec(&args.model, args.delta, &args.data)?;
    if args.starts == 0 {
        return Err(Failure::input("--starts must be at least 1"));
    }
    let loaded = load(&args.input, &args.data)?;
    let ds = &loaded.dataset;
    let mut report = RunReport::new("fit", args.seed);
    report.input = Some(loaded.info.clone());
    report.model = Some(model_info(&spec, args.cluster));
    report.warnings = loaded.warnings.clone();

    let full = match full_fit(&spec, ds, args.seed, args.cluster, args.starts) {
        Ok(f) => f,
        Err(e) => return Err(Failure::fit(e.to_string()).with_report(report)),
    };
    if !full.converged {
        report.warnings.push("full-data fit stopped on the evaluation budget".into());
    }
    let ens = if args.bootstrap > 0 {
        let opts = BootstrapOptions {
            estimator: if args.cluster {
                Estimator::ClusteredMle
            } else {
                Estimator::LeastSquares
            },
            warm_start: Some(full.theta.clone()),
            ..Default::default()
        };
        match fit::bootstrap_with(&spec, ds, args.bootstrap, args.seed, args.cluster, &opts) {
            Ok(ens) => {
                if ens.n_failed() > 0 {
                    report.warnings.push(format!(
                        "{} of {} bootstrap replicates failed or did not converge and were excluded",
                        ens.n_failed(),
                        ens.b
                    ));
                }
                Some(ens)
            }
            Err(e) => return Err(Failure::fit(format!("bootstrap: {e}")).with_report(report)),
        }
    } else {
        None
    };
    let usable = ens.as_ref().filter(|e| e.n_converged() > 0);
    if ens.is_some() && usable.is_none() {
        report.warnings.push("no bootstrap replicate converged; quantiles omitted".into());
    }
    let parameters = match param_rows(&full.theta, usable) {
        Ok(p) => p,
        Err(e) => return Err(Failure::fit(e.to_string()).with_report(report)),
    };
    let mut warnings = Vec::new();
    report.doubling_times = doubling_section(&spec, &full.theta, usable, ds, args.budget, &mut warnings);
    report.warnings.extend(warnings);
    report.fit = Some(FitSection {
        converged: full.converged,
        objective: full.objective,
        mse_nats2: full.mse,
        n_used: full.n_used,
        evaluations: full.evaluations,
        parameters,
        bootstrap: ens.as_ref().map(|e| BootstrapInfo {
            replicates: e.b,
            converged: e.n_converged(),
            failed: e.n_failed(),
            cluster_by_paper: e.cluster_by_paper,
        }),
    });
    Ok(Output::Report(Box::new(report)))
}

fn parse_grid(grid: &str, data: &DataArgs) -> std::result::Result<Vec<ModelSpec>, Failure> {
    let with_data = |s: ModelSpec| match training_data(data) {
        Some(d) => s.with_data(d),
        None => s,
    };
    if grid.trim() == "default" {
        return Ok(select::default_grid().into_iter().map(with_data).collect());
    }
    let mut specs = Vec::new();
    for entry in grid.split(',').map(str::trim).filter(|e| !e.is_empty()) {
        let (model, delta) = match entry.split_once(':') {
            Some((m, d)) => {
                let d: f64 = d
                    .parse()
                    .map_err(|_| Failure::input(format!("bad delta in grid entry `{entry}`")))?;
                (m, Some(d))
            }
            None => (entry, None),
        };
        let deltas = match delta {
            Some(d) => vec![d],
            None => DELTA_GRID.to_vec(),
        };
        for d in deltas {
            specs.push(parse_spec(model, d, data)?);
        }
    }
    if specs.is_empty() {
        return Err(Failure::input("empty grid"));
    }
    Ok(specs)
}

pub fn loocv(args: &LoocvArgs) -> CmdResult {
    let specs = parse_grid(&args.grid, &args.data)?;
    let folds = match args.kfold {
        Some(k) if k < 2 => return Err(Failure::input("--kfold needs at least 2 folds")),
        Some(k) => Folds::KFold(k),
        None => Folds::LeaveOneOut,
    };
    let loaded = load(&args.input, &args.data)?;
    let mut report = RunReport::new("loocv", args.seed);
    report.input = Some(loaded.info.clone());
    report.warnings = loaded.warnings.clone();
    let opts = CvOptions {
        folds,
        ..Default::default()
    };
    let table = match select::cross_validate(&specs, &loaded.dataset, args.seed, &opts) {
        Ok(t) => t,
        Err(e) => return Err(Failure::fit(e.to_string()).with_report(report)),
    };
    for c in &table.cells {
        if c.mse.is_none() {
            report.warnings.push(format!("model {} delta {}: every fold failed", c.model, c.delta));
        } else if c.failed_folds > 0 {
            report
                .warnings
                .push(format!("model {} delta {}: {} folds failed", c.model, c.delta, c.failed_folds));
        }
    }
    report.loocv = Some(table);
    Ok(Output::Report(Box::new(report)))
}

fn find_pair<'a>(ds: &'a Dataset, old: &str, new: &str) -> std::result::Result<(&'a EvalRecord, &'a EvalRecord), Failure> {
    let named = |n: &str| -> Vec<&EvalRecord> { ds.records().iter().filter(|r| r.model_name == n).collect() };
    let (olds, news) = (named(old), named(new));
    if olds.is_empty() || news.is_empty() {
        let missing = if olds.is_empty() { old } else { new };
        return Err(Failure::input(format!("no record named `{missing}`")));
    }
    for o in &olds {
        if let Some(n) = news.iter().find(|n| n.benchmark == o.benchmark) {
            return Ok((o, n));
        }
    }
    Err(Failure::analysis(format!("`{old}` and `{new}` share no benchmark")))
}

fn shapley_names(values: &[String]) -> std::result::Result<(String, String), Failure> {
    let mut old = None;
    let mut new = None;
    for v in values {
        match v.split_once('=') {
            Some(("old", n)) => old = Some(n.to_string()),
            Some(("new", n)) => new = Some(n.to_string()),
            _ => return Err(Failure::input(format!("expected old=NAME or new=NAME, got `{v}`"))),
        }
    }
    match (old, new) {
        (Some(o), Some(n)) => Ok((o, n)),
        _ => Err(Failure::input("--shapley needs old=NAME and new=NAME")),
    }
}

fn load_laws(path: Option<&Path>) -> std::result::Result<LawSet, Failure> {
    match path {
        None => Ok(LawSet::shipped()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::input(format!("cannot read {}: {e}", p.display())))?;
            LawSet::from_toml(&text).map_err(|e| Failure::input(e.to_string()))
        }
    }
}

pub fn analyze(args: &AnalyzeArgs) -> CmdResult {
    let shapley = args.shapley.as_deref().map(shapley_names).transpose()?;
    let laws = load_laws(args.laws.as_deref())?;
    let needs_fit = shapley.is_some() || (args.gain.is_some() && args.t_c_months.is_none());
    let needs_data = needs_fit || args.ceg_transformer || args.cutoff.is_some();
    if !needs_data && args.ceg_chinchilla.is_none() && args.gain.is_none() {
        return Err(Failure::input(
            "nothing to analyze; pass --shapley, --ceg-transformer, --ceg-chinchilla, --cutoff or --gain",
        ));
    }
    let spec = parse_spec(&args.model, args.delta, &args.data)?;
    let mut report = RunReport::new("analyze", args.seed);

    let loaded = match (&args.input, needs_data) {
        (Some(path), _) => Some(load(path, &args.data)?),
        (None, true) => return Err(Failure::input("this analysis needs an input file")),
        (None, false) => None,
    };
    if let Some(l) = &loaded {
        report.input = Some(l.info.clone());
        report.warnings.extend(l.warnings.iter().cloned());
    }

    if let Some(c) = args.ceg_chinchilla {
        let method = if args.loss_matched {
            AllocationGainMethod::LossMatched
        } else {
            AllocationGainMethod::ScoredAllocation
        };
        match analysis::allocation_gain(c, &laws.kaplan, &laws.chinchilla, method) {
            Ok(ceg) => {
                report.analysis.ceg_chinchilla = Some(ChinchillaCegSection {
                    budget_flop: c,
                    method,
                    ceg,
                })
            }
            Err(e) => return Err(Failure::analysis(format!("kaplan/chinchilla gain: {e}")).with_report(report)),
        }
    }

    let main_fit = match (&loaded, needs_fit) {
        (Some(l), true) => {
            report.model = Some(model_info(&spec, false));
            match fit::fit(&spec, &l.dataset, args.seed) {
                Ok(f) => Some(f),
                Err(e) => return Err(Failure::fit(e.to_string()).with_report(report)),
            }
        }
        _ => None,
    };

    if let (Some((old, new)), Some(l), Some(f)) = (&shapley, &loaded, &main_fit) {
        let (o, n) = find_pair(&l.dataset, old, new).map_err(|e| e.with_report(report.clone()))?;
        let space = if args.shapley_loss {
            ValueSpace::Loss
        } else {
            ValueSpace::Perplexity
        };
        match analysis::shapley_attribution(&spec, &f.theta, o, n, l.dataset.norms(), space) {
            Ok(s) => report.analysis.shapley = Some(s),
            Err(e) => return Err(Failure::analysis(format!("shapley: {e}")).with_report(report)),
        }
    }

    if let (true, Some(l)) = (args.ceg_transformer, &loaded) {
        let tspec = ModelSpec::transformer_ceg().with_delta(spec.delta).with_data(spec.data);
        let tfit = match fit::fit(&tspec, &l.dataset, args.seed) {
            Ok(f) => f,
            Err(e) => return Err(Failure::fit(format!("transformer variant: {e}")).with_report(report)),
        };
        let ctx = ScalingContext::for_dataset(&l.dataset);
        let mut run = |path: CegPath| match analysis::transformer_ceg(&tfit.theta, &ctx, args.budget, path) {
            Ok(v) => Some(v),
            Err(e) => {
                report.warnings.push(format!("transformer CEG ({path:?}): {e}"));
                None
            }
        };
        let common = run(CegPath::CommonScale);
        let reopt = run(CegPath::Reoptimized);
        if common.is_none() && reopt.is_none() {
            return Err(Failure::analysis("transformer CEG undefined on both paths").with_report(report));
        }
        report.analysis.ceg_transformer = Some(TransformerCegSection {
            budget_flop: args.budget,
            year: ctx.year,
            multiplier: sigmoid(tfit.theta.get(names::GAMMA_T).unwrap_or(f64::NAN)),
            ceg_common_scale: common,
            ceg_reoptimized: reopt,
        });
    }

    if let (Some(year), Some(l)) = (args.cutoff, &loaded) {
        match analysis::cutoff_analysis(&l.dataset, year, args.seed, args.bootstrap) {
            Ok(c) => {
                report.warnings.extend(c.flags.iter().cloned());
                report.analysis.cutoff = Some(c);
            }
            Err(e @ Error::InvalidArgument(_)) => {
                return Err(Failure::analysis(format!("cutoff: {e}")).with_report(report))
            }
            Err(e) => return Err(Failure::fit(format!("cutoff: {e}")).with_report(report)),
        }
    }

    if let Some(years) = args.gain {
        let t_c = match (args.t_c_months, &main_fit) {
            (Some(t), _) => t,
            (None, Some(f)) => match analysis::doubling_times_for(&spec, &f.theta, Benchmark::Wt103) {
                Ok(t) => t.t_c,
                Err(e) => return Err(Failure::analysis(format!("gain: {e}")).with_report(report)),
            },
            (None, None) => unreachable!("a fit runs whenever --gain lacks --t-c-months"),
        };
        match analysis::effective_gain(years, t_c) {
            Ok(gain) => {
                report.analysis.gain = Some(GainSection {
                    years,
                    t_c_months: t_c,
                    gain,
                })
            }
            Err(e) => return Err(Failure::analysis(format!("gain: {e}")).with_report(report)),
        }
    }
    Ok(Output::Report(Box::new(report)))
}

pub fn synth(args: &SynthArgs) -> CmdResult {
    let spec: ModelSpec = args.model.parse().map_err(|e: Error| Failure::input(e.to_string()))?;
    let theta = match &args.theta {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<ParamVector>(&text).map_err(|e| Failure::input(format!("theta: {e}")))?
        }
        None if matches!(spec.kind, ModelKind::Numbered(7) | ModelKind::Numbered(20)) => {
            zoo::reference_main_estimates()
        }
        None => return Err(Failure::input(format!("model {} needs --theta", spec.id()))),
    };
    let opts = SyntheticOptions {
        n_records: args.n,
        noise_sigma: args.noise,
        seed: args.seed,
        n_papers: args.papers,
        within_paper_rho: args.rho,
        ..Default::default()
    };
    let ds = generate_synthetic(&spec, &theta, &opts).map_err(|e| Failure::input(e.to_string()))?;
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).map_err(|e| Failure::input(e.to_string()))?;
    Ok(Output::Csv(buf))
}
