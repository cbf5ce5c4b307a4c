//! Regularised least-squares fits and bootstrap ensembles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{self, ClusterOptions};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, SimplexOptions};
use crate::seeds;
use crate::zoo::{param_kind, CompiledSpec, Design, ModelSpec, ParamKind, ParamVector};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub theta: ParamVector,
    /// Mean squared residual plus the L1 penalty (for likelihood fits, the
    /// per-record negative log-likelihood plus the penalty).
    pub objective: f64,
    /// Unpenalised mean squared residual in nats².
    pub mse: f64,
    pub n_used: usize,
    pub converged: bool,
    pub n_restarts_used: usize,
    pub evaluations: usize,
}

impl FitResult {
    /// Placeholder for a replicate whose fit could not run.
    pub fn failed(spec: ModelSpec) -> FitResult {
        FitResult {
            spec,
            theta: ParamVector::new(),
            objective: f64::NAN,
            mse: f64::NAN,
            n_used: 0,
            converged: false,
            n_restarts_used: 0,
            evaluations: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub n_starts: usize,
    pub simplex: SimplexOptions,
    /// Packed parameters tried as the first start; remaining starts are random.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            n_starts: 10,
            simplex: SimplexOptions::default(),
            warm_start: None,
        }
    }
}

/// Random starting value for a parameter of the given role.
pub(crate) fn draw_initial<R: Rng>(kind: ParamKind, rng: &mut R) -> f64 {
    match kind {
        ParamKind::Constant => rng.random_range(0.0..1.5),
        ParamKind::BenchmarkOffset => rng.random_range(-0.2..0.2),
        ParamKind::Rate => rng.random_range(-0.05..0.1),
        ParamKind::Exponent => rng.random_range(0.01..0.4),
        ParamKind::Irreducible => rng.random_range(0.0..1.0),
        ParamKind::Vocab => rng.random_range(-0.02..0.02),
        ParamKind::TransformerLogit => rng.random_range(1.0..5.0),
        ParamKind::Correlation => rng.random_range(0.0..0.8),
        ParamKind::Variance => rng.random_range(0.001..0.01),
    }
}

/// Initial simplex edge for a parameter of the given role.
pub(crate) fn initial_step(kind: ParamKind) -> f64 {
    match kind {
        ParamKind::Constant | ParamKind::Irreducible => 0.25,
        ParamKind::BenchmarkOffset => 0.1,
        ParamKind::Rate => 0.02,
        ParamKind::Exponent => 0.05,
        ParamKind::Vocab => 0.01,
        ParamKind::TransformerLogit => 1.0,
        ParamKind::Correlation => 0.5,
        ParamKind::Variance => 0.001,
    }
}

pub(crate) fn l1(p: &[f64]) -> f64 {
    p.iter().map(|v| v.abs()).sum()
}

/// Fits `spec` to `ds` with the default budget of ten starts.
pub fn fit(spec: &ModelSpec, ds: &Dataset, seed: u64) -> Result<FitResult> {
    fit_with(spec, ds, seed, &FitOptions::default())
}

pub fn fit_with(spec: &ModelSpec, ds: &Dataset, seed: u64, opts: &FitOptions) -> Result<FitResult> {
    let compiled = spec.compile();
    let design = Design::build(&compiled, ds);
    fit_design(&compiled, &design, seed, opts)
}

pub(crate) fn check_design(compiled: &CompiledSpec, design: &Design) -> Result<()> {
    if design.is_empty() {
        return Err(Error::EmptyDataset {
            diagnostics: design.dropped.len(),
        });
    }
    if design.len() < compiled.n_params() {
        return Err(Error::Underdetermined {
            records: design.len(),
            params: compiled.n_params(),
        });
    }
    Ok(())
}

/// Starting points: the warm start (if any) followed by random draws, each
/// from its own seeded stream.
pub(crate) fn starting_points(compiled: &CompiledSpec, seed: u64, opts: &FitOptions) -> Vec<Vec<f64>> {
    let n_starts = opts.n_starts.max(1);
    (0..n_starts)
        .map(|i| match (&opts.warm_start, i) {
            (Some(w), 0) if w.len() == compiled.n_params() => w.clone(),
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(seed, i as u64));
                compiled
                    .template()
                    .iter()
                    .map(|name| draw_initial(param_kind(name), &mut rng))
                    .collect()
            }
        })
        .collect()
}

pub(crate) fn fit_design(
    compiled: &CompiledSpec,
    design: &Design,
    seed: u64,
    opts: &FitOptions,
) -> Result<FitResult> {
    check_design(compiled, design)?;
    let n = design.len() as f64;
    let delta = compiled.spec().delta;
    let objective = |p: &[f64]| design.sse(compiled, p) / n + delta * l1(p);
    let steps: Vec<f64> = compiled
        .template()
        .iter()
        .map(|name| initial_step(param_kind(name)))
        .collect();

    let starts = starting_points(compiled, seed, opts);
    let runs: Vec<_> = starts
        .par_iter()
        .map(|x0| nelder_mead(objective, x0, &steps, &opts.simplex))
        .collect();
    let evaluations = runs.iter().map(|r| r.evals).sum();
    // first minimum in start order, so ties never depend on scheduling
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.f < a.f { b } else { a })
        .expect("at least one start");
    let mse = design.sse(compiled, &best.x) / n;
    Ok(FitResult {
        spec: *compiled.spec(),
        theta: ParamVector::from_packed(compiled.template(), &best.x),
        objective: best.f,
        mse,
        n_used: design.len(),
        converged: best.converged && best.f.is_finite(),
        n_restarts_used: starts.len(),
        evaluations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    LeastSquares,
    /// Block-equicorrelated Gaussian likelihood over papers.
    ClusteredMle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapEnsemble {
    pub replicates: Vec<FitResult>,
    pub seed: u64,
    pub b: usize,
    pub cluster_by_paper: bool,
}

impl BootstrapEnsemble {
    pub fn converged(&self) -> impl Iterator<Item = &FitResult> {
        self.replicates.iter().filter(|r| r.converged)
    }

    pub fn n_converged(&self) -> usize {
        self.converged().count()
    }

    pub fn n_failed(&self) -> usize {
        self.b - self.n_converged()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOptions {
    pub estimator: Estimator,
    /// Starts per replicate; the first is the full-data estimate.
    pub n_starts: usize,
    pub simplex: SimplexOptions,
    /// Full-data estimate used as the warm start. Computed when absent.
    pub warm_start: Option<ParamVector>,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            estimator: Estimator::LeastSquares,
            n_starts: 3,
            simplex: SimplexOptions::default(),
            warm_start: None,
        }
    }
}

/// Draws replicate `index`: `n` records with replacement, or whole papers
/// with replacement when clustering. Resampled copies of a paper get
/// distinct paper ids so they form separate clusters. Norms stay those of
/// `ds`.
pub fn resample(ds: &Dataset, seed: u64, index: usize, cluster_by_paper: bool) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(seed, index as u64));
    let n = ds.len();
    if !cluster_by_paper {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        return ds.subset(&idx);
    }
    let grouped = ds.grouped_by_paper();
    let mut papers: Vec<(usize, usize)> = Vec::new();
    for (i, r) in grouped.records().iter().enumerate() {
        match papers.last_mut() {
            Some((start, len)) if grouped.records()[*start].paper_id == r.paper_id => *len += 1,
            _ => papers.push((i, 1)),
        }
    }
    let mut records = Vec::with_capacity(n);
    for draw in 0..papers.len() {
        let (start, len) = papers[rng.random_range(0..papers.len())];
        for r in &grouped.records()[start..start + len] {
            let mut r = r.clone();
            r.paper_id = format!("{}#{draw}", r.paper_id);
            records.push(r);
        }
    }
    Dataset::with_norms(records, ds.norms())
}

/// Bootstrap with `b` replicates under default options.
pub fn bootstrap(
    spec: &ModelSpec,
    ds: &Dataset,
    b: usize,
    seed: u64,
    cluster_by_paper: bool,
) -> Result<BootstrapEnsemble> {
    bootstrap_with(spec, ds, b, seed, cluster_by_paper, &BootstrapOptions::default())
}

pub fn bootstrap_with(
    spec: &ModelSpec,
    ds: &Dataset,
    b: usize,
    seed: u64,
    cluster_by_paper: bool,
    opts: &BootstrapOptions,
) -> Result<BootstrapEnsemble> {
    if b == 0 {
        return Err(Error::InvalidArgument("bootstrap needs b >= 1".into()));
    }
    let warm = match &opts.warm_start {
        Some(theta) => theta.clone(),
        None => full_fit(spec, ds, seed, opts.estimator)?.theta,
    };
    let replicates: Vec<FitResult> = (0..b)
        .into_par_iter()
        .map(|i| {
            let rep_seed = seeds::mix(seed ^ 0xB007_5712, i as u64);
            resample(ds, seed, i, cluster_by_paper)
                .and_then(|rep| fit_replicate(spec, &rep, rep_seed, &warm, opts))
                .unwrap_or_else(|_| FitResult::failed(*spec))
        })
        .collect();
    Ok(BootstrapEnsemble {
        replicates,
        seed,
        b,
        cluster_by_paper,
    })
}

fn full_fit(spec: &ModelSpec, ds: &Dataset, seed: u64, estimator: Estimator) -> Result<FitResult> {
    match estimator {
        Estimator::LeastSquares => fit(spec, ds, seed),
        Estimator::ClusteredMle => cluster::fit_clustered(spec, ds, seed),
    }
}

fn fit_replicate(
    spec: &ModelSpec,
    rep: &Dataset,
    seed: u64,
    warm: &ParamVector,
    opts: &BootstrapOptions,
) -> Result<FitResult> {
    let fit_opts = FitOptions {
        n_starts: opts.n_starts,
        simplex: opts.simplex,
        warm_start: warm.pack(spec).ok(),
    };
    match opts.estimator {
        Estimator::LeastSquares => fit_with(spec, rep, seed, &fit_opts),
        Estimator::ClusteredMle => {
            let copts = ClusterOptions {
                fit: fit_opts,
                fixed_rho: None,
                warm_rho: warm.get(crate::zoo::names::RHO),
            };
            cluster::fit_clustered_with(spec, rep, seed, &copts)
        }
    }
}

/// Type-7 empirical quantile of sorted `values`. Infinite values are
/// allowed; interpolating towards an infinite neighbour yields it.
pub fn quantile_sorted(values: &[f64], p: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let h = (values.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    let (a, b) = (values[lo], values[hi]);
    if lo == hi || frac == 0.0 || a == b {
        a
    } else if a.is_infinite() || b.is_infinite() {
        b
    } else {
        a + frac * (b - a)
    }
}

/// Empirical quantiles of `f` over the converged replicates. NaN values of
/// `f` are dropped.
pub fn quantiles<F: Fn(&ParamVector) -> f64>(
    ens: &BootstrapEnsemble,
    f: F,
    probs: &[f64],
) -> Result<Vec<f64>> {
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!("quantile probability {p} outside [0, 1]")));
    }
    let mut values: Vec<f64> = ens.converged().map(|r| f(&r.theta)).filter(|v| !v.is_nan()).collect();
    if values.is_empty() {
        return Err(Error::NoConvergedReplicates);
    }
    values.sort_by(f64::total_cmp);
    Ok(probs.iter().map(|&p| quantile_sorted(&values, p)).collect())
}

/// Standard deviation (n - 1 denominator) of each parameter across
/// converged replicates; zero for a single replicate.
pub fn bootstrap_std(ens: &BootstrapEnsemble, names: &[&str]) -> Result<ParamVector> {
    let reps: Vec<&FitResult> = ens.converged().collect();
    if reps.is_empty() {
        return Err(Error::NoConvergedReplicates);
    }
    let mut out = ParamVector::new();
    for name in names {
        let vals: Vec<f64> = reps.iter().filter_map(|r| r.theta.get(name)).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = if vals.len() > 1 {
            (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        out.set(name, sd);
    }
    Ok(out)
}
