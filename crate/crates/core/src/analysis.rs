//! Quantities derived from fitted scaling laws: doubling times, period
//! comparisons, Shapley attribution and compute-equivalent gains.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize, Serializer};

use crate::dataset::{effective_data, Benchmark, Dataset, EvalRecord, Norms};
use crate::error::{Error, Result};
use crate::fit::{self, BootstrapEnsemble, BootstrapOptions, FitResult};
use crate::optim::{bisect, golden_section};
use crate::zoo::names::*;
use crate::zoo::{CompiledSpec, Inputs, ModelKind, ModelSpec, ParamVector};

/// Quantile levels reported for bootstrap summaries.
pub const SUMMARY_PROBS: [f64; 3] = [0.025, 0.5, 0.975];

/// Minimum records on each side of a cutoff year.
pub const MIN_CUTOFF_SIDE: usize = 15;

fn finite_or_null<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_some(v)
    } else {
        s.serialize_none()
    }
}

fn finite_vec_or_null<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mapped: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
    mapped.serialize(s)
}

/// Doubling times in months. Infinite when the matching rate is not
/// positive; serialised as null.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DoublingTimes {
    #[serde(rename = "t_n_months", serialize_with = "finite_or_null")]
    pub t_n: f64,
    #[serde(rename = "t_d_months", serialize_with = "finite_or_null")]
    pub t_d: f64,
    #[serde(rename = "t_c_months", serialize_with = "finite_or_null")]
    pub t_c: f64,
}

/// Months for a quantity growing as exp(rate / exponent · t) to double.
fn doubling_months(exponent: f64, rate: f64) -> f64 {
    if rate > 0.0 && exponent > 0.0 {
        12.0 * LN_2 * exponent / rate
    } else {
        f64::INFINITY
    }
}

impl DoublingTimes {
    pub fn from_rates(alpha_param: f64, alpha_year: f64, beta_data: f64, beta_year: f64) -> DoublingTimes {
        let t_n = doubling_months(alpha_param, alpha_year);
        let t_d = doubling_months(beta_data, beta_year);
        DoublingTimes {
            t_n,
            t_d,
            t_c: combine(t_n, t_d),
        }
    }

    /// Annual growth rates of effective parameters, data and compute, in
    /// doublings per year.
    pub fn growth_rates(&self) -> (f64, f64, f64) {
        (12.0 / self.t_n, 12.0 / self.t_d, 12.0 / self.t_c)
    }

    /// Names of the fields that are infinite.
    pub fn infinite(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (name, v) in [("t_n", self.t_n), ("t_d", self.t_d), ("t_c", self.t_c)] {
            if !v.is_finite() {
                out.push(name);
            }
        }
        out
    }
}

/// Effective compute doubles when the product of effective parameters and
/// effective data does, so the growth rates add.
fn combine(t_n: f64, t_d: f64) -> f64 {
    let g = 1.0 / t_n + 1.0 / t_d;
    if g > 0.0 {
        1.0 / g
    } else {
        f64::INFINITY
    }
}

fn get_or_zero(theta: &ParamVector, name: &str) -> f64 {
    theta.get(name).unwrap_or(0.0)
}

fn bench_value(theta: &ParamVector, base: &str, ptb: &str, wt2: &str, b: Benchmark) -> Result<f64> {
    let v = theta.require(base)?;
    Ok(v + match b {
        Benchmark::Wt103 => 0.0,
        Benchmark::Ptb => get_or_zero(theta, ptb),
        Benchmark::Wt2 => get_or_zero(theta, wt2),
    })
}

/// Closed-form doubling times from the base (WT103) rates and exponents. A
/// missing year rate counts as zero.
pub fn doubling_times_closed_form(theta: &ParamVector) -> Result<DoublingTimes> {
    closed_form_for(theta, Benchmark::Wt103)
}

/// As [`doubling_times_closed_form`], with benchmark-specific offsets added
/// when `theta` has them.
pub fn closed_form_for(theta: &ParamVector, benchmark: Benchmark) -> Result<DoublingTimes> {
    let ap = bench_value(theta, ALPHA_PARAM, ALPHA_PARAM_PTB, ALPHA_PARAM_WT2, benchmark)?;
    let bd = bench_value(theta, BETA_DATA, BETA_DATA_PTB, BETA_DATA_WT2, benchmark)?;
    let ay = match theta.get(ALPHA_YEAR) {
        Some(_) => bench_value(theta, ALPHA_YEAR, ALPHA_YEAR_PTB, ALPHA_YEAR_WT2, benchmark)?,
        None => 0.0,
    };
    let by = match theta.get(BETA_YEAR) {
        Some(_) => bench_value(theta, BETA_YEAR, BETA_YEAR_PTB, BETA_YEAR_WT2, benchmark)?,
        None => 0.0,
    };
    Ok(DoublingTimes::from_rates(ap, ay, bd, by))
}

/// Closed-form doubling times for a fitted spec. The shared year factor of
/// the Hicks-neutral model acts on both terms. Specs without year rates or
/// with time-varying exponents are refused.
pub fn doubling_times_for(spec: &ModelSpec, theta: &ParamVector, benchmark: Benchmark) -> Result<DoublingTimes> {
    match spec.kind {
        ModelKind::Numbered(16) | ModelKind::Numbered(17) => Err(Error::Unsupported(format!(
            "model {} has no algorithmic-progress terms",
            spec.id()
        ))),
        ModelKind::Numbered(13) | ModelKind::Numbered(14) | ModelKind::Numbered(15) | ModelKind::Numbered(18) => {
            Err(Error::Unsupported(format!(
                "no closed form for model {}; use the optimal-scaling method",
                spec.id()
            )))
        }
        ModelKind::Numbered(12) => {
            let ay = bench_value(theta, ALPHA_YEAR, ALPHA_YEAR_PTB, ALPHA_YEAR_WT2, benchmark)?;
            let ap = theta.require(ALPHA_PARAM)?;
            let bd = theta.require(BETA_DATA)?;
            Ok(DoublingTimes::from_rates(ap, ay, bd, ay))
        }
        _ => closed_form_for(theta, benchmark),
    }
}

/// Where on the scaling surface the optimal-scaling calculations happen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingContext {
    pub norms: Norms,
    pub year: f64,
    pub benchmark: Benchmark,
    pub is_transformer: bool,
    pub vocab_size: Option<u64>,
}

impl ScalingContext {
    pub fn new(norms: Norms, year: f64, benchmark: Benchmark) -> ScalingContext {
        ScalingContext {
            norms,
            year,
            benchmark,
            is_transformer: false,
            vocab_size: None,
        }
    }

    /// Context at the latest year of `ds`, WT103, non-transformer.
    pub fn for_dataset(ds: &Dataset) -> ScalingContext {
        let year = ds
            .records()
            .iter()
            .map(|r| r.publication_year)
            .fold(ds.norms().y0, f64::max);
        ScalingContext::new(ds.norms(), year, Benchmark::Wt103)
    }
}

struct Surface<'a> {
    compiled: &'a CompiledSpec,
    p: &'a [f64],
    ctx: ScalingContext,
}

impl Surface<'_> {
    fn loss(&self, n: f64, d: f64, year: f64, is_transformer: bool) -> f64 {
        let inputs = Inputs {
            benchmark: self.ctx.benchmark,
            is_transformer,
            params_n: n,
            data_d: d,
            year_param: year,
            year_data: year,
            vocab_size: self.ctx.vocab_size.or(Some(1)),
        };
        match self.compiled.covariates(&inputs, self.ctx.norms) {
            Ok(x) => self.compiled.predict(self.p, &x),
            Err(_) => f64::NAN,
        }
    }

    /// Loss-minimising split of `c` FLOP into N and D = c / (6N).
    fn optimum(&self, c: f64, year: f64, is_transformer: bool) -> (f64, f64, f64) {
        let centre = (c / 6.0).ln() / 2.0;
        let (ln_n, l) = golden_section(
            |ln_n| {
                let n = ln_n.exp();
                self.loss(n, c / (6.0 * n), year, is_transformer)
            },
            centre - 30.0,
            centre + 30.0,
            1e-10,
        );
        let n = ln_n.exp();
        (n, c / (6.0 * n), l)
    }
}

/// Doubling time (months) of effective compute under compute-optimal
/// allocation: the year shift whose algorithmic progress, at the allocation
/// optimal for budget `c`, gives the same loss as optimally spending `2c`.
pub fn doubling_times_optimal_scaling(
    spec: &ModelSpec,
    theta: &ParamVector,
    ctx: &ScalingContext,
    c_budget: f64,
) -> Result<f64> {
    if spec.is_progress_free() {
        return Err(Error::Unsupported(format!(
            "model {} has no algorithmic-progress terms",
            spec.id()
        )));
    }
    if !(c_budget > 0.0 && c_budget.is_finite()) {
        return Err(Error::InvalidArgument(format!("compute budget must be positive, got {c_budget}")));
    }
    let compiled = spec.compile();
    let p = theta.pack(spec)?;
    let s = Surface {
        compiled: &compiled,
        p: &p,
        ctx: *ctx,
    };
    let t = ctx.is_transformer;
    let (n1, d1, l1) = s.optimum(c_budget, ctx.year, t);
    let (_, _, l2) = s.optimum(2.0 * c_budget, ctx.year, t);
    let gap = |delta: f64| s.loss(n1, d1, ctx.year + delta, t) - l2;
    if !(l1 > l2) {
        return Err(Error::NoBracket(format!(
            "doubling compute does not lower the optimal loss (L1={l1}, L2={l2})"
        )));
    }
    let mut hi = 1.0;
    while gap(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e4 {
            let sample: Vec<String> = [0.0, 1.0, 10.0, 100.0, 1000.0]
                .iter()
                .map(|d| format!("{d}y:{:.6}", gap(*d)))
                .collect();
            return Err(Error::NoBracket(format!(
                "loss never reaches L2 under algorithmic progress; gap samples {}",
                sample.join(", ")
            )));
        }
    }
    let years = bisect(gap, 0.0, hi, 1e-12).ok_or_else(|| Error::NoBracket("year shift".into()))?;
    Ok(12.0 * years)
}

/// Bootstrap quantiles of the three doubling times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoublingQuantiles {
    pub probs: Vec<f64>,
    #[serde(rename = "t_n_months", serialize_with = "finite_vec_or_null")]
    pub t_n: Vec<f64>,
    #[serde(rename = "t_d_months", serialize_with = "finite_vec_or_null")]
    pub t_d: Vec<f64>,
    #[serde(rename = "t_c_months", serialize_with = "finite_vec_or_null")]
    pub t_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoublingSummary {
    pub point: DoublingTimes,
    /// Fields of `point` that are infinite (a nonpositive rate).
    pub infinite: Vec<&'static str>,
    pub quantiles: Option<DoublingQuantiles>,
    pub replicates_used: usize,
    pub replicates_failed: usize,
}

/// Point doubling times plus bootstrap quantiles of `f` over `ens`.
pub fn summarize<F: Fn(&ParamVector) -> Result<DoublingTimes>>(
    point: &ParamVector,
    ens: Option<&BootstrapEnsemble>,
    f: F,
) -> Result<DoublingSummary> {
    let point = f(point)?;
    let mut summary = DoublingSummary {
        point,
        infinite: point.infinite(),
        quantiles: None,
        replicates_used: 0,
        replicates_failed: 0,
    };
    if let Some(ens) = ens {
        let nan = |r: Result<DoublingTimes>| r.unwrap_or(DoublingTimes { t_n: f64::NAN, t_d: f64::NAN, t_c: f64::NAN });
        summary.quantiles = Some(DoublingQuantiles {
            probs: SUMMARY_PROBS.to_vec(),
            t_n: fit::quantiles(ens, |t| nan(f(t)).t_n, &SUMMARY_PROBS)?,
            t_d: fit::quantiles(ens, |t| nan(f(t)).t_d, &SUMMARY_PROBS)?,
            t_c: fit::quantiles(ens, |t| nan(f(t)).t_c, &SUMMARY_PROBS)?,
        });
        summary.replicates_used = ens.n_converged();
        summary.replicates_failed = ens.n_failed();
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffAnalysis {
    pub cutoff_year: f64,
    pub n_pre: usize,
    pub n_post: usize,
    /// Spec actually fitted: the cutoff variant, or the main model when one
    /// side is empty.
    pub model: String,
    pub pre: Option<DoublingSummary>,
    pub post: Option<DoublingSummary>,
    pub flags: Vec<String>,
}

/// Doubling times before and after `cutoff_year` from one fit with
/// post-period rate offsets. `b = 0` skips the bootstrap.
pub fn cutoff_analysis(ds: &Dataset, cutoff_year: f64, seed: u64, b: usize) -> Result<CutoffAnalysis> {
    cutoff_analysis_with(ds, cutoff_year, seed, b, &BootstrapOptions::default())
}

pub fn cutoff_analysis_with(
    ds: &Dataset,
    cutoff_year: f64,
    seed: u64,
    b: usize,
    boot: &BootstrapOptions,
) -> Result<CutoffAnalysis> {
    let n_post = ds.records().iter().filter(|r| r.publication_year >= cutoff_year).count();
    let n_pre = ds.len() - n_post;
    for (side, n) in [("before", n_pre), ("after", n_post)] {
        if n > 0 && n < MIN_CUTOFF_SIDE {
            return Err(Error::InvalidArgument(format!(
                "only {n} records {side} {cutoff_year}; each side needs at least {MIN_CUTOFF_SIDE}"
            )));
        }
    }
    let degenerate = n_pre == 0 || n_post == 0;
    let spec = if degenerate {
        ModelSpec::main()
    } else {
        ModelSpec::cutoff(cutoff_year)
    };
    let full = fit::fit(&spec, ds, seed)?;
    let ens = if b > 0 {
        let opts = BootstrapOptions {
            warm_start: Some(full.theta.clone()),
            ..boot.clone()
        };
        Some(fit::bootstrap_with(&spec, ds, b, seed, false, &opts)?)
    } else {
        None
    };

    let pre_times = |t: &ParamVector| doubling_times_closed_form(t);
    let mut flags = Vec::new();
    let (pre, post) = if n_pre == 0 {
        flags.push(format!("no records before {cutoff_year}; pre-period undefined"));
        (None, Some(summarize(&full.theta, ens.as_ref(), pre_times)?))
    } else if n_post == 0 {
        flags.push(format!("no records from {cutoff_year} on; post-period undefined"));
        (Some(summarize(&full.theta, ens.as_ref(), pre_times)?), None)
    } else {
        (
            Some(summarize(&full.theta, ens.as_ref(), pre_times)?),
            Some(summarize(&full.theta, ens.as_ref(), post_times)?),
        )
    };
    if !full.converged {
        flags.push("full-data fit did not meet the stopping rule".into());
    }
    Ok(CutoffAnalysis {
        cutoff_year,
        n_pre,
        n_post,
        model: spec.id(),
        pre,
        post,
        flags,
    })
}

/// Post-period doubling times from a fit of the cutoff variant.
pub fn post_period_times(fit: &FitResult) -> Result<DoublingTimes> {
    post_times(&fit.theta)
}

fn post_times(t: &ParamVector) -> Result<DoublingTimes> {
    Ok(DoublingTimes::from_rates(
        t.require(ALPHA_PARAM)?,
        t.require(ALPHA_YEAR)? + get_or_zero(t, ALPHA_YEAR_POST),
        t.require(BETA_DATA)?,
        t.require(BETA_YEAR)? + get_or_zero(t, BETA_YEAR_POST),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSpace {
    /// Value is the drop in perplexity exp(L).
    Perplexity,
    /// Value is the drop in loss, for sensitivity checks.
    Loss,
}

pub const SHAPLEY_PLAYERS: [&str; 4] = [
    "parameter_scaling",
    "data_scaling",
    "parameter_efficiency",
    "data_efficiency",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShapleyAttribution {
    pub old: String,
    pub new: String,
    pub space: ValueSpace,
    pub players: [&'static str; 4],
    /// v(all players): the full predicted improvement.
    pub total: f64,
    pub values: [f64; 4],
    /// values / total.
    pub shares: [f64; 4],
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Exact Shapley values for `n` players, `v` taking a bitmask coalition.
pub fn exact_shapley<F: FnMut(usize) -> f64>(n: usize, mut v: F) -> Vec<f64> {
    let values: Vec<f64> = (0..1usize << n).map(&mut v).collect();
    let nf = factorial(n);
    (0..n)
        .map(|i| {
            let bit = 1 << i;
            (0..1usize << n)
                .filter(|s| s & bit == 0)
                .map(|s| {
                    let size = s.count_ones() as usize;
                    let w = factorial(size) * factorial(n - size - 1) / nf;
                    w * (values[s | bit] - values[s])
                })
                .sum()
        })
        .collect()
}

/// Attributes the predicted improvement from `old` to `new` to scaling of
/// N, scaling of D, and the passage of time in each term. Benchmark,
/// architecture and vocabulary stay at `old`'s values.
pub fn shapley_attribution(
    spec: &ModelSpec,
    theta: &ParamVector,
    old: &EvalRecord,
    new: &EvalRecord,
    norms: Norms,
    space: ValueSpace,
) -> Result<ShapleyAttribution> {
    if spec.is_progress_free() {
        return Err(Error::Unsupported(format!(
            "model {} has no algorithmic-progress terms",
            spec.id()
        )));
    }
    if old.benchmark != new.benchmark {
        return Err(Error::InvalidArgument(format!(
            "records are on different benchmarks ({} vs {})",
            old.benchmark, new.benchmark
        )));
    }
    let compiled = spec.compile();
    let p = theta.pack(spec)?;
    let d_of = |r: &EvalRecord| {
        effective_data(r, &spec.data)
            .ok_or_else(|| Error::InvalidArgument(format!("no training-data value for `{}`", r.model_name)))
    };
    let (d_old, d_new) = (d_of(old)?, d_of(new)?);
    let predict = |mask: usize| -> Result<f64> {
        let pick = |bit: usize, a: f64, b: f64| if mask & (1 << bit) != 0 { b } else { a };
        let inputs = Inputs {
            benchmark: old.benchmark,
            is_transformer: old.is_transformer,
            params_n: pick(0, old.params_n, new.params_n),
            data_d: pick(1, d_old, d_new),
            year_param: pick(2, old.publication_year, new.publication_year),
            year_data: pick(3, old.publication_year, new.publication_year),
            vocab_size: old.vocab_size,
        };
        let loss = compiled.predict(&p, &compiled.covariates(&inputs, norms)?);
        Ok(match space {
            ValueSpace::Perplexity => loss.exp(),
            ValueSpace::Loss => loss,
        })
    };
    let base = predict(0)?;
    let mut table = [0.0; 16];
    for (mask, slot) in table.iter_mut().enumerate() {
        *slot = base - predict(mask)?;
    }
    let total = table[15];
    if total == 0.0 || !total.is_finite() {
        return Err(Error::NoImprovement);
    }
    let phi = exact_shapley(4, |s| table[s]);
    let values = [phi[0], phi[1], phi[2], phi[3]];
    Ok(ShapleyAttribution {
        old: old.model_name.clone(),
        new: new.model_name.clone(),
        space,
        players: SHAPLEY_PLAYERS,
        total,
        values,
        shares: values.map(|v| v / total),
    })
}

/// How the transformer's compute-equivalent gain is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CegPath {
    /// Shrink the non-transformer's compute-optimal N and D by a common
    /// factor s until the transformer matches its loss; gain 1/s².
    CommonScale,
    /// Smallest budget at which an optimally allocated transformer matches
    /// the optimally allocated non-transformer; gain C/C'.
    Reoptimized,
}

/// Compute-equivalent gain of the transformer under the transformer
/// variant's fitted parameters, at budget `c_budget` FLOP.
pub fn transformer_ceg(theta: &ParamVector, ctx: &ScalingContext, c_budget: f64, path: CegPath) -> Result<f64> {
    if !(c_budget > 0.0 && c_budget.is_finite()) {
        return Err(Error::InvalidArgument(format!("compute budget must be positive, got {c_budget}")));
    }
    let spec = ModelSpec::transformer_ceg();
    let compiled = spec.compile();
    let p = theta.pack(&spec)?;
    let s = Surface {
        compiled: &compiled,
        p: &p,
        ctx: *ctx,
    };
    let (n, d, target) = s.optimum(c_budget, ctx.year, false);
    let min_ln_scale = (1e-9f64).ln();
    match path {
        CegPath::CommonScale => {
            let gap = |ln_s: f64| s.loss(n * ln_s.exp(), d * ln_s.exp(), ctx.year, true) - target;
            if gap(0.0) >= 0.0 {
                return Ok(1.0);
            }
            let ln_s = bisect(gap, min_ln_scale, 0.0, 1e-13).ok_or_else(|| {
                Error::NoBracket("transformer loss not matched for any scale in (1e-9, 1]".into())
            })?;
            Ok((-2.0 * ln_s).exp())
        }
        CegPath::Reoptimized => {
            let ln_c = c_budget.ln();
            let gap = |ln_cp: f64| s.optimum(ln_cp.exp(), ctx.year, true).2 - target;
            if gap(ln_c) >= 0.0 {
                return Ok(1.0);
            }
            let ln_cp = bisect(gap, ln_c + 2.0 * min_ln_scale, ln_c, 1e-12).ok_or_else(|| {
                Error::NoBracket("transformer loss not matched for any budget down to 1e-18·C".into())
            })?;
            Ok((ln_c - ln_cp).exp())
        }
    }
}

/// A published parametric scaling law L(N, D).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ScalingLaw {
    Chinchilla {
        e: f64,
        a: f64,
        b: f64,
        alpha: f64,
        beta: f64,
    },
    Kaplan {
        n_c: f64,
        d_c: f64,
        alpha_n: f64,
        alpha_d: f64,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ScalingLaw {
    pub fn loss(&self, n: f64, d: f64) -> f64 {
        match *self {
            ScalingLaw::Chinchilla { e, a, b, alpha, beta } => e + a / n.powf(alpha) + b / d.powf(beta),
            ScalingLaw::Kaplan {
                n_c,
                d_c,
                alpha_n,
                alpha_d,
                scale,
            } => scale * ((n_c / n).powf(alpha_n / alpha_d) + d_c / d).powf(alpha_d),
        }
    }

    /// Multiplies every loss by `k`.
    pub fn scaled(&self, k: f64) -> ScalingLaw {
        match *self {
            ScalingLaw::Chinchilla { e, a, b, alpha, beta } => ScalingLaw::Chinchilla {
                e: e * k,
                a: a * k,
                b: b * k,
                alpha,
                beta,
            },
            ScalingLaw::Kaplan {
                n_c,
                d_c,
                alpha_n,
                alpha_d,
                scale,
            } => ScalingLaw::Kaplan {
                n_c,
                d_c,
                alpha_n,
                alpha_d,
                scale: scale * k,
            },
        }
    }

    /// Loss-minimising (N, D, L) with 6·N·D = c.
    pub fn optimum(&self, c: f64) -> (f64, f64, f64) {
        let centre = (c / 6.0).ln() / 2.0;
        let (ln_n, l) = golden_section(
            |ln_n| {
                let n = ln_n.exp();
                self.loss(n, c / (6.0 * n))
            },
            centre - 30.0,
            centre + 30.0,
            1e-10,
        );
        let n = ln_n.exp();
        (n, c / (6.0 * n), l)
    }
}

/// The pair of laws compared by [`kaplan_chinchilla_ceg`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawSet {
    pub kaplan: ScalingLaw,
    pub chinchilla: ScalingLaw,
}

const SHIPPED_LAWS: &str = include_str!("../data/scaling_laws.toml");

impl LawSet {
    pub fn shipped() -> LawSet {
        LawSet::from_toml(SHIPPED_LAWS).expect("shipped law file parses")
    }

    pub fn from_toml(text: &str) -> Result<LawSet> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

impl Default for LawSet {
    fn default() -> Self {
        LawSet::shipped()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationGainMethod {
    /// Allocate `c` as the first law prescribes, score that allocation
    /// with the second law, and find the budget at which the second law's
    /// own optimum reaches the same loss.
    ScoredAllocation,
    /// Match the second law's optimal loss to the first law's optimal loss.
    /// Only meaningful when both laws describe the same loss scale.
    LossMatched,
}

/// Compute-equivalent gain of moving from Kaplan to Chinchilla allocation.
pub fn kaplan_chinchilla_ceg(c_budget: f64, kaplan: &ScalingLaw, chinchilla: &ScalingLaw) -> Result<f64> {
    allocation_gain(c_budget, kaplan, chinchilla, AllocationGainMethod::ScoredAllocation)
}

pub fn allocation_gain(
    c_budget: f64,
    from: &ScalingLaw,
    to: &ScalingLaw,
    method: AllocationGainMethod,
) -> Result<f64> {
    if !(c_budget > 0.0 && c_budget.is_finite()) {
        return Err(Error::InvalidArgument(format!("compute budget must be positive, got {c_budget}")));
    }
    let (n, d, l_from) = from.optimum(c_budget);
    let target = match method {
        AllocationGainMethod::ScoredAllocation => to.loss(n, d),
        AllocationGainMethod::LossMatched => l_from,
    };
    let ln_c = c_budget.ln();
    let gap = |ln_cp: f64| to.optimum(ln_cp.exp()).2 - target;
    let g0 = gap(ln_c);
    if g0.abs() <= 1e-12 * target.abs() {
        return Ok(1.0);
    }
    let (lo, hi) = if g0 > 0.0 { (ln_c, ln_c + 60.0) } else { (ln_c - 60.0, ln_c) };
    let ln_cp = bisect(gap, lo, hi, 1e-12)
        .ok_or_else(|| Error::NoBracket(format!("no budget within e^±60 of {c_budget} matches loss {target}")))?;
    Ok((ln_c - ln_cp).exp())
}

/// Compute multiplier equivalent to `years` of progress at doubling time
/// `t_c_months`.
pub fn effective_gain(years: f64, t_c_months: f64) -> Result<f64> {
    if !(t_c_months > 0.0) {
        return Err(Error::InvalidArgument(format!("doubling time must be positive, got {t_c_months}")));
    }
    Ok(2f64.powf(12.0 * years / t_c_months))
}

/// A model reaching some loss with some compute at some date.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformancePoint {
    pub year: f64,
    pub compute: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalvingFit {
    /// Months for the compute needed at fixed performance to halve.
    pub halving_months: f64,
    /// Slope of log2(compute) per year.
    pub slope: f64,
    pub n_points: usize,
}

/// Least-squares trend of log2(compute) over time among points whose loss
/// lies in `band` (inclusive). Halving time is -12 / slope months.
pub fn same_performance_halving(points: &[PerformancePoint], band: (f64, f64)) -> Result<HalvingFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.loss >= band.0 && p.loss <= band.1 && p.compute > 0.0)
        .map(|p| (p.year, p.compute.log2()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "{} points in the loss band; need at least 2",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all points share one date".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok(HalvingFit {
        halving_months: -12.0 / slope,
        slope,
        n_points: pts.len(),
    })
}
