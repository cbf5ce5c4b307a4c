//! Maximum likelihood with residuals correlated within papers.
//!
//! Residuals of records from the same paper share correlation ρ; records of
//! different papers are independent. The correlation matrix is then block
//! diagonal with equicorrelated blocks, whose determinant and inverse have
//! closed forms, so the likelihood costs O(n).

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fit::{self, initial_step, l1, FitOptions, FitResult};
use crate::optim::nelder_mead;
use crate::zoo::names::{RHO, SIGMA2};
use crate::zoo::{param_kind, sigmoid, Design, ModelSpec, ParamVector};

/// Smallest residual variance used when a fit interpolates exactly.
const MIN_VARIANCE: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub paper_id: String,
    pub start: usize,
    pub len: usize,
}

/// Contiguous index ranges, one per paper, covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStructure {
    blocks: Vec<Block>,
    n: usize,
}

impl BlockStructure {
    pub fn from_sizes(sizes: &[usize]) -> Result<BlockStructure> {
        let mut blocks = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for (i, &len) in sizes.iter().enumerate() {
            if len == 0 {
                return Err(Error::InvalidArgument("block sizes must be at least 1".into()));
            }
            blocks.push(Block {
                paper_id: format!("block-{i}"),
                start,
                len,
            });
            start += len;
        }
        Ok(BlockStructure { blocks, n: start })
    }

    /// Blocks from a sequence of paper ids, which must already be grouped.
    pub fn from_paper_ids<'a, I: IntoIterator<Item = &'a str>>(ids: I) -> Result<BlockStructure> {
        let mut blocks: Vec<Block> = Vec::new();
        let mut n = 0;
        for (i, id) in ids.into_iter().enumerate() {
            match blocks.last_mut() {
                Some(b) if b.paper_id == id => b.len += 1,
                _ => {
                    if blocks.iter().any(|b| b.paper_id == id) {
                        return Err(Error::InvalidArgument(format!(
                            "records of paper `{id}` are not contiguous"
                        )));
                    }
                    blocks.push(Block {
                        paper_id: id.to_owned(),
                        start: i,
                        len: 1,
                    });
                }
            }
            n = i + 1;
        }
        Ok(BlockStructure { blocks, n })
    }

    pub fn from_dataset(ds: &Dataset) -> Result<BlockStructure> {
        BlockStructure::from_paper_ids(ds.records().iter().map(|r| r.paper_id.as_str()))
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len).collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_size(&self) -> usize {
        self.blocks.iter().map(|b| b.len).max().unwrap_or(0)
    }

    /// Lower end of the open interval of ρ keeping every block positive
    /// definite; -inf when all blocks are singletons.
    pub fn rho_lower(&self) -> f64 {
        rho_lower(self.max_size())
    }
}

fn rho_lower(max_size: usize) -> f64 {
    if max_size <= 1 {
        f64::NEG_INFINITY
    } else {
        -1.0 / (max_size as f64 - 1.0)
    }
}

fn check_rho(rho: f64, max_size: usize) -> Result<()> {
    let lower = rho_lower(max_size);
    if rho.is_finite() && rho < 1.0 && rho > lower {
        Ok(())
    } else {
        Err(Error::InvalidCorrelation { rho, lower })
    }
}

/// ln det of the block-equicorrelated correlation matrix.
pub fn block_log_det(sizes: &[usize], rho: f64) -> Result<f64> {
    check_rho(rho, sizes.iter().copied().max().unwrap_or(0))?;
    if rho == 0.0 {
        return Ok(0.0);
    }
    Ok(sizes
        .iter()
        .filter(|&&s| s > 1)
        .map(|&s| {
            let m = (s - 1) as f64;
            m * (-rho).ln_1p() + (m * rho).ln_1p()
        })
        .sum())
}

/// εᵀP⁻¹ε for the block-equicorrelated P, blockwise via Sherman–Morrison.
pub fn block_quadratic_form(eps: &[f64], blocks: &BlockStructure, rho: f64) -> Result<f64> {
    if eps.len() != blocks.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} residuals for {} block rows",
            eps.len(),
            blocks.n()
        )));
    }
    check_rho(rho, blocks.max_size())?;
    Ok(quadratic_form_unchecked(eps, blocks, rho))
}

fn quadratic_form_unchecked(eps: &[f64], blocks: &BlockStructure, rho: f64) -> f64 {
    if rho == 0.0 {
        return eps.iter().map(|e| e * e).sum();
    }
    blocks
        .blocks
        .iter()
        .map(|b| {
            let e = &eps[b.start..b.start + b.len];
            let ss: f64 = e.iter().map(|v| v * v).sum();
            if b.len == 1 {
                return ss;
            }
            let s: f64 = e.iter().sum();
            let m = (b.len - 1) as f64;
            (ss - rho * s * s / (1.0 + m * rho)) / (1.0 - rho)
        })
        .sum()
}

/// ½ ln det P + (n/2) ln σ² + εᵀP⁻¹ε / (2σ²), with ρ and σ² read from
/// `theta` and ε the residuals of `spec` on `ds` in block order.
pub fn negative_log_likelihood(
    spec: &ModelSpec,
    theta: &ParamVector,
    ds: &Dataset,
    blocks: &BlockStructure,
) -> Result<f64> {
    let rho = theta.require(RHO)?;
    let sigma2 = theta.require(SIGMA2)?;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidVariance(sigma2));
    }
    let p = theta.pack(spec)?;
    let compiled = spec.compile();
    let design = Design::build(&compiled, ds);
    if !design.dropped.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} records cannot be evaluated under model {}",
            design.dropped.len(),
            spec.id()
        )));
    }
    let mut eps = Vec::new();
    design.residuals(&compiled, &p, &mut eps);
    let log_det = block_log_det(&blocks.sizes(), rho)?;
    let q = block_quadratic_form(&eps, blocks, rho)?;
    let n = eps.len() as f64;
    Ok(0.5 * log_det + 0.5 * n * sigma2.ln() + q / (2.0 * sigma2))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterOptions {
    pub fit: FitOptions,
    /// Hold ρ at this value instead of estimating it.
    pub fixed_rho: Option<f64>,
    /// ρ tried with the warm start.
    pub warm_rho: Option<f64>,
}

pub fn fit_clustered(spec: &ModelSpec, ds: &Dataset, seed: u64) -> Result<FitResult> {
    fit_clustered_with(spec, ds, seed, &ClusterOptions::default())
}

/// Maps an unconstrained value into (lower, 1).
fn rho_of(u: f64, lower: f64) -> f64 {
    lower + (1.0 - lower) * sigmoid(u)
}

fn u_of(rho: f64, lower: f64) -> f64 {
    let t = ((rho - lower) / (1.0 - lower)).clamp(1e-9, 1.0 - 1e-9);
    (t / (1.0 - t)).ln()
}

/// Profile likelihood over θ and ρ, with σ² = εᵀP⁻¹ε / n maximised out.
/// Records are regrouped by paper first (stable in first appearance).
pub fn fit_clustered_with(
    spec: &ModelSpec,
    ds: &Dataset,
    seed: u64,
    opts: &ClusterOptions,
) -> Result<FitResult> {
    let grouped = ds.grouped_by_paper();
    let compiled = spec.compile();
    let design = Design::build(&compiled, &grouped);
    fit::check_design(&compiled, &design)?;
    let blocks = BlockStructure::from_paper_ids(
        design.rows.iter().map(|&i| grouped.records()[i].paper_id.as_str()),
    )?;
    let lower = blocks.rho_lower();
    if let Some(rho) = opts.fixed_rho {
        check_rho(rho, blocks.max_size())?;
    }
    // all-singleton structures carry no information about ρ
    let free_rho = opts.fixed_rho.is_none() && lower.is_finite();
    let fixed = opts.fixed_rho.unwrap_or(0.0);

    let warm = match &opts.fit.warm_start {
        Some(w) => w.clone(),
        None => {
            let ls = FitOptions {
                warm_start: None,
                ..opts.fit.clone()
            };
            fit::fit_design(&compiled, &design, seed, &ls)?
                .theta
                .pack(spec)?
        }
    };

    let k = compiled.n_params();
    let n = design.len() as f64;
    let delta = spec.delta;
    let sizes = blocks.sizes();
    let profile = |x: &[f64]| -> (f64, f64, f64) {
        let rho = if free_rho { rho_of(x[k], lower) } else { fixed };
        if !(rho < 1.0 && rho > lower) {
            return (f64::INFINITY, rho, f64::NAN);
        }
        let mut eps = Vec::with_capacity(design.len());
        design.residuals(&compiled, &x[..k], &mut eps);
        let q = quadratic_form_unchecked(&eps, &blocks, rho);
        let sigma2 = (q / n).max(MIN_VARIANCE);
        let log_det = block_log_det(&sizes, rho).unwrap_or(f64::INFINITY);
        let nll = 0.5 * log_det + 0.5 * n * sigma2.ln() + q / (2.0 * sigma2);
        (nll, rho, sigma2)
    };
    let objective = |x: &[f64]| profile(x).0 / n + delta * l1(&x[..k]);

    let mut steps: Vec<f64> = compiled
        .template()
        .iter()
        .map(|name| initial_step(param_kind(name)))
        .collect();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    let n_starts = opts.fit.n_starts.max(1);
    let random = fit::starting_points(
        &compiled,
        seed ^ 0xC105_7E12,
        &FitOptions {
            warm_start: None,
            n_starts,
            ..opts.fit.clone()
        },
    );
    let warm_rhos = [opts.warm_rho.unwrap_or(0.0), 0.45, 0.0, 0.2];
    for i in 0..n_starts {
        let mut x = if i < 2 { warm.clone() } else { random[i].clone() };
        if free_rho {
            let r = warm_rhos[i % warm_rhos.len()].max(lower + 1e-6).min(1.0 - 1e-6);
            x.push(u_of(r, lower));
        }
        starts.push(x);
    }
    if free_rho {
        steps.push(0.5);
    }

    let mut best: Option<crate::optim::SimplexResult> = None;
    let mut evaluations = 0;
    for x0 in &starts {
        let r = nelder_mead(objective, x0, &steps, &opts.fit.simplex);
        evaluations += r.evals;
        if best.as_ref().is_none_or(|b| r.f < b.f) {
            best = Some(r);
        }
    }
    let best = best.expect("at least one start");
    let (_, rho, sigma2) = profile(&best.x);
    let mut theta = ParamVector::from_packed(compiled.template(), &best.x[..k]);
    theta.set(RHO, rho);
    theta.set(SIGMA2, sigma2);
    Ok(FitResult {
        spec: *spec,
        theta,
        objective: best.f,
        mse: design.sse(&compiled, &best.x[..k]) / n,
        n_used: design.len(),
        converged: best.converged && best.f.is_finite(),
        n_restarts_used: starts.len(),
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn dense(sizes: &[usize], rho: f64) -> DMatrix<f64> {
        let n: usize = sizes.iter().sum();
        let mut m = DMatrix::<f64>::identity(n, n);
        let mut start = 0;
        for &s in sizes {
            for i in start..start + s {
                for j in start..start + s {
                    if i != j {
                        m[(i, j)] = rho;
                    }
                }
            }
            start += s;
        }
        m
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() < 1e-14
    }

    #[test]
    fn log_det_examples() {
        assert_eq!(block_log_det(&[3, 1, 5], 0.0).unwrap(), 0.0);
        assert!((block_log_det(&[2], 0.5).unwrap() - 0.75f64.ln()).abs() < 1e-15);
        let expected = (0.55f64 * 0.55 * 1.9).ln();
        assert!((block_log_det(&[3], 0.45).unwrap() - expected).abs() < 1e-14);
        assert!((expected - 0.57475f64.ln()).abs() < 1e-12);
        assert!(block_log_det(&[3], -0.5).is_err());
        assert!(block_log_det(&[3], 1.0).is_err());
    }

    #[test]
    fn quadratic_form_examples() {
        let b3 = BlockStructure::from_sizes(&[1, 1, 1]).unwrap();
        assert_eq!(block_quadratic_form(&[1.0, 2.0, 3.0], &b3, 0.0).unwrap(), 14.0);
        let b2 = BlockStructure::from_sizes(&[2]).unwrap();
        assert!((block_quadratic_form(&[1.0, 1.0], &b2, 0.5).unwrap() - 4.0 / 3.0).abs() < 1e-14);
        assert!((block_quadratic_form(&[1.0, -1.0], &b2, 0.5).unwrap() - 4.0).abs() < 1e-14);
        assert!(matches!(
            block_quadratic_form(&[1.0], &b2, 0.5),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn paper_ids_must_be_contiguous() {
        assert!(BlockStructure::from_paper_ids(["a", "a", "b", "c", "c"]).is_ok());
        assert!(BlockStructure::from_paper_ids(["a", "b", "a"]).is_err());
        let b = BlockStructure::from_paper_ids(["a", "a", "b"]).unwrap();
        assert_eq!(b.sizes(), vec![2, 1]);
        assert_eq!(b.rho_lower(), -1.0);
    }

    fn sizes_and_rho() -> impl Strategy<Value = (Vec<usize>, f64, Vec<f64>)> {
        prop::collection::vec(1usize..=12, 1..6).prop_flat_map(|sizes| {
            let max = *sizes.iter().max().unwrap();
            let lower = if max > 1 { -1.0 / (max as f64 - 1.0) } else { -0.99 };
            let n: usize = sizes.iter().sum();
            (
                Just(sizes),
                (lower * 0.999)..0.98f64,
                prop::collection::vec(-2.0f64..2.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn matches_dense_oracle((sizes, rho, eps) in sizes_and_rho()) {
            let p = dense(&sizes, rho);
            let det = p.clone().lu().determinant();
            prop_assert!(det > 0.0);
            let ld = block_log_det(&sizes, rho).unwrap();
            prop_assert!(rel_close(ld, det.ln(), 1e-10), "{} vs {}", ld, det.ln());
            let e = DVector::from_vec(eps.clone());
            let solved = p.lu().solve(&e).unwrap();
            let dense_q = e.dot(&solved);
            let blocks = BlockStructure::from_sizes(&sizes).unwrap();
            let q = block_quadratic_form(&eps, &blocks, rho).unwrap();
            prop_assert!(rel_close(q, dense_q, 1e-10), "{} vs {}", q, dense_q);
        }
    }

    use crate::dataset::{generate_synthetic, EvalRecord, SyntheticOptions};
    use crate::zoo::names::*;

    fn model1() -> (ModelSpec, ParamVector) {
        (
            ModelSpec::numbered(1).unwrap(),
            ParamVector::from_pairs([
                (ALPHA_CONST, 0.9),
                (ALPHA_YEAR, 0.05),
                (ALPHA_PARAM, 0.3),
                (BETA_CONST, 0.7),
                (BETA_YEAR, 0.08),
                (BETA_DATA, 0.25),
            ]),
        )
    }

    #[test]
    fn nll_matches_dense_bivariate_normal() {
        let (spec, truth) = model1();
        let ds = generate_synthetic(&spec, &truth, &SyntheticOptions {
            n_records: 2,
            noise_sigma: 0.1,
            n_papers: Some(1),
            seed: 8,
            ..Default::default()
        })
        .unwrap();
        let mut theta = truth.clone();
        theta.set(ALPHA_PARAM, 0.27);
        theta.set(RHO, 0.35);
        theta.set(SIGMA2, 0.02);
        let blocks = BlockStructure::from_dataset(&ds).unwrap();
        let got = negative_log_likelihood(&spec, &theta, &ds, &blocks).unwrap();

        let eps: Vec<f64> = ds
            .records()
            .iter()
            .map(|r| r.loss - crate::zoo::predict_loss(&spec, &theta, r, ds.norms()).unwrap())
            .collect();
        let cov = dense(&[2], 0.35) * 0.02;
        let e = DVector::from_vec(eps);
        let quad = e.dot(&cov.clone().lu().solve(&e).unwrap());
        // -ln density without the 2π constant
        let oracle = 0.5 * cov.determinant().ln() + 0.5 * quad;
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn nll_at_zero_rho_and_zero_residuals() {
        let (spec, truth) = model1();
        let ds = generate_synthetic(&spec, &truth, &SyntheticOptions {
            n_records: 5,
            noise_sigma: 0.0,
            ..Default::default()
        })
        .unwrap();
        let blocks = BlockStructure::from_dataset(&ds).unwrap();
        let mut theta = truth.clone();
        theta.set(RHO, 0.0);
        theta.set(SIGMA2, 1.0);
        assert!(negative_log_likelihood(&spec, &theta, &ds, &blocks).unwrap().abs() < 1e-20);
        theta.set(SIGMA2, 0.5);
        theta.set(ALPHA_CONST, 1.0);
        let eps: Vec<f64> = ds
            .records()
            .iter()
            .map(|r| r.loss - crate::zoo::predict_loss(&spec, &theta, r, ds.norms()).unwrap())
            .collect();
        let ols = 2.5 * 0.5f64.ln() + eps.iter().map(|e| e * e).sum::<f64>() / 1.0;
        let got = negative_log_likelihood(&spec, &theta, &ds, &blocks).unwrap();
        assert!((got - ols).abs() < 1e-12);
        theta.set(SIGMA2, 0.0);
        assert!(matches!(
            negative_log_likelihood(&spec, &theta, &ds, &blocks),
            Err(Error::InvalidVariance(_))
        ));
    }

    #[test]
    fn nll_invariant_to_block_permutation() {
        let (spec, truth) = model1();
        let ds = generate_synthetic(&spec, &truth, &SyntheticOptions {
            n_records: 40,
            n_papers: Some(6),
            within_paper_rho: 0.3,
            ..Default::default()
        })
        .unwrap();
        let mut theta = truth.clone();
        theta.set(RHO, 0.3);
        theta.set(SIGMA2, 0.003);
        let blocks = BlockStructure::from_dataset(&ds).unwrap();
        let a = negative_log_likelihood(&spec, &theta, &ds, &blocks).unwrap();
        let mut groups: Vec<Vec<EvalRecord>> = Vec::new();
        for b in blocks.blocks() {
            groups.push(ds.records()[b.start..b.start + b.len].to_vec());
        }
        groups.reverse();
        groups.rotate_left(2);
        let permuted =
            Dataset::with_norms(groups.into_iter().flatten().collect(), ds.norms()).unwrap();
        let pblocks = BlockStructure::from_dataset(&permuted).unwrap();
        let b = negative_log_likelihood(&spec, &theta, &permuted, &pblocks).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs());
    }

    #[test]
    fn zero_rho_fit_matches_least_squares() {
        let (spec, truth) = model1();
        let ds = generate_synthetic(&spec, &truth, &SyntheticOptions {
            n_records: 80,
            n_papers: Some(10),
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        let ls = fit::fit(&spec, &ds, 0).unwrap();
        let opts = ClusterOptions {
            fixed_rho: Some(0.0),
            fit: FitOptions { n_starts: 3, ..Default::default() },
            ..Default::default()
        };
        let ml = fit_clustered_with(&spec, &ds, 0, &opts).unwrap();
        assert_eq!(ml.theta.get(RHO), Some(0.0));
        for r in ds.records() {
            let a = crate::zoo::predict_loss(&spec, &ls.theta, r, ds.norms()).unwrap();
            let b = crate::zoo::predict_loss(&spec, &ml.theta, r, ds.norms()).unwrap();
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        assert!((ml.theta.get(SIGMA2).unwrap() - ls.mse).abs() < 1e-6);
    }

    fn recovered_rho(rho_true: f64, seed: u64) -> f64 {
        let (spec, truth) = model1();
        let ds = generate_synthetic(&spec, &truth, &SyntheticOptions {
            n_records: 300,
            n_papers: Some(20),
            within_paper_rho: rho_true,
            noise_sigma: 0.05,
            seed,
            ..Default::default()
        })
        .unwrap();
        let opts = ClusterOptions {
            fit: FitOptions { n_starts: 3, ..Default::default() },
            ..Default::default()
        };
        fit_clustered_with(&spec, &ds, seed, &opts).unwrap().theta.get(RHO).unwrap()
    }

    #[test]
    fn recovers_injected_correlation() {
        let rho = recovered_rho(0.45, 5);
        assert!((rho - 0.45).abs() < 0.15, "{rho}");
    }

    #[test]
    fn recovers_independence() {
        let rho = recovered_rho(0.0, 6);
        assert!(rho.abs() < 0.1, "{rho}");
    }
}
