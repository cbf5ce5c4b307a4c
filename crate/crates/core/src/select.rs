//! Cross-validated model selection over the (specification, δ) grid.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, EvalRecord, Norms};
use crate::error::{Error, Result};
use crate::fit::{self, FitOptions};
use crate::optim::SimplexOptions;
use crate::seeds;
use crate::zoo::{CompiledSpec, Design, Inputs, ModelKind, ModelSpec, DELTA_GRID};

/// How records are held out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Folds {
    LeaveOneOut,
    /// k contiguous folds over the canonical record order. Faster, but not
    /// the leave-one-out protocol the reference numbers come from.
    KFold(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub folds: Folds,
    /// Starts per fold; the first is the cell's full-data estimate.
    pub n_starts: usize,
    /// Starts for the full-data fit of each cell.
    pub full_starts: usize,
    pub simplex: SimplexOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            folds: Folds::LeaveOneOut,
            n_starts: 4,
            full_starts: 10,
            simplex: SimplexOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub model: String,
    pub delta: f64,
    pub n_params: usize,
    /// Mean held-out squared error in nats², `None` if every fold failed.
    pub mse: Option<f64>,
    pub folds: usize,
    pub failed_folds: usize,
    /// Held-out records the spec cannot evaluate (e.g. missing epochs).
    pub skipped_folds: usize,
    #[serde(skip)]
    pub spec: Option<ModelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTable {
    pub folds: Folds,
    pub n_records: usize,
    pub cells: Vec<CvCell>,
    /// Indices into `cells`, best first. Failed cells are left out.
    pub ranking: Vec<usize>,
}

/// Every numbered model crossed with the δ grid.
pub fn default_grid() -> Vec<ModelSpec> {
    ModelSpec::all_numbered()
        .into_iter()
        .flat_map(|s| DELTA_GRID.iter().map(move |&d| s.with_delta(d)))
        .collect()
}

fn kind_order(kind: ModelKind) -> (u8, u64) {
    match kind {
        ModelKind::Numbered(i) => (0, i as u64),
        ModelKind::Irreducible => (1, 0),
        ModelKind::TransformerCeg => (2, 0),
        ModelKind::Cutoff { year } => (3, year.to_bits()),
    }
}

fn canonical_order(ds: &Dataset) -> Vec<usize> {
    let ids: Vec<String> = ds.records().iter().map(EvalRecord::identity).collect();
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    order
}

/// Leave-one-out cross-validation with the default options.
pub fn loocv(specs: &[ModelSpec], ds: &Dataset, seed: u64) -> Result<CvTable> {
    cross_validate(specs, ds, seed, &CvOptions::default())
}

/// Runs every cell. Records are put in a canonical order by identity first,
/// so the table does not depend on input order.
pub fn cross_validate(specs: &[ModelSpec], ds: &Dataset, seed: u64, opts: &CvOptions) -> Result<CvTable> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("empty model grid".into()));
    }
    let order = canonical_order(ds);
    let canonical = ds.subset(&order)?;
    let n = canonical.len();
    let folds: Vec<Vec<usize>> = match opts.folds {
        Folds::LeaveOneOut => (0..n).map(|i| vec![i]).collect(),
        Folds::KFold(k) => {
            if k < 2 {
                return Err(Error::InvalidArgument("k-fold needs k >= 2".into()));
            }
            let k = k.min(n);
            (0..k).map(|f| (f * n / k..(f + 1) * n / k).collect()).collect()
        }
    };

    let cells: Vec<CvCell> = specs
        .par_iter()
        .map(|spec| run_cell(spec, &canonical, &folds, seed, opts))
        .collect();
    let mut ranking: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].mse.is_some()).collect();
    ranking.sort_by(|&a, &b| rank_key(&cells[a], specs[a]).partial_cmp(&rank_key(&cells[b], specs[b])).expect("finite keys"));
    Ok(CvTable {
        folds: opts.folds,
        n_records: n,
        cells,
        ranking,
    })
}

fn rank_key(cell: &CvCell, spec: ModelSpec) -> (f64, usize, (u8, u64), f64) {
    (cell.mse.unwrap_or(f64::INFINITY), cell.n_params, kind_order(spec.kind), cell.delta)
}

fn held_out_error(compiled: &CompiledSpec, p: &[f64], rec: &EvalRecord, norms: Norms) -> Option<f64> {
    let inputs = Inputs::from_record(rec, &compiled.spec().data)?;
    let x = compiled.covariates(&inputs, norms).ok()?;
    let r = rec.loss - compiled.predict(p, &x);
    Some(r * r)
}

fn run_cell(spec: &ModelSpec, ds: &Dataset, folds: &[Vec<usize>], seed: u64, opts: &CvOptions) -> CvCell {
    let compiled = spec.compile();
    let cell_label = format!("{}|{}", spec.id(), spec.delta);
    let full_opts = FitOptions {
        n_starts: opts.full_starts,
        simplex: opts.simplex,
        warm_start: None,
    };
    let cell_seed = seeds::hashed(seed, &[cell_label.as_bytes()]);
    let warm = fit::fit_design(&compiled, &Design::build(&compiled, ds), cell_seed, &full_opts)
        .ok()
        .map(|r| r.theta.pack(spec).expect("own template"));

    let mut sq_errors = 0.0;
    let mut n_errors = 0usize;
    let mut failed = 0;
    let mut skipped = 0;
    for fold in folds {
        let held: Vec<&EvalRecord> = fold.iter().map(|&i| &ds.records()[i]).collect();
        let ids: Vec<String> = held.iter().map(|r| r.identity()).collect();
        let mut labels: Vec<&[u8]> = vec![cell_label.as_bytes()];
        labels.extend(ids.iter().map(|s| s.as_bytes()));
        let fold_seed = seeds::hashed(seed, &labels);

        let train_idx: Vec<usize> = (0..ds.len()).filter(|i| !fold.contains(i)).collect();
        if train_idx.is_empty() {
            failed += 1;
            continue;
        }
        let train = match ds.subset(&train_idx) {
            Ok(t) => t,
            Err(_) => {
                failed += 1;
                continue;
            }
        };
        let fold_opts = FitOptions {
            n_starts: opts.n_starts,
            simplex: opts.simplex,
            warm_start: warm.clone(),
        };
        let fitted = fit::fit_design(&compiled, &Design::build(&compiled, &train), fold_seed, &fold_opts);
        let p = match fitted {
            Ok(r) if r.objective.is_finite() => r.theta.pack(spec).expect("own template"),
            _ => {
                failed += 1;
                continue;
            }
        };
        let mut any = false;
        for rec in held {
            if let Some(e) = held_out_error(&compiled, &p, rec, ds.norms()) {
                sq_errors += e;
                n_errors += 1;
                any = true;
            }
        }
        if !any {
            skipped += 1;
        }
    }
    CvCell {
        model: spec.id(),
        delta: spec.delta,
        n_params: compiled.n_params(),
        mse: (n_errors > 0).then(|| sq_errors / n_errors as f64),
        folds: folds.len(),
        failed_folds: failed,
        skipped_folds: skipped,
        spec: Some(*spec),
    }
}

/// First `k` cells of the ranking (all of them if `k` exceeds it).
pub fn top_k(table: &CvTable, k: usize) -> Result<Vec<&CvCell>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(table.ranking.iter().take(k).map(|&i| &table.cells[i]).collect())
}

impl CvTable {
    pub fn best(&self) -> Option<&CvCell> {
        self.ranking.first().map(|&i| &self.cells[i])
    }

    pub fn get(&self, model: &str, delta: f64) -> Option<&CvCell> {
        self.cells.iter().find(|c| c.model == model && c.delta == delta)
    }

    /// Aligned text: one row per model, one column per δ.
    pub fn to_text(&self) -> String {
        let mut deltas: Vec<f64> = Vec::new();
        let mut models: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !deltas.contains(&c.delta) {
                deltas.push(c.delta);
            }
            if !models.contains(&c.model.as_str()) {
                models.push(&c.model);
            }
        }
        deltas.sort_by(f64::total_cmp);
        let mut out = String::new();
        let _ = write!(out, "{:<16}", "model \\ delta");
        for d in &deltas {
            let _ = write!(out, "{:>10}", d);
        }
        out.push('\n');
        for m in models {
            let _ = write!(out, "{:<16}", m);
            for d in &deltas {
                match self.get(m, *d) {
                    Some(CvCell { mse: Some(v), .. }) => {
                        let _ = write!(out, "{:>10.5}", v);
                    }
                    Some(_) => {
                        let _ = write!(out, "{:>10}", "failed");
                    }
                    None => {
                        let _ = write!(out, "{:>10}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticOptions};
    use crate::zoo::names::*;
    use crate::zoo::ParamVector;

    fn model1_data(n: usize, seed: u64) -> Dataset {
        let truth = ParamVector::from_pairs([
            (ALPHA_CONST, 0.9),
            (ALPHA_YEAR, 0.05),
            (ALPHA_PARAM, 0.3),
            (BETA_CONST, 0.7),
            (BETA_YEAR, 0.08),
            (BETA_DATA, 0.25),
        ]);
        generate_synthetic(&ModelSpec::numbered(1).unwrap(), &truth, &SyntheticOptions {
            n_records: n,
            noise_sigma: 0.03,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn quick() -> CvOptions {
        CvOptions {
            n_starts: 2,
            full_starts: 4,
            ..Default::default()
        }
    }

    #[test]
    fn two_records_give_two_folds() {
        let ds = model1_data(2, 0);
        let t = cross_validate(&[ModelSpec::numbered(1).unwrap()], &ds, 0, &quick()).unwrap();
        assert_eq!(t.cells[0].folds, 2);
        assert_eq!(t.cells[0].failed_folds, 2);
        assert!(t.cells[0].mse.is_none());
        assert!(t.ranking.is_empty());
    }

    #[test]
    fn generating_model_ranks_near_the_top() {
        let ds = model1_data(40, 4);
        let specs: Vec<ModelSpec> = [1, 2, 3, 16, 18]
            .iter()
            .map(|&i| ModelSpec::numbered(i).unwrap())
            .collect();
        let t = cross_validate(&specs, &ds, 1, &quick()).unwrap();
        let top: Vec<&str> = top_k(&t, 3).unwrap().iter().map(|c| c.model.as_str()).collect();
        assert!(top.contains(&"1"), "{top:?}\n{}", t.to_text());
        let worst = t.cells.iter().find(|c| c.model == "18").unwrap().mse.unwrap();
        assert!(worst > t.best().unwrap().mse.unwrap());
    }

    #[test]
    fn table_is_invariant_to_record_order() {
        let ds = model1_data(14, 2);
        let specs = [ModelSpec::numbered(2).unwrap()];
        let a = cross_validate(&specs, &ds, 3, &quick()).unwrap();
        let mut rev: Vec<EvalRecord> = ds.records().to_vec();
        rev.reverse();
        let ds_rev = Dataset::with_norms(rev, ds.norms()).unwrap();
        let b = cross_validate(&specs, &ds_rev, 3, &quick()).unwrap();
        assert_eq!(a.cells[0].mse.unwrap().to_bits(), b.cells[0].mse.unwrap().to_bits());
    }

    fn cell(model: &str, n_params: usize, mse: f64) -> CvCell {
        CvCell {
            model: model.into(),
            delta: 0.0,
            n_params,
            mse: Some(mse),
            folds: 1,
            failed_folds: 0,
            skipped_folds: 0,
            spec: None,
        }
    }

    #[test]
    fn ties_prefer_fewer_parameters() {
        let specs = [ModelSpec::numbered(15).unwrap(), ModelSpec::numbered(7).unwrap()];
        let cells = vec![cell("15", 12, 0.05), cell("7", 10, 0.05)];
        let mut ranking = vec![0, 1];
        ranking.sort_by(|&a, &b| rank_key(&cells[a], specs[a]).partial_cmp(&rank_key(&cells[b], specs[b])).unwrap());
        assert_eq!(ranking, vec![1, 0]);
    }

    #[test]
    fn top_k_sizes() {
        let cells: Vec<CvCell> = (0..12).map(|i| cell(&i.to_string(), 6, 0.1 + i as f64)).collect();
        let t = CvTable {
            folds: Folds::LeaveOneOut,
            n_records: 20,
            ranking: (0..12).collect(),
            cells,
        };
        assert_eq!(top_k(&t, 1).unwrap()[0].model, "0");
        let ten = top_k(&t, 10).unwrap();
        assert_eq!(ten.len(), 10);
        assert!(ten.windows(2).all(|w| w[0].mse <= w[1].mse));
        assert_eq!(top_k(&t, 50).unwrap().len(), 12);
        assert!(top_k(&t, 0).is_err());
        assert!(t.to_text().lines().count() == 13);
    }

    #[test]
    fn default_grid_has_every_cell() {
        let g = default_grid();
        assert_eq!(g.len(), 120);
        assert_eq!(g[0].delta, 0.0);
        assert_eq!(g[119].id(), "20");
    }
}
