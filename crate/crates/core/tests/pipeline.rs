use effcompute::analysis;
use effcompute::dataset::{generate_synthetic, read_dataset, IngestOptions, SyntheticOptions};
use effcompute::fit::{self, BootstrapOptions};
use effcompute::select::{self, CvOptions, Folds};
use effcompute::zoo::reference_main_estimates;
use effcompute::ModelSpec;

fn synthetic(n: usize, seed: u64) -> effcompute::Dataset {
    generate_synthetic(
        &ModelSpec::main(),
        &reference_main_estimates(),
        &SyntheticOptions {
            n_records: n,
            noise_sigma: 0.03,
            seed,
            ..Default::default()
        },
    )
    .unwrap()
}

#[test]
fn csv_round_trip_preserves_fit() {
    let ds = synthetic(80, 1);
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    let back = read_dataset(buf.as_slice(), &IngestOptions::default()).unwrap();
    assert_eq!(back.dataset.len(), ds.len());
    assert!(back.diagnostics.is_empty());
    let spec = ModelSpec::main();
    let a = fit::fit(&spec, &ds, 3).unwrap();
    let b = fit::fit(&spec, &back.dataset, 3).unwrap();
    // dates are written at day resolution, so allow a small drift
    assert!((a.mse - b.mse).abs() < 1e-4, "{} vs {}", a.mse, b.mse);
}

#[test]
fn bootstrap_does_not_depend_on_thread_count() {
    let ds = synthetic(60, 2);
    let spec = ModelSpec::main();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| fit::bootstrap_with(&spec, &ds, 6, 7, false, &BootstrapOptions::default()).unwrap())
    };
    let one = run(1);
    let four = run(4);
    for (a, b) in one.replicates.iter().zip(&four.replicates) {
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }
}

#[test]
fn doubling_times_from_bootstrap_bracket_point() {
    let ds = synthetic(150, 3);
    let spec = ModelSpec::main();
    let full = fit::fit(&spec, &ds, 1).unwrap();
    let opts = BootstrapOptions {
        warm_start: Some(full.theta.clone()),
        ..Default::default()
    };
    let ens = fit::bootstrap_with(&spec, &ds, 30, 1, false, &opts).unwrap();
    let s = analysis::summarize(&full.theta, Some(&ens), analysis::doubling_times_closed_form).unwrap();
    let q = s.quantiles.unwrap();
    assert!(q.t_c[0] <= q.t_c[1] && q.t_c[1] <= q.t_c[2]);
    assert!(q.t_c[0] < s.point.t_c * 1.2 && q.t_c[2] > s.point.t_c * 0.8);
}

#[test]
fn cross_validation_prefers_generating_model() {
    let ds = synthetic(60, 4);
    let specs = [ModelSpec::main(), ModelSpec::numbered(18).unwrap(), ModelSpec::numbered(16).unwrap()];
    let opts = CvOptions {
        folds: Folds::KFold(6),
        ..Default::default()
    };
    let table = select::cross_validate(&specs, &ds, 0, &opts).unwrap();
    assert_eq!(table.best().unwrap().model, "7");
}

#[test]
fn cutoff_analysis_on_stationary_data() {
    let ds = synthetic(120, 5);
    let c = analysis::cutoff_analysis(&ds, 2017.5, 0, 0).unwrap();
    assert_eq!(c.n_pre + c.n_post, 120);
    let (pre, post) = (c.pre.unwrap(), c.post.unwrap());
    assert!(pre.quantiles.is_none());
    // same process on both sides, so the data-side doubling times agree
    assert!((pre.point.t_d / post.point.t_d - 1.0).abs() < 0.5);
    let empty = analysis::cutoff_analysis(&ds, 2030.0, 0, 0).unwrap();
    assert!(empty.post.is_none() && !empty.flags.is_empty());
    assert_eq!(empty.model, "7");
}
