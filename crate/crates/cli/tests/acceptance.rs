//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails other than the documented known defects.

use std::process::Command;
use std::time::{Duration, Instant};

use effcompute::analysis::{self, CegPath, LawSet, ScalingContext, ValueSpace, SHAPLEY_PLAYERS};
use effcompute::cluster::{block_log_det, block_quadratic_form, BlockStructure};
use effcompute::dataset::{generate_synthetic, load_dataset, IngestOptions, SyntheticOptions};
use effcompute::fit::{self, BootstrapOptions};
use effcompute::select;
use effcompute::zoo::names::*;
use effcompute::zoo::{param_template, reference_main_estimates};
use effcompute::{Benchmark, EvalRecord, ModelSpec, Norms, ParamVector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

/// Criteria whose stated check is known to be wrong. They still run and
/// report FAIL; the suite only complains if one of them starts passing.
const KNOWN_DEFECTS: &[(u32, &str)] = &[(
    7,
    "stated closed form m^(-1/e) is a resource-scale ratio; compute scales with its square, m^(-2/e), checked as 7b",
)];

fn main() {
    let criteria: Vec<(u32, &str, fn() -> Verdict)> = vec![
        (1, "block linear algebra vs dense oracle", c1_linear_algebra),
        (2, "closed-form doubling arithmetic", c2_closed_form),
        (3, "synthetic parameter recovery", c3_recovery),
        (4, "closed form vs optimal scaling", c4_method_agreement),
        (5, "Shapley axioms and brute force", c5_shapley),
        (6, "Kaplan to Chinchilla CEG", c6_kaplan_chinchilla),
        (7, "transformer CEG closed form as stated", c7_transformer_stated),
        (8, "public dataset reproduction", c8_public_dataset),
        (9, "CLI determinism", c9_determinism),
    ];
    let mut unexpected = Vec::new();
    for (id, name, check) in criteria {
        let start = Instant::now();
        let verdict = check();
        let secs = start.elapsed().as_secs_f64();
        let known = KNOWN_DEFECTS.iter().find(|(k, _)| *k == id);
        match (&verdict, known) {
            (Verdict::Pass(detail), None) => println!("PASS {id} {name} ({secs:.1}s): {detail}"),
            (Verdict::Pass(detail), Some(_)) => {
                println!("PASS {id} {name} ({secs:.1}s): {detail} [listed as a known defect]");
                unexpected.push(id);
            }
            (Verdict::Fail(detail), None) => {
                println!("FAIL {id} {name} ({secs:.1}s): {detail}");
                unexpected.push(id);
            }
            (Verdict::Fail(detail), Some((_, why))) => {
                println!("FAIL {id} {name} ({secs:.1}s): {detail} [known defect: {why}]")
            }
            (Verdict::Skip(why), _) => println!("SKIP {id} {name}: {why}"),
        }
        if id == 7 {
            match c7b_transformer_corrected() {
                Verdict::Pass(d) => println!("PASS 7b transformer CEG against m^(-2/e): {d}"),
                Verdict::Fail(d) | Verdict::Skip(d) => {
                    println!("FAIL 7b transformer CEG against m^(-2/e): {d}");
                    unexpected.push(7);
                }
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected results for criteria {unexpected:?}");
        std::process::exit(1);
    }
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn within_budget(elapsed: Duration, limit: Duration) -> bool {
    elapsed <= limit
}

fn dense_correlation(sizes: &[usize], rho: f64) -> DMatrix<f64> {
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

fn c1_linear_algebra() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_det = 0f64;
    let mut worst_q = 0f64;
    for _ in 0..200 {
        let sizes: Vec<usize> = (0..rng.random_range(1..=6)).map(|_| rng.random_range(1..=12)).collect();
        let rho = rng.random_range(-0.08..0.9);
        let n: usize = sizes.iter().sum();
        let eps: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = dense_correlation(&sizes, rho);
        let det = p.clone().lu().determinant();
        let ld = block_log_det(&sizes, rho).expect("valid rho");
        // relative error of the determinant itself
        worst_det = worst_det.max((ld - det.ln()).exp_m1().abs());
        let e = DVector::from_vec(eps.clone());
        let dense_q = e.dot(&p.lu().solve(&e).expect("positive definite"));
        let blocks = BlockStructure::from_sizes(&sizes).unwrap();
        let q = block_quadratic_form(&eps, &blocks, rho).unwrap();
        worst_q = worst_q.max((q - dense_q).abs() / dense_q.abs());
    }
    let elapsed = start.elapsed();
    verdict(
        worst_det <= 1e-10 && worst_q <= 1e-10 && within_budget(elapsed, Duration::from_secs(5)),
        format!(
            "200 cases, worst relative error det {worst_det:.1e}, quadratic form {worst_q:.1e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn c2_closed_form() -> Verdict {
    let t = analysis::doubling_times_closed_form(&reference_main_estimates()).unwrap();
    // the reported bootstrap median and its 95% interval
    let (median, lo, hi) = (8.4, 4.5, 14.3);
    let ok = (t.t_d - 9.24).abs() <= 0.01 && (t.t_c - 8.67).abs() <= 0.01 && (lo..=hi).contains(&t.t_c);
    verdict(
        ok,
        format!(
            "T_N {:.2}, T_D {:.3}, T_C {:.3} months; median {median} with interval [{lo}, {hi}]",
            t.t_n, t.t_d, t.t_c
        ),
    )
}

fn c3_recovery() -> Verdict {
    let start = Instant::now();
    let spec = ModelSpec::main();
    let truth = reference_main_estimates();
    let ds = generate_synthetic(
        &spec,
        &truth,
        &SyntheticOptions {
            n_records: 300,
            noise_sigma: 0.05,
            seed: 2024,
            ..Default::default()
        },
    )
    .unwrap();
    let seed = 11;
    let full = fit::fit(&spec, &ds, seed).unwrap();
    let opts = BootstrapOptions {
        warm_start: Some(full.theta.clone()),
        ..Default::default()
    };
    let ens = fit::bootstrap_with(&spec, &ds, 100, seed, false, &opts).unwrap();
    let template = param_template(&spec);
    let sd = fit::bootstrap_std(&ens, &template).unwrap();
    let mut worst = (0.0, "");
    for name in &template {
        let z = (full.theta.get(name).unwrap() - truth.get(name).unwrap()).abs() / sd.get(name).unwrap();
        if z > worst.0 {
            worst = (z, name);
        }
    }
    let t_true = analysis::doubling_times_closed_form(&truth).unwrap().t_c;
    let t_hat = analysis::doubling_times_closed_form(&full.theta).unwrap().t_c;
    let rel = (t_hat / t_true - 1.0).abs();
    let elapsed = start.elapsed();
    verdict(
        worst.0 <= 3.0 && rel <= 0.15 && within_budget(elapsed, Duration::from_secs(120)),
        format!(
            "largest |error|/sd {:.2} ({}), T_C {:.2} vs {:.2} months ({:.1}% off), {} of 100 replicates used, {:.1}s",
            worst.0,
            worst.1,
            t_hat,
            t_true,
            100.0 * rel,
            ens.n_converged(),
            elapsed.as_secs_f64()
        ),
    )
}

fn random_theta(rng: &mut ChaCha8Rng) -> ParamVector {
    ParamVector::from_pairs([
        (ALPHA_CONST, rng.random_range(0.3..1.5)),
        (ALPHA_CONST_PTB, rng.random_range(-0.2..0.2)),
        (ALPHA_CONST_WT2, rng.random_range(-0.2..0.2)),
        (ALPHA_YEAR, rng.random_range(0.002..0.06)),
        (ALPHA_PARAM, rng.random_range(0.03..0.15)),
        (BETA_CONST, rng.random_range(0.3..1.5)),
        (BETA_CONST_PTB, rng.random_range(-0.2..0.2)),
        (BETA_CONST_WT2, rng.random_range(-0.2..0.2)),
        (BETA_YEAR, rng.random_range(0.01..0.08)),
        (BETA_DATA, rng.random_range(0.03..0.15)),
    ])
}

fn c4_method_agreement() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = ModelSpec::main();
    let norms = Norms { n0: 1e6, d0: 1e7, y0: 2012.0 };
    let mut worst = 0f64;
    let mut errors = 0;
    for _ in 0..50 {
        let theta = random_theta(&mut rng);
        let ctx = ScalingContext::new(norms, rng.random_range(2014.0..2024.0), Benchmark::Wt103);
        let budget = 10f64.powf(rng.random_range(18.0..24.0));
        let closed = analysis::doubling_times_closed_form(&theta).unwrap().t_c;
        match analysis::doubling_times_optimal_scaling(&spec, &theta, &ctx, budget) {
            Ok(opt) => worst = worst.max((opt / closed - 1.0).abs()),
            Err(_) => errors += 1,
        }
    }
    verdict(
        worst <= 0.05 && errors == 0,
        format!("50 draws, largest relative gap {:.2}%, {errors} failures", 100.0 * worst),
    )
}

fn record(name: &str, n: f64, d: f64, year: f64, benchmark: Benchmark) -> EvalRecord {
    EvalRecord {
        model_name: name.into(),
        paper_id: name.into(),
        publication_year: year,
        benchmark,
        loss: 3.0,
        params_n: n,
        dataset_tokens_d: d,
        epochs: None,
        vocab_size: None,
        is_transformer: false,
        exclusion_flags: Default::default(),
        compute_flop: None,
    }
}

/// Main-model loss written out directly, independent of the library's
/// evaluator.
fn oracle_loss(t: &ParamVector, norms: Norms, b: Benchmark, n: f64, d: f64, yp: f64, yd: f64) -> f64 {
    let g = |k: &str| t.get(k).unwrap();
    let (ap, bp) = match b {
        Benchmark::Wt103 => (0.0, 0.0),
        Benchmark::Ptb => (g(ALPHA_CONST_PTB), g(BETA_CONST_PTB)),
        Benchmark::Wt2 => (g(ALPHA_CONST_WT2), g(BETA_CONST_WT2)),
    };
    (g(ALPHA_CONST) + ap - g(ALPHA_YEAR) * (yp - norms.y0) - g(ALPHA_PARAM) * (n / norms.n0).ln()).exp()
        + (g(BETA_CONST) + bp - g(BETA_YEAR) * (yd - norms.y0) - g(BETA_DATA) * (d / norms.d0).ln()).exp()
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

fn brute_force_shapley(t: &ParamVector, norms: Norms, old: &EvalRecord, new: &EvalRecord) -> [f64; 4] {
    let v = |s: usize| {
        let pick = |bit: usize, a: f64, b: f64| if s & (1 << bit) != 0 { b } else { a };
        let loss = oracle_loss(
            t,
            norms,
            old.benchmark,
            pick(0, old.params_n, new.params_n),
            pick(1, old.dataset_tokens_d, new.dataset_tokens_d),
            pick(2, old.publication_year, new.publication_year),
            pick(3, old.publication_year, new.publication_year),
        );
        let base = oracle_loss(
            t,
            norms,
            old.benchmark,
            old.params_n,
            old.dataset_tokens_d,
            old.publication_year,
            old.publication_year,
        );
        base.exp() - loss.exp()
    };
    let orders = permutations(&[0, 1, 2, 3]);
    let mut phi = [0.0; 4];
    for order in &orders {
        let mut s = 0;
        for &i in order {
            phi[i] += v(s | 1 << i) - v(s);
            s |= 1 << i;
        }
    }
    phi.map(|x| x / orders.len() as f64)
}

fn c5_shapley() -> Verdict {
    let spec = ModelSpec::main();
    let norms = Norms { n0: 1e6, d0: 1e6, y0: 2012.0 };
    let mut failures = Vec::new();

    // symmetric case: identical terms, N and D moved alike
    let mut sym = reference_main_estimates();
    for (a, b) in [(ALPHA_CONST, BETA_CONST), (ALPHA_YEAR, BETA_YEAR), (ALPHA_PARAM, BETA_DATA)] {
        let v = sym.get(a).unwrap();
        sym.set(b, v);
    }
    let old = record("old", 1e7, 1e7, 2014.0, Benchmark::Wt103);
    let new = record("new", 1e9, 1e9, 2020.0, Benchmark::Wt103);
    let s = analysis::shapley_attribution(&spec, &sym, &old, &new, norms, ValueSpace::Perplexity).unwrap();
    if (s.values[0] - s.values[1]).abs() > 1e-9 * s.total.abs() || (s.values[2] - s.values[3]).abs() > 1e-9 * s.total.abs() {
        failures.push(format!("symmetry: {:?}", s.values));
    }
    // dummy: the data size does not change
    let new_same_d = record("new", 1e9, 1e7, 2020.0, Benchmark::Wt103);
    let s = analysis::shapley_attribution(&spec, &sym, &old, &new_same_d, norms, ValueSpace::Perplexity).unwrap();
    if s.values[1].abs() > 1e-12 {
        failures.push(format!("dummy: data scaling got {}", s.values[1]));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_eff = 0f64;
    let mut worst_brute = 0f64;
    for _ in 0..100 {
        let theta = random_theta(&mut rng);
        let b = [Benchmark::Wt103, Benchmark::Ptb, Benchmark::Wt2][rng.random_range(0..3)];
        let draw = |rng: &mut ChaCha8Rng, name: &str| {
            record(
                name,
                10f64.powf(rng.random_range(6.0..11.0)),
                10f64.powf(rng.random_range(6.0..12.0)),
                rng.random_range(2012.0..2023.0),
                b,
            )
        };
        let (old, new) = (draw(&mut rng, "old"), draw(&mut rng, "new"));
        let s = match analysis::shapley_attribution(&spec, &theta, &old, &new, norms, ValueSpace::Perplexity) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("attribution failed: {e}"));
                continue;
            }
        };
        let sum: f64 = s.values.iter().sum();
        worst_eff = worst_eff.max((sum - s.total).abs() / s.total.abs().max(1.0));
        let brute = brute_force_shapley(&theta, norms, &old, &new);
        for i in 0..4 {
            worst_brute = worst_brute.max((brute[i] - s.values[i]).abs() / s.total.abs().max(1.0));
        }
    }
    if worst_eff > 1e-9 {
        failures.push(format!("efficiency error {worst_eff:.1e}"));
    }
    if worst_brute > 1e-9 {
        failures.push(format!("brute-force mismatch {worst_brute:.1e}"));
    }
    let detail = format!(
        "players {:?}; 100 draws, efficiency error {worst_eff:.1e}, brute-force gap {worst_brute:.1e}",
        SHAPLEY_PLAYERS
    );
    if failures.is_empty() {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(format!("{detail}; {}", failures.join("; ")))
    }
}

fn c6_kaplan_chinchilla() -> Verdict {
    let laws = LawSet::shipped();
    let grid: Vec<f64> = (0..=34).map(|i| 10f64.powf(21.0 + i as f64 * 0.1)).chain([2.5e24]).collect();
    let mut values = Vec::new();
    for c in &grid {
        match analysis::kaplan_chinchilla_ceg(*c, &laws.kaplan, &laws.chinchilla) {
            Ok(v) => values.push(v),
            Err(e) => return Verdict::Fail(format!("at {c:e} FLOP: {e}")),
        }
    }
    let mut sorted: Vec<(f64, f64)> = grid.iter().copied().zip(values.iter().copied()).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = sorted.windows(2).all(|w| w[1].1 >= w[0].1 - 1e-9);
    let low = values[0];
    let high = *values.last().unwrap();
    verdict(
        (1.3..=2.5).contains(&low) && (2.5..=6.0).contains(&high) && monotone,
        format!("CEG {low:.3} at 1e21 FLOP, {high:.3} at 2.5e24 FLOP, monotone {monotone}"),
    )
}

/// Worst relative gap between the numeric common-scale CEG and `expected`
/// over a few (e, m) pairs.
fn transformer_gap(expected: fn(f64, f64) -> f64) -> (f64, String) {
    let ctx = ScalingContext::new(Norms { n0: 1e6, d0: 1e7, y0: 2012.0 }, 2020.0, Benchmark::Wt103);
    let mut worst = 0f64;
    let mut cases = Vec::new();
    for (e, m) in [(0.05f64, 0.95f64), (0.1, 0.9), (0.07, 0.98)] {
        let mut theta = reference_main_estimates();
        theta.set(ALPHA_PARAM, e);
        theta.set(BETA_DATA, e);
        theta.set(GAMMA_T, (m / (1.0 - m)).ln());
        let got = analysis::transformer_ceg(&theta, &ctx, 1e21, CegPath::CommonScale).unwrap_or(f64::NAN);
        let want = expected(e, m);
        let gap = (got / want - 1.0).abs();
        worst = if gap.is_nan() { f64::INFINITY } else { worst.max(gap) };
        cases.push(format!("e={e} m={m}: {got:.3} vs {want:.3}"));
    }
    (worst, cases.join(", "))
}

fn c7_transformer_stated() -> Verdict {
    let (worst, cases) = transformer_gap(|e, m| m.powf(-1.0 / e));
    verdict(worst <= 0.01, format!("{cases}; worst gap {:.1}%", 100.0 * worst))
}

fn c7b_transformer_corrected() -> Verdict {
    let (worst, cases) = transformer_gap(|e, m| m.powf(-2.0 / e));
    verdict(worst <= 0.01, format!("{cases}; worst gap {:.2e}", worst))
}

fn c8_public_dataset() -> Verdict {
    let Ok(path) = std::env::var("EFFCOMPUTE_PUBLIC_DATASET") else {
        return Verdict::Skip("set EFFCOMPUTE_PUBLIC_DATASET to the public evaluation CSV to run".into());
    };
    let ds = match load_dataset(&path, &IngestOptions::default()) {
        Ok(i) => i.dataset,
        Err(e) => return Verdict::Fail(format!("cannot load {path}: {e}")),
    };
    let spec = ModelSpec::main().with_delta(0.0025);
    let seed = 8;
    let full = match fit::fit(&spec, &ds, seed) {
        Ok(f) => f,
        Err(e) => return Verdict::Fail(format!("fit: {e}")),
    };
    let opts = BootstrapOptions {
        warm_start: Some(full.theta.clone()),
        ..Default::default()
    };
    let ens = match fit::bootstrap_with(&spec, &ds, 100, seed, false, &opts) {
        Ok(e) => e,
        Err(e) => return Verdict::Fail(format!("bootstrap: {e}")),
    };
    let q = match fit::quantiles(
        &ens,
        |t| analysis::doubling_times_closed_form(t).map_or(f64::NAN, |d| d.t_c),
        &[0.025, 0.5, 0.975],
    ) {
        Ok(q) => q,
        Err(e) => return Verdict::Fail(format!("quantiles: {e}")),
    };
    let doubling_ok = (7.0..=10.0).contains(&q[1]) && q[0] <= 14.3 && q[2] >= 4.5;
    let cells: Vec<ModelSpec> = [7u8, 10, 15, 18]
        .iter()
        .map(|&i| ModelSpec::numbered(i).unwrap().with_delta(0.0025))
        .collect();
    let table = match select::loocv(&cells, &ds, seed) {
        Ok(t) => t,
        Err(e) => return Verdict::Fail(format!("loocv: {e}")),
    };
    let mse = |id: &str| table.get(id, 0.0025).and_then(|c| c.mse).unwrap_or(f64::NAN);
    let close: Vec<f64> = ["7", "10", "15"].iter().map(|m| mse(m)).collect();
    let spread = close.iter().cloned().fold(f64::MIN, f64::max) - close.iter().cloned().fold(f64::MAX, f64::min);
    let cv_ok = mse("18") > 0.5 && spread <= 0.003;
    verdict(
        doubling_ok && cv_ok,
        format!(
            "T_C median {:.2} months, 95% [{:.2}, {:.2}]; LOOCV mse 7/10/15 {:?} (spread {spread:.4}), 18 {:.3}",
            q[1],
            q[0],
            q[2],
            close,
            mse("18")
        ),
    )
}

fn run_cli(args: &[&str], threads: &str) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_effcompute"))
        .args(args)
        .env("EFFCOMPUTE_THREADS", threads)
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn c9_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("synth.csv");
    let (code, bytes) = run_cli(&["synth", "--n", "60", "--seed", "9", "--papers", "12"], "1");
    if code != 0 {
        return Verdict::Fail(format!("synth exited {code}"));
    }
    std::fs::write(&csv, &bytes).unwrap();
    let input = csv.to_str().unwrap();
    let runs: Vec<Vec<&str>> = vec![
        vec!["synth", "--n", "60", "--seed", "9", "--papers", "12"],
        vec!["validate", input],
        vec!["fit", input, "--bootstrap", "8", "--seed", "3"],
        vec!["fit", input, "--bootstrap", "4", "--seed", "3", "--cluster"],
        vec!["loocv", input, "--grid", "7:0.0025,1:0", "--seed", "3"],
        vec![
            "analyze", input, "--seed", "3", "--ceg-transformer", "--ceg-chinchilla", "1e22", "--gain", "2",
        ],
        vec!["analyze", input, "--cutoff", "2017", "--bootstrap", "4", "--seed", "3"],
    ];
    let mut problems = Vec::new();
    for args in &runs {
        let (c1, a) = run_cli(args, "1");
        let (c2, b) = run_cli(args, "1");
        let (c3, c) = run_cli(args, "3");
        if c1 != 0 || c2 != 0 || c3 != 0 {
            problems.push(format!("{} exited {c1}/{c2}/{c3}", args[0]));
        } else if a != b || a != c || a.is_empty() {
            problems.push(format!("{} output differs", args.join(" ")));
        }
    }
    let n = runs.len();
    if problems.is_empty() {
        Verdict::Pass(format!("{n} invocations byte-identical across reruns and thread counts"))
    } else {
        Verdict::Fail(problems.join("; "))
    }
}
