//! Acceptance gate: one PASS/FAIL line per criterion.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{
    constant_model, group_fairness_oracle, logistic, non_dominated_oracle, random_points, random_samples, unit_grid,
};
use ksegment::config::ExperimentConfig;
use ksegment::dataset::generate_synthetic;
use ksegment::evaluation::{pareto_frontier, EvaluationReport, FairnessMeasure, ParetoPoint};
use ksegment::experiment::{run_experiment_with, ExperimentOutput};
use ksegment::fairness::{
    deviation_weighted_fairness, group_fairness, group_fairness_bruteforce, group_fairness_fast, partition_groups,
    RatioSample,
};
use ksegment::ksegment::KSegmentModel;
use ksegment::segmentation::{
    k3_default, k5_default, k5_illustration, sigmoid_blend, weights, Preset, SegmentationScheme, SmoothingMethod,
    SmoothingSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn benchmark_config(out: &Path) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic_benchmark.json");
    let mut cfg = ExperimentConfig::load(&path).expect("benchmark config");
    cfg.report.out_dir = out.to_path_buf();
    cfg
}

struct Benchmark {
    config: ExperimentConfig,
    output: ExperimentOutput,
    elapsed: Duration,
    out_dir: PathBuf,
    _dir: tempfile::TempDir,
}

fn run_benchmark() -> Benchmark {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let config = benchmark_config(&out_dir);
    let start = Instant::now();
    let output = run_experiment_with(&config).expect("benchmark run");
    Benchmark {
        config,
        output,
        elapsed: start.elapsed(),
        out_dir,
        _dir: dir,
    }
}

fn report<'a>(b: &'a Benchmark, name: &str) -> &'a EvaluationReport {
    b.output
        .reports
        .iter()
        .find(|r| r.metadata.model == name)
        .unwrap_or_else(|| panic!("no report for {name}"))
}

fn desk_scale_benchmark(b: &Benchmark) -> Outcome {
    let s = b.config.synthetic.as_ref().ok_or("benchmark is not synthetic")?;
    ensure!(
        s.num_properties == 20_000 && s.regressivity_strength == 0.4 && s.noise_scale == 0.15,
        "benchmark parameters {} / {} / {}",
        s.num_properties,
        s.regressivity_strength,
        s.noise_scale
    );
    ensure!(b.elapsed < Duration::from_secs(600), "benchmark took {:?}", b.elapsed);
    Ok(format!(
        "seeded benchmark (20,000 properties, s = 0.4, noise 0.15) ran {} models in {:.1?}",
        b.output.reports.len(),
        b.elapsed
    ))
}

/// Samples with distinct prices; quantiles by rank, `O(m log m)`.
fn large_samples(rng: &mut ChaCha8Rng, m: usize) -> Vec<RatioSample> {
    let prices: Vec<f64> = (0..m).map(|i| 1e5 + i as f64 + rng.gen::<f64>() * 0.5).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| prices[a].total_cmp(&prices[b]));
    let mut q = vec![0.0; m];
    for (rank, &i) in order.iter().enumerate() {
        q[i] = (rank + 1) as f64 / m as f64;
    }
    (0..m)
        .map(|i| {
            let ratio = rng.gen_range(0.2..2.5);
            RatioSample {
                sale_price: prices[i],
                sale_quantile: q[i],
                assessed_value: prices[i] * ratio,
                ratio,
            }
        })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst: f64 = 0.0;
    for inst in 0..200 {
        let n = if inst % 2 == 0 { 2 } else { 3 };
        let m = rng.gen_range(n..=2000);
        let ties = if inst % 4 < 2 { 0 } else { rng.gen_range(1..50) };
        let samples = random_samples(&mut rng, m, ties);
        let part = partition_groups(&samples, n).map_err(|e| e.to_string())?;
        let fast = group_fairness_fast(&samples, &part).unwrap();
        let brute = group_fairness_bruteforce(&samples, &part).unwrap();
        let oracle = group_fairness_oracle(&samples, n);
        let err = (fast - brute).abs().max((fast - oracle).abs());
        ensure!(err <= 1e-9, "instance {inst} (m = {m}, n = {n}): fast {fast}, brute {brute}, oracle {oracle}");
        worst = worst.max(err);
    }
    let big = large_samples(&mut rng, 100_000);
    let start = Instant::now();
    let value = group_fairness(&big, 3).unwrap();
    let elapsed = start.elapsed();
    ensure!(value.is_finite(), "non-finite score at m = 100,000");
    ensure!(elapsed < Duration::from_secs(1), "fast path took {elapsed:?} at m = 100,000");
    Ok(format!(
        "200 instances, max |fast - brute| = {worst:.1e}; m = 100,000, n = 3 in {elapsed:.1?}"
    ))
}

fn presets() -> [Preset; 2] {
    [k3_default(), k5_default()]
}

fn weight_normalization() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for p in presets() {
        for method in SmoothingMethod::ALL {
            let spec = p.spec(method);
            for y in unit_grid(10_000) {
                let w = weights(&p.scheme, &spec, y).map_err(|e| e.to_string())?;
                ensure!(w.as_slice().iter().all(|&v| v >= 0.0), "{} {method:?} y = {y}: negative weight", p.name);
                let dev = (w.as_slice().iter().sum::<f64>() - 1.0).abs();
                ensure!(dev <= 1e-12, "{} {method:?} y = {y}: weights sum off by {dev}", p.name);
                worst = worst.max(dev);
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} weight vectors, max |sum - 1| = {worst:.1e}"))
}

fn sigmoid_endpoints() -> Outcome {
    let (hi, lo) = (logistic(5.0), logistic(-5.0));
    ensure!((hi - 0.993307).abs() < 5e-7 && (lo - 0.006693).abs() < 5e-7, "logistic reference off");
    let mut count = 0;
    for p in presets() {
        let spec = p.spec(SmoothingMethod::Quantile);
        for k in 1..p.scheme.num_segments() {
            let start = p.scheme.eta()[k] - p.lambda[k - 1];
            let end = p.gamma[k - 1];
            let at_start = sigmoid_blend(&p.scheme, &spec, k, start).map_err(|e| e.to_string())?;
            let at_end = sigmoid_blend(&p.scheme, &spec, k, end).map_err(|e| e.to_string())?;
            ensure!((at_start - hi).abs() <= 1e-9, "{} g_{k}({start}) = {at_start}", p.name);
            ensure!((at_end - lo).abs() <= 1e-9, "{} g_{k}({end}) = {at_end}", p.name);
            count += 1;
        }
    }
    Ok(format!("{count} blends: g(start) = {hi:.6}, g(end) = {lo:.6}"))
}

fn argmax_and_witness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let schemes: Vec<(&str, SegmentationScheme)> = vec![
        ("k3-default", k3_default().scheme),
        ("k5-default", k5_default().scheme),
        ("illustration", k5_illustration()),
    ];
    let spec = SmoothingSpec::distance(10.0);
    let mut points = 0;
    for (name, scheme) in &schemes {
        for k in 1..=scheme.num_segments() {
            let (lo, hi) = scheme.interval(k);
            let mut drawn = 0;
            while drawn < 1000 {
                let y = rng.gen_range(lo..hi);
                if y <= lo {
                    continue;
                }
                drawn += 1;
                let w = weights(scheme, &spec, y).unwrap();
                let wk = w.as_slice()[k - 1];
                ensure!(
                    w.as_slice().iter().enumerate().all(|(j, &v)| j + 1 == k || v < wk),
                    "{name}: y = {y} in segment {k} has weights {:?}",
                    w.as_slice()
                );
            }
            points += drawn;
        }
    }

    let scheme = k5_illustration();
    let mid = SmoothingSpec::midpoint(10.0);
    let grid: Vec<f64> = unit_grid(1001).collect();
    let mut witness = None;
    'search: for k in 1..=scheme.num_segments() {
        let (lo, hi) = scheme.interval(k);
        let inside: Vec<(f64, f64)> = grid
            .iter()
            .filter(|&&y| lo < y && y < hi)
            .map(|&y| (y, weights(&scheme, &mid, y).unwrap().as_slice()[k - 1]))
            .collect();
        for (a, &(y1, w1)) in inside.iter().enumerate() {
            if let Some(&(y2, w2)) = inside[a + 1..].iter().find(|&&(_, w2)| w2 < w1) {
                witness = Some((k, y1, y2, w1, w2));
                break 'search;
            }
        }
    }
    let (k, y1, y2, w1, w2) = witness.ok_or("no midpoint-score non-monotonicity witness on the grid")?;
    Ok(format!(
        "distance argmax held at {points} interior points; midpoint witness: segment {k}, w({y1}) = {w1:.4} > w({y2}) = {w2:.4}"
    ))
}

fn left_of(y: f64) -> f64 {
    f64::from_bits(y.to_bits() - 1)
}

fn boundary_jumps() -> Outcome {
    let cases: [(Preset, Vec<f64>); 2] = [
        (k3_default(), vec![100.0, 300.0, 150.0]),
        (k5_default(), vec![100.0, 250.0, 180.0, 400.0, 390.0]),
    ];
    let bound_q = logistic(-5.0);
    let mut worst_q: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for (p, c) in &cases {
        let eta = p.scheme.eta();
        let at = |m: &KSegmentModel, y: f64| m.assess_at(&[0.0], y).unwrap();

        let unsm = constant_model(&p.scheme, &SmoothingSpec::unsmoothed(), c);
        for k in 1..p.scheme.num_segments() {
            let jump = (at(&unsm, eta[k]) - at(&unsm, left_of(eta[k]))).abs();
            ensure!(jump == (c[k - 1] - c[k]).abs(), "{} unsmoothed jump at eta_{k} is {jump}", p.name);
        }

        let q = constant_model(&p.scheme, &p.spec(SmoothingMethod::Quantile), c);
        let grid: Vec<f64> = unit_grid(200_001).collect();
        for k in 1..p.scheme.num_segments() {
            let dc = (c[k - 1] - c[k]).abs();
            let start = eta[k] - p.lambda[k - 1];
            let probes = [start, eta[k], p.gamma[k - 1]];
            for y in probes.into_iter().filter(|&y| 0.0 < y && y < 1.0) {
                let jump = (at(&q, y) - at(&q, left_of(y))).abs();
                ensure!(jump <= 0.0067 * dc, "{} quantile jump {jump} at y = {y} exceeds 0.0067 * {dc}", p.name);
                worst_q = worst_q.max(jump / dc);
            }
            let window: Vec<f64> = grid.iter().cloned().filter(|&y| start <= y && y < p.gamma[k - 1]).collect();
            for pair in window.windows(2) {
                let step = (at(&q, pair[1]) - at(&q, pair[0])).abs();
                ensure!(step <= 0.0067 * dc, "{} quantile step {step} inside blend window", p.name);
            }
        }
        ensure!(worst_q <= bound_q + 1e-12, "quantile jump ratio {worst_q} above sigma(-5)");

        for spec in [SmoothingSpec::midpoint(10.0), SmoothingSpec::distance(10.0)] {
            let m = constant_model(&p.scheme, &spec, c);
            let h = 1e-4;
            let values: Vec<f64> = unit_grid(10_001).map(|y| at(&m, y)).collect();
            let lipschitz = values.windows(2).map(|w| (w[1] - w[0]).abs() / h).fold(0.0, f64::max);
            for k in 1..p.scheme.num_segments() {
                for eps in [1e-6, 1e-9] {
                    let jump = (at(&m, eta[k]) - at(&m, eta[k] - eps)).abs();
                    let allowed = 10.0 * lipschitz * eps;
                    ensure!(
                        jump <= allowed,
                        "{} {:?}: jump {jump} at eta_{k} over {eps} exceeds {allowed}",
                        p.name,
                        spec.method
                    );
                    worst_ratio = worst_ratio.max(jump / (lipschitz * eps));
                }
            }
        }
    }
    Ok(format!(
        "unsmoothed jumps exact; quantile max jump {worst_q:.6}·|dc| (sigma(-5) = {bound_q:.6}); score methods within {worst_ratio:.2}x of the grid Lipschitz estimate"
    ))
}

fn directional_tables(b: &Benchmark) -> Outcome {
    let base = report(b, "baseline");
    let ds = report(b, "k5-d-s");
    let ru = |r: &EvaluationReport, m, p| r.fairness.find(m, p).and_then(|f| f.ru).ok_or("missing RU");
    let ru_grp = ru(ds, FairnessMeasure::Group, 2.0)?;
    let ru_dev = ru(ds, FairnessMeasure::Deviation, 2.0)?;
    let r2 = ds.r_squared.assessment.ok_or("missing assessment R²")?;
    let r2_base = base.r_squared.assessment.ok_or("missing baseline assessment R²")?;
    ensure!(ru_grp < 1.0, "RU_grp(n=2) = {ru_grp}");
    ensure!(ru_dev < 1.0, "RU_dev(alpha=2) = {ru_dev}");
    ensure!(r2 >= r2_base - 0.01, "assessment R² {r2} vs baseline {r2_base}");
    for r in &b.output.reports {
        let f = |a: f64| r.fairness.find(FairnessMeasure::Deviation, a).map(|m| m.raw.abs());
        let (f0, f1, f2, f5) = (f(0.0), f(1.0), f(2.0), f(5.0));
        ensure!(
            matches!((f0, f1, f2, f5), (Some(a), Some(b), Some(c), Some(d)) if d <= c && c <= b && b <= a),
            "{}: |F_dev| not monotone in alpha: {f0:?} {f1:?} {f2:?} {f5:?}",
            r.metadata.model
        );
    }
    Ok(format!(
        "k5-d-s: RU_grp(n=2) = {ru_grp:.3}, RU_dev(alpha=2) = {ru_dev:.3}, assessment R² {r2:.4} vs baseline {r2_base:.4}; alpha-monotone for all {} models",
        b.output.reports.len()
    ))
}

fn deviation_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.gen_range(1..500);
        let samples = random_samples(&mut rng, m, 0);
        let expected = -samples.iter().map(|s| (s.ratio - 1.0).abs()).sum::<f64>();
        let got = deviation_weighted_fairness(&samples, 0.0).unwrap();
        ensure!((got - expected).abs() <= 1e-12, "F_dev(0) = {got}, expected {expected}");
        worst = worst.max((got - expected).abs());
    }
    for m in [3, 10, 257] {
        let perfect: Vec<RatioSample> = common::samples_from(
            &(0..m).map(|i| 1e5 + i as f64 * 1e3).collect::<Vec<_>>(),
            &vec![1.0; m],
        );
        for n in [2, 3] {
            let g = group_fairness(&perfect, n).unwrap();
            ensure!(g == 0.0, "perfect ratios give F_grp = {g}");
        }
        for alpha in [0.0, 1.0, 2.0, 5.0] {
            let d = deviation_weighted_fairness(&perfect, alpha).unwrap();
            ensure!(d == 0.0, "perfect ratios give F_dev = {d}");
        }
    }
    Ok(format!("100 random samples, max error {worst:.1e}; perfect ratios score exactly 0"))
}

fn pareto_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut hull_total = 0;
    for set in 0..1000 {
        let n = rng.gen_range(1..60);
        let points: Vec<ParetoPoint> = random_points(&mut rng, n, set % 2 == 1);
        let front = pareto_frontier(&points).map_err(|e| e.to_string())?;
        let expected = non_dominated_oracle(&points);
        ensure!(front.non_dominated == expected, "set {set}: {:?} vs {:?}", front.non_dominated, expected);
        ensure!(
            front.hull.iter().all(|h| front.non_dominated.contains(h)),
            "set {set}: hull {:?} not within the frontier",
            front.hull
        );
        let hull: Vec<&ParetoPoint> = front.hull.iter().map(|&i| &points[i]).collect();
        for w in hull.windows(3) {
            let s1 = (w[1].fairness - w[0].fairness) / (w[1].accuracy - w[0].accuracy);
            let s2 = (w[2].fairness - w[1].fairness) / (w[2].accuracy - w[1].accuracy);
            ensure!(s2 < s1, "set {set}: hull is not strictly concave");
        }
        for &i in &front.non_dominated {
            let p = &points[i];
            let seg = hull.windows(2).find(|w| w[0].accuracy <= p.accuracy && p.accuracy <= w[1].accuracy);
            if let Some(w) = seg {
                ensure!(
                    p.fairness <= common::chord_at(w[0], w[1], p.accuracy) + 1e-12,
                    "set {set}: frontier point {i} lies above the hull"
                );
            }
        }
        hull_total += front.hull.len();
    }
    Ok(format!("1,000 point sets agree with pairwise dominance; {hull_total} hull vertices all non-dominated"))
}

fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn determinism(b: &Benchmark) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let second = dir.path().join("second");
    run_experiment_with(&benchmark_config(&second)).map_err(|e| e.to_string())?;
    let (a, c) = (read_tree(&b.out_dir), read_tree(&second));
    ensure!(a.keys().eq(c.keys()), "output file sets differ");
    for (name, bytes) in &a {
        ensure!(c[name] == *bytes, "{} differs between runs", name.display());
    }

    let records = generate_synthetic(b.config.synthetic.as_ref().unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let picks: Vec<_> = (0..100).map(|_| records[rng.gen_range(0..records.len())].clone()).collect();
    for m in &b.output.models {
        let path = dir.path().join(format!("{}.json", m.resolved.name));
        m.final_model.save(&path).map_err(|e| e.to_string())?;
        let loaded = KSegmentModel::load(&path).map_err(|e| e.to_string())?;
        for r in &picks {
            let (x, y) = (m.final_model.assess(r).unwrap(), loaded.assess(r).unwrap());
            ensure!(x.to_bits() == y.to_bits(), "{}: {x} != {y} after reload", m.resolved.name);
        }
    }
    Ok(format!(
        "{} output files byte-identical across runs; {} models reload with identical assessments on 100 records",
        a.len(),
        b.output.models.len()
    ))
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match outcome {
        Ok(detail) => {
            println!("PASS  {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL  {name}: {detail}");
            false
        }
    }
}

fn main() -> ExitCode {
    let bench = catch_unwind(run_benchmark).ok();
    let with_bench = |f: fn(&Benchmark) -> Outcome| {
        let b = bench.as_ref();
        move || b.map_or(Err("benchmark run failed".to_string()), f)
    };
    let results = [
        run("desk-scale synthetic benchmark", with_bench(desk_scale_benchmark)),
        run("group fairness oracle equivalence", oracle_equivalence),
        run("weight normalization", weight_normalization),
        run("sigmoid endpoints", sigmoid_endpoints),
        run("distance-score argmax and midpoint witness", argmax_and_witness),
        run("constant-submodel boundary jumps", boundary_jumps),
        run("directional accuracy and fairness", with_bench(directional_tables)),
        run("deviation fairness identity", deviation_identity),
        run("pareto frontier agreement", pareto_agreement),
        run("determinism", with_bench(determinism)),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
