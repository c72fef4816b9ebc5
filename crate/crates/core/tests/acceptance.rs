//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{s, Array2, ArrayView2};
use reconcile::align::{
    alignment_cost, match_pair, nearest_neighbor_assignment, solve_bruteforce, solve_exact_dp, MatchPenalties, PenaltySpec,
    DEFAULT_CHUNK_LEN,
};
use reconcile::dynamics::{train_predictor, PredictorConfig, RecurrentPredictor};
use reconcile::embed::{train, Embedder, EmbeddingModel, RandomEmbedding, TrainConfig, Whitener};
use reconcile::eval::{
    alignment_accuracy, assignment_as_matching, knn_prediction_curve, loop_closure_ratio, midpoint_check, pca_project_2d,
    retrieval_auc, single_cycle_segments, RetrievalParams,
};
use reconcile::synthdata::{generate_dataset, resample_pair, GeneratorConfig};
use reconcile::RngState;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_rows(n: usize, d: usize, rng: &mut RngState) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.normal())
}

fn sq(a: ArrayView2<'_, f64>, i: usize, b: ArrayView2<'_, f64>, k: usize) -> f64 {
    a.row(i).iter().zip(b.row(k).iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Scores `pi` straight from the definition of the objective.
fn reference_cost(q: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>, pi: &[usize], p: &MatchPenalties) -> f64 {
    let mut total = 0.0;
    for (j, &k) in pi.iter().enumerate() {
        total += if k == 0 { p.outlier_cost } else { sq(q, j, t, k - 1) };
    }
    for w in pi.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a == 0 || b == 0 {
            continue;
        }
        if b < a {
            total += p.lambda1;
        } else if b == a {
            total += p.lambda2;
        } else if b - a >= 2 {
            total += p.lambda3 * (b - a) as f64;
        }
    }
    total
}

fn max_unary(q: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>) -> f64 {
    let mut m: f64 = 0.0;
    for j in 0..q.nrows() {
        for k in 0..t.nrows() {
            m = m.max(sq(q, j, t, k));
        }
    }
    m
}

fn dominance_bound(q: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>, p: &MatchPenalties) -> f64 {
    let (n, m) = (q.nrows() as f64, t.nrows() as f64);
    n * max_unary(q, t) + p.lambda2 * n + p.lambda3 * n * m + p.outlier_cost * n
}

fn solver_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = RngState::new(101);
    let instances = 240;
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for i in 0..instances {
        let n = 1 + rng.index(6);
        let m = 1 + rng.index(4);
        let d = 1 + rng.index(4);
        let q = random_rows(n, d, &mut rng);
        let t = random_rows(m, d, &mut rng);
        let mut p = MatchPenalties::new(
            rng.uniform_range(0.0, 3.0),
            rng.uniform_range(0.0, 3.0),
            rng.uniform_range(0.0, 1.0),
            rng.uniform_range(0.0, 6.0),
        )
        .unwrap();
        match i % 4 {
            0 => p = MatchPenalties::new(0.0, 0.0, 0.0, 0.0).unwrap(),
            1 => p.lambda1 = dominance_bound(q.view(), t.view(), &p) + 1.0,
            _ => {}
        }
        let dp = solve_exact_dp(q.view(), t.view(), &p).unwrap();
        let bf = solve_bruteforce(q.view(), t.view(), &p).unwrap();
        let scored = alignment_cost(q.view(), t.view(), &dp.pi, &p).unwrap().total();
        let reference = reference_cost(q.view(), t.view(), &dp.pi, &p);
        let gap = (dp.total_cost - bf.total_cost)
            .abs()
            .max((scored - dp.total_cost).abs())
            .max((reference - dp.total_cost).abs());
        worst = worst.max(gap);
        if !(gap <= 1e-9) {
            bad.push(i);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        bad.is_empty() && elapsed < Duration::from_secs(10),
        format!("{instances} instances, max cost gap {worst:.2e}, failures {bad:?}, {elapsed:.2?} (limit 10 s)"),
    )
}

fn constraint_semantics() -> Outcome {
    let mut rng = RngState::new(102);
    let q = random_rows(4, 3, &mut rng);
    let t = random_rows(6, 3, &mut rng);
    let p = MatchPenalties::new(3.25, 0.75, 0.5, 1.5).unwrap();
    // (pi, order, duplicate, gap, outlier)
    let cases: [(&[usize], f64, f64, f64, f64); 6] = [
        (&[1, 2, 3, 4], 0.0, 0.0, 0.0, 0.0),
        (&[2, 2, 3, 4], 0.0, 0.75, 0.0, 0.0),
        (&[1, 4, 5, 6], 0.0, 0.0, 0.5 * 3.0, 0.0),
        (&[1, 3, 4, 5], 0.0, 0.0, 0.5 * 2.0, 0.0),
        (&[3, 1, 2, 3], 3.25, 0.0, 0.0, 0.0),
        (&[1, 0, 6, 0], 0.0, 0.0, 0.0, 3.0),
    ];
    let mut failed = Vec::new();
    for (pi, order, duplicate, gap, outlier) in cases {
        let c = alignment_cost(q.view(), t.view(), pi, &p).unwrap();
        let data: f64 = pi.iter().enumerate().filter(|(_, &k)| k > 0).map(|(j, &k)| sq(q.view(), j, t.view(), k - 1)).sum();
        let ok = c.order == order
            && c.duplicate == duplicate
            && c.gap == gap
            && c.outlier == outlier
            && c.data == data
            && c.total() == c.data + c.outlier + c.order + c.duplicate + c.gap;
        if !ok {
            failed.push(format!("{pi:?} -> {c:?}"));
        }
    }
    outcome(failed.is_empty(), format!("{} constructed cases, mismatches {failed:?}", cases.len()))
}

fn monotone_regime() -> Outcome {
    let mut rng = RngState::new(103);
    let instances = 100;
    let mut violations = 0;
    let mut compared = 0;
    for _ in 0..instances {
        let n = 2 + rng.index(5);
        let m = 1 + rng.index(5);
        let d = 1 + rng.index(4);
        let q = random_rows(n, d, &mut rng);
        let t = random_rows(m, d, &mut rng);
        let mut p = MatchPenalties::new(0.0, rng.uniform_range(0.0, 2.0), rng.uniform_range(0.0, 1.0), rng.uniform_range(0.0, 4.0)).unwrap();
        p.lambda1 = dominance_bound(q.view(), t.view(), &p) * (1.0 + rng.uniform()) + 1e-6;
        for matching in [solve_exact_dp(q.view(), t.view(), &p).unwrap(), solve_bruteforce(q.view(), t.view(), &p).unwrap()] {
            // pairs touching an outlier are free, so only matched neighbours are constrained
            compared += 1;
            if matching.pi.windows(2).any(|w| w[0] > 0 && w[1] > 0 && w[1] < w[0]) {
                violations += 1;
            }
        }
    }
    outcome(violations == 0, format!("{instances} instances, {compared} solver outputs, {violations} with a decreasing match"))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 { 0.0 } else { diff / scale }
}

fn finite_difference(params: &[f64], h: f64, mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let base = p[i];
            p[i] = base + h;
            let up = loss(&p);
            p[i] = base - h;
            let down = loss(&p);
            p[i] = base;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = RngState::new(104);
    let h = 1e-5;

    let (mut embed_worst, mut embed_active, mut embed_degenerate, embed_configs): (f64, usize, usize, usize) = (0.0, 0, 0, 60);
    let mut done = 0;
    while done < embed_configs {
        let (f, hid, o) = (2 + rng.index(5), 6 + rng.index(6), 2 + rng.index(4));
        let batch = 1 + rng.index(4);
        let model = EmbeddingModel::random(f, hid, o, &mut rng);
        let a = random_rows(batch, f, &mut rng);
        let pos = random_rows(batch, f, &mut rng);
        let neg = random_rows(batch, f, &mut rng);
        let margin = rng.uniform_range(0.5, 2.0);
        // a draw whose output vanishes before normalization has no gradient
        let Ok((loss, grad)) = model.triplet_grad(a.view(), pos.view(), neg.view(), margin) else {
            embed_degenerate += 1;
            continue;
        };
        done += 1;
        if loss > 0.0 {
            embed_active += 1;
        }
        let fd = finite_difference(model.params(), h, |p| {
            let m = EmbeddingModel::from_params(f, hid, o, p.to_vec()).unwrap();
            m.triplet_batch_loss(a.view(), pos.view(), neg.view(), margin).unwrap()
        });
        embed_worst = embed_worst.max(rel_err(&grad, &fd));
    }

    let (mut rnn_worst, rnn_configs): (f64, usize) = (0.0, 30);
    for _ in 0..rnn_configs {
        let d = 2 + rng.index(3);
        let m = d + 1 + rng.index(5);
        let l = 1 + rng.index(4);
        let batch = 1 + rng.index(3);
        let pred = RecurrentPredictor::random(d, m, l, &mut rng).unwrap();
        let steps: Vec<Array2<f64>> = (0..l).map(|_| random_rows(batch, d, &mut rng)).collect();
        let views: Vec<_> = steps.iter().map(|s| s.view()).collect();
        let target = random_rows(batch, d, &mut rng);
        let (_, grad) = pred.loss_and_grad(&views, target.view()).unwrap();
        let fd = finite_difference(pred.params(), h, |p| {
            let r = RecurrentPredictor::from_params(d, m, l, p.to_vec()).unwrap();
            r.batch_loss(&views, target.view()).unwrap()
        });
        rnn_worst = rnn_worst.max(rel_err(&grad, &fd));
    }
    let elapsed = start.elapsed();
    outcome(
        embed_worst < 1e-4 && rnn_worst < 1e-4 && embed_active >= 50 && elapsed < Duration::from_secs(60),
        format!(
            "triplet: {embed_configs} configs ({embed_active} with active hinge, {embed_degenerate} degenerate draws redrawn), max rel err {embed_worst:.2e}; \
             recurrent: {rnn_configs} configs, max rel err {rnn_worst:.2e}; {elapsed:.2?} (limit 60 s)"
        ),
    )
}

struct Reference {
    outcomes: Vec<(usize, &'static str, Outcome)>,
}

fn reference_pipeline() -> Reference {
    let start = Instant::now();
    let seed = 7;
    let g = GeneratorConfig {
        seed,
        ..Default::default()
    };
    let data = generate_dataset(&g).unwrap();
    let penalties = PenaltySpec::default();
    let root = RngState::new(seed);
    let (model, _) = train(&data, &TrainConfig::default(), &penalties, DEFAULT_CHUNK_LEN, &mut root.fork(1)).unwrap();
    let (pred, _) = train_predictor(&data, &model, &PredictorConfig::default(), &mut root.fork(2)).unwrap();

    let params = RetrievalParams::default();
    let trained = retrieval_auc(&data, &model, &params).unwrap().auc;
    let whitened = retrieval_auc(&data, &Whitener::fit(&data).unwrap(), &params).unwrap().auc;
    let random_model = RandomEmbedding {
        input: g.feature_dim,
        output: model.output_dim(),
        seed: 3,
    };
    let random = retrieval_auc(&data, &random_model, &params).unwrap().auc;

    let pairs = 20;
    let (mut dp, mut nn) = (0.0, 0.0);
    for i in 0..pairs {
        let (a, b, truth) = resample_pair(&g, 1000 + i as u64).unwrap();
        let matched = match_pair(&a, &b, &model, &penalties, DEFAULT_CHUNK_LEN).unwrap();
        dp += alignment_accuracy(&matched, &truth).unwrap();
        let (ea, eb) = (model.embed_frames(a.frames()).unwrap(), model.embed_frames(b.frames()).unwrap());
        let nearest = assignment_as_matching(&nearest_neighbor_assignment(ea.view(), eb.view()));
        nn += alignment_accuracy(&[nearest], &truth).unwrap();
    }
    let (dp, nn) = (dp / pairs as f64, nn / pairs as f64);

    let curve = knn_prediction_curve(&data, &model, &pred, 10, 2).unwrap();
    let midpoint = midpoint_check(&data, &model).unwrap();

    let proj = pca_project_2d(&data, &model).unwrap();
    let mut ratios = Vec::new();
    let mut offset = 0;
    for sq in data.sequences() {
        for (a, b) in single_cycle_segments(sq).unwrap() {
            ratios.push(loop_closure_ratio(proj.coords.slice(s![offset + a..offset + b, ..])).unwrap());
        }
        offset += sq.len();
    }
    let worst_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let elapsed = start.elapsed();

    let monotone = curve.knn_mean.windows(2).all(|w| w[0] <= w[1]);
    Reference {
        outcomes: vec![
            (
                5,
                "representation quality",
                outcome(
                    trained - whitened >= 0.05 && (random - 0.5).abs() <= 0.05 && elapsed < Duration::from_secs(15 * 60),
                    format!("auc trained {trained:.4}, whitened {whitened:.4}, random {random:.4}; pipeline {elapsed:.2?} (limit 15 min)"),
                ),
            ),
            (
                6,
                "alignment quality",
                outcome(dp - nn >= 0.10, format!("accuracy over {pairs} pairs: matching {dp:.4}, nearest neighbour {nn:.4}")),
            ),
            (
                7,
                "prediction quality",
                outcome(
                    curve.prediction_mean < curve.knn_mean[1] && monotone,
                    format!(
                        "prediction error {:.4} vs 2nd neighbour {:.4}, kNN curve monotone {monotone}",
                        curve.prediction_mean, curve.knn_mean[1]
                    ),
                ),
            ),
            (
                8,
                "midpoint interpolation",
                outcome(midpoint.win_rate >= 0.70, format!("win rate {:.4} over {} triples", midpoint.win_rate, midpoint.triples)),
            ),
            (
                9,
                "manifold loop closure",
                outcome(
                    !ratios.is_empty() && worst_ratio < 0.25,
                    format!("{} single-cycle segments, worst closure ratio {worst_ratio:.4} (limit 0.25)", ratios.len()),
                ),
            ),
        ],
    }
}

fn chunk_solve_time() -> Outcome {
    let mut rng = RngState::new(110);
    let unit = |n: usize, rng: &mut RngState| {
        let mut x = random_rows(n, 128, rng);
        for mut r in x.rows_mut() {
            let norm = r.dot(&r).sqrt();
            r /= norm;
        }
        x
    };
    let q = unit(500, &mut rng);
    let t = unit(40, &mut rng);
    let p = PenaltySpec::default().resolve(q.view(), t.view()).unwrap();
    let mut times = Vec::new();
    for _ in 0..5 {
        let t0 = Instant::now();
        let m = solve_exact_dp(q.view(), t.view(), &p).unwrap();
        times.push(t0.elapsed());
        assert_eq!(m.pi.len(), 500);
    }
    let worst = *times.iter().max().unwrap();
    outcome(worst < Duration::from_millis(100), format!("n=500 vs n'=40, d=128: slowest of 5 solves {worst:.2?} (limit 100 ms)"))
}

fn run_cli(args: &[String]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_reconcile")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline_once(dir: &Path, threads: &str) -> Result<(), String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let config = p("run.toml");
    fs::write(&config, "seed = 11\n\n[predictor]\nstate_dim = 160\nepochs = 3\n").map_err(|e| e.to_string())?;
    let (data, model, pred, reports) = (p("data"), p("embed.mdl"), p("pred.mdl"), p("reports"));
    let common = ["--threads", threads, "--config", config.as_str()];
    let with = |v: Vec<&str>| -> Vec<String> { v.iter().chain(common.iter()).map(|a| a.to_string()).collect() };
    run_cli(&with(vec!["gen", "--out", &data]))?;
    run_cli(&with(vec!["train-embed", "--data", &data, "--out", &model]))?;
    run_cli(&with(vec!["train-dyn", "--data", &data, "--model", &model, "--out", &pred]))?;
    for metric in ["retrieval", "zeroshot", "alignment"] {
        run_cli(&with(vec!["eval", metric, "--data", &data, "--model", &model, "--out", &reports]))?;
    }
    run_cli(&with(vec!["eval", "predict", "--data", &data, "--model", &model, "--pred", &pred, "--out", &reports]))?;
    Ok(())
}

fn files_under(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    if let Err(e) = pipeline_once(a.path(), "1").and_then(|_| pipeline_once(b.path(), "3")) {
        return outcome(false, e);
    }
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    let differing: Vec<&str> = fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let same_set = fa.len() == fb.len() && fa.iter().zip(&fb).all(|(x, y)| x.0 == y.0);
    let has_all = ["embed.mdl", "pred.mdl", "reports/retrieval.json", "reports/predict.json"]
        .iter()
        .all(|n| names.contains(n));
    outcome(
        same_set && differing.is_empty() && has_all,
        format!(
            "two runs (1 and 3 worker threads), {} files compared, differing {differing:?}, {:.2?}",
            fa.len(),
            start.elapsed()
        ),
    )
}

fn main() {
    // `cargo test -- <filter>` passes arguments this harness does not use
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "solver exactness", solver_exactness()),
        (2, "temporal-constraint semantics", constraint_semantics()),
        (3, "monotone regime", monotone_regime()),
        (4, "gradient fidelity", gradient_fidelity()),
    ];
    results.extend(reference_pipeline().outcomes);
    results.push((10, "chunk solve time", chunk_solve_time()));
    results.push((11, "determinism", determinism()));

    let mut failures = 0;
    for (id, name, o) in &results {
        if !o.pass {
            failures += 1;
        }
        println!("{} [{id:>2}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of {} criteria passed", results.len() - failures, results.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
