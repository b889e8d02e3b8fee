//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails. Set `CW_ACCEPTANCE=1,7,8` to run
//! a subset.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use cway_core::autograd::{grad_check, Activation, AutogradError, Graph, ReduceKind, Tensor, Var};
use cway_core::baselines::{dbscan_pipeline, kmeans_image, DbscanConfig};
use cway_core::eval::{
    adjusted_accuracy, average_precision, clustering_error, evaluate_dataset, EvalReport, Scored,
};
use cway_core::fieldgen::{generate_field, GenConfig};
use cway_core::inference::{predict, DecodeConfig};
use cway_core::model::{
    build_model, build_target, clustering_loss, decode_cell, estimation_loss, train, Model, ModelConfig, Phase,
    TrainConfig, TrainExample, ModelError,
};
use cway_core::types::{Cluster, OccupancyGrid, Point, WaypointSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Field = (OccupancyGrid, WaypointSet);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn fields(cfg: &GenConfig, seeds: std::ops::Range<u64>) -> Vec<Field> {
    seeds
        .map(|s| {
            let (g, w, _) = generate_field(cfg, s).expect("generator");
            (g, w)
        })
        .collect()
}

fn examples(data: &[Field]) -> Vec<TrainExample> {
    data.iter().map(|(g, w)| TrainExample::new(g, w, 8).expect("targets")).collect()
}

fn evaluate_model(model: &Model, data: &[Field], radii: &[f64]) -> EvalReport {
    let cfg = DecodeConfig::default();
    let items: Vec<(String, WaypointSet, WaypointSet)> = data
        .iter()
        .enumerate()
        .map(|(i, (g, w))| (i.to_string(), predict(model, g, &cfg).expect("predict").waypoints, w.clone()))
        .collect();
    evaluate_dataset(&items, radii, cfg.t_sup).expect("evaluation")
}

// ---------------------------------------------------------------- criterion 1

fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var, AutogradError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = Tensor::from_fn(g.value(y).shape(), |_| rng.random_range(-1.0..1.0));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum_all(p)
}

fn graph_error(e: ModelError) -> AutogradError {
    match e {
        ModelError::Autograd(a) => a,
        other => panic!("{other}"),
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn gradient_checks() -> Outcome {
    const SEEDS: u64 = 20;
    let mut worst = (0.0f64, String::new());
    let mut checks = 0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random(&[6, 6, 2], &mut rng);
        let kernel = random(&[3, 3, 2, 3], &mut rng);
        let tkernel = random(&[3, 3, 3, 2], &mut rng);
        let bias3 = random(&[3], &mut rng);
        let small = random(&[3, 4, 3], &mut rng);
        let other = random(&[3, 4, 3], &mut rng);
        let bcast = random(&[1, 4, 1], &mut rng);
        let dense_w = random(&[3, 5], &mut rng);
        let dense_b = random(&[5], &mut rng);
        let stride = 1 + seed as usize % 2;
        let cells = [(0, 0), (2, 3), (1, 1), (0, 3)];
        let labels = [Cluster::A, Cluster::B, Cluster::A, Cluster::B];
        let est_pred = Tensor::from_fn(&[2, 2, 3], |_| rng.random_range(-1.0..1.0));
        let target = build_target(
            &WaypointSet::new(vec![cway_core::types::Waypoint::new(Point::new(3.0, 12.0), Cluster::A)]),
            16,
            16,
            8,
        )
        .unwrap();

        type Build<'a> = Box<dyn Fn(&mut Graph<f64>, Var) -> Result<Var, AutogradError> + 'a>;
        let c = |t: &Tensor<f64>, g: &mut Graph<f64>| g.constant(t.clone());
        let mut cases: Vec<(String, Build, &Tensor<f64>)> = vec![
            (
                "conv2d input".into(),
                Box::new(|g, x| {
                    let (k, b) = (c(&kernel, g), c(&bias3, g));
                    let y = g.conv2d(x, k, b, stride)?;
                    weighted_sum(g, y, seed)
                }),
                &img,
            ),
            (
                "conv2d kernel".into(),
                Box::new(|g, k| {
                    let (x, b) = (c(&img, g), c(&bias3, g));
                    let y = g.conv2d(x, k, b, stride)?;
                    weighted_sum(g, y, seed)
                }),
                &kernel,
            ),
            (
                "conv2d bias".into(),
                Box::new(|g, b| {
                    let (x, k) = (c(&img, g), c(&kernel, g));
                    let y = g.conv2d(x, k, b, stride)?;
                    weighted_sum(g, y, seed)
                }),
                &bias3,
            ),
            (
                "conv2d_transpose input".into(),
                Box::new(|g, x| {
                    let (k, b) = (c(&tkernel, g), c(&bias3, g));
                    let y = g.conv2d_transpose(x, k, b, 2)?;
                    weighted_sum(g, y, seed)
                }),
                &img,
            ),
            (
                "conv2d_transpose kernel".into(),
                Box::new(|g, k| {
                    let (x, b) = (c(&img, g), c(&bias3, g));
                    let y = g.conv2d_transpose(x, k, b, 2)?;
                    weighted_sum(g, y, seed)
                }),
                &tkernel,
            ),
            (
                "dense input".into(),
                Box::new(|g, x| {
                    let (w, b) = (c(&dense_w, g), c(&dense_b, g));
                    let y = g.dense(x, w, b)?;
                    weighted_sum(g, y, seed)
                }),
                &small,
            ),
            (
                "dense weight".into(),
                Box::new(|g, w| {
                    let (x, b) = (c(&small, g), c(&dense_b, g));
                    let y = g.dense(x, w, b)?;
                    weighted_sum(g, y, seed)
                }),
                &dense_w,
            ),
            (
                "concat/scale".into(),
                Box::new(|g, x| {
                    let o = c(&other, g);
                    let y = g.concat(&[o, x])?;
                    let y = g.scale(y, -1.3);
                    weighted_sum(g, y, seed)
                }),
                &small,
            ),
            (
                "gather/normalize/matmul_nt".into(),
                Box::new(|g, x| {
                    let f = g.gather_cells(x, &cells)?;
                    let n = g.normalize_rows(f)?;
                    let s = g.matmul_nt(n, f)?;
                    weighted_sum(g, s, seed)
                }),
                &small,
            ),
            (
                "estimation loss".into(),
                Box::new(|g, p| estimation_loss(g, p, &target, 0.7).map_err(graph_error)),
                &est_pred,
            ),
            (
                "clustering loss".into(),
                Box::new(|g, l| clustering_loss(g, l, &cells, &labels).map_err(graph_error)),
                &small,
            ),
        ];
        for act in [
            Activation::Sigmoid,
            Activation::Tanh,
            Activation::Relu,
            Activation::Mish,
            Activation::Softplus,
            Activation::Linear,
        ] {
            cases.push((
                format!("{act:?}"),
                Box::new(move |g, x| {
                    let y = g.activation(x, act);
                    weighted_sum(g, y, seed)
                }),
                &small,
            ));
        }
        for (kind, axes) in [
            (ReduceKind::Mean, vec![0, 1]),
            (ReduceKind::Max, vec![0, 1]),
            (ReduceKind::Max, vec![2]),
            (ReduceKind::Sum, vec![1]),
        ] {
            cases.push((
                format!("{kind:?} over {axes:?}"),
                Box::new(move |g, x| {
                    let y = g.reduce(x, kind, &axes)?;
                    weighted_sum(g, y, seed)
                }),
                &small,
            ));
        }
        let lhs = &small;
        for (op, rhs) in [(0, &other), (1, &other), (2, &other), (0, &bcast), (1, &bcast), (2, &bcast)] {
            let apply = move |g: &mut Graph<f64>, a: Var, b: Var| match op {
                0 => g.add(a, b),
                1 => g.sub(a, b),
                _ => g.mul(a, b),
            };
            cases.push((
                format!("binary {op} lhs {:?}", rhs.shape()),
                Box::new(move |g, x| {
                    let o = c(rhs, g);
                    let y = apply(g, x, o)?;
                    weighted_sum(g, y, seed)
                }),
                &small,
            ));
            cases.push((
                format!("binary {op} rhs {:?}", rhs.shape()),
                Box::new(move |g, o| {
                    let x = c(lhs, g);
                    let y = apply(g, x, o)?;
                    weighted_sum(g, y, seed)
                }),
                rhs,
            ));
        }
        for (name, build, input) in &cases {
            let r = match grad_check(build, input, 1e-6) {
                Ok(r) => r,
                Err(e) => return outcome(false, format!("{name} seed {seed}: {e}")),
            };
            checks += 1;
            if r.max_rel_error > worst.0 {
                worst = (r.max_rel_error, format!("{name} seed {seed}"));
            }
        }
    }
    outcome(worst.0 < 1e-4, format!("{checks} checks, worst relative error {:.2e} ({})", worst.0, worst.1))
}

// ---------------------------------------------------------------- criterion 2

fn budget_and_shapes() -> Outcome {
    let m = build_model(ModelConfig::default(), 0).expect("model");
    let n = m.param_count();
    let d = m.config.d;
    let (est, lat) = m.forward(&OccupancyGrid::new(800, 800)).expect("forward");
    let (e2, l2) = m.forward(&OccupancyGrid::new(416, 256)).expect("forward");
    let ok = n < 73_000
        && est.shape() == [100, 100, 3]
        && lat.shape() == [100, 100, d]
        && e2.shape() == [52, 32, 3]
        && l2.shape() == [52, 32, d];
    outcome(
        ok,
        format!("{n} parameters; 800x800 -> {:?} and {:?}; 416x256 -> {:?}", est.shape(), lat.shape(), e2.shape()),
    )
}

// ---------------------------------------------------------------- criterion 3

fn overfit() -> Outcome {
    let data = fields(&GenConfig::sized(256, 256), 0..8);
    let mut m = build_model(ModelConfig::default(), 0).expect("model");
    // one batch per epoch: 1000 estimation steps then 1000 clustering steps
    let cfg = TrainConfig {
        epochs: 1000,
        batch: 8,
        ..Default::default()
    };
    let report = train(&mut m, &examples(&data), &cfg, |_| {}).expect("training");
    let r = evaluate_model(&m, &data, &[4.0]);
    let last = report.history.iter().rev().find(|e| e.phase == Phase::Estimation).map_or(f64::NAN, |e| e.loss);
    outcome(
        r.ap[0] == 1.0 && r.adjusted_accuracy == 1.0 && r.clustering_error == 0.0 && r.unclustered_images == 0,
        format!(
            "AP_4 {:.4}, adjusted accuracy {:.4}, clustering error {:.3}, final estimation loss {last:.5}",
            r.ap[0], r.adjusted_accuracy, r.clustering_error
        ),
    )
}

// ---------------------------------------------------------- criteria 4, 5, 6

const TEST_SEEDS: std::ops::Range<u64> = 1_000_000..1_000_100;

struct Trained {
    model: Model,
    report: EvalReport,
    minutes: f64,
}

fn scaled_run(cfg: &GenConfig) -> Trained {
    let start = Instant::now();
    let train_set = fields(cfg, 0..400);
    let test_set = fields(cfg, TEST_SEEDS);
    let mut model = build_model(ModelConfig::default(), 0).expect("model");
    let tc = TrainConfig {
        epochs: 60,
        ..Default::default()
    };
    train(&mut model, &examples(&train_set), &tc, |e| {
        eprintln!("  {:?} epoch {} loss {:.5} ({:.0}s)", e.phase, e.epoch, e.loss, start.elapsed().as_secs_f64())
    })
    .expect("training");
    let report = evaluate_model(&model, &test_set, &[8.0]);
    Trained {
        model,
        report,
        minutes: start.elapsed().as_secs_f64() / 60.0,
    }
}

fn curved_config() -> GenConfig {
    GenConfig {
        curved: true,
        ..GenConfig::sized(416, 416)
    }
}

fn curved_model() -> &'static Trained {
    static CURVED: OnceLock<Trained> = OnceLock::new();
    CURVED.get_or_init(|| scaled_run(&curved_config()))
}

fn straight_reproduction() -> Outcome {
    let t = scaled_run(&GenConfig::sized(416, 416));
    let r = &t.report;
    outcome(
        r.ap[0] >= 0.95 && r.adjusted_accuracy >= 0.98 && r.clustering_error <= 0.2 && t.minutes <= 240.0,
        format!(
            "AP_8 {:.4} (>= 0.95), adjusted accuracy {:.4} (>= 0.98), clustering error {:.3} (<= 0.2), {:.0} min",
            r.ap[0], r.adjusted_accuracy, r.clustering_error, t.minutes
        ),
    )
}

fn curved_reproduction() -> Outcome {
    let t = curved_model();
    let r = &t.report;
    outcome(
        r.ap[0] >= 0.90 && r.adjusted_accuracy >= 0.95,
        format!(
            "AP_8 {:.4} (>= 0.90), adjusted accuracy {:.4} (>= 0.95), clustering error {:.3}, {:.0} min",
            r.ap[0], r.adjusted_accuracy, r.clustering_error, t.minutes
        ),
    )
}

fn mean_error(items: &[(String, WaypointSet, WaypointSet)]) -> f64 {
    evaluate_dataset(items, &[8.0], 8.0).expect("evaluation").clustering_error
}

fn baseline_contrast() -> Outcome {
    // image-space K-means on straight ground truth
    let straight = fields(&GenConfig::sized(416, 416), TEST_SEEDS);
    let (mut acc, mut err) = (0.0f64, 0usize);
    for (_, w) in &straight {
        let l = kmeans_image(&w.points(), 100);
        acc += adjusted_accuracy(&l, &w.labels()).expect("labels");
        err += clustering_error(&l, &w.labels()).expect("labels");
    }
    let acc = acc / straight.len() as f64;
    let kmeans_ok = acc == 1.0 && err == 0;

    // DBSCAN pipeline against the curved model, both labeling the model's points
    let model = &curved_model().model;
    let strong = fields(&GenConfig::strongly_curved(416, 416), 2_000_000..2_000_100);
    let cfg = DecodeConfig::default();
    let db = DbscanConfig::default();
    let (mut by_model, mut by_dbscan) = (Vec::new(), Vec::new());
    for (i, (g, w)) in strong.iter().enumerate() {
        let pred = predict(model, g, &cfg).expect("predict").waypoints;
        let mut relabeled = pred.clone();
        for (p, l) in relabeled.waypoints.iter_mut().zip(dbscan_pipeline(&pred.points(), &db)) {
            p.cluster = l;
        }
        by_model.push((i.to_string(), pred, w.clone()));
        by_dbscan.push((i.to_string(), relabeled, w.clone()));
    }
    let (em, ed) = (mean_error(&by_model), mean_error(&by_dbscan));
    outcome(
        kmeans_ok && ed > em,
        format!(
            "K-means on straight ground truth: adjusted accuracy {acc:.4}, total error {err}; strongly curved: DBSCAN pipeline error {ed:.3} vs model {em:.3}"
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

/// Greedy matching then an explicit sweep over every distinct confidence threshold.
fn brute_force_ap(preds: &[Scored], gts: &[Point], r: f64) -> f64 {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence).then(a.cmp(&b)));
    let mut used = vec![false; gts.len()];
    let mut hit = vec![false; preds.len()];
    for i in order {
        let mut best: Option<(f64, usize)> = None;
        for (j, g) in gts.iter().enumerate() {
            let d = preds[i].point.dist(*g);
            if !used[j] && d <= r && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        if let Some((_, j)) = best {
            used[j] = true;
            hit[i] = true;
        }
    }
    let mut curve = Vec::new();
    for t in preds.iter().map(|p| p.confidence) {
        let kept: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].confidence >= t).collect();
        let tp = kept.iter().filter(|&&i| hit[i]).count() as f64;
        curve.push((tp / gts.len() as f64, tp / kept.len() as f64));
    }
    let mut levels: Vec<f64> = curve.iter().map(|c| c.0).filter(|&x| x > 0.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut prev = 0.0;
    let mut area = 0.0;
    for l in levels {
        area += (l - prev) * curve.iter().filter(|c| c.0 >= l).map(|c| c.1).fold(0.0, f64::max);
        prev = l;
    }
    area
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ap_bad = 0;
    for _ in 0..1000 {
        let n_gt = rng.random_range(1..=3);
        let n_pred = rng.random_range(0..=6 - n_gt);
        let gts: Vec<Point> = (0..n_gt).map(|_| Point::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect();
        let preds: Vec<Scored> = (0..n_pred)
            .map(|_| Scored {
                point: Point::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)),
                confidence: rng.random_range(1..=4) as f64 / 4.0,
            })
            .collect();
        for r in [2.0, 4.0, 8.0] {
            if (average_precision(&preds, &gts, r).unwrap() - brute_force_ap(&preds, &gts, r)).abs() > 1e-12 {
                ap_bad += 1;
            }
        }
    }
    let mut cluster_bad = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..10);
        let p: Vec<Cluster> = (0..n).map(|_| if rng.random_bool(0.5) { Cluster::A } else { Cluster::B }).collect();
        let g: Vec<Cluster> = (0..n).map(|_| if rng.random_bool(0.5) { Cluster::A } else { Cluster::B }).collect();
        let agree = |flip: bool| p.iter().zip(&g).filter(|(a, b)| (if flip { a.other() } else { **a }) == **b).count();
        let best = agree(false).max(agree(true));
        let acc = (2.0 * best as f64 / n as f64 - 1.0).max(0.0);
        if (adjusted_accuracy(&p, &g).unwrap() - acc).abs() > 1e-12 || clustering_error(&p, &g).unwrap() != n - best {
            cluster_bad += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let (h, w) = (8 * rng.random_range(1..100), 8 * rng.random_range(1..100));
        let p = Point::new(rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let set = WaypointSet::new(vec![cway_core::types::Waypoint::new(p, Cluster::A)]);
        let t = build_target(&set, h, w, 8).unwrap();
        let (row, col) = t.cells[0];
        let v = &t.data[(row * t.cols + col) * 3..][..3];
        worst = worst.max(decode_cell(row, col, v[1], v[2], 8).dist(p));
    }
    outcome(
        ap_bad == 0 && cluster_bad == 0 && worst < 1e-4,
        format!("AP mismatches {ap_bad}/3000, clustering mismatches {cluster_bad}/1000, worst round trip {worst:.1e} px"),
    )
}

// ---------------------------------------------------------------- criterion 8

fn cway(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cway")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("cway {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn same_tree(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (files(a), files(b));
    if fa != fb {
        return Err(format!("{} and {} hold different files", a.display(), b.display()));
    }
    for f in &fa {
        if std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap() {
            return Err(format!("{} differs", f.display()));
        }
    }
    Ok(fa.len())
}

fn same_file(a: &Path, b: &Path) -> Result<(), String> {
    if std::fs::read(a).map_err(|e| e.to_string())? == std::fs::read(b).map_err(|e| e.to_string())? {
        Ok(())
    } else {
        Err(format!("{} and {} differ", a.display(), b.display()))
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let run = || -> Result<usize, String> {
        let mut compared = 0;
        for d in ["d1", "d2"] {
            cway(&["generate", "--out", &p(d), "--count", "4,0,3", "--size", "256", "--seed", "11"])?;
        }
        compared += same_tree(&dir.path().join("d1"), &dir.path().join("d2"))?;
        for m in ["m1.cway", "m2.cway"] {
            cway(&["train", "--data", &p("d1"), "--out", &p(m), "--epochs", "1", "--batch", "2", "--seed", "3"])?;
        }
        same_file(&dir.path().join("m1.cway"), &dir.path().join("m2.cway"))?;
        same_file(&dir.path().join("m1.loss.csv"), &dir.path().join("m2.loss.csv"))?;
        compared += 2;
        for o in ["p1", "p2"] {
            cway(&["predict", "--checkpoint", &p("m1.cway"), "--input", &p("d1/test"), "--out", &p(o)])?;
        }
        compared += same_tree(&dir.path().join("p1"), &dir.path().join("p2"))?;
        for o in ["e1.json", "e2.json"] {
            cway(&["eval", "--data", &p("d1"), "--checkpoint", &p("m1.cway"), "--out", &p(o)])?;
        }
        same_file(&dir.path().join("e1.json"), &dir.path().join("e2.json"))?;
        Ok(compared + 1)
    };
    match run() {
        Ok(n) => outcome(true, format!("{n} artifacts byte-identical across reruns")),
        Err(e) => outcome(false, e),
    }
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("CW_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [(u32, &str, fn() -> Outcome); 8] = [
        (1, "gradient checks", gradient_checks),
        (2, "parameter budget and shapes", budget_and_shapes),
        (3, "overfit sanity", overfit),
        (4, "scaled reproduction, straight", straight_reproduction),
        (5, "scaled reproduction, curved", curved_reproduction),
        (6, "baseline contrast", baseline_contrast),
        (7, "metric oracles", metric_oracles),
        (8, "determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (n, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        println!(
            "criterion {n} ({name}): {} - {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
