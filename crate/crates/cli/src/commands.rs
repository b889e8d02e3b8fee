use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use cway_core::baselines::{dbscan_pipeline, kmeans_image, DbscanConfig};
use cway_core::eval::{evaluate_dataset, EvalReport, EvalSummary};
use cway_core::fieldgen::{generate_dataset, load_grid, load_split, Counts, GenConfig, Sample};
use cway_core::inference::{predict as predict_grid, DecodeConfig};
use cway_core::model::{build_model, load_checkpoint_with, save_checkpoint_with, train as train_model, Model, ModelConfig, Phase, TrainConfig, TrainExample};
use cway_core::planner::plan_coverage;
use cway_core::types::{Waypoint, WaypointSet};

use crate::{DecodeArgs, EvalArgs, GenerateArgs, Method, PhaseArg, PlanArgs, PredictArgs, TrainArgs};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable inputs or invalid configuration.
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub(crate) fn config(e: impl ToString) -> CliError {
    CliError::Config(e.to_string())
}

pub(crate) fn runtime(e: impl ToString) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Resolved parameters of one invocation, embedded in every artifact it writes.
/// File paths are left out so reruns into another directory stay byte-identical.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub command: &'static str,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts: Option<Counts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub radii: Vec<f64>,
    pub dbscan: DbscanConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count_limit: Option<usize>,
}

impl RunConfig {
    pub(crate) fn new_for(command: &'static str) -> Self {
        Self {
            command,
            seed: 0,
            generation: None,
            counts: None,
            model: None,
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            radii: cway_core::eval::DEFAULT_RADII.to_vec(),
            dbscan: DbscanConfig::default(),
            method: None,
            count_limit: None,
        }
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub(crate) fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", path.display())))
}

/// The `waypoints` array of a prediction or label file.
pub(crate) fn read_waypoints(path: &Path) -> Result<WaypointSet, CliError> {
    let v = read_json(path)?;
    let list = v
        .get("waypoints")
        .cloned()
        .ok_or_else(|| config(format!("{}: no `waypoints` array", path.display())))?;
    let waypoints: Vec<Waypoint> = serde_json::from_value(list).map_err(|e| config(format!("{}: {e}", path.display())))?;
    Ok(WaypointSet::new(waypoints))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| config(format!("bad {what} `{s}`"))))
        .collect()
}

pub fn generate(a: &GenerateArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_value(read_json(p)?).map_err(|e| config(format!("{}: {e}", p.display())))?,
        None if a.strong => GenConfig::strongly_curved(a.size, a.size),
        None => GenConfig::sized(a.size, a.size),
    };
    if a.curved || a.strong {
        cfg.curved = true;
    }
    if let Some(f) = a.curved_fraction {
        cfg.curved_fraction = f;
    }
    let counts = match parse_list::<usize>(&a.count, "count")?[..] {
        [train, val, test] => Counts { train, val, test },
        _ => return Err(config(format!("--count expects TRAIN,VAL,TEST, got `{}`", a.count))),
    };
    cfg.validate().map_err(config)?;
    let manifest = generate_dataset(&cfg, counts, a.seed, &a.out).map_err(runtime)?;
    let run = RunConfig {
        seed: a.seed,
        generation: Some(cfg),
        counts: Some(counts),
        ..RunConfig::new_for("generate")
    };
    let mut value = serde_json::to_value(&manifest).map_err(runtime)?;
    value["run"] = serde_json::to_value(&run).map_err(runtime)?;
    write_json(&a.out.join("manifest.json"), &value)?;
    eprintln!("wrote {} images to {}", counts.total(), a.out.display());
    Ok(())
}

/// `dir/<split>` when it exists, else `dir` itself when it holds `images/`.
fn resolve_split(dir: &Path, split: &str) -> Result<PathBuf, CliError> {
    let nested = dir.join(split);
    if nested.join("images").is_dir() {
        Ok(nested)
    } else if dir.join("images").is_dir() {
        Ok(dir.to_path_buf())
    } else {
        Err(config(format!("{}: no `{split}/images` or `images` directory", dir.display())))
    }
}

fn load_samples(dir: &Path, split: &str, limit: Option<usize>) -> Result<Vec<Sample>, CliError> {
    let split_dir = resolve_split(dir, split)?;
    let mut samples = load_split(&split_dir).map_err(config)?;
    if let Some(n) = limit {
        samples.truncate(n);
    }
    if samples.is_empty() {
        return Err(config(format!("{}: no images", split_dir.display())));
    }
    Ok(samples)
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    load_checkpoint_with(path).map(|(m, _)| m).map_err(config)
}

fn decode_config(d: &DecodeArgs, model: Option<&Model>) -> Result<DecodeConfig, CliError> {
    let cfg = DecodeConfig {
        t_p: d.t_p,
        t_sup: d.t_sup,
        k: model.map_or(8, |m| m.config.k()),
        ..Default::default()
    };
    cfg.validate().map_err(config)?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let phase = match a.phase {
        PhaseArg::Estimation => Phase::Estimation,
        PhaseArg::Clustering => Phase::Clustering,
        PhaseArg::Both => Phase::Both,
    };
    if a.batch == 0 || !(a.lr > 0.0) || !(0.0..=1.0).contains(&a.lambda) {
        return Err(config("need --batch >= 1, --lr > 0 and --lambda in [0, 1]"));
    }
    let mut model = match &a.init {
        Some(p) => load_model(p)?,
        None if phase == Phase::Clustering => {
            return Err(config("the clustering phase trains on a frozen backbone; pass --init CHECKPOINT"));
        }
        None => build_model(ModelConfig::default(), a.seed).map_err(config)?,
    };
    let samples = load_samples(&a.data, "train", a.count_limit)?;
    let k = model.config.k();
    let data: Vec<TrainExample> = samples
        .iter()
        .map(|s| TrainExample::new(&s.grid, &s.label.waypoint_set(), k).map_err(|e| config(format!("{}: {e}", s.name))))
        .collect::<Result<_, _>>()?;
    let cfg = TrainConfig {
        lambda: a.lambda,
        lr: a.lr,
        batch: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        phase,
    };
    let report = train_model(&mut model, &data, &cfg, |e| {
        eprintln!("{:?} epoch {} loss {:.6}", e.phase, e.epoch + 1, e.loss);
    })
    .map_err(runtime)?;
    let run = RunConfig {
        seed: a.seed,
        model: Some(model.config),
        train: cfg,
        count_limit: a.count_limit,
        ..RunConfig::new_for("train")
    };
    let meta = serde_json::to_string(&json!({ "run": run, "history": report.history })).map_err(runtime)?;
    save_checkpoint_with(&model, &meta, &a.out).map_err(runtime)?;
    let mut csv = format!("# run: {}\nphase,epoch,loss\n", serde_json::to_string(&run).map_err(runtime)?);
    for e in &report.history {
        let phase = serde_json::to_value(e.phase).map_err(runtime)?;
        csv.push_str(&format!("{},{},{}\n", phase.as_str().unwrap_or("?"), e.epoch + 1, e.loss));
    }
    let csv_path = a.out.with_extension("loss.csv");
    fs::write(&csv_path, csv).map_err(|e| runtime(format!("{}: {e}", csv_path.display())))?;
    eprintln!("wrote {} and {}", a.out.display(), csv_path.display());
    Ok(())
}

fn prediction_json(run: &RunConfig, model: &Model, grid_path: &Path, cfg: &DecodeConfig) -> Result<Value, CliError> {
    let grid = load_grid(grid_path).map_err(config)?;
    let p = predict_grid(model, &grid, cfg).map_err(|e| runtime(format!("{}: {e}", grid_path.display())))?;
    Ok(json!({ "run": run, "degenerate": p.degenerate, "waypoints": p.waypoints.waypoints }))
}

pub fn predict(a: &PredictArgs) -> Result<(), CliError> {
    let model = load_model(&a.checkpoint)?;
    let cfg = decode_config(&a.decode, Some(&model))?;
    let run = RunConfig {
        model: Some(model.config),
        decode: cfg,
        ..RunConfig::new_for("predict")
    };
    if a.input.is_dir() {
        let images = if a.input.join("images").is_dir() { a.input.join("images") } else { a.input.clone() };
        let mut names: Vec<String> = fs::read_dir(&images)
            .map_err(|e| config(format!("{}: {e}", images.display())))?
            .filter_map(|e| e.ok()?.file_name().into_string().ok())
            .filter_map(|n| n.strip_suffix(".png").map(str::to_string))
            .collect();
        names.sort();
        fs::create_dir_all(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
        names.par_iter().try_for_each(|name| {
            let v = prediction_json(&run, &model, &images.join(format!("{name}.png")), &cfg)?;
            write_json(&a.out.join(format!("{name}.json")), &v)
        })?;
        eprintln!("wrote {} predictions to {}", names.len(), a.out.display());
    } else {
        let v = prediction_json(&run, &model, &a.input, &cfg)?;
        write_json(&a.out, &v)?;
    }
    Ok(())
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Model => "model",
        Method::Kmeans => "kmeans",
        Method::Dbscan => "dbscan",
    }
}

/// One evaluation run: the points come from `model` when given, else from the
/// ground truth; `method` assigns the clusters.
fn eval_run(
    samples: &[Sample],
    model: Option<&Model>,
    method: Method,
    cfg: &DecodeConfig,
    db: &DbscanConfig,
    radii: &[f64],
) -> Result<EvalReport, CliError> {
    let items: Vec<(String, WaypointSet, WaypointSet)> = samples
        .par_iter()
        .map(|s| {
            let gt = s.label.waypoint_set();
            let mut points = match model {
                Some(m) => predict_grid(m, &s.grid, cfg).map_err(|e| runtime(format!("{}: {e}", s.name)))?.waypoints,
                None => gt.clone(),
            };
            let labels = match method {
                Method::Model => None,
                Method::Kmeans => Some(kmeans_image(&points.points(), cfg.kmeans_iters)),
                Method::Dbscan => Some(dbscan_pipeline(&points.points(), db)),
            };
            if let Some(labels) = labels {
                for (w, l) in points.waypoints.iter_mut().zip(labels) {
                    w.cluster = l;
                }
            }
            Ok((s.name.clone(), points, gt))
        })
        .collect::<Result<_, CliError>>()?;
    evaluate_dataset(&items, radii, cfg.t_sup).map_err(runtime)
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let radii: Vec<f64> = parse_list(&a.radii, "radii")?;
    if radii.iter().any(|&r| !(r > 0.0)) {
        return Err(config("radii must be positive"));
    }
    if a.baseline == Method::Model && a.checkpoint.is_empty() {
        return Err(config("--baseline model needs at least one --checkpoint"));
    }
    let db = DbscanConfig {
        eps: a.eps,
        min_pts: a.min_pts,
    };
    db.validate().map_err(config)?;
    let models: Vec<Model> = a.checkpoint.iter().map(|p| load_model(p)).collect::<Result<_, _>>()?;
    let cfg = decode_config(&a.decode, models.first())?;
    let samples = load_samples(&a.data, "test", a.count_limit)?;
    let reports: Vec<EvalReport> = if models.is_empty() {
        vec![eval_run(&samples, None, a.baseline, &cfg, &db, &radii)?]
    } else {
        models
            .iter()
            .map(|m| eval_run(&samples, Some(m), a.baseline, &cfg, &db, &radii))
            .collect::<Result<_, _>>()?
    };
    let summary = EvalSummary::of(&reports).ok_or_else(|| runtime("no evaluation runs"))?;
    let source = if models.is_empty() { "ground truth" } else { "predictions" };
    print!("{}", summary.table(&format!("{} on {source}", method_name(a.baseline))));
    if let Some(out) = &a.out {
        let run = RunConfig {
            model: models.first().map(|m| m.config),
            decode: cfg,
            radii,
            dbscan: db,
            method: Some(method_name(a.baseline).into()),
            count_limit: a.count_limit,
            ..RunConfig::new_for("eval")
        };
        write_json(out, &json!({ "run": run, "points": source, "summary": summary, "reports": reports }))?;
    }
    Ok(())
}

pub fn plan(a: &PlanArgs) -> Result<(), CliError> {
    let set = read_waypoints(&a.input)?;
    let path = plan_coverage(&set).map_err(runtime)?;
    if let Some(w) = &path.warning {
        eprintln!("warning: {w}");
    }
    let run = RunConfig::new_for("plan");
    let mut value = serde_json::to_value(&path).map_err(runtime)?;
    value["run"] = serde_json::to_value(&run).map_err(runtime)?;
    write_json(&a.out, &value)
}
