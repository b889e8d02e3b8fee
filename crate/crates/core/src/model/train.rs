use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_target, clustering_loss, estimation_loss, grid_tensor, Group, Model, ModelError, TargetGrid};
use crate::autograd::{adam_step, AdamState, Graph, Tensor};
use crate::rng::stream;
use crate::types::{Cluster, OccupancyGrid, WaypointSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Backbone and estimation head.
    Estimation,
    /// Clustering head on a frozen backbone.
    Clustering,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub phase: Phase,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.7,
            lr: 3e-4,
            batch: 16,
            epochs: 60,
            seed: 0,
            phase: Phase::Both,
        }
    }
}

/// One training grid with its encoded targets.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub input: Tensor<f32>,
    pub target: TargetGrid,
    pub labels: Vec<Cluster>,
}

impl TrainExample {
    pub fn new(grid: &OccupancyGrid, waypoints: &WaypointSet, k: usize) -> Result<Self, ModelError> {
        Ok(Self {
            input: grid_tensor(grid),
            target: build_target(waypoints, grid.height(), grid.width(), k)?,
            labels: waypoints.labels(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub phase: Phase,
    pub epoch: usize,
    /// Mean per-image loss over the epoch, measured before each batch update.
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochLoss>,
}

/// Loss and parameter gradients of one image, for parameters in `range`.
type ImageGrad = (f64, Vec<Vec<f32>>);

fn collect_grads(g: &Graph<f32>, vars: &[crate::autograd::Var], model: &Model, range: &std::ops::Range<usize>) -> Vec<Vec<f32>> {
    range
        .clone()
        .map(|i| g.grad(vars[i]).map_or_else(|| vec![0.0; model.params[i].numel()], <[f32]>::to_vec))
        .collect()
}

fn estimation_grad(model: &Model, ex: &TrainExample, lambda: f64) -> Result<ImageGrad, ModelError> {
    let mut g = Graph::new();
    let b = model.bind(&mut g, &[Group::Backbone, Group::Estimation]);
    let x = g.constant(ex.input.clone());
    let f = model.backbone(&mut g, &b, x)?;
    let est = model.estimation_head(&mut g, &b, f)?;
    let loss = estimation_loss(&mut g, est, &ex.target, lambda)?;
    g.backward(loss)?;
    let range = 0..model.group_range(Group::Estimation).end;
    Ok((g.value(loss).data()[0] as f64, collect_grads(&g, &b.vars, model, &range)))
}

fn clustering_grad(model: &Model, features: &Tensor<f32>, ex: &TrainExample) -> Result<Option<ImageGrad>, ModelError> {
    if !ex.labels.contains(&Cluster::A) || !ex.labels.contains(&Cluster::B) {
        return Ok(None);
    }
    let mut g = Graph::new();
    let b = model.bind(&mut g, &[Group::Clustering]);
    let f = g.constant(features.clone());
    let latent = model.clustering_head(&mut g, &b, f)?;
    let loss = clustering_loss(&mut g, latent, &ex.target.cells, &ex.labels)?;
    g.backward(loss)?;
    let range = model.group_range(Group::Clustering);
    Ok(Some((g.value(loss).data()[0] as f64, collect_grads(&g, &b.vars, model, &range))))
}

/// Runs one phase: shuffled mini-batches, per-image gradients summed in batch
/// order, one Adam step per batch.
fn run_phase<F>(
    model: &mut Model,
    n: usize,
    cfg: &TrainConfig,
    phase: Phase,
    range: std::ops::Range<usize>,
    grad: F,
    on_epoch: &mut dyn FnMut(&EpochLoss),
) -> Result<Vec<EpochLoss>, ModelError>
where
    F: Fn(&Model, usize) -> Result<Option<ImageGrad>, ModelError> + Sync,
{
    let names = model.names[range.clone()].to_vec();
    let mut state = AdamState::new(&model.params[range.clone()]);
    let tag = match phase {
        Phase::Clustering => "batching-clustering",
        _ => "batching-estimation",
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(cfg.seed, tag, epoch as u64));
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch.max(1)) {
            let frozen: &Model = model;
            let results: Vec<Option<ImageGrad>> = batch
                .par_iter()
                .map(|&i| grad(frozen, i))
                .collect::<Result<_, _>>()?;
            let mut total: Option<Vec<Vec<f32>>> = None;
            let mut used = 0usize;
            for (loss, grads) in results.into_iter().flatten() {
                loss_sum += loss;
                loss_n += 1;
                used += 1;
                match &mut total {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let Some(mut acc) = total else { continue };
            let inv = 1.0 / used as f32;
            acc.iter_mut().flatten().for_each(|v| *v *= inv);
            adam_step(&mut model.params[range.clone()], &acc, &names, &mut state, cfg.lr)?;
        }
        let entry = EpochLoss {
            phase,
            epoch,
            loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN },
        };
        on_epoch(&entry);
        history.push(entry);
    }
    Ok(history)
}

/// Two-phase training: backbone with the estimation head, then the clustering
/// head on frozen backbone features. Deterministic for a given seed.
pub fn train(
    model: &mut Model,
    data: &[TrainExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainReport, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut history = Vec::new();
    if matches!(cfg.phase, Phase::Estimation | Phase::Both) {
        let range = 0..model.group_range(Group::Estimation).end;
        let grad = |m: &Model, i: usize| estimation_grad(m, &data[i], cfg.lambda).map(Some);
        history.extend(run_phase(model, data.len(), cfg, Phase::Estimation, range, grad, &mut on_epoch)?);
    }
    if matches!(cfg.phase, Phase::Clustering | Phase::Both) {
        let frozen: &Model = model;
        let features: Vec<Tensor<f32>> = data
            .par_iter()
            .map(|ex| {
                let mut g = Graph::new();
                let b = frozen.bind(&mut g, &[]);
                let x = g.constant(ex.input.clone());
                let f = frozen.backbone(&mut g, &b, x)?;
                Ok(g.value(f).clone())
            })
            .collect::<Result<_, ModelError>>()?;
        let range = model.group_range(Group::Clustering);
        let grad = |m: &Model, i: usize| clustering_grad(m, &features[i], &data[i]);
        history.extend(run_phase(model, data.len(), cfg, Phase::Clustering, range, grad, &mut on_epoch)?);
    }
    Ok(TrainReport { history })
}
