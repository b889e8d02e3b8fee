use super::{ModelError, TargetGrid};
use crate::autograd::{Activation, Graph, Scalar, Tensor, Var};
use crate::types::Cluster;

/// Weighted squared error between the estimation map and its target, averaged over cells.
///
/// Waypoint cells weigh `lambda`, all other cells `1 - lambda` and regress to `(0, 0, 0)`.
pub fn estimation_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    target: &TargetGrid,
    lambda: f64,
) -> Result<Var, ModelError> {
    let t = g.constant(target.tensor());
    let w = g.constant(target.weights(lambda));
    let diff = g.sub(pred, t)?;
    let sq = g.mul(diff, diff)?;
    let weighted = g.mul(sq, w)?;
    let total = g.sum_all(weighted)?;
    Ok(g.scale(total, T::lit(1.0 / (target.rows * target.cols) as f64)))
}

/// [`estimation_loss`] on plain values.
pub fn estimation_loss_value(pred: &[f64], target: &TargetGrid, lambda: f64) -> f64 {
    let cells = target.rows * target.cols;
    let total: f64 = pred
        .chunks_exact(3)
        .zip(target.data.chunks_exact(3))
        .map(|(p, t)| {
            let w = if t[0] > 0.5 { lambda } else { 1.0 - lambda };
            w * p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum();
    total / cells as f64
}

fn check_labels(labels: &[Cluster]) -> Result<(), ModelError> {
    let a = labels.iter().filter(|&&c| c == Cluster::A).count();
    let b = labels.len() - a;
    if a == 0 || b == 0 {
        return Err(ModelError::SingleCluster { a, b });
    }
    Ok(())
}

/// Binary cross-entropy of `sigmoid(cosine similarity)` against the same-cluster
/// indicator, averaged over all ordered pairs of distinct points.
///
/// `latent` is an `h x w x D` map; features are read at `cells`.
pub fn clustering_loss<T: Scalar>(
    g: &mut Graph<T>,
    latent: Var,
    cells: &[(usize, usize)],
    labels: &[Cluster],
) -> Result<Var, ModelError> {
    check_labels(labels)?;
    let n = labels.len();
    let f = g.gather_cells(latent, cells)?;
    let z = g.normalize_rows(f)?;
    let sim = g.matmul_nt(z, z)?;
    // -log sig(s) = softplus(-s) for same-cluster pairs, -log(1 - sig(s)) = softplus(s) otherwise
    let mut sign = vec![T::zero(); n * n];
    let mut mask = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sign[i * n + j] = if labels[i] == labels[j] { -T::one() } else { T::one() };
                mask[i * n + j] = T::one();
            }
        }
    }
    let sign = g.constant(Tensor::new(vec![n, n], sign)?);
    let mask = g.constant(Tensor::new(vec![n, n], mask)?);
    let signed = g.mul(sim, sign)?;
    let sp = g.activation(signed, Activation::Softplus);
    let off = g.mul(sp, mask)?;
    let total = g.sum_all(off)?;
    Ok(g.scale(total, T::lit(1.0 / (n * (n - 1)) as f64)))
}

/// [`clustering_loss`] on plain feature vectors.
pub fn clustering_loss_value(features: &[Vec<f64>], labels: &[Cluster]) -> Result<f64, ModelError> {
    check_labels(labels)?;
    let n = labels.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let s = cosine_sim(&features[i], &features[j])?;
            let x = if labels[i] == labels[j] { -s } else { s };
            total += crate::autograd::softplus(x);
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, ModelError> {
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(ModelError::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}
