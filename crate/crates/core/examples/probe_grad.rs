use cway_core::autograd::Graph;
use cway_core::fieldgen::*;
use cway_core::model::*;
fn main() {
    let cfg = GenConfig::sized(416, 416);
    let (gr, w, _) = generate_field(&cfg, 0).unwrap();
    let ex = TrainExample::new(&gr, &w, 8).unwrap();
    let m = build_model(ModelConfig::default(), 0).unwrap();
    let mut g = Graph::new();
    let b = m.bind(&mut g, &[Group::Backbone, Group::Estimation]);
    let x = g.constant(ex.input.clone());
    let f = m.backbone(&mut g, &b, x).unwrap();
    let est = m.estimation_head(&mut g, &b, f).unwrap();
    let loss = estimation_loss(&mut g, est, &ex.target, 0.7).unwrap();
    g.backward(loss).unwrap();
    for (i, n) in m.names.iter().enumerate() {
        if let Some(gr) = g.grad(b.vars[i]) {
            let rms = (gr.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / gr.len() as f64).sqrt();
            eprintln!("{n:14} rms {rms:.3e}");
        }
    }
    let fv = g.value(f);
    let fr = (fv.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / fv.numel() as f64).sqrt();
    eprintln!("feature rms {fr:.3e}");
}
