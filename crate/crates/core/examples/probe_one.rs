use cway_core::fieldgen::*;
use cway_core::model::*;
fn main() {
    let size: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(128);
    let (g, w, _) = generate_field(&GenConfig::sized(size, size), 1).unwrap();
    let ex = TrainExample::new(&g, &w, 8).unwrap();
    let mut m = build_model(ModelConfig::default(), 0).unwrap();
    let tc = TrainConfig { epochs: 1, batch: 1, phase: Phase::Estimation, ..Default::default() };
    let t = std::time::Instant::now();
    train(&mut m, &[ex], &tc, |_| {}).unwrap();
    eprintln!("{:?}", t.elapsed());
}
