use cway_core::fieldgen::*;
use cway_core::model::*;
fn main() {
    let size: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(416);
    let cfg = GenConfig::sized(size, size);
    let (g, w, _) = generate_field(&cfg, 1).unwrap();
    let ex = TrainExample::new(&g, &w, 8).unwrap();
    let mut m = build_model(ModelConfig::default(), 0).unwrap();
    let t = std::time::Instant::now();
    let _ = m.forward(&g).unwrap();
    eprintln!("forward {:?}", t.elapsed());
    let tc = TrainConfig { epochs: 1, batch: 4, phase: Phase::Estimation, ..Default::default() };
    let data = vec![ex; 4];
    let t = std::time::Instant::now();
    train(&mut m, &data, &tc, |e| eprintln!("{e:?}")).unwrap();
    eprintln!("4 images train {:?}", t.elapsed());
}
