use cway_core::fieldgen::*;
use cway_core::model::*;
fn main() {
    let (g, _, _) = generate_field(&GenConfig::sized(416, 416), 1).unwrap();
    let m = build_model(ModelConfig::default(), 0).unwrap();
    let t = std::time::Instant::now();
    let _ = m.forward(&g).unwrap();
    eprintln!("{:?}", t.elapsed());
}
