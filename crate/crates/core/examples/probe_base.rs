use cway_core::fieldgen::*;
use cway_core::model::*;
fn main() {
    let cfg = GenConfig::sized(416, 416);
    let mut s = 0.0; let mut s2 = 0.0;
    for seed in 0..100 {
        let (_, w, _) = generate_field(&cfg, seed).unwrap();
        let t = build_target(&w, 416, 416, 8).unwrap();
        s += estimation_loss_value(&vec![0.0; t.data.len()], &t, 0.7);
        // best constant p, offsets zero
        let f = t.cells.len() as f64 / (t.rows * t.cols) as f64;
        let p = 0.7 * f / (0.7 * f + 0.3 * (1.0 - f));
        let pred: Vec<f64> = (0..t.data.len()).map(|i| if i % 3 == 0 { p } else { 0.0 }).collect();
        s2 += estimation_loss_value(&pred, &t, 0.7);
    }
    println!("zero {:.5} const {:.5}", s / 100.0, s2 / 100.0);
}
