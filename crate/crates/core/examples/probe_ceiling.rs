use cway_core::eval::*;
use cway_core::fieldgen::*;
use cway_core::inference::*;
use cway_core::types::*;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
fn main() {
    let a: Vec<String> = std::env::args().collect();
    let sigma: f64 = a[1].parse().unwrap();
    let rows_hi: usize = a[2].parse().unwrap();
    let s_hi: f64 = a[3].parse().unwrap();
    let sz: usize = std::env::var("SZ").ok().map_or(416, |v| v.parse().unwrap());
    let mut cfg = GenConfig::sized(sz, sz);
    cfg.rows.1 = rows_hi;
    cfg.spacing.1 = s_hi;
    if a.get(4).is_some_and(|s| s == "curved") { cfg.curved = true; }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let nd = Normal::new(0.0, sigma).unwrap();
    let mut items = Vec::new();
    let mut gaps = Vec::new();
    for s in 10_000..10_200u64 {
        let (_, w, _) = generate_field(&cfg, s).unwrap();
        let cands: Vec<Candidate> = w.waypoints.iter().map(|q| Candidate { position: Point::new(q.x + nd.sample(&mut rng), q.y + nd.sample(&mut rng)), confidence: 0.9 + 0.1 * rand::Rng::random::<f64>(&mut rng), cell: (0, 0), latent: vec![] }).collect();
        for (i, q) in w.waypoints.iter().enumerate() {
            gaps.push(w.waypoints.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, o)| o.point().dist(q.point())).fold(f64::MAX, f64::min));
        }
        items.push((s.to_string(), suppress(&cands, 8.0), w));
    }
    gaps.sort_by(f64::total_cmp);
    let r = evaluate_dataset(&items, &[8.0], 8.0).unwrap();
    println!("sigma {sigma} rows_hi {rows_hi} s_hi {s_hi}: AP8 {:.4} gap q10 {:.1} q50 {:.1}", r.ap[0], gaps[gaps.len() / 10], gaps[gaps.len() / 2]);
}
