use cway_core::fieldgen::*;
use cway_core::inference::*;
use cway_core::model::*;
use cway_core::types::*;
fn main() {
    let a: Vec<String> = std::env::args().collect();
    let m: Model = load_checkpoint(std::path::Path::new(&a[1])).unwrap();
    let cfg = GenConfig::sized(416, 416);
    let mut gaps = Vec::new();
    let mut shown = 0;
    for s in 10_000..10_100u64 {
        let (g, w, _) = generate_field(&cfg, s).unwrap();
        let (est, _) = m.forward(&g).unwrap();
        let cands = decode_waypoints(&est, 8, 0.4).unwrap();
        let kept = suppress(&cands, 8.0);
        let gts: Vec<Point> = w.waypoints.iter().map(|x| x.point()).collect();
        for (i, q) in gts.iter().enumerate() {
            let nn = gts.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, o)| o.dist(*q)).fold(f64::MAX, f64::min);
            gaps.push(nn);
            let d = kept.waypoints.iter().map(|p| q.dist(p.point())).fold(f64::MAX, f64::min);
            if d > 8.0 && shown < 25 {
                shown += 1;
                let near: Vec<String> = cands.iter().filter(|c| c.position.dist(*q) < 14.0).map(|c| format!("({:.1},{:.1} p{:.2} d{:.1})", c.position.x, c.position.y, c.confidence, c.position.dist(*q))).collect();
                println!("s{s} gt ({:.1},{:.1}) nn_gt {:.1} cands {}", q.x, q.y, nn, near.join(" "));
            }
        }
    }
    gaps.sort_by(f64::total_cmp);
    println!("gt nn gap quantiles {:.1} {:.1} {:.1} {:.1}", gaps[0], gaps[gaps.len() / 100], gaps[gaps.len() / 10], gaps[gaps.len() / 2]);
}
