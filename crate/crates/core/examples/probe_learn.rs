use cway_core::eval::*;
use cway_core::fieldgen::*;
use cway_core::inference::*;
use cway_core::model::*;
use cway_core::types::*;
fn main() {
    let a: Vec<String> = std::env::args().collect();
    let n: usize = a[1].parse().unwrap();
    let epochs: usize = a[2].parse().unwrap();
    let batch: usize = a[3].parse().unwrap();
    let lr: f64 = a[4].parse().unwrap();
    let bias: f64 = a[5].parse().unwrap();
    let curved = a.get(6).map_or(false, |s| s == "curved");
    let mut cfg = GenConfig::sized(416, 416);
    cfg.curved = curved;
    let gen = |s: u64| generate_field(&cfg, s).unwrap();
    let train_set: Vec<_> = (0..n as u64).map(|s| gen(s)).collect();
    let test_set: Vec<_> = (10_000..10_000 + std::env::var("NTEST").ok().map_or(30, |v| v.parse().unwrap())).map(|s| gen(s)).collect();
    let data: Vec<_> = train_set.iter().map(|(g, w, _)| TrainExample::new(g, w, 8).unwrap()).collect();
    let mut m = build_model(ModelConfig::default(), 0).unwrap();
    let _ = bias;
    let gain: f32 = std::env::var("GAIN").ok().map_or(1.0, |v| v.parse().unwrap());
    for (i, n) in m.names.clone().iter().enumerate() {
        if n.ends_with(".w") || n.ends_with(".w1") || n.ends_with(".w2") {
            m.params[i].data_mut().iter_mut().for_each(|v| *v *= gain);
        }
    }
    let tc = TrainConfig { epochs, batch, lr, phase: Phase::Estimation, ..Default::default() };
    let t = std::time::Instant::now();
    train(&mut m, &data, &tc, |e| eprintln!("{:?} {} {:.5} t={:.0}s", e.phase, e.epoch, e.loss, t.elapsed().as_secs_f64())).unwrap();
    save_checkpoint(&m, std::path::Path::new(&format!("/tmp/probe_{n}_{epochs}_{batch}.cway"))).unwrap();
    for (name, set) in [("train", &train_set[..30.min(n)]), ("test", &test_set[..])] {
        let (mut pp, mut np, mut nmax, mut pc, mut nc) = (0.0, 0.0, 0.0f64, 0, 0);
        for (g, w, _) in set.iter() {
            let (est, _) = m.forward(g).unwrap();
            let tg = build_target(w, g.height(), g.width(), 8).unwrap();
            for (p, t) in est.data().chunks(3).zip(tg.data.chunks(3)) {
                if t[0] > 0.5 { pp += p[0] as f64; pc += 1 } else { np += p[0] as f64; nc += 1; nmax = nmax.max(p[0] as f64) }
            }
        }
        eprintln!("{name}: mean p pos {:.3} neg {:.4} max neg {:.3}", pp / pc as f64, np / nc as f64, nmax);
        let items: Vec<(String, WaypointSet, WaypointSet)> = set
            .iter()
            .enumerate()
            .map(|(i, (g, w, _))| (i.to_string(), predict(&m, g, &DecodeConfig::default()).unwrap().waypoints, w.clone()))
            .collect();
        let r = evaluate_dataset(&items, &DEFAULT_RADII, 8.0).unwrap();
        eprintln!("{name}: ap {:?}", r.ap);
    }
}
