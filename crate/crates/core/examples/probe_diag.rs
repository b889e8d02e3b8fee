use cway_core::fieldgen::*;
use cway_core::inference::*;
use cway_core::model::*;
use cway_core::types::*;
fn main() {
    let a: Vec<String> = std::env::args().collect();
    let m: Model = load_checkpoint(std::path::Path::new(&a[1])).unwrap();
    let cfg = GenConfig::sized(416, 416);
    let (mut fp_near, mut fp_far, mut fn_n, mut tot, mut npred) = (0, 0, 0, 0, 0);
    let mut fn_p = Vec::new();
    let mut fp_conf = Vec::new();
    for s in 10_000..10_100u64 {
        let (g, w, _) = generate_field(&cfg, s).unwrap();
        let (est, _) = m.forward(&g).unwrap();
        let pred = predict(&m, &g, &DecodeConfig::default()).unwrap();
        let gts: Vec<Point> = w.waypoints.iter().map(|x| x.point()).collect();
        let ps: Vec<Point> = pred.waypoints.waypoints.iter().map(|x| x.point()).collect();
        tot += gts.len();
        npred += ps.len();
        for (i, p) in ps.iter().enumerate() {
            let d = gts.iter().map(|q| q.dist(*p)).fold(f64::MAX, f64::min);
            if d > 8.0 {
                if d < 30.0 { fp_near += 1 } else { fp_far += 1 }
                fp_conf.push((s, d as i64, (pred.waypoints.waypoints[i].confidence.unwrap_or(-1.0) * 100.0) as i64, p.x as i64, p.y as i64));
            }
        }
        let wd = est.shape()[1];
        for q in &gts {
            let d = ps.iter().map(|p| q.dist(*p)).fold(f64::MAX, f64::min);
            if d > 8.0 {
                fn_n += 1;
                let (cy, cx) = ((q.y / 8.0) as usize, (q.x / 8.0) as usize);
                fn_p.push((s, q.x as i64, q.y as i64, est.data()[(cy * wd + cx) * 3]));
            }
        }
    }
    println!("gt {tot} pred {npred} fp_near {fp_near} fp_far {fp_far} fn {fn_n}");
    println!("fp {:?}", &fp_conf[..fp_conf.len().min(40)]);
    println!("fn {:?}", &fn_p[..fn_p.len().min(40)]);
}
