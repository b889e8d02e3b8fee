use cway_core::fieldgen::*;
fn main() {
    let args: Vec<String> = std::env::args().collect();
    let size: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(416);
    let mode = args.get(2).cloned().unwrap_or("straight".into());
    let cfg = match mode.as_str() { "curved" => GenConfig { curved: true, ..GenConfig::sized(size,size)}, "strong" => GenConfig::strongly_curved(size,size), _ => GenConfig::sized(size,size)};
    let t = std::time::Instant::now();
    let mut ns = vec![];
    for s in 0..200u64 {
        let (g, w, spec) = generate_field(&cfg, s).unwrap();
        ns.push(spec.n);
        if s < 4 { save_grid(std::path::Path::new(&format!("/tmp/probe_{mode}_{s}.png")), &g).unwrap(); eprintln!("seed {s} n={} angle={:.2} bend={:.2} wp={}", spec.n, spec.angle, spec.bend, w.len()); }
    }
    ns.sort();
    eprintln!("{:?} median n {} time {:?}", (ns[0], ns[199]), ns[100], t.elapsed());
}
