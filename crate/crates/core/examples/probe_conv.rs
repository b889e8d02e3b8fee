use cway_core::autograd::conv::*;
use std::time::Instant;
fn main() {
    for (h, cin, cout, s) in [(416usize, 1usize, 16usize, 2usize), (208, 16, 16, 1), (208, 16, 16, 2), (104, 16, 16, 1)] {
        let g = ConvGeom::same(h, h, cin, cout, 5, s);
        let x: Vec<f32> = (0..h*h*cin).map(|i| (i % 7) as f32).collect();
        let w: Vec<f32> = (0..25*cin*cout).map(|i| (i % 5) as f32).collect();
        let mut out = vec![0f32; g.patches() * cout];
        let t = Instant::now();
        conv_forward(&x, &w, &g, &mut out);
        let f = t.elapsed();
        let mut dw = vec![0f32; w.len()];
        let t = Instant::now();
        conv_backward_kernel(&x, &out, &g, &mut dw);
        let k = t.elapsed();
        let mut dx = vec![0f32; x.len()];
        let t = Instant::now();
        conv_backward_data(&out, &w, &g, &mut dx);
        eprintln!("{h} {cin}->{cout} s{s}: fwd {f:?} dW {k:?} dX {:?}", t.elapsed());
    }
}
