//! im2col convolution kernels shared by the strided and transposed convolutions.

use super::Scalar;

/// Geometry of a same-padded strided convolution from `in_h x in_w` to `out_h x out_w`.
///
/// Padding is symmetric, with the odd pixel of an uneven deficit going to the
/// bottom/right edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn same(in_h: usize, in_w: usize, in_c: usize, out_c: usize, k: usize, stride: usize) -> Self {
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + k).saturating_sub(in_h);
        let pad_w = ((out_w - 1) * stride + k).saturating_sub(in_w);
        Self {
            in_h,
            in_w,
            in_c,
            out_h,
            out_w,
            out_c,
            k,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        }
    }

    /// Number of output pixels, the row count of the column matrix.
    pub fn patches(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Length of one unrolled receptive field, the column count of the column matrix.
    pub fn patch_len(&self) -> usize {
        self.k * self.k * self.in_c
    }

    /// Input coordinate for output `o` and kernel tap `t`, if it falls inside the image.
    #[inline(always)]
    fn source(o: usize, t: usize, stride: usize, pad: usize, size: usize) -> Option<usize> {
        let pos = (o * stride + t) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < size).then_some(pos as usize)
    }
}

/// Unrolls `input` (`in_h x in_w x in_c`) into a `patches x patch_len` matrix.
pub fn im2col<T: Scalar>(input: &[T], g: &ConvGeom) -> Vec<T> {
    let plen = g.patch_len();
    let mut cols = vec![T::zero(); g.patches() * plen];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &mut cols[(oy * g.out_w + ox) * plen..][..plen];
            for ky in 0..g.k {
                let Some(iy) = ConvGeom::source(oy, ky, g.stride, g.pad_top, g.in_h) else {
                    continue;
                };
                for kx in 0..g.k {
                    let Some(ix) = ConvGeom::source(ox, kx, g.stride, g.pad_left, g.in_w) else {
                        continue;
                    };
                    let src = &input[(iy * g.in_w + ix) * g.in_c..][..g.in_c];
                    row[(ky * g.k + kx) * g.in_c..][..g.in_c].copy_from_slice(src);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-and-adds a column matrix back into image layout.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let plen = g.patch_len();
    let mut out = vec![T::zero(); g.in_h * g.in_w * g.in_c];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let row = &cols[(oy * g.out_w + ox) * plen..][..plen];
            for ky in 0..g.k {
                let Some(iy) = ConvGeom::source(oy, ky, g.stride, g.pad_top, g.in_h) else {
                    continue;
                };
                for kx in 0..g.k {
                    let Some(ix) = ConvGeom::source(ox, kx, g.stride, g.pad_left, g.in_w) else {
                        continue;
                    };
                    let dst = &mut out[(iy * g.in_w + ix) * g.in_c..][..g.in_c];
                    let src = &row[(ky * g.k + kx) * g.in_c..][..g.in_c];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
    out
}

/// Runs `$body` for every `(output pixel, kernel tap, input pixel)` triple of a
/// same-padded convolution. A macro rather than a closure so the body is
/// compiled with the caller's target features.
macro_rules! for_each_tap {
    ($g:expr, |$p:ident, $tap:ident, $src:ident| $body:block) => {{
        let g: &ConvGeom = $g;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let $p = oy * g.out_w + ox;
                for ky in 0..g.k {
                    let Some(iy) = ConvGeom::source(oy, ky, g.stride, g.pad_top, g.in_h) else {
                        continue;
                    };
                    for kx in 0..g.k {
                        let Some(ix) = ConvGeom::source(ox, kx, g.stride, g.pad_left, g.in_w) else {
                            continue;
                        };
                        let $tap = ky * g.k + kx;
                        let $src = iy * g.in_w + ix;
                        $body
                    }
                }
            }
        }
    }};
}

// Lane-count specialisations keep the per-pixel accumulator in registers.
// Only the evaluation order matters for reproducibility, and it is the same
// for every instruction set the dispatcher picks.

/// Independent partial sums per accumulator, to hide floating-point add latency.
const PARTIALS: usize = 4;

#[inline(always)]
fn reduce_partials<T: Scalar, const N: usize>(acc: &[[T; N]; PARTIALS], base: &mut [T]) {
    for j in 0..N {
        base[j] = base[j] + ((acc[0][j] + acc[1][j]) + (acc[2][j] + acc[3][j]));
    }
}

/// `acc[c % PARTIALS] += xs[c] * ws[c]` over rows `ws[c]` of length `N`.
#[inline(always)]
fn accumulate<T: Scalar, const N: usize>(acc: &mut [[T; N]; PARTIALS], xs: &[T], ws: &[T]) {
    let full = xs.len() / PARTIALS * PARTIALS;
    for (xc, wc) in xs[..full].chunks_exact(PARTIALS).zip(ws.chunks_exact(PARTIALS * N)) {
        for q in 0..PARTIALS {
            let xv = xc[q];
            for j in 0..N {
                acc[q][j] = acc[q][j] + xv * wc[q * N + j];
            }
        }
    }
    for (q, &xv) in xs[full..].iter().enumerate() {
        let wr = &ws[(full + q) * N..][..N];
        for j in 0..N {
            acc[q][j] = acc[q][j] + xv * wr[j];
        }
    }
}

#[inline(always)]
fn forward_lanes<T: Scalar, const N: usize>(x: &[T], w: &[T], g: &ConvGeom, out: &mut [T]) {
    let cin = g.in_c;
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let p = oy * g.out_w + ox;
            let mut acc = [[T::zero(); N]; PARTIALS];
            for ky in 0..g.k {
                let Some(iy) = ConvGeom::source(oy, ky, g.stride, g.pad_top, g.in_h) else {
                    continue;
                };
                for kx in 0..g.k {
                    let Some(ix) = ConvGeom::source(ox, kx, g.stride, g.pad_left, g.in_w) else {
                        continue;
                    };
                    let xs = &x[(iy * g.in_w + ix) * cin..][..cin];
                    let ws = &w[(ky * g.k + kx) * cin * N..][..cin * N];
                    accumulate::<T, N>(&mut acc, xs, ws);
                }
            }
            reduce_partials(&acc, &mut out[p * N..][..N]);
        }
    }
}

#[inline(always)]
fn forward_any<T: Scalar>(x: &[T], w: &[T], g: &ConvGeom, out: &mut [T]) {
    let (cin, cout) = (g.in_c, g.out_c);
    for_each_tap!(g, |p, tap, src| {
        let acc = &mut out[p * cout..][..cout];
        let xs = &x[src * cin..][..cin];
        let ws = &w[tap * cin * cout..][..cin * cout];
        for (&xv, wr) in xs.iter().zip(ws.chunks_exact(cout)) {
            for (a, &wv) in acc.iter_mut().zip(wr) {
                *a = *a + xv * wv;
            }
        }
    });
}

#[inline(always)]
fn backward_data_lanes<T: Scalar, const N: usize>(dy: &[T], wt: &[T], g: &ConvGeom, dx: &mut [T]) {
    let cout = g.out_c;
    for_each_tap!(g, |p, tap, src| {
        let mut acc = [[T::zero(); N]; PARTIALS];
        let ds = &dy[p * cout..][..cout];
        let ws = &wt[tap * cout * N..][..cout * N];
        accumulate::<T, N>(&mut acc, ds, ws);
        reduce_partials(&acc, &mut dx[src * N..][..N]);
    });
}

#[inline(always)]
fn backward_data_any<T: Scalar>(dy: &[T], wt: &[T], g: &ConvGeom, dx: &mut [T]) {
    let (cin, cout) = (g.in_c, g.out_c);
    for_each_tap!(g, |p, tap, src| {
        let acc = &mut dx[src * cin..][..cin];
        let ds = &dy[p * cout..][..cout];
        let ws = &wt[tap * cout * cin..][..cout * cin];
        for (&dv, wr) in ds.iter().zip(ws.chunks_exact(cin)) {
            for (a, &wv) in acc.iter_mut().zip(wr) {
                *a = *a + dv * wv;
            }
        }
    });
}

/// Kernel gradient one output row at a time: each `(tap, channel group)`
/// accumulates over the row in registers before touching `dw`.
#[inline(always)]
fn backward_kernel_lanes<T: Scalar, const N: usize>(x: &[T], dy: &[T], g: &ConvGeom, dw: &mut [T]) {
    let cin = g.in_c;
    for oy in 0..g.out_h {
        let dy_row = &dy[oy * g.out_w * N..][..g.out_w * N];
        for ky in 0..g.k {
            let Some(iy) = ConvGeom::source(oy, ky, g.stride, g.pad_top, g.in_h) else {
                continue;
            };
            let x_row = &x[iy * g.in_w * cin..][..g.in_w * cin];
            for kx in 0..g.k {
                let tap = ky * g.k + kx;
                let mut ci = 0;
                while ci < cin {
                    let group = (cin - ci).min(PARTIALS);
                    let mut acc = [[T::zero(); N]; PARTIALS];
                    for ox in 0..g.out_w {
                        let Some(ix) = ConvGeom::source(ox, kx, g.stride, g.pad_left, g.in_w) else {
                            continue;
                        };
                        let d = &dy_row[ox * N..][..N];
                        let xs = &x_row[ix * cin + ci..][..group];
                        for (a, &xv) in acc.iter_mut().zip(xs) {
                            for j in 0..N {
                                a[j] = a[j] + xv * d[j];
                            }
                        }
                    }
                    for (c, a) in acc.iter().take(group).enumerate() {
                        let wr = &mut dw[(tap * cin + ci + c) * N..][..N];
                        for j in 0..N {
                            wr[j] = wr[j] + a[j];
                        }
                    }
                    ci += group;
                }
            }
        }
    }
}

#[inline(always)]
fn backward_kernel_any<T: Scalar>(x: &[T], dy: &[T], g: &ConvGeom, dw: &mut [T]) {
    let (cin, cout) = (g.in_c, g.out_c);
    for_each_tap!(g, |p, tap, src| {
        let ds = &dy[p * cout..][..cout];
        let xs = &x[src * cin..][..cin];
        let ws = &mut dw[tap * cin * cout..][..cin * cout];
        for (&xv, wr) in xs.iter().zip(ws.chunks_exact_mut(cout)) {
            for (a, &dv) in wr.iter_mut().zip(ds) {
                *a = *a + xv * dv;
            }
        }
    });
}

macro_rules! by_lanes {
    ($lanes:expr, $generic:ident, $any:ident, ($($arg:expr),*)) => {
        match $lanes {
            1 => $generic::<T, 1>($($arg),*),
            2 => $generic::<T, 2>($($arg),*),
            3 => $generic::<T, 3>($($arg),*),
            4 => $generic::<T, 4>($($arg),*),
            8 => $generic::<T, 8>($($arg),*),
            16 => $generic::<T, 16>($($arg),*),
            32 => $generic::<T, 32>($($arg),*),
            _ => $any::<T>($($arg),*),
        }
    };
}

/// Compiles `$body` for AVX-512, AVX2 and the baseline, picking one at run time.
macro_rules! multiversion {
    ($name:ident($($arg:ident: $ty:ty),*) $body:block) => {
        pub fn $name<T: Scalar>($($arg: $ty),*) {
            #[inline(always)]
            fn body<T: Scalar>($($arg: $ty),*) $body

            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx512f")]
                unsafe fn wide<T: Scalar>($($arg: $ty),*) {
                    body::<T>($($arg),*)
                }
                #[target_feature(enable = "avx2")]
                unsafe fn avx2<T: Scalar>($($arg: $ty),*) {
                    body::<T>($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx512f") {
                    // SAFETY: the CPU supports the enabled feature.
                    return unsafe { wide::<T>($($arg),*) };
                }
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: as above.
                    return unsafe { avx2::<T>($($arg),*) };
                }
            }
            body::<T>($($arg),*)
        }
    };
}

multiversion!(conv_forward_impl(x: &[T], w: &[T], g: &ConvGeom, out: &mut [T]) {
    by_lanes!(g.out_c, forward_lanes, forward_any, (x, w, g, out))
});

multiversion!(conv_backward_data_impl(dy: &[T], wt: &[T], g: &ConvGeom, dx: &mut [T]) {
    by_lanes!(g.in_c, backward_data_lanes, backward_data_any, (dy, wt, g, dx))
});

multiversion!(conv_backward_kernel_impl(x: &[T], dy: &[T], g: &ConvGeom, dw: &mut [T]) {
    by_lanes!(g.out_c, backward_kernel_lanes, backward_kernel_any, (x, dy, g, dw))
});

/// `out += conv(x, w)` where `out` is `patches x out_c` (usually pre-filled with the bias)
/// and `w` is `k x k x in_c x out_c`.
pub fn conv_forward<T: Scalar>(x: &[T], w: &[T], g: &ConvGeom, out: &mut [T]) {
    conv_forward_impl(x, w, g, out)
}

/// `dx += conv^T(dy)`: the gradient of [`conv_forward`] with respect to its input.
pub fn conv_backward_data<T: Scalar>(dy: &[T], w: &[T], g: &ConvGeom, dx: &mut [T]) {
    // swap the channel axes so the inner loop runs over contiguous input channels
    let (cin, cout) = (g.in_c, g.out_c);
    let mut wt = vec![T::zero(); w.len()];
    for tap in 0..g.k * g.k {
        for ci in 0..cin {
            for co in 0..cout {
                wt[(tap * cout + co) * cin + ci] = w[(tap * cin + ci) * cout + co];
            }
        }
    }
    conv_backward_data_impl(dy, &wt, g, dx)
}

/// `dw += x^T * dy` over every tap: the kernel gradient of [`conv_forward`].
pub fn conv_backward_kernel<T: Scalar>(x: &[T], dy: &[T], g: &ConvGeom, dw: &mut [T]) {
    conv_backward_kernel_impl(x, dy, g, dw)
}

/// `out[m x n] (+)= a[m x k] * b[k x n]`, all row-major.
pub fn matmul<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, beta, out, n as isize, 1);
}

/// `out[m x n] (+)= a[m x k] * b[n x k]^T`.
pub fn matmul_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, 1, k as isize, beta, out, n as isize, 1);
}

/// `out[m x n] (+)= a[k x m]^T * b[k x n]`.
pub fn matmul_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T], accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, 1, m as isize, b, n as isize, 1, beta, out, n as isize, 1);
}
