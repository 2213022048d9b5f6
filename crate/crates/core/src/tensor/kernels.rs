//! Inner-loop kernels for matmul and conv2d, shared by forward and backward.
//!
//! All kernels accumulate into `out`, so callers zero-initialize when a fresh
//! result is wanted. Loops are arranged so the innermost dimension walks
//! contiguous memory.

use super::Scalar;

/// out[m×n] += a[m×k] · b[k×n]
pub fn mm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o = *o + aik * bv;
            }
        }
    }
}

/// out[m×n] += a[m×k] · b[n×k]ᵀ
pub fn mm_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                acc = acc + av * bv;
            }
            *o = *o + acc;
        }
    }
}

/// out[k×n] += a[m×k]ᵀ · b[m×n]
pub fn mm_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o = *o + aik * bv;
            }
        }
    }
}

/// Spatial size after a convolution along one axis, or `None` when the
/// stride does not divide evenly.
pub fn conv_out_size(input: usize, kernel: usize, pad: usize, stride: usize) -> Option<usize> {
    let span = input + 2 * pad;
    if span < kernel {
        return None;
    }
    let steps = span - kernel;
    if steps % stride != 0 {
        return None;
    }
    Some(steps / stride + 1)
}

/// Cross-correlation forward pass.
///
/// input  [n, c_in, h, w], kernels [c_out, c_in, k, k], out [n, c_out, oh, ow]
/// Zero padding `pad`, stride `stride`. Accumulates into `out`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<T: Scalar>(
    input: &[T],
    kernels: &[T],
    out: &mut [T],
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    ksize: usize,
    pad: usize,
    stride: usize,
) {
    let oh = conv_out_size(h, ksize, pad, stride).expect("validated by caller");
    let ow = conv_out_size(w, ksize, pad, stride).expect("validated by caller");
    for img in 0..n {
        for co in 0..c_out {
            let out_base = (img * c_out + co) * oh * ow;
            for ci in 0..c_in {
                let in_base = (img * c_in + ci) * h * w;
                let k_base = (co * c_in + ci) * ksize * ksize;
                for dy in 0..ksize {
                    for dx in 0..ksize {
                        let weight = kernels[k_base + dy * ksize + dx];
                        // output row oy reads input row iy = oy*stride + dy - pad
                        for oy in 0..oh {
                            let iy = (oy * stride + dy) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let in_row = &input[in_base + iy as usize * w..in_base + (iy as usize + 1) * w];
                            let out_row = &mut out[out_base + oy * ow..out_base + (oy + 1) * ow];
                            if stride == 1 {
                                // ix = ox + dx - pad; clamp the valid ox range and vectorize
                                let shift = dx as isize - pad as isize;
                                let ox_lo = (-shift).max(0) as usize;
                                let ox_hi = ((w as isize - shift).min(ow as isize)).max(0) as usize;
                                if ox_lo >= ox_hi {
                                    continue;
                                }
                                let in_seg = &in_row[(ox_lo as isize + shift) as usize
                                    ..(ox_hi as isize + shift) as usize];
                                for (o, &iv) in out_row[ox_lo..ox_hi].iter_mut().zip(in_seg.iter()) {
                                    *o = *o + weight * iv;
                                }
                            } else {
                                for ox in 0..ow {
                                    let ix = (ox * stride + dx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    out_row[ox] = out_row[ox] + weight * in_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of conv2d w.r.t. the input. `g` has the output shape.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_input<T: Scalar>(
    g: &[T],
    kernels: &[T],
    d_input: &mut [T],
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    ksize: usize,
    pad: usize,
    stride: usize,
) {
    let oh = conv_out_size(h, ksize, pad, stride).expect("validated by caller");
    let ow = conv_out_size(w, ksize, pad, stride).expect("validated by caller");
    for img in 0..n {
        for co in 0..c_out {
            let g_base = (img * c_out + co) * oh * ow;
            for ci in 0..c_in {
                let in_base = (img * c_in + ci) * h * w;
                let k_base = (co * c_in + ci) * ksize * ksize;
                for dy in 0..ksize {
                    for dx in 0..ksize {
                        let weight = kernels[k_base + dy * ksize + dx];
                        for oy in 0..oh {
                            let iy = (oy * stride + dy) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let g_row = &g[g_base + oy * ow..g_base + (oy + 1) * ow];
                            let d_row = &mut d_input
                                [in_base + iy as usize * w..in_base + (iy as usize + 1) * w];
                            if stride == 1 {
                                let shift = dx as isize - pad as isize;
                                let ox_lo = (-shift).max(0) as usize;
                                let ox_hi = ((w as isize - shift).min(ow as isize)).max(0) as usize;
                                if ox_lo >= ox_hi {
                                    continue;
                                }
                                let d_seg = &mut d_row[(ox_lo as isize + shift) as usize
                                    ..(ox_hi as isize + shift) as usize];
                                for (d, &gv) in d_seg.iter_mut().zip(g_row[ox_lo..ox_hi].iter()) {
                                    *d = *d + weight * gv;
                                }
                            } else {
                                for ox in 0..ow {
                                    let ix = (ox * stride + dx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    d_row[ix as usize] = d_row[ix as usize] + weight * g_row[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of conv2d w.r.t. the kernels. `g` has the output shape.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_kernels<T: Scalar>(
    g: &[T],
    input: &[T],
    d_kernels: &mut [T],
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    ksize: usize,
    pad: usize,
    stride: usize,
) {
    let oh = conv_out_size(h, ksize, pad, stride).expect("validated by caller");
    let ow = conv_out_size(w, ksize, pad, stride).expect("validated by caller");
    for img in 0..n {
        for co in 0..c_out {
            let g_base = (img * c_out + co) * oh * ow;
            for ci in 0..c_in {
                let in_base = (img * c_in + ci) * h * w;
                let k_base = (co * c_in + ci) * ksize * ksize;
                for dy in 0..ksize {
                    for dx in 0..ksize {
                        let mut acc = T::zero();
                        for oy in 0..oh {
                            let iy = (oy * stride + dy) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let g_row = &g[g_base + oy * ow..g_base + (oy + 1) * ow];
                            let in_row = &input
                                [in_base + iy as usize * w..in_base + (iy as usize + 1) * w];
                            if stride == 1 {
                                let shift = dx as isize - pad as isize;
                                let ox_lo = (-shift).max(0) as usize;
                                let ox_hi = ((w as isize - shift).min(ow as isize)).max(0) as usize;
                                if ox_lo >= ox_hi {
                                    continue;
                                }
                                let in_seg = &in_row[(ox_lo as isize + shift) as usize
                                    ..(ox_hi as isize + shift) as usize];
                                for (&gv, &iv) in g_row[ox_lo..ox_hi].iter().zip(in_seg.iter()) {
                                    acc = acc + gv * iv;
                                }
                            } else {
                                for ox in 0..ow {
                                    let ix = (ox * stride + dx) as isize - pad as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc = acc + g_row[ox] * in_row[ix as usize];
                                }
                            }
                        }
                        d_kernels[k_base + dy * ksize + dx] =
                            d_kernels[k_base + dy * ksize + dx] + acc;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn mm_variants_agree_with_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (m, k, n) = (4, 5, 3);
        let a = rand_vec(&mut rng, m * k);
        let b = rand_vec(&mut rng, k * n);

        let mut ref_nn = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for kk in 0..k {
                    ref_nn[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }

        let mut got = vec![0.0; m * n];
        mm_nn(&a, &b, &mut got, m, k, n);
        for (x, y) in got.iter().zip(ref_nn.iter()) {
            assert!((x - y).abs() < 1e-12);
        }

        // b stored transposed, result must match
        let mut bt = vec![0.0; k * n];
        for kk in 0..k {
            for j in 0..n {
                bt[j * k + kk] = b[kk * n + j];
            }
        }
        let mut got_nt = vec![0.0; m * n];
        mm_nt(&a, &bt, &mut got_nt, m, k, n);
        for (x, y) in got_nt.iter().zip(ref_nn.iter()) {
            assert!((x - y).abs() < 1e-12);
        }

        // a stored transposed
        let mut at = vec![0.0; m * k];
        for i in 0..m {
            for kk in 0..k {
                at[kk * m + i] = a[i * k + kk];
            }
        }
        let mut got_tn = vec![0.0; m * n];
        mm_tn(&at, &b, &mut got_tn, k, m, n);
        for (x, y) in got_tn.iter().zip(ref_nn.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_out_size_rules() {
        assert_eq!(conv_out_size(6, 5, 2, 1), Some(6));
        assert_eq!(conv_out_size(26, 5, 0, 1), Some(22));
        assert_eq!(conv_out_size(22, 7, 0, 1), Some(16));
        assert_eq!(conv_out_size(4, 7, 0, 1), None);
        assert_eq!(conv_out_size(7, 3, 0, 2), Some(3));
        assert_eq!(conv_out_size(8, 3, 0, 2), None);
    }

    #[test]
    fn conv_forward_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, c_in, h, w, c_out, k, pad, stride) = (2, 3, 6, 5, 2, 5, 2, 1);
        let input = rand_vec(&mut rng, n * c_in * h * w);
        let kernels = rand_vec(&mut rng, c_out * c_in * k * k);
        let oh = conv_out_size(h, k, pad, stride).unwrap();
        let ow = conv_out_size(w, k, pad, stride).unwrap();

        // direct definition: out[b,co,oy,ox] = sum over ci,dy,dx
        let mut oracle = vec![0.0; n * c_out * oh * ow];
        for b in 0..n {
            for co in 0..c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c_in {
                            for dy in 0..k {
                                for dx in 0..k {
                                    let iy = (oy * stride + dy) as isize - pad as isize;
                                    let ix = (ox * stride + dx) as isize - pad as isize;
                                    if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let iv = input
                                        [((b * c_in + ci) * h + iy as usize) * w + ix as usize];
                                    let kv = kernels[((co * c_in + ci) * k + dy) * k + dx];
                                    acc += iv * kv;
                                }
                            }
                        }
                        oracle[((b * c_out + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }

        let mut got = vec![0.0; n * c_out * oh * ow];
        conv2d_forward(&input, &kernels, &mut got, n, c_in, h, w, c_out, k, pad, stride);
        for (x, y) in got.iter().zip(oracle.iter()) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }
}
