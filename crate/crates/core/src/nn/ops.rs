//! Forward and gradient kernels: conv2d (same padding, stride 1), relu,
//! 2x2 max pooling, 2x nearest-neighbor upsampling, channel concat,
//! sigmoid.

use ndarray::{Array1, Array2, Array3, Array4, NdFloat};

use crate::error::{Error, Result};

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

/// For kernel offset `kd` (0..k) with same padding, the output index range
/// whose shifted source index stays inside [0, n): out i maps to src
/// i + kd - pad.
fn valid_range(n: usize, kd: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kd);
    let hi = (n + pad - kd).min(n);
    (lo, hi)
}

/// Lowers a padded [C, H, W] input into a [C*K*K, H*W] column matrix.
/// Stride-1 shifts are contiguous, so each grid row is one slice copy.
fn im2col<F: NdFloat>(x: &Array3<F>, k: usize) -> Array2<F> {
    let (c, h, w) = x.dim();
    let pad = k / 2;
    let storage;
    let src = match x.as_slice() {
        Some(s) => s,
        None => {
            storage = x.to_owned();
            storage.as_slice().expect("owned array is contiguous")
        }
    };
    let mut cols = Array2::<F>::zeros((c * k * k, h * w));
    for ci in 0..c {
        for ki in 0..k {
            let (i_lo, i_hi) = valid_range(h, ki, pad);
            for kj in 0..k {
                let (j_lo, j_hi) = valid_range(w, kj, pad);
                if j_lo >= j_hi {
                    continue;
                }
                let row = (ci * k + ki) * k + kj;
                let mut out_row = cols.row_mut(row);
                let out = out_row.as_slice_mut().expect("column row is contiguous");
                for i in i_lo..i_hi {
                    let src_i = i + ki - pad;
                    let src_j = j_lo + kj - pad;
                    let src_base = (ci * h + src_i) * w + src_j;
                    let dst_base = i * w + j_lo;
                    let len = j_hi - j_lo;
                    out[dst_base..dst_base + len]
                        .copy_from_slice(&src[src_base..src_base + len]);
                }
            }
        }
    }
    cols
}

/// Transpose of [`im2col`]: accumulates a column matrix back into [C, H, W].
fn col2im<F: NdFloat>(cols: &Array2<F>, c: usize, h: usize, w: usize, k: usize) -> Array3<F> {
    let pad = k / 2;
    let mut x = Array3::<F>::zeros((c, h, w));
    let dst = x.as_slice_mut().expect("conv gradient is contiguous");
    for ci in 0..c {
        for ki in 0..k {
            let (i_lo, i_hi) = valid_range(h, ki, pad);
            for kj in 0..k {
                let (j_lo, j_hi) = valid_range(w, kj, pad);
                if j_lo >= j_hi {
                    continue;
                }
                let row = (ci * k + ki) * k + kj;
                let in_row = cols.row(row);
                let src = in_row.as_slice().expect("column row is contiguous");
                for i in i_lo..i_hi {
                    let src_i = i + ki - pad;
                    let src_j = j_lo + kj - pad;
                    let dst_base = (ci * h + src_i) * w + src_j;
                    let col_base = i * w + j_lo;
                    let len = j_hi - j_lo;
                    for (d, s) in dst[dst_base..dst_base + len]
                        .iter_mut()
                        .zip(&src[col_base..col_base + len])
                    {
                        *d = *d + *s;
                    }
                }
            }
        }
    }
    x
}

/// Cached forward state needed by the convolution backward pass.
pub struct ConvCache<F: NdFloat> {
    cols: Array2<F>,
    in_shape: (usize, usize, usize),
}

pub fn conv2d<F: NdFloat>(
    x: &Array3<F>,
    weight: &Array4<F>,
    bias: &Array1<F>,
) -> Result<(Array3<F>, ConvCache<F>)> {
    let (c, h, w) = x.dim();
    let (o, wc, kh, kw) = weight.dim();
    if wc != c || kh != kw || kh % 2 == 0 {
        return Err(shape_err("conv2d", &[c, h, w], &[o, wc, kh, kw]));
    }
    if bias.len() != o {
        return Err(shape_err("conv2d bias", &[o], &[bias.len()]));
    }
    let k = kh;
    let cols = im2col(x, k);
    let w2 = weight.view().into_shape_with_order((o, c * k * k)).unwrap();
    let mut out2 = w2.dot(&cols); // [O, H*W]
    for (mut row, &b) in out2.rows_mut().into_iter().zip(bias.iter()) {
        row.mapv_inplace(|v| v + b);
    }
    let out = out2.into_shape_with_order((o, h, w)).unwrap();
    Ok((out, ConvCache { cols, in_shape: (c, h, w) }))
}

pub fn conv2d_backward<F: NdFloat>(
    cache: &ConvCache<F>,
    weight: &Array4<F>,
    grad_out: &Array3<F>,
) -> Result<(Array3<F>, Array4<F>, Array1<F>)> {
    let (o, c, k, _) = weight.dim();
    let (go, h, w) = grad_out.dim();
    if go != o {
        return Err(shape_err("conv2d_backward", &[go, h, w], &[o, c, k, k]));
    }
    let gy2 = grad_out.view().into_shape_with_order((o, h * w)).unwrap();
    let gw2 = gy2.dot(&cache.cols.t()); // [O, C*K*K]
    let gw = gw2.into_shape_with_order((o, c, k, k)).unwrap();
    let gb = Array1::from_iter(gy2.rows().into_iter().map(|r| r.sum()));
    let w2 = weight.view().into_shape_with_order((o, c * k * k)).unwrap();
    let gcols = w2.t().dot(&gy2); // [C*K*K, H*W]
    let (ic, ih, iw) = cache.in_shape;
    let gx = col2im(&gcols, ic, ih, iw, k);
    Ok((gx, gw, gb))
}

pub fn relu<F: NdFloat>(x: &Array3<F>) -> Array3<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

pub fn relu_backward<F: NdFloat>(x: &Array3<F>, grad_out: &Array3<F>) -> Result<Array3<F>> {
    if x.dim() != grad_out.dim() {
        let (a, b, c) = x.dim();
        let (d, e, f) = grad_out.dim();
        return Err(shape_err("relu_backward", &[a, b, c], &[d, e, f]));
    }
    let mut g = grad_out.clone();
    g.zip_mut_with(x, |gv, &xv| {
        if xv <= F::zero() {
            *gv = F::zero();
        }
    });
    Ok(g)
}

/// 2x2 max pooling with stride 2; the cache holds flat argmax indices.
pub struct PoolCache {
    pub argmax: Vec<usize>,
    pub in_shape: (usize, usize, usize),
}

pub fn maxpool2<F: NdFloat>(x: &Array3<F>) -> Result<(Array3<F>, PoolCache)> {
    let (c, h, w) = x.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err("maxpool2", &[c, h, w], &[c, h / 2 * 2, w / 2 * 2]));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array3::<F>::zeros((c, oh, ow));
    let mut argmax = vec![0usize; c * oh * ow];
    for ci in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = x[(ci, 2 * i, 2 * j)];
                let mut best_idx = (2 * i) * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let v = x[(ci, 2 * i + di, 2 * j + dj)];
                    if v > best {
                        best = v;
                        best_idx = (2 * i + di) * w + (2 * j + dj);
                    }
                }
                out[(ci, i, j)] = best;
                argmax[(ci * oh + i) * ow + j] = best_idx;
            }
        }
    }
    Ok((out, PoolCache { argmax, in_shape: (c, h, w) }))
}

pub fn maxpool2_backward<F: NdFloat>(cache: &PoolCache, grad_out: &Array3<F>) -> Array3<F> {
    let (c, h, w) = cache.in_shape;
    let (_, oh, ow) = grad_out.dim();
    let mut gx = Array3::<F>::zeros((c, h, w));
    for ci in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let idx = cache.argmax[(ci * oh + i) * ow + j];
                gx[(ci, idx / w, idx % w)] += grad_out[(ci, i, j)];
            }
        }
    }
    gx
}

/// 2x nearest-neighbor upsampling.
pub fn upsample2<F: NdFloat>(x: &Array3<F>) -> Array3<F> {
    let (c, h, w) = x.dim();
    let mut out = Array3::<F>::zeros((c, 2 * h, 2 * w));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                let v = x[(ci, i, j)];
                out[(ci, 2 * i, 2 * j)] = v;
                out[(ci, 2 * i, 2 * j + 1)] = v;
                out[(ci, 2 * i + 1, 2 * j)] = v;
                out[(ci, 2 * i + 1, 2 * j + 1)] = v;
            }
        }
    }
    out
}

pub fn upsample2_backward<F: NdFloat>(grad_out: &Array3<F>) -> Result<Array3<F>> {
    let (c, h, w) = grad_out.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err("upsample2_backward", &[c, h, w], &[c, h / 2 * 2, w / 2 * 2]));
    }
    let mut gx = Array3::<F>::zeros((c, h / 2, w / 2));
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                gx[(ci, i / 2, j / 2)] += grad_out[(ci, i, j)];
            }
        }
    }
    Ok(gx)
}

/// Channel concatenation [A;B] along axis 0.
pub fn concat<F: NdFloat>(a: &Array3<F>, b: &Array3<F>) -> Result<Array3<F>> {
    let (ca, ha, wa) = a.dim();
    let (cb, hb, wb) = b.dim();
    if ha != hb || wa != wb {
        return Err(shape_err("concat", &[ca, ha, wa], &[cb, hb, wb]));
    }
    let mut out = Array3::<F>::zeros((ca + cb, ha, wa));
    out.slice_mut(ndarray::s![..ca, .., ..]).assign(a);
    out.slice_mut(ndarray::s![ca.., .., ..]).assign(b);
    Ok(out)
}

pub fn concat_backward<F: NdFloat>(grad_out: &Array3<F>, ca: usize) -> (Array3<F>, Array3<F>) {
    let ga = grad_out.slice(ndarray::s![..ca, .., ..]).to_owned();
    let gb = grad_out.slice(ndarray::s![ca.., .., ..]).to_owned();
    (ga, gb)
}

pub fn sigmoid<F: NdFloat>(x: &Array3<F>) -> Array3<F> {
    x.mapv(|v| F::one() / (F::one() + (-v).exp()))
}

/// Gradient through sigmoid given its output `y`.
pub fn sigmoid_backward<F: NdFloat>(y: &Array3<F>, grad_out: &Array3<F>) -> Result<Array3<F>> {
    if y.dim() != grad_out.dim() {
        let (a, b, c) = y.dim();
        let (d, e, f) = grad_out.dim();
        return Err(shape_err("sigmoid_backward", &[a, b, c], &[d, e, f]));
    }
    let mut g = grad_out.clone();
    g.zip_mut_with(y, |gv, &yv| *gv = *gv * yv * (F::one() - yv));
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array, Array1, Array3, Array4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand3(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Array3<f64> {
        Array::from_shape_fn((c, h, w), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central finite-difference check of dL/dx for L = sum(weighted f(x)).
    fn check_input_grad(
        x: &Array3<f64>,
        weights: &Array3<f64>,
        forward: &dyn Fn(&Array3<f64>) -> Array3<f64>,
        analytic: &Array3<f64>,
        tol: f64,
    ) {
        let eps = 1e-6;
        let mut xm = x.clone();
        for idx in 0..x.len() {
            let flat = xm.as_slice_mut().unwrap();
            let orig = flat[idx];
            flat[idx] = orig + eps;
            let lp = (forward(&xm) * weights).sum();
            xm.as_slice_mut().unwrap()[idx] = orig - eps;
            let lm = (forward(&xm) * weights).sum();
            xm.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let an = analytic.as_slice().unwrap()[idx];
            let denom = fd.abs().max(an.abs()).max(1e-4);
            assert!(
                (fd - an).abs() / denom < tol,
                "idx {idx}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn conv_identity_kernel_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand3(&mut rng, 1, 6, 6);
        let mut w = Array4::<f64>::zeros((1, 1, 3, 3));
        w[(0, 0, 1, 1)] = 1.0;
        let b = Array1::zeros(1);
        let (y, _) = conv2d(&x, &w, &b).unwrap();
        assert!(y.iter().zip(x.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn conv_shape_mismatch_reports_shapes() {
        let x = Array3::<f64>::zeros((2, 6, 6));
        let w = Array4::<f64>::zeros((4, 3, 3, 3));
        let b = Array1::zeros(4);
        match conv2d(&x, &w, &b) {
            Err(crate::error::Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 6, 6]);
                assert_eq!(right, vec![4, 3, 3, 3]);
            }
            other => panic!("expected shape error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (c, o) = (2, 3);
            let x = rand3(&mut rng, c, 6, 6);
            let w = Array::from_shape_fn((o, c, 3, 3), |_| rng.gen_range(-0.5..0.5));
            let b = Array::from_shape_fn(o, |_| rng.gen_range(-0.5..0.5));
            let gy = rand3(&mut rng, o, 6, 6);
            let (_, cache) = conv2d(&x, &w, &b).unwrap();
            let (gx, gw, gb) = conv2d_backward(&cache, &w, &gy).unwrap();

            check_input_grad(
                &x,
                &gy,
                &|xv| conv2d(xv, &w, &b).unwrap().0,
                &gx,
                1e-5,
            );
            // weight gradient
            let eps = 1e-6;
            let mut wm = w.clone();
            for idx in 0..w.len() {
                let orig = wm.as_slice_mut().unwrap()[idx];
                wm.as_slice_mut().unwrap()[idx] = orig + eps;
                let lp = (&conv2d(&x, &wm, &b).unwrap().0 * &gy).sum();
                wm.as_slice_mut().unwrap()[idx] = orig - eps;
                let lm = (&conv2d(&x, &wm, &b).unwrap().0 * &gy).sum();
                wm.as_slice_mut().unwrap()[idx] = orig;
                let fd = (lp - lm) / (2.0 * eps);
                let an = gw.as_slice().unwrap()[idx];
                assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1e-4) < 1e-5);
            }
            // bias gradient
            let mut bm = b.clone();
            for idx in 0..b.len() {
                let orig = bm[idx];
                bm[idx] = orig + eps;
                let lp = (&conv2d(&x, &w, &bm).unwrap().0 * &gy).sum();
                bm[idx] = orig - eps;
                let lm = (&conv2d(&x, &w, &bm).unwrap().0 * &gy).sum();
                bm[idx] = orig;
                let fd = (lp - lm) / (2.0 * eps);
                assert!((fd - gb[idx]).abs() / fd.abs().max(gb[idx].abs()).max(1e-4) < 1e-5);
            }
        }
    }

    #[test]
    fn relu_gradient_matches_finite_differences() {
        for seed in 10..15u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand3(&mut rng, 3, 6, 6);
            let gy = rand3(&mut rng, 3, 6, 6);
            let gx = relu_backward(&x, &gy).unwrap();
            check_input_grad(&x, &gy, &|xv| relu(xv), &gx, 1e-5);
        }
    }

    #[test]
    fn maxpool_constant_input_halves_resolution() {
        let x = Array3::<f64>::from_elem((2, 8, 8), 3.5);
        let (y, _) = maxpool2(&x).unwrap();
        assert_eq!(y.dim(), (2, 4, 4));
        assert!(y.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn maxpool_gradient_matches_finite_differences() {
        for seed in 20..25u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand3(&mut rng, 2, 6, 6);
            let (_, cache) = maxpool2(&x).unwrap();
            let gy = rand3(&mut rng, 2, 3, 3);
            let gx = maxpool2_backward(&cache, &gy);
            check_input_grad(&x, &gy, &|xv| maxpool2(xv).unwrap().0, &gx, 1e-5);
        }
    }

    #[test]
    fn upsample_gradient_matches_finite_differences() {
        for seed in 30..35u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand3(&mut rng, 2, 3, 3);
            let gy = rand3(&mut rng, 2, 6, 6);
            let gx = upsample2_backward(&gy).unwrap();
            check_input_grad(&x, &gy, &|xv| upsample2(xv), &gx, 1e-5);
        }
    }

    #[test]
    fn concat_and_split_are_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand3(&mut rng, 2, 4, 4);
        let b = rand3(&mut rng, 3, 4, 4);
        let cat = concat(&a, &b).unwrap();
        assert_eq!(cat.dim(), (5, 4, 4));
        let (ga, gb) = concat_backward(&cat, 2);
        assert_eq!(ga, a);
        assert_eq!(gb, b);
    }

    #[test]
    fn sigmoid_gradient_matches_finite_differences() {
        for seed in 40..45u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand3(&mut rng, 2, 6, 6);
            let gy = rand3(&mut rng, 2, 6, 6);
            let y = sigmoid(&x);
            let gx = sigmoid_backward(&y, &gy).unwrap();
            check_input_grad(&x, &gy, &|xv| sigmoid(xv), &gx, 1e-5);
        }
    }

    #[test]
    fn sigmoid_range_is_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand3(&mut rng, 1, 6, 6).mapv(|v| v * 100.0);
        let y = sigmoid(&x);
        assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
