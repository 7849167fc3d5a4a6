use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bilinear resize with half-pixel centers (align-corners = false).
///
/// Source coordinates are clamped to the input grid, so outputs never leave
/// the input's `[min, max]` range.
pub fn bilinear_upsample(map: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let (h, w) = map.hw()?;
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::invalid(format!(
            "zero-size upsample target {th}×{tw}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("cannot upsample an empty map"));
    }
    let src = map.data();
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (s.floor() as usize).min(inp - 1);
                let i1 = (i0 + 1).min(inp - 1);
                let frac = if i0 == i1 { 0.0 } else { s - i0 as f64 };
                (i0, i1, frac)
            })
            .collect()
    };
    let ys = taps(th, h);
    let xs = taps(tw, w);
    let mut out = Vec::with_capacity(th * tw);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    Tensor::new(vec![th, tw], out)
}

/// Sampled Gaussian of radius `ceil(3σ)`, normalized to unit sum.
pub fn gaussian_kernel_1d(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Mirror index without repeating the edge sample (`d c b | a b c d | c b a`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Separable Gaussian blur with reflect padding.
pub fn gaussian_smooth(map: &Tensor, sigma: f64) -> Result<Tensor> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::invalid(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let (h, w) = map.hw()?;
    let k = gaussian_kernel_1d(sigma);
    let r = (k.len() / 2) as isize;
    let src = map.data();
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * row[reflect(x as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[reflect(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    }
    Tensor::new(map.shape().to_vec(), out)
}

/// Per-position L2 norm of the channel vector of a `K×H×W` tensor.
pub fn frobenius_map(t: &Tensor) -> Result<Tensor> {
    let (k, h, w) = t.chw()?;
    let mut acc = vec![0.0; h * w];
    for c in 0..k {
        for (a, v) in acc.iter_mut().zip(t.channel(c)) {
            *a += v * v;
        }
    }
    Tensor::new(vec![h, w], acc.into_iter().map(f64::sqrt).collect())
}

/// Sum of squares over all channels and the `N×N` zero-padded window centred
/// at each position; equals the squared norm of that position's unfolded patch.
pub fn window_sq_sum(t: &Tensor, n: usize) -> Result<Tensor> {
    if n.is_multiple_of(2) {
        return Err(Error::invalid(format!("window size must be odd, got {n}")));
    }
    let (k, h, w) = t.chw()?;
    let r = (n / 2) as isize;
    let mut energy = vec![0.0; h * w];
    for c in 0..k {
        for (e, v) in energy.iter_mut().zip(t.channel(c)) {
            *e += v * v;
        }
    }
    // horizontal then vertical box sums
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let lo = (x as isize - r).max(0) as usize;
            let hi = ((x as isize + r) as usize).min(w - 1);
            rows[y * w + x] = energy[y * w + lo..=y * w + hi].iter().sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let lo = (y as isize - r).max(0) as usize;
        let hi = ((y as isize + r) as usize).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).sum();
        }
    }
    Tensor::new(vec![h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn upsample_constant() {
        let m = Tensor::full(&[3, 5], 5.0);
        let u = bilinear_upsample(&m, (17, 11)).unwrap();
        assert!(u.data().iter().all(|&v| (v - 5.0).abs() < 1e-15));
        let one = Tensor::full(&[1, 1], 2.5);
        let u = bilinear_upsample(&one, (4, 6)).unwrap();
        assert_eq!(u.shape(), &[4, 6]);
        assert!(u.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn upsample_rejects_zero_target() {
        let m = Tensor::full(&[2, 2], 1.0);
        assert!(matches!(
            bilinear_upsample(&m, (0, 4)),
            Err(Error::InvalidArgument(_))
        ));
    }

    /// Hand-rolled half-pixel interpolation for one output pixel.
    fn reference_pixel(m: &[[f64; 2]; 2], oy: usize, ox: usize, out: usize) -> f64 {
        let coord = |o: usize| -> (usize, usize, f64) {
            let s = (o as f64 + 0.5) * 2.0 / out as f64 - 0.5;
            if s <= 0.0 {
                (0, 0, 0.0)
            } else if s >= 1.0 {
                (1, 1, 0.0)
            } else {
                (0, 1, s)
            }
        };
        let (y0, y1, fy) = coord(oy);
        let (x0, x1, fx) = coord(ox);
        let a = m[y0][x0] + (m[y0][x1] - m[y0][x0]) * fx;
        let b = m[y1][x0] + (m[y1][x1] - m[y1][x0]) * fx;
        a + (b - a) * fy
    }

    #[test]
    fn upsample_matches_reference_interpolator() {
        let grid = [[0.0, 1.0], [1.0, 0.0]];
        let m = Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let u = bilinear_upsample(&m, (4, 4)).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert!((u.at2(y, x) - reference_pixel(&grid, y, x, 4)).abs() < 1e-12);
            }
        }
        // row 1 of the 4×4 output: s_y = 0.25, so [0.25, 0.375, 0.625, 0.75]
        let row1: Vec<f64> = (0..4).map(|x| u.at2(1, x)).collect();
        let expect = [0.25, 0.375, 0.625, 0.75];
        for (a, b) in row1.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn upsample_stays_within_input_range() {
        let m = random(&[4, 5], 9);
        let u = bilinear_upsample(&m, (23, 31)).unwrap();
        assert!(u.min() >= m.min() - 1e-15 && u.max() <= m.max() + 1e-15);
    }

    #[test]
    fn smooth_rejects_nonpositive_sigma() {
        let m = Tensor::zeros(&[4, 4]);
        assert!(gaussian_smooth(&m, 0.0).is_err());
        assert!(gaussian_smooth(&m, -1.0).is_err());
    }

    #[test]
    fn smooth_preserves_constants() {
        let m = Tensor::full(&[6, 9], 0.7);
        let s = gaussian_smooth(&m, 1.0).unwrap();
        assert!(s.max_abs_diff(&m) < 1e-15);
        // maps smaller than the kernel radius still work
        let tiny = Tensor::full(&[2, 1], 3.0);
        assert!(gaussian_smooth(&tiny, 2.0).unwrap().max_abs_diff(&tiny) < 1e-14);
    }

    #[test]
    fn impulse_response_is_outer_product() {
        let mut m = Tensor::zeros(&[21, 21]);
        m.data_mut()[10 * 21 + 10] = 1.0;
        let s = gaussian_smooth(&m, 1.0).unwrap();
        assert_eq!(s.argmax(), 10 * 21 + 10);
        // direct 2-D kernel built from the closed-form Gaussian
        let sigma: f64 = 1.0;
        let g: Vec<f64> = (-3i32..=3)
            .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let z: f64 = g.iter().sum();
        for y in 0..21i32 {
            for x in 0..21i32 {
                let (dy, dx) = (y - 10, x - 10);
                let expect = if dy.abs() <= 3 && dx.abs() <= 3 {
                    g[(dy + 3) as usize] * g[(dx + 3) as usize] / (z * z)
                } else {
                    0.0
                };
                assert!((s.at2(y as usize, x as usize) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn smoothing_is_linear() {
        let a = random(&[9, 12], 10);
        let b = random(&[9, 12], 11);
        let mix = a.zip_map(&b, |x, y| 2.0 * x - 0.5 * y).unwrap();
        let lhs = gaussian_smooth(&mix, 1.0).unwrap();
        let sa = gaussian_smooth(&a, 1.0).unwrap();
        let sb = gaussian_smooth(&b, 1.0).unwrap();
        let rhs = sa.zip_map(&sb, |x, y| 2.0 * x - 0.5 * y).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn reflect_indices() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn frobenius_cases() {
        let z = Tensor::zeros(&[3, 2, 2]);
        assert!(frobenius_map(&z).unwrap().data().iter().all(|&v| v == 0.0));
        let one = random(&[1, 3, 3], 12);
        let f = frobenius_map(&one).unwrap();
        for (a, b) in f.data().iter().zip(one.data()) {
            assert_eq!(*a, b.abs());
        }
        let t = random(&[8, 4, 4], 13);
        let f = frobenius_map(&t).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let mut s = 0.0;
                for c in 0..8 {
                    s += t.at3(c, y, x).powi(2);
                }
                assert!((f.at2(y, x) - s.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn window_sum_matches_unfold_column_norms() {
        let t = random(&[3, 5, 6], 14);
        let ws = window_sq_sum(&t, 3).unwrap();
        let u = crate::kernels::unfold(&t, 3, 1).unwrap();
        for p in 0..u.positions {
            let n2: f64 = u.column(p).iter().map(|v| v * v).sum();
            assert!((ws.data()[p] - n2).abs() < 1e-12);
        }
    }
}
