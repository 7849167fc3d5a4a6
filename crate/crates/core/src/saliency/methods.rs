use super::{Method, SaliencyMap, VilKind};
use crate::error::{Error, Result};
use crate::kernels::{bilinear_upsample, frobenius_map, unfold, window_sq_sum};
use crate::net::{GradMode, HookRecord, Model, Tape};
use crate::tensor::Tensor;

fn channel_sum(t: &Tensor) -> Result<Tensor> {
    let (k, h, w) = t.chw()?;
    let mut out = vec![0.0; h * w];
    for c in 0..k {
        for (o, v) in out.iter_mut().zip(t.channel(c)) {
            *o += v;
        }
    }
    Tensor::new(vec![h, w], out)
}

/// `x ⊙ g` summed over channels; signed.
pub fn input_x_grad(x: &Tensor, g: &Tensor) -> Result<SaliencyMap> {
    let prod = x.zip_map(g, |a, b| a * b)?;
    SaliencyMap::new(channel_sum(&prod)?, Method::InputXGrad, vec![])
}

pub(crate) fn gbp_from_gradient(g: &Tensor) -> Result<SaliencyMap> {
    let clamped = g.map(|v| v.max(0.0));
    SaliencyMap::new(channel_sum(&clamped)?, Method::GuidedBackprop, vec![])
}

/// Guided-mode input gradient with negatives clamped to zero.
pub fn guided_backprop_map(model: &Model, x: &Tensor, target_class: usize) -> Result<SaliencyMap> {
    let mut tape = Tape::new(model);
    tape.forward(x, &[])?;
    let back = tape.backward(target_class, GradMode::Guided)?;
    gbp_from_gradient(&back.input_grad)
}

/// Grad-CAM at the hooked layer's resolution: `ReLU(Σ_k mean(g_k) · x_k)`.
pub fn grad_cam_coarse(activation: &Tensor, gradient: &Tensor) -> Result<Tensor> {
    activation.check_same_shape(gradient)?;
    let (k, h, w) = activation.chw()?;
    let n = (h * w) as f64;
    let mut s = vec![0.0; h * w];
    for c in 0..k {
        let alpha = gradient.channel(c).iter().sum::<f64>() / n;
        for (o, v) in s.iter_mut().zip(activation.channel(c)) {
            *o += alpha * v;
        }
    }
    Tensor::new(vec![h, w], s.into_iter().map(|v| v.max(0.0)).collect())
}

pub fn grad_cam(
    record: &HookRecord,
    layer: &str,
    input_size: (usize, usize),
) -> Result<SaliencyMap> {
    let (a, g) = record.pair(layer)?;
    let coarse = grad_cam_coarse(a, g)?;
    SaliencyMap::new(
        bilinear_upsample(&coarse, input_size)?,
        Method::GradCam,
        vec![layer.to_string()],
    )
}

pub fn guided_grad_cam(gc: &SaliencyMap, gbp: &SaliencyMap) -> Result<SaliencyMap> {
    let values = gc.values.zip_map(&gbp.values, |a, b| a * b)?;
    SaliencyMap::new(values, Method::GuidedGradCam, gc.hook_layers.clone())
}

/// Per-position Frobenius norm of the VIL's spatial contribution, at the
/// hooked layer's resolution.
pub fn normgrad_coarse(activation: &Tensor, gradient: &Tensor, kind: VilKind) -> Result<Tensor> {
    activation.check_same_shape(gradient)?;
    match kind {
        VilKind::Bias => frobenius_map(gradient),
        VilKind::Scaling => frobenius_map(&activation.zip_map(gradient, |a, b| a * b)?),
        VilKind::Conv(n) => {
            let gn = frobenius_map(gradient)?;
            let xn = window_sq_sum(activation, n)?;
            gn.zip_map(&xn, |g, x| g * x.sqrt())
        }
    }
}

pub fn normgrad_single(
    record: &HookRecord,
    layer: &str,
    kind: VilKind,
    input_size: (usize, usize),
) -> Result<SaliencyMap> {
    let (a, g) = record.pair(layer)?;
    let coarse = normgrad_coarse(a, g, kind)?;
    SaliencyMap::new(
        bilinear_upsample(&coarse, input_size)?,
        Method::NormGrad {
            kind,
            combined: false,
        },
        vec![layer.to_string()],
    )
}

/// Brute-force conv-VIL map: at each position forms the `K × N²K` outer
/// product of the gradient vector with the unfolded activation patch and
/// takes its Frobenius norm.
pub fn normgrad_oracle(activation: &Tensor, gradient: &Tensor, n: usize) -> Result<Tensor> {
    activation.check_same_shape(gradient)?;
    let (k, h, w) = gradient.chw()?;
    if n.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "conv VIL size must be odd, got {n}"
        )));
    }
    let cols = unfold(activation, n, (n - 1) / 2)?;
    let mut out = vec![0.0; h * w];
    let mut outer = vec![0.0; k * cols.patch_dim];
    for (u, o) in out.iter_mut().enumerate() {
        let patch = cols.column(u);
        for c in 0..k {
            let gu = gradient.data()[c * h * w + u];
            for (j, p) in patch.iter().enumerate() {
                outer[c * cols.patch_dim + j] = gu * p;
            }
        }
        *o = outer.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    Tensor::new(vec![h, w], out)
}

/// Max-normalizes each map and takes the elementwise geometric mean.
pub fn normgrad_combine(maps: &[SaliencyMap]) -> Result<SaliencyMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("cannot combine an empty list of maps"))?;
    let kind = first.vil_kind().ok_or_else(|| {
        Error::invalid(format!(
            "combining requires NormGrad maps, got {}",
            first.method
        ))
    })?;
    for m in maps {
        if m.vil_kind() != Some(kind) {
            return Err(Error::invalid(format!(
                "mixed VIL kinds: {} and {}",
                first.method, m.method
            )));
        }
        m.values.check_same_shape(&first.values)?;
    }
    let inv_j = 1.0 / maps.len() as f64;
    let mut acc = vec![1.0; first.values.len()];
    for m in maps {
        let peak = m.values.max();
        let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
        for (a, v) in acc.iter_mut().zip(m.values.data()) {
            *a *= (v * scale).max(0.0).powf(inv_j);
        }
    }
    let values = Tensor::new(first.values.shape().to_vec(), acc)?;
    SaliencyMap::new(
        values,
        Method::NormGrad {
            kind,
            combined: true,
        },
        maps.iter().flat_map(|m| m.hook_layers.clone()).collect(),
    )
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

    fn ng(values: Tensor, kind: VilKind) -> SaliencyMap {
        SaliencyMap::new(
            values,
            Method::NormGrad {
                kind,
                combined: false,
            },
            vec!["l".into()],
        )
        .unwrap()
    }

    #[test]
    fn ixg_examples() {
        let x = random(&[1, 5, 6], 1);
        let g = random(&[1, 5, 6], 2);
        assert!(input_x_grad(&x, &Tensor::zeros(&[1, 5, 6]))
            .unwrap()
            .values
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let ones = Tensor::full(&[1, 5, 6], 1.0);
        assert_eq!(input_x_grad(&ones, &g).unwrap().values.data(), g.data());
        let m = input_x_grad(&x, &g).unwrap();
        for y in 0..5 {
            for xx in 0..6 {
                let expect = x.at3(0, y, xx) * g.at3(0, y, xx);
                assert!((m.values.at2(y, xx) - expect).abs() < 1e-12);
            }
        }
        assert!(input_x_grad(&x, &random(&[1, 5, 5], 3)).is_err());
    }

    #[test]
    fn grad_cam_constant_gradient_on_one_channel() {
        let a = random(&[3, 4, 4], 4);
        let mut g = Tensor::zeros(&[3, 4, 4]);
        g.data_mut()[..16].fill(0.7);
        let m = grad_cam_coarse(&a, &g).unwrap();
        for (i, v) in m.data().iter().enumerate() {
            assert!((v - (0.7 * a.data()[i]).max(0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_cam_negative_s_is_zero() {
        let a = Tensor::full(&[2, 3, 3], 1.0);
        let g = Tensor::full(&[2, 3, 3], -0.5);
        assert!(grad_cam_coarse(&a, &g)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn guided_grad_cam_examples() {
        let gc =
            SaliencyMap::new(random(&[4, 4], 5).map(f64::abs), Method::GradCam, vec![]).unwrap();
        let ones =
            SaliencyMap::new(Tensor::full(&[4, 4], 1.0), Method::GuidedBackprop, vec![]).unwrap();
        assert_eq!(guided_grad_cam(&gc, &ones).unwrap().values, gc.values);
        let zero = SaliencyMap::new(Tensor::zeros(&[4, 4]), Method::GradCam, vec![]).unwrap();
        let gbp = SaliencyMap::new(random(&[4, 4], 6), Method::GuidedBackprop, vec![]).unwrap();
        assert!(guided_grad_cam(&zero, &gbp)
            .unwrap()
            .values
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let p = guided_grad_cam(&gc, &gbp).unwrap();
        for i in 0..16 {
            assert!(
                (p.values.data()[i] - gc.values.data()[i] * gbp.values.data()[i]).abs() < 1e-12
            );
        }
    }

    #[test]
    fn normgrad_zero_gradient_is_zero_for_every_kind() {
        let a = random(&[4, 5, 5], 7);
        let g = Tensor::zeros(&[4, 5, 5]);
        for kind in [
            VilKind::Bias,
            VilKind::Scaling,
            VilKind::Conv(1),
            VilKind::Conv(3),
        ] {
            assert!(normgrad_coarse(&a, &g, kind)
                .unwrap()
                .data()
                .iter()
                .all(|&v| v == 0.0));
        }
    }

    #[test]
    fn conv1x1_with_unit_activation_is_gradient_norm() {
        let a = Tensor::full(&[1, 5, 5], 1.0);
        let g = random(&[1, 5, 5], 8);
        let m = normgrad_coarse(&a, &g, VilKind::Conv(1)).unwrap();
        for (v, gv) in m.data().iter().zip(g.data()) {
            assert!((v - gv.abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn oracle_scalar_case() {
        let a = random(&[1, 4, 4], 9);
        let g = random(&[1, 4, 4], 10);
        let o = normgrad_oracle(&a, &g, 1).unwrap();
        for i in 0..16 {
            assert!((o.data()[i] - (a.data()[i] * g.data()[i]).abs()).abs() < 1e-15);
        }
    }

    #[test]
    fn factorized_matches_oracle() {
        for (seed, k) in [(11u64, 4usize), (12, 8), (13, 16)] {
            let a = random(&[k, 6, 7], seed);
            let g = random(&[k, 6, 7], seed + 100);
            for n in [1, 3] {
                let f = normgrad_coarse(&a, &g, VilKind::Conv(n)).unwrap();
                let o = normgrad_oracle(&a, &g, n).unwrap();
                let rel = crate::tensor::relative_error(f.data(), o.data());
                assert!(rel < 1e-10, "k={k} n={n} rel={rel}");
            }
        }
    }

    #[test]
    fn combine_single_map_is_normalized() {
        let v = random(&[5, 5], 14).map(f64::abs);
        let c = normgrad_combine(&[ng(v.clone(), VilKind::Scaling)]).unwrap();
        let peak = v.max();
        for (a, b) in c.values.data().iter().zip(v.data()) {
            assert!((a - b / peak).abs() < 1e-15);
        }
        assert!(c.combined());
    }

    #[test]
    fn combine_identical_maps_is_idempotent() {
        let v = random(&[5, 5], 15).map(f64::abs);
        let one = normgrad_combine(&[ng(v.clone(), VilKind::Conv(3))]).unwrap();
        let two =
            normgrad_combine(&[ng(v.clone(), VilKind::Conv(3)), ng(v, VilKind::Conv(3))]).unwrap();
        assert!(one.values.max_abs_diff(&two.values) < 1e-15);
    }

    #[test]
    fn combine_zero_annihilates() {
        let a = random(&[4, 4], 16).map(|v| v.abs() + 0.1);
        let mut b = random(&[4, 4], 17).map(|v| v.abs() + 0.1);
        b.data_mut()[5] = 0.0;
        let c = normgrad_combine(&[ng(a, VilKind::Scaling), ng(b, VilKind::Scaling)]).unwrap();
        assert_eq!(c.values.data()[5], 0.0);
    }

    #[test]
    fn combine_rejects_mixed_inputs() {
        let v = Tensor::full(&[4, 4], 1.0);
        assert!(matches!(
            normgrad_combine(&[
                ng(v.clone(), VilKind::Scaling),
                ng(v.clone(), VilKind::Conv(1))
            ]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            normgrad_combine(&[
                ng(v, VilKind::Scaling),
                ng(Tensor::full(&[4, 5], 1.0), VilKind::Scaling)
            ]),
            Err(Error::Dimension(_))
        ));
        assert!(normgrad_combine(&[]).is_err());
    }

    #[test]
    fn missing_hook_is_state_error() {
        let rec = HookRecord::new();
        assert!(matches!(
            grad_cam(&rec, "block4.act", (8, 8)),
            Err(Error::State(_))
        ));
        assert!(matches!(
            normgrad_single(&rec, "block4.act", VilKind::Scaling, (8, 8)),
            Err(Error::State(_))
        ));
    }
}
