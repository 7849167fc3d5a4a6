use crate::error::Result;
use crate::tensor::Tensor;

/// Non-overlapping `size×size` max pooling. Returns the pooled tensor and, for
/// each output element, the flat input index of the first maximum in its window.
pub fn maxpool2d(input: &Tensor, size: usize) -> Result<(Tensor, Vec<usize>)> {
    let (k, h, w) = input.chw()?;
    let (oh, ow) = (h / size, w / size);
    let src = input.data();
    let mut out = Vec::with_capacity(k * oh * ow);
    let mut idx = Vec::with_capacity(k * oh * ow);
    for c in 0..k {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (c * h + oy * size) * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let i = (c * h + oy * size + dy) * w + ox * size + dx;
                        if src[i] > src[best] {
                            best = i;
                        }
                    }
                }
                out.push(src[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![k, oh, ow], out)?, idx))
}

pub fn maxpool2d_backward(upstream: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Tensor {
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&i, &v) in argmax.iter().zip(upstream.data()) {
        gd[i] += v;
    }
    g
}

/// Spatial mean of every channel: `K×H×W → K`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let (k, h, w) = input.chw()?;
    let n = (h * w) as f64;
    Tensor::new(
        vec![k],
        (0..k)
            .map(|c| input.channel(c).iter().sum::<f64>() / n)
            .collect(),
    )
}

pub fn global_avg_pool_backward(upstream: &Tensor, input_shape: &[usize]) -> Tensor {
    let (h, w) = (input_shape[1], input_shape[2]);
    let n = (h * w) as f64;
    Tensor::from_fn(input_shape, |i| upstream.data()[i / (h * w)] / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxpool_routes_gradient_to_first_max() {
        let x = Tensor::new(vec![1, 2, 4], vec![1.0, 5.0, 2.0, 2.0, 5.0, 0.0, 2.0, 1.0]).unwrap();
        let (y, idx) = maxpool2d(&x, 2).unwrap();
        assert_eq!(y.data(), &[5.0, 2.0]);
        assert_eq!(idx, vec![1, 2]);
        let g = maxpool2d_backward(
            &Tensor::new(vec![1, 1, 2], vec![1.0, 3.0]).unwrap(),
            &idx,
            x.shape(),
        );
        assert_eq!(g.data(), &[0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn gap_roundtrip() {
        let x = Tensor::from_fn(&[2, 2, 2], |i| i as f64);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.data(), &[1.5, 5.5]);
        let g = global_avg_pool_backward(&Tensor::new(vec![2], vec![4.0, 8.0]).unwrap(), x.shape());
        assert_eq!(g.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }
}
