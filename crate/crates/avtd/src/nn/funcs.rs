//! Elementwise and per-row layer primitives shared by the MLP forward and
//! backward passes: ReLU, layer normalization, feature normalization of the
//! penultimate representation, and inverted-scaling dropout.

use ndarray::{Array1, Array2};
use rand::Rng;

/// Layer-norm variance floor.
pub const LN_EPS: f64 = 1e-5;
/// Feature-norm denominator floor: rows with L2 norm below this divide by
/// the floor instead, keeping the map finite at the origin.
pub const FN_EPS: f64 = 1e-8;

pub fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

/// Per-row layer normalization with learnable scale and bias.
///
/// Uses the population variance (divide by feature count, not count-1).
/// Returns (output, xhat, inv_std) where xhat is the normalized input before
/// the affine map and inv_std has one entry per row; both feed the backward
/// pass.
pub fn layer_norm_forward(
    x: &Array2<f64>,
    scale: &Array1<f64>,
    bias: &Array1<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let (n, d) = x.dim();
    debug_assert_eq!(scale.len(), d);
    debug_assert_eq!(bias.len(), d);
    let mut xhat = Array2::zeros((n, d));
    let mut inv_std = Array1::zeros(n);
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let mut var = 0.0;
        for &v in row.iter() {
            let c = v - mean;
            var += c * c;
        }
        var /= d as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = istd;
        for j in 0..d {
            let h = (x[[i, j]] - mean) * istd;
            xhat[[i, j]] = h;
            out[[i, j]] = h * scale[j] + bias[j];
        }
    }
    (out, xhat, inv_std)
}

/// Backward pass for [`layer_norm_forward`].
///
/// Returns the gradient w.r.t. the input and accumulates gradients into
/// `gscale`/`gbias`.
pub fn layer_norm_backward(
    gout: &Array2<f64>,
    xhat: &Array2<f64>,
    inv_std: &Array1<f64>,
    scale: &Array1<f64>,
    gscale: &mut Array1<f64>,
    gbias: &mut Array1<f64>,
) -> Array2<f64> {
    let (n, d) = gout.dim();
    let mut gx = Array2::zeros((n, d));
    for i in 0..n {
        // h = dL/dxhat for this row.
        let mut h_mean = 0.0;
        let mut hx_mean = 0.0;
        for j in 0..d {
            let h = gout[[i, j]] * scale[j];
            h_mean += h;
            hx_mean += h * xhat[[i, j]];
            gscale[j] += gout[[i, j]] * xhat[[i, j]];
            gbias[j] += gout[[i, j]];
        }
        h_mean /= d as f64;
        hx_mean /= d as f64;
        for j in 0..d {
            let h = gout[[i, j]] * scale[j];
            gx[[i, j]] = inv_std[i] * (h - h_mean - xhat[[i, j]] * hx_mean);
        }
    }
    gx
}

/// Per-row L2 normalization of the feature vector before the final linear
/// layer: f ↦ f / max(‖f‖₂, FN_EPS). Returns (fhat, raw_norms).
pub fn feature_normalize(f: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let (n, d) = f.dim();
    let mut out = Array2::zeros((n, d));
    let mut norms = Array1::zeros(n);
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..d {
            s += f[[i, j]] * f[[i, j]];
        }
        let raw = s.sqrt();
        norms[i] = raw;
        let denom = raw.max(FN_EPS);
        for j in 0..d {
            out[[i, j]] = f[[i, j]] / denom;
        }
    }
    (out, norms)
}

/// Backward pass for [`feature_normalize`]. `fhat` is the normalized output,
/// `raw_norms` the pre-floor row norms.
pub fn feature_normalize_backward(
    gout: &Array2<f64>,
    fhat: &Array2<f64>,
    raw_norms: &Array1<f64>,
) -> Array2<f64> {
    let (n, d) = gout.dim();
    let mut gx = Array2::zeros((n, d));
    for i in 0..n {
        let raw = raw_norms[i];
        if raw >= FN_EPS {
            // d/df (f/‖f‖) = (I - f̂f̂ᵀ)/‖f‖
            let mut dot = 0.0;
            for j in 0..d {
                dot += gout[[i, j]] * fhat[[i, j]];
            }
            for j in 0..d {
                gx[[i, j]] = (gout[[i, j]] - fhat[[i, j]] * dot) / raw;
            }
        } else {
            // Below the floor the map is linear: f / FN_EPS.
            for j in 0..d {
                gx[[i, j]] = gout[[i, j]] / FN_EPS;
            }
        }
    }
    gx
}

/// Samples an inverted-scaling dropout mask: each entry is 0 with probability
/// `p`, else 1/(1-p), so the expected value of mask*x equals x.
pub fn sample_dropout_mask<R: Rng + ?Sized>(
    shape: (usize, usize),
    p: f64,
    rng: &mut R,
) -> Array2<f64> {
    debug_assert!((0.0..1.0).contains(&p));
    let keep_scale = 1.0 / (1.0 - p);
    Array2::from_shape_fn(shape, |_| {
        if rng.gen::<f64>() < p {
            0.0
        } else {
            keep_scale
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_clamps_negatives() {
        let mut x = array![[1.5, -2.0, 0.0], [-0.1, 3.0, -7.0]];
        relu_inplace(&mut x);
        assert_eq!(x, array![[1.5, 0.0, 0.0], [0.0, 3.0, 0.0]]);
    }

    #[test]
    fn layer_norm_two_point_row() {
        // Row (1, 3): mean 2, population variance 1, so the normalized values
        // are ±1/sqrt(1 + 1e-5) exactly.
        let x = array![[1.0, 3.0]];
        let scale = Array1::ones(2);
        let bias = Array1::zeros(2);
        let (out, xhat, inv_std) = layer_norm_forward(&x, &scale, &bias);
        let want = 1.0 / (1.0 + LN_EPS).sqrt();
        assert_eq!(out[[0, 0]], -want);
        assert_eq!(out[[0, 1]], want);
        assert_eq!(xhat[[0, 0]], -want);
        assert_eq!(inv_std[0], want);
    }

    #[test]
    fn layer_norm_affine_applies_after_normalization() {
        let x = array![[2.0, 4.0, 6.0]];
        let scale = array![2.0, 2.0, 2.0];
        let bias = array![1.0, 1.0, 1.0];
        let (out, xhat, _) = layer_norm_forward(&x, &scale, &bias);
        for j in 0..3 {
            assert!((out[[0, j]] - (2.0 * xhat[[0, j]] + 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((5, 64), |_| {
            rng.sample::<f64, _>(rand_distr::StandardNormal) * 3.0 + 1.0
        });
        let scale = Array1::ones(64);
        let bias = Array1::zeros(64);
        let (out, _, _) = layer_norm_forward(&x, &scale, &bias);
        for i in 0..5 {
            let row = out.row(i);
            let mean = row.sum() / 64.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4, "variance {var} off");
        }
    }

    #[test]
    fn feature_norm_unit_rows() {
        let f = array![[3.0, 4.0], [0.0, 0.0]];
        let (fhat, norms) = feature_normalize(&f);
        assert!((fhat[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((fhat[[0, 1]] - 0.8).abs() < 1e-15);
        assert_eq!(norms[0], 5.0);
        // Zero row stays zero (divided by the floor).
        assert_eq!(fhat[[1, 0]], 0.0);
        assert_eq!(norms[1], 0.0);
    }

    #[test]
    fn feature_norm_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Array2::from_shape_fn((3, 16), |_| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let (a, _) = feature_normalize(&f);
        let (b, _) = feature_normalize(&(&f * 37.5));
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_mask_values_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = 0.3;
        let mask = sample_dropout_mask((200, 50), p, &mut rng);
        let keep = 1.0 / (1.0 - p);
        let mut sum = 0.0;
        for &v in mask.iter() {
            assert!(v == 0.0 || (v - keep).abs() < 1e-15);
            sum += v;
        }
        let mean = sum / (200.0 * 50.0);
        assert!((mean - 1.0).abs() < 0.02, "mask mean {mean} not near 1");
    }
}
