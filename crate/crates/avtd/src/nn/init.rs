//! Orthogonal weight initialization.
//!
//! Draws a Gaussian matrix, takes the thin QR factorization by Householder
//! reflections, and sign-corrects the columns with the signs of R's diagonal
//! so the distribution is uniform over the orthogonal group rather than
//! biased by the factorization.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

/// Returns a `rows x cols` matrix W with `WᵀW = gain²·I` when `cols <= rows`,
/// and `WWᵀ = gain²·I` otherwise.
pub fn orthogonal_init<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    gain: f64,
    rng: &mut R,
) -> Array2<f64> {
    assert!(rows >= 1 && cols >= 1, "orthogonal_init needs positive dims");
    assert!(gain > 0.0, "orthogonal_init needs positive gain");
    let transpose = cols > rows;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    let a = Array2::from_shape_fn((r, c), |_| rng.sample::<f64, _>(StandardNormal));
    let q = thin_q(a) * gain;
    if transpose {
        // Materialize in standard layout; a bare transpose view keeps
        // column-major strides when cloned.
        q.t().as_standard_layout().to_owned()
    } else {
        q
    }
}

/// Thin Q factor (r x c, r >= c) with columns sign-corrected by diag(R).
fn thin_q(mut a: Array2<f64>) -> Array2<f64> {
    let (r, c) = a.dim();
    debug_assert!(r >= c);
    let mut betas = Array1::zeros(c);
    let mut diag_signs = Array1::from_elem(c, 1.0f64);

    // Factorize: after this loop, column k of `a` holds the Householder
    // vector v_k below the diagonal (v_k[k] = 1 implicitly).
    for k in 0..c {
        let mut norm_sq = 0.0;
        for i in k..r {
            norm_sq += a[[i, k]] * a[[i, k]];
        }
        let norm = norm_sq.sqrt();
        if norm == 0.0 {
            // Degenerate column from an exact-zero Gaussian draw; leave the
            // reflection as identity. Probability zero in practice.
            betas[k] = 0.0;
            continue;
        }
        let alpha = if a[[k, k]] >= 0.0 { -norm } else { norm };
        diag_signs[k] = if alpha >= 0.0 { 1.0 } else { -1.0 };
        let v0 = a[[k, k]] - alpha;
        let mut vnorm_sq = 0.0;
        for i in k + 1..r {
            vnorm_sq += a[[i, k]] * a[[i, k]];
        }
        vnorm_sq += v0 * v0;
        betas[k] = 2.0 / vnorm_sq;
        a[[k, k]] = v0;
        // Apply H_k to the remaining columns.
        for j in k + 1..c {
            let mut dot = 0.0;
            for i in k..r {
                dot += a[[i, k]] * a[[i, j]];
            }
            let s = betas[k] * dot;
            for i in k..r {
                a[[i, j]] -= s * a[[i, k]];
            }
        }
        // Record alpha on the diagonal position is not needed beyond its sign.
    }

    // Accumulate Q's first c columns: Q = H_0 H_1 ... H_{c-1} E.
    let mut q = Array2::zeros((r, c));
    for j in 0..c {
        q[[j, j]] = 1.0;
    }
    for k in (0..c).rev() {
        if betas[k] == 0.0 {
            continue;
        }
        for j in 0..c {
            let mut dot = 0.0;
            for i in k..r {
                dot += a[[i, k]] * q[[i, j]];
            }
            let s = betas[k] * dot;
            for i in k..r {
                q[[i, j]] -= s * a[[i, k]];
            }
        }
    }
    // Sign correction: make the factorization unique (R diagonal positive).
    for j in 0..c {
        if diag_signs[j] < 0.0 {
            for i in 0..r {
                q[[i, j]] = -q[[i, j]];
            }
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gram_error(w: &Array2<f64>, gain: f64) -> f64 {
        let (r, c) = w.dim();
        let g = if c <= r {
            w.t().dot(w)
        } else {
            w.dot(&w.t())
        };
        let n = g.nrows();
        let mut err = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { gain * gain } else { 0.0 };
                err = err.max((g[[i, j]] - want).abs());
            }
        }
        err
    }

    #[test]
    fn gram_condition_4x4_sqrt2() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = orthogonal_init(4, 4, 2.0f64.sqrt(), &mut rng);
        assert!(gram_error(&w, 2.0f64.sqrt()) < 1e-9);
    }

    #[test]
    fn scalar_case_is_sign() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = orthogonal_init(1, 1, 1.0, &mut rng);
            assert!((w[[0, 0]].abs() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn gram_condition_tall() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = orthogonal_init(8, 3, 1.0, &mut rng);
        assert!(gram_error(&w, 1.0) < 1e-9);
    }

    #[test]
    fn gram_condition_many_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(r, c) in &[
            (2usize, 2usize),
            (5, 3),
            (3, 5),
            (256, 256),
            (260, 256),
            (4, 256),
            (256, 1),
            (1, 7),
        ] {
            let w = orthogonal_init(r, c, 2.0f64.sqrt(), &mut rng);
            assert!(
                gram_error(&w, 2.0f64.sqrt()) < 1e-9,
                "gram error too large for {r}x{c}"
            );
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = orthogonal_init(6, 4, 1.0, &mut r1);
        let b = orthogonal_init(6, 4, 1.0, &mut r2);
        assert_eq!(a, b);
    }

    #[test]
    fn different_draws_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = orthogonal_init(6, 4, 1.0, &mut rng);
        let b = orthogonal_init(6, 4, 1.0, &mut rng);
        assert_ne!(a, b);
    }
}
