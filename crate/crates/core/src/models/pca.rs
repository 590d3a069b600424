use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Error, Result};

/// Top-`p` principal axes of the row-centred vocabulary, each scaled by its
/// singular value. Row `i` of the result is `σ_i · v_i`, with descending `σ`
/// and the sign flipped so the largest-magnitude coordinate is positive.
pub fn principal_word_embeddings(vocab: &Array2<f64>, p: usize) -> Result<Array2<f64>> {
    let (v, d) = vocab.dim();
    if v < 2 {
        return Err(Error::Argument(format!("vocabulary needs at least 2 rows, got {v}")));
    }
    if p == 0 || p > v.min(d) {
        return Err(Error::Argument(format!("n_principal {p} outside 1..={}", v.min(d))));
    }
    if vocab.iter().any(|x| !x.is_finite()) {
        return Err(Error::Argument("vocabulary embedding has non-finite entries".into()));
    }
    let mean = vocab.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centred = vocab - &mean;
    let m = DMatrix::from_fn(v, d, |i, j| centred[[i, j]]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let sigma = svd.singular_values;
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));

    let mut out = Array2::zeros((p, d));
    for (row, &k) in order.iter().take(p).enumerate() {
        let axis: Vec<f64> = (0..d).map(|j| v_t[(k, j)]).collect();
        let mut pivot = 0;
        for j in 1..d {
            if axis[j].abs() > axis[pivot].abs() {
                pivot = j;
            }
        }
        let sign = if axis[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            out[[row, j]] = sign * sigma[k] * axis[j];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use ndarray::{array, Axis};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    fn centred(x: &Array2<f64>) -> Array2<f64> {
        x - &x.mean_axis(Axis(0)).unwrap()
    }

    /// Projection of the centred rows onto the span of the components.
    fn project(x: &Array2<f64>, comps: &Array2<f64>) -> Array2<f64> {
        let c = centred(x);
        let mut out = Array2::zeros(c.dim());
        for comp in comps.rows() {
            let norm2 = comp.dot(&comp);
            let coords = c.dot(&comp) / norm2;
            for (i, a) in coords.iter().enumerate() {
                out.row_mut(i).scaled_add(*a, &comp);
            }
        }
        out
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn rank_one_vocabulary_is_captured_by_one_component() {
        let a = array![1.0, -2.0, 0.5, 3.0, 4.0];
        let b = array![0.3, 1.0, -0.7];
        let vocab = Array2::from_shape_fn((5, 3), |(i, j)| a[i] * b[j]);
        let comps = principal_word_embeddings(&vocab, 1).unwrap();
        assert!(max_abs_diff(&project(&vocab, &comps), &centred(&vocab)) < 1e-6);
    }

    #[test]
    fn full_rank_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vocab = Array2::from_shape_simple_fn((12, 5), || StandardNormal.sample(&mut rng));
        let comps = principal_word_embeddings(&vocab, 5).unwrap();
        assert!(max_abs_diff(&project(&vocab, &comps), &centred(&vocab)) < 1e-6);
        let norms: Vec<f64> = comps.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        assert!(norms.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn sign_convention_makes_largest_coordinate_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vocab = Array2::from_shape_simple_fn((9, 4), || StandardNormal.sample(&mut rng));
        let comps = principal_word_embeddings(&vocab, 3).unwrap();
        for row in comps.rows() {
            let big = row.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn out_of_range_count_is_rejected() {
        let vocab = Array2::<f64>::zeros((4, 3));
        assert!(matches!(principal_word_embeddings(&vocab, 0), Err(Error::Argument(_))));
        assert!(matches!(principal_word_embeddings(&vocab, 4), Err(Error::Argument(_))));
        assert!(matches!(principal_word_embeddings(&Array2::zeros((1, 3)), 1), Err(Error::Argument(_))));
    }

    /// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
    fn jacobi_eigen(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
        let n = a.nrows();
        let mut vecs = Array2::<f64>::eye(n);
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[[i, j]].powi(2)).sum();
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[[p, q]].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[[k, p]], a[[k, q]]);
                        a[[k, p]] = c * akp - s * akq;
                        a[[k, q]] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                        a[[p, k]] = c * apk - s * aqk;
                        a[[q, k]] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let (vkp, vkq) = (vecs[[k, p]], vecs[[k, q]]);
                        vecs[[k, p]] = c * vkp - s * vkq;
                        vecs[[k, q]] = s * vkp + c * vkq;
                    }
                }
            }
        }
        ((0..n).map(|i| a[[i, i]]).collect(), vecs)
    }

    #[test]
    fn small_integer_matrix_matches_covariance_eigensolver() {
        let vocab = array![[2.0, 0.0, 1.0], [-1.0, 3.0, 0.0], [4.0, 1.0, -2.0], [0.0, -2.0, 5.0]];
        let comps = principal_word_embeddings(&vocab, 3).unwrap();
        let c = centred(&vocab);
        let (vals, vecs) = jacobi_eigen(c.t().dot(&c));
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        for (row, &k) in order.iter().enumerate() {
            let expected = vecs.column(k).mapv(|x| x * vals[k].max(0.0).sqrt());
            let got = comps.row(row);
            let same: f64 = got.iter().zip(expected.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let flipped: f64 = got.iter().zip(expected.iter()).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
            assert!(same.min(flipped) < 1e-8, "component {row}: {got} vs {expected}");
        }
    }
}
