//! Integer least squares on float DD ambiguities (LAMBDA), ratio validation and ADOP.

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AmbiguityError {
    #[error("ambiguity covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub const DEFAULT_RATIO_THRESHOLD: f64 = 3.0;

/// `Q = Lᵀ D L` with `L` unit lower triangular.
fn ltdl(q: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>), AmbiguityError> {
    let n = q.nrows();
    let mut a = q.clone();
    let mut l = DMatrix::zeros(n, n);
    let mut d = DVector::zeros(n);
    for i in (0..n).rev() {
        d[i] = a[(i, i)];
        if !(d[i] > 0.0) || !d[i].is_finite() {
            return Err(AmbiguityError::NotPositiveDefinite);
        }
        let s = d[i].sqrt();
        for j in 0..=i {
            l[(i, j)] = a[(i, j)] / s;
        }
        for j in 0..i {
            for k in 0..=j {
                a[(j, k)] -= l[(i, k)] * l[(i, j)];
            }
        }
        let lii = l[(i, i)];
        for j in 0..=i {
            l[(i, j)] /= lii;
        }
    }
    Ok((l, d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decorrelation {
    /// Unimodular integer transform.
    pub z: DMatrix<i64>,
    /// `Zᵀ Q Z`.
    pub q: DMatrix<f64>,
    l: DMatrix<f64>,
    d: DVector<f64>,
}

impl Decorrelation {
    pub fn z_f64(&self) -> DMatrix<f64> {
        self.z.map(|v| v as f64)
    }
}

fn check_square(q: &DMatrix<f64>) -> Result<(), AmbiguityError> {
    if q.nrows() != q.ncols() || q.nrows() == 0 {
        return Err(AmbiguityError::Dimension(format!("{}x{}", q.nrows(), q.ncols())));
    }
    Ok(())
}

/// Integer Gauss reductions and permutations until the conditional variances are ordered.
pub fn decorrelate(q: &DMatrix<f64>) -> Result<Decorrelation, AmbiguityError> {
    check_square(q)?;
    let n = q.nrows();
    let (mut l, mut d) = ltdl(q)?;
    let mut z = DMatrix::<f64>::identity(n, n);
    let mut i1 = n as isize - 2;
    let mut swapped = true;
    while swapped {
        let mut i = n as isize - 1;
        swapped = false;
        while !swapped && i > 0 {
            i -= 1;
            let iu = i as usize;
            if i <= i1 {
                for j in iu + 1..n {
                    let mu = l[(j, iu)].round();
                    if mu != 0.0 {
                        for r in j..n {
                            l[(r, iu)] -= mu * l[(r, j)];
                        }
                        for r in 0..n {
                            z[(r, iu)] -= mu * z[(r, j)];
                        }
                    }
                }
            }
            let delta = d[iu] + l[(iu + 1, iu)].powi(2) * d[iu + 1];
            // uncorrelated neighbours are left in place
            if delta < d[iu + 1] && l[(iu + 1, iu)] != 0.0 {
                let lambda = d[iu + 1] * l[(iu + 1, iu)] / delta;
                let eta = d[iu] / delta;
                d[iu] = eta * d[iu + 1];
                d[iu + 1] = delta;
                for c in 0..iu {
                    let a0 = l[(iu, c)];
                    let a1 = l[(iu + 1, c)];
                    l[(iu, c)] = -l[(iu + 1, iu)] * a0 + a1;
                    l[(iu + 1, c)] = eta * a0 + lambda * a1;
                }
                l[(iu + 1, iu)] = lambda;
                for r in iu + 2..n {
                    let t = l[(r, iu)];
                    l[(r, iu)] = l[(r, iu + 1)];
                    l[(r, iu + 1)] = t;
                }
                z.swap_columns(iu, iu + 1);
                i1 = i;
                swapped = true;
            }
        }
    }
    let qz = z.transpose() * q * &z;
    Ok(Decorrelation {
        z: z.map(|v| v.round() as i64),
        q: 0.5 * (&qz + qz.transpose()),
        l,
        d,
    })
}

/// Best integer candidates and their squared distances `(â − a)ᵀ Q⁻¹ (â − a)`, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub candidates: Vec<DVector<f64>>,
    pub sqnorms: Vec<f64>,
}

/// Depth-first enumeration with a shrinking ellipsoid over the `Lᵀ D L` factors.
fn ssearch(ahat: &DVector<f64>, l: &DMatrix<f64>, d: &DVector<f64>, ncands: usize) -> SearchResult {
    let n = ahat.len();
    let mut chi2 = f64::INFINITY;
    let mut dist = vec![0.0; n];
    let mut acond = vec![0.0; n];
    let mut zcond = vec![0.0; n];
    let mut step = vec![0.0; n];
    let mut s = DMatrix::<f64>::zeros(n, n);
    let mut found: Vec<(Vec<f64>, f64)> = Vec::with_capacity(ncands);
    let sgn = |x: f64| if x < 0.0 { -1.0 } else { 1.0 };

    let mut k = n - 1;
    acond[k] = ahat[k];
    zcond[k] = acond[k].round();
    let mut left = acond[k] - zcond[k];
    step[k] = sgn(left);
    loop {
        let newdist = dist[k] + left * left / d[k];
        if newdist < chi2 {
            if k != 0 {
                k -= 1;
                dist[k] = newdist;
                for c in 0..=k {
                    s[(k, c)] = s[(k + 1, c)] + (zcond[k + 1] - acond[k + 1]) * l[(k + 1, c)];
                }
                acond[k] = ahat[k] + s[(k, k)];
                zcond[k] = acond[k].round();
                left = acond[k] - zcond[k];
                step[k] = sgn(left);
            } else {
                if found.len() < ncands {
                    found.push((zcond.clone(), newdist));
                } else {
                    let imax = found
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    found[imax] = (zcond.clone(), newdist);
                }
                if found.len() == ncands {
                    chi2 = found.iter().map(|f| f.1).fold(f64::NEG_INFINITY, f64::max);
                }
                zcond[0] += step[0];
                left = acond[0] - zcond[0];
                step[0] = -step[0] - sgn(step[0]);
            }
        } else {
            if k == n - 1 {
                break;
            }
            k += 1;
            zcond[k] += step[k];
            left = acond[k] - zcond[k];
            step[k] = -step[k] - sgn(step[k]);
        }
    }
    found.sort_by(|a, b| a.1.total_cmp(&b.1));
    SearchResult {
        candidates: found.iter().map(|f| DVector::from_vec(f.0.clone())).collect(),
        sqnorms: found.iter().map(|f| f.1).collect(),
    }
}

/// The `n_candidates` integer vectors closest to `ahat` in the metric of `q`.
pub fn integer_search(ahat: &DVector<f64>, q: &DMatrix<f64>, n_candidates: usize) -> Result<SearchResult, AmbiguityError> {
    check_square(q)?;
    if ahat.len() != q.nrows() {
        return Err(AmbiguityError::Dimension(format!("{} vs {}", ahat.len(), q.nrows())));
    }
    // search on the fractional part; the integer shift is added back afterwards
    let shift = ahat.map(f64::round);
    let frac = ahat - &shift;
    let dec = decorrelate(q)?;
    let z = dec.z_f64();
    let zhat = z.transpose() * &frac;
    let res = ssearch(&zhat, &dec.l, &dec.d, n_candidates.max(1));
    let zinv_t = z
        .transpose()
        .try_inverse()
        .ok_or(AmbiguityError::NotPositiveDefinite)?;
    let candidates = res
        .candidates
        .iter()
        .map(|c| (&zinv_t * c).map(f64::round) + &shift)
        .collect();
    Ok(SearchResult {
        candidates,
        sqnorms: res.sqnorms,
    })
}

/// Squared distance `(â − a)ᵀ Q⁻¹ (â − a)`.
pub fn quadratic_form(ahat: &DVector<f64>, q: &DMatrix<f64>, a: &DVector<f64>) -> Result<f64, AmbiguityError> {
    let c = q.clone().cholesky().ok_or(AmbiguityError::NotPositiveDefinite)?;
    let e = ahat - a;
    Ok(e.dot(&c.solve(&e)))
}

/// Ambiguity dilution of precision, `det(Q)^(1/(2m))`.
pub fn adop(q: &DMatrix<f64>) -> Result<f64, AmbiguityError> {
    check_square(q)?;
    let c = q.clone().cholesky().ok_or(AmbiguityError::NotPositiveDefinite)?;
    let log_det: f64 = 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok((log_det / (2.0 * q.nrows() as f64)).exp())
}

/// Float position/ambiguity estimate and the covariance blocks needed for a conditional fix.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatSolution {
    pub position: Vector3<f64>,
    pub ambiguities: DVector<f64>,
    pub q_pp: DMatrix<f64>,
    pub q_nn: DMatrix<f64>,
    /// `Q_np`, m×3.
    pub q_np: DMatrix<f64>,
}

impl FloatSolution {
    pub fn q_pn(&self) -> DMatrix<f64> {
        self.q_np.transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedSolution {
    pub ambiguities: DVector<f64>,
    pub position: Vector3<f64>,
    pub ratio: f64,
    pub accepted: bool,
}

/// Ratio test `q₂/q₁ ≥ threshold`; on success the position is conditioned on the integers.
pub fn validate_and_fix(
    float: &FloatSolution,
    search: &SearchResult,
    ratio_threshold: f64,
) -> Result<FixedSolution, AmbiguityError> {
    let best = search
        .candidates
        .first()
        .ok_or_else(|| AmbiguityError::Dimension("no candidates".into()))?;
    let ratio = match (search.sqnorms.first(), search.sqnorms.get(1)) {
        (Some(&q1), Some(&q2)) if q1 > 0.0 => q2 / q1,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 0.0,
    };
    let accepted = ratio >= ratio_threshold;
    let position = if accepted {
        conditional_position(float, best)?
    } else {
        float.position
    };
    Ok(FixedSolution {
        ambiguities: best.clone(),
        position,
        ratio,
        accepted,
    })
}

/// `p̌ = p̂ − Q_pn Q_nn⁻¹ (â − ǎ)`.
pub fn conditional_position(float: &FloatSolution, fixed: &DVector<f64>) -> Result<Vector3<f64>, AmbiguityError> {
    let c = float.q_nn.clone().cholesky().ok_or(AmbiguityError::NotPositiveDefinite)?;
    let corr = float.q_pn() * c.solve(&(&float.ambiguities - fixed));
    Ok(float.position - Vector3::new(corr[0], corr[1], corr[2]))
}

/// Exhaustive oracle over a box that provably holds the two best integer vectors.
#[cfg(test)]
pub(crate) fn brute_force_two_best(ahat: &DVector<f64>, q: &DMatrix<f64>) -> Vec<(DVector<f64>, f64)> {
    let m = ahat.len();
    let rounded = ahat.map(f64::round);
    let qf = |a: &DVector<f64>| quadratic_form(ahat, q, a).unwrap();
    // two distinct integer points bound the second-best distance
    let mut alt = rounded.clone();
    alt[0] += if ahat[0] > rounded[0] { 1.0 } else { -1.0 };
    let chi2 = qf(&rounded).max(qf(&alt));
    let lo: Vec<i64> = (0..m)
        .map(|i| (ahat[i] - (chi2 * q[(i, i)]).sqrt()).ceil() as i64)
        .collect();
    let hi: Vec<i64> = (0..m)
        .map(|i| (ahat[i] + (chi2 * q[(i, i)]).sqrt()).floor() as i64)
        .collect();
    let qinv = q.clone().cholesky().unwrap().inverse();
    let mut best: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut cur = lo.clone();
    loop {
        let a = DVector::from_iterator(m, cur.iter().map(|&v| v as f64));
        let e = ahat - &a;
        let v = e.dot(&(&qinv * &e));
        best.push((a, v));
        best.sort_by(|x, y| x.1.total_cmp(&y.1));
        best.truncate(2);
        let mut i = 0;
        loop {
            if i == m {
                return best;
            }
            cur[i] += 1;
            if cur[i] <= hi[i] {
                break;
            }
            cur[i] = lo[i];
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pd(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-0.5..0.5));
        &a * a.transpose() + DMatrix::identity(m, m) * 0.02
    }

    #[test]
    fn diagonal_q_needs_no_transform() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 0.1, 0.7]));
        let dec = decorrelate(&q).unwrap();
        assert_eq!(dec.z, DMatrix::<i64>::identity(3, 3));
    }

    #[test]
    fn correlated_pair_is_decorrelated() {
        let q = DMatrix::from_row_slice(2, 2, &[0.5, 0.45, 0.45, 0.5]);
        let dec = decorrelate(&q).unwrap();
        assert_eq!(dec.z_f64().determinant().abs().round(), 1.0);
        let cond = |m: &DMatrix<f64>| {
            let e = m.clone().symmetric_eigen().eigenvalues;
            e.max() / e.min()
        };
        assert!(cond(&dec.q) <= cond(&q));
        assert_relative_eq!(dec.q.determinant(), q.determinant(), max_relative = 1e-10);
    }

    #[test]
    fn not_positive_definite_is_rejected() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(decorrelate(&q).unwrap_err(), AmbiguityError::NotPositiveDefinite);
        assert_eq!(adop(&q).unwrap_err(), AmbiguityError::NotPositiveDefinite);
    }

    #[test]
    fn search_examples() {
        let r = integer_search(&DVector::from_vec(vec![0.1, -0.3]), &(DMatrix::identity(2, 2) * 0.01), 2).unwrap();
        assert_eq!(r.candidates[0], DVector::from_vec(vec![0.0, 0.0]));

        let ahat = DVector::from_vec(vec![1.2, 2.8]);
        let q = DMatrix::from_row_slice(2, 2, &[0.5, 0.45, 0.45, 0.5]);
        let r = integer_search(&ahat, &q, 2).unwrap();
        // exhaustive ±5 box around round(â)
        let mut all = Vec::new();
        for i in -5..=5 {
            for j in -5..=5 {
                let a = DVector::from_vec(vec![1.0 + i as f64, 3.0 + j as f64]);
                all.push((quadratic_form(&ahat, &q, &a).unwrap(), a));
            }
        }
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(r.candidates[0], all[0].1);
        assert_eq!(r.candidates[1], all[1].1);
        assert_relative_eq!(r.sqnorms[0], all[0].0, max_relative = 1e-9);

        let ahat = DVector::from_vec(vec![3.0, -2.0, 7.0]);
        let r = integer_search(&ahat, &random_pd(&mut ChaCha8Rng::seed_from_u64(1), 3), 2).unwrap();
        assert_eq!(r.candidates[0], ahat);
        assert!(r.sqnorms[0].abs() < 1e-20);
    }

    #[test]
    fn search_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..200 {
            let m = 1 + trial % 6;
            let q = random_pd(&mut rng, m);
            let ahat = DVector::from_fn(m, |_, _| rng.random_range(-20.0..20.0));
            let r = integer_search(&ahat, &q, 2).unwrap();
            let bf = brute_force_two_best(&ahat, &q);
            assert_eq!(r.candidates[0], bf[0].0, "trial {trial}");
            assert_relative_eq!(r.sqnorms[0], bf[0].1, max_relative = 1e-8, epsilon = 1e-12);
            if m > 1 || bf.len() > 1 {
                assert_relative_eq!(r.sqnorms[1], bf[1].1, max_relative = 1e-8, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn adop_examples() {
        assert_relative_eq!(adop(&DMatrix::identity(3, 3)).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(adop(&(DMatrix::identity(3, 3) * 4.0)).unwrap(), 2.0, epsilon = 1e-12);
        assert_relative_eq!(adop(&(DMatrix::identity(2, 2) * 0.01)).unwrap(), 0.1, epsilon = 1e-12);
    }

    fn float_fixture() -> FloatSolution {
        FloatSolution {
            position: Vector3::new(1.0, 2.0, 3.0),
            ambiguities: DVector::from_vec(vec![4.1, -2.05]),
            q_pp: DMatrix::identity(3, 3) * 0.04,
            q_nn: DMatrix::from_row_slice(2, 2, &[0.02, 0.005, 0.005, 0.03]),
            q_np: DMatrix::from_row_slice(2, 3, &[0.01, 0.0, 0.002, -0.004, 0.008, 0.0]),
        }
    }

    #[test]
    fn ratio_test_decides_acceptance() {
        let f = float_fixture();
        let cand = |q1: f64, q2: f64| SearchResult {
            candidates: vec![DVector::from_vec(vec![4.0, -2.0]), DVector::from_vec(vec![5.0, -2.0])],
            sqnorms: vec![q1, q2],
        };
        let fix = validate_and_fix(&f, &cand(1.0, 5.0), 3.0).unwrap();
        assert!(fix.accepted);
        assert_relative_eq!(fix.ratio, 5.0);
        let fix = validate_and_fix(&f, &cand(1.0, 1.1), 3.0).unwrap();
        assert!(!fix.accepted);
        assert_eq!(fix.position, f.position);
    }

    #[test]
    fn conditional_fix_is_identity_at_integral_float() {
        let mut f = float_fixture();
        f.ambiguities = DVector::from_vec(vec![4.0, -2.0]);
        let p = conditional_position(&f, &f.ambiguities.clone()).unwrap();
        assert_eq!(p, f.position);
    }

    #[test]
    fn conditional_fix_improves_position_in_monte_carlo() {
        use rand_distr::{Distribution, StandardNormal};
        // joint Gaussian over (p, a) with strong position/ambiguity coupling
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0)) / 0.19;
        let q_pp = DMatrix::identity(3, 3) * 0.1f64.powi(2);
        let q_nn = &g * &q_pp * g.transpose() + DMatrix::identity(6, 6) * (0.005f64 / 0.19).powi(2);
        let q_np = &g * &q_pp;
        let mut joint = DMatrix::zeros(9, 9);
        joint.view_mut((0, 0), (3, 3)).copy_from(&q_pp);
        joint.view_mut((3, 3), (6, 6)).copy_from(&q_nn);
        joint.view_mut((3, 0), (6, 3)).copy_from(&q_np);
        joint.view_mut((0, 3), (3, 6)).copy_from(&q_np.transpose());
        let lj = joint.clone().cholesky().unwrap().l();
        let truth_a = DVector::from_vec(vec![3.0, -1.0, 8.0, 0.0, 12.0, -6.0]);
        let (mut better, mut total) = (0, 0);
        for _ in 0..400 {
            let e = &lj * DVector::from_fn(9, |_, _| StandardNormal.sample(&mut rng));
            let f = FloatSolution {
                position: Vector3::new(e[0], e[1], e[2]),
                ambiguities: &truth_a + e.rows(3, 6),
                q_pp: q_pp.clone(),
                q_nn: q_nn.clone(),
                q_np: q_np.clone(),
            };
            let s = integer_search(&f.ambiguities, &f.q_nn, 2).unwrap();
            if s.candidates[0] != truth_a {
                continue;
            }
            total += 1;
            let p = conditional_position(&f, &s.candidates[0]).unwrap();
            better += (p.norm() < f.position.norm()) as usize;
        }
        assert!(total > 300);
        assert!(better as f64 >= 0.95 * total as f64, "{better}/{total}");
    }

    proptest! {
        #[test]
        fn decorrelation_preserves_det_and_adop(seed in any::<u64>(), m in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_pd(&mut rng, m);
            let dec = decorrelate(&q).unwrap();
            let z = dec.z_f64();
            prop_assert!((z.determinant().abs() - 1.0).abs() < 1e-9);
            prop_assert!((adop(&dec.q).unwrap() - adop(&q).unwrap()).abs() < 1e-10);
            prop_assert_eq!(z.map(|v| v.round()), z);
        }

        #[test]
        fn fix_is_never_worse_than_rounding(seed in any::<u64>(), m in 1usize..=5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_pd(&mut rng, m);
            let ahat = DVector::from_fn(m, |_, _| rng.random_range(-5.0..5.0));
            let r = integer_search(&ahat, &q, 2).unwrap();
            let rounded = quadratic_form(&ahat, &q, &ahat.map(f64::round)).unwrap();
            prop_assert!(r.sqnorms[0] <= rounded + 1e-9);
            prop_assert!(r.sqnorms[0] <= r.sqnorms[1]);
        }
    }
}
