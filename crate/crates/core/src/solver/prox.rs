//! Proximal maps of `t ||.||_a` for `a` in `[2, inf]`, built from projections
//! onto the dual-norm ball via the Moreau decomposition
//! `v = prox(v) + proj_{t B_{a*}}(v)`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{lp_norm, Exponent};

/// Block soft-thresholding: `(1 - t/||v||)_+ v`.
pub fn prox_group_l2(v: &DVector<f64>, t: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm <= t || norm == 0.0 {
        return DVector::zeros(v.len());
    }
    v * (1.0 - t / norm)
}

/// Soft-threshold level `theta` with `sum_k (|v_k| - theta)_+ = r`, assuming
/// `||v||_1 > r`.
fn l1_threshold(v: &[f64], r: f64) -> f64 {
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - r) / (i + 1) as f64;
        if m > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    theta.max(0.0)
}

/// Euclidean projection onto `{u : ||u||_1 <= r}`.
pub fn project_l1_ball(v: &DVector<f64>, r: f64) -> DVector<f64> {
    if lp_norm(v.as_slice(), 1.0) <= r {
        return v.clone();
    }
    let theta = l1_threshold(v.as_slice(), r);
    v.map(|x| x.signum() * (x.abs() - theta).max(0.0))
}

const ROOT_TOL: f64 = 1e-15;
const ROOT_MAX_ITER: usize = 200;

/// Root of `s + nu s^(a-1) = m` for `a > 2`, `m, nu > 0`, by Newton from an
/// upper bound (monotone convergence on a convex increasing function).
fn lalpha_coordinate(m: f64, nu: f64, a: f64) -> f64 {
    let mut s = m.min((m / nu).powf(1.0 / (a - 1.0)));
    for _ in 0..100 {
        let pow = s.powf(a - 2.0);
        let f = s + nu * pow * s - m;
        let step = f / (1.0 + nu * (a - 1.0) * pow);
        if !(step > 0.0) {
            break;
        }
        s -= step;
        if step <= ROOT_TOL * m {
            break;
        }
    }
    s.max(0.0)
}

/// Nonzero prox of `t ||.||_a` for `a` in `(2, inf)`, assuming
/// `||v||_{a*} > t`.
///
/// Coordinates solve `|u_k| + nu |u_k|^(a-1) = |v_k|` with
/// `nu = t ||u||_a^(1-a)`; `log nu` is found by Illinois false position.
fn prox_lalpha_interior(v: &DVector<f64>, t: f64, a: f64) -> DVector<f64> {
    let mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let solve = |nu: f64| -> Vec<f64> {
        mags.iter().map(|&m| if m == 0.0 { 0.0 } else { lalpha_coordinate(m, nu, a) }).collect()
    };
    let phi = |x: f64| -> f64 {
        let g = lp_norm(&solve(x.exp()), a);
        x + (a - 1.0) * g.ln() - t.ln()
    };
    let mut lo = t.ln() + (1.0 - a) * lp_norm(&mags, a).ln();
    let mut f_lo = phi(lo);
    let mut hi = lo + 1.0;
    let mut f_hi = phi(hi);
    while f_hi < 0.0 {
        lo = hi;
        f_lo = f_hi;
        hi += 2.0 * (hi - lo).max(1.0);
        f_hi = phi(hi);
    }
    let mut x = hi;
    let mut side = 0i8;
    for _ in 0..ROOT_MAX_ITER {
        if f_lo >= 0.0 {
            x = lo;
            break;
        }
        x = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let fx = phi(x);
        if fx.abs() <= ROOT_TOL || hi - lo <= ROOT_TOL * x.abs().max(1.0) {
            break;
        }
        if fx < 0.0 {
            lo = x;
            f_lo = fx;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            f_hi = fx;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
    let s = solve(x.exp());
    DVector::from_iterator(v.len(), v.iter().zip(s).map(|(x, s)| x.signum() * s))
}

/// Projection onto `t B_{a*}`, the dual-norm ball of radius `t`.
pub fn project_dual_ball(v: &DVector<f64>, t: f64, alpha: Exponent) -> Result<DVector<f64>> {
    check_exponent(alpha)?;
    if t == 0.0 {
        return Ok(DVector::zeros(v.len()));
    }
    Ok(if alpha.value() == 2.0 {
        let norm = v.norm();
        if norm <= t {
            v.clone()
        } else {
            v * (t / norm)
        }
    } else if alpha.is_infinite() {
        project_l1_ball(v, t)
    } else if lp_norm(v.as_slice(), alpha.conjugate().value()) <= t {
        v.clone()
    } else {
        v - prox_lalpha_interior(v, t, alpha.value())
    })
}

/// `argmin_u 1/2 ||u - v||^2 + t ||u||_a`.
pub fn prox_group_lalpha(v: &DVector<f64>, t: f64, alpha: Exponent) -> Result<DVector<f64>> {
    check_exponent(alpha)?;
    if t == 0.0 {
        return Ok(v.clone());
    }
    if alpha.value() == 2.0 {
        return Ok(prox_group_l2(v, t));
    }
    if alpha.is_infinite() {
        // v - proj_{t B_1}(v) is a clip at the soft-threshold level, written
        // directly so tied maxima stay bit-identical.
        if lp_norm(v.as_slice(), 1.0) <= t {
            return Ok(DVector::zeros(v.len()));
        }
        let theta = l1_threshold(v.as_slice(), t);
        return Ok(v.map(|x| x.signum() * x.abs().min(theta)));
    }
    if lp_norm(v.as_slice(), alpha.conjugate().value()) <= t {
        return Ok(DVector::zeros(v.len()));
    }
    Ok(prox_lalpha_interior(v, t, alpha.value()))
}

pub(crate) fn check_exponent(alpha: Exponent) -> Result<()> {
    if alpha.value() < 2.0 {
        Err(Error::UnsupportedExponent(alpha.value()))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    /// Brute-force l1 projection: bisection on the soft-threshold level.
    fn l1_projection_oracle(v: &[f64], r: f64) -> Vec<f64> {
        let mass = |t: f64| v.iter().map(|x| (x.abs() - t).max(0.0)).sum::<f64>();
        if mass(0.0) <= r {
            return v.to_vec();
        }
        let (mut lo, mut hi) = (0.0, v.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mass(mid) > r {
                lo = mid
            } else {
                hi = mid
            }
        }
        v.iter().map(|x| x.signum() * (x.abs() - hi).max(0.0)).collect()
    }

    #[test]
    fn l2_prox_examples() {
        assert_eq!(prox_group_l2(&dv(&[3.0, 4.0]), 5.0), dv(&[0.0, 0.0]));
        assert_eq!(prox_group_l2(&dv(&[3.0, 4.0]), 0.0), dv(&[3.0, 4.0]));
        let u = prox_group_l2(&dv(&[3.0, 4.0]), 2.5);
        assert_relative_eq!(u, dv(&[1.5, 2.0]), epsilon = 1e-15);
        assert_eq!(prox_group_l2(&dv(&[0.0, 0.0]), 1.0), dv(&[0.0, 0.0]));
    }

    #[test]
    fn l1_projection_examples() {
        assert_eq!(project_l1_ball(&dv(&[3.0, 4.0]), 7.0), dv(&[3.0, 4.0]));
        let expected = l1_projection_oracle(&[3.0, 4.0], 1.0);
        assert_relative_eq!(expected[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(expected[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(project_l1_ball(&dv(&[3.0, 4.0]), 1.0), dv(&[0.0, 1.0]), epsilon = 1e-15);
        assert_eq!(project_l1_ball(&dv(&[0.0, 0.0]), 1.0), dv(&[0.0, 0.0]));
    }

    #[test]
    fn lalpha_prox_examples() {
        let v = dv(&[3.0, 4.0]);
        for a in [2.0, 3.0, f64::INFINITY] {
            let alpha = Exponent::new(a).unwrap();
            assert_eq!(prox_group_lalpha(&v, 0.0, alpha).unwrap(), v);
        }
        let u = prox_group_lalpha(&v, 2.5, Exponent::TWO).unwrap();
        assert_relative_eq!(u, dv(&[1.5, 2.0]), epsilon = 1e-15);
        let u = prox_group_lalpha(&v, 1.0, Exponent::INFINITY).unwrap();
        assert_relative_eq!(u, dv(&[3.0, 3.0]), epsilon = 1e-15);
        assert!(matches!(
            prox_group_lalpha(&v, 1.0, Exponent::new(1.5).unwrap()),
            Err(Error::UnsupportedExponent(_))
        ));
    }

    #[test]
    fn l3_prox_satisfies_stationarity() {
        // u - v + t grad ||u||_3 = 0 at a nonzero solution.
        let v = dv(&[2.0, -1.0, 0.5, 3.0]);
        let t = 1.2;
        let u = prox_group_lalpha(&v, t, Exponent::new(3.0).unwrap()).unwrap();
        let norm = lp_norm(u.as_slice(), 3.0);
        for k in 0..4 {
            let grad = u[k].signum() * u[k].abs().powi(2) / norm.powi(2);
            assert!((u[k] - v[k] + t * grad).abs() < 1e-10);
        }
    }

    fn alpha_strategy() -> impl Strategy<Value = Exponent> {
        prop_oneof![
            Just(Exponent::TWO),
            Just(Exponent::new(3.0).unwrap()),
            Just(Exponent::INFINITY),
            (2.0f64..12.0).prop_map(|a| Exponent::new(a).unwrap()),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn moreau_identity(v in proptest::collection::vec(-5.0f64..5.0, 1..8), t in 0.0f64..6.0, alpha in alpha_strategy()) {
            let v = DVector::from_vec(v);
            let u = prox_group_lalpha(&v, t, alpha).unwrap();
            let z = project_dual_ball(&v, t, alpha).unwrap();
            prop_assert!((&u + &z - &v).amax() <= 1e-10);
        }

        #[test]
        fn prox_nonexpansive(
            pair in (1usize..8).prop_flat_map(|m| (
                proptest::collection::vec(-5.0f64..5.0, m),
                proptest::collection::vec(-5.0f64..5.0, m),
            )),
            t in 0.0f64..6.0,
            alpha in alpha_strategy(),
        ) {
            let u = DVector::from_vec(pair.0);
            let v = DVector::from_vec(pair.1);
            let pu = prox_group_lalpha(&u, t, alpha).unwrap();
            let pv = prox_group_lalpha(&v, t, alpha).unwrap();
            prop_assert!((pu - pv).norm() <= (u - v).norm() * (1.0 + 1e-9) + 1e-10);
        }

        #[test]
        fn l1_projection_matches_oracle(v in proptest::collection::vec(-5.0f64..5.0, 1..10), r in 0.01f64..8.0) {
            let p = project_l1_ball(&DVector::from_vec(v.clone()), r);
            let o = l1_projection_oracle(&v, r);
            for (a, b) in p.iter().zip(&o) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
