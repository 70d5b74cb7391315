use alloc::vec::Vec;

use crate::matrix::Mat;

/// Elementwise `max(x, 0)`.
pub fn project_nonneg(x: &Mat) -> Mat {
    x.map(|v| v.max(0.0))
}

/// Euclidean projection of `v` onto the unit simplex, in place.
///
/// Sort-and-threshold: with `u` sorted decreasingly, `rho` is the largest
/// `j` with `u_j > (sum_{i<=j} u_i - 1) / j` and the result is
/// `max(v - tau, 0)` for `tau = (sum_{i<=rho} u_i - 1) / rho`.
pub fn project_simplex(v: &mut [f64], sorted: &mut Vec<f64>) {
    sorted.clear();
    sorted.extend_from_slice(v);
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u > t {
            tau = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

/// Projects every column of `a` onto the unit simplex.
pub fn project_simplex_columns(a: &Mat) -> Mat {
    let mut out = a.clone();
    project_simplex_columns_inplace(&mut out);
    out
}

pub(crate) fn project_simplex_columns_inplace(a: &mut Mat) {
    let (k, n) = a.shape();
    let mut col = Vec::with_capacity(k);
    let mut sorted = Vec::with_capacity(k);
    for j in 0..n {
        col.clear();
        col.extend((0..k).map(|i| a[(i, j)]));
        project_simplex(&mut col, &mut sorted);
        for (i, v) in col.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
}

/// Soft threshold of the nonnegative part: `max(max(b, 0) - t, 0)`.
pub fn prox_l1_nonneg(b: &Mat, t: f64) -> Mat {
    debug_assert!(t >= 0.0);
    b.map(|v| (v.max(0.0) - t).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn nonneg_projection() {
        let x = Mat::from_rows(&[&[-1.0, 2.0], &[0.0, -3.0]]).unwrap();
        let p = project_nonneg(&x);
        assert_eq!(p, Mat::from_rows(&[&[0.0, 2.0], &[0.0, 0.0]]).unwrap());
        assert_eq!(project_nonneg(&p), p);
    }

    #[test]
    fn simplex_symmetric_column() {
        let p = project_simplex_columns(&Mat::column(&[0.5, 0.5, 0.5]));
        for v in p.col(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn simplex_hand_case() {
        let p = project_simplex_columns(&Mat::column(&[0.2, 0.9, 0.4]));
        let expect = [0.2 - 1.0 / 6.0, 0.9 - 1.0 / 6.0, 0.4 - 1.0 / 6.0];
        for (v, e) in p.col(0).iter().zip(expect) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn simplex_point_is_fixed() {
        let mut v = vec![0.1, 0.6, 0.3];
        let mut s = Vec::new();
        project_simplex(&mut v, &mut s);
        assert!((v[0] - 0.1).abs() < 1e-15 && (v[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn prox_cases() {
        let b = Mat::from_rows(&[&[0.05, -0.4]]).unwrap();
        let p = prox_l1_nonneg(&b, 0.02);
        assert!((p[(0, 0)] - 0.03).abs() < 1e-15);
        assert_eq!(prox_l1_nonneg(&Mat::filled(1, 1, -0.4), 0.1)[(0, 0)], 0.0);
    }
}
