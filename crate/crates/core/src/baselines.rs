//! Comparison methods: K-means clustering, multiplicative-update NMF, and
//! factor matching for scoring unordered factors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Mat;
use crate::phantom::auc;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    /// `L x K`.
    pub centroids: Mat,
    /// Cluster of each voxel, in `0..K`.
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(y: &Mat, j: usize, c: &Mat, k: usize) -> f64 {
    (0..y.rows()).map(|i| (y[(i, j)] - c[(i, k)]) * (y[(i, j)] - c[(i, k)])).sum()
}

/// Lloyd's algorithm on the voxel TACs (columns of `y`) with k-means++ seeding.
pub fn kmeans(y: &Mat, k: usize, seed: u64, max_iters: usize) -> Result<KmeansResult> {
    let (l, n) = y.shape();
    if k == 0 || k > n {
        return Err(Error::invalid("k", format!("need 1 <= K <= N = {n}")));
    }
    if !y.is_finite() {
        return Err(Error::NonFinite("data"));
    }
    let yt = y.transpose();
    let mut rng = seeded(seed, 0);
    let mut centroids = Mat::zeros(l, k);
    centroids.set_col(0, yt.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|j| sq_dist(y, j, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (j, &d) in d2.iter().enumerate() {
                if target < d {
                    idx = j;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.set_col(c, yt.row(pick));
        for (j, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(y, j, &centroids, c));
        }
    }

    let mut labels = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        for (j, label) in labels.iter_mut().enumerate() {
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for c in 0..k {
                let d = sq_dist(y, j, &centroids, c);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            changed |= *label != best;
            *label = best;
            inertia += best_d;
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = Mat::zeros(k, l);
        let mut counts = vec![0usize; k];
        for (j, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums.row_mut(c).iter_mut().zip(yt.row(j)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean: Vec<f64> = sums.row(c).iter().map(|s| s / counts[c] as f64).collect();
                centroids.set_col(c, &mean);
            }
        }
        // empty clusters take the point farthest from its centroid
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(y, a, &centroids, labels[a])
                            .total_cmp(&sq_dist(y, b, &centroids, labels[b]))
                    })
                    .unwrap_or(0);
                counts[labels[far]] -= 1;
                labels[far] = c;
                counts[c] = 1;
                centroids.set_col(c, yt.row(far));
            }
        }
    }
    let inertia = *history.last().unwrap_or(&0.0);
    Ok(KmeansResult {
        centroids,
        labels,
        inertia,
        inertia_history: history,
    })
}

const KMEANS_RESTARTS: u64 = 10;

/// Best of several seeded K-means runs (lowest inertia) with the default
/// iteration cap.
pub fn kmeans_init(y: &Mat, k: usize, seed: u64) -> Result<KmeansResult> {
    let mut best = kmeans(y, k, seed, 300)?;
    for r in 1..KMEANS_RESTARTS {
        let run = kmeans(y, k, derive_seed(seed, r), 300)?;
        if run.inertia < best.inertia {
            best = run;
        }
    }
    Ok(best)
}

/// Pearson correlation; zero when either vector is constant.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / libm::sqrt(sxx * syy)
    }
}

const MAX_EXACT_FACTORS: usize = 8;

/// Permutation `p` maximizing the summed correlation between reference
/// column `i` and estimated column `p[i]`, by exhaustive enumeration.
pub fn match_factors(estimated: &Mat, reference: &Mat) -> Result<Vec<usize>> {
    if estimated.shape() != reference.shape() {
        return Err(Error::shape("estimated factors", reference.shape(), estimated.shape()));
    }
    let k = reference.cols();
    if k > MAX_EXACT_FACTORS {
        return Err(Error::invalid("K", "exact matching supports at most 8 factors"));
    }
    let corr: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let r = reference.col(i);
            (0..k).map(|j| correlation(&r, &estimated.col(j))).collect()
        })
        .collect();
    let score = |p: &[usize]| -> f64 { p.iter().enumerate().map(|(i, &j)| corr[i][j]).sum() };
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_score = score(&perm);
    // Heap's algorithm
    let mut c = vec![0usize; k];
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let s = score(&perm);
            if s > best_score {
                best_score = s;
                best.copy_from_slice(&perm);
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best)
}

/// Column order for K-means centroids used as an initial factor matrix:
/// the centroid most correlated with `nominal` goes first, the rest follow
/// the best match to `references` (one column per remaining slot) or, when
/// no references are given, descending AUC.
pub fn order_roles(
    centroids: &Mat,
    nominal: &[f64],
    references: Option<&Mat>,
    frames: &[(f64, f64)],
) -> Result<Vec<usize>> {
    let k = centroids.cols();
    if nominal.len() != centroids.rows() {
        return Err(Error::shape("nominal TAC", (centroids.rows(), 1), (nominal.len(), 1)));
    }
    let first = (0..k)
        .max_by(|&a, &b| {
            correlation(&centroids.col(a), nominal).total_cmp(&correlation(&centroids.col(b), nominal))
        })
        .ok_or_else(|| Error::invalid("centroids", "need at least one column"))?;
    let rest: Vec<usize> = (0..k).filter(|&c| c != first).collect();
    let mut order = vec![first];
    match references {
        Some(refs) => {
            let sub = centroids.select_cols(&rest);
            let p = match_factors(&sub, refs)?;
            order.extend(p.into_iter().map(|j| rest[j]));
        }
        None => {
            let mut rest = rest;
            rest.sort_by(|&a, &b| auc(&centroids.col(b), frames).total_cmp(&auc(&centroids.col(a), frames)));
            order.extend(rest);
        }
    }
    Ok(order)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfResult {
    /// `L x K` factor TACs.
    pub w: Mat,
    /// `K x N` coefficients.
    pub h: Mat,
    pub cost_history: Vec<f64>,
    pub iterations: usize,
}

fn nmf_cost(y: &Mat, w: &Mat, h: &Mat) -> f64 {
    0.5 * y.sub(&w.matmul(h)).frobenius_sq()
}

fn ratio_update(x: &mut Mat, num: &Mat, den: &Mat) {
    for ((v, &a), &b) in x.as_mut_slice().iter_mut().zip(num.as_slice()).zip(den.as_slice()) {
        if b > 0.0 {
            *v *= a / b;
        }
    }
}

/// One Lee-Seung sweep: `H` then `W`. Entries with a zero denominator are
/// left as they are.
pub fn nmf_step(y: &Mat, w: &mut Mat, h: &mut Mat) {
    let wty = w.t_matmul(y);
    let wtwh = w.t_matmul(w).matmul(h);
    ratio_update(h, &wty, &wtwh);
    let yht = y.matmul_t(h);
    let whht = w.matmul(&h.matmul_t(h));
    ratio_update(w, &yht, &whht);
}

/// Multiplicative-update NMF from a given start; negative data are clamped
/// to zero. Stops when the relative cost change drops below `tol`.
pub fn nmf_from(y: &Mat, w: Mat, h: Mat, tol: f64, max_iters: usize) -> Result<NmfResult> {
    let (l, n) = y.shape();
    let k = w.cols();
    w.check_shape("factors W", (l, k))?;
    h.check_shape("coefficients H", (k, n))?;
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    if w.min() < 0.0 || h.min() < 0.0 {
        return Err(Error::invalid("nmf start", "must be nonnegative"));
    }
    let y = y.map(|v| v.max(0.0));
    if y.max() <= 0.0 {
        return Err(Error::invalid("data", "all-zero after clamping negatives"));
    }
    let (mut w, mut h) = (w, h);
    let mut history = vec![nmf_cost(&y, &w, &h)];
    let mut iterations = 0;
    while iterations < max_iters {
        nmf_step(&y, &mut w, &mut h);
        iterations += 1;
        let c = nmf_cost(&y, &w, &h);
        let prev = history[history.len() - 1];
        history.push(c);
        if prev == 0.0 || (prev - c).abs() / prev < tol {
            break;
        }
    }
    Ok(NmfResult {
        w,
        h,
        cost_history: history,
        iterations,
    })
}

/// Multiplicative-update NMF from `|N(0,1)| + 1e-3` initial factors.
pub fn nmf_multiplicative(y: &Mat, k: usize, seed: u64, tol: f64, max_iters: usize) -> Result<NmfResult> {
    let (l, n) = y.shape();
    if k == 0 {
        return Err(Error::invalid("k", "need at least one factor"));
    }
    let mut rng = seeded(seed, 1);
    let mut draw = |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z.abs() + 1e-3
    };
    let w = Mat::from_fn(l, k, &mut draw);
    let h = Mat::from_fn(k, n, &mut draw);
    nmf_from(y, w, h, tol, max_iters)
}

/// Rescales each coefficient row to unit maximum, moving the scale into
/// the matching factor. Returns the rows left untouched because they are zero.
pub fn normalize_nmf(res: &mut NmfResult) -> Vec<usize> {
    let mut skipped = Vec::new();
    for c in 0..res.h.rows() {
        let top = res.h.row(c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if top == 0.0 {
            skipped.push(c);
            continue;
        }
        res.h.row_mut(c).iter_mut().for_each(|v| *v /= top);
        for i in 0..res.w.rows() {
            res.w[(i, c)] *= top;
        }
    }
    skipped
}

/// Reorders factor columns and proportion rows by a permutation from
/// [`match_factors`].
pub fn permute_factors(m: &Mat, a: &Mat, perm: &[usize]) -> (Mat, Mat) {
    let m2 = m.select_cols(perm);
    let mut a2 = Mat::zeros(perm.len(), a.cols());
    for (i, &p) in perm.iter().enumerate() {
        a2.row_mut(i).copy_from_slice(a.row(p));
    }
    (m2, a2)
}
