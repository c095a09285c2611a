//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::tensor::{squared_distance, Matrix};

pub const DEFAULT_MAX_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `dim x L`, one centroid per column.
    pub centroids: Matrix,
    pub assignments: Vec<u32>,
    pub inertia: f64,
    /// Inertia after the seeding assignment and after every Lloyd iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Index of the closest centroid; ties go to the lowest index.
#[inline]
pub fn nearest(point: &[f64], centroids: &Matrix) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (l, c) in centroids.columns().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (l as u32, d);
        }
    }
    best
}

fn assign(points: &Matrix, centroids: &Matrix) -> (Vec<u32>, Vec<f64>, f64) {
    let mut labels = Vec::with_capacity(points.cols());
    let mut dists = Vec::with_capacity(points.cols());
    let mut inertia = 0.0;
    for p in points.columns() {
        let (l, d) = nearest(p, centroids);
        labels.push(l);
        dists.push(d);
        inertia += d;
    }
    (labels, dists, inertia)
}

/// k-means++: first centre uniform, then proportional to squared distance.
/// When every point already coincides with a centre the remaining centres
/// duplicate uniformly chosen points.
pub fn kmeans_plus_plus<R: Rng + ?Sized>(points: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = points.cols();
    let dim = points.rows();
    let mut centroids = Matrix::zeros(dim, k);
    let first = rng.random_range(0..n);
    centroids
        .column_mut(0)
        .copy_from_slice(points.column(first));
    let mut closest: Vec<f64> = points
        .columns()
        .map(|p| squared_distance(p, points.column(first)))
        .collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            // guard against rounding at the end of the scan
            if closest[pick] == 0.0 {
                pick = closest
                    .iter()
                    .rposition(|&d| d > 0.0)
                    .expect("positive total implies a positive entry");
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centroids.column_mut(c).copy_from_slice(points.column(pick));
        for (slot, p) in closest.iter_mut().zip(points.columns()) {
            let d = squared_distance(p, points.column(pick));
            if d < *slot {
                *slot = d;
            }
        }
    }
    centroids
}

/// Clusters the columns of `points` into `k` groups.
///
/// Stops when the assignment is unchanged by an iteration, when an update
/// would not lower the inertia, or after `max_iters` iterations. Empty clusters are moved onto the point farthest
/// from its current centroid.
pub fn kmeans<R: Rng + ?Sized>(
    points: &Matrix,
    k: usize,
    max_iters: usize,
    rng: &mut R,
) -> Result<KMeansResult> {
    ensure!(
        points.cols() >= 1,
        Contract,
        "k-means needs at least one point"
    );
    ensure!(k >= 1, Config, "k-means needs at least one centroid");
    let dim = points.rows();
    let mut centroids = kmeans_plus_plus(points, k, rng);
    let (mut labels, mut dists, mut inertia) = assign(points, &centroids);
    let mut history = vec![inertia];
    let mut iterations = 0;

    for _ in 0..max_iters {
        iterations += 1;
        let mut next = centroids.clone();
        let mut sums = Matrix::zeros(dim, k);
        let mut counts = vec![0usize; k];
        for (p, &l) in points.columns().zip(&labels) {
            counts[l as usize] += 1;
            for (s, &v) in sums.column_mut(l as usize).iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for (dst, &s) in next.column_mut(c).iter_mut().zip(sums.column(c)) {
                    *dst = s / inv;
                }
            }
        }
        // distances to the updated centroids under the current assignment
        for (i, p) in points.columns().enumerate() {
            dists[i] = squared_distance(p, next.column(labels[i] as usize));
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = dists
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &d)| {
                        if d > best.1 {
                            (i, d)
                        } else {
                            best
                        }
                    })
                    .0;
                next.column_mut(c).copy_from_slice(points.column(far));
                dists[far] = 0.0;
            }
        }

        let (next_labels, next_dists, next_inertia) = assign(points, &next);
        // a recomputed mean can be off by an ulp; such a step is not taken
        if next_inertia > inertia {
            break;
        }
        history.push(next_inertia);
        centroids = next;
        inertia = next_inertia;
        dists = next_dists;
        let stable = next_labels == labels;
        labels = next_labels;
        if stable {
            break;
        }
    }

    Ok(KMeansResult {
        centroids,
        assignments: labels,
        inertia,
        history,
        iterations,
    })
}
