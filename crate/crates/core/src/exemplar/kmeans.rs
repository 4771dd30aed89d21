use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Lloyd iterations from farthest-point seeding: the first centroid is a
/// seeded random point, each next one the point farthest from those chosen.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || points.len() < k {
        return Err(Error::invalid(format!(
            "k-means needs 1 <= clusters <= samples (got {k} clusters, {} samples)",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let far = (0..points.len())
            .fold(0, |best, i| if min_d[i] > min_d[best] { i } else { best });
        centroids.push(points[far].clone());
        for (d, p) in min_d.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[far]));
        }
    }

    let dim = points[0].len();
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Re-seed an empty cluster at the worst-served point.
                let worst = (0..points.len())
                    .filter(|&i| counts[assignment[i]] > 1)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a], &centroids[assignment[a]]);
                        let db = sq_dist(&points[b], &centroids[assignment[b]]);
                        da.total_cmp(&db).then(b.cmp(&a))
                    });
                if let Some(w) = worst {
                    counts[assignment[w]] -= 1;
                    counts[c] = 1;
                    assignment[w] = c;
                    centroids[c] = points[w].clone();
                }
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Ok(KMeans {
        centroids,
        assignment,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_two_clusters() {
        let km = kmeans(&[vec![0.0, 0.0], vec![5.0, 1.0]], 2, 3).unwrap();
        assert_ne!(km.assignment[0], km.assignment[1]);
    }

    #[test]
    fn too_many_clusters() {
        let pts = vec![vec![0.0]; 10];
        assert!(kmeans(&pts, 50, 0).is_err());
    }

    #[test]
    fn separated_blobs_recovered() {
        let pts: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i % 3) as f64 * 100.0 + (i as f64) * 0.01, 1.0])
            .collect();
        let km = kmeans(&pts, 3, 11).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                assert_eq!(i % 3 == j % 3, km.assignment[i] == km.assignment[j]);
            }
        }
        assert!(km.iterations <= MAX_ITERATIONS);
    }
}
