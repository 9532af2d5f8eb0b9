//! k-means (Lloyd iterations, k-means++ seeding) and near-centroid
//! representative selection for feature-vector pools.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DashError, Result};
use crate::rng::SeededRng;

/// Feature vectors of one dataset plus clustering parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePool {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<i64>,
    pub k: usize,
    pub points_per_cluster: usize,
}

impl FeaturePool {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(DashError::Validation(m));
        let n = self.points.len();
        if n == 0 {
            return fail("feature pool is empty".into());
        }
        if self.labels.len() != n {
            return fail(format!("{} labels for {n} points", self.labels.len()));
        }
        let dims = self.points[0].len();
        if dims == 0 {
            return fail("feature vectors have no columns".into());
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.len() != dims {
                return fail(format!("row {i} has {} features, expected {dims}", p.len()));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return fail(format!("row {i} has a non-finite feature"));
            }
        }
        if self.k == 0 || self.k > n {
            return fail(format!("k = {} must be in 1..={n}", self.k));
        }
        if self.points_per_cluster == 0 {
            return fail("points_per_cluster must be at least 1".into());
        }
        Ok(())
    }

    /// Reads a CSV with a header row, a `label` column and numeric features
    /// in every other column.
    pub fn from_csv_reader<R: Read>(
        reader: R,
        k: usize,
        points_per_cluster: usize,
    ) -> std::result::Result<Self, String> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
        let label_col = headers
            .iter()
            .position(|h| h.trim() == "label")
            .ok_or("missing `label` column")?;
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| e.to_string())?;
            let mut features = Vec::with_capacity(record.len().saturating_sub(1));
            for (col, field) in record.iter().enumerate() {
                let field = field.trim();
                if col == label_col {
                    labels.push(field.parse::<i64>().map_err(|_| {
                        format!("row {}: label `{field}` is not an integer", row + 1)
                    })?);
                } else {
                    features.push(field.parse::<f64>().map_err(|_| {
                        format!(
                            "row {}, column `{}`: `{field}` is not numeric",
                            row + 1,
                            &headers[col]
                        )
                    })?);
                }
            }
            points.push(features);
        }
        Ok(Self {
            points,
            labels,
            k,
            points_per_cluster,
        })
    }

    pub fn from_csv(path: &Path, k: usize, points_per_cluster: usize) -> Result<Self> {
        let file =
            std::fs::File::open(path).map_err(|e| DashError::io("opening feature CSV", path, e))?;
        let pool = Self::from_csv_reader(file, k, points_per_cluster)
            .map_err(|m| DashError::Validation(format!("{}: {m}", path.display())))?;
        pool.validate()?;
        Ok(pool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Per cluster, the indices of the points nearest its centroid.
    pub representatives: Vec<Vec<usize>>,
    /// Sum of squared distances after each assignment step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    /// How many times an empty cluster was re-seeded.
    pub reseeds: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // Guard against landing on a zero-weight tail through round-off.
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[next].clone();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Assigns points, re-seeding empty clusters at the point farthest from its
/// current centroid. Returns the objective and the number of re-seeds.
fn assign(
    points: &[Vec<f64>],
    centroids: &mut [Vec<f64>],
    assignments: &mut [usize],
) -> (f64, usize) {
    let k = centroids.len();
    let mut dists = vec![0.0; points.len()];
    let mut counts = vec![0usize; k];
    for (i, p) in points.iter().enumerate() {
        let (c, d) = nearest(p, centroids);
        assignments[i] = c;
        dists[i] = d;
        counts[c] += 1;
    }
    let mut reseeds = 0;
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        // Farthest point among clusters that can spare one; ties → lowest index.
        let mut far: Option<usize> = None;
        for i in 0..points.len() {
            if counts[assignments[i]] > 1 && far.is_none_or(|f| dists[i] > dists[f]) {
                far = Some(i);
            }
        }
        let Some(i) = far else { break };
        counts[assignments[i]] -= 1;
        counts[c] = 1;
        assignments[i] = c;
        dists[i] = 0.0;
        centroids[c] = points[i].clone();
        reseeds += 1;
    }
    (dists.iter().sum(), reseeds)
}

fn update(points: &[Vec<f64>], assignments: &[usize], centroids: &mut [Vec<f64>]) -> f64 {
    let dims = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dims]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignments) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p) {
            *s += x;
        }
    }
    let mut shift: f64 = 0.0;
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        shift = shift.max(sq_dist(&new, &centroids[c]).sqrt());
        centroids[c] = new;
    }
    shift
}

/// Clusters `pool` and returns, per cluster, the `points_per_cluster`
/// members closest to the final centroid (distance ties → lowest index).
pub fn kmeans_representatives(
    pool: &FeaturePool,
    options: KMeansOptions,
    rng: &mut SeededRng,
) -> Result<KMeansResult> {
    pool.validate()?;
    if options.max_iters == 0 || options.tol.is_nan() || options.tol < 0.0 {
        return Err(DashError::InvalidParameter(
            "k-means needs max_iters ≥ 1 and tol ≥ 0".into(),
        ));
    }
    let points = &pool.points;
    let mut centroids = kmeans_pp_init(points, pool.k, rng);
    let mut assignments = vec![0; points.len()];
    let mut history = Vec::new();
    let mut reseeds = 0;
    let mut iterations = 0;

    while iterations < options.max_iters {
        let (objective, r) = assign(points, &mut centroids, &mut assignments);
        history.push(objective);
        reseeds += r;
        iterations += 1;
        if update(points, &assignments, &mut centroids) < options.tol {
            break;
        }
    }
    let (_, r) = assign(points, &mut centroids, &mut assignments);
    reseeds += r;

    let mut representatives = Vec::with_capacity(pool.k);
    for (c, centroid) in centroids.iter().enumerate() {
        let mut members: Vec<(f64, usize)> = assignments
            .iter()
            .enumerate()
            .filter(|&(_, &a)| a == c)
            .map(|(i, _)| (sq_dist(&points[i], centroid), i))
            .collect();
        if members.len() < pool.points_per_cluster {
            return Err(DashError::Validation(format!(
                "cluster {c} has {} points, fewer than the {} requested",
                members.len(),
                pool.points_per_cluster
            )));
        }
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        representatives.push(
            members
                .into_iter()
                .take(pool.points_per_cluster)
                .map(|(_, i)| i)
                .collect(),
        );
    }

    Ok(KMeansResult {
        centroids,
        assignments,
        representatives,
        objective_history: history,
        iterations,
        reseeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand_distr::{Distribution, Normal};

    fn pool(points: Vec<Vec<f64>>, k: usize, ppc: usize) -> FeaturePool {
        let labels = vec![0; points.len()];
        FeaturePool {
            points,
            labels,
            k,
            points_per_cluster: ppc,
        }
    }

    fn blobs(seed: u64, per_blob: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = seeded(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for (b, centre) in [10.0, -10.0].into_iter().enumerate() {
            for _ in 0..per_blob {
                points.push(vec![
                    centre + noise.sample(&mut rng),
                    centre + noise.sample(&mut rng),
                ]);
                truth.push(b);
            }
        }
        (points, truth)
    }

    #[test]
    fn single_cluster_centroid_is_the_mean() {
        let points: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![i as f64, (i * i) as f64 / 10.0])
            .collect();
        let mean = [9.5, points.iter().map(|p| p[1]).sum::<f64>() / 20.0];
        let res = kmeans_representatives(
            &pool(points.clone(), 1, 5),
            KMeansOptions::default(),
            &mut seeded(1),
        )
        .unwrap();
        assert!((res.centroids[0][0] - mean[0]).abs() < 1e-12);
        assert!((res.centroids[0][1] - mean[1]).abs() < 1e-12);

        let mut by_dist: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (sq_dist(p, &mean), i))
            .collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expected: Vec<usize> = by_dist.iter().take(5).map(|x| x.1).collect();
        assert_eq!(res.representatives[0], expected);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        for seed in 0..20 {
            let (points, truth) = blobs(100 + seed, 50);
            let res = kmeans_representatives(
                &pool(points, 2, 5),
                KMeansOptions::default(),
                &mut seeded(seed),
            )
            .unwrap();
            for c in &res.centroids {
                let target = if c[0] > 0.0 { 10.0 } else { -10.0 };
                assert!(
                    (c[0] - target).abs() < 0.5 && (c[1] - target).abs() < 0.5,
                    "seed {seed}: {c:?}"
                );
            }
            // Purity: each blob maps to exactly one cluster.
            let first = res.assignments[0];
            let other = res.assignments[50];
            assert_ne!(first, other);
            for (i, &a) in res.assignments.iter().enumerate() {
                assert_eq!(a, if truth[i] == 0 { first } else { other });
            }
        }
    }

    #[test]
    fn ten_clusters_of_five_give_fifty_representatives() {
        let mut rng = seeded(3);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut points = Vec::new();
        for c in 0..10 {
            for _ in 0..30 {
                points.push(vec![
                    (c * 5) as f64 + noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    1.0,
                ]);
            }
        }
        let res = kmeans_representatives(
            &pool(points, 10, 5),
            KMeansOptions::default(),
            &mut seeded(4),
        )
        .unwrap();
        let total: usize = res.representatives.iter().map(Vec::len).sum();
        assert_eq!(total, 50);
        let mut all: Vec<usize> = res.representatives.concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 50);
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = seeded(11);
        let unit = Normal::new(0.0, 2.0).unwrap();
        let points: Vec<Vec<f64>> = (0..300)
            .map(|_| vec![unit.sample(&mut rng), unit.sample(&mut rng)])
            .collect();
        for seed in 0..10 {
            let res = kmeans_representatives(
                &pool(points.clone(), 7, 1),
                KMeansOptions::default(),
                &mut seeded(seed),
            )
            .unwrap();
            for w in res.objective_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} > {}", w[1], w[0]);
            }
        }
    }

    #[test]
    fn empty_clusters_are_reseeded() {
        // Every k-means++ draw after the first lands on the lone distinct
        // point or a duplicate, so some cluster starts empty.
        let mut points = vec![vec![0.0, 0.0]; 6];
        points.push(vec![1.0, 1.0]);
        let res = kmeans_representatives(
            &pool(points, 3, 1),
            KMeansOptions::default(),
            &mut seeded(0),
        )
        .unwrap();
        let mut counts = [0; 3];
        for &a in &res.assignments {
            counts[a] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
        assert!(res.reseeds >= 1);
    }

    #[test]
    fn rejects_invalid_pools() {
        let p = pool(vec![vec![0.0], vec![1.0]], 3, 1);
        assert!(kmeans_representatives(&p, KMeansOptions::default(), &mut seeded(0)).is_err());
        let p = pool(vec![vec![0.0], vec![1.0, 2.0]], 1, 1);
        assert!(p.validate().is_err());
        let p = pool(vec![vec![0.0], vec![10.0], vec![10.1]], 2, 2);
        let err = kmeans_representatives(&p, KMeansOptions::default(), &mut seeded(0)).unwrap_err();
        assert!(matches!(err, DashError::Validation(_)));
    }

    #[test]
    fn reads_labelled_csv() {
        let text = "f1,label,f2\n0.5,3,1.5\n-1,7,2\n";
        let p = FeaturePool::from_csv_reader(text.as_bytes(), 1, 1).unwrap();
        assert_eq!(p.points, vec![vec![0.5, 1.5], vec![-1.0, 2.0]]);
        assert_eq!(p.labels, vec![3, 7]);
        assert!(FeaturePool::from_csv_reader("a,b\n1,2\n".as_bytes(), 1, 1).is_err());
        assert!(FeaturePool::from_csv_reader("a,label\nx,2\n".as_bytes(), 1, 1).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let (points, _) = blobs(9, 40);
        let p = pool(points, 4, 3);
        let a = kmeans_representatives(&p, KMeansOptions::default(), &mut seeded(5)).unwrap();
        let b = kmeans_representatives(&p, KMeansOptions::default(), &mut seeded(5)).unwrap();
        assert_eq!(a, b);
    }
}
