//! Lloyd's algorithm with kmeans++ or random-point seeding.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CepError;
use crate::model::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum KMeansInit {
    #[default]
    #[serde(rename = "kmeans++")]
    KMeansPlusPlus,
    #[serde(rename = "random")]
    RandomPoints,
}

impl std::str::FromStr for KMeansInit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans++" | "kmeanspp" | "plusplus" => Ok(KMeansInit::KMeansPlusPlus),
            "random" | "random-points" => Ok(KMeansInit::RandomPoints),
            other => Err(format!("unknown init `{other}` (expected kmeans++ or random)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iterations: usize,
    pub seed: u64,
    pub init: KMeansInit,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            seed: 0,
            init: KMeansInit::KMeansPlusPlus,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centers: Matrix,
    /// Assignment passes performed.
    pub iterations: usize,
    /// True when the last pass left every assignment unchanged.
    pub converged: bool,
    /// Within-cluster sum of squares after each centre update.
    pub wcss_history: Vec<f64>,
}

impl KMeansResult {
    pub fn wcss(&self) -> f64 {
        self.wcss_history.last().copied().unwrap_or(0.0)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centre for every point; ties go to the lowest centre index.
pub fn assign_points(points: &Matrix, centers: &Matrix) -> Vec<usize> {
    nearest(points, centers, None)
}

/// Ties keep the previous cluster when there is one.
fn nearest(points: &Matrix, centers: &Matrix, previous: Option<&[usize]>) -> Vec<usize> {
    (0..points.rows())
        .into_par_iter()
        .map(|i| {
            let p = points.row(i);
            let (mut best, mut best_d) = match previous {
                Some(prev) => (prev[i], sq_dist(p, centers.row(prev[i]))),
                None => (usize::MAX, f64::INFINITY),
            };
            for c in 0..centers.rows() {
                let d = sq_dist(p, centers.row(c));
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

pub fn wcss(points: &Matrix, centers: &Matrix, assignment: &[usize]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist(points.row(i), centers.row(c)))
        .sum()
}

fn seed_centers(points: &Matrix, k: usize, init: KMeansInit, rng: &mut impl Rng) -> Matrix {
    let n = points.rows();
    let mut centers = Matrix::zeros(k, points.cols());
    match init {
        KMeansInit::RandomPoints => {
            for (c, i) in rand::seq::index::sample(rng, n, k).into_iter().enumerate() {
                centers.row_mut(c).copy_from_slice(points.row(i));
            }
        }
        KMeansInit::KMeansPlusPlus => {
            let first = rng.gen_range(0..n);
            centers.row_mut(0).copy_from_slice(points.row(first));
            let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
            for c in 1..k {
                // All-zero weights means every point sits on a centre already.
                let next = match WeightedIndex::new(&d2) {
                    Ok(w) => w.sample(rng),
                    Err(_) => rng.gen_range(0..n),
                };
                centers.row_mut(c).copy_from_slice(points.row(next));
                for (i, d) in d2.iter_mut().enumerate() {
                    *d = d.min(sq_dist(points.row(i), points.row(next)));
                }
            }
        }
    }
    centers
}

/// Recompute centres as member means (summed in point order). Each empty
/// cluster takes over the point farthest from its own centre, drawn from
/// clusters that can spare one.
fn update_centers(points: &Matrix, centers: &mut Matrix, assignment: &mut [usize]) {
    let k = centers.rows();
    let mut counts = vec![0usize; k];
    for &c in assignment.iter() {
        counts[c] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let donor = (0..points.rows())
            .filter(|&i| counts[assignment[i]] > 1)
            .map(|i| (i, sq_dist(points.row(i), centers.row(assignment[i]))))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            })
            .map(|(i, _)| i)
            .expect("n >= k leaves a cluster with two members");
        counts[assignment[donor]] -= 1;
        assignment[donor] = empty;
        counts[empty] = 1;
    }

    let dim = points.cols();
    let mut sums = Matrix::zeros(k, dim);
    for (i, &c) in assignment.iter().enumerate() {
        for (s, x) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    for c in 0..k {
        let n = counts[c] as f64;
        for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
            *dst = s / n;
        }
    }
}

/// Cluster the rows of `points` into `k` groups.
pub fn kmeans(points: &Matrix, k: usize, config: &KMeansConfig) -> Result<KMeansResult, CepError> {
    let n = points.rows();
    if k == 0 {
        return Err(CepError::NoClusters);
    }
    if n < k {
        return Err(CepError::TooFewPoints { points: n, clusters: k });
    }
    if points.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(CepError::NonFinitePoints);
    }
    if config.max_iterations == 0 {
        return Err(CepError::InvalidConfig("max iterations must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centers = seed_centers(points, k, config.init, &mut rng);
    let mut assignment = nearest(points, &centers, None);
    update_centers(points, &mut centers, &mut assignment);
    let mut wcss_history = vec![wcss(points, &centers, &assignment)];
    let mut iterations = 1;
    let mut converged = false;
    while iterations < config.max_iterations {
        let next = nearest(points, &centers, Some(&assignment));
        iterations += 1;
        if next == assignment {
            converged = true;
            break;
        }
        assignment = next;
        update_centers(points, &mut centers, &mut assignment);
        wcss_history.push(wcss(points, &centers, &assignment));
    }
    Ok(KMeansResult {
        assignment,
        centers,
        iterations,
        converged,
        wcss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> Matrix {
        Matrix::from_vec(xs.len(), 1, xs.to_vec())
    }

    #[test]
    fn separated_pairs() {
        let pts = line(&[0.0, 0.1, 10.0, 10.1]);
        for init in [KMeansInit::KMeansPlusPlus, KMeansInit::RandomPoints] {
            for seed in 0..5 {
                let r = kmeans(&pts, 2, &KMeansConfig { seed, init, ..Default::default() }).unwrap();
                let a = &r.assignment;
                assert_eq!(a[0], a[1]);
                assert_eq!(a[2], a[3]);
                assert_ne!(a[0], a[2]);
                assert!((r.centers.row(a[0])[0] - 0.05).abs() < 1e-12);
                assert!((r.centers.row(a[2])[0] - 10.05).abs() < 1e-12);
                assert!(r.converged);
            }
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = line(&[1.0, 2.0, 6.0]);
        let r = kmeans(&pts, 1, &KMeansConfig::default()).unwrap();
        assert_eq!(r.assignment, [0, 0, 0]);
        assert_eq!(r.centers.row(0), &[3.0]);
    }

    #[test]
    fn k_equals_n_has_zero_wcss() {
        let pts = line(&[4.0, -1.0, 2.5, 9.0, 0.0]);
        let r = kmeans(&pts, 5, &KMeansConfig::default()).unwrap();
        assert_eq!(r.wcss(), 0.0);
        let mut seen = r.assignment.clone();
        seen.sort_unstable();
        assert_eq!(seen, [0, 1, 2, 3, 4]);
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = line(&[1.0, 1.0, 1.0, 1.0, 5.0]);
        for init in [KMeansInit::KMeansPlusPlus, KMeansInit::RandomPoints] {
            let r = kmeans(&pts, 3, &KMeansConfig { init, ..Default::default() }).unwrap();
            let mut counts = [0; 3];
            for &c in &r.assignment {
                counts[c] += 1;
            }
            assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
        }
    }

    #[test]
    fn empty_cluster_takes_the_farthest_point() {
        let pts = line(&[0.0, 1.0, 2.0, 10.0]);
        let mut centers = line(&[1.0, 100.0]);
        let mut assignment = vec![0, 0, 0, 0];
        update_centers(&pts, &mut centers, &mut assignment);
        assert_eq!(assignment, [0, 0, 0, 1]);
        assert_eq!(centers.row(0), &[1.0]);
        assert_eq!(centers.row(1), &[10.0]);
    }

    #[test]
    fn input_errors() {
        let pts = line(&[0.0, 1.0]);
        let cfg = KMeansConfig::default();
        assert!(matches!(kmeans(&pts, 3, &cfg), Err(CepError::TooFewPoints { .. })));
        assert!(matches!(kmeans(&pts, 0, &cfg), Err(CepError::NoClusters)));
        assert!(matches!(kmeans(&line(&[0.0, f64::NAN]), 1, &cfg), Err(CepError::NonFinitePoints)));
    }

    #[test]
    fn converged_result_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pts = Matrix::from_vec(100, 3, data);
        let r = kmeans(&pts, 6, &KMeansConfig { seed: 2, ..Default::default() }).unwrap();
        assert!(r.converged);
        assert_eq!(assign_points(&pts, &r.centers), r.assignment);
        for w in r.wcss_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{w:?}");
        }
    }
}
