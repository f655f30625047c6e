//! K-means dictionary learning on whitened patches.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_ATOMS: usize = 20;
pub const DEFAULT_ITERS: usize = 100;
/// Lloyd iterations stop once no centroid coordinate moves more than this.
pub const MOVE_TOLERANCE: f64 = 1e-6;

// Fixed reduction blocks make centroid sums independent of the thread count.
const BLOCK: usize = 4096;

/// `K` atoms, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub atoms: Array2<f64>,
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.atoms.ncols()
    }

    /// Turns raw centroids into a dictionary: optionally unit-normalized,
    /// then sorted lexicographically. Fails on zero or duplicate atoms.
    pub fn from_centroids(mut centroids: Array2<f64>, normalize: bool) -> Result<Self> {
        if normalize {
            for mut row in centroids.rows_mut() {
                let norm = row.dot(&row).sqrt();
                if norm < 1e-12 {
                    return Err(Error::InvalidArgument("k-means produced a zero centroid".into()));
                }
                row /= norm;
            }
        }
        let mut rows: Vec<Vec<f64>> = centroids.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| lex_cmp(a, b));
        if rows.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("dictionary contains duplicate atoms".into()));
        }
        let (k, dim) = centroids.dim();
        let flat = rows.into_iter().flatten().collect();
        Ok(Dictionary { atoms: Array2::from_shape_vec((k, dim), flat).expect("shape") })
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
}

/// Raw Lloyd output before atom normalization.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Array2<f64>,
    /// Objective (sum of squared distances to the assigned centroid) after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Learns a unit-norm dictionary of `k` atoms.
pub fn train_kmeans(patches: ArrayView2<'_, f64>, k: usize, iters: usize, seed: u64) -> Result<Dictionary> {
    let fit = kmeans(patches, &KMeansOptions { k, max_iters: iters, seed })?;
    Dictionary::from_centroids(fit.centroids, true)
}

/// K-means++ seeding followed by Lloyd iterations.
pub fn kmeans(points: ArrayView2<'_, f64>, opts: &KMeansOptions) -> Result<KMeansFit> {
    let (n, dim) = points.dim();
    let k = opts.k;
    if k == 0 {
        return Err(Error::InvalidArgument("dictionary size must be positive".into()));
    }
    if n < k {
        return Err(Error::TooFewPoints { k, got: n });
    }
    let points = points.as_standard_layout();
    let data = points.as_slice().expect("standard layout");
    let row = |i: usize| &data[i * dim..(i + 1) * dim];

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut centroids = plus_plus_init(data, n, dim, k, &mut rng)?;

    let mut objective = Vec::new();
    let mut assignment = vec![0usize; n];
    let mut dist = vec![0.0f64; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        assign(data, dim, &centroids, &mut assignment, &mut dist);
        objective.push(dist.iter().sum());

        let (sums, counts) = cluster_sums(data, dim, k, &assignment);
        let mut next = vec![0.0; k * dim];
        let mut empty = Vec::new();
        for c in 0..k {
            if counts[c] == 0 {
                empty.push(c);
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for d in 0..dim {
                next[c * dim + d] = sums[c * dim + d] * inv;
            }
        }
        for c in empty {
            // ties resolve to the lowest index; a reseeded point is not reused
            let far = (0..n).fold(0, |best, i| if dist[i] > dist[best] { i } else { best });
            next[c * dim..(c + 1) * dim].copy_from_slice(row(far));
            dist[far] = -1.0;
        }

        let movement = next.iter().zip(&centroids).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        centroids = next;
        iterations += 1;
        if movement < MOVE_TOLERANCE {
            converged = true;
            break;
        }
    }

    Ok(KMeansFit {
        centroids: Array2::from_shape_vec((k, dim), centroids).expect("shape"),
        objective,
        iterations,
        converged,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus_init(data: &[f64], n: usize, dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let first = rng.random_range(0..n as u64) as usize;
    let mut centroids = row(first).to_vec();
    let mut best: Vec<f64> = (0..n).into_par_iter().map(|i| sq_dist(row(i), row(first))).collect();

    for _ in 1..k {
        let total: f64 = best.iter().sum();
        if total.is_nan() || total <= 0.0 {
            let distinct = centroids.len() / dim;
            return Err(Error::TooFewPoints { k, got: distinct });
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in best.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        let pick = pick.expect("total > 0 implies a positive weight");
        let chosen = row(pick).to_vec();
        best.par_iter_mut().enumerate().for_each(|(i, b)| {
            let d = sq_dist(row(i), &chosen);
            if d < *b {
                *b = d;
            }
        });
        centroids.extend_from_slice(&chosen);
    }
    Ok(centroids)
}

/// Nearest-centroid assignment. Candidate distances come from a blocked
/// `‖x‖² − 2x·c + ‖c‖²` product; the reported distance is recomputed exactly
/// for the chosen centroid.
fn assign(data: &[f64], dim: usize, centroids: &[f64], assignment: &mut [usize], dist: &mut [f64]) {
    let k = centroids.len() / dim;
    let c = ArrayView2::from_shape((k, dim), centroids).expect("centroid shape");
    let c_norms: Vec<f64> = c.rows().into_iter().map(|r| r.dot(&r)).collect();
    assignment
        .par_chunks_mut(BLOCK)
        .zip(dist.par_chunks_mut(BLOCK))
        .enumerate()
        .for_each(|(b, (a_block, d_block))| {
            let start = b * BLOCK;
            let rows = a_block.len();
            let x = ArrayView2::from_shape((rows, dim), &data[start * dim..(start + rows) * dim]).expect("block shape");
            let dots = x.dot(&c.t());
            for (off, (a, d)) in a_block.iter_mut().zip(d_block.iter_mut()).enumerate() {
                let mut best = (0, f64::INFINITY);
                for (j, (&dot, &cn)) in dots.row(off).iter().zip(&c_norms).enumerate() {
                    let approx = cn - 2.0 * dot;
                    if approx < best.1 {
                        best = (j, approx);
                    }
                }
                let xi = &data[(start + off) * dim..(start + off + 1) * dim];
                *a = best.0;
                *d = sq_dist(xi, &centroids[best.0 * dim..(best.0 + 1) * dim]);
            }
        });
}

fn cluster_sums(data: &[f64], dim: usize, k: usize, assignment: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let partials: Vec<(Vec<f64>, Vec<usize>)> = assignment
        .par_chunks(BLOCK)
        .enumerate()
        .map(|(b, chunk)| {
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for (off, &c) in chunk.iter().enumerate() {
                let i = b * BLOCK + off;
                counts[c] += 1;
                for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(&data[i * dim..(i + 1) * dim]) {
                    *s += x;
                }
            }
            (sums, counts)
        })
        .collect();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (ps, pc) in partials {
        sums.iter_mut().zip(ps).for_each(|(s, p)| *s += p);
        counts.iter_mut().zip(pc).for_each(|(c, p)| *c += p);
    }
    (sums, counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr_free::normal;

    /// Box-Muller normal draws, to avoid pulling in another crate for tests.
    mod rand_distr_free {
        use rand::Rng;
        pub fn normal(rng: &mut impl Rng) -> f64 {
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }
    }

    fn row_norm(r: ndarray::ArrayView1<'_, f64>) -> f64 {
        r.dot(&r).sqrt()
    }

    #[test]
    fn one_point_per_cluster() {
        let pts = ndarray::array![[3.0, 0.0, 0.0], [0.0, -2.0, 0.0], [1.0, 1.0, 1.0], [0.0, 0.0, 5.0]];
        let dict = train_kmeans(pts.view(), 4, 10, 7).unwrap();
        let mut expected: Vec<Vec<f64>> = pts
            .rows()
            .into_iter()
            .map(|r| {
                let n = row_norm(r);
                r.iter().map(|v| v / n).collect()
            })
            .collect();
        expected.sort_by(|a, b| lex_cmp(a, b));
        for (atom, e) in dict.atoms.rows().into_iter().zip(&expected) {
            for (a, b) in atom.iter().zip(e) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_blobs_recover_normalized_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let centers = [[5.0, 1.0], [-1.0, 4.0]];
        let mut pts = Vec::new();
        let mut means = [[0.0; 2]; 2];
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..200 {
                let p = [center[0] + 0.2 * normal(&mut rng), center[1] + 0.2 * normal(&mut rng)];
                means[c][0] += p[0] / 200.0;
                means[c][1] += p[1] / 200.0;
                pts.extend_from_slice(&p);
            }
        }
        let pts = Array2::from_shape_vec((400, 2), pts).unwrap();
        let dict = train_kmeans(pts.view(), 2, 100, 1).unwrap();
        for m in means {
            let n = (m[0] * m[0] + m[1] * m[1]).sqrt();
            let best = dict
                .atoms
                .rows()
                .into_iter()
                .map(|a| ((a[0] * m[0] + a[1] * m[1]) / n).clamp(-1.0, 1.0).acos())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-3, "angular error {best}");
        }
    }

    #[test]
    fn errors() {
        let pts = Array2::<f64>::zeros((3, 2));
        assert!(matches!(train_kmeans(pts.view(), 4, 5, 0), Err(Error::TooFewPoints { k: 4, got: 3 })));
        assert!(train_kmeans(pts.view(), 0, 5, 0).is_err());
        // three identical points cannot seed two distinct centroids
        let same = Array2::from_elem((3, 2), 1.0);
        assert!(matches!(train_kmeans(same.view(), 2, 5, 0), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn default_size_is_twenty() {
        assert_eq!(DEFAULT_ATOMS, 20);
    }

    #[test]
    fn unnormalized_centroids_keep_scale() {
        let pts = ndarray::array![[3.0, 0.0], [0.0, 2.0]];
        let dict = Dictionary::from_centroids(pts.clone(), false).unwrap();
        assert_eq!(dict.atoms, ndarray::array![[0.0, 2.0], [3.0, 0.0]]);
    }

    fn random_points(n: usize, dim: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, dim), |_| normal(&mut rng))
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let pts = random_points(20_000, 6, 3);
        let opts = KMeansOptions { k: 8, max_iters: 30, seed: 5 };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| kmeans(pts.view(), &opts).unwrap().centroids)
        };
        assert_eq!(run(1), run(4));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn atoms_unit_norm_and_objective_monotone(seed in any::<u64>(), k in 1usize..6, n in 10usize..80) {
            let pts = random_points(n, 3, seed);
            let fit = kmeans(pts.view(), &KMeansOptions { k, max_iters: 50, seed }).unwrap();
            for w in fit.objective.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{} -> {}", w[0], w[1]);
            }
            let dict = Dictionary::from_centroids(fit.centroids, true).unwrap();
            for a in dict.atoms.rows() {
                prop_assert!((row_norm(a) - 1.0).abs() < 1e-10);
            }
        }
    }
}
