use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::scene::{BlockGrid, Vec3};

use super::posterior::Posterior;

/// Largest active set the exact loss will integrate.
pub const BRUTE_FORCE_MAX_BLOCKS: usize = 64;

// exp(-x) underflows to zero beyond this.
const EXP_CUTOFF: f64 = 745.0;

/// Pairwise block-center distances, the cost of mistaking one block for another.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMatrix {
    n: usize,
    gamma: Vec<f64>,
}

impl ErrorMatrix {
    pub fn from_points(points: &[Vec3]) -> Self {
        let n = points.len();
        let mut gamma = vec![0.0; n * n];
        for a in 0..n {
            for b in a + 1..n {
                let d = points[a].distance(points[b]);
                gamma[a * n + b] = d;
                gamma[b * n + a] = d;
            }
        }
        ErrorMatrix { n, gamma }
    }

    pub fn from_grid(grid: &BlockGrid) -> Self {
        Self::from_points(&grid.block_centers())
    }

    /// Explicit matrix, checked for symmetry and a zero diagonal.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Domain("error matrix must be square".into()));
        }
        for a in 0..n {
            if rows[a][a] != 0.0 {
                return Err(Error::Domain("error matrix needs a zero diagonal".into()));
            }
            for b in 0..n {
                if rows[a][b] != rows[b][a] || !(rows[a][b] >= 0.0) {
                    return Err(Error::Domain("error matrix must be symmetric and non-negative".into()));
                }
            }
        }
        Ok(ErrorMatrix {
            n,
            gamma: rows.into_iter().flatten().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.gamma[a * self.n + b]
    }

    /// Restriction to `blocks`, re-indexed in the given order.
    pub fn subset(&self, blocks: &[usize]) -> Self {
        let n = blocks.len();
        let mut gamma = Vec::with_capacity(n * n);
        for &a in blocks {
            gamma.extend(blocks.iter().map(|&b| self.get(a, b)));
        }
        ErrorMatrix { n, gamma }
    }
}

pub fn error_matrix(grid: &BlockGrid) -> ErrorMatrix {
    ErrorMatrix::from_grid(grid)
}

pub fn half_distance(mu_a: f64, mu_b: f64) -> f64 {
    (mu_b - mu_a).abs() / 2.0
}

/// Upper-tail probability of the standard normal.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Loss evaluation over a fixed active subset: the posterior mass `P_n`
/// summed over users, the distances between the active blocks and the
/// observation noise.
#[derive(Debug, Clone)]
pub struct LossContext {
    mass: Vec<f64>,
    gamma: ErrorMatrix,
    sigma: f64,
}

impl LossContext {
    pub fn new(mass: Vec<f64>, gamma: ErrorMatrix, sigma: f64) -> Result<Self> {
        if mass.len() != gamma.len() {
            return Err(Error::Domain(format!(
                "{} block masses for a {}-block error matrix",
                mass.len(),
                gamma.len()
            )));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!("loss sigma must be > 0, got {sigma}")));
        }
        Ok(LossContext { mass, gamma, sigma })
    }

    /// Restricts a posterior and the full error matrix to `blocks`.
    pub fn for_active(p: &Posterior, gamma: &ErrorMatrix, blocks: &[usize], sigma: f64) -> Result<Self> {
        if gamma.len() != p.blocks() {
            return Err(Error::Domain("error matrix and posterior disagree on block count".into()));
        }
        let mass = p.block_mass();
        Self::new(blocks.iter().map(|&n| mass[n]).collect(), gamma.subset(blocks), sigma)
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn check(&self, mu: &[f64]) {
        assert_eq!(mu.len(), self.len(), "radio map and loss context disagree on the active set");
    }

    /// Union bound on the expected localization error, in meters.
    pub fn upper_bound(&self, mu: &[f64]) -> f64 {
        self.check(mu);
        let n = self.len();
        let k = 1.0 / (8.0 * self.sigma * self.sigma);
        let mut total = 0.0;
        for a in 0..n {
            let row = &self.gamma.gamma[a * n..(a + 1) * n];
            let (pa, ma) = (self.mass[a], mu[a]);
            let mut acc = 0.0;
            for b in a + 1..n {
                let d = ma - mu[b];
                let x = d * d * k;
                if x < EXP_CUTOFF {
                    acc += (pa + self.mass[b]) * row[b] * (-x).exp();
                }
            }
            total += acc;
        }
        total / 2.0
    }

    /// Negative gradient of [`upper_bound`](Self::upper_bound) with respect to `mu`.
    pub fn gradient(&self, mu: &[f64]) -> Vec<f64> {
        self.check(mu);
        let n = self.len();
        let s2 = self.sigma * self.sigma;
        let k = 1.0 / (8.0 * s2);
        let mut g = vec![0.0; n];
        for a in 0..n {
            let row = &self.gamma.gamma[a * n..(a + 1) * n];
            for b in a + 1..n {
                let d = mu[a] - mu[b];
                let x = d * d * k;
                if x >= EXP_CUTOFF {
                    continue;
                }
                // d l_u / d mu_a; the b-side derivative has the opposite sign.
                let t = (self.mass[a] + self.mass[b]) * row[b] / 2.0 * (-d / (4.0 * s2)) * (-x).exp();
                g[a] -= t;
                g[b] += t;
            }
        }
        g
    }

    /// Exact expected localization error under nearest-mean decisions.
    pub fn brute_force(&self, mu: &[f64]) -> Result<f64> {
        self.check(mu);
        let n = self.len();
        if n > BRUTE_FORCE_MAX_BLOCKS {
            return Err(Error::OracleTooLarge(n, BRUTE_FORCE_MAX_BLOCKS));
        }
        if n <= 1 {
            return Ok(0.0);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| mu[a].total_cmp(&mu[b]).then(a.cmp(&b)));
        // Decision interval of each block; duplicated means go to the lowest index.
        let mut region = vec![None; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && mu[order[j + 1]] == mu[order[i]] {
                j += 1;
            }
            let lo = if i == 0 {
                f64::NEG_INFINITY
            } else {
                (mu[order[i - 1]] + mu[order[i]]) / 2.0
            };
            let hi = if j + 1 == n {
                f64::INFINITY
            } else {
                (mu[order[i]] + mu[order[j + 1]]) / 2.0
            };
            // order is sorted by index within equal means
            region[order[i]] = Some((lo, hi));
            i = j + 1;
        }
        let mut total = 0.0;
        for a in 0..n {
            if self.mass[a] == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for b in 0..n {
                if b == a {
                    continue;
                }
                if let Some((lo, hi)) = region[b] {
                    acc += self.gamma.get(a, b) * interval_probability(lo, hi, mu[a], self.sigma);
                }
            }
            total += self.mass[a] * acc;
        }
        Ok(total)
    }
}

/// `P(lo < X < hi)` for `X ~ N(mean, sigma²)`, evaluated on the tail that
/// avoids cancellation.
fn interval_probability(lo: f64, hi: f64, mean: f64, sigma: f64) -> f64 {
    let a = (lo - mean) / sigma;
    let b = (hi - mean) / sigma;
    if a >= 0.0 {
        q_function(a) - q_function(b)
    } else if b <= 0.0 {
        q_function(-b) - q_function(-a)
    } else {
        1.0 - q_function(-a) - q_function(b)
    }
}

pub fn loss_upper_bound(p: &Posterior, mu: &[f64], gamma: &ErrorMatrix, sigma: f64) -> Result<f64> {
    Ok(LossContext::new(p.block_mass(), gamma.clone(), sigma)?.upper_bound(mu))
}

pub fn loss_gradient(p: &Posterior, mu: &[f64], gamma: &ErrorMatrix, sigma: f64) -> Result<Vec<f64>> {
    Ok(LossContext::new(p.block_mass(), gamma.clone(), sigma)?.gradient(mu))
}

pub fn brute_force_loss(p: &Posterior, mu: &[f64], gamma: &ErrorMatrix, sigma: f64) -> Result<f64> {
    LossContext::new(p.block_mass(), gamma.clone(), sigma)?.brute_force(mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localizer::posterior::init_posterior;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_blocks() -> ErrorMatrix {
        ErrorMatrix::from_rows(vec![vec![0.0, 0.05], vec![0.05, 0.0]]).unwrap()
    }

    // Direct triple sum over users, blocks and competitors.
    fn upper_bound_oracle(p: &Posterior, mu: &[f64], gamma: &ErrorMatrix, sigma: f64) -> f64 {
        let mut total = 0.0;
        for row in p.rows() {
            for (n, &pn) in row.iter().enumerate() {
                for m in 0..mu.len() {
                    let d = half_distance(mu[n], mu[m]);
                    total += pn * gamma.get(n, m) / 2.0 * (-d * d / (2.0 * sigma * sigma)).exp();
                }
            }
        }
        total
    }

    // Composite Simpson integration of the decision rule, with each decision
    // switch located by bisection; independent of the CDF path.
    fn brute_force_oracle(p: &Posterior, mu: &[f64], gamma: &ErrorMatrix, sigma: f64) -> f64 {
        let decide = |s: f64| {
            (0..mu.len())
                .min_by(|&a, &b| ((s - mu[a]).abs()).total_cmp(&(s - mu[b]).abs()).then(a.cmp(&b)))
                .unwrap()
        };
        let mass = p.block_mass();
        let mut total = 0.0;
        for n in 0..mu.len() {
            let pdf = |s: f64| {
                let z = (s - mu[n]) / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            };
            let simpson = |a: f64, b: f64| (b - a) / 6.0 * (pdf(a) + 4.0 * pdf((a + b) / 2.0) + pdf(b));
            let (lo, hi) = (mu[n] - 12.0 * sigma, mu[n] + 12.0 * sigma);
            let steps = 20_000;
            let h = (hi - lo) / steps as f64;
            let mut acc = 0.0;
            for k in 0..steps {
                let (a, b) = (lo + k as f64 * h, lo + (k + 1) as f64 * h);
                let (da, db) = (decide(a), decide(b));
                if da == db {
                    acc += gamma.get(n, da) * simpson(a, b);
                } else {
                    let (mut x, mut y) = (a, b);
                    for _ in 0..80 {
                        let mid = (x + y) / 2.0;
                        if decide(mid) == da {
                            x = mid;
                        } else {
                            y = mid;
                        }
                    }
                    acc += gamma.get(n, da) * simpson(a, x) + gamma.get(n, db) * simpson(x, b);
                }
            }
            total += mass[n] * acc;
        }
        total
    }

    #[test]
    fn error_matrix_distances() {
        let grid = BlockGrid::new(Vec3::new(0.0, 0.0, 0.0), 0.05, [3, 3, 3]).unwrap();
        let g = error_matrix(&grid);
        assert_eq!(g.get(4, 4), 0.0);
        assert_abs_diff_eq!(g.get(0, 1), 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(g.get(0, 4), 0.05 * 2f64.sqrt(), epsilon = 1e-12);
        for a in 0..27 {
            for b in 0..27 {
                assert_eq!(g.get(a, b), g.get(b, a));
                for c in 0..27 {
                    assert!(g.get(a, c) <= g.get(a, b) + g.get(b, c) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn half_distance_values() {
        assert_eq!(half_distance(2.0, 2.0), 0.0);
        assert_eq!(half_distance(1.0, 3.0), 1.0);
        assert_eq!(half_distance(3.0, 1.0), 1.0);
    }

    #[test]
    fn upper_bound_reference_values() {
        let p = init_posterior(1, 2);
        let sigma = 0.3;
        // Means two sigma apart: the half distance is one sigma.
        let l = loss_upper_bound(&p, &[1.0, 1.0 + 2.0 * sigma], &two_blocks(), sigma).unwrap();
        assert_abs_diff_eq!(l, 0.025 * (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(l, 0.015163, epsilon = 1e-6);

        let equal = loss_upper_bound(&p, &[1.0, 1.0], &two_blocks(), sigma).unwrap();
        assert_abs_diff_eq!(equal, 0.05 / 2.0, epsilon = 1e-15);

        let single = ErrorMatrix::from_rows(vec![vec![0.0]]).unwrap();
        assert_eq!(loss_upper_bound(&init_posterior(1, 1), &[3.0], &single, sigma).unwrap(), 0.0);
    }

    #[test]
    fn brute_force_reference_values() {
        let p = init_posterior(1, 2);
        let sigma = 0.3;
        let l = brute_force_loss(&p, &[1.0, 1.0 + 2.0 * sigma], &two_blocks(), sigma).unwrap();
        assert_abs_diff_eq!(l, 0.05 * q_function(1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(l, 0.007933, epsilon = 1e-6);
        let oracle = brute_force_oracle(&p, &[1.0, 1.0 + 2.0 * sigma], &two_blocks(), sigma);
        assert_abs_diff_eq!(l, oracle, epsilon = 1e-9);

        let single = ErrorMatrix::from_rows(vec![vec![0.0]]).unwrap();
        assert_eq!(brute_force_loss(&init_posterior(1, 1), &[3.0], &single, sigma).unwrap(), 0.0);
    }

    #[test]
    fn brute_force_refuses_large_sets() {
        let pts: Vec<Vec3> = (0..65).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let ctx = LossContext::new(vec![1.0 / 65.0; 65], ErrorMatrix::from_points(&pts), 1.0).unwrap();
        assert!(matches!(ctx.brute_force(&[0.0; 65]), Err(Error::OracleTooLarge(65, 64))));
    }

    #[test]
    fn brute_force_ties_go_to_lower_index() {
        let g = ErrorMatrix::from_rows(vec![
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.0, 1.0],
            vec![2.0, 1.0, 0.0],
        ])
        .unwrap();
        let p = init_posterior(1, 3);
        let sigma = 0.4;
        let mu = [1.0, 2.0, 1.0];
        let l = brute_force_loss(&p, &mu, &g, sigma).unwrap();
        // Block 2 never wins; every observation decides 0 or 1.
        let cross = q_function(0.5 / sigma);
        let expected = (1.0 / 3.0) * (1.0 * cross + 1.0 * cross + (2.0 * (1.0 - cross) + 1.0 * cross));
        assert_abs_diff_eq!(l, expected, epsilon = 1e-12);
    }

    #[test]
    fn random_instances_match_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(2..6);
            let users = rng.gen_range(1..4);
            let rows = (0..users).map(|_| (0..n).map(|_| rng.gen_range(0.01..1.0)).collect()).collect();
            let p = Posterior::from_rows(rows).unwrap();
            let pts: Vec<Vec3> = (0..n)
                .map(|_| Vec3::new(rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5)))
                .collect();
            let g = ErrorMatrix::from_points(&pts);
            let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
            let sigma = rng.gen_range(0.05..0.5);
            let lu = loss_upper_bound(&p, &mu, &g, sigma).unwrap();
            assert_abs_diff_eq!(lu, upper_bound_oracle(&p, &mu, &g, sigma), epsilon = 1e-12);
            let l = brute_force_loss(&p, &mu, &g, sigma).unwrap();
            assert_abs_diff_eq!(l, brute_force_oracle(&p, &mu, &g, sigma), epsilon = 1e-7);
            assert!(lu >= l);
        }
    }

    #[test]
    fn gradient_signs_and_zero() {
        let p = init_posterior(1, 2);
        let g = loss_gradient(&p, &[1.0, 1.5], &two_blocks(), 0.3).unwrap();
        // Returned vector is the descent direction: push mu_1 down and mu_2 up.
        assert!(g[0] < 0.0 && g[1] > 0.0);
        let flat = loss_gradient(&init_posterior(2, 3), &[2.0; 3], &ErrorMatrix::from_points(&[
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(0.0, 0.2, 0.0),
        ]), 0.3)
        .unwrap();
        assert!(flat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let n = rng.gen_range(2..20);
            let p = Posterior::from_rows(vec![(0..n).map(|_| rng.gen_range(0.01..1.0)).collect()]).unwrap();
            let pts: Vec<Vec3> = (0..n).map(|_| Vec3::new(rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5), 0.0)).collect();
            let g = ErrorMatrix::from_points(&pts);
            let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
            let sigma = rng.gen_range(0.1..0.5);
            let ctx = LossContext::new(p.block_mass(), g, sigma).unwrap();
            let grad = ctx.gradient(&mu);
            let h = 1e-6 * mu.iter().cloned().fold(0.0, f64::max);
            for k in 0..n {
                let mut up = mu.clone();
                let mut down = mu.clone();
                up[k] += h;
                down[k] -= h;
                let fd = -(ctx.upper_bound(&up) - ctx.upper_bound(&down)) / (2.0 * h);
                if grad[k].abs() > 1e-12 {
                    assert!(((grad[k] - fd) / grad[k]).abs() < 1e-5, "{} vs {}", grad[k], fd);
                }
            }
        }
    }
}
