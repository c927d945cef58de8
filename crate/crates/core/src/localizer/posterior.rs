use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::radiomap::RadioMapVector;

/// Per-user location probabilities over the blocks, one row per user.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    users: usize,
    blocks: usize,
    p: Vec<f64>,
}

/// Rows that collapsed numerically during an update and were reset to uniform.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UpdateReport {
    pub reset_rows: Vec<usize>,
}

pub fn init_posterior(users: usize, blocks: usize) -> Posterior {
    Posterior::uniform(users, blocks)
}

/// Gaussian density of observing `s` when the mean RSS is `mu`.
pub fn likelihood(s: f64, mu: f64, sigma: f64) -> f64 {
    let z = (s - mu) / sigma;
    (-0.5 * z * z).exp() / (2.0 * PI * sigma * sigma).sqrt()
}

impl Posterior {
    pub fn uniform(users: usize, blocks: usize) -> Self {
        assert!(users >= 1 && blocks >= 1, "posterior needs at least one user and one block");
        Posterior {
            users,
            blocks,
            p: vec![1.0 / blocks as f64; users * blocks],
        }
    }

    /// Builds from explicit rows, normalizing each.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let users = rows.len();
        let blocks = rows.first().map_or(0, Vec::len);
        if users == 0 || blocks == 0 || rows.iter().any(|r| r.len() != blocks) {
            return Err(Error::Domain("posterior rows must be non-empty and equally long".into()));
        }
        let mut p = Vec::with_capacity(users * blocks);
        for r in rows {
            let total: f64 = r.iter().sum();
            if r.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || !(total > 0.0) {
                return Err(Error::Domain("posterior rows need finite non-negative mass".into()));
            }
            p.extend(r.iter().map(|v| v / total));
        }
        Ok(Posterior { users, blocks, p })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.p[i * self.blocks..(i + 1) * self.blocks]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.p.chunks_exact(self.blocks)
    }

    pub fn get(&self, i: usize, n: usize) -> f64 {
        self.p[i * self.blocks + n]
    }

    /// `Σ_i p_{i,n}` for every block.
    pub fn block_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.blocks];
        for row in self.rows() {
            for (m, v) in mass.iter_mut().zip(row) {
                *m += v;
            }
        }
        mass
    }

    /// Bayes update of every user row with its own measurement `s[i]` under
    /// the radio map `mu` (one entry per block). Computed in the log domain.
    pub fn update(&mut self, mu: &[f64], s: &[f64], sigma: f64) -> Result<UpdateReport> {
        if mu.len() != self.blocks {
            return Err(Error::Domain(format!(
                "radio map covers {} blocks, posterior has {}",
                mu.len(),
                self.blocks
            )));
        }
        if s.len() != self.users {
            return Err(Error::Domain(format!(
                "{} measurements for {} users",
                s.len(),
                self.users
            )));
        }
        if !(sigma > 0.0) {
            return Err(Error::Domain(format!("likelihood sigma must be > 0, got {sigma}")));
        }
        let inv = 1.0 / (2.0 * sigma * sigma);
        let mut report = UpdateReport::default();
        let mut logw = vec![0.0; self.blocks];
        for (i, row) in self.p.chunks_exact_mut(self.blocks).enumerate() {
            let mut max = f64::NEG_INFINITY;
            for ((w, &p), &m) in logw.iter_mut().zip(row.iter()).zip(mu) {
                let d = s[i] - m;
                *w = p.ln() - d * d * inv;
                if *w > max {
                    max = *w;
                }
            }
            let total: f64 = if max.is_finite() {
                logw.iter().map(|w| (w - max).exp()).sum()
            } else {
                f64::NAN
            };
            if !(total > 0.0 && total.is_finite()) {
                row.fill(1.0 / self.blocks as f64);
                report.reset_rows.push(i);
                continue;
            }
            for (p, w) in row.iter_mut().zip(&logw) {
                *p = (w - max).exp() / total;
            }
        }
        Ok(report)
    }

    /// Per-user most probable block; ties go to the lowest index.
    pub fn estimate_locations(&self) -> Vec<usize> {
        self.rows()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (n, &v)| if v > best.1 { (n, v) } else { best })
                    .0
            })
            .collect()
    }
}

pub fn posterior_update(
    p: &Posterior,
    map: &RadioMapVector,
    s: &[f64],
    sigma: f64,
) -> Result<(Posterior, UpdateReport)> {
    if map.blocks.len() != p.blocks() || map.blocks.iter().enumerate().any(|(i, &b)| i != b) {
        return Err(Error::Domain("posterior update needs the full radio map".into()));
    }
    let mut next = p.clone();
    let report = next.update(&map.mu, s, sigma)?;
    Ok((next, report))
}

pub fn estimate_locations(p: &Posterior) -> Vec<usize> {
    p.estimate_locations()
}

/// Blocks kept for configuration optimization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    pub blocks: Vec<usize>,
    /// The threshold removed every block; `blocks` holds the top-mass blocks.
    pub fallback: bool,
}

/// Blocks whose summed user mass exceeds `alpha`, ascending. When none does,
/// the `⌈1/alpha⌉` heaviest blocks are used instead.
pub fn active_blocks(p: &Posterior, alpha: f64) -> ActiveSet {
    let mass = p.block_mass();
    let blocks: Vec<usize> = (0..mass.len()).filter(|&n| mass[n] > alpha).collect();
    if !blocks.is_empty() {
        return ActiveSet {
            blocks,
            fallback: false,
        };
    }
    let keep = if alpha > 0.0 {
        ((1.0 / alpha).ceil() as usize).clamp(1, mass.len())
    } else {
        mass.len()
    };
    let mut order: Vec<usize> = (0..mass.len()).collect();
    order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
    order.truncate(keep);
    order.sort_unstable();
    ActiveSet {
        blocks: order,
        fallback: true,
    }
}
