//! Ground-truth decoders: exhaustive maximum likelihood over the transmitted
//! codebook and the genie-aided matched-filter bound.

use num_complex::Complex64;

use crate::channel::{Branch, RealSystem};
use crate::codec::{Frame, GqsmConfig};
use crate::combinadic::unrank_combination;
use crate::error::{GqsmError, Result};
use crate::gabp::greedy_assign;

/// Largest number of `(rank_r, rank_i)` hypotheses searched by default.
pub const DEFAULT_ML_CAP: u64 = 1 << 20;

/// The encoder-reachable antenna subsets of one branch, unranked once.
#[derive(Debug, Clone, PartialEq)]
pub struct MlSearchSpace {
    subsets: Vec<Vec<usize>>,
}

impl MlSearchSpace {
    pub fn new(config: &GqsmConfig, cap: u64) -> Result<Self> {
        let per_branch = config.budget().codewords_per_branch();
        let size = per_branch.saturating_mul(per_branch);
        if size > cap {
            return Err(GqsmError::SearchSpaceTooLarge { size, cap });
        }
        let subsets = (0..per_branch)
            .map(|r| unrank_combination(r, config.n_tx(), config.p()))
            .collect::<Result<_>>()?;
        Ok(Self { subsets })
    }

    /// Number of joint hypotheses, `2^(2 B_sp)`.
    pub fn size(&self) -> u64 {
        (self.subsets.len() as u64).pow(2)
    }

    pub fn subset(&self, rank: u64) -> &[usize] {
        &self.subsets[rank as usize]
    }
}

/// Minimum-distance decision.
#[derive(Debug, Clone, PartialEq)]
pub struct MlDecision {
    pub rank_r: u64,
    pub rank_i: u64,
    pub k_r: Vec<usize>,
    pub k_i: Vec<usize>,
    /// `||y - H x||^2` at the decision.
    pub residual: f64,
}

/// `sum_p s_p h_{k_p}` for one branch: the noiseless contribution of a subset.
fn branch_signal(system: &RealSystem, branch: Branch, subset: &[usize], pilots: &[Complex64]) -> Vec<f64> {
    let h = system.branch_matrix(branch);
    (0..system.n_obs())
        .map(|n| {
            subset
                .iter()
                .zip(pilots)
                .map(|(&k, &s)| branch.component(s) * h.get(n, k))
                .sum()
        })
        .collect()
}

/// Exhaustive search over all `2^(2 B_sp)` transmitted codewords.
///
/// Ties go to the lexicographically smallest `(rank_r, rank_i)`.
pub fn ml_decode(system: &RealSystem, pilots: &[Complex64], space: &MlSearchSpace) -> MlDecision {
    let signals = |b| -> Vec<Vec<f64>> {
        space
            .subsets
            .iter()
            .map(|s| branch_signal(system, b, s, pilots))
            .collect()
    };
    let real = signals(Branch::Real);
    let imag = signals(Branch::Imag);
    let mut residual_after_real = vec![0.0; system.n_obs()];
    let mut best = (0usize, 0usize, f64::INFINITY);
    for (rr, ur) in real.iter().enumerate() {
        for ((d, y), u) in residual_after_real.iter_mut().zip(&system.y).zip(ur) {
            *d = y - u;
        }
        for (ri, ui) in imag.iter().enumerate() {
            let mut dist = 0.0;
            for (d, u) in residual_after_real.iter().zip(ui) {
                let e = d - u;
                dist += e * e;
            }
            if dist < best.2 {
                best = (rr, ri, dist);
            }
        }
    }
    let (rr, ri, residual) = best;
    MlDecision {
        rank_r: rr as u64,
        rank_i: ri as u64,
        k_r: space.subsets[rr].clone(),
        k_i: space.subsets[ri].clone(),
        residual,
    }
}

/// Convenience wrapper building the search space with [`DEFAULT_ML_CAP`].
pub fn ml_decode_with_config(system: &RealSystem, pilots: &[Complex64], config: &GqsmConfig) -> Result<MlDecision> {
    let space = MlSearchSpace::new(config, DEFAULT_ML_CAP)?;
    Ok(ml_decode(system, pilots, &space))
}

/// Genie-aided matched-filter bound decision.
#[derive(Debug, Clone, PartialEq)]
pub struct MfbDecision {
    pub k_r: Vec<usize>,
    pub k_i: Vec<usize>,
    pub collision_resolved: bool,
}

/// Detects each of the `2P` unit vectors with every other contribution
/// cancelled using the true frame.
///
/// Variable `v` scores candidate `t` by `-||y_v - s_v h_t||^2`, where `y_v` is
/// the observation minus all true contributions except `v`'s own. Scores of
/// one branch go through the same greedy assignment as the message-passing
/// decoder so the antennas stay distinct.
pub fn mfb_decode(system: &RealSystem, pilots: &[Complex64], truth: &Frame) -> Result<MfbDecision> {
    let p = pilots.len();
    if truth.k_r.len() != p || truth.k_i.len() != p {
        return Err(GqsmError::DimensionMismatch(format!(
            "frame has {}/{} active antennas for {p} pilots",
            truth.k_r.len(),
            truth.k_i.len()
        )));
    }
    let n_obs = system.n_obs();
    let truth_of = |b: Branch| match b {
        Branch::Real => &truth.k_r,
        Branch::Imag => &truth.k_i,
    };
    // noiseless contribution of each variable
    let contributions: Vec<Vec<f64>> = Branch::BOTH
        .iter()
        .flat_map(|&b| {
            (0..p).map(move |q| {
                let h = system.branch_matrix(b);
                let k = truth_of(b)[q];
                let s = b.component(pilots[q]);
                (0..n_obs).map(|n| s * h.get(n, k)).collect()
            })
        })
        .collect();
    let total: Vec<f64> = (0..n_obs)
        .map(|n| contributions.iter().map(|c| c[n]).sum())
        .collect();

    let mut decisions = Vec::with_capacity(2);
    let mut collided = false;
    for (bi, b) in Branch::BOTH.into_iter().enumerate() {
        let h = system.branch_matrix(b);
        let scores: Vec<Vec<f64>> = (0..p)
            .map(|q| {
                let own = &contributions[bi * p + q];
                let s = b.component(pilots[q]);
                let clean: Vec<f64> = (0..n_obs).map(|n| system.y[n] - total[n] + own[n]).collect();
                (0..system.n_tx())
                    .map(|t| {
                        -(0..n_obs)
                            .map(|n| (clean[n] - s * h.get(n, t)).powi(2))
                            .sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        let (k, c) = greedy_assign(&scores);
        collided |= c;
        decisions.push(k);
    }
    let k_i = decisions.pop().expect("two branches");
    let k_r = decisions.pop().expect("two branches");
    Ok(MfbDecision {
        k_r,
        k_i,
        collision_resolved: collided,
    })
}
