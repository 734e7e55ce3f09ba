//! Vectorized Gaussian belief propagation over the unit-vector decomposition
//! of a piloted GQSM frame.
//!
//! The transmit vector is written as `sum_p s_p^R e_{k_p^R} + j sum_p s_p^I e_{k_p^I}`,
//! so detection becomes the joint estimation of `2P` unit vectors, each
//! ranging over the `N_T` columns of the identity. The factor graph has one
//! variable node per unit vector and one factor node per real observation
//! (`2 N_R` of them). Each edge `(v, n)` carries a soft replica (a probability
//! vector over the `N_T` antennas) and its error covariance
//! `Gamma = diag(a) - a a^T`.
//!
//! One iteration performs soft interference cancellation at every factor node,
//! computes the Gaussian residual variance, forms the leave-one-out
//! (extrinsic) information vector and precision diagonal at every variable
//! node, evaluates the posterior over the `N_T` candidate unit vectors, and
//! damps replicas and covariances with factor `rho`. The final decision uses
//! the consensus belief (no leave-one-out) and a greedy assignment that keeps
//! the `P` antennas of each branch distinct.
//!
//! Variables are indexed `v = branch * P + p`; edges `e = v * 2N_R + n`.

use num_complex::Complex64;

use crate::channel::{Branch, RealSystem};
use crate::error::{GqsmError, Result};

/// How edge covariances are stored and propagated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceMode {
    /// Every edge stores only the scalar `h_n^T Gamma h_n`, the sole quantity
    /// the variance update reads. Damping is linear in `Gamma`, so damping the
    /// scalar is exact. Per-iteration cost `O(P N_T N_R)`.
    #[default]
    Projected,
    /// Every edge stores the full `N_T x N_T` covariance matrix and damps it
    /// entrywise. Per-iteration cost `O(P N_T^2 N_R)`.
    Full,
}

/// Iteration count, damping and numerical safeguards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderParams {
    pub tau_max: usize,
    pub rho: f64,
    pub variance_floor: f64,
    pub covariance: CovarianceMode,
}

impl Default for DecoderParams {
    fn default() -> Self {
        Self {
            tau_max: 100,
            rho: 0.5,
            variance_floor: 1e-12,
            covariance: CovarianceMode::default(),
        }
    }
}

impl DecoderParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(GqsmError::InvalidDamping(self.rho));
        }
        if !(self.variance_floor > 0.0 && self.variance_floor.is_finite()) {
            return Err(GqsmError::InvalidConfig(format!(
                "variance floor {} must be positive",
                self.variance_floor
            )));
        }
        Ok(())
    }
}

/// Log-prior over the `N_T` candidates of each variable.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Prior {
    /// `1 / N_T` for every candidate of every variable.
    #[default]
    Uniform,
    /// One log-weight vector per variable (`v = branch * P + p`); entries may
    /// be `-inf`. Weights need not be normalized.
    LogWeights(Vec<Vec<f64>>),
}

impl Prior {
    /// Point mass for variable `v` at antenna `t`, uniform elsewhere.
    pub fn with_point_masses(n_vars: usize, n_tx: usize, masses: &[(usize, usize)]) -> Self {
        let mut w = vec![vec![0.0; n_tx]; n_vars];
        for &(v, t) in masses {
            w[v] = vec![f64::NEG_INFINITY; n_tx];
            w[v][t] = 0.0;
        }
        Prior::LogWeights(w)
    }

    fn log_weights(&self, v: usize) -> Option<&[f64]> {
        match self {
            Prior::Uniform => None,
            Prior::LogWeights(w) => Some(&w[v]),
        }
    }

    fn check(&self, n_vars: usize, n_tx: usize) -> Result<()> {
        if let Prior::LogWeights(w) = self {
            let ok = w.len() == n_vars
                && w.iter().all(|row| {
                    row.len() == n_tx
                        && row.iter().all(|x| !x.is_nan() && *x != f64::INFINITY)
                        && row.iter().any(|x| x.is_finite())
                });
            if !ok {
                return Err(GqsmError::DimensionMismatch(format!(
                    "prior must hold {n_vars} log-weight vectors of length {n_tx} with a finite entry"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum CovarianceStore {
    /// `[e][t][u]`
    Full(Vec<f64>),
    /// `[e]`, holding `h_n^T Gamma_e h_n`
    Projected(Vec<f64>),
}

/// Per-edge soft replicas, covariances and the latest soft-IC scratch values.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    p: usize,
    n_obs: usize,
    n_tx: usize,
    replicas: Vec<f64>,
    covariance: CovarianceStore,
    /// Soft-IC residuals `y_bar` per edge, from the most recent sweep.
    residuals: Vec<f64>,
    /// Conditional variances `nu` per edge, from the most recent sweep.
    variances: Vec<f64>,
}

impl BeliefState {
    pub fn n_vars(&self) -> usize {
        2 * self.p
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn var_index(&self, branch: Branch, p: usize) -> usize {
        branch.index() * self.p + p
    }

    fn edge(&self, v: usize, n: usize) -> usize {
        v * self.n_obs + n
    }

    /// Soft replica held on edge `(branch, p, n)`.
    pub fn replica(&self, branch: Branch, p: usize, n: usize) -> &[f64] {
        let e = self.edge(self.var_index(branch, p), n);
        &self.replicas[e * self.n_tx..(e + 1) * self.n_tx]
    }

    /// Full covariance matrix (row-major `N_T x N_T`), available in
    /// [`CovarianceMode::Full`] only.
    pub fn covariance(&self, branch: Branch, p: usize, n: usize) -> Option<&[f64]> {
        let e = self.edge(self.var_index(branch, p), n);
        let sq = self.n_tx * self.n_tx;
        match &self.covariance {
            CovarianceStore::Full(g) => Some(&g[e * sq..(e + 1) * sq]),
            CovarianceStore::Projected(_) => None,
        }
    }

    /// `h_n^T Gamma h_n` for edge `(branch, p, n)` against the branch channel row.
    pub fn projected_covariance(&self, system: &RealSystem, branch: Branch, p: usize, n: usize) -> f64 {
        let e = self.edge(self.var_index(branch, p), n);
        self.quadratic_form(e, system.branch_row(branch, n))
    }

    fn quadratic_form(&self, e: usize, h: &[f64]) -> f64 {
        match &self.covariance {
            CovarianceStore::Projected(q) => q[e],
            CovarianceStore::Full(g) => {
                let nt = self.n_tx;
                let gamma = &g[e * nt * nt..(e + 1) * nt * nt];
                gamma
                    .chunks_exact(nt)
                    .zip(h)
                    .map(|(row, &ht)| ht * dot(row, h))
                    .sum()
            }
        }
    }

    /// Soft-IC residual of edge `(branch, p, n)` from the latest sweep.
    pub fn residual(&self, branch: Branch, p: usize, n: usize) -> f64 {
        self.residuals[self.edge(self.var_index(branch, p), n)]
    }

    /// Conditional variance of edge `(branch, p, n)` from the latest sweep.
    pub fn variance(&self, branch: Branch, p: usize, n: usize) -> f64 {
        self.variances[self.edge(self.var_index(branch, p), n)]
    }

    pub fn covariance_mode(&self) -> CovarianceMode {
        match self.covariance {
            CovarianceStore::Full(_) => CovarianceMode::Full,
            CovarianceStore::Projected(_) => CovarianceMode::Projected,
        }
    }

    /// Overwrites the replica of one edge and resets its covariance to
    /// `diag(a) - a a^T`.
    pub fn set_replica(&mut self, system: &RealSystem, branch: Branch, p: usize, n: usize, a: &[f64]) {
        let v = self.var_index(branch, p);
        let e = self.edge(v, n);
        let nt = self.n_tx;
        self.replicas[e * nt..(e + 1) * nt].copy_from_slice(a);
        let h = system.branch_row(branch, n);
        match &mut self.covariance {
            CovarianceStore::Projected(q) => q[e] = projected_simplex_covariance(a, h),
            CovarianceStore::Full(g) => write_simplex_covariance(a, &mut g[e * nt * nt..(e + 1) * nt * nt]),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `h^T (diag(a) - a a^T) h`.
fn projected_simplex_covariance(a: &[f64], h: &[f64]) -> f64 {
    let mut diag = 0.0;
    let mut mean = 0.0;
    for (&at, &ht) in a.iter().zip(h) {
        diag += at * ht * ht;
        mean += at * ht;
    }
    diag - mean * mean
}

fn write_simplex_covariance(a: &[f64], out: &mut [f64]) {
    let nt = a.len();
    for (t, row) in out.chunks_exact_mut(nt).enumerate() {
        for (u, g) in row.iter_mut().enumerate() {
            *g = -a[t] * a[u];
        }
        row[t] += a[t];
    }
}

/// `diag(a) - a a^T` as a row-major matrix.
pub fn simplex_covariance(a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() * a.len()];
    write_simplex_covariance(a, &mut out);
    out
}

/// Scores trailing the maximum by more than this get probability exactly 0.
///
/// `exp(-80)` is far below any tolerance that matters, and dropping such
/// terms keeps converged beliefs out of the subnormal range, where arithmetic
/// is orders of magnitude slower.
pub const SCORE_CUTOFF: f64 = 80.0;

/// Zeroes magnitudes that repeated damping would otherwise drive subnormal.
#[inline]
fn flush(x: f64) -> f64 {
    if x.abs() < 1e-200 {
        0.0
    } else {
        x
    }
}

/// Normalized `exp(scores - max)`; `-inf` scores and scores more than
/// [`SCORE_CUTOFF`] below the maximum get probability 0.
pub fn softmax_into(scores: &[f64], out: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        let d = s - max;
        *o = if d < -SCORE_CUTOFF { 0.0 } else { d.exp() };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; scores.len()];
    softmax_into(scores, &mut out);
    out
}

/// Extrinsic Gaussian belief on one variable: information vector and the
/// diagonal of the precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub eta: Vec<f64>,
    pub lambda_diag: Vec<f64>,
}

/// Candidate scores `eta_t - lambda_tt / 2 + log prior_t`.
///
/// Every candidate is a unit vector, so `a^T Lambda a = Lambda_tt` and the
/// diagonal of the precision fully determines the posterior.
pub fn candidate_scores(message: &Message, log_prior: Option<&[f64]>) -> Vec<f64> {
    let mut out: Vec<f64> = message
        .eta
        .iter()
        .zip(&message.lambda_diag)
        .map(|(e, l)| e - 0.5 * l)
        .collect();
    if let Some(lp) = log_prior {
        for (o, w) in out.iter_mut().zip(lp) {
            *o += w;
        }
    }
    out
}

/// Posterior soft replica and its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub replica: Vec<f64>,
    pub covariance: Vec<f64>,
}

/// Posterior mean over the unit-vector alphabet given an extrinsic message.
pub fn posterior_update(message: &Message, log_prior: Option<&[f64]>) -> Posterior {
    let replica = softmax(&candidate_scores(message, log_prior));
    let covariance = simplex_covariance(&replica);
    Posterior { replica, covariance }
}

/// Convex combination `rho * old + (1 - rho) * new` of replicas and covariances.
pub fn damp(old: &BeliefState, new: &BeliefState, rho: f64) -> Result<BeliefState> {
    let mut out = old.clone();
    out.blend_toward(new, rho)?;
    Ok(out)
}

impl BeliefState {
    /// In-place `self = rho * self + (1 - rho) * new`.
    pub fn blend_toward(&mut self, new: &BeliefState, rho: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(GqsmError::InvalidDamping(rho));
        }
        if (self.p, self.n_obs, self.n_tx) != (new.p, new.n_obs, new.n_tx)
            || self.covariance_mode() != new.covariance_mode()
        {
            return Err(GqsmError::DimensionMismatch(
                "belief states differ in shape or covariance mode".into(),
            ));
        }
        let mix = |a: &mut [f64], b: &[f64]| {
            for (x, y) in a.iter_mut().zip(b) {
                *x = rho * *x + (1.0 - rho) * y;
            }
        };
        mix(&mut self.replicas, &new.replicas);
        match (&mut self.covariance, &new.covariance) {
            (CovarianceStore::Full(a), CovarianceStore::Full(b))
            | (CovarianceStore::Projected(a), CovarianceStore::Projected(b)) => mix(a, b),
            _ => unreachable!("modes checked above"),
        }
        Ok(())
    }
}

/// Outcome of one decode.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Antenna chosen for each real-branch symbol `p` (0-based, distinct).
    pub k_r_hat: Vec<usize>,
    /// Antenna chosen for each imaginary-branch symbol `p` (0-based, distinct).
    pub k_i_hat: Vec<usize>,
    /// Consensus probabilities over antennas, one vector per variable.
    pub consensus: Vec<Vec<f64>>,
    pub iterations_run: usize,
    /// Some per-variable argmaxes collided and the greedy rule reassigned them.
    pub collision_resolved: bool,
}

/// Per-iteration observation passed to [`UvdGabp::decode_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub iteration: usize,
    /// Consensus probabilities per variable after this iteration.
    pub consensus: Vec<Vec<f64>>,
}

impl IterationTrace {
    /// Mean Shannon entropy (bits) of the consensus beliefs.
    pub fn mean_entropy(&self) -> f64 {
        mean_entropy(&self.consensus)
    }
}

pub fn mean_entropy(beliefs: &[Vec<f64>]) -> f64 {
    let total: f64 = beliefs
        .iter()
        .map(|b| {
            b.iter()
                .filter(|&&x| x > 0.0)
                .map(|&x| -x * x.log2())
                .sum::<f64>()
        })
        .sum();
    // certain beliefs give -0.0
    (total / beliefs.len() as f64).max(0.0) + 0.0
}

/// Assigns each variable (row of `scores`) a distinct antenna (column).
///
/// Repeatedly takes the highest-scoring (variable, antenna) pair among
/// unassigned variables and unused antennas; ties go to the lower variable,
/// then the lower antenna. Returns the assignment and whether the
/// per-row argmaxes collided.
pub fn greedy_assign(scores: &[Vec<f64>]) -> (Vec<usize>, bool) {
    let rows = scores.len();
    let argmax: Vec<usize> = scores.iter().map(|row| first_argmax(row)).collect();
    let collided = (0..rows).any(|i| argmax[..i].contains(&argmax[i]));
    if !collided {
        return (argmax, false);
    }
    let cols = scores.first().map_or(0, Vec::len);
    let mut assigned = vec![usize::MAX; rows];
    let mut used = vec![false; cols];
    for _ in 0..rows {
        let mut best: Option<(usize, usize, f64)> = None;
        for (v, row) in scores.iter().enumerate() {
            if assigned[v] != usize::MAX {
                continue;
            }
            for (t, &s) in row.iter().enumerate() {
                if used[t] {
                    continue;
                }
                if best.map_or(true, |(_, _, b)| s > b) {
                    best = Some((v, t, s));
                }
            }
        }
        let (v, t, _) = best.expect("P <= N_T leaves a free antenna");
        assigned[v] = t;
        used[t] = true;
    }
    (assigned, true)
}

fn first_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (t, &s) in row.iter().enumerate() {
        if s > row[best] {
            best = t;
        }
    }
    best
}

/// Fixed inputs of one decode: pilot components per variable and squared channel rows.
struct Problem<'a> {
    system: &'a RealSystem,
    /// Pilot component `s_v` per variable.
    s: Vec<f64>,
    /// Squared entries of each branch's channel, `[branch][n][t]`.
    h_sq: [Vec<f64>; 2],
    p: usize,
}

impl<'a> Problem<'a> {
    fn new(system: &'a RealSystem, pilots: &[Complex64]) -> Result<Self> {
        if pilots.is_empty() || pilots.len() > system.n_tx() {
            return Err(GqsmError::DimensionMismatch(format!(
                "{} pilots for {} transmit antennas",
                pilots.len(),
                system.n_tx()
            )));
        }
        let s = Branch::BOTH
            .iter()
            .flat_map(|&b| pilots.iter().map(move |&x| b.component(x)))
            .collect();
        let sq = |b: Branch| system.branch_matrix(b).as_slice().iter().map(|h| h * h).collect();
        Ok(Self {
            system,
            s,
            h_sq: [sq(Branch::Real), sq(Branch::Imag)],
            p: pilots.len(),
        })
    }

    fn branch_of(&self, v: usize) -> Branch {
        if v < self.p {
            Branch::Real
        } else {
            Branch::Imag
        }
    }

    fn row(&self, v: usize, n: usize) -> &[f64] {
        self.system.branch_row(self.branch_of(v), n)
    }

    fn row_sq(&self, v: usize, n: usize) -> &[f64] {
        let nt = self.system.n_tx();
        &self.h_sq[self.branch_of(v).index()][n * nt..(n + 1) * nt]
    }
}

/// The UVD-GaBP decoder. Holds configuration only; safe to share across threads.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UvdGabp {
    params: DecoderParams,
}

impl UvdGabp {
    pub fn new(params: DecoderParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &DecoderParams {
        &self.params
    }

    /// Every replica at the prior mean, covariances from `diag(a) - a a^T`.
    pub fn init_state(&self, system: &RealSystem, pilots: &[Complex64], prior: &Prior) -> Result<BeliefState> {
        let problem = Problem::new(system, pilots)?;
        self.init(&problem, prior)
    }

    fn init(&self, problem: &Problem, prior: &Prior) -> Result<BeliefState> {
        let (p, n_obs, nt) = (problem.p, problem.system.n_obs(), problem.system.n_tx());
        let n_vars = 2 * p;
        prior.check(n_vars, nt)?;
        let n_edges = n_vars * n_obs;
        let mut replicas = vec![0.0; n_edges * nt];
        for v in 0..n_vars {
            let mean = match prior.log_weights(v) {
                None => vec![1.0 / nt as f64; nt],
                Some(w) => softmax(w),
            };
            for n in 0..n_obs {
                let e = v * n_obs + n;
                replicas[e * nt..(e + 1) * nt].copy_from_slice(&mean);
            }
        }
        let covariance = match self.params.covariance {
            CovarianceMode::Full => {
                let mut g = vec![0.0; n_edges * nt * nt];
                for e in 0..n_edges {
                    write_simplex_covariance(&replicas[e * nt..(e + 1) * nt], &mut g[e * nt * nt..(e + 1) * nt * nt]);
                }
                CovarianceStore::Full(g)
            }
            CovarianceMode::Projected => CovarianceStore::Projected(
                (0..n_edges)
                    .map(|e| {
                        let (v, n) = (e / n_obs, e % n_obs);
                        projected_simplex_covariance(&replicas[e * nt..(e + 1) * nt], problem.row(v, n))
                    })
                    .collect(),
            ),
        };
        Ok(BeliefState {
            p,
            n_obs,
            n_tx: nt,
            replicas,
            covariance,
            residuals: vec![0.0; n_edges],
            variances: vec![0.0; n_edges],
        })
    }

    /// Soft-IC residual for one edge, evaluated directly from the replicas:
    /// `y_n - sum over every other variable v' of s_v' h_n^T a_{v':n}`.
    pub fn soft_ic(
        &self,
        state: &BeliefState,
        system: &RealSystem,
        pilots: &[Complex64],
        branch: Branch,
        p: usize,
        n: usize,
    ) -> f64 {
        let target = state.var_index(branch, p);
        let mut out = system.y[n];
        for b in Branch::BOTH {
            for (q, s) in pilots.iter().enumerate() {
                if state.var_index(b, q) == target {
                    continue;
                }
                out -= b.component(*s) * dot(system.branch_row(b, n), state.replica(b, q, n));
            }
        }
        out
    }

    /// Conditional variance for one edge: residual interference power of all
    /// other variables plus `N_0 / 2`, floored at `N_0 / 2 + variance_floor`.
    pub fn conditional_variance(
        &self,
        state: &BeliefState,
        system: &RealSystem,
        pilots: &[Complex64],
        branch: Branch,
        p: usize,
        n: usize,
    ) -> f64 {
        let target = state.var_index(branch, p);
        let mut interference = 0.0;
        for b in Branch::BOTH {
            for (q, s) in pilots.iter().enumerate() {
                if state.var_index(b, q) == target {
                    continue;
                }
                interference += b.component(*s).powi(2) * state.projected_covariance(system, b, q, n);
            }
        }
        self.floor_variance(interference, system.n0)
    }

    fn floor_variance(&self, interference: f64, n0: f64) -> f64 {
        debug_assert!(
            interference >= -1e-9 * (1.0 + interference.abs()),
            "negative interference power {interference}: covariance lost positive semidefiniteness"
        );
        (interference + 0.5 * n0).max(0.5 * n0 + self.params.variance_floor)
    }

    /// Extrinsic message to edge `(branch, p, n)`, summing directly over
    /// `n' != n`. Uses the residuals and variances stored by the latest sweep.
    pub fn extrinsic_message(
        &self,
        state: &BeliefState,
        system: &RealSystem,
        pilots: &[Complex64],
        branch: Branch,
        p: usize,
        n: usize,
    ) -> Message {
        self.leave_one_out(state, system, branch, branch.component(pilots[p]), p, Some(n))
    }

    /// Consensus message on `(branch, p)`: sum over all factor nodes.
    pub fn consensus_message(
        &self,
        state: &BeliefState,
        system: &RealSystem,
        pilots: &[Complex64],
        branch: Branch,
        p: usize,
    ) -> Message {
        self.leave_one_out(state, system, branch, branch.component(pilots[p]), p, None)
    }

    fn leave_one_out(
        &self,
        state: &BeliefState,
        system: &RealSystem,
        branch: Branch,
        s: f64,
        p: usize,
        skip: Option<usize>,
    ) -> Message {
        let nt = system.n_tx();
        let mut eta = vec![0.0; nt];
        let mut lambda_diag = vec![0.0; nt];
        for m in (0..system.n_obs()).filter(|&m| Some(m) != skip) {
            let y_bar = state.residual(branch, p, m);
            let nu = state.variance(branch, p, m);
            for (t, &h) in system.branch_row(branch, m).iter().enumerate() {
                eta[t] += s * y_bar / nu * h;
                lambda_diag[t] += s * s * h * h / nu;
            }
        }
        Message { eta, lambda_diag }
    }

    /// Recomputes every edge's soft-IC residual and conditional variance from
    /// the current replicas and covariances.
    pub fn sweep_factors(&self, state: &mut BeliefState, system: &RealSystem, pilots: &[Complex64]) -> Result<()> {
        let problem = Problem::new(system, pilots)?;
        self.factor_sweep(state, &problem);
        Ok(())
    }

    fn factor_sweep(&self, state: &mut BeliefState, problem: &Problem) {
        let (n_vars, n_obs, nt) = (state.n_vars(), state.n_obs, state.n_tx);
        let half_n0 = 0.5 * problem.system.n0;
        let mut projected = vec![0.0; n_vars];
        let mut weighted_cov = vec![0.0; n_vars];
        for n in 0..n_obs {
            let mut total = 0.0;
            let mut total_cov = 0.0;
            for v in 0..n_vars {
                let e = v * n_obs + n;
                let h = problem.row(v, n);
                let s = problem.s[v];
                projected[v] = s * dot(h, &state.replicas[e * nt..(e + 1) * nt]);
                total += projected[v];
                weighted_cov[v] = s * s * state.quadratic_form(e, h);
                total_cov += weighted_cov[v];
            }
            let y = problem.system.y[n];
            for v in 0..n_vars {
                let e = v * n_obs + n;
                state.residuals[e] = y - total + projected[v];
                let interference = if n_vars <= 8 {
                    // direct leave-one-out sum, free of cancellation
                    (0..n_vars).filter(|&w| w != v).map(|w| weighted_cov[w]).sum()
                } else {
                    (total_cov - weighted_cov[v]).max(0.0)
                };
                state.variances[e] = self.floor_variance(interference, 2.0 * half_n0);
            }
        }
    }

    /// Consensus score table `[v][t]` from the latest sweep.
    fn consensus_scores(&self, state: &BeliefState, problem: &Problem, prior: &Prior) -> Vec<Vec<f64>> {
        let (n_vars, n_obs, nt) = (state.n_vars(), state.n_obs, state.n_tx);
        (0..n_vars)
            .map(|v| {
                let s = problem.s[v];
                let mut eta = vec![0.0; nt];
                let mut lam = vec![0.0; nt];
                for n in 0..n_obs {
                    let e = v * n_obs + n;
                    let w = s * state.residuals[e] / state.variances[e];
                    let iw = s * s / state.variances[e];
                    for (t, (&h, &h2)) in problem.row(v, n).iter().zip(problem.row_sq(v, n)).enumerate() {
                        eta[t] += w * h;
                        lam[t] += iw * h2;
                    }
                }
                candidate_scores(
                    &Message { eta, lambda_diag: lam },
                    prior.log_weights(v),
                )
            })
            .collect()
    }

    /// One variable-node sweep: extrinsic messages, posteriors and damping for
    /// every edge. Requires a fresh factor sweep.
    fn variable_sweep(&self, state: &mut BeliefState, problem: &Problem, prior: &Prior) {
        let (n_vars, n_obs, nt) = (state.n_vars(), state.n_obs, state.n_tx);
        let rho = self.params.rho;
        let mut eta_full = vec![0.0; nt];
        let mut lam_full = vec![0.0; nt];
        let mut scores = vec![0.0; nt];
        let mut fresh = vec![0.0; nt];
        for v in 0..n_vars {
            let s = problem.s[v];
            let log_prior = prior.log_weights(v);
            eta_full.fill(0.0);
            lam_full.fill(0.0);
            for n in 0..n_obs {
                let e = v * n_obs + n;
                let w = s * state.residuals[e] / state.variances[e];
                let iw = s * s / state.variances[e];
                for t in 0..nt {
                    eta_full[t] += w * problem.row(v, n)[t];
                    lam_full[t] += iw * problem.row_sq(v, n)[t];
                }
            }
            for n in 0..n_obs {
                let e = v * n_obs + n;
                let h = problem.row(v, n);
                let h2 = problem.row_sq(v, n);
                let w = s * state.residuals[e] / state.variances[e];
                let iw = s * s / state.variances[e];
                // rank-1 downdate of the consensus sums removes node n
                for t in 0..nt {
                    scores[t] = (eta_full[t] - w * h[t]) - 0.5 * (lam_full[t] - iw * h2[t]);
                }
                if let Some(lp) = log_prior {
                    for (sc, w) in scores.iter_mut().zip(lp) {
                        *sc += w;
                    }
                }
                softmax_into(&scores, &mut fresh);
                let replica = &mut state.replicas[e * nt..(e + 1) * nt];
                match &mut state.covariance {
                    CovarianceStore::Projected(q) => {
                        let q_new = projected_simplex_covariance(&fresh, h);
                        q[e] = flush(rho * q[e] + (1.0 - rho) * q_new);
                    }
                    CovarianceStore::Full(g) => {
                        let gamma = &mut g[e * nt * nt..(e + 1) * nt * nt];
                        for (t, row) in gamma.chunks_exact_mut(nt).enumerate() {
                            let ft = (1.0 - rho) * fresh[t];
                            for (u, x) in row.iter_mut().enumerate() {
                                *x = flush(rho * *x - ft * fresh[u]);
                            }
                            row[t] += ft;
                        }
                    }
                }
                for (a, f) in replica.iter_mut().zip(&fresh) {
                    *a = flush(rho * *a + (1.0 - rho) * f);
                }
            }
        }
    }

    /// Runs one full iteration (factor sweep, then variable sweep with damping).
    pub fn iterate(&self, state: &mut BeliefState, system: &RealSystem, pilots: &[Complex64], prior: &Prior) -> Result<()> {
        let problem = Problem::new(system, pilots)?;
        prior.check(state.n_vars(), state.n_tx)?;
        self.factor_sweep(state, &problem);
        self.variable_sweep(state, &problem, prior);
        Ok(())
    }

    /// Hard decision from the consensus beliefs of `state`.
    pub fn consensus_decision(
        &self,
        state: &mut BeliefState,
        system: &RealSystem,
        pilots: &[Complex64],
        prior: &Prior,
    ) -> Result<DecodeResult> {
        let problem = Problem::new(system, pilots)?;
        prior.check(state.n_vars(), state.n_tx)?;
        Ok(self.decide(state, &problem, prior, 0))
    }

    fn decide(&self, state: &mut BeliefState, problem: &Problem, prior: &Prior, iterations_run: usize) -> DecodeResult {
        self.factor_sweep(state, problem);
        let scores = self.consensus_scores(state, problem, prior);
        let p = problem.p;
        let (k_r_hat, col_r) = greedy_assign(&scores[..p]);
        let (k_i_hat, col_i) = greedy_assign(&scores[p..]);
        DecodeResult {
            k_r_hat,
            k_i_hat,
            consensus: scores.iter().map(|s| softmax(s)).collect(),
            iterations_run,
            collision_resolved: col_r || col_i,
        }
    }

    /// Decodes one frame under the uniform prior.
    pub fn decode(&self, system: &RealSystem, pilots: &[Complex64]) -> Result<DecodeResult> {
        self.run(system, pilots, &Prior::Uniform, None)
    }

    pub fn decode_with_prior(&self, system: &RealSystem, pilots: &[Complex64], prior: &Prior) -> Result<DecodeResult> {
        self.run(system, pilots, prior, None)
    }

    /// Decodes one frame, reporting consensus beliefs after every iteration.
    ///
    /// Each report costs an extra factor sweep.
    pub fn decode_traced(
        &self,
        system: &RealSystem,
        pilots: &[Complex64],
        prior: &Prior,
        mut observer: impl FnMut(&IterationTrace),
    ) -> Result<DecodeResult> {
        self.run(system, pilots, prior, Some(&mut observer))
    }

    fn run(
        &self,
        system: &RealSystem,
        pilots: &[Complex64],
        prior: &Prior,
        mut observer: Option<&mut dyn FnMut(&IterationTrace)>,
    ) -> Result<DecodeResult> {
        let problem = Problem::new(system, pilots)?;
        let mut state = self.init(&problem, prior)?;
        for iteration in 1..=self.params.tau_max {
            self.factor_sweep(&mut state, &problem);
            self.variable_sweep(&mut state, &problem, prior);
            if let Some(obs) = observer.as_mut() {
                self.factor_sweep(&mut state, &problem);
                let consensus = self
                    .consensus_scores(&state, &problem, prior)
                    .iter()
                    .map(|s| softmax(s))
                    .collect();
                obs(&IterationTrace { iteration, consensus });
            }
        }
        Ok(self.decide(&mut state, &problem, prior, self.params.tau_max))
    }
}
