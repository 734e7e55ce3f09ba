//! Bit-to-antenna mapping and construction of the sparse GQSM transmit vector.
//!
//! Each IQ branch carries `B_sp = floor(log2 C(N_T, P))` spatial bits by
//! selecting which `P` of the `N_T` antennas carry the real (or imaginary)
//! parts of the `P` pilot symbols. Only the lexicographically first
//! `2^B_sp` antenna subsets are ever transmitted. Antenna indices are 0-based
//! in this API; serialized output and documentation use 1-based numbering.

use num_complex::Complex64;
use rand::Rng;

use crate::combinadic::{binomial, rank_combination, unrank_combination};
use crate::constellation::ConstellationSpec;
use crate::error::{GqsmError, Result};

/// Spatial, digital and total bit counts of one GQSM frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitBudget {
    /// Bits carried by one branch's antenna selection.
    pub spatial: usize,
    /// Bits carried by the `P` symbols.
    pub digital: usize,
    /// `2 * spatial + digital`.
    pub total: usize,
}

impl BitBudget {
    /// Information-bearing bits per frame in the piloted setting.
    pub fn spatial_per_frame(&self) -> usize {
        2 * self.spatial
    }

    /// Number of transmitted antenna subsets per branch, `2^spatial`.
    pub fn codewords_per_branch(&self) -> u64 {
        1u64 << self.spatial
    }
}

/// Bit budget for `n_tx` antennas, `p` symbols and an `m`-ary constellation.
pub fn bits_per_frame(n_tx: usize, p: usize, m: usize) -> Result<BitBudget> {
    if p == 0 || p > n_tx {
        return Err(GqsmError::InvalidConfig(format!(
            "need 1 <= P <= N_T, got P={p}, N_T={n_tx}"
        )));
    }
    if m < 2 || !m.is_power_of_two() {
        return Err(GqsmError::InvalidConfig(format!(
            "constellation size {m} is not a power of two >= 2"
        )));
    }
    let combos = binomial(n_tx, p);
    if combos < 2 {
        return Err(GqsmError::InvalidConfig(format!(
            "C({n_tx}, {p}) = {combos} leaves no spatial information"
        )));
    }
    let spatial = combos.ilog2() as usize;
    if spatial > 62 {
        return Err(GqsmError::InvalidConfig(format!(
            "C({n_tx}, {p}) too large for 64-bit ranks"
        )));
    }
    let digital = p * m.trailing_zeros() as usize;
    Ok(BitBudget {
        spatial,
        digital,
        total: 2 * spatial + digital,
    })
}

/// How pilot symbols are chosen for each frame.
#[derive(Debug, Clone, PartialEq)]
pub enum PilotMode {
    /// Unit-modulus points `exp(j(theta0 + 2 pi p / P))`, identical every frame.
    ///
    /// `theta0` is `pi/(2P)` for even `P` and `pi/(4P)` for odd `P`, the offset
    /// farthest from any rotation where two pilots share a real or imaginary
    /// part or a component vanishes. Variables of one branch with equal pilot
    /// components are exchangeable and the message-passing decoder cannot
    /// separate them. `P = 1` gives the QPSK point `(1+j)/sqrt(2)`.
    Staggered,
    /// Points with Gray labels `0, 1, .., P-1` (cycled when `P > M`), identical every frame.
    Constellation,
    /// Fixed arbitrary complex values, one per symbol.
    Fixed(Vec<Complex64>),
    /// Drawn uniformly from the constellation independently for every frame.
    RandomPerFrame,
}

/// Pilots of [`PilotMode::Staggered`].
pub fn staggered_pilots(p: usize) -> Vec<Complex64> {
    use std::f64::consts::PI;
    let pf = p as f64;
    let theta0 = if p % 2 == 0 { PI / (2.0 * pf) } else { PI / (4.0 * pf) };
    (0..p)
        .map(|i| Complex64::from_polar(1.0, theta0 + 2.0 * PI * i as f64 / pf))
        .collect()
}

/// System dimensions, constellation and pilot policy.
#[derive(Debug, Clone, PartialEq)]
pub struct GqsmConfig {
    n_tx: usize,
    n_rx: usize,
    p: usize,
    constellation: ConstellationSpec,
    pilots: PilotMode,
    budget: BitBudget,
}

impl GqsmConfig {
    /// Configuration with a Gray constellation of order `m` and default pilots.
    pub fn new(n_tx: usize, n_rx: usize, p: usize, m: usize) -> Result<Self> {
        Self::with_constellation(n_tx, n_rx, p, ConstellationSpec::gray(m)?)
    }

    pub fn with_constellation(
        n_tx: usize,
        n_rx: usize,
        p: usize,
        constellation: ConstellationSpec,
    ) -> Result<Self> {
        if n_rx == 0 {
            return Err(GqsmError::InvalidConfig("N_R must be positive".into()));
        }
        let budget = bits_per_frame(n_tx, p, constellation.order())?;
        Ok(Self {
            n_tx,
            n_rx,
            p,
            constellation,
            pilots: PilotMode::Staggered,
            budget,
        })
    }

    pub fn pilot_mode(mut self, mode: PilotMode) -> Result<Self> {
        if let PilotMode::Fixed(values) = &mode {
            if values.len() != self.p {
                return Err(GqsmError::InvalidConfig(format!(
                    "{} fixed pilots given for P={}",
                    values.len(),
                    self.p
                )));
            }
        }
        self.pilots = mode;
        Ok(self)
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn n_rx(&self) -> usize {
        self.n_rx
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.constellation.order()
    }

    /// Codebook amplification factor; classic GQSM only.
    pub fn alpha(&self) -> usize {
        1
    }

    pub fn constellation(&self) -> &ConstellationSpec {
        &self.constellation
    }

    pub fn pilots(&self) -> &PilotMode {
        &self.pilots
    }

    pub fn budget(&self) -> BitBudget {
        self.budget
    }

    /// Pilot symbols for one frame. Only [`PilotMode::RandomPerFrame`] consumes randomness.
    pub fn draw_pilots<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Complex64> {
        match &self.pilots {
            PilotMode::Staggered => staggered_pilots(self.p),
            PilotMode::Constellation => self.default_pilots(),
            PilotMode::Fixed(values) => values.clone(),
            PilotMode::RandomPerFrame => {
                let pts = self.constellation.points();
                (0..self.p)
                    .map(|_| pts[rng.random_range(0..pts.len())])
                    .collect()
            }
        }
    }

    fn default_pilots(&self) -> Vec<Complex64> {
        let m = self.m() as u32;
        (0..self.p as u32)
            .map(|l| {
                self.constellation
                    .point_with_label(l % m)
                    .expect("labels cover 0..M")
            })
            .collect()
    }

    /// Expected `||x||^2` per frame under the pilot policy.
    pub fn expected_frame_energy(&self) -> f64 {
        match &self.pilots {
            PilotMode::Staggered => self.p as f64,
            PilotMode::Constellation => self.default_pilots().iter().map(|s| s.norm_sqr()).sum(),
            PilotMode::Fixed(values) => values.iter().map(|s| s.norm_sqr()).sum(),
            PilotMode::RandomPerFrame => self.p as f64 * self.constellation.mean_energy(),
        }
    }
}

/// One GQSM transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub spatial_bits: Vec<bool>,
    pub rank_r: u64,
    pub rank_i: u64,
    /// Active antennas of the real branch, increasing; symbol `p` sits at `k_r[p]`.
    pub k_r: Vec<usize>,
    /// Active antennas of the imaginary branch, increasing.
    pub k_i: Vec<usize>,
    pub pilots: Vec<Complex64>,
    /// Complex transmit vector of length `N_T`.
    pub x: Vec<Complex64>,
}

impl Frame {
    pub fn pilots_re(&self) -> Vec<f64> {
        self.pilots.iter().map(|s| s.re).collect()
    }

    pub fn pilots_im(&self) -> Vec<f64> {
        self.pilots.iter().map(|s| s.im).collect()
    }
}

fn bits_to_rank(bits: &[bool]) -> u64 {
    bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
}

fn rank_to_bits(rank: u64, width: usize, out: &mut Vec<bool>) {
    out.extend((0..width).rev().map(|i| (rank >> i) & 1 == 1));
}

/// Superposes `s_p^R e_{k_r[p]} + j s_p^I e_{k_i[p]}` over all symbols.
pub fn build_transmit_vector(
    k_r: &[usize],
    k_i: &[usize],
    pilots: &[Complex64],
    n_tx: usize,
) -> Vec<Complex64> {
    let mut x = vec![Complex64::new(0.0, 0.0); n_tx];
    for ((&kr, &ki), s) in k_r.iter().zip(k_i).zip(pilots) {
        x[kr].re += s.re;
        x[ki].im += s.im;
    }
    x
}

/// Maps `2 * B_sp` spatial bits and `P` pilots onto a frame.
///
/// The first `B_sp` bits (big-endian) select the real-branch subset, the last
/// `B_sp` bits the imaginary-branch subset.
pub fn encode_frame(spatial_bits: &[bool], pilots: &[Complex64], config: &GqsmConfig) -> Result<Frame> {
    let b_sp = config.budget.spatial;
    if spatial_bits.len() != 2 * b_sp {
        return Err(GqsmError::BitLengthMismatch {
            expected: 2 * b_sp,
            actual: spatial_bits.len(),
        });
    }
    if pilots.len() != config.p {
        return Err(GqsmError::DimensionMismatch(format!(
            "{} pilots for P={}",
            pilots.len(),
            config.p
        )));
    }
    let rank_r = bits_to_rank(&spatial_bits[..b_sp]);
    let rank_i = bits_to_rank(&spatial_bits[b_sp..]);
    let k_r = unrank_combination(rank_r, config.n_tx, config.p)?;
    let k_i = unrank_combination(rank_i, config.n_tx, config.p)?;
    let x = build_transmit_vector(&k_r, &k_i, pilots, config.n_tx);
    Ok(Frame {
        spatial_bits: spatial_bits.to_vec(),
        rank_r,
        rank_i,
        k_r,
        k_i,
        pilots: pilots.to_vec(),
        x,
    })
}

/// Uniformly random spatial bits for one frame.
pub fn random_spatial_bits<R: Rng + ?Sized>(config: &GqsmConfig, rng: &mut R) -> Vec<bool> {
    (0..config.budget.spatial_per_frame())
        .map(|_| rng.random::<bool>())
        .collect()
}

/// Spatial bits recovered from estimated antenna sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedBits {
    pub bits: Vec<bool>,
    /// At least one branch decoded to a subset outside the transmitted prefix;
    /// its rank was clamped to `2^B_sp - 1`.
    pub invalid_codeword: bool,
}

/// Inverse of the spatial mapping of [`encode_frame`].
///
/// The estimated indices may come in any order but must be distinct.
pub fn decode_bits(k_r_hat: &[usize], k_i_hat: &[usize], config: &GqsmConfig) -> Result<DecodedBits> {
    let b_sp = config.budget.spatial;
    let cap = config.budget.codewords_per_branch() - 1;
    let mut bits = Vec::with_capacity(2 * b_sp);
    let mut invalid_codeword = false;
    for branch in [k_r_hat, k_i_hat] {
        if branch.len() != config.p {
            return Err(GqsmError::DimensionMismatch(format!(
                "{} indices for P={}",
                branch.len(),
                config.p
            )));
        }
        let mut sorted = branch.to_vec();
        sorted.sort_unstable();
        let mut rank = rank_combination(&sorted, config.n_tx)?;
        if rank > cap {
            rank = cap;
            invalid_codeword = true;
        }
        rank_to_bits(rank, b_sp, &mut bits);
    }
    Ok(DecodedBits {
        bits,
        invalid_codeword,
    })
}

/// Number of positions where two bit vectors differ.
pub fn bit_errors(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn bits(s: &str) -> Vec<bool> {
        s.chars().map(|ch| ch == '1').collect()
    }

    #[test]
    fn budget_examples() {
        let b = bits_per_frame(16, 2, 4).unwrap();
        assert_eq!((b.spatial, b.digital, b.total), (6, 4, 16));
        let b = bits_per_frame(2, 1, 2).unwrap();
        assert_eq!((b.spatial, b.digital, b.total), (1, 1, 3));
        let b = bits_per_frame(32, 4, 4).unwrap();
        assert_eq!((b.spatial, b.digital, b.total), (15, 8, 38));
    }

    #[test]
    fn budget_rejects_degenerate() {
        assert!(bits_per_frame(3, 3, 4).is_err());
        assert!(bits_per_frame(1, 1, 4).is_err());
        assert!(bits_per_frame(4, 0, 4).is_err());
        assert!(bits_per_frame(4, 5, 4).is_err());
        assert!(bits_per_frame(4, 1, 6).is_err());
    }

    #[test]
    fn encode_two_antennas() {
        let cfg = GqsmConfig::new(2, 2, 1, 4).unwrap();
        let f = encode_frame(&bits("01"), &[c(1.0, 1.0)], &cfg).unwrap();
        assert_eq!(f.k_r, vec![0]);
        assert_eq!(f.k_i, vec![1]);
        assert_eq!(f.x, vec![c(1.0, 0.0), c(0.0, 1.0)]);
    }

    #[test]
    fn encode_four_antennas_two_symbols() {
        let cfg = GqsmConfig::new(4, 4, 2, 4).unwrap();
        assert_eq!(cfg.budget().spatial, 2);
        let f = encode_frame(&bits("0110"), &[c(1.0, 1.0), c(1.0, 1.0)], &cfg).unwrap();
        assert_eq!((f.rank_r, f.rank_i), (1, 2));
        assert_eq!(f.k_r, vec![0, 2]);
        assert_eq!(f.k_i, vec![0, 3]);
        assert_eq!(f.x, vec![c(1.0, 1.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 1.0)]);
    }

    #[test]
    fn all_zero_bits_use_first_antennas() {
        let cfg = GqsmConfig::new(16, 16, 3, 4).unwrap();
        let pilots = cfg.draw_pilots(&mut ChaCha8Rng::seed_from_u64(0));
        let f = encode_frame(&vec![false; 2 * cfg.budget().spatial], &pilots, &cfg).unwrap();
        assert_eq!(f.k_r, vec![0, 1, 2]);
        assert_eq!(f.k_i, vec![0, 1, 2]);
    }

    #[test]
    fn encode_rejects_wrong_lengths() {
        let cfg = GqsmConfig::new(4, 4, 2, 4).unwrap();
        let p = [c(1.0, 1.0), c(1.0, 1.0)];
        assert_eq!(
            encode_frame(&bits("011"), &p, &cfg),
            Err(GqsmError::BitLengthMismatch { expected: 4, actual: 3 })
        );
        assert!(encode_frame(&bits("0110"), &p[..1], &cfg).is_err());
    }

    #[test]
    fn decode_examples() {
        let cfg = GqsmConfig::new(4, 4, 2, 4).unwrap();
        let d = decode_bits(&[0, 1], &[1, 0], &cfg).unwrap();
        assert_eq!(d.bits, vec![false; 4]);
        assert!(!d.invalid_codeword);

        // {3,4} (1-based) has rank 5 >= 2^2
        let d = decode_bits(&[3, 2], &[0, 1], &cfg).unwrap();
        assert!(d.invalid_codeword);
        assert_eq!(d.bits, bits("1100"));

        assert!(decode_bits(&[1, 1], &[0, 1], &cfg).is_err());
    }

    #[test]
    fn decode_inverts_encode() {
        let cfg = GqsmConfig::new(16, 16, 3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let b = random_spatial_bits(&cfg, &mut rng);
            let pilots = cfg.draw_pilots(&mut rng);
            let f = encode_frame(&b, &pilots, &cfg).unwrap();
            let d = decode_bits(&f.k_r, &f.k_i, &cfg).unwrap();
            assert_eq!(d.bits, b);
            assert!(!d.invalid_codeword);
        }
    }

    #[test]
    fn staggered_pilots_have_distinct_components() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((staggered_pilots(1)[0] - c(h, h)).norm() < 1e-15);
        for p in 1..=12 {
            let s = staggered_pilots(p);
            for (i, a) in s.iter().enumerate() {
                assert!((a.norm() - 1.0).abs() < 1e-12);
                assert!(a.re.abs() > 1e-3 && a.im.abs() > 1e-3, "P={p}");
                for b in &s[i + 1..] {
                    assert!((a.re - b.re).abs() > 1e-3 && (a.im - b.im).abs() > 1e-3, "P={p}");
                }
            }
        }
        let cfg = GqsmConfig::new(16, 16, 4, 4).unwrap();
        assert_eq!(cfg.pilots(), &PilotMode::Staggered);
        assert!((cfg.expected_frame_energy() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn default_pilots_cycle_labels() {
        let cfg = GqsmConfig::new(16, 16, 3, 2)
            .unwrap()
            .pilot_mode(PilotMode::Constellation)
            .unwrap();
        let p = cfg.draw_pilots(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(p, vec![c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)]);
        assert!((cfg.expected_frame_energy() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_pilots_must_match_p() {
        let cfg = GqsmConfig::new(8, 8, 2, 4).unwrap();
        assert!(cfg.clone().pilot_mode(PilotMode::Fixed(vec![c(1.0, 0.0)])).is_err());
        let cfg = cfg
            .pilot_mode(PilotMode::Fixed(vec![c(1.0, 0.0), c(0.0, 2.0)]))
            .unwrap();
        assert!((cfg.expected_frame_energy() - 5.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn sparsity_holds(seed in proptest::prelude::any::<u64>(), n_tx in 2usize..24, p_raw in 1usize..5) {
            let p = p_raw.min(n_tx - 1);
            let cfg = GqsmConfig::new(n_tx, 4, p, 16).unwrap().pilot_mode(PilotMode::RandomPerFrame).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_spatial_bits(&cfg, &mut rng);
            let pilots = cfg.draw_pilots(&mut rng);
            let f = encode_frame(&b, &pilots, &cfg).unwrap();
            let nz_re = f.x.iter().filter(|v| v.re != 0.0).count();
            let nz_im = f.x.iter().filter(|v| v.im != 0.0).count();
            // 16-QAM points have no zero components, so the bound is tight
            proptest::prop_assert_eq!(nz_re, p);
            proptest::prop_assert_eq!(nz_im, p);
            proptest::prop_assert!(f.rank_r < cfg.budget().codewords_per_branch());
            proptest::prop_assert!(f.rank_i < cfg.budget().codewords_per_branch());
        }
    }
}
