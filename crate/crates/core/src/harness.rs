//! Monte-Carlo BER engine.
//!
//! Every frame realization is a pure function of `(master_seed, point, frame)`:
//! its RNG is a ChaCha stream keyed by the master seed with the stream number
//! built from the point and frame indices. Frames are processed in fixed-size
//! batches, so neither the worker count nor scheduling order can change the
//! counts. All enabled decoders see the same realizations.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{draw_channel, ebn0_to_n0, transmit, ComplexMatrix, RealSystem};
use crate::codec::{bit_errors, decode_bits, encode_frame, random_spatial_bits, Frame, GqsmConfig};
use crate::error::{GqsmError, Result};
use crate::gabp::{DecoderParams, UvdGabp};
use crate::reference::{mfb_decode, ml_decode, MlSearchSpace, DEFAULT_ML_CAP};

/// Frames simulated between early-stop checks.
pub const BATCH_SIZE: u64 = 64;

/// Default early-stop error count.
pub const DEFAULT_MAX_BIT_ERRORS: u64 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DecoderKind {
    Gabp,
    Ml,
    Mfb,
}

impl DecoderKind {
    pub fn id(self) -> &'static str {
        match self {
            DecoderKind::Gabp => "gabp",
            DecoderKind::Ml => "ml",
            DecoderKind::Mfb => "mfb",
        }
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = GqsmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gabp" => Ok(DecoderKind::Gabp),
            "ml" => Ok(DecoderKind::Ml),
            "mfb" => Ok(DecoderKind::Mfb),
            other => Err(GqsmError::InvalidConfig(format!("unknown decoder {other:?}"))),
        }
    }
}

impl std::fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Channel statistics used when realizing frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelModel {
    /// I.i.d. Rayleigh block fading, independent per frame.
    #[default]
    Rayleigh,
    /// All-zero channel; the receiver sees noise only.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub config: GqsmConfig,
    pub params: DecoderParams,
    pub decoders: Vec<DecoderKind>,
    pub ebn0_points_db: Vec<f64>,
    pub frames_per_point: u64,
    /// Stop a decoder at a point once it has accumulated this many bit errors.
    pub max_bit_errors: Option<u64>,
    pub master_seed: u64,
    pub channel: ChannelModel,
    pub ml_cap: u64,
}

impl SweepPlan {
    pub fn new(config: GqsmConfig, decoders: Vec<DecoderKind>, ebn0_points_db: Vec<f64>, frames_per_point: u64, master_seed: u64) -> Self {
        Self {
            config,
            params: DecoderParams::default(),
            decoders,
            ebn0_points_db,
            frames_per_point,
            max_bit_errors: Some(DEFAULT_MAX_BIT_ERRORS),
            master_seed,
            channel: ChannelModel::Rayleigh,
            ml_cap: DEFAULT_ML_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_per_point == 0 {
            return Err(GqsmError::InvalidConfig("frames_per_point must be at least 1".into()));
        }
        if self.decoders.is_empty() {
            return Err(GqsmError::InvalidConfig("no decoders enabled".into()));
        }
        if self.ebn0_points_db.iter().any(|x| !x.is_finite()) {
            return Err(GqsmError::InvalidConfig("Eb/N0 points must be finite".into()));
        }
        if self.ebn0_points_db.windows(2).any(|w| w[0] > w[1]) {
            return Err(GqsmError::InvalidConfig("Eb/N0 points must be sorted".into()));
        }
        if self.max_bit_errors == Some(0) {
            return Err(GqsmError::InvalidConfig("max_bit_errors must be positive".into()));
        }
        self.params.validate()?;
        if self.decoders.contains(&DecoderKind::Ml) {
            MlSearchSpace::new(&self.config, self.ml_cap)?;
        }
        Ok(())
    }
}

/// Statistics of one decoder at one Eb/N0 point.
#[derive(Debug, Clone, PartialEq)]
pub struct BerRecord {
    pub decoder: DecoderKind,
    pub ebn0_db: f64,
    pub n0: f64,
    pub frames: u64,
    pub spatial_bits: u64,
    pub bit_errors: u64,
    pub frame_errors: u64,
    /// Frames whose decision fell outside the transmitted codebook.
    pub invalid_codewords: u64,
    pub ber: f64,
    pub ci95_halfwidth: f64,
    /// Time spent inside this decoder, summed over frames.
    pub wall_time_s: f64,
    pub early_stopped: bool,
}

impl BerRecord {
    /// Whether the two estimates are within each other's 95% intervals.
    pub fn overlaps(&self, other: &BerRecord) -> bool {
        (self.ber - other.ber).abs() <= self.ci95_halfwidth + other.ci95_halfwidth
    }
}

/// Normal-approximation 95% half-width of a binomial proportion.
pub fn ci95_halfwidth(errors: u64, trials: u64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let p = errors as f64 / trials as f64;
    1.96 * (p * (1.0 - p) / trials as f64).sqrt()
}

/// Per-frame RNG for `(master_seed, point, frame)`.
pub fn frame_rng(master_seed: u64, point: usize, frame: u64) -> ChaCha8Rng {
    debug_assert!(frame < 1 << 40 && (point as u64) < 1 << 24);
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(((point as u64) << 40) | frame);
    rng
}

/// One simulated transmission with the receiver's view of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub frame: Frame,
    pub channel: ComplexMatrix,
    pub system: RealSystem,
}

/// Deterministically realizes frame `frame` of point `point`.
pub fn realize_frame(
    config: &GqsmConfig,
    channel: ChannelModel,
    n0: f64,
    master_seed: u64,
    point: usize,
    frame: u64,
) -> Result<Realization> {
    let mut rng = frame_rng(master_seed, point, frame);
    let bits = random_spatial_bits(config, &mut rng);
    let pilots = config.draw_pilots(&mut rng);
    let frame = encode_frame(&bits, &pilots, config)?;
    let h = match channel {
        ChannelModel::Rayleigh => draw_channel(config, &mut rng),
        ChannelModel::Zero => ComplexMatrix::zeros(config.n_rx(), config.n_tx()),
    };
    let y = transmit(&frame.x, &h, n0, &mut rng)?;
    let system = RealSystem::from_complex(&h, &y, n0)?;
    Ok(Realization {
        frame,
        channel: h,
        system,
    })
}

/// Antenna decisions of one decoder on one realization.
pub fn run_decoder(
    kind: DecoderKind,
    realization: &Realization,
    gabp: &UvdGabp,
    ml_space: Option<&MlSearchSpace>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let (sys, frame) = (&realization.system, &realization.frame);
    Ok(match kind {
        DecoderKind::Gabp => {
            let r = gabp.decode(sys, &frame.pilots)?;
            (r.k_r_hat, r.k_i_hat)
        }
        DecoderKind::Ml => {
            let space = ml_space.ok_or_else(|| GqsmError::InvalidConfig("ML search space missing".into()))?;
            let d = ml_decode(sys, &frame.pilots, space);
            (d.k_r, d.k_i)
        }
        DecoderKind::Mfb => {
            let d = mfb_decode(sys, &frame.pilots, frame)?;
            (d.k_r, d.k_i)
        }
    })
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    frames: u64,
    bit_errors: u64,
    frame_errors: u64,
    invalid: u64,
    nanos: u128,
}

struct PointRunner<'a> {
    plan: &'a SweepPlan,
    gabp: UvdGabp,
    ml_space: Option<MlSearchSpace>,
}

impl<'a> PointRunner<'a> {
    fn new(plan: &'a SweepPlan) -> Result<Self> {
        plan.validate()?;
        let ml_space = if plan.decoders.contains(&DecoderKind::Ml) {
            Some(MlSearchSpace::new(&plan.config, plan.ml_cap)?)
        } else {
            None
        };
        Ok(Self {
            plan,
            gabp: UvdGabp::new(plan.params)?,
            ml_space,
        })
    }

    fn frame(&self, active: &[DecoderKind], n0: f64, point: usize, index: u64) -> Result<Vec<Tally>> {
        let cfg = &self.plan.config;
        let real = realize_frame(cfg, self.plan.channel, n0, self.plan.master_seed, point, index)?;
        active
            .iter()
            .map(|&kind| {
                let start = Instant::now();
                let (kr, ki) = run_decoder(kind, &real, &self.gabp, self.ml_space.as_ref())?;
                let nanos = start.elapsed().as_nanos();
                let decoded = decode_bits(&kr, &ki, cfg)?;
                let errors = bit_errors(&decoded.bits, &real.frame.spatial_bits) as u64;
                Ok(Tally {
                    frames: 1,
                    bit_errors: errors,
                    frame_errors: (errors > 0) as u64,
                    invalid: decoded.invalid_codeword as u64,
                    nanos,
                })
            })
            .collect()
    }

    fn run(&self, point: usize) -> Result<Vec<BerRecord>> {
        let plan = self.plan;
        let ebn0_db = plan.ebn0_points_db[point];
        let n0 = ebn0_to_n0(ebn0_db, &plan.config)?;
        let mut tallies = vec![Tally::default(); plan.decoders.len()];
        let mut stopped = vec![false; plan.decoders.len()];
        let mut next = 0u64;
        while next < plan.frames_per_point && stopped.iter().any(|s| !s) {
            let active_slots: Vec<usize> = (0..plan.decoders.len()).filter(|&i| !stopped[i]).collect();
            let active: Vec<DecoderKind> = active_slots.iter().map(|&i| plan.decoders[i]).collect();
            let end = (next + BATCH_SIZE).min(plan.frames_per_point);
            let batch: Vec<Vec<Tally>> = (next..end)
                .into_par_iter()
                .map(|f| self.frame(&active, n0, point, f))
                .collect::<Result<_>>()?;
            for frame in batch {
                for (slot, t) in active_slots.iter().zip(frame) {
                    let acc = &mut tallies[*slot];
                    acc.frames += t.frames;
                    acc.bit_errors += t.bit_errors;
                    acc.frame_errors += t.frame_errors;
                    acc.invalid += t.invalid;
                    acc.nanos += t.nanos;
                }
            }
            next = end;
            if let Some(limit) = plan.max_bit_errors {
                for (s, t) in stopped.iter_mut().zip(&tallies) {
                    *s |= t.bit_errors >= limit;
                }
            }
        }
        let bits_per_frame = plan.config.budget().spatial_per_frame() as u64;
        Ok(plan
            .decoders
            .iter()
            .zip(tallies)
            .map(|(&decoder, t)| {
                let spatial_bits = t.frames * bits_per_frame;
                BerRecord {
                    decoder,
                    ebn0_db,
                    n0,
                    frames: t.frames,
                    spatial_bits,
                    bit_errors: t.bit_errors,
                    frame_errors: t.frame_errors,
                    invalid_codewords: t.invalid,
                    ber: t.bit_errors as f64 / spatial_bits as f64,
                    ci95_halfwidth: ci95_halfwidth(t.bit_errors, spatial_bits),
                    wall_time_s: t.nanos as f64 * 1e-9,
                    early_stopped: t.frames < plan.frames_per_point,
                }
            })
            .collect())
    }
}

fn with_workers<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| GqsmError::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(job))
}

/// Simulates point `point` of the plan with `workers` threads.
pub fn run_point(plan: &SweepPlan, point: usize, workers: usize) -> Result<Vec<BerRecord>> {
    if point >= plan.ebn0_points_db.len() {
        return Err(GqsmError::InvalidConfig(format!("point {point} not in plan")));
    }
    let runner = PointRunner::new(plan)?;
    with_workers(workers, || runner.run(point))?
}

/// Simulates every point; records are ordered by point, then by decoder as listed in the plan.
pub fn run_sweep(plan: &SweepPlan, workers: usize) -> Result<Vec<BerRecord>> {
    let runner = PointRunner::new(plan)?;
    with_workers(workers, || {
        let mut out = Vec::new();
        for point in 0..plan.ebn0_points_db.len() {
            out.extend(runner.run(point)?);
        }
        Ok(out)
    })?
}

/// Eb/N0 at which a BER curve crosses `target`, interpolating `log10(BER)`
/// linearly between the first bracketing pair of points.
pub fn ebn0_at_ber(curve: &[(f64, f64)], target: f64) -> Option<f64> {
    curve.windows(2).find_map(|w| {
        let ((x0, b0), (x1, b1)) = (w[0], w[1]);
        if b0 >= target && b1 <= target && b0 > 0.0 && b1 > 0.0 {
            if b0 == b1 {
                return Some(x0);
            }
            let (l0, l1, lt) = (b0.log10(), b1.log10(), target.log10());
            Some(x0 + (lt - l0) / (l1 - l0) * (x1 - x0))
        } else {
            None
        }
    })
}

/// One cell of a complexity probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalingCell {
    pub decoder: DecoderKind,
    pub n_tx: usize,
    pub n_rx: usize,
    pub p: usize,
}

/// Measured cost of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub cell: ScalingCell,
    /// Median time per message-passing iteration (GaBP) or per decode (ML), in ms.
    pub per_iter_ms: f64,
    /// Value of the complexity model for this cell.
    pub model: f64,
    /// `measured / (c * model) - 1`, with `c` fitted per decoder by the
    /// geometric mean of `measured / model`.
    pub fit_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingOptions {
    pub params: DecoderParams,
    pub repetitions: usize,
    pub ebn0_db: f64,
    pub seed: u64,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self {
            params: DecoderParams {
                tau_max: 20,
                covariance: crate::gabp::CovarianceMode::Full,
                ..DecoderParams::default()
            },
            repetitions: 15,
            ebn0_db: 4.0,
            seed: 1,
        }
    }
}

/// Complexity model: `P N_T^2 N_R` per GaBP iteration, `2^(2 B_sp) N_R` per ML decode.
pub fn complexity_model(cell: &ScalingCell) -> Result<f64> {
    let cfg = GqsmConfig::new(cell.n_tx, cell.n_rx, cell.p, 4)?;
    Ok(match cell.decoder {
        DecoderKind::Gabp => (cell.p * cell.n_tx * cell.n_tx * cell.n_rx) as f64,
        DecoderKind::Ml => (cfg.budget().codewords_per_branch() as f64).powi(2) * cell.n_rx as f64,
        DecoderKind::Mfb => (cell.p * cell.n_tx * cell.n_rx) as f64,
    })
}

/// Median seconds per unit of work (iteration for GaBP, decode otherwise) for one cell.
pub fn measure_cell(cell: &ScalingCell, opts: &ScalingOptions) -> Result<f64> {
    let cfg = GqsmConfig::new(cell.n_tx, cell.n_rx, cell.p, 4)?;
    let n0 = ebn0_to_n0(opts.ebn0_db, &cfg)?;
    let gabp = UvdGabp::new(opts.params)?;
    let ml_space = match cell.decoder {
        DecoderKind::Ml => Some(MlSearchSpace::new(&cfg, DEFAULT_ML_CAP)?),
        _ => None,
    };
    let per_unit = match cell.decoder {
        DecoderKind::Gabp => opts.params.tau_max.max(1) as f64,
        _ => 1.0,
    };
    let reps = opts.repetitions.max(1);
    let mut samples = Vec::with_capacity(reps);
    // one untimed warm-up decode
    for rep in 0..=reps as u64 {
        let real = realize_frame(&cfg, ChannelModel::Rayleigh, n0, opts.seed, 0, rep)?;
        let start = Instant::now();
        std::hint::black_box(run_decoder(cell.decoder, &real, &gabp, ml_space.as_ref())?);
        let secs = start.elapsed().as_secs_f64();
        if rep > 0 {
            samples.push(secs / per_unit);
        }
    }
    samples.sort_by(f64::total_cmp);
    Ok(samples[samples.len() / 2])
}

/// Runs every cell and fits the complexity model per decoder.
pub fn scaling_probe(cells: &[ScalingCell], opts: &ScalingOptions) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let secs = measure_cell(cell, opts)?;
        rows.push(ScalingRow {
            cell: *cell,
            per_iter_ms: secs * 1e3,
            model: complexity_model(cell)?,
            fit_residual: 0.0,
        });
    }
    for kind in [DecoderKind::Gabp, DecoderKind::Ml, DecoderKind::Mfb] {
        let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].cell.decoder == kind).collect();
        if idx.is_empty() {
            continue;
        }
        let log_c = idx
            .iter()
            .map(|&i| (rows[i].per_iter_ms / rows[i].model).ln())
            .sum::<f64>()
            / idx.len() as f64;
        for i in idx {
            rows[i].fit_residual = rows[i].per_iter_ms / (log_c.exp() * rows[i].model) - 1.0;
        }
    }
    Ok(rows)
}

/// Default probe grid: GaBP on `N_T in {8, 16, 32}`, `P in {1, 2, 4}`,
/// `N_R = N_T`, plus ML wherever its search space fits under the default cap.
pub fn default_scaling_grid() -> Vec<ScalingCell> {
    let mut cells = Vec::new();
    for decoder in [DecoderKind::Gabp, DecoderKind::Ml] {
        for n_tx in [8, 16, 32] {
            for p in [1, 2, 4] {
                let cell = ScalingCell { decoder, n_tx, n_rx: n_tx, p };
                if decoder == DecoderKind::Ml {
                    let fits = GqsmConfig::new(n_tx, n_tx, p, 4)
                        .and_then(|c| MlSearchSpace::new(&c, DEFAULT_ML_CAP))
                        .is_ok();
                    if !fits {
                        continue;
                    }
                }
                cells.push(cell);
            }
        }
    }
    cells
}
