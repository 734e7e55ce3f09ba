//! Rayleigh MIMO channel, AWGN and the real-valued decoupled system.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::codec::GqsmConfig;
use crate::error::{GqsmError, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub type RealMatrix = Matrix<f64>;
pub type ComplexMatrix = Matrix<Complex64>;

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GqsmError::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl ComplexMatrix {
    pub fn mul_vec(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.cols {
            return Err(GqsmError::DimensionMismatch(format!(
                "vector of length {} against {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(h, v)| h * v).sum())
            .collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, Complex64::new(1.0, 0.0));
        }
        m
    }
}

/// Real-valued decoupled observation model `y = [H_r, H_i] [x_re; x_im] + w`.
///
/// Row `n` of `h_r` (resp. `h_i`) is the effective channel seen by the real
/// (resp. imaginary) parts of the transmit vector at real observation `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealSystem {
    pub y: Vec<f64>,
    pub h_r: RealMatrix,
    pub h_i: RealMatrix,
    /// Complex noise power; each real noise entry has variance `n0 / 2`.
    pub n0: f64,
}

impl RealSystem {
    pub fn new(y: Vec<f64>, h_r: RealMatrix, h_i: RealMatrix, n0: f64) -> Result<Self> {
        if h_r.rows() != y.len() || h_i.rows() != y.len() || h_r.cols() != h_i.cols() {
            return Err(GqsmError::DimensionMismatch(format!(
                "y has {} rows, H_r is {}x{}, H_i is {}x{}",
                y.len(),
                h_r.rows(),
                h_r.cols(),
                h_i.rows(),
                h_i.cols()
            )));
        }
        if !(n0 >= 0.0) {
            return Err(GqsmError::InvalidConfig(format!("noise power {n0} is negative")));
        }
        Ok(Self { y, h_r, h_i, n0 })
    }

    pub fn from_complex(h: &ComplexMatrix, y: &[Complex64], n0: f64) -> Result<Self> {
        if y.len() != h.rows() {
            return Err(GqsmError::DimensionMismatch(format!(
                "y has {} entries for {} receive antennas",
                y.len(),
                h.rows()
            )));
        }
        let (h_r, h_i) = realify_channel(h);
        Self::new(realify_observation(y), h_r, h_i, n0)
    }

    /// Number of real observations, `2 N_R`.
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_tx(&self) -> usize {
        self.h_r.cols()
    }

    /// Effective channel row for one branch.
    pub fn branch_row(&self, branch: Branch, n: usize) -> &[f64] {
        match branch {
            Branch::Real => self.h_r.row(n),
            Branch::Imag => self.h_i.row(n),
        }
    }

    pub fn branch_matrix(&self, branch: Branch) -> &RealMatrix {
        match branch {
            Branch::Real => &self.h_r,
            Branch::Imag => &self.h_i,
        }
    }
}

/// IQ branch of the transmit vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Real,
    Imag,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Real, Branch::Imag];

    pub fn index(self) -> usize {
        match self {
            Branch::Real => 0,
            Branch::Imag => 1,
        }
    }

    /// The component of a pilot this branch carries.
    pub fn component(self, s: Complex64) -> f64 {
        match self {
            Branch::Real => s.re,
            Branch::Imag => s.im,
        }
    }
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let sigma = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(sigma * re, sigma * im)
}

/// I.i.d. `CN(0, 1)` channel of size `N_R x N_T`.
pub fn draw_channel<R: Rng + ?Sized>(config: &GqsmConfig, rng: &mut R) -> ComplexMatrix {
    let (rows, cols) = (config.n_rx(), config.n_tx());
    let data = (0..rows * cols).map(|_| complex_gaussian(rng, 1.0)).collect();
    Matrix { rows, cols, data }
}

/// Splits `H = A + jB` into `h_r = [A; B]` and `h_i = [-B; A]`.
pub fn realify_channel(h: &ComplexMatrix) -> (RealMatrix, RealMatrix) {
    let (rows, cols) = (h.rows(), h.cols());
    let mut h_r = RealMatrix::zeros(2 * rows, cols);
    let mut h_i = RealMatrix::zeros(2 * rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let v = h.get(r, c);
            h_r.set(r, c, v.re);
            h_r.set(rows + r, c, v.im);
            h_i.set(r, c, -v.im);
            h_i.set(rows + r, c, v.re);
        }
    }
    (h_r, h_i)
}

/// Stacks `[Re y; Im y]`.
pub fn realify_observation(y: &[Complex64]) -> Vec<f64> {
    y.iter().map(|v| v.re).chain(y.iter().map(|v| v.im)).collect()
}

/// Stacks `[Re x; Im x]`.
pub fn realify_vector(x: &[Complex64]) -> Vec<f64> {
    realify_observation(x)
}

/// Noise operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub ebn0_db: f64,
    pub n0: f64,
}

impl NoiseSpec {
    pub fn new(ebn0_db: f64, config: &GqsmConfig) -> Result<Self> {
        Ok(Self {
            ebn0_db,
            n0: ebn0_to_n0(ebn0_db, config)?,
        })
    }
}

/// Noise power for a given Eb/N0, with `E_b = E[||x||^2] / B_total`.
///
/// `B_total` counts spatial and digital bits.
pub fn ebn0_to_n0(ebn0_db: f64, config: &GqsmConfig) -> Result<f64> {
    if !ebn0_db.is_finite() {
        return Err(GqsmError::InvalidConfig(format!("Eb/N0 {ebn0_db} dB is not finite")));
    }
    let energy = config.expected_frame_energy();
    if !(energy > 0.0) {
        return Err(GqsmError::NonPositiveEnergy(energy));
    }
    let eb = energy / config.budget().total as f64;
    Ok(eb / 10f64.powf(ebn0_db / 10.0))
}

/// `y = Hx + w` with `w ~ CN(0, n0 I)`.
pub fn transmit<R: Rng + ?Sized>(
    x: &[Complex64],
    h: &ComplexMatrix,
    n0: f64,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    let mut y = h.mul_vec(x)?;
    if n0 > 0.0 {
        for v in &mut y {
            *v += complex_gaussian(rng, n0);
        }
    }
    Ok(y)
}
