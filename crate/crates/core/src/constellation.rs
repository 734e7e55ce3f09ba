//! Gray-labelled unit-energy constellations.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{GqsmError, Result};

/// A constellation together with its Gray bit labelling.
///
/// `labels[i]` is the bit pattern carried by `points[i]`; labels form a
/// permutation of `0..M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationSpec {
    points: Vec<Complex64>,
    labels: Vec<u32>,
}

fn gray(i: u32) -> u32 {
    i ^ (i >> 1)
}

impl ConstellationSpec {
    /// Standard Gray constellation of order `m`: square QAM when `m` is an
    /// even power of two (QPSK included), PSK otherwise.
    pub fn gray(m: usize) -> Result<Self> {
        if m < 2 || !m.is_power_of_two() {
            return Err(GqsmError::InvalidConfig(format!(
                "constellation size {m} is not a power of two >= 2"
            )));
        }
        if m.trailing_zeros() % 2 == 0 {
            Ok(Self::square_qam(m))
        } else {
            Ok(Self::psk(m))
        }
    }

    fn square_qam(m: usize) -> Self {
        let side = (m as f64).sqrt().round() as u32;
        let axis_bits = side.trailing_zeros();
        let scale = (2.0 * (m as f64 - 1.0) / 3.0).sqrt();
        let mut points = Vec::with_capacity(m);
        let mut labels = Vec::with_capacity(m);
        for ix in 0..side {
            for iq in 0..side {
                let re = (2 * ix) as f64 - (side - 1) as f64;
                let im = (2 * iq) as f64 - (side - 1) as f64;
                points.push(Complex64::new(re / scale, im / scale));
                labels.push((gray(ix) << axis_bits) | gray(iq));
            }
        }
        Self { points, labels }
    }

    fn psk(m: usize) -> Self {
        if m == 2 {
            return Self {
                points: vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
                labels: vec![0, 1],
            };
        }
        let offset = PI / m as f64;
        let (points, labels) = (0..m as u32)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / m as f64 + offset;
                (Complex64::from_polar(1.0, phase), gray(i))
            })
            .unzip();
        Self { points, labels }
    }

    /// Builds a constellation from explicit points and labels.
    pub fn from_parts(points: Vec<Complex64>, labels: Vec<u32>) -> Result<Self> {
        let m = points.len();
        let mut seen = vec![false; m];
        let bijective = labels.len() == m
            && labels.iter().all(|&l| {
                let l = l as usize;
                l < m && !std::mem::replace(&mut seen[l], true)
            });
        if !bijective {
            return Err(GqsmError::InvalidConfig(
                "constellation labels must be a permutation of 0..M".into(),
            ));
        }
        Ok(Self { points, labels })
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// The point carrying bit pattern `label`.
    pub fn point_with_label(&self, label: u32) -> Option<Complex64> {
        self.labels
            .iter()
            .position(|&l| l == label)
            .map(|i| self.points[i])
    }

    pub fn mean_energy(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }
}
