//! Piloted generalized quadrature spatial modulation (GQSM).
//!
//! - [`codec`]: bits to antenna subsets and the sparse transmit vector
//! - [`channel`]: Rayleigh MIMO channel, AWGN, real-valued decoupling
//! - [`gabp`]: the unit-vector-decomposition Gaussian belief propagation decoder
//! - [`reference`]: exhaustive ML and the genie-aided matched-filter bound
//! - [`harness`]: reproducible parallel Monte-Carlo BER sweeps and complexity probes
//! - [`report`]: CSV output

pub mod channel;
pub mod codec;
pub mod combinadic;
pub mod constellation;
pub mod error;
pub mod gabp;
pub mod harness;
pub mod reference;
pub mod report;

pub use channel::{Branch, ComplexMatrix, NoiseSpec, RealMatrix, RealSystem};
pub use codec::{bits_per_frame, staggered_pilots, decode_bits, encode_frame, BitBudget, DecodedBits, Frame, GqsmConfig, PilotMode};
pub use combinadic::{binomial, rank_combination, unrank_combination};
pub use constellation::ConstellationSpec;
pub use error::{GqsmError, Result};
pub use gabp::{BeliefState, CovarianceMode, DecodeResult, DecoderParams, Prior, UvdGabp};
pub use harness::{BerRecord, ChannelModel, DecoderKind, SweepPlan};
pub use reference::{mfb_decode, ml_decode, MlSearchSpace};

pub use num_complex::Complex64;
