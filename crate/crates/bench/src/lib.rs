//! Fixtures shared by the criterion benches.

use gqsm::harness::{realize_frame, ChannelModel, Realization};
use gqsm::{channel::ebn0_to_n0, GqsmConfig};

/// A reproducible Rayleigh realization at `ebn0_db` for a QPSK system.
pub fn fixture(n_tx: usize, n_rx: usize, p: usize, ebn0_db: f64, seed: u64) -> (GqsmConfig, Realization) {
    let cfg = GqsmConfig::new(n_tx, n_rx, p, 4).expect("valid bench configuration");
    let n0 = ebn0_to_n0(ebn0_db, &cfg).expect("finite Eb/N0");
    let real = realize_frame(&cfg, ChannelModel::Rayleigh, n0, seed, 0, 0).expect("realization");
    (cfg, real)
}
