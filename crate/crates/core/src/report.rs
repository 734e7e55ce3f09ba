//! CSV output with a stable, versioned column contract.

use std::io::{self, Write};

use crate::harness::{BerRecord, ScalingRow};

pub const SCHEMA_VERSION: u32 = 1;

pub const BER_HEADER: &str = "decoder,ebn0_db,frames,spatial_bits,bit_errors,frame_errors,ber,ci95,wall_time_s,seed,config_hash";

pub const SCALING_HEADER: &str = "decoder,n_tx,n_rx,p,per_iter_ms,fit_residual";

/// Writes BER records, one row per record, preceded by the schema comment and header.
pub fn write_ber_csv<W: Write>(out: &mut W, records: &[BerRecord], seed: u64, config_hash: &str) -> io::Result<()> {
    writeln!(out, "# schema={SCHEMA_VERSION}")?;
    writeln!(out, "{BER_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{:e},{:e},{:.6},{},{}",
            r.decoder, r.ebn0_db, r.frames, r.spatial_bits, r.bit_errors, r.frame_errors, r.ber, r.ci95_halfwidth, r.wall_time_s, seed, config_hash
        )?;
    }
    Ok(())
}

/// Writes a complexity probe table. Antenna counts are plain integers.
pub fn write_scaling_csv<W: Write>(out: &mut W, rows: &[ScalingRow], seed: u64, config_hash: &str) -> io::Result<()> {
    writeln!(out, "# schema={SCHEMA_VERSION} seed={seed} config_hash={config_hash}")?;
    writeln!(out, "{SCALING_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{:.4}",
            r.cell.decoder, r.cell.n_tx, r.cell.n_rx, r.cell.p, r.per_iter_ms, (r.fit_residual * 1e4).round() / 1e4 + 0.0
        )?;
    }
    Ok(())
}

/// Drops the named column from every data row of a CSV produced by this module.
pub fn strip_column(csv: &str, column: &str) -> String {
    let mut drop_at = None;
    let mut out = String::new();
    for line in csv.lines() {
        if line.starts_with('#') {
            out.push_str(line);
            out.push('\n');
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let idx = *drop_at.get_or_insert_with(|| fields.iter().position(|f| *f == column));
        let kept: Vec<&str> = fields
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != idx)
            .map(|(_, f)| *f)
            .collect();
        out.push_str(&kept.join(","));
        out.push('\n');
    }
    out
}
