//! Text tables and CSV files. Column sets are documented in `docs/csv.md`.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use csv::Writer;

use pcc_core::{Coord, EncodeReport};
use pcc_core::model::TrainConfig;

fn create(path: &Path) -> Result<Writer<std::fs::File>> {
    Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn level_table(rep: &EncodeReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>5} {:>9} {:>4} {:>10} {:>10} {:>12}",
        "level", "voxels", "net", "stage1_B", "stage2_B", "bits/voxel"
    );
    for l in &rep.levels {
        let _ = writeln!(
            s,
            "{:>5} {:>9} {:>4} {:>10} {:>10} {:>12.4}",
            l.level,
            l.parents,
            l.network,
            l.stage_bytes[0],
            l.stage_bytes[1],
            l.payload_bits() as f64 / l.parents as f64
        );
    }
    let _ = writeln!(
        s,
        "header {} B, index {} B, framing {} B, crc {} B",
        rep.header_bytes, rep.index_bytes, rep.framing_bytes, rep.crc_bytes
    );
    s
}

pub fn write_level_csv(path: &Path, rep: &EncodeReport) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["level", "voxels", "network", "stage1_bytes", "stage2_bytes", "bits", "bits_per_voxel"])?;
    for l in &rep.levels {
        let bits = l.payload_bits();
        w.write_record([
            l.level.to_string(),
            l.parents.to_string(),
            l.network.to_string(),
            l.stage_bytes[0].to_string(),
            l.stage_bytes[1].to_string(),
            bits.to_string(),
            format!("{:.6}", bits as f64 / l.parents as f64),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_loss_csv(path: &Path, config: &TrainConfig, loss: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["step", "learning_rate", "loss_bpp"])?;
    for (step, l) in loss.iter().enumerate() {
        w.write_record([step.to_string(), format!("{:e}", config.rate_at(step)), format!("{l:.6}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_neighbor_csv(path: &Path, window: u32, rows: &[(u32, usize, f64)]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["level", "voxels", "window", "mean_neighbors"])?;
    for (b, n, avg) in rows {
        w.write_record([b.to_string(), n.to_string(), window.to_string(), format!("{avg:.6}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bits_csv(path: &Path, level: u32, coords: &[Coord], bits: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["level", "x", "y", "z", "bits"])?;
    for (c, b) in coords.iter().zip(bits) {
        w.write_record([
            level.to_string(),
            c[0].to_string(),
            c[1].to_string(),
            c[2].to_string(),
            format!("{b:.6}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub struct BenchRow {
    pub case: &'static str,
    pub mode: &'static str,
    pub input: usize,
    pub run: usize,
    pub voxels: usize,
    pub encode_ms: f64,
    pub decode_ms: Option<f64>,
    pub bytes: usize,
    pub sort_count: usize,
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record([
        "case", "mode", "input", "run", "voxels", "encode_ms", "decode_ms", "bytes", "sort_count",
    ])?;
    for r in rows {
        w.write_record([
            r.case.to_string(),
            r.mode.to_string(),
            r.input.to_string(),
            r.run.to_string(),
            r.voxels.to_string(),
            format!("{:.3}", r.encode_ms),
            r.decode_ms.map(|d| format!("{d:.3}")).unwrap_or_default(),
            r.bytes.to_string(),
            r.sort_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
