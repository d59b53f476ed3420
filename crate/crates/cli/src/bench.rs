use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::Args;

use pcc_core::codec::decode_with;
use pcc_core::ply::read_ply;
use pcc_core::synth::{gen_ring_scan, gen_sequence, RingScanConfig};
use pcc_core::{encode, quantize_fit, EncodeMode, EncodeOptions, OrderingMode, QuantizedCloud};

use crate::report::{write_bench_csv, BenchRow};

#[derive(Args)]
pub struct BenchArgs {
    /// Cloud for the ordering benchmark; a synthetic scan when absent.
    #[arg(long, short)]
    input: Option<PathBuf>,
    #[arg(long, short = 'b', default_value_t = 16, value_parser = clap::value_parser!(u32).range(2..=21))]
    bit_depth: u32,
    #[arg(long, default_value = "baseline")]
    model: String,
    /// Repetitions of the ordering benchmark.
    #[arg(long, default_value_t = 20)]
    runs: usize,
    /// Synthetic frames for the pipeline benchmark (0 skips it).
    #[arg(long, default_value_t = 50)]
    frames: usize,
    /// Rings of the synthetic scans.
    #[arg(long, default_value_t = 64)]
    rings: usize,
    #[arg(long, default_value_t = 1600)]
    points_per_ring: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn run(a: &BenchArgs) -> Result<()> {
    let model = crate::load_model(&a.model)?;
    let cloud: QuantizedCloud = match &a.input {
        Some(p) => quantize_fit(&read_ply(p)?, a.bit_depth)?,
        None => quantize_fit(&gen_ring_scan(a.rings, a.points_per_ring, 0.02, a.seed), a.bit_depth)?,
    };
    let mut rows = Vec::new();

    let orderings = [("morton", OrderingMode::Morton), ("explicit_sort", OrderingMode::ExplicitSort)];
    let mut enc_ms = [Vec::new(), Vec::new()];
    let mut dec_ms = [Vec::new(), Vec::new()];
    for run in 0..a.runs {
        let mut reference: Option<Vec<u8>> = None;
        for (i, &(name, ordering)) in orderings.iter().enumerate() {
            let opts = EncodeOptions {
                ordering,
                ..EncodeOptions::default()
            };
            let t = Instant::now();
            let (bytes, rep) = encode(&cloud, &model, &opts)?;
            let e = ms(t);
            let t = Instant::now();
            let (back, _) = decode_with(&bytes, &model, ordering)?;
            let d = ms(t);
            if back.coords() != cloud.coords() {
                bail!("{name} round trip changed the voxel set");
            }
            match &reference {
                Some(r) if *r != bytes => bail!("{name} bitstream differs from morton"),
                Some(_) => {}
                None => reference = Some(bytes.clone()),
            }
            enc_ms[i].push(e);
            dec_ms[i].push(d);
            rows.push(BenchRow {
                case: "ordering",
                mode: name,
                input: 0,
                run,
                voxels: cloud.len(),
                encode_ms: e,
                decode_ms: Some(d),
                bytes: bytes.len(),
                sort_count: rep.sort_count,
            });
        }
    }
    if a.runs > 0 {
        println!("ordering, {} voxels at B={}, {} runs (median ms)", cloud.len(), a.bit_depth, a.runs);
        for (i, (name, _)) in orderings.iter().enumerate() {
            println!(
                "  {name:<14} encode {:>9.2}  decode {:>9.2}",
                median(enc_ms[i].clone()),
                median(dec_ms[i].clone())
            );
        }
    }

    if a.frames > 0 {
        let cfg = RingScanConfig {
            rings: a.rings,
            points_per_ring: a.points_per_ring,
            seed: a.seed,
            ..RingScanConfig::default()
        };
        let modes = [("sync", EncodeMode::Sync), ("pipelined", EncodeMode::Pipelined)];
        let mut times = [Vec::new(), Vec::new()];
        for (f, raw) in gen_sequence(&cfg, a.frames, 0.5).iter().enumerate() {
            let frame = quantize_fit(raw, a.bit_depth)?;
            let mut reference: Option<Vec<u8>> = None;
            for (i, &(name, mode)) in modes.iter().enumerate() {
                let opts = EncodeOptions {
                    mode,
                    ..EncodeOptions::default()
                };
                let t = Instant::now();
                let (bytes, rep) = encode(&frame, &model, &opts)?;
                let e = ms(t);
                match &reference {
                    Some(r) if *r != bytes => bail!("frame {f}: pipelined bitstream differs"),
                    Some(_) => {}
                    None => reference = Some(bytes.clone()),
                }
                times[i].push(e);
                rows.push(BenchRow {
                    case: "pipeline",
                    mode: name,
                    input: f,
                    run: 0,
                    voxels: frame.len(),
                    encode_ms: e,
                    decode_ms: None,
                    bytes: bytes.len(),
                    sort_count: rep.sort_count,
                });
            }
        }
        println!("pipeline, {} frames (mean encode ms)", a.frames);
        for (i, (name, _)) in modes.iter().enumerate() {
            println!("  {name:<14} {:>9.2}", mean(&times[i]));
        }
    }

    if let Some(path) = &a.csv {
        write_bench_csv(path, &rows)?;
    }
    Ok(())
}
