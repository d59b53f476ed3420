//! `pcc`: encode, decode, train, inspect and benchmark.

mod bench;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pcc_core::codec::per_point_bits;
use pcc_core::hierarchy::{neighbor_stats, BASE_LEVEL};
use pcc_core::model::{read_model, train_pool, write_model, TrainConfig};
use pcc_core::ply::{read_ply, write_ply_with, write_raw_ply, PlyFormat};
use pcc_core::synth::{gen_sequence, RingScanConfig};
use pcc_core::{
    decode, encode, quantize, quantize_fit, CodecModel, EncodeOptions, Hierarchy, OrderingMode, QuantizedCloud,
};

#[derive(Parser)]
#[command(name = "pcc", version, about = "Progressive octree geometry codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize a PLY cloud and write a compressed container.
    Encode(EncodeArgs),
    /// Reconstruct the voxel set of a container as PLY.
    Decode(DecodeArgs),
    /// Fit BoE centers and train a network pool on a directory of PLY files.
    Train(TrainArgs),
    /// Neighbor counts per level and per-voxel bit costs.
    Stats(StatsArgs),
    /// Time Morton vs explicit-sort and synchronous vs pipelined encoding.
    Bench(bench::BenchArgs),
    /// Write a synthetic ring-scan sequence as PLY files.
    Synth(SynthArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Bits per axis of the voxel grid.
    #[arg(long, short = 'b', default_value_t = 12, value_parser = clap::value_parser!(u32).range(2..=21))]
    bit_depth: u32,
    /// Grid origin as `x,y,z`; fitted to the cloud when absent.
    #[arg(long, value_parser = parse_origin, allow_hyphen_values = true, requires = "step")]
    origin: Option<[f64; 3]>,
    /// Voxel edge length; fitted to the cloud when absent.
    #[arg(long, requires = "origin")]
    step: Option<f64>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    /// Model file, or `baseline` for the adaptive count model.
    #[arg(long, default_value = "baseline")]
    model: String,
    #[arg(long)]
    pipelined: bool,
    /// Per-level report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value = "baseline")]
    model: String,
    #[arg(long)]
    ascii: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of PLY files.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, short = 'b', default_value_t = 12, value_parser = clap::value_parser!(u32).range(3..=21))]
    bit_depth: u32,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..=256))]
    dim: u32,
    /// Number of BoE networks on top of the shallow one.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..=255))]
    pool: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    #[arg(long)]
    out: PathBuf,
    /// Loss per step; defaults to the model path with `.loss.csv`.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    /// Levels to report, as `lo-hi` or a single level.
    #[arg(long, value_parser = parse_levels)]
    levels: Option<(u32, u32)>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(2..=3))]
    window: u32,
    /// Coded level whose per-voxel costs are written to `--bits-csv`.
    #[arg(long, requires = "bits_csv")]
    per_point_bits: Option<u32>,
    #[arg(long)]
    bits_csv: Option<PathBuf>,
    #[arg(long, default_value = "baseline")]
    model: String,
    /// Neighbor table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 16)]
    rings: usize,
    #[arg(long, default_value_t = 256)]
    points_per_ring: usize,
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Shift along x between frames, in meters.
    #[arg(long, default_value_t = 0.0)]
    speed: f64,
    #[arg(long, value_enum, default_value_t = Format::Binary)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Ascii,
    Binary,
}

fn parse_origin(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] if v.iter().all(|a| a.is_finite()) => Ok([x, y, z]),
        _ => Err("expected three finite numbers `x,y,z`".into()),
    }
}

fn parse_levels(s: &str) -> Result<(u32, u32), String> {
    let parse = |t: &str| t.trim().parse::<u32>().map_err(|e| format!("`{t}`: {e}"));
    let (lo, hi) = match s.split_once('-') {
        Some((a, b)) => (parse(a)?, parse(b)?),
        None => {
            let l = parse(s)?;
            (l, l)
        }
    };
    if lo > hi {
        return Err(format!("empty range {lo}-{hi}"));
    }
    Ok((lo, hi))
}

pub(crate) fn load_model(name: &str) -> Result<CodecModel> {
    if name == "baseline" {
        return Ok(CodecModel::Baseline);
    }
    let m = read_model(name).with_context(|| format!("reading model {name}"))?;
    Ok(CodecModel::Neural(Arc::new(m)))
}

fn load_cloud(path: &Path, grid: &GridArgs) -> Result<QuantizedCloud> {
    let raw = read_ply(path).with_context(|| format!("reading {}", path.display()))?;
    let q = match (grid.origin, grid.step) {
        (Some(origin), Some(step)) => quantize(&raw, grid.bit_depth, origin, step)?,
        _ => quantize_fit(&raw, grid.bit_depth)?,
    };
    Ok(q)
}

fn cmd_encode(a: &EncodeArgs) -> Result<()> {
    let cloud = load_cloud(&a.input, &a.grid)?;
    let model = load_model(&a.model)?;
    let opts = if a.pipelined {
        EncodeOptions::pipelined()
    } else {
        EncodeOptions::default()
    };
    let t = Instant::now();
    let (bytes, rep) = encode(&cloud, &model, &opts)?;
    let elapsed = t.elapsed();
    fs::write(&a.output, &bytes).with_context(|| format!("writing {}", a.output.display()))?;

    println!(
        "{} voxels ({} merged duplicates), B={}, {} bytes, {:.4} bpp, {:.1} ms",
        rep.points,
        cloud.merged_duplicates(),
        rep.bit_depth,
        rep.container_bytes,
        rep.bpp(),
        elapsed.as_secs_f64() * 1e3
    );
    print!("{}", report::level_table(&rep));
    if let Some(path) = &a.csv {
        report::write_level_csv(path, &rep)?;
    }
    Ok(())
}

fn cmd_decode(a: &DecodeArgs) -> Result<()> {
    let bytes = fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let model = load_model(&a.model)?;
    let cloud = decode(&bytes, &model)?;
    let format = if a.ascii {
        PlyFormat::Ascii
    } else {
        PlyFormat::BinaryLittleEndian
    };
    write_ply_with(&cloud, &a.output, format)?;
    println!("{} voxels at B={}", cloud.len(), cloud.bit_depth());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut files: Vec<PathBuf> = fs::read_dir(&a.data)
        .with_context(|| format!("listing {}", a.data.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ply")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .ply files in {}", a.data.display());
    }
    let clouds = files
        .iter()
        .map(|p| {
            let raw = read_ply(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(quantize_fit(&raw, a.bit_depth)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let config = TrainConfig {
        steps: a.steps,
        learning_rate: a.lr,
        seed: a.seed,
    };
    let t = Instant::now();
    let (model, rep) = train_pool(&clouds, a.dim as usize, a.pool as usize, &config)?;
    write_model(&model, &a.out)?;
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    report::write_loss_csv(&loss_path, &config, &rep.loss_bpp)?;

    let window = 50.min(rep.loss_bpp.len()).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
    println!(
        "{} clouds, {} steps in {:.1} s; loss {:.3} -> {:.3} bpp (mean of {window} steps)",
        clouds.len(),
        a.steps,
        t.elapsed().as_secs_f64(),
        mean(&rep.loss_bpp[..window.min(rep.loss_bpp.len())]),
        mean(&rep.loss_bpp[rep.loss_bpp.len().saturating_sub(window)..]),
    );
    println!("network use per level visit: {:?}", rep.network_use);
    Ok(())
}

fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let cloud = load_cloud(&a.input, &a.grid)?;
    let depth = cloud.bit_depth();
    let (lo, hi) = a.levels.unwrap_or((BASE_LEVEL, depth));
    if lo < BASE_LEVEL || hi > depth {
        bail!("levels {lo}-{hi} outside {BASE_LEVEL}-{depth}");
    }
    let hier = Hierarchy::build(cloud.coords(), depth, OrderingMode::Morton)?;
    let rows = (lo..=hi)
        .map(|b| {
            let level = hier.level(b);
            Ok((b, level.len(), neighbor_stats(level, a.window)?))
        })
        .collect::<Result<Vec<_>>>()?;

    println!(
        "{} voxels ({} merged duplicates), window {}",
        cloud.len(),
        cloud.merged_duplicates(),
        a.window
    );
    println!("{:>5} {:>10} {:>10}", "level", "voxels", "neighbors");
    for (b, n, avg) in &rows {
        println!("{b:>5} {n:>10} {avg:>10.4}");
    }
    if let Some(path) = &a.csv {
        report::write_neighbor_csv(path, a.window, &rows)?;
    }

    if let (Some(level), Some(path)) = (a.per_point_bits, &a.bits_csv) {
        let model = load_model(&a.model)?;
        let bits = per_point_bits(&cloud, &model, level)?;
        report::write_bits_csv(path, level, hier.level(level).coords(), &bits)?;
        let total: f64 = bits.iter().sum();
        println!(
            "level {level}: {} voxels, {:.1} bits total, {:.4} bits per voxel",
            bits.len(),
            total,
            total / bits.len() as f64
        );
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let cfg = RingScanConfig {
        rings: a.rings,
        points_per_ring: a.points_per_ring,
        noise: a.noise,
        seed: a.seed,
        ..RingScanConfig::default()
    };
    let format = match a.format {
        Format::Ascii => PlyFormat::Ascii,
        Format::Binary => PlyFormat::BinaryLittleEndian,
    };
    for (f, cloud) in gen_sequence(&cfg, a.frames, a.speed).iter().enumerate() {
        let path = a.out_dir.join(format!("frame_{f:04}.ply"));
        let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_raw_ply(cloud, file, format)?;
    }
    println!("{} frames of {} points in {}", a.frames, a.rings * a.points_per_ring, a.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Train(a) => cmd_train(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Bench(a) => bench::run(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
