use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use isochr::blocking::{build_index, decompose, merge_regions, plan_stats};
use isochr::chr::{peek_sample_dtype, ChrArchive};
use isochr::isosurf::{export_obj, extract_volume, verify_volumes};
use isochr::pipeline::{emit_report, write_report, ReportFormat};
use isochr::volume::{gen_smooth_random, gen_sphere, load_raw, save_raw, Volume};
use isochr::{
    build_chr, read_chr, request, run_benchmark, write_chr, BenchConfig, BoundMode, ChrConfig, Dtype, Endian,
    LorenzoCodec, Real, RequestOptions, StreamModel, TimingBreakdown,
};

/// Runs `$f::<T>(args..)` with `T` matching a sample width.
macro_rules! with_scalar {
    ($dtype:expr, $f:ident($($arg:expr),*)) => {
        match $dtype {
            Dtype::F32 => $f::<f32>($($arg),*),
            Dtype::F64 => $f::<f64>($($arg),*),
        }
    };
}

#[derive(Parser)]
#[command(name = "isochr", version, about = "Topology-preserving compression for in-transit isosurfaces")]
struct Cli {
    /// Log progress to stderr (repeat for more detail). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic field as a raw file.
    Gen(GenArgs),
    /// Print block and region statistics for a field.
    Plan(PlanArgs),
    /// Build a CHR archive from a raw field.
    Compress(CompressArgs),
    /// Print the header, candidates and region table of an archive.
    Inspect {
        /// Archive to read.
        file: PathBuf,
    },
    /// Reconstruct one isovalue from an archive and write its mesh.
    Extract(ExtractArgs),
    /// Compare cell cases of a raw field against an archive reconstruction.
    Verify(VerifyArgs),
    /// Time the streaming pipeline against the uncompressed baseline.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Sphere,
    Random,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    /// Grid size as NX,NY,NZ.
    #[arg(long, value_parser = parse_dims)]
    dims: [usize; 3],
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sinusoid count of the random field.
    #[arg(long, default_value_t = 8)]
    modes: usize,
    /// Sphere radius in samples; 0.3 of the smallest extent by default.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, default_value = "f32")]
    dtype: Dtype,
    #[arg(long, default_value = "little")]
    endian: Endian,
    #[arg(long)]
    out: PathBuf,
}

/// A headerless raw field and its out-of-band layout.
#[derive(Args)]
struct RawInput {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_parser = parse_dims)]
    dims: [usize; 3],
    #[arg(long, default_value = "f32")]
    dtype: Dtype,
    #[arg(long, default_value = "little")]
    endian: Endian,
}

#[derive(Args)]
struct BoundArgs {
    /// Fraction of the distance array the bound must protect.
    #[arg(long, default_value_t = 1.0)]
    accuracy: f64,
    #[arg(long, default_value = "strict")]
    bound_mode: BoundMode,
    #[arg(long, default_value_t = isochr::bound::DEFAULT_SAFETY_FACTOR)]
    safety_factor: f64,
    /// Bound for regions with nothing to protect, as a fraction of the value range.
    #[arg(long, default_value_t = isochr::bound::DEFAULT_LOOSE_FRACTION)]
    loose_fraction: f64,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    raw: RawInput,
    #[arg(long, default_value_t = 64)]
    block_size: usize,
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    isovalues: Vec<f64>,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    raw: RawInput,
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    isovalues: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    block_size: usize,
    #[command(flatten)]
    bound: BoundArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Query {
    #[arg(long)]
    chr: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    isovalue: f64,
    /// Requested accuracy; the archive's stored accuracy by default.
    #[arg(long)]
    accuracy: Option<f64>,
    /// Serve the nearest stored candidate when the isovalue is not stored.
    #[arg(long)]
    snap: bool,
    /// Skip regions that cannot contain the surface.
    #[arg(long)]
    drop_pruned: bool,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    query: Query,
    /// Mesh output (Wavefront OBJ).
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON summary of the request.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    query: Query,
    /// Original raw field.
    #[arg(long)]
    orig: PathBuf,
    /// Grid size of the original; taken from the archive when omitted.
    #[arg(long, value_parser = parse_dims)]
    dims: Option<[usize; 3]>,
    #[arg(long, default_value = "f32")]
    dtype: Dtype,
    #[arg(long, default_value = "little")]
    endian: Endian,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    raw: RawInput,
    /// Candidates stored in every archive.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    isovalues: Vec<f64>,
    /// Isovalue requested and extracted; the first candidate by default.
    #[arg(long, allow_negative_numbers = true)]
    query: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1.0,0.99,0.95,0.80")]
    accuracies: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "64,128")]
    block_sizes: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    bandwidth_gbps: f64,
    #[arg(long, default_value_t = 0.0)]
    latency_s: f64,
    #[arg(long, default_value = "strict")]
    bound_mode: BoundMode,
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    /// Leave compression out of the treatment total, as when one archive
    /// serves many requests.
    #[arg(long)]
    amortize_compress: bool,
    /// Report format for --out; guessed from its extension when omitted.
    #[arg(long)]
    format: Option<ReportFormat>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split([',', 'x']).collect();
    if parts.len() != 3 {
        return Err(format!("expected NX,NY,NZ, got {s:?}"));
    }
    let mut dims = [0; 3];
    for (d, p) in dims.iter_mut().zip(parts) {
        *d = p.trim().parse().map_err(|e| format!("bad extent {p:?}: {e}"))?;
    }
    Ok(dims)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match cli.command {
        Command::Gen(a) => gen(&a),
        Command::Plan(a) => plan(&a),
        Command::Compress(a) => with_scalar!(a.raw.dtype, compress(&a)),
        Command::Inspect { file } => with_scalar!(archive_dtype(&file)?, inspect(&file)),
        Command::Extract(a) => with_scalar!(archive_dtype(&a.query.chr)?, extract(&a)),
        Command::Verify(a) => with_scalar!(archive_dtype(&a.query.chr)?, verify(&a)),
        Command::Bench(a) => with_scalar!(a.raw.dtype, bench(&a)),
    };
    match outcome {
        // A closed pipe (`isochr inspect f.chr | head`) is not a failure.
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => Ok(()),
        other => other,
    }
}

fn archive_dtype(path: &Path) -> Result<Dtype> {
    peek_sample_dtype(path).with_context(|| format!("reading {}", path.display()))
}

fn load<T: Real>(raw: &RawInput) -> Result<Volume<T>> {
    load_raw(&raw.input, raw.dims, raw.dtype, raw.endian).with_context(|| format!("loading {}", raw.input.display()))
}

fn gen(a: &GenArgs) -> Result<()> {
    let vol: Volume<f64> = match a.kind {
        Kind::Sphere => {
            let center = a.dims.map(|d| (d as f64 - 1.0) / 2.0);
            let smallest = *a.dims.iter().min().unwrap() as f64;
            gen_sphere(a.dims, center, a.radius.unwrap_or(0.3 * smallest))?
        }
        Kind::Random => gen_smooth_random(a.dims, a.seed, a.modes)?,
    };
    save_raw(&vol, &a.out, a.dtype, a.endian)?;
    let (lo, hi) = vol.value_range();
    println!(
        "wrote {}: {} samples of {}, range [{lo:.6}, {hi:.6}]",
        a.out.display(),
        vol.len(),
        a.dtype.name()
    );
    Ok(())
}

fn plan(a: &PlanArgs) -> Result<()> {
    let mut out = io::stdout().lock();
    // Widening f32 is exact, so extrema and spans match the file.
    let vol: Volume<f64> = load(&a.raw)?;
    let decomp = decompose(&vol, a.block_size)?;
    let index = build_index(&decomp.blocks, &a.isovalues)?;
    let regions = merge_regions(&decomp, &index);
    let stats = plan_stats(&decomp, &index, &regions);

    writeln!(out, "dims           {:?}", vol.dims())?;
    writeln!(out, "block size     {}", a.block_size)?;
    writeln!(out, "block grid     {:?}", decomp.grid)?;
    writeln!(out, "blocks         {}", stats.blocks)?;
    writeln!(out, "pruned blocks  {}", stats.pruned_blocks)?;
    writeln!(out, "regions        {}", stats.regions)?;
    writeln!(out)?;
    writeln!(out, "{:>9}  {:>14}  {:>15}", "candidate", "isovalue", "relevant blocks")?;
    for (i, (&k, &n)) in a.isovalues.iter().zip(&stats.relevant_per_candidate).enumerate() {
        writeln!(out, "{i:>9}  {k:>14.6}  {n:>15}")?;
    }
    writeln!(out)?;
    writeln!(out, "{:>17}  {:>7}", "candidates served", "regions")?;
    for (size, count) in &stats.regions_by_key_size {
        writeln!(out, "{size:>17}  {count:>7}")?;
    }
    Ok(())
}

fn compress<T: Real>(a: &CompressArgs) -> Result<()> {
    let vol: Volume<T> = load(&a.raw)?;
    let config = ChrConfig {
        safety_factor: a.bound.safety_factor,
        loose_fraction: a.bound.loose_fraction,
        ..ChrConfig::new(a.isovalues.iter().map(|&k| T::cast(k)).collect(), a.block_size)
            .accuracy(a.bound.accuracy)
            .bound_mode(a.bound.bound_mode)
    };
    let start = Instant::now();
    let archive = build_chr(&vol, &config, &LorenzoCodec)?;
    let secs = start.elapsed().as_secs_f64();
    write_chr(&archive, &a.out)?;

    let original = vol.source_bytes();
    let size = archive.file_len();
    println!(
        "wrote {}: {} regions, {size} bytes from {original} ({:.2}x) in {secs:.3} s",
        a.out.display(),
        archive.regions.len(),
        original as f64 / size as f64
    );
    Ok(())
}

fn inspect<T: Real>(path: &Path) -> Result<()> {
    let mut out = io::stdout().lock();
    let archive: ChrArchive<T> = read_chr(path)?;
    let h = &archive.header;
    writeln!(out, "file           {} ({} bytes)", path.display(), archive.file_len())?;
    writeln!(out, "dims           {:?}", h.dims)?;
    writeln!(out, "spacing        {:?}", h.spacing)?;
    writeln!(out, "dtype          {} ingested, {} stored", h.original_dtype.name(), h.sample_dtype.name())?;
    writeln!(out, "block size     {}", h.block_size)?;
    writeln!(out, "value range    [{}, {}]", h.value_range.0, h.value_range.1)?;
    writeln!(out, "metadata       {} bytes", archive.metadata_len())?;
    writeln!(out)?;
    writeln!(out, "{:>9}  {:>14}", "candidate", "isovalue")?;
    for (i, k) in archive.candidates.iter().enumerate() {
        writeln!(out, "{i:>9}  {k:>14.6}")?;
    }
    writeln!(out)?;
    writeln!(out, 
        "{:>6}  {:>12}  {:>12}  {:>15}  {:>14}  {:>8}  {:>6}  {:>12}  {:>5}  {:>10}  {:>10}",
        "region", "blocks lo", "blocks hi", "samples", "relevance", "mode", "acc", "bound", "codec", "offset", "length"
    )?;
    for (r, block) in archive.regions.iter().zip(&archive.payloads) {
        let mode = match r.bound_mode {
            BoundMode::StrictVertices => "strict",
            BoundMode::PaperEdges => "paper",
        };
        let bound = if r.lossless_required {
            "lossless".to_string()
        } else {
            format!("{:.4e}", r.error_bound)
        };
        writeln!(out, 
            "{:>6}  {:>12}  {:>12}  {:>15}  {:>14}  {mode:>8}  {:>6}  {bound:>12}  {:>5}  {:>10}  {:>10}",
            r.region_id,
            triple(r.block_lo),
            triple(r.block_hi),
            triple(r.sample_extent),
            format!("{:?}", r.relevance),
            r.accuracy,
            block.header.codec_id,
            r.payload_offset,
            r.payload_length
        )?;
    }
    Ok(())
}

fn triple(v: [usize; 3]) -> String {
    format!("{},{},{}", v[0], v[1], v[2])
}

/// The weakest accuracy any region was built at, which every request may ask for.
fn stored_accuracy<T: Real>(archive: &ChrArchive<T>) -> f64 {
    archive.regions.iter().map(|r| r.accuracy).fold(1.0, f64::min)
}

fn open_query<T: Real>(q: &Query) -> Result<(ChrArchive<T>, isochr::chr::ReconstructionSet<T>)> {
    let archive: ChrArchive<T> = read_chr(&q.chr).with_context(|| format!("reading {}", q.chr.display()))?;
    let accuracy = q.accuracy.unwrap_or_else(|| stored_accuracy(&archive));
    let options = RequestOptions {
        drop_pruned: q.drop_pruned,
        snap: q.snap,
    };
    let set = request(&archive, T::cast(q.isovalue), accuracy, options)?;
    if set.snapped {
        log::warn!("isovalue {} is not stored; serving candidate {}", q.isovalue, set.isovalue);
    }
    Ok((archive, set))
}

fn extract<T: Real>(a: &ExtractArgs) -> Result<()> {
    let start = Instant::now();
    let (_, set) = open_query::<T>(&a.query)?;
    let (k, snapped, accuracy, coverage) = (set.isovalue, set.snapped, set.accuracy, set.coverage);
    let field = set.into_isosurface_field()?;
    let reconstruct_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let mesh = extract_volume(&field, k)?;
    let extract_s = start.elapsed().as_secs_f64();
    export_obj(&mesh, &a.out)?;

    println!(
        "wrote {}: {} vertices, {} triangles at isovalue {k}; {} of {} regions, {} of {} bytes",
        a.out.display(),
        mesh.vertices.len(),
        mesh.triangles.len(),
        coverage.regions_selected,
        coverage.regions_total,
        coverage.bytes_touched,
        coverage.bytes_total
    );
    if let Some(path) = &a.report {
        let report = json!({
            "requested_isovalue": a.query.isovalue,
            "isovalue": k.as_f64(),
            "snapped": snapped,
            "accuracy": accuracy,
            "vertices": mesh.vertices.len(),
            "triangles": mesh.triangles.len(),
            "area": mesh.area(),
            "coverage": coverage,
            "reconstruct_s": reconstruct_s,
            "extract_s": extract_s,
        });
        write_json(path, &report)?;
    }
    Ok(())
}

fn verify<T: Real>(a: &VerifyArgs) -> Result<()> {
    let mut out = io::stdout().lock();
    let (archive, set) = open_query::<T>(&a.query)?;
    let dims = a.dims.unwrap_or(archive.header.dims);
    if dims != archive.header.dims {
        bail!("original dims {dims:?} differ from the archive's {:?}", archive.header.dims);
    }
    let orig: Volume<T> = load_raw(&a.orig, dims, a.dtype, a.endian)
        .with_context(|| format!("loading {}", a.orig.display()))?;
    let k = set.isovalue;
    let field = set.into_isosurface_field()?;
    let report = verify_volumes(&orig, &field, k)?;
    writeln!(out, "preserved_fraction {:.6}", report.preserved_fraction)?;
    writeln!(out, "differing_cells {} of {}", report.differing_cells, report.total_cells)?;
    if let Some(c) = report.first_diff {
        writeln!(out, "first_diff {}", triple(c))?;
    }
    Ok(())
}

fn bench<T: Real>(a: &BenchArgs) -> Result<()> {
    let vol: Volume<T> = load(&a.raw)?;
    let config = BenchConfig {
        query: a.query.map(T::cast),
        accuracies: a.accuracies.clone(),
        block_sizes: a.block_sizes.clone(),
        model: StreamModel::new(a.bandwidth_gbps * 1e9, a.latency_s)?,
        bound_mode: a.bound_mode,
        repetitions: a.repetitions,
        ..BenchConfig::new(a.isovalues.iter().map(|&k| T::cast(k)).collect())
    };
    let mut rows = run_benchmark(&vol, &config, &LorenzoCodec)?;
    let mut stdout = BufWriter::new(io::stdout().lock());
    emit_report(&rows, ReportFormat::Table, &mut stdout)?;
    if a.amortize_compress {
        rows.iter_mut().for_each(amortize);
        writeln!(stdout, "\ncompression amortized:")?;
        emit_report(&rows, ReportFormat::Table, &mut stdout)?;
    }
    stdout.flush()?;
    if let Some(path) = &a.out {
        let format = match a.format {
            Some(f) => f,
            None => match path.extension().and_then(|e| e.to_str()) {
                Some("json") => ReportFormat::Json,
                Some("csv") => ReportFormat::Csv,
                _ => ReportFormat::Table,
            },
        };
        write_report(&rows, format, path)?;
    }
    Ok(())
}

/// Drops compression from the headline columns. `total_amortized_s` and
/// `speedup_amortized` already carry the same figures.
fn amortize(row: &mut TimingBreakdown) {
    row.compress_s = 0.0;
    row.total_s = row.total_amortized_s;
    row.speedup = row.speedup_amortized;
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}
