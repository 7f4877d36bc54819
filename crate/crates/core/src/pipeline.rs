//! End-to-end in-transit benchmark: a bandwidth/latency model for the WAN
//! leg, wall-clock timings of the producer and consumer stages, and the
//! speedup over streaming the raw field.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bound::{BoundMode, DEFAULT_LOOSE_FRACTION, DEFAULT_SAFETY_FACTOR};
use crate::chr::{build_chr, request_with, ChrConfig, RequestOptions};
use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::isosurf::{extract_volume, verify_volumes};
use crate::scalar::Real;
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamModel {
    pub bandwidth_bps: f64,
    pub latency_s: f64,
}

impl Default for StreamModel {
    /// 1 Gbps, no latency.
    fn default() -> Self {
        StreamModel {
            bandwidth_bps: 1e9,
            latency_s: 0.0,
        }
    }
}

impl StreamModel {
    pub fn new(bandwidth_bps: f64, latency_s: f64) -> Result<Self> {
        if !(bandwidth_bps > 0.0 && bandwidth_bps.is_finite()) {
            return Err(Error::param(format!("bandwidth must be positive, got {bandwidth_bps}")));
        }
        if !(latency_s >= 0.0 && latency_s.is_finite()) {
            return Err(Error::param(format!("latency must be non-negative, got {latency_s}")));
        }
        Ok(StreamModel { bandwidth_bps, latency_s })
    }

    pub fn gbps(gbps: f64) -> Result<Self> {
        Self::new(gbps * 1e9, 0.0)
    }
}

/// Seconds to move `bytes` over the modeled link.
pub fn simulate_stream(bytes: u64, model: &StreamModel) -> f64 {
    model.latency_s + bytes as f64 * 8.0 / model.bandwidth_bps
}

/// One row of the time breakdown. The first twelve fields are the report
/// columns in order; the rest are appended after them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub accuracy: f64,
    pub block_size: usize,
    pub compress_s: f64,
    pub stream_s: f64,
    pub decompress_s: f64,
    pub extract_s: f64,
    pub total_s: f64,
    pub baseline_total_s: f64,
    pub speedup: f64,
    pub preserved_fraction: f64,
    pub bytes_original: u64,
    pub bytes_streamed: u64,
    pub baseline_stream_s: f64,
    pub baseline_extract_s: f64,
    pub isovalue: f64,
    pub bound_mode: BoundMode,
    /// Smallest bound among regions relevant to the isovalue.
    pub error_bound: Option<f64>,
    pub archive_bytes: u64,
    pub triangles: usize,
    /// Total without `compress_s`, for one archive serving many requests.
    pub total_amortized_s: f64,
    pub speedup_amortized: f64,
    /// Set when some cell case changed.
    pub topology_loss: bool,
}

impl TimingBreakdown {
    pub const COLUMNS: [&'static str; 12] = [
        "accuracy",
        "block_size",
        "compress_s",
        "stream_s",
        "decompress_s",
        "extract_s",
        "total_s",
        "baseline_total_s",
        "speedup",
        "preserved_fraction",
        "bytes_original",
        "bytes_streamed",
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig<T> {
    /// Stored in every archive.
    pub candidates: Vec<T>,
    /// Isovalue requested and extracted; the first candidate when `None`.
    pub query: Option<T>,
    pub accuracies: Vec<f64>,
    pub block_sizes: Vec<usize>,
    pub model: StreamModel,
    pub bound_mode: BoundMode,
    pub safety_factor: f64,
    pub loose_fraction: f64,
    /// Timing repetitions per stage; the median is reported. At least 3.
    pub repetitions: usize,
}

impl<T: Real> BenchConfig<T> {
    pub fn new(candidates: Vec<T>) -> Self {
        BenchConfig {
            candidates,
            query: None,
            accuracies: vec![1.0, 0.99, 0.95, 0.80],
            block_sizes: vec![64, 128],
            model: StreamModel::default(),
            bound_mode: BoundMode::StrictVertices,
            safety_factor: DEFAULT_SAFETY_FACTOR,
            loose_fraction: DEFAULT_LOOSE_FRACTION,
            repetitions: 3,
        }
    }
}

/// Runs `f` `reps` times and returns the median wall time with the last
/// result.
fn timed<R>(reps: usize, mut f: impl FnMut() -> Result<R>) -> Result<(f64, R)> {
    let mut times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        let out = f()?;
        times.push(start.elapsed().as_secs_f64());
        last = Some(out);
    }
    times.sort_by(f64::total_cmp);
    Ok((times[times.len() / 2], last.expect("at least one repetition")))
}

/// Baseline streams the raw field and extracts from it. The treatment
/// builds the archive, streams the bytes a pruned request touches,
/// decompresses them and extracts from the reconstruction. Rows are
/// ordered block size first, then accuracy.
pub fn run_benchmark<T: Real>(volume: &Volume<T>, config: &BenchConfig<T>, codec: &dyn Codec<T>) -> Result<Vec<TimingBreakdown>> {
    if config.accuracies.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
        return Err(Error::param("accuracies must lie in (0, 1]"));
    }
    if config.repetitions < 3 {
        return Err(Error::param("at least 3 timing repetitions are required"));
    }
    let k = match config.query {
        Some(k) => k,
        None => *config
            .candidates
            .first()
            .ok_or_else(|| Error::param("at least one candidate isovalue is required"))?,
    };
    let reps = config.repetitions;

    let bytes_original = volume.source_bytes();
    let baseline_stream_s = simulate_stream(bytes_original, &config.model);
    let (baseline_extract_s, _) = timed(reps, || extract_volume(volume, k))?;
    let baseline_total_s = baseline_stream_s + baseline_extract_s;

    let mut rows = Vec::new();
    for &block_size in &config.block_sizes {
        for &accuracy in &config.accuracies {
            let chr_config = ChrConfig {
                candidates: config.candidates.clone(),
                block_size,
                accuracy,
                bound_mode: config.bound_mode,
                safety_factor: config.safety_factor,
                loose_fraction: config.loose_fraction,
                reject_out_of_range: true,
            };
            let (compress_s, archive) = timed(reps, || build_chr(volume, &chr_config, codec))?;
            let options = RequestOptions {
                drop_pruned: true,
                snap: false,
            };
            // Reconstruction includes assembling the grid the mesh is cut from.
            let (decompress_s, (coverage, field)) = timed(reps, || {
                let set = request_with(&archive, k, accuracy, options, codec)?;
                let coverage = set.coverage;
                Ok((coverage, set.into_isosurface_field()?))
            })?;
            let (extract_s, mesh) = timed(reps, || extract_volume(&field, k))?;
            let report = verify_volumes(volume, &field, k)?;

            let bytes_streamed = coverage.bytes_touched;
            let stream_s = simulate_stream(bytes_streamed, &config.model);
            let total_s = compress_s + stream_s + decompress_s + extract_s;
            let total_amortized_s = stream_s + decompress_s + extract_s;
            let ci = archive.candidate_index(k).expect("query is a stored candidate");
            let error_bound = archive
                .regions
                .iter()
                .filter(|r| r.relevance.contains(ci))
                .map(|r| r.error_bound)
                .reduce(f64::min);

            rows.push(TimingBreakdown {
                accuracy,
                block_size,
                compress_s,
                stream_s,
                decompress_s,
                extract_s,
                total_s,
                baseline_total_s,
                speedup: baseline_total_s / total_s,
                preserved_fraction: report.preserved_fraction,
                bytes_original,
                bytes_streamed,
                baseline_stream_s,
                baseline_extract_s,
                isovalue: k.as_f64(),
                bound_mode: config.bound_mode,
                error_bound,
                archive_bytes: archive.file_len(),
                triangles: mesh.triangles.len(),
                total_amortized_s,
                speedup_amortized: baseline_total_s / total_amortized_s,
                topology_loss: report.preserved_fraction < 1.0,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::param(format!("unknown report format {other:?}"))),
        }
    }
}

fn table_columns() -> Vec<&'static str> {
    let mut cols = TimingBreakdown::COLUMNS.to_vec();
    cols.extend(["error_bound", "topology_loss"]);
    cols
}

fn render_table(rows: &[TimingBreakdown]) -> String {
    let header = table_columns();
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{:.2}", r.accuracy),
                r.block_size.to_string(),
                format!("{:.6}", r.compress_s),
                format!("{:.6}", r.stream_s),
                format!("{:.6}", r.decompress_s),
                format!("{:.6}", r.extract_s),
                format!("{:.6}", r.total_s),
                format!("{:.6}", r.baseline_total_s),
                format!("{:.3}", r.speedup),
                format!("{:.6}", r.preserved_fraction),
                r.bytes_original.to_string(),
                r.bytes_streamed.to_string(),
                r.error_bound.map_or_else(|| "-".into(), |e| format!("{e:.3e}")),
                if r.topology_loss { "YES" } else { "no" }.into(),
            ]
        })
        .collect();
    let widths: Vec<usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| cells.iter().map(|row| row[i].len()).fold(h.len(), usize::max))
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, items: &[String]| {
        let joined: Vec<String> = items
            .iter()
            .zip(&widths)
            .map(|(s, w)| format!("{s:>w$}"))
            .collect();
        let _ = writeln!(out, "{}", joined.join("  ").trim_end());
    };
    line(&mut out, &header.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    for row in &cells {
        line(&mut out, row);
    }
    out
}

/// Renders `rows` to `out`. Table and CSV share the column order of
/// [`TimingBreakdown`].
pub fn emit_report<W: Write>(rows: &[TimingBreakdown], format: ReportFormat, mut out: W) -> Result<()> {
    let io = |e: std::io::Error| Error::io("<report>", e);
    match format {
        ReportFormat::Table => out.write_all(render_table(rows).as_bytes()).map_err(io)?,
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, rows).map_err(|e| io(e.into()))?;
            writeln!(out).map_err(io)?;
        }
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut out);
            w.write_record(table_columns()).map_err(|e| io(e.into()))?;
            for r in rows {
                w.write_record(csv_record(r)).map_err(|e| io(e.into()))?;
            }
            w.flush().map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

fn csv_record(r: &TimingBreakdown) -> Vec<String> {
    vec![
        r.accuracy.to_string(),
        r.block_size.to_string(),
        r.compress_s.to_string(),
        r.stream_s.to_string(),
        r.decompress_s.to_string(),
        r.extract_s.to_string(),
        r.total_s.to_string(),
        r.baseline_total_s.to_string(),
        r.speedup.to_string(),
        r.preserved_fraction.to_string(),
        r.bytes_original.to_string(),
        r.bytes_streamed.to_string(),
        r.error_bound.map_or_else(String::new, |e| e.to_string()),
        r.topology_loss.to_string(),
    ]
}

/// [`emit_report`] into a file.
pub fn write_report(rows: &[TimingBreakdown], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    emit_report(rows, format, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}
