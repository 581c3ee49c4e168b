//! Trace-file parsing, dataset filtering, deterministic splits, and the
//! on-disk dataset layout.
//!
//! A dataset is a directory with one subdirectory per site
//! (`site_<id>/trace_<n>.txt`) and a tab-separated manifest. Trace files are
//! UTF-8 text, one `<timestamp>\t<signed size>` line per packet. The manifest
//! starts with `#key=value` header lines (layer, filter parameters, split
//! seed and protocol) followed by one
//! `site<TAB>path<TAB>packet_count<TAB>split` entry per trace; identical
//! inputs always produce byte-identical manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeding::stream_rng;
use crate::trace::{Layer, PacketRecord, Trace};

/// Split assignment of one trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    /// Not selected by the split protocol (surplus traces, or a manifest
    /// written before splitting).
    Unassigned,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "none",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "none" => Ok(Split::Unassigned),
            other => Err(Error::Manifest(format!("unknown split '{other}'"))),
        }
    }
}

/// Per-site trace counts of a split protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitProtocol {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitProtocol {
    pub fn new(train: usize, val: usize, test: usize) -> Self {
        SplitProtocol { train, val, test }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

impl std::fmt::Display for SplitProtocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.train, self.val, self.test)
    }
}

impl std::str::FromStr for SplitProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidConfig(format!(
                "split protocol '{s}' must be train/val/test"
            )));
        }
        let parse = |p: &str| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad split count '{p}'")))
        };
        Ok(SplitProtocol {
            train: parse(parts[0])?,
            val: parse(parts[1])?,
            test: parse(parts[2])?,
        })
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub site: u32,
    /// Path relative to the manifest's directory.
    pub path: String,
    pub packets: usize,
    pub split: Split,
}

/// Site → trace-file index with filter and split provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub layer: Layer,
    pub min_instances: usize,
    pub min_length: usize,
    pub seed: u64,
    pub protocol: Option<SplitProtocol>,
    pub entries: Vec<ManifestEntry>,
}

/// Parse one trace file: `<timestamp>\t<signed size>` per line.
///
/// Blank lines are skipped and surrounding whitespace is tolerated. Reported
/// errors carry 1-based line numbers.
pub fn parse_trace_file(text: &str, site: u32, layer: Layer) -> Result<Trace> {
    let mut packets = Vec::new();
    let mut prev_ts = f64::NEG_INFINITY;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split('\t');
        let (ts_str, size_str) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected '<timestamp>\\t<size>', got '{trimmed}'"),
                })
            }
        };
        let timestamp: f64 = ts_str.trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad timestamp '{ts_str}'"),
        })?;
        let size: i64 = size_str.trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad size '{size_str}'"),
        })?;
        if size == 0 {
            return Err(Error::Parse {
                line,
                msg: "packet size must be non-zero".into(),
            });
        }
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(Error::Parse {
                line,
                msg: format!("timestamp {timestamp} must be finite and non-negative"),
            });
        }
        if timestamp < prev_ts {
            return Err(Error::Parse {
                line,
                msg: format!("timestamp decreases ({timestamp} < {prev_ts})"),
            });
        }
        prev_ts = timestamp;
        packets.push(PacketRecord { timestamp, size });
    }
    if packets.is_empty() {
        return Err(Error::Parse {
            line: 0,
            msg: "file contains no packets".into(),
        });
    }
    Trace::new(site, layer, packets)
}

/// Render a trace in the on-disk format (microsecond timestamps).
pub fn format_trace_file(trace: &Trace) -> String {
    let mut out = String::with_capacity(trace.packets.len() * 16);
    for p in &trace.packets {
        out.push_str(&format!("{:.6}\t{}\n", p.timestamp, p.size));
    }
    out
}

/// Counts removed by [`filter_dataset`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterReport {
    /// Traces dropped for being shorter than `min_length`.
    pub short_traces: usize,
    /// Sites dropped for having fewer than `min_instances` traces left.
    pub dropped_sites: usize,
    /// Traces dropped together with those sites.
    pub traces_of_dropped_sites: usize,
}

/// Apply the dataset filters: drop traces shorter than `min_length` first,
/// then drop sites left with fewer than `min_instances` traces.
pub fn filter_dataset(
    traces: Vec<Trace>,
    min_instances: usize,
    min_length: usize,
) -> (Vec<Trace>, FilterReport) {
    let mut report = FilterReport::default();
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    let mut long_enough = Vec::with_capacity(traces.len());
    for t in traces {
        if t.len() < min_length {
            report.short_traces += 1;
        } else {
            *counts.entry(t.site).or_insert(0) += 1;
            long_enough.push(t);
        }
    }
    let keep: Vec<Trace> = long_enough
        .into_iter()
        .filter(|t| {
            if counts[&t.site] >= min_instances {
                true
            } else {
                report.traces_of_dropped_sites += 1;
                false
            }
        })
        .collect();
    report.dropped_sites = counts.values().filter(|&&c| c < min_instances).count();
    (keep, report)
}

/// Assign splits per site: a seeded shuffle of each site's traces, then
/// `train`, `val`, `test` counts in that order. Surplus traces beyond the
/// protocol total stay [`Split::Unassigned`]. Deterministic in
/// `(traces, protocol, seed)`; input order within a site is the shuffle's
/// starting point.
pub fn split_dataset(
    traces: &[Trace],
    protocol: SplitProtocol,
    seed: u64,
) -> Result<Vec<Split>> {
    let sites: Vec<u32> = traces.iter().map(|t| t.site).collect();
    split_by_site(&sites, protocol, seed)
}

fn split_by_site(sites: &[u32], protocol: SplitProtocol, seed: u64) -> Result<Vec<Split>> {
    let mut by_site: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &site) in sites.iter().enumerate() {
        by_site.entry(site).or_default().push(i);
    }
    let mut assignment = vec![Split::Unassigned; sites.len()];
    for (&site, indices) in &by_site {
        if indices.len() < protocol.total() {
            return Err(Error::InsufficientTraces {
                site,
                have: indices.len(),
                need: protocol.total(),
            });
        }
        let mut order = indices.clone();
        let mut rng = stream_rng(seed, u64::from(site));
        order.shuffle(&mut rng);
        for (rank, &trace_idx) in order.iter().enumerate() {
            assignment[trace_idx] = if rank < protocol.train {
                Split::Train
            } else if rank < protocol.train + protocol.val {
                Split::Val
            } else if rank < protocol.total() {
                Split::Test
            } else {
                Split::Unassigned
            };
        }
    }
    Ok(assignment)
}

/// Write a dataset directory: one file per trace under `site_<id>/`, plus an
/// unsplit manifest at `<dir>/manifest.tsv`.
pub fn write_dataset(dir: impl AsRef<Path>, traces: &[Trace], layer: Layer) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let mut per_site_counter: BTreeMap<u32, usize> = BTreeMap::new();
    let mut entries = Vec::with_capacity(traces.len());
    for t in traces {
        if t.layer != layer {
            return Err(Error::InvalidTrace(format!(
                "trace for site {} has layer {}, dataset is {layer}",
                t.site, t.layer
            )));
        }
        let n = per_site_counter.entry(t.site).or_insert(0);
        let rel = format!("site_{:04}/trace_{:04}.txt", t.site, n);
        *n += 1;
        let path = dir.join(&rel);
        std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| Error::file(&path, e))?;
        std::fs::write(&path, format_trace_file(t)).map_err(|e| Error::file(&path, e))?;
        entries.push(ManifestEntry {
            site: t.site,
            path: rel,
            packets: t.len(),
            split: Split::Unassigned,
        });
    }
    entries.sort_by(|a, b| (a.site, &a.path).cmp(&(b.site, &b.path)));
    let manifest = DatasetManifest {
        layer,
        min_instances: 1,
        min_length: 1,
        seed: 0,
        protocol: None,
        entries,
    };
    let path = dir.join("manifest.tsv");
    write_manifest(&path, &manifest)?;
    Ok(path)
}

/// Render a manifest. Entries are sorted by (site, path) so output is
/// byte-identical across runs.
pub fn format_manifest(m: &DatasetManifest) -> String {
    let mut out = String::new();
    out.push_str("#wf-dataset-manifest v1\n");
    out.push_str(&format!("#layer={}\n", m.layer));
    out.push_str(&format!("#min_instances={}\n", m.min_instances));
    out.push_str(&format!("#min_length={}\n", m.min_length));
    out.push_str(&format!("#seed={}\n", m.seed));
    if let Some(p) = m.protocol {
        out.push_str(&format!("#protocol={p}\n"));
    }
    let mut entries: Vec<&ManifestEntry> = m.entries.iter().collect();
    entries.sort_by(|a, b| (a.site, &a.path).cmp(&(b.site, &b.path)));
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.site,
            e.path,
            e.packets,
            e.split.as_str()
        ));
    }
    out
}

pub fn write_manifest(path: impl AsRef<Path>, m: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_manifest(m)).map_err(|e| Error::file(path, e))
}

/// Parse a manifest rendered by [`format_manifest`].
pub fn parse_manifest(text: &str) -> Result<DatasetManifest> {
    let mut layer = None;
    let mut min_instances = 1usize;
    let mut min_length = 1usize;
    let mut seed = 0u64;
    let mut protocol = None;
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(header) = trimmed.strip_prefix('#') {
            if let Some((key, value)) = header.split_once('=') {
                match key {
                    "layer" => layer = Some(value.parse()?),
                    "min_instances" => {
                        min_instances = value.parse().map_err(|_| {
                            Error::Manifest(format!("line {line}: bad min_instances '{value}'"))
                        })?
                    }
                    "min_length" => {
                        min_length = value.parse().map_err(|_| {
                            Error::Manifest(format!("line {line}: bad min_length '{value}'"))
                        })?
                    }
                    "seed" => {
                        seed = value.parse().map_err(|_| {
                            Error::Manifest(format!("line {line}: bad seed '{value}'"))
                        })?
                    }
                    "protocol" => protocol = Some(value.parse()?),
                    _ => {} // tolerate unknown headers
                }
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Manifest(format!(
                "line {line}: expected 4 tab-separated fields, got {}",
                fields.len()
            )));
        }
        entries.push(ManifestEntry {
            site: fields[0]
                .parse()
                .map_err(|_| Error::Manifest(format!("line {line}: bad site '{}'", fields[0])))?,
            path: fields[1].to_string(),
            packets: fields[2].parse().map_err(|_| {
                Error::Manifest(format!("line {line}: bad packet count '{}'", fields[2]))
            })?,
            split: fields[3].parse()?,
        });
    }
    let layer = layer.ok_or_else(|| Error::Manifest("missing #layer header".into()))?;
    Ok(DatasetManifest {
        layer,
        min_instances,
        min_length,
        seed,
        protocol,
        entries,
    })
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_manifest(&text)
}

/// Load every trace referenced by a manifest (paths relative to `base_dir`),
/// verifying recorded packet counts. Returns traces paired with their split.
pub fn load_traces(
    manifest: &DatasetManifest,
    base_dir: impl AsRef<Path>,
) -> Result<Vec<(Trace, Split)>> {
    let base = base_dir.as_ref();
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let path = base.join(&e.path);
        let text = std::fs::read_to_string(&path).map_err(|err| Error::file(&path, err))?;
        let trace =
            parse_trace_file(&text, e.site, manifest.layer).map_err(|err| match err {
                Error::Parse { line, msg } => Error::Manifest(format!(
                    "{}: line {line}: {msg}",
                    path.display()
                )),
                other => other,
            })?;
        if trace.len() != e.packets {
            return Err(Error::Manifest(format!(
                "{}: has {} packets, manifest records {}",
                path.display(),
                trace.len(),
                e.packets
            )));
        }
        out.push((trace, e.split));
    }
    Ok(out)
}

/// Filter and split a loaded dataset, producing the manifest to train from.
///
/// `entries` pairs each trace with its manifest path (so the output manifest
/// can reference the same files).
pub fn build_split_manifest(
    traces_with_paths: Vec<(Trace, String)>,
    layer: Layer,
    min_instances: usize,
    min_length: usize,
    protocol: SplitProtocol,
    seed: u64,
) -> Result<(DatasetManifest, FilterReport)> {
    if min_instances < 1 || min_length < 1 {
        return Err(Error::InvalidConfig(
            "min_instances and min_length must be >= 1".into(),
        ));
    }
    // filter, carrying paths along: short traces first, then thin sites
    let mut report = FilterReport::default();
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    let mut kept: Vec<(Trace, String)> = Vec::new();
    for (t, p) in traces_with_paths {
        if t.len() < min_length {
            report.short_traces += 1;
        } else {
            *counts.entry(t.site).or_insert(0) += 1;
            kept.push((t, p));
        }
    }
    report.dropped_sites = counts.values().filter(|&&c| c < min_instances).count();
    let mut filtered: Vec<(Trace, String)> = Vec::with_capacity(kept.len());
    for (t, p) in kept {
        if counts[&t.site] >= min_instances {
            filtered.push((t, p));
        } else {
            report.traces_of_dropped_sites += 1;
        }
    }

    let sites: Vec<u32> = filtered.iter().map(|(t, _)| t.site).collect();
    let assignment = split_by_site(&sites, protocol, seed)?;

    let entries: Vec<ManifestEntry> = filtered
        .iter()
        .zip(&assignment)
        .map(|((t, p), &split)| ManifestEntry {
            site: t.site,
            path: p.clone(),
            packets: t.len(),
            split,
        })
        .collect();
    Ok((
        DatasetManifest {
            layer,
            min_instances,
            min_length,
            seed,
            protocol: Some(protocol),
            entries,
        },
        report,
    ))
}
