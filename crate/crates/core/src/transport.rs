//! Cell / TLS-record / TCP-segment encapsulation model and synthetic traces.
//!
//! Application payload is carved into fixed-length cells, consecutive
//! same-direction cells are grouped into TLS records (plus a per-record
//! header), and each record is split into TCP segments bounded by the MSS.
//! A parametric burst-structured generator drives the pipeline to produce
//! labelled datasets at any of the three layers without external captures.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seeding::{derive_seed, stream_rng};
use crate::trace::{Layer, PacketRecord, Trace};

/// Packet direction. `Incoming` is toward the client and encodes as +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Incoming,
    Outgoing,
}

impl Direction {
    pub fn sign(self) -> i64 {
        match self {
            Direction::Incoming => 1,
            Direction::Outgoing => -1,
        }
    }
}

/// Encapsulation constants. Defaults: 512-byte cells (the onion-routing cell
/// convention), 29 bytes of TLS record overhead, MSS 1460, records of at most
/// 6 cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportConfig {
    pub cell_size: u32,
    pub header_overhead: u32,
    pub mss: u32,
    pub max_cells_per_record: u32,
}

impl Default for TransportConfig {
    fn default() -> Self {
        TransportConfig {
            cell_size: 512,
            header_overhead: 29,
            mss: 1460,
            max_cells_per_record: 6,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cell_size == 0 || self.mss == 0 || self.max_cells_per_record == 0 {
            return Err(Error::InvalidConfig(
                "cell_size, mss and max_cells_per_record must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A run of fixed-size signed cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStream {
    /// Signed cell sizes; `|cell| == cell_size` for every entry.
    pub cells: Vec<i64>,
    pub cell_size: u32,
}

/// Carve a payload into fixed-length cells, padding the final cell to full
/// size.
pub fn cells_from_payload(
    payload_bytes: u64,
    direction: Direction,
    cell_size: u32,
) -> Result<CellStream> {
    if payload_bytes == 0 {
        return Err(Error::InvalidConfig("payload must be >= 1 byte".into()));
    }
    if cell_size == 0 {
        return Err(Error::InvalidConfig("cell_size must be >= 1".into()));
    }
    let count = payload_bytes.div_ceil(cell_size as u64);
    let cell = direction.sign() * cell_size as i64;
    Ok(CellStream {
        cells: vec![cell; count as usize],
        cell_size,
    })
}

/// Group consecutive same-direction cells into TLS records.
///
/// Each record takes between 1 and `max_cells_per_record` cells (count drawn
/// from `rng`), never crossing a direction change. The signed record size is
/// `cells * cell_size + header_overhead`.
pub fn tls_records_from_cells<R: Rng + ?Sized>(
    cells: &CellStream,
    max_cells_per_record: u32,
    header_overhead: u32,
    rng: &mut R,
) -> Vec<i64> {
    tls_records_from_cells_with(cells, header_overhead, || {
        rng.random_range(1..=max_cells_per_record.max(1)) as usize
    })
}

/// [`tls_records_from_cells`] with an explicit per-record cell-count source,
/// for deterministic grouping in tests.
pub fn tls_records_from_cells_with(
    cells: &CellStream,
    header_overhead: u32,
    mut draw_cells: impl FnMut() -> usize,
) -> Vec<i64> {
    let mut records = Vec::new();
    let mut i = 0;
    while i < cells.cells.len() {
        let dir = cells.cells[i].signum();
        let want = draw_cells().max(1);
        let mut taken = 0;
        while taken < want
            && i + taken < cells.cells.len()
            && cells.cells[i + taken].signum() == dir
        {
            taken += 1;
        }
        let size = taken as i64 * cells.cell_size as i64 + header_overhead as i64;
        records.push(dir * size);
        i += taken;
    }
    records
}

/// Split each record into MSS-bounded TCP segments.
///
/// All but the final segment of a record are exactly `mss` bytes; byte totals
/// and direction are preserved per record.
pub fn tcp_segments_from_records(records: &[i64], mss: u32) -> Vec<i64> {
    let mss = i64::from(mss.max(1));
    let mut segments = Vec::new();
    for &record in records {
        let dir = record.signum();
        let mut remaining = record.abs();
        while remaining > mss {
            segments.push(dir * mss);
            remaining -= mss;
        }
        segments.push(dir * remaining);
    }
    segments
}

/// Weighted payload-size palette: `(bytes, weight)` pairs.
pub type SizePalette = Vec<(u32, f64)>;

/// How many payload units an incoming burst carries, as a process over the
/// trace's incoming bursts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnitsProcess {
    /// Independent uniform draw from an inclusive range per burst.
    Uniform(u32, u32),
    /// A balanced multiset of `big`- and `small`-class bursts in per-trace
    /// random order, preceded by `0..=preamble` bursts of `preamble_units`
    /// (so absolute burst positions carry no information). Each burst adds
    /// an independent `0..=jitter` draw. With `big == small` this degrades
    /// to a constant-size body, which is how matched site pairs are built:
    /// `big + small` equal across the pair keeps totals and all
    /// short-window statistics identical while the run-length extremes
    /// differ.
    Mixture {
        big: u32,
        small: u32,
        jitter: u32,
        preamble: u32,
        preamble_units: u32,
    },
}

impl UnitsProcess {
    fn validate(&self, name: &str) -> Result<()> {
        match self {
            UnitsProcess::Uniform(lo, hi) => {
                if *lo < 1 || hi < lo {
                    return Err(Error::InvalidProfile(format!(
                        "{name} range ({lo}, {hi}) invalid"
                    )));
                }
            }
            UnitsProcess::Mixture {
                big,
                small,
                preamble_units,
                ..
            } => {
                if *small < 1 || big < small || *preamble_units < 1 {
                    return Err(Error::InvalidProfile(format!(
                        "{name} mixture ({big}, {small}, preamble {preamble_units}) invalid"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Unit-count plan over `m` incoming bursts.
    fn plan<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<u32> {
        match *self {
            UnitsProcess::Uniform(lo, hi) => (0..m).map(|_| rng.random_range(lo..=hi)).collect(),
            UnitsProcess::Mixture {
                big,
                small,
                jitter,
                preamble,
                preamble_units,
            } => {
                let p = (rng.random_range(0..=preamble) as usize).min(m);
                // balanced big/small pairs; an odd body gets one midpoint
                // filler so totals are independent of the parity
                let pairs = (m - p) / 2;
                let mut body = Vec::with_capacity(m - p);
                for _ in 0..pairs {
                    body.push(big);
                    body.push(small);
                }
                if (m - p) % 2 == 1 {
                    body.push((big + small) / 2);
                }
                body.shuffle(rng);
                let mut plan: Vec<u32> = vec![preamble_units; p];
                plan.extend(body);
                for v in plan.iter_mut() {
                    *v += rng.random_range(0..=jitter);
                }
                plan
            }
        }
    }
}

/// Generative description of one monitored site.
///
/// A trace is a sequence of bursts. Burst directions cycle through
/// `pattern`; each burst carries a number of payload units (a range draw for
/// outgoing bursts, a [`UnitsProcess`] across incoming bursts), and each
/// unit's size is drawn from the per-direction palette. Timestamps
/// accumulate from per-packet gaps, with a larger gap opening each burst.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteProfile {
    pub site: u32,
    /// Bursts per trace, inclusive range.
    pub burst_count: (u32, u32),
    /// Burst directions, cycled.
    pub pattern: Vec<Direction>,
    /// Payload units per outgoing burst, inclusive range.
    pub out_units: (u32, u32),
    /// Payload units per incoming burst.
    pub in_units: UnitsProcess,
    pub out_palette: SizePalette,
    pub in_palette: SizePalette,
    /// Seconds between packets inside a burst, half-open range.
    pub gap_within: (f64, f64),
    /// Seconds before the first packet of a burst, half-open range.
    pub burst_gap: (f64, f64),
    /// Per-site seed; trace i uses the stream `(seed, i)`.
    pub seed: u64,
}

impl SiteProfile {
    pub fn validate(&self) -> Result<()> {
        fn check_range(name: &str, r: (u32, u32)) -> Result<()> {
            if r.0 < 1 || r.1 < r.0 {
                return Err(Error::InvalidProfile(format!(
                    "{name} range ({}, {}) invalid",
                    r.0, r.1
                )));
            }
            Ok(())
        }
        fn check_palette(name: &str, p: &SizePalette) -> Result<()> {
            if p.is_empty() {
                return Err(Error::InvalidProfile(format!("{name} palette empty")));
            }
            let mut total = 0.0;
            for &(bytes, w) in p {
                if bytes == 0 {
                    return Err(Error::InvalidProfile(format!("{name} palette has 0-byte entry")));
                }
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidProfile(format!("{name} palette weight invalid")));
                }
                total += w;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidProfile(format!(
                    "{name} palette weights sum to {total}, expected 1"
                )));
            }
            Ok(())
        }
        fn check_gap(name: &str, g: (f64, f64)) -> Result<()> {
            if !(g.0.is_finite() && g.1.is_finite()) || g.0 <= 0.0 || g.1 < g.0 {
                return Err(Error::InvalidProfile(format!(
                    "{name} gap range ({}, {}) invalid",
                    g.0, g.1
                )));
            }
            Ok(())
        }
        check_range("burst_count", self.burst_count)?;
        check_range("out_units", self.out_units)?;
        self.in_units.validate("in_units")?;
        if self.pattern.is_empty() {
            return Err(Error::InvalidProfile("direction pattern empty".into()));
        }
        check_palette("out", &self.out_palette)?;
        check_palette("in", &self.in_palette)?;
        check_gap("within-burst", self.gap_within)?;
        check_gap("burst", self.burst_gap)?;
        Ok(())
    }

    fn palette(&self, dir: Direction) -> &SizePalette {
        match dir {
            Direction::Incoming => &self.in_palette,
            Direction::Outgoing => &self.out_palette,
        }
    }
}

fn draw_palette<R: Rng + ?Sized>(palette: &SizePalette, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(bytes, w) in palette {
        acc += w;
        if u < acc {
            return u64::from(bytes);
        }
    }
    u64::from(palette.last().unwrap().0)
}

fn draw_gap<R: Rng + ?Sized>(range: (f64, f64), rng: &mut R) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

fn draw_count<R: Rng + ?Sized>(range: (u32, u32), rng: &mut R) -> u32 {
    rng.random_range(range.0..=range.1)
}

/// Draw one trace from a profile at the requested layer.
pub fn sample_trace<R: Rng + ?Sized>(
    profile: &SiteProfile,
    layer: Layer,
    cfg: &TransportConfig,
    rng: &mut R,
) -> Result<Trace> {
    profile.validate()?;
    cfg.validate()?;

    let mut packets = Vec::new();
    let mut t = 0.0f64;
    let bursts = draw_count(profile.burst_count, rng);
    let dirs: Vec<Direction> = (0..bursts as usize)
        .map(|b| profile.pattern[b % profile.pattern.len()])
        .collect();
    let incoming_bursts = dirs.iter().filter(|d| **d == Direction::Incoming).count();
    let in_plan = profile.in_units.plan(incoming_bursts, rng);

    let mut in_ordinal = 0usize;
    for dir in dirs {
        let units = match dir {
            Direction::Incoming => {
                in_ordinal += 1;
                in_plan[in_ordinal - 1]
            }
            Direction::Outgoing => draw_count(profile.out_units, rng),
        };
        let mut cells = Vec::new();
        for _ in 0..units {
            let payload = draw_palette(profile.palette(dir), rng);
            cells.extend(cells_from_payload(payload, dir, cfg.cell_size)?.cells);
        }
        let stream = CellStream {
            cells,
            cell_size: cfg.cell_size,
        };
        let sizes: Vec<i64> = match layer {
            Layer::Cell => stream.cells,
            Layer::Tls => tls_records_from_cells(
                &stream,
                cfg.max_cells_per_record,
                cfg.header_overhead,
                rng,
            ),
            Layer::Tcp => {
                let records = tls_records_from_cells(
                    &stream,
                    cfg.max_cells_per_record,
                    cfg.header_overhead,
                    rng,
                );
                tcp_segments_from_records(&records, cfg.mss)
            }
        };
        for (j, &size) in sizes.iter().enumerate() {
            let gap = if j == 0 {
                draw_gap(profile.burst_gap, rng)
            } else {
                draw_gap(profile.gap_within, rng)
            };
            if !packets.is_empty() {
                t += gap;
            }
            packets.push(PacketRecord { timestamp: t, size });
        }
    }
    Trace::new(profile.site, layer, packets)
}

/// How `generate_dataset` derives per-site profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileStyle {
    /// Sites differ in burst counts, burst lengths, palettes and pacing. The
    /// first two site pairs (when there are at least six sites) are "twins":
    /// matched in palette and total volume but with burst length and count
    /// traded off, so only longer-range sequence structure separates them.
    Mixed,
    /// All sites share burst structure and pacing; only the per-site size
    /// palettes differ, and they are pairwise disjoint. Direction sequences
    /// are nearly uninformative while raw sizes identify the site.
    SizeKeyed,
}

impl ProfileStyle {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProfileStyle::Mixed => "mixed",
            ProfileStyle::SizeKeyed => "size-keyed",
        }
    }
}

impl std::str::FromStr for ProfileStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mixed" => Ok(ProfileStyle::Mixed),
            "size-keyed" | "size_keyed" => Ok(ProfileStyle::SizeKeyed),
            other => Err(Error::InvalidConfig(format!("unknown profile style '{other}'"))),
        }
    }
}

const STREAM_TWIN_FAMILY: u64 = 0x0100_0000_0000;
const STREAM_SITE: u64 = 0x0200_0000_0000;
const STREAM_SHARED: u64 = 0x0300_0000_0000;
const STREAM_TRACES: u64 = 0x0400_0000_0000;

/// Derive the profile of one site from the master seed.
pub fn derive_profile(
    master_seed: u64,
    site: u32,
    num_sites: u32,
    style: ProfileStyle,
) -> SiteProfile {
    let seed = derive_seed(master_seed, STREAM_TRACES + u64::from(site));
    match style {
        ProfileStyle::Mixed => {
            let with_twins = num_sites >= 6;
            if with_twins && site < 2 {
                twin_profile(master_seed, site, seed)
            } else {
                let slot = if with_twins { site as usize - 2 } else { site as usize };
                mixed_profile(master_seed, site, seed, slot)
            }
        }
        ProfileStyle::SizeKeyed => size_keyed_profile(master_seed, site, seed),
    }
}

/// The twin pair (sites 0 and 1): identical burst counts, palettes, pacing
/// and per-burst download sizes — one site alternates big and small download
/// bursts, the other shuffles the same multiset per trace. Every trace-global
/// statistic and the run-length distribution match; only the long-range
/// arrangement of runs (is a short run ever adjacent to another short run?)
/// separates them, and seeing two adjacent runs takes a receptive field of
/// roughly 40+ sequence positions.
fn twin_profile(master_seed: u64, site: u32, seed: u64) -> SiteProfile {
    let member_b = site % 2 == 1;
    let mut rng = stream_rng(master_seed, STREAM_TWIN_FAMILY);

    let c0 = 10 + rng.random_range(0u32..=1);
    let g0: f64 = 0.06 + 0.01 * rng.random::<f64>();
    // One site mixes download runs of ~35 and ~115 TCP segments, the other
    // uses uniform ~75s. Totals match, and every window statistic censored
    // at the undilated stacks' 25-position view matches too; the sites only
    // differ through windows wider than the twin's longest run, so a wide
    // temporal view is required. The preamble keeps absolute burst
    // positions uninformative.
    let in_units = if member_b {
        UnitsProcess::Mixture {
            big: 15,
            small: 15,
            jitter: 1,
            preamble: 3,
            preamble_units: 7,
        }
    } else {
        UnitsProcess::Mixture {
            big: 23,
            small: 7,
            jitter: 1,
            preamble: 3,
            preamble_units: 7,
        }
    };

    SiteProfile {
        site,
        burst_count: (c0, c0 + 2),
        pattern: vec![Direction::Outgoing, Direction::Incoming],
        out_units: (1, 1),
        in_units,
        out_palette: vec![(300, 1.0)],
        in_palette: vec![(4300, 1.0)],
        gap_within: (0.0008, 0.004),
        burst_gap: (g0, 1.5 * g0),
        seed,
    }
}

/// Per-slot targets for non-twin sites: units per incoming burst, incoming
/// run length in TCP segments, and total packets per trace. The slots form a
/// grid over (run length, trace length): every pair of slots differs by at
/// least 2x on one of the two axes, which is far beyond the record-grouping
/// noise, so direction sequences never collide between sites.
const SLOT_UNITS: [u32; 10] = [2, 2, 3, 3, 6, 9, 5, 8, 2, 12];
const SLOT_RUN_SEGS: [f64; 10] = [4.0, 4.0, 12.0, 12.0, 36.0, 90.0, 24.0, 60.0, 8.0, 150.0];
const SLOT_TOTAL: [f64; 10] = [
    110.0, 300.0, 160.0, 430.0, 110.0, 200.0, 560.0, 240.0, 190.0, 300.0,
];

/// Expected TCP payload bytes per segment after cell and record
/// encapsulation with the default constants (0.594 segments per 512-byte
/// cell under uniform 1..=6-cell records).
const BYTES_PER_SEG: f64 = 862.0;

/// Non-twin sites take stratified parameter slots (burst count, burst
/// length, payload sizes and pacing all spread deterministically by slot)
/// with seeded jitter inside the slot, so distinct sites never collide by
/// unlucky draws.
fn mixed_profile(master_seed: u64, site: u32, seed: u64, slot: usize) -> SiteProfile {
    let mut rng = stream_rng(master_seed, STREAM_SITE + u64::from(site));
    let scale = 1.0 + 0.7 * (slot / 10) as f64; // beyond 10 slots, grow volumes
    let l0 = SLOT_UNITS[slot % 10] + (slot / 10) as u32;
    let run = SLOT_RUN_SEGS[slot % 10] * scale;
    let total = SLOT_TOTAL[slot % 10] * scale;

    let unit = (run * BYTES_PER_SEG / f64::from(l0)) as u32;
    let c0 = ((2.0 * total / (run + 1.7)).round() as u32).max(4) + rng.random_range(0u32..=1);
    let b0 = 0.04 + 0.012 * (slot % 10) as f64 + 0.004 * rng.random::<f64>();

    SiteProfile {
        site,
        burst_count: (c0, c0 + 2),
        pattern: vec![Direction::Outgoing, Direction::Incoming],
        out_units: (1, 2),
        in_units: UnitsProcess::Uniform(l0, l0 + 1),
        out_palette: vec![
            (180 + 40 * (slot as u32 % 5), 0.75),
            (520 + 45 * (slot as u32 % 4), 0.25),
        ],
        in_palette: vec![
            ((unit as f64 * 0.85) as u32, 0.7),
            ((unit as f64 * 1.35) as u32, 0.3),
        ],
        gap_within: (0.0008, 0.004),
        burst_gap: (b0, b0 * 1.6),
        seed,
    }
}

/// All structure shared across sites; only the disjoint size palettes differ.
fn size_keyed_profile(master_seed: u64, site: u32, seed: u64) -> SiteProfile {
    let mut rng = stream_rng(master_seed, STREAM_SHARED);
    let c0 = rng.random_range(9u32..=12);
    let l0 = rng.random_range(3u32..=5);
    let b0: f64 = rng.random_range(0.05..0.10);

    let in_base = 1500 + 700 * site;
    let out_base = 150 + 60 * site;
    SiteProfile {
        site,
        burst_count: (c0, c0 + 2),
        pattern: vec![Direction::Outgoing, Direction::Incoming],
        out_units: (1, 2),
        in_units: UnitsProcess::Uniform(l0, l0 + 2),
        out_palette: vec![(out_base, 0.7), (out_base + 25, 0.3)],
        in_palette: vec![(in_base, 0.7), (in_base + 300, 0.3)],
        gap_within: (0.0008, 0.004),
        burst_gap: (b0, b0 * 1.5),
        seed,
    }
}

fn profile_key(p: &SiteProfile) -> String {
    format!(
        "{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}|{:?}",
        p.burst_count,
        p.pattern,
        p.out_units,
        p.in_units,
        p.out_palette,
        p.in_palette,
        p.gap_within.0.to_bits(),
        p.burst_gap.0.to_bits(),
    )
}

/// Generate a labelled synthetic dataset: `num_sites` sites with
/// `traces_per_site` traces each, at the requested layer. Deterministic in
/// every argument; per-site profiles are pairwise distinct.
pub fn generate_dataset(
    num_sites: u32,
    traces_per_site: u32,
    layer: Layer,
    master_seed: u64,
    style: ProfileStyle,
    cfg: &TransportConfig,
) -> Result<Vec<Trace>> {
    if num_sites < 2 {
        return Err(Error::InvalidConfig(
            "classification needs at least 2 sites".into(),
        ));
    }
    if traces_per_site < 1 {
        return Err(Error::InvalidConfig("traces_per_site must be >= 1".into()));
    }
    cfg.validate()?;

    let mut profiles = Vec::with_capacity(num_sites as usize);
    let mut keys: Vec<String> = Vec::with_capacity(num_sites as usize);
    for site in 0..num_sites {
        let profile = derive_profile(master_seed, site, num_sites, style);
        profile.validate()?;
        let key = profile_key(&profile);
        if keys.contains(&key) {
            return Err(Error::InvalidProfile(format!(
                "site {site} profile collides with an earlier site"
            )));
        }
        keys.push(key);
        profiles.push(profile);
    }

    let mut traces = Vec::with_capacity((num_sites * traces_per_site) as usize);
    for profile in &profiles {
        for i in 0..traces_per_site {
            let mut rng = stream_rng(profile.seed, u64::from(i));
            traces.push(sample_trace(profile, layer, cfg, &mut rng)?);
        }
    }
    Ok(traces)
}
