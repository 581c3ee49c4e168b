//! `wfkit` — website-fingerprinting experiments on transport-layer traces.
//!
//! Subcommands cover the full pipeline: `synth` emits a synthetic dataset,
//! `ingest` filters and splits it, `train`/`eval` fit and score the
//! classifier, and `ablate`/`compare-encodings` run the comparison
//! protocols. Every command writes its fully resolved configuration next to
//! its outputs and refuses to overwrite existing results without `--force`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wf_core::ingest::{
    build_split_manifest, read_manifest, write_dataset, write_manifest, DatasetManifest, Split,
    SplitProtocol,
};
use wf_core::nn::{load_checkpoint, save_checkpoint, NetworkConfig};
use wf_core::stats::{extract_stats, features_csv};
use wf_core::trace::{Layer, Trace};
use wf_core::train::{
    comparison_csv, evaluate, export_confusion, export_history, export_metrics, prepare_dataset,
    run_ablation, run_encoding_comparison, train, EncodingMode, TrainConfig,
};
use wf_core::transport::{generate_dataset, ProfileStyle, TransportConfig};

#[derive(Parser)]
#[command(name = "wfkit", version, about = "Website-fingerprinting attack toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled dataset on disk
    Synth(SynthArgs),
    /// Filter a dataset and assign train/val/test splits
    Ingest(IngestArgs),
    /// Train the classifier on a split dataset
    Train(TrainArgs),
    /// Evaluate a trained checkpoint on the test split
    Eval(EvalArgs),
    /// Train {8,12}-layer x {dilated,undilated} variants under matched seeds
    Ablate(AblateArgs),
    /// Train direction-mode vs raw-mode under matched seeds
    CompareEncodings(CompareArgs),
}

#[derive(Args)]
struct TransportFlags {
    /// Fixed cell size in bytes
    #[arg(long, default_value_t = 512)]
    cell_size: u32,
    /// Per-record header overhead in bytes
    #[arg(long, default_value_t = 29)]
    header_overhead: u32,
    /// TCP maximum segment size in bytes
    #[arg(long, default_value_t = 1460)]
    mss: u32,
    /// Most cells a single record may carry
    #[arg(long, default_value_t = 6)]
    max_cells_per_record: u32,
}

impl TransportFlags {
    fn to_config(&self) -> TransportConfig {
        TransportConfig {
            cell_size: self.cell_size,
            header_overhead: self.header_overhead,
            mss: self.mss,
            max_cells_per_record: self.max_cells_per_record,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Number of monitored sites (>= 2)
    #[arg(long)]
    sites: u32,
    /// Traces per site
    #[arg(long)]
    traces: u32,
    /// Capture layer: cell, tls or tcp
    #[arg(long)]
    layer: Layer,
    /// Master seed for profile and trace generation
    #[arg(long)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Profile style: mixed or size-keyed
    #[arg(long, default_value = "mixed")]
    style: ProfileStyle,
    #[command(flatten)]
    transport: TransportFlags,
    /// Overwrite existing outputs
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct IngestArgs {
    /// Dataset directory (with manifest.tsv, or site_<id>/ subdirectories)
    #[arg(long)]
    data: PathBuf,
    /// Output manifest path (defaults to <data>/split-manifest.tsv)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Drop sites with fewer traces than this after length filtering
    #[arg(long, default_value_t = 100)]
    min_instances: usize,
    /// Drop traces shorter than this many packets
    #[arg(long, default_value_t = 500)]
    min_length: usize,
    /// Per-site split counts as train/val/test, e.g. 70/0/30
    #[arg(long)]
    protocol: SplitProtocol,
    /// Split shuffle seed
    #[arg(long)]
    seed: u64,
    /// Capture layer, required when scanning a directory without a manifest
    #[arg(long)]
    layer: Option<Layer>,
    /// Also dump the statistical feature matrix of retained traces as CSV
    #[arg(long)]
    stats_csv: Option<PathBuf>,
    /// Overwrite existing outputs
    #[arg(long)]
    force: bool,
}

#[derive(Args, Clone)]
struct NetFlags {
    /// Convolution layers in the stack
    #[arg(long, default_value_t = 12)]
    conv_layers: usize,
    /// Filters per convolution layer
    #[arg(long, default_value_t = 4)]
    filters: usize,
    /// Kernel width
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    /// Dilation schedule, cycled across layers
    #[arg(long, default_value = "1,2,4,8", value_delimiter = ',')]
    dilations: Vec<usize>,
    /// Disable dilation (every layer gets rate 1)
    #[arg(long)]
    no_dilation: bool,
    /// Input sequence length
    #[arg(long, default_value_t = 500)]
    seq_len: usize,
    /// Fusion hidden width
    #[arg(long, default_value_t = 512)]
    hidden: usize,
    /// Dropout rate after the fusion layer
    #[arg(long, default_value_t = 0.3)]
    dropout: f64,
}

impl NetFlags {
    fn to_config(&self, num_classes: usize) -> NetworkConfig {
        NetworkConfig {
            conv_layers: self.conv_layers,
            filters: self.filters,
            kernel: self.kernel,
            dilation_schedule: self.dilations.clone(),
            use_dilation: !self.no_dilation,
            seq_len: self.seq_len,
            stat_dim: wf_core::stats::STAT_DIM,
            hidden_dim: self.hidden,
            num_classes,
            dropout_rate: self.dropout,
        }
    }
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Minibatch size
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Epoch limit
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    /// Early-stopping patience on validation accuracy, in epochs
    #[arg(long, default_value_t = 5)]
    patience: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Seed for shuffling, dropout and network initialization
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sequence encoding: direction or raw
    #[arg(long, default_value = "direction")]
    encoding: EncodingMode,
    /// Divisor for the raw-size encoding
    #[arg(long, default_value_t = 1500)]
    raw_scale: u32,
}

impl TrainFlags {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            learning_rate: self.lr,
            seed: self.seed,
            encoding: self.encoding,
            raw_scale: self.raw_scale,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Split manifest produced by `ingest`
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory (checkpoint.bin, history.csv, run_config.txt)
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    net: NetFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Overwrite existing outputs
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Split manifest with a test split
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory (metrics.csv, confusion.csv, run_config.txt)
    #[arg(long)]
    out: PathBuf,
    /// Sequence encoding used at train time
    #[arg(long, default_value = "direction")]
    encoding: EncodingMode,
    /// Divisor for the raw-size encoding
    #[arg(long, default_value_t = 1500)]
    raw_scale: u32,
    /// Overwrite existing outputs
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct AblateArgs {
    /// Split manifest produced by `ingest`
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory (ablation.csv, run_config.txt)
    #[arg(long)]
    out: PathBuf,
    /// Matched seeds, one full run per variant per seed
    #[arg(long, default_value = "1,2,3,4,5", value_delimiter = ',')]
    seeds: Vec<u64>,
    #[command(flatten)]
    net: NetFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Overwrite existing outputs
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Split manifest produced by `ingest`
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory (encodings.csv, run_config.txt)
    #[arg(long)]
    out: PathBuf,
    /// Matched seeds, one full run per encoding per seed
    #[arg(long, default_value = "1,2,3,4,5", value_delimiter = ',')]
    seeds: Vec<u64>,
    #[command(flatten)]
    net: NetFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Overwrite existing outputs
    #[arg(long)]
    force: bool,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(args) => cmd_synth(args),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::CompareEncodings(args) => cmd_compare(args),
    }
}

/// Refuse to clobber prior results unless forced.
fn check_outputs(paths: &[&Path], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    for p in paths {
        if p.exists() {
            bail!(
                "output {} already exists (use --force to overwrite)",
                p.display()
            );
        }
    }
    Ok(())
}

fn write_run_config(dir: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut sorted: Vec<&(&str, String)> = entries.iter().collect();
    sorted.sort_by_key(|(k, _)| *k);
    let mut out = String::new();
    for (k, v) in sorted {
        writeln!(out, "{k}={v}").unwrap();
    }
    let path = dir.join("run_config.txt");
    std::fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = args.transport.to_config();
    let manifest_path = args.out.join("manifest.tsv");
    check_outputs(&[&manifest_path], args.force)?;
    let traces = generate_dataset(
        args.sites,
        args.traces,
        args.layer,
        args.seed,
        args.style,
        &cfg,
    )?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_dataset(&args.out, &traces, args.layer)?;
    write_run_config(
        &args.out,
        &[
            ("command", "synth".into()),
            ("sites", args.sites.to_string()),
            ("traces_per_site", args.traces.to_string()),
            ("layer", args.layer.to_string()),
            ("seed", args.seed.to_string()),
            ("style", args.style.as_str().to_string()),
            ("cell_size", cfg.cell_size.to_string()),
            ("header_overhead", cfg.header_overhead.to_string()),
            ("mss", cfg.mss.to_string()),
            ("max_cells_per_record", cfg.max_cells_per_record.to_string()),
        ],
    )?;
    let packets: usize = traces.iter().map(|t| t.len()).sum();
    println!(
        "wrote {} traces ({} sites, {} packets) to {}",
        traces.len(),
        args.sites,
        packets,
        args.out.display()
    );
    Ok(())
}

/// Load a dataset directory: via its manifest when present, otherwise by
/// scanning `site_<id>` subdirectories (requires an explicit layer).
fn load_dataset_dir(data: &Path, layer: Option<Layer>) -> Result<(Layer, Vec<(Trace, String)>)> {
    let manifest_path = data.join("manifest.tsv");
    if manifest_path.exists() {
        let manifest = read_manifest(&manifest_path)?;
        let traces = wf_core::ingest::load_traces(&manifest, data)?;
        let paths: Vec<String> = manifest.entries.iter().map(|e| e.path.clone()).collect();
        return Ok((
            manifest.layer,
            traces
                .into_iter()
                .map(|(t, _)| t)
                .zip(paths)
                .map(|(t, p)| (t, p))
                .collect(),
        ));
    }
    let layer = layer.context("no manifest.tsv found; pass --layer to scan the directory")?;
    let mut out = Vec::new();
    let mut site_dirs: Vec<(u32, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(data).with_context(|| format!("reading {}", data.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_prefix("site_") {
            if let Ok(site) = id.parse::<u32>() {
                site_dirs.push((site, entry.path()));
            }
        }
    }
    site_dirs.sort();
    if site_dirs.is_empty() {
        bail!("no site_<id> directories under {}", data.display());
    }
    for (site, dir) in site_dirs {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        files.sort();
        for f in files {
            let text =
                std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
            let trace = wf_core::ingest::parse_trace_file(&text, site, layer)
                .with_context(|| format!("parsing {}", f.display()))?;
            let rel = f
                .strip_prefix(data)
                .unwrap_or(&f)
                .to_string_lossy()
                .into_owned();
            out.push((trace, rel));
        }
    }
    Ok((layer, out))
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let out_path = args
        .out
        .clone()
        .unwrap_or_else(|| args.data.join("split-manifest.tsv"));
    if out_path.parent() != Some(args.data.as_path()) {
        bail!(
            "the split manifest must live in the dataset directory ({}) so its relative paths stay valid",
            args.data.display()
        );
    }
    let mut outputs: Vec<&Path> = vec![&out_path];
    if let Some(p) = &args.stats_csv {
        outputs.push(p);
    }
    check_outputs(&outputs, args.force)?;

    let (layer, traces_with_paths) = load_dataset_dir(&args.data, args.layer)?;
    let total = traces_with_paths.len();
    let (manifest, report) = build_split_manifest(
        traces_with_paths,
        layer,
        args.min_instances,
        args.min_length,
        args.protocol,
        args.seed,
    )?;
    write_manifest(&out_path, &manifest)?;
    if let Some(p) = &args.stats_csv {
        let feats: Vec<_> = manifest
            .entries
            .iter()
            .map(|e| {
                let text = std::fs::read_to_string(args.data.join(&e.path))?;
                let trace = wf_core::ingest::parse_trace_file(&text, e.site, layer)?;
                extract_stats(&trace)
            })
            .collect::<wf_core::Result<_>>()?;
        std::fs::write(p, features_csv(&feats)).with_context(|| format!("writing {}", p.display()))?;
    }
    println!(
        "retained {} of {total} traces ({} short, {} sites below minimum); splits written to {}",
        manifest.entries.len(),
        report.short_traces,
        report.dropped_sites,
        out_path.display()
    );
    Ok(())
}

fn load_split_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<(Trace, Split)>)> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let dataset = wf_core::ingest::load_traces(&manifest, base)?;
    Ok((manifest, dataset))
}

fn count_train_classes(dataset: &[(Trace, Split)]) -> usize {
    let mut sites: Vec<u32> = dataset
        .iter()
        .filter(|(_, s)| *s == Split::Train)
        .map(|(t, _)| t.site)
        .collect();
    sites.sort_unstable();
    sites.dedup();
    sites.len()
}

fn net_config_entries(cfg: &NetworkConfig, train: &TrainConfig) -> Vec<(&'static str, String)> {
    let dil: Vec<String> = cfg.dilation_schedule.iter().map(|d| d.to_string()).collect();
    vec![
        ("conv_layers", cfg.conv_layers.to_string()),
        ("filters", cfg.filters.to_string()),
        ("kernel", cfg.kernel.to_string()),
        ("dilations", dil.join(",")),
        ("use_dilation", cfg.use_dilation.to_string()),
        ("seq_len", cfg.seq_len.to_string()),
        ("stat_dim", cfg.stat_dim.to_string()),
        ("hidden_dim", cfg.hidden_dim.to_string()),
        ("num_classes", cfg.num_classes.to_string()),
        ("dropout", cfg.dropout_rate.to_string()),
        ("batch_size", train.batch_size.to_string()),
        ("max_epochs", train.max_epochs.to_string()),
        ("patience", train.patience.to_string()),
        ("learning_rate", train.learning_rate.to_string()),
        ("seed", train.seed.to_string()),
        ("encoding", train.encoding.as_str().to_string()),
        ("raw_scale", train.raw_scale.to_string()),
    ]
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let ckpt_path = args.out.join("checkpoint.bin");
    let hist_path = args.out.join("history.csv");
    check_outputs(&[&ckpt_path, &hist_path], args.force)?;

    let (_, dataset) = load_split_dataset(&args.manifest)?;
    let train_cfg = args.train.to_config();
    let prepared = prepare_dataset(
        &dataset,
        train_cfg.encoding,
        args.net.seq_len,
        train_cfg.raw_scale,
    )?;
    let net_cfg = args.net.to_config(prepared.num_classes());

    let mut net = wf_core::nn::Network::build(net_cfg.clone(), train_cfg.seed)?;
    let history = train(
        &mut net,
        &prepared.train,
        &prepared.val,
        &prepared.classes,
        &train_cfg,
    )?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    save_checkpoint(&ckpt_path, &net, None)?;
    std::fs::write(&hist_path, export_history(&history))
        .with_context(|| format!("writing {}", hist_path.display()))?;
    let mut entries = net_config_entries(&net_cfg, &train_cfg);
    entries.push(("command", "train".into()));
    entries.push(("manifest", args.manifest.display().to_string()));
    write_run_config(&args.out, &entries)?;

    let last = history.epochs.last().unwrap();
    println!(
        "trained {} epochs (best {}), final train acc {:.4}, val acc {:.4}; checkpoint at {}",
        history.epochs.len(),
        history.best_epoch + 1,
        last.train_acc,
        last.val_acc,
        ckpt_path.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let metrics_path = args.out.join("metrics.csv");
    let confusion_path = args.out.join("confusion.csv");
    check_outputs(&[&metrics_path, &confusion_path], args.force)?;

    let (net, _) = load_checkpoint(&args.checkpoint)?;
    let (_, dataset) = load_split_dataset(&args.manifest)?;
    let prepared = prepare_dataset(&dataset, args.encoding, net.cfg.seq_len, args.raw_scale)?;
    let metrics = evaluate(&net, &prepared.test, &prepared.classes)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    std::fs::write(&metrics_path, export_metrics(&metrics, &prepared.classes))
        .with_context(|| format!("writing {}", metrics_path.display()))?;
    std::fs::write(
        &confusion_path,
        export_confusion(&metrics, &prepared.classes),
    )
    .with_context(|| format!("writing {}", confusion_path.display()))?;
    write_run_config(
        &args.out,
        &[
            ("command", "eval".into()),
            ("manifest", args.manifest.display().to_string()),
            ("checkpoint", args.checkpoint.display().to_string()),
            ("encoding", args.encoding.as_str().to_string()),
            ("raw_scale", args.raw_scale.to_string()),
        ],
    )?;
    println!(
        "test accuracy {:.4} over {} traces; metrics at {}",
        metrics.accuracy,
        prepared.test.len(),
        metrics_path.display()
    );
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let csv_path = args.out.join("ablation.csv");
    check_outputs(&[&csv_path], args.force)?;

    let (_, dataset) = load_split_dataset(&args.manifest)?;
    let train_cfg = args.train.to_config();
    let net_cfg = args.net.to_config(count_train_classes(&dataset));
    let rows = run_ablation(&dataset, &net_cfg, &train_cfg, &args.seeds)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    std::fs::write(&csv_path, comparison_csv(&rows))
        .with_context(|| format!("writing {}", csv_path.display()))?;
    let mut entries = net_config_entries(&net_cfg, &train_cfg);
    entries.push(("command", "ablate".into()));
    entries.push(("manifest", args.manifest.display().to_string()));
    let seeds: Vec<String> = args.seeds.iter().map(|s| s.to_string()).collect();
    entries.push(("seeds", seeds.join(",")));
    write_run_config(&args.out, &entries)?;

    for r in &rows {
        println!("{}\tseed {}\taccuracy {:.4}", r.variant, r.seed, r.accuracy);
    }
    println!("table written to {}", csv_path.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let csv_path = args.out.join("encodings.csv");
    check_outputs(&[&csv_path], args.force)?;

    let (_, dataset) = load_split_dataset(&args.manifest)?;
    let train_cfg = args.train.to_config();
    let net_cfg = args.net.to_config(count_train_classes(&dataset));
    let rows = run_encoding_comparison(&dataset, &net_cfg, &train_cfg, &args.seeds)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    std::fs::write(&csv_path, comparison_csv(&rows))
        .with_context(|| format!("writing {}", csv_path.display()))?;
    let mut entries = net_config_entries(&net_cfg, &train_cfg);
    entries.push(("command", "compare-encodings".into()));
    entries.push(("manifest", args.manifest.display().to_string()));
    let seeds: Vec<String> = args.seeds.iter().map(|s| s.to_string()).collect();
    entries.push(("seeds", seeds.join(",")));
    write_run_config(&args.out, &entries)?;

    for r in &rows {
        println!("{}\tseed {}\taccuracy {:.4}", r.variant, r.seed, r.accuracy);
    }
    println!("table written to {}", csv_path.display());
    Ok(())
}
