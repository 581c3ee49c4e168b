//! Scratch probes for benchmark tuning (not part of the suite).

use wf_core::ingest::{split_dataset, Split, SplitProtocol};
use wf_core::nn::network::NetworkConfig;
use wf_core::stats::extract_stats;
use wf_core::trace::{Layer, Trace};
use wf_core::train::{
    nearest_centroid_accuracy, prepare_dataset, run_ablation, run_encoding_comparison, train_once,
    EncodingMode, TrainConfig,
};
use wf_core::transport::{generate_dataset, ProfileStyle, TransportConfig};

fn benchmark_dataset(style: ProfileStyle) -> Vec<(Trace, Split)> {
    let cfg = TransportConfig::default();
    let traces = generate_dataset(10, 100, Layer::Tcp, 42, style, &cfg).unwrap();
    let assignment = split_dataset(&traces, SplitProtocol::new(70, 0, 30), 42).unwrap();
    traces.into_iter().zip(assignment).collect()
}

fn grid_only_dataset() -> Vec<(Trace, Split)> {
    // 10 slot sites, no twin pair (generate 12 and drop the twins)
    let cfg = TransportConfig::default();
    let traces = generate_dataset(12, 100, Layer::Tcp, 42, ProfileStyle::Mixed, &cfg).unwrap();
    let traces: Vec<Trace> = traces.into_iter().filter(|t| t.site >= 2).collect();
    let assignment = split_dataset(&traces, SplitProtocol::new(70, 0, 30), 42).unwrap();
    traces.into_iter().zip(assignment).collect()
}

#[test]
#[ignore]
fn probe_epoch_budget() {
    let dataset = benchmark_dataset(ProfileStyle::Mixed);
    let prepared = prepare_dataset(&dataset, EncodingMode::Direction, 500, 1500).unwrap();
    for max_epochs in [8, 12, 16] {
        let train_cfg = TrainConfig {
            max_epochs,
            seed: 42,
            ..TrainConfig::default()
        };
        let t = std::time::Instant::now();
        let (_, _, metrics) = train_once(&prepared, &NetworkConfig::new(10), &train_cfg).unwrap();
        println!(
            "epochs {max_epochs:2}: test acc {:.4} ({:?})",
            metrics.accuracy,
            t.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_ablation() {
    let dataset = if std::env::var("ABLATION_GRID_ONLY").is_ok() {
        grid_only_dataset()
    } else {
        benchmark_dataset(ProfileStyle::Mixed)
    };
    let epochs: usize = std::env::var("ABLATION_EPOCHS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(12);
    let base_train = TrainConfig {
        max_epochs: epochs,
        ..TrainConfig::default()
    };
    let t = std::time::Instant::now();
    let rows = run_ablation(&dataset, &NetworkConfig::new(10), &base_train, &[1, 2, 3]).unwrap();
    println!("ablation ({epochs} epochs, 3 seeds) took {:?}", t.elapsed());
    let mut by_variant: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
    for r in &rows {
        by_variant.entry(r.variant.as_str()).or_default().push(r.accuracy);
    }
    for (v, accs) in by_variant {
        let strs: Vec<String> = accs.iter().map(|a| format!("{a:.4}")).collect();
        println!("{v:18} {}", strs.join("  "));
    }
}

#[test]
#[ignore]
fn probe_ablation_twins() {
    let dataset = benchmark_dataset(ProfileStyle::Mixed);
    let prepared = prepare_dataset(&dataset, EncodingMode::Direction, 500, 1500).unwrap();
    let epochs: usize = std::env::var("ABLATION_EPOCHS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(16);
    let batch: usize = std::env::var("ABLATION_BATCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(64);
    for (layers, dilated) in [(8, true), (8, false), (12, true), (12, false)] {
        for seed in [1u64, 2, 3] {
            let net_cfg = NetworkConfig {
                conv_layers: layers,
                use_dilation: dilated,
                ..NetworkConfig::new(10)
            };
            let train_cfg = TrainConfig {
                max_epochs: epochs,
                batch_size: batch,
                seed,
                ..TrainConfig::default()
            };
            let (_, _, m) = train_once(&prepared, &net_cfg, &train_cfg).unwrap();
            println!(
                "conv{layers}_{} seed {seed}: acc {:.4}  twin recalls {:.2} {:.2}",
                if dilated { "dilated" } else { "undilated" },
                m.accuracy,
                m.recall[0],
                m.recall[1],
            );
        }
    }
}

#[test]
#[ignore]
fn probe_twin_stats() {
    let dataset = benchmark_dataset(ProfileStyle::Mixed);
    for site in 0..2u32 {
        let mut totals = Vec::new();
        let mut run_bins = [0usize; 5]; // [1,10) [10,25) [25,50) [50,95) [95,..)
        let mut over25 = Vec::new();
        let mut nruns = Vec::new();
        for (t, _) in dataset.iter().filter(|(t, _)| t.site == site) {
            totals.push(t.len() as f64);
            let mut runs = Vec::new();
            let mut len = 0usize;
            for p in &t.packets {
                if p.size > 0 {
                    len += 1;
                } else if len > 0 {
                    runs.push(len);
                    len = 0;
                }
            }
            if len > 0 {
                runs.push(len);
            }
            nruns.push(runs.len() as f64);
            over25.push(runs.iter().map(|&r| r.saturating_sub(25)).sum::<usize>() as f64);
            for &r in &runs {
                let bin = match r {
                    0..=9 => 0,
                    10..=24 => 1,
                    25..=49 => 2,
                    50..=94 => 3,
                    _ => 4,
                };
                run_bins[bin] += 1;
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let sd = |v: &[f64]| {
            let m = mean(v);
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
        };
        println!(
            "site {site}: total {:.1}±{:.1}  #in-runs {:.2}±{:.2}  sum(run-25)+ {:.1}±{:.1}  bins {:?}",
            mean(&totals),
            sd(&totals),
            mean(&nruns),
            sd(&nruns),
            mean(&over25),
            sd(&over25),
            run_bins
        );
    }
}

#[test]
#[ignore]
fn probe_twins_only() {
    // 2-site dataset: just the twin pair, to see which receptive fields can
    // learn the arrangement signal at all
    let cfg = TransportConfig::default();
    let traces = generate_dataset(6, 100, Layer::Tcp, 42, ProfileStyle::Mixed, &cfg).unwrap();
    let traces: Vec<Trace> = traces.into_iter().filter(|t| t.site < 2).collect();
    let assignment = split_dataset(&traces, SplitProtocol::new(70, 0, 30), 42).unwrap();
    let dataset: Vec<_> = traces.into_iter().zip(assignment).collect();
    let lens: Vec<usize> = dataset.iter().map(|(t, _)| t.len()).collect();
    println!(
        "twin lens: min {} max {} mean {:.0}",
        lens.iter().min().unwrap(),
        lens.iter().max().unwrap(),
        lens.iter().sum::<usize>() as f64 / lens.len() as f64
    );
    let feat = |split| {
        dataset
            .iter()
            .filter(move |(_, s)| *s == split)
            .map(|(t, _)| (extract_stats(t).unwrap(), t.site))
            .collect::<Vec<_>>()
    };
    let oracle = nearest_centroid_accuracy(&feat(Split::Train), &feat(Split::Test)).unwrap();
    println!("twin stat oracle (should be ~0.5): {oracle:.4}");

    let base_train = TrainConfig {
        max_epochs: 30,
        ..TrainConfig::default()
    };
    let rows = run_ablation(&dataset, &NetworkConfig::new(2), &base_train, &[1, 2]).unwrap();
    for r in &rows {
        println!("{:18} seed {}  acc {:.4}", r.variant, r.seed, r.accuracy);
    }
}

#[test]
#[ignore]
fn probe_encoding() {
    let dataset = benchmark_dataset(ProfileStyle::SizeKeyed);
    // separability oracle on the size-keyed dataset
    let feat = |split| {
        dataset
            .iter()
            .filter(move |(_, s)| *s == split)
            .map(|(t, _)| (extract_stats(t).unwrap(), t.site))
            .collect::<Vec<_>>()
    };
    let oracle = nearest_centroid_accuracy(&feat(Split::Train), &feat(Split::Test)).unwrap();
    let lens: Vec<usize> = dataset.iter().map(|(t, _)| t.len()).collect();
    println!(
        "size-keyed: lens min {} max {} mean {:.0}, stat oracle {oracle:.4}",
        lens.iter().min().unwrap(),
        lens.iter().max().unwrap(),
        lens.iter().sum::<usize>() as f64 / lens.len() as f64
    );
    let base_train = TrainConfig {
        max_epochs: 12,
        ..TrainConfig::default()
    };
    let t = std::time::Instant::now();
    let rows =
        run_encoding_comparison(&dataset, &NetworkConfig::new(10), &base_train, &[1, 2, 3])
            .unwrap();
    println!("encoding comparison took {:?}", t.elapsed());
    for r in &rows {
        println!("{:10} seed {}  acc {:.4}", r.variant, r.seed, r.accuracy);
    }
}
