use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mirig::config::{EstimateSection, PairingSpec, Scenario, SweepConfig, TrainSection};
use mirig::report::{emit_report, Format};
use mirig::sweep::run_sweep;
use mirig_core::cdpgen::{load_dataset, make_dataset, save_dataset, TaskSpec};
use mirig_core::metrics::{kendall_tau, linear_probe, pearson, representation_metrics, ProbeConfig};
use mirig_core::nets::EncoderRunner;
use mirig_core::pairing::SameClassSampler;
use mirig_core::postestimator::{check_bound, estimate_mi};
use mirig_core::rng::{derive_rng, STREAM_EVAL};
use mirig_core::trainer::{load_checkpoint, save_checkpoint, train};
use serde::Deserialize;

#[derive(Parser)]
#[command(
    name = "mirig",
    about = "Contrastive training and post-training MI estimation on CDP images"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a packed CDP dataset.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0.3)]
        mix: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an encoder and projection head.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate MI on a frozen encoder.
    Estimate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Probe accuracy and hypersphere metrics per task.
    Metrics {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated tasks; `all` for the joint task.
        #[arg(long, default_value = "color,digit,position,all")]
        task: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pearson and Kendall correlation of two CSV columns.
    Corr {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
    },
    /// Batch-size sweep.
    Case1(SweepArgs),
    /// Augmentation-strength sweep.
    Infomin(SweepArgs),
    /// Training-task by probe-task grid.
    Grid(SweepArgs),
    /// External negative sources.
    Negsample(SweepArgs),
}

#[derive(clap::Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// `run.toml` / `est.toml`: `[train]`, `[estimate]` and an optional `[pairing]`.
#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    train: TrainSection,
    estimate: EstimateSection,
    pairing: Option<PairingSpec>,
}

fn read_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(toml::from_str(&text)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Column values by header name; `acc` and `mi_class` are accepted aliases.
fn csv_column(path: &Path, name: &str) -> Result<Vec<Option<f64>>> {
    let name = match name {
        "acc" | "accuracy" => "probe_accuracy",
        "mi" | "mi_class" => "mi_bits",
        other => other,
    };
    let mut r = csv::Reader::from_path(path)?;
    let Some(col) = r.headers()?.iter().position(|h| h == name) else {
        bail!("column `{name}` not in {}", path.display());
    };
    r.records()
        .map(|rec| {
            let rec = rec?;
            let v = rec.get(col).unwrap_or("").trim();
            Ok(if v.is_empty() { None } else { Some(v.parse::<f64>()?) })
        })
        .collect()
}

fn run_scenario(scenario: Scenario, args: &SweepArgs) -> Result<bool> {
    let mut cfg = match &args.config {
        Some(p) => SweepConfig::from_toml(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => SweepConfig::default(),
    };
    cfg.sweep.scenario = scenario;
    cfg.validate()?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.sweep.output.clone())
        .unwrap_or_else(|| PathBuf::from(format!("out/{}", scenario.name())));
    let report = run_sweep(&cfg)?;
    for path in emit_report(&report, &out, &Format::ALL)? {
        println!("wrote {}", path.display());
    }
    fs::write(out.join("sweep.toml"), cfg.to_toml()?)?;
    for c in &report.checks {
        println!(
            "{} {}{}: {}",
            if c.pass { "ok  " } else { "FAIL" },
            c.name,
            if c.fatal { "" } else { " (finding)" },
            c.detail
        );
    }
    for f in &report.findings {
        println!("finding: {f}");
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    Ok(report.valid())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Gen {
            n,
            seed,
            size,
            mix,
            out,
        } => {
            let ds = make_dataset(n, seed, size, mix)?;
            save_dataset(&out, &ds)?;
            println!("wrote {n} samples to {}", out.display());
        }
        Cmd::Train { config, data, out } => {
            let run = read_run_config(&config)?;
            let mut cfg = run.train.resolve()?;
            if let Some(p) = &run.pairing {
                cfg.pairing = p.to_strategy()?;
            }
            let ds = load_dataset(&data)?;
            let ckpt = train(&cfg, &ds)?;
            save_checkpoint(&ckpt, &out)?;
            if let Some(p) = ckpt.meta.mi_curve.last() {
                println!("in-training MI at step {}: {:.4} bits", p.step, p.bits);
            }
        }
        Cmd::Estimate {
            ckpt,
            config,
            data,
            out,
        } => {
            let run = read_run_config(&config)?;
            let mut cfg = run.estimate.resolve()?;
            if let Some(p) = &run.pairing {
                cfg.pairing = p.to_strategy()?;
            }
            let ckpt = load_checkpoint(&ckpt)?;
            let est = estimate_mi(&ckpt, &cfg, &load_dataset(&data)?)?;
            write_json(&out, &est)?;
            println!(
                "{:.4} ± {:.4} bits (K_Est={}, ceiling {:.4})",
                est.bits, est.std_bits, est.k_est, est.bound_bits
            );
            if !check_bound(&est).pass {
                return Ok(false);
            }
        }
        Cmd::Metrics { ckpt, data, task, out } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let ds = load_dataset(&data)?;
            let enc = ckpt.encoder_params();
            let runner = EncoderRunner::new(&ckpt.meta.architecture.encoder, &enc, 256)?;
            let eval: Vec<usize> = ds.eval_range().collect();
            let h = runner.encode(&ds.images(&eval))?.to_rows_f64();
            let unit: Vec<Vec<f64>> = h
                .iter()
                .map(|v| {
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if n > 0.0 {
                        v.iter().map(|x| x / n).collect()
                    } else {
                        let mut e = vec![0.0; v.len()];
                        e[0] = 1.0;
                        e
                    }
                })
                .collect();
            let mut results = serde_json::Map::new();
            for name in task.split(',').filter(|s| !s.is_empty()) {
                let t = TaskSpec::parse(name)?;
                let probe = linear_probe(&ckpt, &ds, &t, &ProbeConfig::default())?;
                let labels = ds.labels(&t, &eval);
                let local: Vec<usize> = (0..eval.len()).collect();
                let groups = {
                    let mut g: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
                    for &i in &local {
                        g.entry(labels[i]).or_default().push(i);
                    }
                    g.into_values()
                };
                let pairs = match SameClassSampler::from_groups(groups) {
                    Ok(s) => {
                        let want = (s.num_pairs() as usize).min(eval.len());
                        s.sample_distinct(want, &mut derive_rng(0, 0, STREAM_EVAL))?
                    }
                    Err(_) => Vec::new(),
                };
                let m = representation_metrics(&unit, Some(&labels), Some(&pairs))?;
                results.insert(t.to_string(), serde_json::json!({ "probe": probe, "metrics": m }));
                println!("{t}: accuracy {:.4}", probe.accuracy);
            }
            write_json(&out, &results)?;
        }
        Cmd::Corr { csv, x, y } => {
            let (xs, ys): (Vec<f64>, Vec<f64>) = csv_column(&csv, &x)?
                .into_iter()
                .zip(csv_column(&csv, &y)?)
                .filter_map(|(a, b)| Some((a?, b?)))
                .unzip();
            println!("n = {}", xs.len());
            println!("pearson rho = {:.6}", pearson(&xs, &ys)?);
            println!("kendall tau = {:.6}", kendall_tau(&xs, &ys)?);
        }
        Cmd::Case1(a) => return run_scenario(Scenario::BatchSize, &a),
        Cmd::Infomin(a) => return run_scenario(Scenario::InfoMin, &a),
        Cmd::Grid(a) => return run_scenario(Scenario::TaskGrid, &a),
        Cmd::Negsample(a) => return run_scenario(Scenario::NegSample, &a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("invariant check failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
