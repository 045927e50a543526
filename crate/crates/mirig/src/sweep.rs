//! Scenario runners: each sweep cell trains one encoder, probes it and
//! estimates MI on the frozen result.

use mirig_core::cdpgen::{background, class_entropy, sample_attributes, CdpDataset, CdpSample, TaskSpec};
use mirig_core::error::{Error, Result};
use mirig_core::metrics::{kendall_tau, linear_probe, pearson, ProbeConfig, ProbeResult};
use mirig_core::objective::bound_bits;
use mirig_core::pairing::PairingStrategy;
use mirig_core::postestimator::{estimate_mi, EstimationConfig, MiEstimate};
use mirig_core::rng::{derive_rng, derive_seed, STREAM_NEGATIVES};
use mirig_core::tensor::Tensor;
use mirig_core::trainer::{train_with_negatives, EncoderCheckpoint, TrainConfig};
use rand::Rng;
use rayon::prelude::*;

use crate::config::{parse_colors, parse_tasks, NegativeSpec, Scenario, SweepConfig};
use crate::plot::{Chart, Figure, Series};
use crate::report::{Correlation, ReportRow, RunReport};

/// Environment variable capping the number of cells run in parallel.
pub const THREADS_ENV: &str = "MIRIG_THREADS";

/// One training run and what is measured on it.
#[derive(Clone, Debug)]
pub struct CellSpec {
    pub train: TrainConfig,
    pub strength: Option<f32>,
    pub negatives: Option<NegativeSpec>,
    pub probe_tasks: Vec<TaskSpec>,
    pub estimations: Vec<EstimationConfig>,
}

#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub spec: CellSpec,
    pub config_id: String,
    pub checkpoint: EncoderCheckpoint,
    /// Last point of the in-training curve; absent with external negatives.
    pub in_training_bits: Option<f64>,
    pub probes: Vec<ProbeResult>,
    pub estimates: Vec<MiEstimate>,
}

pub fn run_cell(spec: &CellSpec, ds: &CdpDataset, negatives: Option<&CdpDataset>) -> Result<CellOutcome> {
    let config_id = spec.train.hash()[..12].to_string();
    log::info!(
        "cell {config_id}: training K={} on {}",
        spec.train.k_tr,
        spec.train.pairing.describe()
    );
    let (checkpoint, _) = train_with_negatives(&spec.train, ds, negatives)?;
    let in_training_bits = checkpoint.meta.mi_curve.last().map(|p| p.bits);
    let probes = spec
        .probe_tasks
        .iter()
        .map(|t| linear_probe(&checkpoint, ds, t, &ProbeConfig::default()))
        .collect::<Result<Vec<_>>>()?;
    let estimates = spec
        .estimations
        .iter()
        .map(|e| estimate_mi(&checkpoint, e, ds))
        .collect::<Result<Vec<_>>>()?;
    Ok(CellOutcome {
        spec: spec.clone(),
        config_id,
        checkpoint,
        in_training_bits,
        probes,
        estimates,
    })
}

/// Thread count from [`THREADS_ENV`], if set.
pub fn thread_limit() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV}={v} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

/// Runs cells in parallel; results come back in input order.
pub fn run_cells(specs: &[CellSpec], ds: &CdpDataset, negatives: &[Option<CdpDataset>]) -> Result<Vec<CellOutcome>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_limit()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| {
        specs
            .par_iter()
            .enumerate()
            .map(|(i, s)| run_cell(s, ds, negatives.get(i).and_then(Option::as_ref)))
            .collect()
    })
}

fn est_for(base: &EstimationConfig, pairing: PairingStrategy) -> EstimationConfig {
    EstimationConfig {
        pairing,
        ..base.clone()
    }
}

fn base_row(cell: &CellOutcome, seed: u64) -> ReportRow {
    ReportRow {
        config_id: cell.config_id.clone(),
        seed,
        k_tr: cell.spec.train.k_tr,
        strength: cell.spec.strength,
        pairing: cell.spec.train.pairing.describe(),
        task: String::new(),
        negatives: cell.spec.negatives.map(|n| n.name().to_string()).unwrap_or_default(),
        probe_accuracy: None,
        in_training_bits: cell.in_training_bits,
        mi_bits: None,
        k_est: None,
        bound_bits: None,
        class_entropy_bits: None,
        theorem_status: None,
    }
}

fn fill_estimate(row: &mut ReportRow, e: &MiEstimate) {
    row.mi_bits = Some(e.bits);
    row.k_est = Some(e.k_est);
    row.bound_bits = Some(e.bound_bits);
    row.class_entropy_bits = e.class_entropy_bits;
    row.theorem_status = e.theorem_status.map(|s| {
        serde_json::to_value(s)
            .expect("status serializes")
            .as_str()
            .unwrap_or_default()
            .to_string()
    });
}

fn correlate(rows: &[ReportRow]) -> Correlation {
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| Some((r.probe_accuracy?, r.mi_bits?)))
        .unzip();
    Correlation {
        x: "probe_accuracy".into(),
        y: "mi_bits".into(),
        pearson: pearson(&xs, &ys).ok(),
        kendall: kendall_tau(&xs, &ys).ok(),
    }
}

/// Dataset, then the scenario named in the config.
pub fn run_sweep(cfg: &SweepConfig) -> Result<RunReport> {
    cfg.validate()?;
    let ds = cfg.dataset.load()?;
    match cfg.sweep.scenario {
        Scenario::BatchSize => run_case_batch_size(cfg, &ds),
        Scenario::InfoMin => run_case_infomin(cfg, &ds),
        Scenario::TaskGrid => run_task_grid(cfg, &ds),
        Scenario::NegSample => run_negative_sampling(cfg, &ds),
    }
}

fn require(cfg: &SweepConfig, scenario: Scenario) -> Result<()> {
    cfg.validate()?;
    if cfg.sweep.scenario != scenario {
        return Err(Error::InvalidArgument(format!(
            "config is for scenario {}, not {}",
            cfg.sweep.scenario.name(),
            scenario.name()
        )));
    }
    Ok(())
}

/// In-training and post-training MI against the training batch size.
pub fn run_case_batch_size(cfg: &SweepConfig, ds: &CdpDataset) -> Result<RunReport> {
    require(cfg, Scenario::BatchSize)?;
    let base = cfg.train.resolve()?;
    let est = est_for(&cfg.estimate.resolve()?, PairingStrategy::same_class(TaskSpec::all()));
    let mut specs = Vec::new();
    for &seed in &cfg.sweep.seeds {
        for &k in &cfg.sweep.k_tr {
            specs.push(CellSpec {
                train: TrainConfig {
                    k_tr: k,
                    seed,
                    pairing: PairingStrategy::same_class(TaskSpec::all()),
                    ..base.clone()
                },
                strength: None,
                negatives: None,
                probe_tasks: vec![TaskSpec::all()],
                estimations: vec![est.clone()],
            });
        }
    }
    let cells = run_cells(&specs, ds, &[])?;
    let mut report = RunReport::new(Scenario::BatchSize.name(), cfg.provenance_hash());
    for c in &cells {
        let mut row = base_row(c, c.spec.train.seed);
        row.task = TaskSpec::all().to_string();
        row.probe_accuracy = Some(c.probes[0].accuracy);
        fill_estimate(&mut row, &c.estimates[0]);
        report.rows.push(row);
    }
    report.check_bounds();
    let over: Vec<String> = report
        .rows
        .iter()
        .filter(|r| r.in_training_bits.is_some_and(|b| b > bound_bits(r.k_tr) + 1e-9))
        .map(|r| format!("K={}", r.k_tr))
        .collect();
    report.check("in_training_bound", true, over.is_empty(), over.join(", "));

    let post: Vec<f64> = report.rows.iter().filter_map(|r| r.mi_bits).collect();
    let spread =
        post.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - post.iter().cloned().fold(f64::INFINITY, f64::min);
    report
        .findings
        .push(format!("post-training MI spread across K_Tr: {spread:.3} bits"));
    let min_acc = report
        .rows
        .iter()
        .filter_map(|r| r.probe_accuracy)
        .fold(f64::INFINITY, f64::min);
    report.check(
        "accuracy_at_least_0.90",
        false,
        min_acc >= 0.9,
        format!("min accuracy {min_acc:.4}"),
    );
    report.correlations.push(correlate(&report.rows));

    let h = class_entropy(&TaskSpec::all());
    let pts = |f: fn(&ReportRow) -> Option<f64>| -> Vec<(f64, f64)> {
        report
            .rows
            .iter()
            .filter_map(|r| Some((r.k_tr as f64, f(r)?)))
            .collect()
    };
    let series = vec![
        Series {
            label: "H(C)".into(),
            points: report.rows.iter().map(|r| (r.k_tr as f64, h)).collect(),
        },
        Series {
            label: "training MI".into(),
            points: pts(|r| r.in_training_bits),
        },
        Series {
            label: "post-training MI".into(),
            points: pts(|r| r.mi_bits),
        },
    ];
    let acc = vec![Series {
        label: "accuracy (all)".into(),
        points: pts(|r| r.probe_accuracy),
    }];
    report.figures.push(Figure {
        name: "batch_size_mi".into(),
        title: "MI against training batch size".into(),
        chart: Chart::Lines {
            x_label: "K_Tr".into(),
            y_label: "bits".into(),
            log_x: true,
            series,
        },
    });
    report.figures.push(Figure {
        name: "batch_size_accuracy".into(),
        title: "Linear-probe accuracy".into(),
        chart: Chart::Lines {
            x_label: "K_Tr".into(),
            y_label: "accuracy".into(),
            log_x: true,
            series: acc,
        },
    });
    Ok(report)
}

/// Single-augmentation training over a strength list.
pub fn run_case_infomin(cfg: &SweepConfig, ds: &CdpDataset) -> Result<RunReport> {
    require(cfg, Scenario::InfoMin)?;
    let base = cfg.train.resolve()?;
    let est_base = cfg.estimate.resolve()?;
    let tasks = cfg.probe_tasks()?;
    let aug = cfg.sweep.augmentation;
    let mut specs = Vec::new();
    for &seed in &cfg.sweep.seeds {
        for &s in &cfg.sweep.strengths {
            let pairing = PairingStrategy::augmented(vec![aug.at(s)]);
            specs.push(CellSpec {
                train: TrainConfig {
                    seed,
                    pairing: pairing.clone(),
                    ..base.clone()
                },
                strength: Some(s),
                negatives: None,
                probe_tasks: tasks.clone(),
                // same augmentation for estimation as for training
                estimations: vec![est_for(&est_base, pairing)],
            });
        }
    }
    let cells = run_cells(&specs, ds, &[])?;
    let mut report = RunReport::new(Scenario::InfoMin.name(), cfg.provenance_hash());
    for c in &cells {
        if c.spec.strength == Some(0.0) {
            report.warnings.push(format!(
                "{} at strength 0: both views are identical, the estimate is capped only by log2(2K-1)",
                aug.name()
            ));
        }
        for (t, p) in c.spec.probe_tasks.iter().zip(&c.probes) {
            let mut row = base_row(c, c.spec.train.seed);
            row.task = t.to_string();
            row.probe_accuracy = Some(p.accuracy);
            fill_estimate(&mut row, &c.estimates[0]);
            report.rows.push(row);
        }
    }
    report.check_bounds();
    report.correlations.push(correlate(&report.rows));

    // peak location per task; a shared peak is reported, never required
    let mut peaks = Vec::new();
    for t in &tasks {
        let name = t.to_string();
        let best = report
            .rows
            .iter()
            .filter(|r| r.task == name)
            .max_by(|a, b| a.probe_accuracy.partial_cmp(&b.probe_accuracy).expect("finite"))
            .and_then(|r| r.strength);
        if let Some(s) = best {
            report
                .findings
                .push(format!("peak accuracy for {name} at {} strength {s}", aug.name()));
            peaks.push(s);
        }
    }
    let same = peaks.windows(2).all(|w| w[0] == w[1]);
    report.findings.push(format!(
        "all tasks peak at the same strength: {}",
        if same { "yes" } else { "no" }
    ));

    let series: Vec<Series> = tasks
        .iter()
        .map(|t| {
            let name = t.to_string();
            Series {
                label: name.clone(),
                points: report
                    .rows
                    .iter()
                    .filter(|r| r.task == name)
                    .filter_map(|r| Some((r.mi_bits?, r.probe_accuracy?)))
                    .collect(),
            }
        })
        .collect();
    report.figures.push(Figure {
        name: format!("infomin_{}", aug.name()),
        title: format!("Accuracy against estimated MI ({})", aug.name()),
        chart: Chart::Lines {
            x_label: "estimated MI (bits)".into(),
            y_label: "accuracy".into(),
            log_x: false,
            series,
        },
    });
    Ok(report)
}

/// Same-class training on each task, probed and estimated on every task.
pub fn run_task_grid(cfg: &SweepConfig, ds: &CdpDataset) -> Result<RunReport> {
    require(cfg, Scenario::TaskGrid)?;
    let base = cfg.train.resolve()?;
    let est_base = cfg.estimate.resolve()?;
    let train_tasks = parse_tasks(&cfg.sweep.tasks)?;
    let probe_tasks = cfg.probe_tasks()?;
    let estimations: Vec<EstimationConfig> = probe_tasks
        .iter()
        .map(|t| est_for(&est_base, PairingStrategy::same_class(t.clone())))
        .collect();
    let mut specs = Vec::new();
    for &seed in &cfg.sweep.seeds {
        for t in &train_tasks {
            specs.push(CellSpec {
                train: TrainConfig {
                    seed,
                    pairing: PairingStrategy::same_class(t.clone()),
                    ..base.clone()
                },
                strength: None,
                negatives: None,
                probe_tasks: probe_tasks.clone(),
                estimations: estimations.clone(),
            });
        }
    }
    let cells = run_cells(&specs, ds, &[])?;
    let mut report = RunReport::new(Scenario::TaskGrid.name(), cfg.provenance_hash());
    for c in &cells {
        for ((t, p), e) in c.spec.probe_tasks.iter().zip(&c.probes).zip(&c.estimates) {
            let mut row = base_row(c, c.spec.train.seed);
            row.task = t.to_string();
            row.probe_accuracy = Some(p.accuracy);
            fill_estimate(&mut row, e);
            report.rows.push(row);
        }
    }
    report.check_bounds();
    report.correlations.push(correlate(&report.rows));

    let trained_on = |r: &ReportRow, t: &TaskSpec| r.pairing == PairingStrategy::same_class(t.clone()).describe();
    let diag: Vec<&ReportRow> = report
        .rows
        .iter()
        .filter(|r| train_tasks.iter().any(|t| trained_on(r, t) && r.task == t.to_string()))
        .collect();
    let diag_min = diag
        .iter()
        .filter_map(|r| r.probe_accuracy)
        .fold(f64::INFINITY, f64::min);
    let all_min = report
        .rows
        .iter()
        .filter(|r| trained_on(r, &TaskSpec::all()))
        .filter_map(|r| r.probe_accuracy)
        .fold(f64::INFINITY, f64::min);
    let excess = report
        .rows
        .iter()
        .filter_map(|r| Some(r.mi_bits? - r.class_entropy_bits?))
        .fold(f64::NEG_INFINITY, f64::max);
    report.check(
        "diagonal_accuracy",
        false,
        diag_min >= 0.9,
        format!("min diagonal accuracy {diag_min:.4}"),
    );
    report.check(
        "all_column_accuracy",
        false,
        all_min >= 0.9,
        format!("min accuracy when trained on all {all_min:.4}"),
    );
    report.check(
        "class_entropy_ceiling",
        false,
        excess <= 0.2,
        format!("largest estimate minus H(C): {excess:.4} bits"),
    );

    let names = |ts: &[TaskSpec]| ts.iter().map(|t| t.to_string()).collect::<Vec<_>>();
    for (field, title) in [("accuracy", "Probe accuracy"), ("mi", "Estimated MI (bits)")] {
        let values = train_tasks
            .iter()
            .map(|tt| {
                probe_tasks
                    .iter()
                    .map(|pt| {
                        let cell: Vec<f64> = report
                            .rows
                            .iter()
                            .filter(|r| trained_on(r, tt) && r.task == pt.to_string())
                            .filter_map(|r| if field == "mi" { r.mi_bits } else { r.probe_accuracy })
                            .collect();
                        (!cell.is_empty()).then(|| cell.iter().sum::<f64>() / cell.len() as f64)
                    })
                    .collect()
            })
            .collect();
        report.figures.push(Figure {
            name: format!("task_grid_{field}"),
            title: title.into(),
            chart: Chart::Heatmap {
                row_label: "training pairing".into(),
                col_label: "probe / estimation task".into(),
                rows: names(&train_tasks),
                cols: names(&probe_tasks),
                values,
            },
        });
    }
    Ok(report)
}

/// Training set (kept colors) and the requested external-negative set.
pub fn negative_datasets(cfg: &SweepConfig, ds: &CdpDataset) -> Result<(CdpDataset, Vec<(NegativeSpec, CdpDataset)>)> {
    let keep = parse_colors(&cfg.sweep.train_colors)?;
    let in_keep = |s: &CdpSample| keep.contains(&s.attributes.index(mirig_core::cdpgen::Attribute::Color));
    let train = ds.filter(in_keep);
    if train.is_empty() {
        return Err(Error::InvalidArgument("no samples with the training colors".into()));
    }
    let n = train.len();
    let mut out = Vec::new();
    for &spec in &cfg.sweep.negatives {
        let neg = match spec {
            NegativeSpec::Related => ds.filter(|s| !in_keep(s)),
            NegativeSpec::Noise | NegativeSpec::Background => {
                let samples = (0..n as u64)
                    .map(|i| {
                        let image = if spec == NegativeSpec::Noise {
                            let mut rng = derive_rng(ds.seed, i, STREAM_NEGATIVES);
                            let data = (0..3 * ds.size * ds.size).map(|_| rng.gen::<f32>()).collect();
                            Tensor::new(vec![3, ds.size, ds.size], data)?
                        } else {
                            background(derive_seed(ds.seed ^ 0xb6, i, STREAM_NEGATIVES), ds.size)?
                        };
                        Ok(CdpSample {
                            image,
                            attributes: sample_attributes(ds.seed, i),
                            source_id: i,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                CdpDataset::from_samples(samples, ds.size, ds.mix, ds.seed)?
            }
        };
        if neg.is_empty() || neg.train_range().is_empty() {
            return Err(Error::InvalidArgument(format!(
                "negative set `{}` is empty",
                spec.name()
            )));
        }
        out.push((spec, neg));
    }
    Ok((train, out))
}

/// In-batch baseline plus one run per external-negative source.
pub fn run_negative_sampling(cfg: &SweepConfig, ds: &CdpDataset) -> Result<RunReport> {
    require(cfg, Scenario::NegSample)?;
    let base = cfg.train.resolve()?;
    let external = if base.external_negatives > 0 {
        base.external_negatives
    } else {
        2 * base.k_tr
    };
    let tasks = cfg.probe_tasks()?;
    let (train_ds, negs) = negative_datasets(cfg, ds)?;
    let mut specs = Vec::new();
    let mut neg_sets = Vec::new();
    for &seed in &cfg.sweep.seeds {
        specs.push(CellSpec {
            train: TrainConfig {
                seed,
                external_negatives: 0,
                ..base.clone()
            },
            strength: None,
            negatives: None,
            probe_tasks: tasks.clone(),
            estimations: Vec::new(),
        });
        neg_sets.push(None);
        for (spec, neg) in &negs {
            specs.push(CellSpec {
                train: TrainConfig {
                    seed,
                    external_negatives: external,
                    ..base.clone()
                },
                strength: None,
                negatives: Some(*spec),
                probe_tasks: tasks.clone(),
                estimations: Vec::new(),
            });
            neg_sets.push(Some(neg.clone()));
        }
    }
    let cells = run_cells(&specs, &train_ds, &neg_sets)?;
    let mut report = RunReport::new(Scenario::NegSample.name(), cfg.provenance_hash());
    for c in &cells {
        for (t, p) in c.spec.probe_tasks.iter().zip(&c.probes) {
            let mut row = base_row(c, c.spec.train.seed);
            row.task = t.to_string();
            row.probe_accuracy = Some(p.accuracy);
            report.rows.push(row);
        }
    }
    report.check_bounds();

    let rows = report.rows.clone();
    let mean_acc = |neg: &str| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.negatives == neg)
            .filter_map(|r| r.probe_accuracy)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let baseline = mean_acc("").expect("baseline row present");
    report
        .findings
        .push(format!("baseline (in-batch negatives) mean accuracy {baseline:.4}"));
    for (spec, _) in &negs {
        let acc = mean_acc(spec.name()).expect("row present");
        report.findings.push(format!(
            "{} negatives: mean accuracy {acc:.4} ({:+.4} vs baseline)",
            spec.name(),
            acc - baseline
        ));
        match spec {
            NegativeSpec::Noise => report.check(
                "noise_not_above_baseline",
                false,
                acc <= baseline,
                format!("{acc:.4} vs {baseline:.4}"),
            ),
            NegativeSpec::Related => report.check(
                "related_within_3_points",
                false,
                acc >= baseline - 0.03,
                format!("{acc:.4} vs {baseline:.4}"),
            ),
            NegativeSpec::Background => {}
        }
    }
    let labels: Vec<String> = std::iter::once("in-batch".to_string())
        .chain(negs.iter().map(|(s, _)| s.name().to_string()))
        .collect();
    let values = labels
        .iter()
        .map(|l| {
            let key = if l == "in-batch" { "" } else { l.as_str() };
            tasks
                .iter()
                .map(|t| {
                    let v: Vec<f64> = report
                        .rows
                        .iter()
                        .filter(|r| r.negatives == key && r.task == t.to_string())
                        .filter_map(|r| r.probe_accuracy)
                        .collect();
                    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect()
        })
        .collect();
    report.figures.push(Figure {
        name: "negsample_accuracy".into(),
        title: "Probe accuracy by negative source".into(),
        chart: Chart::Heatmap {
            row_label: "negatives".into(),
            col_label: "probe task".into(),
            rows: labels,
            cols: tasks.iter().map(|t| t.to_string()).collect(),
            values,
        },
    });
    Ok(report)
}
