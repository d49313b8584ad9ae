//! End-to-end experiment orchestration: split, attack, defend, retrain,
//! report. Every stage failure is tagged with the stage name and any
//! partially written outputs are removed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attacks::{multiclass_attack, split_pools};
use crate::baselines::{knn_defend, svd_defend};
use crate::config::{DefenseKind, ExperimentConfig};
use crate::data::{Dataset, FeatureKind, Scaler};
use crate::error::{Error, Result};
use crate::eval::{detection_metrics, test_accuracy, train_linear, LinearModel};
use crate::io::{load_dataset, save_dataset, DataFormat};
use crate::mixtures::ModelSet;
use crate::sanitizer::{ClassComponentStats, Sanitizer, StepRecord, Verdict};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub clean_baseline: f64,
    pub poisoned: f64,
    pub sanitized: f64,
}

/// The run's full result, serialized to `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefenseReport {
    pub defense: String,
    pub attack_index: usize,
    pub seed: u64,
    pub num_train: usize,
    pub num_poisoned_truth: usize,
    pub accuracies: Accuracies,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tpr: Option<f64>,
    pub fpr: f64,
    pub per_class: Vec<ClassComponentStats>,
    pub bic_trace: Vec<StepRecord>,
    pub removed_sample_ids: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    pub timing: Timing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_secs: f64,
}

/// Continuous features get the [0,1]-scale-then-center treatment fitted
/// on the given training set; count features pass through.
fn preprocess(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>)> {
    match train.feature_kind {
        FeatureKind::Continuous => {
            let scaler = Scaler::fit(train)?;
            let t = scaler.apply(train)?;
            let o = others
                .iter()
                .map(|d| scaler.apply(d))
                .collect::<Result<Vec<_>>>()?;
            Ok((t, o))
        }
        FeatureKind::Count => Ok((train.clone(), others.iter().map(|&d| d.clone()).collect())),
    }
}

fn train_and_score(
    train: &Dataset,
    test: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<(LinearModel, f64)> {
    let (tr, rest) = preprocess(train, &[test])?;
    let model = train_linear(&tr, cfg.victim, cfg.seed)?;
    let acc = test_accuracy(&model, &rest[0])?;
    Ok((model, acc))
}

struct DefenseRun {
    sanitized: Dataset,
    detected_ids: Vec<usize>,
    per_class: Vec<ClassComponentStats>,
    trace: Vec<StepRecord>,
    verdict: Option<Verdict>,
}

fn run_bic_defense(
    poisoned: &Dataset,
    test: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<DefenseRun> {
    // The mixture defense operates on preprocessed features; sample ids
    // are positional, so detections map straight back to the raw set.
    let (scaled, _) = preprocess(poisoned, &[])?;
    let model = ModelSet::fit(&scaled, cfg.m_max, cfg.seed.wrapping_add(1000))?;
    let mut s = Sanitizer::new(&scaled, &model)?;
    let initial = s.bic();
    let mut trace: Vec<StepRecord> = Vec::new();
    while let Some(mut rec) = s.step() {
        if cfg.step_accuracy {
            let keep = keep_mask(poisoned.len(), &s.detected_ids());
            let current = poisoned.restrict(&keep);
            rec.accuracy = Some(train_and_score(&current, test, cfg)?.1);
        }
        trace.push(rec);
    }
    let (_, outcome) = s.finish(&model, initial);
    let keep = keep_mask(poisoned.len(), &outcome.removed_sample_ids);
    Ok(DefenseRun {
        sanitized: poisoned.restrict(&keep),
        detected_ids: outcome.removed_sample_ids,
        per_class: outcome.per_class,
        trace,
        verdict: Some(outcome.verdict),
    })
}

fn keep_mask(len: usize, removed: &[usize]) -> Vec<bool> {
    let mut keep = vec![true; len];
    for &i in removed {
        keep[i] = false;
    }
    keep
}

fn run_defense(
    poisoned: &Dataset,
    test: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<DefenseRun> {
    match cfg.defense {
        DefenseKind::None => Ok(DefenseRun {
            sanitized: poisoned.clone(),
            detected_ids: Vec::new(),
            per_class: Vec::new(),
            trace: Vec::new(),
            verdict: None,
        }),
        DefenseKind::Bic => run_bic_defense(poisoned, test, cfg),
        DefenseKind::Knn => {
            let (scaled, _) = preprocess(poisoned, &[])?;
            let out = knn_defend(&scaled, &cfg.knn)?;
            // Relabeled output keeps the raw features.
            let sanitized = Dataset {
                labels: out.dataset.labels,
                ..poisoned.clone()
            };
            Ok(DefenseRun {
                sanitized,
                detected_ids: out.relabeled_ids,
                per_class: Vec::new(),
                trace: Vec::new(),
                verdict: None,
            })
        }
        DefenseKind::Svd => {
            let (scaled, _) = preprocess(poisoned, &[])?;
            let out = svd_defend(&scaled, cfg.victim, &cfg.svd, cfg.seed.wrapping_add(2000))?;
            let keep = keep_mask(poisoned.len(), &out.removed_ids);
            Ok(DefenseRun {
                sanitized: poisoned.restrict(&keep),
                detected_ids: out.removed_ids,
                per_class: Vec::new(),
                trace: Vec::new(),
                verdict: None,
            })
        }
    }
}

/// Serializes the trace table. Columns: `action` is the committed case's
/// label and `case` its 1-based case number; the `accuracy` column is
/// appended only when per-step retraining was enabled.
pub fn emit_trace(trace: &[StepRecord], path: &Path) -> Result<()> {
    if trace.is_empty() {
        return Err(Error::input("empty trace"));
    }
    fs::write(path, format_trace(trace))?;
    Ok(())
}

fn format_trace(trace: &[StepRecord]) -> String {
    let with_acc = trace.iter().any(|r| r.accuracy.is_some());
    let mut out = String::from("step,bic,num_detected,action,class,component,case");
    if with_acc {
        out.push_str(",accuracy");
    }
    out.push('\n');
    for r in trace {
        write!(
            out,
            "{},{},{},{},{},{},{}",
            r.step,
            r.bic,
            r.num_detected,
            r.case.label(),
            r.class,
            r.component,
            r.case.case_number()
        )
        .unwrap();
        if with_acc {
            match r.accuracy {
                Some(a) => write!(out, ",{a}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Full pipeline: split, optional attack, clean-baseline victim,
/// poisoned victim, selected defense, sanitized victim, metrics, files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<DefenseReport> {
    let started = Instant::now();
    cfg.validate()?;
    let full = load_dataset(&cfg.dataset, cfg.format).map_err(|e| e.at_stage("load"))?;

    let (train, test, pools) = split_pools(&full, cfg.train_frac, cfg.test_frac, cfg.seed)
        .map_err(|e| e.at_stage("split"))?;

    let (poisoned, truth) = if cfg.attack_index > 0 {
        let p = multiclass_attack(
            &train,
            &pools,
            cfg.attack_index,
            cfg.attack_budget,
            cfg.seed.wrapping_add(500),
        )
        .map_err(|e| e.at_stage("attack"))?;
        let truth = p.dataset.poison_truth.clone().unwrap();
        (p.dataset, truth)
    } else {
        let truth = vec![false; train.len()];
        let mut d = train.clone();
        d.poison_truth = Some(truth.clone());
        (d, truth)
    };

    let (_, clean_acc) =
        train_and_score(&train, &test, cfg).map_err(|e| e.at_stage("train"))?;
    let (_, poisoned_acc) =
        train_and_score(&poisoned, &test, cfg).map_err(|e| e.at_stage("train"))?;

    let defense = run_defense(&poisoned, &test, cfg).map_err(|e| e.at_stage("defense"))?;
    let (_, sanitized_acc) =
        train_and_score(&defense.sanitized, &test, cfg).map_err(|e| e.at_stage("train"))?;

    let metrics = detection_metrics(&defense.detected_ids, &truth);

    let report = DefenseReport {
        defense: cfg.defense.label().to_string(),
        attack_index: cfg.attack_index,
        seed: cfg.seed,
        num_train: poisoned.len(),
        num_poisoned_truth: truth.iter().filter(|&&t| t).count(),
        accuracies: Accuracies {
            clean_baseline: clean_acc,
            poisoned: poisoned_acc,
            sanitized: sanitized_acc,
        },
        tpr: metrics.tpr,
        fpr: metrics.fpr,
        per_class: defense.per_class,
        bic_trace: defense.trace,
        removed_sample_ids: defense.detected_ids,
        verdict: defense.verdict,
        timing: Timing {
            total_secs: started.elapsed().as_secs_f64(),
        },
    };

    emit_outputs(cfg, &report, &defense.sanitized).map_err(|e| e.at_stage("emit"))?;
    Ok(report)
}

fn emit_outputs(cfg: &ExperimentConfig, report: &DefenseReport, sanitized: &Dataset) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| -> Result<()> {
        let report_path = cfg.out_dir.join("report.json");
        fs::write(&report_path, serde_json::to_string_pretty(report)?)?;
        written.push(report_path);

        let trace_path = cfg.out_dir.join("trace.csv");
        if report.bic_trace.is_empty() {
            fs::write(
                &trace_path,
                "step,bic,num_detected,action,class,component,case\n",
            )?;
        } else {
            emit_trace(&report.bic_trace, &trace_path)?;
        }
        written.push(trace_path);

        let ext = match cfg.format {
            DataFormat::Csv => "csv",
            DataFormat::Sparse => "txt",
        };
        let data_path = cfg.out_dir.join(format!("sanitized.{ext}"));
        save_dataset(sanitized, &data_path)?;
        written.push(data_path);
        Ok(())
    })();
    if result.is_err() {
        for p in written {
            let _ = fs::remove_file(p);
        }
    }
    result
}
