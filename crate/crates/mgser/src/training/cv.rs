//! Leave-one-session-out cross-validation with repeats.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::models::ModelSpec;
use crate::rng::seeded;

use super::{
    evaluate, train_model, unweighted_accuracy_lenient, EpochRecord, Sample, TrainConfig,
    TrainError, TrainOutcome,
};

/// One utterance with the grouping key the CV split runs on.
pub struct CvSample {
    pub utterance_id: String,
    pub session: String,
    pub sample: Sample,
}

#[derive(Clone, Debug)]
pub struct FoldReport {
    pub repeat: usize,
    pub fold: usize,
    pub held_out_session: String,
    pub best_epoch: usize,
    pub test_ua: f64,
    pub history: Vec<EpochRecord>,
    pub warnings: Vec<String>,
    /// Utterance ids of the fold's test set, for partition audits.
    pub test_ids: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub aggregate_ua: f64,
}

fn fold_seed(base: u64, repeat: usize, fold: usize) -> u64 {
    // per-repeat seeds derive from base + repeat index; folds within a
    // repeat are decorrelated by mixing in the fold index
    (base + repeat as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(fold as u64)
}

struct FoldPlan<'a> {
    repeat: usize,
    fold: usize,
    session: &'a str,
}

fn run_fold(
    samples: &[CvSample],
    spec: &ModelSpec,
    config: &TrainConfig,
    plan: &FoldPlan<'_>,
) -> Result<FoldReport, TrainError> {
    let seed = fold_seed(config.seed, plan.repeat, plan.fold);
    let (test_idx, rest_idx): (Vec<usize>, Vec<usize>) =
        (0..samples.len()).partition(|&i| samples[i].session == plan.session);
    let mut rest = rest_idx;
    rest.shuffle(&mut seeded(seed));
    let n_val = ((rest.len() as f64 * config.val_fraction).floor() as usize).max(1);
    let (val_idx, train_idx) = rest.split_at(n_val);

    let collect = |idx: &[usize]| -> Vec<Sample> {
        idx.iter()
            .map(|&i| Sample {
                features: clone_features(&samples[i].sample.features),
                label: samples[i].sample.label,
            })
            .collect()
    };
    let train_set = collect(train_idx);
    let val_set = collect(val_idx);
    let test_set = collect(&test_idx);

    let fold_config = TrainConfig {
        seed,
        ..config.clone()
    };
    let TrainOutcome {
        model,
        history,
        best_epoch,
        ..
    } = train_model(spec, &train_set, &val_set, &fold_config)?;

    let (_, test_preds) = evaluate(&model, &test_set)?;
    let test_labels: Vec<usize> = test_set.iter().map(|s| s.label).collect();
    let (test_ua, absent) = unweighted_accuracy_lenient(&test_preds, &test_labels, spec.classes);
    let warnings = absent
        .iter()
        .map(|&c| {
            format!(
                "session {}: class {} absent from test set, UA computed over present classes",
                plan.session, c
            )
        })
        .collect();
    Ok(FoldReport {
        repeat: plan.repeat,
        fold: plan.fold,
        held_out_session: plan.session.to_string(),
        best_epoch,
        test_ua,
        history,
        warnings,
        test_ids: test_idx
            .iter()
            .map(|&i| samples[i].utterance_id.clone())
            .collect(),
    })
}

fn clone_features(f: &crate::models::Features<f32>) -> crate::models::Features<f32> {
    crate::models::Features {
        text: f.text.as_ref().map(|t| crate::models::SeqInput {
            stack: t.stack.clone(),
            mask: t.mask.clone(),
        }),
        speech: f
            .speech
            .iter()
            .map(|(g, s)| {
                (
                    *g,
                    crate::models::SeqInput {
                        stack: s.stack.clone(),
                        mask: s.mask.clone(),
                    },
                )
            })
            .collect(),
    }
}

/// One fold per session, each held out as the test set, repeated
/// `config.repeats` times with per-repeat seeds. The aggregate is the
/// mean of all fold test UAs.
pub fn run_cv(
    samples: &[CvSample],
    spec: &ModelSpec,
    config: &TrainConfig,
    jobs: usize,
) -> Result<CvReport, TrainError> {
    let sessions: BTreeSet<&str> = samples.iter().map(|s| s.session.as_str()).collect();
    if sessions.len() < 2 {
        return Err(TrainError::Contract(format!(
            "cross-validation needs >= 2 distinct sessions, found {}",
            sessions.len()
        )));
    }
    let sessions: Vec<&str> = sessions.into_iter().collect();
    let mut plans = Vec::new();
    for repeat in 0..config.repeats {
        for (fold, session) in sessions.iter().enumerate() {
            plans.push(FoldPlan {
                repeat,
                fold,
                session,
            });
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| TrainError::Contract(format!("thread pool: {e}")))?;
    let folds: Result<Vec<FoldReport>, TrainError> = pool.install(|| {
        plans
            .par_iter()
            .map(|plan| run_fold(samples, spec, config, plan))
            .collect()
    });
    let folds = folds?;
    let aggregate_ua = folds.iter().map(|f| f.test_ua).sum::<f64>() / folds.len() as f64;
    Ok(CvReport {
        folds,
        aggregate_ua,
    })
}

/// Structured-text record for one fold. Field names are fixed for
/// downstream tooling.
pub fn format_fold_report(report: &FoldReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("repeat = {}\n", report.repeat));
    out.push_str(&format!("fold = {}\n", report.fold));
    out.push_str(&format!("held_out_session = {}\n", report.held_out_session));
    out.push_str(&format!("best_epoch = {}\n", report.best_epoch));
    out.push_str(&format!("test_ua = {}\n", report.test_ua));
    for w in &report.warnings {
        out.push_str(&format!("warning = {w}\n"));
    }
    for e in &report.history {
        out.push_str(&format!(
            "epoch {} train_loss {} train_ua {} val_loss {} val_ua {}\n",
            e.epoch, e.train_loss, e.train_ua, e.val_loss, e.val_ua
        ));
    }
    out
}

/// Run-level summary: one line per fold plus the aggregate.
pub fn format_cv_summary(report: &CvReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("folds = {}\n", report.folds.len()));
    out.push_str(&format!("aggregate_ua = {}\n", report.aggregate_ua));
    for f in &report.folds {
        out.push_str(&format!(
            "fold {} {} {} {}\n",
            f.repeat, f.fold, f.held_out_session, f.test_ua
        ));
    }
    out
}
