//! Experiment drivers: dataset generation, the four-configuration
//! architecture/loss ablation, the missing-modality study, dosimetric
//! comparison of predicted vs clean contours, and the loss-weight grid
//! search.
//!
//! Arms run sequentially by default; `parallel = true` runs independent
//! arms concurrently (each arm owns its output subdirectory). Either way
//! the report files are identical for identical args and seeds.

use std::path::Path;

use serde::Serialize;

use mfs_core::dose::{dmean, dvh, vd};
use mfs_core::mask_ops::{hu_window_mask, BONE_WINDOW, MUSCLE_WINDOW};
use mfs_core::stats::{five_number, paired_t_test};
use mfs_core::volume::{Modality, ScalarVolume};
use mfs_nn::model::{Arch, Model};
use mfs_nn::params::ParamStore;
use mfs_nn::preprocess::ClaheConfig;
use mfs_phantom::io::write_dataset;
use mfs_phantom::{make_dataset, PhantomConfig, Split};

use crate::config::ExperimentSpec;
use crate::data::{Dataset, EvalCase};
use crate::error::CliError;
use crate::evalrun::{records_csv, run_eval, EvalSummary, MetricsRecord, Modalities};
use crate::report::{boxplot_dat, write_json, write_text, BoxplotRow};
use crate::trainrun::{run_training, ArmConfig};

/// Run `n` independent jobs, optionally concurrently, preserving order.
fn run_jobs<T, F>(n: usize, parallel: bool, f: F) -> Result<Vec<T>, CliError>
where
    T: Send,
    F: Fn(usize) -> Result<T, CliError> + Sync,
{
    let results: Vec<Result<T, CliError>> = if parallel && cfg!(feature = "parallel") {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(&f).collect()
        }
        #[cfg(not(feature = "parallel"))]
        unreachable!()
    } else {
        (0..n).map(&f).collect()
    };
    results.into_iter().collect()
}

// ---------------------------------------------------------------------
// phantom-gen

#[derive(Debug, Clone, Serialize)]
pub struct PhantomCaseRow {
    pub id: String,
    pub split: Split,
    pub seed: u64,
    /// Fraction of noisy-label voxels that are muscle/bone contamination
    /// (inside the HU windows, outside the clean label).
    pub contamination: f64,
    pub offset_mm: [f64; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct PhantomGenSummary {
    pub n_cases: usize,
    pub train_fraction: f64,
    pub rows: Vec<PhantomCaseRow>,
}

pub fn contamination_fraction(case: &mfs_phantom::Case) -> Result<f64, CliError> {
    let muscle = hu_window_mask(&case.ct, MUSCLE_WINDOW.0, MUSCLE_WINDOW.1)?;
    let bone = hu_window_mask(&case.ct, BONE_WINDOW.0, BONE_WINDOW.1)?;
    let mut n_noisy = 0usize;
    let mut n_contam = 0usize;
    for i in 0..case.ct.values.len() {
        if case.label_noisy.values[i] {
            n_noisy += 1;
            if (muscle.values[i] || bone.values[i]) && !case.label_clean.values[i] {
                n_contam += 1;
            }
        }
    }
    Ok(n_contam as f64 / n_noisy.max(1) as f64)
}

pub fn phantom_gen(
    config: &PhantomConfig,
    n_cases: usize,
    base_seed: u64,
    train_fraction: f64,
    out: &Path,
) -> Result<PhantomGenSummary, CliError> {
    let (cases, manifest) = make_dataset(n_cases, base_seed, config, train_fraction)?;
    write_dataset(out, &cases, config, &manifest)?;
    let mut rows = Vec::with_capacity(cases.len());
    for (case, entry) in cases.iter().zip(&manifest.cases) {
        rows.push(PhantomCaseRow {
            id: case.id.clone(),
            split: entry.split,
            seed: entry.seed,
            contamination: contamination_fraction(case)?,
            offset_mm: case.true_offset_mm,
        });
    }
    let summary = PhantomGenSummary {
        n_cases,
        train_fraction,
        rows,
    };
    write_json(&out.join("phantom_summary.json"), &summary)?;
    Ok(summary)
}

// ---------------------------------------------------------------------
// ablation

pub const ABLATION_TAGS: [&str; 4] = ["snet+dsc", "snet+mb", "snet_ma+dsc", "snet_ma+mb"];
pub const PROPOSED_TAG: &str = "snet_ma+mb";

/// Derive one ablation arm from the base spec: the four configurations
/// differ only in architecture and loss flags. Ablation arms train
/// without modality dropout; dropout is the modality study's subject.
pub fn ablation_arm(spec: &ExperimentSpec, tag: &str, seed: u64) -> ArmConfig {
    let mut model = spec.model;
    model.arch = if tag.starts_with("snet_ma") {
        Arch::SnetMa
    } else {
        Arch::Snet
    };
    let mut loss = spec.loss;
    if tag.ends_with("+dsc") {
        loss.w_m = 0.0;
        loss.w_b = 0.0;
    }
    let mut train = spec.train;
    train.seed = seed;
    train.modo_p = 0.0;
    ArmConfig {
        tag: tag.to_string(),
        model,
        loss,
        train,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationArmResult {
    pub config_tag: String,
    pub seed: u64,
    pub summary: EvalSummary,
    #[serde(skip)]
    pub records: Vec<MetricsRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TTestRow {
    pub versus: String,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub arms: Vec<AblationArmResult>,
    pub ttests: Vec<TTestRow>,
}

fn metric_mean_sd(summary: &EvalSummary, metric: &str) -> (f64, f64) {
    summary
        .metrics
        .iter()
        .find(|m| m.metric == metric)
        .map(|m| (m.mean, m.sd))
        .unwrap_or((f64::NAN, f64::NAN))
}

pub fn ablation_table_csv(arms: &[AblationArmResult]) -> String {
    let mut s =
        String::from("config,seed,dsc_mean,dsc_sd,asd_mean,asd_sd,hd95_mean,hd95_sd\n");
    for arm in arms {
        let (dm, ds) = metric_mean_sd(&arm.summary, "dsc_pct");
        let (am, asd_sd) = metric_mean_sd(&arm.summary, "asd_mm");
        let (hm, hs) = metric_mean_sd(&arm.summary, "hd95_mm");
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            arm.config_tag, arm.seed, dm, ds, am, asd_sd, hm, hs
        ));
    }
    s
}

/// Train one arm and evaluate it on the test split with both modalities.
pub fn train_and_eval_arm(
    arm: &ArmConfig,
    train_cases: &[mfs_nn::train::TrainCase],
    test_cases: &[EvalCase],
    modalities: Modalities,
    out_dir: &Path,
) -> Result<(Vec<MetricsRecord>, EvalSummary), CliError> {
    let (model, params, _) = run_training(arm, train_cases, out_dir)?;
    let (records, summary) = run_eval(
        &model,
        &params,
        &arm.train.clahe,
        test_cases,
        modalities,
        &arm.tag,
    )?;
    write_text(&out_dir.join("metrics.csv"), &records_csv(&records))?;
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok((records, summary))
}

pub fn ablation(spec: &ExperimentSpec, parallel: bool) -> Result<AblationReport, CliError> {
    spec.validate()?;
    let dataset = Dataset::load(&spec.manifest)?;
    let train_cases = dataset.train_cases()?;
    let test_cases = dataset.eval_cases(Split::Test)?;
    let out_root = spec.out_dir.join("ablation");

    // Arm list in fixed (config-major, seed-minor) order.
    let jobs: Vec<(String, u64)> = ABLATION_TAGS
        .iter()
        .flat_map(|&tag| spec.seeds.iter().map(move |&s| (tag.to_string(), s)))
        .collect();
    let arms = run_jobs(jobs.len(), parallel, |j| {
        let (tag, seed) = &jobs[j];
        let arm = ablation_arm(spec, tag, *seed);
        let dir = out_root.join(format!("{}_seed{}", tag.replace('+', "_"), seed));
        let (records, summary) =
            train_and_eval_arm(&arm, &train_cases, &test_cases, Modalities::CtMri, &dir)?;
        Ok(AblationArmResult {
            config_tag: tag.clone(),
            seed: *seed,
            summary,
            records,
        })
    })?;

    // Paired t-tests on per-case DSC: proposed vs each other config,
    // pairing (seed, case) samples.
    let dsc_series = |tag: &str| -> Vec<f64> {
        arms.iter()
            .filter(|a| a.config_tag == tag)
            .flat_map(|a| a.records.iter().map(|r| r.dsc_pct))
            .collect()
    };
    let proposed = dsc_series(PROPOSED_TAG);
    let mut ttests = Vec::new();
    for tag in ABLATION_TAGS.iter().filter(|&&t| t != PROPOSED_TAG) {
        let other = dsc_series(tag);
        let (t, p) = paired_t_test(&proposed, &other).map_err(CliError::from)?;
        ttests.push(TTestRow {
            versus: tag.to_string(),
            t,
            p,
        });
    }

    let report = AblationReport { arms, ttests };
    write_text(
        &out_root.join("table.csv"),
        &ablation_table_csv(&report.arms),
    )?;
    write_json(&out_root.join("ttests.json"), &report.ttests)?;
    Ok(report)
}

// ---------------------------------------------------------------------
// modality study

pub const MODEL_MRICT: &str = "mrict";
pub const MODEL_MODO: &str = "modo";
pub const MODEL_CTONLY: &str = "ctonly";

/// The three trained models of the study, all the proposed architecture
/// and loss, differing only in dropout probability.
pub fn modality_arm(spec: &ExperimentSpec, model_tag: &str, seed: u64) -> ArmConfig {
    let mut model = spec.model;
    model.arch = Arch::SnetMa;
    let mut train = spec.train;
    train.seed = seed;
    train.modo_p = match model_tag {
        MODEL_MRICT => 0.0,
        MODEL_CTONLY => 1.0,
        _ => {
            if spec.train.modo_p > 0.0 && spec.train.modo_p < 1.0 {
                spec.train.modo_p
            } else {
                0.5
            }
        }
    };
    ArmConfig {
        tag: model_tag.to_string(),
        model,
        loss: spec.loss,
        train,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModalityArmResult {
    pub model_tag: String,
    pub input_modalities: String,
    /// Pooled over all seeds.
    pub summary: EvalSummary,
    #[serde(skip)]
    pub records: Vec<MetricsRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModalityReport {
    pub arms: Vec<ModalityArmResult>,
}

/// The five (model, input) evaluation arms.
pub const MODALITY_ARMS: [(&str, Modalities); 5] = [
    (MODEL_MRICT, Modalities::CtMri),
    (MODEL_MRICT, Modalities::Ct),
    (MODEL_MODO, Modalities::CtMri),
    (MODEL_MODO, Modalities::Ct),
    (MODEL_CTONLY, Modalities::Ct),
];

pub fn modality_study(spec: &ExperimentSpec, parallel: bool) -> Result<ModalityReport, CliError> {
    spec.validate()?;
    let dataset = Dataset::load(&spec.manifest)?;
    let train_cases = dataset.train_cases()?;
    let test_cases = dataset.eval_cases(Split::Test)?;
    let out_root = spec.out_dir.join("modality_study");

    let models = [MODEL_MRICT, MODEL_MODO, MODEL_CTONLY];
    let jobs: Vec<(&str, u64)> = models
        .iter()
        .flat_map(|&m| spec.seeds.iter().map(move |&s| (m, s)))
        .collect();
    // Train each model per seed, then evaluate its input conditions.
    type Trained = (String, u64, Vec<(Modalities, Vec<MetricsRecord>)>);
    let trained: Vec<Trained> = run_jobs(jobs.len(), parallel, |j| {
        let (model_tag, seed) = jobs[j];
        let arm = modality_arm(spec, model_tag, seed);
        let dir = out_root.join(format!("{model_tag}_seed{seed}"));
        let (model, params, _) = run_training(&arm, &train_cases, &dir)?;
        let mut evals = Vec::new();
        for &(m, input) in MODALITY_ARMS.iter() {
            if m != model_tag {
                continue;
            }
            let (records, summary) = run_eval(
                &model,
                &params,
                &arm.train.clahe,
                &test_cases,
                input,
                model_tag,
            )?;
            write_text(
                &dir.join(format!("metrics_{input}.csv")).with_file_name(format!(
                    "metrics_{}.csv",
                    input.to_string().replace('+', "_")
                )),
                &records_csv(&records),
            )?;
            write_json(
                &dir.join(format!(
                    "summary_{}.json",
                    input.to_string().replace('+', "_")
                )),
                &summary,
            )?;
            evals.push((input, records));
        }
        Ok((model_tag.to_string(), seed, evals))
    })?;

    // Pool per-case records per (model, input) arm across seeds.
    let mut arms = Vec::new();
    let mut boxplot_rows = Vec::new();
    for &(model_tag, input) in MODALITY_ARMS.iter() {
        let mut records = Vec::new();
        for (tag, _, evals) in &trained {
            if tag == model_tag {
                for (m, recs) in evals {
                    if *m == input {
                        records.extend(recs.iter().cloned());
                    }
                }
            }
        }
        let summary = crate::evalrun::summarize(&records, model_tag, input);
        for metric in ["dsc_pct", "asd_mm", "hd95_mm"] {
            let values: Vec<f64> = match metric {
                "dsc_pct" => records.iter().map(|r| r.dsc_pct).collect(),
                "asd_mm" => records.iter().filter_map(|r| r.asd_mm).collect(),
                _ => records.iter().filter_map(|r| r.hd95_mm).collect(),
            };
            if !values.is_empty() {
                boxplot_rows.push(BoxplotRow {
                    label: format!(
                        "{model_tag}_{}/{metric}",
                        input.to_string().replace('+', "_")
                    ),
                    five: five_number(&values),
                });
            }
        }
        arms.push(ModalityArmResult {
            model_tag: model_tag.to_string(),
            input_modalities: input.to_string(),
            summary,
            records,
        });
    }

    let report = ModalityReport { arms };
    write_json(&out_root.join("modality_study.json"), &report)?;
    write_text(&out_root.join("boxplot.dat"), &boxplot_dat(&boxplot_rows))?;
    Ok(report)
}

// ---------------------------------------------------------------------
// dose-eval

#[derive(Debug, Clone, Serialize)]
pub struct DoseRow {
    pub case_id: String,
    pub dmean_clean_gy: f64,
    pub dmean_pred_gy: f64,
    pub dmean_abs_diff_gy: f64,
    pub dmean_pct_diff: f64,
    pub v20_clean_pct: f64,
    pub v20_pred_pct: f64,
    pub v20_abs_diff_pct: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DoseReport {
    pub rows: Vec<DoseRow>,
    /// Cases excluded because the predicted mask was empty.
    pub excluded_cases: Vec<String>,
    pub dmean_t: Option<f64>,
    pub dmean_p: Option<f64>,
    /// Set when the paired test was degenerate (all differences equal).
    pub t_test_note: Option<String>,
}

pub fn dose_rows_csv(rows: &[DoseRow]) -> String {
    let mut s = String::from(
        "case_id,dmean_clean_gy,dmean_pred_gy,dmean_abs_diff_gy,dmean_pct_diff,\
         v20_clean_pct,v20_pred_pct,v20_abs_diff_pct\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.case_id,
            r.dmean_clean_gy,
            r.dmean_pred_gy,
            r.dmean_abs_diff_gy,
            r.dmean_pct_diff,
            r.v20_clean_pct,
            r.v20_pred_pct,
            r.v20_abs_diff_pct
        ));
    }
    s
}

const DVH_BIN_GY: f64 = 1.0;

pub fn dose_eval(
    model: &Model,
    params: &ParamStore<f32>,
    clahe: &ClaheConfig,
    cases: &[EvalCase],
    modalities: Modalities,
    out_dir: &Path,
) -> Result<DoseReport, CliError> {
    std::fs::create_dir_all(out_dir.join("dvh"))?;
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for case in cases {
        let ct_pre = ScalarVolume::new(
            case.ct.grid,
            Modality::Ct,
            mfs_nn::preprocess::preprocess_ct(&case.ct, clahe)?,
        )
        .map_err(CliError::from)?;
        let mri_pre = match modalities {
            Modalities::CtMri => Some(
                ScalarVolume::new(
                    case.mri.grid,
                    Modality::Mri,
                    mfs_nn::preprocess::preprocess_mri(&case.mri)?,
                )
                .map_err(CliError::from)?,
            ),
            Modalities::Ct => None,
        };
        let pred = model.predict_mask(params, &ct_pre, mri_pre.as_ref(), 0.5)?;
        if pred.is_empty_mask() {
            excluded.push(case.id.clone());
            continue;
        }
        let dmean_clean = dmean(&case.dose, &case.label_clean)?;
        let dmean_pred = dmean(&case.dose, &pred)?;
        let v20_clean = vd(&case.dose, &case.label_clean, 20.0)?;
        let v20_pred = vd(&case.dose, &pred, 20.0)?;
        rows.push(DoseRow {
            case_id: case.id.clone(),
            dmean_clean_gy: dmean_clean,
            dmean_pred_gy: dmean_pred,
            dmean_abs_diff_gy: (dmean_pred - dmean_clean).abs(),
            dmean_pct_diff: 100.0 * (dmean_pred - dmean_clean) / dmean_clean,
            v20_clean_pct: v20_clean,
            v20_pred_pct: v20_pred,
            v20_abs_diff_pct: (v20_pred - v20_clean).abs(),
        });
        // DVH curves for both contours.
        for (label, roi) in [("clean", &case.label_clean), ("pred", &pred)] {
            let curve = dvh(&case.dose, roi, DVH_BIN_GY)?;
            let mut csv = String::from("dose_gy,pct_volume\n");
            for (edge, pct) in curve {
                csv.push_str(&format!("{edge},{pct}\n"));
            }
            write_text(&out_dir.join("dvh").join(format!("{}_{label}.csv", case.id)), &csv)?;
        }
    }

    let (mut dmean_t, mut dmean_p, mut note) = (None, None, None);
    if rows.len() >= 2 {
        let clean: Vec<f64> = rows.iter().map(|r| r.dmean_clean_gy).collect();
        let pred: Vec<f64> = rows.iter().map(|r| r.dmean_pred_gy).collect();
        match paired_t_test(&clean, &pred) {
            Ok((t, p)) => {
                dmean_t = Some(t);
                dmean_p = Some(p);
            }
            Err(e) => note = Some(e.to_string()),
        }
    } else {
        note = Some("fewer than 2 comparable cases".into());
    }

    let report = DoseReport {
        rows,
        excluded_cases: excluded,
        dmean_t,
        dmean_p,
        t_test_note: note,
    };
    write_text(&out_dir.join("dose_eval.csv"), &dose_rows_csv(&report.rows))?;
    write_json(&out_dir.join("dose_summary.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------
// gridsearch

#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub w_m: f64,
    pub w_b: f64,
    pub dsc_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub argmax: GridRow,
}

pub fn grid_csv(rows: &[GridRow]) -> String {
    let mut s = String::from("w_m,w_b,dsc_mean\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.w_m, r.w_b, r.dsc_mean));
    }
    s
}

pub fn gridsearch(
    spec: &ExperimentSpec,
    wm_grid: &[f64],
    wb_grid: &[f64],
    parallel: bool,
) -> Result<GridReport, CliError> {
    spec.validate()?;
    if wm_grid.is_empty() || wb_grid.is_empty() {
        return Err(CliError::Config("empty weight grid".into()));
    }
    let dataset = Dataset::load(&spec.manifest)?;
    let train_cases = dataset.train_cases()?;
    let test_cases = dataset.eval_cases(Split::Test)?;
    let out_root = spec.out_dir.join("gridsearch");
    let seed = spec.seeds[0];

    let pairs: Vec<(f64, f64)> = wm_grid
        .iter()
        .flat_map(|&wm| wb_grid.iter().map(move |&wb| (wm, wb)))
        .collect();
    let rows = run_jobs(pairs.len(), parallel, |j| {
        let (w_m, w_b) = pairs[j];
        let mut arm = ablation_arm(spec, PROPOSED_TAG, seed);
        arm.tag = format!("wm{w_m}_wb{w_b}");
        arm.loss.w_m = w_m;
        arm.loss.w_b = w_b;
        let dir = out_root.join(format!("wm{w_m}_wb{w_b}"));
        let (_, summary) =
            train_and_eval_arm(&arm, &train_cases, &test_cases, Modalities::CtMri, &dir)?;
        let (dsc_mean, _) = metric_mean_sd(&summary, "dsc_pct");
        Ok(GridRow {
            w_m,
            w_b,
            dsc_mean,
        })
    })?;

    let argmax = rows
        .iter()
        .cloned()
        .max_by(|a, b| a.dsc_mean.partial_cmp(&b.dsc_mean).unwrap())
        .expect("nonempty grid");
    let report = GridReport { rows, argmax };
    write_text(&out_root.join("gridsearch.csv"), &grid_csv(&report.rows))?;
    write_json(&out_root.join("gridsearch_summary.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_arm_derivation() {
        let spec = test_spec();
        let a = ablation_arm(&spec, "snet+dsc", 7);
        assert_eq!(a.model.arch, Arch::Snet);
        assert_eq!(a.loss.w_m, 0.0);
        assert_eq!(a.loss.w_b, 0.0);
        assert_eq!(a.train.seed, 7);
        assert_eq!(a.train.modo_p, 0.0);
        let b = ablation_arm(&spec, "snet_ma+mb", 7);
        assert_eq!(b.model.arch, Arch::SnetMa);
        assert_eq!(b.loss.w_m, spec.loss.w_m);
        assert_eq!(b.loss.w_b, spec.loss.w_b);
    }

    #[test]
    fn modality_arm_dropout_probabilities() {
        let spec = test_spec();
        assert_eq!(modality_arm(&spec, MODEL_MRICT, 1).train.modo_p, 0.0);
        assert_eq!(modality_arm(&spec, MODEL_MODO, 1).train.modo_p, 0.5);
        assert_eq!(modality_arm(&spec, MODEL_CTONLY, 1).train.modo_p, 1.0);
    }

    #[test]
    fn five_modality_arms() {
        assert_eq!(MODALITY_ARMS.len(), 5);
        let ct_only_arms = MODALITY_ARMS
            .iter()
            .filter(|(_, m)| *m == Modalities::Ct)
            .count();
        assert_eq!(ct_only_arms, 3);
    }

    fn test_spec() -> ExperimentSpec {
        ExperimentSpec {
            name: "t".into(),
            model: mfs_nn::model::ModelConfig::snet_ma(4),
            loss: mfs_nn::loss::LossWeights::default(),
            train: mfs_nn::train::TrainConfig {
                lr0: 0.001,
                decay: 0.97,
                batch_size: 2,
                epochs: 1,
                modo_p: 0.5,
                aug: Default::default(),
                seed: 1,
                deterministic: true,
                checkpoint_every: 0,
                clahe: Default::default(),
            },
            manifest: "/tmp/x".into(),
            out_dir: "/tmp/y".into(),
            seeds: vec![1],
        }
    }
}
