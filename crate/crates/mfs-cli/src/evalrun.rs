//! Checkpoint evaluation: per-case DSC/ASD/HD95 against the clean label
//! at threshold 0.5, plus predicted-contour Dmean and V20 under the
//! case's dose grid.
//!
//! Empty predictions have no surface or dose statistics; such cases are
//! flagged, their DSC of 0 stays in the DSC aggregate, and they are
//! excluded from the other aggregates with a warning count.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use mfs_core::dose::{dmean, vd};
use mfs_core::metrics::{asd, dsc, hd95};
use mfs_core::stats::{five_number, mean, sample_sd, FiveNumber};
use mfs_core::volume::{Modality, ScalarVolume};
use mfs_nn::model::Model;
use mfs_nn::params::ParamStore;
use mfs_nn::preprocess::{preprocess_ct, preprocess_mri, ClaheConfig};

use crate::data::EvalCase;
use crate::error::CliError;

pub const EVAL_THRESHOLD: f64 = 0.5;
pub const V_THRESHOLD_GY: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modalities {
    #[serde(rename = "ct+mri")]
    CtMri,
    #[serde(rename = "ct")]
    Ct,
}

impl fmt::Display for Modalities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modalities::CtMri => write!(f, "ct+mri"),
            Modalities::Ct => write!(f, "ct"),
        }
    }
}

impl FromStr for Modalities {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ct+mri" | "ctmri" | "ct,mri" => Ok(Modalities::CtMri),
            "ct" => Ok(Modalities::Ct),
            other => Err(format!("unknown modalities {other:?}; use ct+mri or ct")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub case_id: String,
    pub dsc_pct: f64,
    pub asd_mm: Option<f64>,
    pub hd95_mm: Option<f64>,
    pub dmean_gy: Option<f64>,
    pub v20_pct: Option<f64>,
    pub model_tag: String,
    pub input_modalities: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub five_number: FiveNumber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub model_tag: String,
    pub input_modalities: String,
    pub n_cases: usize,
    pub empty_predictions: usize,
    pub metrics: Vec<MetricSummary>,
}

/// Evaluate one model over held-out cases.
pub fn run_eval(
    model: &Model,
    params: &ParamStore<f32>,
    clahe: &ClaheConfig,
    cases: &[EvalCase],
    modalities: Modalities,
    tag: &str,
) -> Result<(Vec<MetricsRecord>, EvalSummary), CliError> {
    if cases.is_empty() {
        return Err(CliError::Config("no evaluation cases".into()));
    }
    let mut records = Vec::with_capacity(cases.len());
    for case in cases {
        let ct_pre = ScalarVolume::new(case.ct.grid, Modality::Ct, preprocess_ct(&case.ct, clahe)?)
            .map_err(CliError::from)?;
        let mri_pre = match modalities {
            Modalities::CtMri => Some(
                ScalarVolume::new(
                    case.mri.grid,
                    Modality::Mri,
                    preprocess_mri(&case.mri)?,
                )
                .map_err(CliError::from)?,
            ),
            Modalities::Ct => None,
        };
        let mask = model.predict_mask(params, &ct_pre, mri_pre.as_ref(), EVAL_THRESHOLD)?;

        let d = dsc(&mask, &case.label_clean)?;
        let (a, h, dm, v20) = if mask.is_empty_mask() {
            (None, None, None, None)
        } else {
            (
                Some(asd(&mask, &case.label_clean)?),
                Some(hd95(&mask, &case.label_clean)?),
                Some(dmean(&case.dose, &mask)?),
                Some(vd(&case.dose, &mask, V_THRESHOLD_GY)?),
            )
        };
        records.push(MetricsRecord {
            case_id: case.id.clone(),
            dsc_pct: d,
            asd_mm: a,
            hd95_mm: h,
            dmean_gy: dm,
            v20_pct: v20,
            model_tag: tag.to_string(),
            input_modalities: modalities.to_string(),
        });
    }
    let summary = summarize(&records, tag, modalities);
    Ok((records, summary))
}

pub fn summarize(records: &[MetricsRecord], tag: &str, modalities: Modalities) -> EvalSummary {
    let col = |name: &str, values: Vec<f64>| -> Option<MetricSummary> {
        if values.is_empty() {
            return None;
        }
        Some(MetricSummary {
            metric: name.to_string(),
            n: values.len(),
            mean: mean(&values),
            sd: sample_sd(&values),
            five_number: five_number(&values),
        })
    };
    let mut metrics = Vec::new();
    metrics.extend(col("dsc_pct", records.iter().map(|r| r.dsc_pct).collect()));
    metrics.extend(col(
        "asd_mm",
        records.iter().filter_map(|r| r.asd_mm).collect(),
    ));
    metrics.extend(col(
        "hd95_mm",
        records.iter().filter_map(|r| r.hd95_mm).collect(),
    ));
    metrics.extend(col(
        "dmean_gy",
        records.iter().filter_map(|r| r.dmean_gy).collect(),
    ));
    metrics.extend(col(
        "v20_pct",
        records.iter().filter_map(|r| r.v20_pct).collect(),
    ));
    EvalSummary {
        model_tag: tag.to_string(),
        input_modalities: modalities.to_string(),
        n_cases: records.len(),
        empty_predictions: records.iter().filter(|r| r.asd_mm.is_none()).count(),
        metrics,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-case records as CSV, one row per case.
pub fn records_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(
        "case_id,dsc_pct,asd_mm,hd95_mm,dmean_gy,v20_pct,model_tag,input_modalities\n",
    );
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.case_id,
            r.dsc_pct,
            opt(r.asd_mm),
            opt(r.hd95_mm),
            opt(r.dmean_gy),
            opt(r.v20_pct),
            r.model_tag,
            r.input_modalities
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modalities_parse() {
        assert_eq!("ct+mri".parse::<Modalities>().unwrap(), Modalities::CtMri);
        assert_eq!("CT".parse::<Modalities>().unwrap(), Modalities::Ct);
        assert!("pet".parse::<Modalities>().is_err());
    }

    #[test]
    fn summary_mean_matches_recomputed_csv_column() {
        let records = vec![
            MetricsRecord {
                case_id: "a".into(),
                dsc_pct: 60.0,
                asd_mm: Some(2.0),
                hd95_mm: Some(5.0),
                dmean_gy: Some(20.0),
                v20_pct: Some(40.0),
                model_tag: "t".into(),
                input_modalities: "ct".into(),
            },
            MetricsRecord {
                case_id: "b".into(),
                dsc_pct: 70.0,
                asd_mm: None,
                hd95_mm: None,
                dmean_gy: None,
                v20_pct: None,
                model_tag: "t".into(),
                input_modalities: "ct".into(),
            },
        ];
        let summary = summarize(&records, "t", Modalities::Ct);
        let csv = records_csv(&records);
        // Recompute the DSC mean from the CSV text.
        let vals: Vec<f64> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let dsc_summary = summary.metrics.iter().find(|m| m.metric == "dsc_pct").unwrap();
        assert!((dsc_summary.mean - m).abs() <= 1e-9);
        assert_eq!(summary.empty_predictions, 1);
        // ASD aggregate excludes the empty-prediction case.
        let asd_summary = summary.metrics.iter().find(|m| m.metric == "asd_mm").unwrap();
        assert_eq!(asd_summary.n, 1);
    }
}
