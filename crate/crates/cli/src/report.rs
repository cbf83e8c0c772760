//! Report serialization: JSON for the nested cohort/patient/strata
//! structure, CSV with one row per patient and stratum. Output bytes are
//! deterministic for a fixed report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use lnseg_core::cv::CvReport;
use lnseg_core::eval::{
    patient_stratum_metrics, EvalReport, MeanStd, SizeStratum, StationGroup,
};

use crate::sidecar::write_json;
use crate::{Result, ToolError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(ToolError::Invalid(format!(
                "unknown report format {other:?}; expected json or csv"
            ))),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn fmt_mean(v: &Option<MeanStd>) -> (String, String) {
    match v {
        Some(ms) => (format!("{}", ms.mean), format!("{}", ms.std)),
        None => (String::new(), String::new()),
    }
}

/// Write an evaluation report. The CSV form has one row per patient and
/// stratum with the columns: patient_id, stratum, pt, dice, dice_tp,
/// gt_perc, recall_num, recall_den, fppp.
pub fn write_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Json => write_json(report, path),
        ReportFormat::Csv => {
            let mut out = String::new();
            out.push_str("patient_id,stratum,pt,dice,dice_tp,gt_perc,recall_num,recall_den,fppp\n");
            for eval in &report.patients {
                for size in SizeStratum::ALL {
                    for group in StationGroup::ALL {
                        let s = patient_stratum_metrics(eval, size, group);
                        let m = &eval.metrics;
                        writeln!(
                            out,
                            "{},{}/{},{},{},{},{},{},{},{}",
                            m.patient_id,
                            size.code(),
                            group.code(),
                            m.pt,
                            m.dice,
                            fmt_opt(s.dice_tp),
                            fmt_opt(s.gt_perc),
                            s.recall_num,
                            s.recall_den,
                            m.fp,
                        )
                        .expect("string write");
                    }
                }
            }
            fs::write(path, out).map_err(|e| ToolError::io(path, e))
        }
    }
}

pub fn write_cv_report(report: &CvReport, path: &Path) -> Result<()> {
    write_json(report, path)
}

/// Emit per-model CSV tables into `dir`: a fold table (one row per fold
/// plus a pooled total), a size/station strata table, and per-station
/// recall counts.
pub fn write_cv_tables(report: &CvReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| ToolError::io(dir, e))?;
    for model in &report.models {
        let mut folds = String::new();
        folds.push_str(
            "fold,pt,n_gt,dice_mean,dice_std,dice_tp_mean,dice_tp_std,gt_perc_mean,gt_perc_std,\
             recall,recall_pw_mean,recall_pw_std,fppp_mean,fppp_std\n",
        );
        for row in model.fold_rows.iter().chain(std::iter::once(&model.total)) {
            let label = row
                .fold
                .map(|f| (f + 1).to_string())
                .unwrap_or_else(|| "total".to_string());
            let (dtp_m, dtp_s) = fmt_mean(&row.metrics.dice_tp);
            let (gtp_m, gtp_s) = fmt_mean(&row.metrics.gt_perc);
            let (rpw_m, rpw_s) = fmt_mean(&row.metrics.recall_pw);
            writeln!(
                folds,
                "{label},{},{},{},{},{dtp_m},{dtp_s},{gtp_m},{gtp_s},{},{rpw_m},{rpw_s},{},{}",
                row.pt,
                row.n_gt,
                row.metrics.dice.mean,
                row.metrics.dice.std,
                fmt_opt(row.metrics.recall_global),
                row.metrics.fppp.mean,
                row.metrics.fppp.std,
            )
            .expect("string write");
        }
        let fold_path = dir.join(format!("{}_folds.csv", model.model));
        fs::write(&fold_path, folds).map_err(|e| ToolError::io(&fold_path, e))?;

        let mut strata = String::new();
        strata.push_str(
            "size,stations,gt_total,tp,recall,recall_pw_mean,recall_pw_std,\
             dice_tp_mean,dice_tp_std,gt_perc_mean,gt_perc_std\n",
        );
        for row in &model.strata {
            let (rpw_m, rpw_s) = fmt_mean(&row.recall_pw);
            let (dtp_m, dtp_s) = fmt_mean(&row.dice_tp);
            let (gtp_m, gtp_s) = fmt_mean(&row.gt_perc);
            writeln!(
                strata,
                "{},{},{},{},{},{rpw_m},{rpw_s},{dtp_m},{dtp_s},{gtp_m},{gtp_s}",
                row.size.code(),
                row.group.code(),
                row.gt_total,
                row.tp,
                fmt_opt(row.recall),
            )
            .expect("string write");
        }
        let strata_path = dir.join(format!("{}_strata.csv", model.model));
        fs::write(&strata_path, strata).map_err(|e| ToolError::io(&strata_path, e))?;

        let mut stations = String::new();
        stations.push_str("station,detected,total\n");
        for s in &model.per_station {
            writeln!(stations, "{},{},{}", s.station, s.detected, s.total).expect("string write");
        }
        let st_path = dir.join(format!("{}_stations.csv", model.model));
        fs::write(&st_path, stations).map_err(|e| ToolError::io(&st_path, e))?;
    }
    Ok(())
}
