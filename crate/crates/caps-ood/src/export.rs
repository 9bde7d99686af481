//! CSV writers for scores, matrices, affinity statistics and profiles.

use std::fmt::Write as _;
use std::path::Path;

use caps_ood_core::caps::{Affinity, ProfileRow};
use caps_ood_core::linalg::Matrix;
use caps_ood_core::metrics::EvalReport;

use crate::bytes::write_file;
use crate::Result;

pub fn scores_csv(rows: &[(usize, f64)]) -> String {
    let mut out = String::from("index,pred_class,score\n");
    for (i, (class, score)) in rows.iter().enumerate() {
        writeln!(out, "{i},{class},{score}").unwrap();
    }
    out
}

/// Square or rectangular matrix with a `row` column and `c0..` headers.
pub fn matrix_csv(m: &Matrix, prefix: &str) -> String {
    let mut out = String::from("row");
    for j in 0..m.cols() {
        write!(out, ",{prefix}{j}").unwrap();
    }
    out.push('\n');
    for i in 0..m.rows() {
        write!(out, "{i}").unwrap();
        for v in m.row(i) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn affinity_csv(rows: &[Affinity]) -> String {
    let mut out = String::from("index,pred_class,matched_core_mean,other_core_mean\n");
    for (i, a) in rows.iter().enumerate() {
        writeln!(
            out,
            "{i},{},{},{}",
            a.pred_class, a.matched_core_mean, a.other_core_mean
        )
        .unwrap();
    }
    out
}

pub fn profile_csv(rows: &[ProfileRow]) -> String {
    let mut out = String::from("rank,latent,id_mean,sample_mean\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.rank, r.latent, r.id_mean, r.sample_mean
        )
        .unwrap();
    }
    out
}

pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("metric,p,dataset,auroc,fpr95,n_id,n_ood\n");
    for d in &report.datasets {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            report.metric, report.p, d.name, d.auroc, d.fpr95, d.n_id, d.n_ood
        )
        .unwrap();
    }
    writeln!(
        out,
        "{},{},average,{},{},,",
        report.metric, report.p, report.average.auroc, report.average.fpr95
    )
    .unwrap();
    out
}

pub fn write_csv(text: &str, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), text.as_bytes())
}

pub fn write_report_csv(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    write_csv(&report_csv(report), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_header_and_rows() {
        let csv = scores_csv(&[(2, 0.5), (0, 1.25)]);
        assert_eq!(csv, "index,pred_class,score\n0,2,0.5\n1,0,1.25\n");
    }

    #[test]
    fn matrix_layout() {
        let m = Matrix::from_rows(&[&[1.0, 0.5], &[0.5, 1.0]]).unwrap();
        assert_eq!(matrix_csv(&m, "c"), "row,c0,c1\n0,1,0.5\n1,0.5,1\n");
    }
}
