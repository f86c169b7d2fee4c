//! Data ingestion and report serialization.
//!
//! All outputs are delimited text plus one JSON manifest; floats are written
//! with Rust's shortest-roundtrip formatting so identical runs produce
//! byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fdr::{SelectionReport, WDraws};
use crate::preprocess::{center_columns, center_vector, nonparanormal_transform};
use crate::regression::PosteriorDraws;

/// Ingestion options for [`load_csv`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Name of the response column.
    pub response: String,
    /// Optional censoring-indicator column: 1 = event observed, 0 = censored.
    pub censoring: Option<String>,
    /// Center the response and every covariate column.
    pub center: bool,
    /// Apply the rank-based Gaussianization to the covariates.
    pub nonparanormal: bool,
    /// In AFT mode, take logs of the response at ingestion. Set to false when
    /// the file already stores log times.
    pub log_response: bool,
}

impl LoadOptions {
    pub fn new(response: impl Into<String>) -> Self {
        Self {
            response: response.into(),
            censoring: None,
            center: true,
            nonparanormal: false,
            log_response: false,
        }
    }
}

/// Parse a comma-separated file (header row, UTF-8, `.` decimals) into a
/// dataset, applying the configured preprocessing.
pub fn load_csv(path: &Path, options: &LoadOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let response_idx = headers
        .iter()
        .position(|h| *h == options.response)
        .ok_or_else(|| Error::MissingColumn(options.response.clone()))?;
    let censor_idx = match &options.censoring {
        Some(name) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.clone()))?,
        ),
        None => None,
    };

    let covariate_idx: Vec<usize> = (0..headers.len())
        .filter(|&j| j != response_idx && Some(j) != censor_idx)
        .collect();
    if covariate_idx.is_empty() {
        return Err(Error::InvalidData("no covariate columns".into()));
    }
    let names: Vec<String> = covariate_idx.iter().map(|&j| headers[j].clone()).collect();

    let mut y_raw = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut censored = Vec::new();
    for (row_num, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: row_num + 2,
            column: "<record>".into(),
            message: e.to_string(),
        })?;
        let parse_cell = |idx: usize| -> Result<f64> {
            let raw = record.get(idx).ok_or_else(|| Error::Parse {
                row: row_num + 2,
                column: headers[idx].clone(),
                message: "missing field".into(),
            })?;
            raw.trim().parse::<f64>().map_err(|_| Error::Parse {
                row: row_num + 2,
                column: headers[idx].clone(),
                message: format!("cannot parse {raw:?} as a number"),
            })
        };
        y_raw.push(parse_cell(response_idx)?);
        if let Some(cidx) = censor_idx {
            let v = parse_cell(cidx)?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::Parse {
                    row: row_num + 2,
                    column: headers[cidx].clone(),
                    message: format!("censoring indicator must be 0 or 1, got {v}"),
                });
            }
            censored.push(v == 0.0);
        }
        let mut row = Vec::with_capacity(covariate_idx.len());
        for &j in &covariate_idx {
            row.push(parse_cell(j)?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidData("no data rows".into()));
    }

    let n = rows.len();
    let p = covariate_idx.len();
    let mut x = DMatrix::zeros(n, p);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let mut y = DVector::from_vec(y_raw);

    if options.log_response {
        for (i, v) in y.iter_mut().enumerate() {
            if *v <= 0.0 {
                return Err(Error::Parse {
                    row: i + 2,
                    column: options.response.clone(),
                    message: format!("response must be positive to take logs, got {v}"),
                });
            }
            *v = v.ln();
        }
    }
    if options.nonparanormal {
        x = nonparanormal_transform(&x, &names)?;
    }
    if options.center {
        center_columns(&mut x);
        center_vector(&mut y);
    }
    let censoring = censor_idx.map(|_| censored);
    Dataset::new(y, x, censoring, Some(names))
}

/// Everything one `select` run writes to disk.
#[derive(Debug, Clone)]
pub struct ReportBundle<'a> {
    pub report: &'a SelectionReport,
    pub two_sided: &'a DVector<f64>,
    pub w: &'a WDraws,
    pub draws: &'a PosteriorDraws,
    pub names: &'a [String],
    pub manifest: serde_json::Value,
    /// Per-chain diagnostics rows: (chain index, mean z, mean |z|,
    /// add-delete acceptance, within-model acceptance, mean σ²).
    pub chain_diagnostics: Vec<(usize, f64, f64, f64, f64, f64)>,
}

/// Serialize a selection run: `selection.csv`, `bfdr_curve.csv`,
/// `edge_ppi.csv`, `omega_mean.csv`, `diagnostics.csv`, and `manifest.json`.
pub fn write_report(outdir: &Path, bundle: &ReportBundle) -> Result<()> {
    fs::create_dir_all(outdir)?;
    let report = bundle.report;
    let p = report.upper_bound.len();

    let mut selection = String::new();
    selection.push_str(
        "variable,name,upper_bound,two_sided_bound,w_mean,w_q05,w_q25,w_q50,w_q75,w_q95,beta_mean,beta_tilde_mean,selected\n",
    );
    let beta_mean = bundle.draws.beta_mean();
    let beta_tilde_mean = bundle.draws.beta_tilde_mean();
    for j in 0..p {
        let qs = bundle.w.column_quantiles(j, &[0.05, 0.25, 0.5, 0.75, 0.95]);
        let selected = report.selected.contains(&j);
        selection.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            j + 1,
            bundle.names[j],
            report.upper_bound[j],
            bundle.two_sided[j],
            bundle.w.column_mean(j),
            qs[0],
            qs[1],
            qs[2],
            qs[3],
            qs[4],
            beta_mean[j],
            beta_tilde_mean[j],
            u8::from(selected),
        ));
    }
    fs::write(outdir.join("selection.csv"), selection)?;

    let mut curve = String::new();
    curve.push_str("rank,variable,name,upper_bound,running_bfdr,selected\n");
    for (k, &j) in report.order.iter().enumerate() {
        curve.push_str(&format!(
            "{},{},{},{},{},{}\n",
            k + 1,
            j + 1,
            bundle.names[j],
            report.upper_bound[j],
            report.bfdr_curve[k],
            u8::from(report.selected.contains(&j)),
        ));
    }
    fs::write(outdir.join("bfdr_curve.csv"), curve)?;

    write_matrix_csv(&outdir.join("edge_ppi.csv"), &bundle.draws.edge_ppi, bundle.names)?;
    write_matrix_csv(&outdir.join("omega_mean.csv"), &bundle.draws.omega_mean, bundle.names)?;

    let mut diag = String::new();
    diag.push_str("chain,geweke_mean_z,geweke_mean_abs_z,accept_add_delete,accept_within_model,sigma2_mean\n");
    for (chain, mz, maz, aad, awm, s2) in &bundle.chain_diagnostics {
        diag.push_str(&format!("{},{},{},{},{},{}\n", chain, mz, maz, aad, awm, s2));
    }
    fs::write(outdir.join("diagnostics.csv"), diag)?;

    let manifest = serde_json::to_string_pretty(&bundle.manifest)?;
    fs::write(outdir.join("manifest.json"), manifest)?;
    Ok(())
}

fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let mut out = String::new();
    out.push_str("name");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..m.nrows() {
        out.push_str(&names[i]);
        for j in 0..m.ncols() {
            out.push(',');
            out.push_str(&format!("{}", m[(i, j)]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// The parts of a written report that round-trip back into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportReadback {
    pub upper_bound: Vec<f64>,
    pub selected: Vec<usize>,
    pub bfdr_curve: Vec<f64>,
    pub order: Vec<usize>,
    pub q: f64,
}

/// Re-read `selection.csv`, `bfdr_curve.csv`, and the manifest.
pub fn read_report(outdir: &Path) -> Result<ReportReadback> {
    let mut upper = Vec::new();
    let mut selected = Vec::new();
    let mut reader = csv::Reader::from_path(outdir.join("selection.csv"))?;
    for record in reader.records() {
        let record = record?;
        let j: usize = record[0].parse().map_err(|_| Error::Parse {
            row: upper.len() + 2,
            column: "variable".into(),
            message: "bad index".into(),
        })?;
        upper.push(record[2].parse::<f64>().map_err(|_| Error::Parse {
            row: j + 1,
            column: "upper_bound".into(),
            message: "bad float".into(),
        })?);
        if &record[record.len() - 1] == "1" {
            selected.push(j - 1);
        }
    }
    let mut order = Vec::new();
    let mut curve = Vec::new();
    let mut reader = csv::Reader::from_path(outdir.join("bfdr_curve.csv"))?;
    for record in reader.records() {
        let record = record?;
        let variable: usize = record[1].parse().map_err(|_| Error::Parse {
            row: order.len() + 2,
            column: "variable".into(),
            message: "bad index".into(),
        })?;
        order.push(variable - 1);
        curve.push(record[4].parse::<f64>().map_err(|_| Error::Parse {
            row: order.len() + 1,
            column: "running_bfdr".into(),
            message: "bad float".into(),
        })?);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(outdir.join("manifest.json"))?)?;
    let q = manifest
        .get("q")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::InvalidData("manifest missing q".into()))?;
    Ok(ReportReadback { upper_bound: upper, selected, bfdr_curve: curve, order, q })
}

/// Write a replicate metrics table as CSV (per-replicate rows plus mean/sd
/// summary rows) next to its manifest.
pub fn write_metrics_table(
    outdir: &Path,
    table: &crate::sim::ReplicateTable,
    manifest: serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(outdir)?;
    let mut out = String::new();
    out.push_str("kind,method,replicate,fdr,tpr,mcc,f1,frobenius,graph_f1,error\n");
    let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in &table.rows {
        match &row.metrics {
            Some(m) => out.push_str(&format!(
                "replicate,{},{},{},{},{},{},{},{},\n",
                row.method,
                row.replicate,
                m.fdr,
                m.tpr,
                m.mcc,
                m.f1,
                fmt_opt(m.frobenius),
                fmt_opt(m.graph_f1),
            )),
            None => out.push_str(&format!(
                "replicate,{},{},,,,,,,{}\n",
                row.method,
                row.replicate,
                row.error.clone().unwrap_or_default(),
            )),
        }
    }
    for s in &table.summary {
        out.push_str(&format!(
            "mean,{},{},{},{},{},{},{},{},\n",
            s.method,
            s.replicates,
            s.mean.fdr,
            s.mean.tpr,
            s.mean.mcc,
            s.mean.f1,
            fmt_opt(s.mean.frobenius),
            fmt_opt(s.mean.graph_f1),
        ));
        out.push_str(&format!(
            "sd,{},{},{},{},{},{},{},{},\n",
            s.method,
            s.failures,
            s.sd.fdr,
            s.sd.tpr,
            s.sd.mcc,
            s.sd.f1,
            fmt_opt(s.sd.frobenius),
            fmt_opt(s.sd.graph_f1),
        ));
    }
    fs::write(outdir.join("metrics.csv"), out)?;
    fs::write(
        outdir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Write sensitivity rows as CSV next to the manifest.
pub fn write_sensitivity_table(
    outdir: &Path,
    rows: &[crate::sim::SensitivityRow],
    manifest: serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(outdir)?;
    let mut out = String::new();
    out.push_str("param,value,fdr,tpr,frobenius,graph_f1\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.param, r.value, r.fdr, r.tpr, r.frobenius, r.graph_f1
        ));
    }
    fs::write(outdir.join("sensitivity.csv"), out)?;
    fs::write(
        outdir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Collect a directory's files as (relative name, bytes), sorted by name.
/// Used by determinism checks.
pub fn snapshot_dir(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            files.push((PathBuf::from(entry.file_name()), fs::read(entry.path())?));
        }
    }
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("bkf-io-test-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn load_small_csv() {
        let dir = tmpdir("load");
        let path = dir.join("data.csv");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "y,a").unwrap();
        writeln!(f, "1.0,2.0").unwrap();
        writeln!(f, "2.0,4.0").unwrap();
        writeln!(f, "3.0,9.0").unwrap();
        let mut opts = LoadOptions::new("y");
        opts.center = false;
        let d = load_csv(&path, &opts).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.p(), 1);
        assert_eq!(d.names, vec!["a"]);
        assert_eq!(d.y[1], 2.0);

        // centered variant
        opts.center = true;
        let d = load_csv(&path, &opts).unwrap();
        assert!(d.y.sum().abs() < 1e-12);
        assert!(d.x.column(0).sum().abs() < 1e-12);
    }

    #[test]
    fn load_reports_bad_cells_with_location() {
        let dir = tmpdir("badcell");
        let path = dir.join("data.csv");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "y,a").unwrap();
        writeln!(f, "1.0,2.0").unwrap();
        writeln!(f, "2.0,NA").unwrap();
        let opts = LoadOptions::new("y");
        match load_csv(&path, &opts) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "a");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_missing_column_and_ragged_rows() {
        let dir = tmpdir("ragged");
        let path = dir.join("data.csv");
        let mut f = fs::File::create(&path).unwrap();
        writeln!(f, "y,a").unwrap();
        writeln!(f, "1.0,2.0").unwrap();
        writeln!(f, "2.0").unwrap();
        let opts = LoadOptions::new("y");
        assert!(matches!(load_csv(&path, &opts), Err(Error::Parse { .. })));

        let opts = LoadOptions::new("zz");
        match load_csv(&path, &opts) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "zz"),
            other => panic!("expected missing column, got {other:?}"),
        }
    }
}
