//! Experiment reports: named CSV tables with optional plots, written with
//! deterministic file names.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use super::svg;
use crate::error::{Error, Result};

/// A CSV table. Cells are preformatted so that output is byte-stable.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_nums(&mut self, values: &[f64]) {
        self.rows.push(values.iter().map(|v| fmt_num(*v)).collect());
    }

    pub fn push(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Numeric view of one column; non-numeric cells become NaN.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| r[i].parse().unwrap_or(f64::NAN))
                .collect(),
        )
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let wrap = |e: csv::Error| Error::io("<csv>", std::io::Error::other(e));
        w.write_record(&self.columns).map_err(wrap)?;
        for r in &self.rows {
            w.write_record(r).map_err(wrap)?;
        }
        w.into_inner()
            .map_err(|e| Error::io("<csv>", std::io::Error::other(e.to_string())))
    }
}

pub fn fmt_num(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Plot {
    /// Line plot of `series` columns against column `x`.
    Lines {
        title: String,
        x: String,
        series: Vec<String>,
    },
    Heatmap {
        title: String,
        xs: Vec<f64>,
        matrix: DMatrix<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    /// File stem, e.g. `kernel_curves_W20`.
    pub name: String,
    pub table: Table,
    pub plot: Option<Plot>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub experiment: String,
    pub sections: Vec<Section>,
    /// Scalar results, written as `summary.json`.
    pub summary: serde_json::Map<String, serde_json::Value>,
}

impl Report {
    pub fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.into(),
            ..Default::default()
        }
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn add(&mut self, name: impl Into<String>, table: Table, plot: Option<Plot>) {
        self.sections.push(Section {
            name: name.into(),
            table,
            plot,
        });
    }

    pub fn put<T: Serialize>(&mut self, key: &str, value: T) {
        self.summary.insert(
            key.into(),
            serde_json::to_value(value).unwrap_or(serde_json::Value::Null),
        );
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.summary.get(key)?.as_f64()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Manifest {
    pub written: Vec<PathBuf>,
    /// Sections skipped because they had no rows.
    pub omitted: Vec<String>,
}

/// Writes every non-empty section as `<name>.csv` (+ `<name>.svg` when it
/// has a plot), then `summary.json` and `manifest.json`.
pub fn emit_report(report: &Report, output_dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    let mut manifest = Manifest::default();
    let write = |name: &str, bytes: &[u8], manifest: &mut Manifest| -> Result<()> {
        let path = output_dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        manifest.written.push(path);
        Ok(())
    };
    for s in &report.sections {
        if s.table.is_empty() {
            manifest.omitted.push(s.name.clone());
            continue;
        }
        write(&format!("{}.csv", s.name), &s.table.to_csv()?, &mut manifest)?;
        if let Some(plot) = &s.plot {
            let doc = match plot {
                Plot::Lines { title, x, series } => {
                    let xs = s.table.column(x).unwrap_or_default();
                    let ys: Vec<(String, Vec<f64>)> = series
                        .iter()
                        .filter_map(|c| Some((c.clone(), s.table.column(c)?)))
                        .collect();
                    svg::line_plot(title, x, &xs, &ys)
                }
                Plot::Heatmap { title, xs, matrix } => svg::heatmap(title, xs, matrix),
            };
            write(&format!("{}.svg", s.name), doc.as_bytes(), &mut manifest)?;
        }
    }
    let mut summary = serde_json::Map::new();
    summary.insert("experiment".into(), report.experiment.clone().into());
    summary.extend(report.summary.clone());
    let text = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::io("summary.json", std::io::Error::other(e)))?;
    write("summary.json", text.as_bytes(), &mut manifest)?;
    let names: Vec<String> = manifest
        .written
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let listing = serde_json::json!({ "written": names, "omitted": manifest.omitted });
    let text = serde_json::to_string_pretty(&listing)
        .map_err(|e| Error::io("manifest.json", std::io::Error::other(e)))?;
    write("manifest.json", text.as_bytes(), &mut manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sections_are_omitted() {
        let mut r = Report::new("demo");
        let mut t = Table::new(["tau", "k"]);
        t.push_nums(&[0.0, 1.0]);
        t.push_nums(&[0.5, 0.25]);
        r.add(
            "curve",
            t,
            Some(Plot::Lines {
                title: "k".into(),
                x: "tau".into(),
                series: vec!["k".into()],
            }),
        );
        r.add("nothing", Table::new(["a"]), None);
        let dir = tempfile::tempdir().unwrap();
        let m = emit_report(&r, dir.path()).unwrap();
        assert_eq!(m.omitted, vec!["nothing"]);
        let names: Vec<_> = m
            .written
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        assert_eq!(names, ["curve.csv", "curve.svg", "summary.json", "manifest.json"]);
        let csv = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
        assert_eq!(csv, "tau,k\n0,1\n0.5,0.25\n");
    }
}
