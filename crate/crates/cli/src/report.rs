//! Per-scene metric CSVs and their aggregation into the report grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ambisep::scene::Split;

use crate::CliError;

pub const EVAL_HEADER: &str = "scene_id,split,variant,sdr,sir,sar,sdr_i,sir_i,filter_len,status";

/// One row of a per-scene evaluation CSV. `filter_len` records which
/// decomposition variant produced the numbers (1 is the plain projection).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub scene_id: String,
    pub split: Split,
    pub variant: String,
    pub sdr: Option<f64>,
    pub sir: Option<f64>,
    pub sar: Option<f64>,
    pub sdr_i: Option<f64>,
    pub sir_i: Option<f64>,
    pub filter_len: usize,
    pub status: String,
}

impl EvalRow {
    pub fn to_csv_line(&self) -> String {
        let num = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.scene_id,
            self.split,
            self.variant,
            num(self.sdr),
            num(self.sir),
            num(self.sar),
            num(self.sdr_i),
            num(self.sir_i),
            self.filter_len,
            self.status
        )
    }
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<(), CliError> {
    let mut text = String::from(EVAL_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.to_csv_line());
        text.push('\n');
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == EVAL_HEADER => {}
        other => {
            return Err(CliError::Data(format!(
                "{}: unexpected header {other:?}",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(CliError::Data(format!(
                "{}: line {} has {} fields",
                path.display(),
                i + 2,
                fields.len()
            )));
        }
        let opt = |s: &str| -> Result<Option<f64>, CliError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|_| {
                    CliError::Data(format!("{}: bad number {s:?}", path.display()))
                })
            }
        };
        rows.push(EvalRow {
            scene_id: fields[0].to_string(),
            split: fields[1]
                .parse()
                .map_err(|e: String| CliError::Data(format!("{}: {e}", path.display())))?,
            variant: fields[2].to_string(),
            sdr: opt(fields[3])?,
            sir: opt(fields[4])?,
            sar: opt(fields[5])?,
            sdr_i: opt(fields[6])?,
            sir_i: opt(fields[7])?,
            filter_len: fields[8]
                .parse()
                .map_err(|_| CliError::Data(format!("{}: bad filter_len", path.display())))?,
            status: fields[9].to_string(),
        });
    }
    Ok(rows)
}

/// Median and quartiles by linear interpolation (inclusive): the q-quantile
/// sits at position `q * (n - 1)` in the sorted sample.
pub fn quartiles(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let at = |q: f64| -> f64 {
        let pos = q * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    };
    Some((at(0.25), at(0.5), at(0.75)))
}

/// Quartile summary of one metric over one (variant, split) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Aggregated report: per (variant, split), scene count and summaries of
/// SDR improvement, SIR improvement, and SAR.
#[derive(Debug, Clone, Default)]
pub struct ReportSummary {
    pub cells: BTreeMap<(String, String), CellSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary {
    pub count: usize,
    pub sdr_i: MetricSummary,
    pub sir_i: MetricSummary,
    pub sar: MetricSummary,
}

/// Aggregate rows with `status == ok`. Cells with no usable rows are
/// omitted (and reported through the returned warning list).
pub fn summarize(rows: &[EvalRow]) -> (ReportSummary, Vec<String>) {
    let mut grouped: BTreeMap<(String, String), Vec<&EvalRow>> = BTreeMap::new();
    let mut warnings = Vec::new();
    for row in rows {
        grouped
            .entry((row.variant.clone(), row.split.to_string()))
            .or_default()
            .push(row);
    }
    let mut cells = BTreeMap::new();
    for ((variant, split), group) in grouped {
        let ok: Vec<&&EvalRow> = group.iter().filter(|r| r.status == "ok").collect();
        if ok.is_empty() {
            warnings.push(format!("{variant}/{split}: no usable rows, omitted"));
            continue;
        }
        let collect = |f: fn(&EvalRow) -> Option<f64>| -> Vec<f64> {
            ok.iter().filter_map(|r| f(r)).collect()
        };
        let summary = |values: Vec<f64>| -> MetricSummary {
            let (q1, median, q3) = quartiles(&values).expect("non-empty");
            MetricSummary { q1, median, q3 }
        };
        cells.insert(
            (variant, split),
            CellSummary {
                count: ok.len(),
                sdr_i: summary(collect(|r| r.sdr_i)),
                sir_i: summary(collect(|r| r.sir_i)),
                sar: summary(collect(|r| r.sar)),
            },
        );
    }
    (ReportSummary { cells }, warnings)
}

impl ReportSummary {
    pub fn get(&self, variant: &str, split: Split) -> Option<&CellSummary> {
        self.cells.get(&(variant.to_string(), split.to_string()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "variant,split,n,sdr_i_q1,sdr_i_median,sdr_i_q3,sir_i_q1,sir_i_median,sir_i_q3,sar_q1,sar_median,sar_q3\n",
        );
        for ((variant, split), cell) in &self.cells {
            writeln!(
                out,
                "{variant},{split},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                cell.count,
                cell.sdr_i.q1,
                cell.sdr_i.median,
                cell.sdr_i.q3,
                cell.sir_i.q1,
                cell.sir_i.median,
                cell.sir_i.q3,
                cell.sar.q1,
                cell.sar.median,
                cell.sar.q3,
            )
            .expect("write to string");
        }
        out
    }

    /// Text table: one block per metric, variants as rows, splits as
    /// columns, `median [q1, q3]` in each cell.
    pub fn to_table(&self) -> String {
        let mut variants: Vec<String> = self
            .cells
            .keys()
            .map(|(v, _)| v.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        variants.sort_by_key(|v| (v != "IRM", v.clone()));
        let splits: Vec<String> = self
            .cells
            .keys()
            .map(|(_, s)| s.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();

        let mut out = String::new();
        for (title, pick) in [
            ("SDR improvement (dB)", 0usize),
            ("SIR improvement (dB)", 1),
            ("SAR (dB)", 2),
        ] {
            writeln!(out, "{title}").unwrap();
            write!(out, "{:<10}", "").unwrap();
            for s in &splits {
                write!(out, "{s:>24}").unwrap();
            }
            out.push('\n');
            for v in &variants {
                write!(out, "{v:<10}").unwrap();
                for s in &splits {
                    match self.cells.get(&(v.clone(), s.clone())) {
                        Some(cell) => {
                            let m = match pick {
                                0 => cell.sdr_i,
                                1 => cell.sir_i,
                                _ => cell.sar,
                            };
                            let text =
                                format!("{:.2} [{:.2}, {:.2}]", m.median, m.q1, m.q3);
                            write!(out, "{text:>24}").unwrap();
                        }
                        None => write!(out, "{:>24}", "-").unwrap(),
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}
