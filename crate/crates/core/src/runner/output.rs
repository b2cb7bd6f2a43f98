use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{MetricRecord, MetricTrace};

pub const TRACE_HEADER: &str =
    "run,t,algorithm,msd,frechet_variance,consensus_bias,cost,grad_norm_sq";
pub const SUMMARY_HEADER: &str = "t,algorithm,mean_msd,mean_vf";

/// One line of the trace CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub run: usize,
    pub algorithm: String,
    pub record: MetricRecord,
}

/// Flattens per-run, per-algorithm traces into rows ordered by
/// `(run, algorithm, t)`.
pub fn trace_rows<'a>(
    traces: impl IntoIterator<Item = (usize, &'a str, &'a MetricTrace)>,
) -> Vec<TraceRow> {
    let mut rows: Vec<TraceRow> = traces
        .into_iter()
        .flat_map(|(run, algorithm, trace)| {
            trace.records().iter().map(move |r| TraceRow {
                run,
                algorithm: algorithm.to_string(),
                record: r.clone(),
            })
        })
        .collect();
    rows.sort_by(|a, b| (a.run, &a.algorithm, a.record.t).cmp(&(b.run, &b.algorithm, b.record.t)));
    rows
}

/// Shortest decimal that parses back to the same `f64`.
fn fmt_float(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_trace_csv(rows: &[TraceRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::contract("refusing to write an empty trace"));
    }
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "{TRACE_HEADER}").map_err(io)?;
    for row in rows {
        let r = &row.record;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.run,
            r.t,
            row.algorithm,
            fmt_float(r.msd),
            fmt_float(r.frechet_variance),
            fmt_float(r.consensus_bias),
            fmt_float(r.cost),
            fmt_float(r.grad_norm_sq)
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != TRACE_HEADER {
        return Err(Error::Data(format!(
            "{}: unexpected header `{header}`",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let bad = |msg: String| Error::Data(format!("{} line {line}: {msg}", path.display()));
        let record = record.map_err(|e| bad(e.to_string()))?;
        let float = |j: usize| -> Result<Option<f64>> {
            match &record[j] {
                "" => Ok(None),
                s => s
                    .parse()
                    .map(Some)
                    .map_err(|e| bad(format!("column {j}: {e}"))),
            }
        };
        rows.push(TraceRow {
            run: record[0].parse().map_err(|e| bad(format!("run: {e}")))?,
            algorithm: record[2].to_string(),
            record: MetricRecord {
                t: record[1].parse().map_err(|e| bad(format!("t: {e}")))?,
                msd: float(3)?,
                frechet_variance: float(4)?,
                consensus_bias: float(5)?,
                cost: float(6)?,
                grad_norm_sq: float(7)?,
            },
        });
    }
    Ok(rows)
}

/// Per-round mean over runs of one algorithm.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub t: usize,
    pub algorithm: String,
    pub mean_msd: Option<f64>,
    pub mean_vf: Option<f64>,
}

/// Arithmetic means of MSD and Fréchet variance across runs, ordered by
/// `(algorithm, t)`. A metric is left empty if any run lacks it.
pub fn summarize(rows: &[TraceRow]) -> Vec<SummaryRow> {
    #[derive(Default)]
    struct Acc {
        count: usize,
        msd: Option<f64>,
        vf: Option<f64>,
    }
    fn add(acc: Option<f64>, v: Option<f64>, first: bool) -> Option<f64> {
        match (acc, v) {
            (Some(a), Some(v)) => Some(a + v),
            (None, Some(v)) if first => Some(v),
            _ => None,
        }
    }
    let mut groups: BTreeMap<(&str, usize), Acc> = BTreeMap::new();
    for row in rows {
        let acc = groups.entry((&row.algorithm, row.record.t)).or_default();
        let first = acc.count == 0;
        acc.msd = add(acc.msd, row.record.msd, first);
        acc.vf = add(acc.vf, row.record.frechet_variance, first);
        acc.count += 1;
    }
    groups
        .into_iter()
        .map(|((algorithm, t), acc)| SummaryRow {
            t,
            algorithm: algorithm.to_string(),
            mean_msd: acc.msd.map(|s| s / acc.count as f64),
            mean_vf: acc.vf.map(|s| s / acc.count as f64),
        })
        .collect()
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "{SUMMARY_HEADER}").map_err(io)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.t,
            r.algorithm,
            fmt_float(r.mean_msd),
            fmt_float(r.mean_vf)
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    writeln!(out).map_err(io)?;
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: usize, msd: f64) -> MetricRecord {
        MetricRecord {
            t,
            msd: Some(msd),
            ..Default::default()
        }
    }

    fn trace(values: &[f64]) -> MetricTrace {
        let mut tr = MetricTrace::new();
        for (i, &v) in values.iter().enumerate() {
            tr.push(rec(i + 1, v)).unwrap();
        }
        tr
    }

    #[test]
    fn rows_are_ordered_and_counted() {
        let a = trace(&[1.0, 0.5]);
        let b = trace(&[2.0, 1.5]);
        let rows = trace_rows([(0, "noncooperative", &b), (0, "diffusion", &a)]);
        assert_eq!(rows.len(), 4);
        let order: Vec<_> = rows
            .iter()
            .map(|r| (r.algorithm.as_str(), r.record.t))
            .collect();
        assert_eq!(
            order,
            [
                ("diffusion", 1),
                ("diffusion", 2),
                ("noncooperative", 1),
                ("noncooperative", 2)
            ]
        );
    }

    #[test]
    fn golden_trace_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut r = rec(1, 0.1);
        r.cost = Some(-1e-7);
        let rows = vec![TraceRow {
            run: 0,
            algorithm: "diffusion".into(),
            record: r,
        }];
        write_trace_csv(&rows, &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "run,t,algorithm,msd,frechet_variance,consensus_bias,cost,grad_norm_sq\n0,1,diffusion,0.1,,,-1e-7,\n"
        );
        assert!(write_trace_csv(&[], &path).is_err());
    }

    #[test]
    fn trace_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let values: Vec<f64> = (1..50)
            .map(|i| 1.0 / (i as f64).powi(7) + std::f64::consts::PI * i as f64)
            .collect();
        let tr = trace(&values);
        let rows = trace_rows([(3, "diffusion", &tr)]);
        write_trace_csv(&rows, &path).unwrap();
        assert_eq!(read_trace_csv(&path).unwrap(), rows);
    }

    #[test]
    fn summary_means() {
        let rows = trace_rows([
            (0, "diffusion", &trace(&[1.0, 2.0])),
            (1, "diffusion", &trace(&[3.0, 4.0])),
        ]);
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].t, s[0].mean_msd, s[0].mean_vf), (1, Some(2.0), None));
        assert_eq!(s[1].mean_msd, Some(3.0));
    }
}
