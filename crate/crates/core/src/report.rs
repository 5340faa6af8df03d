//! Stage accounting: left counts, cumulative and per-step filter percentages.
//!
//! Fractions are kept as exact integer ratios and only rounded (half up, to
//! two decimals) when rendered, so the same counts always render the same
//! strings.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const INITIAL_STAGE: &str = "Collected";
pub const INITIAL_SUBSTEP: &str = "image-text pairs";
const NA: &str = "n/a";

/// Exact non-negative ratio. A zero denominator means "undefined".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    /// Value in hundredths of a percent, rounded half up.
    pub fn hundredths(self) -> Option<u64> {
        if self.den == 0 {
            return None;
        }
        let scaled = self.num as u128 * 10_000;
        let den = self.den as u128;
        Some(((2 * scaled + den) / (2 * den)) as u64)
    }
}

/// A percentage in hundredths (1234 renders as "12.34").
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Percent(pub u64);

impl Percent {
    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl std::str::FromStr for Percent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_end_matches('%');
        let (int, frac) = s.split_once('.').unwrap_or((s, "0"));
        let bad = || Error::Format(format!("invalid percentage `{s}`"));
        if frac.len() > 2 {
            return Err(bad());
        }
        let int: u64 = int.parse().map_err(|_| bad())?;
        let frac: u64 = format!("{frac:0<2}").parse().map_err(|_| bad())?;
        Ok(Percent(int * 100 + frac))
    }
}

/// Left count of a report row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeftCount {
    /// Produced by the pipeline; part of the monotone chain.
    Counted(u64),
    /// Supplied from outside (e.g. download success); informational only.
    External(u64),
    NotAvailable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageReport {
    pub stage_name: String,
    pub substep_name: String,
    pub left: LeftCount,
    left_of_initial: Option<Ratio>,
    filtered_of_previous: Option<Ratio>,
}

impl StageReport {
    pub fn left_count(&self) -> Option<u64> {
        match self.left {
            LeftCount::Counted(n) | LeftCount::External(n) => Some(n),
            LeftCount::NotAvailable => None,
        }
    }

    /// `left_count / initial`. An empty initial corpus renders as 100.00.
    pub fn left_pct(&self) -> Option<Percent> {
        let r = self.left_of_initial?;
        Some(Percent(r.hundredths().unwrap_or(10_000)))
    }

    /// `100 - left_pct` on the rendered two-decimal value.
    pub fn total_filter_pct(&self) -> Option<Percent> {
        self.left_pct().map(|p| Percent(10_000 - p.0))
    }

    /// `1 - left_count / previous_left_count`; 0.00 when the previous row is empty.
    pub fn stage_filter_pct(&self) -> Option<Percent> {
        let r = self.filtered_of_previous?;
        Some(Percent(r.hundredths().unwrap_or(0)))
    }
}

/// Builds report rows from pipeline counts, in execution order.
///
/// Counts must be non-increasing and never exceed `initial`.
pub fn build_stage_report<S: AsRef<str>>(
    counts: &[(S, S, u64)],
    initial: u64,
) -> Result<Vec<StageReport>> {
    let rows: Vec<_> = counts
        .iter()
        .map(|(stage, substep, n)| (stage.as_ref(), substep.as_ref(), LeftCount::Counted(*n)))
        .collect();
    build_report_rows(&rows, initial)
}

/// Like [`build_stage_report`], but rows may be external or unavailable.
pub fn build_report_rows(rows: &[(&str, &str, LeftCount)], initial: u64) -> Result<Vec<StageReport>> {
    let mut previous = initial;
    let mut out = Vec::with_capacity(rows.len());
    for &(stage, substep, left) in rows {
        let (left_of_initial, filtered_of_previous) = match left {
            LeftCount::Counted(n) | LeftCount::External(n) => {
                if n > previous {
                    return Err(Error::Invariant(format!(
                        "left count {n} at `{stage} / {substep}` exceeds previous count {previous}"
                    )));
                }
                let ratios = (
                    Some(Ratio::new(n, initial)),
                    Some(Ratio::new(previous - n, previous)),
                );
                if let LeftCount::Counted(_) = left {
                    previous = n;
                }
                ratios
            }
            LeftCount::NotAvailable => (None, None),
        };
        out.push(StageReport {
            stage_name: stage.to_string(),
            substep_name: substep.to_string(),
            left,
            left_of_initial,
            filtered_of_previous,
        });
    }
    Ok(out)
}

/// A complete report: initial count plus substep rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub initial: u64,
    pub rows: Vec<StageReport>,
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| NA.to_string())
}

impl Report {
    pub fn new(initial: u64, rows: &[(&str, &str, LeftCount)]) -> Result<Self> {
        Ok(Self {
            initial,
            rows: build_report_rows(rows, initial)?,
        })
    }

    /// Last pipeline-produced count (the final corpus size).
    pub fn final_count(&self) -> u64 {
        self.rows
            .iter()
            .rev()
            .find_map(|r| match r.left {
                LeftCount::Counted(n) => Some(n),
                _ => None,
            })
            .unwrap_or(self.initial)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Format(e.to_string());
        csv.write_record([
            "stage",
            "substep",
            "left_count",
            "total_filter_pct",
            "stage_filter_pct",
            "left_pct",
        ])
        .map_err(err)?;
        csv.write_record([
            INITIAL_STAGE,
            INITIAL_SUBSTEP,
            &self.initial.to_string(),
            NA,
            NA,
            "100.00",
        ])
        .map_err(err)?;
        for r in &self.rows {
            let left = match r.left {
                LeftCount::Counted(n) => n.to_string(),
                LeftCount::External(n) => format!("{n} (external)"),
                LeftCount::NotAvailable => NA.to_string(),
            };
            csv.write_record([
                r.stage_name.as_str(),
                r.substep_name.as_str(),
                &left,
                &opt(r.total_filter_pct()),
                &opt(r.stage_filter_pct()),
                &opt(r.left_pct()),
            ])
            .map_err(err)?;
        }
        csv.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory csv write");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Parses a report CSV, recomputes every percentage from the raw counts
    /// and fails if any emitted percentage disagrees.
    pub fn from_csv_verified(input: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut initial = None;
        let mut raw: Vec<(String, String, LeftCount, [Option<String>; 3])> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
            let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
            let (stage, substep, left) = (field(0), field(1), field(2));
            if stage == INITIAL_STAGE && initial.is_none() {
                initial = Some(left.parse::<u64>().map_err(|_| {
                    Error::Format(format!("invalid initial count `{left}`"))
                })?);
                continue;
            }
            let count = if left == NA || left.is_empty() {
                LeftCount::NotAvailable
            } else if let Some(n) = left.strip_suffix("(external)") {
                LeftCount::External(parse_count(n)?)
            } else {
                LeftCount::Counted(parse_count(left)?)
            };
            let pct = |i: usize| {
                let v = field(i);
                (!v.is_empty()).then(|| v.to_string())
            };
            raw.push((stage.into(), substep.into(), count, [pct(3), pct(4), pct(5)]));
        }
        let initial = initial
            .ok_or_else(|| Error::Format(format!("missing `{INITIAL_STAGE}` row")))?;
        let rows: Vec<_> = raw
            .iter()
            .map(|(s, ss, c, _)| (s.as_str(), ss.as_str(), *c))
            .collect();
        let report = Report::new(initial, &rows)?;
        for (row, (_, _, _, emitted)) in report.rows.iter().zip(&raw) {
            let computed = [
                opt(row.total_filter_pct()),
                opt(row.stage_filter_pct()),
                opt(row.left_pct()),
            ];
            for (c, e) in computed.iter().zip(emitted) {
                if let Some(e) = e {
                    if e.trim_end_matches('%') != c {
                        return Err(Error::Invariant(format!(
                            "`{} / {}`: emitted {e}, recomputed {c}",
                            row.stage_name, row.substep_name
                        )));
                    }
                }
            }
        }
        Ok(report)
    }

    /// Column-aligned text table.
    pub fn render_table(&self) -> String {
        let mut lines: Vec<[String; 6]> = vec![[
            "Stage".into(),
            "Substep".into(),
            "Left Data Num".into(),
            "Total Filter %".into(),
            "Stage Filter %".into(),
            "Left %".into(),
        ]];
        lines.push([
            INITIAL_STAGE.into(),
            INITIAL_SUBSTEP.into(),
            group_digits(self.initial),
            "--".into(),
            "--".into(),
            "100.00%".into(),
        ]);
        let pct = |p: Option<Percent>| p.map(|p| format!("{p}%")).unwrap_or_else(|| NA.into());
        for r in &self.rows {
            let left = match r.left {
                LeftCount::Counted(n) => group_digits(n),
                LeftCount::External(n) => format!("{} (ext)", group_digits(n)),
                LeftCount::NotAvailable => NA.into(),
            };
            lines.push([
                r.stage_name.clone(),
                r.substep_name.clone(),
                left,
                pct(r.total_filter_pct()),
                pct(r.stage_filter_pct()),
                pct(r.left_pct()),
            ]);
        }
        let final_count = self.final_count();
        let final_left = Ratio::new(final_count, self.initial)
            .hundredths()
            .map(Percent)
            .unwrap_or(Percent(10_000));
        lines.push([
            "Final".into(),
            "image-text pairs".into(),
            group_digits(final_count),
            format!("{}%", Percent(10_000 - final_left.0)),
            "--".into(),
            format!("{final_left}%"),
        ]);

        let mut widths = [0usize; 6];
        for l in &lines {
            for (w, cell) in widths.iter_mut().zip(l) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        for (i, l) in lines.iter().enumerate() {
            let mut row = String::new();
            for (c, (cell, w)) in l.iter().zip(widths).enumerate() {
                let pad = w - cell.chars().count();
                if c < 2 {
                    row.push_str(cell);
                    row.push_str(&" ".repeat(pad));
                } else {
                    row.push_str(&" ".repeat(pad));
                    row.push_str(cell);
                }
                if c < 5 {
                    row.push_str("  ");
                }
            }
            out.push_str(row.trim_end());
            out.push('\n');
            if i == 0 {
                let total: usize = widths.iter().sum::<usize>() + 10;
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }

    pub fn write_files(&self, table: impl AsRef<Path>, csv_path: impl AsRef<Path>) -> Result<()> {
        let table = table.as_ref();
        std::fs::write(table, self.render_table()).map_err(|e| Error::io(table, e))?;
        let csv_path = csv_path.as_ref();
        std::fs::write(csv_path, self.to_csv_string()).map_err(|e| Error::io(csv_path, e))
    }
}

fn parse_count(s: &str) -> Result<u64> {
    s.trim()
        .replace(',', "")
        .parse()
        .map_err(|_| Error::Format(format!("invalid left count `{s}`")))
}

fn group_digits(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}
