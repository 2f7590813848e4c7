//! On-disk artifacts of each subcommand.
//!
//! CSV files open with a `# uwmmse <version> config=<json>` comment line,
//! then a header row. Floats use the shortest representation that parses
//! back to the same value.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use uwmmse_core::stability::{BoundOptions, BoundReport, PerturbationSpec};

use crate::campaign::{ComparisonReport, MethodSummary};
use crate::dataset::write_json;
use crate::error::{Result, RunError};
use crate::provenance::Provenance;
use crate::stats::Summary;
use crate::svg::{self, BoxSeries};

pub const BOUND_REPORT: &str = "bound_report.json";
pub const BOUND_ENTRIES: &str = "bound_entries.csv";
pub const BOUND_SURFACE: &str = "bound_surface.csv";
pub const MARGIN_HISTOGRAM_CSV: &str = "margin_histogram.csv";
pub const MARGIN_HISTOGRAM_SVG: &str = "margin_histogram.svg";
pub const COMPARISON_REPORT: &str = "comparison.json";
pub const COMPARISON_SAMPLES: &str = "comparison_samples.csv";
pub const COMPARISON_SVG: &str = "comparison_box.svg";
pub const EVAL_REPORT: &str = "eval.json";

const ENTRIES_HEADER: &str = "sample,node,layer,lhs,rhs,margin";
const COMPARISON_PREFIX: &str = "sample,";

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(RunError::io(path))
}

fn csv(provenance: &Provenance, header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = provenance.csv_comment();
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(RunError::io(dir))
}

#[derive(Serialize)]
struct BoundDocument<'a> {
    provenance: &'a Provenance,
    perturbation: &'a PerturbationSpec,
    bound: &'a BoundOptions,
    /// Violations with `|margin| < 10 ε²` are attributed to the dropped
    /// higher-order terms, not to an implementation fault.
    higher_order_threshold: f64,
    surface_sample: usize,
    report: &'a BoundReport,
}

pub struct BoundArtifacts {
    pub report: PathBuf,
    pub entries: PathBuf,
    pub surface: PathBuf,
    pub histogram_csv: PathBuf,
    pub histogram_svg: PathBuf,
}

pub fn write_bound_outputs(
    dir: &Path,
    provenance: &Provenance,
    report: &BoundReport,
    pert: &PerturbationSpec,
    opts: &BoundOptions,
    surface_sample: usize,
) -> Result<BoundArtifacts> {
    ensure_dir(dir)?;
    let paths = BoundArtifacts {
        report: dir.join(BOUND_REPORT),
        entries: dir.join(BOUND_ENTRIES),
        surface: dir.join(BOUND_SURFACE),
        histogram_csv: dir.join(MARGIN_HISTOGRAM_CSV),
        histogram_svg: dir.join(MARGIN_HISTOGRAM_SVG),
    };
    let doc = BoundDocument {
        provenance,
        perturbation: pert,
        bound: opts,
        higher_order_threshold: 10.0 * pert.eps * pert.eps,
        surface_sample,
        report,
    };
    write_json(&paths.report, &doc)?;

    let rows = report
        .entries
        .iter()
        .map(|e| format!("{},{},{},{},{},{}", e.sample, e.node, e.layer, e.lhs, e.rhs, e.margin));
    write_text(&paths.entries, &csv(provenance, ENTRIES_HEADER, rows))?;

    let surface = report
        .entries
        .iter()
        .filter(|e| e.sample == surface_sample)
        .map(|e| format!("{},{},{},{}", e.node, e.layer, e.lhs, e.rhs));
    write_text(&paths.surface, &csv(provenance, "node,layer,lhs,rhs", surface))?;

    let h = &report.histogram;
    let mut bins = vec![format!("-inf,{},{}", h.edges[0], h.underflow)];
    bins.extend((0..h.counts.len()).map(|n| format!("{},{},{}", h.edges[n], h.edges[n + 1], h.counts[n])));
    bins.push(format!("{},inf,{}", h.edges[h.edges.len() - 1], h.overflow));
    write_text(&paths.histogram_csv, &csv(provenance, "lo,hi,count", bins))?;
    write_text(&paths.histogram_svg, &svg::render_histogram_counts(h, "margin histogram"))?;
    Ok(paths)
}

#[derive(Serialize)]
struct ComparisonDocument<'a> {
    provenance: &'a Provenance,
    perturbation: &'a PerturbationSpec,
    samples: usize,
    methods: &'a [MethodSummary],
}

pub fn write_comparison_outputs(
    dir: &Path,
    provenance: &Provenance,
    report: &ComparisonReport,
    pert: &PerturbationSpec,
) -> Result<()> {
    ensure_dir(dir)?;
    let doc = ComparisonDocument { provenance, perturbation: pert, samples: report.samples, methods: &report.methods };
    write_json(&dir.join(COMPARISON_REPORT), &doc)?;

    let mut header = String::from("sample");
    for m in &report.methods {
        let _ = write!(header, ",{0}_sum_rate,{0}_variation", m.name);
    }
    let rows = report.rows.iter().enumerate().map(|(n, row)| {
        let mut line = n.to_string();
        for (rate, var) in row {
            let _ = write!(line, ",{rate},");
            if let Some(v) = var {
                let _ = write!(line, "{v}");
            }
        }
        line
    });
    write_text(&dir.join(COMPARISON_SAMPLES), &csv(provenance, &header, rows))?;

    let table = ComparisonTable::from_report(report);
    write_text(&dir.join(COMPARISON_SVG), &table.render()?)
}

#[derive(Serialize)]
struct EvalDocument<'a> {
    provenance: &'a Provenance,
    methods: Vec<EvalEntry<'a>>,
}

#[derive(Serialize)]
struct EvalEntry<'a> {
    name: &'a str,
    sum_rate: &'a Summary,
}

pub fn write_eval(dir: &Path, provenance: &Provenance, results: &[(String, Summary)]) -> Result<PathBuf> {
    ensure_dir(dir)?;
    let path = dir.join(EVAL_REPORT);
    let methods = results.iter().map(|(name, s)| EvalEntry { name, sum_rate: s }).collect();
    write_json(&path, &EvalDocument { provenance, methods })?;
    Ok(path)
}

pub fn write_loss_csv(path: &Path, provenance: &Provenance, history: &[f64]) -> Result<()> {
    let rows = history.iter().enumerate().map(|(n, l)| format!("{},{l}", n + 1));
    write_text(path, &csv(provenance, "epoch,mean_loss", rows))
}

/// Data rows of a CSV artifact, with its header.
fn read_csv(path: &Path) -> Result<(String, Vec<(usize, String)>)> {
    let text = fs::read_to_string(path).map_err(RunError::io(path))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#'));
    let (_, header) = lines.next().ok_or_else(|| RunError::Data(format!("{}: no header row", path.display())))?;
    Ok((header.to_string(), lines.map(|(n, l)| (n + 1, l.to_string())).collect()))
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| RunError::Data(format!("{}: line {line}: cannot parse {field:?}", path.display())))
}

/// Margins column of a per-entry CSV.
pub fn read_margins(path: &Path) -> Result<Vec<f64>> {
    let (header, rows) = read_csv(path)?;
    if header != ENTRIES_HEADER {
        return Err(RunError::Data(format!("{}: not a bound-entries file", path.display())));
    }
    rows.iter()
        .map(|(line, row)| {
            let field = row.rsplit(',').next().unwrap_or_default();
            parse_field(path, *line, field)
        })
        .collect()
}

/// Per-method columns of a comparison CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub names: Vec<String>,
    pub rates: Vec<Vec<f64>>,
    pub variations: Vec<Vec<f64>>,
}

impl ComparisonTable {
    pub fn from_report(report: &ComparisonReport) -> Self {
        let names: Vec<String> = report.methods.iter().map(|m| m.name.clone()).collect();
        let rates = (0..names.len()).map(|j| report.rows.iter().map(|r| r[j].0).collect()).collect();
        let variations = (0..names.len()).map(|j| report.rows.iter().filter_map(|r| r[j].1).collect()).collect();
        Self { names, rates, variations }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (header, rows) = read_csv(path)?;
        let cols: Vec<&str> = header.split(',').collect();
        let names: Vec<String> = cols[1..]
            .chunks(2)
            .filter_map(|c| c[0].strip_suffix("_sum_rate").map(str::to_string))
            .collect();
        if !header.starts_with(COMPARISON_PREFIX) || cols.len() != 1 + 2 * names.len() || names.is_empty() {
            return Err(RunError::Data(format!("{}: not a comparison file", path.display())));
        }
        let mut table = Self { rates: vec![Vec::new(); names.len()], variations: vec![Vec::new(); names.len()], names };
        for (line, row) in &rows {
            let fields: Vec<&str> = row.split(',').collect();
            if fields.len() != cols.len() {
                return Err(RunError::Data(format!("{}: line {line}: wrong field count", path.display())));
            }
            for j in 0..table.names.len() {
                table.rates[j].push(parse_field(path, *line, fields[1 + 2 * j])?);
                let v = fields[2 + 2 * j];
                if !v.is_empty() {
                    table.variations[j].push(parse_field(path, *line, v)?);
                }
            }
        }
        Ok(table)
    }

    pub fn render(&self) -> Result<String> {
        let series: Vec<BoxSeries<'_>> = self
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| BoxSeries {
                name,
                values: &self.variations[j],
                sum_rate: Summary::of(&self.rates[j]).map(|s| s.mean),
            })
            .collect();
        svg::render_box(&series)
    }
}
