//! Marginal-gain analysis of privacy/utility curves and the results-table
//! CSV format.
//!
//! For consecutive budgets `e_t < e_{t+1}` the gain is
//! `f(e_{t+1}) - f(e_t)`, reported as a percentage of the left value. The
//! critical budget is the left end of the range with the largest finite
//! difference quotient; ranges that touch `0` or `inf` get a row but no
//! quotient.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::SweepCurve;
use crate::privacy::Epsilon;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Up,
    Down,
    Flat,
}

impl Trend {
    pub fn of(delta: f64) -> Self {
        if delta > 0.0 {
            Trend::Up
        } else if delta < 0.0 {
            Trend::Down
        } else {
            Trend::Flat
        }
    }

    pub fn arrow(self) -> &'static str {
        match self {
            Trend::Up => "↑",
            Trend::Down => "↓",
            Trend::Flat => "=",
        }
    }
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trend::Up => "up",
            Trend::Down => "down",
            Trend::Flat => "flat",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub from: Epsilon,
    pub to: Epsilon,
    pub delta: f64,
    /// `100 * delta / f(from)`; `None` when `f(from)` is zero.
    pub percent: Option<f64>,
    pub trend: Trend,
    /// Finite difference quotient, only for ranges between positive finite
    /// budgets.
    pub slope: Option<f64>,
}

impl GainRow {
    pub fn range_label(&self) -> String {
        format!("{}-{}", self.from, self.to)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalGainReport {
    pub rows: Vec<GainRow>,
    /// `None` when no range has a defined quotient.
    pub critical_epsilon: Option<Epsilon>,
    /// Sum of all deltas.
    pub total: f64,
}

pub fn marginal_gains(curve: &SweepCurve) -> Result<MarginalGainReport> {
    curve.validate()?;
    if curve.points.len() < 2 {
        return Err(Error::invalid(format!(
            "marginal gains need at least 2 curve points, got {}",
            curve.points.len()
        )));
    }
    let mut rows = Vec::with_capacity(curve.points.len() - 1);
    for w in curve.points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let delta = b.mean_reward - a.mean_reward;
        let percent = (a.mean_reward != 0.0).then(|| 100.0 * delta / a.mean_reward);
        let slope = (a.epsilon.is_finite_positive() && b.epsilon.is_finite_positive())
            .then(|| delta / (b.epsilon.value() - a.epsilon.value()));
        rows.push(GainRow {
            from: a.epsilon,
            to: b.epsilon,
            delta,
            percent,
            trend: Trend::of(delta),
            slope,
        });
    }
    // first range wins ties
    let mut best: Option<(Epsilon, f64)> = None;
    for r in &rows {
        if let Some(s) = r.slope {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((r.from, s));
            }
        }
    }
    let total = rows.iter().map(|r| r.delta).sum();
    Ok(MarginalGainReport {
        rows,
        critical_epsilon: best.map(|(e, _)| e),
        total,
    })
}

/// Percent with one decimal, or two when the magnitude is below 0.1 so that
/// small changes keep a significant digit.
pub fn format_percent(p: f64) -> String {
    if p.abs() < 0.1 {
        format!("{p:+.2}%")
    } else {
        format!("{p:+.1}%")
    }
}

/// A labelled column of a comparison table.
pub struct GainColumn<'a> {
    pub label: &'a str,
    pub report: &'a MarginalGainReport,
}

fn check_same_ranges(columns: &[GainColumn<'_>]) -> Result<()> {
    let first = columns.first().ok_or_else(|| Error::invalid("comparison needs at least one column"))?;
    for c in &columns[1..] {
        let same = c.report.rows.len() == first.report.rows.len()
            && c.report.rows.iter().zip(&first.report.rows).all(|(a, b)| a.from == b.from && a.to == b.to);
        if !same {
            return Err(Error::invalid(format!(
                "columns `{}` and `{}` cover different epsilon ranges",
                first.label, c.label
            )));
        }
    }
    Ok(())
}

/// Side-by-side text table of several reports over the same ranges. The
/// trend column follows the column at index `trend_from`.
pub fn render_gain_table(columns: &[GainColumn<'_>], trend_from: usize) -> Result<String> {
    check_same_ranges(columns)?;
    if trend_from >= columns.len() {
        return Err(Error::invalid(format!("trend column {trend_from} out of range")));
    }
    let cell = |r: &GainRow| match r.percent {
        Some(p) => format!("{:.4} ({})", r.delta, format_percent(p)),
        None => format!("{:.4}", r.delta),
    };
    let mut header = vec!["range".to_string()];
    header.extend(columns.iter().map(|c| c.label.to_string()));
    header.push("trend".into());
    let mut lines = vec![header];
    for (i, r) in columns[0].report.rows.iter().enumerate() {
        let mut line = vec![format!("{} -> {}", r.from, r.to)];
        line.extend(columns.iter().map(|c| cell(&c.report.rows[i])));
        line.push(columns[trend_from].report.rows[i].trend.arrow().into());
        lines.push(line);
    }
    let mut total = vec!["total".to_string()];
    total.extend(columns.iter().map(|c| format!("{:.4}", c.report.total)));
    total.push(String::new());
    lines.push(total);
    let crit = columns.iter().map(|c| {
        let e = c.report.critical_epsilon.map_or("n/a".to_string(), |e| e.to_string());
        format!("{}: {e}", c.label)
    });

    let widths: Vec<usize> = (0..lines[0].len())
        .map(|j| lines.iter().map(|l| l[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out.push_str(&format!("critical epsilon ({})\n", crit.collect::<Vec<_>>().join(", ")));
    Ok(out)
}

/// CSV form of [`render_gain_table`]: per column a delta and a percent field,
/// then the trend, then a `total` row.
pub fn gain_table_csv(columns: &[GainColumn<'_>], trend_from: usize) -> Result<String> {
    check_same_ranges(columns)?;
    if trend_from >= columns.len() {
        return Err(Error::invalid(format!("trend column {trend_from} out of range")));
    }
    let mut out = String::from("range");
    for c in columns {
        out.push_str(&format!(",{0}_delta,{0}_percent", c.label));
    }
    out.push_str(",trend\n");
    for (i, r) in columns[0].report.rows.iter().enumerate() {
        out.push_str(&r.range_label());
        for c in columns {
            let row = &c.report.rows[i];
            let p = row.percent.map_or(String::new(), |p| format!("{p:.4}"));
            out.push_str(&format!(",{:.4},{p}", row.delta));
        }
        out.push_str(&format!(",{}\n", columns[trend_from].report.rows[i].trend));
    }
    out.push_str("total");
    for c in columns {
        out.push_str(&format!(",{:.4},", c.report.total));
    }
    out.push_str(",\n");
    Ok(out)
}

/// One `(model, optimizer, method)` row of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub model: String,
    pub optimizer: String,
    pub method: String,
    /// One value per table epsilon, in column order.
    pub values: Vec<f64>,
}

/// Reward scores on a full `(model, optimizer, method) x epsilon` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub epsilons: Vec<Epsilon>,
    pub rows: Vec<ResultsRow>,
}

/// A single measured value, the unit from which tables are assembled.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultCell {
    pub model: String,
    pub optimizer: String,
    pub method: String,
    pub epsilon: Epsilon,
    pub value: f64,
}

const KEY_COLUMNS: [&str; 3] = ["model", "optimizer", "method"];

impl ResultsTable {
    /// Assembles a table from cells. Rows keep first-appearance order and
    /// columns are sorted by epsilon. Every row must have every epsilon.
    pub fn from_cells(cells: &[ResultCell]) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::invalid("results table needs at least one cell"));
        }
        let mut epsilons: Vec<Epsilon> = Vec::new();
        let mut keys: Vec<(String, String, String)> = Vec::new();
        let mut values: HashMap<(usize, String), f64> = HashMap::new();
        for c in cells {
            if !c.value.is_finite() {
                return Err(Error::invalid(format!("non-finite value for {} / {} / {}", c.model, c.optimizer, c.method)));
            }
            let key = (c.model.clone(), c.optimizer.clone(), c.method.clone());
            let row = match keys.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    keys.push(key);
                    keys.len() - 1
                }
            };
            if !epsilons.contains(&c.epsilon) {
                epsilons.push(c.epsilon);
            }
            if values.insert((row, c.epsilon.label()), c.value).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate cell {} / {} / {} at epsilon {}",
                    c.model, c.optimizer, c.method, c.epsilon
                )));
            }
        }
        epsilons.sort_by(|a, b| a.partial_cmp(b).expect("epsilons are comparable"));
        let mut missing = Vec::new();
        let mut rows = Vec::with_capacity(keys.len());
        for (i, (model, optimizer, method)) in keys.into_iter().enumerate() {
            let mut vals = Vec::with_capacity(epsilons.len());
            for e in &epsilons {
                match values.get(&(i, e.label())) {
                    Some(&v) => vals.push(v),
                    None => {
                        missing.push(format!("{model} / {optimizer} / {method} at epsilon {e}"));
                        vals.push(f64::NAN);
                    }
                }
            }
            rows.push(ResultsRow {
                model,
                optimizer,
                method,
                values: vals,
            });
        }
        if !missing.is_empty() {
            return Err(Error::invalid(format!("ragged results grid, missing: {}", missing.join("; "))));
        }
        Ok(Self { epsilons, rows })
    }

    pub fn to_csv(&self) -> String {
        let mut out = KEY_COLUMNS.join(",");
        for e in &self.epsilons {
            out.push(',');
            out.push_str(&e.label());
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{},{}", r.model, r.optimizer, r.method));
            for v in &r.values {
                out.push_str(&format!(",{v:.4}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, detail: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty results table".into()))?;
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        if fields.len() < 4 || fields[..3] != KEY_COLUMNS {
            return Err(err(1, format!("header must start with {} and one epsilon column", KEY_COLUMNS.join(","))));
        }
        let epsilons = fields[3..]
            .iter()
            .map(|f| f.parse::<Epsilon>().map_err(|e| err(1, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mut cells = Vec::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != fields.len() {
                return Err(err(i + 1, format!("expected {} fields, got {}", fields.len(), f.len())));
            }
            for (e, raw) in epsilons.iter().zip(&f[3..]) {
                if raw.is_empty() {
                    continue;
                }
                let value: f64 = raw.parse().map_err(|_| err(i + 1, format!("bad number `{raw}`")))?;
                cells.push(ResultCell {
                    model: f[0].into(),
                    optimizer: f[1].into(),
                    method: f[2].into(),
                    epsilon: *e,
                    value,
                });
            }
        }
        let mut seen = epsilons.clone();
        seen.dedup();
        if seen.len() != epsilons.len() || epsilons.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(err(1, "epsilon columns must be strictly increasing".into()));
        }
        let mut table = Self::from_cells(&cells).map_err(|e| err(1, e.to_string()))?;
        // a column with only blanks never reaches from_cells
        if table.epsilons.len() != epsilons.len() {
            let absent: Vec<String> = epsilons.iter().filter(|e| !table.epsilons.contains(e)).map(|e| e.label()).collect();
            return Err(err(1, format!("ragged results grid, no values for epsilon {}", absent.join(", "))));
        }
        table.epsilons = epsilons;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn row(&self, model: &str, optimizer: &str, method: &str) -> Option<&ResultsRow> {
        self.rows.iter().find(|r| {
            r.model.eq_ignore_ascii_case(model) && r.optimizer.eq_ignore_ascii_case(optimizer) && r.method.eq_ignore_ascii_case(method)
        })
    }

    pub fn curve(&self, row: &ResultsRow) -> Result<SweepCurve> {
        let values: Vec<(Epsilon, f64)> = self.epsilons.iter().copied().zip(row.values.iter().copied()).collect();
        SweepCurve::from_values(&values)
    }

    /// Distinct `(model, method)` groups in row order.
    pub fn groups(&self) -> Vec<(String, String)> {
        let mut seen = BTreeMap::new();
        let mut out = Vec::new();
        for r in &self.rows {
            let k = (r.model.clone(), r.method.clone());
            if seen.insert(k.clone(), ()).is_none() {
                out.push(k);
            }
        }
        out
    }
}
