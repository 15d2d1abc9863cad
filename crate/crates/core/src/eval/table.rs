//! Aggregated success tables and their text, CSV and JSON renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EvalError, RawRecord, Stage};
use crate::obs::Variant;
use crate::sim::Condition;

/// Success over the rollouts of one training seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub rollouts: usize,
    pub successes: usize,
    /// Percentage in `[0, 100]`.
    pub success_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_iou: Option<f64>,
}

impl SeedResult {
    fn new(seed: u64, rollouts: usize, successes: usize, robot_iou: Option<f64>, object_iou: Option<f64>) -> Self {
        let success_rate = if rollouts == 0 { 0.0 } else { 100.0 * successes as f64 / rollouts as f64 };
        Self { seed, rollouts, successes, success_rate, robot_iou, object_iou }
    }
}

/// One (row, condition) entry; means are taken over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub condition: Condition,
    /// `None` when every seed failed before evaluation.
    pub success_rate: Option<f64>,
    pub seeds: Vec<SeedResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot_iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_iou: Option<f64>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl Cell {
    fn from_seeds(condition: Condition, seeds: Vec<SeedResult>) -> Self {
        let success_rate = mean(seeds.iter().map(|s| s.success_rate));
        let robot_iou = if seeds.iter().all(|s| s.robot_iou.is_some()) {
            mean(seeds.iter().filter_map(|s| s.robot_iou))
        } else {
            None
        };
        let object_iou = if seeds.iter().all(|s| s.object_iou.is_some()) {
            mean(seeds.iter().filter_map(|s| s.object_iou))
        } else {
            None
        };
        Self { condition, success_rate, seeds, robot_iou, object_iou }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub label: String,
    pub variant: Variant,
    /// Aligned with [`ResultTable::conditions`].
    pub cells: Vec<Cell>,
}

impl ResultRow {
    pub fn cell(&self, condition: Condition) -> Option<&Cell> {
        self.cells.iter().find(|c| c.condition == condition)
    }

    /// Mean success over the OOD conditions only.
    pub fn ood_mean(&self) -> Option<f64> {
        mean(self.cells.iter().filter(|c| c.condition.is_ood()).filter_map(|c| c.success_rate))
    }

    /// Mean over cells of the average robot and object IoU.
    pub fn mean_iou(&self) -> Option<f64> {
        let per_cell: Vec<f64> = self.cells.iter().filter_map(|c| Some((c.robot_iou? + c.object_iou?) / 2.0)).collect();
        mean(per_cell)
    }
}

/// A stage that failed before any rollout of a (row, seed) could run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub label: String,
    pub variant: Variant,
    pub seed: u64,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub conditions: Vec<Condition>,
    pub rows: Vec<ResultRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<StageFailure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(format!("unknown report format '{s}' (expected text, csv or json)")),
        }
    }
}

const CSV_HEADER: [&str; 9] =
    ["label", "variant", "condition", "seed", "rollouts", "successes", "success_rate", "robot_iou", "object_iou"];

fn push_unique<T: PartialEq>(v: &mut Vec<T>, x: T) {
    if !v.contains(&x) {
        v.push(x);
    }
}

fn fmt_opt(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(|| "-".to_owned(), |v| format!("{v:.digits$}"))
}

impl ResultTable {
    /// Rebuilds the table from per-rollout records. Rows, conditions and
    /// seeds keep their order of first appearance.
    pub fn from_records(records: &[RawRecord]) -> Result<Self, EvalError> {
        let mut labels: Vec<(String, Variant)> = Vec::new();
        let mut conditions = Vec::new();
        let mut failures = Vec::new();
        // (label, condition) -> seed -> (rollouts, successes, robot iou sum, object iou sum, iou count)
        type Acc = (usize, usize, f64, f64, usize);
        let mut acc: BTreeMap<(usize, usize), Vec<(u64, Acc)>> = BTreeMap::new();
        for r in records {
            if let Some((_, v)) = labels.iter().find(|(l, _)| *l == r.label) {
                if *v != r.variant {
                    return Err(EvalError::Malformed(format!(
                        "row '{}' mixes variants {v} and {}",
                        r.label, r.variant
                    )));
                }
            } else {
                labels.push((r.label.clone(), r.variant));
            }
            if r.stage != Stage::Rollout {
                failures.push(StageFailure {
                    label: r.label.clone(),
                    variant: r.variant,
                    seed: r.seed,
                    stage: r.stage,
                    message: r.failure.clone().unwrap_or_default(),
                });
                continue;
            }
            let condition = r
                .condition
                .ok_or_else(|| EvalError::Malformed(format!("rollout record of '{}' has no condition", r.label)))?;
            push_unique(&mut conditions, condition);
            let li = labels.iter().position(|(l, _)| *l == r.label).expect("inserted above");
            let ci = conditions.iter().position(|&c| c == condition).expect("inserted above");
            let seeds = acc.entry((li, ci)).or_default();
            let slot = match seeds.iter().position(|(s, _)| *s == r.seed) {
                Some(i) => &mut seeds[i].1,
                None => {
                    seeds.push((r.seed, (0, 0, 0.0, 0.0, 0)));
                    &mut seeds.last_mut().expect("pushed").1
                }
            };
            slot.0 += 1;
            slot.1 += r.success as usize;
            if let (Some(ri), Some(oi)) = (r.robot_iou, r.object_iou) {
                slot.2 += ri;
                slot.3 += oi;
                slot.4 += 1;
            }
        }
        let rows = labels
            .iter()
            .enumerate()
            .map(|(li, (label, variant))| {
                let cells = conditions
                    .iter()
                    .enumerate()
                    .map(|(ci, &condition)| {
                        let seeds = acc
                            .get(&(li, ci))
                            .map(|seeds| {
                                seeds
                                    .iter()
                                    .map(|&(seed, (n, ok, ri, oi, k))| {
                                        let iou = (k == n && n > 0).then(|| (ri / n as f64, oi / n as f64));
                                        SeedResult::new(seed, n, ok, iou.map(|i| i.0), iou.map(|i| i.1))
                                    })
                                    .collect()
                            })
                            .unwrap_or_default();
                        Cell::from_seeds(condition, seeds)
                    })
                    .collect();
                ResultRow { label: label.clone(), variant: *variant, cells }
            })
            .collect();
        Ok(Self { conditions, rows, failures })
    }

    pub fn row(&self, label: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Mean success of `label` under `condition`.
    pub fn rate(&self, label: &str, condition: Condition) -> Option<f64> {
        self.row(label)?.cell(condition)?.success_rate
    }

    fn has_iou(&self) -> bool {
        self.rows.iter().any(|r| r.mean_iou().is_some())
    }

    /// Fixed-width table: one row per method, one column per condition,
    /// then the OOD mean.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
        let iou = self.has_iou();
        let mut out = format!("{:<width$}", "Method");
        for c in &self.conditions {
            let _ = write!(out, " | {:>9}", c.to_string());
        }
        out.push_str(" |      Mean");
        if iou {
            out.push_str(" |  R-IoU |  O-IoU");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<width$}", row.label);
            for c in &row.cells {
                let _ = write!(out, " | {:>9}", fmt_opt(c.success_rate, 1));
            }
            let _ = write!(out, " | {:>9}", fmt_opt(row.ood_mean(), 1));
            if iou {
                let r = mean(row.cells.iter().filter_map(|c| c.robot_iou));
                let o = mean(row.cells.iter().filter_map(|c| c.object_iou));
                let _ = write!(out, " | {:>6} | {:>6}", fmt_opt(r, 3), fmt_opt(o, 3));
            }
            out.push('\n');
        }
        for f in &self.failures {
            let _ = writeln!(out, "! {} seed {} failed at {:?}: {}", f.label, f.seed, f.stage, f.message);
        }
        out
    }

    /// One line per (row, condition, seed) with the raw counts.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for row in &self.rows {
            for cell in &row.cells {
                for s in &cell.seeds {
                    w.write_record([
                        row.label.clone(),
                        row.variant.to_string(),
                        cell.condition.to_string(),
                        s.seed.to_string(),
                        s.rollouts.to_string(),
                        s.successes.to_string(),
                        s.success_rate.to_string(),
                        opt(s.robot_iou),
                        opt(s.object_iou),
                    ])
                    .expect("in-memory write");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// Parses [`ResultTable::to_csv`] output. Stage failures are not part
    /// of the CSV form.
    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let bad = |m: String| EvalError::Malformed(m);
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| bad(e.to_string()))?;
        if header.iter().ne(CSV_HEADER) {
            return Err(bad(format!("unexpected csv header {header:?}")));
        }
        let mut table = ResultTable::default();
        let mut seeds: Vec<Vec<Vec<SeedResult>>> = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let ctx = |e: String| bad(format!("csv row {}: {e}", line + 1));
            let num = |i: usize| field(i).parse::<u64>().map_err(|e| ctx(format!("{}: {e}", CSV_HEADER[i])));
            let iou = |i: usize| match field(i) {
                "" => Ok(None),
                s => s.parse::<f64>().map(Some).map_err(|e| ctx(format!("{}: {e}", CSV_HEADER[i]))),
            };
            let variant: Variant = field(1).parse().map_err(ctx)?;
            let condition: Condition = field(2).parse().map_err(ctx)?;
            let result = SeedResult::new(num(3)?, num(4)? as usize, num(5)? as usize, iou(7)?, iou(8)?);
            if result.successes > result.rollouts {
                return Err(ctx("more successes than rollouts".into()));
            }
            push_unique(&mut table.conditions, condition);
            let li = match table.rows.iter().position(|r| r.label == field(0)) {
                Some(i) if table.rows[i].variant == variant => i,
                Some(_) => return Err(ctx(format!("row '{}' mixes variants", field(0)))),
                None => {
                    table.rows.push(ResultRow { label: field(0).to_owned(), variant, cells: Vec::new() });
                    seeds.push(Vec::new());
                    table.rows.len() - 1
                }
            };
            let ci = table.conditions.iter().position(|&c| c == condition).expect("inserted above");
            if seeds[li].len() <= ci {
                seeds[li].resize(ci + 1, Vec::new());
            }
            seeds[li][ci].push(result);
        }
        for (row, mut per_cond) in table.rows.iter_mut().zip(seeds) {
            per_cond.resize(table.conditions.len(), Vec::new());
            row.cells = table.conditions.iter().zip(per_cond).map(|(&c, s)| Cell::from_seeds(c, s)).collect();
        }
        Ok(table)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::Malformed(e.to_string()))
    }

    pub fn emit(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Text => self.to_text(),
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        }
    }
}
