//! Prediction tasks defined by label rules over a database.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{RelationalDatabase, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

/// How a target row's label is derived from the database. Child rows are
/// rows of `child_table` whose `fk_column` references the target row; only
/// children with time at or before the seed time count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LabelRule {
    /// Positive iff the mean of the children's `value_column` exceeds
    /// `threshold`. A row without children has mean −∞.
    MeanChildAbove {
        child_table: String,
        fk_column: String,
        value_column: String,
        threshold: f64,
    },
    /// Positive iff `value_column` of the row referenced by the target's
    /// `fk_column` exceeds `threshold`.
    ParentAbove {
        fk_column: String,
        value_column: String,
        threshold: f64,
    },
    /// Positive iff, averaged over children, `value_column` of the row each
    /// child references through `via_fk_column` exceeds `threshold`.
    MeanChildParentAbove {
        child_table: String,
        fk_column: String,
        via_fk_column: String,
        value_column: String,
        threshold: f64,
    },
    /// Regression target: the mean of the children's `value_column`. Rows
    /// without children are not part of the task.
    MeanChild {
        child_table: String,
        fk_column: String,
        value_column: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub target_table: String,
    pub label: LabelRule,
    /// Cutoff for labels and sampled neighbors; `None` admits everything.
    #[serde(default)]
    pub seed_time: Option<i64>,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

/// Target rows with labels, split three ways.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub train: Vec<(usize, f64)>,
    pub val: Vec<(usize, f64)>,
    pub test: Vec<(usize, f64)>,
}

fn table<'a>(db: &'a RelationalDatabase, name: &str) -> Result<&'a Table> {
    db.table(name)
        .ok_or_else(|| Error::Schema(format!("task refers to unknown table `{name}`")))
}

fn column(t: &Table, name: &str) -> Result<usize> {
    t.spec
        .column_index(name)
        .ok_or_else(|| Error::Schema(format!("task refers to unknown column `{}.{name}`", t.name())))
}

/// `children[r]` lists child rows referencing target row `r`.
fn children_of(target: &Table, child: &Table, fk: usize, seed_time: Option<i64>) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); target.len()];
    for (ci, row) in child.rows.iter().enumerate() {
        if let (Some(cut), Some(t)) = (seed_time, child.row_time(ci)) {
            if t > cut {
                continue;
            }
        }
        if let Some(r) = row[fk].as_key().and_then(|k| target.row_by_key(k)) {
            out[r].push(ci);
        }
    }
    out
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "task `{}`: split fractions {:?} must be non-negative and sum to 1",
                self.name, self.split
            )));
        }
        let regression_rule = matches!(self.label, LabelRule::MeanChild { .. });
        if regression_rule != (self.kind == TaskKind::Regression) {
            return Err(Error::Config(format!(
                "task `{}`: label rule does not match task kind",
                self.name
            )));
        }
        Ok(())
    }

    /// Labels of every row in the task, in row order.
    pub fn labels(&self, db: &RelationalDatabase) -> Result<Vec<(usize, f64)>> {
        self.validate()?;
        let target = table(db, &self.target_table)?;
        let number = |t: &Table, r: usize, c: usize| t.rows[r][c].as_number();
        let out: Vec<(usize, f64)> = match &self.label {
            LabelRule::MeanChildAbove { child_table, fk_column, value_column, threshold } => {
                let child = table(db, child_table)?;
                let (fk, vc) = (column(child, fk_column)?, column(child, value_column)?);
                children_of(target, child, fk, self.seed_time)
                    .iter()
                    .enumerate()
                    .map(|(r, kids)| {
                        let m = mean(kids.iter().filter_map(|&k| number(child, k, vc))).unwrap_or(f64::NEG_INFINITY);
                        (r, f64::from(u8::from(m > *threshold)))
                    })
                    .collect()
            }
            LabelRule::ParentAbove { fk_column, value_column, threshold } => {
                let fk = column(target, fk_column)?;
                let parent_name = target.spec.columns[fk]
                    .fk_target
                    .as_deref()
                    .ok_or_else(|| Error::Schema(format!("`{}.{fk_column}` is not a foreign key", target.name())))?;
                let parent = table(db, parent_name)?;
                let vc = column(parent, value_column)?;
                (0..target.len())
                    .map(|r| {
                        let v = target.rows[r][fk]
                            .as_key()
                            .and_then(|k| parent.row_by_key(k))
                            .and_then(|p| number(parent, p, vc))
                            .unwrap_or(f64::NEG_INFINITY);
                        (r, f64::from(u8::from(v > *threshold)))
                    })
                    .collect()
            }
            LabelRule::MeanChildParentAbove { child_table, fk_column, via_fk_column, value_column, threshold } => {
                let child = table(db, child_table)?;
                let (fk, via) = (column(child, fk_column)?, column(child, via_fk_column)?);
                let parent_name = child.spec.columns[via]
                    .fk_target
                    .as_deref()
                    .ok_or_else(|| Error::Schema(format!("`{}.{via_fk_column}` is not a foreign key", child.name())))?;
                let parent = table(db, parent_name)?;
                let vc = column(parent, value_column)?;
                children_of(target, child, fk, self.seed_time)
                    .iter()
                    .enumerate()
                    .map(|(r, kids)| {
                        let vals = kids.iter().filter_map(|&k| {
                            child.rows[k][via]
                                .as_key()
                                .and_then(|key| parent.row_by_key(key))
                                .and_then(|p| number(parent, p, vc))
                        });
                        let m = mean(vals).unwrap_or(f64::NEG_INFINITY);
                        (r, f64::from(u8::from(m > *threshold)))
                    })
                    .collect()
            }
            LabelRule::MeanChild { child_table, fk_column, value_column } => {
                let child = table(db, child_table)?;
                let (fk, vc) = (column(child, fk_column)?, column(child, value_column)?);
                children_of(target, child, fk, self.seed_time)
                    .iter()
                    .enumerate()
                    .filter_map(|(r, kids)| mean(kids.iter().filter_map(|&k| number(child, k, vc))).map(|m| (r, m)))
                    .collect()
            }
        };
        if out.iter().any(|(_, y)| !y.is_finite()) {
            return Err(Error::Config(format!("task `{}` produced a non-finite label", self.name)));
        }
        Ok(out)
    }

    /// Shuffles the labelled rows with `seed` and cuts them by `split`.
    pub fn split_rows(&self, labels: Vec<(usize, f64)>, seed: u64) -> TaskData {
        let mut rows = labels;
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = rows.len();
        let n_train = ((self.split[0] * n as f64).round() as usize).min(n);
        let n_val = ((self.split[1] * n as f64).round() as usize).min(n - n_train);
        let test = rows.split_off(n_train + n_val);
        let val = rows.split_off(n_train);
        TaskData { train: rows, val, test }
    }

    pub fn prepare(&self, db: &RelationalDatabase, seed: u64) -> Result<TaskData> {
        let labels = self.labels(db)?;
        Ok(self.split_rows(labels, seed))
    }

    pub fn target_index(&self, db: &RelationalDatabase) -> Result<usize> {
        db.table_index(&self.target_table)
            .ok_or_else(|| Error::Schema(format!("task refers to unknown table `{}`", self.target_table)))
    }
}

/// Median of `values`, used to pick balanced thresholds.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}
