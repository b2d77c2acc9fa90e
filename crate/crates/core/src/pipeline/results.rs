use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::Split;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "model,k,lambda,seed,split,frame_error_rate";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub split: Split,
    pub frame_error_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub split: Split,
    pub runs: usize,
    pub mean: f64,
    pub std_dev: f64,
}

/// Frame error rates of every (model, k, λ, seed, split) cell.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

fn na<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

impl ResultsTable {
    pub fn push(&mut self, row: ResultRow) -> Result<()> {
        if !(0.0..=1.0).contains(&row.frame_error_rate) {
            return Err(Error::Data(format!(
                "frame error rate {} outside [0, 1]",
                row.frame_error_rate
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn extend(&mut self, other: ResultsTable) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.model,
                na(r.k),
                na(r.lambda),
                r.seed,
                r.split,
                r.frame_error_rate
            )
            .expect("string write");
        }
        out
    }

    /// Mean and sample standard deviation over seeds, in first-seen order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut order: Vec<(String, Option<usize>, Option<u64>, Split)> = Vec::new();
        let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            let key = (r.model.clone(), r.k, r.lambda.map(f64::to_bits), r.split);
            let idx = match order.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    order.push(key);
                    order.len() - 1
                }
            };
            groups.entry(idx).or_default().push(r.frame_error_rate);
        }
        order
            .into_iter()
            .enumerate()
            .map(|(i, (model, k, lambda, split))| {
                let v = &groups[&i];
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = if v.len() > 1 {
                    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                SummaryRow {
                    model,
                    k,
                    lambda: lambda.map(f64::from_bits),
                    split,
                    runs: v.len(),
                    mean,
                    std_dev: var.sqrt(),
                }
            })
            .collect()
    }

    /// Mean frame error rate of one cell across seeds.
    pub fn mean(&self, model: &str, k: Option<usize>, lambda: Option<f64>, split: Split) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.model == model && r.k == k && r.lambda == lambda && r.split == split)
            .map(|r| r.frame_error_rate)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Seed-averaged table for humans.
    pub fn to_pretty(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<14} {:>6} {:>7} {:<8} {:>5} {:>9} {:>9}",
            "model", "k", "lambda", "split", "runs", "mean FER", "std"
        )
        .expect("string write");
        for s in self.summary() {
            writeln!(
                out,
                "{:<14} {:>6} {:>7} {:<8} {:>5} {:>8.2}% {:>8.2}%",
                s.model,
                na(s.k),
                na(s.lambda),
                s.split.as_str(),
                s.runs,
                100.0 * s.mean,
                100.0 * s.std_dev
            )
            .expect("string write");
        }
        out
    }
}
