//! Side-by-side table of records from the same scenario.

use std::fmt::Write as _;

use crate::record::ResultsRecord;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CompareError {
    #[error("need at least two records, got {0}")]
    TooFew(usize),
    #[error("records mix scenarios {0:?} and {1:?}")]
    ScenarioMismatch(crate::config::Scenario, crate::config::Scenario),
}

pub struct Row {
    pub name: &'static str,
    pub values: Vec<Option<f64>>,
}

pub struct Comparison {
    pub labels: Vec<String>,
    pub rows: Vec<Row>,
}

impl Comparison {
    /// Difference of each column to the first, per row.
    pub fn deltas(&self, row: usize) -> Vec<Option<f64>> {
        let v = &self.rows[row].values;
        v.iter().map(|x| Some(x.as_ref()? - v[0].as_ref()?)).collect()
    }

    pub fn render(&self) -> String {
        let fmt = |v: &Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut s = String::new();
        let _ = write!(s, "{:<16}", "");
        for l in &self.labels {
            let _ = write!(s, "{l:>26}");
        }
        for l in self.labels.iter().skip(1) {
            let _ = write!(s, "{:>26}", format!("delta {l}"));
        }
        s.push('\n');
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(s, "{:<16}", r.name);
            for v in &r.values {
                let _ = write!(s, "{:>26}", fmt(v));
            }
            for d in self.deltas(i).iter().skip(1) {
                let _ = write!(s, "{:>26}", fmt(d));
            }
            s.push('\n');
        }
        s
    }
}

pub fn compare(records: &[ResultsRecord]) -> Result<Comparison, CompareError> {
    if records.len() < 2 {
        return Err(CompareError::TooFew(records.len()));
    }
    let first = records[0].scenario;
    if let Some(r) = records.iter().find(|r| r.scenario != first) {
        return Err(CompareError::ScenarioMismatch(first, r.scenario));
    }
    let col = |f: &dyn Fn(&ResultsRecord) -> Option<f64>| records.iter().map(f).collect::<Vec<_>>();
    let labels = records
        .iter()
        .map(|r| format!("{}/{}", serde_json::to_value(r.formulation).unwrap().as_str().unwrap_or(""), serde_json::to_value(r.solver).unwrap().as_str().unwrap_or("")))
        .collect();
    let rows = vec![
        Row { name: "objective", values: col(&|r| r.objective) },
        Row { name: "control effort", values: col(&|r| r.decomposition.map(|d| d.control_effort)) },
        Row { name: "indicator term", values: col(&|r| r.decomposition.map(|d| d.indicator)) },
        Row { name: "sum delta", values: col(&|r| r.sum_delta) },
        Row { name: "final mass", values: col(&|r| r.final_mass) },
        Row { name: "runtime [s]", values: col(&|r| Some(r.runtime_seconds)) },
    ];
    Ok(Comparison { labels, rows })
}
