//! Metric register, hit collector and the metric report.

use std::fmt::Write as _;
use std::str::FromStr;

use super::metrics::{mrr_at_k, ndcg_at_k, precision_at_k, recall_at_k, value_metrics, MetricValues};
use super::topk::HitMatrix;
use super::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Recall,
    Precision,
    Ndcg,
    Mrr,
    Rmse,
    Mae,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Recall => "recall",
            Metric::Precision => "precision",
            Metric::Ndcg => "ndcg",
            Metric::Mrr => "mrr",
            Metric::Rmse => "rmse",
            Metric::Mae => "mae",
        }
    }

    pub fn is_ranking(self) -> bool {
        !matches!(self, Metric::Rmse | Metric::Mae)
    }
}

impl FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "recall" => Ok(Metric::Recall),
            "precision" => Ok(Metric::Precision),
            "ndcg" => Ok(Metric::Ndcg),
            "mrr" => Ok(Metric::Mrr),
            "rmse" => Ok(Metric::Rmse),
            "mae" => Ok(Metric::Mae),
            _ => Err(EvalError::UnknownMetric(s.trim().to_string())),
        }
    }
}

/// The metrics and cutoffs an evaluation computes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricRegister {
    metrics: Vec<Metric>,
    topk: Vec<usize>,
}

impl MetricRegister {
    pub fn new(metrics: Vec<Metric>, mut topk: Vec<usize>) -> Result<Self> {
        topk.sort_unstable();
        topk.dedup();
        let ranking = metrics.iter().any(|m| m.is_ranking());
        if ranking && (topk.is_empty() || topk[0] == 0) {
            return Err(EvalError::BadCutoff("ranking metrics need positive cutoffs".into()));
        }
        let mut seen = Vec::new();
        for m in metrics {
            if !seen.contains(&m) {
                seen.push(m);
            }
        }
        Ok(Self { metrics: seen, topk })
    }

    /// Parses comma-separated metric names and cutoffs, e.g. `recall,ndcg`
    /// and `10,20`.
    pub fn parse(metrics: &str, topk: &str) -> Result<Self> {
        let metrics = metrics
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(Metric::from_str)
            .collect::<Result<Vec<_>>>()?;
        let topk = topk
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| EvalError::BadCutoff(s.trim().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(metrics, topk)
    }

    pub fn metrics(&self) -> &[Metric] {
        &self.metrics
    }

    pub fn topk(&self) -> &[usize] {
        &self.topk
    }

    pub fn max_k(&self) -> usize {
        self.topk.last().copied().unwrap_or(0)
    }

    pub fn needs_ranking(&self) -> bool {
        self.metrics.iter().any(|m| m.is_ranking())
    }

    pub fn needs_values(&self) -> bool {
        self.metrics.iter().any(|m| !m.is_ranking())
    }

    /// Report keys in output order.
    pub fn keys(&self) -> Vec<String> {
        let mut keys = Vec::new();
        for &m in &self.metrics {
            if m.is_ranking() {
                keys.extend(self.topk.iter().map(|k| format!("{}@{k}", m.name())));
            } else {
                keys.push(m.name().to_string());
            }
        }
        keys
    }

    pub fn has_key(&self, key: &str) -> bool {
        self.keys().iter().any(|k| k == key)
    }
}

/// Gathers evaluation outputs batch by batch; metrics are computed once,
/// in [`Collector::finish`].
#[derive(Debug, Default)]
pub struct Collector {
    blocks: Vec<HitMatrix>,
    predictions: Vec<f64>,
    truths: Vec<f64>,
}

impl Collector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_hits(&mut self, block: HitMatrix) {
        self.blocks.push(block);
    }

    pub fn push_values(&mut self, predictions: &[f64], truths: &[f64]) {
        self.predictions.extend_from_slice(predictions);
        self.truths.extend_from_slice(truths);
    }

    pub fn hits(&self) -> Result<HitMatrix> {
        HitMatrix::concat(&self.blocks)
    }

    pub fn finish(self, register: &MetricRegister, header: Vec<(String, String)>) -> Result<Report> {
        let hits = if register.needs_ranking() {
            Some(self.hits()?)
        } else {
            None
        };
        let values = if register.needs_values() {
            Some(value_metrics(&self.predictions, &self.truths)?)
        } else {
            None
        };
        let mut metrics = Vec::new();
        for &m in register.metrics() {
            match m {
                Metric::Rmse | Metric::Mae => {
                    let v = values.expect("computed when registered");
                    let x = if m == Metric::Rmse { v.rmse } else { v.mae };
                    metrics.push((m.name().to_string(), x));
                }
                _ => {
                    let c = hits.as_ref().expect("computed when registered");
                    for &k in register.topk() {
                        let f: fn(&HitMatrix, usize) -> Result<MetricValues> = match m {
                            Metric::Recall => recall_at_k,
                            Metric::Precision => precision_at_k,
                            Metric::Ndcg => ndcg_at_k,
                            _ => mrr_at_k,
                        };
                        let mean = if c.n_users() == 0 { 0.0 } else { f(c, k)?.mean };
                        metrics.push((format!("{}@{k}", m.name()), mean));
                    }
                }
            }
        }
        Ok(Report { header, metrics })
    }
}

/// Metric means plus descriptive header lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub header: Vec<(String, String)>,
    pub metrics: Vec<(String, f64)>,
}

impl Report {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }

    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(out, "# {k}: {v}");
        }
        let width = self.metrics.iter().map(|(k, _)| k.len()).max().unwrap_or(0).max(6);
        let _ = writeln!(out, "{:<width$}  value", "metric");
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }

    /// Flat `metric@K -> value` object.
    pub fn to_json(&self) -> String {
        let map: serde_json::Map<String, serde_json::Value> = self
            .metrics
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::json!(v)))
            .collect();
        let mut s = serde_json::to_string_pretty(&map).expect("finite floats serialize");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn register_parses_and_orders_keys() {
        let r = MetricRegister::parse("recall, NDCG,rmse", "20,10,10").unwrap();
        assert_eq!(r.keys(), vec!["recall@10", "recall@20", "ndcg@10", "ndcg@20", "rmse"]);
        assert_eq!(r.max_k(), 20);
        assert!(matches!(
            MetricRegister::parse("auc", "10"),
            Err(EvalError::UnknownMetric(_))
        ));
        assert!(MetricRegister::parse("recall", "").is_err());
        assert!(MetricRegister::parse("mae", "").is_ok());
    }

    #[test]
    fn collector_concatenates_in_order() {
        let r = MetricRegister::parse("recall,mrr", "1,2").unwrap();
        let mut c = Collector::new();
        c.push_hits(HitMatrix {
            hits: array![[1, 0]],
            pos_counts: vec![1],
        });
        c.push_hits(HitMatrix {
            hits: array![[0, 1]],
            pos_counts: vec![2],
        });
        let report = c.finish(&r, vec![("users".into(), "2".into())]).unwrap();
        assert_eq!(report.get("recall@1"), Some(0.5));
        assert_eq!(report.get("recall@2"), Some(0.75));
        assert_eq!(report.get("mrr@2"), Some(0.75));
        let text = report.to_text();
        assert!(
            text.starts_with("# users: 2\nmetric    value\nrecall@1  0.5\n"),
            "{text}"
        );
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["recall@2"], 0.75);
    }
}
