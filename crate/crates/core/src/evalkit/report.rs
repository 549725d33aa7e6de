use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::Result;

use super::{average_precision, ranking_metrics, MetricOptions, RankedGroup, TriggerResult};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuestionDetail {
    pub qid: String,
    pub candidates: usize,
    pub positives: usize,
    pub average_precision: f64,
    pub first_positive_rank: Option<usize>,
    pub top_aid: String,
    pub top_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

/// Text (`metric<TAB>value`) and JSON evaluation report.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub metrics: Vec<Metric>,
    pub trigger: Option<TriggerResult>,
    pub questions: Vec<QuestionDetail>,
    pub provenance: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn ranking(groups: &[RankedGroup], opts: MetricOptions) -> Result<Self> {
        let m = ranking_metrics(groups, opts)?;
        let mut report = EvalReport::default();
        report.push("MAP", m.map);
        report.push("MRR", m.mrr);
        report.push("P@1", m.p_at_1);
        report.push("questions", m.questions as f64);
        report.questions = groups
            .iter()
            .map(|g| {
                let top = g.top();
                QuestionDetail {
                    qid: g.qid.clone(),
                    candidates: g.pairs.len(),
                    positives: g.pairs.iter().filter(|p| p.relevant).count(),
                    average_precision: average_precision(g),
                    first_positive_rank: g.first_positive_rank(),
                    top_aid: top.aid.clone(),
                    top_score: top.score,
                }
            })
            .collect();
        Ok(report)
    }

    pub fn push(&mut self, name: &str, value: f64) {
        self.metrics.push(Metric {
            name: name.to_string(),
            value,
        });
    }

    pub fn with_trigger(mut self, t: TriggerResult) -> Self {
        self.push("trigger_threshold", t.threshold);
        self.push("trigger_precision", t.precision);
        self.push("trigger_recall", t.recall);
        self.push("trigger_f1", t.f1);
        self.trigger = Some(t);
        self
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for m in &self.metrics {
            let _ = writeln!(s, "{}\t{}", m.name, m.value);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
