//! Retrieval quality metrics: Top-k accuracy and mean average precision.
//!
//! A query counts as a Top-k hit when at least one of its `k` best results
//! shares its class. AP is the interpolation-free IR definition over the
//! ranking, normalized by the number of relevant gallery items. Queries whose
//! class has no relevant item in the gallery are skipped and counted.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{search_rows, IndexSnapshot, QuerySpec};
use crate::model::{Embedding, Modality, RankedHit};

/// Average precision of a ranked binary relevance list.
///
/// `total_relevant` is the number of relevant items in the whole gallery; it
/// may exceed the ones seen in `relevance` when the ranking is truncated.
pub fn average_precision(relevance: &[bool], total_relevant: usize) -> Result<f64> {
    let observed = relevance.iter().filter(|&&r| r).count();
    if total_relevant == 0 || total_relevant < observed {
        return Err(Error::InvalidRelevance { observed, total: total_relevant });
    }
    let mut found = 0usize;
    let mut sum = 0.0f64;
    for (i, &relevant) in relevance.iter().enumerate() {
        if relevant {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / total_relevant as f64)
}

/// True iff one of the first `k` hits has class `query_class`.
pub fn top_k_hit(hits: &[RankedHit], query_class: &str, k: usize) -> bool {
    hits.iter().take(k).any(|h| h.class_label == query_class)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Every query is a gallery item and is excluded from its own ranking.
    #[default]
    LeaveOneOut,
    /// Queries come from a separate set; nothing is excluded.
    HeldOut,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::LeaveOneOut => "leave_one_out",
            Protocol::HeldOut => "held_out",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k_values: Vec<usize>,
    pub protocol: Protocol,
    /// Truncate the ranking used for AP to this depth. `None` ranks the full gallery.
    pub ap_cutoff: Option<usize>,
    pub modality_filter: Option<Modality>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k_values: vec![1, 5, 10], protocol: Protocol::LeaveOneOut, ap_cutoff: None, modality_filter: None }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() {
            return Err(Error::InvariantViolation("k_values must not be empty".into()));
        }
        if self.k_values[0] == 0 || self.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvariantViolation(format!(
                "k_values must be positive and strictly increasing, got {:?}",
                self.k_values
            )));
        }
        if self.ap_cutoff == Some(0) {
            return Err(Error::InvariantViolation("ap_cutoff must be positive".into()));
        }
        Ok(())
    }
}

/// One labeled query. `id` names the gallery record the query was drawn from
/// and is required under [`Protocol::LeaveOneOut`].
#[derive(Debug, Clone)]
pub struct EvalQuery {
    pub vector: Embedding,
    pub class_label: String,
    pub id: Option<String>,
    pub modality: Option<Modality>,
}

impl EvalQuery {
    /// Every record of `snapshot` as a query, in row order.
    pub fn from_snapshot(snapshot: &IndexSnapshot) -> Vec<EvalQuery> {
        snapshot
            .records()
            .iter()
            .map(|r| EvalQuery {
                vector: Embedding::from_unit(snapshot.row_vector(r.row).to_vec()).expect("rows are validated unit-norm"),
                class_label: r.class_label.clone(),
                id: Some(r.id.clone()),
                modality: Some(r.modality),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// k -> percentage of scored queries with a same-class item in the top k.
    pub top_k_accuracy: BTreeMap<usize, f64>,
    pub mean_ap: f64,
    pub per_class_ap: BTreeMap<String, f64>,
    /// Queries that were scored.
    pub query_count: usize,
    /// Queries without any relevant gallery item.
    pub skipped_queries: usize,
    pub gallery_count: usize,
    pub protocol: Protocol,
    pub ap_cutoff: Option<usize>,
    /// Modality composition of the supplied query set; `"unknown"` when unlabeled.
    pub query_modalities: BTreeMap<String, usize>,
}

impl EvalReport {
    /// Plain-text table: one header row and one result row labeled `method`.
    pub fn table(&self, method: &str) -> String {
        let width = method.len().max("Method".len());
        let mut header = format!("{:<width$}", "Method");
        let mut row = format!("{method:<width$}");
        for (k, acc) in &self.top_k_accuracy {
            let name = format!("Top-{k}");
            let w = name.len().max(6);
            header.push_str(&format!("  {name:>w$}"));
            row.push_str(&format!("  {acc:>w$.2}"));
        }
        header.push_str(&format!("  {:>6}", "mAP"));
        row.push_str(&format!("  {:>6.2}", self.mean_ap));
        format!("{header}\n{row}\n")
    }
}

enum Outcome {
    Skipped,
    Scored { class: String, hits_at: Vec<bool>, ap: f64 },
}

/// Sum of non-negative terms in a fixed order, so the result does not depend
/// on the order the terms were produced in.
fn stable_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

/// Scores every query against `snapshot` and reduces to an [`EvalReport`].
pub fn evaluate(snapshot: &IndexSnapshot, queries: &[EvalQuery], config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    if snapshot.is_empty() {
        return Err(Error::EmptyGallery);
    }
    if queries.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let leave_one_out = config.protocol == Protocol::LeaveOneOut;
    for q in queries {
        if q.vector.dim() != snapshot.dim() {
            return Err(Error::DimensionMismatch { expected: snapshot.dim(), actual: q.vector.dim() });
        }
        if leave_one_out {
            match &q.id {
                Some(id) if snapshot.find(id).is_some() => {}
                Some(id) => return Err(Error::UnknownQueryId(id.clone())),
                None => return Err(Error::UnknownQueryId(String::new())),
            }
        }
    }

    let eligible = |m: Modality| config.modality_filter.map_or(true, |f| f == m);
    let mut relevant_per_class: HashMap<&str, usize> = HashMap::new();
    for r in snapshot.records().iter().filter(|r| eligible(r.modality)) {
        *relevant_per_class.entry(r.class_label.as_str()).or_insert(0) += 1;
    }

    let max_k = *config.k_values.last().expect("validated non-empty");
    let depth = match config.ap_cutoff {
        Some(cutoff) => cutoff.max(max_k),
        None => snapshot.count(),
    };

    let outcomes: Vec<Outcome> = queries
        .par_iter()
        .map(|q| {
            let mut total_relevant = relevant_per_class.get(q.class_label.as_str()).copied().unwrap_or(0);
            let mut spec = QuerySpec::new(q.vector.clone(), depth).with_modality(config.modality_filter);
            if leave_one_out {
                let id = q.id.as_deref().expect("checked above");
                let own = snapshot.find(id).expect("checked above");
                if own.class_label == q.class_label && eligible(own.modality) {
                    total_relevant -= 1;
                }
                spec = spec.excluding(id);
            }
            if total_relevant == 0 {
                return Ok(Outcome::Skipped);
            }
            let ranking = search_rows(snapshot, &spec)?;
            let relevance: Vec<bool> =
                ranking.iter().map(|s| snapshot.record(s.row).class_label == q.class_label).collect();
            let first_hit = relevance.iter().position(|&r| r);
            let hits_at = config.k_values.iter().map(|&k| first_hit.is_some_and(|p| p < k)).collect();
            let relevance = match config.ap_cutoff {
                Some(cutoff) => &relevance[..cutoff.min(relevance.len())],
                None => &relevance[..],
            };
            let ap = average_precision(relevance, total_relevant)?;
            Ok(Outcome::Scored { class: q.class_label.clone(), hits_at, ap })
        })
        .collect::<Result<_>>()?;

    let mut hit_counts = vec![0usize; config.k_values.len()];
    let mut aps = Vec::new();
    let mut per_class: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut skipped = 0usize;
    for outcome in outcomes {
        match outcome {
            Outcome::Skipped => skipped += 1,
            Outcome::Scored { class, hits_at, ap } => {
                for (count, hit) in hit_counts.iter_mut().zip(hits_at) {
                    *count += usize::from(hit);
                }
                aps.push(ap);
                per_class.entry(class).or_default().push(ap);
            }
        }
    }
    let scored = aps.len();
    if scored == 0 {
        return Err(Error::EmptyQuerySet);
    }

    let pct = |numerator: f64, denominator: usize| 100.0 * numerator / denominator as f64;
    let top_k_accuracy = config
        .k_values
        .iter()
        .zip(&hit_counts)
        .map(|(&k, &n)| (k, pct(n as f64, scored)))
        .collect();
    let per_class_ap = per_class
        .into_iter()
        .map(|(class, v)| {
            let n = v.len();
            (class, pct(stable_sum(v), n))
        })
        .collect();
    let mut query_modalities = BTreeMap::new();
    for q in queries {
        let key = q.modality.map_or("unknown", Modality::as_str);
        *query_modalities.entry(key.to_owned()).or_insert(0) += 1;
    }

    Ok(EvalReport {
        top_k_accuracy,
        mean_ap: pct(stable_sum(aps), scored),
        per_class_ap,
        query_count: scored,
        skipped_queries: skipped,
        gallery_count: snapshot.count(),
        protocol: config.protocol,
        ap_cutoff: config.ap_cutoff,
        query_modalities,
    })
}
