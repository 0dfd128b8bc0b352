//! Human-readable topic summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::fmt::sig9;
use crate::matrix::Matrix;
use crate::metrics::top_products;
use crate::summary::ClusteredModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardRow {
    pub label: String,
    pub probability: f64,
}

/// How many of the pooled samples contain a topic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recurrence {
    pub size: usize,
    pub samples: usize,
}

impl Recurrence {
    pub fn ratio(&self) -> f64 {
        self.size as f64 / self.samples as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCard {
    pub topic_index: usize,
    pub rows: Vec<CardRow>,
    pub recurrence: Option<Recurrence>,
}

/// Builds one card per row of `topics` listing its `top_n` most probable
/// products, highest first (ties by product id).
pub fn emit_topic_cards(
    topics: &Matrix,
    recurrence: Option<&[Recurrence]>,
    vocab: &Vocabulary,
    top_n: usize,
) -> Result<Vec<TopicCard>> {
    if topics.cols() != vocab.len() {
        return Err(Error::InvalidInput(format!(
            "topics cover {} products but the vocabulary has {}",
            topics.cols(),
            vocab.len()
        )));
    }
    if let Some(r) = recurrence {
        if r.len() != topics.rows() {
            return Err(Error::InvalidInput(
                "one recurrence per topic is required".into(),
            ));
        }
    }
    Ok(topics
        .iter_rows()
        .enumerate()
        .map(|(t, row)| TopicCard {
            topic_index: t,
            rows: top_products(row, top_n)
                .into_iter()
                .map(|v| CardRow {
                    label: vocab.label(v).to_string(),
                    probability: row[v as usize],
                })
                .collect(),
            recurrence: recurrence.map(|r| r[t]),
        })
        .collect())
}

/// Cards for a clustered model, carrying each cluster's recurrence.
pub fn model_cards(
    model: &ClusteredModel,
    vocab: &Vocabulary,
    top_n: usize,
) -> Result<Vec<TopicCard>> {
    let rec: Vec<Recurrence> = model
        .clusters
        .iter()
        .map(|c| Recurrence {
            size: c.size(),
            samples: model.num_samples,
        })
        .collect();
    emit_topic_cards(&model.centroids(), Some(&rec), vocab, top_n)
}

/// Plain-text rendering of cards.
pub fn render_text(cards: &[TopicCard]) -> String {
    let mut out = String::new();
    for (i, card) in cards.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(out, "topic {}", card.topic_index);
        if let Some(r) = card.recurrence {
            let _ = write!(out, "  credibility {}/{}", r.size, r.samples);
        }
        out.push('\n');
        let width = card.rows.iter().map(|r| r.label.len()).max().unwrap_or(0);
        for row in &card.rows {
            let _ = writeln!(out, "  {:<width$}  {}", row.label, sig9(row.probability));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summary::{agglomerate, filter_clusters, pool_distances, MergeMode, TopicPool};

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_parts((0..n).map(|i| format!("p{i}")).collect(), vec![1; n]).unwrap()
    }

    #[test]
    fn rows_are_sorted_and_truncated() {
        let m = Matrix::from_rows(&[[0.1, 0.5, 0.1, 0.3]]).unwrap();
        let cards = emit_topic_cards(&m, None, &vocab(4), 3).unwrap();
        let labels: Vec<&str> = cards[0].rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, vec!["p1", "p3", "p0"]);
        assert!(cards[0]
            .rows
            .windows(2)
            .all(|w| w[0].probability >= w[1].probability));
        assert!(emit_topic_cards(&m, None, &vocab(3), 3).is_err());
    }

    #[test]
    fn recurrence_ratios() {
        let row = [0.25, 0.25, 0.5];
        let mats: Vec<Matrix> = (0..20)
            .map(|_| Matrix::from_rows(&[row]).unwrap())
            .collect();
        let pool = TopicPool::from_matrices(&mats).unwrap();
        let d = pool_distances(&pool).unwrap();
        let model = filter_clusters(
            &agglomerate(&pool, &d, 0.1, MergeMode::Constrained).unwrap(),
            1,
        )
        .unwrap();
        let cards = model_cards(&model, &vocab(3), 15).unwrap();
        let r = cards[0].recurrence.unwrap();
        assert_eq!((r.size, r.samples), (20, 20));
        assert_eq!(r.ratio(), 1.0);
        assert!(render_text(&cards).contains("credibility 20/20"));

        let single = filter_clusters(
            &agglomerate(&pool, &d, 0.0, MergeMode::Constrained).unwrap(),
            1,
        )
        .unwrap();
        let cards = model_cards(&single, &vocab(3), 15).unwrap();
        assert_eq!(cards.len(), 20);
        assert_eq!(cards[0].recurrence.unwrap().ratio(), 1.0 / 20.0);
    }
}
