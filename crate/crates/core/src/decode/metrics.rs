use std::collections::BTreeSet;

use serde::Serialize;

use super::SpanPrediction;
use crate::data::{Entity, LabelSet};

/// Pooled exact-match counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Prf {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Prf {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: Prf) {
        self.correct += other.correct;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }
}

fn doc_counts(pred: &[SpanPrediction], gold: &[Entity], type_filter: Option<usize>) -> Prf {
    let keep = |t: usize| type_filter.is_none_or(|f| f == t);
    let p: BTreeSet<(usize, usize, usize)> = pred
        .iter()
        .filter(|s| keep(s.type_id))
        .map(|s| (s.start, s.end, s.type_id))
        .collect();
    let g: BTreeSet<(usize, usize, usize)> = gold
        .iter()
        .filter(|e| keep(e.type_id))
        .map(|e| (e.start, e.end, e.type_id))
        .collect();
    Prf {
        correct: p.intersection(&g).count(),
        predicted: p.len(),
        gold: g.len(),
    }
}

/// Corpus-level exact-match counts over aligned documents.
pub fn micro_prf<'a>(pred: impl IntoIterator<Item = &'a [SpanPrediction]>, gold: impl IntoIterator<Item = &'a [Entity]>) -> Prf {
    let mut total = Prf::default();
    for (p, g) in pred.into_iter().zip(gold) {
        total.add(doc_counts(p, g, None));
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TypeReport {
    pub name: String,
    pub counts: Prf,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TypeReport {
    fn new(name: String, counts: Prf) -> Self {
        Self {
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            name,
            counts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub micro: TypeReport,
    pub per_type: Vec<TypeReport>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
            "type", "P", "R", "F1", "correct", "pred", "gold"
        );
        for r in self.per_type.iter().chain(std::iter::once(&self.micro)) {
            s.push_str(&format!(
                "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>8} {:>8} {:>8}\n",
                r.name, r.precision, r.recall, r.f1, r.counts.correct, r.counts.predicted, r.counts.gold
            ));
        }
        s
    }
}

/// Micro and per-type P/R/F1 over aligned `(predictions, gold)` pairs.
pub fn evaluate(docs: &[(&[SpanPrediction], &[Entity])], labels: &LabelSet) -> EvalReport {
    let micro = micro_prf(docs.iter().map(|d| d.0), docs.iter().map(|d| d.1));
    let per_type = (0..labels.len())
        .map(|t| {
            let mut c = Prf::default();
            for (p, g) in docs {
                c.add(doc_counts(p, g, Some(t)));
            }
            TypeReport::new(labels.name(t).to_string(), c)
        })
        .collect();
    EvalReport {
        micro: TypeReport::new("micro".into(), micro),
        per_type,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_case() {
        let gold = vec![Entity::new(0, 2, 0)];
        let pred = vec![
            SpanPrediction {
                start: 0,
                end: 2,
                type_id: 0,
                score: 1.0,
            },
            SpanPrediction {
                start: 4,
                end: 5,
                type_id: 1,
                score: 1.0,
            },
        ];
        let c = micro_prf([pred.as_slice()], [gold.as_slice()]);
        assert_eq!(c.precision(), 0.5);
        assert_eq!(c.recall(), 1.0);
        assert_eq!(c.f1(), 2.0 / 3.0);
    }

    #[test]
    fn empty_predictions() {
        let gold = vec![Entity::new(0, 2, 0)];
        let c = micro_prf([[].as_slice()], [gold.as_slice()]);
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn per_type_sums_to_micro() {
        let labels = LabelSet::from_names(["A", "B"]);
        let gold = vec![Entity::new(0, 2, 0), Entity::new(3, 3, 1)];
        let pred = vec![SpanPrediction {
            start: 3,
            end: 3,
            type_id: 1,
            score: 1.0,
        }];
        let r = evaluate(&[(&pred, &gold)], &labels);
        assert_eq!(r.per_type[1].f1, 1.0);
        assert_eq!(r.per_type[0].recall, 0.0);
        assert_eq!(
            r.micro.counts,
            Prf {
                correct: 1,
                predicted: 1,
                gold: 2
            }
        );
        assert!(r.to_table().contains("micro"));
    }
}
