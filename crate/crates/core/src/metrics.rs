//! Binary confusion matrix and classification report.

use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Label, LabeledCorpus};
use crate::model::{DetectorModel, ModelError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("label vectors differ in length: {truth} true vs {predicted} predicted")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label {value} at position {index} is not 0 or 1")]
    NonBinaryLabel { index: usize, value: u8 },
    #[error("no examples to evaluate")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Counts indexed `[true label][predicted label]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn to_csv(&self) -> String {
        let c = &self.counts;
        format!("true\\pred,0,1\n0,{},{}\n1,{},{}\n", c[0][0], c[0][1], c[1][0], c[1][1])
    }

    /// Two-by-two heatmap with counts printed in each cell.
    pub fn to_svg(&self) -> String {
        const CELL: u64 = 120;
        const MARGIN: u64 = 80;
        let max = self.counts.iter().flatten().copied().max().unwrap_or(0).max(1);
        let size = MARGIN + 2 * CELL + 20;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" font-family="sans-serif">"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">Predicted label</text>"#,
            MARGIN + CELL
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{0}" text-anchor="middle" font-size="14" transform="rotate(-90 16 {0})">True label</text>"#,
            MARGIN + CELL
        );
        for k in 0..2u64 {
            let centre = MARGIN + k * CELL + CELL / 2;
            let _ = writeln!(
                s,
                r#"<text x="{centre}" y="{}" text-anchor="middle">{k}</text>"#,
                MARGIN - 10
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{centre}" text-anchor="middle">{k}</text>"#,
                MARGIN - 16
            );
        }
        for (t, row) in self.counts.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                let x = MARGIN + p as u64 * CELL;
                let y = MARGIN + t as u64 * CELL;
                let shade = 255 - (200 * n / max) as u8;
                let ink = if shade < 128 { "white" } else { "black" };
                let _ = writeln!(
                    s,
                    r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="black"/>"#
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" font-size="18" fill="{ink}">{n}</text>"#,
                    x + CELL / 2,
                    y + CELL / 2 + 6
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionMatrix, MetricsError> {
    if y_true.len() != y_pred.len() {
        return Err(MetricsError::LengthMismatch {
            truth: y_true.len(),
            predicted: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (index, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        for value in [t, p] {
            if value > 1 {
                return Err(MetricsError::NonBinaryLabel { index, value });
            }
        }
        cm.counts[t as usize][p as usize] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when some rate for this class was 0/0 and defined as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AverageMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub classes: [ClassMetrics; 2],
    pub accuracy: f64,
    pub macro_avg: AverageMetrics,
    pub weighted_avg: AverageMetrics,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn report(cm: &ConfusionMatrix) -> Result<ClassificationReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let c = &cm.counts;
    let classes = [0, 1].map(|k| {
        let support = c[k][0] + c[k][1];
        let predicted = c[0][k] + c[1][k];
        let (precision, p_degenerate) = ratio(c[k][k], predicted);
        let (recall, r_degenerate) = ratio(c[k][k], support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support,
            degenerate: p_degenerate || r_degenerate,
        }
    });
    let macro_avg = AverageMetrics {
        precision: (classes[0].precision + classes[1].precision) / 2.0,
        recall: (classes[0].recall + classes[1].recall) / 2.0,
        f1: (classes[0].f1 + classes[1].f1) / 2.0,
        support: total,
    };
    let weigh =
        |f: fn(&ClassMetrics) -> f64| classes.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64;
    let weighted_avg = AverageMetrics {
        precision: weigh(|m| m.precision),
        recall: weigh(|m| m.recall),
        f1: weigh(|m| m.f1),
        support: total,
    };
    Ok(ClassificationReport {
        classes,
        accuracy: (c[0][0] + c[1][1]) as f64 / total as f64,
        macro_avg,
        weighted_avg,
        total,
    })
}

impl ClassificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Aligned table with two-decimal rates.
impl fmt::Display for ClassificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>12} {:>9} {:>9} {:>9} {:>9}",
            "", "precision", "recall", "f1-score", "support"
        )?;
        writeln!(f)?;
        for (k, m) in self.classes.iter().enumerate() {
            writeln!(
                f,
                "{:>12} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                k, m.precision, m.recall, m.f1, m.support
            )?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "{:>12} {:>9} {:>9} {:>9.2} {:>9}",
            "accuracy", "", "", self.accuracy, self.total
        )?;
        for (name, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            writeln!(
                f,
                "{:>12} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                name, a.precision, a.recall, a.f1, a.support
            )?;
        }
        Ok(())
    }
}

/// Predicts every record at threshold 0.5 and scores the result.
pub fn evaluate_model(
    model: &DetectorModel,
    corpus: &LabeledCorpus,
) -> Result<(ConfusionMatrix, ClassificationReport), MetricsError> {
    let encoded: Vec<Vec<usize>> = corpus.iter().map(|r| model.encode_text(&r.text)).collect();
    let ids: Vec<&[usize]> = encoded.iter().map(Vec::as_slice).collect();
    let probs = model.predict_many(&ids)?;
    let y_true: Vec<u8> = corpus.iter().map(|r| r.label.as_u8()).collect();
    let y_pred: Vec<u8> = probs.iter().map(|&p| Label::from_probability(p).as_u8()).collect();
    let cm = confusion(&y_true, &y_pred)?;
    let rep = report(&cm)?;
    Ok((cm, rep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_counted_matrix() {
        let cm = confusion(&[1, 1, 0, 0], &[1, 0, 0, 0]).unwrap();
        assert_eq!(cm.counts, [[2, 0], [1, 1]]);
        let single = confusion(&[1], &[0]).unwrap();
        assert_eq!(single.counts, [[0, 0], [1, 0]]);
        let diag = confusion(&[0, 1, 1], &[0, 1, 1]).unwrap();
        assert_eq!(diag.counts, [[1, 0], [0, 2]]);
    }

    #[test]
    fn confusion_errors() {
        assert!(matches!(
            confusion(&[0, 1], &[0]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            confusion(&[0, 2], &[0, 1]),
            Err(MetricsError::NonBinaryLabel { index: 1, value: 2 })
        ));
    }

    #[test]
    fn hand_computed_report() {
        let r = report(&ConfusionMatrix {
            counts: [[2, 0], [1, 1]],
        })
        .unwrap();
        assert_eq!(r.classes[1].precision, 1.0);
        assert_eq!(r.classes[1].recall, 0.5);
        assert!((r.classes[1].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.weighted_avg.recall, r.accuracy);
    }

    #[test]
    fn perfect_predictions() {
        let r = report(&ConfusionMatrix {
            counts: [[5, 0], [0, 7]],
        })
        .unwrap();
        for m in &r.classes {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
            assert!(!m.degenerate);
        }
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn zero_over_zero_is_flagged() {
        let r = report(&ConfusionMatrix {
            counts: [[3, 0], [2, 0]],
        })
        .unwrap();
        assert_eq!(r.classes[1].precision, 0.0);
        assert!(r.classes[1].degenerate);
        assert!(!r.classes[0].degenerate);
    }

    /// 1351 per class with 14 to 20 AI texts called human rounds to the
    /// reference two-decimal rows.
    #[test]
    fn reference_report_rows() {
        for k in 14..=20 {
            let r = report(&ConfusionMatrix {
                counts: [[1351, 0], [k, 1351 - k]],
            })
            .unwrap();
            let text = r.to_string();
            let lines: Vec<&str> = text.lines().collect();
            assert_eq!(
                lines[2].split_whitespace().collect::<Vec<_>>(),
                ["0", "0.99", "1.00", "0.99", "1351"]
            );
            assert_eq!(
                lines[3].split_whitespace().collect::<Vec<_>>(),
                ["1", "1.00", "0.99", "0.99", "1351"]
            );
            assert_eq!(
                lines[5].split_whitespace().collect::<Vec<_>>(),
                ["accuracy", "0.99", "2702"]
            );
            assert_eq!(
                lines[6].split_whitespace().collect::<Vec<_>>(),
                ["macro", "avg", "0.99", "0.99", "0.99", "2702"]
            );
            assert_eq!(
                lines[7].split_whitespace().collect::<Vec<_>>(),
                ["weighted", "avg", "0.99", "0.99", "0.99", "2702"]
            );
        }
    }

    #[test]
    fn json_keeps_full_precision() {
        let r = report(&ConfusionMatrix {
            counts: [[2, 0], [1, 1]],
        })
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["classes"][1]["f1"].as_f64().unwrap(), r.classes[1].f1);
        assert_eq!(v["total"], 4);
    }

    #[test]
    fn csv_and_svg() {
        let cm = ConfusionMatrix {
            counts: [[2, 0], [1, 1]],
        };
        assert_eq!(cm.to_csv(), "true\\pred,0,1\n0,2,0\n1,1,1\n");
        let svg = cm.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 4);
    }

    fn pairs() -> impl Strategy<Value = Vec<(u8, u8)>> {
        prop::collection::vec((0u8..2, 0u8..2), 1..200)
    }

    proptest! {
        #[test]
        fn rates_bounded_and_f1_between(p in pairs()) {
            let (t, y): (Vec<u8>, Vec<u8>) = p.into_iter().unzip();
            let r = report(&confusion(&t, &y).unwrap()).unwrap();
            for m in &r.classes {
                for v in [m.precision, m.recall, m.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                if m.precision > 0.0 && m.recall > 0.0 {
                    prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-15);
                    prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-15);
                }
            }
            prop_assert!((r.weighted_avg.recall - r.accuracy).abs() <= 1e-15);
        }

        #[test]
        fn permutation_invariant(p in pairs(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let (t, y): (Vec<u8>, Vec<u8>) = p.iter().copied().unzip();
            let mut q = p.clone();
            q.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (t2, y2): (Vec<u8>, Vec<u8>) = q.into_iter().unzip();
            prop_assert_eq!(confusion(&t, &y).unwrap(), confusion(&t2, &y2).unwrap());
        }
    }
}
