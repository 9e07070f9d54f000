//! Confusion matrices, ICBHI scores, per-class statistics and report files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        ConfusionMatrix { n, counts: vec![0; n * n] }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape(format!("confusion matrix must be square with at least 2 classes, got {n} rows")));
        }
        Ok(ConfusionMatrix { n, counts: rows.concat() })
    }

    pub fn from_predictions(truth: &[usize], pred: &[usize], n: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Shape(format!("{} labels vs {} predictions", truth.len(), pred.len())));
        }
        let mut m = ConfusionMatrix::new(n);
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= n || p >= n {
                return Err(Error::InvalidArgument(format!("class index out of range: true {t}, pred {p}, classes {n}")));
            }
            m.counts[t * n + p] += 1;
        }
        Ok(m)
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, t: usize, p: usize) -> u64 {
        self.counts[t * self.n + p]
    }

    pub fn add(&mut self, t: usize, p: usize, count: u64) {
        self.counts[t * self.n + p] += count;
    }

    pub fn row_total(&self, t: usize) -> u64 {
        self.counts[t * self.n..(t + 1) * self.n].iter().sum()
    }

    pub fn col_total(&self, p: usize) -> u64 {
        (0..self.n).map(|t| self.get(t, p)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n).map(<[u64]>::to_vec).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcbhiScore {
    pub sp: f64,
    pub se: f64,
    pub score: f64,
}

/// Specificity over class 0, sensitivity over every other class, and their mean.
///
/// An empty normal or abnormal block makes the corresponding ratio NaN.
pub fn icbhi_score(cm: &ConfusionMatrix) -> IcbhiScore {
    let n_norm = cm.row_total(0);
    let n_abn: u64 = (1..cm.n).map(|c| cm.row_total(c)).sum();
    let p_abn: u64 = (1..cm.n).map(|c| cm.get(c, c)).sum();
    let ratio = |num: u64, den: u64, what: &str| {
        if den == 0 {
            log::warn!("no {what} samples in the confusion matrix; ratio is undefined");
            f64::NAN
        } else {
            num as f64 / den as f64
        }
    };
    let sp = ratio(cm.get(0, 0), n_norm, "normal");
    let se = ratio(p_abn, n_abn, "abnormal");
    IcbhiScore { sp, se, score: (sp + se) / 2.0 }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a denominator was zero and the statistic fell back to 0.
    pub undefined: bool,
}

pub fn per_class_stats(cm: &ConfusionMatrix) -> Vec<ClassStats> {
    (0..cm.n)
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let fp = cm.col_total(c) as f64 - tp;
            let fn_ = cm.row_total(c) as f64 - tp;
            let mut undefined = false;
            let mut div = |a: f64, b: f64| {
                if b == 0.0 {
                    undefined = true;
                    0.0
                } else {
                    a / b
                }
            };
            let precision = div(tp, tp + fp);
            let recall = div(tp, tp + fn_);
            let f1 = div(2.0 * precision * recall, precision + recall);
            ClassStats { precision, recall, f1, undefined }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// Each abnormal class against normal only: `(X→X, normal→X, X→normal)`.
pub fn pairwise_vs_normal(cm: &ConfusionMatrix) -> Vec<PairCounts> {
    (1..cm.n).map(|c| PairCounts { tp: cm.get(c, c), fp: cm.get(0, c), fn_: cm.get(c, 0) }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub truth: usize,
    pub pred: usize,
    pub probs: Vec<f64>,
}

pub const FOUR_CLASS_HEADER: &str = "id,true,pred,p_normal,p_crackle,p_wheeze,p_both";

fn header_for(class_names: &[&str]) -> String {
    let mut h = String::from("id,true,pred");
    for c in class_names {
        let _ = write!(h, ",p_{c}");
    }
    h
}

/// Predictions CSV. Labels and columns use the given class names.
pub fn predictions_csv(preds: &[Prediction], class_names: &[&str]) -> String {
    let mut out = header_for(class_names);
    out.push('\n');
    for p in preds {
        let _ = write!(out, "{},{},{}", p.id, class_names[p.truth], class_names[p.pred]);
        for v in &p.probs {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_predictions_csv(text: &str, class_names: &[&str]) -> Result<Vec<Prediction>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let expected = header_for(class_names);
    match lines.next() {
        Some((_, h)) if h.trim() == expected => {}
        Some((i, h)) => {
            return Err(Error::Parse { line: i + 1, msg: format!("expected header `{expected}`, found `{}`", h.trim()) })
        }
        None => return Err(Error::Parse { line: 1, msg: "empty predictions file".into() }),
    }
    let class_of = |name: &str, line: usize| {
        class_names
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Parse { line, msg: format!("unknown class `{name}`") })
    };
    let mut out = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 3 + class_names.len() {
            return Err(Error::Parse { line: i + 1, msg: format!("expected {} fields, got {}", 3 + class_names.len(), fields.len()) });
        }
        let probs = fields[3..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| Error::Parse { line: i + 1, msg: format!("probability `{f}`: {e}") }))
            .collect::<Result<Vec<_>>>()?;
        out.push(Prediction {
            id: fields[0].to_string(),
            truth: class_of(fields[1], i + 1)?,
            pred: class_of(fields[2], i + 1)?,
            probs,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub classes: Vec<String>,
    pub samples: u64,
    /// Percentages.
    pub sp: f64,
    pub se: f64,
    pub score: f64,
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<NamedStats>,
    pub vs_normal: Vec<NamedPair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedStats {
    pub class: String,
    #[serde(flatten)]
    pub stats: ClassStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedPair {
    pub class: String,
    #[serde(flatten)]
    pub counts: PairCounts,
}

impl ScoreReport {
    pub fn build(cm: &ConfusionMatrix, class_names: &[&str]) -> Self {
        let s = icbhi_score(cm);
        ScoreReport {
            classes: class_names.iter().map(|c| c.to_string()).collect(),
            samples: cm.total(),
            sp: 100.0 * s.sp,
            se: 100.0 * s.se,
            score: 100.0 * s.score,
            confusion: cm.rows(),
            per_class: per_class_stats(cm)
                .into_iter()
                .zip(class_names)
                .map(|(stats, c)| NamedStats { class: c.to_string(), stats })
                .collect(),
            vs_normal: pairwise_vs_normal(cm)
                .into_iter()
                .zip(&class_names[1..])
                .map(|(counts, c)| NamedPair { class: c.to_string(), counts })
                .collect(),
        }
    }

    pub fn from_predictions(preds: &[Prediction], class_names: &[&str]) -> Result<Self> {
        let truth: Vec<usize> = preds.iter().map(|p| p.truth).collect();
        let pred: Vec<usize> = preds.iter().map(|p| p.pred).collect();
        let cm = ConfusionMatrix::from_predictions(&truth, &pred, class_names.len())?;
        Ok(Self::build(&cm, class_names))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in &self.classes {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            out.push_str(c);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Fixed-width text rendering of the confusion matrix.
    pub fn confusion_grid(&self) -> String {
        let w = self
            .classes
            .iter()
            .map(String::len)
            .chain(self.confusion.iter().flatten().map(|v| v.to_string().len()))
            .max()
            .unwrap_or(1)
            .max(9);
        let mut out = format!("{:>w$}", "true\\pred");
        for c in &self.classes {
            let _ = write!(out, " {c:>w$}");
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            let _ = write!(out, "{c:>w$}");
            for v in row {
                let _ = write!(out, " {v:>w$}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "Sp {:.2}%  Se {:.2}%  Score {:.2}%", self.sp, self.se, self.score);
        out
    }

    /// Writes `report.json`, `confusion.csv` and `confusion.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in
            [("report.json", self.to_json()), ("confusion.csv", self.confusion_csv()), ("confusion.txt", self.confusion_grid())]
        {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
