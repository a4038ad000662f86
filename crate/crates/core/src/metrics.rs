//! Confusion matrices, precision/recall/accuracy and wall-clock timing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `m x m` counts, rows are true classes and columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, predicted)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes).map(<[u64]>::to_vec).collect()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct(), self.total()).0
    }

    /// Header row `truth\pred,0,1,...` then one row per true class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth\\pred");
        for c in 0..self.classes {
            out += &format!(",{c}");
        }
        out.push('\n');
        for t in 0..self.classes {
            out += &t.to_string();
            for p in 0..self.classes {
                out += &format!(",{}", self.get(t, p));
            }
            out.push('\n');
        }
        out
    }
}

/// Builds a confusion matrix from paired label slices.
pub fn confusion(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Confusion> {
    if truth.len() != predicted.len() {
        return Err(Error::Validation(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut c = Confusion::new(classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= classes || p >= classes {
            return Err(Error::Validation(format!("label {} outside 0..{classes}", t.max(p))));
        }
        c.add(t, p);
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Scores for one positive class. A zero denominator gives 0 with its flag set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

pub fn precision_recall(conf: &Confusion, positive: usize) -> Scores {
    let tp = conf.get(positive, positive);
    let (precision, precision_undefined) = ratio(tp, conf.col_sum(positive));
    let (recall, recall_undefined) = ratio(tp, conf.row_sum(positive));
    Scores {
        precision,
        recall,
        accuracy: conf.accuracy(),
        precision_undefined,
        recall_undefined,
    }
}

/// Unweighted mean of per-class precision and recall.
pub fn macro_scores(conf: &Confusion) -> Scores {
    let per: Vec<Scores> = (0..conf.classes()).map(|c| precision_recall(conf, c)).collect();
    let n = per.len().max(1) as f64;
    Scores {
        precision: per.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: per.iter().map(|s| s.recall).sum::<f64>() / n,
        accuracy: conf.accuracy(),
        precision_undefined: per.iter().any(|s| s.precision_undefined),
        recall_undefined: per.iter().any(|s| s.recall_undefined),
    }
}

/// Scores reported for a task: binary uses class 1 as positive, otherwise macro.
pub fn task_scores(conf: &Confusion) -> Scores {
    if conf.classes() == 2 {
        precision_recall(conf, 1)
    } else {
        macro_scores(conf)
    }
}

/// Elapsed time of one named section. Nested sections use `/`-joined names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub name: String,
    pub seconds: f64,
}

/// Records wall-clock time for named, possibly nested, sections.
#[derive(Debug, Default)]
pub struct Stopwatch {
    open: Vec<(String, Instant)>,
    done: Vec<Section>,
}

impl Stopwatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn start(&mut self, name: &str) {
        let full = match self.open.last() {
            Some((parent, _)) => format!("{parent}/{name}"),
            None => name.to_string(),
        };
        self.open.push((full, Instant::now()));
    }

    /// Closes the innermost open section and returns its elapsed seconds.
    pub fn stop(&mut self) -> f64 {
        let (name, start) = self.open.pop().expect("stop without a matching start");
        let seconds = start.elapsed().as_secs_f64();
        self.done.push(Section { name, seconds });
        seconds
    }

    pub fn measure<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        self.start(name);
        let out = f(self);
        self.stop();
        out
    }

    pub fn sections(&self) -> &[Section] {
        &self.done
    }

    /// Total seconds recorded under exactly `name`.
    pub fn seconds(&self, name: &str) -> f64 {
        self.done.iter().filter(|s| s.name == name).map(|s| s.seconds).sum()
    }

    pub fn into_sections(self) -> Vec<Section> {
        self.done
    }
}
