//! Retrieval metrics, the uniformity diagnostic, the lexical-overlap query split and
//! run evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{split_surfaces, target_surfaces, Corpus, RetrievalExample, TargetMode};
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, squared_distance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Ranked retrieval output for one query; scores are non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query: String,
    pub ranked: Vec<ScoredDoc>,
}

impl RankedResult {
    pub fn doc_ids(&self) -> Vec<&str> {
        self.ranked.iter().map(|d| d.doc_id.as_str()).collect()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.ranked.windows(2).any(|w| w[1].score > w[0].score) {
            return Err(format!(
                "scores for query {:?} are not non-increasing",
                self.query
            ));
        }
        Ok(())
    }
}

fn distinct_hits(ranked: &[&str], cutoff: usize, gold: &BTreeSet<&str>) -> usize {
    ranked
        .iter()
        .take(cutoff)
        .filter(|d| gold.contains(*d))
        .collect::<BTreeSet<_>>()
        .len()
}

/// `|top-R ∩ provenance| / R` with `R = |provenance|`.
pub fn r_precision(ranked: &[&str], provenance: &BTreeSet<&str>) -> Result<f64> {
    let r = provenance.len();
    if r == 0 {
        return Err(Error::invalid(
            "R-precision needs a non-empty provenance set",
        ));
    }
    Ok(distinct_hits(ranked, r, provenance) as f64 / r as f64)
}

/// 1 when any gold document is in the top `n`.
pub fn hits_at_n(ranked: &[&str], provenance: &BTreeSet<&str>, n: usize) -> f64 {
    if distinct_hits(ranked, n, provenance) > 0 {
        1.0
    } else {
        0.0
    }
}

pub fn recall_at_k(ranked: &[&str], provenance: &BTreeSet<&str>, k: usize) -> f64 {
    if provenance.is_empty() {
        return 0.0;
    }
    distinct_hits(ranked, k, provenance) as f64 / provenance.len() as f64
}

pub const DEFAULT_UNIFORMITY_T: f64 = 2.0;

/// Log of the mean Gaussian potential `exp(-t‖x-y‖²)` over ordered distinct pairs.
pub fn uniformity<V: AsRef<[f64]>>(vectors: &[V], t: f64) -> Result<f64> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::invalid("uniformity needs at least two vectors"));
    }
    let mut terms = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            terms.push(-t * squared_distance(vectors[i].as_ref(), vectors[j].as_ref()));
        }
    }
    Ok(log_sum_exp(&terms) - ((n * (n - 1) / 2) as f64).ln())
}

/// TF-IDF model whose document frequencies come from corpus target surfaces.
#[derive(Debug, Clone)]
pub struct TfIdf {
    idf_docs: usize,
    df: BTreeMap<String, usize>,
}

impl TfIdf {
    pub fn fit<I, S>(documents: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut df = BTreeMap::new();
        let mut idf_docs = 0;
        for doc in documents {
            idf_docs += 1;
            let terms: BTreeSet<String> = split_surfaces(doc.as_ref()).into_iter().collect();
            for t in terms {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        Self { idf_docs, df }
    }

    /// Smoothed inverse document frequency `ln((1+N)/(1+df)) + 1`.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0);
        ((1 + self.idf_docs) as f64 / (1 + df) as f64).ln() + 1.0
    }

    pub fn vector(&self, text: &str) -> BTreeMap<String, f64> {
        let mut tf: BTreeMap<String, f64> = BTreeMap::new();
        for t in split_surfaces(text) {
            *tf.entry(t).or_insert(0.0) += 1.0;
        }
        for (t, v) in tf.iter_mut() {
            *v *= self.idf(t);
        }
        tf
    }

    pub fn cosine(&self, a: &str, b: &str) -> f64 {
        let (va, vb) = (self.vector(a), self.vector(b));
        let dot: f64 = va
            .iter()
            .filter_map(|(t, x)| vb.get(t).map(|y| x * y))
            .sum();
        let na = va.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb = vb.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

fn surface_text(corpus: &Corpus, ordinal: usize, mode: TargetMode) -> String {
    target_surfaces(corpus.doc(ordinal), mode).join(" ")
}

/// Per-query overlap score: TF-IDF cosine against the gold target surface (maximum
/// over the provenance set).
pub fn overlap_scores(
    examples: &[RetrievalExample],
    corpus: &Corpus,
    mode: TargetMode,
) -> Result<Vec<f64>> {
    let model = TfIdf::fit((0..corpus.len()).map(|i| surface_text(corpus, i, mode)));
    examples
        .iter()
        .map(|ex| {
            let mut best = f64::NEG_INFINITY;
            for id in &ex.provenance {
                let ord = corpus
                    .ordinal_of(id)
                    .ok_or_else(|| Error::invalid(format!("unknown provenance doc_id {id:?}")))?;
                best = best.max(model.cosine(&ex.query, &surface_text(corpus, ord, mode)));
            }
            if best.is_finite() {
                Ok(best)
            } else {
                Err(Error::invalid(format!(
                    "query {:?} has no provenance",
                    ex.query
                )))
            }
        })
        .collect()
}

/// Indices of low- and high-overlap queries, split at the mean score; ties go high.
pub fn split_at_mean(scores: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
    (0..scores.len()).partition(|&i| scores[i] < mean)
}

pub fn lexical_overlap_split(
    examples: &[RetrievalExample],
    corpus: &Corpus,
    mode: TargetMode,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if examples.is_empty() {
        return Err(Error::invalid("lexical split needs at least one example"));
    }
    Ok(split_at_mean(&overlap_scores(examples, corpus, mode)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    RPrecision,
    Hits(usize),
    Recall(usize),
}

impl Metric {
    pub fn score(self, ranked: &[&str], provenance: &BTreeSet<&str>) -> Result<f64> {
        match self {
            Metric::RPrecision => r_precision(ranked, provenance),
            Metric::Hits(n) => Ok(hits_at_n(ranked, provenance, n)),
            Metric::Recall(k) => Ok(recall_at_k(ranked, provenance, k)),
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let list: Vec<Metric> = s
            .split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        if list.is_empty() {
            return Err(Error::invalid("empty metric list"));
        }
        Ok(list)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cutoff = |v: &str| match v.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::invalid(format!(
                "metric cutoff must be a positive integer in {s:?}"
            ))),
        };
        match s.split_once('@') {
            None if s == "rprec" => Ok(Metric::RPrecision),
            Some(("hits", n)) => Ok(Metric::Hits(cutoff(n)?)),
            Some(("recall", k)) => Ok(Metric::Recall(cutoff(k)?)),
            _ => Err(Error::invalid(format!("unknown metric {s:?}"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::RPrecision => f.write_str("rprec"),
            Metric::Hits(n) => write!(f, "hits@{n}"),
            Metric::Recall(k) => write!(f, "recall@{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: Metric,
    /// `None` for the overall row.
    pub split: Option<&'static str>,
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn mean(&self, metric: Metric, split: Option<&str>) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.split == split)
            .map(|r| r.mean)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rows {
            match r.split {
                None => writeln!(f, "{}\t{:.6}\t{}", r.metric, r.mean, r.count)?,
                Some(s) => writeln!(f, "{}[{s}]\t{:.6}\t{}", r.metric, r.mean, r.count)?,
            }
        }
        Ok(())
    }
}

fn mean_over(values: &[f64], idx: impl Iterator<Item = usize>) -> (f64, usize) {
    let (sum, n) = idx.fold((0.0, 0), |(s, n), i| (s + values[i], n + 1));
    (if n == 0 { 0.0 } else { sum / n as f64 }, n)
}

/// Scores `results` against `examples` (matched line by line).
pub fn evaluate_run(
    results: &[RankedResult],
    examples: &[RetrievalExample],
    metrics: &[Metric],
    split: Option<&(Vec<usize>, Vec<usize>)>,
) -> Result<Report> {
    if results.is_empty() {
        return Err(Error::invalid("empty results"));
    }
    if results.len() != examples.len() {
        return Err(Error::invalid(format!(
            "{} results for {} examples",
            results.len(),
            examples.len()
        )));
    }
    for (i, (r, e)) in results.iter().zip(examples).enumerate() {
        if r.query != e.query {
            return Err(Error::invalid(format!(
                "query mismatch at line {}: {:?} vs {:?}",
                i + 1,
                r.query,
                e.query
            )));
        }
    }
    let mut report = Report::default();
    for &metric in metrics {
        let values: Vec<f64> = results
            .iter()
            .zip(examples)
            .map(|(r, e)| metric.score(&r.doc_ids(), &e.provenance_set()))
            .collect::<Result<_>>()?;
        let (mean, count) = mean_over(&values, 0..values.len());
        report.rows.push(ReportRow {
            metric,
            split: None,
            mean,
            count,
        });
        if let Some((low, high)) = split {
            for (name, idx) in [("low", low), ("high", high)] {
                let (mean, count) = mean_over(&values, idx.iter().copied());
                report.rows.push(ReportRow {
                    metric,
                    split: Some(name),
                    mean,
                    count,
                });
            }
        }
    }
    Ok(report)
}

pub fn save_results(path: impl AsRef<Path>, results: &[RankedResult]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in results {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::invalid(e.to_string()))?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<RankedResult>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let r: RankedResult = serde_json::from_str(line).map_err(|e| parse(e.to_string()))?;
        r.validate().map_err(parse)?;
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;

    fn gold<'a>(ids: &[&'a str]) -> BTreeSet<&'a str> {
        ids.iter().copied().collect()
    }

    #[test]
    fn metric_examples() {
        assert_eq!(r_precision(&["a", "x"], &gold(&["a", "b"])).unwrap(), 0.5);
        assert_eq!(r_precision(&["a", "x"], &gold(&["a"])).unwrap(), 1.0);
        assert_eq!(
            r_precision(&["a", "b"], &gold(&["a", "b", "c"])).unwrap(),
            2.0 / 3.0
        );
        assert!(r_precision(&["a"], &gold(&[])).is_err());
        let ranked: Vec<String> = (1..=11).map(|i| format!("d{i}")).collect();
        let ranked: Vec<&str> = ranked.iter().map(String::as_str).collect();
        assert_eq!(hits_at_n(&ranked, &gold(&["d10"]), 10), 1.0);
        assert_eq!(hits_at_n(&ranked, &gold(&["d11"]), 10), 0.0);
        assert_eq!(recall_at_k(&["a", "b", "c"], &gold(&["a", "b"]), 2), 1.0);
    }

    #[test]
    fn uniformity_examples() {
        assert_eq!(uniformity(&vec![vec![0.3, 1.0]; 4], 2.0).unwrap(), 0.0);
        assert!((uniformity(&[vec![0.0, 0.0], vec![1.0, 0.0]], 2.0).unwrap() + 2.0).abs() < 1e-15);
        assert!(uniformity(&[vec![1.0]], 2.0).is_err());
        // Ordered-pair oracle.
        let pts = [vec![0.0, 1.0], vec![2.0, 0.5], vec![-1.0, 0.0]];
        let mut s = 0.0;
        for (i, a) in pts.iter().enumerate() {
            for (j, b) in pts.iter().enumerate() {
                if i != j {
                    s += (-2.0 * squared_distance(a, b)).exp();
                }
            }
        }
        assert!((uniformity(&pts, 2.0).unwrap() - (s / 6.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn mean_split_tie_goes_high() {
        let (low, high) = split_at_mean(&[0.0, 0.5, 1.0]);
        assert_eq!(low, [0]);
        assert_eq!(high, [1, 2]);
    }

    fn corpus() -> Corpus {
        Corpus::new(
            ["cape town", "old harbour", "blue lake"]
                .iter()
                .enumerate()
                .map(|(i, t)| Document {
                    doc_id: format!("d{i}"),
                    title: t.to_string(),
                    content: String::new(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn overlap_split_examples() {
        let c = corpus();
        let ex = |q: &str, d: &str| RetrievalExample {
            query: q.into(),
            provenance: vec![d.into()],
        };
        let examples = [
            ex("cape town", "d0"),
            ex("nothing shared", "d1"),
            ex("blue sky", "d2"),
        ];
        let scores = overlap_scores(&examples, &c, TargetMode::Title).unwrap();
        assert!((scores[0] - 1.0).abs() < 1e-12);
        assert_eq!(scores[1], 0.0);
        assert!(scores[0] >= scores[2]);
        let (low, high) = lexical_overlap_split(&examples, &c, TargetMode::Title).unwrap();
        assert!(high.contains(&0) && low.contains(&1));
        assert_eq!(low.len() + high.len(), examples.len());
    }

    fn result(q: &str, docs: &[&str]) -> RankedResult {
        RankedResult {
            query: q.into(),
            ranked: docs
                .iter()
                .enumerate()
                .map(|(i, d)| ScoredDoc {
                    doc_id: d.to_string(),
                    score: -(i as f64),
                })
                .collect(),
        }
    }

    #[test]
    fn evaluate_run_examples() {
        let examples = vec![
            RetrievalExample {
                query: "q1".into(),
                provenance: vec!["a".into()],
            },
            RetrievalExample {
                query: "q2".into(),
                provenance: vec!["b".into()],
            },
        ];
        let results = vec![result("q1", &["a"]), result("q2", &["a"])];
        let split = (vec![1], vec![0]);
        let report =
            evaluate_run(&results, &examples, &[Metric::RPrecision], Some(&split)).unwrap();
        assert_eq!(report.mean(Metric::RPrecision, None), Some(0.5));
        let low = report.rows.iter().find(|r| r.split == Some("low")).unwrap();
        let high = report
            .rows
            .iter()
            .find(|r| r.split == Some("high"))
            .unwrap();
        let weighted = (low.mean * low.count as f64 + high.mean * high.count as f64) / 2.0;
        assert!((weighted - 0.5).abs() < 1e-12);
        assert!(evaluate_run(&[], &[], &[Metric::RPrecision], None).is_err());
        let swapped = vec![result("q2", &["a"]), result("q1", &["a"])];
        assert!(evaluate_run(&swapped, &examples, &[Metric::RPrecision], None).is_err());
    }

    #[test]
    fn metric_names_round_trip() {
        let list = Metric::parse_list("rprec,hits@1,recall@10").unwrap();
        assert_eq!(
            list,
            [Metric::RPrecision, Metric::Hits(1), Metric::Recall(10)]
        );
        let names: Vec<String> = list.iter().map(Metric::to_string).collect();
        assert_eq!(names, ["rprec", "hits@1", "recall@10"]);
        assert!("hits@0".parse::<Metric>().is_err());
        assert!("mrr".parse::<Metric>().is_err());
    }

    #[test]
    fn results_round_trip_and_order_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let rs = vec![result("q", &["a", "b"])];
        save_results(&path, &rs).unwrap();
        assert_eq!(load_results(&path).unwrap(), rs);
        fs::write(
            &path,
            r#"{"query":"q","ranked":[{"doc_id":"a","score":-1.0},{"doc_id":"b","score":0.0}]}"#,
        )
        .unwrap();
        assert!(matches!(
            load_results(&path),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
