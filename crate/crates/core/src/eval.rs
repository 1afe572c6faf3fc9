//! Response metrics: corpus BLEU, entity F1, Likert aggregation and
//! comparison tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge::{Ontology, Slot};

/// Added to the numerator of an n-gram precision that would otherwise be zero.
pub const BLEU_EPSILON: f64 = 1e-9;

pub const BLEU_DEFINITION: &str = "BLEU: corpus-level BLEU-4, pooled clipped n-gram counts (n=1..4), \
brevity penalty, x100; zero precisions smoothed to 1e-9/total";

pub const F1_DEFINITION: &str = "F1: micro-averaged entity F1 over exact ontology-value tokens, \
hypothesis vs gold response; examples whose reference has no entity are skipped";

/// Pooled n-gram statistics for corpus BLEU.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BleuStats {
    pub matches: [u64; 4],
    pub totals: [u64; 4],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn add(&mut self, hypothesis: &[String], reference: &[String]) {
        self.hyp_len += hypothesis.len() as u64;
        self.ref_len += reference.len() as u64;
        for n in 1..=4 {
            let hyp = ngram_counts(hypothesis, n);
            let refs = ngram_counts(reference, n);
            self.totals[n - 1] += hypothesis.len().saturating_sub(n - 1) as u64;
            self.matches[n - 1] += hyp
                .iter()
                .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
                .sum::<u64>();
        }
    }

    pub fn precision(&self, n: usize) -> f64 {
        let (m, t) = (self.matches[n - 1], self.totals[n - 1]);
        match (m, t) {
            (_, 0) => BLEU_EPSILON,
            (0, t) => BLEU_EPSILON / t as f64,
            (m, t) => m as f64 / t as f64,
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// Score on the 0–100 scale.
    pub fn score(&self) -> f64 {
        let log_mean = (1..=4).map(|n| self.precision(n).ln()).sum::<f64>() / 4.0;
        100.0 * self.brevity_penalty() * log_mean.exp()
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn check_lengths<A, B>(hypotheses: &[A], references: &[B]) -> Result<()> {
    if hypotheses.len() != references.len() {
        return Err(Error::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    Ok(())
}

pub fn bleu_stats(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<BleuStats> {
    check_lengths(hypotheses, references)?;
    if hypotheses.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut stats = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        stats.add(h, r);
    }
    Ok(stats)
}

/// Corpus-level BLEU-4 with a single reference per hypothesis, in [0, 100].
pub fn corpus_bleu(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    Ok(bleu_stats(hypotheses, references)?.score())
}

pub type Entity = (Slot, String);

/// Ontology values appearing as exact tokens, with every slot they belong to.
pub fn extract_entities(text: &[String], ontology: &Ontology) -> BTreeSet<Entity> {
    text.iter()
        .flat_map(|token| ontology.slots_of(token).iter().map(move |&slot| (slot, token.clone())))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl EntityCounts {
    pub fn add(&mut self, hyp: &BTreeSet<Entity>, gold: &BTreeSet<Entity>) {
        if gold.is_empty() {
            return;
        }
        let tp = hyp.intersection(gold).count() as u64;
        self.tp += tp;
        self.fp += hyp.len() as u64 - tp;
        self.fn_ += gold.len() as u64 - tp;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Micro-averaged entity counts of hypotheses against gold entity sets.
pub fn entity_counts_against(
    hypotheses: &[Vec<String>],
    gold: &[BTreeSet<Entity>],
    ontology: &Ontology,
) -> Result<EntityCounts> {
    check_lengths(hypotheses, gold)?;
    let mut counts = EntityCounts::default();
    for (h, g) in hypotheses.iter().zip(gold) {
        counts.add(&extract_entities(h, ontology), g);
    }
    Ok(counts)
}

pub fn entity_counts(
    hypotheses: &[Vec<String>],
    references: &[Vec<String>],
    ontology: &Ontology,
) -> Result<EntityCounts> {
    check_lengths(hypotheses, references)?;
    let gold: Vec<BTreeSet<Entity>> = references.iter().map(|r| extract_entities(r, ontology)).collect();
    entity_counts_against(hypotheses, &gold, ontology)
}

/// Micro-averaged entity F1 in [0, 1] against the gold responses.
pub fn entity_f1(hypotheses: &[Vec<String>], references: &[Vec<String>], ontology: &Ontology) -> Result<f64> {
    Ok(entity_counts(hypotheses, references, ontology)?.f1())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub hypothesis: String,
    pub reference: String,
    pub matched_entities: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    /// In [0, 1]; multiply by 100 for table display.
    pub entity_f1: f64,
    pub entity_precision: f64,
    pub entity_recall: f64,
    pub n_examples: usize,
    pub bleu_definition: String,
    pub f1_definition: String,
    pub examples: Vec<ExampleRecord>,
}

/// BLEU, entity F1 and per-example matches for aligned hypotheses and references.
pub fn evaluate(hypotheses: &[Vec<String>], references: &[Vec<String>], ontology: &Ontology) -> Result<EvalReport> {
    let bleu = corpus_bleu(hypotheses, references)?;
    let counts = entity_counts(hypotheses, references, ontology)?;
    let examples = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| {
            let matched = extract_entities(h, ontology)
                .intersection(&extract_entities(r, ontology))
                .map(|(slot, value)| format!("{slot}={value}"))
                .collect();
            ExampleRecord {
                hypothesis: h.join(" "),
                reference: r.join(" "),
                matched_entities: matched,
            }
        })
        .collect();
    Ok(EvalReport {
        bleu,
        entity_f1: counts.f1(),
        entity_precision: counts.precision(),
        entity_recall: counts.recall(),
        n_examples: hypotheses.len(),
        bleu_definition: BLEU_DEFINITION.to_string(),
        f1_definition: F1_DEFINITION.to_string(),
        examples,
    })
}

impl EvalReport {
    pub fn summary(&self) -> String {
        format!(
            "# {}\n# {}\nexamples\t{}\nBLEU\t{:.3}\nF1\t{:.3}\nentity_precision\t{:.3}\nentity_recall\t{:.3}\n",
            self.bleu_definition,
            self.f1_definition,
            self.n_examples,
            self.bleu,
            100.0 * self.entity_f1,
            100.0 * self.entity_precision,
            100.0 * self.entity_recall,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertRecord {
    pub example_id: String,
    pub score: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
}

impl LikertRecord {
    pub fn new(example_id: impl Into<String>, score: u8, annotator: Option<&str>) -> Result<Self> {
        if !matches!(score, 1 | 3 | 5) {
            return Err(Error::LikertScore(score));
        }
        Ok(LikertRecord {
            example_id: example_id.into(),
            score,
            annotator: annotator.map(str::to_string),
        })
    }
}

/// Parses `example_id score [annotator]` lines (tab or space separated).
pub fn parse_likert(text: &str, source_name: &str) -> Result<Vec<LikertRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() || fields[0].starts_with('#') {
            continue;
        }
        let (id, score, annotator) = match fields.as_slice() {
            [id, score] => (*id, *score, None),
            [id, score, annotator] => (*id, *score, Some(*annotator)),
            _ => return Err(Error::malformed(source_name, i + 1, "expected `id score [annotator]`")),
        };
        let score: u8 = score
            .parse()
            .map_err(|_| Error::malformed(source_name, i + 1, format!("bad score `{score}`")))?;
        records.push(LikertRecord::new(id, score, annotator)?);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LikertSummary {
    pub mean: f64,
    pub n: usize,
    pub per_annotator: BTreeMap<String, f64>,
}

pub fn likert_mean(records: &[LikertRecord]) -> Result<LikertSummary> {
    if records.is_empty() {
        return Err(Error::EmptyLikert);
    }
    if let Some(bad) = records.iter().find(|r| !matches!(r.score, 1 | 3 | 5)) {
        return Err(Error::LikertScore(bad.score));
    }
    let mean = records.iter().map(|r| r.score as f64).sum::<f64>() / records.len() as f64;
    let mut by_annotator: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in records {
        if let Some(a) = &r.annotator {
            let e = by_annotator.entry(a.clone()).or_default();
            e.0 += r.score as f64;
            e.1 += 1;
        }
    }
    Ok(LikertSummary {
        mean,
        n: records.len(),
        per_annotator: by_annotator
            .into_iter()
            .map(|(a, (sum, n))| (a, sum / n as f64))
            .collect(),
    })
}

/// One line of a comparison table. `f1` is on the 0–100 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub bleu: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likert: Option<f64>,
}

impl ReportRow {
    pub fn new(label: impl Into<String>, bleu: f64, f1: f64) -> Self {
        ReportRow {
            label: label.into(),
            bleu,
            f1,
            likert: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlaggedRow {
    #[serde(flatten)]
    pub row: ReportRow,
    pub best_bleu: bool,
    pub best_f1: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub bleu_definition: String,
    pub f1_definition: String,
    pub rows: Vec<FlaggedRow>,
}

/// Flags the best BLEU and best F1 (ties all flagged).
pub fn emit_report(rows: &[ReportRow]) -> Result<Report> {
    if rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    let best_bleu = rows.iter().map(|r| r.bleu).fold(f64::NEG_INFINITY, f64::max);
    let best_f1 = rows.iter().map(|r| r.f1).fold(f64::NEG_INFINITY, f64::max);
    Ok(Report {
        bleu_definition: BLEU_DEFINITION.to_string(),
        f1_definition: F1_DEFINITION.to_string(),
        rows: rows
            .iter()
            .map(|r| FlaggedRow {
                row: r.clone(),
                best_bleu: r.bleu == best_bleu,
                best_f1: r.f1 == best_f1,
            })
            .collect(),
    })
}

impl Report {
    /// Plain-text table; `*` marks the best value of a column.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.row.label.len()).max().unwrap_or(5).max(5);
        let with_likert = self.rows.iter().any(|r| r.row.likert.is_some());
        let mut out = format!("# {}\n# {}\n", self.bleu_definition, self.f1_definition);
        let _ = write!(out, "{:<width$}  {:>8}  {:>8}", "model", "BLEU", "F1");
        if with_likert {
            let _ = write!(out, "  {:>6}", "Likert");
        }
        out.push('\n');
        for r in &self.rows {
            let flag = |best: bool| if best { "*" } else { " " };
            let _ = write!(
                out,
                "{:<width$}  {:>7.3}{}  {:>7.3}{}",
                r.row.label,
                r.row.bleu,
                flag(r.best_bleu),
                r.row.f1,
                flag(r.best_f1)
            );
            if with_likert {
                match r.row.likert {
                    Some(l) => {
                        let _ = write!(out, "  {l:>6.2}");
                    }
                    None => out.push_str("       -"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Reads report rows from a JSON array or from `label<TAB>bleu<TAB>f1[<TAB>likert]` lines.
pub fn load_report_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    if text.trim_start().starts_with('[') {
        return Ok(serde_json::from_str(&text)?);
    }
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|_| Error::malformed(&name, i + 1, format!("bad number `{s}`")))
        };
        let row = match fields.as_slice() {
            [label, bleu, f1] => ReportRow::new(*label, num(bleu)?, num(f1)?),
            [label, bleu, f1, likert] => ReportRow {
                likert: Some(num(likert)?),
                ..ReportRow::new(*label, num(bleu)?, num(f1)?)
            },
            _ => return Err(Error::malformed(&name, i + 1, "expected label, BLEU, F1[, Likert]")),
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Parses system-level Likert means, `label<TAB>mean` per line.
pub fn parse_likert_means(text: &str, source_name: &str) -> Result<Vec<(String, f64)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, line)| {
            let (label, mean) = line
                .rsplit_once(['\t', ' '])
                .ok_or_else(|| Error::malformed(source_name, i + 1, "expected `label mean`"))?;
            let mean: f64 = mean
                .trim()
                .parse()
                .map_err(|_| Error::malformed(source_name, i + 1, format!("bad mean `{mean}`")))?;
            if !(1.0..=5.0).contains(&mean) {
                return Err(Error::malformed(source_name, i + 1, "Likert mean outside [1, 5]"));
            }
            Ok((label.trim().to_string(), mean))
        })
        .collect()
}

pub fn format_likert_means(means: &[(String, f64)]) -> String {
    let width = means.iter().map(|(l, _)| l.len()).max().unwrap_or(5).max(5);
    let best = means.iter().map(|(_, m)| *m).fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("{:<width$}  {:>6}\n", "model", "Likert");
    for (label, mean) in means {
        let flag = if *mean == best { "*" } else { "" };
        let _ = writeln!(out, "{label:<width$}  {mean:>6.2}{flag}");
    }
    out
}
