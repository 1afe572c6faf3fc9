//! Context/target pairs, marker rendering and the word-level vocabulary.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{Corpus, Dialogue};
use crate::error::{Error, Result};
use crate::knowledge::{EntityRecord, KnowledgeBase};
use crate::sha256_hex;
use crate::tokens::{DTA, RESERVED, SYS, UNK_ID, USR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Speaker {
    User,
    System,
}

impl Speaker {
    pub fn marker(&self) -> &'static str {
        match self {
            Speaker::User => USR,
            Speaker::System => SYS,
        }
    }
}

/// One training sample: everything said before the current user turn, the
/// user turn itself, optional KB rows, and the system response to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextPair {
    pub history: Vec<(Speaker, Vec<String>)>,
    pub query: Vec<String>,
    pub kb_rows: Vec<EntityRecord>,
    pub target: Vec<String>,
}

/// One pair per turn: the history holds both sides of every earlier turn.
pub fn build_pairs(dialogue: &Dialogue) -> Vec<ContextPair> {
    let mut pairs = Vec::with_capacity(dialogue.turns.len());
    let mut history = Vec::new();
    for turn in &dialogue.turns {
        pairs.push(ContextPair {
            history: history.clone(),
            query: turn.user.clone(),
            kb_rows: Vec::new(),
            target: turn.system.clone(),
        });
        history.push((Speaker::User, turn.user.clone()));
        history.push((Speaker::System, turn.system.clone()));
    }
    pairs
}

pub fn build_corpus_pairs(corpus: &Corpus) -> Vec<ContextPair> {
    corpus.dialogues.iter().flat_map(build_pairs).collect()
}

/// `<USR> u <SYS> s ... <USR> query <DTA> row ...` with each KB row written
/// as its eight field values.
pub fn render_context(pair: &ContextPair) -> Vec<String> {
    let mut out = Vec::new();
    for (speaker, utterance) in &pair.history {
        out.push(speaker.marker().to_string());
        out.extend(utterance.iter().cloned());
    }
    out.push(USR.to_string());
    out.extend(pair.query.iter().cloned());
    for row in &pair.kb_rows {
        out.push(DTA.to_string());
        out.extend(row.row_tokens().iter().map(|t| t.to_string()));
    }
    out
}

/// Shortens a rendered context to at most `max_len` tokens.
///
/// Whole history turns are dropped oldest first. If the query and KB rows
/// alone still do not fit, trailing KB rows are dropped, and as a last resort
/// the query keeps only its most recent tokens.
pub fn truncate_context(tokens: &[String], max_len: usize) -> Vec<String> {
    if tokens.len() <= max_len {
        return tokens.to_vec();
    }
    let starts: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| matches!(t.as_str(), USR | SYS | DTA))
        .map(|(i, _)| i)
        .collect();
    let segment = |k: usize| -> &[String] {
        let end = starts.get(k + 1).copied().unwrap_or(tokens.len());
        &tokens[starts[k]..end]
    };
    let query = match starts.iter().rposition(|&i| tokens[i] == USR) {
        Some(q) => q,
        None => return tokens[tokens.len() - max_len..].to_vec(),
    };
    let history: Vec<&[String]> = (0..query).map(segment).collect();
    let rows: Vec<&[String]> = (query + 1..starts.len()).map(segment).collect();
    let query_seg = segment(query);
    let prefix = &tokens[..starts.first().copied().unwrap_or(0)];

    let rows_len: usize = rows.iter().map(|r| r.len()).sum();
    let mut budget = max_len.saturating_sub(prefix.len());
    if query_seg.len() + rows_len <= budget {
        budget -= query_seg.len() + rows_len;
        // keep the longest suffix of history made of whole turns
        let mut keep_from = history.len();
        let mut used = 0;
        while keep_from > 0 {
            let mut start = keep_from - 1;
            if history[start].first().map(String::as_str) == Some(SYS) && start > 0 {
                start -= 1;
            }
            let turn_len: usize = history[start..keep_from].iter().map(|s| s.len()).sum();
            if used + turn_len > budget {
                break;
            }
            used += turn_len;
            keep_from = start;
        }
        let mut out: Vec<String> = prefix.to_vec();
        out.extend(history[keep_from..].iter().flat_map(|s| s.iter().cloned()));
        out.extend(query_seg.iter().cloned());
        out.extend(rows.iter().flat_map(|s| s.iter().cloned()));
        return out;
    }
    let mut out: Vec<String> = Vec::with_capacity(max_len);
    if query_seg.len() <= max_len {
        out.extend(query_seg.iter().cloned());
        for row in rows {
            if out.len() + row.len() > max_len {
                break;
            }
            out.extend(row.iter().cloned());
        }
    } else {
        out.push(USR.to_string());
        out.extend(query_seg[query_seg.len() - (max_len - 1)..].iter().cloned());
    }
    out
}

/// Bijective token ↔ id map. Ids 0..=6 are the reserved markers
/// `<PAD> <BOS> <EOS> <UNK> <USR> <SYS> <DTA>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, reserved) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*reserved) {
                return Err(Error::Vocabulary(format!("id {i} must be `{reserved}`")));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocabulary(format!("token `{t}` appears twice")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// SHA-256 over the newline-joined tokens in id order.
    pub fn hash(&self) -> String {
        sha256_hex(self.tokens.join("\n").as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for t in &self.tokens {
            writeln!(out, "{t}").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let tokens = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<Vec<String>>>()
            .map_err(|e| Error::io(path, e))?;
        Self::from_tokens(tokens)
    }
}

/// Reserved markers, then every training token and every KB field value, in
/// order of first occurrence.
pub fn build_vocab(corpora: &[&Corpus], kb: &KnowledgeBase) -> Result<Vocabulary> {
    if corpora.iter().all(|c| c.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let mut tokens: Vec<String> = RESERVED.iter().map(|t| t.to_string()).collect();
    let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
    let mut push = |t: &str| {
        if !seen.contains(t) {
            seen.insert(t.to_string());
            tokens.push(t.to_string());
        }
    };
    for corpus in corpora {
        for token in corpus.dialogues.iter().flat_map(Dialogue::tokens) {
            push(token);
        }
    }
    for record in kb.records() {
        for value in record.row_tokens() {
            push(value);
        }
    }
    Vocabulary::from_tokens(tokens)
}

/// Maps tokens to ids; unknown tokens become `<UNK>`. No framing tokens are added.
pub fn encode(vocab: &Vocabulary, tokens: &[String]) -> Vec<u32> {
    tokens.iter().map(|t| vocab.id(t).unwrap_or(UNK_ID)).collect()
}

pub fn decode(vocab: &Vocabulary, ids: &[u32]) -> Result<Vec<String>> {
    ids.iter()
        .map(|&id| {
            vocab
                .token(id)
                .map(str::to_string)
                .ok_or(Error::IdOutOfRange { id, size: vocab.len() })
        })
        .collect()
}

/// Fraction of tokens that encode to `<UNK>`.
pub fn unk_rate<'a>(vocab: &Vocabulary, sequences: impl IntoIterator<Item = &'a [String]>) -> f64 {
    let (mut unknown, mut total) = (0usize, 0usize);
    for seq in sequences {
        total += seq.len();
        unknown += seq.iter().filter(|t| vocab.id(t).is_none()).count();
    }
    if total == 0 {
        0.0
    } else {
        unknown as f64 / total as f64
    }
}

/// Writes aligned `.src` / `.tgt` files, one rendered context / target per line.
pub fn write_parallel(
    pairs: &[(Vec<String>, Vec<String>)],
    src_path: impl AsRef<Path>,
    tgt_path: impl AsRef<Path>,
) -> Result<()> {
    type Pair = (Vec<String>, Vec<String>);
    let write = |path: &Path, side: &dyn Fn(&Pair) -> String| -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for pair in pairs {
            writeln!(out, "{}", side(pair)).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    };
    write(src_path.as_ref(), &|p| p.0.join(" "))?;
    write(tgt_path.as_ref(), &|p| p.1.join(" "))
}

/// Reads a plain-text file of whitespace-tokenized lines.
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|line| {
            line.map(|l| l.split_whitespace().map(str::to_string).collect())
                .map_err(|e| Error::io(path, e))
        })
        .collect()
}

pub fn read_parallel(
    src_path: impl AsRef<Path>,
    tgt_path: impl AsRef<Path>,
) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(Error::LengthMismatch {
            hypotheses: src.len(),
            references: tgt.len(),
        });
    }
    Ok(src.into_iter().zip(tgt).collect())
}

/// Renders every pair of a corpus, attaching KB rows through `attach` when given.
pub fn render_corpus(
    corpus: &Corpus,
    attach: Option<&dyn Fn(&ContextPair) -> ContextPair>,
) -> Vec<(Vec<String>, Vec<String>)> {
    build_corpus_pairs(corpus)
        .iter()
        .map(|pair| {
            let pair = match attach {
                Some(f) => f(pair),
                None => pair.clone(),
            };
            (render_context(&pair), pair.target.clone())
        })
        .collect()
}
