//! Import adapters for the upstream CamRest release layouts.
//!
//! Three layouts are recognised:
//!
//! - `CamRest676.json` + `CamRestDB.json` (the original release): raw text is
//!   lowercased, punctuation is detached, and multiword knowledge-base values
//!   are underscore-joined (`golden wok` → `golden_wok`).
//! - A directory of preprocessed split files `train.txt`, `dev.txt`,
//!   `test.txt` with one `<n> <user>\t<system>` line per turn and blank lines
//!   between dialogues. Lines without a tab (knowledge triples) are skipped.
//!   The file a dialogue comes from becomes its split label.
//! - The toolkit's own line-delimited JSON corpus format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::corpus::{parse_corpus, Corpus, Dialogue, SplitTag, Turn};
use crate::error::{Error, Result};
use crate::knowledge::{Coordinates, EntityRecord, KnowledgeBase, Slot};

#[derive(Debug, Deserialize)]
struct RawRestaurant {
    name: Option<String>,
    address: Option<String>,
    area: Option<String>,
    food: Option<String>,
    location: Option<String>,
    phone: Option<String>,
    pricerange: Option<String>,
    postcode: Option<String>,
}

fn join_value(value: Option<&str>, slot: &str) -> String {
    let tokens = value.map(normalize_text).unwrap_or_default();
    if tokens.is_empty() {
        format!("unknown_{slot}")
    } else {
        tokens.join("_")
    }
}

/// Postcodes are spelled like `C.B 4, 1 U.Y` upstream; the preprocessed
/// data keeps only the alphanumerics (`cb41uy`).
fn compact_postcode(value: Option<&str>) -> String {
    let compact: String = value
        .unwrap_or_default()
        .chars()
        .filter(char::is_ascii_alphanumeric)
        .collect::<String>()
        .to_lowercase();
    if compact.is_empty() {
        "unknown_postcode".to_string()
    } else {
        compact
    }
}

/// Parses the upstream `CamRestDB.json` array.
pub fn parse_raw_kb(text: &str, source_name: &str) -> Result<KnowledgeBase> {
    let raw: Vec<RawRestaurant> =
        serde_json::from_str(text).map_err(|e| Error::malformed(source_name, 0, e.to_string()))?;
    let mut records = Vec::with_capacity(raw.len());
    for (i, r) in raw.iter().enumerate() {
        let location = r.location.as_deref().unwrap_or_default();
        let coordinates = Coordinates::parse(location).ok_or_else(|| Error::Coordinates {
            source_name: source_name.to_string(),
            record: i + 1,
            value: location.to_string(),
        })?;
        records.push(EntityRecord {
            name: join_value(r.name.as_deref(), "name"),
            address: join_value(r.address.as_deref(), "address"),
            area: join_value(r.area.as_deref(), "area"),
            food: join_value(r.food.as_deref(), "food"),
            coordinates,
            phone: join_value(r.phone.as_deref(), "phone"),
            pricerange: join_value(r.pricerange.as_deref(), "pricerange"),
            postcode: compact_postcode(r.postcode.as_deref()),
        });
    }
    KnowledgeBase::new(records)
}

pub fn load_raw_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_raw_kb(&text, &path.display().to_string())
}

/// Lowercases and splits raw text, detaching punctuation and English clitics
/// (`let's` → `let 's`, `don't` → `do n't`).
pub fn normalize_text(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let mut rest = word;
        let mut trailing = Vec::new();
        let mut leading = Vec::new();
        while let Some(c) = rest.chars().next().filter(|c| is_punct(*c)) {
            leading.push(c.to_string());
            rest = &rest[c.len_utf8()..];
        }
        while let Some(c) = rest.chars().last().filter(|c| is_punct(*c)) {
            trailing.push(c.to_string());
            rest = &rest[..rest.len() - c.len_utf8()];
        }
        tokens.extend(leading);
        if !rest.is_empty() {
            split_clitic(rest, &mut tokens);
        }
        tokens.extend(trailing.into_iter().rev());
    }
    tokens
}

fn is_punct(c: char) -> bool {
    matches!(c, '.' | ',' | '?' | '!' | ';' | ':' | '(' | ')' | '"')
}

fn split_clitic(word: &str, out: &mut Vec<String>) {
    if let Some(stem) = word.strip_suffix("n't").filter(|s| !s.is_empty()) {
        out.push(stem.to_string());
        out.push("n't".to_string());
        return;
    }
    for clitic in ["'s", "'re", "'ve", "'ll", "'d", "'m"] {
        if let Some(stem) = word.strip_suffix(clitic).filter(|s| !s.is_empty()) {
            out.push(stem.to_string());
            out.push(clitic.to_string());
            return;
        }
    }
    out.push(word.to_string());
}

/// Multiword knowledge-base values as token sequences, longest first.
fn multiword_values(kb: &KnowledgeBase) -> Vec<Vec<String>> {
    let mut values: Vec<Vec<String>> = kb
        .records()
        .iter()
        .flat_map(|r| Slot::ALL.map(|slot| r.get(slot).to_string()))
        .filter(|v| v.contains('_'))
        .map(|v| v.split('_').map(str::to_string).collect())
        .collect();
    values.sort_by(|a: &Vec<String>, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    values.dedup();
    values
}

/// Underscore-joins every occurrence of a multiword value, longest match first.
pub fn join_entities(tokens: &[String], multiword: &[Vec<String>]) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    'outer: while i < tokens.len() {
        for value in multiword {
            if tokens[i..].starts_with(value) {
                out.push(value.join("_"));
                i += value.len();
                continue 'outer;
            }
        }
        out.push(tokens[i].clone());
        i += 1;
    }
    out
}

#[derive(Debug, Deserialize)]
struct RawDialogue {
    dial: Vec<RawTurn>,
    #[serde(default)]
    dialogue_id: Option<serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct RawTurn {
    usr: RawUser,
    sys: RawSystem,
}

#[derive(Debug, Deserialize)]
struct RawUser {
    transcript: String,
}

#[derive(Debug, Deserialize)]
struct RawSystem {
    sent: String,
}

/// Parses the upstream `CamRest676.json` dialogue array. Turns with an empty
/// transcript or response are dropped.
pub fn parse_raw_dialogues(text: &str, kb: &KnowledgeBase, source_name: &str) -> Result<Corpus> {
    let raw: Vec<RawDialogue> =
        serde_json::from_str(text).map_err(|e| Error::malformed(source_name, 0, e.to_string()))?;
    let multiword = multiword_values(kb);
    let normalize = |t: &str| join_entities(&normalize_text(t), &multiword);
    let dialogues = raw
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let id = match &d.dialogue_id {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(serde_json::Value::Number(n)) => format!("camrest-{n}"),
                _ => format!("camrest-{i}"),
            };
            let turns = d
                .dial
                .iter()
                .map(|t| Turn {
                    user: normalize(&t.usr.transcript),
                    system: normalize(&t.sys.sent),
                })
                .filter(|t| !t.user.is_empty() && !t.system.is_empty())
                .collect();
            Dialogue::new(id, turns)
        })
        .collect();
    Corpus::new(dialogues, SplitTag::Unsplit)
}

/// Parses one preprocessed split file (`<n> <user>\t<system>` lines).
pub fn parse_split_file(text: &str, tag: SplitTag, source_name: &str) -> Result<Vec<Dialogue>> {
    let mut dialogues = Vec::new();
    let mut turns = Vec::new();
    let flush = |turns: &mut Vec<Turn>, dialogues: &mut Vec<Dialogue>| {
        if !turns.is_empty() {
            let mut d = Dialogue::new(format!("{tag}-{:04}", dialogues.len()), std::mem::take(turns));
            d.split = Some(tag);
            dialogues.push(d);
        }
    };
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() {
            flush(&mut turns, &mut dialogues);
            continue;
        }
        let Some((user, system)) = line.split_once('\t') else {
            continue;
        };
        let user = match user.split_once(' ') {
            Some((n, rest)) if n.chars().all(|c| c.is_ascii_digit()) => rest,
            _ => {
                return Err(Error::malformed(
                    source_name,
                    line_no + 1,
                    "turn line must start with a turn number",
                ))
            }
        };
        turns.push(Turn::new(user, system));
    }
    flush(&mut turns, &mut dialogues);
    Ok(dialogues)
}

fn split_file_names(tag: SplitTag) -> &'static [&'static str] {
    match tag {
        SplitTag::Train => &["train.txt"],
        SplitTag::Valid => &["dev.txt", "valid.txt", "val.txt"],
        SplitTag::Test => &["test.txt"],
        SplitTag::Unsplit => &[],
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Where a corpus was imported from; recorded in ingest manifests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusLayout {
    Native(PathBuf),
    RawRelease(PathBuf),
    SplitFiles(Vec<PathBuf>),
}

/// Loads a corpus from any supported layout. `kb` is needed for the raw
/// release (entity joining).
pub fn import_corpus(path: &Path, kb: &KnowledgeBase) -> Result<(Corpus, CorpusLayout)> {
    if path.is_dir() {
        let mut files = Vec::new();
        let mut dialogues = Vec::new();
        for tag in [SplitTag::Train, SplitTag::Valid, SplitTag::Test] {
            if let Some(file) = split_file_names(tag).iter().map(|n| path.join(n)).find(|p| p.is_file()) {
                dialogues.extend(parse_split_file(&read(&file)?, tag, &file.display().to_string())?);
                files.push(file);
            }
        }
        if !files.is_empty() {
            return Ok((
                Corpus::new(dialogues, SplitTag::Unsplit)?,
                CorpusLayout::SplitFiles(files),
            ));
        }
        let raw = path.join("CamRest676.json");
        if raw.is_file() {
            return import_corpus(&raw, kb);
        }
        return Err(Error::malformed(
            &path.display().to_string(),
            0,
            "directory holds neither split files nor CamRest676.json",
        ));
    }
    let text = read(path)?;
    let name = path.display().to_string();
    if text.trim_start().starts_with('[') {
        Ok((
            parse_raw_dialogues(&text, kb, &name)?,
            CorpusLayout::RawRelease(path.to_path_buf()),
        ))
    } else {
        Ok((
            parse_corpus(text.as_bytes(), &name)?,
            CorpusLayout::Native(path.to_path_buf()),
        ))
    }
}

/// Loads a knowledge base from the upstream JSON array or the toolkit's own formats.
pub fn import_kb(path: &Path) -> Result<KnowledgeBase> {
    let path = if path.is_dir() {
        path.join("CamRestDB.json")
    } else {
        path.to_path_buf()
    };
    let text = read(&path)?;
    if text.trim_start().starts_with('[') {
        parse_raw_kb(&text, &path.display().to_string())
    } else {
        crate::knowledge::parse_kb(text.as_bytes(), &path.display().to_string())
    }
}
