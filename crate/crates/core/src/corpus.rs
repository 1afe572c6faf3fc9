//! Dialogue corpora: loading, validation and train/valid/test splitting.
//!
//! The on-disk format is line-delimited JSON, one dialogue per line:
//!
//! ```text
//! {"id": "cr-0001", "turns": [{"usr": "i want food .", "sys": "what area ?"}]}
//! ```
//!
//! An optional `"split"` field (`train`, `valid`, `test`) carries an explicit
//! split label. Text is lowercased and split on whitespace; the loader never
//! re-tokenizes.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokens::{is_reserved, tokenize};

/// One user utterance and the system response that follows it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Turn {
    pub user: Vec<String>,
    pub system: Vec<String>,
}

impl Turn {
    pub fn new(user: &str, system: &str) -> Self {
        Turn {
            user: tokenize(user),
            system: tokenize(system),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
    /// Split label carried by the source file, if any.
    pub split: Option<SplitTag>,
}

impl Dialogue {
    pub fn new(id: impl Into<String>, turns: Vec<Turn>) -> Self {
        Dialogue {
            id: id.into(),
            turns,
            split: None,
        }
    }

    /// Checks the turn invariants: non-empty utterances, no reserved markers.
    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::NoTurns(self.id.clone()));
        }
        for (t, turn) in self.turns.iter().enumerate() {
            for (side, utterance) in [("user", &turn.user), ("system", &turn.system)] {
                if utterance.is_empty() {
                    return Err(Error::EmptyUtterance {
                        dialogue: self.id.clone(),
                        turn: t,
                        side,
                    });
                }
                if let Some(token) = utterance.iter().find(|tok| is_reserved(tok)) {
                    return Err(Error::ReservedToken {
                        dialogue: self.id.clone(),
                        turn: t,
                        token: token.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Every token of the dialogue in reading order (user before system within a turn).
    pub fn tokens(&self) -> impl Iterator<Item = &String> {
        self.turns
            .iter()
            .flat_map(|turn| turn.user.iter().chain(turn.system.iter()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Valid,
    Test,
    Unsplit,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
            SplitTag::Unsplit => "unsplit",
        };
        f.write_str(name)
    }
}

impl FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(SplitTag::Train),
            "valid" | "dev" | "validation" | "val" => Ok(SplitTag::Valid),
            "test" => Ok(SplitTag::Test),
            "unsplit" => Ok(SplitTag::Unsplit),
            other => Err(format!("unknown split label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub split: SplitTag,
}

impl Corpus {
    /// Builds a corpus after validating every dialogue and id uniqueness.
    pub fn new(dialogues: Vec<Dialogue>, split: SplitTag) -> Result<Self> {
        let mut seen = HashSet::with_capacity(dialogues.len());
        for dialogue in &dialogues {
            dialogue.validate()?;
            if !seen.insert(dialogue.id.as_str()) {
                return Err(Error::DuplicateId(dialogue.id.clone()));
            }
        }
        Ok(Corpus { dialogues, split })
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn turn_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.dialogues.iter().map(|d| d.id.as_str())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TurnRecord {
    usr: String,
    sys: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DialogueRecord {
    id: String,
    turns: Vec<TurnRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
}

/// Loads a corpus file (line-delimited JSON). Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file), &path.display().to_string())
}

pub fn parse_corpus(reader: impl BufRead, source_name: &str) -> Result<Corpus> {
    let mut dialogues = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DialogueRecord =
            serde_json::from_str(&line).map_err(|e| Error::malformed(source_name, line_no + 1, e.to_string()))?;
        let split = record
            .split
            .as_deref()
            .map(SplitTag::from_str)
            .transpose()
            .map_err(|e| Error::malformed(source_name, line_no + 1, e))?;
        let turns = record.turns.iter().map(|t| Turn::new(&t.usr, &t.sys)).collect();
        dialogues.push(Dialogue {
            id: record.id,
            turns,
            split,
        });
    }
    if dialogues.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let tags: HashSet<Option<SplitTag>> = dialogues.iter().map(|d| d.split).collect();
    let split = match tags.into_iter().collect::<Vec<_>>().as_slice() {
        [Some(tag)] => *tag,
        _ => SplitTag::Unsplit,
    };
    Corpus::new(dialogues, split)
}

/// Writes a corpus in the line-delimited JSON format. Split labels are written
/// only when the dialogue carries one.
pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_corpus_to(corpus, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_corpus_to(corpus: &Corpus, out: &mut impl Write) -> std::io::Result<()> {
    for dialogue in &corpus.dialogues {
        let record = DialogueRecord {
            id: dialogue.id.clone(),
            turns: dialogue
                .turns
                .iter()
                .map(|t| TurnRecord {
                    usr: t.user.join(" "),
                    sys: t.system.join(" "),
                })
                .collect(),
            split: dialogue.split.map(|s| s.to_string()),
        };
        serde_json::to_writer(&mut *out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitSizes {
    pub const CAMREST: SplitSizes = SplitSizes {
        train: 406,
        valid: 135,
        test: 135,
    };

    pub fn total(&self) -> usize {
        self.train + self.valid + self.test
    }

    fn as_tuple(&self) -> (usize, usize, usize) {
        (self.train, self.valid, self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
}

/// Partitions a corpus into train/valid/test.
///
/// If every dialogue carries a split label the labels decide membership and
/// the requested sizes must agree with them. Otherwise the dialogues are
/// shuffled with a seeded generator and sliced by prefix. Each part keeps the
/// original relative order of its dialogues.
pub fn split_corpus(corpus: &Corpus, sizes: SplitSizes, seed: u64) -> Result<Splits> {
    if sizes.total() != corpus.len() {
        return Err(Error::SplitSizes {
            train: sizes.train,
            valid: sizes.valid,
            test: sizes.test,
            len: corpus.len(),
        });
    }

    let labeled = corpus
        .dialogues
        .iter()
        .all(|d| matches!(d.split, Some(SplitTag::Train | SplitTag::Valid | SplitTag::Test)));

    let mut assignment: Vec<SplitTag> = if labeled {
        corpus.dialogues.iter().map(|d| d.split.unwrap()).collect()
    } else {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut tags = vec![SplitTag::Unsplit; corpus.len()];
        for (rank, &idx) in order.iter().enumerate() {
            tags[idx] = if rank < sizes.train {
                SplitTag::Train
            } else if rank < sizes.train + sizes.valid {
                SplitTag::Valid
            } else {
                SplitTag::Test
            };
        }
        tags
    };

    if labeled {
        let count = |tag| assignment.iter().filter(|&&t| t == tag).count();
        let found = (count(SplitTag::Train), count(SplitTag::Valid), count(SplitTag::Test));
        if found != sizes.as_tuple() {
            return Err(Error::LabeledSplitConflict {
                labeled: found,
                requested: sizes.as_tuple(),
            });
        }
    }

    let mut part = |tag: SplitTag| -> Corpus {
        let dialogues = corpus
            .dialogues
            .iter()
            .zip(assignment.iter_mut())
            .filter(|(_, t)| **t == tag)
            .map(|(d, _)| Dialogue {
                split: Some(tag),
                ..d.clone()
            })
            .collect();
        Corpus { dialogues, split: tag }
    };
    Ok(Splits {
        train: part(SplitTag::Train),
        valid: part(SplitTag::Valid),
        test: part(SplitTag::Test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus_of(n: usize) -> Corpus {
        let dialogues = (0..n)
            .map(|i| Dialogue::new(format!("d{i}"), vec![Turn::new("hello there", "hi")]))
            .collect();
        Corpus::new(dialogues, SplitTag::Unsplit).unwrap()
    }

    #[test]
    fn minimal_file_loads() {
        let text = r#"{"id": "a", "turns": [{"usr": "Hi", "sys": "Hello ."}]}"#;
        let corpus = parse_corpus(text.as_bytes(), "inline").unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.dialogues[0].turns[0].user, vec!["hi"]);
        assert_eq!(corpus.dialogues[0].turns[0].system, vec!["hello", "."]);
    }

    #[test]
    fn reserved_token_is_rejected() {
        let text = r#"{"id": "a", "turns": [{"usr": "hi", "sys": "ok <SYS> there"}]}"#;
        let err = parse_corpus(text.as_bytes(), "inline").unwrap_err();
        assert!(matches!(err, Error::ReservedToken { turn: 0, .. }), "{err}");
    }

    #[test]
    fn malformed_record_reports_line() {
        let text = "{\"id\": \"a\", \"turns\": [{\"usr\": \"hi\", \"sys\": \"ok\"}]}\n{oops}\n";
        match parse_corpus(text.as_bytes(), "inline").unwrap_err() {
            Error::Malformed { record, .. } => assert_eq!(record, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let line = r#"{"id": "a", "turns": [{"usr": "hi", "sys": "ok"}]}"#;
        let text = format!("{line}\n{line}\n");
        assert!(matches!(
            parse_corpus(text.as_bytes(), "inline"),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn empty_utterance_is_rejected() {
        let text = r#"{"id": "a", "turns": [{"usr": "  ", "sys": "ok"}]}"#;
        assert!(matches!(
            parse_corpus(text.as_bytes(), "inline"),
            Err(Error::EmptyUtterance { .. })
        ));
    }

    #[test]
    fn degenerate_split_puts_everything_in_train() {
        let splits = split_corpus(
            &corpus_of(2),
            SplitSizes {
                train: 2,
                valid: 0,
                test: 0,
            },
            7,
        )
        .unwrap();
        assert_eq!(splits.train.len(), 2);
        assert!(splits.valid.is_empty() && splits.test.is_empty());
    }

    #[test]
    fn split_sizes_must_sum() {
        let err = split_corpus(
            &corpus_of(3),
            SplitSizes {
                train: 1,
                valid: 1,
                test: 0,
            },
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SplitSizes { .. }));
    }

    #[test]
    fn labels_take_precedence_and_are_checked() {
        let mut corpus = corpus_of(3);
        corpus.dialogues[0].split = Some(SplitTag::Test);
        corpus.dialogues[1].split = Some(SplitTag::Train);
        corpus.dialogues[2].split = Some(SplitTag::Train);
        let splits = split_corpus(
            &corpus,
            SplitSizes {
                train: 2,
                valid: 0,
                test: 1,
            },
            99,
        )
        .unwrap();
        assert_eq!(splits.test.dialogues[0].id, "d0");
        let err = split_corpus(
            &corpus,
            SplitSizes {
                train: 1,
                valid: 1,
                test: 1,
            },
            99,
        )
        .unwrap_err();
        assert!(matches!(err, Error::LabeledSplitConflict { .. }));
    }

    #[test]
    fn write_then_parse_is_lossless() {
        let text = "{\"id\":\"x\",\"turns\":[{\"usr\":\"i want golden_wok ,  please\",\"sys\":\"sure .\"}]}\n";
        let corpus = parse_corpus(text.as_bytes(), "inline").unwrap();
        let mut buf = Vec::new();
        write_corpus_to(&corpus, &mut buf).unwrap();
        let again = parse_corpus(buf.as_slice(), "again").unwrap();
        assert_eq!(corpus, again);
    }
}
