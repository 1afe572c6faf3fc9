//! Knowledge-embedded augmentation.
//!
//! Delexicalization replaces every ontology value in a dialogue with a typed
//! placeholder `[slot_i]`; relexicalization fills a template from one KB record
//! per index, so every generated dialogue is consistent with the knowledge base.
//!
//! Entity mentions are grouped into indices with a record anchor rule, applied
//! token by token in reading order:
//!
//! 1. A restaurant name anchors its record. It reuses the index already
//!    anchored to that record, else adopts the most recent unnamed index whose
//!    values the record agrees with, else opens a new index.
//! 2. Any other value joins the most recently used index whose anchor record
//!    carries that value. Failing that it joins the most recent unnamed index
//!    for which some record agrees with all of the index's values (the anchor
//!    becomes the first such record), else it opens a new index anchored to the
//!    first record holding the value.
//!
//! Every value of an index therefore equals its anchor's field, which is what
//! makes delexicalize → relexicalize with the anchors an exact round trip.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Dialogue, SplitTag, Turn};
use crate::error::{Error, Result};
use crate::knowledge::{build_ontology, query_kb, Constraints, EntityRecord, KnowledgeBase, Ontology, Slot};
use crate::serialize::ContextPair;

/// One-line statement of the anchor rule, printed by `augment` and kept in its manifest.
pub const ANCHOR_RULE: &str = "a restaurant name anchors its record and index; any other value joins the most \
recently used index whose anchor carries it, else the latest unnamed index some record still agrees with, \
else a new index anchored to the first record holding the value";

/// A typed entity slot with a 1-based index, spelled `[slot_i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Placeholder {
    pub slot: Slot,
    pub index: usize,
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}_{}]", self.slot, self.index)
    }
}

impl FromStr for Placeholder {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        let inner = s.strip_prefix('[').and_then(|s| s.strip_suffix(']')).ok_or(())?;
        let (slot, index) = inner.rsplit_once('_').ok_or(())?;
        let slot: Slot = slot.parse().map_err(|_| ())?;
        let index: usize = index.parse().map_err(|_| ())?;
        if index == 0 {
            return Err(());
        }
        Ok(Placeholder { slot, index })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    /// Dialogue turns with entity tokens replaced by placeholder tokens.
    pub turns: Vec<Turn>,
    pub required_slots: BTreeSet<Placeholder>,
    /// Id of the first dialogue that produced this template.
    pub source_id: String,
    /// KB positions of the records anchoring indices 1..=k in the source dialogue.
    pub source_anchors: Vec<usize>,
}

impl Template {
    /// Number of distinct entity indices.
    pub fn arity(&self) -> usize {
        self.source_anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.required_slots.is_empty()
    }

    /// Template turns as a dialogue, for persisting in the corpus format.
    pub fn to_dialogue(&self, id: impl Into<String>) -> Dialogue {
        Dialogue::new(id, self.turns.clone())
    }
}

#[derive(Debug)]
struct Group {
    anchor: usize,
    named: bool,
    values: Vec<(Slot, String)>,
    last_used: usize,
}

impl Group {
    fn agrees_with(&self, record: &EntityRecord) -> bool {
        self.values.iter().all(|(slot, value)| record.get(*slot) == value)
    }
}

struct Anchoring<'a> {
    ontology: &'a Ontology,
    kb: &'a KnowledgeBase,
    groups: Vec<Group>,
}

impl Anchoring<'_> {
    fn open(&mut self, anchor: usize, named: bool, clock: usize) -> usize {
        self.groups.push(Group {
            anchor,
            named,
            values: Vec::new(),
            last_used: clock,
        });
        self.groups.len() - 1
    }

    fn assign(&mut self, token: &str, clock: usize) -> Option<Placeholder> {
        let slots = self.ontology.slots_of(token);
        if slots.is_empty() {
            return None;
        }
        let records = self.kb.records();
        let (g, slot) = if slots.contains(&Slot::Name) {
            let pos = self.kb.position(token)?;
            let g = if let Some(g) = self.groups.iter().position(|g| g.named && g.anchor == pos) {
                g
            } else if let Some(g) = most_recent(&self.groups, |g| !g.named && g.agrees_with(&records[pos])) {
                self.groups[g].anchor = pos;
                self.groups[g].named = true;
                g
            } else {
                self.open(pos, true, clock)
            };
            (g, Slot::Name)
        } else {
            let groups = &self.groups;
            let by_anchor = slots
                .iter()
                .filter_map(|&slot| most_recent(groups, |g| records[g.anchor].get(slot) == token).map(|g| (g, slot)))
                .max_by_key(|&(g, _)| (groups[g].last_used, std::cmp::Reverse(g)));
            let extend = || {
                slots
                    .iter()
                    .filter_map(|&slot| {
                        let g = most_recent(groups, |g| {
                            !g.named && records.iter().any(|r| g.agrees_with(r) && r.get(slot) == token)
                        })?;
                        Some((g, slot))
                    })
                    .max_by_key(|&(g, _)| (groups[g].last_used, std::cmp::Reverse(g)))
            };
            if let Some(hit) = by_anchor {
                hit
            } else if let Some((g, slot)) = extend() {
                let group = &self.groups[g];
                let anchor = records
                    .iter()
                    .position(|r| group.agrees_with(r) && r.get(slot) == token)
                    .expect("a consistent record exists");
                self.groups[g].anchor = anchor;
                (g, slot)
            } else {
                let slot = slots[0];
                let anchor = records.iter().position(|r| r.get(slot) == token)?;
                (self.open(anchor, false, clock), slot)
            }
        };
        let group = &mut self.groups[g];
        group.values.push((slot, token.to_string()));
        group.last_used = clock;
        Some(Placeholder { slot, index: g + 1 })
    }
}

/// Replaces ontology values with placeholders using the record anchor rule.
pub fn delexicalize(dialogue: &Dialogue, ontology: &Ontology, kb: &KnowledgeBase) -> Template {
    let mut anchoring = Anchoring {
        ontology,
        kb,
        groups: Vec::new(),
    };
    let mut required = BTreeSet::new();
    let mut clock = 0usize;
    let mut replace = |utterance: &[String]| -> Vec<String> {
        utterance
            .iter()
            .map(|token| {
                clock += 1;
                match anchoring.assign(token, clock) {
                    Some(p) => {
                        required.insert(p);
                        p.to_string()
                    }
                    None => token.clone(),
                }
            })
            .collect()
    };
    let turns = dialogue
        .turns
        .iter()
        .map(|t| {
            let user = replace(&t.user);
            let system = replace(&t.system);
            Turn { user, system }
        })
        .collect();
    Template {
        turns,
        required_slots: required,
        source_id: dialogue.id.clone(),
        source_anchors: anchoring.groups.iter().map(|g| g.anchor).collect(),
    }
}

fn most_recent(groups: &[Group], pred: impl Fn(&Group) -> bool) -> Option<usize> {
    groups
        .iter()
        .enumerate()
        .filter(|(_, g)| pred(g))
        .max_by_key(|(i, g)| (g.last_used, std::cmp::Reverse(*i)))
        .map(|(i, _)| i)
}

/// Delexicalizes every training dialogue, drops templates without
/// placeholders and keeps the first occurrence of each distinct template.
pub fn extract_templates(train: &Corpus, ontology: &Ontology, kb: &KnowledgeBase) -> Result<Vec<Template>> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut seen: HashSet<Vec<Turn>> = HashSet::new();
    let mut templates = Vec::new();
    for dialogue in &train.dialogues {
        let template = delexicalize(dialogue, ontology, kb);
        if !template.is_empty() && seen.insert(template.turns.clone()) {
            templates.push(template);
        }
    }
    Ok(templates)
}

/// Fills a template with the given records: index `i` takes `assignment[i - 1]`.
pub fn relexicalize_with(template: &Template, kb: &KnowledgeBase, assignment: &[usize]) -> Vec<Turn> {
    let fill = |utterance: &[String]| -> Vec<String> {
        utterance
            .iter()
            .map(|token| match token.parse::<Placeholder>() {
                Ok(p) if p.index <= assignment.len() => kb.records()[assignment[p.index - 1]].get(p.slot).to_string(),
                _ => token.clone(),
            })
            .collect()
    };
    template
        .turns
        .iter()
        .map(|t| Turn {
            user: fill(&t.user),
            system: fill(&t.system),
        })
        .collect()
}

/// Draws distinct records uniformly for every index and fills the template.
pub fn relexicalize(template: &Template, kb: &KnowledgeBase, rng: &mut impl Rng) -> Result<Dialogue> {
    let k = template.arity();
    if k > kb.len() {
        return Err(Error::NotEnoughRecords {
            needed: k,
            available: kb.len(),
        });
    }
    let assignment = rand::seq::index::sample(rng, kb.len(), k).into_vec();
    Ok(Dialogue::new(
        format!("{}-relex", template.source_id),
        relexicalize_with(template, kb, &assignment),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub budget: usize,
    pub seed: u64,
    /// Restrict each index to records that agree with the source anchor on
    /// the informable slots (area, food, pricerange).
    pub respect_constraints: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            budget: 9728,
            seed: 0,
            respect_constraints: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Augmented {
    /// Training dialogues followed by the generated ones.
    pub corpus: Corpus,
    pub templates: Vec<Template>,
    /// Template index and record assignment of every generated dialogue.
    pub provenance: Vec<(usize, Vec<usize>)>,
}

impl Augmented {
    pub fn generated(&self) -> &[Dialogue] {
        &self.corpus.dialogues[self.corpus.len() - self.provenance.len()..]
    }
}

const ENUMERATE_LIMIT: u128 = 10_000;

fn candidate_sets(template: &Template, kb: &KnowledgeBase, respect_constraints: bool) -> Vec<Vec<usize>> {
    template
        .source_anchors
        .iter()
        .map(|&anchor| {
            if respect_constraints {
                let source = &kb.records()[anchor];
                (0..kb.len())
                    .filter(|&r| {
                        Slot::INFORMABLE
                            .iter()
                            .all(|&s| kb.records()[r].get(s) == source.get(s))
                    })
                    .collect()
            } else {
                (0..kb.len()).collect()
            }
        })
        .collect()
}

/// Number of assignments of distinct records, counting stops at `cap`.
fn count_assignments(candidates: &[Vec<usize>], cap: u128) -> u128 {
    if candidates
        .iter()
        .all(|c| c.len() == candidates.first().map_or(0, Vec::len))
        && candidates.windows(2).all(|w| w[0] == w[1])
    {
        // identical sets: falling factorial
        let n = candidates.first().map_or(0, Vec::len) as u128;
        let mut total: u128 = 1;
        for i in 0..candidates.len() as u128 {
            if i >= n {
                return 0;
            }
            total = total.saturating_mul(n - i);
            if total >= cap {
                return cap;
            }
        }
        return total;
    }
    fn walk(candidates: &[Vec<usize>], used: &mut Vec<usize>, cap: u128, count: &mut u128) {
        if *count >= cap {
            return;
        }
        let Some((first, rest)) = candidates.split_first() else {
            *count += 1;
            return;
        };
        for &r in first {
            if !used.contains(&r) {
                used.push(r);
                walk(rest, used, cap, count);
                used.pop();
            }
        }
    }
    let mut count = 0;
    walk(candidates, &mut Vec::new(), cap, &mut count);
    count.min(cap)
}

fn enumerate_assignments(candidates: &[Vec<usize>]) -> Vec<Vec<usize>> {
    fn walk(candidates: &[Vec<usize>], used: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let Some((first, rest)) = candidates.split_first() else {
            out.push(used.clone());
            return;
        };
        for &r in first {
            if !used.contains(&r) {
                used.push(r);
                walk(rest, used, out);
                used.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(candidates, &mut Vec::new(), &mut out);
    out
}

/// Per-template draw state: either a pre-shuffled list of every assignment or
/// rejection sampling against the set already emitted.
#[allow(clippy::large_enum_variant)]
enum Drawer {
    Enumerated(std::vec::IntoIter<Vec<usize>>),
    Sampled {
        candidates: Vec<Vec<usize>>,
        used: HashSet<Vec<usize>>,
        remaining: u128,
        rng: ChaCha8Rng,
    },
}

impl Drawer {
    fn next(&mut self) -> Option<Vec<usize>> {
        match self {
            Drawer::Enumerated(it) => it.next(),
            Drawer::Sampled {
                candidates,
                used,
                remaining,
                rng,
            } => {
                if *remaining == 0 {
                    return None;
                }
                loop {
                    let mut assignment = Vec::with_capacity(candidates.len());
                    for set in candidates.iter() {
                        let free: Vec<usize> = set.iter().copied().filter(|r| !assignment.contains(r)).collect();
                        assignment.push(*free.choose(rng)?);
                    }
                    if used.insert(assignment.clone()) {
                        *remaining -= 1;
                        return Some(assignment);
                    }
                }
            }
        }
    }
}

/// Appends `budget` relexicalized dialogues to `train`.
///
/// Templates are visited round-robin; each template draws record assignments
/// uniformly without replacement from its own seeded stream, so no
/// (template, assignment) pair repeats. Generated dialogues get fresh ids
/// (`ke-00000`, ...) disjoint from the training ids.
pub fn augment_corpus(train: &Corpus, kb: &KnowledgeBase, config: &AugmentConfig) -> Result<Augmented> {
    let ontology = build_ontology(kb);
    let templates = extract_templates(train, &ontology, kb)?;
    augment_with_templates(train, templates, kb, config)
}

pub fn augment_with_templates(
    train: &Corpus,
    templates: Vec<Template>,
    kb: &KnowledgeBase,
    config: &AugmentConfig,
) -> Result<Augmented> {
    let budget = config.budget;
    let mut dialogues = train.dialogues.clone();
    let mut provenance = Vec::with_capacity(budget);

    if budget > 0 {
        let cap = (budget as u128).max(ENUMERATE_LIMIT + 1);
        let candidates: Vec<Vec<Vec<usize>>> = templates
            .iter()
            .map(|t| candidate_sets(t, kb, config.respect_constraints))
            .collect();
        let counts: Vec<u128> = candidates.iter().map(|c| count_assignments(c, cap)).collect();
        let available: u128 = counts.iter().sum();
        if available < budget as u128 {
            return Err(Error::BudgetTooLarge {
                budget,
                available: available as usize,
            });
        }

        let mut drawers: Vec<Drawer> = candidates
            .into_iter()
            .zip(&counts)
            .enumerate()
            .map(|(t, (candidates, &count))| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(t as u64);
                if count <= ENUMERATE_LIMIT {
                    let mut all = enumerate_assignments(&candidates);
                    all.shuffle(&mut rng);
                    Drawer::Enumerated(all.into_iter())
                } else {
                    Drawer::Sampled {
                        candidates,
                        used: HashSet::new(),
                        remaining: count,
                        rng,
                    }
                }
            })
            .collect();

        let taken: HashSet<String> = train.ids().map(str::to_string).collect();
        let mut next_id = 0usize;
        let mut fresh_id = || loop {
            let id = format!("ke-{next_id:05}");
            next_id += 1;
            if !taken.contains(&id) {
                return id;
            }
        };

        'fill: loop {
            let mut progressed = false;
            for (t, drawer) in drawers.iter_mut().enumerate() {
                if provenance.len() == budget {
                    break 'fill;
                }
                if let Some(assignment) = drawer.next() {
                    let mut dialogue = Dialogue::new(fresh_id(), relexicalize_with(&templates[t], kb, &assignment));
                    dialogue.split = Some(SplitTag::Train);
                    dialogues.push(dialogue);
                    provenance.push((t, assignment));
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
    }

    let corpus = Corpus::new(dialogues, SplitTag::Train)?;
    Ok(Augmented {
        corpus,
        templates,
        provenance,
    })
}

/// What to attach when the dialogue so far states no constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoConstraintPolicy {
    #[default]
    Empty,
    All,
}

/// Maps dialogue tokens to informable-slot constraints.
///
/// Exact ontology values of area, food and pricerange are constraints. A small
/// alias table covers surface forms the ontology does not contain, such as
/// `moderately` for the price range `moderate`. The latest mention of a slot wins.
#[derive(Debug, Clone)]
pub struct ConstraintExtractor {
    lookup: HashMap<String, (Slot, String)>,
    pub policy: NoConstraintPolicy,
}

pub const DEFAULT_ALIASES: [(&str, Slot, &str); 3] = [
    ("moderately", Slot::Pricerange, "moderate"),
    ("center", Slot::Area, "centre"),
    ("cheaply", Slot::Pricerange, "cheap"),
];

impl ConstraintExtractor {
    pub fn new(ontology: &Ontology) -> Self {
        Self::with_aliases(ontology, &DEFAULT_ALIASES)
    }

    /// Aliases whose target value is not in the ontology are ignored.
    pub fn with_aliases(ontology: &Ontology, aliases: &[(&str, Slot, &str)]) -> Self {
        let mut lookup = HashMap::new();
        for &(alias, slot, value) in aliases {
            if ontology.values(slot).contains(value) {
                lookup.insert(alias.to_string(), (slot, value.to_string()));
            }
        }
        for slot in Slot::INFORMABLE {
            for value in ontology.values(slot) {
                lookup.insert(value.clone(), (slot, value.clone()));
            }
        }
        ConstraintExtractor {
            lookup,
            policy: NoConstraintPolicy::default(),
        }
    }

    pub fn extract<'a>(&self, tokens: impl IntoIterator<Item = &'a String>) -> Constraints {
        let mut constraints = BTreeMap::new();
        for token in tokens {
            if let Some((slot, value)) = self.lookup.get(token) {
                constraints.insert(*slot, value.clone());
            }
        }
        constraints
    }
}

/// Sets `pair.kb_rows` to the records matching the constraints stated in the
/// history and query. Idempotent: only history, query and the KB are read.
pub fn attach_kb_rows(pair: &ContextPair, kb: &KnowledgeBase, extractor: &ConstraintExtractor) -> ContextPair {
    let tokens = pair
        .history
        .iter()
        .flat_map(|(_, utterance)| utterance.iter())
        .chain(pair.query.iter());
    let constraints = extractor.extract(tokens);
    let kb_rows = if constraints.is_empty() && extractor.policy == NoConstraintPolicy::Empty {
        Vec::new()
    } else {
        query_kb(kb, &constraints).into_iter().cloned().collect()
    };
    ContextPair {
        kb_rows,
        ..pair.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::fixtures::small_kb;
    use crate::knowledge::parse_kb;
    use crate::serialize::build_pairs;

    fn worked_dialogue() -> Dialogue {
        Dialogue::new(
            "worked",
            vec![
                Turn::new(
                    "i would like a moderately priced restaurant in the north part of town .",
                    "golden_wok is a moderately priced restaurant in the north side of town .",
                ),
                Turn::new(
                    "what type of food does golden_wok serve ?",
                    "the golden_wok serves chinese food . would you like more information ?",
                ),
            ],
        )
    }

    #[test]
    fn placeholder_spelling_round_trips() {
        let p = Placeholder {
            slot: Slot::Pricerange,
            index: 2,
        };
        assert_eq!(p.to_string(), "[pricerange_2]");
        assert_eq!("[pricerange_2]".parse::<Placeholder>(), Ok(p));
        assert!("[name_0]".parse::<Placeholder>().is_err());
        assert!("[stars_1]".parse::<Placeholder>().is_err());
        assert!("name_1".parse::<Placeholder>().is_err());
    }

    #[test]
    fn system_turn_delexicalizes_name_and_area() {
        let kb = small_kb();
        let ontology = build_ontology(&kb);
        let d = Dialogue::new(
            "one",
            vec![Turn::new(
                "hello",
                "golden_wok is a moderately priced restaurant in the north side of town .",
            )],
        );
        let t = delexicalize(&d, &ontology, &kb);
        assert_eq!(
            t.turns[0].system.join(" "),
            "[name_1] is a moderately priced restaurant in the [area_1] side of town ."
        );
        let expected: BTreeSet<Placeholder> = [
            Placeholder {
                slot: Slot::Name,
                index: 1,
            },
            Placeholder {
                slot: Slot::Area,
                index: 1,
            },
        ]
        .into();
        assert_eq!(t.required_slots, expected);
    }

    #[test]
    fn user_constraint_joins_recommended_restaurant() {
        let kb = small_kb();
        let ontology = build_ontology(&kb);
        let t = delexicalize(&worked_dialogue(), &ontology, &kb);
        assert_eq!(
            t.turns[0].user.join(" "),
            "i would like a moderately priced restaurant in the [area_1] part of town ."
        );
        assert_eq!(
            t.turns[1].system.join(" "),
            "the [name_1] serves [food_1] food . would you like more information ?"
        );
        assert_eq!(t.source_anchors, vec![kb.position("golden_wok").unwrap()]);
    }

    #[test]
    fn no_entities_means_empty_template() {
        let kb = small_kb();
        let ontology = build_ontology(&kb);
        let d = Dialogue::new("plain", vec![Turn::new("hello", "hi , how can i help ?")]);
        let t = delexicalize(&d, &ontology, &kb);
        assert!(t.required_slots.is_empty());
        assert_eq!(t.turns, d.turns);
    }

    #[test]
    fn relexicalize_fills_from_record() {
        let kb = small_kb();
        let template = Template {
            turns: vec![Turn {
                user: vec!["food".into(), "?".into()],
                system: "[name_1] serves [food_1] food .".split(' ').map(String::from).collect(),
            }],
            required_slots: [
                Placeholder {
                    slot: Slot::Name,
                    index: 1,
                },
                Placeholder {
                    slot: Slot::Food,
                    index: 1,
                },
            ]
            .into(),
            source_id: "t".into(),
            source_anchors: vec![0],
        };
        let wok = kb.position("golden_wok").unwrap();
        let turns = relexicalize_with(&template, &kb, &[wok]);
        assert_eq!(turns[0].system.join(" "), "golden_wok serves chinese food .");
    }

    #[test]
    fn placeholder_free_template_relexicalizes_to_itself() {
        let kb = small_kb();
        let template = Template {
            turns: vec![Turn::new("hi", "hello")],
            required_slots: BTreeSet::new(),
            source_id: "t".into(),
            source_anchors: vec![],
        };
        let d = relexicalize(&template, &kb, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(d.turns, template.turns);
    }

    #[test]
    fn relexicalize_needs_enough_records() {
        let kb = parse_kb(crate::knowledge::fixtures::TABLE_ROWS.as_bytes(), "two").unwrap();
        let template = Template {
            turns: vec![Turn::new("[name_1] or [name_2] or [name_3]", "ok")],
            required_slots: (1..=3)
                .map(|index| Placeholder {
                    slot: Slot::Name,
                    index,
                })
                .collect(),
            source_id: "t".into(),
            source_anchors: vec![0, 1, 0],
        };
        let err = relexicalize(&template, &kb, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(matches!(
            err,
            Error::NotEnoughRecords {
                needed: 3,
                available: 2
            }
        ));
    }

    #[test]
    fn duplicate_dialogues_give_one_template() {
        let kb = small_kb();
        let ontology = build_ontology(&kb);
        let mut twin = worked_dialogue();
        twin.id = "twin".into();
        let corpus = Corpus::new(vec![worked_dialogue(), twin], SplitTag::Train).unwrap();
        assert_eq!(extract_templates(&corpus, &ontology, &kb).unwrap().len(), 1);
        let empty = Corpus {
            dialogues: vec![],
            split: SplitTag::Train,
        };
        assert!(matches!(
            extract_templates(&empty, &ontology, &kb),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn augmentation_counts_and_determinism() {
        let kb = small_kb();
        let corpus = Corpus::new(vec![worked_dialogue()], SplitTag::Train).unwrap();
        let config = AugmentConfig {
            budget: 4,
            seed: 5,
            respect_constraints: false,
        };
        let a = augment_corpus(&corpus, &kb, &config).unwrap();
        assert_eq!(a.corpus.len(), 5);
        let distinct: HashSet<&Vec<usize>> = a.provenance.iter().map(|(_, asg)| asg).collect();
        assert_eq!(distinct.len(), 4);
        let b = augment_corpus(&corpus, &kb, &config).unwrap();
        assert_eq!(a.corpus, b.corpus);

        let zero = augment_corpus(&corpus, &kb, &AugmentConfig { budget: 0, ..config }).unwrap();
        assert_eq!(zero.corpus.dialogues, corpus.dialogues);

        let err = augment_corpus(&corpus, &kb, &AugmentConfig { budget: 5, ..config }).unwrap_err();
        assert!(matches!(
            err,
            Error::BudgetTooLarge {
                budget: 5,
                available: 4
            }
        ));
    }

    #[test]
    fn respect_constraints_restricts_records() {
        let kb = small_kb();
        let corpus = Corpus::new(vec![worked_dialogue()], SplitTag::Train).unwrap();
        let config = AugmentConfig {
            budget: 1,
            seed: 0,
            respect_constraints: true,
        };
        // golden_wok is the only north/moderate/chinese record
        let a = augment_corpus(&corpus, &kb, &config).unwrap();
        assert_eq!(a.generated()[0].turns, corpus.dialogues[0].turns);
        assert!(augment_corpus(&corpus, &kb, &AugmentConfig { budget: 2, ..config }).is_err());
    }

    #[test]
    fn falling_factorial_count() {
        let sets = vec![(0..110).collect::<Vec<_>>(); 2];
        assert_eq!(count_assignments(&sets, u128::MAX), 110 * 109);
        assert_eq!(count_assignments(&sets, 50), 50);
        let mixed = vec![vec![0, 1], vec![1, 2]];
        assert_eq!(count_assignments(&mixed, 100), 3);
        assert_eq!(enumerate_assignments(&mixed).len(), 3);
    }

    #[test]
    fn kb_rows_follow_stated_constraints() {
        let kb = small_kb();
        let extractor = ConstraintExtractor::new(&build_ontology(&kb));
        let pairs = build_pairs(&worked_dialogue());
        let attached = attach_kb_rows(&pairs[1], &kb, &extractor);
        let names: Vec<&str> = attached.kb_rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, vec!["the_nirala", "golden_wok"]);
        assert_eq!(attach_kb_rows(&attached, &kb, &extractor), attached);

        let plain = build_pairs(&Dialogue::new("x", vec![Turn::new("hello", "hi")]));
        assert!(attach_kb_rows(&plain[0], &kb, &extractor).kb_rows.is_empty());
        let mut all = extractor.clone();
        all.policy = NoConstraintPolicy::All;
        assert_eq!(attach_kb_rows(&plain[0], &kb, &all).kb_rows.len(), kb.len());

        let martian = build_pairs(&Dialogue::new(
            "m",
            vec![Turn::new("cheap chinese food in the north", "sorry")],
        ));
        assert!(attach_kb_rows(&martian[0], &kb, &extractor).kb_rows.is_empty());
    }
}
