//! Restaurant knowledge base, slot ontology and constraint queries.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entity slots. Coordinates are a record field but not a slot: they never
/// appear in dialogue text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Name,
    Address,
    Area,
    Food,
    Phone,
    Pricerange,
    Postcode,
}

impl Slot {
    pub const ALL: [Slot; 7] = [
        Slot::Name,
        Slot::Address,
        Slot::Area,
        Slot::Food,
        Slot::Phone,
        Slot::Pricerange,
        Slot::Postcode,
    ];

    /// Slots a user states as search constraints.
    pub const INFORMABLE: [Slot; 3] = [Slot::Area, Slot::Food, Slot::Pricerange];

    pub fn as_str(&self) -> &'static str {
        match self {
            Slot::Name => "name",
            Slot::Address => "address",
            Slot::Area => "area",
            Slot::Food => "food",
            Slot::Phone => "phone",
            Slot::Pricerange => "pricerange",
            Slot::Postcode => "postcode",
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Slot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Slot::ALL
            .into_iter()
            .find(|slot| slot.as_str() == s)
            .ok_or_else(|| Error::UnknownSlot(s.to_string()))
    }
}

/// Latitude/longitude kept together with the exact source spelling so that
/// rendering reproduces the input byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinates {
    pub lat: f64,
    pub lon: f64,
    raw: String,
}

impl Coordinates {
    pub fn parse(text: &str) -> Option<Self> {
        let (lat, lon) = text.split_once(',')?;
        let lat: f64 = lat.trim().parse().ok()?;
        let lon: f64 = lon.trim().parse().ok()?;
        if !(lat.is_finite() && lon.is_finite()) || lat.abs() > 90.0 || lon.abs() > 180.0 {
            return None;
        }
        Some(Coordinates {
            lat,
            lon,
            raw: text.trim().to_string(),
        })
    }

    pub fn as_token(&self) -> &str {
        &self.raw
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityRecord {
    pub name: String,
    pub address: String,
    pub area: String,
    pub food: String,
    pub coordinates: Coordinates,
    pub phone: String,
    pub pricerange: String,
    pub postcode: String,
}

impl EntityRecord {
    pub fn get(&self, slot: Slot) -> &str {
        match slot {
            Slot::Name => &self.name,
            Slot::Address => &self.address,
            Slot::Area => &self.area,
            Slot::Food => &self.food,
            Slot::Phone => &self.phone,
            Slot::Pricerange => &self.pricerange,
            Slot::Postcode => &self.postcode,
        }
    }

    /// The eight field values in row order: name, address, area, food,
    /// coordinates, phone, pricerange, postcode.
    pub fn row_tokens(&self) -> [&str; 8] {
        [
            &self.name,
            &self.address,
            &self.area,
            &self.food,
            self.coordinates.as_token(),
            &self.phone,
            &self.pricerange,
            &self.postcode,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    records: Vec<EntityRecord>,
    by_name: HashMap<String, usize>,
}

impl KnowledgeBase {
    pub fn new(records: Vec<EntityRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyKb);
        }
        let mut by_name = HashMap::with_capacity(records.len());
        for (i, record) in records.iter().enumerate() {
            for slot in Slot::ALL {
                let value = record.get(slot);
                if value.is_empty() || value.chars().any(char::is_whitespace) || value != value.to_lowercase() {
                    return Err(Error::malformed(
                        "knowledge base",
                        i + 1,
                        format!("{slot} value `{value}` is not a lowercased single token"),
                    ));
                }
            }
            if by_name.insert(record.name.clone(), i).is_some() {
                return Err(Error::DuplicateName(record.name.clone()));
            }
        }
        Ok(KnowledgeBase { records, by_name })
    }

    pub fn records(&self) -> &[EntityRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&EntityRecord> {
        self.position(name).map(|i| &self.records[i])
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    name: String,
    address: String,
    area: String,
    food: String,
    coordinates: String,
    phone: String,
    pricerange: String,
    postcode: String,
}

/// Loads a knowledge base. Two encodings are accepted:
///
/// - line-delimited JSON with the eight named fields (`coordinates` as `"lat,lon"`);
/// - positional rows, one restaurant per line, eight whitespace-separated
///   tokens in row order (name, address, area, food, coordinates, phone,
///   pricerange, postcode).
///
/// Positional rows are checked for field order: a row whose fifth token is
/// not a coordinate pair, or whose seventh token looks like a coordinate
/// pair, is rejected instead of being reinterpreted.
pub fn load_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_kb(BufReader::new(file), &path.display().to_string())
}

pub fn parse_kb(reader: impl BufRead, source_name: &str) -> Result<KnowledgeBase> {
    let mut records = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let record = if line.starts_with('{') {
            let raw: RecordLine =
                serde_json::from_str(line).map_err(|e| Error::malformed(source_name, line_no + 1, e.to_string()))?;
            record_from_fields(
                [
                    raw.name.as_str(),
                    &raw.address,
                    &raw.area,
                    &raw.food,
                    &raw.coordinates,
                    &raw.phone,
                    &raw.pricerange,
                    &raw.postcode,
                ],
                source_name,
                line_no + 1,
            )?
        } else {
            let fields: Vec<&str> = line.split_whitespace().collect();
            let fields: [&str; 8] = fields.as_slice().try_into().map_err(|_| {
                Error::malformed(
                    source_name,
                    line_no + 1,
                    format!("expected 8 fields, found {}", fields.len()),
                )
            })?;
            if Coordinates::parse(fields[6]).is_some() || Coordinates::parse(fields[4]).is_none() {
                return Err(Error::malformed(
                    source_name,
                    line_no + 1,
                    "field order violation: expected name address area food coordinates phone pricerange postcode",
                ));
            }
            record_from_fields(fields, source_name, line_no + 1)?
        };
        records.push(record);
    }
    KnowledgeBase::new(records)
}

fn record_from_fields(fields: [&str; 8], source_name: &str, record: usize) -> Result<EntityRecord> {
    let coordinates = Coordinates::parse(fields[4]).ok_or_else(|| Error::Coordinates {
        source_name: source_name.to_string(),
        record,
        value: fields[4].to_string(),
    })?;
    let text = |i: usize| -> Result<String> {
        let value = fields[i].trim().to_lowercase();
        if value.is_empty() {
            return Err(Error::malformed(
                source_name,
                record,
                format!("missing field {}", i + 1),
            ));
        }
        Ok(value)
    };
    Ok(EntityRecord {
        name: text(0)?,
        address: text(1)?,
        area: text(2)?,
        food: text(3)?,
        coordinates,
        phone: text(5)?,
        pricerange: text(6)?,
        postcode: text(7)?,
    })
}

pub fn write_kb(kb: &KnowledgeBase, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in kb.records() {
        let line = RecordLine {
            name: r.name.clone(),
            address: r.address.clone(),
            area: r.area.clone(),
            food: r.food.clone(),
            coordinates: r.coordinates.as_token().to_string(),
            phone: r.phone.clone(),
            pricerange: r.pricerange.clone(),
            postcode: r.postcode.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Slot → value sets derived from a knowledge base.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    slots: BTreeMap<Slot, BTreeSet<String>>,
    slots_of_value: HashMap<String, Vec<Slot>>,
}

impl Ontology {
    pub fn values(&self, slot: Slot) -> &BTreeSet<String> {
        &self.slots[&slot]
    }

    /// Slots whose value set contains `token`, in slot order.
    pub fn slots_of(&self, token: &str) -> &[Slot] {
        self.slots_of_value.get(token).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.slots_of_value.contains_key(token)
    }

    pub fn slots(&self) -> impl Iterator<Item = (Slot, &BTreeSet<String>)> {
        self.slots.iter().map(|(slot, values)| (*slot, values))
    }
}

pub fn build_ontology(kb: &KnowledgeBase) -> Ontology {
    let mut slots: BTreeMap<Slot, BTreeSet<String>> = Slot::ALL.into_iter().map(|s| (s, BTreeSet::new())).collect();
    for record in kb.records() {
        for slot in Slot::ALL {
            slots.get_mut(&slot).unwrap().insert(record.get(slot).to_string());
        }
    }
    let mut slots_of_value: HashMap<String, Vec<Slot>> = HashMap::new();
    for (slot, values) in &slots {
        for value in values {
            slots_of_value.entry(value.clone()).or_default().push(*slot);
        }
    }
    Ontology { slots, slots_of_value }
}

pub type Constraints = BTreeMap<Slot, String>;

/// Parses `slot=value` constraint strings, rejecting unknown slot names.
pub fn parse_constraints<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Constraints> {
    pairs
        .into_iter()
        .map(|(slot, value)| Ok((slot.parse::<Slot>()?, value.to_string())))
        .collect()
}

/// Records satisfying every constraint, in knowledge-base order.
pub fn query_kb<'a>(kb: &'a KnowledgeBase, constraints: &Constraints) -> Vec<&'a EntityRecord> {
    kb.records()
        .iter()
        .filter(|r| constraints.iter().all(|(slot, value)| r.get(*slot) == value))
        .collect()
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn positional_rows_load_in_field_order() {
        let kb = parse_kb(TABLE_ROWS.as_bytes(), "table").unwrap();
        let wok = kb.by_name("golden_wok").unwrap();
        assert_eq!(wok.area, "north");
        assert_eq!(wok.food, "chinese");
        assert_eq!(wok.pricerange, "moderate");
        assert_eq!(wok.coordinates.as_token(), "52.220757,0.111564");
    }

    #[test]
    fn single_record_kb() {
        let line = TABLE_ROWS.lines().next().unwrap();
        assert_eq!(parse_kb(line.as_bytes(), "one").unwrap().len(), 1);
    }

    #[test]
    fn duplicate_names_rejected() {
        let row = TABLE_ROWS.lines().nth(1).unwrap();
        let text = format!("{row}\n{row}\n");
        assert!(matches!(parse_kb(text.as_bytes(), "dup"), Err(Error::DuplicateName(n)) if n == "golden_wok"));
    }

    #[test]
    fn swapped_columns_flagged() {
        let text = "golden_wok 191_histon_road north chinese 01223_350688 52.22,0.11 moderate cb43hl";
        assert!(matches!(parse_kb(text.as_bytes(), "bad"), Err(Error::Malformed { .. })));
    }

    #[test]
    fn json_records_and_bad_coordinates() {
        let good = r#"{"name":"a","address":"b","area":"north","food":"thai","coordinates":"1.5,2.5","phone":"1","pricerange":"cheap","postcode":"cb1"}"#;
        assert_eq!(parse_kb(good.as_bytes(), "json").unwrap().len(), 1);
        let bad = good.replace("1.5,2.5", "north-ish");
        assert!(matches!(
            parse_kb(bad.as_bytes(), "json"),
            Err(Error::Coordinates { .. })
        ));
        let missing = good.replace(r#","postcode":"cb1""#, "");
        assert!(matches!(
            parse_kb(missing.as_bytes(), "json"),
            Err(Error::Malformed { .. })
        ));
    }

    #[test]
    fn ontology_unions_field_values() {
        let kb = parse_kb(TABLE_ROWS.as_bytes(), "table").unwrap();
        let ontology = build_ontology(&kb);
        let foods: Vec<&str> = ontology.values(Slot::Food).iter().map(String::as_str).collect();
        assert_eq!(foods, vec!["chinese", "indian"]);
        assert_eq!(ontology.values(Slot::Area).len(), 1);
        assert!(!ontology.contains("52.220757,0.111564"));
        assert_eq!(ontology, build_ontology(&kb));
    }

    #[test]
    fn single_record_ontology_is_singletons() {
        let kb = parse_kb(TABLE_ROWS.lines().next().unwrap().as_bytes(), "one").unwrap();
        let ontology = build_ontology(&kb);
        assert!(ontology.slots().all(|(_, values)| values.len() == 1));
        assert_eq!(ontology.slots().count(), 7);
    }

    #[test]
    fn query_examples() {
        let kb = small_kb();
        let north_moderate = parse_constraints([("area", "north"), ("pricerange", "moderate")]).unwrap();
        let names: Vec<&str> = query_kb(&kb, &north_moderate).iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, vec!["the_nirala", "golden_wok"]);
        assert_eq!(query_kb(&kb, &Constraints::new()).len(), kb.len());
        let none = parse_constraints([("food", "martian")]).unwrap();
        assert!(query_kb(&kb, &none).is_empty());
        assert!(matches!(
            parse_constraints([("stars", "5")]),
            Err(Error::UnknownSlot(_))
        ));
    }

    #[test]
    fn query_by_name_is_exact() {
        let kb = small_kb();
        for record in kb.records() {
            let c = parse_constraints([("name", record.name.as_str())]).unwrap();
            assert_eq!(query_kb(&kb, &c), vec![record]);
        }
    }
}
