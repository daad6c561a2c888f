//! Static table of the 118 chemical elements.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

const TABLE_SOURCE: &str = include_str!("../data/elements.csv");

/// Number of elements in the embedded table.
pub const ELEMENT_COUNT: usize = 118;

#[derive(Debug)]
struct ElementRow {
    symbol: String,
    name: String,
}

struct ElementTable {
    rows: Vec<ElementRow>,
    by_symbol: HashMap<String, u8>,
    by_name: HashMap<String, u8>,
}

fn table() -> &'static ElementTable {
    static TABLE: OnceLock<ElementTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut rows = Vec::with_capacity(ELEMENT_COUNT);
        for line in TABLE_SOURCE.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("atomic_number") {
                continue;
            }
            let mut fields = line.split(',');
            let (Some(z), Some(symbol), Some(name)) = (fields.next(), fields.next(), fields.next())
            else {
                panic!("malformed element table row: {line}");
            };
            let z: usize = z.parse().expect("atomic number");
            assert_eq!(z, rows.len() + 1, "element table must be ordered by Z");
            rows.push(ElementRow {
                symbol: symbol.to_string(),
                name: name.to_string(),
            });
        }
        assert_eq!(rows.len(), ELEMENT_COUNT);
        let by_symbol = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.symbol.clone(), i as u8 + 1))
            .collect();
        let by_name = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.name.clone(), i as u8 + 1))
            .collect();
        ElementTable {
            rows,
            by_symbol,
            by_name,
        }
    })
}

/// A chemical element, identified by atomic number.
///
/// Ordering is alphabetical by symbol, which is the canonical order used for
/// formula strings and for summation in composition averages.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Element(u8);

impl Element {
    pub fn from_atomic_number(z: u32) -> Option<Element> {
        (1..=ELEMENT_COUNT as u32)
            .contains(&z)
            .then_some(Element(z as u8))
    }

    /// Exact, case-sensitive symbol lookup ("Fe", not "fe").
    pub fn from_symbol(symbol: &str) -> Option<Element> {
        table().by_symbol.get(symbol).copied().map(Element)
    }

    /// Case-insensitive lookup by English name ("iron", "Iron").
    pub fn from_name(name: &str) -> Option<Element> {
        table()
            .by_name
            .get(&name.to_lowercase())
            .copied()
            .map(Element)
    }

    pub fn atomic_number(self) -> u32 {
        u32::from(self.0)
    }

    pub fn symbol(self) -> &'static str {
        &table().rows[usize::from(self.0) - 1].symbol
    }

    /// Lowercase English name, as rendered into embedding phrases.
    pub fn name(self) -> &'static str {
        &table().rows[usize::from(self.0) - 1].name
    }

    pub fn all() -> impl Iterator<Item = Element> {
        (1..=ELEMENT_COUNT as u8).map(Element)
    }
}

impl Ord for Element {
    fn cmp(&self, other: &Self) -> Ordering {
        self.symbol().cmp(other.symbol())
    }
}

impl PartialOrd for Element {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}
