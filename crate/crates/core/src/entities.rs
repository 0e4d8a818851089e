//! Typed entity sets and their canonical `{TYPE: [a, b], ...}` text form.
//!
//! The same string is the entity perceiver's training target, the payload of
//! the knowledge prompt, and the format LLM extractors are asked to produce.

use std::collections::HashSet;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Characters that must be backslash-escaped inside types and surface forms.
pub const RESERVED: [char; 7] = ['{', '}', '[', ']', ':', ',', '\\'];

const DATE_TYPE: &str = "DATE";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("entity parse error at offset {offset}: {message}")]
pub struct EntityParseError {
    pub offset: usize,
    pub message: String,
}

/// Ordered map from entity type to surface forms.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EntitySet {
    entries: IndexMap<String, Vec<String>>,
}

impl EntitySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `surface` under `entity_type`.
    ///
    /// DATE entries, empty strings and forms already present under the same
    /// type (after [`normalize_surface`]) are ignored. Returns whether the set
    /// changed.
    pub fn insert(&mut self, entity_type: &str, surface: &str) -> bool {
        let ty = canonical_type(entity_type);
        let surface = collapse_ws(surface);
        if ty.is_empty() || surface.is_empty() || ty == DATE_TYPE {
            return false;
        }
        let norm = normalize_surface(&surface);
        let list = self.entries.entry(ty).or_default();
        if list.iter().any(|s| normalize_surface(s) == norm) {
            return false;
        }
        list.push(surface);
        true
    }

    pub fn with(mut self, entity_type: &str, surfaces: &[&str]) -> Self {
        for s in surfaces {
            self.insert(entity_type, s);
        }
        self
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of (type, surface) entries.
    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, entity_type: &str) -> Option<&[String]> {
        self.entries.get(entity_type).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// `(type, surface)` pairs in insertion order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .flat_map(|(k, v)| v.iter().map(move |s| (k.as_str(), s.as_str())))
    }

    /// Keeps the first `n` pairs in insertion order.
    pub fn truncated(&self, n: usize) -> EntitySet {
        let mut out = EntitySet::new();
        for (ty, s) in self.pairs().take(n) {
            out.insert(ty, s);
        }
        out
    }

    /// Normalised surface forms (type-insensitive).
    pub fn surface_keys(&self) -> HashSet<String> {
        self.pairs().map(|(_, s)| normalize_surface(s)).collect()
    }

    /// Normalised `TYPE=surface` keys.
    pub fn typed_keys(&self) -> HashSet<String> {
        self.pairs()
            .map(|(t, s)| format!("{t}={}", normalize_surface(s)))
            .collect()
    }
}

impl fmt::Display for EntitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_entity_set(self))
    }
}

impl Serialize for EntitySet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&serialize_entity_set(self))
    }
}

impl<'de> Deserialize<'de> for EntitySet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_entity_set(&s).map_err(serde::de::Error::custom)
    }
}

fn canonical_type(t: &str) -> String {
    collapse_ws(t).to_uppercase()
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn escape(s: &str) -> String {
    let n = s.chars().count();
    let mut out = String::with_capacity(s.len());
    for (i, c) in s.chars().enumerate() {
        // Quotes only matter at the edges, where the parser would strip them.
        let edge_quote = (i == 0 || i + 1 == n) && (c == '"' || c == '\'');
        if RESERVED.contains(&c) || edge_quote {
            out.push('\\');
        }
        out.push(c);
    }
    out
}

/// Canonical text form, e.g. `{PERSON: [George Bush], GPE: [Liberia]}`.
pub fn serialize_entity_set(es: &EntitySet) -> String {
    let body: Vec<String> = es
        .entries
        .iter()
        .map(|(ty, list)| {
            let items: Vec<String> = list.iter().map(|s| escape(s)).collect();
            format!("{}: [{}]", escape(ty), items.join(", "))
        })
        .collect();
    format!("{{{}}}", body.join(", "))
}

/// Type-stripped surface forms, deduplicated globally in insertion order.
pub fn flatten_entity_set(es: &EntitySet) -> Vec<String> {
    let mut seen = HashSet::new();
    es.pairs()
        .filter(|(_, s)| seen.insert(normalize_surface(s)))
        .map(|(_, s)| s.to_string())
        .collect()
}

/// Trim, collapse whitespace, case-fold and drop a leading "the ".
pub fn normalize_surface(s: &str) -> String {
    let folded = collapse_ws(s).to_lowercase();
    match folded.strip_prefix("the ") {
        Some(rest) => rest.to_string(),
        None => folded,
    }
}

/// Token produced by the scanner: a character plus whether it was escaped.
type Scanned = (char, bool);

struct Parser {
    chars: Vec<(usize, char)>,
    pos: usize,
    end_offset: usize,
}

impl Parser {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, EntityParseError> {
        Err(EntityParseError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn offset(&self) -> usize {
        self.chars.get(self.pos).map_or(self.end_offset, |c| c.0)
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|c| c.1)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, want: char) -> Result<(), EntityParseError> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == want => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => self.err(format!("expected '{want}', found '{c}'")),
            None => self.err(format!("expected '{want}', found end of input")),
        }
    }

    /// Reads an item up to (not including) the next unescaped structural
    /// character.
    fn item(&mut self) -> Result<Vec<Scanned>, EntityParseError> {
        let mut out = Vec::new();
        while let Some(c) = self.peek() {
            if c == '\\' {
                self.pos += 1;
                match self.peek() {
                    Some(next) => {
                        out.push((next, true));
                        self.pos += 1;
                    }
                    None => return self.err("dangling escape"),
                }
            } else if RESERVED.contains(&c) {
                return Ok(out);
            } else {
                out.push((c, false));
                self.pos += 1;
            }
        }
        Ok(out)
    }
}

/// Strips surrounding whitespace and one pair of unescaped matching quotes.
fn finish_item(mut item: Vec<Scanned>) -> String {
    while matches!(item.last(), Some((c, false)) if c.is_whitespace()) {
        item.pop();
    }
    let start = item
        .iter()
        .position(|(c, esc)| *esc || !c.is_whitespace())
        .unwrap_or(item.len());
    let mut item = item.split_off(start);
    if item.len() >= 2 {
        let first = item[0];
        let last = item[item.len() - 1];
        if !first.1 && !last.1 && first.0 == last.0 && (first.0 == '"' || first.0 == '\'') {
            item = item[1..item.len() - 1].to_vec();
        }
    }
    item.into_iter().map(|(c, _)| c).collect()
}

/// Parses the canonical form, tolerating extra whitespace, trailing commas and
/// quoted names. DATE entries are dropped and forms deduplicated per type.
pub fn parse_entity_set(s: &str) -> Result<EntitySet, EntityParseError> {
    let mut p = Parser {
        chars: s.char_indices().collect(),
        pos: 0,
        end_offset: s.len(),
    };
    p.expect('{')?;
    let mut out = EntitySet::new();
    loop {
        p.skip_ws();
        match p.peek() {
            Some('}') => {
                p.pos += 1;
                break;
            }
            None => return p.err("unbalanced '{'"),
            _ => {}
        }
        let type_offset = p.offset();
        let ty = finish_item(p.item()?);
        p.skip_ws();
        if p.peek() != Some(':') {
            return p.err(format!("missing ':' after entity type '{ty}'"));
        }
        if ty.is_empty() {
            return Err(EntityParseError {
                offset: type_offset,
                message: "empty entity type".into(),
            });
        }
        p.pos += 1;
        p.expect('[')?;
        let mut items = Vec::new();
        loop {
            p.skip_ws();
            match p.peek() {
                Some(']') => {
                    p.pos += 1;
                    break;
                }
                None => return p.err("unbalanced '['"),
                _ => {}
            }
            let item = finish_item(p.item()?);
            p.skip_ws();
            match p.peek() {
                Some(',') => p.pos += 1,
                Some(']') => {}
                None => return p.err("unbalanced '['"),
                Some(c) => return p.err(format!("unexpected '{c}' in entity list")),
            }
            if !item.is_empty() {
                items.push(item);
            }
        }
        for item in items {
            out.insert(&ty, &item);
        }
        p.skip_ws();
        match p.peek() {
            Some(',') => p.pos += 1,
            Some('}') => {}
            None => return p.err("unbalanced '{'"),
            Some(c) => return p.err(format!("unexpected '{c}' after entity list")),
        }
    }
    p.skip_ws();
    if p.peek().is_some() {
        return p.err("trailing characters after entity map");
    }
    Ok(out)
}

/// Parses the first `{...}` map embedded in free text, as LLMs tend to wrap
/// their answer in prose.
pub fn parse_embedded_entity_set(text: &str) -> Result<EntitySet, EntityParseError> {
    let start = text.find('{').ok_or(EntityParseError {
        offset: 0,
        message: "no '{' found".into(),
    })?;
    let end = text.rfind('}').filter(|&e| e > start).ok_or(EntityParseError {
        offset: text.len(),
        message: "unbalanced '{'".into(),
    })?;
    parse_entity_set(&text[start..=end]).map_err(|mut e| {
        e.offset += start;
        e
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(pairs: &[(&str, &[&str])]) -> EntitySet {
        pairs
            .iter()
            .fold(EntitySet::new(), |acc, (t, names)| acc.with(t, names))
    }

    #[test]
    fn serializes_canonical_form() {
        let es = set(&[("PERSON", &["Condoleezza Rice"])]);
        assert_eq!(serialize_entity_set(&es), "{PERSON: [Condoleezza Rice]}");
        assert_eq!(serialize_entity_set(&EntitySet::new()), "{}");
        assert_eq!(serialize_entity_set(&set(&[("ORG", &["A", "B"])])), "{ORG: [A, B]}");
    }

    #[test]
    fn escapes_reserved_characters() {
        let es = set(&[("ORG", &["A, B: {C}"])]);
        let s = serialize_entity_set(&es);
        assert_eq!(s, r"{ORG: [A\, B\: \{C\}]}");
        assert_eq!(parse_entity_set(&s).unwrap(), es);
    }

    #[test]
    fn parses_and_dedups() {
        assert_eq!(
            parse_entity_set("{GPE: [Johannesburg]}").unwrap(),
            set(&[("GPE", &["Johannesburg"])])
        );
        assert_eq!(parse_entity_set("{PERSON: [X, X]}").unwrap(), set(&[("PERSON", &["X"])]));
        assert_eq!(
            parse_entity_set("{PERSON: [The UN, the  un]}").unwrap(),
            set(&[("PERSON", &["The UN"])])
        );
    }

    #[test]
    fn tolerant_whitespace_trailing_commas_and_quotes() {
        let es = parse_entity_set("  { person :[ \"George  Bush\" , ], GPE:['Liberia'],}  ").unwrap();
        assert_eq!(es, set(&[("PERSON", &["George Bush"]), ("GPE", &["Liberia"])]));
    }

    #[test]
    fn drops_dates_and_empty_lists() {
        let es = parse_entity_set("{DATE: [2008], GPE: [Iran], ORG: []}").unwrap();
        assert_eq!(es, set(&[("GPE", &["Iran"])]));
        assert!(!EntitySet::new().with("date", &["May 1"]).types().any(|t| t == "DATE"));
    }

    #[test]
    fn merges_repeated_types() {
        let es = parse_entity_set("{GPE: [Iran], PERSON: [A], GPE: [Iraq, iran]}").unwrap();
        assert_eq!(es, set(&[("GPE", &["Iran", "Iraq"]), ("PERSON", &["A"])]));
    }

    #[test]
    fn missing_colon_reports_offset() {
        let err = parse_entity_set("{PERSON [X]}").unwrap_err();
        assert_eq!(err.offset, 8);
        assert!(err.message.contains("':'"), "{err}");
    }

    #[test]
    fn unbalanced_input_is_an_error() {
        assert!(parse_entity_set("{PERSON: [X]").is_err());
        assert!(parse_entity_set("{PERSON: [X}").is_err());
        assert!(parse_entity_set("PERSON: [X]}").is_err());
        assert!(parse_entity_set("not a map").is_err());
        assert!(parse_entity_set("{PERSON: [X]} extra").is_err());
        assert!(parse_entity_set("{A: [x\\").is_err());
    }

    #[test]
    fn embedded_map_in_prose() {
        let es = parse_embedded_entity_set("Sure! Here: {PERSON: [George Bush], GPE: [Liberia]}.").unwrap();
        assert_eq!(es, set(&[("PERSON", &["George Bush"]), ("GPE", &["Liberia"])]));
        assert!(parse_embedded_entity_set("not a map").is_err());
    }

    #[test]
    fn flatten_dedups_globally() {
        let es = set(&[("PERSON", &["Bush"]), ("GPE", &["Liberia"])]);
        assert_eq!(flatten_entity_set(&es), vec!["Bush", "Liberia"]);
        assert!(flatten_entity_set(&EntitySet::new()).is_empty());
        let collide = set(&[("ORG", &["UN"]), ("GPE", &["UN"])]);
        assert_eq!(flatten_entity_set(&collide), vec!["UN"]);
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_surface("  The  United Nations "), "united nations");
        assert_eq!(normalize_surface("Liberia"), "liberia");
        assert_eq!(normalize_surface(""), "");
        assert_eq!(normalize_surface("Theresa May"), "theresa may");
    }

    #[test]
    fn serde_uses_canonical_string() {
        let es = set(&[("GPE", &["Iran"])]);
        let json = serde_json::to_string(&es).unwrap();
        assert_eq!(json, "\"{GPE: [Iran]}\"");
        let back: EntitySet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, es);
    }
}
