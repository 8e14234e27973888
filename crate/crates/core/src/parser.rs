//! Parser for `name<SEG>,name<NEG>,...,name<SEG>.` responses.
//!
//! The scan is greedy and total: malformed spans are recorded and skipped up
//! to the next comma, so noisy model output still yields a report. Every
//! `<SEG>` token in the text claims the next mask slot, including tokens
//! inside skipped spans, so `seg_index` always equals the token's occurrence
//! index and the i-th mask returned alongside the text binds to it.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::builder::{parse_query, TrainingSample, EMPTY_RESPONSE, NEG_TOKEN, SEG_TOKEN};
use crate::data::{normalize_name, CategoryTable, ClassId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Seg,
    Neg,
}

impl Tag {
    pub fn token(self) -> &'static str {
        match self {
            Tag::Seg => SEG_TOKEN,
            Tag::Neg => NEG_TOKEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedItem {
    /// Text between the previous separator and the tag, verbatim.
    pub raw_name: String,
    pub resolved_id: Option<ClassId>,
    pub tag: Tag,
    /// Occurrence index of this item's `<SEG>` token in the text.
    pub seg_index: Option<usize>,
    /// Position of the matching name in the query, if any.
    pub query_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseReport {
    pub items: Vec<ParsedItem>,
    /// Query classes that received no answer.
    pub missing: Vec<ClassId>,
    /// Answered names that do not correspond to any queried class.
    pub extra: Vec<String>,
    /// Names answered more than once (later occurrences only).
    pub duplicates: Vec<String>,
    pub order_matches_query: bool,
    pub trailing_garbage: Option<String>,
    /// Spans skipped during recovery.
    pub malformed: Vec<String>,
}

impl ParseReport {
    /// Items that are the first answer for their class; later duplicates are
    /// dropped.
    pub fn first_occurrences(&self) -> impl Iterator<Item = &ParsedItem> {
        let mut seen = HashSet::new();
        self.items
            .iter()
            .filter(move |it| seen.insert(dedup_key(it)))
    }

    /// Render items back into response text.
    pub fn regenerate(&self) -> String {
        if self.items.is_empty() {
            return EMPTY_RESPONSE.to_string();
        }
        let body = self
            .items
            .iter()
            .map(|it| format!("{}{}", it.raw_name, it.tag.token()))
            .collect::<Vec<_>>()
            .join(",");
        format!("{body}.")
    }
}

#[derive(Hash, PartialEq, Eq)]
enum DedupKey {
    Id(ClassId),
    Name(String),
}

fn dedup_key(item: &ParsedItem) -> DedupKey {
    match item.resolved_id {
        Some(id) => DedupKey::Id(id),
        None => DedupKey::Name(normalize_name(&item.raw_name)),
    }
}

fn next_tag(text: &str) -> Option<(usize, Tag)> {
    let seg = text.find(SEG_TOKEN).map(|p| (p, Tag::Seg));
    let neg = text.find(NEG_TOKEN).map(|p| (p, Tag::Neg));
    match (seg, neg) {
        (Some(a), Some(b)) => Some(if a.0 < b.0 { a } else { b }),
        (a, b) => a.or(b),
    }
}

fn push_nonblank(out: &mut Vec<String>, span: &str) {
    if !span.trim().is_empty() {
        out.push(span.to_string());
    }
}

struct RawItem<'a> {
    name: &'a str,
    tag: Tag,
    seg_index: Option<usize>,
}

struct Scan<'a> {
    items: Vec<RawItem<'a>>,
    malformed: Vec<String>,
    trailing_garbage: Option<String>,
}

fn scan(text: &str) -> Scan<'_> {
    let mut items = Vec::new();
    let mut malformed = Vec::new();
    let mut trailing_garbage = None;
    let mut seg_count = 0usize;
    let mut rest = text;

    if normalize_name(text) == EMPTY_RESPONSE {
        rest = "";
    }

    while !rest.is_empty() {
        let Some((pos, tag)) = next_tag(rest) else {
            let tail = rest.trim();
            if !tail.is_empty() && tail != "." {
                trailing_garbage = Some(rest.to_string());
            }
            break;
        };
        let mut name = &rest[..pos];
        if let Some(comma) = name.rfind(',') {
            push_nonblank(&mut malformed, &name[..comma]);
            name = &name[comma + 1..];
        }
        let seg_index = (tag == Tag::Seg).then(|| {
            seg_count += 1;
            seg_count - 1
        });
        if normalize_name(name).is_empty() {
            malformed.push(format!("{name}{}", tag.token()));
        } else {
            items.push(RawItem {
                name,
                tag,
                seg_index,
            });
        }

        rest = rest[pos + tag.token().len()..].trim_start();
        match rest.chars().next() {
            Some(',') => rest = &rest[1..],
            Some('.') => {
                let tail = &rest[1..];
                if !tail.trim().is_empty() {
                    trailing_garbage = Some(tail.to_string());
                }
                break;
            }
            None => break,
            Some(_) => match rest.find(',') {
                Some(comma) => {
                    let skipped = &rest[..comma];
                    seg_count += skipped.matches(SEG_TOKEN).count();
                    malformed.push(skipped.to_string());
                    rest = &rest[comma + 1..];
                }
                None => {
                    trailing_garbage = Some(rest.to_string());
                    break;
                }
            },
        }
    }
    Scan {
        items,
        malformed,
        trailing_garbage,
    }
}

/// Parse `text` as an answer to a query listing `query_names`.
///
/// Names resolve against the query first (so an alias used in the query is
/// honoured), then against the full table.
pub fn parse_response<S: AsRef<str>>(
    text: &str,
    query_names: &[S],
    table: &CategoryTable,
) -> ParseReport {
    let query_norm: Vec<String> = query_names
        .iter()
        .map(|q| normalize_name(q.as_ref()))
        .collect();
    let query_ids: Vec<Option<ClassId>> = query_names
        .iter()
        .map(|q| table.resolve(q.as_ref()).map(|(id, _)| id))
        .collect();

    let scanned = scan(text);
    let mut report = ParseReport {
        malformed: scanned.malformed,
        trailing_garbage: scanned.trailing_garbage,
        ..Default::default()
    };

    let mut seen = HashSet::new();
    for raw in scanned.items {
        let norm = normalize_name(raw.name);
        let (resolved_id, query_index) = match query_norm.iter().position(|q| *q == norm) {
            Some(qi) => (query_ids[qi], Some(qi)),
            None => {
                let id = table.resolve(&norm).map(|(id, _)| id);
                let qi = id.and_then(|id| query_ids.iter().position(|q| *q == Some(id)));
                (id, qi)
            }
        };
        let item = ParsedItem {
            raw_name: raw.name.to_string(),
            resolved_id,
            tag: raw.tag,
            seg_index: raw.seg_index,
            query_index,
        };
        if !seen.insert(dedup_key(&item)) {
            report.duplicates.push(item.raw_name.clone());
        } else if query_index.is_none() {
            report.extra.push(item.raw_name.clone());
        }
        report.items.push(item);
    }

    let answered: HashSet<ClassId> = report.items.iter().filter_map(|i| i.resolved_id).collect();
    let mut missing_seen = HashSet::new();
    report.missing = query_ids
        .iter()
        .flatten()
        .filter(|id| !answered.contains(id) && missing_seen.insert(**id))
        .copied()
        .collect();

    let positions: Vec<usize> = report
        .first_occurrences()
        .filter_map(|i| i.query_index)
        .collect();
    report.order_matches_query = positions.windows(2).all(|w| w[0] < w[1]);
    report
}

/// True iff parsing the sample's response regenerates it exactly and the
/// `<SEG>` items resolve to the sample's mask targets.
pub fn roundtrip_check(sample: &TrainingSample, table: &CategoryTable) -> bool {
    let Some(query) = parse_query(&sample.query) else {
        return false;
    };
    let report = parse_response(&sample.response, &query.names, table);
    if report.trailing_garbage.is_some() || !report.malformed.is_empty() {
        return false;
    }
    let seg_ids: Option<Vec<ClassId>> = report
        .items
        .iter()
        .filter(|i| i.tag == Tag::Seg)
        .map(|i| i.resolved_id)
        .collect();
    report.regenerate() == sample.response && seg_ids.as_ref() == Some(&sample.seg_target_ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Category;
    use proptest::prelude::*;

    fn table() -> CategoryTable {
        CategoryTable::new(vec![
            Category {
                id: ClassId(0),
                name: "sky".into(),
                aliases: vec![],
            },
            Category {
                id: ClassId(1),
                name: "cat".into(),
                aliases: vec!["kitty".into()],
            },
            Category {
                id: ClassId(2),
                name: "road".into(),
                aliases: vec![],
            },
            Category {
                id: ClassId(7),
                name: "television".into(),
                aliases: vec!["tv monitor".into()],
            },
        ])
        .unwrap()
    }

    const Q: [&str; 3] = ["sky", "cat", "road"];

    #[test]
    fn canonical_response() {
        let r = parse_response("sky<SEG>,cat<NEG>,road<SEG>.", &Q, &table());
        assert_eq!(r.items.len(), 3);
        assert_eq!(r.items[0].seg_index, Some(0));
        assert_eq!(r.items[1].seg_index, None);
        assert_eq!(r.items[1].tag, Tag::Neg);
        assert_eq!(r.items[2].seg_index, Some(1));
        assert_eq!(r.items[2].resolved_id, Some(ClassId(2)));
        assert!(r.missing.is_empty() && r.extra.is_empty() && r.duplicates.is_empty());
        assert!(r.order_matches_query);
        assert_eq!(r.trailing_garbage, None);
        assert_eq!(r.regenerate(), "sky<SEG>,cat<NEG>,road<SEG>.");
    }

    #[test]
    fn incomplete_prediction_is_missing() {
        let r = parse_response("sky<SEG>.", &Q, &table());
        assert_eq!(r.missing, vec![ClassId(1), ClassId(2)]);
    }

    #[test]
    fn inconsistent_name_resolves_through_alias() {
        let r = parse_response("television<SEG>.", &["tv monitor"], &table());
        assert_eq!(r.items[0].resolved_id, Some(ClassId(7)));
        assert_eq!(r.items[0].query_index, Some(0));
        assert!(r.extra.is_empty() && r.missing.is_empty());
    }

    #[test]
    fn extra_and_duplicates() {
        let r = parse_response("sky<SEG>,unicorn<NEG>,sky<SEG>,road<NEG>.", &Q, &table());
        assert_eq!(r.extra, vec!["unicorn"]);
        assert_eq!(r.duplicates, vec!["sky"]);
        assert_eq!(r.missing, vec![ClassId(1)]);
        let segs: Vec<_> = r.items.iter().filter_map(|i| i.seg_index).collect();
        assert_eq!(segs, vec![0, 1]);
        let firsts: Vec<_> = r.first_occurrences().map(|i| i.raw_name.as_str()).collect();
        assert_eq!(firsts, vec!["sky", "unicorn", "road"]);
    }

    #[test]
    fn order_mismatch() {
        let r = parse_response("road<SEG>,sky<NEG>,cat<NEG>.", &Q, &table());
        assert!(!r.order_matches_query);
        let r = parse_response("sky<NEG>,road<SEG>.", &Q, &table());
        assert!(r.order_matches_query);
    }

    #[test]
    fn recovery_and_garbage() {
        let r = parse_response("sky<SEG>cat<SEG>,road<SEG>. thanks!", &Q, &table());
        assert_eq!(r.items.len(), 2);
        assert_eq!(r.malformed, vec!["cat<SEG>"]);
        assert_eq!(r.items[1].raw_name, "road");
        assert_eq!(r.items[1].seg_index, Some(2));
        assert_eq!(r.trailing_garbage.as_deref(), Some(" thanks!"));

        let r = parse_response("I see a sky<SEG> maybe", &Q, &table());
        assert_eq!(r.items[0].raw_name, "I see a sky");
        assert_eq!(r.items[0].resolved_id, None);
        assert_eq!(r.trailing_garbage.as_deref(), Some("maybe"));

        let r = parse_response("no idea", &Q, &table());
        assert!(r.items.is_empty());
        assert_eq!(r.trailing_garbage.as_deref(), Some("no idea"));

        let r = parse_response("<SEG>,sky<NEG>", &Q, &table());
        assert_eq!(r.items.len(), 1);
        assert_eq!(r.malformed, vec!["<SEG>"]);
    }

    #[test]
    fn sentinel_is_empty_report() {
        let r = parse_response(EMPTY_RESPONSE, &Q, &table());
        assert!(r.items.is_empty());
        assert_eq!(r.trailing_garbage, None);
        assert_eq!(r.missing.len(), 3);
        assert_eq!(r.regenerate(), EMPTY_RESPONSE);
    }

    #[test]
    fn roundtrip_examples() {
        let t = table();
        let sample = TrainingSample {
            image_id: "i".into(),
            query: "<IMAGE> Can you segment the sky, cat, road in this image?".into(),
            response: "sky<SEG>,cat<NEG>,road<SEG>.".into(),
            seg_target_ids: vec![ClassId(0), ClassId(2)],
        };
        assert!(roundtrip_check(&sample, &t));

        let mut broken = sample.clone();
        broken.response = "sky<SEG>cat<NEG>,road<SEG>.".into();
        assert!(!roundtrip_check(&broken, &t));

        let mut wrong_targets = sample.clone();
        wrong_targets.seg_target_ids = vec![ClassId(2), ClassId(0)];
        assert!(!roundtrip_check(&wrong_targets, &t));

        let empty = TrainingSample {
            response: EMPTY_RESPONSE.into(),
            seg_target_ids: vec![],
            ..sample.clone()
        };
        assert!(roundtrip_check(&empty, &t));
    }

    proptest! {
        #[test]
        fn parsing_is_total(text in "(\\PC|<SEG>|<NEG>|,|\\.){0,64}") {
            let r = parse_response(&text, &Q, &table());
            let answered: HashSet<_> = r.items.iter().filter_map(|i| i.resolved_id).collect();
            prop_assert!(r.missing.iter().all(|m| !answered.contains(m)));
            let segs: Vec<_> = r.items.iter().filter_map(|i| i.seg_index).collect();
            prop_assert!(segs.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(segs.last().is_none_or(|&s| s < text.matches(SEG_TOKEN).count()));
            for it in &r.items {
                prop_assert_eq!(it.seg_index.is_some(), it.tag == Tag::Seg);
            }
        }

        #[test]
        fn resolution_stable_under_renormalization(pad in "[ \\t]{0,3}", upper in any::<bool>()) {
            let t = table();
            let name = if upper { "TV   Monitor" } else { "tv monitor" };
            let raw = format!("{pad}{name}{pad}<SEG>.");
            let a = parse_response(&raw, &["sky"], &t);
            let renorm = format!("{}<SEG>.", normalize_name(&a.items[0].raw_name));
            let b = parse_response(&renorm, &["sky"], &t);
            prop_assert_eq!(a.items[0].resolved_id, Some(ClassId(7)));
            prop_assert_eq!(a.items[0].resolved_id, b.items[0].resolved_id);
        }
    }
}
