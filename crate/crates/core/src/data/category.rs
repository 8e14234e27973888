use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A semantic class identifier as stored in label maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u16);

impl ClassId {
    /// Label-map value for pixels excluded from evaluation.
    pub const IGNORE: ClassId = ClassId(u16::MAX);

    pub fn is_ignore(self) -> bool {
        self == Self::IGNORE
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u16> for ClassId {
    fn from(v: u16) -> Self {
        ClassId(v)
    }
}

/// Characters that carry meaning in the query/response grammar and therefore
/// may not appear inside a category name or alias.
pub const RESERVED_NAME_CHARS: [char; 3] = [',', '<', '>'];

/// Lowercase, trim, and collapse internal whitespace runs to a single space.
pub fn normalize_name(raw: &str) -> String {
    raw.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: ClassId,
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchKind {
    Exact,
    Alias,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TableError {
    #[error("class id {0} is reserved for ignore pixels")]
    ReservedId(ClassId),
    #[error("class id {0} appears more than once")]
    DuplicateId(ClassId),
    #[error("class {id} has an empty name")]
    EmptyName { id: ClassId },
    #[error("classes {first} and {second} share the normalized name {name:?}")]
    DuplicateName {
        name: String,
        first: ClassId,
        second: ClassId,
    },
    #[error("alias {alias:?} maps to both class {first} and class {second}")]
    AmbiguousAlias {
        alias: String,
        first: ClassId,
        second: ClassId,
    },
    #[error("name {name:?} of class {id} contains a reserved character (one of `,<>`)")]
    ReservedChar { id: ClassId, name: String },
}

/// Ordered registry of classes. Entry order is the dataset canonical order.
#[derive(Debug, Clone)]
pub struct CategoryTable {
    entries: Vec<Category>,
    by_id: HashMap<ClassId, usize>,
    by_name: HashMap<String, usize>,
    by_alias: HashMap<String, usize>,
}

impl CategoryTable {
    pub fn new(entries: Vec<Category>) -> Result<Self, TableError> {
        let mut by_id = HashMap::with_capacity(entries.len());
        let mut by_name = HashMap::with_capacity(entries.len());
        for (idx, cat) in entries.iter().enumerate() {
            if cat.id.is_ignore() {
                return Err(TableError::ReservedId(cat.id));
            }
            if by_id.insert(cat.id, idx).is_some() {
                return Err(TableError::DuplicateId(cat.id));
            }
            for name in std::iter::once(&cat.name).chain(&cat.aliases) {
                if name.contains(RESERVED_NAME_CHARS) {
                    return Err(TableError::ReservedChar {
                        id: cat.id,
                        name: name.clone(),
                    });
                }
            }
            let norm = normalize_name(&cat.name);
            if norm.is_empty() {
                return Err(TableError::EmptyName { id: cat.id });
            }
            if let Some(prev) = by_name.insert(norm.clone(), idx) {
                return Err(TableError::DuplicateName {
                    name: norm,
                    first: entries[prev].id,
                    second: cat.id,
                });
            }
        }

        let mut by_alias: HashMap<String, usize> = HashMap::new();
        for (idx, cat) in entries.iter().enumerate() {
            for alias in &cat.aliases {
                let norm = normalize_name(alias);
                // canonical names always win over aliases, so a shadowed alias is inert
                if norm.is_empty() || by_name.contains_key(&norm) {
                    continue;
                }
                match by_alias.get(&norm) {
                    Some(&prev) if prev != idx => {
                        return Err(TableError::AmbiguousAlias {
                            alias: norm,
                            first: entries[prev].id,
                            second: cat.id,
                        })
                    }
                    _ => {
                        by_alias.insert(norm, idx);
                    }
                }
            }
        }

        Ok(Self {
            entries,
            by_id,
            by_name,
            by_alias,
        })
    }

    pub fn entries(&self) -> &[Category] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All ids in canonical order.
    pub fn ids(&self) -> Vec<ClassId> {
        self.entries.iter().map(|c| c.id).collect()
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.by_id.contains_key(&id)
    }

    pub fn get(&self, id: ClassId) -> Option<&Category> {
        self.by_id.get(&id).map(|&i| &self.entries[i])
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.get(id).map(|c| c.name.as_str())
    }

    /// Position of `id` in canonical order.
    pub fn position(&self, id: ClassId) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    /// Exact canonical match first, alias second. No fuzzy matching.
    pub fn resolve(&self, raw: &str) -> Option<(ClassId, MatchKind)> {
        let norm = normalize_name(raw);
        if norm.is_empty() {
            return None;
        }
        if let Some(&i) = self.by_name.get(&norm) {
            return Some((self.entries[i].id, MatchKind::Exact));
        }
        self.by_alias
            .get(&norm)
            .map(|&i| (self.entries[i].id, MatchKind::Alias))
    }
}
