//! Mapping of free-text object tags onto hierarchy class names.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::hierarchy::{ClassHierarchy, ClassId};

/// Lowercases, trims and collapses internal whitespace runs to a single `_`.
pub fn normalize_tag(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for (i, word) in raw.split_whitespace().enumerate() {
        if i > 0 {
            out.push('_');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Unit-cost insert/delete/substitute edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if ca == cb {
                diag
            } else {
                1 + diag.min(above).min(row[j])
            };
            diag = above;
        }
    }
    row[b.len()]
}

/// Edit distance if it does not exceed `limit`, otherwise `None`.
fn bounded_levenshtein(a: &[char], b: &[char], limit: usize) -> Option<usize> {
    if a.len().abs_diff(b.len()) > limit {
        return None;
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        let mut best = row[0];
        for (j, &cb) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if ca == cb {
                diag
            } else {
                1 + diag.min(above).min(row[j])
            };
            diag = above;
            best = best.min(row[j + 1]);
        }
        if best > limit {
            return None;
        }
    }
    Some(row[b.len()]).filter(|&d| d <= limit)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TagMatch {
    pub class: ClassId,
    pub distance: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagMappingReport {
    /// Normalized tag -> best matching class.
    pub mapped: BTreeMap<String, TagMatch>,
    /// Normalized tags without a class within the distance bound.
    pub unmapped: BTreeSet<String>,
    pub max_distance_used: usize,
}

/// Resolves tags against a hierarchy. Exact matches go through the hierarchy's
/// name index; fuzzy matches scan names bucketed by character length.
pub struct TagMapper<'h> {
    hierarchy: &'h ClassHierarchy,
    max_distance: usize,
    by_length: HashMap<usize, Vec<(ClassId, Vec<char>)>>,
}

impl<'h> TagMapper<'h> {
    pub fn new(hierarchy: &'h ClassHierarchy, max_distance: usize) -> Self {
        let mut by_length: HashMap<usize, Vec<(ClassId, Vec<char>)>> = HashMap::new();
        if max_distance > 0 {
            for (id, name) in hierarchy.classes().zip(hierarchy.names()) {
                let chars: Vec<char> = name.chars().collect();
                by_length.entry(chars.len()).or_default().push((id, chars));
            }
        }
        TagMapper {
            hierarchy,
            max_distance,
            by_length,
        }
    }

    /// Best class for an already-normalized tag. Ties on distance go to the
    /// shorter class name, then the lexicographically smaller one.
    pub fn lookup(&self, normalized: &str) -> Option<TagMatch> {
        if normalized.is_empty() {
            return None;
        }
        if let Some(class) = self.hierarchy.class_id(normalized) {
            return Some(TagMatch { class, distance: 0 });
        }
        if self.max_distance == 0 {
            return None;
        }
        let tag: Vec<char> = normalized.chars().collect();
        let lo = tag.len().saturating_sub(self.max_distance);
        let hi = tag.len() + self.max_distance;
        let mut best: Option<(usize, usize, &str, ClassId)> = None;
        for len in lo..=hi {
            let Some(bucket) = self.by_length.get(&len) else {
                continue;
            };
            let limit = best.map_or(self.max_distance, |b| b.0);
            for (id, chars) in bucket {
                let Some(d) = bounded_levenshtein(&tag, chars, limit) else {
                    continue;
                };
                let key = (d, chars.len(), self.hierarchy.name(*id), *id);
                if best.is_none_or(|b| (key.0, key.1, key.2) < (b.0, b.1, b.2)) {
                    best = Some(key);
                }
            }
        }
        best.map(|(distance, _, _, class)| TagMatch { class, distance })
    }
}

/// Maps every tag to its closest class within `max_distance`.
pub fn map_tags<'a, I>(tags: I, hierarchy: &ClassHierarchy, max_distance: usize) -> TagMappingReport
where
    I: IntoIterator<Item = &'a str>,
{
    let mapper = TagMapper::new(hierarchy, max_distance);
    let normalized: BTreeSet<String> = tags.into_iter().map(normalize_tag).collect();
    let mut report = TagMappingReport {
        max_distance_used: max_distance,
        ..Default::default()
    };
    for tag in normalized {
        match mapper.lookup(&tag) {
            Some(m) => {
                report.mapped.insert(tag, m);
            }
            None => {
                report.unmapped.insert(tag);
            }
        }
    }
    report
}
