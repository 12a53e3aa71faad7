//! Images as individuals, linked to the hierarchy through their annotated objects.
//!
//! An image is an instance of atomic class `C` iff one of its annotated
//! objects maps to a class subsumed by `C`. A conjunction holds iff every
//! conjunct holds. No roles, negation or disjunction are modelled.

use std::collections::BTreeSet;
use std::fmt;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{ClassHierarchy, ClassId};
use crate::tag_mapping::{normalize_tag, TagMapper};

/// Default upper bound on the number of conjuncts in a class expression.
pub const DEFAULT_MAX_CONJUNCTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ImageId(pub u32);

impl ImageId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One image and its raw object tags, as read from an annotations file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageAnnotation {
    pub image: String,
    pub tags: Vec<String>,
}

impl ImageAnnotation {
    pub fn new(image: impl Into<String>, tags: impl IntoIterator<Item = impl Into<String>>) -> Self {
        ImageAnnotation {
            image: image.into(),
            tags: tags.into_iter().map(Into::into).collect(),
        }
    }
}

/// Atomic class or conjunction of classes. Conjuncts are kept sorted by id
/// and free of duplicates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassExpression {
    conjuncts: Vec<ClassId>,
}

impl ClassExpression {
    pub fn new(mut conjuncts: Vec<ClassId>) -> Result<Self> {
        conjuncts.sort_unstable();
        conjuncts.dedup();
        if conjuncts.is_empty() {
            return Err(Error::InvalidExpression("no conjuncts".into()));
        }
        Ok(ClassExpression { conjuncts })
    }

    pub fn atom(class: ClassId) -> Self {
        ClassExpression { conjuncts: vec![class] }
    }

    pub fn conjuncts(&self) -> &[ClassId] {
        &self.conjuncts
    }

    pub fn len(&self) -> usize {
        self.conjuncts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conjuncts.is_empty()
    }

    pub fn is_atomic(&self) -> bool {
        self.conjuncts.len() == 1
    }

    /// Conjunct names in lexicographic order.
    pub fn names<'h>(&self, h: &'h ClassHierarchy) -> Vec<&'h str> {
        let mut names: Vec<&str> = self.conjuncts.iter().map(|&c| h.name(c)).collect();
        names.sort_unstable();
        names
    }

    /// Canonical label text, e.g. `chain, footboard`.
    pub fn label(&self, h: &ClassHierarchy) -> String {
        self.names(h).join(", ")
    }

    /// Parses a label such as `footboard, chain` or `footboard ⊓ chain`.
    pub fn parse(label: &str, h: &ClassHierarchy) -> Result<Self> {
        let ids = split_label(label)
            .into_iter()
            .map(|name| h.class_id(&name).ok_or(Error::UnknownClass(name)))
            .collect::<Result<Vec<_>>>()?;
        ClassExpression::new(ids)
    }

    pub fn validate(&self, h: &ClassHierarchy, max_conjuncts: usize) -> Result<()> {
        if self.conjuncts.len() > max_conjuncts {
            return Err(Error::InvalidExpression(format!(
                "{} conjuncts exceed the limit of {max_conjuncts}",
                self.conjuncts.len()
            )));
        }
        for &c in &self.conjuncts {
            h.try_name(c)?;
        }
        Ok(())
    }
}

impl fmt::Display for ClassExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.conjuncts.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(" ⊓ "))
    }
}

/// Splits a label into normalized conjunct names.
pub fn split_label(label: &str) -> Vec<String> {
    label
        .split([',', '⊓', '&'])
        .map(normalize_tag)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Canonical form of a label string: normalized conjuncts, sorted, deduplicated,
/// joined by `, `. Used to key image-set manifests and to count unique concepts.
pub fn canonical_label(label: &str) -> String {
    let parts: BTreeSet<String> = split_label(label).into_iter().collect();
    parts.into_iter().collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MappingStats {
    pub distinct_tags: usize,
    pub mapped_tags: usize,
    pub unmapped_tags: usize,
    pub images_without_assertions: usize,
    pub max_distance_used: usize,
}

#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    hierarchy: ClassHierarchy,
    images: IndexSet<String>,
    /// Mapped classes of each image's annotated objects.
    assertions: Vec<Vec<ClassId>>,
    /// Reflexive-transitive closure of `assertions`: every atomic class the
    /// image is an instance of.
    types: Vec<Vec<ClassId>>,
    unmapped: Vec<Vec<String>>,
    stats: MappingStats,
}

/// Links annotated images to the hierarchy.
pub fn build_kb(
    hierarchy: ClassHierarchy,
    annotations: &[ImageAnnotation],
    max_distance: usize,
) -> Result<KnowledgeBase> {
    let mut images = IndexSet::with_capacity(annotations.len());
    for a in annotations {
        if !images.insert(a.image.clone()) {
            return Err(Error::DuplicateImage(a.image.clone()));
        }
    }
    let mapper = TagMapper::new(&hierarchy, max_distance);
    let mut cache: std::collections::HashMap<String, Option<ClassId>> = Default::default();
    let mut assertions = Vec::with_capacity(annotations.len());
    let mut unmapped = Vec::with_capacity(annotations.len());
    for a in annotations {
        let mut classes = Vec::new();
        let mut missing = Vec::new();
        for raw in &a.tags {
            let tag = normalize_tag(raw);
            let hit = *cache
                .entry(tag.clone())
                .or_insert_with(|| mapper.lookup(&tag).map(|m| m.class));
            match hit {
                Some(c) => classes.push(c),
                None => missing.push(tag),
            }
        }
        classes.sort_unstable();
        classes.dedup();
        missing.sort_unstable();
        missing.dedup();
        assertions.push(classes);
        unmapped.push(missing);
    }
    drop(mapper);
    let types = assertions
        .iter()
        .map(|asserted| {
            let mut out = Vec::new();
            for &c in asserted {
                hierarchy.collect_ancestors(c, &mut out);
            }
            out.sort_unstable();
            out.dedup();
            out
        })
        .collect();
    let mapped_tags = cache.values().filter(|v| v.is_some()).count();
    let stats = MappingStats {
        distinct_tags: cache.len(),
        mapped_tags,
        unmapped_tags: cache.len() - mapped_tags,
        images_without_assertions: assertions.iter().filter(|a| a.is_empty()).count(),
        max_distance_used: max_distance,
    };
    Ok(KnowledgeBase {
        hierarchy,
        images,
        assertions,
        types,
        unmapped,
        stats,
    })
}

impl KnowledgeBase {
    pub fn hierarchy(&self) -> &ClassHierarchy {
        &self.hierarchy
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn image_id(&self, name: &str) -> Option<ImageId> {
        self.images.get_index_of(name).map(|i| ImageId(i as u32))
    }

    pub fn image_ids(&self) -> impl ExactSizeIterator<Item = ImageId> {
        (0..self.images.len() as u32).map(ImageId)
    }

    pub fn image_name(&self, id: ImageId) -> &str {
        &self.images[id.index()]
    }

    pub fn stats(&self) -> &MappingStats {
        &self.stats
    }

    fn check_image(&self, id: ImageId) -> Result<()> {
        if id.index() < self.images.len() {
            Ok(())
        } else {
            Err(Error::UnknownImageId(id.0))
        }
    }

    pub fn assertions(&self, id: ImageId) -> Result<&[ClassId]> {
        self.check_image(id)?;
        Ok(&self.assertions[id.index()])
    }

    pub fn unmapped_tags(&self, id: ImageId) -> Result<&[String]> {
        self.check_image(id)?;
        Ok(&self.unmapped[id.index()])
    }

    /// Every atomic class the image is an instance of, sorted by id.
    pub fn types(&self, id: ImageId) -> &[ClassId] {
        &self.types[id.index()]
    }

    /// Is `image` an instance of `expr`?
    pub fn satisfies(&self, image: ImageId, expr: &ClassExpression) -> Result<bool> {
        self.check_image(image)?;
        for &c in expr.conjuncts() {
            self.hierarchy.try_name(c)?;
        }
        let asserted = &self.assertions[image.index()];
        Ok(expr
            .conjuncts()
            .iter()
            .all(|&c| asserted.iter().any(|&d| self.hierarchy.subsumes_unchecked(c, d))))
    }

    /// Same answer as [`satisfies`](Self::satisfies), read off the precomputed
    /// type closure.
    #[inline]
    pub(crate) fn has_types(&self, image: ImageId, conjuncts: &[ClassId]) -> bool {
        let types = &self.types[image.index()];
        conjuncts.iter().all(|c| types.binary_search(c).is_ok())
    }
}
