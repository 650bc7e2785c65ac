use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::quads::{EntityId, Vocab};
use crate::error::{FiltError, Result};

pub type ConceptId = usize;

/// Fallback concept for entities without any sector label.
pub const REGION_CONCEPT: &str = "Region";

/// Entity -> concept assignment. Every entity owns a non-empty, sorted set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptMap {
    concepts_of: Vec<Vec<ConceptId>>,
    pub concept_vocab: Vocab,
    pub region_concept: ConceptId,
}

impl ConceptMap {
    /// Build from explicit per-entity concept lists. Empty lists receive the
    /// region concept, which is always allocated.
    pub fn from_assignments(mut concept_vocab: Vocab, lists: Vec<Vec<ConceptId>>) -> Self {
        let region_concept = concept_vocab.get_or_insert(REGION_CONCEPT);
        let concepts_of = lists
            .into_iter()
            .map(|l| {
                let set: BTreeSet<_> = l.into_iter().collect();
                if set.is_empty() {
                    vec![region_concept]
                } else {
                    set.into_iter().collect()
                }
            })
            .collect();
        Self {
            concepts_of,
            concept_vocab,
            region_concept,
        }
    }

    /// Every entity labelled with the region concept only.
    pub fn region_only(num_entities: usize) -> Self {
        Self::from_assignments(Vocab::new(), vec![Vec::new(); num_entities])
    }

    pub fn concepts_of(&self, entity: EntityId) -> &[ConceptId] {
        self.concepts_of.get(entity).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn num_entities(&self) -> usize {
        self.concepts_of.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.concept_vocab.len()
    }

    /// Entities associated with each concept, optionally restricted by a filter.
    pub fn members(&self, keep: impl Fn(EntityId) -> bool) -> Vec<Vec<EntityId>> {
        let mut out = vec![Vec::new(); self.num_concepts()];
        for (e, cs) in self.concepts_of.iter().enumerate() {
            if !keep(e) {
                continue;
            }
            for &c in cs {
                out[c].push(e);
            }
        }
        out
    }
}

/// Parse `entity<TAB>c1,c2,...` lines. Entities missing from the text or with
/// an empty list fall back to the region concept.
pub fn parse_concepts_str(text: &str, source_name: &str, entities: &Vocab) -> Result<ConceptMap> {
    let mut vocab = Vocab::new();
    let mut lists = vec![Vec::new(); entities.len()];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (ent, rest) = match line.split_once('\t') {
            Some((e, r)) => (e.trim(), r),
            None => (line.trim(), ""),
        };
        let e = entities.id(ent).ok_or_else(|| FiltError::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            msg: format!("entity `{ent}` is not in the entity vocabulary"),
        })?;
        for c in rest.split(',').map(str::trim).filter(|c| !c.is_empty()) {
            lists[e].push(vocab.get_or_insert(c));
        }
    }
    Ok(ConceptMap::from_assignments(vocab, lists))
}

pub fn load_concepts(path: impl AsRef<Path>, entities: &Vocab) -> Result<ConceptMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| FiltError::io(path, e))?;
    parse_concepts_str(&text, &path.display().to_string(), entities)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ents() -> Vocab {
        Vocab::from_tokens(["A", "B", "C"]).unwrap()
    }

    #[test]
    fn direct_mapping_and_region_fallback() {
        let m = parse_concepts_str("A\tGovernment,Elite\nB\t\n", "c", &ents()).unwrap();
        let names = |e| {
            m.concepts_of(e)
                .iter()
                .map(|&c| m.concept_vocab.token(c).unwrap().to_string())
                .collect::<Vec<_>>()
        };
        assert_eq!(names(0), vec!["Government", "Elite"]);
        assert_eq!(names(1), vec![REGION_CONCEPT]);
        // C is absent from the file entirely
        assert_eq!(names(2), vec![REGION_CONCEPT]);
    }

    #[test]
    fn region_is_allocated_even_when_unused() {
        let m = parse_concepts_str("A\tX\nB\tY\nC\tX,Y\n", "c", &ents()).unwrap();
        assert_eq!(m.num_concepts(), 3);
        assert_eq!(m.concept_vocab.token(m.region_concept), Some(REGION_CONCEPT));
        assert!((0..3).all(|e| !m.concepts_of(e).contains(&m.region_concept)));
    }

    #[test]
    fn unknown_entity_is_reported_with_line() {
        match parse_concepts_str("A\tX\nQ\tY\n", "c", &ents()) {
            Err(FiltError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn explicit_region_token_is_reused() {
        let m = parse_concepts_str("A\tRegion\n", "c", &ents()).unwrap();
        assert_eq!(m.num_concepts(), 1);
        assert_eq!(m.concepts_of(0), &[m.region_concept]);
    }
}
