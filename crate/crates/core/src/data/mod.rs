//! Temporal knowledge graph data: quadruple files, vocabularies, concept
//! labels and the out-of-graph meta-learning splits built from them.

mod concepts;
mod quads;
mod splits;

pub use concepts::{load_concepts, parse_concepts_str, ConceptId, ConceptMap, REGION_CONCEPT};
pub use quads::{
    parse_quadruples, parse_quadruples_str, parse_quadruples_with_vocab, write_quadruples,
    EntityId, ParsedQuadruples, Quadruple, RelationId, TimeId, Vocab, Vocabularies,
};
pub use splits::{
    build_ooc_splits, dataset_stats, entity_frequencies, largest_remainder, load_splits,
    save_splits, validate_splits, CheckResult, DatasetSplits, DatasetStats, MetaSplit,
    SplitConfig, SplitManifest, ValidationReport,
};
