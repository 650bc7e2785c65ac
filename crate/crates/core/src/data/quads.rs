use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FiltError, Result};

pub type EntityId = usize;
pub type RelationId = usize;
pub type TimeId = usize;

/// One timestamped fact `(subject, relation, object, timestamp)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Quadruple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub timestamp: TimeId,
}

impl Quadruple {
    pub const fn new(
        subject: EntityId,
        relation: RelationId,
        object: EntityId,
        timestamp: TimeId,
    ) -> Self {
        Self {
            subject,
            relation,
            object,
            timestamp,
        }
    }

    pub fn touches(&self, entity: EntityId) -> bool {
        self.subject == entity || self.object == entity
    }
}

/// Bidirectional token <-> dense id map.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::new();
        for tok in tokens {
            let tok = tok.into();
            if vocab.index.contains_key(&tok) {
                return Err(FiltError::InvalidArgument(format!(
                    "duplicate vocabulary token `{tok}`"
                )));
            }
            vocab.get_or_insert(&tok);
        }
        Ok(vocab)
    }

    pub fn get_or_insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocab::from_tokens(tokens).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub entities: Vocab,
    pub relations: Vocab,
    pub times: Vocab,
}

#[derive(Clone, Debug)]
pub struct ParsedQuadruples {
    pub quads: Vec<Quadruple>,
    pub vocab: Vocabularies,
}

fn split_line<'a>(line: &'a str, source_name: &str, lineno: usize) -> Result<[&'a str; 4]> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(FiltError::Parse {
            source_name: source_name.to_string(),
            line: lineno,
            msg: format!("expected 4 tab-separated fields, found {}", fields.len()),
        });
    }
    for f in &fields {
        if f.trim().is_empty() {
            return Err(FiltError::Parse {
                source_name: source_name.to_string(),
                line: lineno,
                msg: "empty field".to_string(),
            });
        }
    }
    Ok([
        fields[0].trim(),
        fields[1].trim(),
        fields[2].trim(),
        fields[3].trim(),
    ])
}

/// Order time tokens chronologically: numerically when every token is an
/// integer, lexicographically otherwise (ISO dates sort correctly that way).
fn chronological(mut tokens: Vec<String>) -> Vec<String> {
    let numeric: Option<Vec<i64>> = tokens.iter().map(|t| t.parse::<i64>().ok()).collect();
    match numeric {
        Some(_) => tokens.sort_by_key(|t| t.parse::<i64>().unwrap_or_default()),
        None => tokens.sort(),
    }
    tokens
}

/// Parse tab-separated quadruples from text. Entity and relation ids follow
/// first appearance; time ids follow chronological order of the time tokens.
pub fn parse_quadruples_str(text: &str, source_name: &str) -> Result<ParsedQuadruples> {
    let mut entities = Vocab::new();
    let mut relations = Vocab::new();
    let mut raw_times = Vocab::new();
    let mut raw = Vec::new();

    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let [s, r, o, t] = split_line(line, source_name, i + 1)?;
        let s = entities.get_or_insert(s);
        let r = relations.get_or_insert(r);
        let o = entities.get_or_insert(o);
        let t = raw_times.get_or_insert(t);
        raw.push(Quadruple::new(s, r, o, t));
    }
    if raw.is_empty() {
        return Err(FiltError::EmptyInput(source_name.to_string()));
    }

    let times = Vocab::from_tokens(chronological(raw_times.tokens().to_vec()))?;
    let remap: Vec<usize> = raw_times
        .tokens()
        .iter()
        .map(|t| times.id(t).expect("same token set"))
        .collect();
    let quads = raw
        .into_iter()
        .map(|q| Quadruple {
            timestamp: remap[q.timestamp],
            ..q
        })
        .collect();

    Ok(ParsedQuadruples {
        quads,
        vocab: Vocabularies {
            entities,
            relations,
            times,
        },
    })
}

pub fn parse_quadruples(path: impl AsRef<Path>) -> Result<ParsedQuadruples> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| FiltError::io(path, e))?;
    parse_quadruples_str(&text, &path.display().to_string())
}

/// Parse a quadruple file against fixed vocabularies; unknown tokens are errors.
/// An empty file yields an empty list (split files may legitimately be empty).
pub fn parse_quadruples_with_vocab(
    path: impl AsRef<Path>,
    vocab: &Vocabularies,
) -> Result<Vec<Quadruple>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| FiltError::io(path, e))?;
    let mut quads = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_line(line, &name, i + 1)?;
        let lookup = |v: &Vocab, tok: &str, what: &str| {
            v.id(tok).ok_or_else(|| FiltError::Parse {
                source_name: name.clone(),
                line: i + 1,
                msg: format!("unknown {what} `{tok}`"),
            })
        };
        quads.push(Quadruple::new(
            lookup(&vocab.entities, fields[0], "entity")?,
            lookup(&vocab.relations, fields[1], "relation")?,
            lookup(&vocab.entities, fields[2], "entity")?,
            lookup(&vocab.times, fields[3], "timestamp")?,
        ));
    }
    Ok(quads)
}

/// Write quadruples back out as tokens, one tab-separated fact per line.
pub fn write_quadruples(
    path: impl AsRef<Path>,
    quads: &[Quadruple],
    vocab: &Vocabularies,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for q in quads {
        let tok = |v: &Vocab, id: usize| v.token(id).map(str::to_string).unwrap_or(id.to_string());
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            tok(&vocab.entities, q.subject),
            tok(&vocab.relations, q.relation),
            tok(&vocab.entities, q.object),
            tok(&vocab.times, q.timestamp)
        );
    }
    fs::write(path, out).map_err(|e| FiltError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_line_gives_minimal_vocab() {
        let p = parse_quadruples_str("A\tr1\tB\t0\n", "t").unwrap();
        assert_eq!(p.quads, vec![Quadruple::new(0, 0, 1, 0)]);
        assert_eq!(p.vocab.entities.len(), 2);
        assert_eq!(p.vocab.relations.len(), 1);
        assert_eq!(p.vocab.times.len(), 1);
    }

    #[test]
    fn duplicates_are_preserved() {
        let p = parse_quadruples_str("A\tr\tB\t1\nA\tr\tB\t1\nB\tr\tC\t2\n", "t").unwrap();
        assert_eq!(p.quads.len(), 3);
        assert_eq!(p.quads[0], p.quads[1]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_quadruples_str("A\tr\tB\t1\nA\tr\tB\n", "f.txt").unwrap_err();
        match err {
            FiltError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(
            parse_quadruples_str("\n\n", "e"),
            Err(FiltError::EmptyInput(_))
        ));
    }

    #[test]
    fn time_ids_are_chronological() {
        let p = parse_quadruples_str("A\tr\tB\t10\nA\tr\tB\t2\nA\tr\tB\t7\n", "t").unwrap();
        let ts: Vec<_> = p.quads.iter().map(|q| q.timestamp).collect();
        assert_eq!(ts, vec![2, 0, 1]);
        assert_eq!(p.vocab.times.tokens(), &["2", "7", "10"]);

        let p = parse_quadruples_str("A\tr\tB\t2014-03-01\nA\tr\tB\t2014-01-09\n", "t").unwrap();
        assert_eq!(p.quads[0].timestamp, 1);
    }

    #[test]
    fn entity_ids_follow_first_appearance() {
        let p = parse_quadruples_str("Z\tr\tY\t0\nX\tq\tZ\t0\n", "t").unwrap();
        assert_eq!(p.vocab.entities.tokens(), &["Z", "Y", "X"]);
        assert_eq!(p.vocab.relations.tokens(), &["r", "q"]);
    }
}
