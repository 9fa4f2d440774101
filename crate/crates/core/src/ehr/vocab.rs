//! Code vocabularies and multi-hot encodings.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::fnv1a_strings;

/// The three code spaces a visit draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeKind {
    Diagnosis,
    Procedure,
    Medication,
}

impl CodeKind {
    pub fn label(self) -> &'static str {
        match self {
            CodeKind::Diagnosis => "diagnosis",
            CodeKind::Procedure => "procedure",
            CodeKind::Medication => "medication",
        }
    }
}

/// Dense, lexicographically ordered mapping between code strings and indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeVocabulary {
    pub kind: CodeKind,
    codes: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl CodeVocabulary {
    /// Build from any collection of observed codes; duplicates collapse and
    /// the order is lexicographic so repeated runs agree byte-for-byte.
    pub fn from_codes<I, S>(kind: CodeKind, observed: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = observed.into_iter().map(Into::into).collect();
        let codes: Vec<String> = set.into_iter().collect();
        let index = codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
        CodeVocabulary { kind, codes, index }
    }

    /// Rebuild the lookup map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.index.get(code).copied()
    }

    pub fn code(&self, index: usize) -> &str {
        &self.codes[index]
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn contains(&self, code: &str) -> bool {
        self.index.contains_key(code)
    }

    /// Stable content hash, persisted in checkpoints and manifests.
    pub fn content_hash(&self) -> u64 {
        fnv1a_strings(&self.codes)
    }

    fn require(&self, code: &str) -> Result<usize> {
        self.index_of(code).ok_or_else(|| {
            Error::Vocabulary(format!("unknown {} code {code:?}", self.kind.label()))
        })
    }

    /// Multi-hot vector over this vocabulary: `v[i] = 1` iff code `i` is in
    /// the set.
    pub fn encode_multihot<S: AsRef<str>>(&self, codes: &[S]) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.len()];
        for code in codes {
            v[self.require(code.as_ref())?] = 1.0;
        }
        Ok(v)
    }

    /// Indices of a code set, sorted ascending. Errors on unknown codes.
    pub fn encode_indices<S: AsRef<str>>(&self, codes: &[S]) -> Result<Vec<usize>> {
        let mut idx: Vec<usize> = codes
            .iter()
            .map(|c| self.require(c.as_ref()))
            .collect::<Result<_>>()?;
        idx.sort_unstable();
        idx.dedup();
        Ok(idx)
    }

    /// Inverse of [`Self::encode_multihot`].
    pub fn decode_multihot(&self, v: &[f64]) -> Vec<String> {
        v.iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(i, _)| self.codes[i].clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::IteratorRandom;

    #[test]
    fn order_is_lexicographic() {
        let v = CodeVocabulary::from_codes(CodeKind::Diagnosis, ["4019", "2749"]);
        assert_eq!(v.len(), 2);
        assert_eq!(v.index_of("2749"), Some(0));
        assert_eq!(v.index_of("4019"), Some(1));
        assert_eq!(v.code(0), "2749");
    }

    #[test]
    fn duplicate_ingestion_is_deterministic() {
        let a = CodeVocabulary::from_codes(CodeKind::Medication, ["b", "a", "a", "c"]);
        let b = CodeVocabulary::from_codes(CodeKind::Medication, ["c", "b", "a"]);
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn lookup_round_trips() {
        let v = CodeVocabulary::from_codes(CodeKind::Procedure, ["x1", "p9", "a0"]);
        for i in 0..v.len() {
            assert_eq!(v.index_of(v.code(i)), Some(i));
        }
    }

    #[test]
    fn multihot_empty_full_singleton() {
        let v = CodeVocabulary::from_codes(CodeKind::Medication, ["a", "b", "c", "d", "e"]);
        let empty: &[&str] = &[];
        assert_eq!(v.encode_multihot(empty).unwrap(), vec![0.0; 5]);
        assert_eq!(
            v.encode_multihot(&["a", "b", "c", "d", "e"]).unwrap(),
            vec![1.0; 5]
        );
        assert_eq!(
            v.encode_multihot(&["d"]).unwrap(),
            vec![0.0, 0.0, 0.0, 1.0, 0.0]
        );
    }

    #[test]
    fn multihot_sum_equals_set_size() {
        let v = CodeVocabulary::from_codes(CodeKind::Diagnosis, ["a", "b", "c"]);
        let enc = v.encode_multihot(&["a", "c"]).unwrap();
        assert_eq!(enc.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn unknown_code_is_vocabulary_error() {
        let v = CodeVocabulary::from_codes(CodeKind::Diagnosis, ["a"]);
        let err = v.encode_multihot(&["zz"]).unwrap_err();
        assert!(matches!(err, Error::Vocabulary(_)));
    }

    #[test]
    fn multihot_round_trip_random_sets() {
        let all: Vec<String> = (0..20).map(|i| format!("c{i:02}")).collect();
        let v = CodeVocabulary::from_codes(CodeKind::Medication, all.clone());
        let mut rng = crate::util::seeded_rng(11, 0);
        for _ in 0..50 {
            let k = rand::Rng::random_range(&mut rng, 0..=20usize);
            let mut subset: Vec<String> = all.iter().cloned().choose_multiple(&mut rng, k);
            subset.sort();
            let mut decoded = v.decode_multihot(&v.encode_multihot(&subset).unwrap());
            decoded.sort();
            assert_eq!(decoded, subset);
        }
    }
}
