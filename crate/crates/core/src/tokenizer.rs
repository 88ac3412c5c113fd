//! Dictionary-based character tokenizer with semantic compression.
//!
//! Frequent multi-character motifs (`PEPTIDE`, `me`, ...) are rewritten to
//! dedicated single-character markers before character-level tokenization, so
//! motif boundaries survive masking. Encoding maps each character of the
//! compressed text to an integer id; unknown characters fall back to `UNK`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenizerError {
    #[error("marker `{marker}` collides with corpus character")]
    MarkerCollision { marker: char },
    #[error("marker `{marker}` is not a single character or occurs inside a motif")]
    InvalidMarker { marker: String },
    #[error("duplicate marker `{marker}` in compression map")]
    DuplicateMarker { marker: char },
    #[error("token id {id} is a special token and cannot be decoded to text")]
    UndecodableToken { id: u32 },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid vocabulary file: {0}")]
    InvalidVocabularyFile(String),
    #[error("io error: {0}")]
    Io(String),
}

/// One compression rule: a motif string rewritten to a single marker char.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionEntry {
    pub motif: String,
    pub marker: char,
}

/// Ordered motif -> marker dictionary. Longest motifs are applied first;
/// insertion order breaks length ties.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionMap {
    entries: Vec<CompressionEntry>,
}

impl CompressionMap {
    pub fn new(entries: Vec<(impl Into<String>, char)>) -> Result<Self, TokenizerError> {
        let mut map = CompressionMap::default();
        for (motif, marker) in entries {
            map.push(motif.into(), marker)?;
        }
        Ok(map)
    }

    /// The two motifs documented for the reference dictionary.
    pub fn default_paper() -> Self {
        CompressionMap::new(vec![("PEPTIDE", '/'), ("me", '*')]).expect("static map is valid")
    }

    pub fn empty() -> Self {
        CompressionMap::default()
    }

    pub fn push(&mut self, motif: String, marker: char) -> Result<(), TokenizerError> {
        if motif.is_empty() {
            return Err(TokenizerError::InvalidMarker {
                marker: marker.to_string(),
            });
        }
        if self.entries.iter().any(|e| e.marker == marker) {
            return Err(TokenizerError::DuplicateMarker { marker });
        }
        // Markers may not occur inside any motif, existing or new.
        let collides = self.entries.iter().any(|e| e.motif.contains(marker))
            || self.entries.iter().any(|e| motif.contains(e.marker))
            || motif.contains(marker);
        if collides {
            return Err(TokenizerError::InvalidMarker {
                marker: marker.to_string(),
            });
        }
        self.entries.push(CompressionEntry { motif, marker });
        Ok(())
    }

    pub fn entries(&self) -> &[CompressionEntry] {
        &self.entries
    }

    pub fn markers(&self) -> impl Iterator<Item = char> + '_ {
        self.entries.iter().map(|e| e.marker)
    }

    /// Longest-motif-first, left-to-right rewrite of `text`.
    pub fn compress(&self, text: &str) -> String {
        if self.entries.is_empty() {
            return text.to_string();
        }
        // Stable application order: longer motifs win, ties by entry order.
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(self.entries[i].motif.len()));

        let mut out = String::with_capacity(text.len());
        let mut rest = text;
        'outer: while !rest.is_empty() {
            for &i in &order {
                let entry = &self.entries[i];
                if rest.starts_with(&entry.motif) {
                    out.push(entry.marker);
                    rest = &rest[entry.motif.len()..];
                    continue 'outer;
                }
            }
            let c = rest.chars().next().expect("non-empty");
            out.push(c);
            rest = &rest[c.len_utf8()..];
        }
        out
    }

    /// Inverse rewrite: markers expanded back to their motifs. Markers never
    /// nest (they cannot occur inside motifs), so a single pass suffices.
    pub fn expand(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        for c in text.chars() {
            match self.entries.iter().find(|e| e.marker == c) {
                Some(entry) => out.push_str(&entry.motif),
                None => out.push(c),
            }
        }
        out
    }
}

/// Ids of the three special tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub unk: u32,
    pub mask: u32,
    pub pad: u32,
}

/// Character-level vocabulary over the compressed alphabet plus specials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_of: BTreeMap<char, u32>,
    char_of: Vec<Option<char>>,
    pub special: SpecialTokens,
    compression: CompressionMap,
}

/// A tokenized sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// On-disk vocabulary layout.
#[derive(Debug, Serialize, Deserialize)]
struct VocabularyFile {
    markers: Vec<CompressionEntry>,
    tokens: Vec<char>,
    specials: SpecialTokens,
}

impl Vocabulary {
    /// Build a vocabulary from a corpus under a compression map: the character
    /// set of the compressed corpus, the markers, then `UNK`, `MASK`, `PAD`.
    /// Character ids follow sorted character order.
    pub fn build(
        corpus: &[impl AsRef<str>],
        compression: &CompressionMap,
    ) -> Result<Self, TokenizerError> {
        if corpus.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let markers: Vec<char> = compression.markers().collect();
        let mut chars: std::collections::BTreeSet<char> = markers.iter().copied().collect();
        for text in corpus {
            // Motifs never contain markers, so a marker char in the raw text
            // would survive compression and become ambiguous.
            if let Some(m) = markers.iter().find(|m| text.as_ref().contains(**m)) {
                return Err(TokenizerError::MarkerCollision { marker: *m });
            }
            chars.extend(compression.compress(text.as_ref()).chars());
        }
        Self::from_chars(chars.into_iter().collect(), compression.clone())
    }

    fn from_chars(chars: Vec<char>, compression: CompressionMap) -> Result<Self, TokenizerError> {
        let mut id_of = BTreeMap::new();
        let mut char_of: Vec<Option<char>> = Vec::with_capacity(chars.len() + 3);
        for (i, c) in chars.iter().enumerate() {
            if id_of.insert(*c, i as u32).is_some() {
                return Err(TokenizerError::InvalidVocabularyFile(format!(
                    "duplicate token `{c}`"
                )));
            }
            char_of.push(Some(*c));
        }
        let n = chars.len() as u32;
        let special = SpecialTokens {
            unk: n,
            mask: n + 1,
            pad: n + 2,
        };
        char_of.extend([None, None, None]);
        Ok(Vocabulary {
            id_of,
            char_of,
            special,
            compression,
        })
    }

    pub fn size(&self) -> usize {
        self.char_of.len()
    }

    pub fn compression(&self) -> &CompressionMap {
        &self.compression
    }

    pub fn id_of(&self, c: char) -> Option<u32> {
        self.id_of.get(&c).copied()
    }

    pub fn is_special(&self, id: u32) -> bool {
        id == self.special.unk || id == self.special.mask || id == self.special.pad
    }

    /// Ids of every non-special token, in id order.
    pub fn regular_ids(&self) -> Vec<u32> {
        (0..self.size() as u32)
            .filter(|id| !self.is_special(*id))
            .collect()
    }

    /// Compress then map each character to its id; unknown characters become
    /// `UNK`. Never lengthens: `encode(s).len() <= s.chars().count()`.
    pub fn encode(&self, input: &str) -> TokenSequence {
        let compressed = self.compression.compress(input);
        let ids = compressed
            .chars()
            .map(|c| self.id_of(c).unwrap_or(self.special.unk))
            .collect();
        TokenSequence { ids }
    }

    /// Inverse of `encode` for sequences free of special ids.
    pub fn decode(&self, tokens: &TokenSequence) -> Result<String, TokenizerError> {
        let mut compressed = String::with_capacity(tokens.len());
        for &id in &tokens.ids {
            if self.is_special(id) {
                return Err(TokenizerError::UndecodableToken { id });
            }
            match self.char_of.get(id as usize).copied().flatten() {
                Some(c) => compressed.push(c),
                None => return Err(TokenizerError::UndecodableToken { id }),
            }
        }
        Ok(self.compression.expand(&compressed))
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        let file = VocabularyFile {
            markers: self.compression.entries().to_vec(),
            tokens: self.char_of.iter().flatten().copied().collect(),
            specials: self.special,
        };
        let json =
            serde_json::to_string_pretty(&file).map_err(|e| TokenizerError::Io(e.to_string()))?;
        fs::write(path, json).map_err(|e| TokenizerError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        let text = fs::read_to_string(path).map_err(|e| TokenizerError::Io(e.to_string()))?;
        let file: VocabularyFile = serde_json::from_str(&text)
            .map_err(|e| TokenizerError::InvalidVocabularyFile(e.to_string()))?;
        let mut compression = CompressionMap::empty();
        for entry in file.markers {
            compression.push(entry.motif, entry.marker).map_err(|e| {
                TokenizerError::InvalidVocabularyFile(format!("bad compression map: {e}"))
            })?;
        }
        let vocab = Self::from_chars(file.tokens, compression)?;
        if vocab.special != file.specials {
            return Err(TokenizerError::InvalidVocabularyFile(
                "special ids inconsistent with token count".to_string(),
            ));
        }
        Ok(vocab)
    }
}
