//! Word vocabulary, POS tag set and metric tokenization.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Lowercases, drops punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| !c.is_ascii_punctuation())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Ordered token list; the line number of a token is its index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens followed by `words` (duplicates rejected).
    pub fn with_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|w| w.as_ref().to_string()));
        Self::from_tokens(tokens.collect())
    }

    /// Full token list, reserved tokens included at indices 0..4.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::Invalid(format!("vocabulary index {i} must be `{r}`")));
            }
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Invalid(format!("invalid vocabulary token {t:?} at {i}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Token ids of `text`; out-of-vocabulary words map to UNK.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|w| self.id(w)).collect()
    }

    /// Words up to the first EOS, control tokens skipped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == EOS {
                break;
            }
            if id == PAD || id == BOS {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(self.token(id).unwrap_or(RESERVED[UNK]));
        }
        out
    }
}

/// Universal POS tags plus sequence control symbols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PosTag {
    Pad,
    Bos,
    Eos,
    Noun,
    Verb,
    Det,
    Adj,
    Adv,
    Adp,
    Pron,
    Conj,
    Num,
    Prt,
    X,
    Punct,
}

impl PosTag {
    pub const ALL: [PosTag; 15] = [
        PosTag::Pad,
        PosTag::Bos,
        PosTag::Eos,
        PosTag::Noun,
        PosTag::Verb,
        PosTag::Det,
        PosTag::Adj,
        PosTag::Adv,
        PosTag::Adp,
        PosTag::Pron,
        PosTag::Conj,
        PosTag::Num,
        PosTag::Prt,
        PosTag::X,
        PosTag::Punct,
    ];

    pub const COUNT: usize = 15;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Pad => "PAD",
            PosTag::Bos => "BOS",
            PosTag::Eos => "EOS",
            PosTag::Noun => "NOUN",
            PosTag::Verb => "VERB",
            PosTag::Det => "DET",
            PosTag::Adj => "ADJ",
            PosTag::Adv => "ADV",
            PosTag::Adp => "ADP",
            PosTag::Pron => "PRON",
            PosTag::Conj => "CONJ",
            PosTag::Num => "NUM",
            PosTag::Prt => "PRT",
            PosTag::X => "X",
            PosTag::Punct => "PUNCT",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|t| t.as_str() == s)
    }

    pub fn is_control(self) -> bool {
        matches!(self, PosTag::Pad | PosTag::Bos | PosTag::Eos)
    }
}

impl core::fmt::Display for PosTag {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn tokenize_strips_punctuation_and_case() {
        assert_eq!(tokenize("A Man, is playing!"), vec!["a", "man", "is", "playing"]);
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn encode_decode_roundtrip_and_unk() {
        let v = Vocabulary::with_words(["a", "man", "runs"]).unwrap();
        let ids = v.encode("a man runs");
        assert_eq!(v.decode(&ids), "a man runs");
        assert_eq!(v.encode("a dog"), vec![v.id("a"), UNK]);
        let mut with_eos = ids.clone();
        with_eos.push(EOS);
        with_eos.push(v.id("man"));
        assert_eq!(v.decode(&with_eos), "a man runs");
    }

    #[test]
    fn reserved_positions_and_duplicates_enforced() {
        assert!(Vocabulary::with_words(["a", "a"]).is_err());
        let bad = vec!["<unk>".to_string(), "<pad>".to_string(), "<bos>".to_string(), "<eos>".to_string()];
        assert!(Vocabulary::from_tokens(bad).is_err());
    }

    #[test]
    fn pos_tags_roundtrip() {
        for t in PosTag::ALL {
            assert_eq!(PosTag::parse(t.as_str()), Some(t));
            assert_eq!(PosTag::from_index(t.index()), Some(t));
        }
        assert_eq!(PosTag::COUNT, PosTag::ALL.len());
    }
}
