//! Word-plus-punctuation tokenizer with a corpus-built vocabulary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Splits text into surface tokens and joins them back.
pub trait TextTokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;
    fn detokenize(&self, tokens: &[String]) -> String;
}

/// Whitespace split, then every non-alphanumeric character becomes its own
/// token. Case is preserved.
#[derive(Clone, Copy, Debug, Default)]
pub struct WordPunct;

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

impl TextTokenizer for WordPunct {
    fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            let mut word = String::new();
            for c in chunk.chars() {
                if is_word_char(c) {
                    word.push(c);
                } else {
                    if !word.is_empty() {
                        out.push(std::mem::take(&mut word));
                    }
                    out.push(c.to_string());
                }
            }
            if !word.is_empty() {
                out.push(word);
            }
        }
        out
    }

    fn detokenize(&self, tokens: &[String]) -> String {
        let mut out = String::new();
        let mut glue_next = true;
        for tok in tokens {
            let no_space_before = matches!(
                tok.as_str(),
                "." | "," | ":" | ";" | "!" | "?" | ")" | "]" | "}" | "'" | "%"
            );
            if !out.is_empty() && !glue_next && !no_space_before {
                out.push(' ');
            }
            out.push_str(tok);
            glue_next = matches!(tok.as_str(), "(" | "[" | "{" | "'" | "\\" | "$");
        }
        out
    }
}

/// Token count of `text` under the shared tokenizer.
pub fn token_count(text: &str) -> usize {
    WordPunct.tokenize(text).len()
}

/// Token/id mapping. Ids 0..4 are PAD, BOS, EOS, UNK.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Vocabulary over every token in `texts`, in first-occurrence order.
    pub fn build<'a>(tokenizer: &dyn TextTokenizer, texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        for text in texts {
            for tok in tokenizer.tokenize(text) {
                if !index.contains_key(&tok) {
                    index.insert(tok.clone(), tokens.len());
                    tokens.push(tok);
                }
            }
        }
        Self { tokens, index }
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut v = Self {
            tokens,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Rebuilds the lookup table after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(SPECIALS[UNK], String::as_str)
    }

    pub fn encode_tokens(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn encode(&self, tokenizer: &dyn TextTokenizer, text: &str) -> Vec<usize> {
        self.encode_tokens(&tokenizer.tokenize(text))
    }

    /// Decodes ids, skipping special tokens.
    pub fn decode(&self, tokenizer: &dyn TextTokenizer, ids: &[usize]) -> String {
        let toks: Vec<String> = ids
            .iter()
            .filter(|&&i| i >= SPECIALS.len())
            .map(|&i| self.token(i).to_string())
            .collect();
        tokenizer.detokenize(&toks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        let t = WordPunct.tokenize("{PERSON: [George Bush], GPE: [Liberia]}");
        assert_eq!(
            t,
            ["{", "PERSON", ":", "[", "George", "Bush", "]", ",", "GPE", ":", "[", "Liberia", "]", "}"]
        );
        assert_eq!(WordPunct.tokenize("Bush landed."), ["Bush", "landed", "."]);
        assert!(WordPunct.tokenize("   ").is_empty());
    }

    #[test]
    fn detokenize_restores_canonical_entity_strings() {
        for s in [
            "{PERSON: [George Bush], GPE: [Liberia]}",
            "{}",
            "{ORG: [A, B]}",
            "Bush arrives in Monrovia, waving.",
        ] {
            assert_eq!(WordPunct.detokenize(&WordPunct.tokenize(s)), s);
        }
    }

    #[test]
    fn vocab_roundtrip_and_unknowns() {
        let v = Vocab::build(&WordPunct, ["a b c", "c d"]);
        assert_eq!(v.len(), 4 + 4);
        let ids = v.encode(&WordPunct, "a d z");
        assert_eq!(ids, vec![4, 7, UNK]);
        assert_eq!(v.decode(&WordPunct, &[BOS, 4, 5, EOS]), "a b");
        let json = serde_json::to_string(&v).unwrap();
        let mut back: Vocab = serde_json::from_str(&json).unwrap();
        back.reindex();
        assert_eq!(back.id("c"), 6);
    }
}
