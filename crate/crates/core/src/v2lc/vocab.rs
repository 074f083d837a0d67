use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // extension A
        | 0x4E00..=0x9FFF    // unified ideographs
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // compatibility ideographs
        | 0x20000..=0x2FA1F)
}

/// Splits text into tokens: one token per CJK character, whitespace-separated
/// words otherwise. Non-CJK runs adjacent to CJK characters form their own word.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut run = String::new();
        for c in word.chars() {
            if is_cjk(c) {
                if !run.is_empty() {
                    out.push(std::mem::take(&mut run));
                }
                out.push(c.to_string());
            } else {
                run.push(c);
            }
        }
        if !run.is_empty() {
            out.push(run);
        }
    }
    out
}

/// Token ids padded to a fixed width, with the count of real tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    pub len: usize,
}

impl TokenSeq {
    /// The real tokens, or a lone PAD for an empty sequence so encoders
    /// always see at least one position.
    pub fn active(&self) -> Vec<usize> {
        if self.len == 0 {
            vec![PAD_ID as usize]
        } else {
            self.ids[..self.len].iter().map(|&i| i as usize).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let lookup = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, lookup }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Keeps the `max_size − 2` most frequent tokens (ties broken
    /// lexicographically) after the PAD and UNK entries.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for tok in split_tokens(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![PAD.to_string(), UNK.to_string()];
        tokens.extend(ranked.into_iter().take(max_size.saturating_sub(2)).map(|(t, _)| t));
        tokens.into()
    }

    pub fn from_pairs(pairs: &[(&str, u32)]) -> Self {
        let size = pairs.iter().map(|&(_, id)| id as usize + 1).max().unwrap_or(2).max(2);
        let mut tokens: Vec<String> = (0..size).map(|i| format!("<reserved{i}>")).collect();
        tokens[0] = PAD.into();
        tokens[1] = UNK.into();
        for &(t, id) in pairs {
            tokens[id as usize] = t.to_string();
        }
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.lookup.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str, max_tokens: usize) -> TokenSeq {
        let mut ids: Vec<u32> = split_tokens(text).iter().take(max_tokens).map(|t| self.id(t)).collect();
        let len = ids.len();
        ids.resize(max_tokens, PAD_ID);
        TokenSeq { ids, len }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cjk_lookup_and_pad() {
        let vocab = Vocab::from_pairs(&[("好", 5), ("看", 9)]);
        let seq = vocab.tokenize("好看", 6);
        assert_eq!(seq.ids, vec![5, 9, 0, 0, 0, 0]);
        assert_eq!(seq.len, 2);
    }

    #[test]
    fn unknown_maps_to_unk() {
        let vocab = Vocab::from_pairs(&[("好", 5)]);
        assert_eq!(vocab.tokenize("坏", 3).ids, vec![UNK_ID, 0, 0]);
    }

    #[test]
    fn empty_text_is_all_pad() {
        let vocab = Vocab::from_pairs(&[]);
        let seq = vocab.tokenize("", 4);
        assert_eq!(seq, TokenSeq { ids: vec![0; 4], len: 0 });
        assert_eq!(seq.active(), vec![0]);
    }

    #[test]
    fn mixed_script_splitting() {
        assert_eq!(split_tokens("hello 世界 ok233好"), vec!["hello", "世", "界", "ok233", "好"]);
        let vocab = Vocab::build(["a b b", "c a b"], 10);
        assert_eq!(vocab.token(2), Some("b"));
        assert_eq!(vocab.token(3), Some("a"));
        assert_eq!(vocab.token(4), Some("c"));
        assert_eq!(vocab.tokenize("b c d e f", 3).ids, vec![2, 4, UNK_ID]);
        let capped = Vocab::build(["a b b", "c a b"], 3);
        assert_eq!(capped.len(), 3);
    }

    #[test]
    fn serde_is_a_token_list() {
        let vocab = Vocab::build(["x y"], 10);
        let json = serde_json::to_string(&vocab).unwrap();
        assert_eq!(json, r#"["<pad>","<unk>","x","y"]"#);
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), vocab);
    }
}
