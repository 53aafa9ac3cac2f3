//! Byte-pair encoding over characters, with the control markers kept atomic.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const PAD: u32 = 2;
pub const UNK: u32 = 3;
pub const P1: u32 = 4;
pub const P2: u32 = 5;
pub const LIGAND: u32 = 6;

pub const SPECIALS: [&str; 7] = ["[BOS]", "[EOS]", "[PAD]", "[UNK]", "<p1>", "<p2>", "<L>"];

/// Markers that may appear inside record text.
const TEXT_MARKERS: [(&str, u32); 3] = [("<p1>", P1), ("<p2>", P2), ("<L>", LIGAND)];

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("training corpus is empty")]
    CorpusEmpty,
    #[error("vocab size {requested} is below the {minimum} specials and base symbols")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("token id {0} is out of range")]
    Range(u32),
    #[error("vocab file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    alphabet: Vec<char>,
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

/// Text split into marker ids and plain runs.
enum Segment<'a> {
    Marker(u32),
    Text(&'a str),
}

fn segments(text: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        if let Some(&(m, id)) = TEXT_MARKERS.iter().find(|(m, _)| rest.starts_with(m)) {
            if start < i {
                out.push(Segment::Text(&text[start..i]));
            }
            out.push(Segment::Marker(id));
            i += m.len();
            start = i;
        } else {
            i += rest.chars().next().map_or(1, char::len_utf8);
        }
    }
    if start < text.len() {
        out.push(Segment::Text(&text[start..]));
    }
    out
}

impl Vocab {
    fn from_parts(alphabet: Vec<char>, merge_strings: &[(String, String)]) -> Result<Self, TokenizerError> {
        let mut v = Vocab {
            tokens: SPECIALS.iter().map(|s| s.to_string()).collect(),
            ids: HashMap::new(),
            alphabet: alphabet.clone(),
            merges: Vec::new(),
            ranks: HashMap::new(),
        };
        for c in alphabet {
            v.tokens.push(c.to_string());
        }
        for (i, t) in v.tokens.iter().enumerate() {
            if v.ids.insert(t.clone(), i as u32).is_some() {
                return Err(TokenizerError::Format(format!("duplicate token {t:?}")));
            }
        }
        for (a, b) in merge_strings {
            let look = |s: &String| {
                v.ids
                    .get(s)
                    .copied()
                    .filter(|&id| id >= SPECIALS.len() as u32)
                    .ok_or_else(|| TokenizerError::Format(format!("merge uses unknown token {s:?}")))
            };
            let (x, y) = (look(a)?, look(b)?);
            v.push_merge(x, y);
        }
        Ok(v)
    }

    fn push_merge(&mut self, x: u32, y: u32) -> u32 {
        let joined = format!("{}{}", self.tokens[x as usize], self.tokens[y as usize]);
        let id = match self.ids.get(&joined) {
            Some(&id) => id,
            None => {
                let id = self.tokens.len() as u32;
                self.tokens.push(joined.clone());
                self.ids.insert(joined, id);
                id
            }
        };
        self.ranks.insert((x, y), (self.merges.len(), id));
        self.merges.push((x, y));
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn merges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.merges
            .iter()
            .map(|&(a, b)| (self.tokens[a as usize].as_str(), self.tokens[b as usize].as_str()))
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    fn encode_run(&self, run: &str, out: &mut Vec<u32>) {
        let mut symbols: Vec<u32> = run
            .chars()
            .map(|c| {
                let mut buf = [0u8; 4];
                self.ids.get(&*c.encode_utf8(&mut buf)).copied().unwrap_or(UNK)
            })
            .collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(rank, id)| (rank, w[0], w[1], id)))
                .min();
            let Some((_, a, b, id)) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
                    merged.push(id);
                    i += 2;
                } else {
                    merged.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = merged;
        }
        out.extend(symbols);
    }

    /// Token ids of `text` wrapped in `[BOS]` … `[EOS]`. Characters outside
    /// the alphabet become `[UNK]`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = vec![BOS];
        out.extend(self.encode_body(text));
        out.push(EOS);
        out
    }

    /// Like [`Vocab::encode`] without the `[BOS]`/`[EOS]` wrapper.
    pub fn encode_body(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for seg in segments(text) {
            match seg {
                Segment::Marker(id) => out.push(id),
                Segment::Text(run) => self.encode_run(run, &mut out),
            }
        }
        out
    }

    /// Text of `ids`, dropping `[BOS]`, `[EOS]` and `[PAD]`.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(TokenizerError::Range(id))?;
            if !matches!(id, BOS | EOS | PAD) {
                out.push_str(tok);
            }
        }
        Ok(out)
    }

    /// Line 1: specials. Line 2: the base alphabet. Then one merge per line.
    /// Symbols are escaped so that spaces and backslashes survive.
    pub fn to_text(&self) -> String {
        let mut out = SPECIALS.join(" ");
        out.push('\n');
        let alphabet: Vec<String> = self.alphabet.iter().map(|c| escape(&c.to_string())).collect();
        let _ = writeln!(out, "{}", alphabet.join(" "));
        for (a, b) in self.merges() {
            let _ = writeln!(out, "{} {}", escape(a), escape(b));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let mut lines = text.lines();
        let specials = lines.next().ok_or_else(|| TokenizerError::Format("empty file".into()))?;
        if specials.split(' ').collect::<Vec<_>>() != SPECIALS {
            return Err(TokenizerError::Format("first line must list the specials".into()));
        }
        let alphabet_line = lines.next().ok_or_else(|| TokenizerError::Format("missing alphabet".into()))?;
        let mut alphabet = Vec::new();
        for sym in alphabet_line.split(' ').filter(|s| !s.is_empty()) {
            let s = unescape(sym)?;
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => alphabet.push(c),
                _ => return Err(TokenizerError::Format(format!("alphabet symbol {sym:?}"))),
            }
        }
        let mut merges = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| TokenizerError::Format(format!("merge line {line:?}")))?;
            merges.push((unescape(a)?, unescape(b)?));
        }
        Vocab::from_parts(alphabet, &merges)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Vocab::from_text(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the vocab file text, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace(' ', "\\s").replace('\n', "\\n")
}

fn unescape(s: &str) -> Result<String, TokenizerError> {
    let mut out = String::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('\\') => out.push('\\'),
                Some('s') => out.push(' '),
                Some('n') => out.push('\n'),
                _ => return Err(TokenizerError::Format(format!("bad escape in {s:?}"))),
            }
        } else {
            out.push(c);
        }
    }
    Ok(out)
}

/// Learns merges by descending pair frequency until the vocabulary has
/// `vocab_size` entries or no pair repeats. Ties go to the lexicographically
/// smallest pair of token strings.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Vocab, TokenizerError> {
    let mut words: HashMap<&str, u64> = HashMap::new();
    let mut alphabet = BTreeSet::new();
    for text in corpus {
        for seg in segments(text.as_ref()) {
            if let Segment::Text(run) = seg {
                *words.entry(run).or_default() += 1;
                alphabet.extend(run.chars());
            }
        }
    }
    if words.is_empty() {
        return Err(TokenizerError::CorpusEmpty);
    }
    let minimum = SPECIALS.len() + alphabet.len();
    if vocab_size < minimum {
        return Err(TokenizerError::VocabTooSmall {
            requested: vocab_size,
            minimum,
        });
    }
    let mut vocab = Vocab::from_parts(alphabet.into_iter().collect(), &[])?;

    let mut word_list: Vec<(&str, u64)> = words.into_iter().collect();
    word_list.sort_unstable();
    let mut seqs: Vec<Vec<u32>> = word_list
        .iter()
        .map(|(w, _)| w.chars().map(|c| vocab.ids[&c.to_string()]).collect())
        .collect();
    let weights: Vec<u64> = word_list.iter().map(|&(_, n)| n).collect();

    let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut holders: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, seq) in seqs.iter().enumerate() {
        for p in seq.windows(2) {
            *counts.entry((p[0], p[1])).or_default() += weights[wi];
            holders.entry((p[0], p[1])).or_default().insert(wi);
        }
    }

    while vocab.len() < vocab_size {
        let best = counts
            .iter()
            .filter(|&(_, &c)| c > 0)
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    let key = |p: &(u32, u32)| (vocab.tokens[p.0 as usize].clone(), vocab.tokens[p.1 as usize].clone());
                    key(pb).cmp(&key(pa))
                })
            })
            .map(|(&p, _)| p);
        let Some((a, b)) = best else { break };
        let new_id = vocab.push_merge(a, b);
        let mut affected: Vec<usize> = holders.remove(&(a, b)).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        for wi in affected {
            let w = weights[wi];
            for p in seqs[wi].windows(2) {
                if let Some(c) = counts.get_mut(&(p[0], p[1])) {
                    *c -= w;
                }
            }
            let old = std::mem::take(&mut seqs[wi]);
            let mut merged = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && old[i] == a && old[i + 1] == b {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(old[i]);
                    i += 1;
                }
            }
            for p in merged.windows(2) {
                *counts.entry((p[0], p[1])).or_default() += w;
                holders.entry((p[0], p[1])).or_default().insert(wi);
            }
            seqs[wi] = merged;
        }
        counts.retain(|_, c| *c > 0);
        counts.remove(&(a, b));
    }
    Ok(vocab)
}

/// Position of the `<L>` token in an encoded record.
pub fn ligand_position(ids: &[u32]) -> Option<usize> {
    ids.iter().position(|&t| t == LIGAND)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_merge_of_a_single_symbol_corpus() {
        let corpus = vec!["CCCCCC"; 1000];
        let v = train_bpe(&corpus, SPECIALS.len() + 2).unwrap();
        assert_eq!(v.merges().next(), Some(("C", "C")));
        assert_eq!(v.len(), SPECIALS.len() + 2);
    }

    #[test]
    fn specials_stay_atomic() {
        let corpus = ["<p1>C<p2>C<L>CCOCC", "<p1>COC<L>CCOCC", "<L>CCO", "<L>c1ccccc1"];
        let v = train_bpe(&corpus, 60).unwrap();
        for (a, b) in v.merges() {
            for s in SPECIALS {
                assert!(!a.contains(s) && !b.contains(s));
                assert!(!format!("{a}{b}").contains(s));
            }
            assert!(!a.contains('<') && !b.contains('<'));
        }
        let ids = v.encode("<L>CCO");
        assert_eq!(ids[0], BOS);
        assert_eq!(ids[1], LIGAND);
        assert_eq!(*ids.last().unwrap(), EOS);
        assert_eq!(ids.iter().filter(|&&t| t == LIGAND).count(), 1);
    }

    #[test]
    fn round_trips() {
        let corpus = ["<p1>C<p2>C<L>CC", "<L>CCO", "<L>ClCBr"];
        let v = train_bpe(&corpus, 40).unwrap();
        for t in corpus {
            assert_eq!(v.decode(&v.encode(t)).unwrap(), t);
        }
        assert_eq!(v.encode(""), vec![BOS, EOS]);
        assert_eq!(v.decode(&v.encode("")).unwrap(), "");
        assert!(matches!(v.decode(&[9999]), Err(TokenizerError::Range(9999))));
        assert!(v.encode("CX").contains(&UNK));
    }

    #[test]
    fn errors() {
        assert!(matches!(train_bpe::<&str>(&[], 100), Err(TokenizerError::CorpusEmpty)));
        assert!(matches!(train_bpe(&["<L>"], 100), Err(TokenizerError::CorpusEmpty)));
        assert!(matches!(train_bpe(&["CNO"], 9), Err(TokenizerError::VocabTooSmall { .. })));
    }

    #[test]
    fn file_round_trip_and_determinism() {
        let corpus = ["<p1>C Br<p2>C\\<L>CCOCC", "<L>CCO", "<L>C(=O)N"];
        let a = train_bpe(&corpus, 30).unwrap();
        let b = train_bpe(&corpus, 30).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let back = Vocab::from_text(&a.to_text()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.hash(), a.hash());
        for t in corpus {
            assert_eq!(back.encode(t), a.encode(t));
        }
    }
}
