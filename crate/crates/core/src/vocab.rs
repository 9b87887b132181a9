//! Tokenization, vocabulary construction, pretrained vector ingestion and
//! manual remapping of tokens absent from the pretrained set.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Punctuation that is split off the start and end of whitespace tokens.
const EDGE_PUNCT: &[char] = &['.', ',', '?', '!', '"', '\'', '-'];

/// Misspellings and tokenizer leftovers of "yes" found in dialog answers.
pub const DEFAULT_YES_VARIANTS: [&str; 8] =
    ["*yes", "yesa", "yess", "ytes", "yes-", "yes3", "yyes", "yees"];

/// Lowercasing whitespace tokenizer that splits edge punctuation into
/// separate tokens, except for tokens listed verbatim in `protected`.
#[derive(Debug, Clone, Default)]
pub struct Tokenizer {
    protected: HashSet<String>,
}

impl Tokenizer {
    pub fn new(table: &RemapTable) -> Self {
        Tokenizer {
            protected: table.entries.keys().cloned().collect(),
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for word in text.to_lowercase().split_whitespace() {
            if self.protected.contains(word) {
                out.push(word.to_string());
                continue;
            }
            let rest = word.trim_start_matches(EDGE_PUNCT);
            out.extend(word[..word.len() - rest.len()].chars().map(String::from));
            if rest.is_empty() {
                continue;
            }
            if self.protected.contains(rest) {
                out.push(rest.to_string());
                continue;
            }
            let core = rest.trim_end_matches(EDGE_PUNCT);
            if !core.is_empty() {
                out.push(core.to_string());
            }
            out.extend(rest[core.len()..].chars().map(String::from));
        }
        out
    }
}

/// Tokenizes with the default remap table's keys protected.
pub fn normalize_tokenize(text: &str) -> Vec<String> {
    thread_local! {
        static DEFAULT: Tokenizer = Tokenizer::new(&RemapTable::default_table());
    }
    DEFAULT.with(|t| t.tokenize(text))
}

/// Token <-> id map with `PAD = 0` and `UNK = 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from regular tokens (specials are implicit).
    /// Duplicates and special names are ignored.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for t in [PAD_TOKEN, UNK_TOKEN].into_iter().map(String::from).chain(tokens.into_iter().map(Into::into)) {
            if vocab.token_to_id.contains_key(&t) {
                continue;
            }
            vocab.token_to_id.insert(t.clone(), vocab.id_to_token.len() as TokenId);
            vocab.id_to_token.push(t);
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// All tokens in id order, specials included.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// One regular token per line; line `n` (0-based) has id `n + 2`.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.id_to_token[2..] {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let lines = BufReader::new(r)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()?;
        Ok(Self::from_tokens(lines.into_iter().filter(|l| !l.is_empty())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }
}

/// Counts tokens and assigns ids by descending count, then ascending
/// lexicographic order. Tokens below `min_count` are left out (they map to UNK).
pub fn build_vocab<'a, I, S>(corpus: I, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a S>,
    S: AsRef<[String]> + 'a + ?Sized,
{
    if min_count == 0 {
        return Err(Error::Config("min_count must be >= 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for seq in corpus {
        for t in seq.as_ref() {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t)))
}

/// Map from tokens missing in the pretrained set to semantically close
/// tokens that are present.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RemapTable {
    entries: BTreeMap<String, String>,
}

impl RemapTable {
    pub fn new(entries: BTreeMap<String, String>) -> Result<Self> {
        if let Some(target) = entries.values().find(|t| entries.contains_key(*t)) {
            return Err(Error::RemapChain(target.clone()));
        }
        Ok(RemapTable { entries })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// The shipped table: spelling variants of "yes".
    pub fn default_table() -> Self {
        RemapTable {
            entries: DEFAULT_YES_VARIANTS
                .iter()
                .map(|v| (v.to_string(), "yes".to_string()))
                .collect(),
        }
    }

    pub fn get(&self, token: &str) -> Option<&str> {
        self.entries.get(token).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// `missing<TAB>target` per line; blank lines and `#` comments skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('\t').ok_or(Error::RemapParse { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(Error::RemapParse { line: i + 1 });
            }
            entries.insert(k.to_string(), v.to_string());
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect()
    }
}

/// Parsed text-format word vectors (`token v1 ... vd` per line).
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedVectors {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl PretrainedVectors {
    pub fn parse<R: Read>(r: R) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::BadVectorFile { line: lineno })?;
            if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                return Err(Error::BadVectorFile { line: lineno });
            }
            match dim {
                None => dim = Some(values.len()),
                Some(d) if d != values.len() => return Err(Error::BadVectorFile { line: lineno }),
                _ => {}
            }
            vectors.entry(token.to_string()).or_insert(values);
        }
        Ok(PretrainedVectors {
            dim: dim.unwrap_or(0),
            vectors,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(std::fs::File::open(path)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "target", rename_all = "lowercase")]
pub enum Provenance {
    Pretrained,
    Remapped(String),
    Random,
}

/// Initial embedding matrix (`|V| x dim`, row-major) with per-row provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingInit {
    pub dim: usize,
    pub matrix: Vec<f64>,
    pub provenance: Vec<Provenance>,
    pub trainable: bool,
}

/// Half-width of the uniform distribution for rows without a pretrained vector.
pub const RANDOM_ROW_SCALE: f64 = 0.1;

impl EmbeddingInit {
    /// All rows random, for runs without a vector file.
    pub fn random<R: Rng>(vocab_len: usize, dim: usize, trainable: bool, rng: &mut R) -> Self {
        let matrix = (0..vocab_len * dim)
            .map(|_| rng.random_range(-RANDOM_ROW_SCALE..=RANDOM_ROW_SCALE))
            .collect();
        EmbeddingInit {
            dim,
            matrix,
            provenance: vec![Provenance::Random; vocab_len],
            trainable,
        }
    }

    pub fn rows(&self) -> usize {
        self.provenance.len()
    }

    pub fn row(&self, id: TokenId) -> &[f64] {
        let i = id as usize * self.dim;
        &self.matrix[i..i + self.dim]
    }

    fn row_mut(&mut self, id: TokenId) -> &mut [f64] {
        let i = id as usize * self.dim;
        &mut self.matrix[i..i + self.dim]
    }

    /// `(pretrained, remapped, random)` row counts.
    pub fn provenance_counts(&self) -> (usize, usize, usize) {
        self.provenance.iter().fold((0, 0, 0), |(p, m, r), t| match t {
            Provenance::Pretrained => (p + 1, m, r),
            Provenance::Remapped(_) => (p, m + 1, r),
            Provenance::Random => (p, m, r + 1),
        })
    }
}

/// Copies pretrained rows for every vocabulary token found in `vectors`.
/// Everything else (specials included) gets a seeded random row; regular
/// tokens among those are returned as `missing`, in id order.
pub fn load_pretrained<R: Rng>(
    vectors: &PretrainedVectors,
    vocab: &Vocabulary,
    trainable: bool,
    rng: &mut R,
) -> (EmbeddingInit, Vec<String>) {
    let dim = vectors.dim();
    let mut init = EmbeddingInit {
        dim,
        matrix: Vec::with_capacity(vocab.len() * dim),
        provenance: Vec::with_capacity(vocab.len()),
        trainable,
    };
    let mut missing = Vec::new();
    for (id, token) in vocab.tokens().iter().enumerate() {
        match vectors.get(token) {
            Some(v) => {
                init.matrix.extend_from_slice(v);
                init.provenance.push(Provenance::Pretrained);
            }
            None => {
                init.matrix
                    .extend((0..dim).map(|_| rng.random_range(-RANDOM_ROW_SCALE..=RANDOM_ROW_SCALE)));
                init.provenance.push(Provenance::Random);
                if id >= 2 {
                    missing.push(token.clone());
                }
            }
        }
    }
    (init, missing)
}

/// Gives each random-tagged token listed in `table` its target's pretrained
/// row. Every target in the table must exist in `vectors`.
pub fn apply_remap(
    mut init: EmbeddingInit,
    vocab: &Vocabulary,
    table: &RemapTable,
    vectors: &PretrainedVectors,
) -> Result<EmbeddingInit> {
    for (_, target) in table.iter() {
        if vectors.get(target).is_none() {
            return Err(Error::RemapTargetMissing(target.to_string()));
        }
    }
    for (missing, target) in table.iter() {
        let Some(id) = vocab.get(missing) else { continue };
        if init.provenance[id as usize] != Provenance::Random {
            continue;
        }
        let row = vectors.get(target).expect("checked above");
        if row.len() != init.dim {
            return Err(Error::shape(format!("remap target {target} has width {}", row.len())));
        }
        init.row_mut(id).copy_from_slice(row);
        init.provenance[id as usize] = Provenance::Remapped(target.to_string());
    }
    Ok(init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(normalize_tokenize("Is it sunny?"), toks(&["is", "it", "sunny", "?"]));
        assert!(normalize_tokenize("").is_empty());
        assert_eq!(normalize_tokenize("yes- I think"), toks(&["yes-", "i", "think"]));
        let plain = Tokenizer::new(&RemapTable::empty());
        assert_eq!(plain.tokenize("yes- I think"), toks(&["yes", "-", "i", "think"]));
    }

    #[test]
    fn tokenizer_edge_punctuation() {
        assert_eq!(normalize_tokenize("\"Hello,\" she said!?"), toks(&["\"", "hello", ",", "\"", "she", "said", "!", "?"]));
        assert_eq!(normalize_tokenize("don't  stop..."), toks(&["don't", "stop", ".", ".", "."]));
        assert_eq!(normalize_tokenize("-"), toks(&["-"]));
        assert_eq!(normalize_tokenize("*YES"), toks(&["*yes"]));
    }

    #[test]
    fn build_vocab_orders_by_count_then_token() {
        let corpus = vec![toks(&["a", "b", "a"])];
        let v = build_vocab(&corpus, 1).unwrap();
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
        assert_eq!(v.id("zzz"), UNK);

        let corpus = vec![toks(&["c", "b"]), toks(&["b", "a", "c"])];
        let v = build_vocab(&corpus, 1).unwrap();
        assert_eq!(&v.tokens()[2..], &toks(&["b", "c", "a"])[..]);
    }

    #[test]
    fn build_vocab_threshold_and_empty() {
        let corpus = vec![toks(&["a", "b"])];
        let v = build_vocab(&corpus, 2).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.id("a"), UNK);
        let empty: Vec<Vec<String>> = vec![vec![]];
        assert!(matches!(build_vocab(&empty, 1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = Vocabulary::from_tokens(["yes", "no", "?"]);
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "yes\nno\n?\n");
        assert_eq!(Vocabulary::read(&buf[..]).unwrap(), v);
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn pretrained_rows_are_copied() {
        let vecs = PretrainedVectors::parse("a 1.0 2.0\n".as_bytes()).unwrap();
        let vocab = Vocabulary::from_tokens(["a"]);
        let (init, missing) = load_pretrained(&vecs, &vocab, true, &mut rng());
        assert_eq!(init.row(2), &[1.0, 2.0]);
        assert!(missing.is_empty());

        let vocab = Vocabulary::from_tokens(["a", "b"]);
        let (init, missing) = load_pretrained(&vecs, &vocab, true, &mut rng());
        assert_eq!(missing, toks(&["b"]));
        assert_eq!(init.provenance[3], Provenance::Random);
        assert!(init.row(3).iter().all(|x| x.abs() <= RANDOM_ROW_SCALE));
    }

    #[test]
    fn inconsistent_vector_width_reports_line() {
        let err = PretrainedVectors::parse("a 1 2\nb 1 2\nc 1\n".as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "bad-vector-file:3");
        let err = PretrainedVectors::parse("a 1 x\n".as_bytes()).unwrap_err();
        assert_eq!(err.to_string(), "bad-vector-file:1");
    }

    fn yes_fixture() -> (PretrainedVectors, Vocabulary) {
        let vecs = PretrainedVectors::parse("yes 0.5 -0.25 0.125\nno -1 0 1\n".as_bytes()).unwrap();
        let mut tokens = vec!["yes", "no", "maybe"];
        tokens.extend(DEFAULT_YES_VARIANTS);
        (vecs, Vocabulary::from_tokens(tokens))
    }

    #[test]
    fn remap_copies_target_rows() {
        let (vecs, vocab) = yes_fixture();
        let (init, missing) = load_pretrained(&vecs, &vocab, true, &mut rng());
        assert_eq!(missing.len(), 9);
        let init = apply_remap(init, &vocab, &RemapTable::default_table(), &vecs).unwrap();
        let yes = init.row(vocab.id("yes")).to_vec();
        for v in DEFAULT_YES_VARIANTS {
            let id = vocab.id(v);
            assert_eq!(init.row(id), &yes[..], "{v}");
            assert_eq!(init.provenance[id as usize], Provenance::Remapped("yes".into()));
        }
        // not in the table: still random
        assert_eq!(init.provenance[vocab.id("maybe") as usize], Provenance::Random);
        let (p, m, r) = init.provenance_counts();
        assert_eq!((p, m, r), (2, 8, 3));
        assert_eq!(p + m + r, vocab.len());
    }

    #[test]
    fn remap_is_idempotent_and_identity_on_empty_table() {
        let (vecs, vocab) = yes_fixture();
        let (init, _) = load_pretrained(&vecs, &vocab, true, &mut rng());
        let same = apply_remap(init.clone(), &vocab, &RemapTable::empty(), &vecs).unwrap();
        assert_eq!(same, init);
        let table = RemapTable::default_table();
        let once = apply_remap(init, &vocab, &table, &vecs).unwrap();
        let twice = apply_remap(once.clone(), &vocab, &table, &vecs).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn remap_errors() {
        let (vecs, vocab) = yes_fixture();
        let (init, _) = load_pretrained(&vecs, &vocab, true, &mut rng());
        let table = RemapTable::parse("maybe\tperhaps\n").unwrap();
        let err = apply_remap(init, &vocab, &table, &vecs).unwrap_err();
        assert_eq!(err.to_string(), "remap-target-missing:perhaps");

        let err = RemapTable::parse("a\tb\nb\tc\n").unwrap_err();
        assert_eq!(err.to_string(), "remap-chain:b");
    }

    #[test]
    fn remap_file_format() {
        let t = RemapTable::parse("# variants\nyess\tyes\n\n  # another\nnoo\tno\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("noo"), Some("no"));
        assert_eq!(RemapTable::parse(&t.to_text()).unwrap(), t);
        assert!(RemapTable::parse("no-tab-here\n").is_err());
        for v in DEFAULT_YES_VARIANTS {
            assert_eq!(RemapTable::default_table().get(v), Some("yes"));
        }
    }

    #[test]
    fn embedding_init_is_deterministic() {
        let (vecs, vocab) = yes_fixture();
        let table = RemapTable::default_table();
        let run = || {
            let (init, _) = load_pretrained(&vecs, &vocab, true, &mut rng());
            apply_remap(init, &vocab, &table, &vecs).unwrap()
        };
        assert_eq!(run(), run());
    }
}
