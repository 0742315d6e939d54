//! Documents, query sets, the word-level tokenizer and the surface vocabulary.
//!
//! Text is lowercased, split on whitespace, and every character that is neither
//! alphanumeric nor whitespace becomes a token of its own. The vocabulary reserves
//! ids 0..=3 for `BOS`, `EOS`, `PAD`, `UNK` and assigns the rest in first-seen order.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum encoder input length, in tokens.
pub const MAX_INPUT_TOKENS: usize = 512;
/// Paragraphs of content fed to the encoder alongside a target.
pub const CONTENT_PARAGRAPHS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const BOS: TokenId = TokenId(0);
    pub const EOS: TokenId = TokenId(1);
    pub const PAD: TokenId = TokenId(2);
    pub const UNK: TokenId = TokenId(3);

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_reserved(self) -> bool {
        self.0 <= Self::UNK.0
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

const RESERVED: [&str; 4] = ["<bos>", "<eos>", "<pad>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (ordinal, doc) in docs.iter().enumerate() {
            validate_document(doc)?;
            if by_id.insert(doc.doc_id.clone(), ordinal).is_some() {
                return Err(Error::invalid(format!("duplicate doc_id {:?}", doc.doc_id)));
            }
        }
        Ok(Self { docs, by_id })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut docs = Vec::new();
        let mut seen = HashMap::new();
        for (line_no, line) in read_records(path)? {
            let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message,
            };
            validate_document(&doc).map_err(|e| parse_err(e.to_string()))?;
            if let Some(prev) = seen.insert(doc.doc_id.clone(), line_no) {
                return Err(parse_err(format!(
                    "duplicate doc_id {:?} (first seen on line {prev})",
                    doc.doc_id
                )));
            }
            docs.push(doc);
        }
        Self::new(docs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_records(path.as_ref(), &self.docs)
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc(&self, ordinal: usize) -> &Document {
        &self.docs[ordinal]
    }

    pub fn ordinal_of(&self, doc_id: &str) -> Option<usize> {
        self.by_id.get(doc_id).copied()
    }
}

fn validate_document(doc: &Document) -> Result<()> {
    if doc.title.trim().is_empty() {
        return Err(Error::invalid(format!(
            "document {:?} has an empty title",
            doc.doc_id
        )));
    }
    if doc.doc_id.is_empty() {
        return Err(Error::invalid("document with empty doc_id"));
    }
    Ok(())
}

/// A query paired with its gold (provenance) documents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalExample {
    pub query: String,
    pub provenance: Vec<String>,
}

impl RetrievalExample {
    pub fn provenance_set(&self) -> BTreeSet<&str> {
        self.provenance.iter().map(String::as_str).collect()
    }
}

pub fn load_examples(path: impl AsRef<Path>, corpus: &Corpus) -> Result<Vec<RetrievalExample>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (line_no, line) in read_records(path)? {
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let ex: RetrievalExample =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if ex.provenance.is_empty() {
            return Err(parse_err("empty provenance set".into()));
        }
        if let Some(missing) = ex
            .provenance
            .iter()
            .find(|id| corpus.ordinal_of(id).is_none())
        {
            return Err(parse_err(format!(
                "provenance doc_id {missing:?} is not in the corpus"
            )));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn save_examples(path: impl AsRef<Path>, examples: &[RetrievalExample]) -> Result<()> {
    write_records(path.as_ref(), examples)
}

fn read_records(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Lowercase, split on whitespace, isolate punctuation.
pub fn split_surfaces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let mut run = String::new();
        for c in word.chars() {
            if c.is_alphanumeric() {
                run.push(c);
            } else {
                if !run.is_empty() {
                    out.push(std::mem::take(&mut run));
                }
                out.push(c.to_string());
            }
        }
        if !run.is_empty() {
            out.push(run);
        }
    }
    out
}

/// How a document's retrieval target is spelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    #[default]
    Title,
    /// One token per character of the identifier.
    Docid,
}

impl FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "title" => Ok(Self::Title),
            "docid" => Ok(Self::Docid),
            other => Err(Error::invalid(format!("unknown target mode {other:?}"))),
        }
    }
}

impl fmt::Display for TargetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Title => "title",
            Self::Docid => "docid",
        })
    }
}

fn docid_surfaces(doc_id: &str) -> Vec<String> {
    doc_id
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| c.to_lowercase().collect())
        .collect()
}

pub fn target_surfaces(doc: &Document, mode: TargetMode) -> Vec<String> {
    match mode {
        TargetMode::Title => split_surfaces(&doc.title),
        TargetMode::Docid => docid_surfaces(&doc.doc_id),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    surfaces: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocab {
    fn with_reserved() -> Self {
        let mut v = Self {
            surfaces: Vec::new(),
            ids: HashMap::new(),
        };
        for s in RESERVED {
            v.insert(s);
        }
        v
    }

    fn insert(&mut self, surface: &str) -> TokenId {
        if let Some(&id) = self.ids.get(surface) {
            return id;
        }
        let id = TokenId(self.surfaces.len() as u32);
        self.surfaces.push(surface.to_string());
        self.ids.insert(surface.to_string(), id);
        id
    }

    pub fn build(corpus: &Corpus, mode: TargetMode) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid(
                "cannot build a vocabulary from an empty corpus",
            ));
        }
        let mut v = Self::with_reserved();
        for doc in corpus.docs() {
            for s in split_surfaces(&doc.title) {
                v.insert(&s);
            }
            for s in split_surfaces(&doc.content) {
                v.insert(&s);
            }
            if mode == TargetMode::Docid {
                for s in docid_surfaces(&doc.doc_id) {
                    v.insert(&s);
                }
            }
        }
        Ok(v)
    }

    pub fn from_surfaces(surfaces: impl IntoIterator<Item = String>) -> Self {
        let mut v = Self::with_reserved();
        for s in surfaces {
            v.insert(&s);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.ids.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> &str {
        &self.surfaces[id.index()]
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        split_surfaces(text)
            .iter()
            .map(|s| self.id(s).unwrap_or(TokenId::UNK))
            .collect()
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.surface(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Tokens of the first five blank-line separated paragraphs, truncated to `max_tokens`.
    pub fn content_window(&self, doc: &Document, max_tokens: usize) -> Vec<TokenId> {
        let mut out = Vec::new();
        for para in paragraphs(&doc.content)
            .into_iter()
            .take(CONTENT_PARAGRAPHS)
        {
            out.extend(self.tokenize(&para));
            if out.len() >= max_tokens {
                break;
            }
        }
        out.truncate(max_tokens);
        out
    }

    pub fn target(&self, corpus: &Corpus, ordinal: usize, mode: TargetMode) -> TargetSequence {
        let doc = corpus.doc(ordinal);
        let mut tokens: Vec<TokenId> = target_surfaces(doc, mode)
            .iter()
            .map(|s| self.id(s).unwrap_or(TokenId::UNK))
            .collect();
        tokens.push(TokenId::EOS);
        TargetSequence {
            doc: ordinal,
            tokens,
            mode,
        }
    }

    pub fn targets(&self, corpus: &Corpus, mode: TargetMode) -> Vec<TargetSequence> {
        (0..corpus.len())
            .map(|i| self.target(corpus, i, mode))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.surfaces.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Reads a vocabulary written by [`Vocab::save`]; the reserved tokens must lead.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED.len() || lines[..RESERVED.len()] != RESERVED[..] {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "vocabulary must start with the reserved tokens".into(),
            });
        }
        let v = Self::from_surfaces(lines[RESERVED.len()..].iter().map(|s| s.to_string()));
        if v.len() != lines.len() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: "duplicate surface in vocabulary".into(),
            });
        }
        Ok(v)
    }
}

/// Splits on runs of blank lines; drops empty paragraphs.
fn paragraphs(content: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for line in content.lines() {
        if line.trim().is_empty() {
            if !current.trim().is_empty() {
                out.push(std::mem::take(&mut current));
            }
            current.clear();
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if !current.trim().is_empty() {
        out.push(current);
    }
    out
}

/// Target token ids of one document, terminated by `EOS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSequence {
    pub doc: usize,
    pub tokens: Vec<TokenId>,
    pub mode: TargetMode,
}

impl TargetSequence {
    /// Tokens without the trailing `EOS`.
    pub fn body(&self) -> &[TokenId] {
        &self.tokens[..self.tokens.len() - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, title: &str, content: &str) -> Document {
        Document {
            doc_id: id.into(),
            title: title.into(),
            content: content.into(),
        }
    }

    fn words(n: usize, prefix: &str) -> String {
        (0..n)
            .map(|i| format!("{prefix}{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(split_surfaces("Cape Town"), ["cape", "town"]);
        assert!(split_surfaces("").is_empty());
        assert_eq!(
            split_surfaces("Noli Me Tangere (novel)"),
            ["noli", "me", "tangere", "(", "novel", ")"]
        );
        assert_eq!(
            split_surfaces("l'inferno!!"),
            ["l", "'", "inferno", "!", "!"]
        );
    }

    #[test]
    fn tokenize_maps_unknown_to_unk() {
        let corpus = Corpus::new(vec![doc("1", "Cape Town", "")]).unwrap();
        let v = Vocab::build(&corpus, TargetMode::Title).unwrap();
        assert_eq!(
            v.tokenize("Cape Town"),
            [v.id("cape").unwrap(), v.id("town").unwrap()]
        );
        assert_eq!(
            v.tokenize("cape verde"),
            [v.id("cape").unwrap(), TokenId::UNK]
        );
        assert!(v.tokenize("").is_empty());
    }

    #[test]
    fn vocab_first_seen_order() {
        let corpus = Corpus::new(vec![doc("d", "a b", "a c")]).unwrap();
        let v = Vocab::build(&corpus, TargetMode::Title).unwrap();
        assert_eq!(
            v.surfaces(),
            ["<bos>", "<eos>", "<pad>", "<unk>", "a", "b", "c"]
        );
        assert_eq!(v, Vocab::build(&corpus, TargetMode::Title).unwrap());
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let corpus = Corpus::new(vec![doc("d", "a b", "a c")]).unwrap();
        let v = Vocab::build(&corpus, TargetMode::Title).unwrap();
        v.save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), v);
        fs::write(&path, "a\nb\n").unwrap();
        assert!(matches!(Vocab::load(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn docid_mode_adds_digits() {
        let corpus = Corpus::new(vec![doc("42", "x", "")]).unwrap();
        let v = Vocab::build(&corpus, TargetMode::Docid).unwrap();
        assert!(v.id("4").is_some() && v.id("2").is_some());
        let t = v.target(&corpus, 0, TargetMode::Docid);
        assert_eq!(
            t.tokens,
            [v.id("4").unwrap(), v.id("2").unwrap(), TokenId::EOS]
        );
        assert!(Vocab::build(&corpus, TargetMode::Title)
            .unwrap()
            .id("4")
            .is_none());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let corpus = Corpus::new(vec![]).unwrap();
        assert!(Vocab::build(&corpus, TargetMode::Title).is_err());
    }

    #[test]
    fn content_window_takes_five_paragraphs() {
        // 7 paragraphs; the first five hold 80 tokens each (400), the last two 100 each.
        let mut paras: Vec<String> = (0..5).map(|i| words(80, &format!("p{i}w"))).collect();
        paras.push(words(100, "p5w"));
        paras.push(words(100, "p6w"));
        let d = doc("1", "t", &paras.join("\n\n"));
        let corpus = Corpus::new(vec![d.clone()]).unwrap();
        let v = Vocab::build(&corpus, TargetMode::Title).unwrap();
        assert_eq!(v.tokenize(&d.content).len(), 600);
        assert_eq!(v.content_window(&d, MAX_INPUT_TOKENS).len(), 400);

        let short = doc("2", "t", "one two\n\n\n  \nthree");
        let v = Vocab::build(
            &Corpus::new(vec![short.clone()]).unwrap(),
            TargetMode::Title,
        )
        .unwrap();
        assert_eq!(v.content_window(&short, 512).len(), 3);

        let long = doc("3", "t", &words(1000, "w"));
        let v = Vocab::build(&Corpus::new(vec![long.clone()]).unwrap(), TargetMode::Title).unwrap();
        let win = v.content_window(&long, 512);
        assert_eq!(win, v.tokenize(&long.content)[..512]);

        let empty = doc("4", "t", "");
        assert!(v.content_window(&empty, 512).is_empty());
    }

    #[test]
    fn target_body_tokens_are_not_reserved() {
        let corpus = Corpus::new(vec![doc("1", "Cape Town", "x"), doc("2", "Cape", "y")]).unwrap();
        let v = Vocab::build(&corpus, TargetMode::Title).unwrap();
        for t in v.targets(&corpus, TargetMode::Title) {
            assert_eq!(*t.tokens.last().unwrap(), TokenId::EOS);
            assert!(t.body().iter().all(|id| !id.is_reserved()));
        }
    }

    #[test]
    fn load_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.jsonl");
        fs::write(
            &good,
            concat!(
                r#"{"doc_id":"a","title":"A","content":"x"}"#,
                "\n",
                r#"{"doc_id":"b","title":"B","content":"y"}"#,
                "\n",
                r#"{"doc_id":"c","title":"C","content":"z"}"#,
                "\n"
            ),
        )
        .unwrap();
        let corpus = Corpus::load(&good).unwrap();
        assert_eq!(corpus.len(), 3);

        let bad = dir.path().join("bad.jsonl");
        fs::write(
            &bad,
            concat!(
                r#"{"doc_id":"a","title":"A","content":"x"}"#,
                "\n",
                r#"{"doc_id":"b","content":"y"}"#,
                "\n"
            ),
        )
        .unwrap();
        match Corpus::load(&bad) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("title"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        let ex = dir.path().join("ex.jsonl");
        fs::write(
            &ex,
            "{\"query\":\"q\",\"provenance\":[\"a\"]}\n{\"query\":\"q\",\"provenance\":[\"zz\"]}\n",
        )
        .unwrap();
        match load_examples(&ex, &corpus) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tokenize_is_idempotent_on_detokenized_text(text in "[a-zA-Z0-9 ,.()'!-]{0,60}") {
                let corpus = Corpus::new(vec![doc("1", "t", &text)]).unwrap();
                let v = Vocab::build(&corpus, TargetMode::Title).unwrap();
                let ids = v.tokenize(&text);
                prop_assert_eq!(v.tokenize(&v.detokenize(&ids)), ids);
            }
        }
    }
}
