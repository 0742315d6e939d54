//! Synthetic corpora: the homograph corpus used for the trend experiments and a small
//! chained corpus for multi-hop retrieval.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, RetrievalExample};
use crate::error::{Error, Result};
use crate::linalg::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub docs: usize,
    /// Title head tokens shared by exactly two documents.
    pub homographs: usize,
    /// Size of the shared title-qualifier pool.
    pub qualifiers: usize,
    pub topic_words: usize,
    pub filler_words: usize,
    pub content_tokens: usize,
    pub query_tokens: usize,
    pub train_queries: usize,
    pub test_queries: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            docs: 40,
            homographs: 10,
            qualifiers: 4,
            topic_words: 8,
            filler_words: 30,
            content_tokens: 40,
            query_tokens: 4,
            train_queries: 200,
            test_queries: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub corpus: Corpus,
    pub train: Vec<RetrievalExample>,
    pub test: Vec<RetrievalExample>,
    /// Homograph surfaces with the ordinals of the two documents carrying each.
    pub homographs: Vec<(String, [usize; 2])>,
}

const ONSETS: [&str; 14] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Deterministic pool of distinct pseudo-words.
fn word_pool(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| {
                format!(
                    "{}{}",
                    ONSETS.choose(rng).unwrap(),
                    NUCLEI.choose(rng).unwrap()
                )
            })
            .collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Generates the homograph corpus. Documents `2i` and `2i+1` (for `i < homographs`)
/// share a title head; every document has its own topic vocabulary, all of which
/// occurs in its content. Test queries avoid exact repeats of training queries.
pub fn homograph_corpus(cfg: &SynthConfig) -> Result<SynthData> {
    let topic_per_query = cfg.query_tokens.saturating_sub(1);
    if cfg.docs < 2 * cfg.homographs || cfg.qualifiers < 2 || cfg.topic_words < topic_per_query {
        return Err(Error::invalid(
            "inconsistent synthetic corpus configuration",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5E));
    let unique_heads = cfg.docs - 2 * cfg.homographs;
    let pool = word_pool(
        cfg.homographs
            + unique_heads
            + cfg.qualifiers
            + cfg.docs * cfg.topic_words
            + cfg.filler_words,
        &mut rng,
    );
    let mut words = pool.into_iter();
    let mut take = |n: usize| -> Vec<String> { words.by_ref().take(n).collect() };
    let homograph_heads = take(cfg.homographs);
    let heads_unique = take(unique_heads);
    let qualifiers = take(cfg.qualifiers);
    let topics: Vec<Vec<String>> = (0..cfg.docs).map(|_| take(cfg.topic_words)).collect();
    let fillers = take(cfg.filler_words);

    let mut docs = Vec::with_capacity(cfg.docs);
    let mut homographs = Vec::new();
    for i in 0..cfg.docs {
        let head = if i < 2 * cfg.homographs {
            &homograph_heads[i / 2]
        } else {
            &heads_unique[i - 2 * cfg.homographs]
        };
        let title = format!("{head} {}", qualifiers[i % cfg.qualifiers]);
        let mut content: Vec<&str> = topics[i].iter().map(String::as_str).collect();
        content.shuffle(&mut rng);
        while content.len() < cfg.content_tokens {
            if rng.random_bool(0.7) {
                content.push(topics[i].choose(&mut rng).unwrap().as_str());
            } else {
                content.push(fillers.choose(&mut rng).unwrap().as_str());
            }
        }
        docs.push(Document {
            doc_id: format!("syn{i:03}"),
            title,
            content: content.join(" "),
        });
    }
    for (h, head) in homograph_heads.iter().enumerate() {
        homographs.push((head.clone(), [2 * h, 2 * h + 1]));
    }

    let doc_fillers: Vec<Vec<String>> = docs
        .iter()
        .map(|d| {
            let set: BTreeSet<&str> = d.content.split(' ').collect();
            fillers
                .iter()
                .filter(|f| set.contains(f.as_str()))
                .cloned()
                .collect()
        })
        .collect();
    let query = |doc: usize, rng: &mut ChaCha8Rng| -> String {
        let mut q: Vec<&str> = topics[doc]
            .choose_multiple(rng, topic_per_query)
            .map(String::as_str)
            .collect();
        if let Some(f) = doc_fillers[doc].choose(rng) {
            q.push(f);
        }
        q.shuffle(rng);
        q.join(" ")
    };
    let mut train = Vec::with_capacity(cfg.train_queries);
    let mut seen = BTreeSet::new();
    for j in 0..cfg.train_queries {
        let doc = j % cfg.docs;
        let q = query(doc, &mut rng);
        seen.insert(q.clone());
        train.push(RetrievalExample {
            query: q,
            provenance: vec![docs[doc].doc_id.clone()],
        });
    }
    let mut test_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x7E));
    let mut test = Vec::with_capacity(cfg.test_queries);
    for j in 0..cfg.test_queries {
        // Homograph documents come first so they are always covered.
        let doc = j % cfg.docs;
        let mut q = query(doc, &mut test_rng);
        for _ in 0..32 {
            if !seen.contains(&q) {
                break;
            }
            q = query(doc, &mut test_rng);
        }
        test.push(RetrievalExample {
            query: q,
            provenance: vec![docs[doc].doc_id.clone()],
        });
    }
    Ok(SynthData {
        corpus: Corpus::new(docs)?,
        train,
        test,
        homographs,
    })
}

/// Three documents where each one's content names the next one's title.
pub fn chain_corpus() -> (Corpus, Vec<RetrievalExample>) {
    let doc = |id: &str, title: &str, content: &str| Document {
        doc_id: id.into(),
        title: title.into(),
        content: content.into(),
    };
    let corpus = Corpus::new(vec![
        doc(
            "c0",
            "river port",
            "the river port was founded by traders.\n\nits sister city is hill fort",
        ),
        doc(
            "c1",
            "hill fort",
            "hill fort stands above the valley.\n\nits builder was stone mason",
        ),
        doc(
            "c2",
            "stone mason",
            "stone mason carved the walls of hill fort",
        ),
    ])
    .expect("static chain corpus is valid");
    let examples = vec![RetrievalExample {
        query: "who built the sister city of river port".into(),
        provenance: vec!["c0".into(), "c1".into()],
    }];
    (corpus, examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TargetMode, Vocab};

    #[test]
    fn homograph_corpus_shape() {
        let data = homograph_corpus(&SynthConfig::default()).unwrap();
        assert_eq!(data.corpus.len(), 40);
        assert_eq!(data.train.len(), 200);
        assert_eq!(data.test.len(), 50);
        assert_eq!(data.homographs.len(), 10);
        let titles: BTreeSet<&str> = data
            .corpus
            .docs()
            .iter()
            .map(|d| d.title.as_str())
            .collect();
        assert_eq!(titles.len(), 40);
        for (head, [a, b]) in &data.homographs {
            let (da, db) = (data.corpus.doc(*a), data.corpus.doc(*b));
            assert!(da.title.starts_with(head.as_str()) && db.title.starts_with(head.as_str()));
            let ca: BTreeSet<&str> = da.content.split(' ').collect();
            let cb: BTreeSet<&str> = db.content.split(' ').collect();
            assert!(ca.len() > 3 && ca != cb);
        }
        let vocab = Vocab::build(&data.corpus, TargetMode::Title).unwrap();
        for ex in data.train.iter().chain(&data.test) {
            assert!(!vocab.tokenize(&ex.query).iter().any(|t| t.is_reserved()));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = homograph_corpus(&SynthConfig::default()).unwrap();
        let b = homograph_corpus(&SynthConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = homograph_corpus(&SynthConfig {
            seed: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_ne!(a.corpus, c.corpus);
    }
}
