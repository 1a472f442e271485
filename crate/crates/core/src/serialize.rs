//! Turning entities and pairs into token sequences.
//!
//! Serialization renders a record as a `[COL]`/`[VAL]`-tagged string;
//! nested objects recurse, lists flatten to one space-joined string,
//! textual entities pass through unchanged. Pair framing wraps two
//! serializations as `[CLS] left [SEP] right [SEP]`, summarizing each
//! side by TF-IDF when the tokenized result would exceed its budget.
//! The word-level vocabulary replaces a pretrained subword vocabulary:
//! lowercased, punctuation-split, specials at fixed low ids.
//!
//! Everything here is pure; a built [`Vocabulary`] is immutable and
//! safe to share across threads.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::data::{Entity, EntityBody, SemiValue};
use crate::fmath;

/// Prompt slots reserved in every vocabulary for continuous templates.
pub const MAX_PROMPT_TOKENS: usize = 8;

/// Bundled stopword list (one word per line, versioned resource).
pub const STOPWORDS: &str = include_str!("../resources/stopwords_v1.txt");

/// Reserved tokens. They occupy the lowest ids of every vocabulary, in
/// the order `[PAD] [UNK] [CLS] [SEP] [COL] [VAL] [MASK] [PROMPT_0..]`,
/// and never collide with corpus words (corpus tokenization strips the
/// brackets off any ordinary word).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecialToken {
    Pad,
    Unk,
    Cls,
    Sep,
    Col,
    Val,
    Mask,
    Prompt(usize),
}

impl SpecialToken {
    pub const COUNT: usize = 7 + MAX_PROMPT_TOKENS;

    pub fn id(self) -> u32 {
        match self {
            SpecialToken::Pad => 0,
            SpecialToken::Unk => 1,
            SpecialToken::Cls => 2,
            SpecialToken::Sep => 3,
            SpecialToken::Col => 4,
            SpecialToken::Val => 5,
            SpecialToken::Mask => 6,
            SpecialToken::Prompt(k) => {
                debug_assert!(k < MAX_PROMPT_TOKENS);
                7 + k as u32
            }
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        match id {
            0 => Some(SpecialToken::Pad),
            1 => Some(SpecialToken::Unk),
            2 => Some(SpecialToken::Cls),
            3 => Some(SpecialToken::Sep),
            4 => Some(SpecialToken::Col),
            5 => Some(SpecialToken::Val),
            6 => Some(SpecialToken::Mask),
            k if (k as usize) < Self::COUNT => Some(SpecialToken::Prompt(k as usize - 7)),
            _ => None,
        }
    }

    pub fn marker(self) -> String {
        match self {
            SpecialToken::Pad => "[PAD]".to_owned(),
            SpecialToken::Unk => "[UNK]".to_owned(),
            SpecialToken::Cls => "[CLS]".to_owned(),
            SpecialToken::Sep => "[SEP]".to_owned(),
            SpecialToken::Col => "[COL]".to_owned(),
            SpecialToken::Val => "[VAL]".to_owned(),
            SpecialToken::Mask => "[MASK]".to_owned(),
            SpecialToken::Prompt(k) => format!("[PROMPT_{k}]"),
        }
    }

    pub fn from_marker(s: &str) -> Option<Self> {
        match s {
            "[PAD]" => Some(SpecialToken::Pad),
            "[UNK]" => Some(SpecialToken::Unk),
            "[CLS]" => Some(SpecialToken::Cls),
            "[SEP]" => Some(SpecialToken::Sep),
            "[COL]" => Some(SpecialToken::Col),
            "[VAL]" => Some(SpecialToken::Val),
            "[MASK]" => Some(SpecialToken::Mask),
            _ => {
                let inner = s.strip_prefix("[PROMPT_")?.strip_suffix(']')?;
                let k: usize = inner.parse().ok()?;
                (k < MAX_PROMPT_TOKENS).then_some(SpecialToken::Prompt(k))
            }
        }
    }
}

/// One unit of tokenized text: a reserved marker or a lowercased word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Piece {
    Special(SpecialToken),
    Word(String),
}

impl Piece {
    /// Surface form used in vocabulary files, stats, and detokenized
    /// output.
    pub fn surface(&self) -> String {
        match self {
            Piece::Special(s) => s.marker(),
            Piece::Word(w) => w.clone(),
        }
    }
}

/// Lowercased whitespace/punctuation tokenization with special-marker
/// recognition. Punctuation separates words and is discarded; markers
/// like `[COL]` are matched case-sensitively before lowercasing.
pub fn split_pieces(text: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut word = String::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < text.len() {
        if bytes[i] == b'[' {
            // Longest marker is "[PROMPT_k]"; bound the lookahead.
            let window = text.len().min(i + 12);
            if let Some(end) = text[i..window].find(']') {
                if let Some(special) = SpecialToken::from_marker(&text[i..i + end + 1]) {
                    if !word.is_empty() {
                        pieces.push(Piece::Word(core::mem::take(&mut word)));
                    }
                    pieces.push(Piece::Special(special));
                    i += end + 1;
                    continue;
                }
            }
        }
        let ch = text[i..].chars().next().expect("char at byte boundary");
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else if !word.is_empty() {
            pieces.push(Piece::Word(core::mem::take(&mut word)));
        }
        i += ch.len_utf8();
    }
    if !word.is_empty() {
        pieces.push(Piece::Word(word));
    }
    pieces
}

/// Token count of a string under [`split_pieces`].
pub fn token_count(text: &str) -> usize {
    split_pieces(text).len()
}

fn push_attr(parts: &mut Vec<String>, name: &str, rendered_value: String) {
    parts.push("[COL]".to_owned());
    parts.push(name.to_owned());
    parts.push("[VAL]".to_owned());
    if !rendered_value.is_empty() {
        parts.push(rendered_value);
    }
}

fn render_semi_value(value: &SemiValue) -> String {
    match value {
        SemiValue::Scalar(s) => s.clone(),
        SemiValue::List(items) => {
            let rendered: Vec<String> =
                items.iter().map(render_semi_value).filter(|s| !s.is_empty()).collect();
            rendered.join(" ")
        }
        SemiValue::Object(fields) => {
            let mut parts = Vec::new();
            for (name, v) in fields {
                push_attr(&mut parts, name, render_semi_value(v));
            }
            parts.join(" ")
        }
    }
}

/// Renders an entity as a tagged token string.
///
/// Structured: `[COL] a1 [VAL] v1 ... [COL] an [VAL] vn` in source
/// attribute order. Semi-structured: the same, with nested objects
/// expanded recursively in place of the value and lists flattened to a
/// single space-joined string. Text: the text unchanged.
pub fn serialize_entity(entity: &Entity) -> String {
    match &entity.body {
        EntityBody::Structured(attrs) => {
            let mut parts = Vec::new();
            for (name, value) in attrs {
                push_attr(&mut parts, name, value.clone());
            }
            parts.join(" ")
        }
        EntityBody::Semi(fields) => {
            let mut parts = Vec::new();
            for (name, value) in fields {
                push_attr(&mut parts, name, render_semi_value(value));
            }
            parts.join(" ")
        }
        EntityBody::Text(text) => text.clone(),
    }
}

/// Document frequencies over a training corpus, for TF-IDF scoring.
#[derive(Debug, Clone, Default)]
pub struct CorpusStats {
    n_docs: usize,
    df: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a str>) -> Self {
        let mut stats = CorpusStats::default();
        for doc in docs {
            stats.n_docs += 1;
            let mut seen = BTreeSet::new();
            for piece in split_pieces(doc) {
                let token = piece.surface();
                if seen.insert(token.clone()) {
                    *stats.df.entry(token).or_insert(0) += 1;
                }
            }
        }
        stats
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn doc_freq(&self, token: &str) -> usize {
        self.df.get(token).copied().unwrap_or(0)
    }

    /// idf = ln((1+N)/(1+df)) + 1.
    pub fn idf(&self, token: &str) -> f64 {
        fmath::ln((1.0 + self.n_docs as f64) / (1.0 + self.doc_freq(token) as f64)) + 1.0
    }
}

fn stopword_set() -> BTreeSet<&'static str> {
    STOPWORDS.lines().filter(|w| !w.is_empty()).collect()
}

/// Shrinks `text` to at most `budget` tokens, keeping the highest
/// TF-IDF non-stopword tokens in their original order.
///
/// Text already within budget is returned unchanged. When over budget,
/// stopwords are dropped first; if still over, only the `budget`
/// best-scoring token occurrences survive (tf = raw count in this
/// text, ties broken by earlier position).
pub fn summarize(text: &str, stats: &CorpusStats, budget: usize) -> String {
    let pieces = split_pieces(text);
    if pieces.len() <= budget {
        return text.to_owned();
    }
    let stop = stopword_set();
    let kept: Vec<(usize, String)> = pieces
        .iter()
        .enumerate()
        .map(|(pos, p)| (pos, p.surface()))
        .filter(|(_, token)| !stop.contains(token.as_str()))
        .collect();
    let survivors: Vec<&(usize, String)> = if kept.len() <= budget {
        kept.iter().collect()
    } else {
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, token) in &kept {
            *tf.entry(token).or_insert(0) += 1;
        }
        let mut ranked: Vec<&(usize, String)> = kept.iter().collect();
        ranked.sort_by(|a, b| {
            let score_a = tf[a.1.as_str()] as f64 * stats.idf(&a.1);
            let score_b = tf[b.1.as_str()] as f64 * stats.idf(&b.1);
            score_b.total_cmp(&score_a).then(a.0.cmp(&b.0))
        });
        let mut chosen: Vec<&(usize, String)> = ranked.into_iter().take(budget).collect();
        chosen.sort_by_key(|(pos, _)| *pos);
        chosen
    };
    survivors.iter().map(|(_, token)| token.as_str()).collect::<Vec<_>>().join(" ")
}

/// Frames a candidate pair as `[CLS] left [SEP] right [SEP]`.
///
/// When the tokenized result would exceed `budget`, each side is first
/// summarized to an equal half of the remaining budget (three tokens
/// go to the frame).
pub fn serialize_pair(left: &Entity, right: &Entity, stats: &CorpusStats, budget: usize) -> String {
    assert!(budget >= 8, "pair budget must be at least 8 tokens");
    let mut l = serialize_entity(left);
    let mut r = serialize_entity(right);
    let total = token_count(&l) + token_count(&r) + 3;
    if total > budget {
        let half = (budget - 3) / 2;
        l = summarize(&l, stats, half);
        r = summarize(&r, stats, half);
    }
    let mut parts = Vec::with_capacity(5);
    parts.push("[CLS]".to_owned());
    if !l.is_empty() {
        parts.push(l);
    }
    parts.push("[SEP]".to_owned());
    if !r.is_empty() {
        parts.push(r);
    }
    parts.push("[SEP]".to_owned());
    parts.join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("vocabulary corpus is empty")]
    EmptyCorpus,
    #[error("duplicate token {token:?} in vocabulary")]
    DuplicateToken { token: String },
    #[error("vocabulary missing reserved token {marker} at id {id}")]
    BadSpecial { marker: String, id: u32 },
}

/// Bijective word/id map with reserved specials at fixed low ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl Vocabulary {
    fn from_words(words: Vec<String>) -> Result<Self, VocabError> {
        let mut ids = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            if ids.insert(w.clone(), i as u32).is_some() {
                return Err(VocabError::DuplicateToken { token: w.clone() });
            }
        }
        for i in 0..SpecialToken::COUNT {
            let marker = SpecialToken::from_id(i as u32).expect("reserved id").marker();
            if words.get(i) != Some(&marker) {
                return Err(VocabError::BadSpecial { marker, id: i as u32 });
            }
        }
        Ok(Vocabulary { words, ids })
    }

    /// Reconstructs a vocabulary from its line-per-token file form.
    pub fn from_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> Result<Self, VocabError> {
        Self::from_words(lines.into_iter().map(|s| s.to_owned()).collect())
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn id_of_word(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    pub fn token_str(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(|s| s.as_str())
    }

    /// Tokens in id order, as written to a vocabulary file.
    pub fn lines(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(|s| s.as_str())
    }

    pub fn piece_id(&self, piece: &Piece) -> u32 {
        match piece {
            Piece::Special(s) => s.id(),
            Piece::Word(w) => self.id_of_word(w).unwrap_or(SpecialToken::Unk.id()),
        }
    }
}

/// Builds a word-level vocabulary over a corpus: words with frequency
/// >= `min_freq` enter after the reserved specials, ordered by
/// frequency descending then lexicographically. Corpus order never
/// affects the result.
pub fn build_vocab<'a>(
    corpus: impl IntoIterator<Item = &'a str>,
    min_freq: usize,
) -> Result<Vocabulary, VocabError> {
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    let mut any_doc = false;
    for doc in corpus {
        any_doc = true;
        for piece in split_pieces(doc) {
            if let Piece::Word(w) = piece {
                *freq.entry(w).or_insert(0) += 1;
            }
        }
    }
    if !any_doc {
        return Err(VocabError::EmptyCorpus);
    }
    let mut ranked: Vec<(String, usize)> =
        freq.into_iter().filter(|&(_, n)| n >= min_freq.max(1)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut words: Vec<String> =
        (0..SpecialToken::COUNT).map(|i| SpecialToken::from_id(i as u32).unwrap().marker()).collect();
    words.extend(ranked.into_iter().map(|(w, _)| w));
    Vocabulary::from_words(words)
}

/// A tokenized sequence ready for the model. At most one `[MASK]`;
/// `mask_position` points at it when present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask_position: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenizeError {
    #[error("more than one [MASK] marker in input")]
    MultipleMasks,
    #[error("[MASK] at token {position} does not fit max_len {max_len}")]
    MaskBeyondMaxLen { position: usize, max_len: usize },
}

/// Maps pieces to ids against a vocabulary. Unknown words become
/// `[UNK]`; sequences longer than `max_len` are tail-truncated (the
/// upstream summarization makes this a last resort).
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence, TokenizeError> {
    let pieces = split_pieces(text);
    let mut mask_position = None;
    for (pos, piece) in pieces.iter().enumerate() {
        if matches!(piece, Piece::Special(SpecialToken::Mask)) {
            if mask_position.is_some() {
                return Err(TokenizeError::MultipleMasks);
            }
            mask_position = Some(pos);
        }
    }
    if let Some(position) = mask_position {
        if position >= max_len {
            return Err(TokenizeError::MaskBeyondMaxLen { position, max_len });
        }
    }
    let ids: Vec<u32> = pieces.iter().take(max_len).map(|p| vocab.piece_id(p)).collect();
    Ok(TokenSequence { ids, mask_position })
}

/// Renders a token sequence back to marker/word text.
pub fn detokenize(seq: &TokenSequence, vocab: &Vocabulary) -> String {
    seq.ids
        .iter()
        .map(|&id| vocab.token_str(id).unwrap_or("[UNK]").to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Entity;
    use alloc::vec;

    #[test]
    fn structured_serialization_matches_worked_example() {
        let entity = Entity::structured(
            "p1",
            [
                ("title", "efficient similarity search and classification via rank aggregation"),
                ("authors", "ronald fagin ravi kumar d.sivakumar"),
                ("venue", "SIGMOD"),
                ("year", "2003"),
            ],
        );
        let s = serialize_entity(&entity);
        assert_eq!(
            s,
            "[COL] title [VAL] efficient similarity search and classification via rank aggregation \
             [COL] authors [VAL] ronald fagin ravi kumar d.sivakumar \
             [COL] venue [VAL] SIGMOD [COL] year [VAL] 2003"
        );
    }

    #[test]
    fn semi_serialization_flattens_lists() {
        let entity = Entity {
            id: "p2".into(),
            body: EntityBody::Semi(vec![
                (
                    "title".into(),
                    SemiValue::Scalar(
                        "efficient similarity search and classification via rank aggregation".into(),
                    ),
                ),
                ("year".into(), SemiValue::Scalar("2003".into())),
                (
                    "authors".into(),
                    SemiValue::List(vec![
                        SemiValue::Scalar("ronald fagin".into()),
                        SemiValue::Scalar("ravi kumar".into()),
                        SemiValue::Scalar("d.sivakumar".into()),
                    ]),
                ),
            ]),
        };
        let s = serialize_entity(&entity);
        assert_eq!(
            s,
            "[COL] title [VAL] efficient similarity search and classification via rank aggregation \
             [COL] year [VAL] 2003 [COL] authors [VAL] ronald fagin ravi kumar d.sivakumar"
        );
    }

    #[test]
    fn nested_object_recurses_in_place_of_value() {
        let entity = Entity {
            id: "x".into(),
            body: EntityBody::Semi(vec![(
                "a".into(),
                SemiValue::Object(vec![("b".into(), SemiValue::Scalar("c".into()))]),
            )]),
        };
        assert_eq!(serialize_entity(&entity), "[COL] a [VAL] [COL] b [VAL] c");
    }

    #[test]
    fn text_entity_passes_through() {
        let entity = Entity::text("7", "an abstract about rank aggregation");
        assert_eq!(serialize_entity(&entity), "an abstract about rank aggregation");
    }

    #[test]
    fn split_pieces_recognizes_specials_and_strips_punctuation() {
        let pieces = split_pieces("[CLS] Foo-Bar, [VAL] d.sivakumar 2003 [MASK]");
        assert_eq!(
            pieces,
            vec![
                Piece::Special(SpecialToken::Cls),
                Piece::Word("foo".into()),
                Piece::Word("bar".into()),
                Piece::Special(SpecialToken::Val),
                Piece::Word("d".into()),
                Piece::Word("sivakumar".into()),
                Piece::Word("2003".into()),
                Piece::Special(SpecialToken::Mask),
            ]
        );
    }

    #[test]
    fn split_pieces_treats_unknown_brackets_as_punctuation() {
        let pieces = split_pieces("[NOPE] things [PROMPT_0]");
        assert_eq!(
            pieces,
            vec![
                Piece::Word("nope".into()),
                Piece::Word("things".into()),
                Piece::Special(SpecialToken::Prompt(0)),
            ]
        );
    }

    #[test]
    fn summarize_within_budget_is_unchanged() {
        let stats = CorpusStats::build(["alpha beta", "beta gamma"]);
        assert_eq!(summarize("Keep Me, intact!", &stats, 10), "Keep Me, intact!");
        assert_eq!(summarize("", &stats, 3), "");
    }

    #[test]
    fn summarize_matches_brute_force_tfidf_oracle() {
        // Two-document toy corpus; summarize a third text to 3 tokens.
        let doc_a = "rank aggregation methods for search";
        let doc_b = "similarity search over tables";
        let stats = CorpusStats::build([doc_a, doc_b]);
        let text = "the rank rank similarity tables engine";

        // Independent brute-force TF-IDF over the same formula:
        // tf = raw count in `text`, idf = ln((1+N)/(1+df)) + 1.
        let tokens = ["the", "rank", "rank", "similarity", "tables", "engine"];
        let df = |t: &str| [doc_a, doc_b].iter().filter(|d| d.split(' ').any(|w| w == t)).count();
        let tf = |t: &str| tokens.iter().filter(|&&x| x == t).count();
        let idf = |t: &str| ((1.0 + 2.0) / (1.0 + df(t) as f64)).ln() + 1.0;
        let score = |t: &str| tf(t) as f64 * idf(t);
        // Non-stopword occurrences with position: rank(1), rank(2),
        // similarity(3), tables(4), engine(5). "the" is a stopword.
        let mut occs = vec![(1usize, "rank"), (2, "rank"), (3, "similarity"), (4, "tables"), (5, "engine")];
        occs.sort_by(|a, b| score(b.1).total_cmp(&score(a.1)).then(a.0.cmp(&b.0)));
        let mut expect: Vec<(usize, &str)> = occs.into_iter().take(3).collect();
        expect.sort();
        let expected = expect.iter().map(|(_, t)| *t).collect::<Vec<_>>().join(" ");

        assert_eq!(summarize(text, &stats, 3), expected);
        // rank appears twice (tf 2) and in only one doc: both copies win.
        assert_eq!(summarize(text, &stats, 3), "rank rank engine");
    }

    #[test]
    fn summarize_drops_stopwords_first() {
        let stats = CorpusStats::build(["alpha beta"]);
        // Over budget, but removing stopwords already fits: all content
        // words survive regardless of score.
        assert_eq!(summarize("the alpha of beta and gamma", &stats, 3), "alpha beta gamma");
    }

    #[test]
    fn build_vocab_orders_by_frequency_then_word() {
        let vocab = build_vocab(["a b", "a"], 1).unwrap();
        let a = vocab.id_of_word("a").unwrap();
        let b = vocab.id_of_word("b").unwrap();
        assert_eq!(a as usize, SpecialToken::COUNT);
        assert_eq!(b, a + 1);

        let vocab = build_vocab(["a b", "a"], 2).unwrap();
        assert!(vocab.id_of_word("a").is_some());
        assert!(vocab.id_of_word("b").is_none());
    }

    #[test]
    fn build_vocab_is_order_independent() {
        let docs = ["beta alpha beta", "gamma alpha", "delta delta beta"];
        let shuffled = ["delta delta beta", "beta alpha beta", "gamma alpha"];
        let a = build_vocab(docs, 1).unwrap();
        let b = build_vocab(shuffled, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tokenize_maps_words_specials_and_unknowns() {
        let vocab = build_vocab(["a b c"], 1).unwrap();
        let seq = tokenize("[CLS] a [SEP]", &vocab, 16).unwrap();
        assert_eq!(
            seq.ids,
            vec![SpecialToken::Cls.id(), vocab.id_of_word("a").unwrap(), SpecialToken::Sep.id()]
        );
        assert_eq!(seq.mask_position, None);

        let seq = tokenize("zzz", &vocab, 16).unwrap();
        assert_eq!(seq.ids, vec![SpecialToken::Unk.id()]);
    }

    #[test]
    fn tokenize_tracks_single_mask() {
        let vocab = build_vocab(["a b"], 1).unwrap();
        let seq = tokenize("a b [MASK]", &vocab, 16).unwrap();
        assert_eq!(seq.mask_position, Some(2));
        assert_eq!(
            tokenize("[MASK] a [MASK]", &vocab, 16).unwrap_err(),
            TokenizeError::MultipleMasks
        );
    }

    #[test]
    fn serialize_pair_frames_and_summarizes() {
        let stats = CorpusStats::build(["alpha beta gamma"]);
        let left = Entity::structured("1", [("title", "alpha beta")]);
        let right = Entity::text("2", "gamma delta");
        let s = serialize_pair(&left, &right, &stats, 64);
        assert_eq!(s, "[CLS] [COL] title [VAL] alpha beta [SEP] gamma delta [SEP]");

        let same = serialize_pair(&left, &left, &stats, 64);
        let inner = "[COL] title [VAL] alpha beta";
        assert_eq!(same, format!("[CLS] {inner} [SEP] {inner} [SEP]"));
    }

    #[test]
    fn long_pair_fits_budget_after_summarization() {
        let long_text: String =
            (0..200).map(|i| format!("tok{i}")).collect::<Vec<_>>().join(" ");
        let stats = CorpusStats::build([long_text.as_str()]);
        let left = Entity::text("1", long_text.as_str());
        let right = Entity::text("2", long_text.as_str());
        let s = serialize_pair(&left, &right, &stats, 64);
        assert!(token_count(&s) <= 64, "got {} tokens", token_count(&s));
        assert!(s.starts_with("[CLS] "));
        assert_eq!(s.matches("[SEP]").count(), 2);
    }

    #[test]
    fn vocab_file_lines_round_trip() {
        let vocab = build_vocab(["alpha beta beta"], 1).unwrap();
        let lines: Vec<&str> = vocab.lines().collect();
        assert_eq!(lines[SpecialToken::Unk.id() as usize], "[UNK]");
        let reloaded = Vocabulary::from_lines(lines.iter().copied()).unwrap();
        assert_eq!(reloaded, vocab);
    }
}
