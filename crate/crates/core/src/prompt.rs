//! Prompt templates (hard and continuous), the verbalizer, and cloze
//! class scoring over masked-token distributions.
//!
//! The two hard templates are `<left> <right> They are [MASK]` and
//! `<left> is [MASK] to <right>`. Continuous variants replace each
//! natural-language template word with a trainable `[PROMPT_k]` slot,
//! preserving positions and count, so hard and continuous variants of
//! the same template produce sequences of identical length and mask
//! position. Template interiors use bare serializations; the sequence
//! is framed once as `[CLS] T(x) [SEP]` before the model.
//!
//! Templates and verbalizers are immutable; scoring is pure. Safe for
//! concurrent use.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Entity, MatchLabel};
use crate::model::{
    self, forward_mask, mean_class_scores, ClassWords, ForwardMode, ModelError, ModelParameters,
};
use crate::serialize::{
    serialize_entity, summarize, token_count, CorpusStats, Piece, SpecialToken, TokenSequence,
    Vocabulary, MAX_PROMPT_TOKENS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    HardT1,
    HardT2,
    ContinuousT1,
    ContinuousT2,
}

impl TemplateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateKind::HardT1 => "hard-t1",
            TemplateKind::HardT2 => "hard-t2",
            TemplateKind::ContinuousT1 => "continuous-t1",
            TemplateKind::ContinuousT2 => "continuous-t2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "hard-t1" => Some(TemplateKind::HardT1),
            "hard-t2" => Some(TemplateKind::HardT2),
            "continuous-t1" => Some(TemplateKind::ContinuousT1),
            "continuous-t2" => Some(TemplateKind::ContinuousT2),
            _ => None,
        }
    }

    pub fn is_continuous(self) -> bool {
        matches!(self, TemplateKind::ContinuousT1 | TemplateKind::ContinuousT2)
    }

    /// Natural-language words the continuous variant replaces.
    fn word_count(self) -> usize {
        2
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("prompt token count {n} outside 1..={max}")]
    BadPromptCount { n: usize, max: usize },
    #[error("n_prompt_tokens only applies to continuous templates")]
    PromptCountOnHardTemplate,
    #[error("template word {word:?} missing from vocabulary")]
    TemplateWordMissing { word: String },
    #[error("sequence needs {needed} tokens but budget is {budget}")]
    OverBudget { needed: usize, budget: usize },
    #[error("verbalizer class {class} is empty")]
    EmptyClass { class: usize },
    #[error("verbalizer word {word:?} missing from vocabulary")]
    VerbalizerWordMissing { word: String },
    #[error("verbalizer word {word:?} appears in both classes")]
    OverlappingClasses { word: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A prompt template. Continuous kinds carry the number of trainable
/// prompt tokens (default: the replaced word count, keeping lengths
/// aligned with the hard variant).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    pub n_prompt_tokens: usize,
}

impl PromptTemplate {
    pub fn new(kind: TemplateKind) -> Self {
        let n_prompt_tokens = if kind.is_continuous() { kind.word_count() } else { 0 };
        PromptTemplate { kind, n_prompt_tokens }
    }

    pub fn with_prompt_tokens(kind: TemplateKind, n: usize) -> Result<Self, PromptError> {
        if !kind.is_continuous() {
            return Err(PromptError::PromptCountOnHardTemplate);
        }
        if n == 0 || n > MAX_PROMPT_TOKENS {
            return Err(PromptError::BadPromptCount { n, max: MAX_PROMPT_TOKENS });
        }
        Ok(PromptTemplate { kind, n_prompt_tokens: n })
    }

    /// Tokens the template adds on top of the two serialized sides,
    /// including the mask but not the `[CLS]`/`[SEP]` frame.
    pub fn overhead(&self) -> usize {
        match self.kind {
            TemplateKind::HardT1 | TemplateKind::HardT2 => 3,
            TemplateKind::ContinuousT1 | TemplateKind::ContinuousT2 => self.n_prompt_tokens + 1,
        }
    }
}

fn word_id(vocab: &Vocabulary, word: &str) -> Result<u32, PromptError> {
    vocab.id_of_word(word).ok_or_else(|| PromptError::TemplateWordMissing { word: word.to_string() })
}

fn side_pieces(entity: &Entity, stats: &CorpusStats, budget: usize) -> Vec<Piece> {
    let s = serialize_entity(entity);
    let shrunk = summarize(&s, stats, budget);
    crate::serialize::split_pieces(&shrunk)
}

/// Applies a template to a candidate pair and tokenizes the result:
/// `[CLS] T(x) [SEP]` with exactly one mask. When the assembled
/// sequence would exceed `max_len`, each side is first summarized to
/// an equal half of the remaining budget.
pub fn apply_template(
    left: &Entity,
    right: &Entity,
    template: &PromptTemplate,
    vocab: &Vocabulary,
    stats: &CorpusStats,
    max_len: usize,
) -> Result<TokenSequence, PromptError> {
    let frame = 2;
    let overhead = template.overhead() + frame;
    if max_len < overhead + 2 {
        return Err(PromptError::OverBudget { needed: overhead + 2, budget: max_len });
    }
    let left_s = serialize_entity(left);
    let right_s = serialize_entity(right);
    let total = token_count(&left_s) + token_count(&right_s) + overhead;
    let side_budget = (max_len - overhead) / 2;
    let (left_pieces, right_pieces) = if total > max_len {
        (side_pieces(left, stats, side_budget), side_pieces(right, stats, side_budget))
    } else {
        (
            crate::serialize::split_pieces(&left_s),
            crate::serialize::split_pieces(&right_s),
        )
    };

    let mut ids: Vec<u32> = Vec::new();
    ids.push(SpecialToken::Cls.id());
    let mask_position: usize;
    let push_pieces = |ids: &mut Vec<u32>, pieces: &[Piece]| {
        for p in pieces {
            ids.push(vocab.piece_id(p));
        }
    };
    match template.kind {
        TemplateKind::HardT1 => {
            push_pieces(&mut ids, &left_pieces);
            push_pieces(&mut ids, &right_pieces);
            ids.push(word_id(vocab, "they")?);
            ids.push(word_id(vocab, "are")?);
            mask_position = ids.len();
            ids.push(SpecialToken::Mask.id());
        }
        TemplateKind::HardT2 => {
            push_pieces(&mut ids, &left_pieces);
            ids.push(word_id(vocab, "is")?);
            mask_position = ids.len();
            ids.push(SpecialToken::Mask.id());
            ids.push(word_id(vocab, "to")?);
            push_pieces(&mut ids, &right_pieces);
        }
        TemplateKind::ContinuousT1 => {
            push_pieces(&mut ids, &left_pieces);
            push_pieces(&mut ids, &right_pieces);
            for k in 0..template.n_prompt_tokens {
                ids.push(SpecialToken::Prompt(k).id());
            }
            mask_position = ids.len();
            ids.push(SpecialToken::Mask.id());
        }
        TemplateKind::ContinuousT2 => {
            push_pieces(&mut ids, &left_pieces);
            let before = template.n_prompt_tokens.div_ceil(2);
            for k in 0..before {
                ids.push(SpecialToken::Prompt(k).id());
            }
            mask_position = ids.len();
            ids.push(SpecialToken::Mask.id());
            for k in before..template.n_prompt_tokens {
                ids.push(SpecialToken::Prompt(k).id());
            }
            push_pieces(&mut ids, &right_pieces);
        }
    }
    ids.push(SpecialToken::Sep.id());
    if ids.len() > max_len {
        return Err(PromptError::OverBudget { needed: ids.len(), budget: max_len });
    }
    Ok(TokenSequence { ids, mask_position: Some(mask_position) })
}

/// Label-word sets mapping the two classes onto vocabulary words.
/// Class word sets are disjoint, non-empty, and fully in-vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verbalizer {
    words: [Vec<String>; 2],
    class_words: ClassWords,
}

impl Verbalizer {
    /// Default label words: index 0 (mismatched) and 1 (matched).
    pub fn default_words() -> [Vec<String>; 2] {
        [
            vec!["mismatched".into(), "different".into(), "irrelevant".into()],
            vec!["matched".into(), "similar".into(), "relevant".into()],
        ]
    }

    pub fn new(words: [Vec<String>; 2], vocab: &Vocabulary) -> Result<Self, PromptError> {
        let mut ids: [Vec<u32>; 2] = [Vec::new(), Vec::new()];
        for (class, class_list) in words.iter().enumerate() {
            if class_list.is_empty() {
                return Err(PromptError::EmptyClass { class });
            }
            for word in class_list {
                let id = vocab
                    .id_of_word(word)
                    .ok_or_else(|| PromptError::VerbalizerWordMissing { word: word.clone() })?;
                ids[class].push(id);
            }
        }
        for word in &words[0] {
            if words[1].contains(word) {
                return Err(PromptError::OverlappingClasses { word: word.clone() });
            }
        }
        Ok(Verbalizer { words, class_words: ClassWords { ids } })
    }

    pub fn build_default(vocab: &Vocabulary) -> Result<Self, PromptError> {
        Self::new(Self::default_words(), vocab)
    }

    pub fn words(&self) -> &[Vec<String>; 2] {
        &self.words
    }

    pub fn class_words(&self) -> &ClassWords {
        &self.class_words
    }

    /// All label words, for vocabulary-corpus construction.
    pub fn all_words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().flatten().map(|s| s.as_str())
    }
}

/// Cloze class scores: per class, the arithmetic mean of the mask
/// probabilities of its label words. Scores need not sum to one.
pub fn class_score(mask_dist: &[f64], verbalizer: &Verbalizer) -> Result<[f64; 2], PromptError> {
    Ok(mean_class_scores(mask_dist, verbalizer.class_words())?)
}

/// Predicted label plus normalized class probabilities for an encoded
/// pair. Deterministic when dropout is disabled; exact ties predict
/// mismatched.
pub fn predict(
    seq: &TokenSequence,
    params: &ModelParameters,
    verbalizer: &Verbalizer,
) -> Result<(MatchLabel, [f64; 2]), PromptError> {
    let dist = forward_mask(params, seq, ForwardMode::Deterministic)?;
    let scores = class_score(&dist, verbalizer)?;
    let probs = model::normalize_scores(scores)?;
    Ok((model::scores_to_label(probs), probs))
}
