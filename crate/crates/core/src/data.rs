//! Domain types shared by every other module: entities, candidate
//! pairs, dataset splits, scores, and the self-training configuration.
//!
//! Datasets are safe to share read-only across threads; all mutation
//! (pseudo-label selection, pruning) is single-writer and performed by
//! the self-training engine.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// One attribute value of a semi-structured record: a scalar string, a
/// list, or a nested object. Non-string scalars are stringified on
/// load, so scalars are always text here.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SemiValue {
    Scalar(String),
    List(Vec<SemiValue>),
    Object(Vec<(String, SemiValue)>),
}

/// Body of an entity record in one of the three supported shapes.
/// Attribute order is preserved exactly as given in the source table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntityBody {
    Structured(Vec<(String, String)>),
    Semi(Vec<(String, SemiValue)>),
    Text(String),
}

/// One record of an entity table. `id` is an opaque key, unique within
/// its table; it is a join key, not matching evidence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: String,
    pub body: EntityBody,
}

impl Entity {
    pub fn structured<I, S>(id: S, attrs: I) -> Self
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        Entity {
            id: id.into(),
            body: EntityBody::Structured(
                attrs.into_iter().map(|(a, v)| (a.into(), v.into())).collect(),
            ),
        }
    }

    pub fn text<S: Into<String>>(id: S, body: S) -> Self {
        Entity { id: id.into(), body: EntityBody::Text(body.into()) }
    }
}

/// Binary match label: 1 = matched, 0 = mismatched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MatchLabel {
    Mismatched,
    Matched,
}

impl MatchLabel {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(MatchLabel::Mismatched),
            1 => Some(MatchLabel::Matched),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            MatchLabel::Mismatched => 0,
            MatchLabel::Matched => 1,
        }
    }

    /// Index into 2-class score vectors.
    pub fn index(self) -> usize {
        self.bit() as usize
    }

    pub fn one_hot(self) -> [f64; 2] {
        match self {
            MatchLabel::Mismatched => [1.0, 0.0],
            MatchLabel::Matched => [0.0, 1.0],
        }
    }
}

/// A candidate pair referencing entities by id. `pseudo` marks labels
/// produced by a teacher model; once set it is never cleared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePair {
    pub left: String,
    pub right: String,
    pub label: Option<MatchLabel>,
    pub pseudo: bool,
}

impl CandidatePair {
    pub fn new<S: Into<String>>(left: S, right: S, label: Option<MatchLabel>) -> Self {
        CandidatePair { left: left.into(), right: right.into(), label, pseudo: false }
    }

    /// Identity of the pair within a split.
    pub fn key(&self) -> (&str, &str) {
        (&self.left, &self.right)
    }
}

/// Which split a pair set plays in the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    TrainLabeled,
    TrainUnlabeled,
    Valid,
    Test,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::TrainLabeled => "train-labeled",
            SplitKind::TrainUnlabeled => "train-unlabeled",
            SplitKind::Valid => "valid",
            SplitKind::Test => "test",
        }
    }
}

/// An ordered list of candidate pairs with its role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub kind: SplitKind,
    pub pairs: Vec<CandidatePair>,
}

impl DatasetSplit {
    pub fn new(kind: SplitKind, pairs: Vec<CandidatePair>) -> Self {
        DatasetSplit { kind, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// An entity table with id lookup. Pushing a duplicate or empty id is
/// rejected so that pairs always resolve unambiguously.
#[derive(Debug, Clone, Default)]
pub struct EntityTable {
    entities: Vec<Entity>,
    index: BTreeMap<String, usize>,
}

impl EntityTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entity: Entity) -> Result<(), DataError> {
        if entity.id.is_empty() {
            return Err(DataError::EmptyEntityId);
        }
        if self.index.contains_key(&entity.id) {
            return Err(DataError::DuplicateEntityId { id: entity.id });
        }
        self.index.insert(entity.id.clone(), self.entities.len());
        self.entities.push(entity);
        Ok(())
    }

    pub fn from_entities(entities: Vec<Entity>) -> Result<Self, DataError> {
        let mut table = Self::new();
        for e in entities {
            table.push(e)?;
        }
        Ok(table)
    }

    pub fn get(&self, id: &str) -> Option<&Entity> {
        self.index.get(id).map(|&i| &self.entities[i])
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DataError {
    #[error("entity id must be non-empty")]
    EmptyEntityId,
    #[error("duplicate entity id {id:?}")]
    DuplicateEntityId { id: String },
}

/// A candidate pair with computed scores attached. `uncertainty` and
/// `importance` stay absent until the corresponding MC statistic has
/// been computed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    /// Index of the pair within the split it was scored from.
    pub pair_index: usize,
    /// Unnormalized scores for classes (y=0, y=1).
    pub class_scores: [f64; 2],
    pub uncertainty: Option<f64>,
    pub importance: Option<f64>,
}

/// Knobs of the lightweight self-training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfTrainConfig {
    pub iterations: usize,
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    /// Prune every this many student epochs.
    pub prune_frequency: usize,
    /// Fraction of the unlabeled set selected as pseudo-labels.
    pub u_r: f64,
    /// Fraction of the labeled set pruned at each pruning step.
    pub e_r: f64,
    /// Stochastic forward passes per MC statistic.
    pub mc_passes: usize,
    pub seed: u64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            iterations: 1,
            teacher_epochs: 20,
            student_epochs: 30,
            prune_frequency: 8,
            u_r: 0.1,
            e_r: 0.2,
            mc_passes: 10,
            seed: 0,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.iterations == 0 {
            return Err(ConfigError::NotPositive("iterations"));
        }
        if self.teacher_epochs == 0 {
            return Err(ConfigError::NotPositive("teacher_epochs"));
        }
        if self.student_epochs == 0 {
            return Err(ConfigError::NotPositive("student_epochs"));
        }
        if self.prune_frequency == 0 {
            return Err(ConfigError::NotPositive("prune_frequency"));
        }
        if self.mc_passes == 0 {
            return Err(ConfigError::NotPositive("mc_passes"));
        }
        if !(0.0..=1.0).contains(&self.u_r) {
            return Err(ConfigError::RatioOutOfRange("u_r"));
        }
        if !(0.0..=1.0).contains(&self.e_r) {
            return Err(ConfigError::RatioOutOfRange("e_r"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("{0} must lie in [0, 1]")]
    RatioOutOfRange(&'static str),
}

/// A single breach of the dataset-split invariants. Violations are
/// data, not errors: validation always returns a (possibly empty) list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitViolation {
    /// Valid/test pairs must carry a label.
    UnlabeledInEvalSplit { kind: SplitKind, index: usize },
    /// Train-unlabeled pairs must not carry a label at load time.
    LabeledInUnlabeledSplit { index: usize },
    /// A pseudo flag without a label is contradictory.
    PseudoWithoutLabel { kind: SplitKind, index: usize },
    /// (left, right) must identify a pair uniquely within a split.
    DuplicatePairInSplit { kind: SplitKind, index: usize },
    /// No pair may appear in two splits.
    PairInTwoSplits { first: SplitKind, second: SplitKind, left: String, right: String },
}

impl core::fmt::Display for SplitViolation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SplitViolation::UnlabeledInEvalSplit { kind, index } => {
                write!(f, "unlabeled pair at index {index} in {} split", kind.as_str())
            }
            SplitViolation::LabeledInUnlabeledSplit { index } => {
                write!(f, "labeled pair at index {index} in train-unlabeled split")
            }
            SplitViolation::PseudoWithoutLabel { kind, index } => {
                write!(f, "pseudo flag without label at index {index} in {} split", kind.as_str())
            }
            SplitViolation::DuplicatePairInSplit { kind, index } => {
                write!(f, "duplicate pair at index {index} in {} split", kind.as_str())
            }
            SplitViolation::PairInTwoSplits { first, second, left, right } => {
                write!(
                    f,
                    "pair ({left}, {right}) appears in both {} and {}",
                    first.as_str(),
                    second.as_str()
                )
            }
        }
    }
}

/// Checks the invariants of a single split.
pub fn validate_split(split: &DatasetSplit) -> Vec<SplitViolation> {
    let mut violations = Vec::new();
    let mut seen: BTreeSet<(&str, &str)> = BTreeSet::new();
    for (index, pair) in split.pairs.iter().enumerate() {
        match split.kind {
            SplitKind::Valid | SplitKind::Test => {
                if pair.label.is_none() {
                    violations.push(SplitViolation::UnlabeledInEvalSplit { kind: split.kind, index });
                }
            }
            SplitKind::TrainUnlabeled => {
                if pair.label.is_some() {
                    violations.push(SplitViolation::LabeledInUnlabeledSplit { index });
                }
            }
            SplitKind::TrainLabeled => {}
        }
        if pair.pseudo && pair.label.is_none() {
            violations.push(SplitViolation::PseudoWithoutLabel { kind: split.kind, index });
        }
        if !seen.insert(pair.key()) {
            violations.push(SplitViolation::DuplicatePairInSplit { kind: split.kind, index });
        }
    }
    violations
}

/// Checks every split plus the cross-split disjointness invariant.
pub fn validate_splits(splits: &[&DatasetSplit]) -> Vec<SplitViolation> {
    let mut violations = Vec::new();
    for split in splits {
        violations.extend(validate_split(split));
    }
    let mut owner: BTreeMap<(&str, &str), SplitKind> = BTreeMap::new();
    for split in splits {
        for pair in &split.pairs {
            match owner.get(&pair.key()) {
                Some(&first) if first != split.kind => {
                    violations.push(SplitViolation::PairInTwoSplits {
                        first,
                        second: split.kind,
                        left: pair.left.clone(),
                        right: pair.right.clone(),
                    });
                }
                Some(_) => {}
                None => {
                    owner.insert(pair.key(), split.kind);
                }
            }
        }
    }
    violations
}

/// Exact cardinalities (N_L, N_U) of the two train splits.
pub fn split_counts(labeled: &DatasetSplit, unlabeled: &DatasetSplit) -> (usize, usize) {
    (labeled.len(), unlabeled.len())
}
