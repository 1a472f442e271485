//! The lightweight self-training loop: teacher/student rounds,
//! uncertainty-aware pseudo-label selection over MC-Dropout passes,
//! dynamic data pruning by MC-EL2N, and best-student selection on
//! validation F1. Confidence-based selection is provided as the
//! comparison strategy.
//!
//! The loop is a single-writer state machine over (D_L, D_U): selected
//! pairs leave D_U atomically and pruned pairs are retired to an audit
//! list, so |D_L| + |D_U| + |D_D| is conserved at every step.
//! Validation labels are read only to compute metrics; the test split
//! never enters this module.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{CandidatePair, MatchLabel, ScoredPair, SelfTrainConfig};
use crate::fmath;
use crate::model::{
    self, scores_to_label, ForwardMode, LossMode, ModelConfig, ModelError, ModelParameters,
    Trainer, TrainSpec,
};
use crate::seeds;
use crate::serialize::TokenSequence;

// Seed-stream tags, mixed with (iteration, ...) per phase.
const STREAM_TEACHER: u64 = 1;
const STREAM_SELECT: u64 = 2;
const STREAM_STUDENT: u64 = 3;
const STREAM_PRUNE: u64 = 4;

/// Normalized 2-class scoring of an indexed item set, with and without
/// dropout. Implemented by the model-backed scorer and by test stubs.
pub trait Scorer {
    fn deterministic(&self, index: usize) -> Result<[f64; 2], ModelError>;
    fn stochastic(&self, index: usize, seed: u64) -> Result<[f64; 2], ModelError>;
}

/// Scores token sequences with a trained model under either scoring
/// route. Parameters are immutable here; each stochastic pass carries
/// its own seed, so concurrent passes would be race-free.
pub struct ModelScorer<'a> {
    pub params: &'a ModelParameters,
    pub loss: LossMode<'a>,
    pub seqs: Vec<&'a TokenSequence>,
}

impl Scorer for ModelScorer<'_> {
    fn deterministic(&self, index: usize) -> Result<[f64; 2], ModelError> {
        model::predict_probs(self.params, self.seqs[index], self.loss, ForwardMode::Deterministic)
    }

    fn stochastic(&self, index: usize, seed: u64) -> Result<[f64; 2], ModelError> {
        model::predict_probs(
            self.params,
            self.seqs[index],
            self.loss,
            ForwardMode::Stochastic { seed },
        )
    }
}

/// MC-Dropout uncertainty: population standard deviation of the
/// positive-class probability across `n` stochastic passes. A single
/// pass has no spread and yields 0.
pub fn mc_uncertainty(
    scorer: &dyn Scorer,
    index: usize,
    n: usize,
    base_seed: u64,
) -> Result<f64, ModelError> {
    assert!(n > 0, "mc_uncertainty needs at least one pass");
    let mut probs = Vec::with_capacity(n);
    for pass in 0..n {
        let p = scorer.stochastic(index, seeds::mix2(base_seed, pass as u64))?;
        probs.push(p[1]);
    }
    if n == 1 {
        return Ok(0.0);
    }
    let mean = probs.iter().sum::<f64>() / n as f64;
    let var = probs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n as f64;
    Ok(fmath::sqrt(var))
}

/// MC-EL2N importance: mean over `n` stochastic passes of the L2
/// distance between the normalized 2-class prediction and the one-hot
/// label. Low scores mark easy samples.
pub fn mc_el2n(
    scorer: &dyn Scorer,
    index: usize,
    label: MatchLabel,
    n: usize,
    base_seed: u64,
) -> Result<f64, ModelError> {
    assert!(n > 0, "mc_el2n needs at least one pass");
    let target = label.one_hot();
    let mut total = 0.0;
    for pass in 0..n {
        let p = scorer.stochastic(index, seeds::mix2(base_seed, pass as u64))?;
        let d0 = p[0] - target[0];
        let d1 = p[1] - target[1];
        total += fmath::sqrt(d0 * d0 + d1 * d1);
    }
    Ok(total / n as f64)
}

/// One selected pseudo-label: the index into the unlabeled set and the
/// teacher's deterministic-mode prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub label: MatchLabel,
}

/// Pseudo-label selection outcome, with the full per-pair scores kept
/// for auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub selected: Vec<Selection>,
    pub scored: Vec<ScoredPair>,
}

fn teacher_prediction(scorer: &dyn Scorer, index: usize) -> Result<([f64; 2], MatchLabel), ModelError> {
    let probs = scorer.deterministic(index)?;
    Ok((probs, scores_to_label(probs)))
}

/// Selects floor(N_U * u_r) pairs with the least MC-Dropout
/// uncertainty; ties break by ascending pair index. Each selected pair
/// is labeled with the teacher's deterministic prediction.
pub fn pseudo_select_uncertainty(
    scorer: &dyn Scorer,
    n_unlabeled: usize,
    u_r: f64,
    n_passes: usize,
    base_seed: u64,
) -> Result<SelectionReport, ModelError> {
    let n_p = fmath::ratio_floor(n_unlabeled, u_r);
    let mut scored = Vec::with_capacity(n_unlabeled);
    let mut labels = Vec::with_capacity(n_unlabeled);
    for index in 0..n_unlabeled {
        let u = mc_uncertainty(scorer, index, n_passes, seeds::mix2(base_seed, index as u64))?;
        let (probs, label) = teacher_prediction(scorer, index)?;
        scored.push(ScoredPair {
            pair_index: index,
            class_scores: probs,
            uncertainty: Some(u),
            importance: None,
        });
        labels.push(label);
    }
    let mut order: Vec<usize> = (0..n_unlabeled).collect();
    order.sort_by(|&a, &b| {
        let ua = scored[a].uncertainty.expect("computed");
        let ub = scored[b].uncertainty.expect("computed");
        ua.total_cmp(&ub).then(a.cmp(&b))
    });
    let selected = order.into_iter().take(n_p).map(|index| Selection { index, label: labels[index] }).collect();
    Ok(SelectionReport { selected, scored })
}

/// Confidence-based comparison strategy: selects floor(N_U * ratio)
/// pairs with the highest deterministic max-class probability; ties
/// break by ascending pair index.
pub fn pseudo_select_confidence(
    scorer: &dyn Scorer,
    n_unlabeled: usize,
    ratio: f64,
) -> Result<SelectionReport, ModelError> {
    let n_p = fmath::ratio_floor(n_unlabeled, ratio);
    let mut scored = Vec::with_capacity(n_unlabeled);
    let mut labels = Vec::with_capacity(n_unlabeled);
    for index in 0..n_unlabeled {
        let (probs, label) = teacher_prediction(scorer, index)?;
        scored.push(ScoredPair {
            pair_index: index,
            class_scores: probs,
            uncertainty: None,
            importance: None,
        });
        labels.push(label);
    }
    let confidence = |s: &ScoredPair| s.class_scores[0].max(s.class_scores[1]);
    let mut order: Vec<usize> = (0..n_unlabeled).collect();
    order.sort_by(|&a, &b| {
        confidence(&scored[b]).total_cmp(&confidence(&scored[a])).then(a.cmp(&b))
    });
    let selected = order.into_iter().take(n_p).map(|index| Selection { index, label: labels[index] }).collect();
    Ok(SelectionReport { selected, scored })
}

/// Removes the floor(N_L * e_r) lowest-scoring items (ties by
/// ascending index) into the retired list: (kept, removed).
pub fn prune<T: Clone>(items: &[T], e_r: f64, scores: &[f64]) -> (Vec<T>, Vec<T>) {
    assert_eq!(items.len(), scores.len(), "prune needs one score per item");
    let n_d = fmath::ratio_floor(items.len(), e_r);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut removed_flags = alloc::vec![false; items.len()];
    for &i in order.iter().take(n_d) {
        removed_flags[i] = true;
    }
    let mut kept = Vec::with_capacity(items.len() - n_d);
    let mut removed = Vec::with_capacity(n_d);
    for (i, item) in items.iter().enumerate() {
        if removed_flags[i] {
            removed.push(item.clone());
        } else {
            kept.push(item.clone());
        }
    }
    (kept, removed)
}

/// A candidate pair together with its encoded token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPair {
    pub pair: CandidatePair,
    pub seq: TokenSequence,
}

/// Inputs of one lightweight self-training run. The unlabeled set must
/// be label-free; valid pairs must all be labeled. The test split is
/// deliberately not representable here.
pub struct LstInput<'a> {
    pub labeled: Vec<EncodedPair>,
    pub unlabeled: Vec<EncodedPair>,
    pub valid: Vec<EncodedPair>,
    pub loss: LossMode<'a>,
    pub model_cfg: ModelConfig,
    pub train: TrainSpec,
    pub config: SelfTrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Teacher,
    Student,
}

/// One line of the audit log, emitted after every trained epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub epoch: usize,
    pub d_l: usize,
    pub d_u: usize,
    /// Cumulative pseudo-labels moved into D_L.
    pub d_p: usize,
    /// Cumulative pairs retired by pruning.
    pub d_d: usize,
    pub loss: f64,
    pub valid_p: f64,
    pub valid_r: f64,
    pub valid_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRef {
    pub left: String,
    pub right: String,
}

impl PairRef {
    fn of(pair: &CandidatePair) -> Self {
        PairRef { left: pair.left.clone(), right: pair.right.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectEvent {
    pub iteration: usize,
    pub n_p: usize,
    pub pairs: Vec<PairRef>,
    pub uncertainties: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub iteration: usize,
    pub epoch: usize,
    pub n_d: usize,
    pub pairs: Vec<PairRef>,
    pub scores: Vec<f64>,
}

/// Complete audit log of one run: epoch records plus selection and
/// prune events.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub epochs: Vec<EpochRecord>,
    pub selections: Vec<SelectEvent>,
    pub prunes: Vec<PruneEvent>,
}

/// Where the best student checkpoint came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestStudent {
    pub iteration: usize,
    pub epoch: usize,
    pub valid_f1: f64,
}

pub struct LstOutcome {
    /// Student checkpoint with the highest validation F1 across all
    /// epochs and iterations (ties: earliest).
    pub student: ModelParameters,
    pub best: BestStudent,
    /// Best-on-validation teacher per iteration.
    pub teachers: Vec<ModelParameters>,
    pub log: RoundLog,
    /// All pairs pseudo-labeled during the run (pseudo = true).
    pub pseudo_labeled: Vec<CandidatePair>,
    /// Audit list of pruned pairs; conservation holds against it.
    pub pruned: Vec<CandidatePair>,
    /// Optimizer steps spent on students (the pruning-efficiency
    /// measure).
    pub student_steps: u64,
    pub final_labeled: usize,
    pub final_unlabeled: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LstError {
    #[error("invalid self-train config: {0}")]
    Config(#[from] crate::data::ConfigError),
    #[error("labeled pair at index {index} has no label")]
    UnlabeledInLabeledSet { index: usize },
    #[error("unlabeled pair at index {index} carries a label")]
    LabeledInUnlabeledSet { index: usize },
    #[error("valid pair at index {index} has no label")]
    UnlabeledInValidSet { index: usize },
    #[error("validation set is empty")]
    EmptyValidSet,
    #[error(transparent)]
    Model(#[from] ModelError),
}

struct LabeledItem {
    pair: CandidatePair,
    seq: TokenSequence,
    label: MatchLabel,
}

/// Runs Algorithm 1 end to end and returns the best student.
///
/// Per iteration: a fresh teacher is trained `teacher_epochs` on D_L;
/// floor(N_U * u_r) pseudo-labels move from D_U to D_L; a fresh
/// student is trained `student_epochs` on the updated D_L, pruning
/// floor(|D_L| * e_r) lowest-MC-EL2N pairs at every epoch multiple of
/// `prune_frequency`. D_L accumulates across iterations.
pub fn run_lst(input: LstInput<'_>) -> Result<LstOutcome, LstError> {
    let config = &input.config;
    config.validate()?;
    if input.valid.is_empty() {
        return Err(LstError::EmptyValidSet);
    }
    let mut labeled: Vec<LabeledItem> = Vec::with_capacity(input.labeled.len());
    for (index, ep) in input.labeled.into_iter().enumerate() {
        let label = ep.pair.label.ok_or(LstError::UnlabeledInLabeledSet { index })?;
        labeled.push(LabeledItem { pair: ep.pair, seq: ep.seq, label });
    }
    let mut unlabeled: Vec<EncodedPair> = Vec::with_capacity(input.unlabeled.len());
    for (index, ep) in input.unlabeled.into_iter().enumerate() {
        if ep.pair.label.is_some() {
            return Err(LstError::LabeledInUnlabeledSet { index });
        }
        unlabeled.push(ep);
    }
    let mut valid_data: Vec<(&TokenSequence, MatchLabel)> = Vec::with_capacity(input.valid.len());
    for (index, ep) in input.valid.iter().enumerate() {
        let label = ep.pair.label.ok_or(LstError::UnlabeledInValidSet { index })?;
        valid_data.push((&ep.seq, label));
    }

    let mut log = RoundLog::default();
    let mut teachers = Vec::with_capacity(config.iterations);
    let mut pseudo_labeled: Vec<CandidatePair> = Vec::new();
    let mut pruned: Vec<CandidatePair> = Vec::new();
    let mut best: Option<(BestStudent, ModelParameters)> = None;
    let mut student_steps = 0u64;

    for iteration in 1..=config.iterations {
        // Teacher round.
        let teacher_spec = TrainSpec {
            epochs: config.teacher_epochs,
            seed: seeds::mix3(config.seed, STREAM_TEACHER, iteration as u64),
            ..input.train.clone()
        };
        let mut teacher = Trainer::new(&input.model_cfg, input.loss, teacher_spec);
        let mut best_teacher: Option<(f64, ModelParameters)> = None;
        for epoch in 1..=config.teacher_epochs {
            let data: Vec<(&TokenSequence, MatchLabel)> =
                labeled.iter().map(|it| (&it.seq, it.label)).collect();
            let loss = teacher.run_epoch(&data).map_err(LstError::Model)?;
            let prf = teacher.evaluate(&valid_data).map_err(LstError::Model)?;
            if best_teacher.as_ref().map(|(f1, _)| prf.f1 > *f1).unwrap_or(true) {
                best_teacher = Some((prf.f1, teacher.params.clone()));
            }
            log.epochs.push(EpochRecord {
                iteration,
                phase: Phase::Teacher,
                epoch,
                d_l: labeled.len(),
                d_u: unlabeled.len(),
                d_p: pseudo_labeled.len(),
                d_d: pruned.len(),
                loss,
                valid_p: prf.precision,
                valid_r: prf.recall,
                valid_f1: prf.f1,
            });
        }
        let teacher_params = best_teacher.expect("teacher_epochs >= 1").1;

        // Uncertainty-aware pseudo-label selection.
        let report = {
            let scorer = ModelScorer {
                params: &teacher_params,
                loss: input.loss,
                seqs: unlabeled.iter().map(|ep| &ep.seq).collect(),
            };
            pseudo_select_uncertainty(
                &scorer,
                unlabeled.len(),
                config.u_r,
                config.mc_passes,
                seeds::mix3(config.seed, STREAM_SELECT, iteration as u64),
            )
            .map_err(LstError::Model)?
        };
        teachers.push(teacher_params);
        let mut chosen = alloc::vec![false; unlabeled.len()];
        let mut event = SelectEvent {
            iteration,
            n_p: report.selected.len(),
            pairs: Vec::with_capacity(report.selected.len()),
            uncertainties: Vec::with_capacity(report.selected.len()),
            labels: Vec::with_capacity(report.selected.len()),
        };
        for sel in &report.selected {
            chosen[sel.index] = true;
            event.pairs.push(PairRef::of(&unlabeled[sel.index].pair));
            event.uncertainties.push(report.scored[sel.index].uncertainty.expect("computed"));
            event.labels.push(sel.label.bit());
        }
        // D_U -> D_L atomically, in selection (index) order.
        let mut remaining = Vec::with_capacity(unlabeled.len() - report.selected.len());
        let mut moved: Vec<(usize, EncodedPair)> = Vec::with_capacity(report.selected.len());
        for (index, ep) in unlabeled.into_iter().enumerate() {
            if chosen[index] {
                moved.push((index, ep));
            } else {
                remaining.push(ep);
            }
        }
        unlabeled = remaining;
        let label_of: alloc::collections::BTreeMap<usize, MatchLabel> =
            report.selected.iter().map(|s| (s.index, s.label)).collect();
        for (index, mut ep) in moved {
            let label = label_of[&index];
            ep.pair.label = Some(label);
            ep.pair.pseudo = true;
            pseudo_labeled.push(ep.pair.clone());
            labeled.push(LabeledItem { pair: ep.pair, seq: ep.seq, label });
        }
        log.selections.push(event);

        // Student round with dynamic data pruning.
        let student_spec = TrainSpec {
            epochs: config.student_epochs,
            seed: seeds::mix3(config.seed, STREAM_STUDENT, iteration as u64),
            ..input.train.clone()
        };
        let mut student = Trainer::new(&input.model_cfg, input.loss, student_spec);
        for epoch in 1..=config.student_epochs {
            let data: Vec<(&TokenSequence, MatchLabel)> =
                labeled.iter().map(|it| (&it.seq, it.label)).collect();
            let loss = student.run_epoch(&data).map_err(LstError::Model)?;
            let prf = student.evaluate(&valid_data).map_err(LstError::Model)?;
            let candidate = BestStudent { iteration, epoch, valid_f1: prf.f1 };
            if best.as_ref().map(|(b, _)| prf.f1 > b.valid_f1).unwrap_or(true) {
                best = Some((candidate, student.params.clone()));
            }
            log.epochs.push(EpochRecord {
                iteration,
                phase: Phase::Student,
                epoch,
                d_l: labeled.len(),
                d_u: unlabeled.len(),
                d_p: pseudo_labeled.len(),
                d_d: pruned.len(),
                loss,
                valid_p: prf.precision,
                valid_r: prf.recall,
                valid_f1: prf.f1,
            });
            if epoch % config.prune_frequency == 0 && config.e_r > 0.0 && !labeled.is_empty() {
                let scores = {
                    let scorer = ModelScorer {
                        params: &student.params,
                        loss: input.loss,
                        seqs: labeled.iter().map(|it| &it.seq).collect(),
                    };
                    let mut scores = Vec::with_capacity(labeled.len());
                    for (index, item) in labeled.iter().enumerate() {
                        scores.push(
                            mc_el2n(
                                &scorer,
                                index,
                                item.label,
                                config.mc_passes,
                                seeds::mix4(
                                    config.seed,
                                    STREAM_PRUNE,
                                    seeds::mix2(iteration as u64, epoch as u64),
                                    index as u64,
                                ),
                            )
                            .map_err(LstError::Model)?,
                        );
                    }
                    scores
                };
                let indices: Vec<usize> = (0..labeled.len()).collect();
                let (kept_idx, removed_idx) = prune(&indices, config.e_r, &scores);
                if !removed_idx.is_empty() {
                    let event = PruneEvent {
                        iteration,
                        epoch,
                        n_d: removed_idx.len(),
                        pairs: removed_idx.iter().map(|&i| PairRef::of(&labeled[i].pair)).collect(),
                        scores: removed_idx.iter().map(|&i| scores[i]).collect(),
                    };
                    let keep_set: alloc::collections::BTreeSet<usize> =
                        kept_idx.into_iter().collect();
                    let mut kept_items = Vec::with_capacity(keep_set.len());
                    for (i, item) in labeled.into_iter().enumerate() {
                        if keep_set.contains(&i) {
                            kept_items.push(item);
                        } else {
                            pruned.push(item.pair);
                        }
                    }
                    labeled = kept_items;
                    log.prunes.push(event);
                }
            }
        }
        student_steps += student.steps;
    }

    let (best_info, student) = best.expect("student_epochs >= 1 and iterations >= 1");
    Ok(LstOutcome {
        student,
        best: best_info,
        teachers,
        log,
        pseudo_labeled,
        pruned,
        student_steps,
        final_labeled: labeled.len(),
        final_unlabeled: unlabeled.len(),
    })
}
