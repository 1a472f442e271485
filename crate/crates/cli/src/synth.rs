//! Seeded synthetic benchmarks with planted matches.
//!
//! True matches share a latent record; the right-table copy is
//! corrupted by token drops/swaps at the configured noise rate and the
//! right schema is renamed (and optionally format-converted) to force
//! heterogeneity. Split sizes follow the labeled-rate convention of
//! the low-resource benchmarks: the train pool is split into a small
//! labeled set and a large unlabeled set whose gold labels are kept
//! aside for pseudo-label quality evaluation only.
//!
//! Generation is deterministic for a fixed seed, across runs and
//! platforms: one ChaCha20 stream drives pools, latents, corruption,
//! pairing, and shuffling in a fixed order, and no float
//! transcendentals are involved.

use gem_core::data::{
    CandidatePair, DatasetSplit, Entity, EntityBody, EntityTable, MatchLabel, SemiValue, SplitKind,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::ingest::TableFormat;

fn default_labeled_rate() -> f64 {
    0.1
}

fn default_frac() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_left: usize,
    pub n_right: usize,
    pub n_pairs: usize,
    /// Fraction of pairs planted as true matches; the positive count
    /// is floor(match_rate * n_pairs) exactly.
    pub match_rate: f64,
    pub left_format: TableFormat,
    pub right_format: TableFormat,
    /// Per-token corruption probability for planted matches.
    pub noise: f64,
    pub seed: u64,
    /// Fraction of the train pool that keeps labels (the low-resource
    /// rate).
    #[serde(default = "default_labeled_rate")]
    pub labeled_rate: f64,
    #[serde(default = "default_frac")]
    pub valid_frac: f64,
    #[serde(default = "default_frac")]
    pub test_frac: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("infeasible spec: {0}")]
    Infeasible(String),
}

#[derive(Debug)]
pub struct SynthBenchmark {
    pub left: EntityTable,
    pub right: EntityTable,
    pub train_labeled: DatasetSplit,
    pub train_unlabeled: DatasetSplit,
    /// Hidden gold labels parallel to `train_unlabeled.pairs`; for the
    /// evaluation harness only, never for training.
    pub unlabeled_golds: Vec<MatchLabel>,
    pub valid: DatasetSplit,
    pub test: DatasetSplit,
}

fn ratio_floor(n: usize, ratio: f64) -> usize {
    (n as f64 * ratio + 1e-9).floor() as usize
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_left == 0 || self.n_right == 0 || self.n_pairs == 0 {
            return Err(SynthError::Infeasible("table and pair counts must be positive".into()));
        }
        if self.n_pairs > self.n_left * self.n_right {
            return Err(SynthError::Infeasible(format!(
                "n_pairs {} exceeds n_left*n_right {}",
                self.n_pairs,
                self.n_left * self.n_right
            )));
        }
        if !(0.0..1.0).contains(&self.match_rate) || self.match_rate <= 0.0 {
            return Err(SynthError::Infeasible("match_rate must lie in (0,1)".into()));
        }
        let n_pos = ratio_floor(self.n_pairs, self.match_rate);
        if n_pos > self.n_left.min(self.n_right) {
            return Err(SynthError::Infeasible(format!(
                "{n_pos} planted matches exceed the smaller table"
            )));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(SynthError::Infeasible("noise must lie in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.labeled_rate) || self.labeled_rate == 0.0 {
            return Err(SynthError::Infeasible("labeled_rate must lie in (0,1]".into()));
        }
        if self.valid_frac < 0.0 || self.test_frac < 0.0 || self.valid_frac + self.test_frac >= 1.0 {
            return Err(SynthError::Infeasible("valid_frac + test_frac must stay below 1".into()));
        }
        Ok(())
    }
}

const SYLLABLES: [&str; 20] = [
    "ba", "co", "da", "fe", "gi", "ho", "ju", "ka", "li", "mo", "na", "po", "qua", "ri", "su",
    "ta", "vu", "we", "xi", "zo",
];

fn make_word(rng: &mut ChaCha20Rng) -> String {
    let n = 2 + rng.gen_range(0..2usize);
    (0..n).map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())]).collect()
}

fn make_pool(rng: &mut ChaCha20Rng, size: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut pool = Vec::with_capacity(size);
    while pool.len() < size {
        let w = make_word(rng);
        if seen.insert(w.clone()) {
            pool.push(w);
        }
    }
    pool
}

struct Pools {
    title: Vec<String>,
    venue: Vec<String>,
    tag: Vec<String>,
}

#[derive(Clone)]
struct Latent {
    title: Vec<String>,
    venue: String,
    year: i64,
    tags: Vec<String>,
}

fn make_latent(rng: &mut ChaCha20Rng, pools: &Pools) -> Latent {
    Latent {
        title: (0..3).map(|_| pools.title[rng.gen_range(0..pools.title.len())].clone()).collect(),
        venue: pools.venue[rng.gen_range(0..pools.venue.len())].clone(),
        year: rng.gen_range(1960..2025),
        tags: (0..2).map(|_| pools.tag[rng.gen_range(0..pools.tag.len())].clone()).collect(),
    }
}

fn corrupt_tokens(tokens: &mut Vec<String>, pool: &[String], noise: f64, rng: &mut ChaCha20Rng) {
    let originals = tokens.clone();
    let mut out = Vec::with_capacity(tokens.len());
    for token in tokens.drain(..) {
        if rng.gen::<f64>() < noise {
            if rng.gen::<f64>() < 0.5 {
                // drop
            } else {
                out.push(pool[rng.gen_range(0..pool.len())].clone());
            }
        } else {
            out.push(token);
        }
    }
    if out.is_empty() {
        out.push(originals[rng.gen_range(0..originals.len())].clone());
    }
    *tokens = out;
}

fn corrupt(latent: &Latent, noise: f64, pools: &Pools, rng: &mut ChaCha20Rng) -> Latent {
    let mut copy = latent.clone();
    corrupt_tokens(&mut copy.title, &pools.title, noise, rng);
    if rng.gen::<f64>() < noise {
        copy.venue = pools.venue[rng.gen_range(0..pools.venue.len())].clone();
    }
    if rng.gen::<f64>() < noise {
        copy.year += rng.gen_range(1..4) * if rng.gen::<bool>() { 1 } else { -1 };
    }
    corrupt_tokens(&mut copy.tags, &pools.tag, noise, rng);
    copy
}

/// Schema names differ across tables to force heterogeneity.
struct Schema {
    title: &'static str,
    venue: &'static str,
    year: &'static str,
    tags: &'static str,
    meta: &'static str,
}

const LEFT_SCHEMA: Schema =
    Schema { title: "title", venue: "venue", year: "year", tags: "tags", meta: "meta" };
const RIGHT_SCHEMA: Schema =
    Schema { title: "name", venue: "publisher", year: "date", tags: "topics", meta: "info" };

fn render(latent: &Latent, id: String, schema: &Schema, format: TableFormat) -> Entity {
    let title = latent.title.join(" ");
    let tags = latent.tags.join(" ");
    let year = latent.year.to_string();
    match format {
        TableFormat::RelationalCsv => Entity {
            id,
            body: EntityBody::Structured(vec![
                (schema.title.into(), title),
                (schema.venue.into(), latent.venue.clone()),
                (schema.year.into(), year),
                (schema.tags.into(), tags),
            ]),
        },
        TableFormat::SemiJsonl => Entity {
            id,
            body: EntityBody::Semi(vec![
                (schema.title.into(), SemiValue::Scalar(title)),
                (
                    schema.meta.into(),
                    SemiValue::Object(vec![
                        (schema.venue.into(), SemiValue::Scalar(latent.venue.clone())),
                        (schema.year.into(), SemiValue::Scalar(year)),
                    ]),
                ),
                (
                    schema.tags.into(),
                    SemiValue::List(
                        latent.tags.iter().map(|t| SemiValue::Scalar(t.clone())).collect(),
                    ),
                ),
            ]),
        },
        TableFormat::TextLines => Entity {
            id,
            body: EntityBody::Text(format!(
                "{title} by {} in {year} about {tags}",
                latent.venue
            )),
        },
    }
}

/// Generates tables and splits with planted matches. Deterministic for
/// a fixed seed; positives are exactly floor(match_rate * n_pairs)
/// across all splits.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<SynthBenchmark, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let pools = Pools {
        title: make_pool(&mut rng, 160),
        venue: make_pool(&mut rng, 24),
        tag: make_pool(&mut rng, 32),
    };

    let left_latents: Vec<Latent> = (0..spec.n_left).map(|_| make_latent(&mut rng, &pools)).collect();

    let n_pos = ratio_floor(spec.n_pairs, spec.match_rate);
    // Which left rows get a planted partner, and which right rows are
    // the partners.
    let mut left_order: Vec<usize> = (0..spec.n_left).collect();
    left_order.shuffle(&mut rng);
    let matched_left = &left_order[..n_pos];
    let mut right_order: Vec<usize> = (0..spec.n_right).collect();
    right_order.shuffle(&mut rng);
    let matched_right = &right_order[..n_pos];

    let mut right_latents: Vec<Option<Latent>> = vec![None; spec.n_right];
    for (li, ri) in matched_left.iter().zip(matched_right) {
        right_latents[*ri] = Some(corrupt(&left_latents[*li], spec.noise, &pools, &mut rng));
    }
    for slot in right_latents.iter_mut() {
        if slot.is_none() {
            *slot = Some(make_latent(&mut rng, &pools));
        }
    }

    let mut positives: Vec<(usize, usize)> = matched_left.iter().copied().zip(matched_right.iter().copied()).collect();
    positives.sort_unstable();
    let planted: BTreeSet<(usize, usize)> = positives.iter().copied().collect();

    // Negatives: unplanted (left, right) combinations, without
    // replacement. Rejection sampling is fine while the pair space is
    // sparse; fall back to full enumeration otherwise.
    let n_neg = spec.n_pairs - n_pos;
    let space = spec.n_left * spec.n_right;
    let mut negatives: Vec<(usize, usize)> = Vec::with_capacity(n_neg);
    if spec.n_pairs * 2 < space {
        let mut used = planted.clone();
        while negatives.len() < n_neg {
            let cand = (rng.gen_range(0..spec.n_left), rng.gen_range(0..spec.n_right));
            if used.insert(cand) {
                negatives.push(cand);
            }
        }
    } else {
        let mut all: Vec<(usize, usize)> = (0..spec.n_left)
            .flat_map(|l| (0..spec.n_right).map(move |r| (l, r)))
            .filter(|c| !planted.contains(c))
            .collect();
        all.shuffle(&mut rng);
        negatives.extend(all.into_iter().take(n_neg));
    }

    let mut pairs: Vec<(usize, usize, MatchLabel)> = Vec::with_capacity(spec.n_pairs);
    pairs.extend(positives.iter().map(|&(l, r)| (l, r, MatchLabel::Matched)));
    pairs.extend(negatives.iter().map(|&(l, r)| (l, r, MatchLabel::Mismatched)));
    pairs.shuffle(&mut rng);

    let n_valid = ratio_floor(spec.n_pairs, spec.valid_frac);
    let n_test = ratio_floor(spec.n_pairs, spec.test_frac);
    let train_pool = spec.n_pairs - n_valid - n_test;
    // Labeled-rate convention rounds to the nearest count (567 pairs at
    // 10% gives 57); at least one labeled pair.
    let n_labeled = ((train_pool as f64 * spec.labeled_rate).round() as usize).clamp(1, train_pool);

    let to_pair = |&(l, r, label): &(usize, usize, MatchLabel), keep_label: bool| CandidatePair {
        left: format!("l{l}"),
        right: format!("r{r}"),
        label: keep_label.then_some(label),
        pseudo: false,
    };

    let train_labeled: Vec<CandidatePair> =
        pairs[..n_labeled].iter().map(|p| to_pair(p, true)).collect();
    let train_unlabeled: Vec<CandidatePair> =
        pairs[n_labeled..train_pool].iter().map(|p| to_pair(p, false)).collect();
    let unlabeled_golds: Vec<MatchLabel> =
        pairs[n_labeled..train_pool].iter().map(|&(_, _, label)| label).collect();
    let valid: Vec<CandidatePair> =
        pairs[train_pool..train_pool + n_valid].iter().map(|p| to_pair(p, true)).collect();
    let test: Vec<CandidatePair> =
        pairs[train_pool + n_valid..].iter().map(|p| to_pair(p, true)).collect();

    let mut left = EntityTable::new();
    for (i, latent) in left_latents.iter().enumerate() {
        left.push(render(latent, format!("l{i}"), &LEFT_SCHEMA, spec.left_format))
            .expect("generated ids are unique");
    }
    let mut right = EntityTable::new();
    for (i, latent) in right_latents.iter().enumerate() {
        right
            .push(render(
                latent.as_ref().expect("filled above"),
                format!("r{i}"),
                &RIGHT_SCHEMA,
                spec.right_format,
            ))
            .expect("generated ids are unique");
    }

    Ok(SynthBenchmark {
        left,
        right,
        train_labeled: DatasetSplit::new(SplitKind::TrainLabeled, train_labeled),
        train_unlabeled: DatasetSplit::new(SplitKind::TrainUnlabeled, train_unlabeled),
        unlabeled_golds,
        valid: DatasetSplit::new(SplitKind::Valid, valid),
        test: DatasetSplit::new(SplitKind::Test, test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use gem_core::data::validate_splits;
    use gem_core::serialize::serialize_entity;

    fn spec() -> SynthSpec {
        SynthSpec {
            n_left: 60,
            n_right: 60,
            n_pairs: 120,
            match_rate: 0.3,
            left_format: TableFormat::RelationalCsv,
            right_format: TableFormat::SemiJsonl,
            noise: 0.2,
            seed: 7,
            labeled_rate: 0.1,
            valid_frac: 0.2,
            test_frac: 0.2,
        }
    }

    #[test]
    fn positives_are_exactly_floor_of_rate() {
        for (n_pairs, rate, expect) in [(1000usize, 0.3, 300usize), (120, 0.3, 36), (10, 0.25, 2)] {
            let s = SynthSpec {
                n_pairs,
                match_rate: rate,
                n_left: n_pairs,
                n_right: n_pairs,
                ..spec()
            };
            let bench = gen_synthetic(&s).unwrap();
            // Count positives by enumeration over all splits, using the
            // hidden golds for the unlabeled one.
            let count = |split: &DatasetSplit| {
                split.pairs.iter().filter(|p| p.label == Some(MatchLabel::Matched)).count()
            };
            let total = count(&bench.train_labeled)
                + bench.unlabeled_golds.iter().filter(|&&g| g == MatchLabel::Matched).count()
                + count(&bench.valid)
                + count(&bench.test);
            assert_eq!(total, expect, "n_pairs {n_pairs} rate {rate}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_synthetic(&spec()).unwrap();
        let b = gen_synthetic(&spec()).unwrap();
        assert_eq!(a.left.entities(), b.left.entities());
        assert_eq!(a.right.entities(), b.right.entities());
        assert_eq!(a.train_labeled.pairs, b.train_labeled.pairs);
        assert_eq!(a.train_unlabeled.pairs, b.train_unlabeled.pairs);
        assert_eq!(a.unlabeled_golds, b.unlabeled_golds);
        assert_eq!(a.valid.pairs, b.valid.pairs);
        assert_eq!(a.test.pairs, b.test.pairs);

        let c = gen_synthetic(&SynthSpec { seed: 8, ..spec() }).unwrap();
        assert_ne!(a.train_labeled.pairs, c.train_labeled.pairs);
    }

    #[test]
    fn zero_noise_matches_share_values_modulo_schema() {
        let s = SynthSpec {
            noise: 0.0,
            left_format: TableFormat::RelationalCsv,
            right_format: TableFormat::RelationalCsv,
            ..spec()
        };
        let bench = gen_synthetic(&s).unwrap();
        for (pair, gold) in bench
            .train_labeled
            .pairs
            .iter()
            .map(|p| (p, p.label.unwrap()))
            .chain(bench.train_unlabeled.pairs.iter().zip(bench.unlabeled_golds.iter().copied()).map(|(p, g)| (p, g)))
        {
            if gold != MatchLabel::Matched {
                continue;
            }
            let l = bench.left.get(&pair.left).unwrap();
            let r = bench.right.get(&pair.right).unwrap();
            let EntityBody::Structured(la) = &l.body else { panic!() };
            let EntityBody::Structured(ra) = &r.body else { panic!() };
            let lv: Vec<&String> = la.iter().map(|(_, v)| v).collect();
            let rv: Vec<&String> = ra.iter().map(|(_, v)| v).collect();
            assert_eq!(lv, rv, "values must agree modulo schema renaming");
            let ln: Vec<&String> = la.iter().map(|(n, _)| n).collect();
            let rn: Vec<&String> = ra.iter().map(|(n, _)| n).collect();
            assert_ne!(ln, rn, "schemas must differ");
        }
    }

    #[test]
    fn splits_are_disjoint_and_well_formed() {
        let bench = gen_synthetic(&spec()).unwrap();
        let violations = validate_splits(&[
            &bench.train_labeled,
            &bench.train_unlabeled,
            &bench.valid,
            &bench.test,
        ]);
        assert!(violations.is_empty(), "{violations:?}");
        assert_eq!(
            bench.train_labeled.len()
                + bench.train_unlabeled.len()
                + bench.valid.len()
                + bench.test.len(),
            120
        );
        assert_eq!(bench.train_unlabeled.len(), bench.unlabeled_golds.len());
        // 120 pairs, 20% valid, 20% test, 10% of the 72-pair train pool
        // labeled (rounded).
        assert_eq!(bench.valid.len(), 24);
        assert_eq!(bench.test.len(), 24);
        assert_eq!(bench.train_labeled.len(), 7);
        assert_eq!(bench.train_unlabeled.len(), 65);
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let s = SynthSpec { n_pairs: 60 * 60 + 1, ..spec() };
        let err = gen_synthetic(&s).unwrap_err();
        assert!(err.to_string().contains("infeasible spec"));

        let s = SynthSpec { n_left: 5, n_right: 100, n_pairs: 100, match_rate: 0.5, ..spec() };
        assert!(gen_synthetic(&s).is_err());
    }

    #[test]
    fn dense_pair_spaces_enumerate_instead_of_rejecting() {
        let s = SynthSpec {
            n_left: 12,
            n_right: 12,
            n_pairs: 144,
            match_rate: 0.05,
            ..spec()
        };
        let bench = gen_synthetic(&s).unwrap();
        let total = bench.train_labeled.len()
            + bench.train_unlabeled.len()
            + bench.valid.len()
            + bench.test.len();
        assert_eq!(total, 144);
    }

    #[test]
    fn text_format_renders_readable_lines() {
        let s = SynthSpec { left_format: TableFormat::TextLines, ..spec() };
        let bench = gen_synthetic(&s).unwrap();
        let e = &bench.left.entities()[0];
        let EntityBody::Text(text) = &e.body else { panic!() };
        assert!(text.contains(" by "));
        assert!(!serialize_entity(e).contains("[COL]"));
    }
}
