//! Item-level ensemble: eight 4-class models, one per PHQ-8 item.
//!
//! A speaker's item score is the mode of the per-group predictions, and the
//! total is the plain sum of the eight item modes. Binary and severity labels
//! are derived from that total, so all three outputs always agree.

use std::collections::BTreeMap;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::augment::{augment_cohort, AugmentConfig};
use crate::domain::{Cohort, GroupEmbedding, Item, Phq8Items, Prediction, ITEM_COUNT};
use crate::error::{Error, Result};
use crate::optim::{train, LinearSoftmaxModel, TrainConfig};
use crate::scalar::Scalar;

pub const ITEM_CLASSES: usize = 4;

/// Most frequent value; the smallest value wins ties.
pub fn mode<V: Ord + Copy>(values: &[V]) -> Result<V> {
    let mut counts: BTreeMap<V, usize> = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    // BTreeMap iterates ascending, and max_by_key keeps the last maximum, so
    // walk in reverse to let the smallest value win.
    counts
        .into_iter()
        .rev()
        .max_by_key(|&(_, n)| n)
        .map(|(v, _)| v)
        .ok_or_else(|| Error::domain("mode of an empty list"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottomUpEnsemble<T> {
    item_models: Vec<LinearSoftmaxModel<T>>,
    train_config: TrainConfig,
}

impl<T: Scalar> BottomUpEnsemble<T> {
    /// Assembles an ensemble from eight 4-class models in item order.
    pub fn from_models(item_models: Vec<LinearSoftmaxModel<T>>, train_config: TrainConfig) -> Result<Self> {
        let e = BottomUpEnsemble {
            item_models,
            train_config,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.item_models.len() != ITEM_COUNT {
            return Err(Error::domain(format!(
                "bottom-up ensemble needs {ITEM_COUNT} item models, got {}",
                self.item_models.len()
            )));
        }
        for (k, m) in self.item_models.iter().enumerate() {
            m.validate()?;
            if m.class_count() != ITEM_CLASSES {
                return Err(Error::domain(format!(
                    "item model {} has {} classes, expected {ITEM_CLASSES}",
                    Item::ALL[k].name(),
                    m.class_count()
                )));
            }
        }
        Ok(())
    }

    pub fn item_model(&self, item: Item) -> &LinearSoftmaxModel<T> {
        &self.item_models[item.index()]
    }

    pub fn item_models(&self) -> &[LinearSoftmaxModel<T>] {
        &self.item_models
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train_config
    }

    /// Per-group argmax for every item: `out[k][i]` is item `k` on group `i`.
    pub fn group_item_predictions(&self, groups: &[&GroupEmbedding<T>]) -> Result<Vec<Vec<u8>>> {
        self.item_models
            .iter()
            .map(|m| {
                groups
                    .iter()
                    .map(|g| m.predict_class(&g.vector).map(|c| c as u8))
                    .collect()
            })
            .collect()
    }
}

/// Derives the seed of item `k`'s model (and its augmentation) from a base seed.
pub fn item_seed(base: u64, item: Item) -> u64 {
    base ^ item.index() as u64
}

/// Trains the eight item models independently (in parallel threads).
///
/// Item `k` sees every group embedding labelled with its speaker's item-`k`
/// score, oversampled on those scores. The result does not depend on thread
/// scheduling.
pub fn train_bottom_up<T: Scalar>(cohort: &Cohort<T>, config: &TrainConfig, augment: &AugmentConfig) -> Result<BottomUpEnsemble<T>> {
    cohort.ensure_valid()?;
    config.validate()?;
    let models: Vec<Result<LinearSoftmaxModel<T>>> = thread::scope(|s| {
        let handles: Vec<_> = Item::ALL
            .iter()
            .map(|&item| {
                s.spawn(move || {
                    let aug = augment.with_seed(item_seed(augment.seed, item));
                    let samples = augment_cohort(cohort, |l| Some(usize::from(l.items.get(item))), &aug)?;
                    train(ITEM_CLASSES, &samples, &config.with_seed(item_seed(config.seed, item)))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("item training thread panicked"))
            .collect()
    });
    BottomUpEnsemble::from_models(models.into_iter().collect::<Result<_>>()?, *config)
}

pub(crate) fn single_speaker<'a, T>(groups: &[&'a GroupEmbedding<T>]) -> Result<&'a str> {
    let first = groups.first().ok_or_else(|| Error::domain("no groups to predict from"))?;
    if let Some(other) = groups.iter().find(|g| g.speaker_id != first.speaker_id) {
        return Err(Error::domain(format!(
            "groups mix speakers {} and {}",
            first.speaker_id, other.speaker_id
        )));
    }
    Ok(&first.speaker_id)
}

/// Speaker-level prediction from all of one speaker's groups.
pub fn predict_bottom_up<T: Scalar>(ensemble: &BottomUpEnsemble<T>, groups: &[&GroupEmbedding<T>]) -> Result<Prediction> {
    let speaker = single_speaker(groups)?;
    let per_item = ensemble.group_item_predictions(groups)?;
    let mut items = [0u8; ITEM_COUNT];
    for (slot, preds) in items.iter_mut().zip(&per_item) {
        *slot = mode(preds)?;
    }
    Ok(Prediction::bottom_up(speaker, Phq8Items::new(items)?))
}

/// Predicts every speaker in `embeddings`, in ascending speaker-id order.
pub fn predict_all_bottom_up<T: Scalar>(ensemble: &BottomUpEnsemble<T>, embeddings: &[GroupEmbedding<T>]) -> Result<Vec<Prediction>> {
    group_by_speaker(embeddings)
        .values()
        .map(|groups| predict_bottom_up(ensemble, groups))
        .collect()
}

pub(crate) fn group_by_speaker<T>(embeddings: &[GroupEmbedding<T>]) -> BTreeMap<&str, Vec<&GroupEmbedding<T>>> {
    let mut map: BTreeMap<&str, Vec<&GroupEmbedding<T>>> = BTreeMap::new();
    for e in embeddings {
        map.entry(e.speaker_id.as_str()).or_default().push(e);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Severity, SpeakerLabel, Split, EMBEDDING_DIM};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Model that outputs `class` for every input.
    fn constant(class: usize) -> LinearSoftmaxModel<f64> {
        let mut bias = vec![0.0; ITEM_CLASSES];
        bias[class] = 10.0;
        LinearSoftmaxModel::from_parts(ITEM_CLASSES, EMBEDDING_DIM, vec![0.0; ITEM_CLASSES * EMBEDDING_DIM], bias).unwrap()
    }

    /// Model predicting round(x[k]) clamped to 0..=3.
    fn reads_component(k: usize) -> LinearSoftmaxModel<f64> {
        // logit_c = 20 c x_k - 10 c^2 is maximised at c = round(x_k)
        let mut w = vec![0.0; ITEM_CLASSES * EMBEDDING_DIM];
        let mut b = vec![0.0; ITEM_CLASSES];
        for c in 0..ITEM_CLASSES {
            w[c * EMBEDDING_DIM + k] = 20.0 * c as f64;
            b[c] = -10.0 * (c * c) as f64;
        }
        LinearSoftmaxModel::from_parts(ITEM_CLASSES, EMBEDDING_DIM, w, b).unwrap()
    }

    fn group(id: &str, g: usize, head: &[f64]) -> GroupEmbedding<f64> {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[..head.len()].copy_from_slice(head);
        GroupEmbedding::new(id, g, v).unwrap()
    }

    #[test]
    fn mode_examples() {
        assert_eq!(mode(&[2, 2, 3, 0]).unwrap(), 2);
        assert_eq!(mode(&[1, 2]).unwrap(), 1);
        assert_eq!(mode(&[2, 1]).unwrap(), 1);
        assert_eq!(mode(&[5]).unwrap(), 5);
        assert!(mode::<u8>(&[]).is_err());
    }

    #[test]
    fn all_threes_is_severe() {
        let e = BottomUpEnsemble::from_models(vec![constant(3); 8], TrainConfig::default()).unwrap();
        let g = group("s", 0, &[]);
        let p = predict_bottom_up(&e, &[&g]).unwrap();
        assert_eq!(p.predicted_total(), 24);
        assert_eq!(p.predicted_severity(), Severity::Severe);
        assert!(p.predicted_binary());
    }

    #[test]
    fn all_ones_is_mild() {
        let e = BottomUpEnsemble::from_models(vec![constant(1); 8], TrainConfig::default()).unwrap();
        let g = group("s", 0, &[]);
        let p = predict_bottom_up(&e, &[&g]).unwrap();
        assert_eq!(p.predicted_items().unwrap().as_array(), &[1; 8]);
        assert_eq!(p.predicted_total(), 8);
        assert_eq!(p.predicted_severity(), Severity::Mild);
        assert!(!p.predicted_binary());
    }

    #[test]
    fn item_mode_ignores_group_order() {
        let models: Vec<_> = (0..8).map(reads_component).collect();
        let e = BottomUpEnsemble::from_models(models, TrainConfig::default()).unwrap();
        // item 2 (Sleep) reads component 2: per-group predictions 0, 2, 2
        let gs = [
            group("s", 0, &[0.0, 0.0, 0.0]),
            group("s", 1, &[0.0, 0.0, 2.0]),
            group("s", 2, &[0.0, 0.0, 2.1]),
        ];
        let orders = [[0, 1, 2], [2, 0, 1], [1, 2, 0], [2, 1, 0]];
        for o in orders {
            let refs: Vec<_> = o.iter().map(|&i| &gs[i]).collect();
            let p = predict_bottom_up(&e, &refs).unwrap();
            assert_eq!(p.predicted_items().unwrap().get(Item::Sleep), 2);
        }
    }

    #[test]
    fn rejects_empty_and_mixed_groups() {
        let e = BottomUpEnsemble::from_models(vec![constant(0); 8], TrainConfig::default()).unwrap();
        assert!(predict_bottom_up(&e, &[]).is_err());
        let (a, b) = (group("a", 0, &[]), group("b", 0, &[]));
        assert!(predict_bottom_up(&e, &[&a, &b]).is_err());
        assert!(BottomUpEnsemble::from_models(vec![constant(0); 7], TrainConfig::default()).is_err());
    }

    fn tiny_cohort(items_of: impl Fn(usize) -> [u8; 8]) -> Cohort<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut labels = Vec::new();
        let mut embeddings = Vec::new();
        for s in 0..12 {
            let id = format!("s{s:02}");
            let items = items_of(s);
            labels.push(SpeakerLabel::new(&id, Phq8Items::new(items).unwrap()));
            for g in 0..4 {
                let v = (0..EMBEDDING_DIM)
                    .map(|j| f64::from(items[j % 8]) + rng.random_range(-0.2..0.2))
                    .collect();
                embeddings.push(GroupEmbedding::new(&id, g, v).unwrap());
            }
        }
        Cohort {
            labels,
            embeddings,
            split: Split::Train,
        }
    }

    #[test]
    fn training_is_reproducible() {
        let c = tiny_cohort(|s| [(s % 4) as u8, 1, 2, 0, 3, (s % 2) as u8, 1, 0]);
        let cfg = TrainConfig::bottom_up(3);
        let a = train_bottom_up(&c, &cfg, &AugmentConfig::default()).unwrap();
        let b = train_bottom_up(&c, &cfg, &AugmentConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_item_is_predicted_everywhere() {
        let c = tiny_cohort(|s| [0, (s % 4) as u8, 1, 1, 2, 0, 3, (s % 3) as u8]);
        let e = train_bottom_up(&c, &TrainConfig::bottom_up(1), &AugmentConfig::default()).unwrap();
        for g in &c.embeddings {
            assert_eq!(e.item_model(Item::NoInterest).predict_class(&g.vector).unwrap(), 0);
        }
    }
}
