//! Severity-band mixture of experts.
//!
//! A 5-class router votes a severity band per group and the speaker's band is
//! the mode of those votes. The expert for that band then soft-votes one of
//! the five integer scores inside the band, so the predicted total can never
//! leave the predicted severity class.

use std::thread;

use serde::{Deserialize, Serialize};

use crate::augment::{augment_cohort, AugmentConfig};
use crate::bottom_up::{group_by_speaker, mode, single_speaker};
use crate::domain::{Cohort, GroupEmbedding, Prediction, Severity, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::optim::{argmax, train, LinearSoftmaxModel, TrainConfig};
use crate::scalar::Scalar;

/// Router classes (severity bands) and per-expert classes (scores in a band).
pub const BAND_CLASSES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expert<T> {
    pub severity: Severity,
    pub model: LinearSoftmaxModel<T>,
    /// False when no training speaker fell into this band; the model is then
    /// the all-zero (uniform) predictor.
    pub trained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopDownMoe<T> {
    router: LinearSoftmaxModel<T>,
    experts: Vec<Expert<T>>,
    train_config: TrainConfig,
    warnings: Vec<String>,
}

impl<T: Scalar> TopDownMoe<T> {
    pub fn from_parts(router: LinearSoftmaxModel<T>, experts: Vec<Expert<T>>, train_config: TrainConfig) -> Result<Self> {
        let moe = TopDownMoe {
            router,
            experts,
            train_config,
            warnings: Vec::new(),
        };
        moe.validate()?;
        Ok(moe)
    }

    pub fn validate(&self) -> Result<()> {
        self.router.validate()?;
        if self.router.class_count() != BAND_CLASSES {
            return Err(Error::domain(format!(
                "router has {} classes, expected {BAND_CLASSES}",
                self.router.class_count()
            )));
        }
        if self.experts.len() != Severity::ALL.len() {
            return Err(Error::domain(format!("expected 5 experts, got {}", self.experts.len())));
        }
        for (e, band) in self.experts.iter().zip(Severity::ALL) {
            e.model.validate()?;
            if e.severity != band || e.model.class_count() != BAND_CLASSES {
                return Err(Error::domain(format!(
                    "expert slot {band} holds a {}-class model for {}",
                    e.model.class_count(),
                    e.severity
                )));
            }
        }
        Ok(())
    }

    pub fn router(&self) -> &LinearSoftmaxModel<T> {
        &self.router
    }

    pub fn expert(&self, band: Severity) -> &Expert<T> {
        &self.experts[band.index()]
    }

    pub fn experts(&self) -> &[Expert<T>] {
        &self.experts
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train_config
    }

    /// Notes recorded during training, e.g. bands without speakers.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }
}

pub fn router_seed(base: u64) -> u64 {
    base
}

pub fn expert_seed(base: u64, band: Severity) -> u64 {
    base ^ (0x100 + band.index() as u64)
}

enum Job {
    Router,
    Expert(Severity),
}

/// Trains the router on every speaker and each expert on its own band only.
///
/// The six trainings are independent and run on separate threads.
pub fn train_top_down<T: Scalar>(cohort: &Cohort<T>, config: &TrainConfig, augment: &AugmentConfig) -> Result<TopDownMoe<T>> {
    cohort.ensure_valid()?;
    config.validate()?;
    let jobs: Vec<Job> = std::iter::once(Job::Router)
        .chain(Severity::ALL.into_iter().map(Job::Expert))
        .collect();

    let results: Vec<Result<Option<LinearSoftmaxModel<T>>>> = thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|job| {
                s.spawn(move || match *job {
                    Job::Router => {
                        let aug = augment.with_seed(router_seed(augment.seed));
                        let samples = augment_cohort(cohort, |l| Some(l.severity.index()), &aug)?;
                        train(BAND_CLASSES, &samples, &config.with_seed(router_seed(config.seed))).map(Some)
                    }
                    Job::Expert(band) => {
                        let aug = augment.with_seed(expert_seed(augment.seed, band));
                        let samples = augment_cohort(
                            cohort,
                            |l| (l.severity == band).then(|| usize::from(l.total - band.band_start())),
                            &aug,
                        )?;
                        if samples.is_empty() {
                            return Ok(None);
                        }
                        train(BAND_CLASSES, &samples, &config.with_seed(expert_seed(config.seed, band))).map(Some)
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("top-down training thread panicked"))
            .collect()
    });

    let mut models = results.into_iter();
    let router = models.next().expect("router job")?.expect("router always trains");
    let mut experts = Vec::with_capacity(Severity::ALL.len());
    let mut warnings = Vec::new();
    for (band, m) in Severity::ALL.into_iter().zip(models) {
        let expert = match m? {
            Some(model) => Expert {
                severity: band,
                model,
                trained: true,
            },
            None => {
                warnings.push(format!(
                    "no training speakers in band {band}; expert uses a uniform predictor"
                ));
                Expert {
                    severity: band,
                    model: LinearSoftmaxModel::zeros(BAND_CLASSES, EMBEDDING_DIM)?,
                    trained: false,
                }
            }
        };
        experts.push(expert);
    }
    let mut moe = TopDownMoe::from_parts(router, experts, *config)?;
    moe.warnings = warnings;
    Ok(moe)
}

/// Mode of the router's per-group argmax; the lower band wins ties.
pub fn select_expert<T: Scalar>(moe: &TopDownMoe<T>, groups: &[&GroupEmbedding<T>]) -> Result<Severity> {
    single_speaker(groups)?;
    let votes = groups
        .iter()
        .map(|g| moe.router.predict_class(&g.vector))
        .collect::<Result<Vec<_>>>()?;
    Severity::from_index(mode(&votes)?)
}

/// Sums the probability vectors and returns the argmax (lowest index on ties).
pub fn soft_vote<T: Scalar>(probabilities: &[Vec<T>]) -> Result<usize> {
    let first = probabilities.first().ok_or_else(|| Error::domain("soft vote over no groups"))?;
    let mut total = vec![T::zero(); first.len()];
    for p in probabilities {
        if p.len() != total.len() {
            return Err(Error::domain("probability vectors differ in length"));
        }
        for (t, &v) in total.iter_mut().zip(p) {
            *t = *t + v;
        }
    }
    Ok(argmax(&total))
}

pub fn predict_top_down<T: Scalar>(moe: &TopDownMoe<T>, groups: &[&GroupEmbedding<T>]) -> Result<Prediction> {
    let speaker = single_speaker(groups)?;
    let band = select_expert(moe, groups)?;
    let expert = &moe.expert(band).model;
    let probs = groups
        .iter()
        .map(|g| expert.predict_proba(&g.vector))
        .collect::<Result<Vec<_>>>()?;
    Prediction::top_down(speaker, band, soft_vote(&probs)?)
}

/// Predicts every speaker in `embeddings`, in ascending speaker-id order.
pub fn predict_all_top_down<T: Scalar>(moe: &TopDownMoe<T>, embeddings: &[GroupEmbedding<T>]) -> Result<Vec<Prediction>> {
    group_by_speaker(embeddings)
        .values()
        .map(|groups| predict_top_down(moe, groups))
        .collect()
}
