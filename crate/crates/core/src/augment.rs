//! Class-balancing oversampling and saliency-preserving perturbation.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Cohort, SpeakerLabel};
use crate::error::{Error, Result};
use crate::optim::Sample;
use crate::scalar::{self, Scalar};

/// Mixed into the seed for jitter so it does not replay the oversampling stream.
const NOISE_STREAM: u64 = 0x6a09_e667_f3bc_c908;

/// Standard deviation of the additive Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseSigma {
    /// Same value for every component.
    Absolute(f64),
    /// Multiple of each component's sample standard deviation over the data.
    Relative(f64),
}

impl NoiseSigma {
    fn factor(self) -> f64 {
        match self {
            NoiseSigma::Absolute(s) | NoiseSigma::Relative(s) => s,
        }
    }

    fn per_component<T: Scalar>(self, rows: &[&[T]], dim: usize) -> Result<Vec<T>> {
        let f = self.factor();
        if !(f >= 0.0 && f.is_finite()) {
            return Err(Error::domain(format!("noise sigma {f} must be finite and non-negative")));
        }
        Ok(match self {
            NoiseSigma::Absolute(s) => vec![T::lit(s); dim],
            NoiseSigma::Relative(_) if rows.len() < 2 => vec![T::zero(); dim],
            NoiseSigma::Relative(f) => (0..dim)
                .map(|j| {
                    let col: Vec<T> = rows.iter().map(|r| r[j]).collect();
                    T::lit(f) * scalar::sample_variance(&col).sqrt()
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub perturb_count: usize,
    pub preserve_count: usize,
    pub noise_sigma: NoiseSigma,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            perturb_count: 6,
            preserve_count: 21,
            noise_sigma: NoiseSigma::Relative(0.1),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        AugmentConfig { seed, ..self }
    }
}

/// Utterance-level view of one group: a feature vector and a saliency per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SalientGroup<T> {
    units: Vec<Vec<T>>,
    saliency: Vec<T>,
}

impl<T: Scalar> SalientGroup<T> {
    pub fn new(units: Vec<Vec<T>>, saliency: Vec<T>) -> Result<Self> {
        if units.len() != saliency.len() {
            return Err(Error::domain(format!(
                "{} units but {} saliency values",
                units.len(),
                saliency.len()
            )));
        }
        if saliency.iter().any(|s| !s.is_finite()) {
            return Err(Error::numeric("saliency values must be finite"));
        }
        Ok(SalientGroup { units, saliency })
    }

    /// Saliency defaults to each unit's Euclidean norm.
    pub fn with_norm_saliency(units: Vec<Vec<T>>) -> Result<Self> {
        let saliency = units
            .iter()
            .map(|u| u.iter().map(|&x| x * x).fold(T::zero(), |a, b| a + b).sqrt())
            .collect();
        Self::new(units, saliency)
    }

    pub fn units(&self) -> &[Vec<T>] {
        &self.units
    }

    pub fn saliency(&self) -> &[T] {
        &self.saliency
    }
}

/// Indices of the units that `perturb_group` will modify, ascending.
///
/// Units are ranked by saliency (descending, lower index first on ties); the
/// first `preserve_count` are kept, and up to `perturb_count` of the rest are
/// taken starting from the least salient.
pub fn select_perturbed<T: Scalar>(saliency: &[T], preserve_count: usize, perturb_count: usize) -> Vec<usize> {
    let mut ranked: Vec<usize> = (0..saliency.len()).collect();
    ranked.sort_by(|&a, &b| saliency[b].partial_cmp(&saliency[a]).unwrap().then(a.cmp(&b)));
    let remainder = ranked.get(preserve_count..).unwrap_or(&[]);
    let mut chosen: Vec<usize> = remainder.iter().rev().take(perturb_count).copied().collect();
    chosen.sort_unstable();
    chosen
}

/// Adds Gaussian noise to the least salient units, keeping the most salient intact.
pub fn perturb_group<T: Scalar>(group: &SalientGroup<T>, config: &AugmentConfig) -> Result<SalientGroup<T>> {
    let dim = group.units.first().map_or(0, Vec::len);
    if group.units.iter().any(|u| u.len() != dim) {
        return Err(Error::domain("units of a group must share one dimension"));
    }
    let rows: Vec<&[T]> = group.units.iter().map(Vec::as_slice).collect();
    let sigma = config.noise_sigma.per_component(&rows, dim)?;

    let mut out = group.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ NOISE_STREAM);
    for i in select_perturbed(&group.saliency, config.preserve_count, config.perturb_count) {
        jitter(&mut out.units[i], &sigma, &mut rng);
    }
    Ok(out)
}

fn jitter<T: Scalar>(x: &mut [T], sigma: &[T], rng: &mut ChaCha8Rng) {
    for (v, &s) in x.iter_mut().zip(sigma) {
        let z = T::standard_normal(rng);
        if s > T::zero() {
            *v = *v + s * z;
        }
    }
}

/// One output slot of the oversampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    /// Index into the input.
    pub source: usize,
    /// False for the single pass over the originals.
    pub is_duplicate: bool,
}

/// Index-level oversampling plan.
///
/// Every class is brought up to the size `n_max` of the largest one. Each
/// original appears once; a class of size `n_c` gets `(n_max - n_c) / n_c`
/// full extra copies plus a seeded random subset of originals for the
/// remainder, which is the `ceil(n_max / n_c)`-fold replication truncated
/// to `n_max` without ever dropping an original. The result is shuffled.
pub fn oversample_plan(labels: &[usize], seed: u64) -> Result<Vec<Draw>> {
    if labels.is_empty() {
        return Err(Error::domain("cannot oversample an empty sample list"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let n_max = by_class.values().map(Vec::len).max().unwrap_or(0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = Vec::with_capacity(n_max * by_class.len());
    for members in by_class.values() {
        let n_c = members.len();
        let extra = n_max - n_c;
        plan.extend(members.iter().map(|&source| Draw {
            source,
            is_duplicate: false,
        }));
        for _ in 0..extra / n_c {
            plan.extend(members.iter().map(|&source| Draw {
                source,
                is_duplicate: true,
            }));
        }
        let mut picked = index::sample(&mut rng, n_c, extra % n_c).into_vec();
        picked.sort_unstable();
        plan.extend(picked.into_iter().map(|j| Draw {
            source: members[j],
            is_duplicate: true,
        }));
    }
    plan.shuffle(&mut rng);
    Ok(plan)
}

/// Replicates minority classes until every class count equals the largest.
pub fn oversample<S: Clone>(samples: &[(S, usize)], seed: u64) -> Result<Vec<(S, usize)>> {
    let labels: Vec<usize> = samples.iter().map(|(_, l)| *l).collect();
    Ok(oversample_plan(&labels, seed)?
        .into_iter()
        .map(|d| samples[d.source].clone())
        .collect())
}

/// Builds a balanced, jittered training set from a cohort.
///
/// `label_of` maps a speaker's label to the task's class, or `None` to leave
/// the speaker out (used for band-restricted experts). Every group embedding
/// of an included speaker becomes one sample. Oversampled duplicates receive
/// Gaussian jitter on the whole embedding; originals are passed through
/// untouched.
pub fn augment_cohort<T, F>(cohort: &Cohort<T>, label_of: F, config: &AugmentConfig) -> Result<Vec<Sample<T>>>
where
    T: Scalar,
    F: Fn(&SpeakerLabel) -> Option<usize>,
{
    cohort.ensure_valid()?;
    let classes: BTreeMap<&str, Option<usize>> = cohort
        .labels
        .iter()
        .map(|l| (l.speaker_id.as_str(), label_of(l)))
        .collect();
    let base: Vec<(&[T], usize)> = cohort
        .embeddings
        .iter()
        .filter_map(|e| classes[e.speaker_id.as_str()].map(|c| (e.vector.as_slice(), c)))
        .collect();
    if base.is_empty() {
        return Ok(Vec::new());
    }

    let dim = base[0].0.len();
    let all_rows: Vec<&[T]> = cohort.embeddings.iter().map(|e| e.vector.as_slice()).collect();
    let sigma = config.noise_sigma.per_component(&all_rows, dim)?;

    let labels: Vec<usize> = base.iter().map(|(_, l)| *l).collect();
    let plan = oversample_plan(&labels, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ NOISE_STREAM);
    Ok(plan
        .into_iter()
        .map(|d| {
            let (x, label) = base[d.source];
            let mut features = x.to_vec();
            if d.is_duplicate {
                jitter(&mut features, &sigma, &mut rng);
            }
            Sample { features, label }
        })
        .collect())
}
