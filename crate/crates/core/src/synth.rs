//! Seeded synthetic cohorts with linearly learnable structure.
//!
//! Each speaker gets a severity band (counts fixed by the config), a total
//! drawn uniformly from that band, and an item vector drawn uniformly from
//! all ways of writing the total as eight scores in `0..=3`. A fixed random
//! `64 x 8` matrix maps the item vector to the speaker's embedding mean, and
//! each utterance group adds isotropic Gaussian noise to that mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Cohort, GroupEmbedding, Phq8Items, Severity, SpeakerLabel, Split, EMBEDDING_DIM, ITEM_COUNT, MAX_ITEM_SCORE, MAX_TOTAL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Speakers per severity band, in band order.
    pub train_counts: [usize; 5],
    pub dev_counts: [usize; 5],
    pub groups_per_speaker: usize,
    pub within_speaker_noise_sigma: f64,
    pub separation_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_counts: [47, 29, 20, 7, 4],
            dev_counts: [17, 6, 5, 6, 1],
            groups_per_speaker: 20,
            within_speaker_noise_sigma: 0.05,
            separation_scale: 0.1,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    /// Default counts with enough groups per speaker that both ensembles
    /// converge under the fixed 5/10-epoch Adam budget.
    pub fn separable() -> Self {
        SyntheticConfig {
            groups_per_speaker: 300,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_counts.iter().chain(&self.dev_counts).all(|&c| c == 0) {
            return Err(Error::domain("synthetic config has no speakers"));
        }
        if self.groups_per_speaker == 0 {
            return Err(Error::domain("groups_per_speaker must be >= 1"));
        }
        if !(self.within_speaker_noise_sigma >= 0.0 && self.within_speaker_noise_sigma.is_finite()) {
            return Err(Error::domain("within_speaker_noise_sigma must be finite and non-negative"));
        }
        if !self.separation_scale.is_finite() {
            return Err(Error::domain("separation_scale must be finite"));
        }
        Ok(())
    }
}

/// `ways[k][s]`: number of `k`-item vectors with scores in `0..=3` summing to `s`.
fn composition_counts() -> [[u64; MAX_TOTAL as usize + 1]; ITEM_COUNT + 1] {
    let mut ways = [[0u64; MAX_TOTAL as usize + 1]; ITEM_COUNT + 1];
    ways[0][0] = 1;
    for k in 1..=ITEM_COUNT {
        for s in 0..=MAX_TOTAL as usize {
            ways[k][s] = (0..=usize::from(MAX_ITEM_SCORE).min(s)).map(|v| ways[k - 1][s - v]).sum();
        }
    }
    ways
}

/// Uniform draw from all item vectors with the given total.
pub fn random_composition<R: Rng + ?Sized>(total: u8, rng: &mut R) -> Result<Phq8Items> {
    if total > MAX_TOTAL {
        return Err(Error::domain(format!("total {total} exceeds {MAX_TOTAL}")));
    }
    let ways = composition_counts();
    let mut items = [0u8; ITEM_COUNT];
    let mut left = usize::from(total);
    for (pos, slot) in items.iter_mut().enumerate() {
        let rest = ITEM_COUNT - pos - 1;
        let mut pick = rng.random_range(0..ways[rest + 1][left]);
        for v in 0..=usize::from(MAX_ITEM_SCORE).min(left) {
            let w = ways[rest][left - v];
            if pick < w {
                *slot = v as u8;
                left -= v;
                break;
            }
            pick -= w;
        }
    }
    Phq8Items::new(items)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Cohort<f64>,
    pub dev: Cohort<f64>,
    /// The item-to-embedding map, row-major `64 x 8`.
    pub mixing: Vec<f64>,
}

/// Generates train and dev cohorts; a pure function of the config.
pub fn synth_cohort(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mixing: Vec<f64> = (0..EMBEDDING_DIM * ITEM_COUNT)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();

    let mut make = |split: Split, counts: &[usize; 5]| -> Result<Cohort<f64>> {
        let mut labels = Vec::new();
        let mut embeddings = Vec::new();
        let mut serial = 0usize;
        for (band, &n) in Severity::ALL.iter().zip(counts) {
            for _ in 0..n {
                serial += 1;
                let id = format!("{}_{serial:04}", split.name());
                let total = rng.random_range(band.range());
                let items = random_composition(total, &mut rng)?;
                let mean: Vec<f64> = (0..EMBEDDING_DIM)
                    .map(|j| {
                        let row = &mixing[j * ITEM_COUNT..(j + 1) * ITEM_COUNT];
                        config.separation_scale
                            * row
                                .iter()
                                .zip(items.as_array())
                                .map(|(a, &v)| a * f64::from(v))
                                .sum::<f64>()
                    })
                    .collect();
                for g in 0..config.groups_per_speaker {
                    let v = mean
                        .iter()
                        .map(|&m| m + config.within_speaker_noise_sigma * rng.sample::<f64, _>(rand_distr::StandardNormal))
                        .collect();
                    embeddings.push(GroupEmbedding::new(&id, g, v)?);
                }
                labels.push(SpeakerLabel::new(id, items));
            }
        }
        Ok(Cohort {
            labels,
            embeddings,
            split,
        })
    };
    let train = make(Split::Train, &config.train_counts)?;
    let dev = make(Split::Dev, &config.dev_counts)?;
    Ok(SyntheticData { train, dev, mixing })
}
