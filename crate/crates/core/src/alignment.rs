//! Noisy beam-sweep measurements and the five beam-selection strategies.
//!
//! Each measurement is `x_i = |√P_T·(h^H w_i) + n_i|²` with i.i.d.
//! circularly-symmetric complex Gaussian noise. A strategy consumes one
//! channel, sweeps some beams, and reports the selected narrow beam plus how
//! many beam slots it spent. Every search stage draws from its own noise
//! stream, so outcomes for one sample never depend on other samples.

use ndarray::Array1;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelDataset, ChannelVector};
use crate::codebooks::{beamforming_gains, best_beam, Codebook, HierarchicalCodebook};
use crate::error::{Error, Result};
use crate::learning::{export_probing_codebook, predict_topk, ProbingModel};
use crate::metrics::{snr_db, ExperimentResult, ResultConfig};
use crate::rng::{substream_rng, substream_seed};
use crate::util::argmax_lowest;

/// Measurement noise: power σ² in mW on the normalized channel scale, plus
/// the seed its streams derive from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub noise_power_mw: f64,
    pub rng_seed: u64,
}

impl NoiseModel {
    pub fn new(noise_power_mw: f64, rng_seed: u64) -> Result<Self> {
        if noise_power_mw < 0.0 {
            return Err(Error::domain("noise power must be nonnegative"));
        }
        Ok(Self { noise_power_mw, rng_seed })
    }

    pub fn noiseless(rng_seed: u64) -> Self {
        Self { noise_power_mw: 0.0, rng_seed }
    }

    /// The model for one sample: same power, per-sample sub-seed.
    fn for_sample(&self, index: u64) -> NoiseModel {
        NoiseModel {
            noise_power_mw: self.noise_power_mw,
            rng_seed: substream_seed(self.rng_seed, index),
        }
    }
}

/// Beam-selection strategy identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Proposed,
    Exhaustive,
    TwoTier,
    Binary,
    Genie,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Proposed => "proposed",
            Strategy::Exhaustive => "exhaustive",
            Strategy::TwoTier => "two_tier",
            Strategy::Binary => "binary",
            Strategy::Genie => "genie",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Result of aligning one UE.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentOutcome {
    /// Selected index into the narrow-beam codebook.
    pub selected_beam: usize,
    /// Beam slots spent on this UE alone.
    pub beams_swept: usize,
    pub strategy: Strategy,
    /// The predictor's ordered top-k candidates (proposed strategy only).
    pub predicted: Option<Vec<usize>>,
}

fn measure_into(
    h: &ChannelVector,
    codebook: &Codebook,
    indices: &[usize],
    p_t: f64,
    noise: &NoiseModel,
    stream_id: u64,
) -> Result<Vec<f64>> {
    if h.len() != codebook.num_elements() {
        return Err(Error::domain("channel length does not match codebook"));
    }
    if p_t < 0.0 {
        return Err(Error::domain("transmit power must be nonnegative"));
    }
    let amp = p_t.sqrt();
    let std = (noise.noise_power_mw / 2.0).sqrt();
    let mut rng = substream_rng(noise.rng_seed, stream_id);
    indices
        .iter()
        .map(|&i| {
            if i >= codebook.num_beams() {
                return Err(Error::domain(format!("beam index {i} out of range")));
            }
            let mut z_re = 0.0;
            let mut z_im = 0.0;
            for (w, x) in codebook.beam(i).iter().zip(h.iter()) {
                // conj(w) * h
                z_re += w.re * x.re + w.im * x.im;
                z_im += w.re * x.im - w.im * x.re;
            }
            let (n_re, n_im) = if std > 0.0 {
                let zr: f64 = StandardNormal.sample(&mut rng);
                let zi: f64 = StandardNormal.sample(&mut rng);
                (std * zr, std * zi)
            } else {
                (0.0, 0.0)
            };
            let y_re = amp * z_re + n_re;
            let y_im = amp * z_im + n_im;
            Ok(y_re * y_re + y_im * y_im)
        })
        .collect()
}

/// One noisy sweep of a whole codebook: `x_i = |√P_T·(h^H w_i) + n_i|²`.
///
/// Deterministic given `(noise.rng_seed, stream_id)`; at σ²=0 the powers are
/// exactly `P_T·|h^H w_i|²`.
pub fn measure(
    h: &ChannelVector,
    codebook: &Codebook,
    p_t: f64,
    noise: &NoiseModel,
    stream_id: u64,
) -> Result<Array1<f64>> {
    let all: Vec<usize> = (0..codebook.num_beams()).collect();
    Ok(Array1::from_vec(measure_into(h, codebook, &all, p_t, noise, stream_id)?))
}

/// Sweep every narrow beam once and take the noisy argmax.
pub fn exhaustive_search(
    h: &ChannelVector,
    narrow: &Codebook,
    p_t: f64,
    noise: &NoiseModel,
) -> Result<AlignmentOutcome> {
    let powers = measure(h, narrow, p_t, noise, 0)?;
    let selected = argmax_lowest(powers.as_slice().expect("contiguous"))
        .ok_or_else(|| Error::domain("empty codebook"))?;
    Ok(AlignmentOutcome {
        selected_beam: selected,
        beams_swept: narrow.num_beams(),
        strategy: Strategy::Exhaustive,
        predicted: None,
    })
}

/// Sweep the wide tier, descend into the best sector, sweep its children.
pub fn two_tier_search(
    h: &ChannelVector,
    hierarchy: &HierarchicalCodebook,
    p_t: f64,
    noise: &NoiseModel,
) -> Result<AlignmentOutcome> {
    if hierarchy.num_tiers() != 2 {
        return Err(Error::domain(format!(
            "two-tier search needs exactly 2 tiers, found {}",
            hierarchy.num_tiers()
        )));
    }
    let wide = &hierarchy.tiers()[0];
    let narrow = &hierarchy.tiers()[1];
    let wide_powers = measure(h, &wide.codebook, p_t, noise, 0)?;
    let best_wide = argmax_lowest(wide_powers.as_slice().expect("contiguous"))
        .ok_or_else(|| Error::domain("empty wide tier"))?;
    let children = &wide.children[best_wide];
    let child_powers = measure_into(h, &narrow.codebook, children, p_t, noise, 1)?;
    let best_child =
        argmax_lowest(&child_powers).ok_or_else(|| Error::domain("beam has no children"))?;
    Ok(AlignmentOutcome {
        selected_beam: children[best_child],
        beams_swept: wide.codebook.num_beams() + children.len(),
        strategy: Strategy::TwoTier,
        predicted: None,
    })
}

/// Descend a binary tree, measuring the two candidates at every tier.
pub fn binary_search(
    h: &ChannelVector,
    hierarchy: &HierarchicalCodebook,
    p_t: f64,
    noise: &NoiseModel,
) -> Result<AlignmentOutcome> {
    let tiers = hierarchy.tiers();
    if tiers.is_empty() || tiers[0].codebook.num_beams() != 2 {
        return Err(Error::domain("binary search needs a tree rooted in 2 beams"));
    }
    for (t, tier) in tiers[..tiers.len() - 1].iter().enumerate() {
        if tier.children.iter().any(|c| c.len() != 2) {
            return Err(Error::domain(format!(
                "tier {t} of a binary tree must have 2 children per beam"
            )));
        }
    }
    let mut candidates = vec![0usize, 1usize];
    let mut current = 0usize;
    let mut swept = 0usize;
    for (t, tier) in tiers.iter().enumerate() {
        let powers = measure_into(h, &tier.codebook, &candidates, p_t, noise, t as u64)?;
        swept += candidates.len();
        let best = argmax_lowest(&powers).expect("two candidates");
        current = candidates[best];
        if t + 1 < tiers.len() {
            candidates = tier.children[current].clone();
        }
    }
    Ok(AlignmentOutcome {
        selected_beam: current,
        beams_swept: swept,
        strategy: Strategy::Binary,
        predicted: None,
    })
}

/// Oracle selection from true noiseless gains; sweeps nothing.
pub fn genie_select(h: &ChannelVector, narrow: &Codebook) -> Result<AlignmentOutcome> {
    if h.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
        return Err(Error::domain("zero channel has no optimal beam"));
    }
    Ok(AlignmentOutcome {
        selected_beam: best_beam(narrow, h)?,
        beams_swept: 0,
        strategy: Strategy::Genie,
        predicted: None,
    })
}

/// Probing sweep, top-k prediction, then (for k>1) a fresh-noise re-sweep of
/// the predicted candidates.
pub fn proposed_search(
    h: &ChannelVector,
    model: &ProbingModel,
    narrow: &Codebook,
    k: usize,
    p_t: f64,
    noise: &NoiseModel,
) -> Result<AlignmentOutcome> {
    if k < 1 || k > narrow.num_beams() {
        return Err(Error::domain(format!("k={k} outside [1, {}]", narrow.num_beams())));
    }
    if model.n_classes != narrow.num_beams() {
        return Err(Error::domain("model classes disagree with the narrow codebook"));
    }
    let probing = export_probing_codebook(model);
    let powers = measure(h, &probing, p_t, noise, 0)?;
    let topk = predict_topk(model, &powers, k)?;
    let (selected, swept) = if k == 1 {
        (topk[0], probing.num_beams())
    } else {
        let resweep = measure_into(h, narrow, &topk, p_t, noise, 1)?;
        let best = argmax_lowest(&resweep).expect("k >= 1");
        (topk[best], probing.num_beams() + k)
    };
    Ok(AlignmentOutcome {
        selected_beam: selected,
        beams_swept: swept,
        strategy: Strategy::Proposed,
        predicted: Some(topk),
    })
}

/// Strategy plus the structures it needs for one evaluation run.
#[derive(Debug, Clone, Copy)]
pub enum StrategyInputs<'a> {
    Proposed { model: &'a ProbingModel, k: usize },
    Exhaustive,
    TwoTier { hierarchy: &'a HierarchicalCodebook },
    Binary { hierarchy: &'a HierarchicalCodebook },
    Genie,
}

impl StrategyInputs<'_> {
    pub fn strategy(&self) -> Strategy {
        match self {
            StrategyInputs::Proposed { .. } => Strategy::Proposed,
            StrategyInputs::Exhaustive => Strategy::Exhaustive,
            StrategyInputs::TwoTier { .. } => Strategy::TwoTier,
            StrategyInputs::Binary { .. } => Strategy::Binary,
            StrategyInputs::Genie => Strategy::Genie,
        }
    }
}

/// Run one strategy on a subset of a labeled dataset.
///
/// Sample `i` uses noise sub-seed `(noise.rng_seed, i)`, so results are
/// independent of evaluation order and of which other samples are present.
/// SNR statistics are computed at the configured σ²; they are NaN for a
/// noiseless configuration, where the SNR is unbounded.
pub fn evaluate_strategy(
    dataset: &ChannelDataset,
    indices: &[usize],
    labels: &[usize],
    narrow: &Codebook,
    inputs: StrategyInputs<'_>,
    p_t: f64,
    noise: &NoiseModel,
) -> Result<ExperimentResult> {
    if labels.len() != dataset.len() {
        return Err(Error::domain("one label per dataset sample required"));
    }
    if indices.is_empty() {
        return Err(Error::domain("evaluation needs at least one sample"));
    }
    let mut outcomes = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= dataset.len() {
            return Err(Error::domain(format!("sample index {i} out of range")));
        }
        let h = &dataset.channels[i];
        let sample_noise = noise.for_sample(i as u64);
        let outcome = match inputs {
            StrategyInputs::Proposed { model, k } => {
                proposed_search(h, model, narrow, k, p_t, &sample_noise)?
            }
            StrategyInputs::Exhaustive => exhaustive_search(h, narrow, p_t, &sample_noise)?,
            StrategyInputs::TwoTier { hierarchy } => two_tier_search(h, hierarchy, p_t, &sample_noise)?,
            StrategyInputs::Binary { hierarchy } => binary_search(h, hierarchy, p_t, &sample_noise)?,
            StrategyInputs::Genie => genie_select(h, narrow)?,
        };
        outcomes.push(outcome);
    }

    let n = indices.len() as f64;
    let mut top1_hits = 0usize;
    let mut contain_hits = 0usize;
    let mut post_hits = 0usize;
    let mut swept_sum = 0usize;
    let mut snrs = Vec::with_capacity(indices.len());
    let mut optimal_snrs = Vec::with_capacity(indices.len());
    for (&i, outcome) in indices.iter().zip(&outcomes) {
        let label = labels[i];
        let post_hit = outcome.selected_beam == label;
        post_hits += post_hit as usize;
        match &outcome.predicted {
            Some(topk) => {
                top1_hits += (topk[0] == label) as usize;
                contain_hits += topk.contains(&label) as usize;
            }
            None => {
                top1_hits += post_hit as usize;
                contain_hits += post_hit as usize;
            }
        }
        swept_sum += outcome.beams_swept;
        if noise.noise_power_mw > 0.0 {
            let gains = beamforming_gains(narrow, &dataset.channels[i])?;
            snrs.push(snr_db(gains[outcome.selected_beam], p_t, noise.noise_power_mw)?);
            optimal_snrs.push(snr_db(gains[label], p_t, noise.noise_power_mw)?);
        }
    }
    let (mean_snr_db, snr_percentiles_db, mean_optimal_snr_db) = if snrs.is_empty() {
        (f64::NAN, [f64::NAN; 3], f64::NAN)
    } else {
        let mean = snrs.iter().sum::<f64>() / n;
        let mut sorted = snrs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite or -inf"));
        let pct = |p: f64| {
            sorted[((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)]
        };
        let opt_mean = optimal_snrs.iter().sum::<f64>() / n;
        (mean, [pct(0.05), pct(0.50), pct(0.95)], opt_mean)
    };

    Ok(ExperimentResult {
        strategy: inputs.strategy(),
        top1_accuracy: top1_hits as f64 / n,
        topk_containment_accuracy: contain_hits as f64 / n,
        post_sweep_accuracy: post_hits as f64 / n,
        mean_snr_db,
        snr_percentiles_db,
        mean_optimal_snr_db,
        mean_beams_swept: swept_sum as f64 / n,
        sample_count: indices.len(),
        config: ResultConfig {
            n_narrow: narrow.num_beams(),
            n_probing_or_wide: match inputs {
                StrategyInputs::Proposed { model, .. } => model.num_probing(),
                StrategyInputs::TwoTier { hierarchy } => hierarchy.tiers()[0].codebook.num_beams(),
                _ => 0,
            },
            k: match inputs {
                StrategyInputs::Proposed { k, .. } => k,
                _ => 1,
            },
            noise_power_mw: noise.noise_power_mw,
            transmit_power_mw: p_t,
            noise_seed: noise.rng_seed,
        },
    })
}
