//! Accuracy, SNR, sweep/feedback complexity, and clustering quality.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::alignment::{evaluate_strategy, AlignmentOutcome, NoiseModel, Strategy, StrategyInputs};
use crate::channel::ChannelDataset;
use crate::codebooks::Codebook;
use crate::error::{Error, Result};

/// Configuration echo attached to every experiment record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultConfig {
    pub n_narrow: usize,
    /// Probing size for the proposed strategy, wide-tier size for two-tier,
    /// 0 where the notion does not apply.
    pub n_probing_or_wide: usize,
    pub k: usize,
    pub noise_power_mw: f64,
    pub transmit_power_mw: f64,
    pub noise_seed: u64,
}

/// Aggregated outcome of evaluating one strategy over a dataset slice.
///
/// Three accuracy views: `top1` scores the predictor's first choice,
/// `topk_containment` scores whether the optimal beam appears among the k
/// candidates, and `post_sweep` scores the final selection after any
/// re-sweep (the headline number). For baselines without a candidate list
/// the three coincide. SNR fields are NaN when evaluated at σ²=0; JSON
/// stores non-finite values as null and they read back as NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub strategy: Strategy,
    pub top1_accuracy: f64,
    pub topk_containment_accuracy: f64,
    pub post_sweep_accuracy: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub mean_snr_db: f64,
    /// 5th, 50th, and 95th percentile of the achieved SNR in dB.
    #[serde(deserialize_with = "nullable_f64x3")]
    pub snr_percentiles_db: [f64; 3],
    /// Mean SNR the genie's beam would have achieved; the x-axis of the
    /// noise-degradation curves.
    #[serde(deserialize_with = "nullable_f64")]
    pub mean_optimal_snr_db: f64,
    pub mean_beams_swept: f64,
    pub sample_count: usize,
    pub config: ResultConfig,
}

fn nullable_f64<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn nullable_f64x3<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<[f64; 3], D::Error> {
    let v = <[Option<f64>; 3]>::deserialize(d)?;
    Ok(v.map(|x| x.unwrap_or(f64::NAN)))
}

/// `10·log10(mW)`; −∞ for zero.
pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// `10^(dBm/10)` milliwatts.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Noise power in dBm from a spectral density in dBm/Hz and a bandwidth.
pub fn noise_power_dbm(psd_dbm_per_hz: f64, bandwidth_hz: f64) -> Result<f64> {
    if bandwidth_hz.is_nan() || bandwidth_hz <= 0.0 {
        return Err(Error::domain("bandwidth must be positive"));
    }
    Ok(psd_dbm_per_hz + 10.0 * bandwidth_hz.log10())
}

/// SNR in dB: `10·log10(P_T·gain/σ²)`. Zero gain maps to −∞.
pub fn snr_db(gain: f64, p_t_mw: f64, noise_power_mw: f64) -> Result<f64> {
    if noise_power_mw.is_nan() || noise_power_mw <= 0.0 {
        return Err(Error::domain("SNR needs a positive noise power"));
    }
    if gain < 0.0 {
        return Err(Error::domain("gain must be nonnegative"));
    }
    if gain == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (p_t_mw * gain / noise_power_mw).log10())
}

/// Fraction of outcomes whose selected beam equals the label.
pub fn accuracy(outcomes: &[AlignmentOutcome], labels: &[usize]) -> Result<f64> {
    if outcomes.len() != labels.len() {
        return Err(Error::domain("outcomes and labels must have equal length"));
    }
    if outcomes.is_empty() {
        return Err(Error::domain("accuracy over an empty set is undefined"));
    }
    let hits = outcomes.iter().zip(labels).filter(|(o, &l)| o.selected_beam == l).count();
    Ok(hits as f64 / outcomes.len() as f64)
}

fn require(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::domain(msg.to_string()))
    }
}

/// Beam slots needed to align `k_ues` users.
///
/// Proposed: `N_W + K·k·1{k>1}`. Two-tier: `N_W + K·N_V/N_W`. Binary:
/// `2 + 2K·log2(N_V/2)`. Exhaustive: `N_V`. Genie: 0.
pub fn sweep_complexity(
    strategy: Strategy,
    k_ues: u64,
    n_narrow: u64,
    n_wide: u64,
    k: u64,
) -> Result<u64> {
    require(k_ues >= 1, "at least one UE required")?;
    match strategy {
        Strategy::Proposed => {
            require(n_wide >= 1, "probing codebook must be nonempty")?;
            require(k >= 1 && k <= n_narrow, "k must lie in [1, N_V]")?;
            Ok(n_wide + if k > 1 { k_ues * k } else { 0 })
        }
        Strategy::TwoTier => {
            require(n_wide >= 2 && n_narrow.is_multiple_of(n_wide), "wide count must divide narrow count")?;
            Ok(n_wide + k_ues * (n_narrow / n_wide))
        }
        Strategy::Binary => {
            require(n_narrow >= 2 && n_narrow.is_power_of_two(), "N_V must be a power of 2")?;
            let log2_half = (n_narrow / 2).trailing_zeros() as u64;
            Ok(2 + 2 * k_ues * log2_half)
        }
        Strategy::Exhaustive => Ok(n_narrow),
        Strategy::Genie => Ok(0),
    }
}

/// Feedback volume for `k_ues` users: (power reports, beam indices).
pub fn feedback_complexity(
    strategy: Strategy,
    k_ues: u64,
    n_wide: u64,
    n_narrow: u64,
    k: u64,
) -> Result<(u64, u64)> {
    require(k_ues >= 1, "at least one UE required")?;
    match strategy {
        Strategy::Proposed => Ok((k_ues * n_wide, if k > 1 { k_ues } else { 0 })),
        Strategy::TwoTier => Ok((0, 2 * k_ues)),
        Strategy::Binary => {
            require(n_narrow >= 2 && n_narrow.is_power_of_two(), "N_V must be a power of 2")?;
            Ok((0, k_ues * n_narrow.trailing_zeros() as u64))
        }
        Strategy::Exhaustive => Ok((0, k_ues)),
        Strategy::Genie => Ok((0, 0)),
    }
}

/// Mean silhouette coefficient over all samples with Euclidean distances.
///
/// Per sample: `(b−a)/max(a,b)` where `a` is the mean distance to same-label
/// samples and `b` the smallest mean distance to any other label's samples.
/// Samples in singleton clusters contribute 0.
pub fn silhouette(features: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let m = features.nrows();
    if m < 2 {
        return Err(Error::domain("silhouette needs at least 2 samples"));
    }
    if labels.len() != m {
        return Err(Error::domain("one label per feature row required"));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::domain("silhouette needs at least 2 distinct labels"));
    }
    let class_index: std::collections::HashMap<usize, usize> =
        classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut counts = vec![0usize; classes.len()];
    for &l in labels {
        counts[class_index[&l]] += 1;
    }

    let mut total = 0.0;
    let mut dist_sums = vec![0.0f64; classes.len()];
    for i in 0..m {
        for s in dist_sums.iter_mut() {
            *s = 0.0;
        }
        let row_i = features.row(i);
        for j in 0..m {
            if i == j {
                continue;
            }
            let d: f64 = row_i
                .iter()
                .zip(features.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist_sums[class_index[&labels[j]]] += d;
        }
        let own = class_index[&labels[i]];
        if counts[own] == 1 {
            continue; // singleton contributes 0
        }
        let a = dist_sums[own] / (counts[own] - 1) as f64;
        let b = dist_sums
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != own && counts[c] > 0)
            .map(|(c, &s)| s / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / m as f64)
}

/// One point of an accuracy-degradation curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationPoint {
    pub noise_power_mw: f64,
    /// Mean over UEs of the optimal beam's SNR at this noise level.
    pub mean_optimal_snr_db: f64,
    /// Zero-noise accuracy minus the accuracy at this noise level.
    pub accuracy_drop: f64,
}

/// Accuracy drop versus the mean optimal-beam SNR across noise levels.
///
/// The zero-noise baseline uses the same seed; positive-noise accuracy is
/// subtracted from it per level.
#[allow(clippy::too_many_arguments)]
pub fn accuracy_degradation_curve(
    dataset: &ChannelDataset,
    indices: &[usize],
    labels: &[usize],
    narrow: &Codebook,
    inputs: StrategyInputs<'_>,
    p_t: f64,
    noise_levels_mw: &[f64],
    rng_seed: u64,
) -> Result<Vec<DegradationPoint>> {
    if noise_levels_mw.is_empty() {
        return Err(Error::domain("at least one noise level required"));
    }
    let baseline = evaluate_strategy(
        dataset,
        indices,
        labels,
        narrow,
        inputs,
        p_t,
        &NoiseModel::noiseless(rng_seed),
    )?
    .post_sweep_accuracy;
    noise_levels_mw
        .iter()
        .map(|&sigma2| {
            let noise = NoiseModel::new(sigma2, rng_seed)?;
            let res = evaluate_strategy(dataset, indices, labels, narrow, inputs, p_t, &noise)?;
            Ok(DegradationPoint {
                noise_power_mw: sigma2,
                mean_optimal_snr_db: res.mean_optimal_snr_db,
                accuracy_drop: baseline - res.post_sweep_accuracy,
            })
        })
        .collect()
}
