//! Ray-based channel synthesis, parametric scene generation, and dataset I/O.
//!
//! A channel is the sum of per-path complex gains times ULA steering vectors.
//! Scenes describe clusters of departure angles; [`generate_dataset`] draws
//! seeded samples from them and [`save_dataset`]/[`load_dataset`] persist the
//! result in the fixed-width "BACD" binary format.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array1;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::format;
use crate::rng::{substream_rng, substream_seed};

/// One user's downlink channel: a complex vector of length `Nt`.
pub type ChannelVector = Array1<Complex64>;

/// Uniform linear array geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayConfig {
    /// Number of antenna elements `Nt`.
    pub num_elements: usize,
    /// Element spacing over carrier wavelength, `d/λ`.
    pub element_spacing_ratio: f64,
    /// Carrier frequency in GHz. Metadata only; the array is parameterized
    /// by `d/λ` so the carrier never enters the math.
    pub carrier_frequency_ghz: f64,
}

impl ArrayConfig {
    pub fn new(num_elements: usize, element_spacing_ratio: f64, carrier_frequency_ghz: f64) -> Result<Self> {
        if num_elements < 1 {
            return Err(Error::domain("array must have at least one element"));
        }
        if element_spacing_ratio.is_nan() || element_spacing_ratio <= 0.0 {
            return Err(Error::domain("element spacing ratio must be positive"));
        }
        Ok(Self { num_elements, element_spacing_ratio, carrier_frequency_ghz })
    }

    /// Half-wavelength ULA at 28 GHz, the usual simulation default.
    pub fn half_wavelength(num_elements: usize) -> Result<Self> {
        Self::new(num_elements, 0.5, 28.0)
    }
}

/// A single propagation path: complex gain and azimuth angle of departure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSpec {
    pub gain: Complex64,
    /// Azimuth AoD in radians, inside the open interval (−π/2, π/2).
    pub azimuth_rad: f64,
}

impl PathSpec {
    pub fn new(gain: Complex64, azimuth_rad: f64) -> Result<Self> {
        check_azimuth(azimuth_rad)?;
        Ok(Self { gain, azimuth_rad })
    }
}

/// One angular cluster of a synthetic scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig {
    pub mean_azimuth_rad: f64,
    /// Standard deviation of per-path azimuth draws, radians.
    pub angular_spread_rad: f64,
    pub mean_gain_db: f64,
    /// Standard deviation of per-path gain draws, dB.
    pub gain_spread_db: f64,
    pub path_count: usize,
}

/// Parametric scene: clusters of departure angles plus a LOS surrogate rule.
///
/// The first cluster plays the LOS role: each sample keeps it with
/// probability `los_probability` and drops it otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub clusters: Vec<ClusterConfig>,
    pub los_probability: f64,
    pub rng_seed: u64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters.is_empty() {
            return Err(Error::domain("scene needs at least one cluster"));
        }
        if !(0.0..=1.0).contains(&self.los_probability) {
            return Err(Error::domain("los_probability must lie in [0, 1]"));
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.path_count < 1 {
                return Err(Error::domain(format!("cluster {i} has zero paths")));
            }
            if c.angular_spread_rad < 0.0 || c.gain_spread_db < 0.0 {
                return Err(Error::domain(format!("cluster {i} has a negative spread")));
            }
            if !(-FRAC_PI_2..=FRAC_PI_2).contains(&c.mean_azimuth_rad) {
                return Err(Error::domain(format!("cluster {i} mean azimuth outside [-pi/2, pi/2]")));
            }
        }
        if self.clusters.len() == 1 && self.los_probability == 0.0 {
            return Err(Error::domain(
                "single-cluster scene with los_probability 0 would only produce empty channels",
            ));
        }
        Ok(())
    }
}

/// A set of channel realizations sharing one array geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDataset {
    pub array: ArrayConfig,
    pub channels: Vec<ChannelVector>,
    /// `Some(f)` once the dataset has been scaled by `1/f` via
    /// [`normalize_dataset`]; noise powers must then be scaled by `1/f²`.
    pub normalization_factor: Option<f64>,
}

impl ChannelDataset {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalization_factor.is_some()
    }

    /// Largest element magnitude across all samples.
    pub fn max_element_magnitude(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|h| h.iter().map(|c| c.norm()))
            .fold(0.0, f64::max)
    }
}

fn check_azimuth(azimuth_rad: f64) -> Result<()> {
    if !(azimuth_rad > -FRAC_PI_2 && azimuth_rad < FRAC_PI_2) {
        return Err(Error::domain(format!(
            "azimuth {azimuth_rad} rad outside the open interval (-pi/2, pi/2)"
        )));
    }
    Ok(())
}

/// ULA steering vector at the given azimuth.
///
/// Element `n` is `(1/√Nt)·exp(j·2π·(d/λ)·n·sin(azimuth))`; the result has
/// unit 2-norm and element modulus `1/√Nt`.
pub fn steering_vector(azimuth_rad: f64, array: &ArrayConfig) -> Result<ChannelVector> {
    check_azimuth(azimuth_rad)?;
    Ok(steering_vector_sin_space(azimuth_rad.sin(), array))
}

/// Steering vector parameterized directly by `ψ = sin(azimuth)`.
///
/// Used by codebook constructions that place beams on a sin-space grid.
pub fn steering_vector_sin_space(sin_azimuth: f64, array: &ArrayConfig) -> ChannelVector {
    let nt = array.num_elements;
    let scale = 1.0 / (nt as f64).sqrt();
    let step = TAU * array.element_spacing_ratio * sin_azimuth;
    Array1::from_iter((0..nt).map(|n| Complex64::from_polar(scale, step * n as f64)))
}

/// Sum of per-path steering vectors weighted by complex gains.
pub fn synthesize_channel(paths: &[PathSpec], array: &ArrayConfig) -> Result<ChannelVector> {
    if paths.is_empty() {
        return Err(Error::domain("channel synthesis needs at least one path"));
    }
    let mut h = Array1::zeros(array.num_elements);
    for path in paths {
        let a = steering_vector(path.azimuth_rad, array)?;
        h = h + a.mapv(|v| v * path.gain);
    }
    Ok(h)
}

// Stream ids within one sample's substream.
const STREAM_LOS: u64 = 0;
const STREAM_PATHS: u64 = 1;
// Scene-level stream for per-(cluster, path) phases.
const STREAM_PHASE: u64 = u64::MAX;

/// Per-path phase, fixed per (cluster, path) slot for the whole scene.
///
/// Keeping the phase on a scene-level sub-seed (rather than per sample)
/// makes a zero-spread cluster produce literally identical channels, which
/// pins down degenerate-scene behavior in tests.
fn path_phase(scene_seed: u64, cluster: usize, path: usize) -> f64 {
    let slot = ((cluster as u64) << 32) | path as u64;
    let mut rng = substream_rng(substream_seed(scene_seed, STREAM_PHASE), slot);
    rng.random_range(0.0..TAU)
}

fn draw_sample_paths(
    scene: &SceneConfig,
    sample_seed: u64,
    phases: &[Vec<f64>],
) -> Result<Vec<PathSpec>> {
    let mut los_rng = substream_rng(sample_seed, STREAM_LOS);
    let mut path_rng = substream_rng(sample_seed, STREAM_PATHS);
    loop {
        let keep_first = los_rng.random_range(0.0..1.0) < scene.los_probability;
        let mut paths = Vec::new();
        for (ci, cluster) in scene.clusters.iter().enumerate() {
            if ci == 0 && !keep_first {
                continue;
            }
            let az_dist = Normal::new(cluster.mean_azimuth_rad, cluster.angular_spread_rad)
                .map_err(|e| Error::domain(format!("bad azimuth distribution: {e}")))?;
            let gain_dist = Normal::new(cluster.mean_gain_db, cluster.gain_spread_db)
                .map_err(|e| Error::domain(format!("bad gain distribution: {e}")))?;
            for &phase in &phases[ci] {
                let az = clip_to_open_halfspace(az_dist.sample(&mut path_rng));
                let amp = 10f64.powf(gain_dist.sample(&mut path_rng) / 20.0);
                let gain = Complex64::from_polar(amp, phase);
                paths.push(PathSpec { gain, azimuth_rad: az });
            }
        }
        if !paths.is_empty() {
            return Ok(paths);
        }
        // Single-cluster scene whose LOS draw dropped everything: redraw.
    }
}

fn clip_to_open_halfspace(azimuth_rad: f64) -> f64 {
    const MARGIN: f64 = 1e-9;
    azimuth_rad.clamp(-FRAC_PI_2 + MARGIN, FRAC_PI_2 - MARGIN)
}

/// Draw `count` seeded channel realizations from a scene.
///
/// Sample `i` consumes only the sub-stream derived from
/// `(scene.rng_seed, i)`, so the output is a pure function of the inputs and
/// is unchanged by splitting the generation across threads or processes.
pub fn generate_dataset(scene: &SceneConfig, count: usize, array: &ArrayConfig) -> Result<ChannelDataset> {
    scene.validate()?;
    if count < 1 {
        return Err(Error::domain("dataset must contain at least one sample"));
    }
    let phases: Vec<Vec<f64>> = scene
        .clusters
        .iter()
        .enumerate()
        .map(|(ci, c)| (0..c.path_count).map(|pi| path_phase(scene.rng_seed, ci, pi)).collect())
        .collect();
    let mut channels = Vec::with_capacity(count);
    for i in 0..count {
        let sample_seed = substream_seed(scene.rng_seed, i as u64);
        let paths = draw_sample_paths(scene, sample_seed, &phases)?;
        channels.push(synthesize_channel(&paths, array)?);
    }
    Ok(ChannelDataset { array: *array, channels, normalization_factor: None })
}

/// Scale the dataset so its largest element magnitude is exactly 1.
///
/// Returns the scale factor; measurement noise powers on the original scale
/// must be divided by `factor²` to keep SNRs unchanged. Normalizing an
/// already-normalized dataset is the identity with factor 1.
pub fn normalize_dataset(dataset: ChannelDataset) -> Result<(ChannelDataset, f64)> {
    if dataset.is_empty() {
        return Err(Error::domain("cannot normalize an empty dataset"));
    }
    if dataset.is_normalized() {
        return Ok((dataset, 1.0));
    }
    let factor = dataset.max_element_magnitude();
    if factor == 0.0 {
        return Err(Error::domain("cannot normalize an all-zero dataset"));
    }
    let channels = dataset.channels.into_iter().map(|h| h.mapv(|c| c / factor)).collect();
    Ok((
        ChannelDataset { array: dataset.array, channels, normalization_factor: Some(factor) },
        factor,
    ))
}

const BACD_MAGIC: &[u8; 4] = b"BACD";
const BACD_VERSION: u32 = 1;

/// Write a dataset in the BACD binary format (all fields little-endian).
///
/// Header: magic `BACD`, u32 version=1, u32 `Nt`, f64 `d/λ`, f64 carrier GHz,
/// u64 sample count, u8 normalized flag, f64 normalization factor. Payload:
/// `count × Nt` complex values as `(re, im)` f64 pairs, sample-major.
pub fn save_dataset(dataset: &ChannelDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BACD_MAGIC)?;
    format::write_u32(&mut w, BACD_VERSION)?;
    format::write_u32(&mut w, dataset.array.num_elements as u32)?;
    format::write_f64(&mut w, dataset.array.element_spacing_ratio)?;
    format::write_f64(&mut w, dataset.array.carrier_frequency_ghz)?;
    format::write_u64(&mut w, dataset.channels.len() as u64)?;
    format::write_u8(&mut w, dataset.normalization_factor.is_some() as u8)?;
    format::write_f64(&mut w, dataset.normalization_factor.unwrap_or(1.0))?;
    for h in &dataset.channels {
        if h.len() != dataset.array.num_elements {
            return Err(Error::domain("channel length does not match array size"));
        }
        for c in h.iter() {
            format::write_f64(&mut w, c.re)?;
            format::write_f64(&mut w, c.im)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a BACD dataset; the exact inverse of [`save_dataset`].
pub fn load_dataset(path: impl AsRef<Path>) -> Result<ChannelDataset> {
    let mut r = BufReader::new(File::open(path)?);
    format::read_magic(&mut r, BACD_MAGIC)?;
    let version = format::read_u32(&mut r, "version")?;
    if version != BACD_VERSION {
        return Err(Error::format(format!("unsupported version {version} (expected {BACD_VERSION})")));
    }
    let nt = format::read_u32(&mut r, "num_elements")? as usize;
    if nt < 1 {
        return Err(Error::format("invalid num_elements: 0"));
    }
    let spacing = format::read_f64(&mut r, "element_spacing_ratio")?;
    if spacing.is_nan() || spacing <= 0.0 {
        return Err(Error::format(format!("invalid element_spacing_ratio: {spacing}")));
    }
    let carrier = format::read_f64(&mut r, "carrier_frequency_ghz")?;
    let count = format::read_u64(&mut r, "count")? as usize;
    let normalized = match format::read_u8(&mut r, "normalized flag")? {
        0 => false,
        1 => true,
        other => return Err(Error::format(format!("invalid normalized flag: {other}"))),
    };
    let factor = format::read_f64(&mut r, "normalization factor")?;
    if normalized && (factor.is_nan() || factor <= 0.0) {
        return Err(Error::format(format!("invalid normalization factor: {factor}")));
    }
    let mut channels = Vec::with_capacity(count);
    for i in 0..count {
        let mut h = Array1::zeros(nt);
        for n in 0..nt {
            let field = format!("sample {i} element {n}");
            let re = format::read_f64(&mut r, &field)?;
            let im = format::read_f64(&mut r, &field)?;
            h[n] = Complex64::new(re, im);
        }
        channels.push(h);
    }
    Ok(ChannelDataset {
        array: ArrayConfig { num_elements: nt, element_spacing_ratio: spacing, carrier_frequency_ghz: carrier },
        channels,
        normalization_factor: normalized.then_some(factor),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn ula(nt: usize) -> ArrayConfig {
        ArrayConfig::half_wavelength(nt).unwrap()
    }

    #[test]
    fn steering_at_broadside_is_constant() {
        let a = steering_vector(0.0, &ula(4)).unwrap();
        for c in a.iter() {
            assert!((c - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn steering_near_endfire_alternates_sign() {
        // At sin(az) -> 1 with Nt=2, d/λ=0.5 the phases approach 0 and π.
        let az = FRAC_PI_2 - 1e-9;
        let a = steering_vector(az, &ula(2)).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((a[0].re - s).abs() < 1e-7 && a[0].im.abs() < 1e-7);
        assert!((a[1].re + s).abs() < 1e-7 && a[1].im.abs() < 1e-7);
    }

    #[test]
    fn steering_at_30_degrees_steps_by_quarter_turn() {
        // Phase step π·sin(π/6) = π/2: elements cycle 1, j, -1, -j.
        let a = steering_vector(PI / 6.0, &ula(4)).unwrap();
        let expect = [
            Complex64::new(0.5, 0.0),
            Complex64::new(0.0, 0.5),
            Complex64::new(-0.5, 0.0),
            Complex64::new(0.0, -0.5),
        ];
        for (got, want) in a.iter().zip(expect) {
            assert!((got - want).norm() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn steering_unit_norm_and_modulus() {
        for &az in &[-1.2, -0.3, 0.0, 0.7, 1.5] {
            for &nt in &[1usize, 2, 7, 64] {
                let a = steering_vector(az, &ula(nt)).unwrap();
                let norm: f64 = a.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-12);
                let m = 1.0 / (nt as f64).sqrt();
                for c in a.iter() {
                    assert!((c.norm() - m).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn steering_rejects_out_of_range_azimuth() {
        assert!(steering_vector(FRAC_PI_2, &ula(4)).is_err());
        assert!(steering_vector(-FRAC_PI_2, &ula(4)).is_err());
        assert!(steering_vector(2.0, &ula(4)).is_err());
    }

    #[test]
    fn single_path_channel_is_scaled_steering() {
        let p = PathSpec::new(Complex64::new(1.0, 0.0), 0.0).unwrap();
        let h = synthesize_channel(&[p], &ula(4)).unwrap();
        for c in h.iter() {
            assert!((c - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn opposite_gains_cancel() {
        let a = PathSpec::new(Complex64::new(1.0, 0.0), 0.0).unwrap();
        let b = PathSpec::new(Complex64::new(-1.0, 0.0), 0.0).unwrap();
        let h = synthesize_channel(&[a, b], &ula(4)).unwrap();
        for c in h.iter() {
            assert_eq!(*c, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn multi_path_matches_scalar_loop_oracle() {
        let array = ula(8);
        let paths = [
            PathSpec::new(Complex64::new(0.3, -1.1), 0.4).unwrap(),
            PathSpec::new(Complex64::new(-0.7, 0.2), -0.9).unwrap(),
            PathSpec::new(Complex64::new(1.5, 0.5), 1.2).unwrap(),
        ];
        let h = synthesize_channel(&paths, &array).unwrap();
        // Independent scalar-loop evaluation of the sum.
        let nt = array.num_elements;
        let scale = 1.0 / (nt as f64).sqrt();
        for n in 0..nt {
            let mut want = Complex64::new(0.0, 0.0);
            for p in &paths {
                let phase = TAU * 0.5 * p.azimuth_rad.sin() * n as f64;
                want += p.gain * Complex64::from_polar(scale, phase);
            }
            assert!((h[n] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn empty_path_list_is_rejected() {
        assert!(synthesize_channel(&[], &ula(4)).is_err());
    }

    fn two_cluster_scene(seed: u64) -> SceneConfig {
        SceneConfig {
            clusters: vec![
                ClusterConfig {
                    mean_azimuth_rad: -PI / 4.0,
                    angular_spread_rad: 0.05,
                    mean_gain_db: 0.0,
                    gain_spread_db: 2.0,
                    path_count: 2,
                },
                ClusterConfig {
                    mean_azimuth_rad: PI / 4.0,
                    angular_spread_rad: 0.05,
                    mean_gain_db: -3.0,
                    gain_spread_db: 2.0,
                    path_count: 2,
                },
            ],
            los_probability: 0.8,
            rng_seed: seed,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let scene = two_cluster_scene(7);
        let a = generate_dataset(&scene, 100, &ula(8)).unwrap();
        let b = generate_dataset(&scene, 100, &ula(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_cluster_yields_identical_channels() {
        let scene = SceneConfig {
            clusters: vec![ClusterConfig {
                mean_azimuth_rad: 0.3,
                angular_spread_rad: 0.0,
                mean_gain_db: 0.0,
                gain_spread_db: 0.0,
                path_count: 1,
            }],
            los_probability: 1.0,
            rng_seed: 13,
        };
        let ds = generate_dataset(&scene, 100, &ula(8)).unwrap();
        for h in &ds.channels[1..] {
            assert_eq!(h, &ds.channels[0]);
        }
    }

    #[test]
    fn azimuth_histogram_shows_both_cluster_modes() {
        let mut scene = two_cluster_scene(21);
        scene.clusters[0].path_count = 1;
        scene.clusters[1].path_count = 1;
        scene.clusters[1].mean_gain_db = 0.0;
        scene.los_probability = 1.0;
        let count = 10_000u64;
        // Recover per-sample azimuths through the generator's own stream
        // derivation, then histogram them.
        let phases: Vec<Vec<f64>> = vec![
            vec![path_phase(scene.rng_seed, 0, 0)],
            vec![path_phase(scene.rng_seed, 1, 0)],
        ];
        let mut histogram = [0usize; 36]; // 5-degree bins over (-90, 90)
        for i in 0..count {
            let paths = draw_sample_paths(&scene, substream_seed(scene.rng_seed, i), &phases).unwrap();
            for p in paths {
                let bin = (((p.azimuth_rad + FRAC_PI_2) / PI) * 36.0) as usize;
                histogram[bin.min(35)] += 1;
            }
        }
        // Modes at ±45°: bins 9 (-45°) and 27 (+45°).
        let peak = *histogram.iter().max().unwrap();
        assert!(histogram[9] as f64 > 0.5 * peak as f64);
        assert!(histogram[27] as f64 > 0.5 * peak as f64);
        // Broadside should be nearly empty.
        assert!(histogram[17] + histogram[18] < count as usize / 100);
    }

    #[test]
    fn single_cluster_nlos_scene_never_emits_empty_channels() {
        let scene = SceneConfig {
            clusters: vec![ClusterConfig {
                mean_azimuth_rad: 0.0,
                angular_spread_rad: 0.1,
                mean_gain_db: 0.0,
                gain_spread_db: 0.0,
                path_count: 1,
            }],
            los_probability: 0.3,
            rng_seed: 5,
        };
        let ds = generate_dataset(&scene, 500, &ula(4)).unwrap();
        assert_eq!(ds.len(), 500);
        for h in &ds.channels {
            assert!(h.iter().any(|c| c.norm() > 0.0));
        }
    }

    #[test]
    fn normalize_scales_max_magnitude_to_one() {
        let array = ula(2);
        let channels = vec![
            Array1::from_vec(vec![Complex64::new(4.0, 0.0), Complex64::new(0.0, 1.0)]),
            Array1::from_vec(vec![Complex64::new(-2.0, 0.0), Complex64::new(1.0, 1.0)]),
        ];
        let ds = ChannelDataset { array, channels, normalization_factor: None };
        let (norm, factor) = normalize_dataset(ds).unwrap();
        assert_eq!(factor, 4.0);
        assert!((norm.max_element_magnitude() - 1.0).abs() < 1e-12);
        assert_eq!(norm.normalization_factor, Some(4.0));
    }

    #[test]
    fn normalize_is_idempotent() {
        let scene = two_cluster_scene(3);
        let ds = generate_dataset(&scene, 50, &ula(8)).unwrap();
        let (once, _) = normalize_dataset(ds).unwrap();
        let (twice, factor) = normalize_dataset(once.clone()).unwrap();
        assert_eq!(factor, 1.0);
        assert_eq!(once, twice);
    }

    #[test]
    fn normalize_rejects_all_zero_dataset() {
        let ds = ChannelDataset {
            array: ula(2),
            channels: vec![Array1::zeros(2)],
            normalization_factor: None,
        };
        assert!(normalize_dataset(ds).is_err());
    }

    #[test]
    fn normalize_preserves_relative_geometry() {
        let scene = two_cluster_scene(11);
        let ds = generate_dataset(&scene, 20, &ula(4)).unwrap();
        let ratio_before = ds.channels[3][1] / ds.channels[7][2];
        let (norm, _) = normalize_dataset(ds).unwrap();
        let ratio_after = norm.channels[3][1] / norm.channels[7][2];
        assert!((ratio_before - ratio_after).norm() < 1e-12);
    }

    #[test]
    fn dataset_roundtrip_is_bit_exact() {
        let scene = two_cluster_scene(42);
        let (ds, _) = normalize_dataset(generate_dataset(&scene, 30, &ula(8)).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.bacd");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(ds.array, back.array);
        assert_eq!(ds.normalization_factor, back.normalization_factor);
        assert_eq!(ds.channels.len(), back.channels.len());
        for (a, b) in ds.channels.iter().zip(&back.channels) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.re.to_bits(), y.re.to_bits());
                assert_eq!(x.im.to_bits(), y.im.to_bits());
            }
        }
    }

    #[test]
    fn load_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bacd");
        std::fs::write(&path, b"XXXXrest-of-file-irrelevant").unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn load_rejects_truncated_payload() {
        let scene = two_cluster_scene(1);
        let ds = generate_dataset(&scene, 5, &ula(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.bacd");
        save_dataset(&ds, &path).unwrap();
        // Drop one sample's worth of payload: header says 5, file holds 4.
        let bytes = std::fs::read(&path).unwrap();
        let cut = bytes.len() - 4 * 16;
        std::fs::write(&path, &bytes[..cut]).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    proptest! {
        #[test]
        fn channel_is_linear_in_path_gains(
            re in -2.0f64..2.0, im in -2.0f64..2.0,
            az1 in -1.4f64..1.4, az2 in -1.4f64..1.4,
        ) {
            let array = ula(4);
            let c = Complex64::new(re, im);
            let base = [
                PathSpec::new(Complex64::new(1.0, -0.5), az1).unwrap(),
                PathSpec::new(Complex64::new(-0.3, 0.8), az2).unwrap(),
            ];
            let scaled: Vec<PathSpec> = base
                .iter()
                .map(|p| PathSpec::new(p.gain * c, p.azimuth_rad).unwrap())
                .collect();
            let h = synthesize_channel(&base, &array).unwrap();
            let hs = synthesize_channel(&scaled, &array).unwrap();
            for (a, b) in h.iter().zip(hs.iter()) {
                prop_assert!((a * c - b).norm() < 1e-12);
            }
        }
    }
}
