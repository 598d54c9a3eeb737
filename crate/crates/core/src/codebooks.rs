//! Narrow-beam DFT codebooks, constant-modulus wide beams, and hierarchies.
//!
//! Every beamforming weight has modulus exactly `1/√Nt`: the array is driven
//! by phase shifters only. Wide beams are synthesized by alternating
//! projections between a flat-top pattern target on a sin-space grid and the
//! per-element constant-modulus set.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;

use crate::channel::{steering_vector_sin_space, ArrayConfig, ChannelVector};
use crate::error::{Error, Result};
use crate::format;
use crate::util::argmax_lowest;

/// How a codebook was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodebookKind {
    DftNarrow,
    WideSector,
    LearnedProbing,
}

impl CodebookKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CodebookKind::DftNarrow => "dft_narrow",
            CodebookKind::WideSector => "wide_sector",
            CodebookKind::LearnedProbing => "learned_probing",
        }
    }
}

/// Analog beamforming codebook: an `Nt × N` matrix of per-element
/// constant-modulus columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    kind: CodebookKind,
    weights: Array2<Complex64>,
}

/// Tolerance on the `1/√Nt` element modulus for constructed codebooks.
pub const MODULUS_TOL: f64 = 1e-9;

impl Codebook {
    /// Build a codebook, checking the constant-modulus constraint.
    pub fn from_weights(kind: CodebookKind, weights: Array2<Complex64>) -> Result<Self> {
        if weights.ncols() < 1 || weights.nrows() < 1 {
            return Err(Error::domain("codebook must have at least one beam and one element"));
        }
        let expect = 1.0 / (weights.nrows() as f64).sqrt();
        for (idx, w) in weights.iter().enumerate() {
            if (w.norm() - expect).abs() > MODULUS_TOL {
                return Err(Error::domain(format!(
                    "weight {idx} violates the constant-modulus constraint: |w|={} expected {expect}",
                    w.norm()
                )));
            }
        }
        Ok(Self { kind, weights })
    }

    /// Build a codebook without the modulus check.
    ///
    /// For test doubles and external inspection tools; callers own the
    /// constraint.
    pub fn from_weights_unchecked(kind: CodebookKind, weights: Array2<Complex64>) -> Self {
        Self { kind, weights }
    }

    pub fn kind(&self) -> CodebookKind {
        self.kind
    }

    pub fn weights(&self) -> &Array2<Complex64> {
        &self.weights
    }

    /// Number of antenna elements `Nt`.
    pub fn num_elements(&self) -> usize {
        self.weights.nrows()
    }

    /// Number of beams `N`.
    pub fn num_beams(&self) -> usize {
        self.weights.ncols()
    }

    pub fn beam(&self, i: usize) -> ArrayView1<'_, Complex64> {
        self.weights.column(i)
    }
}

/// Centers of an `N`-beam uniform sin-space grid: `ψ_i = (2i−N+1)/N`.
pub fn dft_grid_sin(num_beams: usize) -> Vec<f64> {
    (0..num_beams)
        .map(|i| (2.0 * i as f64 - num_beams as f64 + 1.0) / num_beams as f64)
        .collect()
}

/// DFT codebook: beams uniformly spaced in sin-azimuth, symmetric about
/// broadside. Column `i` is the steering vector at `ψ_i = (2i−N+1)/N`; at
/// half-wavelength spacing element `n` of column `i` is
/// `(1/√Nt)·exp(j·π·n·(2i−N+1)/N)`, and the critically sampled codebook
/// (`N = Nt`) is orthonormal.
pub fn dft_codebook(array: &ArrayConfig, num_beams: usize) -> Result<Codebook> {
    if num_beams < 1 {
        return Err(Error::domain("codebook needs at least one beam"));
    }
    let mut weights = Array2::zeros((array.num_elements, num_beams));
    for (i, psi) in dft_grid_sin(num_beams).into_iter().enumerate() {
        let col = steering_vector_sin_space(psi, array);
        weights.column_mut(i).assign(&col);
    }
    Codebook::from_weights(CodebookKind::DftNarrow, weights)
}

/// Evenly spaced subset of an `n_total`-beam DFT codebook.
///
/// Beam `j` of the subset is narrow beam `floor((j + 1/2)·n_total/n_select)`;
/// used as the fixed probing baseline the learned codebook is compared to.
pub fn dft_subsampled_codebook(array: &ArrayConfig, n_total: usize, n_select: usize) -> Result<Codebook> {
    if n_select < 1 || n_select > n_total {
        return Err(Error::domain("subsample size must lie in [1, n_total]"));
    }
    let full = dft_codebook(array, n_total)?;
    let mut weights = Array2::zeros((array.num_elements, n_select));
    for j in 0..n_select {
        let idx = ((j as f64 + 0.5) * n_total as f64 / n_select as f64) as usize;
        weights.column_mut(j).assign(&full.beam(idx.min(n_total - 1)));
    }
    Codebook::from_weights(CodebookKind::DftNarrow, weights)
}

/// Squared beamforming gains `|h^H v_i|²` for every beam of a codebook.
pub fn beamforming_gains(codebook: &Codebook, h: &ChannelVector) -> Result<Array1<f64>> {
    if h.len() != codebook.num_elements() {
        return Err(Error::domain(format!(
            "channel length {} does not match codebook elements {}",
            h.len(),
            codebook.num_elements()
        )));
    }
    Ok(Array1::from_iter((0..codebook.num_beams()).map(|i| {
        let z: Complex64 = codebook.beam(i).iter().zip(h.iter()).map(|(w, x)| w.conj() * x).sum();
        z.norm_sqr()
    })))
}

/// Result of a wide-beam synthesis run.
#[derive(Debug, Clone)]
pub struct WideBeamOutcome {
    /// Constant-modulus weights of the best iterate.
    pub weights: Array1<Complex64>,
    /// Whether the in/out-sector gain contract was met.
    pub converged: bool,
    /// Iterations actually executed.
    pub iterations: usize,
    /// Mean in-sector gain over mean out-of-sector gain at the best iterate
    /// (infinite when the sector covers the whole grid).
    pub in_out_ratio: f64,
}

/// Ratio of mean in-sector to mean out-of-sector gain a synthesized wide
/// beam must reach to count as converged.
pub const WIDE_BEAM_RATIO_GATE: f64 = 4.0;

const PATTERN_GRID: usize = 1024;

/// Sin-space pattern grid `ψ_k = −1 + 2k/G` and the in-sector mask for an
/// azimuth sector.
fn sector_grid(center: f64, width: f64) -> (Vec<f64>, Vec<bool>) {
    let lo = (center - width / 2.0).max(-std::f64::consts::FRAC_PI_2).sin();
    let hi = (center + width / 2.0).min(std::f64::consts::FRAC_PI_2).sin();
    let grid: Vec<f64> = (0..PATTERN_GRID).map(|k| -1.0 + 2.0 * k as f64 / PATTERN_GRID as f64).collect();
    let mask = grid.iter().map(|&p| p >= lo && p <= hi).collect();
    (grid, mask)
}

fn pattern_gains(steering: &Array2<Complex64>, w: &Array1<Complex64>) -> Vec<f64> {
    (0..steering.ncols())
        .map(|k| {
            let z: Complex64 = steering.column(k).iter().zip(w.iter()).map(|(a, x)| a.conj() * x).sum();
            z.norm_sqr()
        })
        .collect()
}

fn in_out_ratio(gains: &[f64], mask: &[bool]) -> f64 {
    let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0usize, 0.0, 0usize);
    for (&g, &m) in gains.iter().zip(mask) {
        if m {
            sin += g;
            nin += 1;
        } else {
            sout += g;
            nout += 1;
        }
    }
    if nout == 0 {
        return f64::INFINITY;
    }
    if nin == 0 {
        return 0.0;
    }
    let mean_out = sout / nout as f64;
    if mean_out == 0.0 {
        f64::INFINITY
    } else {
        (sin / nin as f64) / mean_out
    }
}

/// In-sector max/min gain: the ripple an iterate is judged by once the
/// sector covers the whole grid and the in/out ratio is vacuous.
fn in_sector_ripple(gains: &[f64], mask: &[bool]) -> f64 {
    let mut max = 0.0f64;
    let mut min = f64::INFINITY;
    for (&g, &m) in gains.iter().zip(mask) {
        if m {
            max = max.max(g);
            min = min.min(g);
        }
    }
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Project every element onto modulus `1/√Nt`, keeping its phase.
fn project_constant_modulus(w: &Array1<Complex64>) -> Array1<Complex64> {
    let scale = 1.0 / (w.len() as f64).sqrt();
    w.mapv(|c| {
        if c.norm() == 0.0 {
            Complex64::new(scale, 0.0)
        } else {
            Complex64::from_polar(scale, c.arg())
        }
    })
}

/// Solve `M x = b` for Hermitian positive-definite `M` via Cholesky.
fn solve_hermitian(m: &Array2<Complex64>, b: &Array1<Complex64>) -> Result<Array1<Complex64>> {
    let n = m.nrows();
    let mut l = Array2::<Complex64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]].conj();
            }
            if i == j {
                if sum.re <= 0.0 {
                    return Err(Error::domain("pattern grid matrix is not positive definite"));
                }
                l[[i, j]] = Complex64::new(sum.re.sqrt(), 0.0);
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    // Forward then backward substitution: L y = b, L^H x = y.
    let mut y = Array1::<Complex64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::<Complex64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[[k, i]].conj() * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    Ok(x)
}

/// Synthesize one constant-modulus wide beam over an azimuth sector.
///
/// Alternating projections: fit the weights to a flat-top magnitude target
/// on the sin-space grid (least-squares back-projection keeping the current
/// pattern phase), then snap each element back to modulus `1/√Nt`. The start
/// point is a sector-center steering vector with a linear-chirp phase taper.
/// Non-convergence after `max_iters` is reported, not raised; the outcome
/// carries the best iterate either way.
pub fn synthesize_wide_beam(
    array: &ArrayConfig,
    sector_center: f64,
    sector_width: f64,
    max_iters: usize,
    tol: f64,
) -> Result<WideBeamOutcome> {
    if sector_width.is_nan() || sector_width <= 0.0 || sector_width > std::f64::consts::PI {
        return Err(Error::domain("sector width must lie in (0, pi]"));
    }
    if max_iters < 1 {
        return Err(Error::domain("max_iters must be at least 1"));
    }
    let nt = array.num_elements;
    let (grid, mask) = sector_grid(sector_center, sector_width);
    let n_in = mask.iter().filter(|&&m| m).count().max(1);

    // Steering matrix over the grid and its Gram matrix for the LS step.
    let mut steering = Array2::zeros((nt, PATTERN_GRID));
    for (k, &psi) in grid.iter().enumerate() {
        steering.column_mut(k).assign(&steering_vector_sin_space(psi, array));
    }
    let mut gram = Array2::<Complex64>::zeros((nt, nt));
    for i in 0..nt {
        for j in 0..nt {
            let mut s = Complex64::new(0.0, 0.0);
            for k in 0..PATTERN_GRID {
                s += steering[[i, k]] * steering[[j, k]].conj();
            }
            gram[[i, j]] = s;
        }
    }
    // Tiny diagonal loading keeps the Cholesky well-posed at d/λ far from 1/2.
    for i in 0..nt {
        gram[[i, i]] += Complex64::new(1e-9 * PATTERN_GRID as f64 / nt as f64, 0.0);
    }

    // Flat-top magnitude target: all pattern energy inside the sector.
    let target_mag = (PATTERN_GRID as f64 / (nt as f64 * n_in as f64)).sqrt();

    // Linear-chirp start: instantaneous sin-frequency sweeps the sector.
    let sin_lo = (sector_center - sector_width / 2.0).max(-std::f64::consts::FRAC_PI_2).sin();
    let sin_hi = (sector_center + sector_width / 2.0).min(std::f64::consts::FRAC_PI_2).sin();
    let psi_c = 0.5 * (sin_lo + sin_hi);
    let dpsi = sin_hi - sin_lo;
    let scale = 1.0 / (nt as f64).sqrt();
    let mut w = Array1::from_iter((0..nt).map(|n| {
        let x = n as f64;
        let centered = x - (nt as f64 - 1.0) / 2.0;
        let chirp = if nt > 1 { dpsi / (2.0 * (nt as f64 - 1.0)) * centered * centered } else { 0.0 };
        Complex64::from_polar(scale, std::f64::consts::TAU * array.element_spacing_ratio * (psi_c * x + chirp))
    }));

    // Full-grid sectors have no out-sector; iterates are then ranked by
    // in-sector ripple instead of the (vacuous) in/out ratio.
    let full_sector = mask.iter().all(|&m| m);
    let score = |gains: &[f64]| -> f64 {
        if full_sector {
            -in_sector_ripple(gains, &mask)
        } else {
            in_out_ratio(gains, &mask)
        }
    };

    let init_gains = pattern_gains(&steering, &w);
    let mut best = w.clone();
    let mut best_score = score(&init_gains);
    let mut best_ratio = in_out_ratio(&init_gains, &mask);
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let pattern: Vec<Complex64> = (0..PATTERN_GRID)
            .map(|k| steering.column(k).iter().zip(w.iter()).map(|(a, x)| a.conj() * x).sum())
            .collect();
        // Magnitude target with the current phase, zero outside the sector.
        let mut rhs = Array1::<Complex64>::zeros(nt);
        for (k, p) in pattern.iter().enumerate() {
            if mask[k] {
                let t = if p.norm() == 0.0 {
                    Complex64::new(target_mag, 0.0)
                } else {
                    Complex64::from_polar(target_mag, p.arg())
                };
                for n in 0..nt {
                    rhs[n] += steering[[n, k]] * t;
                }
            }
        }
        let fitted = solve_hermitian(&gram, &rhs)?;
        let next = project_constant_modulus(&fitted);
        let gains = pattern_gains(&steering, &next);
        let s = score(&gains);
        if s > best_score {
            best_score = s;
            best_ratio = in_out_ratio(&gains, &mask);
            best = next.clone();
        }
        let delta: f64 = next.iter().zip(w.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        w = next;
        if best_ratio >= WIDE_BEAM_RATIO_GATE && delta < tol {
            break;
        }
    }
    Ok(WideBeamOutcome {
        weights: best,
        converged: best_ratio >= WIDE_BEAM_RATIO_GATE,
        iterations,
        in_out_ratio: best_ratio,
    })
}

/// One tier of a hierarchical codebook: its beams plus, for every beam, the
/// indices of the next tier it routes to. Leaf-tier beams have no children.
#[derive(Debug, Clone)]
pub struct HierarchyTier {
    pub codebook: Codebook,
    pub children: Vec<Vec<usize>>,
}

/// A multi-tier search codebook; the leaf tier is the narrow-beam codebook.
#[derive(Debug, Clone)]
pub struct HierarchicalCodebook {
    tiers: Vec<HierarchyTier>,
}

impl HierarchicalCodebook {
    /// Validate that every non-leaf tier's children partition the next tier.
    pub fn new(tiers: Vec<HierarchyTier>) -> Result<Self> {
        if tiers.is_empty() {
            return Err(Error::domain("hierarchy needs at least one tier"));
        }
        for t in 0..tiers.len() {
            let tier = &tiers[t];
            if tier.children.len() != tier.codebook.num_beams() {
                return Err(Error::domain(format!("tier {t} children list does not match beam count")));
            }
            if t + 1 == tiers.len() {
                if tier.children.iter().any(|c| !c.is_empty()) {
                    return Err(Error::domain("leaf tier beams must have no children"));
                }
                continue;
            }
            let next = tiers[t + 1].codebook.num_beams();
            let mut seen = vec![false; next];
            for kids in &tier.children {
                for &k in kids {
                    if k >= next || seen[k] {
                        return Err(Error::domain(format!(
                            "tier {t} children do not partition the next tier"
                        )));
                    }
                    seen[k] = true;
                }
            }
            if !seen.iter().all(|&s| s) {
                return Err(Error::domain(format!("tier {t} children do not cover the next tier")));
            }
        }
        Ok(Self { tiers })
    }

    pub fn tiers(&self) -> &[HierarchyTier] {
        &self.tiers
    }

    pub fn num_tiers(&self) -> usize {
        self.tiers.len()
    }

    pub fn leaf(&self) -> &HierarchyTier {
        self.tiers.last().expect("validated non-empty")
    }
}

/// Iterations given to each wide-beam synthesis inside the tier builders.
const TIER_BEAM_ITERS: usize = 200;
const TIER_BEAM_TOL: f64 = 1e-7;

fn wide_beam_for_cells(array: &ArrayConfig, n_narrow: usize, first_cell: usize, cells: usize) -> Result<Array1<Complex64>> {
    // Sector = the sin-space span of `cells` contiguous narrow-beam cells.
    let sin_lo = -1.0 + 2.0 * first_cell as f64 / n_narrow as f64;
    let sin_hi = -1.0 + 2.0 * (first_cell + cells) as f64 / n_narrow as f64;
    let az_lo = sin_lo.clamp(-1.0, 1.0).asin();
    let az_hi = sin_hi.clamp(-1.0, 1.0).asin();
    let outcome = synthesize_wide_beam(array, 0.5 * (az_lo + az_hi), az_hi - az_lo, TIER_BEAM_ITERS, TIER_BEAM_TOL)?;
    Ok(outcome.weights)
}

/// Two-tier hierarchy: `n_wide` contiguous-sector wide beams over the
/// `n_narrow`-beam DFT codebook. Wide beam `i` parents narrow beams
/// `[i·n_narrow/n_wide, (i+1)·n_narrow/n_wide)`.
pub fn build_two_tier(array: &ArrayConfig, n_narrow: usize, n_wide: usize) -> Result<HierarchicalCodebook> {
    if n_wide < 2 {
        return Err(Error::domain("two-tier hierarchy needs at least 2 wide beams"));
    }
    if !n_narrow.is_multiple_of(n_wide) {
        return Err(Error::domain(format!(
            "wide beam count {n_wide} must divide narrow beam count {n_narrow}"
        )));
    }
    let per = n_narrow / n_wide;
    let mut wide = Array2::zeros((array.num_elements, n_wide));
    let mut children = Vec::with_capacity(n_wide);
    for i in 0..n_wide {
        let w = wide_beam_for_cells(array, n_narrow, i * per, per)?;
        wide.column_mut(i).assign(&w);
        children.push((i * per..(i + 1) * per).collect());
    }
    let narrow = dft_codebook(array, n_narrow)?;
    HierarchicalCodebook::new(vec![
        HierarchyTier { codebook: Codebook::from_weights(CodebookKind::WideSector, wide)?, children },
        HierarchyTier { children: vec![Vec::new(); n_narrow], codebook: narrow },
    ])
}

/// Binary-tree hierarchy over an `n_narrow`-beam DFT codebook.
///
/// `log2(n_narrow)` tiers; tier `ℓ` (1-based) holds `2^ℓ` beams, each
/// covering `n_narrow/2^ℓ` contiguous narrow cells, and every non-leaf beam
/// has exactly two children. The leaf tier is the DFT codebook itself.
pub fn build_binary_tree(array: &ArrayConfig, n_narrow: usize) -> Result<HierarchicalCodebook> {
    if n_narrow < 2 || !n_narrow.is_power_of_two() {
        return Err(Error::domain(format!("narrow beam count {n_narrow} must be a power of 2, >= 2")));
    }
    let levels = n_narrow.trailing_zeros() as usize;
    let mut tiers = Vec::with_capacity(levels);
    for level in 1..=levels {
        let beams = 1usize << level;
        let cells = n_narrow / beams;
        let codebook = if level == levels {
            dft_codebook(array, n_narrow)?
        } else {
            let mut weights = Array2::zeros((array.num_elements, beams));
            for b in 0..beams {
                let w = wide_beam_for_cells(array, n_narrow, b * cells, cells)?;
                weights.column_mut(b).assign(&w);
            }
            Codebook::from_weights(CodebookKind::WideSector, weights)?
        };
        let children = if level == levels {
            vec![Vec::new(); beams]
        } else {
            (0..beams).map(|b| vec![2 * b, 2 * b + 1]).collect()
        };
        tiers.push(HierarchyTier { codebook, children });
    }
    HierarchicalCodebook::new(tiers)
}

/// Index of the narrow beam whose noiseless gain is largest (ties lowest).
pub fn best_beam(codebook: &Codebook, h: &ChannelVector) -> Result<usize> {
    let gains = beamforming_gains(codebook, h)?;
    argmax_lowest(gains.as_slice().expect("contiguous"))
        .ok_or_else(|| Error::domain("empty codebook"))
}

/// Export the weight matrix in the BACD payload layout plus a sidecar
/// `<path>.meta` text file carrying the kind tag, for external plotting.
pub fn save_codebook(codebook: &Codebook, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(b"BACD")?;
    format::write_u32(&mut w, 1)?;
    format::write_u32(&mut w, codebook.num_elements() as u32)?;
    format::write_f64(&mut w, 0.5)?;
    format::write_f64(&mut w, 0.0)?;
    format::write_u64(&mut w, codebook.num_beams() as u64)?;
    format::write_u8(&mut w, 0)?;
    format::write_f64(&mut w, 1.0)?;
    for i in 0..codebook.num_beams() {
        for c in codebook.beam(i).iter() {
            format::write_f64(&mut w, c.re)?;
            format::write_f64(&mut w, c.im)?;
        }
    }
    w.flush()?;
    let mut meta = File::create(path.with_extension("meta"))?;
    writeln!(meta, "kind={}", codebook.kind().as_str())?;
    writeln!(meta, "num_elements={}", codebook.num_elements())?;
    writeln!(meta, "num_beams={}", codebook.num_beams())?;
    Ok(())
}
