//! Uniform-linear-array mathematics: steering vectors, the oversampled DFT
//! codebook, matched-filter received power and the exhaustive-search beam
//! oracle.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-wavelength element spacing.
pub const DEFAULT_SPACING_RATIO: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PhyError {
    #[error("invalid sector [{lo}, {hi}]")]
    InvalidSector { lo: f64, hi: f64 },
    #[error("codebook needs at least as many beams as antennas (antennas={antennas}, beams={beams})")]
    InvalidSize { antennas: usize, beams: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

/// Azimuth interval in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub lo: f64,
    pub hi: f64,
}

impl Sector {
    pub fn from_degrees(lo: f64, hi: f64) -> Self {
        Self { lo: lo.to_radians(), hi: hi.to_radians() }
    }

    /// The ±45° camera-aligned sector.
    pub fn camera() -> Self {
        Self::from_degrees(-45.0, 45.0)
    }
}

/// ULA response `(1/√N)·exp(j·2π·(d/λ)·k·sin φ)` for `k = 0…N−1`.
pub fn steering_vector(phi: f64, n_antennas: usize, spacing_ratio: f64) -> Vec<Complex64> {
    let norm = 1.0 / (n_antennas as f64).sqrt();
    let step = 2.0 * PI * spacing_ratio * libm::sin(phi);
    (0..n_antennas).map(|k| Complex64::from_polar(norm, step * k as f64)).collect()
}

/// Serializable codebook parameters; the sector is in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodebookConfig {
    pub num_antennas: usize,
    pub num_beams: usize,
    pub sector_deg: [f64; 2],
    pub spacing_ratio: f64,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self { num_antennas: 16, num_beams: 32, sector_deg: [-45.0, 45.0], spacing_ratio: DEFAULT_SPACING_RATIO }
    }
}

impl CodebookConfig {
    pub fn build(&self) -> Result<BeamCodebook, PhyError> {
        BeamCodebook::new(
            self.num_antennas,
            self.num_beams,
            Sector::from_degrees(self.sector_deg[0], self.sector_deg[1]),
            self.spacing_ratio,
        )
    }
}

/// Oversampled DFT codebook over an azimuth sector.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamCodebook {
    num_antennas: usize,
    num_beams: usize,
    spacing_ratio: f64,
    sector: Sector,
    beam_angles: Vec<f64>,
    /// Column-major `N×M`: beam `m` occupies `beams[m*N .. (m+1)*N]`.
    beams: Vec<Complex64>,
}

/// Codebook with beam angles equispaced in `sin φ` across `sector`,
/// endpoints included.
pub fn build_codebook(n_antennas: usize, n_beams: usize, sector: Sector) -> Result<BeamCodebook, PhyError> {
    BeamCodebook::new(n_antennas, n_beams, sector, DEFAULT_SPACING_RATIO)
}

impl BeamCodebook {
    pub fn new(n_antennas: usize, n_beams: usize, sector: Sector, spacing_ratio: f64) -> Result<Self, PhyError> {
        let half_pi = PI / 2.0 + 1e-12;
        if !(sector.lo < sector.hi) || sector.lo < -half_pi || sector.hi > half_pi {
            return Err(PhyError::InvalidSector { lo: sector.lo, hi: sector.hi });
        }
        if n_antennas == 0 || n_beams < n_antennas || n_beams < 2 {
            return Err(PhyError::InvalidSize { antennas: n_antennas, beams: n_beams });
        }
        let s_lo = libm::sin(sector.lo);
        let s_hi = libm::sin(sector.hi);
        let beam_angles: Vec<f64> = (0..n_beams)
            .map(|m| {
                let s = s_lo + (s_hi - s_lo) * m as f64 / (n_beams - 1) as f64;
                libm::asin(s.clamp(-1.0, 1.0))
            })
            .collect();
        let beams = beam_angles.iter().flat_map(|&phi| steering_vector(phi, n_antennas, spacing_ratio)).collect();
        Ok(Self { num_antennas: n_antennas, num_beams: n_beams, spacing_ratio, sector, beam_angles, beams })
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn num_beams(&self) -> usize {
        self.num_beams
    }

    pub fn spacing_ratio(&self) -> f64 {
        self.spacing_ratio
    }

    pub fn sector(&self) -> Sector {
        self.sector
    }

    /// Beam azimuths in radians, indexed from 0 (beam index 1 is element 0).
    pub fn beam_angles(&self) -> &[f64] {
        &self.beam_angles
    }

    /// Beamforming vector of the 1-based beam index `m`.
    pub fn beam(&self, m: usize) -> &[Complex64] {
        assert!((1..=self.num_beams).contains(&m), "beam index {m} out of range");
        let n = self.num_antennas;
        &self.beams[(m - 1) * n..m * n]
    }

    /// Best beam for a unit-gain line-of-sight path at `azimuth` (radians).
    pub fn nearest_beam(&self, azimuth: f64) -> usize {
        let h = ChannelRealization::line_of_sight(azimuth, self.num_antennas, self.spacing_ratio);
        optimal_beam(&h, self).expect("LoS channel matches the codebook size")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub complex_gain: Complex64,
    pub azimuth: f64,
}

/// Geometric multipath channel `h = Σ g_p · a(φ_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub paths: Vec<Path>,
    pub vector: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn from_paths(paths: Vec<Path>, n_antennas: usize, spacing_ratio: f64) -> Self {
        let mut vector = alloc::vec![Complex64::new(0.0, 0.0); n_antennas];
        for p in &paths {
            for (h, a) in vector.iter_mut().zip(steering_vector(p.azimuth, n_antennas, spacing_ratio)) {
                *h += p.complex_gain * a;
            }
        }
        Self { paths, vector }
    }

    pub fn line_of_sight(azimuth: f64, n_antennas: usize, spacing_ratio: f64) -> Self {
        Self::from_paths(
            alloc::vec![Path { complex_gain: Complex64::new(1.0, 0.0), azimuth }],
            n_antennas,
            spacing_ratio,
        )
    }

    /// The same channel with every gain multiplied by `alpha`.
    pub fn scaled(&self, alpha: Complex64) -> Self {
        Self {
            paths: self
                .paths
                .iter()
                .map(|p| Path { complex_gain: p.complex_gain * alpha, azimuth: p.azimuth })
                .collect(),
            vector: self.vector.iter().map(|h| h * alpha).collect(),
        }
    }
}

fn inner(h: &[Complex64], f: &[Complex64]) -> Result<Complex64, PhyError> {
    if h.len() != f.len() {
        return Err(PhyError::DimensionMismatch { left: h.len(), right: f.len() });
    }
    Ok(h.iter().zip(f).map(|(h, f)| h.conj() * f).sum())
}

/// `|hᴴ f|²`.
pub fn received_power(h: &[Complex64], f: &[Complex64]) -> Result<f64, PhyError> {
    inner(h, f).map(|z| z.norm_sqr())
}

/// Exhaustive search over the codebook; 1-based, ties go to the smaller index.
pub fn optimal_beam(h: &ChannelRealization, cb: &BeamCodebook) -> Result<usize, PhyError> {
    if h.vector.len() != cb.num_antennas {
        return Err(PhyError::DimensionMismatch { left: h.vector.len(), right: cb.num_antennas });
    }
    let mut best = 1;
    let mut best_power = f64::NEG_INFINITY;
    for m in 1..=cb.num_beams {
        let p = received_power(&h.vector, cb.beam(m))?;
        if p > best_power {
            best = m;
            best_power = p;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxSample {
    pub value: Complex64,
    pub noise_power: f64,
}

/// `y = hᴴ w · x + z` with `z ~ CN(0, σ²)`.
pub fn simulate_rx<R: Rng + ?Sized>(
    h: &ChannelRealization,
    w: &[Complex64],
    symbol: Complex64,
    noise_power: f64,
    rng: &mut R,
) -> Result<RxSample, PhyError> {
    assert!(noise_power >= 0.0, "noise power must be nonnegative");
    let signal = inner(&h.vector, w)? * symbol;
    let sd = libm::sqrt(noise_power / 2.0);
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Ok(RxSample { value: signal + Complex64::new(sd * re, sd * im), noise_power })
}
