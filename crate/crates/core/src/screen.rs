//! Far-field two-slit patterns.
//!
//! Small-angle model with equal-envelope plane waves from each slit: for path
//! amplitudes `a1`, `a2` the intensity at `x` is `|a1 + a2·e^{-iδ(x)}|²` with
//! `δ(x) = 2π·d·x/(λ·L)`, summed over the other dofs. Patterns are normalized
//! so that an incoherent mixture has mean intensity 1.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::measure::OutcomeDistribution;
use crate::qstate::{dof_position, StateVector, ZERO_PROBABILITY};

#[derive(Clone, Debug, PartialEq)]
pub struct SlitGeometry {
    /// Slit separation d in meters.
    pub slit_separation: f64,
    pub wavelength: f64,
    /// Slit-to-screen distance L in meters.
    pub screen_distance: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub bins: usize,
}

impl Default for SlitGeometry {
    fn default() -> Self {
        SlitGeometry {
            slit_separation: 50e-6,
            wavelength: 650e-9,
            screen_distance: 1.0,
            x_min: -0.02,
            x_max: 0.02,
            bins: 256,
        }
    }
}

impl SlitGeometry {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.slit_separation, self.wavelength, self.screen_distance];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Validation("slit separation, wavelength and distance must be positive".into()));
        }
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.x_min < self.x_max) {
            return Err(Error::Validation("screen range must satisfy xmin < xmax".into()));
        }
        if self.bins < 2 {
            return Err(Error::Validation("a screen needs at least 2 bins".into()));
        }
        Ok(())
    }

    pub fn with_bins(mut self, bins: usize) -> Self {
        self.bins = bins;
        self
    }

    pub fn bin_width(&self) -> f64 {
        (self.x_max - self.x_min) / self.bins as f64
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        let w = self.bin_width();
        (0..self.bins).map(|b| self.x_min + (b as f64 + 0.5) * w).collect()
    }

    pub fn bin_labels(&self) -> Vec<String> {
        (0..self.bins).map(|b| format!("bin{b}")).collect()
    }

    /// Fringe spacing λL/d.
    pub fn fringe_period(&self) -> f64 {
        self.wavelength * self.screen_distance / self.slit_separation
    }

    pub fn phase_at(&self, x: f64) -> f64 {
        2.0 * PI * self.slit_separation * x / (self.wavelength * self.screen_distance)
    }

    fn covers_period(&self) -> bool {
        self.x_max - self.x_min >= self.fringe_period()
    }
}

/// Closed form of a pattern, `I(x) = mean + 2·Re(coherence·e^{iδ(x)})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FringeModel {
    pub mean: f64,
    pub coherence: Complex64,
}

impl FringeModel {
    pub fn intensity(&self, delta: f64) -> f64 {
        self.mean + 2.0 * (self.coherence * Complex64::from_polar(1.0, delta)).re
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pattern {
    xs: Vec<f64>,
    intensities: Vec<f64>,
    /// Present for patterns computed from states, and spanning at least one
    /// fringe period.
    model: Option<FringeModel>,
}

impl Pattern {
    pub fn new(xs: Vec<f64>, intensities: Vec<f64>) -> Result<Self> {
        if xs.len() != intensities.len() {
            return Err(Error::Validation("pattern grid and intensities differ in length".into()));
        }
        if intensities.iter().any(|i| !(*i >= 0.0)) {
            return Err(Error::Validation("pattern intensities must be non-negative".into()));
        }
        Ok(Pattern { xs, intensities, model: None })
    }

    /// Histogram of counts, scaled to mean 1.
    pub fn from_counts(xs: Vec<f64>, counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::Validation("histogram has no counts".into()));
        }
        let scale = counts.len() as f64 / total as f64;
        Pattern::new(xs, counts.iter().map(|&c| c as f64 * scale).collect())
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn model(&self) -> Option<&FringeModel> {
        self.model.as_ref()
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn max_abs_diff(&self, other: &Pattern) -> Result<f64> {
        same_grid(self, other)?;
        Ok(self
            .intensities
            .iter()
            .zip(&other.intensities)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Merges groups of `factor` adjacent bins (their intensities averaged).
    pub fn rebin(&self, factor: usize) -> Result<Pattern> {
        if factor == 0 || !self.len().is_multiple_of(factor) {
            return Err(Error::Validation(format!("cannot rebin {} bins by {factor}", self.len())));
        }
        let avg = |v: &[f64]| v.chunks(factor).map(|c| c.iter().sum::<f64>() / factor as f64).collect();
        Ok(Pattern { xs: avg(&self.xs), intensities: avg(&self.intensities), model: self.model })
    }

    /// `x,intensity` with 12 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,intensity\n");
        for (x, i) in self.xs.iter().zip(&self.intensities) {
            let _ = writeln!(out, "{x:.11e},{i:.11e}");
        }
        out
    }
}

fn same_grid(a: &Pattern, b: &Pattern) -> Result<()> {
    if a.xs.len() != b.xs.len() || a.xs.iter().zip(&b.xs).any(|(x, y)| (x - y).abs() > 1e-15) {
        return Err(Error::Validation("patterns are on different grids".into()));
    }
    Ok(())
}

/// Path amplitudes summed over the other dofs: `(Σ|a1|²+|a2|², Σ a1·conj(a2))`.
fn slit_moments(s: &StateVector, path_dof: &str) -> Result<(f64, Complex64)> {
    let pos = dof_position(s.space(), path_dof)?;
    if s.space()[pos].dim() != 2 {
        return Err(Error::Validation(format!(
            "screen needs a two-label path dof, '{path_dof}' has {}",
            s.space()[pos].dim()
        )));
    }
    let mut a = 0.0;
    let mut b = Complex64::new(0.0, 0.0);
    let amps = s.amplitudes();
    for (flat, amp) in amps.iter().enumerate() {
        let coords = s.coordinates(flat);
        if coords[pos] != 0 {
            continue;
        }
        let stride: usize = s.space()[pos + 1..].iter().map(|d| d.dim()).product();
        let partner = amps[flat + stride];
        a += amp.norm_sqr() + partner.norm_sqr();
        b += amp * partner.conj();
    }
    Ok((a, b))
}

pub fn pattern_from_state(s: &StateVector, path_dof: &str, geometry: &SlitGeometry) -> Result<Pattern> {
    geometry.validate()?;
    let (a, b) = slit_moments(s, path_dof)?;
    if a < ZERO_PROBABILITY {
        return Err(Error::Validation("state has no amplitude at the slits".into()));
    }
    let model = FringeModel { mean: 1.0, coherence: b / a };
    let xs = geometry.bin_centers();
    let intensities = xs.iter().map(|&x| model.intensity(geometry.phase_at(x)).max(0.0)).collect();
    Ok(Pattern { xs, intensities, model: geometry.covers_period().then_some(model) })
}

/// Bin pattern read off a screen column of a distribution, mean intensity 1
/// over the hit bins. Misses and absorptions are left out.
pub fn pattern_from_distribution(d: &OutcomeDistribution, column: &str, geometry: &SlitGeometry) -> Result<Pattern> {
    geometry.validate()?;
    let m = d.marginal(&[column])?;
    let probs: Vec<f64> = geometry
        .bin_labels()
        .iter()
        .map(|l| m.probability(&[l.as_str()]))
        .collect::<Result<_>>()?;
    let mean = probs.iter().sum::<f64>() / probs.len() as f64;
    if mean <= 0.0 {
        return Err(Error::Validation(format!("column '{column}' has no screen hits")));
    }
    Pattern::new(geometry.bin_centers(), probs.iter().map(|p| p / mean).collect())
}

/// `(max − min)/(max + min)`: over the continuous pattern when its closed
/// form is known, otherwise over the bins.
pub fn visibility(p: &Pattern) -> Result<f64> {
    if let Some(m) = p.model {
        if m.mean <= 0.0 {
            return Err(Error::Validation("visibility of an all-zero pattern".into()));
        }
        return Ok((2.0 * m.coherence.norm() / m.mean).min(1.0));
    }
    let max = p.intensities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = p.intensities.iter().copied().fold(f64::INFINITY, f64::min);
    if p.is_empty() || max + min <= 0.0 {
        return Err(Error::Validation("visibility of an all-zero pattern".into()));
    }
    Ok((max - min) / (max + min))
}

/// Pointwise `wa·a + wb·b`.
pub fn sum_patterns(a: &Pattern, b: &Pattern, wa: f64, wb: f64) -> Result<Pattern> {
    same_grid(a, b)?;
    let intensities = a.intensities.iter().zip(&b.intensities).map(|(x, y)| wa * x + wb * y).collect();
    let model = match (a.model, b.model) {
        (Some(ma), Some(mb)) => Some(FringeModel {
            mean: wa * ma.mean + wb * mb.mean,
            coherence: ma.coherence * wa + mb.coherence * wb,
        }),
        _ => None,
    };
    let mut p = Pattern::new(a.xs.clone(), intensities)?;
    p.model = model;
    Ok(p)
}

/// Measurement operators of a binned screen on a two-label path dof.
///
/// Bin `b` has effect `|u_b⟩⟨u_b|/M` with `u_b = (1, e^{iδ_b})`, so its
/// probability is the pattern intensity over `M = N + |Σ_b e^{iδ_b}|`, the
/// smallest normalizer keeping the effects below identity. The remainder is a
/// `miss` outcome. A hit leaves the path dof on its first label.
#[derive(Clone, Debug)]
pub struct ScreenPovm {
    pub hits: Vec<Matrix>,
    pub miss: Option<Matrix>,
}

impl ScreenPovm {
    pub fn new(geometry: &SlitGeometry) -> Result<Self> {
        geometry.validate()?;
        let phases: Vec<Complex64> = geometry
            .bin_centers()
            .iter()
            .map(|&x| Complex64::from_polar(1.0, geometry.phase_at(x)))
            .collect();
        let sum: Complex64 = phases.iter().sum();
        let norm = geometry.bins as f64 + sum.norm();
        let k = 1.0 / norm.sqrt();
        let zero = Complex64::new(0.0, 0.0);
        let hits = phases
            .iter()
            .map(|e| Matrix::from_rows(&[vec![Complex64::new(k, 0.0), e.conj() * k], vec![zero, zero]]))
            .collect();
        // I − Σ E_b has eigenvalues 0 and 2|S|/M, so its square root is
        // the matrix itself over the square root of its trace
        let n = geometry.bins as f64;
        let rest = Matrix::from_rows(&[
            vec![Complex64::new(1.0 - n / norm, 0.0), -sum.conj() / norm],
            vec![-sum / norm, Complex64::new(1.0 - n / norm, 0.0)],
        ]);
        let tr = 2.0 * (1.0 - n / norm);
        let miss = (tr > 1e-15).then(|| rest.scale(Complex64::new(1.0 / tr.sqrt(), 0.0)));
        Ok(ScreenPovm { hits, miss })
    }

    pub fn labels(geometry: &SlitGeometry) -> Vec<String> {
        let mut l = geometry.bin_labels();
        l.push(MISS.to_string());
        l
    }
}

pub const MISS: &str = "miss";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::Dof;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn slit() -> Dof {
        Dof::new("slit", &["s1", "s2"]).unwrap()
    }

    fn slit_state(a1: Complex64, a2: Complex64) -> StateVector {
        StateVector::from_amplitudes(vec![slit()], vec![a1, a2], 1.0).unwrap()
    }

    #[test]
    fn symmetric_state_gives_one_plus_cos() {
        let g = SlitGeometry::default();
        let p = pattern_from_state(&slit_state(c(1., 0.), c(1., 0.)), "slit", &g).unwrap();
        for (x, i) in p.xs().iter().zip(p.intensities()) {
            assert!((i - (1.0 + g.phase_at(*x).cos())).abs() < 1e-12);
        }
        assert!((visibility(&p).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn antisymmetric_state_is_complementary() {
        let g = SlitGeometry::default();
        let f = pattern_from_state(&slit_state(c(1., 0.), c(1., 0.)), "slit", &g).unwrap();
        let a = pattern_from_state(&slit_state(c(1., 0.), c(-1., 0.)), "slit", &g).unwrap();
        for (x, i) in a.xs().iter().zip(a.intensities()) {
            assert!((i - (1.0 - g.phase_at(*x).cos())).abs() < 1e-12);
        }
        let sum = sum_patterns(&f, &a, 0.5, 0.5).unwrap();
        assert!(sum.intensities().iter().all(|i| (i - 1.0).abs() < 1e-10));
        assert!(visibility(&sum).unwrap() < 1e-12);
    }

    #[test]
    fn marked_state_is_flat() {
        let sp = vec![slit(), Dof::new("pol", &["h", "v"]).unwrap()];
        let s = StateVector::from_terms(sp, &[(c(1., 0.), vec!["s1", "h"]), (c(1., 0.), vec!["s2", "v"])]).unwrap();
        let p = pattern_from_state(&s, "slit", &SlitGeometry::default()).unwrap();
        assert!(visibility(&p).unwrap() < 1e-12);
        assert!(p.intensities().iter().all(|i| (i - 1.0).abs() < 1e-12));
    }

    #[test]
    fn path_eigenstate_is_flat() {
        let p = pattern_from_state(&slit_state(c(1., 0.), c(0., 0.)), "slit", &SlitGeometry::default()).unwrap();
        assert!(visibility(&p).unwrap() < 1e-12);
    }

    #[test]
    fn visibility_examples() {
        let flat = Pattern::new(vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(visibility(&flat).unwrap(), 0.0);
        let zero = Pattern::new(vec![0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert!(visibility(&zero).is_err());
        let g = SlitGeometry::default();
        let f = pattern_from_state(&slit_state(c(1., 0.), c(1., 0.)), "slit", &g).unwrap();
        let mut flat = f.clone();
        flat.intensities = vec![1.0; f.len()];
        flat.model = Some(FringeModel { mean: 1.0, coherence: c(0., 0.) });
        let half = sum_patterns(&f, &flat, 0.5, 0.5).unwrap();
        assert!((visibility(&half).unwrap() - 0.5).abs() < 1e-12);
        let same = sum_patterns(&f, &flat, 1.0, 0.0).unwrap();
        assert_eq!(same.intensities(), f.intensities());
    }

    #[test]
    fn wrong_arity_and_grid_are_rejected() {
        let d = Dof::new("slit", &["a", "b", "c"]).unwrap();
        let s = StateVector::basis_state(vec![d], &["a"]).unwrap();
        assert!(pattern_from_state(&s, "slit", &SlitGeometry::default()).is_err());
        let a = Pattern::new(vec![0.0], vec![1.0]).unwrap();
        let b = Pattern::new(vec![1.0], vec![1.0]).unwrap();
        assert!(sum_patterns(&a, &b, 1.0, 1.0).is_err());
    }

    #[test]
    fn povm_completes_to_identity() {
        let g = SlitGeometry::default();
        let povm = ScreenPovm::new(&g).unwrap();
        let mut total = Matrix::zeros(2);
        for k in povm.hits.iter().chain(povm.miss.iter()) {
            total = total.add(&(&k.adjoint() * k));
        }
        assert!(total.max_abs_diff(&Matrix::identity(2)) < 1e-12);
    }

    #[test]
    fn csv_has_header_and_one_row_per_bin() {
        let g = SlitGeometry::default().with_bins(4);
        let p = pattern_from_state(&slit_state(c(1., 0.), c(1., 0.)), "slit", &g).unwrap();
        let csv = p.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,intensity");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1].split(',').next().unwrap(), "-1.50000000000e-2");
    }

    proptest! {
        #[test]
        fn intensity_is_nonnegative(parts in proptest::collection::vec(-1.0f64..1.0, 8)) {
            prop_assume!(parts.iter().map(|x| x.abs()).sum::<f64>() > 1e-3);
            let sp = vec![slit(), Dof::new("pol", &["h", "v"]).unwrap()];
            let amps = parts.chunks(2).map(|p| c(p[0], p[1])).collect();
            let s = StateVector::from_amplitudes(sp, amps, 1.0).unwrap();
            let p = pattern_from_state(&s, "slit", &SlitGeometry::default()).unwrap();
            prop_assert!(p.intensities().iter().all(|&i| i >= 0.0));
            let v = visibility(&p).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
