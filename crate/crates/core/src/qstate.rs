//! Complex-amplitude states over composite spaces of labeled degrees of freedom.
//!
//! A [`StateVector`] stores the full product basis densely, in canonical order:
//! the first dof is the most significant index and each dof's labels keep their
//! declared order. Amplitudes are always normalized; probability lost to
//! filters is tracked separately in [`StateVector::weight`].

use std::collections::HashSet;
use std::fmt;

use num_complex::Complex64;
use serde_json::json;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Tolerance for algebraic identities (normalization, unitarity).
pub const ALGEBRA_TOL: f64 = 1e-12;

/// Probabilities below this are treated as exactly zero.
pub const ZERO_PROBABILITY: f64 = 1e-15;

/// A named degree of freedom with an ordered set of basis labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Dof {
    name: String,
    labels: Vec<String>,
}

impl Dof {
    pub fn new<S: Into<String>, L: AsRef<str>>(name: S, labels: &[L]) -> Result<Self> {
        let name = name.into();
        if labels.len() < 2 {
            return Err(Error::Validation(format!(
                "dof '{name}' needs at least two labels, got {}",
                labels.len()
            )));
        }
        let labels: Vec<String> = labels.iter().map(|l| l.as_ref().to_string()).collect();
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::Validation(format!("dof '{name}' repeats label '{l}'")));
            }
        }
        Ok(Dof { name, labels })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.index_of(label).ok_or_else(|| {
            Error::Validation(format!(
                "dof '{}' has no label '{label}' (labels: {})",
                self.name,
                self.labels.join(" ")
            ))
        })
    }

    fn with_labels(&self, labels: Vec<String>) -> Dof {
        Dof { name: self.name.clone(), labels }
    }
}

/// Finds a dof by name in a space.
pub fn dof_position(space: &[Dof], name: &str) -> Result<usize> {
    space
        .iter()
        .position(|d| d.name == name)
        .ok_or_else(|| Error::Validation(format!("unknown dof '{name}'")))
}

fn check_unique_names(space: &[Dof]) -> Result<()> {
    let mut seen = HashSet::new();
    for d in space {
        if !seen.insert(d.name.as_str()) {
            return Err(Error::Composition(format!("dof name '{}' appears twice", d.name)));
        }
    }
    Ok(())
}

fn strides(space: &[Dof]) -> Vec<usize> {
    let mut s = vec![1; space.len()];
    for i in (0..space.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * space[i + 1].dim();
    }
    s
}

/// A change of basis for one dof.
///
/// Row `j` of the matrix holds ⟨new_j|old_i⟩, so new coefficients are
/// `matrix · old coefficients`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisChange {
    dof: String,
    old_labels: Vec<String>,
    new_labels: Vec<String>,
    matrix: Matrix,
}

impl BasisChange {
    pub fn new<L: AsRef<str>>(
        dof: &Dof,
        new_labels: &[L],
        matrix: Matrix,
    ) -> Result<Self> {
        let renamed = Dof::new(dof.name(), new_labels)?;
        if matrix.dim() != dof.dim() || renamed.dim() != dof.dim() {
            return Err(Error::Validation(format!(
                "basis change for '{}' must be {}x{}",
                dof.name(),
                dof.dim(),
                dof.dim()
            )));
        }
        if !matrix.is_unitary(ALGEBRA_TOL) {
            return Err(Error::Validation(format!(
                "basis change for '{}' is not unitary (defect {:.3e})",
                dof.name(),
                matrix.unitarity_defect()
            )));
        }
        Ok(BasisChange {
            dof: dof.name().to_string(),
            old_labels: dof.labels().to_vec(),
            new_labels: renamed.labels,
            matrix,
        })
    }

    /// Basis from new basis vectors written in the old basis.
    pub fn from_vectors<L: AsRef<str>>(
        dof: &Dof,
        new_labels: &[L],
        vectors: &[Vec<Complex64>],
    ) -> Result<Self> {
        if vectors.len() != dof.dim() || vectors.iter().any(|v| v.len() != dof.dim()) {
            return Err(Error::Validation(format!(
                "basis for '{}' needs {} vectors of length {}",
                dof.name(),
                dof.dim(),
                dof.dim()
            )));
        }
        let rows: Vec<Vec<Complex64>> = vectors
            .iter()
            .map(|v| v.iter().map(|c| c.conj()).collect())
            .collect();
        Self::new(dof, new_labels, Matrix::from_rows(&rows))
    }

    pub fn dof(&self) -> &str {
        &self.dof
    }

    pub fn new_labels(&self) -> &[String] {
        &self.new_labels
    }

    pub fn old_labels(&self) -> &[String] {
        &self.old_labels
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn inverse(&self) -> BasisChange {
        BasisChange {
            dof: self.dof.clone(),
            old_labels: self.new_labels.clone(),
            new_labels: self.old_labels.clone(),
            matrix: self.matrix.adjoint(),
        }
    }
}

/// A normalized pure state plus the probability mass that survived filtering.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    space: Vec<Dof>,
    amps: Vec<Complex64>,
    weight: f64,
}

impl StateVector {
    /// Normalizes `amps` over `space`. Fails on a zero vector.
    pub fn from_amplitudes(space: Vec<Dof>, amps: Vec<Complex64>, weight: f64) -> Result<Self> {
        check_unique_names(&space)?;
        let size: usize = space.iter().map(Dof::dim).product();
        if amps.len() != size {
            return Err(Error::Validation(format!(
                "expected {size} amplitudes, got {}",
                amps.len()
            )));
        }
        if !(0.0..=1.0 + ALGEBRA_TOL).contains(&weight) {
            return Err(Error::Validation(format!("weight {weight} outside [0, 1]")));
        }
        let norm = amps.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Validation("state has zero norm".into()));
        }
        let amps = amps.into_iter().map(|a| a / norm).collect();
        Ok(StateVector { space, amps, weight: weight.min(1.0) })
    }

    /// Builds `Σ cₖ |labelsₖ⟩` and normalizes it.
    pub fn from_terms<L: AsRef<str>>(space: Vec<Dof>, terms: &[(Complex64, Vec<L>)]) -> Result<Self> {
        check_unique_names(&space)?;
        let size: usize = space.iter().map(Dof::dim).product();
        let mut amps = vec![Complex64::new(0.0, 0.0); size];
        for (c, labels) in terms {
            let idx = flat_index(&space, labels)?;
            amps[idx] += c;
        }
        Self::from_amplitudes(space, amps, 1.0)
    }

    pub fn basis_state<L: AsRef<str>>(space: Vec<Dof>, labels: &[L]) -> Result<Self> {
        let labels: Vec<&str> = labels.iter().map(AsRef::as_ref).collect();
        Self::from_terms(space, &[(Complex64::new(1.0, 0.0), labels)])
    }

    /// Normalized superposition `Σ cₖ |ψₖ⟩` of states over one space. Weight is 1.
    pub fn superpose(terms: &[(Complex64, &StateVector)]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Validation("empty superposition".into()))?
            .1;
        let mut amps = vec![Complex64::new(0.0, 0.0); first.amps.len()];
        for (c, s) in terms {
            if s.space != first.space {
                return Err(Error::Composition("superposed states live in different spaces".into()));
            }
            for (a, b) in amps.iter_mut().zip(&s.amps) {
                *a += c * b;
            }
        }
        Self::from_amplitudes(first.space.clone(), amps, 1.0)
    }

    pub(crate) fn from_raw(space: Vec<Dof>, amps: Vec<Complex64>, weight: f64) -> Self {
        debug_assert_eq!(amps.len(), space.iter().map(Dof::dim).product::<usize>());
        StateVector { space, amps, weight }
    }

    pub fn space(&self) -> &[Dof] {
        &self.space
    }

    pub fn dof(&self, name: &str) -> Result<&Dof> {
        Ok(&self.space[dof_position(&self.space, name)?])
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn amplitude<L: AsRef<str>>(&self, labels: &[L]) -> Result<Complex64> {
        Ok(self.amps[flat_index(&self.space, labels)?])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(Complex64::norm_sqr).sum()
    }

    /// Label-index tuple of a flat position.
    pub fn coordinates(&self, mut flat: usize) -> Vec<usize> {
        let mut coords = vec![0; self.space.len()];
        for (i, d) in self.space.iter().enumerate().rev() {
            coords[i] = flat % d.dim();
            flat /= d.dim();
        }
        coords
    }

    /// Canonical-order iteration over (labels, amplitude).
    pub fn iter(&self) -> impl Iterator<Item = (Vec<&str>, Complex64)> + '_ {
        self.amps.iter().enumerate().map(move |(i, &a)| {
            let labels = self
                .coordinates(i)
                .into_iter()
                .zip(&self.space)
                .map(|(k, d)| d.labels[k].as_str())
                .collect();
            (labels, a)
        })
    }

    pub fn tensor(&self, other: &StateVector) -> Result<StateVector> {
        let mut space = self.space.clone();
        space.extend(other.space.iter().cloned());
        check_unique_names(&space)?;
        let amps = self
            .amps
            .iter()
            .flat_map(|a| other.amps.iter().map(move |b| a * b))
            .collect();
        Ok(StateVector {
            space,
            amps,
            weight: self.weight * other.weight,
        })
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        if self.space != other.space {
            return Err(Error::Composition("inner product of states in different spaces".into()));
        }
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    /// |⟨self|other⟩|².
    pub fn fidelity(&self, other: &StateVector) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    /// Re-expresses the state in a new basis for one dof.
    pub fn rebase(&self, change: &BasisChange) -> Result<StateVector> {
        let pos = dof_position(&self.space, &change.dof)?;
        if self.space[pos].labels != change.old_labels {
            return Err(Error::Validation(format!(
                "basis change expects '{}' labels [{}], state has [{}]",
                change.dof,
                change.old_labels.join(" "),
                self.space[pos].labels.join(" ")
            )));
        }
        if !change.matrix.is_unitary(ALGEBRA_TOL) {
            return Err(Error::Validation("basis change is not unitary".into()));
        }
        let amps = self.mapped(&[pos], &change.matrix, None);
        let mut space = self.space.clone();
        space[pos] = space[pos].with_labels(change.new_labels.clone());
        Ok(StateVector { space, amps, weight: self.weight })
    }

    /// Applies a matrix acting on the joint space of `targets` (in the given
    /// order) and returns the resulting amplitudes without renormalizing.
    /// With a condition `(dof, label)`, only that branch is acted on.
    pub(crate) fn mapped(
        &self,
        targets: &[usize],
        m: &Matrix,
        condition: Option<(usize, usize)>,
    ) -> Vec<Complex64> {
        let st = strides(&self.space);
        let sub_dims: Vec<usize> = targets.iter().map(|&t| self.space[t].dim()).collect();
        debug_assert_eq!(m.dim(), sub_dims.iter().product::<usize>());
        // offsets of each joint target configuration, first target most significant
        let mut offsets = vec![0usize];
        for (&t, &d) in targets.iter().zip(&sub_dims) {
            let step = st[t];
            offsets = offsets
                .iter()
                .flat_map(|&o| (0..d).map(move |k| o + k * step))
                .collect();
        }
        let mut out = self.amps.clone();
        for base in 0..self.amps.len() {
            let coords = self.coordinates(base);
            if targets.iter().any(|&t| coords[t] != 0) {
                continue;
            }
            if let Some((cd, cl)) = condition {
                if coords[cd] != cl {
                    continue;
                }
            }
            let sub: Vec<Complex64> = offsets.iter().map(|&o| self.amps[base + o]).collect();
            for (o, v) in offsets.iter().zip(m.apply(&sub)) {
                out[base + o] = v;
            }
        }
        out
    }

    /// Projects onto `dof = label`, returning the normalized conditional state
    /// (weight scaled by the branch probability) and that probability.
    pub fn project_onto(&self, dof: &str, label: &str) -> Result<(StateVector, f64)> {
        let pos = dof_position(&self.space, dof)?;
        let k = self.space[pos].label_index(label)?;
        let st = strides(&self.space);
        let d = self.space[pos].dim();
        let amps: Vec<Complex64> = self
            .amps
            .iter()
            .enumerate()
            .map(|(i, &a)| if (i / st[pos]) % d == k { a } else { Complex64::new(0.0, 0.0) })
            .collect();
        let p: f64 = amps.iter().map(Complex64::norm_sqr).sum();
        if p < ZERO_PROBABILITY {
            return Err(Error::NullCondition(format!("{dof}={label}")));
        }
        let s = p.sqrt();
        let amps = amps.into_iter().map(|a| a / s).collect();
        Ok((
            StateVector { space: self.space.clone(), amps, weight: self.weight * p },
            p,
        ))
    }

    /// Canonical JSON form: `{amplitudes: [{labels, re, im}], weight}`.
    pub fn to_json(&self) -> serde_json::Value {
        let amplitudes: Vec<_> = self
            .iter()
            .map(|(labels, a)| json!({"labels": labels, "re": a.re, "im": a.im}))
            .collect();
        json!({
            "dofs": self.space.iter().map(|d| d.name.as_str()).collect::<Vec<_>>(),
            "amplitudes": amplitudes,
            "weight": self.weight,
        })
    }
}

impl fmt::Display for StateVector {
    /// Ket notation, skipping negligible amplitudes.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (labels, a) in self.iter() {
            if a.norm() < 1e-12 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({:.6}{:+.6}i)|{}⟩", a.re, a.im, labels.join(","))?;
        }
        if first {
            write!(f, "0")?;
        }
        write!(f, " [weight {:.6}]", self.weight)
    }
}

fn flat_index<L: AsRef<str>>(space: &[Dof], labels: &[L]) -> Result<usize> {
    if labels.len() != space.len() {
        return Err(Error::Validation(format!(
            "label tuple has arity {}, space has {} dofs",
            labels.len(),
            space.len()
        )));
    }
    let mut idx = 0;
    for (d, l) in space.iter().zip(labels) {
        idx = idx * d.dim() + d.label_index(l.as_ref())?;
    }
    Ok(idx)
}

/// True iff some unit complex `c` makes `max |aₖ − c·bₖ| < tol`.
///
/// `c` is fixed from the largest-magnitude component of `b`.
pub fn global_phase_equivalent(a: &StateVector, b: &StateVector, tol: f64) -> bool {
    phase_distance(a, b).is_some_and(|d| d < tol)
}

/// The residual `max |aₖ − c·bₖ|` used by [`global_phase_equivalent`];
/// `None` when the spaces differ.
pub fn phase_distance(a: &StateVector, b: &StateVector) -> Option<f64> {
    if a.space != b.space {
        return None;
    }
    let (k, bk) = b
        .amps
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.norm().total_cmp(&y.1.norm()))?;
    let ratio = a.amps[k] / bk;
    let c = if bk.norm() == 0.0 || ratio.norm() == 0.0 || !ratio.norm().is_finite() {
        Complex64::new(1.0, 0.0)
    } else {
        ratio / ratio.norm()
    };
    Some(
        a.amps
            .iter()
            .zip(&b.amps)
            .map(|(x, y)| (x - c * y).norm())
            .fold(0.0, f64::max),
    )
}
