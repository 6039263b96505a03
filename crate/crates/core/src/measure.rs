//! Born-rule distributions over detector outcomes, marginals, post-selection
//! and seeded sampling.
//!
//! Sampling uses ChaCha8 seeded with `seed_from_u64(seed)`; batch `k` of a
//! parallel run uses stream `k` of the same seed.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::elements::Conventions;
use crate::error::{Error, Result};
use crate::qstate::{dof_position, BasisChange, Dof, StateVector, ALGEBRA_TOL, ZERO_PROBABILITY};

/// Measurement basis for a two-label dof, or the dof's own labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Basis {
    Native,
    /// `+ = (e0 + e1)/√2`, `- = (e0 − e1)/√2`.
    Diagonal,
    /// `L`, `R` as fixed by the conventions.
    Circular,
}

impl Basis {
    pub fn name(self) -> &'static str {
        match self {
            Basis::Native => "native",
            Basis::Diagonal => "diag",
            Basis::Circular => "circ",
        }
    }

    pub fn parse(name: &str) -> Option<Basis> {
        match name {
            "native" => Some(Basis::Native),
            "diag" => Some(Basis::Diagonal),
            "circ" => Some(Basis::Circular),
            _ => None,
        }
    }

    /// The basis change taking `dof` into this basis, `None` for native.
    pub fn change(self, dof: &Dof, conventions: &Conventions) -> Result<Option<BasisChange>> {
        let s = FRAC_1_SQRT_2;
        let vectors = match self {
            Basis::Native => return Ok(None),
            Basis::Diagonal => [
                vec![Complex64::new(s, 0.0), Complex64::new(s, 0.0)],
                vec![Complex64::new(s, 0.0), Complex64::new(-s, 0.0)],
            ],
            Basis::Circular => conventions.circular_vectors(),
        };
        if dof.dim() != 2 {
            return Err(Error::Validation(format!(
                "basis '{}' needs a two-label dof, '{}' has {}",
                self.name(),
                dof.name(),
                dof.dim()
            )));
        }
        let labels: [&str; 2] = match self {
            Basis::Diagonal => ["+", "-"],
            _ => ["L", "R"],
        };
        BasisChange::from_vectors(dof, &labels, &vectors).map(Some)
    }
}

/// One coordinate of a joint outcome.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Column {
    /// Name used to address the column: the detector name, or
    /// `detector.dof` when a detector reads several dofs.
    pub key: String,
    pub detector: String,
    pub dof: String,
    pub labels: Vec<String>,
}

impl Column {
    pub fn new(key: &str, detector: &str, dof: &str, labels: Vec<String>) -> Self {
        Column { key: key.into(), detector: detector.into(), dof: dof.into(), labels }
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Validation(format!("column '{}' has no outcome '{label}'", self.key)))
    }
}

/// Probabilities of joint outcomes. Outcomes are kept in canonical
/// (lexicographic label-index) order.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeDistribution {
    columns: Vec<Column>,
    outcomes: BTreeMap<Vec<usize>, f64>,
    total_mass: f64,
}

impl OutcomeDistribution {
    pub fn new(columns: Vec<Column>, outcomes: BTreeMap<Vec<usize>, f64>) -> Result<Self> {
        for (k, &p) in &outcomes {
            if k.len() != columns.len() {
                return Err(Error::Validation("outcome tuple arity does not match columns".into()));
            }
            if k.iter().zip(&columns).any(|(&i, c)| i >= c.labels.len()) {
                return Err(Error::Validation("outcome index out of range".into()));
            }
            if !(p >= 0.0) {
                return Err(Error::Validation(format!("negative or NaN probability {p}")));
            }
        }
        let total_mass = outcomes.values().sum();
        if total_mass > 1.0 + 1e-12 {
            return Err(Error::Validation(format!("total mass {total_mass} exceeds 1")));
        }
        Ok(OutcomeDistribution { columns, outcomes, total_mass })
    }

    /// Builds a distribution from label tuples.
    pub fn from_labeled<S: AsRef<str>>(columns: Vec<Column>, entries: &[(Vec<S>, f64)]) -> Result<Self> {
        let mut outcomes = BTreeMap::new();
        for (labels, p) in entries {
            let idx = labels
                .iter()
                .zip(&columns)
                .map(|(l, c)| c.label_index(l.as_ref()))
                .collect::<Result<Vec<_>>>()?;
            *outcomes.entry(idx).or_insert(0.0) += p;
        }
        Self::new(columns, outcomes)
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Outcomes in canonical order as label tuples.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<&str>, f64)> + '_ {
        self.outcomes.iter().map(move |(k, &p)| (self.labels_of(k), p))
    }

    fn labels_of(&self, k: &[usize]) -> Vec<&str> {
        k.iter().zip(&self.columns).map(|(&i, c)| c.labels[i].as_str()).collect()
    }

    /// Column position by key, falling back to a unique dof name.
    pub fn column_index(&self, name: &str) -> Result<usize> {
        if let Some(i) = self.columns.iter().position(|c| c.key == name) {
            return Ok(i);
        }
        let by_dof: Vec<usize> = (0..self.columns.len()).filter(|&i| self.columns[i].dof == name).collect();
        match by_dof.as_slice() {
            [i] => Ok(*i),
            [] => Err(Error::Validation(format!("no measured outcome named '{name}'"))),
            _ => Err(Error::Validation(format!("'{name}' is ambiguous; use a detector key"))),
        }
    }

    /// Probability of a full outcome tuple.
    pub fn probability<S: AsRef<str>>(&self, labels: &[S]) -> Result<f64> {
        if labels.len() != self.columns.len() {
            return Err(Error::Validation("outcome tuple arity does not match columns".into()));
        }
        let idx = labels
            .iter()
            .zip(&self.columns)
            .map(|(l, c)| c.label_index(l.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.outcomes.get(&idx).copied().unwrap_or(0.0))
    }

    /// Probability that the named column shows `label`.
    pub fn probability_of(&self, name: &str, label: &str) -> Result<f64> {
        let i = self.column_index(name)?;
        let l = self.columns[i].label_index(label)?;
        Ok(self.outcomes.iter().filter(|(k, _)| k[i] == l).map(|(_, p)| p).sum())
    }

    /// Sums out every column not named in `keep` (kept in the given order).
    pub fn marginal<S: AsRef<str>>(&self, keep: &[S]) -> Result<OutcomeDistribution> {
        let idx = keep
            .iter()
            .map(|k| self.column_index(k.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let mut seen = idx.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != idx.len() {
            return Err(Error::Validation("marginal names a column twice".into()));
        }
        let mut outcomes = BTreeMap::new();
        for (k, &p) in &self.outcomes {
            let key: Vec<usize> = idx.iter().map(|&i| k[i]).collect();
            *outcomes.entry(key).or_insert(0.0) += p;
        }
        Ok(OutcomeDistribution {
            columns: idx.iter().map(|&i| self.columns[i].clone()).collect(),
            outcomes,
            total_mass: self.total_mass,
        })
    }

    /// Post-selects on `name = label`, drops that column and renormalizes.
    pub fn conditional(&self, name: &str, label: &str) -> Result<OutcomeDistribution> {
        let i = self.column_index(name)?;
        let l = self.columns[i].label_index(label)?;
        let p = self.probability_of(name, label)?;
        if p < ZERO_PROBABILITY {
            return Err(Error::NullCondition(format!("{name}={label}")));
        }
        let mut outcomes = BTreeMap::new();
        for (k, &q) in &self.outcomes {
            if k[i] == l {
                let mut key = k.clone();
                key.remove(i);
                *outcomes.entry(key).or_insert(0.0) += q / p;
            }
        }
        let mut columns = self.columns.clone();
        columns.remove(i);
        let total_mass = outcomes.values().sum();
        Ok(OutcomeDistribution { columns, outcomes, total_mass })
    }

    /// Scales to total mass 1.
    pub fn renormalized(&self) -> Result<OutcomeDistribution> {
        if self.total_mass < ZERO_PROBABILITY {
            return Err(Error::EmptyDistribution);
        }
        Ok(OutcomeDistribution {
            columns: self.columns.clone(),
            outcomes: self.outcomes.iter().map(|(k, p)| (k.clone(), p / self.total_mass)).collect(),
            total_mass: 1.0,
        })
    }

    /// `{outcomes: [{labels, p}], totalMass}` in canonical order.
    pub fn to_json(&self) -> serde_json::Value {
        let outcomes: Vec<_> = self.iter().map(|(labels, p)| json!({"labels": labels, "p": p})).collect();
        json!({
            "columns": self.columns.iter().map(|c| c.key.as_str()).collect::<Vec<_>>(),
            "outcomes": outcomes,
            "totalMass": self.total_mass,
        })
    }

    /// Draws `shots` outcomes by inverse CDF over the renormalized
    /// distribution.
    pub fn sample(&self, shots: u64, seed: u64) -> Result<SampleBatch> {
        let mut rng = rng_for(seed, 0);
        let counts = self.sample_with(&mut rng, shots)?;
        Ok(SampleBatch { seed, shots, columns: self.columns.clone(), counts })
    }

    fn sample_with(&self, rng: &mut ChaCha8Rng, shots: u64) -> Result<BTreeMap<Vec<String>, u64>> {
        let sampler = Sampler::new(self)?;
        let mut counts = BTreeMap::new();
        for _ in 0..shots {
            let k = sampler.draw(rng);
            let labels = self.labels_of(k).into_iter().map(str::to_owned).collect();
            *counts.entry(labels).or_insert(0) += 1;
        }
        Ok(counts)
    }
}

impl fmt::Display for OutcomeDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let keys: Vec<&str> = self.columns.iter().map(|c| c.key.as_str()).collect();
        writeln!(f, "({})  total mass {:.12}", keys.join(", "), self.total_mass)?;
        for (labels, p) in self.iter() {
            writeln!(f, "  ({})  {:.12}", labels.join(", "), p)?;
        }
        Ok(())
    }
}

/// The generator for batch `batch` of a run seeded with `seed`.
pub fn rng_for(seed: u64, batch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch);
    rng
}

/// Inverse-CDF sampler over the canonical outcome order.
pub(crate) struct Sampler<'a> {
    keys: Vec<&'a Vec<usize>>,
    cdf: Vec<f64>,
}

impl<'a> Sampler<'a> {
    pub(crate) fn new(d: &'a OutcomeDistribution) -> Result<Self> {
        if d.total_mass < ZERO_PROBABILITY {
            return Err(Error::EmptyDistribution);
        }
        let mut acc = 0.0;
        let mut keys = Vec::new();
        let mut cdf = Vec::new();
        for (k, &p) in &d.outcomes {
            if p <= 0.0 {
                continue;
            }
            acc += p / d.total_mass;
            keys.push(k);
            cdf.push(acc);
        }
        Ok(Sampler { keys, cdf })
    }

    pub(crate) fn draw(&self, rng: &mut ChaCha8Rng) -> &'a Vec<usize> {
        let u: f64 = rng.gen();
        let i = self.cdf.partition_point(|&c| c <= u).min(self.keys.len() - 1);
        self.keys[i]
    }
}

/// Counts drawn from a distribution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleBatch {
    pub seed: u64,
    pub shots: u64,
    pub columns: Vec<Column>,
    pub counts: BTreeMap<Vec<String>, u64>,
}

impl SampleBatch {
    pub fn count<S: AsRef<str>>(&self, labels: &[S]) -> u64 {
        let key: Vec<String> = labels.iter().map(|s| s.as_ref().to_owned()).collect();
        self.counts.get(&key).copied().unwrap_or(0)
    }
}

/// `½ Σ |pₐ − p_b|` after renormalizing both sides. Columns are matched by
/// key; their label sets must agree.
pub fn total_variation(a: &OutcomeDistribution, b: &OutcomeDistribution) -> Result<f64> {
    if a.columns.len() != b.columns.len() {
        return Err(Error::Validation("distributions have different outcome spaces".into()));
    }
    let perm = a
        .columns
        .iter()
        .map(|ca| {
            b.columns
                .iter()
                .position(|cb| cb.key == ca.key && cb.labels == ca.labels)
                .ok_or_else(|| Error::Validation(format!("column '{}' has no counterpart", ca.key)))
        })
        .collect::<Result<Vec<_>>>()?;
    let a = a.renormalized()?;
    let b = b.renormalized()?;
    let mut diff: BTreeMap<Vec<usize>, f64> = a.outcomes.clone();
    for (k, p) in &b.outcomes {
        // reorder b's tuple into a's column order
        let key: Vec<usize> = perm.iter().map(|&j| k[j]).collect();
        *diff.entry(key).or_insert(0.0) -= p;
    }
    Ok(0.5 * diff.values().map(|d| d.abs()).sum::<f64>())
}

/// Born distribution of `s` with each listed dof read in its basis; other
/// dofs are summed out. Columns are keyed by dof name. Total mass is the
/// state's weight.
pub fn born_distribution(
    s: &StateVector,
    specs: &[(&str, Basis)],
    conventions: &Conventions,
) -> Result<OutcomeDistribution> {
    let mut st = s.clone();
    let mut positions = Vec::new();
    for (name, basis) in specs {
        let pos = dof_position(st.space(), name)?;
        if positions.contains(&pos) {
            return Err(Error::Validation(format!("dof '{name}' measured twice")));
        }
        if let Some(change) = basis.change(&st.space()[pos], conventions)? {
            st = st.rebase(&change)?;
        }
        positions.push(pos);
    }
    let columns = specs
        .iter()
        .zip(&positions)
        .map(|((name, _), &p)| Column::new(name, name, name, st.space()[p].labels().to_vec()))
        .collect();
    let mut outcomes = BTreeMap::new();
    for (flat, a) in st.amplitudes().iter().enumerate() {
        let p = a.norm_sqr() * st.weight();
        if p == 0.0 {
            continue;
        }
        let coords = st.coordinates(flat);
        let key: Vec<usize> = positions.iter().map(|&q| coords[q]).collect();
        *outcomes.entry(key).or_insert(0.0) += p;
    }
    let d = OutcomeDistribution::new(columns, outcomes)?;
    debug_assert!((d.total_mass - s.weight() * s.norm_sqr()).abs() < ALGEBRA_TOL);
    Ok(d)
}
