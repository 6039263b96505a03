//! Timestamped detection streams and coincidence counting.
//!
//! Each shot draws one joint outcome from the complete-accounting
//! distribution. Every detector that registered something emits one event at
//! `shot · period + delay`. Absorbed particles, screen misses and silent
//! placement counters emit nothing.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use crate::circuit::{Accounting, Circuit, Settings, ABSORBED, NO_CLICK};
use crate::error::{Error, Result};
use crate::measure::{rng_for, OutcomeDistribution, Sampler};
use crate::screen::{Pattern, SlitGeometry, MISS};

pub const DEFAULT_PERIOD_NS: u64 = 1_000_000;
pub const DEFAULT_WINDOW_NS: u64 = 1_000;
/// Shots drawn from one generator stream; shot `k` uses stream `k / BATCH_SHOTS`.
pub const BATCH_SHOTS: u64 = 1 << 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DetectionEvent {
    pub shot: u64,
    pub time_ns: u64,
    pub detector: String,
    pub outcome: Vec<String>,
}

impl DetectionEvent {
    pub fn to_json_line(&self) -> String {
        let outcome: Vec<String> = self.outcome.iter().map(|o| serde_json::Value::from(o.as_str()).to_string()).collect();
        format!(
            "{{\"shot\":{},\"t\":{},\"det\":{},\"outcome\":[{}]}}",
            self.shot,
            self.time_ns,
            serde_json::Value::from(self.detector.as_str()),
            outcome.join(",")
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogMeta {
    pub seed: u64,
    pub settings: Settings,
    pub circuit: String,
    pub period_ns: u64,
    pub shots: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventLog {
    pub events: Vec<DetectionEvent>,
    pub meta: LogMeta,
}

impl EventLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_json_line());
            out.push('\n');
        }
        out
    }

    /// `shot,t,det,outcome` with multi-dof outcomes joined by `|`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("shot,t,det,outcome\n");
        for e in &self.events {
            let _ = writeln!(out, "{},{},{},{}", e.shot, e.time_ns, e.detector, e.outcome.join("|"));
        }
        out
    }

    pub fn for_detector<'a>(&'a self, detector: &'a str) -> impl Iterator<Item = &'a DetectionEvent> + 'a {
        self.events.iter().filter(move |e| e.detector == detector)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventConfig {
    pub shots: u64,
    pub seed: u64,
    pub period_ns: u64,
    /// Per-detector delay overrides; others use the detector's time offset.
    pub delays: BTreeMap<String, u64>,
}

impl EventConfig {
    pub fn new(shots: u64, seed: u64) -> Self {
        EventConfig { shots, seed, period_ns: DEFAULT_PERIOD_NS, delays: BTreeMap::new() }
    }

    pub fn delay(mut self, detector: &str, ns: u64) -> Self {
        self.delays.insert(detector.into(), ns);
        self
    }
}

/// Joint outcomes of `shots` independent runs, as label tuples in column
/// order.
pub fn sample_shots(joint: &OutcomeDistribution, shots: u64, seed: u64) -> Result<Vec<Vec<String>>> {
    if shots == 0 {
        return Ok(Vec::new());
    }
    let sampler = Sampler::new(joint)?;
    let mut out = Vec::with_capacity(shots as usize);
    let mut batch = 0;
    while batch * BATCH_SHOTS < shots {
        let mut rng = rng_for(seed, batch);
        let n = BATCH_SHOTS.min(shots - batch * BATCH_SHOTS);
        for _ in 0..n {
            let k = sampler.draw(&mut rng);
            out.push(k.iter().zip(joint.columns()).map(|(&i, c)| c.labels[i].clone()).collect());
        }
        batch += 1;
    }
    Ok(out)
}

pub fn generate_events(circuit: &Circuit, settings: &Settings, config: &EventConfig) -> Result<EventLog> {
    let settings = circuit.resolve_settings(settings)?;
    for d in config.delays.keys() {
        circuit.detector(d)?;
    }
    if config.period_ns == 0 {
        return Err(Error::Validation("shot period must be positive".into()));
    }
    let meta = LogMeta {
        seed: config.seed,
        settings: settings.clone(),
        circuit: circuit.name().into(),
        period_ns: config.period_ns,
        shots: config.shots,
    };
    if config.shots == 0 {
        return Ok(EventLog { events: Vec::new(), meta });
    }
    let joint = circuit.joint_distribution_with(&settings, Accounting::Complete)?;
    // columns grouped by detector, in first-appearance order
    let mut groups: Vec<(String, Vec<usize>, u64)> = Vec::new();
    for (i, col) in joint.columns().iter().enumerate() {
        match groups.iter_mut().find(|g| g.0 == col.detector) {
            Some(g) => g.1.push(i),
            None => {
                let delay = match config.delays.get(&col.detector) {
                    Some(&d) => d,
                    None => circuit.detector(&col.detector)?.time_offset_ns,
                };
                groups.push((col.detector.clone(), vec![i], delay));
            }
        }
    }
    let mut events = Vec::new();
    for (shot, outcome) in sample_shots(&joint, config.shots, config.seed)?.into_iter().enumerate() {
        let shot = shot as u64;
        let epoch = shot
            .checked_mul(config.period_ns)
            .ok_or_else(|| Error::Validation("event time overflows".into()))?;
        for (det, cols, delay) in &groups {
            let labels: Vec<String> = cols.iter().map(|&i| outcome[i].clone()).collect();
            if labels.iter().any(|l| l == ABSORBED || l == MISS || l == NO_CLICK) {
                continue;
            }
            let time_ns = epoch
                .checked_add(*delay)
                .ok_or_else(|| Error::Validation("event time overflows".into()))?;
            events.push(DetectionEvent { shot, time_ns, detector: det.clone(), outcome: labels });
        }
    }
    events.sort_by_key(|e| e.time_ns);
    Ok(EventLog { events, meta })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Coincidence {
    pub first: DetectionEvent,
    pub second: DetectionEvent,
}

/// Greedy earliest-first pairing of `first`-detector events with
/// `second`-detector events at most `window_ns` apart; each event is used
/// once.
pub fn coincidences(log: &EventLog, first: &str, second: &str, window_ns: u64) -> Result<Vec<Coincidence>> {
    if window_ns == 0 {
        return Err(Error::Validation("coincidence window must be positive".into()));
    }
    let mut waiting_first: VecDeque<&DetectionEvent> = VecDeque::new();
    let mut waiting_second: VecDeque<&DetectionEvent> = VecDeque::new();
    let mut out = Vec::new();
    for e in &log.events {
        let (mine, other, is_first) = if e.detector == first {
            (&mut waiting_first, &mut waiting_second, true)
        } else if e.detector == second {
            (&mut waiting_second, &mut waiting_first, false)
        } else {
            continue;
        };
        while other.front().is_some_and(|o| e.time_ns - o.time_ns > window_ns) {
            other.pop_front();
        }
        match other.pop_front() {
            Some(o) => {
                let (a, b) = if is_first { (e, o) } else { (o, e) };
                out.push(Coincidence { first: a.clone(), second: b.clone() });
            }
            None => mine.push_back(e),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Subensemble {
    Pattern(Pattern),
    /// No pair matched the requested partner outcome.
    Empty,
}

impl Subensemble {
    pub fn pattern(&self) -> Option<&Pattern> {
        match self {
            Subensemble::Pattern(p) => Some(p),
            Subensemble::Empty => None,
        }
    }
}

/// Bin counts of the first (screen) event of each pair whose partner read
/// `partner_outcome`, on the geometry's grid.
pub fn conditioned_counts(pairs: &[Coincidence], partner_outcome: Option<&str>, geometry: &SlitGeometry) -> Result<Vec<u64>> {
    let labels = geometry.bin_labels();
    let mut counts = vec![0u64; geometry.bins];
    for p in pairs {
        if let Some(want) = partner_outcome {
            if p.second.outcome.join("|") != want {
                continue;
            }
        }
        let label = p.first.outcome.first().ok_or_else(|| Error::Validation("screen event without outcome".into()))?;
        let bin = labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::Validation(format!("'{label}' is not a screen bin")))?;
        counts[bin] += 1;
    }
    Ok(counts)
}

/// Histogram of the selected subensemble merged down to `bins` bins, mean
/// intensity 1. `None` selects every pair.
pub fn conditioned_histogram(
    pairs: &[Coincidence],
    partner_outcome: Option<&str>,
    geometry: &SlitGeometry,
    bins: usize,
) -> Result<Subensemble> {
    if bins == 0 || !geometry.bins.is_multiple_of(bins) {
        return Err(Error::Validation(format!("{} screen bins cannot be merged into {bins}", geometry.bins)));
    }
    let counts = conditioned_counts(pairs, partner_outcome, geometry)?;
    if counts.iter().all(|&c| c == 0) {
        return Ok(Subensemble::Empty);
    }
    let factor = geometry.bins / bins;
    let merged: Vec<u64> = counts.chunks(factor).map(|c| c.iter().sum()).collect();
    let xs: Vec<f64> = geometry.bin_centers().chunks(factor).map(|c| c.iter().sum::<f64>() / factor as f64).collect();
    Pattern::from_counts(xs, &merged).map(Subensemble::Pattern)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;

    fn ev(shot: u64, t: u64, det: &str) -> DetectionEvent {
        DetectionEvent { shot, time_ns: t, detector: det.into(), outcome: vec!["x".into()] }
    }

    fn log(mut events: Vec<DetectionEvent>) -> EventLog {
        events.sort_by_key(|e| e.time_ns);
        EventLog {
            events,
            meta: LogMeta { seed: 0, settings: Settings::new(), circuit: "t".into(), period_ns: 1, shots: 0 },
        }
    }

    #[test]
    fn json_line_format() {
        let e = DetectionEvent { shot: 3, time_ns: 17, detector: "D_s".into(), outcome: vec!["bin17".into()] };
        assert_eq!(e.to_json_line(), r#"{"shot":3,"t":17,"det":"D_s","outcome":["bin17"]}"#);
    }

    #[test]
    fn window_includes_and_excludes() {
        let l = log(vec![ev(0, 0, "A"), ev(0, 500, "B"), ev(1, 10_000, "A"), ev(1, 12_000, "B")]);
        assert_eq!(coincidences(&l, "A", "B", 1000).unwrap().len(), 1);
        assert_eq!(coincidences(&l, "A", "B", 2000).unwrap().len(), 2);
        assert_eq!(coincidences(&l, "A", "B", 100).unwrap().len(), 0);
        assert!(coincidences(&l, "A", "B", 0).is_err());
    }

    #[test]
    fn zero_shots_give_empty_log() {
        let circ = scenarios::circuit("walborn_delayed").unwrap();
        let l = generate_events(&circ, &Settings::new(), &EventConfig::new(0, 1)).unwrap();
        assert!(l.events.is_empty());
    }

    #[test]
    fn unknown_delay_detector_is_rejected() {
        let circ = scenarios::circuit("walborn_delayed").unwrap();
        let cfg = EventConfig::new(10, 1).delay("D_q", 5);
        assert!(generate_events(&circ, &Settings::new(), &cfg).is_err());
    }

    #[test]
    fn partner_events_trail_screen_events() {
        let circ = scenarios::circuit("walborn_delayed").unwrap();
        let cfg = EventConfig::new(10_000, 9).delay("D_p", 1_000_000_000);
        let l = generate_events(&circ, &Settings::new(), &cfg).unwrap();
        let mut ds = BTreeMap::new();
        for e in l.for_detector("D_s") {
            ds.insert(e.shot, e.time_ns);
        }
        for e in l.for_detector("D_p") {
            if let Some(t) = ds.get(&e.shot) {
                assert!(e.time_ns > *t);
            }
        }
        assert!(l.events.windows(2).all(|w| w[0].time_ns <= w[1].time_ns));
    }

    #[test]
    fn empty_subensemble_is_explicit() {
        let circ = scenarios::circuit("walborn_delayed").unwrap();
        let st = Settings::new().choose("p_pol", "+45");
        let l = generate_events(&circ, &st, &EventConfig::new(2000, 4)).unwrap();
        let pairs = coincidences(&l, "D_s", "D_p", DEFAULT_WINDOW_NS).unwrap();
        let g = SlitGeometry::default();
        assert_eq!(conditioned_histogram(&pairs, Some("-"), &g, 32).unwrap(), Subensemble::Empty);
        assert!(conditioned_histogram(&pairs, Some("+"), &g, 32).unwrap().pattern().is_some());
    }
}
