use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;

use super::ast::*;
use super::lexer::{lex_line, Tok, Token};
use super::ParseDiagnostic;
use crate::circuit::{Detector, Measured, SourceTerm};
use crate::elements::{Angle, Condition, Element};
use crate::measure::Basis;
use crate::screen::SlitGeometry;

type PResult<T> = Result<T, ParseDiagnostic>;

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
    /// Location just past the last token, for end-of-line messages.
    end: Loc,
}

impl<'a> Cursor<'a> {
    fn new(toks: &'a [Token], line: usize, width: usize) -> Self {
        Cursor { toks, pos: 0, end: Loc::new(line, width + 1) }
    }

    fn peek(&self) -> Option<&'a Token> {
        self.toks.get(self.pos)
    }

    fn loc(&self) -> Loc {
        self.peek().map_or(self.end, |t| t.loc)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn is_punct(&self, c: char) -> bool {
        matches!(self.peek(), Some(Token { tok: Tok::Punct(p), .. }) if *p == c)
    }

    fn word(&mut self, what: &str) -> PResult<(String, Loc)> {
        match self.peek() {
            Some(Token { tok: Tok::Word(w), loc }) => {
                self.pos += 1;
                Ok((w.clone(), *loc))
            }
            Some(t) => Err(ParseDiagnostic::error(t.loc, format!("expected {what}, found {}", describe(t)))),
            None => Err(ParseDiagnostic::error(self.end, format!("expected {what} before end of line"))),
        }
    }

    fn punct(&mut self, c: char) -> PResult<Loc> {
        match self.peek() {
            Some(Token { tok: Tok::Punct(p), loc }) if *p == c => {
                self.pos += 1;
                Ok(*loc)
            }
            Some(t) => Err(ParseDiagnostic::error(t.loc, format!("expected '{c}', found {}", describe(t)))),
            None => Err(ParseDiagnostic::error(self.end, format!("expected '{c}' before end of line"))),
        }
    }

    fn finish(&self) -> PResult<()> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(ParseDiagnostic::error(t.loc, format!("unexpected {}", describe(t)))),
        }
    }
}

fn describe(t: &Token) -> String {
    match &t.tok {
        Tok::Word(w) => format!("'{w}'"),
        Tok::Punct(p) => format!("'{p}'"),
    }
}

fn is_identifier(w: &str) -> bool {
    w.chars().next().is_some_and(|c| c.is_alphabetic() || c == '_')
}

fn real(text: &str, loc: Loc) -> PResult<f64> {
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() && !text.contains(|c: char| c.is_alphabetic() && c != 'e' && c != 'E') => Ok(v),
        _ => Err(ParseDiagnostic::error(loc, format!("bad number '{text}'"))),
    }
}

/// `a`, or `a+bi` / `a-bi` with decimal reals.
pub(crate) fn complex(text: &str, loc: Loc) -> PResult<Complex64> {
    let bad = || ParseDiagnostic::error(loc, format!("bad complex literal '{text}'"));
    let Some(body) = text.strip_suffix('i') else {
        return real(text, loc).map(|re| Complex64::new(re, 0.0)).map_err(|_| bad());
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'))
        .ok_or_else(bad)?;
    let re = real(&body[..split], loc).map_err(|_| bad())?;
    let im = real(&body[split..], loc).map_err(|_| bad())?;
    Ok(Complex64::new(re, im))
}

fn angle(value: &str, loc: Loc) -> PResult<Angle> {
    if let Ok(v) = real(value, loc) {
        return Ok(Angle::Degrees(v));
    }
    if is_identifier(value) {
        return Ok(Angle::Param(value.to_string()));
    }
    Err(ParseDiagnostic::error(loc, format!("bad angle '{value}'")))
}

enum Arg {
    Bare(String, Loc),
    Pair(String, String, Loc),
}

/// Collects `word` and `key=value` arguments up to end of line, `;` or `}`.
fn args(c: &mut Cursor<'_>) -> PResult<Vec<Arg>> {
    let mut out = Vec::new();
    while !c.at_end() && !c.is_punct(';') && !c.is_punct('}') && !c.is_punct('|') {
        let (w, loc) = c.word("an argument")?;
        if c.is_punct('=') {
            c.punct('=')?;
            let (v, _) = c.word(&format!("a value for '{w}'"))?;
            out.push(Arg::Pair(w, v, loc));
        } else {
            out.push(Arg::Bare(w, loc));
        }
    }
    Ok(out)
}

const KEYWORDS: &[(&str, &[&str], Option<&str>)] = &[
    ("bs", &["dof", "port", "port"], None),
    ("phase", &["dof", "label"], Some("phi")),
    ("analyzer", &["pol", "path"], None),
    ("analyzer_inv", &["pol", "path"], None),
    ("qwp", &["pol"], Some("fast")),
    ("pol", &["pol"], Some("angle")),
    ("block", &["dof", "label"], None),
    ("sg", &["spin", "path"], None),
    ("sg_inv", &["spin", "path"], None),
    ("recombine", &["dof", "into"], None),
    ("split", &["dof"], None),
];

fn stage(c: &mut Cursor<'_>, loc: Loc) -> PResult<StageSpec> {
    let (id, _) = c.word("a stage id")?;
    c.punct(':')?;
    let (kw, kw_loc) = c.word("an element keyword")?;
    let &(_, positional, key) = KEYWORDS
        .iter()
        .find(|(k, _, _)| *k == kw)
        .ok_or_else(|| ParseDiagnostic::error(kw_loc, format!("unknown element keyword '{kw}'")))?;
    let mut pos = Vec::new();
    let mut keyed: Option<(String, Loc)> = None;
    let mut condition = None;
    let mut list = args(c)?.into_iter().peekable();
    while let Some(a) = list.next() {
        match a {
            Arg::Bare(w, wl) if w == "when" => {
                let Some(Arg::Pair(d, l, _)) = list.next() else {
                    return Err(ParseDiagnostic::error(wl, "'when' needs <dof>=<label>"));
                };
                if condition.replace(Condition::new(d, l)).is_some() {
                    return Err(ParseDiagnostic::error(wl, "stage has two 'when' clauses"));
                }
            }
            Arg::Bare(_, wl) if condition.is_some() => {
                return Err(ParseDiagnostic::error(wl, "arguments must come before 'when'"));
            }
            Arg::Bare(w, wl) => pos.push((w, wl)),
            Arg::Pair(k, v, kl) => match key {
                Some(expected) if k == expected && keyed.is_none() => keyed = Some((v, kl)),
                _ => return Err(ParseDiagnostic::error(kl, format!("'{kw}' takes no option '{k}'"))),
            },
        }
    }
    if pos.len() != positional.len() {
        return Err(ParseDiagnostic::error(
            kw_loc,
            format!("'{kw}' expects {} argument(s) ({}), got {}", positional.len(), positional.join(" "), pos.len()),
        ));
    }
    let keyed_angle = match (key, keyed) {
        (Some(k), None) => return Err(ParseDiagnostic::error(kw_loc, format!("'{kw}' needs {k}=<angle>"))),
        (Some(_), Some((v, l))) => Some(angle(&v, l)?),
        (None, _) => None,
    };
    let p = |i: usize| pos[i].0.clone();
    let element = match kw.as_str() {
        "bs" => Element::BeamSplitter { dof: p(0), port_a: p(1), port_b: p(2) },
        "phase" => Element::PhaseShifter { dof: p(0), label: p(1), phi: keyed_angle.expect("checked") },
        "analyzer" => Element::Analyzer { pol: p(0), path: p(1) },
        "analyzer_inv" => Element::InverseAnalyzer { pol: p(0), path: p(1) },
        "qwp" => Element::QuarterWavePlate { pol: p(0), fast: keyed_angle.expect("checked") },
        "pol" => Element::Polarizer { pol: p(0), angle: keyed_angle.expect("checked") },
        "block" => Element::Blocker { dof: p(0), label: p(1) },
        "sg" => Element::SternGerlach { spin: p(0), path: p(1) },
        "sg_inv" => Element::InverseSternGerlach { spin: p(0), path: p(1) },
        "recombine" => Element::Recombiner { dof: p(0), into: p(1) },
        _ => Element::Split { dof: p(0) },
    };
    Ok(StageSpec { id, element, condition, loc })
}

fn time(v: &str, loc: Loc) -> PResult<u64> {
    if let Ok(t) = v.parse::<u64>() {
        return Ok(t);
    }
    match real(v, loc) {
        Ok(f) if f >= 0.0 && f.fract() == 0.0 && f < u64::MAX as f64 => Ok(f as u64),
        _ => Err(ParseDiagnostic::error(loc, format!("bad time offset '{v}' (non-negative integer ns)"))),
    }
}

fn detect(c: &mut Cursor<'_>, loc: Loc) -> PResult<DetectSpec> {
    let (name, _) = c.word("a detector name")?;
    c.punct(':')?;
    let start = c.loc();
    let list = args(c)?;
    let mut t = 0;
    let measured = match list.as_slice() {
        [Arg::Bare(s, _), Arg::Bare(dof, _), rest @ ..] if s == "screen" => {
            let mut g = SlitGeometry::default();
            for a in rest {
                let Arg::Pair(k, v, kl) = a else {
                    return Err(ParseDiagnostic::error(arg_loc(a), "screen options are key=value"));
                };
                match k.as_str() {
                    "bins" => {
                        g.bins = v
                            .parse()
                            .ok()
                            .filter(|b| *b >= 2)
                            .ok_or_else(|| ParseDiagnostic::error(*kl, format!("bad bin count '{v}'")))?
                    }
                    "d" => g.slit_separation = real(v, *kl)?,
                    "lambda" => g.wavelength = real(v, *kl)?,
                    "L" => g.screen_distance = real(v, *kl)?,
                    "xmin" => g.x_min = real(v, *kl)?,
                    "xmax" => g.x_max = real(v, *kl)?,
                    "t" => t = time(v, *kl)?,
                    _ => return Err(ParseDiagnostic::error(*kl, format!("unknown screen option '{k}'"))),
                }
            }
            g.validate().map_err(|e| ParseDiagnostic::error(start, e.to_string()))?;
            Measured::Screen { dof: dof.clone(), geometry: g }
        }
        [Arg::Pair(dof, label, _), rest @ ..] if dof != "t" && dof != "basis" => {
            for a in rest {
                match a {
                    Arg::Pair(k, v, kl) if k == "t" => t = time(v, *kl)?,
                    other => return Err(ParseDiagnostic::error(arg_loc(other), "a placement detector only takes t=")),
                }
            }
            Measured::Placement { dof: dof.clone(), label: label.clone() }
        }
        _ => {
            let mut dofs: Vec<(String, Basis)> = Vec::new();
            for a in &list {
                match a {
                    Arg::Bare(d, _) => dofs.push((d.clone(), Basis::Native)),
                    Arg::Pair(k, v, kl) if k == "basis" => {
                        let b = Basis::parse(v).ok_or_else(|| {
                            ParseDiagnostic::error(*kl, format!("unknown basis '{v}' (native, diag, circ)"))
                        })?;
                        match dofs.last_mut() {
                            Some(last) => last.1 = b,
                            None => return Err(ParseDiagnostic::error(*kl, "basis= must follow a dof")),
                        }
                    }
                    Arg::Pair(k, v, kl) if k == "t" => t = time(v, *kl)?,
                    Arg::Pair(k, _, kl) => {
                        return Err(ParseDiagnostic::error(*kl, format!("unknown detector option '{k}'")))
                    }
                }
            }
            if dofs.is_empty() {
                return Err(ParseDiagnostic::error(start, "detector measures nothing"));
            }
            Measured::Dofs(dofs)
        }
    };
    Ok(DetectSpec { detector: Detector { name, measured, time_offset_ns: t }, loc })
}

fn arg_loc(a: &Arg) -> Loc {
    match a {
        Arg::Bare(_, l) | Arg::Pair(_, _, l) => *l,
    }
}

fn choice(c: &mut Cursor<'_>, loc: Loc) -> PResult<ChoiceSpec> {
    let (id, _) = c.word("a choice id")?;
    c.punct(':')?;
    let mut alternatives = Vec::new();
    loop {
        let (name, alt_loc) = c.word("an alternative name")?;
        c.punct('{')?;
        let mut steps = Vec::new();
        if !c.is_punct('}') {
            loop {
                let (kw, kw_loc) = c.word("STAGE or DETECT")?;
                match kw.as_str() {
                    "STAGE" => steps.push(StepSpec::Stage(stage(c, kw_loc)?)),
                    "DETECT" => steps.push(StepSpec::Detect(detect(c, kw_loc)?)),
                    _ => {
                        return Err(ParseDiagnostic::error(
                            kw_loc,
                            format!("only STAGE and DETECT may appear inside a choice, found '{kw}'"),
                        ))
                    }
                }
                if c.is_punct(';') {
                    c.punct(';')?;
                } else {
                    break;
                }
            }
        }
        c.punct('}')?;
        alternatives.push(AltSpec { name, steps, loc: alt_loc });
        if c.is_punct('|') {
            c.punct('|')?;
        } else {
            break;
        }
    }
    Ok(ChoiceSpec { id, alternatives, loc })
}

fn source(c: &mut Cursor<'_>, loc: Loc, out: &mut Vec<SourceSpec>) -> PResult<()> {
    loop {
        let term_loc = c.loc();
        let (amp, amp_loc) = c.word("an amplitude")?;
        let amplitude = complex(&amp, amp_loc)?;
        c.punct('|')?;
        let mut labels = Vec::new();
        loop {
            let (d, _) = c.word("a dof")?;
            c.punct('=')?;
            let (l, _) = c.word("a label")?;
            labels.push((d, l));
            if c.is_punct(',') {
                c.punct(',')?;
            } else {
                break;
            }
        }
        c.punct('>')?;
        out.push(SourceSpec { term: SourceTerm { amplitude, labels }, loc: if out.is_empty() { loc } else { term_loc } });
        if c.is_punct(';') {
            c.punct(';')?;
        } else {
            return Ok(());
        }
    }
}

#[derive(Default)]
struct Draft {
    name: Option<(String, Loc)>,
    dofs: Vec<DofDecl>,
    particles: Vec<ParticleDecl>,
    params: Vec<ParamDecl>,
    source: Vec<SourceSpec>,
    steps: Vec<StepSpec>,
}

fn statement(c: &mut Cursor<'_>, draft: &mut Draft, diags: &mut Vec<ParseDiagnostic>) -> PResult<()> {
    let (kw, loc) = c.word("a statement keyword")?;
    if draft.name.is_none() && kw != "EXPERIMENT" && !diags.iter().any(|d| d.message.starts_with("missing EXPERIMENT")) {
        diags.push(ParseDiagnostic::error(loc, "missing EXPERIMENT header"));
    }
    match kw.as_str() {
        "EXPERIMENT" => {
            let (name, _) = c.word("an experiment name")?;
            if draft.name.is_some() {
                return Err(ParseDiagnostic::error(loc, "duplicate EXPERIMENT header"));
            }
            if !draft.dofs.is_empty() || !draft.steps.is_empty() || !draft.source.is_empty() {
                return Err(ParseDiagnostic::error(loc, "EXPERIMENT must be the first statement"));
            }
            draft.name = Some((name, loc));
        }
        "DOF" => {
            let (name, _) = c.word("a dof name")?;
            c.punct(':')?;
            let mut labels = Vec::new();
            while !c.at_end() {
                labels.push(c.word("a label")?.0);
            }
            draft.dofs.push(DofDecl { name, labels, loc });
        }
        "PARTICLE" => {
            let (name, _) = c.word("a particle name")?;
            c.punct(':')?;
            let mut dofs = Vec::new();
            while !c.at_end() {
                dofs.push(c.word("a dof")?.0);
            }
            draft.particles.push(ParticleDecl { name, dofs, loc });
        }
        "PARAM" => {
            let (name, _) = c.word("a parameter name")?;
            if !is_identifier(&name) {
                return Err(ParseDiagnostic::error(loc, format!("parameter name '{name}' must start with a letter")));
            }
            c.punct('=')?;
            let (v, vl) = c.word("a default value")?;
            draft.params.push(ParamDecl { name, value: real(&v, vl)?, loc });
        }
        "SOURCE" => source(c, loc, &mut draft.source)?,
        "STAGE" => draft.steps.push(StepSpec::Stage(stage(c, loc)?)),
        "DETECT" => draft.steps.push(StepSpec::Detect(detect(c, loc)?)),
        "CHOICE" => draft.steps.push(StepSpec::Choice(choice(c, loc)?)),
        _ => return Err(ParseDiagnostic::error(loc, format!("unknown statement '{kw}'"))),
    }
    c.finish()
}

/// Parses EDL text into a spec, resolving every name.
pub fn parse(text: &str) -> Result<ExperimentSpec, Vec<ParseDiagnostic>> {
    let mut diags = Vec::new();
    let mut draft = Draft::default();
    for (i, line) in text.lines().enumerate() {
        let toks = lex_line(line, i + 1, &mut diags);
        if toks.is_empty() {
            continue;
        }
        let mut c = Cursor::new(&toks, i + 1, line.chars().count());
        if let Err(d) = statement(&mut c, &mut draft, &mut diags) {
            diags.push(d);
        }
    }
    let Some((name, loc)) = draft.name.clone() else {
        if !diags.iter().any(|d| d.message.starts_with("missing EXPERIMENT")) {
            diags.insert(0, ParseDiagnostic::error(Loc::new(1, 1), "missing EXPERIMENT header"));
        }
        return Err(diags);
    };
    resolve(&draft, loc, &mut diags);
    if !diags.is_empty() {
        return Err(diags);
    }
    Ok(ExperimentSpec {
        name,
        dofs: draft.dofs,
        particles: draft.particles,
        params: draft.params,
        source: draft.source,
        steps: draft.steps,
        loc,
    })
}

/// Name resolution over a syntactically complete draft.
fn resolve(d: &Draft, header: Loc, diags: &mut Vec<ParseDiagnostic>) {
    let mut dofs: BTreeMap<&str, &[String]> = BTreeMap::new();
    for dof in &d.dofs {
        if dofs.insert(&dof.name, &dof.labels).is_some() {
            diags.push(ParseDiagnostic::error(dof.loc, format!("dof '{}' declared twice", dof.name)));
        }
        let unique: BTreeSet<&String> = dof.labels.iter().collect();
        if dof.labels.len() < 2 || unique.len() != dof.labels.len() {
            diags.push(ParseDiagnostic::error(dof.loc, format!("dof '{}' needs at least two distinct labels", dof.name)));
        }
    }
    let check_dof = |name: &str, loc: Loc, diags: &mut Vec<ParseDiagnostic>| -> bool {
        let ok = dofs.contains_key(name);
        if !ok {
            diags.push(ParseDiagnostic::error(loc, format!("undeclared dof '{name}'")));
        }
        ok
    };
    let check_label = |dof: &str, label: &str, loc: Loc, diags: &mut Vec<ParseDiagnostic>| {
        if let Some(labels) = dofs.get(dof) {
            if !labels.iter().any(|l| l == label) {
                diags.push(ParseDiagnostic::error(loc, format!("dof '{dof}' has no label '{label}'")));
            }
        } else {
            diags.push(ParseDiagnostic::error(loc, format!("undeclared dof '{dof}'")));
        }
    };
    let mut owners = BTreeSet::new();
    let mut pnames = BTreeSet::new();
    for p in &d.particles {
        if !pnames.insert(p.name.as_str()) {
            diags.push(ParseDiagnostic::error(p.loc, format!("particle '{}' declared twice", p.name)));
        }
        if p.dofs.is_empty() {
            diags.push(ParseDiagnostic::error(p.loc, format!("particle '{}' carries no dofs", p.name)));
        }
        for dof in &p.dofs {
            if check_dof(dof, p.loc, diags) && !owners.insert(dof.as_str()) {
                diags.push(ParseDiagnostic::error(p.loc, format!("dof '{dof}' belongs to two particles")));
            }
        }
    }
    let mut params = BTreeSet::new();
    for p in &d.params {
        if !params.insert(p.name.as_str()) {
            diags.push(ParseDiagnostic::error(p.loc, format!("parameter '{}' declared twice", p.name)));
        }
    }
    if d.source.is_empty() {
        diags.push(ParseDiagnostic::error(header, "missing SOURCE"));
    }
    for s in &d.source {
        let mut seen = BTreeSet::new();
        for (dof, label) in &s.term.labels {
            check_label(dof, label, s.loc, diags);
            if !seen.insert(dof.as_str()) {
                diags.push(ParseDiagnostic::error(s.loc, format!("source term sets '{dof}' twice")));
            }
        }
        for name in dofs.keys() {
            if !seen.contains(name) {
                diags.push(ParseDiagnostic::error(s.loc, format!("source term omits dof '{name}'")));
            }
        }
    }
    if !d.source.is_empty() && d.source.iter().all(|s| s.term.amplitude.norm() == 0.0) {
        diags.push(ParseDiagnostic::error(d.source[0].loc, "source amplitudes are all zero"));
    }
    let mut ids = BTreeSet::new();
    let mut detectors = BTreeSet::new();
    let mut choices = BTreeSet::new();
    let mut check_step = |s: &StepSpec, diags: &mut Vec<ParseDiagnostic>| match s {
        StepSpec::Stage(st) => {
            if !ids.insert(st.id.clone()) {
                diags.push(ParseDiagnostic::error(st.loc, format!("stage id '{}' used twice", st.id)));
            }
            for t in st.element.targets() {
                check_dof(t, st.loc, diags);
            }
            for (dof, label) in element_labels(&st.element) {
                check_label(dof, label, st.loc, diags);
            }
            for p in st.element.params_used() {
                if !params.contains(p) {
                    diags.push(ParseDiagnostic::error(st.loc, format!("undeclared parameter '{p}'")));
                }
            }
            if let Some(c) = &st.condition {
                check_label(&c.dof, &c.label, st.loc, diags);
                if st.element.targets().contains(&c.dof.as_str()) {
                    diags.push(ParseDiagnostic::error(st.loc, format!("stage '{}' is conditioned on its own target", st.id)));
                }
            }
        }
        StepSpec::Detect(ds) => {
            if !detectors.insert(ds.detector.name.clone()) {
                diags.push(ParseDiagnostic::error(ds.loc, format!("detector '{}' declared twice", ds.detector.name)));
            }
            let measured = ds.detector.measured_dofs();
            let unique: BTreeSet<&str> = measured.iter().copied().collect();
            if unique.len() != measured.len() {
                diags.push(ParseDiagnostic::error(ds.loc, "detector measures a dof twice"));
            }
            match &ds.detector.measured {
                Measured::Placement { dof, label } => check_label(dof, label, ds.loc, diags),
                _ => {
                    for dof in measured {
                        check_dof(dof, ds.loc, diags);
                    }
                }
            }
        }
        StepSpec::Choice(_) => {}
    };
    for s in &d.steps {
        check_step(s, diags);
        if let StepSpec::Choice(ch) = s {
            if !choices.insert(ch.id.as_str()) {
                diags.push(ParseDiagnostic::error(ch.loc, format!("choice '{}' declared twice", ch.id)));
            }
            let mut alts = BTreeSet::new();
            for a in &ch.alternatives {
                if !alts.insert(a.name.as_str()) {
                    diags.push(ParseDiagnostic::error(a.loc, format!("choice '{}' repeats alternative '{}'", ch.id, a.name)));
                }
                for inner in &a.steps {
                    check_step(inner, diags);
                }
            }
        }
    }
}

fn element_labels(e: &Element) -> Vec<(&str, &str)> {
    match e {
        Element::BeamSplitter { dof, port_a, port_b } => vec![(dof, port_a), (dof, port_b)],
        Element::PhaseShifter { dof, label, .. } | Element::Blocker { dof, label } => vec![(dof, label)],
        Element::Recombiner { dof, into } => vec![(dof, into)],
        _ => vec![],
    }
}
