use std::fmt::Write;

use num_complex::Complex64;

use super::ast::*;
use crate::circuit::{Detector, Measured};
use crate::elements::{Angle, Element};
use crate::screen::SlitGeometry;

/// `a+bi` with the shortest digits that parse back to the same value.
pub fn format_complex(z: Complex64) -> String {
    if z.im < 0.0 {
        format!("{}-{}i", z.re, -z.im)
    } else {
        format!("{}+{}i", z.re, z.im)
    }
}

fn angle(a: &Angle) -> String {
    match a {
        Angle::Degrees(v) => format!("{v}"),
        Angle::Param(p) => p.clone(),
    }
}

fn element(e: &Element) -> String {
    let kw = e.keyword();
    match e {
        Element::BeamSplitter { dof, port_a, port_b } => format!("{kw} {dof} {port_a} {port_b}"),
        Element::PhaseShifter { dof, label, phi } => format!("{kw} {dof} {label} phi={}", angle(phi)),
        Element::Analyzer { pol, path }
        | Element::InverseAnalyzer { pol, path } => format!("{kw} {pol} {path}"),
        Element::QuarterWavePlate { pol, fast } => format!("{kw} {pol} fast={}", angle(fast)),
        Element::Polarizer { pol, angle: a } => format!("{kw} {pol} angle={}", angle(a)),
        Element::Blocker { dof, label } => format!("{kw} {dof} {label}"),
        Element::SternGerlach { spin, path }
        | Element::InverseSternGerlach { spin, path } => format!("{kw} {spin} {path}"),
        Element::Recombiner { dof, into } => format!("{kw} {dof} {into}"),
        Element::Split { dof } => format!("{kw} {dof}"),
    }
}

fn stage(s: &StageSpec) -> String {
    let mut out = format!("STAGE {} : {}", s.id, element(&s.element));
    if let Some(c) = &s.condition {
        let _ = write!(out, " when {}={}", c.dof, c.label);
    }
    out
}

fn detector(d: &Detector) -> String {
    let mut out = format!("DETECT {} :", d.name);
    match &d.measured {
        Measured::Dofs(v) => {
            for (dof, b) in v {
                let _ = write!(out, " {dof} basis={}", b.name());
            }
        }
        Measured::Placement { dof, label } => {
            let _ = write!(out, " {dof}={label}");
        }
        Measured::Screen { dof, geometry: g } => {
            let _ = write!(out, " screen {dof}");
            let def = SlitGeometry::default();
            if g.bins != def.bins {
                let _ = write!(out, " bins={}", g.bins);
            }
            for (key, v, dv) in [
                ("d", g.slit_separation, def.slit_separation),
                ("lambda", g.wavelength, def.wavelength),
                ("L", g.screen_distance, def.screen_distance),
                ("xmin", g.x_min, def.x_min),
                ("xmax", g.x_max, def.x_max),
            ] {
                if v != dv {
                    let _ = write!(out, " {key}={v}");
                }
            }
        }
    }
    if d.time_offset_ns != 0 {
        let _ = write!(out, " t={}", d.time_offset_ns);
    }
    out
}

fn inner_step(s: &StepSpec) -> String {
    match s {
        StepSpec::Stage(st) => stage(st),
        StepSpec::Detect(d) => detector(&d.detector),
        StepSpec::Choice(c) => choice(c),
    }
}

fn choice(c: &ChoiceSpec) -> String {
    let alts: Vec<String> = c
        .alternatives
        .iter()
        .map(|a| {
            if a.steps.is_empty() {
                format!("{} {{ }}", a.name)
            } else {
                let body: Vec<String> = a.steps.iter().map(inner_step).collect();
                format!("{} {{ {} }}", a.name, body.join(" ; "))
            }
        })
        .collect();
    format!("CHOICE {} : {}", c.id, alts.join(" | "))
}

/// Canonical text. Formatting a parsed canonical text gives it back unchanged.
pub fn format(spec: &ExperimentSpec) -> String {
    let mut out = format!("EXPERIMENT {}\n", spec.name);
    for d in &spec.dofs {
        let _ = writeln!(out, "DOF {} : {}", d.name, d.labels.join(" "));
    }
    for p in &spec.particles {
        let _ = writeln!(out, "PARTICLE {} : {}", p.name, p.dofs.join(" "));
    }
    for p in &spec.params {
        let _ = writeln!(out, "PARAM {} = {}", p.name, p.value);
    }
    let terms: Vec<String> = spec
        .source
        .iter()
        .map(|s| {
            let labels: Vec<String> = s.term.labels.iter().map(|(d, l)| format!("{d}={l}")).collect();
            format!("{} |{}>", format_complex(s.term.amplitude), labels.join(","))
        })
        .collect();
    let _ = writeln!(out, "SOURCE {}", terms.join(" ; "));
    for s in &spec.steps {
        let _ = writeln!(out, "{}", inner_step(s));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edl::parse;
    use proptest::prelude::*;

    #[test]
    fn complex_forms() {
        assert_eq!(format_complex(Complex64::new(1.0, 0.0)), "1+0i");
        assert_eq!(format_complex(Complex64::new(0.5, -0.25)), "0.5-0.25i");
        assert_eq!(format_complex(Complex64::new(-0.0, 1e-20)), "-0+0.00000000000000000001i");
    }

    #[test]
    fn canonical_text_is_a_fixed_point() {
        let text = "EXPERIMENT e\nDOF a : x y\nDOF b : u v\nPARTICLE q : a b\nPARAM th = 0.3\n\
                    SOURCE 0.6+0i |a=x,b=u> ; 0-0.8i |a=y,b=v>\nSTAGE s1 : phase a x phi=th when b=u\n\
                    CHOICE c : k { STAGE s2 : pol a angle=45 ; DETECT D0 : a basis=diag t=7 } | m { }\n\
                    DETECT D1 : b=v\nDETECT D2 : screen a bins=64 d=0.0002\n";
        let spec = parse(text).unwrap();
        let once = format(&spec);
        assert_eq!(once, text);
        assert_eq!(parse(&once).unwrap(), spec);
    }

    proptest! {
        #[test]
        fn complex_literal_round_trip(re in -1e6f64..1e6, im in -1e6f64..1e6, tiny in any::<bool>()) {
            let z = if tiny { Complex64::new(re * 1e-300, im * 1e-290) } else { Complex64::new(re, im) };
            let back = crate::edl::parser::complex(&format_complex(z), Loc::default()).unwrap();
            prop_assert_eq!(back, z);
        }
    }
}
