use num_complex::Complex64;
use qesim::qstate::phase_distance;
use qesim::scenarios;
use qesim::{Basis, Conventions, StateVector};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn to_diagonal(s: &StateVector) -> StateVector {
    let conv = Conventions::default();
    let mut out = s.clone();
    for dof in ["spol", "ppol"] {
        let change = Basis::Diagonal.change(out.dof(dof).unwrap(), &conv).unwrap().unwrap();
        out = out.rebase(&change).unwrap();
    }
    out
}

/// ½[(|+⟩s1 − i|+⟩s2)|+⟩p + i(|−⟩s1 + i|−⟩s2)|−⟩p] in ± labels.
fn diagonal_display(like: &StateVector) -> StateVector {
    StateVector::from_terms(
        like.space().to_vec(),
        &[
            (c(0.5, 0.0), vec!["s1", "+", "+"]),
            (c(0.0, -0.5), vec!["s2", "+", "+"]),
            (c(0.0, 0.5), vec!["s1", "-", "-"]),
            (c(-0.5, 0.0), vec!["s2", "-", "-"]),
        ],
    )
    .unwrap()
}

#[test]
fn computed_pair_state_rebases_to_the_diagonal_display() {
    let circ = scenarios::circuit("walborn").unwrap();
    let d = to_diagonal(&scenarios::post_slit_state(&circ).unwrap());
    assert!((d.norm_sqr() - 1.0).abs() < 1e-12);
    assert!(phase_distance(&d, &diagonal_display(&d)).unwrap() < 1e-10);
}

#[test]
fn four_term_display_does_not_rebase_to_the_diagonal_display() {
    // |L⟩ = (x+iy)/√2, |R⟩ = (x−iy)/√2; terms in (spath, spol, ppol) x/y labels
    let circ = scenarios::circuit("walborn").unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let l = [c(h, 0.0), c(0.0, h)];
    let r = [c(h, 0.0), c(0.0, -h)];
    let i = c(0.0, 1.0);
    let mut amps = vec![c(0.0, 0.0); 8];
    let mut put = |a: Complex64, slit: usize, pol: [Complex64; 2], p: usize| {
        for (k, v) in pol.iter().enumerate() {
            amps[slit * 4 + k * 2 + p] += 0.5 * a * v;
        }
    };
    put(c(1.0, 0.0), 0, l, 1);
    put(i, 0, r, 0);
    put(i, 1, r, 1);
    put(-i, 1, l, 0);
    let four = StateVector::from_amplitudes(circ.space().to_vec(), amps, 1.0).unwrap();
    let d = to_diagonal(&four);
    let dist = phase_distance(&d, &diagonal_display(&d)).unwrap();
    assert!(dist > 0.3, "{dist}");
}
