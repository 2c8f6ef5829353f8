//! Empirical boundedness of the truncated boundary operator: the maximal
//! function `sup_ε |J_ε f|` stays within a fixed multiple of `f` in `L^p`.
//!
//! The kernel is weakly singular in time, so `J_ε f` approaches its limit like
//! `√ε`; the sup is extrapolated with that exponent and compared against a
//! single constant for every density in a random smooth family.

use proptest::prelude::*;

use evodiff::kernel::{j_epsilon, ExponentMode, Geometry, KernelContext};

const NODES: usize = 48;
const TIMES: [f64; 3] = [0.3, 0.5, 0.7];
const EPS: [f64; 7] = [0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125];
/// Empirical operator-norm ceiling; the constant density (the worst member
/// seen) extrapolates to about 5.8 for `p = 2` and 6.0 for `p = 4`. Zero-mean
/// oscillating densities only reach the `√ε` regime once `√ε` is well below
/// their wavelength, hence the fine truncations.
const BOUND: f64 = 8.0;
const TAIL: f64 = std::f64::consts::FRAC_1_SQRT_2 / (1.0 - std::f64::consts::FRAC_1_SQRT_2);

fn context() -> KernelContext {
    let geometry = Geometry::Circle { center: [0.0, 0.0], radius: 1.0, nodes: NODES };
    KernelContext::identity(geometry, ExponentMode::Standard).unwrap()
}

fn density(c: &[f64]) -> impl Fn(f64, usize) -> f64 + '_ {
    move |s, j| {
        let th = 2.0 * std::f64::consts::PI * j as f64 / NODES as f64;
        c[0] + c[1] * th.cos() + c[2] * (2.0 * th).sin() + c[3] * (3.0 * s).cos() * th.sin()
    }
}

/// `r[k] = ‖sup_{ε ≥ EPS[k]} |J_ε f|‖_p / ‖f‖_p` over the node × time sample,
/// for each `p`.
fn ratios(c: &[f64], ps: &[f64]) -> Vec<Vec<f64>> {
    let ctx = context();
    let f = density(c);
    let w = ctx.nodes()[0].weight;
    // running[q, t] sup over the truncations seen so far
    let mut running = vec![0.0f64; NODES * TIMES.len()];
    let den: Vec<f64> = ps
        .iter()
        .map(|&p| {
            TIMES
                .iter()
                .flat_map(|&t| (0..NODES).map(move |q| (t, q)))
                .map(|(t, q)| w * f(t, q).abs().powf(p))
                .sum()
        })
        .collect();
    let mut out = vec![Vec::new(); ps.len()];
    for &e in &EPS {
        for (ti, &t) in TIMES.iter().enumerate() {
            for q in 0..NODES {
                let v = j_epsilon(&f, e, q, t, 4, &ctx).unwrap().abs();
                let slot = &mut running[ti * NODES + q];
                *slot = slot.max(v);
            }
        }
        for (k, &p) in ps.iter().enumerate() {
            let num: f64 = running.iter().map(|v| w * v.powf(p)).sum();
            out[k].push((num / den[k]).powf(1.0 / p));
        }
    }
    out
}

fn extrapolate(r: &[f64], upto: usize) -> f64 {
    r[upto] + TAIL * (r[upto] - r[upto - 1])
}

fn check(c: &[f64]) -> Result<(), TestCaseError> {
    for (p, r) in [2.0, 4.0].iter().zip(ratios(c, &[2.0, 4.0])) {
        prop_assert!(r.windows(2).all(|w| w[1] >= w[0]), "p = {p}: sup not monotone {r:?}");
        let last = EPS.len() - 1;
        let (coarse, fine) = (extrapolate(&r, last - 1), extrapolate(&r, last));
        prop_assert!(fine <= BOUND, "p = {p}: extrapolated ratio {fine} for {c:?}");
        prop_assert!(
            (fine - coarse).abs() <= 0.15 * fine,
            "p = {p}: unstable limit {coarse} -> {fine} for {c:?}"
        );
    }
    Ok(())
}

#[test]
fn constant_density_is_bounded() {
    check(&[1.0, 0.0, 0.0, 0.0]).unwrap();
}

#[test]
fn oscillating_zero_mean_density_is_bounded() {
    check(&[0.0, -0.2327, 0.3313, 0.0]).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn maximal_operator_is_bounded_in_lp(c in prop::collection::vec(-1.0f64..1.0, 4)) {
        prop_assume!(c.iter().map(|v| v.abs()).sum::<f64>() > 0.2);
        check(&c)?;
    }
}
