use std::sync::Arc;

use super::*;
use crate::fock_oracle::{FockSpace, OracleContext, TimeSettings};
use crate::interaction::{make_temporal_cutoff, preset_interaction, AdiabaticFamily, BaseProfile, PresetParams};
use crate::types::Sign::{Minus, Plus};

fn phi(legs: usize) -> InteractionSpec {
    let name = if legs == 3 { "gaussian-phi3" } else { "gaussian-phi4" };
    preset_interaction(name, PresetParams::new(1.0, 0.5)).unwrap()
}

fn cutoff(band: Option<f64>, scale: f64) -> Arc<VertexCutoff> {
    let h = band.map(|d| make_temporal_cutoff(d).unwrap());
    Arc::new(VertexCutoff::new(AdiabaticFamily::new(BaseProfile::A, scale).unwrap(), h))
}

fn close(a: C64, b: C64, tol: f64) -> bool {
    (a - b).norm() <= tol * b.norm().max(1e-300)
}

fn free_two_point(spec: &InteractionSpec, t: [f64; 2], p: Vec3) -> C64 {
    let om = spec.dispersion.omega(p);
    C64::from_polar(1.0, -om * (t[0] - t[1])) / spec.leg_norm(p).powi(2)
}

#[test]
fn free_two_point_in_every_mode() {
    let spec = phi(3);
    let p = [0.3, -0.2, 0.1];
    let req = CorrelatorRequest::wightman(vec![Minus, Plus], 0, vec![0.7, -0.4], vec![p, [-p[0], -p[1], -p[2]]]);
    let want = free_two_point(&spec, [0.7, -0.4], p);
    let adi = Evaluator::new(spec.clone(), None, EvalSettings::default());
    let v = adi.correlator(&req, &Mode::Adiabatic(Presentation::OrderedTime)).unwrap();
    assert!(close(v.values[0], want, 1e-14));
    let cut = Evaluator::new(spec.clone(), Some(cutoff(None, 2.0)), EvalSettings::default());
    let v = cut.correlator(&req, &Mode::CutoffContinuum).unwrap();
    assert!(close(v.values[0], want, 1e-14));
}

#[test]
fn green_function_at_zeroth_order_is_time_ordered() {
    let spec = phi(4);
    let ev = Evaluator::new(spec.clone(), None, EvalSettings::default());
    let p = [0.2, 0.0, 0.0];
    let q = [-0.2, 0.0, 0.0];
    for (t1, t2) in [(0.5, -0.3), (-0.3, 0.5)] {
        let mut req = CorrelatorRequest::wightman(vec![Minus, Plus], 0, vec![t1, t2], vec![p, q]);
        req.kind = CorrelatorKind::GreenTime;
        let g = ev.correlator(&req, &Mode::Adiabatic(Presentation::OrderedTime)).unwrap().values[0];
        let later_first = if t1 > t2 {
            CorrelatorRequest::wightman(vec![Minus, Plus], 0, vec![t1, t2], vec![p, q])
        } else {
            CorrelatorRequest::wightman(vec![Plus, Minus], 0, vec![t2, t1], vec![q, p])
        };
        let w = ev.correlator(&later_first, &Mode::Adiabatic(Presentation::OrderedTime)).unwrap().values[0];
        if t1 > t2 {
            assert!(close(g, w, 1e-14));
            assert!(close(g, free_two_point(&spec, [t1, t2], p), 1e-14));
        } else {
            // the creator acts first on the vacuum
            assert_eq!(g, C64::new(0.0, 0.0));
            assert_eq!(w, C64::new(0.0, 0.0));
        }
    }
}

#[test]
fn odd_point_functions_vanish_for_even_interactions() {
    let ev = Evaluator::new(phi(4), None, EvalSettings::default());
    let p = [0.1, 0.0, 0.0];
    let req = CorrelatorRequest::wightman(vec![Minus, Minus, Plus], 2, vec![0.3, 0.1, -0.2], vec![p, p, [-0.2, 0.0, 0.0]]);
    let r = ev.correlator(&req, &Mode::Adiabatic(Presentation::OrderedTime)).unwrap();
    assert!(r.values.iter().all(|v| *v == C64::new(0.0, 0.0)));
    assert!(r.graphs.is_empty());
}

#[test]
fn cubic_first_order_two_point_has_no_graphs() {
    let ev = Evaluator::new(phi(3), None, EvalSettings::default());
    let p = [0.1, 0.0, 0.0];
    let req = CorrelatorRequest::wightman(vec![Minus, Plus], 1, vec![0.3, 0.1], vec![p, [-0.1, 0.0, 0.0]]);
    let r = ev.correlator(&req, &Mode::Adiabatic(Presentation::OrderedTime)).unwrap();
    assert_eq!(r.values[1], C64::new(0.0, 0.0));
    assert!(r.graphs.iter().all(|g| g.order == 0));
}

fn green_energy(alpha: Vec<Sign>, order: usize, energies: Vec<f64>, momenta: Vec<Vec3>) -> CorrelatorRequest {
    CorrelatorRequest {
        kind: CorrelatorKind::GreenEnergy,
        alpha,
        order,
        times: Vec::new(),
        energies,
        momenta,
        smearing: MomentumSmearing::Point,
        time_widths: Vec::new(),
    }
}

fn presentations_agree(spec: InteractionSpec, req: &CorrelatorRequest, tol: f64) {
    let ev = Evaluator::new(spec, None, EvalSettings::default());
    let order = req.order;
    let vals: Vec<C64> = [
        Presentation::OrderedTime,
        Presentation::OrderedEnergy,
        Presentation::UnorderedTime,
        Presentation::UnorderedEnergy,
    ]
    .iter()
    .map(|p| ev.correlator(req, &Mode::Adiabatic(*p)).unwrap().values[order])
    .collect();
    assert!(vals[0].norm() > 0.0);
    for v in &vals[1..] {
        assert!(close(*v, vals[0], tol), "{vals:?}");
    }
}

#[test]
fn presentations_agree_on_the_four_point_tree() {
    let p = [[0.2, 0.1, 0.0], [-0.1, 0.3, 0.0], [0.05, -0.2, 0.1], [-0.15, -0.2, -0.1]];
    let req = green_energy(vec![Minus, Minus, Plus, Plus], 1, vec![1.9, -0.7, 0.45, -1.65], p.to_vec());
    presentations_agree(phi(4), &req, 1e-10);
}

#[test]
fn presentations_agree_on_the_free_graph() {
    let p = [0.2, 0.1, 0.0];
    let req = green_energy(vec![Minus, Plus], 0, vec![0.4, -0.4], vec![p, [-0.2, -0.1, 0.0]]);
    presentations_agree(phi(3), &req, 1e-12);
}

#[test]
fn presentations_agree_on_the_sunset() {
    let p = [0.2, 0.1, 0.0];
    let mut settings = EvalSettings::default();
    settings.hermite_nodes = 8;
    let req = green_energy(vec![Minus, Plus], 2, vec![0.6, -0.6], vec![p, [-0.2, -0.1, 0.0]]);
    let ev = Evaluator::new(phi(3), None, settings);
    let order = 2;
    let vals: Vec<C64> = [
        Presentation::OrderedTime,
        Presentation::OrderedEnergy,
        Presentation::UnorderedTime,
        Presentation::UnorderedEnergy,
    ]
    .iter()
    .map(|p| ev.correlator(&req, &Mode::Adiabatic(*p)).unwrap().values[order])
    .collect();
    assert!(vals[0].norm() > 0.0);
    for v in &vals[1..] {
        assert!(close(*v, vals[0], 1e-4), "{vals:?}");
    }
}

fn per_graph(ev: &Evaluator, req: &CorrelatorRequest, p: Presentation) -> Vec<(C64, f64)> {
    let r = ev.correlator(req, &Mode::Adiabatic(p)).unwrap();
    r.graphs.iter().map(|g| (g.value, g.error)).collect()
}

#[test]
fn one_loop_values_do_not_depend_on_the_loop_basis() {
    let base = EvalSettings { hermite_nodes: 8, ..EvalSettings::default() };
    let p = [0.2, 0.1, 0.0];
    let req = green_energy(vec![Minus, Plus], 2, vec![0.6, -0.6], vec![p, [-0.2, -0.1, 0.0]]);
    for pres in [
        Presentation::OrderedTime,
        Presentation::OrderedEnergy,
        Presentation::UnorderedTime,
        Presentation::UnorderedEnergy,
    ] {
        let plain = per_graph(&Evaluator::new(phi(3), None, base), &req, pres);
        assert!(plain.iter().any(|v| v.0.norm() > 0.0));
        for skew in [0.7, -2.3] {
            let settings = EvalSettings { loop_basis: LoopBasis::Skewed(skew), ..base };
            let other = per_graph(&Evaluator::new(phi(3), None, settings), &req, pres);
            assert_eq!(plain.len(), other.len());
            for (a, b) in plain.iter().zip(&other) {
                assert!((a.0 - b.0).norm() <= 1e-10 * a.0.norm().max(1e-300), "{pres:?} skew {skew}: {a:?} vs {b:?}");
            }
        }
    }
}

#[test]
fn two_loop_values_agree_across_loop_bases_within_quadrature_error() {
    let base = EvalSettings { hermite_nodes: 8, ..EvalSettings::default() };
    let p = [0.2, 0.1, 0.0];
    let req = CorrelatorRequest::wightman(vec![Minus, Plus], 2, vec![0.4, -0.3], vec![p, [-0.2, -0.1, 0.0]]);
    let plain = per_graph(&Evaluator::new(phi(4), None, base), &req, Presentation::OrderedTime);
    for skew in [0.7, -2.3] {
        let settings = EvalSettings { loop_basis: LoopBasis::Skewed(skew), ..base };
        let other = per_graph(&Evaluator::new(phi(4), None, settings), &req, Presentation::OrderedTime);
        for (a, b) in plain.iter().zip(&other) {
            assert!((a.0 - b.0).norm() <= 3.0 * (a.1 + b.1) + 1e-10 * a.0.norm(), "skew {skew}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn ordered_time_fourier_matches_energy_rule_per_graph() {
    let spec = phi(3);
    let ev = Evaluator::new(spec, None, EvalSettings::default());
    let p = [0.1, 0.0, 0.2];
    let req = green_energy(vec![Minus, Plus], 2, vec![0.7, -0.7], vec![p, [-0.1, 0.0, -0.2]]);
    let ins = Insertion::from_request(&req, vec![0, 1]);
    for g in ev.graphs(&ins.alpha, 2) {
        let a = ev.evaluate_graph_adiabatic(&g, &ins, Presentation::OrderedTime).unwrap().0;
        let b = ev.evaluate_graph_adiabatic(&g, &ins, Presentation::OrderedEnergy).unwrap().0;
        assert!(close(a, b, 1e-10), "{} {a} {b}", g.to_text());
    }
}

#[test]
fn energies_must_sum_to_zero() {
    let ev = Evaluator::new(phi(3), None, EvalSettings::default());
    let p = [0.1, 0.0, 0.0];
    let req = green_energy(vec![Minus, Plus], 0, vec![0.7, -0.5], vec![p, [-0.1, 0.0, 0.0]]);
    assert!(matches!(
        ev.correlator(&req, &Mode::Adiabatic(Presentation::OrderedEnergy)),
        Err(Error::Input(_))
    ));
}

#[test]
fn band_limit_is_checked_against_the_order() {
    let ev = Evaluator::new(phi(3), Some(cutoff(Some(0.4), 1.0)), EvalSettings::default());
    let p = [0.0; 3];
    let req = CorrelatorRequest::wightman(vec![Minus, Plus], 2, vec![0.1, 0.0], vec![p, p]);
    assert!(matches!(ev.correlator(&req, &Mode::CutoffContinuum), Err(Error::Input(_))));
}

#[test]
fn grid_engine_matches_the_oracle_on_the_sunset() {
    let spec = phi(3);
    let grid = MomentumGrid::quasi_1d(3, 0.6, 0.6).unwrap();
    let p = grid.point(2);
    let q = grid.point(grid.negated(2));
    let req = CorrelatorRequest::wightman(vec![Minus, Plus], 2, vec![0.4, -0.3], vec![p, q]);
    // without h the order-2 graphs survive; nmax 4 holds every intermediate state
    let cut = cutoff(None, 1.0);
    let space = FockSpace::new(grid.clone(), 4, 100_000).unwrap();
    let oracle = OracleContext::new(spec.clone(), cut.clone(), space, TimeSettings::default()).unwrap();
    let want = oracle.correlator(&req).unwrap();
    let ev = Evaluator::new(spec.clone(), Some(cut), EvalSettings::default());
    let got = ev.correlator(&req, &Mode::CutoffGrid(grid.clone())).unwrap();
    assert!(want[2].norm() > 1e-20);
    for order in [0, 2] {
        let diff = (got.values[order] - want[order]).norm();
        assert!(
            diff <= 1e-8 * want[order].norm() + 3.0 * got.errors[order],
            "order {order}: {} vs {} (err {})",
            got.values[order],
            want[order],
            got.errors[order]
        );
    }
    // with h every vertex defect lies outside the band
    let band = Evaluator::new(spec, Some(cutoff(Some(0.3), 1.0)), EvalSettings::default());
    let v = band.correlator(&req, &Mode::CutoffGrid(grid)).unwrap();
    assert!(v.values[2].norm() < 1e-12 * v.values[0].norm());
}

#[test]
fn cutoff_tree_approaches_the_adiabatic_limit() {
    let spec = phi(4);
    let p = [[0.2, 0.1, 0.0], [-0.1, 0.3, 0.0], [0.05, -0.2, 0.1], [-0.15, -0.2, -0.1]];
    let mut req = CorrelatorRequest::wightman(vec![Minus, Minus, Plus, Plus], 1, vec![1.0, 0.5, -0.5, -1.0], p.to_vec());
    req.smearing = MomentumSmearing::TotalMomentum { width: 2.0 };
    let table = adiabatic_scan(&spec, EvalSettings::default(), &req, None, BaseProfile::A, &[1.0, 2.0, 4.0, 8.0]).unwrap();
    for w in table.rows.windows(2) {
        assert!(w[1].gap < w[0].gap, "{table:?}");
    }
    assert!((table.extrapolated - table.limit).norm() < 0.05 * table.limit.norm(), "{table:?}");
}
