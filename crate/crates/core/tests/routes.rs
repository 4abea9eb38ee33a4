use subpot_core::inversion::{ContourSpec, Inverter};
use subpot_core::mc::creep_prob;
use subpot_core::series::{series_radius, u_series};
use subpot_core::smoothness::fd_jump;
use subpot_core::volterra::{u_volterra, VolterraOptions};
use subpot_core::{AcTail, LevyModel};

fn mixed() -> LevyModel {
    LevyModel::atomic(1.0, &[(1.0, 1.0)])
        .unwrap()
        .with_ac(AcTail::Stable { c: 0.2, alpha: 0.4 })
        .unwrap()
}

fn volterra_at(model: &LevyModel, xs: &[f64]) -> Vec<(f64, f64)> {
    let x_max = xs.iter().copied().fold(0.0, f64::max);
    let grid = u_volterra(
        model,
        x_max,
        &VolterraOptions {
            extra_nodes: xs.to_vec(),
            ..Default::default()
        },
    )
    .unwrap();
    xs.iter()
        .map(|&x| {
            let j = grid.node_index(x).unwrap();
            (grid.u[j], grid.err_est[j])
        })
        .collect()
}

#[test]
fn three_routes_agree_on_mixed_model() {
    let m = mixed();
    let radius = series_radius(&m);
    let xs = [0.5 * radius, radius, 0.9, 1.0, 1.3, 2.0, 2.7];
    let vol = volterra_at(&m, &xs);
    let inv = Inverter::new(&m, 3.0).unwrap();
    for (&x, &(v, ve)) in xs.iter().zip(&vol) {
        let i = inv.u(x, &ContourSpec::default(), 1e-9).unwrap();
        assert!((i.value - v).abs() <= 2.0 * (ve + i.err_est) + 1e-8, "x={x}: {} vs {v}", i.value);
        if x <= radius {
            let s = u_series(&m, x, 1e-10).unwrap();
            assert!((s.value - v).abs() <= 2.0 * (ve + s.err_bound) + 1e-8);
        }
    }
}

#[test]
fn tempered_routes_agree() {
    let m = LevyModel::tempered(1.5, 0.8, 0.6, 2.0).unwrap().with_q(0.3).unwrap();
    let xs = [0.2, 0.8, 1.7, 3.0];
    let vol = volterra_at(&m, &xs);
    let inv = Inverter::new(&m, 3.0).unwrap();
    for (&x, &(v, ve)) in xs.iter().zip(&vol) {
        let i = inv.u(x, &ContourSpec::default(), 1e-9).unwrap();
        assert!((i.value - v).abs() <= 2.0 * (ve + i.err_est) + 1e-8, "x={x}");
    }
}

#[test]
fn finite_difference_sees_atom_jumps() {
    let m = LevyModel::atomic(1.5, &[(0.7, 1.2), (1.6, 0.4)]).unwrap();
    for (x, mass) in [(0.7, 1.2), (1.6, 0.4)] {
        let (jump, se) = fd_jump(&m, x).unwrap();
        let expected = mass / (1.5 * 1.5);
        assert!((jump - expected).abs() <= 1e-4f64.max(3.0 * se), "x={x}: {jump} ± {se} vs {expected}");
    }
    let (jump, se) = fd_jump(&m, 1.1).unwrap();
    assert!(jump.abs() <= 1e-4f64.max(3.0 * se), "{jump} ± {se}");
}

#[test]
fn truncated_simulation_tracks_the_density() {
    // dropped jumps below eps bias the creeping frequency upwards by O(eps Π̄(eps))
    let m = mixed();
    let eps = 1e-4;
    let vol = volterra_at(&m, &[0.6, 1.4]);
    for (x, (u, _)) in [0.6, 1.4].into_iter().zip(vol) {
        let e = creep_prob(&m, x, 200_000, 17, eps).unwrap();
        assert!((e.p_hat - m.drift() * u).abs() <= 3.0 * e.sigma() + 2.0 * e.eps_bias, "x={x}: {e:?} vs {u}");
    }
}
