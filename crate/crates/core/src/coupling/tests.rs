use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::autodiff::{Tape, Tensor};
use crate::fluid::{stagger, MacGrid};
use crate::softbody::{surface_geometry, Mesh, SurfaceGeometry};
use crate::testutil::vjp_error;

fn grid() -> MacGrid {
    MacGrid::new(40, 40, 0.01, 0.01).unwrap()
}

fn circle(c: [f64; 2], r: f64, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n as f64;
            [c[0] + r * t.cos(), c[1] + r * t.sin()]
        })
        .collect()
}

/// Fan mesh around the polygon centroid, so the surface loop is the polygon itself.
fn fan_mesh(poly: &[[f64; 2]]) -> Arc<Mesh> {
    let n = poly.len();
    let c = poly.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0] / n as f64, a[1] + p[1] / n as f64]);
    let mut rest = poly.to_vec();
    rest.push(c);
    let tris = (0..n).map(|k| [n, k, (k + 1) % n]).collect();
    Arc::new(Mesh::new(rest, tris, (0..n).collect()).unwrap())
}

fn geometry(poly: &[[f64; 2]]) -> SurfaceGeometry {
    let mesh = fan_mesh(poly);
    surface_geometry(mesh.rest(), &mesh).unwrap()
}

fn perimeter(g: &SurfaceGeometry) -> f64 {
    g.lengths.iter().sum()
}

fn dist_to_segment(x: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let t = (((x[0] - a[0]) * d[0] + (x[1] - a[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1])).clamp(0.0, 1.0);
    (x[0] - a[0] - t * d[0]).hypot(x[1] - a[1] - t * d[1])
}

#[test]
fn inside_test_square_and_grazing_vertex() {
    let sq = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    assert!(inside_polygon(&sq, [0.5, 0.5]));
    assert!(!inside_polygon(&sq, [1.5, 0.5]));
    assert!(!inside_polygon(&sq, [-0.5, 0.5]));
    // a ray through the apex of a diamond must not double count
    let diamond = [[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
    assert!(inside_polygon(&diamond, [-0.5, 0.0]));
    assert!(!inside_polygon(&diamond, [-2.0, 0.0]));
    assert!(!inside_polygon(&diamond, [-2.0, 1.0]));
}

#[test]
fn mask_examples() {
    let g = grid();
    let poly = circle([0.2, 0.2], 0.05, 64);
    let b = soft_boundary_mask(&poly, &g, &SoftnessParams::default());
    // far corner cell
    assert!(b.data()[0] < 1e-6);
    // center of the disk
    let (j, i) = g.cell_of([0.2, 0.2]);
    assert!(b.data()[j * g.nx + i] > 1.0 - 1e-6);
    assert!(b.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn mask_is_half_at_a_vertex() {
    let g = grid();
    // square whose corner sits exactly on the center of cell (15, 15)
    let x0 = g.cell_center(15, 15);
    let mut poly = Vec::new();
    for k in 0..10 {
        poly.push([x0[0] + 0.01 * k as f64, x0[1]]);
    }
    for k in 0..10 {
        poly.push([x0[0] + 0.1, x0[1] + 0.01 * k as f64]);
    }
    for k in 0..10 {
        poly.push([x0[0] + 0.1 - 0.01 * k as f64, x0[1] + 0.1]);
    }
    for k in 0..10 {
        poly.push([x0[0], x0[1] + 0.1 - 0.01 * k as f64]);
    }
    let b = soft_boundary_mask(&poly, &g, &SoftnessParams::default());
    assert!((b.data()[15 * g.nx + 15] - 0.5).abs() < 1e-12);
}

#[test]
fn mask_sharpens_toward_indicator() {
    let g = grid();
    let poly = circle([0.2, 0.21], 0.083, 48);
    let n = poly.len();
    let mut errs = Vec::new();
    for sigma in [1e-4, 1e-5, 1e-6, 1e-7, 1e-8] {
        let params = SoftnessParams { sigma, ..SoftnessParams::default() };
        let b = soft_boundary_mask(&poly, &g, &params);
        let mut worst: f64 = 0.0;
        for (c, x) in g.cell_centers().into_iter().enumerate() {
            let d = (0..n).map(|k| dist_to_segment(x, poly[k], poly[(k + 1) % n])).fold(f64::INFINITY, f64::min);
            if d < 0.5 * g.dx {
                continue;
            }
            let hard = if inside_polygon(&poly, x) { 1.0 } else { 0.0 };
            worst = worst.max((b.data()[c] - hard).abs());
        }
        errs.push(worst);
    }
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(*errs.last().unwrap() < 1e-6, "{errs:?}");
}

#[test]
fn mask_vjp_matches_finite_differences() {
    let g = MacGrid::new(12, 12, 0.01, 0.01).unwrap();
    let poly = circle([0.061, 0.058], 0.03, 7);
    let params = SoftnessParams { sigma: 2e-5, xi: 2e-5, ..SoftnessParams::default() };
    let err = vjp_error(&mask::points_tensor(&poly), 1e-7, |t, q| soft_boundary_mask_var(t, q, &g, &params));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn boundary_velocity_uniform_and_zero() {
    let g = grid();
    let poly = circle([0.2, 0.2], 0.05, 32);
    let params = SoftnessParams::default();
    let b = soft_boundary_mask(&poly, &g, &params);
    let u = [0.03, -0.01];
    let (vx, vy) = boundary_velocity_field(&poly, &vec![u; poly.len()], &b, &g, &params);
    let (ex, _) = stagger(&b.scaled(u[0]), &g);
    let (_, ey) = stagger(&b.scaled(u[1]), &g);
    for (a, e) in vx.data().iter().zip(ex.data()).chain(vy.data().iter().zip(ey.data())) {
        assert!((a - e).abs() <= 1e-15 * (1.0 + e.abs()), "{a} vs {e}");
    }
    let (zx, zy) = boundary_velocity_field(&poly, &vec![[0.0; 2]; poly.len()], &b, &g, &params);
    assert!(zx.max_abs() == 0.0 && zy.max_abs() == 0.0);
}

#[test]
fn small_temperature_picks_nearest_velocity() {
    let pts = [[0.0, 0.0], [0.01, 0.0], [0.0, 0.02]];
    let x = [0.002, 0.001];
    let w = softmin_weights(x, &pts, 1e-12 * 1e-4);
    assert_eq!(w, vec![1.0, 0.0, 0.0]);
    let w = softmin_weights(x, &pts, 1e-4);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(w[0] > w[1] && w[1] > w[2]);
}

#[test]
fn boundary_velocity_vjp_matches_finite_differences() {
    let g = MacGrid::new(10, 10, 0.01, 0.01).unwrap();
    let poly = circle([0.05, 0.05], 0.025, 6);
    let params = SoftnessParams { tau: 4e-5, ..SoftnessParams::default() };
    let b = soft_boundary_mask(&poly, &g, &SoftnessParams { sigma: 1e-4, ..params });
    let vel: Vec<[f64; 2]> = (0..6).map(|k| [0.01 * k as f64, 0.02 - 0.005 * k as f64]).collect();
    let vt = mask::points_tensor(&vel);
    let bt = b.clone();
    let err_q = vjp_error(&mask::points_tensor(&poly), 1e-7, |t, q| {
        let v = t.constant(vt.clone());
        let b = t.constant(bt.clone());
        let (x, y) = boundary_velocity_var(t, q, v, b, &g, &params);
        let x = t.reshape(x, &[110]);
        let y = t.reshape(y, &[110]);
        t.concat(&[x, y], 0)
    });
    assert!(err_q < 1e-6, "{err_q}");
    let pt = mask::points_tensor(&poly);
    let err_v = vjp_error(&vt, 1e-6, |t, v| {
        let q = t.constant(pt.clone());
        let b = t.constant(bt.clone());
        let (x, _) = boundary_velocity_var(t, q, v, b, &g, &params);
        x
    });
    assert!(err_v < 1e-9, "{err_v}");
}

#[test]
fn ibm_zero_and_uniform_pressure() {
    let g = grid();
    let poly = circle([0.2, 0.2], 0.06, 40);
    let geom = geometry(&poly);
    let b = soft_boundary_mask(&poly, &g, &SoftnessParams::default());
    let sp = SoftnessParams::default().sigma_prime(&g);
    let zero = ibm_surface_forces(&Tensor::zeros(&g.center_shape()), &b, &geom, &g, sp).unwrap();
    assert!(zero.per_element.iter().flatten().all(|v| *v == 0.0));
    let p0 = 3.7;
    let f = ibm_surface_forces(&Tensor::full(&g.center_shape(), p0), &b, &geom, &g, sp).unwrap();
    for (k, fk) in f.per_element.iter().enumerate() {
        let e = [-geom.lengths[k] * geom.normals[k][0] * p0, -geom.lengths[k] * geom.normals[k][1] * p0];
        let rel = (fk[0] - e[0]).hypot(fk[1] - e[1]) / e[0].hypot(e[1]);
        assert!(rel <= 1e-12, "element {k}: {rel}");
    }
    let total = f.total[0].hypot(f.total[1]);
    assert!(total <= 1e-10 * p0 * perimeter(&geom), "{total}");
}

#[test]
fn ibm_two_cell_toy() {
    let g = MacGrid::new(8, 8, 0.01, 0.01).unwrap();
    let mut b = Tensor::zeros(&g.center_shape());
    let mut p = Tensor::zeros(&g.center_shape());
    b.data_mut()[3 * 8 + 3] = 1.0;
    b.data_mut()[3 * 8 + 4] = 1.0;
    p.data_mut()[3 * 8 + 3] = 1.0;
    p.data_mut()[3 * 8 + 4] = 3.0;
    // the shared face of the two cells is equidistant from both centers
    let geom = SurfaceGeometry { midpoints: vec![[0.04, 0.035]], normals: vec![[1.0, 0.0]], lengths: vec![0.01] };
    let f = ibm_surface_forces(&p, &b, &geom, &g, 2e-4).unwrap();
    assert!((f.per_element[0][0] + 0.02).abs() < 1e-15 && f.per_element[0][1] == 0.0, "{:?}", f.per_element);
}

#[test]
fn ibm_reports_element_that_left_the_grid() {
    let g = MacGrid::new(8, 8, 0.01, 0.01).unwrap();
    let b = Tensor::full(&g.center_shape(), 1.0);
    let geom = SurfaceGeometry {
        midpoints: vec![[0.04, 0.04], [5.0, 5.0]],
        normals: vec![[1.0, 0.0], [0.0, 1.0]],
        lengths: vec![0.01, 0.01],
    };
    let err = ibm_surface_forces(&b, &b, &geom, &g, 2e-4).unwrap_err();
    assert!(matches!(err, crate::Error::LeftGrid { element: 1, .. }), "{err}");
}

#[test]
fn kernel_truncation_loses_little_mass() {
    let g = grid();
    let b = Tensor::full(&g.center_shape(), 1.0);
    let sp = SoftnessParams::default().sigma_prime(&g);
    let q = [0.2013, 0.1987];
    let w = kernel_weights(q, &b, &g, sp).unwrap();
    assert!((w.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
    let full: f64 =
        g.cell_centers().iter().map(|x| (-((x[0] - q[0]).powi(2) + (x[1] - q[1]).powi(2)) / (2.0 * sp)).exp()).sum();
    let kept: f64 = g
        .cell_centers()
        .iter()
        .map(|x| (x[0] - q[0]).powi(2) + (x[1] - q[1]).powi(2))
        .filter(|d2| *d2 <= 36.0 * sp)
        .map(|d2| (-d2 / (2.0 * sp)).exp())
        .sum();
    assert!((full - kept) / full < 1e-7);
}

#[test]
fn ibm_pressure_gradient_is_the_kernel_weight() {
    let g = MacGrid::new(16, 16, 0.01, 0.01).unwrap();
    let poly = circle([0.08, 0.08], 0.03, 9);
    let b = soft_boundary_mask(&poly, &g, &SoftnessParams { sigma: 1e-4, ..SoftnessParams::default() });
    let sp = 2.0 * g.dx * g.dx;
    let p: Tensor = Tensor::new(g.center_shape().to_vec(), (0..256).map(|i| (i as f64 * 0.37).sin()).collect());
    let mut tape = Tape::new();
    let pv = tape.leaf(p.clone());
    let bv = tape.constant(b.clone());
    let qv = tape.constant(mask::points_tensor(&poly));
    let f = edge_forces_var(&mut tape, qv, pv, bv, &g, sp).unwrap();
    let fx0 = tape.crop2d(f, 0, 0, 1, 1);
    let fx0 = tape.sum(fx0);
    let grad = tape.backward(fx0).unwrap().wrt(pv);
    let geom = geometry(&poly);
    let w = kernel_weights(geom.midpoints[0], &b, &g, sp).unwrap();
    let ln_x = geom.lengths[0] * geom.normals[0][0];
    let mut expected = vec![0.0; 256];
    for (c, wc) in w {
        expected[c] = -ln_x * wc;
    }
    for (a, e) in grad.data().iter().zip(&expected) {
        assert!((a - e).abs() <= 1e-12 * ln_x.abs(), "{a} vs {e}");
    }
    // and against finite differences of the full pipeline
    let bt = b.clone();
    let qt = mask::points_tensor(&poly);
    let err = vjp_error(&p, 1e-4, |t, p| {
        let b = t.constant(bt.clone());
        let q = t.constant(qt.clone());
        edge_forces_var(t, q, p, b, &g, sp).unwrap()
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn ibm_vjp_wrt_mask_and_vertices() {
    let g = MacGrid::new(16, 16, 0.01, 0.01).unwrap();
    let poly = circle([0.08, 0.08], 0.03, 9);
    let b = soft_boundary_mask(&poly, &g, &SoftnessParams { sigma: 1e-4, ..SoftnessParams::default() });
    let p: Tensor = Tensor::new(g.center_shape().to_vec(), (0..256).map(|i| (i as f64 * 0.37).sin()).collect());
    let sp = 2.0 * g.dx * g.dx;
    let (pt, qt) = (p.clone(), mask::points_tensor(&poly));
    let err_b = vjp_error(&b, 1e-7, |t, b| {
        let p = t.constant(pt.clone());
        let q = t.constant(qt.clone());
        edge_forces_var(t, q, p, b, &g, sp).unwrap()
    });
    assert!(err_b < 1e-6, "{err_b}");
    let bt = b.clone();
    let err_q = vjp_error(&qt, 1e-7, |t, q| {
        let p = t.constant(pt.clone());
        let b = t.constant(bt.clone());
        edge_forces_var(t, q, p, b, &g, sp).unwrap()
    });
    assert!(err_q < 1e-6, "{err_q}");
}

#[test]
fn taped_forces_match_plain_forces() {
    let g = grid();
    let poly = circle([0.2, 0.2], 0.06, 24);
    let geom = geometry(&poly);
    let params = SoftnessParams::default();
    let b = soft_boundary_mask(&poly, &g, &params);
    let sp = params.sigma_prime(&g);
    let p = Tensor::new(g.center_shape().to_vec(), (0..1600).map(|i| (i as f64 * 0.11).cos()).collect());
    let a = Tensor::new(g.corner_shape().to_vec(), (0..1681).map(|i| (i as f64 * 0.07).sin()).collect());
    let plain = ibm_surface_forces(&p, &b, &geom, &g, sp).unwrap();
    let visc = viscous_surface_forces(&a, &b, &geom, 0.3, &g, sp).unwrap();
    let mut tape = Tape::new();
    let (pv, av, bv) = (tape.constant(p), tape.constant(a), tape.constant(b));
    let qv = tape.constant(mask::points_tensor(&poly));
    let f = edge_forces_var(&mut tape, qv, pv, bv, &g, sp).unwrap();
    let fv = viscous_forces_var(&mut tape, qv, av, bv, 0.3, &g, sp).unwrap();
    for (k, (e, ev)) in plain.per_element.iter().zip(&visc.per_element).enumerate() {
        for c in 0..2 {
            assert!((tape.value(f).data()[2 * k + c] - e[c]).abs() < 1e-14);
            assert!((tape.value(fv).data()[2 * k + c] - ev[c]).abs() < 1e-14);
        }
    }
}

#[test]
fn viscous_force_examples() {
    let g = grid();
    let b = Tensor::full(&g.center_shape(), 1.0);
    let sp = 2.0 * g.dx * g.dx;
    let geom = SurfaceGeometry { midpoints: vec![[0.2, 0.2]], normals: vec![[1.0, 0.0]], lengths: vec![0.01] };
    let a0 = 1.5;
    let a = Tensor::full(&g.corner_shape(), a0);
    let off = viscous_surface_forces(&a, &b, &geom, 0.0, &g, sp).unwrap();
    assert_eq!(off.per_element[0], [0.0, 0.0]);
    let mu = 1.25e-4;
    let f = viscous_surface_forces(&a, &b, &geom, mu, &g, sp).unwrap();
    // -l mu (n x a z) with n = x gives +l mu a along y
    assert!(f.per_element[0][0] == 0.0);
    assert!((f.per_element[0][1] - 0.01 * mu * a0).abs() < 1e-18);
}

#[test]
fn aggregate_examples() {
    let mut forces = vec![[0.0; 2]; 5];
    forces[1] = [2.0, 0.0];
    let (t, nodal) = aggregate_thrust(&forces, 100, ForceMode::Averaged, &[]);
    assert_eq!(t, [2.0, 0.0]);
    assert!(nodal.iter().all(|f| *f == [0.02, 0.0]));

    // right triangle with hand-set element pressures (1, 2, 3)
    let tri = [[0.0, 0.0], [0.03, 0.0], [0.0, 0.04]];
    let geom = geometry(&tri);
    let p = [1.0, 2.0, 3.0];
    let forces: Vec<[f64; 2]> = (0..3)
        .map(|k| [-geom.lengths[k] * geom.normals[k][0] * p[k], -geom.lengths[k] * geom.normals[k][1] * p[k]])
        .collect();
    let (t, _) = aggregate_thrust(&forces, 4, ForceMode::Averaged, &[]);
    assert!((t[0] - 0.04).abs() < 1e-15 && (t[1] + 0.03).abs() < 1e-15, "{t:?}");

    let (t2, nodal) = aggregate_thrust(&forces, 4, ForceMode::PerSurface, &[0, 1, 2]);
    assert_eq!(t, t2);
    let s = nodal.iter().fold([0.0, 0.0], |a, f| [a[0] + f[0], a[1] + f[1]]);
    assert!((s[0] - t[0]).abs() < 1e-15 && (s[1] - t[1]).abs() < 1e-15);
    assert_eq!(nodal[3], [0.0, 0.0]);
}

#[test]
fn taped_distribution_matches_plain() {
    let forces = vec![[0.1, -0.2], [0.3, 0.05], [-0.07, 0.4], [0.2, 0.2]];
    let surface = [4, 1, 0, 2];
    for mode in [ForceMode::Averaged, ForceMode::PerSurface] {
        let (t, nodal) = aggregate_thrust(&forces, 6, mode, &surface);
        let mut tape = Tape::new();
        let f = tape.constant(mask::points_tensor(&forces));
        let (tv, nv) = distribute_forces_var(&mut tape, f, 6, mode, &surface);
        assert_eq!(tape.value(tv).data(), &t);
        let flat: Vec<f64> = nodal.iter().flatten().copied().collect();
        for (a, b) in tape.value(nv).data().iter().zip(&flat) {
            assert!((a - b).abs() < 1e-16);
        }
    }
}

#[test]
fn wall_mask_is_a_ring() {
    let g = MacGrid::new(10, 8, 0.01, 0.01).unwrap();
    let bc = BoundaryCondition::walls(&g);
    bc.check_shape(&g).unwrap();
    assert_eq!(bc.b.sum(), (2 * 10 + 2 * 6) as f64);
}

fn star(n: usize, radii: &[f64], c: [f64; 2]) -> Vec<[f64; 2]> {
    (0..n)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / n as f64;
            let r = radii[k % radii.len()];
            [c[0] + r * t.cos(), c[1] + r * t.sin()]
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mask_stays_in_unit_interval(
        radii in prop::collection::vec(0.01f64..0.09, 3..12),
        n in 3usize..40,
        cx in 0.1f64..0.3,
        cy in 0.1f64..0.3,
        log_sigma in -9.0f64..-3.0,
    ) {
        let g = grid();
        let poly = star(n, &radii, [cx, cy]);
        let params = SoftnessParams { sigma: 10f64.powf(log_sigma), ..SoftnessParams::default() };
        let b = soft_boundary_mask(&poly, &g, &params);
        prop_assert!(b.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn softmin_weights_partition_unity(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..30),
        x in (-2.0f64..2.0, -2.0f64..2.0),
        log_t in -12.0f64..0.0,
    ) {
        let pts: Vec<[f64; 2]> = pts.into_iter().map(|(a, b)| [a, b]).collect();
        let w = softmin_weights([x.0, x.1], &pts, 10f64.powf(log_t));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn ibm_weights_partition_unity(qx in 0.05f64..0.35, qy in 0.05f64..0.35, seed in 0u64..1000) {
        let g = grid();
        let b = Tensor::new(
            g.center_shape().to_vec(),
            (0..1600).map(|i| 0.5 + 0.5 * ((i as u64 * 2654435761 + seed) as f64).sin()).collect(),
        );
        let w = kernel_weights([qx, qy], &b, &g, 2.0 * g.dx * g.dx).unwrap();
        prop_assert!((w.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn thrust_ignores_pressure_gauge(
        radii in prop::collection::vec(0.03f64..0.08, 3..8),
        c in -1e3f64..1e3,
        seed in 0u64..1000,
    ) {
        let g = grid();
        let poly = star(36, &radii, [0.2, 0.2]);
        let geom = geometry(&poly);
        let params = SoftnessParams::default();
        let b = soft_boundary_mask(&poly, &g, &params);
        let sp = params.sigma_prime(&g);
        let p = Tensor::new(
            g.center_shape().to_vec(),
            (0..1600).map(|i| ((i as u64 * 7919 + seed) as f64 * 0.001).sin()).collect(),
        );
        let f0 = ibm_surface_forces(&p, &b, &geom, &g, sp).unwrap().total;
        let f1 = ibm_surface_forces(&p.map(|v| v + c), &b, &geom, &g, sp).unwrap().total;
        let d = (f1[0] - f0[0]).hypot(f1[1] - f0[1]);
        prop_assert!(d <= 1e-10 * c.abs() * perimeter(&geom) + 1e-15, "{}", d);
    }
}
