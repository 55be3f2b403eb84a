use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Tape, Tensor};
use crate::error::Error;
use crate::swimmer::{build_profile_mesh, SwimmerSpec};

fn fish(res: [usize; 2]) -> (Arc<Mesh>, Vec<f64>) {
    let body = build_profile_mesh(&SwimmerSpec { resolution: res, ..SwimmerSpec::default() }).unwrap();
    let act = body.actuators.strains(&vec![0.0; body.actuators.stations.len()]);
    (Arc::new(body.mesh), act)
}

fn square(s: f64) -> Arc<Mesh> {
    let rest = vec![[0.0, 0.0], [s, 0.0], [s, s], [0.0, s]];
    Arc::new(Mesh::new(rest, vec![[0, 1, 2], [0, 2, 3]], vec![0, 1, 2, 3]).unwrap())
}

fn rotate(q: &[[f64; 2]], theta: f64, about: [f64; 2]) -> Vec<[f64; 2]> {
    let (s, c) = theta.sin_cos();
    q.iter()
        .map(|p| {
            let d = [p[0] - about[0], p[1] - about[1]];
            [about[0] + c * d[0] - s * d[1], about[1] + s * d[0] + c * d[1]]
        })
        .collect()
}

fn perturbed(q: &[[f64; 2]], amp: f64, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    q.iter().map(|p| [p[0] + amp * rng.random_range(-1.0..1.0), p[1] + amp * rng.random_range(-1.0..1.0)]).collect()
}

fn max_norm(f: &[[f64; 2]]) -> f64 {
    f.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max)
}

fn momentum(m: &[f64], v: &[[f64; 2]]) -> [f64; 2] {
    m.iter().zip(v).fold([0.0, 0.0], |a, (mi, vi)| [a[0] + mi * vi[0], a[1] + mi * vi[1]])
}

#[test]
fn lame_constants() {
    let l = Material::default().lame();
    assert!((l.mu - 6e5 / 2.9).abs() < 1e-9);
    assert!((l.lambda - 6e5 * 0.45 / (1.45 * 0.1)).abs() < 1e-6);
    assert!(Material { poisson: 0.5, ..Material::default() }.validate().is_err());
    assert!(Material { youngs: 0.0, ..Material::default() }.validate().is_err());
}

#[test]
fn rigid_motions_are_force_free() {
    let (mesh, act) = fish([40, 8]);
    let mat = Material::default();
    let rest = mesh.rest().to_vec();
    let f0 = elastic_force(&rest, &mesh, &mat, &act).unwrap();
    assert!(max_norm(&f0) <= 1e-9);
    let moved: Vec<[f64; 2]> = rest.iter().map(|p| [p[0] + 0.1, p[1] + 0.2]).collect();
    assert!(max_norm(&elastic_force(&moved, &mesh, &mat, &act).unwrap()) <= 1e-9);
    // typical force scale: a 1% stretch
    let stretched: Vec<[f64; 2]> = rest.iter().map(|p| [1.01 * p[0], p[1]]).collect();
    let scale = max_norm(&elastic_force(&stretched, &mesh, &mat, &act).unwrap());
    let rotated = rotate(&rest, 30f64.to_radians(), [0.05, 0.0]);
    let fr = max_norm(&elastic_force(&rotated, &mesh, &mat, &act).unwrap());
    assert!(fr <= 1e-9, "{fr}");
    assert!(fr <= 1e-9 * scale, "{fr} vs {scale}");
}

#[test]
fn actuated_rest_shape_is_force_free() {
    let (mesh, act) = fish([12, 4]);
    let h = -0.07;
    let act: Vec<f64> = act.iter().map(|_| h).collect();
    let q: Vec<[f64; 2]> = mesh.rest().iter().map(|p| [(1.0 + h) * p[0], p[1]]).collect();
    let f = elastic_force(&q, &mesh, &Material::default(), &act).unwrap();
    assert!(max_norm(&f) <= 1e-9, "{}", max_norm(&f));
    let f_rest = elastic_force(mesh.rest(), &mesh, &Material::default(), &act).unwrap();
    assert!(max_norm(&f_rest) > 1.0);
}

#[test]
fn force_is_negative_energy_gradient() {
    let (mesh, act) = fish([12, 4]);
    let mat = Material::default();
    let q = perturbed(&rotate(mesh.rest(), 0.3, [0.0, 0.0]), 2e-4, 3);
    let act: Vec<f64> = act.iter().enumerate().map(|(e, _)| 0.05 * ((e as f64) * 0.7).sin()).collect();
    let f = elastic_force(&q, &mesh, &mat, &act).unwrap();
    let eps = 1e-7;
    let scale = max_norm(&f);
    for i in 0..q.len() {
        for c in 0..2 {
            let mut qp = q.clone();
            qp[i][c] += eps;
            let mut qm = q.clone();
            qm[i][c] -= eps;
            let fd = -(elastic_energy(&qp, &mesh, &mat, &act).unwrap()
                - elastic_energy(&qm, &mesh, &mat, &act).unwrap())
                / (2.0 * eps);
            assert!((fd - f[i][c]).abs() <= 1e-6 * scale, "node {i}.{c}: {fd} vs {}", f[i][c]);
        }
    }
}

#[test]
fn inverted_element_is_reported() {
    let mesh = square(0.01);
    let q = vec![[0.0, 0.0], [0.01, 0.0], [-0.01, -0.01], [0.0, 0.01]];
    let err = elastic_force(&q, &mesh, &Material::default(), &[0.0, 0.0]).unwrap_err();
    assert!(matches!(err, Error::ElementInverted { element: 0, .. }), "{err}");
}

#[test]
fn rest_state_is_a_fixed_point() {
    let (mesh, act) = fish([12, 4]);
    let body = SoftBody::new(mesh.clone(), Material::default(), SolverOptions::default()).unwrap();
    let s0 = SoftBodyState::at_rest(&mesh);
    let (s1, report) = body.step(&s0, &vec![[0.0; 2]; mesh.n_nodes()], &act, 0.01).unwrap();
    assert!(report.converged);
    // the rest shape is an equilibrium up to rounding in the rest-shape inverse
    for (a, b) in s1.q.iter().zip(&s0.q) {
        assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
    }
    assert!(max_norm(&s1.qdot) < 1e-13);
}

#[test]
fn free_flight_keeps_velocity() {
    let (mesh, act) = fish([12, 4]);
    let body = SoftBody::new(mesh.clone(), Material::default(), SolverOptions::default()).unwrap();
    let u = [0.03, -0.02];
    let mut s = SoftBodyState { q: mesh.rest().to_vec(), qdot: vec![u; mesh.n_nodes()] };
    let h = 0.01;
    for _ in 0..5 {
        let (next, _) = body.step(&s, &vec![[0.0; 2]; mesh.n_nodes()], &act, h).unwrap();
        for (a, b) in next.q.iter().zip(&s.q) {
            assert!((a[0] - b[0] - h * u[0]).abs() < 1e-15 && (a[1] - b[1] - h * u[1]).abs() < 1e-15);
        }
        for v in &next.qdot {
            assert!((v[0] - u[0]).abs() < 1e-12 && (v[1] - u[1]).abs() < 1e-12);
        }
        s = next;
    }
}

#[test]
fn momentum_is_conserved_without_external_force() {
    let (mesh, act) = fish([20, 4]);
    let body = SoftBody::new(mesh.clone(), Material::default(), SolverOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = SoftBodyState {
        q: perturbed(mesh.rest(), 2e-4, 9),
        qdot: (0..mesh.n_nodes()).map(|_| [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)]).collect(),
    };
    let act: Vec<f64> = act.iter().enumerate().map(|(e, _)| 0.03 * (e as f64 * 0.3).cos()).collect();
    let scale: f64 = body.masses().iter().zip(&s.qdot).map(|(m, v)| m * v[0].hypot(v[1])).sum();
    for _ in 0..10 {
        let p0 = momentum(body.masses(), &s.qdot);
        let (next, _) = body.step(&s, &vec![[0.0; 2]; mesh.n_nodes()], &act, 0.01).unwrap();
        let p1 = momentum(body.masses(), &next.qdot);
        assert!((p1[0] - p0[0]).hypot(p1[1] - p0[1]) <= 1e-10 * scale, "{p0:?} -> {p1:?}");
        s = next;
    }
}

/// Pairwise node distances, which ignore rigid motion.
fn distances(q: &[[f64; 2]]) -> Vec<f64> {
    let mut d = Vec::new();
    for i in 0..q.len() {
        for j in i + 1..q.len() {
            d.push((q[i][0] - q[j][0]).hypot(q[i][1] - q[j][1]));
        }
    }
    d
}

/// Static equilibrium of a self-equilibrated load with node 0 and the y of node 1 pinned,
/// by Newton with a finite-difference Jacobian of the elastic force.
fn static_solution(mesh: &Mesh, mat: &Material, load: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let free = [2usize, 4, 5, 6, 7];
    let residual = |q: &[[f64; 2]]| -> DVector<f64> {
        let f = elastic_force(q, mesh, mat, &[0.0, 0.0]).unwrap();
        DVector::from_iterator(5, free.iter().map(|&d| f[d / 2][d % 2] + load[d / 2][d % 2]))
    };
    let mut q = mesh.rest().to_vec();
    for _ in 0..30 {
        let r = residual(&q);
        if r.norm() < 1e-10 {
            break;
        }
        let mut jac = DMatrix::zeros(5, 5);
        for (c, &d) in free.iter().enumerate() {
            let eps = 1e-9;
            let mut qp = q.clone();
            qp[d / 2][d % 2] += eps;
            let mut qm = q.clone();
            qm[d / 2][d % 2] -= eps;
            jac.set_column(c, &((residual(&qp) - residual(&qm)) / (2.0 * eps)));
        }
        let step = jac.lu().solve(&(-r)).unwrap();
        for (c, &d) in free.iter().enumerate() {
            q[d / 2][d % 2] += step[c];
        }
    }
    q
}

#[test]
fn uniaxial_stretch_converges_to_static_solution() {
    let mesh = square(0.01);
    let mat = Material::default();
    let f = 50.0;
    let load = vec![[-f, 0.0], [f, 0.0], [f, 0.0], [-f, 0.0]];
    let target = distances(&static_solution(&mesh, &mat, &load));
    // heavy mass damping makes every mode overdamped, so the approach is monotone
    let opts = SolverOptions { max_iters: 30, damping: 1e5, ..SolverOptions::default() };
    let body = SoftBody::new(mesh.clone(), mat, opts).unwrap();
    let mut s = SoftBodyState::at_rest(&mesh);
    let err = |q: &[[f64; 2]]| distances(q).iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let mut history = vec![err(&s.q)];
    for _ in 0..60 {
        s = body.step(&s, &load, &[0.0, 0.0], 0.05).unwrap().0;
        history.push(err(&s.q));
    }
    let floor = 1e-9 * history[0];
    for w in history.windows(2) {
        assert!(w[1] <= w[0] || w[1] <= floor, "{history:?}");
    }
    assert!(*history.last().unwrap() <= floor, "{history:?}");
    // the load actually stretched the square
    assert!(s.q[1][0] - s.q[0][0] > 0.0101);
}

fn one_step_loss_grad(which: usize, eps: f64) -> f64 {
    let (mesh, act0) = fish([8, 4]);
    let body = Arc::new(
        SoftBody::new(mesh.clone(), Material::default(), SolverOptions { max_iters: 30, ..SolverOptions::default() })
            .unwrap(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = mesh.n_nodes();
    let mut rand =
        |s: f64, len: usize| Tensor::new(vec![len / 2, 2], (0..len).map(|_| s * rng.random_range(-1.0..1.0)).collect());
    let q = {
        let mut t = Tensor::new(vec![n, 2], mesh.rest().iter().flatten().copied().collect());
        t.add_assign(&rand(5e-4, 2 * n));
        t
    };
    let qdot = rand(0.05, 2 * n);
    let fext = rand(0.5, 2 * n);
    let act = Tensor::vector(act0.iter().enumerate().map(|(e, _)| if e % 3 == 0 { 0.04 } else { -0.02 }).collect());
    let youngs = Tensor::scalar(6e5);
    let inputs = [q, qdot, fext, act, youngs];
    let loss = |x: &Tensor, grad: bool| -> (f64, Option<Tensor>) {
        let mut tape = Tape::new();
        let vars: Vec<_> = inputs
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let t = if k == which { x.clone() } else { t.clone() };
                if k == which && grad {
                    tape.leaf(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect();
        let (q1, _, report) = body.step_var(&mut tape, vars[0], vars[1], vars[2], vars[3], vars[4], 0.01).unwrap();
        assert!(report.converged, "{report:?}");
        let sq = tape.square(q1);
        let l = tape.sum(sq);
        let val = tape.scalar(l);
        if !grad {
            return (val, None);
        }
        let g = tape.backward(l).unwrap().wrt(vars[which]);
        (val, Some(g))
    };
    let x0 = inputs[which].clone();
    let g = loss(&x0, true).1.unwrap();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..x0.len() {
        let mut xp = x0.clone();
        xp.data_mut()[i] += eps;
        let mut xm = x0.clone();
        xm.data_mut()[i] -= eps;
        let fd = (loss(&xp, false).0 - loss(&xm, false).0) / (2.0 * eps);
        worst = worst.max((fd - g.data()[i]).abs());
        scale = scale.max(fd.abs());
    }
    worst / scale
}

#[test]
fn one_step_gradients_match_finite_differences() {
    let names = ["q", "qdot", "f_ext", "actuation", "youngs"];
    for (k, eps) in [1e-7, 1e-5, 1e-4, 1e-6, 1.0].into_iter().enumerate() {
        let err = one_step_loss_grad(k, eps);
        assert!(err < 1e-4, "{}: {err}", names[k]);
    }
}

#[test]
fn square_geometry() {
    let mesh = square(1.0);
    let g = surface_geometry(mesh.rest(), &mesh).unwrap();
    assert_eq!(g.lengths, vec![1.0; 4]);
    assert_eq!(g.normals, vec![[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]);
    assert_eq!(g.midpoints[0], [0.5, 0.0]);
}

#[test]
fn hexagon_geometry() {
    let r = 0.3;
    let c = [0.1, -0.2];
    let mut rest: Vec<[f64; 2]> = (0..6)
        .map(|k| {
            let t = std::f64::consts::PI / 3.0 * k as f64;
            [c[0] + r * t.cos(), c[1] + r * t.sin()]
        })
        .collect();
    rest.push(c);
    let tris = (0..6).map(|k| [6, k, (k + 1) % 6]).collect();
    let mesh = Mesh::new(rest, tris, (0..6).collect()).unwrap();
    let g = surface_geometry(mesh.rest(), &mesh).unwrap();
    for k in 0..6 {
        assert!((g.lengths[k] - r).abs() < 1e-15);
        let m = g.midpoints[k];
        let radial = [m[0] - c[0], m[1] - c[1]];
        let len = radial[0].hypot(radial[1]);
        assert!((g.normals[k][0] - radial[0] / len).abs() < 1e-14 && (g.normals[k][1] - radial[1] / len).abs() < 1e-14);
    }
    assert!((mesh.total_area() - 1.5 * 3f64.sqrt() * r * r).abs() < 1e-15);
}

#[test]
fn degenerate_meshes_are_rejected() {
    let pts = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    assert!(Mesh::new(pts.clone(), vec![[0, 2, 1]], vec![0, 1, 2, 3]).is_err());
    assert!(Mesh::new(pts.clone(), vec![[0, 1, 2]], vec![0, 3, 2, 1]).is_err());
    assert!(Mesh::new(pts.clone(), vec![[0, 1, 2]], vec![0, 1]).is_err());
    assert!(Mesh::new(pts.clone(), vec![[0, 1, 9]], vec![0, 1, 2]).is_err());
    let mesh = Mesh::new(pts, vec![[0, 1, 2], [0, 2, 3]], vec![0, 1, 2, 3]).unwrap();
    let q = vec![[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    assert!(surface_geometry(&q, &mesh).is_err());
}

#[test]
fn text_format_round_trip() {
    let (mesh, _) = fish([8, 4]);
    let text = mesh.to_text();
    let back = Mesh::parse(&text, Path::new("fish.mesh")).unwrap();
    assert_eq!(&back, mesh.as_ref());
    let commented = text.replacen("nodes", "# a comment\n\nnodes", 1).replacen(
        "softswim-mesh 1\n",
        "softswim-mesh 1   # header\n",
        1,
    );
    assert_eq!(&Mesh::parse(&commented, Path::new("c.mesh")).unwrap(), mesh.as_ref());
    for bad in [
        text.replacen("softswim-mesh 1", "softswim-mesh 2", 1),
        text.replacen("triangles", "triangle", 1),
        format!("{text}7\n"),
        text.lines().take(10).collect::<Vec<_>>().join("\n"),
    ] {
        match Mesh::parse(&bad, Path::new("bad.mesh")) {
            Err(Error::Format { path, .. }) => assert!(path.ends_with("bad.mesh")),
            other => panic!("expected a format error, got {other:?}"),
        }
    }
}

#[test]
fn step_rejects_bad_inputs() {
    let (mesh, act) = fish([8, 4]);
    let body = SoftBody::new(mesh.clone(), Material::default(), SolverOptions::default()).unwrap();
    let s = SoftBodyState::at_rest(&mesh);
    let f = vec![[0.0; 2]; mesh.n_nodes()];
    assert!(body.step(&s, &f, &act, 0.0).is_err());
    assert!(body.step(&s, &f[1..], &act, 0.01).is_err());
    let mut strong = act.clone();
    strong[0] = 1.0;
    assert!(body.step(&s, &f, &strong, 0.01).is_err());
    let mut nan = f.clone();
    nan[3][1] = f64::NAN;
    assert!(matches!(body.step(&s, &nan, &act, 0.01), Err(Error::NonFinite { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn energy_is_rotation_invariant(theta in -3.1f64..3.1, seed in 0u64..1000, tx in -1.0f64..1.0) {
        let (mesh, act) = fish([8, 4]);
        let mat = Material::default();
        let q = perturbed(mesh.rest(), 2e-4, seed);
        let w0 = elastic_energy(&q, &mesh, &mat, &act).unwrap();
        let qr: Vec<[f64; 2]> = rotate(&q, theta, [0.1, 0.0]).into_iter().map(|p| [p[0] + tx, p[1]]).collect();
        let w1 = elastic_energy(&qr, &mesh, &mat, &act).unwrap();
        prop_assert!((w1 - w0).abs() <= 1e-9 * w0.abs());
        let f0 = elastic_force(&q, &mesh, &mat, &act).unwrap();
        let f1 = elastic_force(&qr, &mesh, &mat, &act).unwrap();
        let f0r = rotate(&f0, theta, [0.0, 0.0]);
        let scale = max_norm(&f0);
        for (a, b) in f1.iter().zip(&f0r) {
            prop_assert!((a[0] - b[0]).hypot(a[1] - b[1]) <= 1e-8 * scale);
        }
    }

    #[test]
    fn internal_forces_sum_to_zero(seed in 0u64..1000) {
        let (mesh, act) = fish([8, 4]);
        let q = perturbed(mesh.rest(), 2e-4, seed);
        let f = elastic_force(&q, &mesh, &Material::default(), &act).unwrap();
        let total = f.iter().fold([0.0, 0.0], |a, v| [a[0] + v[0], a[1] + v[1]]);
        prop_assert!(total[0].hypot(total[1]) <= 1e-10 * max_norm(&f));
    }
}
