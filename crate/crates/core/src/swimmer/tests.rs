use proptest::prelude::*;

use super::*;

fn spec() -> SwimmerSpec {
    SwimmerSpec::default()
}

#[test]
fn envelope_values() {
    assert!((envelope(0.0, 0.2).unwrap() - 0.02).abs() <= 1e-15);
    assert!((envelope(0.2, 0.2).unwrap() - 0.004).abs() <= 1e-15);
    // vertex of the quadratic at 3L/4 where v = L/100
    assert!((envelope(0.15, 0.2).unwrap() - 0.002).abs() <= 1e-15);
    for x in [0.1499, 0.1501, 0.0, 0.2] {
        assert!(envelope(x, 0.2).unwrap() > envelope(0.15, 0.2).unwrap());
    }
    assert!(envelope(-1e-9, 0.2).is_err());
    assert!(envelope(0.2 + 1e-9, 0.2).is_err());
}

#[test]
fn signal_at_activation_time() {
    let mut s = spec();
    s.actuation.wave_number = Some(0.0);
    let ta = s.actuation.activation_time;
    let omega = PI / 2.0 / ta;
    let h = actuation_signal(0.0, ta, omega, &s).unwrap();
    let expected = 2.0 * 0.02 * (1.0 - (-1.0f64).exp());
    assert!((h - expected).abs() < 1e-15, "{h} vs {expected}");
    assert!(actuation_signal(0.1, -1e-3, omega, &s).is_err());
}

#[test]
fn static_pattern_at_zero_frequency() {
    let s = spec();
    let t = 0.7;
    let r = 1.0 - (-t / 0.2f64).exp();
    for x in [0.0, 0.03, 0.11, 0.2] {
        let h = actuation_signal(x, t, 0.0, &s).unwrap();
        let e = 2.0 * envelope(x, 0.2).unwrap() * (s.wave_number() * x).sin() * r;
        assert!((h - e).abs() < 1e-15);
    }
}

#[test]
fn half_wavelength_stations_are_antiphase() {
    let s = spec();
    let half = PI / s.wave_number();
    let c = Controller::new(&s, &[0.02, 0.02 + half, 0.07, 0.07 + half]).unwrap();
    let p = ControllerParams::from_hz(4.0);
    for t in [0.05, 0.3, 1.1] {
        let h = c.signals(&p, t);
        let v: Vec<f64> =
            [0.02, 0.02 + half, 0.07, 0.07 + half].iter().map(|&x| 2.0 * envelope(x, 0.2).unwrap()).collect();
        assert!((h[0] / v[0] + h[1] / v[1]).abs() < 1e-14);
        assert!((h[2] / v[2] + h[3] / v[3]).abs() < 1e-14);
    }
}

#[test]
fn frequency_derivative() {
    let s = spec();
    let body = build_profile_mesh(&s).unwrap();
    let c = Controller::new(&s, &body.actuators.stations).unwrap();
    let p = ControllerParams { omega: 23.0 };
    for t in [0.0, 0.13, 0.9] {
        let analytic = c.signals_domega(&p, t);
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(p.omega));
        let h = c.signals_var(&mut tape, w, t);
        assert_eq!(tape.value(h).data(), c.signals(&p, t).as_slice());
        for (k, a) in analytic.iter().enumerate() {
            let mut tp = Tape::new();
            let w = tp.leaf(Tensor::scalar(p.omega));
            let h = c.signals_var(&mut tp, w, t);
            let hk = tp.gather(h, &[k]);
            let hk = tp.sum(hk);
            let g = tp.backward(hk).unwrap().scalar(w);
            assert!((g - a).abs() <= 1e-8 * a.abs().max(1e-12), "station {k}: {g} vs {a}");
            let x = c.signals(&ControllerParams { omega: p.omega + 1e-6 }, t)[k];
            let y = c.signals(&ControllerParams { omega: p.omega - 1e-6 }, t)[k];
            assert!(((x - y) / 2e-6 - a).abs() < 1e-7);
        }
    }
}

#[test]
fn mesh_counts_and_loop() {
    let s = spec();
    let body = build_profile_mesh(&s).unwrap();
    let m = &body.mesh;
    assert_eq!(m.n_nodes(), 41 * 9);
    assert_eq!(m.n_elements(), 2 * 40 * 8);
    assert_eq!(m.surface().len(), 2 * (40 + 8));
    assert_eq!(body.actuators.elements.len(), 2 * 2 * 40);
    assert_eq!(body.actuators.stations.len(), 40);
    assert_eq!(body.head_nodes.len(), 9);
    assert!(body.head_nodes.iter().all(|&n| m.rest()[n][0] == 0.2));
    let top = body.actuators.elements.iter().filter(|e| e.2 < 0.0).count();
    assert_eq!(top, 80);
}

#[test]
fn rectangle_elements_have_equal_areas() {
    let mut s = spec();
    s.profile = [0.05, 0.0, 0.0, 0.0];
    s.resolution = [12, 6];
    let body = build_profile_mesh(&s).unwrap();
    let a0 = body.mesh.rest_areas()[0];
    assert!(body.mesh.rest_areas().iter().all(|a| (a - a0).abs() < 1e-18));
    assert!((body.mesh.total_area() - 0.2 * 0.02).abs() < 1e-15);
}

#[test]
fn profile_area_matches_quadrature() {
    let s = spec();
    let [nx, _] = s.resolution;
    let body = build_profile_mesh(&s).unwrap();
    let loop_area = crate::softbody::polygon_area(&body.mesh.surface_points(body.mesh.rest()));
    let l = s.length;
    let h = l / nx as f64;
    let trapezoid: f64 = (0..nx).map(|i| h * (s.half_width(i as f64 * h) + s.half_width((i + 1) as f64 * h))).sum();
    assert!((loop_area - trapezoid).abs() <= 1e-12 * trapezoid);
    assert!((body.mesh.total_area() - loop_area).abs() <= 1e-12 * loop_area);
    // exact integral of 2 c(X); the clamp is inactive for the default profile
    let [a0, a1, a2, a3] = s.profile;
    let exact = 2.0 * l * l * (a0 + a1 / 2.0 + a2 / 3.0 + a3 / 4.0);
    // trapezoid error bound L h^2 max|f''| / 12 with f = 2c
    let f2max = 2.0 * (2.0 * a2.abs() + 6.0 * a3.abs()) / l;
    assert!((loop_area - exact).abs() <= l * h * h * f2max / 12.0);
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let orient = |p: [f64; 2], q: [f64; 2], r: [f64; 2]| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
    let (d1, d2) = (orient(a, b, c), orient(a, b, d));
    let (d3, d4) = (orient(c, d, a), orient(c, d, b));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

#[test]
fn surface_loop_is_simple() {
    for res in [[8, 4], [12, 4], [40, 8], [80, 16]] {
        let s = SwimmerSpec { resolution: res, ..spec() };
        let body = build_profile_mesh(&s).unwrap();
        let pts = body.mesh.surface_points(body.mesh.rest());
        let n = pts.len();
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                assert!(!segments_cross(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]), "{res:?}: {i} {j}");
            }
        }
    }
}

#[test]
fn taped_strains_match() {
    let s = SwimmerSpec { resolution: [10, 4], ..spec() };
    let body = build_profile_mesh(&s).unwrap();
    let sig: Vec<f64> = (0..10).map(|k| 0.01 * k as f64 - 0.03).collect();
    let plain = body.actuators.strains(&sig);
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::vector(sig));
    let st = body.actuators.strains_var(&mut tape, v);
    assert_eq!(tape.value(st).data(), plain.as_slice());
    // each column has two bottom and two top triangles
    assert_eq!(plain.iter().filter(|v| **v != 0.0).count(), 4 * 9);
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(build_profile_mesh(&SwimmerSpec { resolution: [7, 4], ..spec() }).is_err());
    assert!(build_profile_mesh(&SwimmerSpec { resolution: [8, 3], ..spec() }).is_err());
    assert!(build_profile_mesh(&SwimmerSpec { length: 0.0, ..spec() }).is_err());
    assert!(build_profile_mesh(&SwimmerSpec { actuated_rows: 3, resolution: [8, 4], ..spec() }).is_err());
}

proptest! {
    #[test]
    fn signal_bounded_and_zero_at_start(
        x in 0.0f64..=0.2,
        t in 0.0f64..5.0,
        omega in 0.0f64..100.0,
        c in 0.1f64..5.0,
        gamma in -50.0f64..50.0,
        ta in 0.01f64..1.0,
    ) {
        let s = SwimmerSpec {
            actuation: ActuationSpec { amplitude: c, wave_number: Some(gamma), activation_time: ta },
            ..spec()
        };
        let bound = c * envelope(x, 0.2).unwrap();
        prop_assert!(actuation_signal(x, t, omega, &s).unwrap().abs() <= bound);
        prop_assert_eq!(actuation_signal(x, 0.0, omega, &s).unwrap(), 0.0);
    }
}
