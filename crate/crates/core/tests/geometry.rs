mod common;

use meshfield::geometry::{
    barycentric_point, face_geometry, noc_frame, noc_of_point, obj::parse_obj, qmh, shapes, subdivide, QuadMesh,
    SurfacePoint, BOUNDARY,
};
use proptest::prelude::*;

fn assert_adjacency_symmetric(m: &QuadMesh) {
    for (f, adj) in m.adjacency().iter().enumerate() {
        for &g in adj {
            if g == BOUNDARY {
                continue;
            }
            let back = m.adjacency()[g as usize].iter().filter(|&&h| h as usize == f).count();
            assert!(back >= 1, "face {f} lists {g} but not the reverse");
        }
    }
}

#[test]
fn hierarchy_counts_euler_and_adjacency_on_every_level() {
    for (name, base) in [
        ("cube", shapes::unit_cube()),
        ("sphere", shapes::quad_sphere(1, 1.0)),
        ("plane", shapes::plane_grid(3, 2)),
    ] {
        let h = subdivide(&base, 4).unwrap();
        let chi = base.euler_characteristic();
        for l in 0..h.n_levels() {
            let m = h.level(l);
            assert_eq!(m.n_faces(), base.n_faces() * 4usize.pow(l as u32), "{name} level {l}");
            assert_eq!(m.euler_characteristic(), chi, "{name} level {l}");
            assert_adjacency_symmetric(m);
        }
        for l in 0..h.n_levels() - 1 {
            let children = h.children(l).unwrap();
            let parents = h.parents(l + 1).unwrap();
            for (p, kids) in children.iter().enumerate() {
                for &k in kids {
                    assert_eq!(parents[k as usize] as usize, p);
                }
            }
        }
    }
}

#[test]
fn closed_shapes_stay_watertight() {
    let h = subdivide(&shapes::unit_cube(), 3).unwrap();
    assert!(h.levels().iter().all(|m| m.is_closed()));
    assert_eq!(h.finest().euler_characteristic(), 2);
}

#[test]
fn unit_sphere_curvature_proxy_is_one() {
    // Analytic curvature of the unit sphere is 1 (both mean and Gaussian).
    let sphere = shapes::quad_sphere(4, 1.0);
    let feats = face_geometry(&sphere);
    let mut worst = 0.0f64;
    for f in &feats {
        worst = worst.max((f.curvature - 1.0).abs());
    }
    assert!(worst <= 0.15, "worst curvature error {worst}");
}

#[test]
fn feature_invariants_hold_on_subdivided_shapes() {
    let h = subdivide(&shapes::quad_sphere(1, 0.7), 3).unwrap();
    for f in face_geometry(h.finest()) {
        let n = f.normal;
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        assert!((len - 1.0).abs() <= 1e-6);
        let [e, ff, g] = f.fundamental_form;
        assert!(f.area >= 0.0 && e >= 0.0 && g >= 0.0 && e * g - ff * ff >= -1e-9);
    }
}

#[test]
fn two_quad_strip_adjacency_matches_hand_enumeration() {
    let text = "v 0 0 0\nv 1 0 0\nv 2 0 0\nv 0 1 0\nv 1 1 0\nv 2 1 0\nf 1 2 5 4\nf 2 3 6 5\n";
    let m = parse_obj(text, std::path::Path::new("strip.obj")).unwrap();
    let listed = |f: usize, g: u32| m.adjacency()[f].iter().filter(|&&x| x == g).count();
    assert_eq!(listed(0, 1), 1);
    assert_eq!(listed(1, 0), 1);
    assert_eq!(m.adjacency()[0].iter().filter(|&&x| x == BOUNDARY).count(), 3);
}

#[test]
fn pentagon_is_rejected() {
    let text = "v 0 0 0\nv 1 0 0\nv 2 1 0\nv 1 2 0\nv 0 1 0\nf 1 2 3 4 5\n";
    let err = parse_obj(text, std::path::Path::new("p.obj")).unwrap_err();
    assert!(err.to_string().contains("non-quad"), "{err}");
}

#[test]
fn qmh_round_trip_is_exact() {
    let h = subdivide(&shapes::quad_sphere(1, 0.5), 3).unwrap();
    let mut buf = Vec::new();
    qmh::write(&mut buf, &h).unwrap();
    let back = qmh::read(&mut buf.as_slice()).unwrap();
    assert_eq!(back, h);
}

#[test]
fn noc_range_and_invariance_under_uniform_scaling() {
    let h = subdivide(&shapes::quad_sphere(1, 0.6), 3).unwrap();
    let m = h.finest().map_vertices(|v| [1.3 * v[0], 0.8 * v[1], v[2] + 0.2]);
    let frame = noc_frame(&m.bbox());
    let c = m.bbox().center();
    for s in [0.25, 3.0] {
        let scaled = m.map_vertices(|v| [0, 1, 2].map(|k| c[k] + s * (v[k] - c[k])));
        let sframe = noc_frame(&scaled.bbox());
        for (p, q) in m.vertices().iter().zip(scaled.vertices()) {
            let a = noc_of_point(*p, &frame).0;
            let b = noc_of_point(*q, &sframe).0;
            for k in 0..3 {
                assert!((0.0..=1.0).contains(&a[k]));
                assert!((a[k] - b[k]).abs() <= 1e-9, "scale {s}: {a:?} vs {b:?}");
            }
        }
    }
}

#[test]
fn noc_is_injective_on_distinct_vertices() {
    let h = subdivide(&shapes::unit_cube(), 3).unwrap();
    let m = h.finest();
    let frame = noc_frame(&m.bbox());
    let nocs: Vec<[f64; 3]> = m.vertices().iter().map(|&v| noc_of_point(v, &frame).0).collect();
    for i in 0..nocs.len() {
        for j in i + 1..nocs.len() {
            let d: f64 = (0..3).map(|k| (nocs[i][k] - nocs[j][k]).powi(2)).sum();
            assert!(d > 1e-12, "vertices {i} and {j} share a NOC");
        }
    }
}

proptest! {
    #[test]
    fn barycentric_round_trip_through_signed_areas(face in 0usize..24, half in 0u8..2, seed in any::<u64>()) {
        let h = subdivide(&shapes::quad_sphere(1, 1.0), 2).unwrap();
        let m = h.finest();
        let mut rng = common::rng(seed);
        let bary = common::random_bary(&mut rng);
        let sp = SurfacePoint::new(face as u32, half, bary);
        let p = barycentric_point(&sp, m);
        let [a, b, c] = m.triangle(face, half).map(|v| m.vertices()[v as usize]);
        let back = common::bary_from_areas(p, a, b, c);
        for k in 0..3 {
            prop_assert!((back[k] - bary[k] as f64).abs() <= 1e-6);
        }
    }

    #[test]
    fn barycentric_point_is_affine(face in 0usize..6, half in 0u8..2, t in 0.0f64..1.0, seed in any::<u64>()) {
        let m = shapes::unit_cube();
        let mut rng = common::rng(seed);
        let (b1, b2) = (common::random_bary(&mut rng), common::random_bary(&mut rng));
        let mix: [f32; 3] = [0, 1, 2].map(|k| (t * b1[k] as f64 + (1.0 - t) * b2[k] as f64) as f32);
        let p1 = barycentric_point(&SurfacePoint::new(face as u32, half, b1), &m);
        let p2 = barycentric_point(&SurfacePoint::new(face as u32, half, b2), &m);
        let pm = barycentric_point(&SurfacePoint::new(face as u32, half, mix), &m);
        for k in 0..3 {
            prop_assert!((pm[k] - (t * p1[k] + (1.0 - t) * p2[k])).abs() <= 1e-6);
        }
    }
}

#[test]
fn vertex_and_centroid_cases() {
    let m = shapes::unit_cube();
    for f in 0..m.n_faces() {
        for half in 0..2u8 {
            let tri = m.triangle(f, half).map(|v| m.vertices()[v as usize]);
            let v0 = barycentric_point(&SurfacePoint::new(f as u32, half, [1.0, 0.0, 0.0]), &m);
            assert_eq!(v0, tri[0]);
            let third = 1.0f32 / 3.0;
            let c = barycentric_point(&SurfacePoint::new(f as u32, half, [third, third, third]), &m);
            for k in 0..3 {
                let want = (tri[0][k] + tri[1][k] + tri[2][k]) / 3.0;
                assert!((c[k] - want).abs() <= 1e-6);
            }
        }
    }
}
