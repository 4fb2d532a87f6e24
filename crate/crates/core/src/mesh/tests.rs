use super::*;
use crate::mesh::generate::{case1_mesh, case2_mesh, generate_annulus_mesh, Circle};
use proptest::prelude::*;

fn single_triangle(pts: [(f64, f64); 3]) -> Result<TriMesh<f64>, MeshError> {
    let nodes = pts.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
    let triangles = vec![[0, 1, 2]];
    let edges = vec![
        BoundaryEdge {
            a: 0,
            b: 1,
            marker: EdgeMarker::OuterFixed,
        },
        BoundaryEdge {
            a: 1,
            b: 2,
            marker: EdgeMarker::OuterFixed,
        },
        BoundaryEdge {
            a: 2,
            b: 0,
            marker: EdgeMarker::OuterFixed,
        },
    ];
    let markers = vec![NodeMarker::OuterFixed; 3];
    TriMesh::new(nodes, triangles, edges, markers)
}

#[test]
fn annulus_area_close_to_analytic() {
    let mesh = generate_annulus_mesh(&Circle { radius: 0.2f64 }, 1.0, 64, 16).unwrap();
    let exact = std::f64::consts::PI * (1.0 - 0.04);
    assert!(
        (mesh.total_area() - exact).abs() < 1e-2,
        "area {} vs {}",
        mesh.total_area(),
        exact
    );
    assert_eq!(mesh.n_nodes(), 64 * 17);
    assert_eq!(mesh.n_triangles(), 2 * 64 * 16);
}

#[test]
fn case1_inner_nodes_on_circle() {
    let mesh = case1_mesh::<f64>(64, 16).unwrap();
    for &i in &mesh.inner_loop() {
        assert!((mesh.nodes()[i].norm() - 0.4).abs() < 1e-15);
    }
    mesh.validate_annular().unwrap();
}

#[test]
fn case2_inner_nodes_on_ellipse() {
    let mesh = case2_mesh::<f64>(64, 16).unwrap();
    for &i in &mesh.inner_loop() {
        let p = mesh.nodes()[i];
        // x^2/9 + y^2/4 = 1/25 with semi-axes 0.6 and 0.4
        let lhs = p.x * p.x / 9.0 + p.y * p.y / 4.0;
        assert!((lhs - 1.0 / 25.0).abs() < 1e-15);
    }
}

#[test]
fn rejects_tiny_angular_resolution() {
    let err = generate_annulus_mesh(&Circle { radius: 0.2f64 }, 1.0, 7, 4);
    assert!(matches!(err, Err(MeshError::Invalid(_))));
}

#[test]
fn rejects_inner_curve_outside_outer() {
    // Inner "curve" larger than the outer circle inverts every triangle.
    let err = generate_annulus_mesh(&Circle { radius: 2.0f64 }, 1.0, 16, 4);
    assert!(matches!(err, Err(MeshError::Invalid(_))));
}

#[test]
fn quality_equilateral_is_one() {
    let mesh = single_triangle([(0.0, 0.0), (1.0, 0.0), (0.5, 3f64.sqrt() / 2.0)]).unwrap();
    assert!((mesh.quality() - 1.0).abs() < 1e-14);
}

#[test]
fn quality_right_isoceles() {
    // Hand-computed: inradius (2 - sqrt(2))/2, circumradius sqrt(2)/2,
    // so 2 * inradius / circumradius = 2*sqrt(2) - 2.
    let mesh = single_triangle([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]).unwrap();
    let expected = 2.0 * 2f64.sqrt() - 2.0;
    assert!(
        (mesh.quality() - expected).abs() < 1e-14,
        "{} vs {}",
        mesh.quality(),
        expected
    );
}

#[test]
fn degenerate_triangle_rejected() {
    let err = single_triangle([(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
    assert!(matches!(err, Err(MeshError::Invalid(_))));
}

#[test]
fn deform_zero_step_is_identity() {
    let mesh = case1_mesh::<f64>(16, 4).unwrap();
    let d = mesh.radial_field(|_| 1.0);
    let moved = mesh.deform(&d, 0.0).unwrap();
    for (a, b) in mesh.nodes().iter().zip(moved.nodes()) {
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }
}

#[test]
fn deform_outward_radial_big_step_fails() {
    // Nodes move by -0.7 along the outward radial direction; the inner ring
    // at radius 0.4 crosses the origin and triangles invert.
    let mesh = case1_mesh::<f64>(32, 8).unwrap();
    let d = mesh.radial_field(|_| 1.0);
    // Independent check that an inverted triangle really appears.
    let moved: Vec<Vec2<f64>> = mesh
        .nodes()
        .iter()
        .zip(&d.values)
        .map(|(&p, &v)| p - v.scale(0.7))
        .collect();
    let has_negative = mesh
        .triangles()
        .iter()
        .any(|t| signed_area(moved[t[0]], moved[t[1]], moved[t[2]]) <= 0.0);
    assert!(has_negative);
    assert!(matches!(
        mesh.deform(&d, 0.7),
        Err(MeshError::StepTooLarge { .. })
    ));
}

#[test]
fn deform_radial_shifts_inner_ring() {
    let mesh = case1_mesh::<f64>(32, 8).unwrap();
    // Profile 1 at the inner radius, fading to 0 at the outer circle.
    let d = mesh.radial_field(|r| (1.0 - r) / 0.6);
    let h = 1e-3;
    let moved = mesh.deform(&d, h).unwrap();
    for t in 0..moved.n_triangles() {
        assert!(moved.triangle_area(t) > 0.0);
    }
    let shift = mesh.mean_inner_radius() - moved.mean_inner_radius();
    assert!((shift - h).abs() < 1e-12, "inner ring moved by {shift}");
    // Fixed outer ring must not move.
    for (i, m) in mesh.node_markers().iter().enumerate() {
        if *m == NodeMarker::OuterFixed {
            assert_eq!(mesh.nodes()[i], moved.nodes()[i]);
        }
    }
}

#[test]
fn perimeter_change_is_first_order_in_step() {
    let mesh = case1_mesh::<f64>(32, 8).unwrap();
    let d = mesh.radial_field(|r| (1.0 - r) / 0.6);
    let p0 = mesh.boundary_length(EdgeMarker::InnerFree);
    let change = |h: f64| {
        let m = mesh.deform(&d, h).unwrap();
        (m.boundary_length(EdgeMarker::InnerFree) - p0).abs()
    };
    let ratio = change(1e-2) / change(1e-3);
    assert!((9.0..=11.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn inner_normals_point_out_of_fluid() {
    let mesh = case1_mesh::<f64>(32, 8).unwrap();
    for g in mesh.inner_node_normals() {
        let p = mesh.nodes()[g.node];
        // Outward from the fluid at the inner loop means toward the origin.
        assert!(g.normal.dot(p) < 0.0);
        assert!((g.normal.norm() - 1.0).abs() < 1e-14);
        assert!(g.measure > 0.0);
    }
    // Lumped measures reproduce the polygonal perimeter.
    let total: f64 = mesh.inner_node_normals().iter().map(|g| g.measure).sum();
    assert!((total - mesh.boundary_length(EdgeMarker::InnerFree)).abs() < 1e-12);
}

#[test]
fn outer_normals_point_away_from_origin() {
    let mesh = case1_mesh::<f64>(32, 8).unwrap();
    for e in mesh
        .boundary_edges()
        .iter()
        .filter(|e| e.marker == EdgeMarker::OuterFixed)
    {
        let mid = (mesh.nodes()[e.a] + mesh.nodes()[e.b]).scale(0.5);
        assert!(mesh.edge_outward_normal(e).dot(mid) > 0.0);
    }
}

#[test]
fn save_load_round_trip_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("case1.msh");
    let mesh = case1_mesh::<f64>(24, 6).unwrap();
    save_mesh(&mesh, &path).unwrap();
    let back: TriMesh<f64> = load_mesh(&path).unwrap();
    assert_eq!(mesh.triangles(), back.triangles());
    assert_eq!(mesh.boundary_edges(), back.boundary_edges());
    assert_eq!(mesh.node_markers(), back.node_markers());
    for (a, b) in mesh.nodes().iter().zip(back.nodes()) {
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }
}

#[test]
fn load_rejects_missing_elements_section() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.msh");
    std::fs::write(&path, "$Nodes\n1\n1 0.0 0.0 0\n$End\n").unwrap();
    match load_mesh::<f64>(&path) {
        Err(MeshError::Parse { line, msg }) => {
            assert_eq!(line, 4, "{msg}");
            assert!(msg.contains("$Elements"), "{msg}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn load_rejects_clockwise_triangle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cw.msh");
    // Valid format, but the triangle is listed clockwise.
    let text = "$Nodes\n3\n1 0.0 0.0 1\n2 1.0 0.0 1\n3 0.0 1.0 1\n\
                $Elements\n1\n1 1 3 2\n\
                $BoundaryEdges\n3\n1 1 3 1\n2 3 2 1\n3 2 1 1\n$End\n";
    std::fs::write(&path, text).unwrap();
    match load_mesh::<f64>(&path) {
        Err(MeshError::Invalid(msg)) => assert!(msg.contains("area"), "{msg}"),
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn inconsistent_node_marker_rejected() {
    let nodes = vec![
        Vec2::new(0.0, 0.0),
        Vec2::new(1.0, 0.0),
        Vec2::new(0.0, 1.0),
    ];
    let triangles = vec![[0, 1, 2]];
    let edges = vec![
        BoundaryEdge {
            a: 0,
            b: 1,
            marker: EdgeMarker::OuterFixed,
        },
        BoundaryEdge {
            a: 1,
            b: 2,
            marker: EdgeMarker::OuterFixed,
        },
        BoundaryEdge {
            a: 2,
            b: 0,
            marker: EdgeMarker::OuterFixed,
        },
    ];
    let markers = vec![
        NodeMarker::OuterFixed,
        NodeMarker::Interior, // wrong: lies on boundary edges
        NodeMarker::OuterFixed,
    ];
    assert!(matches!(
        TriMesh::new(nodes, triangles, edges, markers),
        Err(MeshError::Invalid(_))
    ));
}

#[test]
fn annulus_has_two_loops() {
    let mesh = case1_mesh::<f64>(16, 4).unwrap();
    assert_eq!(mesh.loops_with_marker(EdgeMarker::InnerFree).len(), 1);
    assert_eq!(mesh.loops_with_marker(EdgeMarker::OuterFixed).len(), 1);
    assert_eq!(mesh.inner_loop().len(), 16);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn deform_is_linear_in_step(h1 in 1e-4f64..5e-2, h2 in 1e-4f64..5e-2) {
        let mesh = case1_mesh::<f64>(12, 3).unwrap();
        let d = mesh.radial_field(|r| (1.0 - r) * (r - 0.1));
        let once = mesh.deform(&d, h1 + h2).unwrap();
        let twice = mesh.deform(&d, h1).unwrap().deform(&d, h2).unwrap();
        for (a, b) in once.nodes().iter().zip(twice.nodes()) {
            prop_assert!((a.x - b.x).abs() <= 1e-14 * (1.0 + a.x.abs()));
            prop_assert!((a.y - b.y).abs() <= 1e-14 * (1.0 + a.y.abs()));
        }
    }

    #[test]
    fn generated_meshes_have_positive_areas(n_theta in 8usize..24, n_r in 2usize..6) {
        let mesh = case1_mesh::<f64>(n_theta, n_r).unwrap();
        for t in 0..mesh.n_triangles() {
            prop_assert!(mesh.triangle_area(t) > 0.0);
        }
        prop_assert!(mesh.quality() > 0.0 && mesh.quality() <= 1.0);
    }
}
