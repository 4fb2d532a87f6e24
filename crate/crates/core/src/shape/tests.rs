use super::*;
use crate::fem::StokesSolver;
use crate::fields::{SwirlBodyForce, SwirlTarget, ZeroField};
use crate::mesh::{case1_mesh, target_mesh};
use crate::scalar::rel_err;
use proptest::prelude::*;

fn solve_pair(mesh: &TriMesh<f64>, alpha: f64) -> (FlowField<f64>, FlowField<f64>) {
    let solver = StokesSolver::new(mesh, alpha).unwrap();
    let y = solver.state(&SwirlBodyForce { alpha }, &ZeroField).unwrap();
    let v = solver.adjoint(&y, &SwirlTarget).unwrap();
    (y, v)
}

#[test]
fn fd_derivative_of_zero_field_is_zero() {
    let alpha = 0.1;
    let mesh = case1_mesh::<f64>(16, 4).unwrap();
    let v = DisplacementField::zero(mesh.n_nodes());
    let d = fd_shape_derivative(
        &mesh,
        alpha,
        &v,
        &SwirlBodyForce { alpha },
        &ZeroField,
        &SwirlTarget,
        1e-3,
    )
    .unwrap();
    assert_eq!(d, 0.0);
}

#[test]
fn density_vanishes_when_state_matches_target_and_adjoint_is_zero() {
    let mesh = case1_mesh::<f64>(16, 4).unwrap();
    let mut y = FlowField::zeros(&mesh);
    for (i, p) in mesh.nodes().iter().enumerate() {
        y.velocity[i] = SwirlTarget.eval(*p);
    }
    let v = FlowField::zeros(&mesh);
    let density = boundary_gradient_density(&mesh, 0.01, &y, &v, &ZeroField, &ZeroField, &SwirlTarget);
    for e in &density.entries {
        assert_eq!(e.density, 0.0);
    }
}

#[test]
fn density_reduces_to_pointwise_misfit_for_zero_adjoint() {
    // State equal to the boundary data (zero) with a nonzero target: the
    // density must be exactly half the squared misfit at each node.
    let mesh = case1_mesh::<f64>(16, 4).unwrap();
    let y = FlowField::zeros(&mesh);
    let v = FlowField::zeros(&mesh);
    let density = boundary_gradient_density(&mesh, 0.01, &y, &v, &ZeroField, &ZeroField, &SwirlTarget);
    for e in &density.entries {
        let expect = 0.5 * SwirlTarget.eval(e.position).norm_sq();
        assert_eq!(e.density, expect);
    }
}

#[test]
fn tangential_pairing_is_exactly_zero() {
    let alpha = 0.01;
    let mesh = case1_mesh::<f64>(32, 8).unwrap();
    let (y, v) = solve_pair(&mesh, alpha);
    let density = boundary_gradient_density(
        &mesh,
        alpha,
        &y,
        &v,
        &SwirlBodyForce { alpha },
        &ZeroField,
        &SwirlTarget,
    );
    let tangential = inner_tangential_field(&mesh);
    assert_eq!(density.pairing(&tangential), 0.0);
}

#[test]
fn three_way_agreement_on_initial_domain() {
    let alpha = 0.01;
    let mesh = case1_mesh::<f64>(64, 16).unwrap();
    let (y, v) = solve_pair(&mesh, alpha);
    let force = SwirlBodyForce { alpha };
    let density =
        boundary_gradient_density(&mesh, alpha, &y, &v, &force, &ZeroField, &SwirlTarget);

    let fields = validation_fields(&mesh);
    let (_, radial) = &fields[0];
    let bnd = density.pairing(radial);
    let dist =
        distributed_shape_derivative(&mesh, alpha, &y, &v, radial, &force, &ZeroField, &SwirlTarget);
    let fd = fd_shape_derivative(&mesh, alpha, radial, &force, &ZeroField, &SwirlTarget, 1e-3)
        .unwrap();

    assert!(
        rel_err(dist, fd, 1e-14) < 0.02,
        "distributed {dist} vs transport oracle {fd}"
    );
    assert!(
        rel_err(bnd, dist, 1e-14) < 0.05,
        "boundary {bnd} vs distributed {dist}"
    );
    assert!(
        rel_err(bnd, fd, 1e-14) < 0.05,
        "boundary {bnd} vs transport oracle {fd}"
    );
}

#[test]
fn transport_oracle_is_second_order_in_step() {
    let alpha = 0.1;
    let mesh = case1_mesh::<f64>(32, 8).unwrap();
    let fields = validation_fields(&mesh);
    let (_, radial) = &fields[0];
    let force = SwirlBodyForce { alpha };
    let fd = |t: f64| {
        fd_shape_derivative(&mesh, alpha, radial, &force, &ZeroField, &SwirlTarget, t).unwrap()
    };
    let (d1, d2, d3) = (fd(1e-2), fd(5e-3), fd(2.5e-3));
    let ratio = (d1 - d2) / (d2 - d3);
    assert!((3.0..=5.0).contains(&ratio), "Richardson ratio {ratio}");
}

#[test]
fn distributed_form_vanishes_for_interior_perturbations_under_refinement() {
    let alpha = 0.01;
    // Perturbation supported strictly between the boundary rings.
    let profile = |r: f64| {
        if (0.5..=0.75).contains(&r) {
            let s = (r - 0.5) * (0.75 - r);
            s * s * 4096.0
        } else {
            0.0
        }
    };
    let mut values = Vec::new();
    for (nt, nr) in [(16, 4), (32, 8), (64, 16)] {
        let mesh = case1_mesh::<f64>(nt, nr).unwrap();
        let (y, v) = solve_pair(&mesh, alpha);
        let pert = mesh.radial_field(profile);
        let d = distributed_shape_derivative(
            &mesh,
            alpha,
            &y,
            &v,
            &pert,
            &SwirlBodyForce { alpha },
            &ZeroField,
            &SwirlTarget,
        );
        values.push(d.abs());
    }
    assert!(
        values[0] > values[1] && values[1] > values[2],
        "interior perturbation derivative must decay: {values:?}"
    );
}

#[test]
fn fd_derivative_nearly_stationary_at_target_shape() {
    let alpha = 0.01;
    let force = SwirlBodyForce { alpha };
    let initial = case1_mesh::<f64>(64, 16).unwrap();
    let optimal = target_mesh::<f64>(64, 16).unwrap();
    let v_init = validation_fields(&initial).remove(0).1;
    let v_opt = validation_fields(&optimal).remove(0).1;
    let d_init = fd_shape_derivative(&initial, alpha, &v_init, &force, &ZeroField, &SwirlTarget, 1e-3)
        .unwrap();
    let d_opt = fd_shape_derivative(&optimal, alpha, &v_opt, &force, &ZeroField, &SwirlTarget, 1e-3)
        .unwrap();
    // The discrete optimum sits a mesh-dependent O(h^2) distance from the
    // analytic one, so the derivative ratio decays with resolution; at this
    // resolution it sits near 2e-2.
    assert!(
        d_opt.abs() <= 3e-2 * d_init.abs(),
        "at target {d_opt}, at initial {d_init}"
    );
}

#[test]
fn density_csv_has_expected_shape() {
    let alpha = 0.01;
    let mesh = case1_mesh::<f64>(16, 4).unwrap();
    let (y, v) = solve_pair(&mesh, alpha);
    let density = boundary_gradient_density(
        &mesh,
        alpha,
        &y,
        &v,
        &SwirlBodyForce { alpha },
        &ZeroField,
        &SwirlTarget,
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("density.csv");
    density.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "node_id,x,y,w,s,nx,ny");
    assert_eq!(lines.len(), 1 + 16);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn distributed_form_is_linear_in_the_perturbation(a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let alpha = 0.1;
        let mesh = case1_mesh::<f64>(12, 3).unwrap();
        let (y, v) = solve_pair(&mesh, alpha);
        let force = SwirlBodyForce { alpha };
        let fields = validation_fields(&mesh);
        let v1 = &fields[0].1;
        let v2 = &fields[2].1;
        let combo = DisplacementField {
            values: v1
                .values
                .iter()
                .zip(&v2.values)
                .map(|(&x, &z)| x.scale(a) + z.scale(b))
                .collect(),
        };
        let eval = |field: &DisplacementField<f64>| {
            distributed_shape_derivative(
                &mesh, alpha, &y, &v, field, &force, &ZeroField, &SwirlTarget,
            )
        };
        let lhs = eval(&combo);
        let rhs = a * eval(v1) + b * eval(v2);
        prop_assert!(
            rel_err(lhs, rhs, 1e-14) < 1e-12,
            "{} vs {}", lhs, rhs
        );
    }
}
