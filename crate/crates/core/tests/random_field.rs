use isdm_core::mesh::{build_mesh, Point2D, Polygon, TriangulatedDomain};
use isdm_core::random_field::{
    build_dense_covariance, build_sparse_precision, field_log_density, log_tau_for,
    marginal_variance, matern_correlation, sample_field, FieldModel, FieldPrior, FieldRealization,
    MaternParams, PriorRepresentation,
};

/// K_ν(x) = ∫₀^∞ exp(-x cosh t) cosh(ν t) dt, by the trapezoid rule.
/// The integrand is analytic and doubly-exponentially decaying, so the rule
/// converges geometrically in the step size.
fn bessel_k_oracle(nu: f64, x: f64) -> f64 {
    let h = 1.0 / 256.0;
    let mut sum = 0.5 * (-x).exp();
    let mut k = 1;
    loop {
        let t = k as f64 * h;
        let term = (-x * t.cosh()).exp() * (nu * t).cosh();
        sum += term;
        if term < 1e-300 || (term < 1e-18 * sum && t > 1.0) {
            break;
        }
        k += 1;
    }
    sum * h
}

fn matern_oracle(kappa: f64, d: f64) -> f64 {
    let x = kappa * d;
    x * bessel_k_oracle(1.0, x)
}

#[test]
fn correlation_matches_integral_oracle() {
    let p = MaternParams::new(0.0, 0.0);
    // κ = 1, d = 1 gives K1(1).
    let at_one = matern_correlation(&p, 1.0).unwrap();
    assert!((at_one - 0.601_907_230_197_234_6).abs() < 1e-12);
    assert!((at_one - matern_oracle(1.0, 1.0)).abs() < 1e-12);

    for i in 0..20 {
        // Log-spaced κd in [0.01, 10].
        let x = 0.01 * 1000f64.powf(i as f64 / 19.0);
        for kappa in [0.5, 1.0, 7.0] {
            let p = MaternParams::new(0.3, f64::ln(kappa));
            let got = matern_correlation(&p, x / kappa).unwrap();
            let want = matern_oracle(kappa, x / kappa);
            assert!((got - want).abs() < 1e-10, "κd = {x}: {got} vs {want}");
        }
    }
}

#[test]
fn correlation_is_monotone_and_bounded() {
    let p = MaternParams::new(0.0, 0.5);
    let mut prev = 1.0;
    for k in 1..400 {
        let c = matern_correlation(&p, k as f64 * 0.02).unwrap();
        assert!(c > 0.0 && c < prev, "not strictly decreasing at step {k}");
        prev = c;
    }
}

#[test]
fn log_tau_round_trip() {
    for &(s2, kappa) in &[(1.0, 1.0), (0.64, 9.4), (3.7, 0.02), (1e-3, 150.0)] {
        let p = MaternParams::new(log_tau_for(s2, kappa), f64::ln(kappa));
        assert!((marginal_variance(&p) - s2).abs() < 1e-12 * s2);
    }
}

fn three_vertex_mesh() -> TriangulatedDomain {
    let tri = Polygon::new(vec![
        Point2D::new(0.0, 0.0),
        Point2D::new(1.0, 0.0),
        Point2D::new(0.5, 0.75f64.sqrt()),
    ]);
    TriangulatedDomain::from_parts(tri.ring.clone(), vec![[0, 1, 2]], tri, 1.0).unwrap()
}

#[test]
fn dense_off_diagonals_on_unit_triangle() {
    let mesh = three_vertex_mesh();
    let p = MaternParams::from_variance(1.3, 1.0);
    let FieldPrior::DenseCovariance { matrix, .. } = build_dense_covariance(&mesh, &p).unwrap()
    else {
        unreachable!()
    };
    let want = p.marginal_variance() * bessel_k_oracle(1.0, 1.0);
    for (i, j) in [(0, 1), (1, 2), (0, 2)] {
        assert!((matrix[(i, j)] - want).abs() < 1e-12);
        assert!((matrix[(i, j)] - 1.3 * 0.601_907_230_197_234_6).abs() < 1e-9);
    }
}

#[test]
fn dense_rejects_coincident_vertices() {
    let tri = Polygon::new(vec![
        Point2D::new(0.0, 0.0),
        Point2D::new(1.0, 0.0),
        Point2D::new(0.0, 1.0),
    ]);
    let verts = vec![
        Point2D::new(0.0, 0.0),
        Point2D::new(1.0, 0.0),
        Point2D::new(0.0, 1.0),
        Point2D::new(0.0, 0.0),
    ];
    // Vertex 3 duplicates vertex 0 and is used by a second (degenerate-free) triangle pair.
    let mesh = TriangulatedDomain::from_parts(verts, vec![[0, 1, 2], [3, 1, 2]], tri, 1.0).unwrap();
    assert!(build_dense_covariance(&mesh, &MaternParams::new(0.0, 0.0)).is_err());
}

#[test]
fn precision_is_symmetric() {
    let mesh = build_mesh(&Polygon::unit_square(), 0.1).unwrap();
    let p = MaternParams::from_sd_and_range(0.8, 0.3);
    let FieldPrior::SparsePrecision { matrix, .. } = build_sparse_precision(&mesh, &p).unwrap()
    else {
        unreachable!()
    };
    let dense = nalgebra::DMatrix::from(&matrix);
    let scale = dense.amax();
    assert!((&dense - dense.transpose()).amax() < 1e-10 * scale.max(1.0));
}

fn interior_nodes(mesh: &TriangulatedDomain, margin: f64) -> Vec<usize> {
    (0..mesh.num_vertices())
        .filter(|&i| mesh.boundary().boundary_distance(mesh.vertices()[i]) > margin)
        .collect()
}

#[test]
fn sparse_samples_match_matern_moments() {
    let range = 0.3;
    let mesh = build_mesh(&Polygon::unit_square(), 0.03).unwrap();
    let p = MaternParams::from_sd_and_range(1.0, range);
    let prior = build_sparse_precision(&mesh, &p).unwrap();
    let inner = interior_nodes(&mesh, range);
    assert!(inner.len() > 20);
    let draws = 2000;
    let samples: Vec<FieldRealization> = (0..draws)
        .map(|s| sample_field(&prior, 1000 + s).unwrap())
        .collect();

    let var_at = |i: usize| {
        samples
            .iter()
            .map(|r| r.node_values[i].powi(2))
            .sum::<f64>()
            / draws as f64
    };
    let mean_var = inner.iter().map(|&i| var_at(i)).sum::<f64>() / inner.len() as f64;
    let target = p.marginal_variance();
    assert!(
        (mean_var - target).abs() < 0.15 * target,
        "empirical {mean_var} vs {target}"
    );

    // Pairs of interior nodes with κd in [0.5, 3].
    let v = mesh.vertices();
    let mut checked = 0;
    for (a, &i) in inner.iter().enumerate().step_by(7) {
        for &j in inner[a + 1..].iter().step_by(11) {
            let d = v[i].dist(v[j]);
            let kd = p.kappa() * d;
            if !(0.5..=3.0).contains(&kd) {
                continue;
            }
            let cov = samples
                .iter()
                .map(|r| r.node_values[i] * r.node_values[j])
                .sum::<f64>()
                / draws as f64;
            let corr = cov / (var_at(i) * var_at(j)).sqrt();
            let want = matern_correlation(&p, d).unwrap();
            assert!(
                (corr - want).abs() < 0.1,
                "κd = {kd:.2}: {corr:.3} vs {want:.3}"
            );
            checked += 1;
        }
    }
    assert!(checked > 10);
}

#[test]
fn dense_samples_match_moments() {
    let mesh = build_mesh(&Polygon::unit_square(), 0.25).unwrap();
    let p = MaternParams::from_sd_and_range(0.8, 0.5);
    let prior = build_dense_covariance(&mesh, &p).unwrap();
    let draws = 5000;
    let samples: Vec<FieldRealization> = (0..draws)
        .map(|s| sample_field(&prior, s).unwrap())
        .collect();
    let s2 = p.marginal_variance();
    for i in 0..mesh.num_vertices() {
        let mean = samples.iter().map(|r| r.node_values[i]).sum::<f64>() / draws as f64;
        let var = samples
            .iter()
            .map(|r| (r.node_values[i] - mean).powi(2))
            .sum::<f64>()
            / (draws - 1) as f64;
        assert!(
            mean.abs() < 4.0 * s2.sqrt() / (draws as f64).sqrt(),
            "node {i}: mean {mean}"
        );
        assert!((var - s2).abs() < 0.1 * s2, "node {i}: var {var} vs {s2}");
    }
}

fn bump(mesh: &TriangulatedDomain, amp: f64) -> FieldRealization {
    FieldRealization {
        node_values: mesh
            .vertices()
            .iter()
            .map(|p| {
                amp * (-((p.x - 0.5).powi(2) + (p.y - 0.5).powi(2)) / (2.0 * 0.2f64.powi(2))).exp()
            })
            .collect(),
    }
}

#[test]
fn dense_and_sparse_agree_on_density_differences() {
    let mesh = build_mesh(&Polygon::unit_square(), 0.05).unwrap();
    let p = MaternParams::from_sd_and_range(1.0, 0.6);
    let dense = build_dense_covariance(&mesh, &p).unwrap();
    let sparse = build_sparse_precision(&mesh, &p).unwrap();
    let (u1, u2) = (bump(&mesh, 1.0), bump(&mesh, 0.5));
    let dd = field_log_density(&u1, &dense).unwrap() - field_log_density(&u2, &dense).unwrap();
    let ds = field_log_density(&u1, &sparse).unwrap() - field_log_density(&u2, &sparse).unwrap();
    assert!(
        (dd - ds).abs() < 0.1 * dd.abs(),
        "dense {dd} vs sparse {ds}"
    );
}

#[test]
fn evaluator_matches_cholesky_density() {
    let mesh = build_mesh(&Polygon::unit_square(), 0.12).unwrap();
    let p = MaternParams::from_sd_and_range(0.9, 0.4);
    let u = sample_field(&build_sparse_precision(&mesh, &p).unwrap(), 3).unwrap();
    for (repr, prior) in [
        (
            PriorRepresentation::SparsePrecision,
            build_sparse_precision(&mesh, &p).unwrap(),
        ),
        (
            PriorRepresentation::DenseCovariance,
            build_dense_covariance(&mesh, &p).unwrap(),
        ),
    ] {
        let model = FieldModel::new(&mesh, repr).unwrap();
        let terms = model.evaluate(&p, &u.node_values).unwrap();
        let direct = field_log_density(&u, &prior).unwrap();
        assert!(
            (terms.log_density - direct).abs() < 1e-8 * direct.abs(),
            "{repr:?}: {} vs {direct}",
            terms.log_density
        );
    }
}

#[test]
fn evaluator_gradients_match_finite_differences() {
    let mesh = build_mesh(&Polygon::unit_square(), 0.2).unwrap();
    let p = MaternParams::from_sd_and_range(0.9, 0.5);
    let u: Vec<f64> = (0..mesh.num_vertices())
        .map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.1)
        .collect();
    for repr in [
        PriorRepresentation::SparsePrecision,
        PriorRepresentation::DenseCovariance,
    ] {
        let model = FieldModel::new(&mesh, repr).unwrap();
        let t = model.evaluate(&p, &u).unwrap();
        let f = |q: MaternParams, u: &[f64]| model.evaluate(&q, u).unwrap().log_density;
        let h = 1e-5;
        let fd_tau = (f(MaternParams::new(p.log_tau + h, p.log_kappa), &u)
            - f(MaternParams::new(p.log_tau - h, p.log_kappa), &u))
            / (2.0 * h);
        let fd_kappa = (f(MaternParams::new(p.log_tau, p.log_kappa + h), &u)
            - f(MaternParams::new(p.log_tau, p.log_kappa - h), &u))
            / (2.0 * h);
        assert!(
            (fd_tau - t.d_log_tau).abs() < 1e-6 * (1.0 + fd_tau.abs()),
            "{repr:?} τ: {fd_tau} vs {}",
            t.d_log_tau
        );
        assert!(
            (fd_kappa - t.d_log_kappa).abs() < 1e-6 * (1.0 + fd_kappa.abs()),
            "{repr:?} κ: {fd_kappa} vs {}",
            t.d_log_kappa
        );
        for i in [0, 5, mesh.num_vertices() - 1] {
            let mut up = u.clone();
            let mut dn = u.clone();
            up[i] += h;
            dn[i] -= h;
            let fd = (f(p, &up) - f(p, &dn)) / (2.0 * h);
            assert!(
                (fd - t.grad_u[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "{repr:?} u[{i}]: {fd} vs {}",
                t.grad_u[i]
            );
        }
    }
}
