//! Dense generalized symmetric eigensolver for (A, M) and the eigenvalue
//! bounds and comparisons attached to the form.

use crate::assembly::{assemble_alt, FormMatrices};
use crate::geometry::{build_grid, Domain};
use crate::kernel::{KernelConstants, QuadratureSpec};
use crate::qualcheck::{AuditEntry, Verdict};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda: f64,
    /// M-normalized eigenvector (one coefficient per cell).
    pub phi: DVector<f64>,
}

/// k smallest generalized eigenpairs of A phi = lambda M phi, via the dense
/// symmetric solve on M^{-1/2} A M^{-1/2} (M is diagonal positive).
pub fn eigs(f: &FormMatrices, k: usize) -> Vec<EigenPair> {
    let n = f.a.nrows();
    assert!(k <= n, "requested more eigenpairs than cells");
    let d_inv_sqrt: DVector<f64> = f.m_diag.map(|m| 1.0 / m.sqrt());
    let mut b = f.a.clone();
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] *= d_inv_sqrt[i] * d_inv_sqrt[j];
        }
    }
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    order
        .into_iter()
        .take(k)
        .map(|i| {
            let mut phi = DVector::zeros(n);
            for r in 0..n {
                phi[r] = eig.eigenvectors[(r, i)] * d_inv_sqrt[r];
            }
            EigenPair { lambda: eig.eigenvalues[i], phi }
        })
        .collect()
}

/// lambda_1 alone (smallest eigenvalue of the pair).
pub fn lambda1(f: &FormMatrices) -> f64 {
    eigs(f, 1)[0].lambda
}

/// Paper bound: lambda_1(Omega) >= 2 log(1/r) - |rho_N| for the ball B_r of
/// the same volume.
pub fn lambda1_lower_bound(volume: f64, dim: usize) -> f64 {
    assert!(volume > 0.0);
    let k = crate::kernel::constants(dim).expect("dimension 1 or 2");
    let r = match dim {
        1 => volume / 2.0,
        2 => (volume / std::f64::consts::PI).sqrt(),
        _ => unreachable!(),
    };
    2.0 * (1.0 / r).ln() - k.rho.abs()
}

/// Volume of the domain by high-resolution cell counting on a refined grid.
pub fn domain_volume<const N: usize>(domain: &Domain<N>, h: f64) -> f64 {
    match build_grid(domain, h, &[]) {
        Ok(g) => g.volume_estimate(),
        Err(_) => 0.0,
    }
}

/// Faber-Krahn comparison: lambda_1(Omega) vs lambda_1 of the equal-volume
/// ball on comparable grids, with an empirical refinement-based tolerance.
pub fn faber_krahn_check<const N: usize>(
    domain: &Domain<N>,
    h: f64,
    k: &KernelConstants,
    q: &QuadratureSpec,
) -> AuditEntry {
    let volume = domain_volume(domain, h / 8.0);
    let r = match N {
        1 => volume / 2.0,
        2 => (volume / std::f64::consts::PI).sqrt(),
        _ => unreachable!(),
    };
    let ball = Domain::<N>::ball([0.0; N], r);
    let lam = |dom: &Domain<N>, step: f64| -> f64 {
        let g = build_grid(dom, step, &[]).expect("nonempty grid");
        lambda1(&assemble_alt(&g, k, q))
    };
    let l_omega = lam(domain, h);
    let l_omega_fine = lam(domain, h / 2.0);
    let l_ball = lam(&ball, h);
    let l_ball_fine = lam(&ball, h / 2.0);
    let refinement_delta = (l_omega - l_omega_fine).abs() + (l_ball - l_ball_fine).abs();
    let tol_fk = 0.05 * l_ball.abs() + 2.0 * refinement_delta;
    let mut entry = AuditEntry::new("faber_krahn");
    entry.metric("lambda1_omega", l_omega);
    entry.metric("lambda1_ball", l_ball);
    entry.metric("volume", volume);
    entry.metric("refinement_delta", refinement_delta);
    entry.threshold("tol_fk", tol_fk);
    entry.verdict = if l_omega >= l_ball - tol_fk { Verdict::Pass } else { Verdict::Fail };
    entry
}

/// Scans 1D balls B_R at fixed cells-per-unit resolution for the first radius
/// with a negative discrete lambda_1 (witness that the maximum principle can
/// fail on large sets). Returns (R, lambda_1).
pub fn negative_lambda1_witness(
    cells_per_unit: usize,
    r_limit: f64,
    k: &KernelConstants,
    q: &QuadratureSpec,
) -> Option<(f64, f64)> {
    assert_eq!(k.dim, 1);
    let h = 1.0 / cells_per_unit as f64;
    let mut radius = 1.0;
    while radius <= r_limit {
        let d = Domain::<1>::rect([-radius], [radius]);
        if let Ok(g) = build_grid(&d, h, &[]) {
            let lam = lambda1(&assemble_alt(&g, k, q));
            if lam < 0.0 {
                return Some((radius, lam));
            }
        }
        radius += 1.0;
    }
    None
}

/// Residual |A phi - lambda M phi|_2 relative to |A|_inf-ish scale; used by
/// eigenpair validity checks.
pub fn eigen_residual(f: &FormMatrices, pair: &EigenPair) -> f64 {
    let lhs = &f.a * &pair.phi;
    let rhs = pair.lambda * DVector::from_fn(pair.phi.len(), |i, _| f.m_diag[i] * pair.phi[i]);
    (lhs - rhs).norm()
}

pub fn matrix_two_norm_estimate(a: &DMatrix<f64>) -> f64 {
    // power iteration, fixed iteration count for determinism
    let n = a.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut norm = 0.0;
    for _ in 0..50 {
        let w = a * &v;
        norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ReflectionFrame;
    use crate::kernel::constants;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_case() {
        let d = Domain::<1>::rect([-0.1], [0.1]);
        let g = build_grid(&d, 0.2, &[ReflectionFrame::new([1.0], -0.1)]).unwrap();
        let k = constants(1).unwrap();
        let f = assemble_alt(&g, &k, &QuadratureSpec::default());
        let pairs = eigs(&f, 1);
        assert_relative_eq!(pairs[0].lambda, f.a[(0, 0)] / 0.2, max_relative = 1e-12);
        // 0.8128889 / 0.2
        assert_relative_eq!(pairs[0].lambda, 4.0644444950651355, max_relative = 1e-6);
    }

    #[test]
    fn rayleigh_variational_characterization() {
        use rand::{rngs::StdRng, Rng, SeedableRng};
        let d = Domain::<1>::rect([-0.2], [0.2]);
        let g = build_grid(&d, 0.025, &[]).unwrap();
        let k = constants(1).unwrap();
        let f = assemble_alt(&g, &k, &QuadratureSpec::default());
        let lam1 = lambda1(&f);
        let n = g.len();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..10_000 {
            let u = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0f64));
            let num = (&u.transpose() * &f.a * &u)[(0, 0)];
            let den: f64 = (0..n).map(|i| f.m_diag[i] * u[i] * u[i]).sum();
            assert!(num / den >= lam1 - 1e-9);
        }
    }

    #[test]
    fn eigenpair_orthonormal_and_residual() {
        let d = Domain::<2>::ball([0.0, 0.0], 0.2);
        let g = build_grid(&d, 0.025, &[]).unwrap();
        let k = constants(2).unwrap();
        let f = assemble_alt(&g, &k, &QuadratureSpec::default());
        let pairs = eigs(&f, 4);
        let a_norm = matrix_two_norm_estimate(&f.a);
        for (i, p) in pairs.iter().enumerate() {
            let m_norm: f64 = (0..p.phi.len()).map(|r| f.m_diag[r] * p.phi[r] * p.phi[r]).sum();
            assert_relative_eq!(m_norm, 1.0, epsilon = 1e-10);
            assert!(eigen_residual(&f, p) <= 1e-8 * a_norm);
            for pj in pairs.iter().skip(i + 1) {
                let dot: f64 =
                    (0..p.phi.len()).map(|r| f.m_diag[r] * p.phi[r] * pj.phi[r]).sum();
                assert!(dot.abs() <= 1e-8);
            }
        }
        // ascending
        for w in pairs.windows(2) {
            assert!(w[0].lambda <= w[1].lambda);
        }
    }

    #[test]
    fn lower_bound_golds() {
        assert_relative_eq!(
            lambda1_lower_bound(std::f64::consts::PI * 0.04, 2),
            2.9870127935513757,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            lambda1_lower_bound(0.4, 1),
            2.0644444950651346,
            epsilon = 1e-12
        );
        // unit-ball volume gives -|rho|
        let k2 = constants(2).unwrap();
        assert_relative_eq!(
            lambda1_lower_bound(std::f64::consts::PI, 2),
            -k2.rho.abs(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn ball_bound_one_sided_1d() {
        let k = constants(1).unwrap();
        let q = QuadratureSpec::default();
        for &r in &[0.05f64, 0.1, 0.2, 0.5] {
            let d = Domain::<1>::rect([-r], [r]);
            let g = build_grid(&d, r / 16.0, &[]).unwrap();
            let lam = lambda1(&assemble_alt(&g, &k, &q));
            let bound = 2.0 * (1.0 / r).ln() - k.rho.abs();
            assert!(lam >= bound - 1e-9, "r={r}: {lam} < {bound}");
        }
    }

    #[test]
    fn witness_negative_lambda1() {
        let k = constants(1).unwrap();
        let q = QuadratureSpec::default();
        let (r, lam) = negative_lambda1_witness(4, 64.0, &k, &q).unwrap();
        assert!(r <= 64.0);
        assert!(lam < 0.0);
    }

    #[test]
    fn domain_monotonicity_1d() {
        let k = constants(1).unwrap();
        let q = QuadratureSpec::default();
        let h = 0.0125;
        for (r1, r2) in [(0.1f64, 0.2f64), (0.2, 0.4), (0.15, 0.3)] {
            let g1 = build_grid(&Domain::<1>::rect([-r1], [r1]), h, &[]).unwrap();
            let g2 = build_grid(&Domain::<1>::rect([-r2], [r2]), h, &[]).unwrap();
            let l1 = lambda1(&assemble_alt(&g1, &k, &q));
            let l2 = lambda1(&assemble_alt(&g2, &k, &q));
            assert!(l1 >= l2 - 1e-9, "({r1} in {r2}): {l1} < {l2}");
        }
    }
}
