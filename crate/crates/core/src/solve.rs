//! Linear and semilinear Dirichlet solvers: Poisson, log-torsion, damped
//! Newton for L u = f(u), and discrete super/subsolution residuals.

use crate::assembly::FormMatrices;
use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("form matrix is not positive definite (lambda_1 <= 0 at this resolution)")]
    NotCoercive,
    #[error("Newton iteration did not converge within {0} steps")]
    NoConvergence(usize),
    #[error("Newton system is singular and Levenberg shifts failed")]
    SingularJacobian,
}

/// Right-hand sides and solutions are cellwise values (piecewise-constant).
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub u: DVector<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub positivity_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Nonlinearity {
    Const { c: f64 },
    Linear { a: f64, b: f64 },
    /// f(t) = scale * t^p for t >= 0 (clamped below at 0).
    Power { p: f64, scale: f64 },
    Poly { coefficients: Vec<f64> },
}

impl Nonlinearity {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Nonlinearity::Const { c } => *c,
            Nonlinearity::Linear { a, b } => a * t + b,
            Nonlinearity::Power { p, scale } => scale * t.max(0.0).powf(*p),
            Nonlinearity::Poly { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, &c| acc * t + c)
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Nonlinearity::Const { .. } => 0.0,
            Nonlinearity::Linear { a, .. } => *a,
            Nonlinearity::Power { p, scale } => {
                let tm = t.max(0.0);
                if tm == 0.0 && *p < 1.0 {
                    0.0
                } else {
                    scale * p * tm.powf(p - 1.0)
                }
            }
            Nonlinearity::Poly { coefficients } => {
                let mut acc = 0.0;
                for (k, &c) in coefficients.iter().enumerate().skip(1).rev() {
                    acc = acc * t + c * k as f64;
                }
                acc
            }
        }
    }

    /// Power nonlinearities with p < 1 are not Lipschitz at 0; audits refuse
    /// to claim symmetry conclusions for them.
    pub fn lipschitz_on_nonnegative_range(&self) -> bool {
        match self {
            Nonlinearity::Power { p, .. } => *p >= 1.0,
            _ => true,
        }
    }
}

/// Solves A u = M g by Cholesky factorization. Failure of the factorization
/// signals lambda_1 <= 0 at this resolution.
pub fn solve_poisson(f: &FormMatrices, g: &DVector<f64>) -> Result<SolveOutcome, SolveError> {
    let n = f.a.nrows();
    assert_eq!(g.len(), n);
    let chol = Cholesky::new(f.a.clone()).ok_or(SolveError::NotCoercive)?;
    let rhs = DVector::from_fn(n, |i, _| f.m_diag[i] * g[i]);
    let u = chol.solve(&rhs);
    let residual_norm = (&f.a * &u - &rhs).norm();
    let positivity_min = u.min();
    Ok(SolveOutcome { u, iterations: 1, residual_norm, positivity_min })
}

/// Log-torsion: L u = 1 in Omega, u = 0 outside.
pub fn solve_torsion(f: &FormMatrices) -> Result<SolveOutcome, SolveError> {
    let ones = DVector::from_element(f.a.nrows(), 1.0);
    solve_poisson(f, &ones)
}

/// Damped Newton for A u = M f(u): Jacobian A - M diag(f'(u)), Armijo
/// backtracking on the residual norm with factor 1/2 (at most 40 halvings),
/// Levenberg shifts 1e-6..1e-2 |A| on factorization failure.
pub fn solve_semilinear(
    f: &FormMatrices,
    nonlin: &Nonlinearity,
    u0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SolveOutcome, SolveError> {
    let n = f.a.nrows();
    assert_eq!(u0.len(), n);
    let m = &f.m_diag;
    let residual = |u: &DVector<f64>| -> DVector<f64> {
        let mut r = &f.a * u;
        for i in 0..n {
            r[i] -= m[i] * nonlin.eval(u[i]);
        }
        r
    };
    let rhs_scale = |u: &DVector<f64>| -> f64 {
        (0..n).map(|i| (m[i] * nonlin.eval(u[i])).powi(2)).sum::<f64>().sqrt()
    };
    let a_scale = crate::spectral::matrix_two_norm_estimate(&f.a);
    let mut u = u0.clone();
    let mut r = residual(&u);
    for it in 0..max_iter {
        let rnorm = r.norm();
        if rnorm <= tol * (1.0 + rhs_scale(&u)) {
            return Ok(SolveOutcome {
                positivity_min: u.min(),
                residual_norm: rnorm,
                iterations: it,
                u,
            });
        }
        let mut jac = f.a.clone();
        for i in 0..n {
            jac[(i, i)] -= m[i] * nonlin.derivative(u[i]);
        }
        let delta = solve_with_levenberg(&jac, &(-&r), a_scale)?;
        // Armijo backtracking on |R|
        let mut step = 1.0f64;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &u + step * &delta;
            let rt = residual(&trial);
            if rt.norm() < rnorm {
                u = trial;
                r = rt;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(SolveError::NoConvergence(it + 1));
        }
    }
    let rnorm = r.norm();
    if rnorm <= tol * (1.0 + rhs_scale(&u)) {
        Ok(SolveOutcome {
            positivity_min: u.min(),
            residual_norm: rnorm,
            iterations: max_iter,
            u,
        })
    } else {
        Err(SolveError::NoConvergence(max_iter))
    }
}

fn solve_with_levenberg(
    jac: &DMatrix<f64>,
    rhs: &DVector<f64>,
    a_scale: f64,
) -> Result<DVector<f64>, SolveError> {
    if let Some(lu) = jac.clone().lu().try_inverse() {
        return Ok(&lu * rhs);
    }
    for k in (2..=6).rev() {
        let shift = 10f64.powi(-(k as i32)) * a_scale;
        let shifted = jac + DMatrix::identity(jac.nrows(), jac.ncols()) * shift;
        if let Some(inv) = shifted.lu().try_inverse() {
            return Ok(&inv * rhs);
        }
    }
    Err(SolveError::SingularJacobian)
}

/// Worst discrete supersolution violation of L u >= V u + g: the minimum over
/// cell basis functions of (A u - M (V u + g))_i. Nonnegative (>= -tol)
/// certifies a discrete supersolution; the nonnegative cone is generated by
/// the cell indicators.
pub fn check_supersolution(
    f: &FormMatrices,
    u: &DVector<f64>,
    v: &DVector<f64>,
    g: &DVector<f64>,
) -> f64 {
    let n = f.a.nrows();
    assert_eq!(u.len(), n);
    assert_eq!(v.len(), n);
    assert_eq!(g.len(), n);
    let au = &f.a * u;
    (0..n)
        .map(|i| au[i] - f.m_diag[i] * (v[i] * u[i] + g[i]))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_alt;
    use crate::geometry::{build_grid, Domain, Primitive, ReflectionFrame};
    use crate::kernel::{constants, QuadratureSpec};
    use approx::assert_relative_eq;

    fn small_interval_form() -> FormMatrices {
        let d = Domain::<1>::rect([-0.1], [0.1]);
        let g = build_grid(&d, 0.2, &[ReflectionFrame::new([1.0], -0.1)]).unwrap();
        let k = constants(1).unwrap();
        assemble_alt(&g, &k, &QuadratureSpec::default())
    }

    #[test]
    fn poisson_zero_rhs() {
        let f = small_interval_form();
        let out = solve_poisson(&f, &DVector::zeros(1)).unwrap();
        assert!(out.u[0].abs() < 1e-15);
    }

    #[test]
    fn poisson_single_cell_gold() {
        let f = small_interval_form();
        let out = solve_poisson(&f, &DVector::from_element(1, 1.0)).unwrap();
        // u = M g / A11 = 0.2 / 0.8128889
        assert_relative_eq!(out.u[0], 0.2 / 0.8128888990130271, max_relative = 1e-6);
        assert!(out.residual_norm < 1e-14);
    }

    #[test]
    fn poisson_not_coercive_on_large_interval() {
        let k = constants(1).unwrap();
        let q = QuadratureSpec::default();
        let (r, _) = crate::spectral::negative_lambda1_witness(4, 64.0, &k, &q).unwrap();
        let d = Domain::<1>::rect([-r], [r]);
        let g = build_grid(&d, 0.25, &[]).unwrap();
        let f = assemble_alt(&g, &k, &q);
        assert_eq!(
            solve_poisson(&f, &DVector::from_element(g.len(), 1.0)).unwrap_err(),
            SolveError::NotCoercive
        );
    }

    #[test]
    fn poisson_linearity() {
        let d = Domain::<1>::rect([-0.2], [0.2]);
        let g = build_grid(&d, 0.025, &[]).unwrap();
        let k = constants(1).unwrap();
        let f = assemble_alt(&g, &k, &QuadratureSpec::default());
        let n = g.len();
        let g1 = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
        let g2 = DVector::from_fn(n, |i, _| (i as f64 * 0.11).cos());
        let u1 = solve_poisson(&f, &g1).unwrap().u;
        let u2 = solve_poisson(&f, &g2).unwrap().u;
        let combined = solve_poisson(&f, &(2.0 * &g1 - 3.0 * &g2)).unwrap().u;
        let direct = 2.0 * &u1 - 3.0 * &u2;
        assert!((combined - &direct).norm() <= 1e-10 * direct.norm());
    }

    #[test]
    fn torsion_positive_on_coercive_ball() {
        let d = Domain::<2>::ball([0.0, 0.0], 0.2);
        let g = build_grid(&d, 0.0125, &[]).unwrap();
        let k = constants(2).unwrap();
        let f = assemble_alt(&g, &k, &QuadratureSpec::default());
        let out = solve_torsion(&f).unwrap();
        assert!(out.positivity_min > 0.0);
    }

    #[test]
    fn torsion_positive_on_disconnected_union() {
        let d = Domain::union(vec![
            Primitive::Ball { center: [-2.0], radius: 0.2 },
            Primitive::Ball { center: [2.0], radius: 0.15 },
        ])
        .unwrap();
        let g = build_grid(&d, 0.025, &[]).unwrap();
        let k = constants(1).unwrap();
        let f = assemble_alt(&g, &k, &QuadratureSpec::default());
        let out = solve_torsion(&f).unwrap();
        assert!(out.positivity_min > 0.0);
    }

    #[test]
    fn semilinear_constant_matches_torsion() {
        let d = Domain::<1>::rect([-0.2], [0.2]);
        let g = build_grid(&d, 0.0125, &[]).unwrap();
        let k = constants(1).unwrap();
        let f = assemble_alt(&g, &k, &QuadratureSpec::default());
        let torsion = solve_torsion(&f).unwrap();
        let zero = DVector::zeros(g.len());
        let out =
            solve_semilinear(&f, &Nonlinearity::Const { c: 1.0 }, &zero, 1e-12, 10).unwrap();
        assert!(out.iterations <= 1);
        assert!((&out.u - &torsion.u).norm() <= 1e-10 * torsion.u.norm());
    }

    #[test]
    fn semilinear_linear_f_converges() {
        let d = Domain::<1>::rect([-0.2], [0.2]);
        let g = build_grid(&d, 0.0125, &[]).unwrap();
        let k = constants(1).unwrap();
        let f = assemble_alt(&g, &k, &QuadratureSpec::default());
        let lam1 = crate::spectral::lambda1(&f);
        let nl = Nonlinearity::Linear { a: lam1 - 1.0, b: 1.0 };
        let zero = DVector::zeros(g.len());
        let out = solve_semilinear(&f, &nl, &zero, 1e-10, 50).unwrap();
        // (A - (lam1-1) M) u = M b solvable since the shift keeps coercivity
        assert!(out.residual_norm <= 1e-8);
    }

    #[test]
    fn semilinear_power_converges_or_reports() {
        let d = Domain::<2>::ball([0.0, 0.0], 0.2);
        let g = build_grid(&d, 0.025, &[]).unwrap();
        let k = constants(2).unwrap();
        let f = assemble_alt(&g, &k, &QuadratureSpec::default());
        let torsion = solve_torsion(&f).unwrap();
        let u0 = 0.5 * &torsion.u;
        match solve_semilinear(&f, &Nonlinearity::Power { p: 2.0, scale: 1.0 }, &u0, 1e-10, 60) {
            Ok(out) => {
                // honest residual, no clamping
                let mut check = &f.a * &out.u;
                for i in 0..g.len() {
                    check[i] -= f.m_diag[i] * out.u[i].max(0.0).powi(2);
                }
                assert_relative_eq!(check.norm(), out.residual_norm, max_relative = 1e-10);
            }
            Err(SolveError::NoConvergence(_)) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn supersolution_residuals() {
        let d = Domain::<1>::rect([-0.2], [0.2]);
        let g = build_grid(&d, 0.0125, &[]).unwrap();
        let n = g.len();
        let k = constants(1).unwrap();
        let f = assemble_alt(&g, &k, &QuadratureSpec::default());
        let torsion = solve_torsion(&f).unwrap();
        let zero = DVector::zeros(n);
        // exact solve: worst violation ~ 0
        let ones = DVector::from_element(n, 1.0);
        let v0 = check_supersolution(&f, &torsion.u, &zero, &ones);
        assert!(v0.abs() <= 1e-10);
        // g = 0.5: slack 0.5 h per cell
        let half = DVector::from_element(n, 0.5);
        let v1 = check_supersolution(&f, &torsion.u, &zero, &half);
        assert_relative_eq!(v1, 0.5 * g.cell_measure(), max_relative = 1e-8);
        // g = 2: not a supersolution
        let two = DVector::from_element(n, 2.0);
        let v2 = check_supersolution(&f, &torsion.u, &zero, &two);
        assert!(v2 < 0.0);
    }

    #[test]
    fn discrete_weak_maximum_principle() {
        // A has nonpositive off-diagonal entries by construction; with a PD
        // shift the solve of (A - M V) u = M g, g >= 0 stays nonnegative
        use rand::{rngs::StdRng, Rng, SeedableRng};
        let d = Domain::<1>::rect([-0.3], [0.3]);
        let g = build_grid(&d, 0.025, &[]).unwrap();
        let k = constants(1).unwrap();
        let f = assemble_alt(&g, &k, &QuadratureSpec::default());
        let n = g.len();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    assert!(f.a[(i, j)] < 0.0);
                }
            }
        }
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..5 {
            let rhs = DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0f64));
            let out = solve_poisson(&f, &rhs).unwrap();
            let umax = out.u.amax();
            assert!(out.positivity_min >= -1e-10 * umax);
        }
    }

    #[test]
    fn torsion_l2_energy_bound() {
        // |psi|_L2 <= |B|^{1/2} / lambda_1
        let d = Domain::<2>::ball([0.0, 0.0], 0.2);
        let g = build_grid(&d, 0.0125, &[]).unwrap();
        let k = constants(2).unwrap();
        let f = assemble_alt(&g, &k, &QuadratureSpec::default());
        let lam1 = crate::spectral::lambda1(&f);
        let out = solve_torsion(&f).unwrap();
        let l2: f64 =
            (0..g.len()).map(|i| f.m_diag[i] * out.u[i] * out.u[i]).sum::<f64>().sqrt();
        let vol = g.volume_estimate();
        assert!(l2 <= vol.sqrt() / lam1 + 1e-9);
    }

    #[test]
    fn newton_quadratic_tail_reported() {
        // convergent smooth run: residuals tail off at least superlinearly
        let d = Domain::<1>::rect([-0.2], [0.2]);
        let g = build_grid(&d, 0.0125, &[]).unwrap();
        let k = constants(1).unwrap();
        let f = assemble_alt(&g, &k, &QuadratureSpec::default());
        let nl = Nonlinearity::Poly { coefficients: vec![1.0, 0.0, -0.5] };
        let zero = DVector::zeros(g.len());
        let out = solve_semilinear(&f, &nl, &zero, 1e-13, 50).unwrap();
        assert!(out.residual_norm <= 1e-12);
        assert!(out.iterations <= 8, "iterations = {}", out.iterations);
    }
}
