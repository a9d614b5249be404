//! Equality-constrained TV minimization: `min ||Dx||_1 s.t. Ax = y`.
//!
//! [`solve_tv`] runs a first-order primal-dual splitting. The l1 term is
//! handled through its dual (a box clip per iteration), the affine
//! constraint through an exact projection onto `{x : Ax = y}` built from a
//! one-time Cholesky factorization of `A A^T` (or of `A^T A` when m >= n,
//! where the feasible set is a single point). Each iteration therefore
//! costs one gradient stencil pair plus one dense matrix-vector pair with
//! `A`. Step sizes are tied to the power-iteration estimate of `||D||`.
//!
//! [`solve_tv_oracle`] solves the same program through the standard
//! linear-program reformulation (split sign variables, two-phase dense
//! simplex with Bland's anti-cycling rule; see [`crate::simplex`]) and is
//! the exact reference for cross-checking at small n.

use crate::linops::{GradientOperator, LinopError, MeasurementEnsemble};
use crate::simplex::{solve_standard_lp, LpOutcome};
use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

/// Largest ambient dimension accepted by the dense simplex oracle.
pub const ORACLE_MAX_DIM: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error("measurement vector has length {got}, ensemble has {expected} rows")]
    BadMeasurementVector { expected: usize, got: usize },
    #[error("oracle limited to n <= {cap}, got n = {n}")]
    OracleTooLarge { cap: usize, n: usize },
    #[error("oracle linear program reported an inconsistent system")]
    OracleInfeasible,
    #[error("oracle simplex exceeded its pivot budget")]
    OracleStalled,
    #[error("invalid solver configuration: {0}")]
    BadConfig(String),
}

/// Tuning knobs for [`solve_tv`]; [`SolverConfig::default`] gives the
/// documented defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Iteration budget; exhausting it yields `IterationLimit`.
    pub max_iterations: usize,
    /// Bound on `||Ax - y|| / max(1, ||y||)` for a converged result.
    pub feasibility_tolerance: f64,
    /// Relative tolerance on both the iterate change and the objective
    /// change between convergence checks.
    pub convergence_tolerance: f64,
    /// Fraction of the step-size stability bound actually used (< 1).
    pub step_scale: f64,
    /// Ratio sigma/tau between the dual and primal step sizes.
    pub step_ratio: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20_000,
            feasibility_tolerance: 1e-6,
            convergence_tolerance: 1e-7,
            step_scale: 0.99,
            step_ratio: 1.0,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), SolverError> {
        if self.max_iterations < 1 {
            return Err(SolverError::BadConfig("max_iterations must be >= 1".into()));
        }
        for (name, v) in [
            ("feasibility_tolerance", self.feasibility_tolerance),
            ("convergence_tolerance", self.convergence_tolerance),
            ("step_ratio", self.step_ratio),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(SolverError::BadConfig(format!("{name} must be positive")));
            }
        }
        if !(self.step_scale > 0.0 && self.step_scale < 1.0) {
            return Err(SolverError::BadConfig("step_scale must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    IterationLimit,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub x_hat: Array1<f64>,
    /// `||D x_hat||_1`.
    pub objective: f64,
    /// `||A x_hat - y||_2`.
    pub feasibility_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

/// Lower-triangular Cholesky factor of a symmetric positive definite
/// matrix; `None` when the matrix is numerically singular.
fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solve `L L^T x = b` by forward/back substitution.
fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Exact Euclidean projector onto `{x : Ax = y}`.
enum AffineProjector<'a> {
    /// m < n: `P(v) = v - A^T (A A^T)^{-1} (A v - y)`.
    Underdetermined {
        a: &'a Array2<f64>,
        chol: Array2<f64>,
        y: Array1<f64>,
    },
    /// m >= n with full column rank: the feasible set is one point.
    Point { x_star: Array1<f64> },
}

impl<'a> AffineProjector<'a> {
    fn build(a: &'a Array2<f64>, y: ArrayView1<f64>) -> Option<Self> {
        let (m, n) = a.dim();
        if m < n {
            let gram = a.dot(&a.t());
            let chol = cholesky(&gram)?;
            Some(Self::Underdetermined {
                a,
                chol,
                y: y.to_owned(),
            })
        } else {
            let gram = a.t().dot(a);
            let chol = cholesky(&gram)?;
            let aty = a.t().dot(&y);
            let x_star = cholesky_solve(&chol, &aty);
            Some(Self::Point { x_star })
        }
    }

    fn project(&self, v: &Array1<f64>) -> Array1<f64> {
        match self {
            Self::Underdetermined { a, chol, y } => {
                let residual = a.dot(v) - y;
                let w = cholesky_solve(chol, &residual);
                v - &a.t().dot(&w)
            }
            Self::Point { x_star } => x_star.clone(),
        }
    }
}

fn l1_norm(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn l2_norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Solve the TV program for a sampled Gaussian ensemble.
pub fn solve_tv(
    a: &MeasurementEnsemble,
    y: ArrayView1<f64>,
    config: &SolverConfig,
) -> Result<SolveResult, SolverError> {
    solve_tv_matrix(a.matrix(), y, config)
}

/// Matrix-level entry point shared by [`solve_tv`] and tests with
/// hand-built measurement matrices.
pub(crate) fn solve_tv_matrix(
    a: &Array2<f64>,
    y: ArrayView1<f64>,
    config: &SolverConfig,
) -> Result<SolveResult, SolverError> {
    config.validate()?;
    let (m, n) = a.dim();
    if y.len() != m {
        return Err(SolverError::BadMeasurementVector {
            expected: m,
            got: y.len(),
        });
    }
    let grad = GradientOperator::new(n)?;
    let y_norm = y.dot(&y).sqrt();

    let Some(projector) = AffineProjector::build(a, y) else {
        // Singular subproblem: report a numerical failure on a zero iterate.
        return Ok(SolveResult {
            x_hat: Array1::zeros(n),
            objective: 0.0,
            feasibility_residual: y_norm,
            iterations: 0,
            status: SolveStatus::NumericalFailure,
        });
    };

    let norm_d = grad.norm_sq_estimate(150).sqrt();
    let tau = config.step_scale / (norm_d * config.step_ratio);
    let sigma = config.step_scale * config.step_ratio / norm_d;

    let mut x = projector.project(&Array1::zeros(n));
    let mut x_bar = x.clone();
    let mut z = Array1::<f64>::zeros(n - 1);
    let mut dx_buf = Array1::<f64>::zeros(n - 1);
    let mut dtz = Array1::<f64>::zeros(n);

    const CHECK_INTERVAL: usize = 10;
    let mut status = SolveStatus::IterationLimit;
    let mut iterations = config.max_iterations;
    let mut prev_objective = l1_norm(&grad.apply(x.view()).unwrap());

    for iter in 1..=config.max_iterations {
        // Dual ascent + clip to the l-infinity ball. A spurious primal
        // plateau is not a fixed point unless the dual stalls as well, so
        // its movement enters the convergence test.
        grad.apply_into(x_bar.view(), &mut dx_buf);
        let mut dz_sq = 0.0;
        let mut z_sq = 0.0;
        for (zi, di) in z.iter_mut().zip(dx_buf.iter()) {
            let znew = (*zi + sigma * di).clamp(-1.0, 1.0);
            dz_sq += (znew - *zi) * (znew - *zi);
            z_sq += znew * znew;
            *zi = znew;
        }
        let dual_change = dz_sq.sqrt() / z_sq.sqrt().max(1.0);
        // Primal descent + exact affine projection.
        grad.apply_adjoint_into(z.view(), &mut dtz);
        let x_new = projector.project(&(&x - (tau * &dtz)));

        let mut diff_sq = 0.0;
        let mut new_sq = 0.0;
        for (a, b) in x_new.iter().zip(x.iter()) {
            diff_sq += (a - b) * (a - b);
            new_sq += a * a;
        }
        let rel_change = diff_sq.sqrt() / new_sq.sqrt().max(1.0);

        // Over-relaxation x_bar = 2 x_new - x.
        for i in 0..n {
            x_bar[i] = 2.0 * x_new[i] - x[i];
        }
        x = x_new;

        if iter % CHECK_INTERVAL == 0 || iter == config.max_iterations {
            grad.apply_into(x.view(), &mut dx_buf);
            let objective = dx_buf.iter().map(|v| v.abs()).sum::<f64>();
            if !objective.is_finite() {
                status = SolveStatus::NumericalFailure;
                iterations = iter;
                break;
            }
            let obj_change = (objective - prev_objective).abs() / objective.abs().max(1.0);
            prev_objective = objective;
            if rel_change <= config.convergence_tolerance
                && dual_change <= config.convergence_tolerance
                && obj_change <= config.convergence_tolerance
            {
                status = SolveStatus::Converged;
                iterations = iter;
                break;
            }
        }
    }

    let objective = l1_norm(&grad.apply(x.view()).unwrap());
    let feasibility_residual = l2_norm(&(a.dot(&x) - y));
    if status == SolveStatus::Converged
        && feasibility_residual > config.feasibility_tolerance * y_norm.max(1.0)
    {
        status = SolveStatus::IterationLimit;
    }
    Ok(SolveResult {
        x_hat: x,
        objective,
        feasibility_residual,
        iterations,
        status,
    })
}

/// Exact reference solver via the LP reformulation
/// `min sum(p + q) s.t. A(x+ - x-) = y, D(x+ - x-) - p + q = 0`,
/// all variables nonnegative. Usable for n up to [`ORACLE_MAX_DIM`];
/// intended for tests and cross-checks only.
pub fn solve_tv_oracle(
    a: &MeasurementEnsemble,
    y: ArrayView1<f64>,
) -> Result<SolveResult, SolverError> {
    solve_tv_oracle_matrix(a.matrix(), y)
}

pub(crate) fn solve_tv_oracle_matrix(
    a: &Array2<f64>,
    y: ArrayView1<f64>,
) -> Result<SolveResult, SolverError> {
    let (m, n) = a.dim();
    if n > ORACLE_MAX_DIM {
        return Err(SolverError::OracleTooLarge {
            cap: ORACLE_MAX_DIM,
            n,
        });
    }
    if n < 2 {
        return Err(SolverError::Linop(LinopError::AmbientTooSmall(n)));
    }
    if y.len() != m {
        return Err(SolverError::BadMeasurementVector {
            expected: m,
            got: y.len(),
        });
    }

    // Columns: x+ (n) | x- (n) | p (n-1) | q (n-1).
    let rows = m + n - 1;
    let cols = 4 * n - 2;
    let mut e = Array2::<f64>::zeros((rows, cols));
    let mut b = Array1::<f64>::zeros(rows);
    let mut c = Array1::<f64>::zeros(cols);
    for r in 0..m {
        for j in 0..n {
            e[[r, j]] = a[[r, j]];
            e[[r, n + j]] = -a[[r, j]];
        }
        b[r] = y[r];
    }
    for j in 0..n - 1 {
        let r = m + j;
        e[[r, j]] = -1.0;
        e[[r, j + 1]] = 1.0;
        e[[r, n + j]] = 1.0;
        e[[r, n + j + 1]] = -1.0;
        e[[r, 2 * n + j]] = -1.0;
        e[[r, 3 * n - 1 + j]] = 1.0;
    }
    for j in 0..n - 1 {
        c[2 * n + j] = 1.0;
        c[3 * n - 1 + j] = 1.0;
    }

    match solve_standard_lp(&c, &e, &b) {
        LpOutcome::Optimal {
            x: u,
            objective: lp_objective,
            pivots,
        } => {
            let x_hat = Array1::from_shape_fn(n, |j| u[j] - u[n + j]);
            let grad = GradientOperator::new(n)?;
            let objective = l1_norm(&grad.apply(x_hat.view()).unwrap());
            debug_assert!(
                (objective - lp_objective).abs() <= 1e-7 * (1.0 + lp_objective.abs()),
                "LP objective {lp_objective} disagrees with ||D x||_1 = {objective}"
            );
            let feasibility_residual = l2_norm(&(a.dot(&x_hat) - y));
            Ok(SolveResult {
                x_hat,
                objective,
                feasibility_residual,
                iterations: pivots,
                status: SolveStatus::Converged,
            })
        }
        LpOutcome::Infeasible => Err(SolverError::OracleInfeasible),
        LpOutcome::Unbounded => Err(SolverError::OracleInfeasible),
        LpOutcome::Stalled => Err(SolverError::OracleStalled),
    }
}

/// Relative-l2 recovery test with an absolute fallback for tiny signals:
/// `||x_hat - x0|| <= tol * max(1, ||x0||)`.
pub fn check_recovery(x_hat: ArrayView1<f64>, x0: ArrayView1<f64>, tol: f64) -> bool {
    assert_eq!(x_hat.len(), x0.len(), "recovery check needs equal lengths");
    let mut diff_sq = 0.0;
    let mut ref_sq = 0.0;
    for (a, b) in x_hat.iter().zip(x0.iter()) {
        diff_sq += (a - b) * (a - b);
        ref_sq += b * b;
    }
    diff_sq.sqrt() <= tol * ref_sq.sqrt().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::sample_gaussian_vector;
    use crate::signals::{make_equidistant, LevelSource};
    use ndarray::{arr1, arr2};

    fn gaussian_matrix(m: usize, n: usize, seed: u64) -> Array2<f64> {
        MeasurementEnsemble::sample(m, n, seed).unwrap().matrix().clone()
    }

    #[test]
    fn square_system_recovers_exactly() {
        let n = 8;
        let x0 = make_equidistant(n, 1, LevelSource::Seeded(5)).unwrap();
        let a = MeasurementEnsemble::sample(n, n, 9).unwrap();
        let y = a.apply(x0.values()).unwrap();
        let res = solve_tv(&a, y.view(), &SolverConfig::default()).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        assert!(check_recovery(res.x_hat.view(), x0.values(), 1e-3));
    }

    #[test]
    fn small_instance_matches_oracle() {
        // n=4, x0=(1,1,0,0), seeded 3x4 Gaussian.
        let x0 = arr1(&[1.0, 1.0, 0.0, 0.0]);
        let a = gaussian_matrix(3, 4, 21);
        let y = a.dot(&x0);
        let oracle = solve_tv_oracle_matrix(&a, y.view()).unwrap();
        let cfg = SolverConfig {
            convergence_tolerance: 1e-9,
            max_iterations: 100_000,
            ..SolverConfig::default()
        };
        let res = solve_tv_matrix(&a, y.view(), &cfg).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        assert!(
            (res.objective - oracle.objective).abs() <= 1e-5,
            "pd {} vs lp {}",
            res.objective,
            oracle.objective
        );
    }

    #[test]
    fn single_measurement_is_feasible_and_optimal_enough() {
        let n = 64;
        let x0 = make_equidistant(n, 3, LevelSource::Seeded(2)).unwrap();
        let a = MeasurementEnsemble::sample(1, n, 3).unwrap();
        let y = a.apply(x0.values()).unwrap();
        // m = 1 is the slowest regime for the splitting (the whole kernel
        // of D is nearly unconstrained and the saddle is fully bilinear);
        // the linear tail kicks in around 1M iterations.
        let cfg = SolverConfig {
            max_iterations: 2_000_000,
            ..SolverConfig::default()
        };
        let res = solve_tv(&a, y.view(), &cfg).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        let y_norm = y.dot(&y).sqrt();
        assert!(res.feasibility_residual <= cfg.feasibility_tolerance * y_norm.max(1.0));
        let grad = GradientOperator::new(n).unwrap();
        let tv0 = grad
            .apply(x0.values())
            .unwrap()
            .iter()
            .map(|v| v.abs())
            .sum::<f64>();
        assert!(res.objective <= tv0 + 1e-5);
        // Recovery itself is expected to fail at m=1.
        assert!(!check_recovery(res.x_hat.view(), x0.values(), 1e-3));
    }

    #[test]
    fn oracle_square_system_is_exact() {
        let n = 6;
        let x0 = make_equidistant(n, 2, LevelSource::Seeded(7)).unwrap();
        let a = gaussian_matrix(n, n, 13);
        let y = a.dot(&x0.values().to_owned());
        let res = solve_tv_oracle_matrix(&a, y.view()).unwrap();
        for (a, b) in res.x_hat.iter().zip(x0.values().iter()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn oracle_constant_signal_zero_objective() {
        let a = arr2(&[[1.0, 1.0, 1.0]]);
        let y = arr1(&[3.0]);
        let res = solve_tv_oracle_matrix(&a, y.view()).unwrap();
        assert!(res.objective.abs() < 1e-9);
        for v in res.x_hat.iter() {
            assert!((v - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn oracle_rejects_large_n() {
        let a = gaussian_matrix(4, ORACLE_MAX_DIM + 1, 1);
        let y = Array1::zeros(4);
        assert!(matches!(
            solve_tv_oracle_matrix(&a, y.view()),
            Err(SolverError::OracleTooLarge { .. })
        ));
    }

    #[test]
    fn cross_solver_agreement_small_batch() {
        let mut checked = 0;
        for (i, &n) in [6, 9, 12, 16, 20, 24].iter().enumerate() {
            for (j, m) in [n - 2, n / 2].into_iter().enumerate() {
                let seed = 100 + (10 * i + j) as u64;
                let s = 1 + (i + j) % 3;
                let x0 = make_equidistant(n, s, LevelSource::Seeded(seed)).unwrap();
                let a = gaussian_matrix(m, n, seed ^ 0xabcd);
                let y = a.dot(&x0.values().to_owned());
                let oracle = solve_tv_oracle_matrix(&a, y.view()).unwrap();
                let cfg = SolverConfig {
                    convergence_tolerance: 1e-9,
                    max_iterations: 200_000,
                    ..SolverConfig::default()
                };
                let res = solve_tv_matrix(&a, y.view(), &cfg).unwrap();
                assert!(
                    (res.objective - oracle.objective).abs() <= 1e-5 * (1.0 + oracle.objective),
                    "n={n} m={m}: pd {} vs lp {}",
                    res.objective,
                    oracle.objective
                );
                checked += 1;
            }
        }
        assert_eq!(checked, 12);
    }

    #[test]
    fn scale_invariance_of_program() {
        let n = 16;
        let x0 = make_equidistant(n, 2, LevelSource::Seeded(4)).unwrap();
        let a = gaussian_matrix(8, n, 15);
        let y = a.dot(&x0.values().to_owned());
        let cfg = SolverConfig {
            convergence_tolerance: 1e-9,
            max_iterations: 100_000,
            ..SolverConfig::default()
        };
        let base = solve_tv_matrix(&a, y.view(), &cfg).unwrap();
        let scaled = solve_tv_matrix(&(3.5 * &a), (3.5 * &y).view(), &cfg).unwrap();
        assert!(
            (base.objective - scaled.objective).abs() <= 1e-5 * (1.0 + base.objective),
            "{} vs {}",
            base.objective,
            scaled.objective
        );
    }

    #[test]
    fn shift_covariance() {
        let n = 16;
        let shift = 2.75;
        let x0 = make_equidistant(n, 2, LevelSource::Seeded(8)).unwrap().values().to_owned();
        let a = gaussian_matrix(8, n, 23);
        let cfg = SolverConfig {
            convergence_tolerance: 1e-9,
            max_iterations: 100_000,
            ..SolverConfig::default()
        };
        let base = solve_tv_matrix(&a, a.dot(&x0).view(), &cfg).unwrap();
        let shifted_x0 = &x0 + shift;
        let shifted = solve_tv_matrix(&a, a.dot(&shifted_x0).view(), &cfg).unwrap();
        for (p, q) in shifted.x_hat.iter().zip(base.x_hat.iter()) {
            assert!((p - q - shift).abs() < 1e-4, "{p} vs {q}");
        }
    }

    #[test]
    fn recovery_check_cases() {
        let x0 = sample_gaussian_vector(10, 1);
        assert!(check_recovery(x0.view(), x0.view(), 1e-12));

        let mut off = x0.clone();
        let norm = x0.dot(&x0).sqrt();
        off[0] += 1e-2 * norm.max(1.0);
        assert!(!check_recovery(off.view(), x0.view(), 1e-3));

        let zero = Array1::zeros(10);
        let mut tiny = Array1::zeros(10);
        tiny[3] = 1e-4;
        assert!(check_recovery(tiny.view(), zero.view(), 1e-3));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = MeasurementEnsemble::sample(3, 8, 1).unwrap();
        let y = Array1::zeros(2);
        assert!(matches!(
            solve_tv(&a, y.view(), &SolverConfig::default()),
            Err(SolverError::BadMeasurementVector { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn bad_config_rejected() {
        let a = MeasurementEnsemble::sample(3, 8, 1).unwrap();
        let y = Array1::zeros(3);
        let cfg = SolverConfig {
            max_iterations: 0,
            ..SolverConfig::default()
        };
        assert!(matches!(
            solve_tv(&a, y.view(), &cfg),
            Err(SolverError::BadConfig(_))
        ));
    }

    #[test]
    fn singular_system_reports_numerical_failure() {
        // Duplicate rows make A A^T singular.
        let a = arr2(&[[1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0]]);
        let y = arr1(&[1.0, 1.0]);
        let res = solve_tv_matrix(&a, y.view(), &SolverConfig::default()).unwrap();
        assert_eq!(res.status, SolveStatus::NumericalFailure);
    }
}
