//! Block objectives `f_i(z) = ½ zᵀQz + qᵀz + γ log(1 + exp⟨a, z⟩)` and the
//! exact inner minimization that produces `z_i(λ)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{BlockProblem, DualPoint, PrimalPoint};

/// Newton stops once the inner gradient norm drops below this.
pub const NEWTON_TOLERANCE: f64 = 1e-12;
/// Gradient norm accepted when Newton has hit the rounding floor,
/// relative to `max(1, ‖q + w‖)`.
pub const NEWTON_FLOOR: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 100;

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// One block objective together with its factorization and curvature constants.
#[derive(Debug, Clone)]
pub struct BlockObjective {
    hessian: DMatrix<f64>,
    linear: DVector<f64>,
    gamma: f64,
    direction: DVector<f64>,
    factor: Cholesky<f64, Dyn>,
    /// `Q⁻¹a`, used for rank-one Newton solves.
    q_inv_direction: DVector<f64>,
    sigma: f64,
    lipschitz: f64,
}

impl BlockObjective {
    /// `q_mat` must be symmetric positive definite and `gamma` nonnegative.
    /// `direction` is only used when `gamma > 0`.
    pub fn new(q_mat: DMatrix<f64>, linear: DVector<f64>, gamma: f64, direction: DVector<f64>) -> Result<Self> {
        let n = q_mat.nrows();
        let bad = |msg: String| Error::InvalidObjective { i: 0, msg };
        if q_mat.ncols() != n {
            return Err(bad(format!("Q is {}x{}", n, q_mat.ncols())));
        }
        if linear.len() != n || direction.len() != n {
            return Err(bad(format!(
                "q has length {} and a has length {}, expected {n}",
                linear.len(),
                direction.len()
            )));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(bad(format!("gamma = {gamma} must be finite and nonnegative")));
        }
        let scale = q_mat.amax().max(1.0);
        if (&q_mat - q_mat.transpose()).amax() > 1e-12 * scale {
            return Err(bad("Q is not symmetric".into()));
        }
        if q_mat.iter().any(|x| !x.is_finite()) {
            return Err(bad("Q has non-finite entries".into()));
        }
        let (sigma, lam_max) = if n == 0 {
            (f64::INFINITY, 0.0)
        } else {
            let eig = SymmetricEigen::new(q_mat.clone()).eigenvalues;
            (eig.min(), eig.max())
        };
        if sigma <= 0.0 {
            return Err(bad(format!("Q is not positive definite (smallest eigenvalue {sigma:e})")));
        }
        let factor = Cholesky::new(q_mat.clone()).ok_or_else(|| bad("Cholesky factorization of Q failed".into()))?;
        let q_inv_direction = factor.solve(&direction);
        let lipschitz = lam_max + gamma * direction.norm_squared() / 4.0;
        Ok(Self {
            hessian: q_mat,
            linear,
            gamma,
            direction,
            factor,
            q_inv_direction,
            sigma,
            lipschitz,
        })
    }

    /// Purely quadratic objective (`γ = 0`).
    pub fn quadratic(q_mat: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        let n = q_mat.nrows();
        Self::new(q_mat, linear, 0.0, DVector::zeros(n))
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn direction(&self) -> &DVector<f64> {
        &self.direction
    }

    /// Strong convexity modulus `σ_i = λ_min(Q_i)`.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Gradient Lipschitz constant `L_i = λ_max(Q_i) + γ‖a‖²/4`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        let mut v = 0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z);
        if self.gamma > 0.0 {
            v += self.gamma * softplus(self.direction.dot(z));
        }
        v
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.hessian * z + &self.linear;
        if self.gamma > 0.0 {
            g.axpy(self.gamma * logistic(self.direction.dot(z)), &self.direction, 1.0);
        }
        g
    }

    /// `Q⁻¹ v` with the cached factorization.
    pub fn solve_hessian(&self, v: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(v)
    }

    /// `argmin_z f(z) + ⟨w, z⟩`.
    ///
    /// Closed form for quadratics; damped Newton started at zero otherwise.
    pub fn minimize_shifted(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let shift = &self.linear + w;
        if self.gamma == 0.0 {
            return Ok(-self.factor.solve(&shift));
        }
        let mut z = DVector::zeros(self.dim());
        let obj = |z: &DVector<f64>| {
            0.5 * z.dot(&(&self.hessian * z)) + shift.dot(z) + self.gamma * softplus(self.direction.dot(z))
        };
        let grad = |z: &DVector<f64>| {
            let mut g = &self.hessian * z + &shift;
            g.axpy(self.gamma * logistic(self.direction.dot(z)), &self.direction, 1.0);
            g
        };
        let floor = NEWTON_FLOOR * shift.norm().max(1.0);
        let mut g = grad(&z);
        let mut gnorm = g.norm();
        let mut phi = obj(&z);
        for _ in 0..NEWTON_MAX_ITER {
            if gnorm <= NEWTON_TOLERANCE {
                return Ok(z);
            }
            // (Q + c aaᵀ)⁻¹ g by Sherman-Morrison on the cached factor of Q
            let s = logistic(self.direction.dot(&z));
            let curv = self.gamma * s * (1.0 - s);
            let qg = self.factor.solve(&g);
            let denom = 1.0 + curv * self.direction.dot(&self.q_inv_direction);
            let coef = curv * self.direction.dot(&qg) / denom;
            let step = -(qg - &self.q_inv_direction * coef);
            let slope = g.dot(&step);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let trial = &z + &step * t;
                let phi_t = obj(&trial);
                let g_t = grad(&trial);
                let gn_t = g_t.norm();
                if phi_t <= phi + 1e-4 * t * slope || gn_t < gnorm {
                    accepted = Some((trial, phi_t, g_t, gn_t));
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some((zn, phin, gn, gnn)) => {
                    z = zn;
                    phi = phin;
                    g = gn;
                    gnorm = gnn;
                }
                // no progress possible in floating point
                None => {
                    return if gnorm <= floor { Ok(z) } else { Err(Error::Convergence { grad_norm: gnorm }) };
                }
            }
        }
        if gnorm <= floor {
            Ok(z)
        } else {
            Err(Error::Convergence { grad_norm: gnorm })
        }
    }
}

/// `(σ_i, L_i)` of one block objective.
pub fn block_constants(obj: &BlockObjective) -> (f64, f64) {
    (obj.sigma(), obj.lipschitz())
}

/// Inner solve `z_i = argmin f_i(z_i) + ⟨w_i, z_i⟩`.
pub fn solve_block(obj: &BlockObjective, w: &DVector<f64>) -> Result<DVector<f64>> {
    obj.minimize_shifted(w)
}

/// Convexity constants of the whole objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityConstants {
    /// `σ_f̃ = Σ 1/L_i`, strong convexity of the conjugate.
    pub sigma_conjugate: f64,
    /// `σ_f = min σ_i`.
    pub sigma_f: f64,
    pub max_lipschitz: f64,
}

pub fn conjugate_strong_convexity(problem: &BlockProblem) -> ConvexityConstants {
    let objs = problem.objectives();
    ConvexityConstants {
        sigma_conjugate: objs.iter().map(|o| 1.0 / o.lipschitz()).sum(),
        sigma_f: objs.iter().map(|o| o.sigma()).fold(f64::INFINITY, f64::min),
        max_lipschitz: objs.iter().map(|o| o.lipschitz()).fold(0.0, f64::max),
    }
}

/// `f(z) = Σ f_i(z_i)`.
pub fn eval_objective(problem: &BlockProblem, z: &PrimalPoint) -> f64 {
    problem.objectives().iter().zip(&z.0).map(|(o, zi)| o.value(zi)).sum()
}

/// `L(z, λ) = f(z) + ⟨ν, Az − b⟩ + ⟨μ, Cz − c⟩`, evaluated blockwise.
pub fn eval_lagrangian(problem: &BlockProblem, z: &PrimalPoint, lambda: &DualPoint) -> f64 {
    eval_objective(problem, z) + lambda.dot(&problem.residual(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn constants_of_diagonal_and_scalar_blocks() {
        let o = BlockObjective::quadratic(diag(&[2.0, 5.0]), DVector::zeros(2)).unwrap();
        assert_eq!(block_constants(&o), (2.0, 5.0));
        let o = BlockObjective::new(diag(&[1.0]), DVector::zeros(1), 1.0, DVector::from_vec(vec![2.0])).unwrap();
        assert_eq!(block_constants(&o), (1.0, 2.0));
    }

    #[test]
    fn constants_match_eigendecomposition() {
        // fixed 4x4 PD matrix B^T B + I
        let b = DMatrix::from_row_slice(
            4,
            4,
            &[0.3, -1.2, 0.7, 2.0, 1.1, 0.4, -0.6, 0.2, -0.9, 0.8, 1.5, -0.3, 0.5, -0.1, 0.2, 1.3],
        );
        let q = b.transpose() * &b + DMatrix::identity(4, 4);
        let eig = SymmetricEigen::new(q.clone()).eigenvalues;
        let o = BlockObjective::quadratic(q, DVector::zeros(4)).unwrap();
        assert!((o.sigma() - eig.min()).abs() <= 1e-10);
        assert!((o.lipschitz() - eig.max()).abs() <= 1e-10);
    }

    #[test]
    fn non_pd_hessian_rejected() {
        let err = BlockObjective::quadratic(diag(&[1.0, -1.0]), DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::InvalidObjective { .. }));
        let err = BlockObjective::quadratic(diag(&[0.0]), DVector::zeros(1)).unwrap_err();
        assert!(matches!(err, Error::InvalidObjective { .. }));
    }

    #[test]
    fn closed_form_inner_solves() {
        let o = BlockObjective::quadratic(DMatrix::identity(3, 3), DVector::zeros(3)).unwrap();
        assert_eq!(solve_block(&o, &DVector::zeros(3)).unwrap(), DVector::zeros(3));
        let o = BlockObjective::quadratic(diag(&[2.0]), DVector::from_vec(vec![1.0])).unwrap();
        let z = solve_block(&o, &DVector::from_vec(vec![3.0])).unwrap();
        assert!((z[0] + 2.0).abs() < 1e-15);
    }

    /// Root of `z + logistic(z) = 0` by bisection.
    fn bisect_scalar_root() -> f64 {
        let (mut lo, mut hi) = (-1.0f64, 0.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid + logistic(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn newton_matches_bisection() {
        let root = bisect_scalar_root();
        assert!((root + 0.4013).abs() < 1e-3);
        let o = BlockObjective::new(diag(&[1.0]), DVector::zeros(1), 1.0, DVector::from_vec(vec![1.0])).unwrap();
        let z = solve_block(&o, &DVector::zeros(1)).unwrap();
        assert!((z[0] - root).abs() < 1e-12);
    }

    fn random_objective(seed: u64, n: usize, gamma: f64) -> BlockObjective {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = b.transpose() * &b + DMatrix::identity(n, n) * rng.random_range(1.0..10.0);
        let lin = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let a = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        BlockObjective::new(q, lin, gamma, a).unwrap()
    }

    proptest! {
        #[test]
        fn inner_solution_is_stationary(seed in 0u64..500, scale in 0.0f64..100.0, gamma in prop::sample::select(vec![0.0, 1.0, 5.0])) {
            let o = random_objective(seed, 5, gamma);
            let w = DVector::from_fn(5, |k, _| scale * ((k as f64 + seed as f64).sin()));
            let z = solve_block(&o, &w).unwrap();
            let g = o.gradient(&z) + &w;
            prop_assert!(g.norm() <= 1e-10 * (1.0 + w.norm()), "grad norm {}", g.norm());
        }

        #[test]
        fn strong_convexity_and_lipschitz_certificates(seed in 0u64..500, gamma in prop::sample::select(vec![0.0, 1.0])) {
            let o = random_objective(seed, 4, gamma);
            let z = DVector::from_fn(4, |k, _| ((seed + k as u64) as f64).cos() * 3.0);
            let y = DVector::from_fn(4, |k, _| ((seed * 7 + k as u64) as f64).sin() * 3.0);
            let gz = o.gradient(&z);
            let d = &y - &z;
            let lower = o.value(&z) + gz.dot(&d) + 0.5 * o.sigma() * d.norm_squared();
            prop_assert!(o.value(&y) >= lower - 1e-9 * (1.0 + o.value(&y).abs()));
            prop_assert!((o.gradient(&y) - gz).norm() <= o.lipschitz() * d.norm() * (1.0 + 1e-12));
        }
    }
}
