use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::statespace::LinearStateSpace;
use crate::error::{Error, Result};

/// Relative residual required of [`solve_care`].
pub const CARE_TOLERANCE: f64 = 1e-12;

/// Solves `AᵀX + XA − XGX + H = 0` (`G`, `H` symmetric positive semidefinite)
/// for the stabilizing solution by the structure-preserving doubling
/// algorithm applied to the Cayley-transformed Hamiltonian pencil.
pub fn solve_care(a: &DMatrix<f64>, g: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let mut ham = DMatrix::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(a);
    ham.view_mut((0, n), (n, n)).copy_from(&(-g));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-h));
    ham.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let gamma = (ham.norm() / (2.0 * n as f64).sqrt()).max(1e-300);
    let id2 = DMatrix::<f64>::identity(2 * n, 2 * n);
    let p = &ham + &id2 * gamma;
    let q = &ham - &id2 * gamma;
    let mut t = DMatrix::zeros(2 * n, 2 * n);
    t.view_mut((0, 0), (2 * n, n))
        .copy_from(&q.view((0, 0), (2 * n, n)));
    t.view_mut((0, n), (2 * n, n))
        .copy_from(&p.view((0, n), (2 * n, n)));
    let t = t
        .try_inverse()
        .ok_or_else(|| Error::RiccatiNoSolution("Cayley transform is singular".into()))?;
    let m = &t * &p;
    let l = &t * &q;
    let mut e = m.view((0, 0), (n, n)).into_owned();
    let mut hk = -m.view((n, 0), (n, n)).into_owned();
    let mut gk = -l.view((0, n), (n, n)).into_owned();
    let mut f = l.view((n, n), (n, n)).into_owned();
    for _ in 0..100 {
        let w1 = (&id - &gk * &hk)
            .try_inverse()
            .ok_or_else(|| Error::RiccatiNoSolution("doubling step is singular".into()))?;
        let w2 = (&id - &hk * &gk)
            .try_inverse()
            .ok_or_else(|| Error::RiccatiNoSolution("doubling step is singular".into()))?;
        let e1 = &e * &w1;
        let f1 = &f * &w2;
        let h_new = &hk + &f1 * &hk * &e;
        let g_new = &gk + &e1 * &gk * &f;
        let e_new = &e1 * &e;
        let f_new = &f1 * &f;
        let change = (&h_new - &hk).norm();
        hk = h_new;
        gk = g_new;
        e = e_new;
        f = f_new;
        if !hk.iter().all(|v| v.is_finite()) {
            return Err(Error::RiccatiNoSolution(
                "doubling iteration diverged".into(),
            ));
        }
        if change <= 1e-15 * hk.norm().max(1e-300) || e.norm() < 1e-300 {
            break;
        }
    }
    let x = newton_refine(a, g, h, (&hk + hk.transpose()) * 0.5);
    let res = care_residual(a, g, h, &x);
    if !(res <= CARE_TOLERANCE) {
        return Err(Error::RiccatiNoSolution(format!(
            "residual {res:.3e} above tolerance"
        )));
    }
    Ok(x)
}

/// Newton-Kleinman iterations from a stabilizing guess: each step solves
/// `(A − GX)ᵀX' + X'(A − GX) + XGX + H = 0`. The residual need not fall
/// monotonically, so the best iterate is kept and the loop ends after a few
/// steps without improvement or once the closed loop loses stability.
fn newton_refine(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    x0: DMatrix<f64>,
) -> DMatrix<f64> {
    let mut best_res = care_residual(a, g, h, &x0);
    let mut best = x0.clone();
    let mut x = x0;
    let mut stale = 0;
    for _ in 0..60 {
        if best_res <= 0.01 * CARE_TOLERANCE || stale >= 4 {
            break;
        }
        let closed = a - g * &x;
        if closed.complex_eigenvalues().iter().any(|e| !(e.re < 0.0)) {
            break;
        }
        let rhs = &x * g * &x + h;
        let Ok(next) = lyapunov(&closed.transpose(), &rhs) else {
            break;
        };
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        let res = care_residual(a, g, h, &next);
        if res < best_res {
            best_res = res;
            best = next.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        x = next;
    }
    best
}

/// `‖AᵀX + XA − XGX + H‖ / (‖AᵀX‖ + ‖XGX‖ + ‖H‖)`.
pub fn care_residual(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    h: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> f64 {
    let atx = a.transpose() * x;
    let xgx = x * g * x;
    let r = &atx + atx.transpose() - &xgx + h;
    r.norm() / (2.0 * atx.norm() + xgx.norm() + h.norm()).max(1e-300)
}

/// Solves `AΣ + ΣAᵀ + Q = 0` by vectorization.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let k = id.kronecker(a) + a.kronecker(&id);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let v = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Domain("Lyapunov operator is singular".into()))?;
    let s = DMatrix::from_column_slice(n, n, v.as_slice());
    Ok((&s + s.transpose()) * 0.5)
}

/// Steady-state Kalman filter of a [`LinearStateSpace`].
#[derive(Debug, Clone, Serialize)]
pub struct KalmanSolution {
    /// Estimation-error covariance of the full state.
    pub covariance: DMatrix<f64>,
    /// Prior (stationary) state covariance.
    pub prior: DMatrix<f64>,
    /// Filter gain `K = (PCᵀ + S)/R`.
    pub gain: DVector<f64>,
    /// `[[Var δq, Cov δq δp], [Cov δq δp, Var δp]]`.
    pub qp: [[f64; 2]; 2],
}

/// Kalman gain for a given error covariance.
pub fn kalman_gain(ss: &LinearStateSpace, p: &DMatrix<f64>) -> DVector<f64> {
    let (_, r, s) = ss.noise_covariances();
    (p * &ss.c + s) / r
}

/// Steady-state conditional covariance given the full observation record.
/// Correlated process and measurement noise are handled by decorrelation.
/// Numerical work starts in units of `ss.state_scale`; the states are then
/// rescaled to unit prior variance before the Riccati solve.
pub fn kalman_steady_state(ss: &LinearStateSpace) -> Result<KalmanSolution> {
    ss.check_stable()?;
    let (q_raw, r, s_raw) = ss.noise_covariances();
    if !(r > 0.0) {
        return Err(Error::RiccatiNoSolution(
            "measurement noise intensity must be positive".into(),
        ));
    }
    let scaled = |sc: &DVector<f64>| {
        let s_inv = DMatrix::from_diagonal(&sc.map(|v| 1.0 / v));
        let s_mat = DMatrix::from_diagonal(sc);
        let a = &s_inv * &ss.a * &s_mat;
        let c = &s_mat * &ss.c;
        let q = &s_inv * &q_raw * &s_inv;
        let s = &s_inv * &s_raw;
        (a, c, q, s)
    };
    let sc0 = DVector::from_vec(ss.state_scale.clone());
    let (a0, _, q0, _) = scaled(&sc0);
    let prior0 = lyapunov(&a0, &q0)?;
    let sc = DVector::from_iterator(
        sc0.len(),
        sc0.iter()
            .zip(prior0.diagonal().iter())
            .map(|(s, v)| if *v > 0.0 { s * v.sqrt() } else { *s }),
    );
    let s_mat = DMatrix::from_diagonal(&sc);
    let (a, c, q, s) = scaled(&sc);
    let abar = &a - &s * c.transpose() / r;
    let qbar = &q - &s * s.transpose() / r;
    let qbar = (&qbar + qbar.transpose()) * 0.5;
    let g = &c * c.transpose() / r;
    let p = solve_care(&abar.transpose(), &g, &qbar)?;
    let prior = lyapunov(&a, &q)?;
    let covariance = &s_mat * &p * &s_mat;
    let prior = &s_mat * prior * &s_mat;
    let gain = kalman_gain(ss, &covariance);
    Ok(KalmanSolution {
        qp: [
            [covariance[(0, 0)], covariance[(0, 1)]],
            [covariance[(1, 0)], covariance[(1, 1)]],
        ],
        covariance,
        prior,
        gain,
    })
}
