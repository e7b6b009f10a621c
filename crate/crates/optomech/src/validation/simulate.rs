use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::riccati::lyapunov;
use super::statespace::LinearStateSpace;
use crate::error::{Error, Result};
use crate::factorization::CausalFilter;
use crate::grid::Transform;
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Exact transition matrix and exact discretized noise covariance.
    #[default]
    Exact,
    EulerMaruyama,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum Initial {
    /// Draw from the stationary covariance.
    #[default]
    Stationary,
    Zero,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimOptions {
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    pub scheme: Scheme,
    pub initial: Initial,
}

/// Sampled trajectory. `y[k]` is `C·x(t_k)` plus the white observation noise
/// averaged over `[t_k, t_k + dt)`, i.e. the increment that also drives the
/// state from `t_k` to `t_{k+1}`.
#[derive(Debug, Clone, Serialize)]
pub struct SimOutput {
    pub dt: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub y: Vec<f64>,
}

/// Factor `L` with `L Lᵀ = M` for a symmetric positive semidefinite `M`.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d)
}

fn augmented_exp(
    top_left: &DMatrix<f64>,
    top_right: &DMatrix<f64>,
    bottom_right: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (n, m) = (top_left.nrows(), bottom_right.nrows());
    let mut big = DMatrix::zeros(n + m, n + m);
    big.view_mut((0, 0), (n, n)).copy_from(top_left);
    big.view_mut((0, n), (n, m)).copy_from(top_right);
    big.view_mut((n, n), (m, m)).copy_from(bottom_right);
    big.exp()
}

/// Simulates the state space, returning `q` (state 0), `p` (state 1) and the
/// observation.
pub fn simulate(ss: &LinearStateSpace, opts: &SimOptions) -> Result<SimOutput> {
    ss.check_stable()?;
    let dt = opts.dt;
    if !(dt > 0.0) || !(opts.duration >= dt) {
        return Err(Error::Domain("need 0 < dt ≤ duration".into()));
    }
    let fastest = ss
        .eigenvalues()
        .iter()
        .map(|e| e.norm())
        .fold(0.0, f64::max);
    if dt * fastest >= 0.1 {
        return Err(Error::StepTooLarge {
            ratio: dt * fastest,
        });
    }
    let n = ss.n_states();
    let m = ss.n_noises();
    let steps = (opts.duration / dt).round() as usize;
    // Work in scaled state units.
    let sc = DVector::from_vec(ss.state_scale.clone());
    let s_inv = DMatrix::from_diagonal(&sc.map(|v| 1.0 / v));
    let a = &s_inv * &ss.a * DMatrix::from_diagonal(&sc);
    let b = &s_inv * &ss.b;
    let c = ss.c.component_mul(&sc);
    let nint = ss.intensity();
    let qc = &b * &nint * b.transpose();

    let (phi, joint) = match opts.scheme {
        Scheme::Exact => {
            let ad = &a * dt;
            let zero_n = DMatrix::zeros(n, n);
            let e1 = augmented_exp(&ad, &DMatrix::identity(n, n), &zero_n);
            let phi = e1.view((0, 0), (n, n)).into_owned();
            let gam = e1.view((0, n), (n, n)).into_owned() * dt;
            let e2 = augmented_exp(&(-&ad), &(&qc * dt), &ad.transpose());
            let qd = e2.view((n, n), (n, n)).transpose() * e2.view((0, n), (n, n));
            let cross = &gam * &b * &nint;
            let mut joint = DMatrix::zeros(n + m, n + m);
            joint.view_mut((0, 0), (n, n)).copy_from(&qd);
            joint.view_mut((0, n), (n, m)).copy_from(&cross);
            joint.view_mut((n, 0), (m, n)).copy_from(&cross.transpose());
            joint.view_mut((n, n), (m, m)).copy_from(&(&nint * dt));
            (phi, joint)
        }
        Scheme::EulerMaruyama => {
            let phi = DMatrix::identity(n, n) + &a * dt;
            let mut joint = DMatrix::zeros(n + m, n + m);
            let bn = &b * &nint * dt;
            joint
                .view_mut((0, 0), (n, n))
                .copy_from(&(&bn * b.transpose()));
            joint.view_mut((0, n), (n, m)).copy_from(&bn);
            joint.view_mut((n, 0), (m, n)).copy_from(&bn.transpose());
            joint.view_mut((n, n), (m, m)).copy_from(&(&nint * dt));
            (phi, joint)
        }
    };
    let root = psd_sqrt(&joint);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut draw =
        |k: usize| -> DVector<f64> { DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng)) };
    let mut x = match &opts.initial {
        Initial::Zero => DVector::zeros(n),
        Initial::Given(v) => {
            if v.len() != n {
                return Err(Error::Domain(format!("initial state needs {n} entries")));
            }
            DVector::from_iterator(n, v.iter().zip(sc.iter()).map(|(x, s)| x / s))
        }
        Initial::Stationary => psd_sqrt(&lyapunov(&a, &qc)?) * draw(n),
    };
    let (mut q, mut p, mut y) = (
        Vec::with_capacity(steps),
        Vec::with_capacity(steps),
        Vec::with_capacity(steps),
    );
    for _ in 0..steps {
        let z = &root * draw(n + m);
        let w = z.rows(0, n);
        let dw = z.rows(n, m);
        q.push(x[0] * sc[0]);
        p.push(x[1] * sc[1]);
        y.push(c.dot(&x) + ss.d.dot(&dw) / dt);
        x = &phi * &x + w;
    }
    Ok(SimOutput { dt, q, p, y })
}

/// Sample conditional (co)variances of `q − H_q*y` and `p − H_p*y` with
/// moving-block bootstrap standard errors.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EmpiricalCovariance {
    pub v_qq: f64,
    pub v_pp: f64,
    pub c_qp: f64,
    pub se_qq: f64,
    pub se_pp: f64,
    pub se_qp: f64,
    pub n_samples: usize,
    pub correlation_time: f64,
}

/// Taps `dt·h(n·dt)` for `n ≥ 0`, truncated once the remaining causal energy
/// falls below 1e-12 of the total.
fn taps(filter: &CausalFilter, dt: f64) -> Vec<f64> {
    let h = filter.causal_taps();
    let total: f64 = h.iter().map(|v| v * v).sum();
    let mut tail = total;
    let mut len = h.len();
    for (i, v) in h.iter().enumerate() {
        tail -= v * v;
        if tail <= 1e-12 * total {
            len = i + 1;
            break;
        }
    }
    h[..len].iter().map(|v| v * dt).collect()
}

/// Energy-weighted mean delay of a causal tap sequence.
fn correlation_time(taps: &[f64], dt: f64) -> f64 {
    let e: f64 = taps.iter().map(|v| v * v).sum();
    if e == 0.0 {
        return dt;
    }
    let m: f64 = taps.iter().enumerate().map(|(i, v)| i as f64 * v * v).sum();
    (m / e * dt).max(dt)
}

/// Causal FIR filtering `out[k] = Σ_j taps[j]·x[k−j]` by overlap-add FFT
/// convolution.
pub fn causal_convolve(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let l = taps.len();
    if l == 0 {
        return vec![0.0; x.len()];
    }
    let block = (4 * l).next_power_of_two().max(1024);
    let seg = block - l + 1;
    let tr = Transform::new(block);
    let mut hf: Vec<Complex64> = (0..block)
        .map(|i| Complex64::new(if i < l { taps[i] } else { 0.0 }, 0.0))
        .collect();
    tr.forward(&mut hf);
    let mut out = vec![0.0; x.len() + l];
    let mut start = 0;
    while start < x.len() {
        let end = (start + seg).min(x.len());
        let mut buf: Vec<Complex64> = (0..block)
            .map(|i| Complex64::new(if start + i < end { x[start + i] } else { 0.0 }, 0.0))
            .collect();
        tr.forward(&mut buf);
        for (b, h) in buf.iter_mut().zip(&hf) {
            *b *= h;
        }
        tr.inverse(&mut buf);
        for (i, v) in buf.iter().enumerate().take((end - start) + l - 1) {
            out[start + i] += v.re;
        }
        start = end;
    }
    out.truncate(x.len());
    out
}

/// Applies causal estimators to a simulated record and measures the error
/// covariance of `(q, p)`.
pub fn empirical_conditional_variance(
    sim: &SimOutput,
    h_q: &CausalFilter,
    h_p: &CausalFilter,
    bootstrap_seed: u64,
) -> Result<EmpiricalCovariance> {
    let dt = sim.dt;
    for h in [h_q, h_p] {
        if (h.grid.dt() - dt).abs() > 1e-9 * dt {
            return Err(Error::Domain(format!(
                "filter sampled at dt = {:e} s, record at {:e} s",
                h.grid.dt(),
                dt
            )));
        }
    }
    let (tq, tp) = (taps(h_q, dt), taps(h_p, dt));
    let tau = correlation_time(&tq, dt).max(correlation_time(&tp, dt));
    let n = sim.y.len();
    if (n as f64) * dt < 100.0 * tau {
        return Err(Error::TooShort(format!(
            "record spans {:.3e} s, needs 100 correlation times ({:.3e} s)",
            n as f64 * dt,
            100.0 * tau
        )));
    }
    let qe = causal_convolve(&sim.y, &tq);
    let pe = causal_convolve(&sim.y, &tp);
    let skip = ((10.0 * tau / dt).ceil() as usize).max(tq.len().max(tp.len()));
    if skip >= n {
        return Err(Error::TooShort("transient exceeds record".into()));
    }
    let dq: Vec<f64> = (skip..n).map(|k| sim.q[k] - qe[k]).collect();
    let dp: Vec<f64> = (skip..n).map(|k| sim.p[k] - pe[k]).collect();
    let stats = |idx: &mut dyn Iterator<Item = usize>| -> (f64, f64, f64) {
        let (mut sq, mut sp, mut sqp, mut mq, mut mp, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for i in idx {
            sq += dq[i] * dq[i];
            sp += dp[i] * dp[i];
            sqp += dq[i] * dp[i];
            mq += dq[i];
            mp += dp[i];
            cnt += 1.0;
        }
        let (mq, mp) = (mq / cnt, mp / cnt);
        (sq / cnt - mq * mq, sp / cnt - mp * mp, sqp / cnt - mq * mp)
    };
    let len = dq.len();
    let (v_qq, v_pp, c_qp) = stats(&mut (0..len));
    let block = ((10.0 * tau / dt).ceil() as usize).clamp(1, len);
    let n_blocks = len.div_ceil(block);
    let mut rng = ChaCha8Rng::seed_from_u64(bootstrap_seed);
    let n_boot = 200;
    let mut reps = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let starts: Vec<usize> = (0..n_blocks)
            .map(|_| rand::Rng::random_range(&mut rng, 0..=len - block))
            .collect();
        let mut it = starts.iter().flat_map(|&s| s..s + block).take(len);
        reps.push(stats(&mut it));
    }
    let sd = |f: &dyn Fn(&(f64, f64, f64)) -> f64| -> f64 {
        let mean = reps.iter().map(f).sum::<f64>() / n_boot as f64;
        (reps.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / (n_boot - 1) as f64).sqrt()
    };
    Ok(EmpiricalCovariance {
        v_qq,
        v_pp,
        c_qp,
        se_qq: sd(&|r| r.0),
        se_pp: sd(&|r| r.1),
        se_qp: sd(&|r| r.2),
        n_samples: len,
        correlation_time: tau,
    })
}
