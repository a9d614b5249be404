//! Monte-Carlo estimation of the statistical dimension of the descent
//! cone of `||D(.)||_1` at a signal, the quantity that locates the phase
//! transition of the recovery program.
//!
//! By the Moreau decomposition, `||Pi_C g||^2 = dist^2(g, C*)` where `C*`,
//! the polar of the descent cone `C`, is the cone generated by the
//! subdifferential: `{ D^T w : w_i = sigma_i on the jump support, |w_i| <= 1
//! elsewhere }`. Each Gaussian sample therefore needs one convex
//! projection onto `C*`. The inner problem is solved in the scaled
//! variables `v = tau * w` (which removes the `tau = 0` degeneracy and
//! makes the feasible set `K = {(v, tau) : v = tau*sigma on S, |v_i| <= tau
//! off S, tau >= 0}` a convex cone): accelerated box-projected gradient
//! steps in `v` at fixed `tau`, alternated with the closed-form optimal
//! rescaling of `(v, tau)` along its ray. A dual certificate — the support
//! function of the admissible `w`-box applied to the residual — bounds the
//! remaining improvement; samples whose certificate will not close are
//! re-run with a joint projected-gradient pass over `K` (exact cone
//! projection, computed by a sorted breakpoint scan) and discarded if they
//! still fail.

use crate::linops::{derive_seed, sample_gaussian_vector, GradientOperator, LinopError};
use crate::signals::Signal;
use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use thiserror::Error;

/// Default Monte-Carlo sample count for width estimates.
pub const DEFAULT_NUM_SAMPLES: usize = 200;
/// Default inner-solve tolerance on relative value change.
pub const DEFAULT_INNER_TOLERANCE: f64 = 1e-8;

/// Inner iteration budget for the primary solve of one sample.
const MAX_INNER_ITERATIONS: usize = 5000;
/// Gradient steps per block between rescaling steps.
const FISTA_BLOCK: usize = 100;
/// Certificate acceptance: residual improvement bound and Moreau residual
/// must both drop below this fraction of ||g||^2.
const CERT_TOL: f64 = 2.5e-7;

#[derive(Debug, Error, PartialEq)]
pub enum ConeError {
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error("sample has length {got}, model ambient dimension is {expected}")]
    BadSample { expected: usize, got: usize },
    #[error("invalid subdifferential model: {0}")]
    BadModel(String),
    #[error("inner solve stalled: value {value:.6e}, certificate gap {gap:.6e}")]
    InnerSolveStalled { value: f64, gap: f64 },
    #[error("width estimation needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{discarded} of {total} samples discarded; cap is 1%")]
    TooManyDiscards { discarded: usize, total: usize },
}

/// The subdifferential of `||D(.)||_1` at a signal: gradient-domain signs
/// on the jump support, a free `[-1, 1]` box elsewhere. Gradient-domain
/// index `i` corresponds to jump position `nu = i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdifferentialModel {
    n: usize,
    /// +-1 on the support, 0 on free coordinates; length n - 1.
    sigma: Array1<f64>,
    fixed: Vec<bool>,
    /// Cached power-iteration estimate of ||D||^2 (gradient Lipschitz).
    lipschitz: f64,
}

impl SubdifferentialModel {
    pub fn from_signal(signal: &Signal) -> Self {
        let n = signal.n();
        let mut sigma = Array1::zeros(n - 1);
        let mut fixed = vec![false; n - 1];
        for (&nu, &sgn) in signal.jump_support().iter().zip(signal.jump_signs().iter()) {
            sigma[nu - 1] = sgn;
            fixed[nu - 1] = true;
        }
        Self::with_lipschitz(n, sigma, fixed)
    }

    /// Build directly from jump positions (`nu` in `{1, ..., n-1}`) and
    /// their signs; used for nested-support experiments.
    pub fn from_parts(n: usize, support: &[usize], signs: &[f64]) -> Result<Self, ConeError> {
        if n < 2 {
            return Err(ConeError::BadModel(format!("n must be >= 2, got {n}")));
        }
        if support.len() != signs.len() {
            return Err(ConeError::BadModel(format!(
                "{} support positions but {} signs",
                support.len(),
                signs.len()
            )));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConeError::BadModel("support must be strictly increasing".into()));
        }
        let mut sigma = Array1::zeros(n - 1);
        let mut fixed = vec![false; n - 1];
        for (&nu, &sgn) in support.iter().zip(signs.iter()) {
            if nu < 1 || nu > n - 1 {
                return Err(ConeError::BadModel(format!(
                    "jump position {nu} out of range 1..={}",
                    n - 1
                )));
            }
            if sgn != 1.0 && sgn != -1.0 {
                return Err(ConeError::BadModel(format!("sign must be +-1, got {sgn}")));
            }
            sigma[nu - 1] = sgn;
            fixed[nu - 1] = true;
        }
        Ok(Self::with_lipschitz(n, sigma, fixed))
    }

    fn with_lipschitz(n: usize, sigma: Array1<f64>, fixed: Vec<bool>) -> Self {
        let lipschitz = GradientOperator::new(n)
            .expect("n >= 2 checked by callers")
            .norm_sq_estimate(200)
            .max(1e-3);
        Self {
            n,
            sigma,
            fixed,
            lipschitz,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.n
    }

    pub fn gradient_dim(&self) -> usize {
        self.n - 1
    }

    pub fn support_size(&self) -> usize {
        self.fixed.iter().filter(|&&f| f).count()
    }

    pub fn free_size(&self) -> usize {
        self.gradient_dim() - self.support_size()
    }

    pub fn signs(&self) -> ArrayView1<'_, f64> {
        self.sigma.view()
    }

    fn pin_and_clamp(&self, v: &mut Array1<f64>, tau: f64) {
        for i in 0..v.len() {
            if self.fixed[i] {
                v[i] = tau * self.sigma[i];
            } else {
                v[i] = v[i].clamp(-tau, tau);
            }
        }
    }
}

/// Outcome of projecting one sample onto the polar cone.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarProjection {
    /// `dist^2(g, C*) = ||Pi_C g||^2`.
    pub distance_sq: f64,
    /// The projection point `p* = D^T v*` in the polar cone.
    pub projection: Array1<f64>,
    /// Scale `tau*` of the minimizer.
    pub scale: f64,
    pub inner_iterations: usize,
    /// Bound on the value improvement still available along the best
    /// single cone generator; small means certified optimal.
    pub certificate_gap: f64,
}

/// Monte-Carlo statistical-dimension estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeWidthEstimate {
    pub delta_hat: f64,
    /// Sample standard deviation divided by sqrt(kept samples).
    pub standard_error: f64,
    /// Samples that entered the mean (requested minus discarded).
    pub num_samples: usize,
    pub discarded: usize,
    pub inner_tolerance: f64,
    pub seed: u64,
}

struct InnerState {
    v: Array1<f64>,
    tau: f64,
    value: f64,
    iterations: usize,
}

struct Workspace {
    grad: GradientOperator,
    residual: Array1<f64>,  // length n
    grad_buf: Array1<f64>,  // length n - 1
    apply_buf: Array1<f64>, // length n
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            grad: GradientOperator::new(n).expect("n >= 2"),
            residual: Array1::zeros(n),
            grad_buf: Array1::zeros(n - 1),
            apply_buf: Array1::zeros(n),
        }
    }

    /// `||g - D^T v||^2`, leaving `D^T v - g` in `self.residual`.
    fn value(&mut self, g: ArrayView1<f64>, v: &Array1<f64>) -> f64 {
        self.grad.apply_adjoint_into(v.view(), &mut self.residual);
        let mut acc = 0.0;
        for (r, gi) in self.residual.iter_mut().zip(g.iter()) {
            *r -= gi;
            acc += *r * *r;
        }
        acc
    }

    /// Gradient of `0.5 ||g - D^T v||^2` at `v` into `grad_buf`.
    fn gradient(&mut self, g: ArrayView1<f64>, v: &Array1<f64>) {
        self.grad.apply_adjoint_into(v.view(), &mut self.apply_buf);
        for (a, gi) in self.apply_buf.iter_mut().zip(g.iter()) {
            *a -= gi;
        }
        let apply_buf = self.apply_buf.view();
        self.grad.apply_into(apply_buf, &mut self.grad_buf);
    }
}

/// Optimal rescaling of `(v, tau)` along its ray: `c* = max(0, <g, D^T v> /
/// ||D^T v||^2)`, floored so the box never collapses entirely.
fn rescale(ws: &mut Workspace, g: ArrayView1<f64>, v: &mut Array1<f64>, tau: &mut f64, floor: f64) {
    ws.grad.apply_adjoint_into(v.view(), &mut ws.apply_buf);
    let denom = ws.apply_buf.dot(&ws.apply_buf);
    if denom <= 0.0 || *tau <= 0.0 {
        return;
    }
    let c = (g.dot(&ws.apply_buf) / denom).max(0.0);
    let new_tau = (c * *tau).max(floor);
    let c_eff = new_tau / *tau;
    if c_eff != 1.0 {
        v.mapv_inplace(|x| x * c_eff);
        *tau = new_tau;
    }
}

struct Certificate {
    gap: f64,
    moreau: f64,
}

/// Dual optimality certificate at `v`: with residual `r = g - D^T v`, the
/// support function of the admissible box applied to `D r` bounds the best
/// ascent over unit-scale generators; `slack^2 / ||D^T w_bar||^2` then
/// bounds the value improvement available along that generator. The
/// Moreau term `2 |<r, D^T v>|` is the ray-optimality residual.
fn certificate(ws: &mut Workspace, model: &SubdifferentialModel, g: ArrayView1<f64>, v: &Array1<f64>) -> Certificate {
    ws.value(g, v);
    // ws.residual now holds D^T v - g = -r; p = D^T v = residual + g.
    let mut r_dot_p = 0.0;
    for (ri, gi) in ws.residual.iter().zip(g.iter()) {
        r_dot_p += (-ri) * (ri + gi);
    }
    let residual = ws.residual.view();
    // grad_buf = D (D^T v - g) = -D r.
    ws.grad.apply_into(residual, &mut ws.grad_buf);
    let mut slack = 0.0;
    let mut w_bar = Array1::<f64>::zeros(model.gradient_dim());
    for i in 0..model.gradient_dim() {
        let dri = -ws.grad_buf[i];
        if model.fixed[i] {
            slack += model.sigma[i] * dri;
            w_bar[i] = model.sigma[i];
        } else {
            slack += dri.abs();
            w_bar[i] = if dri > 0.0 {
                1.0
            } else if dri < 0.0 {
                -1.0
            } else {
                0.0
            };
        }
    }
    let gap = if slack > 0.0 {
        ws.grad.apply_adjoint_into(w_bar.view(), &mut ws.apply_buf);
        let qn = ws.apply_buf.dot(&ws.apply_buf);
        if qn > 0.0 {
            slack * slack / qn
        } else {
            0.0
        }
    } else {
        0.0
    };
    Certificate {
        gap,
        moreau: 2.0 * r_dot_p.abs(),
    }
}

/// Accelerated projected-gradient block at fixed `tau`. Returns the number
/// of iterations consumed.
fn fista_block(
    ws: &mut Workspace,
    model: &SubdifferentialModel,
    g: ArrayView1<f64>,
    state: &mut InnerState,
    steps: usize,
) -> usize {
    if model.free_size() == 0 || steps == 0 {
        return 0;
    }
    let step = 1.0 / model.lipschitz;
    let mut v_cur = state.v.clone();
    let mut f_cur = state.value;
    let mut w = v_cur.clone();
    let mut t = 1.0f64;
    let mut used = 0;
    for _ in 0..steps {
        ws.gradient(g, &w);
        let mut v_next = &w - &(step * &ws.grad_buf);
        model.pin_and_clamp(&mut v_next, state.tau);
        let mut f_next = ws.value(g, &v_next);
        used += 1;
        if f_next > f_cur {
            // Momentum overshoot: restart from the current point.
            ws.gradient(g, &v_cur);
            v_next = &v_cur - &(step * &ws.grad_buf);
            model.pin_and_clamp(&mut v_next, state.tau);
            f_next = ws.value(g, &v_next);
            t = 1.0;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        for i in 0..w.len() {
            w[i] = v_next[i] + beta * (v_next[i] - v_cur[i]);
        }
        v_cur = v_next;
        f_cur = f_next;
        t = t_next;
    }
    state.v = v_cur;
    state.value = f_cur;
    used
}

/// Exact Euclidean projection of `(a, b)` onto the cone
/// `K = {(v, tau) : v_i = tau sigma_i on S, |v_i| <= tau off S, tau >= 0}`.
/// The optimal `tau` is the root of a piecewise-linear increasing
/// function; candidates come from a sorted breakpoint scan and the best
/// one is selected by exact evaluation.
pub fn project_scaled_subdifferential(
    model: &SubdifferentialModel,
    a: ArrayView1<f64>,
    b: f64,
) -> (Array1<f64>, f64) {
    let k = model.gradient_dim();
    assert_eq!(a.len(), k, "projection input must have gradient dimension");
    let mut fixed_dot = 0.0; // sum sigma_i a_i over S
    let mut fixed_sq = 0.0; // sum a_i^2 over S
    let mut ks = 0usize;
    let mut mags: Vec<f64> = Vec::with_capacity(k);
    for i in 0..k {
        if model.fixed[i] {
            fixed_dot += model.sigma[i] * a[i];
            fixed_sq += a[i] * a[i];
            ks += 1;
        } else {
            mags.push(a[i].abs());
        }
    }
    mags.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let f = mags.len();
    // Suffix sums of magnitudes and squared magnitudes.
    let mut suf = vec![0.0; f + 1];
    let mut suf_sq = vec![0.0; f + 1];
    for i in (0..f).rev() {
        suf[i] = suf[i + 1] + mags[i];
        suf_sq[i] = suf_sq[i + 1] + mags[i] * mags[i];
    }
    let psi = |tau: f64| -> f64 {
        let idx = mags.partition_point(|&c| c <= tau);
        let active = (f - idx) as f64;
        (tau - b) * (tau - b)
            + (ks as f64 * tau * tau - 2.0 * tau * fixed_dot + fixed_sq)
            + (suf_sq[idx] - 2.0 * tau * suf[idx] + active * tau * tau)
    };
    let mut best_tau = 0.0;
    let mut best_val = psi(0.0);
    for idx in 0..=f {
        let cnt = (f - idx) as f64;
        let denom = 1.0 + ks as f64 + cnt;
        let num = b + fixed_dot + suf[idx];
        let mut tau = num / denom;
        let lower = if idx == 0 { 0.0 } else { mags[idx - 1] };
        if tau < lower {
            tau = lower;
        }
        if idx < f && tau > mags[idx] {
            tau = mags[idx];
        }
        if tau < 0.0 {
            tau = 0.0;
        }
        let val = psi(tau);
        if val < best_val {
            best_val = val;
            best_tau = tau;
        }
    }
    let mut v = Array1::zeros(k);
    for i in 0..k {
        if model.fixed[i] {
            v[i] = best_tau * model.sigma[i];
        } else {
            v[i] = a[i].clamp(-best_tau, best_tau);
        }
    }
    (v, best_tau)
}

/// Joint accelerated projected gradient over `(v, tau) in K`; the fallback
/// when the alternating pass leaves a certificate gap.
#[allow(clippy::too_many_arguments)]
fn rescue_pass(
    ws: &mut Workspace,
    model: &SubdifferentialModel,
    g: ArrayView1<f64>,
    state: &mut InnerState,
    budget: usize,
    inner_tolerance: f64,
    cert_tol: f64,
    floor: f64,
) {
    let step = 1.0 / model.lipschitz;
    let (v0, tau0) = project_scaled_subdifferential(model, state.v.view(), state.tau);
    state.v = v0;
    state.tau = tau0;
    state.value = ws.value(g, &state.v);

    let mut v_cur = state.v.clone();
    let mut tau_cur = state.tau;
    let mut f_cur = state.value;
    let mut w_v = v_cur.clone();
    let mut w_tau = tau_cur;
    let mut t = 1.0f64;
    let mut last_check_value = f_cur;

    for it in 1..=budget {
        ws.gradient(g, &w_v);
        let cand = &w_v - &(step * &ws.grad_buf);
        let (mut v_next, tau_next) = project_scaled_subdifferential(model, cand.view(), w_tau);
        let mut f_next = ws.value(g, &v_next);
        let mut tau_next = tau_next;
        if f_next > f_cur {
            ws.gradient(g, &v_cur);
            let cand = &v_cur - &(step * &ws.grad_buf);
            let (vv, tt) = project_scaled_subdifferential(model, cand.view(), tau_cur);
            v_next = vv;
            tau_next = tt;
            f_next = ws.value(g, &v_next);
            t = 1.0;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        for i in 0..w_v.len() {
            w_v[i] = v_next[i] + beta * (v_next[i] - v_cur[i]);
        }
        w_tau = (tau_next + beta * (tau_next - tau_cur)).max(0.0);
        v_cur = v_next;
        tau_cur = tau_next;
        f_cur = f_next;
        t = t_next;
        state.iterations += 1;

        if it % 50 == 0 || it == budget {
            state.v = v_cur.clone();
            state.tau = tau_cur;
            rescale(ws, g, &mut state.v, &mut state.tau, floor);
            state.value = ws.value(g, &state.v);
            let cert = certificate(ws, model, g, &state.v);
            let stalled =
                (last_check_value - state.value).abs() <= inner_tolerance * state.value.max(1.0);
            last_check_value = state.value;
            if cert.gap <= cert_tol && cert.moreau <= cert_tol && stalled {
                return;
            }
            // Resume from the rescaled point with fresh momentum.
            v_cur = state.v.clone();
            tau_cur = state.tau;
            f_cur = state.value;
            w_v = v_cur.clone();
            w_tau = tau_cur;
            t = 1.0;
        }
    }
    state.v = v_cur;
    state.tau = tau_cur;
    state.value = f_cur;
}

/// Squared distance from `g` to the cone generated by the subdifferential,
/// together with the projection point. Errors when the inner solve cannot
/// certify optimality within its budget.
pub fn polar_cone_distance_sq(
    g: ArrayView1<f64>,
    model: &SubdifferentialModel,
    inner_tolerance: f64,
) -> Result<PolarProjection, ConeError> {
    let n = model.ambient_dim();
    if g.len() != n {
        return Err(ConeError::BadSample {
            expected: n,
            got: g.len(),
        });
    }
    let mut ws = Workspace::new(n);
    let g_norm_sq = g.dot(&g);
    if g_norm_sq == 0.0 {
        return Ok(PolarProjection {
            distance_sq: 0.0,
            projection: Array1::zeros(n),
            scale: 0.0,
            inner_iterations: 0,
            certificate_gap: 0.0,
        });
    }
    let scale_sq = g_norm_sq.max(1.0);
    let cert_tol = CERT_TOL * scale_sq;
    let floor = 1e-12 * (1.0 + g_norm_sq.sqrt());

    // Initial point: the sign pattern at its optimal scale, or a wide box
    // when the support is empty.
    let mut state = InnerState {
        v: model.sigma.clone(),
        tau: 1.0,
        value: 0.0,
        iterations: 0,
    };
    if model.support_size() > 0 {
        state.tau = 1.0;
        rescale(&mut ws, g, &mut state.v, &mut state.tau, floor);
    } else {
        state.tau = g_norm_sq.sqrt();
        state.v.fill(0.0);
    }
    state.value = ws.value(g, &state.v);

    let mut prev_value = f64::INFINITY;
    loop {
        let remaining = MAX_INNER_ITERATIONS.saturating_sub(state.iterations);
        if remaining == 0 {
            break;
        }
        let used = fista_block(&mut ws, model, g, &mut state, FISTA_BLOCK.min(remaining));
        state.iterations += used;
        rescale(&mut ws, g, &mut state.v, &mut state.tau, floor);
        state.value = ws.value(g, &state.v);
        // Box-binding relaxation: when most free coordinates sit on the
        // boundary the optimal scale lies above tau; enlarging the box
        // keeps the iterate feasible and the value unchanged.
        if model.free_size() > 0 && state.tau > 0.0 {
            let edge = state.tau * (1.0 - 1e-9);
            let binding = (0..model.gradient_dim())
                .filter(|&i| !model.fixed[i] && state.v[i].abs() >= edge)
                .count();
            if binding * 4 >= model.free_size() {
                state.tau *= 2.0;
            }
        }
        // Stall detection is relative to the current value so near-zero
        // distances (cone members) are resolved to full precision.
        let stalled = (prev_value - state.value).abs() <= inner_tolerance * state.value.max(1.0);
        prev_value = state.value;
        if stalled || used == 0 {
            let cert = certificate(&mut ws, model, g, &state.v);
            if cert.gap <= cert_tol && cert.moreau <= cert_tol {
                break;
            }
            if used == 0 && model.free_size() == 0 {
                // Pure ray: the rescale step is already exact.
                break;
            }
            if state.iterations >= MAX_INNER_ITERATIONS {
                break;
            }
        }
    }

    let cert = certificate(&mut ws, model, g, &state.v);
    let mut final_cert = cert;
    if final_cert.gap > cert_tol || final_cert.moreau > cert_tol {
        rescue_pass(
            &mut ws,
            model,
            g,
            &mut state,
            2 * MAX_INNER_ITERATIONS,
            inner_tolerance,
            cert_tol,
            floor,
        );
        final_cert = certificate(&mut ws, model, g, &state.v);
    }
    if final_cert.gap > cert_tol || final_cert.moreau > cert_tol {
        return Err(ConeError::InnerSolveStalled {
            value: state.value,
            gap: final_cert.gap,
        });
    }

    let projection = GradientOperator::new(n)
        .unwrap()
        .apply_adjoint(state.v.view())
        .unwrap();
    Ok(PolarProjection {
        distance_sq: state.value,
        projection,
        scale: state.tau,
        inner_iterations: state.iterations,
        certificate_gap: final_cert.gap,
    })
}

/// Sample mean of [`polar_cone_distance_sq`] over i.i.d. standard Gaussian
/// vectors with per-sample seeds derived from `(seed, index)`; the result
/// is identical for any worker count.
pub fn estimate_statistical_dimension(
    signal: &Signal,
    num_samples: usize,
    seed: u64,
    inner_tolerance: f64,
) -> Result<ConeWidthEstimate, ConeError> {
    let model = SubdifferentialModel::from_signal(signal);
    estimate_statistical_dimension_model(&model, num_samples, seed, inner_tolerance)
}

/// Model-level variant of [`estimate_statistical_dimension`].
pub fn estimate_statistical_dimension_model(
    model: &SubdifferentialModel,
    num_samples: usize,
    seed: u64,
    inner_tolerance: f64,
) -> Result<ConeWidthEstimate, ConeError> {
    if num_samples < 2 {
        return Err(ConeError::TooFewSamples(num_samples));
    }
    let results: Vec<Result<f64, ConeError>> = (0..num_samples)
        .into_par_iter()
        .map(|idx| {
            let g = sample_gaussian_vector(model.ambient_dim(), derive_seed(seed, &[idx as u64]));
            polar_cone_distance_sq(g.view(), model, inner_tolerance).map(|p| p.distance_sq)
        })
        .collect();
    let kept: Vec<f64> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let discarded = num_samples - kept.len();
    if discarded * 100 > num_samples {
        return Err(ConeError::TooManyDiscards {
            discarded,
            total: num_samples,
        });
    }
    let count = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / count;
    let var = kept.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1.0);
    Ok(ConeWidthEstimate {
        delta_hat: mean,
        standard_error: (var / count).sqrt(),
        num_samples: kept.len(),
        discarded,
        inner_tolerance,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{make_dense_jump, make_equidistant, LevelSource};
    use ndarray::Array1;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_n6_s1() -> SubdifferentialModel {
        let signal = make_dense_jump(6, 1).unwrap();
        SubdifferentialModel::from_signal(&signal)
    }

    #[test]
    fn cone_member_has_zero_distance() {
        let signal = make_equidistant(9, 2, LevelSource::Seeded(3)).unwrap();
        let model = SubdifferentialModel::from_signal(&signal);
        let grad = GradientOperator::new(9).unwrap();
        // w agrees with sigma on S and sits inside the box elsewhere.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut w = Array1::zeros(8);
        for i in 0..8 {
            w[i] = if model.fixed[i] {
                model.sigma[i]
            } else {
                rng.random_range(-1.0..1.0)
            };
        }
        let g = 3.0 * &grad.apply_adjoint(w.view()).unwrap();
        let proj = polar_cone_distance_sq(g.view(), &model, DEFAULT_INNER_TOLERANCE).unwrap();
        let g_norm_sq = g.dot(&g);
        assert!(
            proj.distance_sq <= 1e-8 * g_norm_sq.max(1.0),
            "distance {}",
            proj.distance_sq
        );
    }

    #[test]
    fn constant_signal_all_ones_distance_is_n() {
        for n in [5, 20, 57] {
            let signal = Signal::from_values(Array1::from_elem(n, 1.5)).unwrap();
            let model = SubdifferentialModel::from_signal(&signal);
            let g = Array1::from_elem(n, 1.0);
            let proj = polar_cone_distance_sq(g.view(), &model, DEFAULT_INNER_TOLERANCE).unwrap();
            assert!(
                (proj.distance_sq - n as f64).abs() <= 1e-6 * n as f64,
                "n={n}: {}",
                proj.distance_sq
            );
        }
    }

    #[test]
    fn constant_signal_matches_zero_sum_subspace_formula() {
        // Polar cone = zero-sum subspace; dist^2(g, V) = (sum g)^2 / n.
        let n = 40;
        let signal = Signal::from_values(Array1::zeros(n)).unwrap();
        let model = SubdifferentialModel::from_signal(&signal);
        for seed in 0..20u64 {
            let g = sample_gaussian_vector(n, seed);
            let expected = g.sum() * g.sum() / n as f64;
            let proj = polar_cone_distance_sq(g.view(), &model, DEFAULT_INNER_TOLERANCE).unwrap();
            let g_norm_sq = g.dot(&g);
            assert!(
                (proj.distance_sq - expected).abs() <= 1e-6 * g_norm_sq,
                "seed {seed}: got {} expected {expected}",
                proj.distance_sq
            );
        }
    }

    #[test]
    fn monotone_signal_matches_ray_formula() {
        // All n-1 jumps up: polar cone is the single ray through D^T 1.
        let n = 20;
        let values = Array1::from_shape_fn(n, |i| i as f64);
        let signal = Signal::from_values(values).unwrap();
        let model = SubdifferentialModel::from_signal(&signal);
        let grad = GradientOperator::new(n).unwrap();
        let u = grad.apply_adjoint(Array1::from_elem(n - 1, 1.0).view()).unwrap();
        let u_norm_sq = u.dot(&u);
        for seed in 100..130u64 {
            let g = sample_gaussian_vector(n, seed);
            let along = g.dot(&u).max(0.0);
            let expected = g.dot(&g) - along * along / u_norm_sq;
            let proj = polar_cone_distance_sq(g.view(), &model, DEFAULT_INNER_TOLERANCE).unwrap();
            assert!(
                (proj.distance_sq - expected).abs() <= 1e-6 * g.dot(&g),
                "seed {seed}: got {} expected {expected}",
                proj.distance_sq
            );
        }
    }

    /// Brute-force oracle: coarse grid over the free box coordinates with
    /// the closed-form optimal scale per direction, refined by cyclic
    /// coordinate descent.
    fn grid_search_oracle(model: &SubdifferentialModel, g: ArrayView1<f64>) -> f64 {
        let grad = GradientOperator::new(model.ambient_dim()).unwrap();
        let free: Vec<usize> = (0..model.gradient_dim())
            .filter(|&i| !model.fixed[i])
            .collect();
        let ray_value = |w: &Array1<f64>| -> f64 {
            let q = grad.apply_adjoint(w.view()).unwrap();
            let qn = q.dot(&q);
            let g_sq = g.dot(&g);
            if qn == 0.0 {
                return g_sq;
            }
            let along = g.dot(&q).max(0.0);
            g_sq - along * along / qn
        };
        let levels: Vec<f64> = (0..9).map(|k| -1.0 + 0.25 * k as f64).collect();
        let mut best_w = Array1::zeros(model.gradient_dim());
        for i in 0..model.gradient_dim() {
            if model.fixed[i] {
                best_w[i] = model.sigma[i];
            }
        }
        let mut best = ray_value(&best_w);
        let mut idx = vec![0usize; free.len()];
        loop {
            let mut w = best_w.clone();
            for (pos, &fi) in free.iter().enumerate() {
                w[fi] = levels[idx[pos]];
            }
            let val = ray_value(&w);
            if val < best {
                best = val;
                best_w = w;
            }
            // Odometer increment over the grid.
            let mut carry = true;
            for digit in idx.iter_mut() {
                if carry {
                    *digit += 1;
                    if *digit == levels.len() {
                        *digit = 0;
                    } else {
                        carry = false;
                    }
                }
            }
            if carry {
                break;
            }
        }
        // Local refinement: golden-section per free coordinate, a few sweeps.
        let phi = 0.5 * (3.0 - 5f64.sqrt());
        for _ in 0..60 {
            for &fi in &free {
                let mut lo = -1.0f64;
                let mut hi = 1.0f64;
                for _ in 0..40 {
                    let a = lo + phi * (hi - lo);
                    let b = hi - phi * (hi - lo);
                    let mut wa = best_w.clone();
                    wa[fi] = a;
                    let mut wb = best_w.clone();
                    wb[fi] = b;
                    if ray_value(&wa) < ray_value(&wb) {
                        hi = b;
                    } else {
                        lo = a;
                    }
                }
                best_w[fi] = 0.5 * (lo + hi);
            }
        }
        ray_value(&best_w)
    }

    #[test]
    fn grid_search_oracle_agrees_on_small_instance() {
        let model = model_n6_s1();
        for seed in [7u64, 8, 9, 10] {
            let g = sample_gaussian_vector(6, seed);
            let oracle = grid_search_oracle(&model, g.view());
            let proj = polar_cone_distance_sq(g.view(), &model, DEFAULT_INNER_TOLERANCE).unwrap();
            assert!(
                (proj.distance_sq - oracle).abs() <= 1e-4,
                "seed {seed}: solver {} oracle {}",
                proj.distance_sq,
                oracle
            );
        }
    }

    #[test]
    fn per_sample_optimality_invariants() {
        let signal = make_equidistant(24, 3, LevelSource::Seeded(11)).unwrap();
        let model = SubdifferentialModel::from_signal(&signal);
        let grad = GradientOperator::new(24).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..40u64 {
            let g = sample_gaussian_vector(24, 1000 + seed);
            let g_norm_sq = g.dot(&g);
            let proj = polar_cone_distance_sq(g.view(), &model, DEFAULT_INNER_TOLERANCE).unwrap();
            // 0 <= value <= ||g||^2.
            assert!(proj.distance_sq >= 0.0);
            assert!(proj.distance_sq <= g_norm_sq * (1.0 + 1e-12));
            // Moreau-Pythagoras: ||p||^2 + value = ||g||^2.
            let p_norm_sq = proj.projection.dot(&proj.projection);
            assert!(
                (p_norm_sq + proj.distance_sq - g_norm_sq).abs() <= 1e-6 * g_norm_sq,
                "seed {seed}"
            );
            // <g - p, p> ~ 0 and <g - p, q> <= tol for sampled directions q.
            let r = &g - &proj.projection;
            assert!(r.dot(&proj.projection).abs() <= 1e-6 * g_norm_sq);
            for _ in 0..10 {
                let mut w = Array1::zeros(23);
                for i in 0..23 {
                    w[i] = if model.fixed[i] {
                        model.sigma[i]
                    } else {
                        rng.random_range(-1.0..1.0)
                    };
                }
                let q = grad.apply_adjoint(w.view()).unwrap();
                assert!(
                    r.dot(&q) <= 1e-6 * g_norm_sq.max(1.0),
                    "seed {seed}: ascent direction left"
                );
            }
        }
    }

    #[test]
    fn support_growth_is_monotone() {
        // Nested supports with matching signs, same Gaussian samples.
        let m_small = SubdifferentialModel::from_parts(24, &[8, 16], &[1.0, 1.0]).unwrap();
        let m_large = SubdifferentialModel::from_parts(24, &[4, 8, 16], &[1.0, 1.0, 1.0]).unwrap();
        let small =
            estimate_statistical_dimension_model(&m_small, 120, 5, DEFAULT_INNER_TOLERANCE)
                .unwrap();
        let large =
            estimate_statistical_dimension_model(&m_large, 120, 5, DEFAULT_INNER_TOLERANCE)
                .unwrap();
        let slack = 2.0 * (small.standard_error + large.standard_error);
        assert!(
            large.delta_hat >= small.delta_hat - slack,
            "small {} large {}",
            small.delta_hat,
            large.delta_hat
        );
    }

    #[test]
    fn estimate_is_deterministic() {
        let signal = make_dense_jump(32, 3).unwrap();
        let a = estimate_statistical_dimension(&signal, 24, 9, DEFAULT_INNER_TOLERANCE).unwrap();
        let b = estimate_statistical_dimension(&signal, 24, 9, DEFAULT_INNER_TOLERANCE).unwrap();
        assert_eq!(a, b);
        assert!(a.delta_hat > 0.0 && a.delta_hat < 32.0);
        assert_eq!(a.discarded, 0);
    }

    #[test]
    fn too_few_samples_rejected() {
        let signal = make_dense_jump(8, 1).unwrap();
        assert!(matches!(
            estimate_statistical_dimension(&signal, 1, 0, DEFAULT_INNER_TOLERANCE),
            Err(ConeError::TooFewSamples(1))
        ));
    }

    #[test]
    fn from_parts_validation() {
        assert!(SubdifferentialModel::from_parts(8, &[1, 1], &[1.0, 1.0]).is_err());
        assert!(SubdifferentialModel::from_parts(8, &[0], &[1.0]).is_err());
        assert!(SubdifferentialModel::from_parts(8, &[8], &[1.0]).is_err());
        assert!(SubdifferentialModel::from_parts(8, &[3], &[0.5]).is_err());
        assert!(SubdifferentialModel::from_parts(8, &[3], &[1.0, -1.0]).is_err());
        let ok = SubdifferentialModel::from_parts(8, &[3, 5], &[1.0, -1.0]).unwrap();
        assert_eq!(ok.support_size(), 2);
        assert_eq!(ok.free_size(), 5);
    }

    #[test]
    fn model_mirrors_signal_supports() {
        let signal = make_dense_jump(10, 2).unwrap();
        let model = SubdifferentialModel::from_signal(&signal);
        // Jumps at 5 and 6: gradient indices 4 (up) and 5 (down).
        assert_eq!(model.sigma[4], 1.0);
        assert_eq!(model.sigma[5], -1.0);
        assert_eq!(model.support_size(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn cone_projection_is_optimal_among_samples(
            seed in 0u64..500,
            b in -3.0f64..3.0,
        ) {
            let model = SubdifferentialModel::from_parts(
                10,
                &[3, 7],
                &[1.0, -1.0],
            ).unwrap();
            let a = sample_gaussian_vector(9, seed);
            let (v, tau) = project_scaled_subdifferential(&model, a.view(), b);
            // Feasibility.
            prop_assert!(tau >= 0.0);
            for i in 0..9 {
                if model.fixed[i] {
                    prop_assert!((v[i] - tau * model.sigma[i]).abs() < 1e-12);
                } else {
                    prop_assert!(v[i].abs() <= tau + 1e-12);
                }
            }
            let dist = |vv: &Array1<f64>, tt: f64| -> f64 {
                let mut acc = (tt - b) * (tt - b);
                for i in 0..9 {
                    acc += (vv[i] - a[i]) * (vv[i] - a[i]);
                }
                acc
            };
            let best = dist(&v, tau);
            // No sampled feasible point does better.
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
            for _ in 0..50 {
                let tt: f64 = rng.random_range(0.0..5.0);
                let mut vv = Array1::zeros(9);
                for i in 0..9 {
                    vv[i] = if model.fixed[i] {
                        tt * model.sigma[i]
                    } else {
                        rng.random_range(-tt..=tt)
                    };
                }
                prop_assert!(best <= dist(&vv, tt) + 1e-9);
            }
        }
    }
}
