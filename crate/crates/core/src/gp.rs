//! Per-sensor, per-target spatio-temporal GP over target velocity.
//!
//! Inputs are `(position, time)` pairs and outputs are 2-D velocities. Both
//! velocity components share one scalar kernel, so a single Gram
//! factorization serves the two component means and the (isotropic)
//! predictive variance.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Sym2, Vec2};
use crate::scalar::Real;
use crate::trajectory::TrajectoryGaussian;
use crate::world::{Measurement, SensorId, TargetId};

/// Hyperparameters of the product RBF kernel plus the known noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams<T> {
    pub signal_std: T,
    pub length_space: T,
    pub length_time: T,
    pub noise_std: T,
}

impl<T: Real> KernelParams<T> {
    pub fn new(signal_std: T, length_space: T, length_time: T, noise_std: T) -> Result<Self> {
        let p = Self {
            signal_std,
            length_space,
            length_time,
            noise_std,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: T| v > T::zero() && v.is_finite();
        if pos(self.signal_std) && pos(self.length_space) && pos(self.length_time) && pos(self.noise_std) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("kernel parameters must be positive: {self:?}")))
        }
    }

    pub fn signal_var(&self) -> T {
        self.signal_std * self.signal_std
    }

    pub fn noise_var(&self) -> T {
        self.noise_std * self.noise_std
    }
}

/// A training or query input: position and absolute time in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTime<T> {
    pub position: Vec2<T>,
    pub time: T,
}

impl<T: Real> SpaceTime<T> {
    pub fn new(position: Vec2<T>, time: T) -> Self {
        Self { position, time }
    }
}

/// `σ_s² exp(−‖Δx‖²/2l_x²) exp(−Δt²/2l_τ²)`.
pub fn kernel_eval<T: Real>(a: &SpaceTime<T>, b: &SpaceTime<T>, params: &KernelParams<T>) -> T {
    let half = T::lit(0.5);
    let dx2 = (a.position - b.position).norm_sq();
    let dt = a.time - b.time;
    let ls = params.length_space;
    let lt = params.length_time;
    params.signal_var() * (-half * (dx2 / (ls * ls) + dt * dt / (lt * lt))).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityPrediction<T> {
    pub mean: Vec2<T>,
    /// Isotropic variance; the predictive covariance is `variance · I₂`.
    pub variance: T,
}

impl<T: Real> VelocityPrediction<T> {
    pub fn covariance(&self) -> Sym2<T> {
        Sym2::isotropic(self.variance)
    }
}

pub const DEFAULT_WINDOW_CAP: usize = 150;

/// Sliding-window GP of one target's velocity field as seen by one sensor
/// (or by a pool of sensors, for the centralized baseline).
#[derive(Debug, Clone)]
pub struct GpModel<T> {
    pub sensor_id: SensorId,
    pub target_id: TargetId,
    params: KernelParams<T>,
    inputs: VecDeque<SpaceTime<T>>,
    outputs: VecDeque<Vec2<T>>,
    window_cap: usize,
    revision: u64,
}

impl<T: Real> GpModel<T> {
    pub fn new(sensor_id: SensorId, target_id: TargetId, params: KernelParams<T>, window_cap: usize) -> Self {
        Self {
            sensor_id,
            target_id,
            params,
            inputs: VecDeque::new(),
            outputs: VecDeque::new(),
            window_cap: window_cap.max(1),
            revision: 0,
        }
    }

    pub fn params(&self) -> &KernelParams<T> {
        &self.params
    }

    pub fn set_params(&mut self, params: KernelParams<T>) {
        if params != self.params {
            self.params = params;
            self.revision += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn window_cap(&self) -> usize {
        self.window_cap
    }

    /// Bumped on every change to data or parameters; lets callers cache
    /// [`GpPosterior`]s.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn inputs(&self) -> impl Iterator<Item = &SpaceTime<T>> {
        self.inputs.iter()
    }

    pub fn outputs(&self) -> impl Iterator<Item = &Vec2<T>> {
        self.outputs.iter()
    }

    /// Appends a training pair directly, evicting the oldest beyond the cap.
    pub fn push(&mut self, input: SpaceTime<T>, output: Vec2<T>) {
        self.inputs.push_back(input);
        self.outputs.push_back(output);
        while self.inputs.len() > self.window_cap {
            self.inputs.pop_front();
            self.outputs.pop_front();
        }
        self.revision += 1;
    }

    /// Adds a measurement of this model's target.
    pub fn ingest(&mut self, m: &Measurement<T>) -> Result<()> {
        if m.target_id != self.target_id {
            return Err(Error::TargetMismatch {
                expected: self.target_id,
                got: m.target_id,
            });
        }
        self.push(SpaceTime::new(m.observed_position, m.time), m.observed_velocity);
        Ok(())
    }

    /// Factors the Gram matrix once for repeated prediction.
    pub fn posterior(&self) -> Result<GpPosterior<T>> {
        GpPosterior::build(self.params, self.inputs.iter().copied().collect(), self.outputs.iter().copied().collect())
    }

    /// Log marginal likelihood of the training data under `params`, summed
    /// over the two velocity components.
    pub fn log_marginal_likelihood(&self, params: &KernelParams<T>) -> Result<T> {
        let xs: Vec<_> = self.inputs.iter().copied().collect();
        let zs: Vec<_> = self.outputs.iter().copied().collect();
        log_marginal_likelihood(&xs, &zs, params)
    }
}

fn gram<T: Real>(inputs: &[SpaceTime<T>], params: &KernelParams<T>) -> Vec<T> {
    let n = inputs.len();
    let mut k = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel_eval(&inputs[i], &inputs[j], params);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] = k[i * n + i] + params.noise_var();
    }
    k
}

fn log_marginal_likelihood<T: Real>(inputs: &[SpaceTime<T>], outputs: &[Vec2<T>], params: &KernelParams<T>) -> Result<T> {
    let n = inputs.len();
    if n == 0 {
        return Ok(T::zero());
    }
    let chol = Cholesky::factor_with_jitter(&gram(inputs, params), n)?;
    let zx: Vec<T> = outputs.iter().map(|z| z.x).collect();
    let zy: Vec<T> = outputs.iter().map(|z| z.y).collect();
    let fx = chol.forward(&zx);
    let fy = chol.forward(&zy);
    let fit: T = fx.iter().chain(&fy).map(|v| *v * *v).sum();
    let nt = T::from_usize(n).expect("size fits scalar");
    Ok(-T::lit(0.5) * fit - chol.log_det() - nt * T::TAU().ln())
}

/// Factored GP posterior, ready for cheap repeated queries.
#[derive(Debug, Clone)]
pub struct GpPosterior<T> {
    params: KernelParams<T>,
    inputs: Vec<SpaceTime<T>>,
    chol: Option<Cholesky<T>>,
    alpha_x: Vec<T>,
    alpha_y: Vec<T>,
}

impl<T: Real> GpPosterior<T> {
    fn build(params: KernelParams<T>, inputs: Vec<SpaceTime<T>>, outputs: Vec<Vec2<T>>) -> Result<Self> {
        if inputs.is_empty() {
            return Ok(Self {
                params,
                inputs,
                chol: None,
                alpha_x: Vec::new(),
                alpha_y: Vec::new(),
            });
        }
        let n = inputs.len();
        let chol = Cholesky::factor_with_jitter(&gram(&inputs, &params), n)?;
        let zx: Vec<T> = outputs.iter().map(|z| z.x).collect();
        let zy: Vec<T> = outputs.iter().map(|z| z.y).collect();
        let alpha_x = chol.solve(&zx);
        let alpha_y = chol.solve(&zy);
        Ok(Self {
            params,
            inputs,
            chol: Some(chol),
            alpha_x,
            alpha_y,
        })
    }

    pub fn params(&self) -> &KernelParams<T> {
        &self.params
    }

    pub fn predict(&self, query: &SpaceTime<T>) -> VelocityPrediction<T> {
        let prior = self.params.signal_var();
        let Some(chol) = &self.chol else {
            return VelocityPrediction {
                mean: Vec2::zero(),
                variance: prior,
            };
        };
        let kstar: Vec<T> = self.inputs.iter().map(|x| kernel_eval(query, x, &self.params)).collect();
        let dot = |a: &[T]| kstar.iter().zip(a).map(|(k, a)| *k * *a).sum::<T>();
        let mean = Vec2::new(dot(&self.alpha_x), dot(&self.alpha_y));
        let v = chol.forward(&kstar);
        let reduction: T = v.iter().map(|e| *e * *e).sum();
        VelocityPrediction {
            mean,
            variance: (prior - reduction).max(T::zero()),
        }
    }

    /// Rolls the target forward under the posterior mean velocity:
    /// `x̂(τ+1) = x̂(τ) + μ(x̂(τ), τ·dt)·dt`, seeded at `x̂(k) = x_k`.
    /// Returns `x̂(k+1), …, x̂(k+H)` alongside the predictions used at
    /// `x̂(k), …, x̂(k+H−1)`.
    fn rollout(&self, x_k: Vec2<T>, k: u32, horizon: usize, dt: T) -> (Vec<Vec2<T>>, Vec<VelocityPrediction<T>>) {
        let mut path = Vec::with_capacity(horizon);
        let mut preds = Vec::with_capacity(horizon);
        let mut x = x_k;
        for step in 0..horizon {
            let tau = T::from_usize(k as usize + step).expect("step fits scalar");
            let p = self.predict(&SpaceTime::new(x, tau * dt));
            x = x + p.mean * dt;
            path.push(x);
            preds.push(p);
        }
        (path, preds)
    }

    pub fn nominal_path(&self, x_k: Vec2<T>, k: u32, horizon: usize, dt: T) -> Result<Vec<Vec2<T>>> {
        check_horizon(horizon)?;
        Ok(self.rollout(x_k, k, horizon, dt).0)
    }

    /// Gaussian over the next `horizon` positions, linearized along the
    /// nominal path. Position `τ+1` has covariance `dt²·σ²(x̂(τ))·I`, the
    /// velocity uncertainty at `x̂(τ)` integrated over one step.
    pub fn local_trajectory_pdf(&self, x_k: Vec2<T>, k: u32, horizon: usize, dt: T) -> Result<TrajectoryGaussian<T>> {
        check_horizon(horizon)?;
        let (path, preds) = self.rollout(x_k, k, horizon, dt);
        let dt2 = dt * dt;
        // floor keeps blocks SPD when the posterior variance underflows
        let floor = self.params.signal_var() * T::epsilon();
        let blocks = preds
            .iter()
            .map(|p| Sym2::isotropic((p.variance * dt2).max(floor * dt2)))
            .collect();
        TrajectoryGaussian::new(k, path, blocks)
    }
}

fn check_horizon(horizon: usize) -> Result<()> {
    if horizon == 0 {
        Err(Error::InvalidParameter("horizon must be at least 1".into()))
    } else {
        Ok(())
    }
}

/// One-shot prediction; factor once with [`GpModel::posterior`] for
/// repeated queries.
pub fn gp_predict<T: Real>(model: &GpModel<T>, query: &SpaceTime<T>) -> Result<VelocityPrediction<T>> {
    Ok(model.posterior()?.predict(query))
}

pub fn nominal_path<T: Real>(model: &GpModel<T>, x_k: Vec2<T>, k: u32, horizon: usize, dt: T) -> Result<Vec<Vec2<T>>> {
    model.posterior()?.nominal_path(x_k, k, horizon, dt)
}

pub fn local_trajectory_pdf<T: Real>(
    model: &GpModel<T>,
    x_k: Vec2<T>,
    k: u32,
    horizon: usize,
    dt: T,
) -> Result<TrajectoryGaussian<T>> {
    model.posterior()?.local_trajectory_pdf(x_k, k, horizon, dt)
}

/// Search settings for [`fit_hyperparameters`]. Bounds are on the natural
/// scale; the search runs in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions<T> {
    pub signal_std: (T, T),
    pub length_space: (T, T),
    pub length_time: (T, T),
    /// Fewer training points than this leaves the parameters unchanged.
    pub window_min: usize,
    /// Only the most recent points enter the likelihood.
    pub max_points: usize,
    /// Compass-search evaluation cap per start.
    pub max_evals_per_start: usize,
    /// Also start from the fixed grid, not only the current parameters.
    pub grid_starts: bool,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            signal_std: (T::lit(0.05), T::lit(10.0)),
            length_space: (T::lit(0.3), T::lit(50.0)),
            length_time: (T::lit(0.3), T::lit(100.0)),
            window_min: 5,
            max_points: 60,
            max_evals_per_start: 120,
            grid_starts: true,
        }
    }
}

impl<T: Real> FitOptions<T> {
    fn log_bounds(&self) -> [(T, T); 3] {
        let l = |(a, b): (T, T)| (a.ln(), b.ln());
        [l(self.signal_std), l(self.length_space), l(self.length_time)]
    }

    /// Fixed multi-start grid: the 2x2x2 quartile points of the log box.
    pub fn start_grid(&self) -> Vec<[T; 3]> {
        let b = self.log_bounds();
        let q = |(lo, hi): (T, T), f: f64| lo + (hi - lo) * T::lit(f);
        let mut out = Vec::with_capacity(8);
        for fs in [0.25, 0.75] {
            for fl in [0.25, 0.75] {
                for ft in [0.25, 0.75] {
                    out.push([q(b[0], fs), q(b[1], fl), q(b[2], ft)]);
                }
            }
        }
        out
    }
}

/// Outcome of [`fit_hyperparameters`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport<T> {
    pub params: KernelParams<T>,
    pub log_likelihood: T,
    pub evaluations: usize,
}

/// Maximizes the log marginal likelihood over `(σ_s, l_x, l_τ)` with the
/// noise level held fixed. Starts from the current parameters and from
/// every point of [`FitOptions::start_grid`], refining each by a bounded
/// compass search in log space. The result is never worse than any start.
pub fn fit_hyperparameters<T: Real>(model: &GpModel<T>, opts: &FitOptions<T>) -> FitReport<T> {
    let current = *model.params();
    let n = model.len();
    if n < opts.window_min.max(2) {
        return FitReport {
            params: current,
            log_likelihood: model.log_marginal_likelihood(&current).unwrap_or(T::neg_infinity()),
            evaluations: 0,
        };
    }
    let skip = n.saturating_sub(opts.max_points);
    let xs: Vec<_> = model.inputs().skip(skip).copied().collect();
    let zs: Vec<_> = model.outputs().skip(skip).copied().collect();
    let bounds = opts.log_bounds();
    let noise = current.noise_std;
    let to_params = |v: &[T; 3]| KernelParams {
        signal_std: v[0].exp(),
        length_space: v[1].exp(),
        length_time: v[2].exp(),
        noise_std: noise,
    };
    let mut evals = 0usize;
    let mut objective = |v: &[T; 3]| {
        evals += 1;
        log_marginal_likelihood(&xs, &zs, &to_params(v)).unwrap_or(T::neg_infinity())
    };

    let clamp = |v: [T; 3]| {
        let mut out = v;
        for d in 0..3 {
            out[d] = v[d].max(bounds[d].0).min(bounds[d].1);
        }
        out
    };
    let mut starts = vec![clamp([current.signal_std.ln(), current.length_space.ln(), current.length_time.ln()])];
    if opts.grid_starts {
        starts.extend(opts.start_grid());
    }

    let mut best_v = starts[0];
    let mut best_f = T::neg_infinity();
    for start in starts {
        let mut v = start;
        let mut f = objective(&v);
        let mut step = T::one();
        let min_step = T::lit(1e-3);
        let mut used = 1usize;
        'search: while step > min_step && used < opts.max_evals_per_start {
            for d in 0..3 {
                for sign in [T::one(), -T::one()] {
                    let mut cand = v;
                    cand[d] = (v[d] + sign * step).max(bounds[d].0).min(bounds[d].1);
                    if cand[d] == v[d] {
                        continue;
                    }
                    let fc = objective(&cand);
                    used += 1;
                    if fc > f {
                        v = cand;
                        f = fc;
                        continue 'search;
                    }
                    if used >= opts.max_evals_per_start {
                        break 'search;
                    }
                }
            }
            step = step * T::lit(0.5);
        }
        if f > best_f {
            best_f = f;
            best_v = v;
        }
    }
    if best_f.is_finite() {
        FitReport {
            params: to_params(&best_v),
            log_likelihood: best_f,
            evaluations: evals,
        }
    } else {
        FitReport {
            params: current,
            log_likelihood: best_f,
            evaluations: evals,
        }
    }
}
