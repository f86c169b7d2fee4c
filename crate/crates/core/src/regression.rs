//! MCMC over regression coefficients, knockoff coefficients, inclusion
//! indicators, noise variance, latent knockoff noise, and (in AFT mode)
//! censored responses.
//!
//! The response model, after integrating the knockoffs down to the latent
//! noise `U`, is `y = X β + Γ β̃ + U β̃ + ε` with `Γ = X(I − Ω diag(s))` and
//! `ε ~ N(0, σ² I)`. Coefficients carry a joint spike-and-slab prior in which
//! at most one of `(β_j, β̃_j)` is active, the inclusion vector `γ = δ + δ̃`
//! follows an Ising prior on the covariate graph, and `σ²` is inverse-gamma.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ggm::{self, GgmHyper, GraphAdjacency, OmegaSigma};
use crate::knockoff::{sample_u_prior, KnockoffParams, PrecisionMatrix};
use crate::linalg::{normal_logpdf, standard_normal_vector, symmetrize, CholeskyLower};

/// Hyperparameters of the regression block.
#[derive(Debug, Clone, Copy)]
pub struct RegressionHyper {
    /// Slab scale: active coefficients are `N(0, h_β σ²)`.
    pub h_beta: f64,
    /// Inverse-gamma shape for `σ²`.
    pub a_sigma: f64,
    /// Inverse-gamma rate for `σ²`.
    pub b_sigma: f64,
    /// Ising sparsity parameter `a`.
    pub a_ising: f64,
    /// Ising graph-coupling parameter `b`.
    pub b_ising: f64,
    /// Variance of the `N(0, ·)` birth proposal for a newly added coefficient.
    pub birth_proposal_var: f64,
    /// Standard deviation of the random-walk proposal in the within-model step.
    pub walk_proposal_sd: f64,
}

impl RegressionHyper {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("h_beta", self.h_beta),
            ("a_sigma", self.a_sigma),
            ("b_sigma", self.b_sigma),
            ("birth_proposal_var", self.birth_proposal_var),
            ("walk_proposal_sd", self.walk_proposal_sd),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidHyper(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for RegressionHyper {
    /// `h_β = 1`, `a_σ = b_σ = 2`, `a = b = 0.5`, birth variance `0.5`,
    /// walk sd `0.25`.
    fn default() -> Self {
        Self {
            h_beta: 1.0,
            a_sigma: 2.0,
            b_sigma: 2.0,
            a_ising: 0.5,
            b_ising: 0.5,
            birth_proposal_var: 0.5,
            walk_proposal_sd: 0.25,
        }
    }
}

/// One MCMC state.
///
/// Invariants: at most one of `delta[j]`, `delta_tilde[j]` is set; a
/// coefficient is nonzero only where its indicator is set; `sigma2 > 0`; in
/// AFT mode `y_latent` equals the observed log time on uncensored rows and
/// strictly exceeds it on censored rows.
#[derive(Debug, Clone)]
pub struct RegressionState {
    pub beta: DVector<f64>,
    pub beta_tilde: DVector<f64>,
    pub delta: Vec<bool>,
    pub delta_tilde: Vec<bool>,
    pub sigma2: f64,
    /// Latent knockoff noise, one row per observation.
    pub u: DMatrix<f64>,
    /// Working response; equals the observed response in linear mode.
    pub y_latent: DVector<f64>,
}

impl RegressionState {
    pub fn init(n: usize, p: usize, y: DVector<f64>) -> Self {
        Self {
            beta: DVector::zeros(p),
            beta_tilde: DVector::zeros(p),
            delta: vec![false; p],
            delta_tilde: vec![false; p],
            sigma2: 1.0,
            u: DMatrix::zeros(n, p),
            y_latent: y,
        }
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    /// `γ_j = δ_j + δ̃_j`.
    pub fn gamma(&self, j: usize) -> bool {
        self.delta[j] || self.delta_tilde[j]
    }

    pub fn gamma_vec(&self) -> Vec<bool> {
        (0..self.p()).map(|j| self.gamma(j)).collect()
    }

    pub fn active_count(&self) -> usize {
        (0..self.p()).filter(|&j| self.gamma(j)).count()
    }

    /// Panic (in debug builds) if any state invariant is broken.
    pub fn check_invariants(&self, data: &Dataset) {
        for j in 0..self.p() {
            assert!(!(self.delta[j] && self.delta_tilde[j]), "both indicators set at {j}");
            if !self.delta[j] {
                assert_eq!(self.beta[j], 0.0, "beta nonzero with indicator off at {j}");
            }
            if !self.delta_tilde[j] {
                assert_eq!(self.beta_tilde[j], 0.0, "beta_tilde nonzero with indicator off at {j}");
            }
        }
        assert!(self.sigma2 > 0.0, "sigma2 not positive");
        for i in 0..data.n() {
            if data.is_censored(i) {
                assert!(
                    self.y_latent[i] > data.y[i],
                    "censored latent at {i} not above truncation point"
                );
            } else {
                assert_eq!(self.y_latent[i], data.y[i], "uncensored latent moved at {i}");
            }
        }
    }
}

/// Fitted mean `m = X β + Γ β̃ + U β̃` using only active coordinates.
pub fn fitted_mean(
    x: &DMatrix<f64>,
    gx: &DMatrix<f64>,
    state: &RegressionState,
) -> DVector<f64> {
    let n = x.nrows();
    let mut m = DVector::zeros(n);
    for j in 0..state.p() {
        if state.delta[j] {
            let b = state.beta[j];
            for i in 0..n {
                m[i] += b * x[(i, j)];
            }
        }
        if state.delta_tilde[j] {
            let b = state.beta_tilde[j];
            for i in 0..n {
                m[i] += b * (gx[(i, j)] + state.u[(i, j)]);
            }
        }
    }
    m
}

/// Gaussian log-likelihood of `y` under the conditional model
/// `y ~ N(X β + Γ β̃ + U β̃, σ² I)` with `Γ = X · gamma_map`.
///
/// Reference implementation; the step functions below reproduce its ratios
/// incrementally and are cross-checked against it in tests.
pub fn loglik_conditional(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    u: &DMatrix<f64>,
    beta: &DVector<f64>,
    beta_tilde: &DVector<f64>,
    kp: &KnockoffParams,
    sigma2: f64,
) -> f64 {
    let gx = x * kp.gamma_map();
    let mean = x * beta + (&gx + u) * beta_tilde;
    let mut ll = 0.0;
    for i in 0..y.len() {
        ll += normal_logpdf(y[i], mean[i], sigma2);
    }
    ll
}

/// Unnormalized Ising log-prior `a Σ γ_j + b γᵀ G γ`.
///
/// `G` is the full symmetric adjacency, so each unordered edge between two
/// selected variables contributes `2b`.
pub fn ising_log_prior(gamma: &[bool], g: &GraphAdjacency, a: f64, b: f64) -> f64 {
    let p = gamma.len();
    let ones: f64 = gamma.iter().filter(|&&v| v).count() as f64;
    let mut quad = 0.0;
    for i in 0..p {
        if gamma[i] {
            for j in 0..p {
                if gamma[j] && g.edge(i, j) {
                    quad += 1.0;
                }
            }
        }
    }
    a * ones + b * quad
}

/// `Σ_{k≠j} g_{jk} γ_k`: adding variable `j` changes `γᵀGγ` by twice this.
fn ising_cross(state: &RegressionState, g: &GraphAdjacency, j: usize) -> f64 {
    let mut c = 0.0;
    for k in 0..state.p() {
        if k != j && state.gamma(k) && g.edge(j, k) {
            c += 1.0;
        }
    }
    c
}

struct LikelihoodCtx<'a> {
    data: &'a Dataset,
    gx: &'a DMatrix<f64>,
}

/// Which side of a pair an add move proposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Original,
    Knockoff,
}

/// One add-delete Metropolis-Hastings proposal on a uniformly chosen variable.
///
/// If `γ_j = 1` the active coefficient and its indicator are proposed removed;
/// otherwise the original or knockoff side is picked with probability 1/2 and
/// its coefficient proposed from `N(0, birth_proposal_var)`. The acceptance
/// ratio combines the conditional likelihood, the slab prior, the
/// `(δ, δ̃ | γ)` mass, the Ising prior, and the birth-proposal Hastings
/// correction. Returns whether the proposal was accepted.
pub fn step_add_delete<R: Rng>(
    state: &mut RegressionState,
    data: &Dataset,
    gx: &DMatrix<f64>,
    g: &GraphAdjacency,
    hyper: &RegressionHyper,
    propose_knockoffs: bool,
    rng: &mut R,
) -> bool {
    let ctx = LikelihoodCtx { data, gx };
    add_delete_move(state, Some(&ctx), g, hyper, propose_knockoffs, rng)
}

/// Add-delete move with the data term switched off; the chain then targets
/// the coefficient prior alone. Used for prior-recovery checks.
pub fn step_add_delete_prior_only<R: Rng>(
    state: &mut RegressionState,
    g: &GraphAdjacency,
    hyper: &RegressionHyper,
    rng: &mut R,
) -> bool {
    add_delete_move(state, None, g, hyper, true, rng)
}

fn add_delete_move<R: Rng>(
    state: &mut RegressionState,
    lik: Option<&LikelihoodCtx>,
    g: &GraphAdjacency,
    hyper: &RegressionHyper,
    propose_knockoffs: bool,
    rng: &mut R,
) -> bool {
    let p = state.p();
    let j = rng.random_range(0..p);
    let slab_var = hyper.h_beta * state.sigma2;

    // Residual r = y_latent − m for the current state (only when a data term
    // is present).
    let (resid, _rss0) = match lik {
        Some(ctx) => {
            let m = fitted_mean(&ctx.data.x, ctx.gx, state);
            let r = &state.y_latent - m;
            let rss = r.norm_squared();
            (Some(r), rss)
        }
        None => (None, 0.0),
    };

    let delta_loglik = |value: f64, column: &dyn Fn(usize) -> f64, adding: bool| -> f64 {
        // Change in log-likelihood when the fitted mean gains (adding) or
        // loses (deleting) `value * column`.
        let Some(r) = &resid else { return 0.0 };
        let n = r.len();
        let mut dot = 0.0;
        let mut sq = 0.0;
        for i in 0..n {
            let c = column(i);
            dot += r[i] * c;
            sq += c * c;
        }
        // ‖r − v c‖² − ‖r‖² = −2 v ⟨r,c⟩ + v² ‖c‖² (adding);
        // ‖r + v c‖² − ‖r‖² = +2 v ⟨r,c⟩ + v² ‖c‖² (deleting).
        let drss = if adding {
            -2.0 * value * dot + value * value * sq
        } else {
            2.0 * value * dot + value * value * sq
        };
        -drss / (2.0 * state.sigma2)
    };

    if !state.gamma(j) {
        // Add move.
        let side = if propose_knockoffs && rng.random::<bool>() {
            Side::Knockoff
        } else {
            Side::Original
        };
        let value: f64 =
            rng.sample::<f64, _>(StandardNormal) * hyper.birth_proposal_var.sqrt();
        let dll = match (&lik, side) {
            (Some(ctx), Side::Original) => {
                delta_loglik(value, &|i| ctx.data.x[(i, j)], true)
            }
            (Some(ctx), Side::Knockoff) => {
                delta_loglik(value, &|i| ctx.gx[(i, j)] + state.u[(i, j)], true)
            }
            (None, _) => 0.0,
        };
        let log_acc = dll + normal_logpdf(value, 0.0, slab_var)
            - normal_logpdf(value, 0.0, hyper.birth_proposal_var)
            + hyper.a_ising
            + 2.0 * hyper.b_ising * ising_cross(state, g, j);
        if rng.random::<f64>().ln() < log_acc {
            match side {
                Side::Original => {
                    state.delta[j] = true;
                    state.beta[j] = value;
                }
                Side::Knockoff => {
                    state.delta_tilde[j] = true;
                    state.beta_tilde[j] = value;
                }
            }
            return true;
        }
        false
    } else {
        // Delete move.
        let (side, value) = if state.delta[j] {
            (Side::Original, state.beta[j])
        } else {
            (Side::Knockoff, state.beta_tilde[j])
        };
        let dll = match (&lik, side) {
            (Some(ctx), Side::Original) => {
                delta_loglik(value, &|i| ctx.data.x[(i, j)], false)
            }
            (Some(ctx), Side::Knockoff) => {
                delta_loglik(value, &|i| ctx.gx[(i, j)] + state.u[(i, j)], false)
            }
            (None, _) => 0.0,
        };
        let log_acc = dll - normal_logpdf(value, 0.0, slab_var)
            + normal_logpdf(value, 0.0, hyper.birth_proposal_var)
            - hyper.a_ising
            - 2.0 * hyper.b_ising * ising_cross(state, g, j);
        if rng.random::<f64>().ln() < log_acc {
            match side {
                Side::Original => {
                    state.delta[j] = false;
                    state.beta[j] = 0.0;
                }
                Side::Knockoff => {
                    state.delta_tilde[j] = false;
                    state.beta_tilde[j] = 0.0;
                }
            }
            return true;
        }
        false
    }
}

/// Random-walk Metropolis refresh of every active coefficient; the proposal
/// is symmetric so the ratio is likelihood × slab prior only. Returns the
/// number of accepted refreshes.
pub fn step_within_model<R: Rng>(
    state: &mut RegressionState,
    data: &Dataset,
    gx: &DMatrix<f64>,
    hyper: &RegressionHyper,
    rng: &mut R,
) -> usize {
    let n = data.n();
    let slab_var = hyper.h_beta * state.sigma2;
    let mut resid = &state.y_latent - fitted_mean(&data.x, gx, state);
    let mut accepted = 0;
    for j in 0..state.p() {
        if !state.gamma(j) {
            continue;
        }
        let is_original = state.delta[j];
        let current = if is_original { state.beta[j] } else { state.beta_tilde[j] };
        let prop = current + rng.sample::<f64, _>(StandardNormal) * hyper.walk_proposal_sd;
        let step = prop - current;
        let mut dot = 0.0;
        let mut sq = 0.0;
        for i in 0..n {
            let c = if is_original {
                data.x[(i, j)]
            } else {
                gx[(i, j)] + state.u[(i, j)]
            };
            dot += resid[i] * c;
            sq += c * c;
        }
        let drss = -2.0 * step * dot + step * step * sq;
        let log_acc = -drss / (2.0 * state.sigma2) + normal_logpdf(prop, 0.0, slab_var)
            - normal_logpdf(current, 0.0, slab_var);
        if rng.random::<f64>().ln() < log_acc {
            for i in 0..n {
                let c = if is_original {
                    data.x[(i, j)]
                } else {
                    gx[(i, j)] + state.u[(i, j)]
                };
                resid[i] -= step * c;
            }
            if is_original {
                state.beta[j] = prop;
            } else {
                state.beta_tilde[j] = prop;
            }
            accepted += 1;
        }
    }
    accepted
}

/// Conjugate refresh `σ² ~ IG(a_σ + n/2, b_σ + RSS/2)` where the residual sum
/// of squares uses the current fitted mean.
pub fn update_sigma2<R: Rng>(
    state: &mut RegressionState,
    data: &Dataset,
    gx: &DMatrix<f64>,
    hyper: &RegressionHyper,
    rng: &mut R,
) {
    let resid = &state.y_latent - fitted_mean(&data.x, gx, state);
    let rss = resid.norm_squared();
    state.sigma2 = sample_inverse_gamma(
        hyper.a_sigma + data.n() as f64 / 2.0,
        hyper.b_sigma + rss / 2.0,
        rng,
    );
}

/// Draw from `IG(shape, rate)`: the reciprocal of a `Gamma(shape, rate)` draw.
pub fn sample_inverse_gamma<R: Rng>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters").sample(rng);
    1.0 / g
}

/// Moments of the latent-noise full conditional.
///
/// Each row is `u_i ~ N(w · r_i, Σ_U)` with `Σ_U = (A⁻¹ + β̃β̃ᵀ/σ²)⁻¹`,
/// `w = Σ_U β̃ / σ²`, and `r_i = y_i − x_iᵀβ − Γ_iᵀβ̃` the residual excluding
/// the `U β̃` term. `Σ_U` is formed by a Sherman-Morrison update of `A`.
pub fn u_conditional_moments(
    kp: &KnockoffParams,
    beta_tilde: &DVector<f64>,
    sigma2: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let a = kp.a();
    let av = a * beta_tilde;
    let denom = sigma2 + beta_tilde.dot(&av);
    let mut sigma_u = a - (&av * av.transpose()) / denom;
    symmetrize(&mut sigma_u);
    let w = &sigma_u * beta_tilde / sigma2;
    (w, sigma_u)
}

/// Redraw every row of `U` from its full conditional.
pub fn update_u<R: Rng>(
    state: &mut RegressionState,
    data: &Dataset,
    kp: &KnockoffParams,
    gx: &DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    let n = data.n();
    let p = state.p();
    let (w, sigma_u) = u_conditional_moments(kp, &state.beta_tilde, state.sigma2);
    let chol = CholeskyLower::new(&sigma_u)
        .ok_or_else(|| Error::Internal("latent-noise conditional covariance not PD".into()))?;
    // Residual without the U β̃ contribution.
    let mut resid0 = state.y_latent.clone();
    for j in 0..p {
        if state.delta[j] {
            let b = state.beta[j];
            for i in 0..n {
                resid0[i] -= b * data.x[(i, j)];
            }
        }
        if state.delta_tilde[j] {
            let b = state.beta_tilde[j];
            for i in 0..n {
                resid0[i] -= b * gx[(i, j)];
            }
        }
    }
    for i in 0..n {
        let z = standard_normal_vector(p, rng);
        let noise = chol.lower() * z;
        for j in 0..p {
            state.u[(i, j)] = w[j] * resid0[i] + noise[j];
        }
    }
    Ok(())
}

/// One draw from `N(mean, sd²)` truncated to `(lower, ∞)`.
///
/// Uses plain rejection when the truncation point is below the mean and a
/// shifted-exponential rejection sampler in the upper tail, so draws stay
/// exact arbitrarily far out.
pub fn sample_truncated_normal_above<R: Rng>(
    mean: f64,
    sd: f64,
    lower: f64,
    rng: &mut R,
) -> f64 {
    let alpha = (lower - mean) / sd;
    if alpha == f64::NEG_INFINITY {
        return mean + sd * rng.sample::<f64, _>(StandardNormal);
    }
    let z = if alpha <= 0.45 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > alpha {
                break z;
            }
        }
    } else {
        let lambda = (alpha + (alpha * alpha + 4.0).sqrt()) / 2.0;
        loop {
            let e: f64 = -rng.random::<f64>().ln();
            let z = alpha + e / lambda;
            let d = z - lambda;
            if rng.random::<f64>() < (-0.5 * d * d).exp() {
                break z;
            }
        }
    };
    mean + sd * z
}

/// Data augmentation for right-censored rows: each censored `y_latent[i]` is
/// redrawn from the fitted-mean normal truncated to `(log T*_i, ∞)`.
/// Uncensored rows are untouched.
pub fn update_censored_y<R: Rng>(
    state: &mut RegressionState,
    data: &Dataset,
    gx: &DMatrix<f64>,
    rng: &mut R,
) {
    let Some(cens) = &data.censored else { return };
    if !cens.iter().any(|&c| c) {
        return;
    }
    let mean = fitted_mean(&data.x, gx, state);
    let sd = state.sigma2.sqrt();
    for i in 0..data.n() {
        if cens[i] {
            state.y_latent[i] = sample_truncated_normal_above(mean[i], sd, data.y[i], rng);
        }
    }
}

/// Response model driven by `run_chain`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseMode {
    Linear,
    Aft,
}

/// Chain configuration.
#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub burn_in: usize,
    /// Post-burn-in iterations to keep; must be at least 1.
    pub iters: usize,
    pub seed: u64,
    pub mode: ResponseMode,
    /// Slack factor for the equicorrelated `s`.
    pub shrink: f64,
    /// Add-delete proposals per iteration.
    pub add_delete_moves: usize,
    /// When false, the knockoff machinery is disabled: no knockoff
    /// coefficients are proposed and `U` stays at zero (plain joint
    /// regression-plus-graph model).
    pub knockoffs: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            burn_in: 8_000,
            iters: 8_000,
            seed: 1,
            mode: ResponseMode::Linear,
            shrink: crate::knockoff::DEFAULT_SHRINK,
            add_delete_moves: 1,
            knockoffs: true,
        }
    }
}

/// Post-burn-in draws and accumulated summaries from one chain.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    /// `T × p` kept draws of `β`.
    pub beta: DMatrix<f64>,
    /// `T × p` kept draws of `β̃`.
    pub beta_tilde: DMatrix<f64>,
    /// `T × p` kept draws of `γ` (0/1).
    pub gamma: DMatrix<u8>,
    pub sigma2: Vec<f64>,
    /// Marginal posterior probability of inclusion per edge.
    pub edge_ppi: DMatrix<f64>,
    /// Posterior mean of the precision matrix.
    pub omega_mean: DMatrix<f64>,
    pub accept_add_delete: f64,
    pub accept_within_model: f64,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.beta.nrows()
    }

    pub fn p(&self) -> usize {
        self.beta.ncols()
    }

    pub fn beta_mean(&self) -> DVector<f64> {
        column_means(&self.beta)
    }

    pub fn beta_tilde_mean(&self) -> DVector<f64> {
        column_means(&self.beta_tilde)
    }

    pub fn gamma_ppi(&self) -> DVector<f64> {
        let t = self.gamma.nrows() as f64;
        DVector::from_fn(self.gamma.ncols(), |j, _| {
            self.gamma.column(j).iter().map(|&v| v as f64).sum::<f64>() / t
        })
    }

    pub fn sigma2_mean(&self) -> f64 {
        self.sigma2.iter().sum::<f64>() / self.sigma2.len() as f64
    }

    /// Concatenate kept draws from several chains.
    pub fn pool(chains: &[PosteriorDraws]) -> Result<PosteriorDraws> {
        let first = chains.first().ok_or(Error::EmptyDraws)?;
        let p = first.p();
        let total: usize = chains.iter().map(|c| c.n_draws()).sum();
        let mut beta = DMatrix::zeros(total, p);
        let mut beta_tilde = DMatrix::zeros(total, p);
        let mut gamma = DMatrix::zeros(total, p);
        let mut sigma2 = Vec::with_capacity(total);
        let mut edge_ppi = DMatrix::zeros(p, p);
        let mut omega_mean = DMatrix::zeros(p, p);
        let mut row = 0;
        for c in chains {
            let t = c.n_draws();
            beta.view_mut((row, 0), (t, p)).copy_from(&c.beta);
            beta_tilde.view_mut((row, 0), (t, p)).copy_from(&c.beta_tilde);
            gamma.view_mut((row, 0), (t, p)).copy_from(&c.gamma);
            sigma2.extend_from_slice(&c.sigma2);
            let wt = t as f64 / total as f64;
            edge_ppi += wt * &c.edge_ppi;
            omega_mean += wt * &c.omega_mean;
            row += t;
        }
        let k = chains.len() as f64;
        Ok(PosteriorDraws {
            beta,
            beta_tilde,
            gamma,
            sigma2,
            edge_ppi,
            omega_mean,
            accept_add_delete: chains.iter().map(|c| c.accept_add_delete).sum::<f64>() / k,
            accept_within_model: chains.iter().map(|c| c.accept_within_model).sum::<f64>() / k,
        })
    }
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let t = m.nrows() as f64;
    DVector::from_fn(m.ncols(), |j, _| m.column(j).sum() / t)
}

/// Run the full Metropolis-within-Gibbs chain.
///
/// Each iteration performs, in order: the add-delete and within-model
/// coefficient updates, the `σ²` refresh, one graph draw followed by a full
/// column sweep of `Ω`, recomputation of the knockoff parameters from the
/// updated `Σ = Ω⁻¹`, the latent-noise refresh, and (in AFT mode) the
/// censored-response augmentation. Fully deterministic given the seed.
pub fn run_chain(
    data: &Dataset,
    hyper: &RegressionHyper,
    ggm_hyper: &GgmHyper,
    config: &ChainConfig,
) -> Result<PosteriorDraws> {
    hyper.validate()?;
    if config.iters == 0 {
        return Err(Error::NoPosteriorDraws);
    }
    match config.mode {
        ResponseMode::Linear => {
            if data.has_censoring() {
                return Err(Error::InvalidData(
                    "censoring indicators present in linear mode".into(),
                ));
            }
        }
        ResponseMode::Aft => {
            if data.censored.is_none() {
                return Err(Error::InvalidData("AFT mode needs censoring indicators".into()));
            }
        }
    }

    let n = data.n();
    let p = data.p();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scatter = data.x.transpose() * &data.x;

    let mut os = OmegaSigma::identity(p);
    let mut graph = GraphAdjacency::empty(p);
    let mut state = RegressionState::init(n, p, data.y.clone());

    let mut kp = knockoff_params_from(&os, config.shrink)?;
    let mut gx = data.x.clone() * kp.gamma_map();
    if config.knockoffs {
        state.u = sample_u_prior(kp.a(), n, &mut rng)?.u;
    }
    if config.mode == ResponseMode::Aft {
        update_censored_y(&mut state, data, &gx, &mut rng);
    }

    let total = config.burn_in + config.iters;
    let mut beta = DMatrix::zeros(config.iters, p);
    let mut beta_tilde = DMatrix::zeros(config.iters, p);
    let mut gamma = DMatrix::zeros(config.iters, p);
    let mut sigma2 = Vec::with_capacity(config.iters);
    let mut graph_draws: Vec<GraphAdjacency> = Vec::with_capacity(config.iters);
    let mut omega_sum = DMatrix::zeros(p, p);
    let mut ad_accepts = 0usize;
    let mut ad_proposals = 0usize;
    let mut wm_accepts = 0usize;
    let mut wm_proposals = 0usize;

    for t in 0..total {
        // Step 1: trans-model and within-model coefficient updates.
        for _ in 0..config.add_delete_moves.max(1) {
            ad_proposals += 1;
            if step_add_delete(&mut state, data, &gx, &graph, hyper, config.knockoffs, &mut rng)
            {
                ad_accepts += 1;
            }
        }
        wm_proposals += state.active_count();
        wm_accepts += step_within_model(&mut state, data, &gx, hyper, &mut rng);

        // Step 2: noise variance.
        update_sigma2(&mut state, data, &gx, hyper, &mut rng);

        // Step 3: graph given Ω, then a full column sweep of Ω given the graph.
        graph = ggm::update_graph(os.omega(), ggm_hyper, &mut rng);
        ggm::sweep_omega(&scatter, n, &mut os, &graph, ggm_hyper, &mut rng)?;

        // Knockoff parameters follow the fresh Ω draw.
        kp = knockoff_params_from(&os, config.shrink)?;
        gx = data.x.clone() * kp.gamma_map();

        // Step 4: latent knockoff noise.
        if config.knockoffs {
            update_u(&mut state, data, &kp, &gx, &mut rng)?;
        }

        if config.mode == ResponseMode::Aft {
            update_censored_y(&mut state, data, &gx, &mut rng);
        }

        #[cfg(debug_assertions)]
        state.check_invariants(data);

        if !state.sigma2.is_finite() || state.beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLikelihood { iter: t });
        }

        if t >= config.burn_in {
            let k = t - config.burn_in;
            beta.row_mut(k).copy_from(&state.beta.transpose());
            beta_tilde.row_mut(k).copy_from(&state.beta_tilde.transpose());
            for j in 0..p {
                gamma[(k, j)] = u8::from(state.gamma(j));
            }
            sigma2.push(state.sigma2);
            graph_draws.push(graph.clone());
            omega_sum += os.omega();
        }
    }

    let edge_ppi = ggm::edge_ppi(&graph_draws)?;
    Ok(PosteriorDraws {
        beta,
        beta_tilde,
        gamma,
        sigma2,
        edge_ppi,
        omega_mean: omega_sum / config.iters as f64,
        accept_add_delete: ad_accepts as f64 / ad_proposals.max(1) as f64,
        accept_within_model: wm_accepts as f64 / wm_proposals.max(1) as f64,
    })
}

fn knockoff_params_from(os: &OmegaSigma, shrink: f64) -> Result<KnockoffParams> {
    let s = compute_s_from_sigma(os.sigma(), shrink)?;
    let omega = PrecisionMatrix::new(os.omega().clone())?;
    KnockoffParams::new(&omega, s)
}

/// Equicorrelated `s` from an already-available covariance, skipping the
/// redundant inversion done by `compute_s_equicorrelated`.
fn compute_s_from_sigma(sigma: &DMatrix<f64>, shrink: f64) -> Result<DVector<f64>> {
    let r = crate::linalg::correlation_from_covariance(sigma)?;
    let lambda_min = crate::linalg::min_eigenvalue_sym(&r);
    if lambda_min <= 0.0 {
        return Err(Error::CovarianceNotPd);
    }
    let s_corr = shrink * (2.0 * lambda_min).min(1.0);
    Ok(DVector::from_fn(sigma.nrows(), |j, _| s_corr * sigma[(j, j)]))
}

/// Derive a stream seed for chain or replicate `index` from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 step
    let mut z = base ^ index.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(0xD1B54A32D192ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
