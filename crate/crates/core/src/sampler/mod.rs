//! MCMC engine: Bayesian backfitting over trees with marginal-likelihood
//! Metropolis–Hastings structure moves and Gibbs updates for everything
//! else.

pub mod gibbs;
pub mod marginal;
pub mod moves;
pub mod prior;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{validate, Dataset, Hyperparameters, SplitGrid};
use crate::posterior::{SurfaceDraws, SurfaceEvaluator};
use crate::stats::{sample_inv_gamma, variance};
use crate::tree::Tree;
use gibbs::{gibbs_gamma, sigma2_conditional, update_half_cauchy, update_tree_scale};
use marginal::zt_times;
use moves::{propose_and_accept, MoveContext, MoveKind, TreeDesign};

/// All sampled quantities of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub trees: Vec<Tree>,
    pub sigma2: f64,
    pub sigma2_aux: f64,
    pub omega2: f64,
    pub omega2_aux: f64,
    pub gamma: Vec<f64>,
    /// `f(x_i) = Σ_a g(x_i, T_a)`
    pub fit: Vec<f64>,
}

impl ModelState {
    pub fn initial(data: &Dataset, n_trees: usize) -> Self {
        let var_y = variance(data.y());
        Self {
            trees: vec![Tree::root_only(); n_trees],
            sigma2: if var_y > 0.0 { var_y } else { 1.0 },
            sigma2_aux: 1.0,
            omega2: 1.0,
            omega2_aux: 1.0,
            gamma: vec![0.0; data.n_covariates()],
            fit: vec![0.0; data.n()],
        }
    }
}

/// Proposal and acceptance counts per move kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AcceptanceStats {
    pub proposed: [u64; 3],
    pub accepted: [u64; 3],
}

impl AcceptanceStats {
    pub fn record(&mut self, kind: MoveKind, accepted: bool) {
        self.proposed[kind.index()] += 1;
        self.accepted[kind.index()] += u64::from(accepted);
    }

    pub fn rate(&self, kind: MoveKind) -> f64 {
        let i = kind.index();
        if self.proposed[i] == 0 {
            0.0
        } else {
            self.accepted[i] as f64 / self.proposed[i] as f64
        }
    }
}

/// Retained output of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub surface: SurfaceDraws,
    pub sigma2: Vec<f64>,
    pub omega2: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub acceptance: AcceptanceStats,
}

impl ChainOutput {
    pub fn n_draws(&self) -> usize {
        self.sigma2.len()
    }

    fn append(&mut self, other: ChainOutput) {
        for d in 0..other.surface.n_draws() {
            self.surface.push(other.surface.draw(d));
        }
        self.sigma2.extend(other.sigma2);
        self.omega2.extend(other.omega2);
        self.gamma.extend(other.gamma);
        for i in 0..3 {
            self.acceptance.proposed[i] += other.acceptance.proposed[i];
            self.acceptance.accepted[i] += other.acceptance.accepted[i];
        }
    }
}

fn chain_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if k > 0 {
        rng.set_stream(k as u64 + 1);
    }
    rng
}

/// One chain with exclusive ownership of its state and random stream.
pub struct Sampler<'a> {
    data: &'a Dataset,
    hyper: Hyperparameters,
    ctx: MoveContext,
    state: ModelState,
    designs: Vec<TreeDesign>,
    contributions: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    acceptance: AcceptanceStats,
    iteration: usize,
}

impl<'a> Sampler<'a> {
    pub fn new(data: &'a Dataset, grid: &SplitGrid, hyper: &Hyperparameters) -> Result<Self> {
        Self::for_chain(data, grid, hyper, 0)
    }

    /// Chain `k` of a pooled run. Chain 0 uses stream 0; later chains skip
    /// stream 1, which simulated data draws from.
    pub fn for_chain(
        data: &'a Dataset,
        grid: &SplitGrid,
        hyper: &Hyperparameters,
        k: usize,
    ) -> Result<Self> {
        validate(data, grid, hyper)
            .map_err(|v| Error::Validation(v.into_iter().map(|m| m.0).collect()))?;
        let ctx = MoveContext::new(data, grid, hyper)?;
        let state = ModelState::initial(data, hyper.n_trees);
        let designs = state
            .trees
            .iter()
            .map(|t| TreeDesign::build(&ctx, t))
            .collect();
        Ok(Self {
            data,
            hyper: hyper.clone(),
            ctx,
            contributions: vec![vec![0.0; data.n()]; hyper.n_trees],
            state,
            designs,
            rng: chain_rng(hyper.mcmc.seed, k),
            acceptance: AcceptanceStats::default(),
            iteration: 0,
        })
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn context(&self) -> &MoveContext {
        &self.ctx
    }

    pub fn acceptance(&self) -> AcceptanceStats {
        self.acceptance
    }

    /// Replace the state, e.g. to start from a known configuration.
    pub fn set_state(&mut self, state: ModelState) -> Result<()> {
        if state.trees.len() != self.hyper.n_trees || state.gamma.len() != self.data.n_covariates()
        {
            return Err(Error::Input(
                "state does not match the model dimensions".into(),
            ));
        }
        self.designs = state
            .trees
            .iter()
            .map(|t| TreeDesign::build(&self.ctx, t))
            .collect();
        self.contributions = state
            .trees
            .iter()
            .zip(&self.designs)
            .map(|(t, d)| d.contribution(&t.leaf_effects))
            .collect();
        self.state = state;
        self.refresh_fit();
        Ok(())
    }

    fn refresh_fit(&mut self) {
        let fit = &mut self.state.fit;
        fit.iter_mut().for_each(|f| *f = 0.0);
        for g in &self.contributions {
            for (f, v) in fit.iter_mut().zip(g) {
                *f += v;
            }
        }
    }

    fn fail(&self, tree: Option<usize>, message: impl Into<String>) -> Error {
        Error::Sampler {
            iteration: self.iteration,
            tree,
            message: message.into(),
        }
    }

    /// One full sweep: every tree (structure move, leaf effects, local
    /// scale), then γ, ω² and σ² with their auxiliaries.
    pub fn sweep(&mut self) -> Result<()> {
        let n = self.data.n();
        let p = self.data.n_covariates();
        let y = self.data.y();
        let z = self.data.covariates();
        let mut residual = vec![0.0; n];

        for a in 0..self.state.trees.len() {
            for i in 0..n {
                residual[i] = y[i] - self.state.fit[i] + self.contributions[a][i];
            }
            let ztr = DMatrix::from_column_slice(p, 1, &zt_times(z, n, p, &residual));
            let nu = self.state.omega2 * self.state.trees[a].shrink.tau2;
            let outcome = propose_and_accept(
                &self.ctx,
                &mut self.state.trees[a],
                &mut self.designs[a],
                &residual,
                &ztr,
                nu,
                self.state.sigma2,
                &mut self.rng,
            )
            .map_err(|e| self.fail(Some(a), e.to_string()))?;
            if let Some(kind) = outcome.kind {
                self.acceptance.record(kind, outcome.accepted);
            }
            let mu = gibbs::gibbs_leaf_effects(&outcome.posterior, &mut self.rng);
            if mu.iter().any(|m| !m.is_finite()) {
                return Err(self.fail(Some(a), "non-finite leaf effect"));
            }
            let g = self.designs[a].contribution(&mu);
            for i in 0..n {
                self.state.fit[i] += g[i] - self.contributions[a][i];
            }
            self.contributions[a] = g;
            let tree = &mut self.state.trees[a];
            tree.leaf_effects = mu;
            update_tree_scale(
                &mut tree.shrink,
                &tree.leaf_effects,
                self.state.sigma2,
                self.state.omega2,
                &mut self.rng,
            )
            .map_err(|e| self.fail(Some(a), e.to_string()))?;
        }
        self.refresh_fit();

        // γ must be refreshed before anything that conditions on it.
        let y_minus_f: Vec<f64> = y.iter().zip(&self.state.fit).map(|(a, b)| a - b).collect();
        self.state.gamma = gibbs_gamma(
            &self.ctx.metric,
            z,
            &y_minus_f,
            self.state.sigma2,
            &mut self.rng,
        );

        let mut n_leaves = 0;
        let mut ss_over_tau = 0.0;
        for tree in &self.state.trees {
            n_leaves += tree.leaf_effects.len();
            ss_over_tau += tree.leaf_effects.iter().map(|m| m * m).sum::<f64>() / tree.shrink.tau2;
        }
        let (omega2, omega2_aux) = update_half_cauchy(
            self.state.omega2_aux,
            n_leaves,
            ss_over_tau / self.state.sigma2,
            &mut self.rng,
        )
        .map_err(|e| self.fail(None, e.to_string()))?;
        self.state.omega2 = omega2;
        self.state.omega2_aux = omega2_aux;

        let mut resid_ss = 0.0;
        for i in 0..n {
            let zg: f64 = self
                .data
                .covariate_row(i)
                .iter()
                .zip(&self.state.gamma)
                .map(|(a, b)| a * b)
                .sum();
            let r = y_minus_f[i] - zg;
            resid_ss += r * r;
        }
        let gamma_ss: f64 = self.state.gamma.iter().map(|g| g * g).sum();
        let (shape, scale) = sigma2_conditional(
            self.state.sigma2_aux,
            n,
            n_leaves,
            p,
            resid_ss,
            ss_over_tau / self.state.omega2,
            gamma_ss / self.hyper.c,
        );
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(self.fail(None, format!("nonpositive sigma2 scale {scale}")));
        }
        self.state.sigma2 = sample_inv_gamma(&mut self.rng, shape, scale);
        self.state.sigma2_aux = sample_inv_gamma(&mut self.rng, 1.0, 1.0 + 1.0 / self.state.sigma2);

        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.state.sigma2) || !positive(self.state.omega2) {
            return Err(self.fail(None, "variance left the positive reals"));
        }
        if let Some(a) = self
            .state
            .trees
            .iter()
            .position(|t| !positive(t.shrink.tau2))
        {
            return Err(self.fail(Some(a), "tree scale left the positive reals"));
        }
        self.iteration += 1;
        Ok(())
    }

    /// Run burn-in and sampling, retaining every `thin`-th post-burn-in
    /// sweep.
    pub fn run(mut self, evaluator: &SurfaceEvaluator) -> Result<ChainOutput> {
        let mcmc = self.hyper.mcmc;
        for _ in 0..mcmc.burn_in {
            self.sweep()?;
        }
        let mut out = ChainOutput {
            surface: SurfaceDraws::new(evaluator.grid_x.clone(), evaluator.n_times, evaluator.x0),
            sigma2: Vec::new(),
            omega2: Vec::new(),
            gamma: Vec::new(),
            acceptance: AcceptanceStats::default(),
        };
        for it in 0..mcmc.iterations {
            self.sweep()?;
            if (it + 1) % mcmc.thin == 0 {
                let surface = evaluator.evaluate(&self.state.trees, self.ctx.grid());
                if surface.iter().any(|v| !v.is_finite()) {
                    return Err(self.fail(None, "non-finite surface value"));
                }
                out.surface.push(&surface);
                out.sigma2.push(self.state.sigma2);
                out.omega2.push(self.state.omega2);
                out.gamma.push(self.state.gamma.clone());
            }
        }
        out.acceptance = self.acceptance;
        Ok(out)
    }
}

/// Validate inputs, run `hyper.mcmc.chains` independent chains in parallel
/// and return their retained draws, evaluated on `grid_x × 1..T` and pooled
/// in chain order.
pub fn run_chain(
    data: &Dataset,
    grid: &SplitGrid,
    hyper: &Hyperparameters,
    grid_x: &[f64],
) -> Result<ChainOutput> {
    validate(data, grid, hyper)
        .map_err(|v| Error::Validation(v.into_iter().map(|m| m.0).collect()))?;
    let outputs: Vec<Result<ChainOutput>> = (0..hyper.mcmc.chains)
        .into_par_iter()
        .map(|k| {
            let sampler = Sampler::for_chain(data, grid, hyper, k)?;
            let evaluator = SurfaceEvaluator::new(
                grid_x.to_vec(),
                data.n_times(),
                hyper.x0,
                sampler.context().mode(),
            );
            sampler.run(&evaluator)
        })
        .collect();
    let mut outputs = outputs.into_iter();
    let mut pooled = outputs.next().expect("at least one chain")?;
    for out in outputs {
        pooled.append(out?);
    }
    Ok(pooled)
}

/// Default evaluation grid: `size` evenly spaced values between the 0.5 and
/// 99.5 percentiles of the exposures, with `x0` inserted.
pub fn default_eval_grid(data: &Dataset, size: usize, x0: f64) -> Vec<f64> {
    let lo = crate::stats::percentile(data.exposures(), 0.5);
    let hi = crate::stats::percentile(data.exposures(), 99.5);
    let mut grid: Vec<f64> = if size <= 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..size)
            .map(|k| lo + (hi - lo) * k as f64 / (size - 1) as f64)
            .collect()
    };
    grid.push(x0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::McmcSettings;
    use rand::Rng;

    fn toy(n: usize, n_times: usize, seed: u64) -> (Dataset, SplitGrid, Hyperparameters) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n_times).map(|_| rng.random::<f64>() * 4.0).collect())
            .collect();
        let z: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, rng.random::<f64>()]).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|row| {
                let signal: f64 = row
                    .iter()
                    .take(3)
                    .map(|v| if *v > 2.0 { 0.5 } else { 0.0 })
                    .sum();
                signal + 0.3 * crate::stats::std_normal(&mut rng)
            })
            .collect();
        let data = Dataset::new(y, x, z).unwrap();
        let grid = SplitGrid::evenly_spaced(data.exposures(), 8, 5.0, 95.0, n_times);
        let mut hyper = Hyperparameters::for_dataset(&data);
        hyper.n_trees = 5;
        hyper.mcmc = McmcSettings {
            burn_in: 20,
            iterations: 30,
            thin: 3,
            seed: 11,
            chains: 1,
        };
        (data, grid, hyper)
    }

    #[test]
    fn zero_iterations_give_no_draws() {
        let (data, grid, mut hyper) = toy(30, 4, 1);
        hyper.mcmc.iterations = 0;
        let out = run_chain(&data, &grid, &hyper, &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(out.n_draws(), 0);
        assert_eq!(out.surface.n_draws(), 0);
    }

    #[test]
    fn pooled_chains_extend_the_first_chain() {
        let (data, grid, hyper) = toy(40, 5, 3);
        let gx = default_eval_grid(&data, 6, hyper.x0);
        let single = run_chain(&data, &grid, &hyper, &gx).unwrap();
        let mut pooled_hyper = hyper.clone();
        pooled_hyper.mcmc.chains = 3;
        let pooled = run_chain(&data, &grid, &pooled_hyper, &gx).unwrap();
        assert_eq!(pooled.n_draws(), 3 * single.n_draws());
        assert_eq!(pooled.surface.n_draws(), 3 * single.n_draws());
        assert_eq!(pooled.gamma.len(), 3 * single.n_draws());
        for d in 0..single.n_draws() {
            assert_eq!(pooled.surface.draw(d), single.surface.draw(d));
            assert_eq!(pooled.sigma2[d], single.sigma2[d]);
        }
        // later chains use their own streams
        let k = single.n_draws();
        assert_ne!(pooled.sigma2[k..2 * k], pooled.sigma2[2 * k..]);
        assert_ne!(pooled.sigma2[..k], pooled.sigma2[k..2 * k]);
        let mut proposed = [0; 3];
        for c in 0..3 {
            let sampler = Sampler::for_chain(&data, &grid, &hyper, c).unwrap();
            let ev = SurfaceEvaluator::new(gx.clone(), 5, hyper.x0, sampler.context().mode());
            let out = sampler.run(&ev).unwrap();
            assert_eq!(out.sigma2[..], pooled.sigma2[c * k..(c + 1) * k]);
            for i in 0..3 {
                proposed[i] += out.acceptance.proposed[i];
            }
        }
        assert_eq!(proposed, pooled.acceptance.proposed);
        assert_eq!(run_chain(&data, &grid, &pooled_hyper, &gx).unwrap(), pooled);
        pooled_hyper.mcmc.chains = 0;
        assert!(run_chain(&data, &grid, &pooled_hyper, &gx).is_err());
    }

    #[test]
    fn chain_is_deterministic_and_thinned() {
        let (data, grid, hyper) = toy(40, 5, 2);
        let gx = default_eval_grid(&data, 6, hyper.x0);
        let a = run_chain(&data, &grid, &hyper, &gx).unwrap();
        let b = run_chain(&data, &grid, &hyper, &gx).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_draws(), 10);
        assert!(a.sigma2.iter().all(|v| *v > 0.0));
        let k = gx.iter().position(|&v| v == hyper.x0).unwrap();
        for d in 0..a.surface.n_draws() {
            for t in 1..=5 {
                assert_eq!(a.surface.at(d, t, k), 0.0);
            }
        }
    }

    #[test]
    fn cached_fit_matches_recomputation() {
        let (data, grid, mut hyper) = toy(50, 6, 3);
        hyper.sigma_x = 0.4;
        let mut s = Sampler::new(&data, &grid, &hyper).unwrap();
        for _ in 0..40 {
            s.sweep().unwrap();
            let st = s.state();
            for (i, f) in st.fit.iter().enumerate() {
                let direct: f64 = st
                    .trees
                    .iter()
                    .map(|t| {
                        crate::weights::leaf_design_row(&data, &grid, i, t, s.context().mode())
                            .iter()
                            .zip(&t.leaf_effects)
                            .map(|(u, m)| u * m)
                            .sum::<f64>()
                    })
                    .sum();
                assert!((f - direct).abs() <= 1e-8 * (1.0 + direct.abs()));
            }
            assert!(st.trees.iter().all(|t| t.is_valid(&grid)));
            assert!(st
                .trees
                .iter()
                .all(|t| t.leaf_effects.len() == t.n_leaves()));
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let (data, grid, mut hyper) = toy(10, 3, 4);
        hyper.alpha = 1.5;
        assert!(matches!(
            Sampler::new(&data, &grid, &hyper),
            Err(Error::Validation(_))
        ));
    }
}
