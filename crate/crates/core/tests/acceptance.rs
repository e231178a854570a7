//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! The replication criteria (7-9) fit 300 simulated datasets and dominate
//! the runtime.

use std::f64::consts::PI;
use std::fs;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use treedlnm::cli::cmd_fit;
use treedlnm::config::{FitSettings, RunConfig, SigmaXMode};
use treedlnm::model::{Dataset, Hyperparameters, McmcSettings, SplitGrid};
use treedlnm::sampler::marginal::log_marginal_full;
use treedlnm::sampler::moves::{propose_and_accept, MoveContext, TreeDesign};
use treedlnm::sampler::{run_chain, Sampler};
use treedlnm::simulation::{
    run_replicate, ReplicateResult, ScenarioKind, ScenarioSpec, StudySettings,
};
use treedlnm::stats::std_normal;
use treedlnm::tree::{GridRegion, Rule, Shrinkage, Tree};
use treedlnm::weights::{cell_weight, leaf_design_row, psi_weight, PrefixTable, WeightMode};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_data(rng: &mut ChaCha8Rng, n: usize, n_times: usize, p: usize, x_hi: f64) -> Dataset {
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n_times).map(|_| rng.random::<f64>() * x_hi).collect())
        .collect();
    let z: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut row = vec![1.0];
            row.extend((1..p).map(|_| std_normal(rng)));
            row
        })
        .collect();
    let y: Vec<f64> = (0..n).map(|_| std_normal(rng)).collect();
    Dataset::new(y, x, z).unwrap()
}

/// Grow `tree` to at most `max_leaves` leaves with prior-drawn rules.
fn random_tree(rng: &mut ChaCha8Rng, ctx: &MoveContext, max_leaves: usize) -> Tree {
    let mut tree = Tree::root_only();
    let target = rng.random_range(1..=max_leaves);
    while tree.n_leaves() < target {
        let leaves: Vec<_> = tree
            .layout(ctx.grid())
            .into_iter()
            .filter(|n| n.rule.is_none())
            .collect();
        let node = &leaves[rng.random_range(0..leaves.len())];
        let Some(dist) = ctx.prior.rule_prior(&node.region) else {
            if leaves
                .iter()
                .all(|l| ctx.prior.rule_prior(&l.region).is_none())
            {
                break;
            }
            continue;
        };
        tree.grow(node.id, dist.sample(rng)).unwrap();
    }
    tree.leaf_effects = vec![0.0; tree.n_leaves()];
    tree
}

fn dense_design(data: &Dataset, grid: &SplitGrid, tree: &Tree, mode: WeightMode) -> DMatrix<f64> {
    let nb = tree.n_leaves();
    let mut u = DMatrix::zeros(data.n(), nb);
    for i in 0..data.n() {
        let row = leaf_design_row(data, grid, i, tree, mode);
        for b in 0..nb {
            u[(i, b)] = row[b];
        }
    }
    u
}

fn dense_z(data: &Dataset) -> DMatrix<f64> {
    DMatrix::from_row_slice(data.n(), data.n_covariates(), data.covariates())
}

/// `log N(r; 0, Σ)` by dense Cholesky.
fn log_gauss(r: &DVector<f64>, cov: DMatrix<f64>) -> f64 {
    let n = r.len() as f64;
    let chol = cov.cholesky().expect("covariance is positive definite");
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let sol = chol.solve(r);
    -0.5 * (n * (2.0 * PI).ln() + log_det + r.dot(&sol))
}

// ---------------------------------------------------------------------------
// 1. marginal likelihood against quadrature over the leaf effects

/// `log ∫ N(R; Uμ, σ²(I + cZZᵀ)) N(μ; 0, σ²νI) dμ` by the trapezoid rule on
/// a box of ±10 marginal posterior sd.
fn quadrature_log_marginal(
    r: &DVector<f64>,
    u: &DMatrix<f64>,
    z: &DMatrix<f64>,
    c: f64,
    nu: f64,
    sigma2: f64,
) -> f64 {
    let n = r.len();
    let nb = u.ncols();
    let cov = (DMatrix::identity(n, n) + z * z.transpose() * c) * sigma2;
    let chol = cov.clone().cholesky().unwrap();
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let prec = chol.inverse();
    let log_lik = |mu: &[f64]| -> f64 {
        let res = r - u * DVector::from_column_slice(mu);
        let q = res.dot(&(&prec * &res));
        let prior: f64 = mu.iter().map(|m| m * m).sum::<f64>() / (sigma2 * nu);
        -0.5 * (n as f64 * (2.0 * PI).ln() + log_det + q)
            - 0.5 * (nb as f64 * (2.0 * PI * sigma2 * nu).ln() + prior)
    };

    // locate the mass
    let h = u.transpose() * &prec * u + DMatrix::identity(nb, nb) / (sigma2 * nu);
    let h_inv = h.clone().try_inverse().unwrap();
    let mode = &h_inv * (u.transpose() * &prec * r);
    let marg_sd: Vec<f64> = (0..nb).map(|b| h_inv[(b, b)].sqrt()).collect();
    let cond_sd: Vec<f64> = (0..nb).map(|b| 1.0 / h[(b, b)].sqrt()).collect();
    let half = 10.0;
    let points: Vec<usize> = (0..nb)
        .map(|b| {
            ((2.0 * half * marg_sd[b] / (0.4 * cond_sd[b])).ceil() as usize).clamp(61, 401) | 1
        })
        .collect();
    let steps: Vec<f64> = (0..nb)
        .map(|b| 2.0 * half * marg_sd[b] / (points[b] - 1) as f64)
        .collect();
    let peak = log_lik(mode.as_slice());

    let total: usize = points.iter().product();
    let sum: f64 = (0..total)
        .into_par_iter()
        .map(|mut k| {
            let mut mu = [0.0; 3];
            for b in 0..nb {
                let j = k % points[b];
                k /= points[b];
                mu[b] = mode[b] - half * marg_sd[b] + j as f64 * steps[b];
            }
            (log_lik(&mu[..nb]) - peak).exp()
        })
        .sum();
    peak + sum.ln() + steps.iter().map(|s| s.ln()).sum::<f64>()
}

fn criterion_marginal_quadrature() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for inst in 0..50 {
        let n = rng.random_range(3..=8);
        let n_times = rng.random_range(2..=4);
        let p = rng.random_range(1..=3);
        let data = random_data(&mut rng, n, n_times, p, 3.0);
        let s_x = rng.random_range(1..=3);
        let grid = SplitGrid::evenly_spaced(data.exposures(), s_x, 20.0, 80.0, n_times);
        let mut hyper = Hyperparameters::for_dataset(&data);
        hyper.c = rng.random_range(0.5..20.0);
        hyper.sigma_x = if inst % 2 == 0 {
            0.0
        } else {
            rng.random_range(0.1..1.0)
        };
        let ctx = MoveContext::new(&data, &grid, &hyper).unwrap();
        let tree = random_tree(&mut rng, &ctx, 3);
        let nu = rng.random_range(0.05..3.0);
        let sigma2 = rng.random_range(0.2..2.0);

        let residual = data.y();
        let design = TreeDesign::build(&ctx, &tree);
        let z = dense_z(&data);
        let r = DVector::from_column_slice(residual);
        let ztr = DMatrix::from_column_slice(z.ncols(), 1, (z.transpose() * &r).as_slice());
        let stats = design.stats(&ctx, residual, &ztr);
        let lib = log_marginal_full(&ctx.metric, &stats, r.dot(&r), &ztr, nu, sigma2).unwrap();

        let u = dense_design(&data, &grid, &tree, ctx.mode());
        let oracle = quadrature_log_marginal(&r, &u, &z, hyper.c, nu, sigma2);
        worst = worst.max((lib - oracle).abs());
    }
    outcome(
        worst <= 1e-6,
        format!("50 instances, max |Δ| = {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 2. structure chain on an enumerable space

fn batch_means_se(series: &[f64], batches: usize) -> (f64, f64) {
    let len = series.len() / batches;
    let means: Vec<f64> = series
        .chunks_exact(len)
        .map(|c| c.iter().sum::<f64>() / len as f64)
        .collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
    (m, (var / means.len() as f64).sqrt())
}

fn criterion_enumerable_chain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (n, n_times) = (20, 2);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n_times).map(|_| rng.random::<f64>() * 2.0).collect())
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|row| 0.35 * f64::from(u8::from(row[0] > 1.0)) + 0.5 * std_normal(&mut rng))
        .collect();
    let z = vec![vec![1.0]; n];
    let data = Dataset::new(y, x, z).unwrap();
    let grid = SplitGrid::new(vec![1.0], vec![1], n_times);
    let mut hyper = Hyperparameters::for_dataset(&data);
    hyper.n_trees = 1;
    hyper.max_depth = Some(1);
    hyper.c = 10.0;
    let (nu, sigma2) = (0.5, 0.3);
    let ctx = MoveContext::new(&data, &grid, &hyper).unwrap();

    // enumerate: root only, exposure split, time split
    let shapes: Vec<Tree> = vec![
        Tree::root_only(),
        {
            let mut t = Tree::root_only();
            t.grow(0, Rule::Exposure(0)).unwrap();
            t
        },
        {
            let mut t = Tree::root_only();
            t.grow(0, Rule::Time(0)).unwrap();
            t
        },
    ];
    let alpha = hyper.alpha;
    // one exposure and one time rule, equal weight 1/(2·1) each
    let prior = [1.0 - alpha, alpha * 0.5, alpha * 0.5];
    let zm = dense_z(&data);
    let r = DVector::from_column_slice(data.y());
    let base = DMatrix::identity(n, n) + &zm * zm.transpose() * hyper.c;
    let log_post: Vec<f64> = shapes
        .iter()
        .zip(prior)
        .map(|(t, pr)| {
            let u = dense_design(&data, &grid, t, WeightMode::Hard);
            let cov = (&base + &u * u.transpose() * nu) * sigma2;
            pr.ln() + log_gauss(&r, cov)
        })
        .collect();
    let mx = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = log_post.iter().map(|l| (l - mx).exp()).sum();
    let exact: Vec<f64> = log_post.iter().map(|l| (l - mx).exp() / norm).collect();

    let mut tree = Tree::root_only();
    tree.leaf_effects = vec![0.0];
    let mut design = TreeDesign::build(&ctx, &tree);
    let ztr = DMatrix::from_column_slice(1, 1, (zm.transpose() * &r).as_slice());
    let sweeps = 200_000;
    let mut series = vec![vec![0.0; sweeps]; 3];
    let mut chain_rng = ChaCha8Rng::seed_from_u64(2020);
    for s in 0..sweeps {
        propose_and_accept(
            &ctx,
            &mut tree,
            &mut design,
            data.y(),
            &ztr,
            nu,
            sigma2,
            &mut chain_rng,
        )
        .unwrap();
        let k = match tree.root.rule {
            None => 0,
            Some(Rule::Exposure(_)) => 1,
            Some(Rule::Time(_)) => 2,
        };
        series[k][s] = 1.0;
    }
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 0..3 {
        let (m, se) = batch_means_se(&series[k], 200);
        let z = (m - exact[k]).abs() / se;
        pass &= z <= 3.0;
        parts.push(format!("{:.4} vs {:.4} ({z:.2} SE)", m, exact[k]));
    }
    outcome(pass, format!("root/exposure/time: {}", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// 3. no trees: conjugate linear regression

fn criterion_conjugate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (n, p) = (200, 5);
    let mut data = random_data(&mut rng, n, 2, p, 3.0);
    let beta = [0.5, -1.0, 0.3, 0.0, 0.8];
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let zi = data.covariate_row(i);
            zi.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + 1.3 * std_normal(&mut rng)
        })
        .collect();
    let x: Vec<Vec<f64>> = (0..n).map(|i| data.exposure_row(i).to_vec()).collect();
    let z: Vec<Vec<f64>> = (0..n).map(|i| data.covariate_row(i).to_vec()).collect();
    data = Dataset::new(y, x, z).unwrap();
    let grid = SplitGrid::evenly_spaced(data.exposures(), 5, 5.0, 95.0, 2);
    let mut hyper = Hyperparameters::for_dataset(&data);
    hyper.n_trees = 0;
    hyper.c = 2.0;
    hyper.mcmc.seed = 3030;

    // closed form
    let zm = dense_z(&data);
    let yv = DVector::from_column_slice(data.y());
    let prec = zm.transpose() * &zm + DMatrix::identity(p, p) / hyper.c;
    let v = prec.clone().try_inverse().unwrap();
    let m = &v * zm.transpose() * &yv;
    let s = yv.dot(&yv) - m.dot(&(&prec * &m));
    // σ² | y ∝ s2^{-(n+1)/2} exp(−S/(2 s2)) / (1 + s2), integrated on log s2
    let centre = (s / n as f64).ln();
    let grid_pts = 40_001;
    let (lo, hi) = (centre - 2.0, centre + 2.0);
    let step = (hi - lo) / (grid_pts - 1) as f64;
    let log_dens = |u: f64| {
        let s2 = u.exp();
        u - 0.5 * (n as f64 + 1.0) * u - s / (2.0 * s2) - s2.ln_1p()
    };
    let peak = (0..grid_pts)
        .map(|k| log_dens(lo + k as f64 * step))
        .fold(f64::NEG_INFINITY, f64::max);
    let (mut z0, mut z1) = (0.0, 0.0);
    for k in 0..grid_pts {
        let u = lo + k as f64 * step;
        let w = (log_dens(u) - peak).exp()
            * if k == 0 || k == grid_pts - 1 {
                0.5
            } else {
                1.0
            };
        z0 += w;
        z1 += w * u.exp();
    }
    let e_sigma2 = z1 / z0;
    let cov = &v * e_sigma2;

    let mut sampler = Sampler::new(&data, &grid, &hyper).unwrap();
    for _ in 0..1000 {
        sampler.sweep().unwrap();
    }
    let draws = 50_000;
    let mut gam = vec![vec![0.0; draws]; p];
    let mut sig = vec![0.0; draws];
    for d in 0..draws {
        sampler.sweep().unwrap();
        let st = sampler.state();
        for k in 0..p {
            gam[k][d] = st.gamma[k];
        }
        sig[d] = st.sigma2;
    }
    let mut worst: f64 = 0.0;
    let mut check = |series: &[f64], target: f64| {
        let (mean, se) = batch_means_se(series, 50);
        worst = worst.max((mean - target).abs() / se);
    };
    for k in 0..p {
        check(&gam[k], m[k]);
    }
    for j in 0..p {
        for k in j..p {
            let prod: Vec<f64> = (0..draws)
                .map(|d| (gam[j][d] - m[j]) * (gam[k][d] - m[k]))
                .collect();
            check(&prod, cov[(j, k)]);
        }
    }
    check(&sig, e_sigma2);
    outcome(
        worst <= 3.0,
        format!("5 means, 15 covariances, E[σ²] = {e_sigma2:.4}: worst {worst:.2} SE"),
    )
}

// ---------------------------------------------------------------------------
// 4. monotone-transform invariance

fn criterion_transform_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (n, n_times) = (150, 6);
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..n_times)
                .map(|_| 1.9 + 0.4 * std_normal(&mut rng))
                .collect()
        })
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|row| f64::from(u8::from(row[2] > 2.0)) + 0.5 * std_normal(&mut rng))
        .collect();
    let z: Vec<Vec<f64>> = (0..n).map(|_| vec![1.0, std_normal(&mut rng)]).collect();
    let data = Dataset::new(y, x, z).unwrap();
    let grid = SplitGrid::evenly_spaced(data.exposures(), 15, 1.0, 99.0, n_times);
    let mut hyper = Hyperparameters::for_dataset(&data);
    hyper.n_trees = 8;
    hyper.mcmc = McmcSettings {
        burn_in: 200,
        iterations: 400,
        thin: 2,
        seed: 4040,
        chains: 1,
    };
    let grid_x = treedlnm::sampler::default_eval_grid(&data, 30, hyper.x0);

    let exp_data = data.map_exposures(f64::exp);
    let exp_grid = grid.map_exposure(f64::exp);
    let mut exp_hyper = hyper.clone();
    exp_hyper.x0 = hyper.x0.exp();
    let exp_grid_x: Vec<f64> = grid_x.iter().map(|v| v.exp()).collect();

    let a = run_chain(&data, &grid, &hyper, &grid_x).unwrap();
    let b = run_chain(&exp_data, &exp_grid, &exp_hyper, &exp_grid_x).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let same = a.surface.n_draws() == b.surface.n_draws()
        && (0..a.surface.n_draws()).all(|d| bits(a.surface.draw(d)) == bits(b.surface.draw(d)))
        && bits(&a.sigma2) == bits(&b.sigma2);
    let nonzero = (0..a.surface.n_draws()).any(|d| a.surface.draw(d).iter().any(|v| *v != 0.0));
    outcome(
        same && nonzero,
        format!(
            "{} draws × {} cells compared bitwise",
            a.surface.n_draws(),
            a.surface.cells()
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. weights partition unity

fn criterion_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let n_times = 10;
    let data = random_data(&mut rng, 60, n_times, 1, 4.0);
    let grid = SplitGrid::evenly_spaced(data.exposures(), 12, 2.0, 98.0, n_times);
    let hyper = Hyperparameters::for_dataset(&data);
    let ctx = MoveContext::new(&data, &grid, &hyper).unwrap();
    let mut worst_smooth: f64 = 0.0;
    let mut hard_ok = true;
    let mut row = Vec::new();
    for _ in 0..10_000 {
        let tree = random_tree(&mut rng, &ctx, 12);
        let rects: Vec<_> = tree
            .leaf_regions(&grid)
            .iter()
            .map(|r| r.to_rect(&grid))
            .collect();
        let x = rng.random_range(-1.0..5.0);
        let t = rng.random_range(1..=n_times);
        let sigma = rng.random_range(0.02..2.0);
        let total: f64 = rects.iter().map(|r| psi_weight(x, r, t, sigma)).sum();
        worst_smooth = worst_smooth.max((total - 1.0).abs());

        let regions = tree.leaf_regions(&grid);
        row.resize(regions.len(), 0.0);
        let i = rng.random_range(0..data.n());
        ctx.table.design_row(i, &regions, &mut row);
        hard_ok &= row.iter().sum::<f64>() == n_times as f64;
        let direct = leaf_design_row(&data, &grid, i, &tree, WeightMode::Hard);
        hard_ok &= direct.iter().sum::<f64>() == n_times as f64;
    }
    outcome(
        worst_smooth <= 1e-12 && hard_ok,
        format!("10⁴ trees: smooth max |Σ−1| = {worst_smooth:.1e}, hard rows = T: {hard_ok}"),
    )
}

// ---------------------------------------------------------------------------
// 6. prefix table against the naive scan

fn criterion_prefix_table() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (n, n_times) = (500, 37);
    let data = random_data(&mut rng, n, n_times, 1, 4.0);
    let grid = SplitGrid::evenly_spaced(data.exposures(), 25, 1.0, 99.0, n_times);
    let mut hard_mismatch = 0;
    let mut worst_smooth: f64 = 0.0;
    for mode in [WeightMode::Hard, WeightMode::Smooth { sigma_x: 0.37 }] {
        let table = PrefixTable::build(&data, &grid, mode).unwrap();
        for _ in 0..1000 {
            let e = grid.n_edges();
            let a = rng.random_range(0..e);
            let mut b = rng.random_range(0..e);
            while b == a {
                b = rng.random_range(0..e);
            }
            let t1 = rng.random_range(1..=n_times);
            let t2 = rng.random_range(1..=n_times);
            let region = GridRegion {
                x_lo: a.min(b),
                x_hi: a.max(b),
                t_lo: t1.min(t2),
                t_hi: t1.max(t2),
            };
            let i = rng.random_range(0..n);
            let fast = table.query(i, &region);
            let rect = region.to_rect(&grid);
            let naive: f64 = (1..=n_times)
                .map(|t| cell_weight(&data, mode, i, t, &rect))
                .sum();
            if mode.is_hard() {
                hard_mismatch += usize::from(fast != naive);
            } else {
                worst_smooth = worst_smooth.max((fast - naive).abs());
            }
        }
    }
    outcome(
        hard_mismatch == 0 && worst_smooth <= 1e-12,
        format!("hard mismatches {hard_mismatch}/1000, smooth max |Δ| = {worst_smooth:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// 7-9. desk-scale replications

const ACCEPTANCE_SNR: f64 = 0.300_463;

fn study(kind: ScenarioKind, sigma_x_mode: SigmaXMode) -> StudySettings {
    StudySettings {
        scenario: ScenarioSpec::new(kind, 1.0),
        n: 1000,
        n_times: 37,
        snr: ACCEPTANCE_SNR,
        seed: 7_000,
        fit: FitSettings {
            sigma_x_mode,
            // four pooled chains of 500 draws; a single chain can lock
            // into a wrong sum-of-trees mode
            mcmc: McmcSettings {
                burn_in: 1000,
                iterations: 500,
                thin: 1,
                seed: 0,
                chains: 4,
            },
            ..FitSettings::default()
        },
    }
}

fn run_all(settings: &StudySettings, replicates: usize) -> (Vec<ReplicateResult>, usize) {
    let results: Vec<_> = (0..replicates)
        .into_par_iter()
        .map(|r| run_replicate(settings, r))
        .collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    (results.into_iter().filter_map(|r| r.ok()).collect(), failed)
}

fn mean_of(vals: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = vals.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn criterion_scenario_a() -> Outcome {
    let (res, failed) = run_all(&study(ScenarioKind::A, SigmaXMode::Zero), 100);
    let fp = mean_of(res.iter().filter_map(|r| r.metrics.fp));
    let precision = mean_of(res.iter().filter_map(|r| r.metrics.precision));
    let coverage = mean_of(res.iter().map(|r| r.metrics.coverage));
    let outside: Vec<String> = res
        .iter()
        .filter(|r| !r.windows.iter().all(|w| (11..=15).contains(w)))
        .map(|r| format!("{}:{:?}", r.replicate, r.windows))
        .collect();
    let share = (res.len() - outside.len()) as f64 / 100.0;
    outcome(
        failed == 0 && fp <= 0.05 && precision >= 0.90 && coverage >= 0.90 && share >= 0.95,
        format!(
            "FP {fp:.4}, precision {precision:.3}, coverage {coverage:.3}, windows in 11..15 {share:.2}, failed {failed}; outside: {}",
            outside.join(" ")
        ),
    )
}

fn criteria_scenario_c() -> (Outcome, Outcome) {
    let (hard, failed_hard) = run_all(&study(ScenarioKind::C, SigmaXMode::Zero), 100);
    let coverage = mean_of(hard.iter().map(|r| r.metrics.coverage));
    let rmse_no = mean_of(hard.iter().filter_map(|r| r.metrics.rmse_no_effect));
    let rmse_eff = mean_of(hard.iter().filter_map(|r| r.metrics.rmse_effect));
    let c8 = outcome(
        failed_hard == 0 && (0.85..=1.0).contains(&coverage) && rmse_no < rmse_eff,
        format!(
            "coverage {coverage:.3}, rmse_no_effect {rmse_no:.4} < rmse_effect {rmse_eff:.4}, failed {failed_hard}"
        ),
    );

    let (smooth, failed_smooth) = run_all(&study(ScenarioKind::C, SigmaXMode::HalfSd), 100);
    let mut wins = 0;
    let mut paired = 0;
    for s in &smooth {
        if let Some(h) = hard.iter().find(|h| h.replicate == s.replicate) {
            paired += 1;
            wins += usize::from(s.metrics.rmse_overall <= h.metrics.rmse_overall);
        }
    }
    let share = wins as f64 / 100.0;
    let c9 = outcome(
        failed_smooth == 0 && paired == 100 && share >= 0.60,
        format!(
            "smoothed ≤ hard rmse_overall in {wins}/100 (mean {:.4} vs {:.4}), failed {failed_smooth}",
            mean_of(smooth.iter().map(|r| r.metrics.rmse_overall)),
            mean_of(hard.iter().map(|r| r.metrics.rmse_overall)),
        ),
    );
    (c8, c9)
}

// ---------------------------------------------------------------------------
// 10. half-Cauchy hierarchy

/// `P(K > λ)` for the Kolmogorov distribution.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut total = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        total += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * total).clamp(0.0, 1.0)
}

fn criterion_half_cauchy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let draws = 100_000;
    let thin = 10;
    let n_leaves = 3;
    let mut shrink = Shrinkage {
        tau2: 1.0,
        aux: 1.0,
    };
    let mut tau = Vec::with_capacity(draws);
    for it in 0..draws * thin {
        // prior-only: leaf effects drawn from N(0, τ²) with σ² = ω² = 1
        let sd = shrink.tau2.sqrt();
        let mu: Vec<f64> = (0..n_leaves).map(|_| sd * std_normal(&mut rng)).collect();
        treedlnm::sampler::gibbs::update_tree_scale(&mut shrink, &mu, 1.0, 1.0, &mut rng).unwrap();
        if (it + 1) % thin == 0 {
            tau.push(shrink.tau2.sqrt());
        }
    }
    tau.sort_by(f64::total_cmp);
    let m = tau.len() as f64;
    let d = tau
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let f = 2.0 / PI * t.atan();
            (f - k as f64 / m).abs().max(((k + 1) as f64 / m - f).abs())
        })
        .fold(0.0, f64::max);
    let lambda = (m.sqrt() + 0.12 + 0.11 / m.sqrt()) * d;
    let p = kolmogorov_sf(lambda);
    outcome(
        p > 0.01,
        format!("10⁵ draws (thin {thin}): D = {d:.5}, p = {p:.3}"),
    )
}

// ---------------------------------------------------------------------------
// 11. determinism of the fit command

fn criterion_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let data = random_data(&mut rng, 120, 8, 2, 4.0);
    treedlnm::io::write_dataset(&dir.path().join("data.csv"), &data).unwrap();
    let cfg_path = dir.path().join("fit.cfg");
    fs::write(
        &cfg_path,
        "data = data.csv\noutput_dir = out\nn_trees = 6\nburn_in = 50\niterations = 100\nthin = 2\nseed = 17\n",
    )
    .unwrap();
    let files = [
        "surface_draws.csv",
        "surface_summary.csv",
        "windows.csv",
        "params.csv",
        "run_meta.txt",
    ];
    let run = || -> Vec<Vec<u8>> {
        let cfg = RunConfig::from_file(&cfg_path).unwrap();
        cmd_fit(&cfg, Some(2)).unwrap();
        files
            .iter()
            .map(|f| fs::read(dir.path().join("out").join(f)).unwrap())
            .collect()
    };
    let first = run();
    let second = run();
    let same = first == second;
    outcome(
        same,
        format!("{} output files byte-identical: {same}", files.len()),
    )
}

/// `ACCEPTANCE_CRITERIA=1,2,10` restricts the run to the listed criteria.
fn selected() -> Vec<usize> {
    match std::env::var("ACCEPTANCE_CRITERIA") {
        Ok(v) if !v.trim().is_empty() => v
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .expect("ACCEPTANCE_CRITERIA is a comma-separated list")
            })
            .collect(),
        _ => (1..=11).collect(),
    }
}

fn report(id: usize, name: &str, o: &Outcome, secs: f64) {
    println!(
        "criterion {id:>2} {:<4} {name}: {} [{secs:.1}s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}

fn main() {
    let want = selected();
    let single: [(usize, &str, fn() -> Outcome); 9] = [
        (
            1,
            "marginal likelihood vs quadrature",
            criterion_marginal_quadrature,
        ),
        (
            2,
            "enumerable structure posterior",
            criterion_enumerable_chain,
        ),
        (3, "conjugate reduction without trees", criterion_conjugate),
        (
            4,
            "exp-transform invariance",
            criterion_transform_invariance,
        ),
        (5, "weight normalization", criterion_normalization),
        (6, "prefix table vs naive scan", criterion_prefix_table),
        (10, "half-Cauchy scale hierarchy", criterion_half_cauchy),
        (11, "fit determinism", criterion_determinism),
        (7, "scenario A replication", criterion_scenario_a),
    ];
    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, name, f) in single {
        if !want.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        report(id, name, &o, t.elapsed().as_secs_f64());
        ran += 1;
        if !o.pass {
            failed.push(id);
        }
    }
    if want.contains(&8) || want.contains(&9) {
        let t = Instant::now();
        let (c8, c9) = criteria_scenario_c();
        let secs = t.elapsed().as_secs_f64();
        for (id, name, o) in [
            (8, "scenario C replication", c8),
            (9, "smoothing improves scenario C", c9),
        ] {
            if want.contains(&id) {
                report(id, name, &o, secs);
                ran += 1;
                if !o.pass {
                    failed.push(id);
                }
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {ran} criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
