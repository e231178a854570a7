//! Grow / prune / change Metropolis–Hastings moves on a single tree, with
//! leaf effects and covariate coefficients integrated out.

use nalgebra::DMatrix;
use rand::Rng;

use super::marginal::{LeafPosterior, LeafStats, ProjectedMetric, ProjectionTable};
use super::prior::TreePrior;
use crate::error::Result;
use crate::model::{Dataset, Hyperparameters, MoveProbs, SplitGrid};
use crate::tree::{GridRegion, Rule, Tree};
use crate::weights::{PrefixTable, WeightMode};

/// Total leaf mass below which a smoothed leaf counts as empty.
pub const EMPTY_LEAF_MASS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
}

impl MoveKind {
    pub const ALL: [MoveKind; 3] = [MoveKind::Grow, MoveKind::Prune, MoveKind::Change];

    pub fn index(self) -> usize {
        match self {
            MoveKind::Grow => 0,
            MoveKind::Prune => 1,
            MoveKind::Change => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MoveKind::Grow => "grow",
            MoveKind::Prune => "prune",
            MoveKind::Change => "change",
        }
    }
}

/// A concrete proposal. Node ids are preorder ids in the current tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Move {
    Grow { leaf: usize, rule: Rule },
    Prune { node: usize },
    Change { node: usize, rule: Rule },
}

impl Move {
    pub fn kind(&self) -> MoveKind {
        match self {
            Move::Grow { .. } => MoveKind::Grow,
            Move::Prune { .. } => MoveKind::Prune,
            Move::Change { .. } => MoveKind::Change,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MoveProposal {
    pub kind: Move,
    pub tree: Tree,
    pub log_prior_ratio: f64,
    pub log_proposal_ratio: f64,
}

/// Read-only machinery shared by every tree move in a chain.
#[derive(Debug, Clone)]
pub struct MoveContext {
    pub prior: TreePrior,
    pub table: PrefixTable,
    pub projection: ProjectionTable,
    pub metric: ProjectedMetric,
    pub move_probs: MoveProbs,
    n: usize,
    p: usize,
}

impl MoveContext {
    pub fn new(data: &Dataset, grid: &SplitGrid, hyper: &Hyperparameters) -> Result<Self> {
        let mode = WeightMode::from_hyper(hyper);
        let table = PrefixTable::build(data, grid, mode)?;
        let p = data.n_covariates();
        let projection = ProjectionTable::build(&table, data.covariates(), p);
        let metric = ProjectedMetric::new(data.covariates(), data.n(), p, hyper.c)?;
        Ok(Self {
            prior: TreePrior::new(grid, hyper),
            table,
            projection,
            metric,
            move_probs: hyper.move_probs,
            n: data.n(),
            p,
        })
    }

    pub fn grid(&self) -> &SplitGrid {
        self.prior.grid()
    }

    pub fn mode(&self) -> WeightMode {
        self.table.mode()
    }
}

/// Design matrix `U` of one tree (row-major `n × B`) with its leaf regions
/// and `ZᵀU`.
#[derive(Debug, Clone)]
pub struct TreeDesign {
    pub regions: Vec<GridRegion>,
    pub u: Vec<f64>,
    pub ztu: DMatrix<f64>,
}

impl TreeDesign {
    pub fn build(ctx: &MoveContext, tree: &Tree) -> Self {
        let regions = tree.leaf_regions(ctx.grid());
        let nb = regions.len();
        let mut u = vec![0.0; ctx.n * nb];
        for (i, row) in u.chunks_exact_mut(nb).enumerate() {
            ctx.table.design_row(i, &regions, row);
        }
        let mut ztu = DMatrix::zeros(ctx.p, nb);
        let mut buf = vec![0.0; ctx.p];
        for (b, r) in regions.iter().enumerate() {
            ctx.projection.zt_region(r, &mut buf);
            ztu.column_mut(b).copy_from_slice(&buf);
        }
        Self { regions, u, ztu }
    }

    pub fn n_leaves(&self) -> usize {
        self.regions.len()
    }

    /// Total data mass in each leaf.
    pub fn leaf_mass(&self) -> Vec<f64> {
        let nb = self.n_leaves();
        let mut mass = vec![0.0; nb];
        for row in self.u.chunks_exact(nb) {
            for (m, v) in mass.iter_mut().zip(row) {
                *m += v;
            }
        }
        mass
    }

    pub fn has_empty_leaf(&self, mode: WeightMode) -> bool {
        self.leaf_mass().iter().any(|&m| {
            if mode.is_hard() {
                m == 0.0
            } else {
                m < EMPTY_LEAF_MASS
            }
        })
    }

    /// `g_i = Σ_b U_ib μ_b`
    pub fn contribution(&self, mu: &[f64]) -> Vec<f64> {
        self.u
            .chunks_exact(self.n_leaves())
            .map(|row| row.iter().zip(mu).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn stats(&self, ctx: &MoveContext, residual: &[f64], ztr: &DMatrix<f64>) -> LeafStats {
        LeafStats::compute(
            &ctx.metric,
            &self.u,
            self.n_leaves(),
            residual,
            &self.ztu,
            ztr,
        )
    }
}

/// Draw a structural proposal for `tree`. `None` means the drawn move has
/// no valid target (treated as a rejection).
pub fn propose<R: Rng + ?Sized>(
    ctx: &MoveContext,
    tree: &Tree,
    rng: &mut R,
) -> Option<MoveProposal> {
    let mp = ctx.move_probs;
    let u: f64 = rng.random::<f64>() * (mp.grow + mp.prune + mp.change);
    let kind = if u < mp.grow {
        MoveKind::Grow
    } else if u < mp.grow + mp.prune {
        MoveKind::Prune
    } else {
        MoveKind::Change
    };
    let layout = tree.layout(ctx.grid());
    let prior = &ctx.prior;

    let (mv, proposed, log_q_fwd, log_q_rev) = match kind {
        MoveKind::Grow => {
            let leaves: Vec<_> = layout.iter().filter(|n| n.rule.is_none()).collect();
            let node = leaves[rng.random_range(0..leaves.len())];
            let dist = prior.rule_prior(&node.region)?;
            let rule = dist.sample(rng);
            let mut next = tree.clone();
            next.grow(node.id, rule).ok()?;
            let nogs_after = next.layout(ctx.grid()).iter().filter(|n| n.is_nog).count();
            let fwd = mp.grow.ln() - (leaves.len() as f64).ln() + dist.log_prob(rule);
            let rev = mp.prune.ln() - (nogs_after as f64).ln();
            (
                Move::Grow {
                    leaf: node.id,
                    rule,
                },
                next,
                fwd,
                rev,
            )
        }
        MoveKind::Prune => {
            let nogs: Vec<_> = layout.iter().filter(|n| n.is_nog).collect();
            if nogs.is_empty() {
                return None;
            }
            let node = nogs[rng.random_range(0..nogs.len())];
            let rule = node.rule.expect("nog nodes carry a rule");
            let mut next = tree.clone();
            next.prune(node.id).ok()?;
            let leaves_after = next.n_leaves();
            let rev_rule = prior
                .rule_prior(&node.region)
                .map_or(f64::NEG_INFINITY, |d| d.log_prob(rule));
            let fwd = mp.prune.ln() - (nogs.len() as f64).ln();
            let rev = mp.grow.ln() - (leaves_after as f64).ln() + rev_rule;
            (Move::Prune { node: node.id }, next, fwd, rev)
        }
        MoveKind::Change => {
            let internal: Vec<_> = layout.iter().filter(|n| n.rule.is_some()).collect();
            if internal.is_empty() {
                return None;
            }
            let node = internal[rng.random_range(0..internal.len())];
            let dist = prior.rule_prior(&node.region)?;
            let old = node.rule.expect("internal node");
            let rule = dist.sample(rng);
            let mut next = tree.clone();
            next.change(node.id, rule).ok()?;
            // the node's region is unchanged, so the choice of node cancels
            let fwd = dist.log_prob(rule);
            let rev = dist.log_prob(old);
            (
                Move::Change {
                    node: node.id,
                    rule,
                },
                next,
                fwd,
                rev,
            )
        }
    };

    let log_prior_ratio = prior.log_prior(&proposed) - prior.log_prior(tree);
    Some(MoveProposal {
        kind: mv,
        tree: proposed,
        log_prior_ratio,
        log_proposal_ratio: log_q_rev - log_q_fwd,
    })
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub kind: Option<MoveKind>,
    pub accepted: bool,
    /// Leaf-effect posterior for the tree as it stands after the step.
    pub posterior: LeafPosterior,
}

/// One Metropolis–Hastings update of `tree` against the partial residual.
///
/// `ztr` is `Zᵀ residual` and `nu = ω² τ_a²`. On acceptance `tree` and
/// `design` are replaced; leaf effects are left for the Gibbs step.
#[allow(clippy::too_many_arguments)]
pub fn propose_and_accept<R: Rng + ?Sized>(
    ctx: &MoveContext,
    tree: &mut Tree,
    design: &mut TreeDesign,
    residual: &[f64],
    ztr: &DMatrix<f64>,
    nu: f64,
    sigma2: f64,
    rng: &mut R,
) -> Result<StepOutcome> {
    let current = LeafPosterior::new(&design.stats(ctx, residual, ztr), nu, sigma2)?;
    let Some(proposal) = propose(ctx, tree, rng) else {
        return Ok(StepOutcome {
            kind: None,
            accepted: false,
            posterior: current,
        });
    };
    let kind = Some(proposal.kind.kind());
    let reject = |posterior| {
        Ok(StepOutcome {
            kind,
            accepted: false,
            posterior,
        })
    };

    if proposal.tree.root == tree.root {
        return Ok(StepOutcome {
            kind,
            accepted: true,
            posterior: current,
        });
    }
    if !proposal.log_prior_ratio.is_finite() || !proposal.tree.is_valid(ctx.grid()) {
        return reject(current);
    }
    let next_design = TreeDesign::build(ctx, &proposal.tree);
    if next_design.has_empty_leaf(ctx.mode()) {
        return reject(current);
    }
    let next = LeafPosterior::new(&next_design.stats(ctx, residual, ztr), nu, sigma2)?;
    let log_ratio = next.log_marginal - current.log_marginal
        + proposal.log_prior_ratio
        + proposal.log_proposal_ratio;
    let u: f64 = rng.random();
    if u.ln() < log_ratio {
        let shrink = tree.shrink;
        *tree = proposal.tree;
        tree.shrink = shrink;
        *design = next_design;
        Ok(StepOutcome {
            kind,
            accepted: true,
            posterior: next,
        })
    } else {
        reject(current)
    }
}
