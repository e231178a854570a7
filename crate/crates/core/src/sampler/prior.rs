//! Tree prior: depth-dependent split probability and the split-rule
//! distribution over the restricted grid.

use std::ops::Range;

use rand::Rng;

use crate::model::{Hyperparameters, SplitGrid};
use crate::tree::{GridRegion, Rule, Tree};

/// `α (1 + depth)^(−β)`
pub fn p_split(depth: usize, alpha: f64, beta: f64) -> f64 {
    alpha * (1.0 + depth as f64).powf(-beta)
}

/// Rules available inside one node, with prior mass `1/(2 s_x)` per
/// exposure rule and `1/(2 s_t)` per time rule, renormalised.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleDistribution {
    exposure: Range<usize>,
    time: Range<usize>,
    w_exposure: f64,
    w_time: f64,
}

impl RuleDistribution {
    pub fn n_exposure(&self) -> usize {
        self.exposure.len()
    }
    pub fn n_time(&self) -> usize {
        self.time.len()
    }

    fn total(&self) -> f64 {
        self.exposure.len() as f64 * self.w_exposure + self.time.len() as f64 * self.w_time
    }

    /// Prior probability of `rule`, zero if unavailable.
    pub fn prob(&self, rule: Rule) -> f64 {
        match rule {
            Rule::Exposure(j) if self.exposure.contains(&j) => self.w_exposure / self.total(),
            Rule::Time(k) if self.time.contains(&k) => self.w_time / self.total(),
            _ => 0.0,
        }
    }

    pub fn log_prob(&self, rule: Rule) -> f64 {
        self.prob(rule).ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Rule {
        let mass_x = self.exposure.len() as f64 * self.w_exposure;
        let u: f64 = rng.random::<f64>() * self.total();
        if u < mass_x || self.time.is_empty() {
            Rule::Exposure(rng.random_range(self.exposure.clone()))
        } else {
            Rule::Time(rng.random_range(self.time.clone()))
        }
    }

    pub fn rules(&self) -> impl Iterator<Item = Rule> + '_ {
        self.exposure
            .clone()
            .map(Rule::Exposure)
            .chain(self.time.clone().map(Rule::Time))
    }
}

/// Stochastic tree-generating prior over a fixed split grid.
#[derive(Debug, Clone)]
pub struct TreePrior {
    grid: SplitGrid,
    pub alpha: f64,
    pub beta: f64,
    pub max_depth: Option<usize>,
}

impl TreePrior {
    pub fn new(grid: &SplitGrid, hyper: &Hyperparameters) -> Self {
        Self {
            grid: grid.clone(),
            alpha: hyper.alpha,
            beta: hyper.beta,
            max_depth: hyper.max_depth,
        }
    }

    pub fn grid(&self) -> &SplitGrid {
        &self.grid
    }

    /// Rule distribution at a node with the given region, or `None` when no
    /// rule cuts the region.
    pub fn rule_prior(&self, region: &GridRegion) -> Option<RuleDistribution> {
        let exposure = if region.x_hi > region.x_lo + 1 {
            region.x_lo..region.x_hi - 1
        } else {
            0..0
        };
        let ts = self.grid.time_splits();
        let k_lo = ts.partition_point(|&c| c < region.t_lo);
        let k_hi = ts.partition_point(|&c| c < region.t_hi);
        let time = k_lo..k_hi.max(k_lo);
        if exposure.is_empty() && time.is_empty() {
            return None;
        }
        let s_x = self.grid.n_exposure().max(1) as f64;
        let s_t = self.grid.n_time().max(1) as f64;
        Some(RuleDistribution {
            exposure,
            time,
            w_exposure: 0.5 / s_x,
            w_time: 0.5 / s_t,
        })
    }

    /// Probability that a node splits: zero when no rule is available or the
    /// depth cap is reached.
    pub fn split_prob(&self, depth: usize, region: &GridRegion) -> f64 {
        if self.max_depth.is_some_and(|m| depth >= m) || self.rule_prior(region).is_none() {
            0.0
        } else {
            p_split(depth, self.alpha, self.beta)
        }
    }

    /// Log prior probability of the tree structure; `-∞` for trees with a
    /// rule that does not cut its node.
    pub fn log_prior(&self, tree: &Tree) -> f64 {
        let mut total = 0.0;
        for node in tree.layout(&self.grid) {
            let ps = self.split_prob(node.depth, &node.region);
            match node.rule {
                None => total += (1.0 - ps).ln(),
                Some(rule) => {
                    let rp = self.rule_prior(&node.region).map_or(0.0, |d| d.prob(rule));
                    total += ps.ln() + rp.ln();
                }
            }
        }
        total
    }
}
