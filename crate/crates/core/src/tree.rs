//! Dichotomous trees over the (exposure, time) plane.
//!
//! Nodes are addressed by their preorder index; terminal nodes are numbered
//! left to right, which fixes the order of the leaf-effect vector.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::SplitGrid;

/// A split rule referencing the split grid by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    /// Left iff `x ≤ exposure_splits[j]`.
    Exposure(usize),
    /// Left iff `t ≤ time_splits[k]`.
    Time(usize),
}

/// Grid-aligned rectangle `(edge(x_lo), edge(x_hi)] × [t_lo, t_hi]`.
///
/// Exposure bounds are edge indices (see [`SplitGrid::edge`]); times are
/// 1-based and inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridRegion {
    pub x_lo: usize,
    pub x_hi: usize,
    pub t_lo: usize,
    pub t_hi: usize,
}

impl GridRegion {
    pub fn full(grid: &SplitGrid) -> Self {
        Self {
            x_lo: 0,
            x_hi: grid.n_exposure() + 1,
            t_lo: 1,
            t_hi: grid.n_times(),
        }
    }

    /// Children produced by `rule`, or `None` if the rule does not cut this
    /// region into two non-empty pieces.
    pub fn split(&self, rule: Rule, grid: &SplitGrid) -> Option<(GridRegion, GridRegion)> {
        match rule {
            Rule::Exposure(j) => {
                let e = j + 1;
                (j < grid.n_exposure() && self.x_lo < e && e < self.x_hi).then_some((
                    GridRegion { x_hi: e, ..*self },
                    GridRegion { x_lo: e, ..*self },
                ))
            }
            Rule::Time(k) => {
                let cut = *grid.time_splits().get(k)?;
                (self.t_lo <= cut && cut < self.t_hi).then_some((
                    GridRegion { t_hi: cut, ..*self },
                    GridRegion {
                        t_lo: cut + 1,
                        ..*self
                    },
                ))
            }
        }
    }

    pub fn contains_time(&self, t: usize) -> bool {
        self.t_lo <= t && t <= self.t_hi
    }

    pub fn to_rect(&self, grid: &SplitGrid) -> Rect {
        Rect {
            x_lo: grid.edge(self.x_lo),
            x_hi: grid.edge(self.x_hi),
            t_lo: self.t_lo,
            t_hi: self.t_hi,
        }
    }
}

/// Rectangle in exposure values: `(x_lo, x_hi] × [t_lo, t_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x_lo: f64,
    pub x_hi: f64,
    pub t_lo: usize,
    pub t_hi: usize,
}

impl Rect {
    pub fn contains_time(&self, t: usize) -> bool {
        self.t_lo <= t && t <= self.t_hi
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TreeNode {
    pub rule: Option<Rule>,
    children: Option<Box<[TreeNode; 2]>>,
}

impl TreeNode {
    pub fn leaf() -> Self {
        Self {
            rule: None,
            children: None,
        }
    }

    pub fn split(rule: Rule, left: TreeNode, right: TreeNode) -> Self {
        Self {
            rule: Some(rule),
            children: Some(Box::new([left, right])),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    pub fn children(&self) -> Option<&[TreeNode; 2]> {
        self.children.as_deref()
    }

    fn count(&self) -> usize {
        1 + self
            .children
            .as_ref()
            .map_or(0, |c| c[0].count() + c[1].count())
    }

    fn find_mut(&mut self, target: usize, next: &mut usize) -> Option<&mut TreeNode> {
        if *next == target {
            return Some(self);
        }
        *next += 1;
        let children = self.children.as_deref_mut()?;
        let [left, right] = children;
        if let Some(found) = left.find_mut(target, next) {
            return Some(found);
        }
        right.find_mut(target, next)
    }
}

/// Derived information about one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeInfo {
    pub id: usize,
    pub depth: usize,
    pub region: GridRegion,
    pub rule: Option<Rule>,
    /// Preorder ids of the children.
    pub children: Option<(usize, usize)>,
    /// Position among terminal nodes, for leaves.
    pub leaf_index: Option<usize>,
    /// Both children are terminal.
    pub is_nog: bool,
}

/// Local shrinkage scale τ_a² and its auxiliary inverse-gamma variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shrinkage {
    pub tau2: f64,
    pub aux: f64,
}

impl Default for Shrinkage {
    fn default() -> Self {
        Self {
            tau2: 1.0,
            aux: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub root: TreeNode,
    pub leaf_effects: Vec<f64>,
    pub shrink: Shrinkage,
}

impl Default for Tree {
    fn default() -> Self {
        Self::root_only()
    }
}

impl Tree {
    pub fn root_only() -> Self {
        Self {
            root: TreeNode::leaf(),
            leaf_effects: vec![0.0],
            shrink: Shrinkage::default(),
        }
    }

    pub fn from_root(root: TreeNode) -> Self {
        let leaves = count_leaves(&root);
        Self {
            root,
            leaf_effects: vec![0.0; leaves],
            shrink: Shrinkage::default(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.root.count()
    }

    pub fn n_leaves(&self) -> usize {
        count_leaves(&self.root)
    }

    /// Preorder listing of all nodes with derived depth and region.
    pub fn layout(&self, grid: &SplitGrid) -> Vec<NodeInfo> {
        let mut out = Vec::with_capacity(self.n_nodes());
        let mut leaf_counter = 0;
        walk(
            &self.root,
            0,
            GridRegion::full(grid),
            grid,
            &mut out,
            &mut leaf_counter,
        );
        out
    }

    /// Grid regions of the terminal nodes, in leaf order.
    pub fn leaf_regions(&self, grid: &SplitGrid) -> Vec<GridRegion> {
        let mut out = Vec::new();
        collect_leaf_regions(&self.root, GridRegion::full(grid), grid, &mut out);
        out
    }

    pub fn node_mut(&mut self, id: usize) -> Option<&mut TreeNode> {
        let mut next = 0;
        self.root.find_mut(id, &mut next)
    }

    /// Split terminal node `id` with `rule`; leaf effects are reset to zero.
    pub fn grow(&mut self, id: usize, rule: Rule) -> Result<()> {
        let len = self.n_nodes();
        let node = self.node_mut(id).ok_or(Error::Index { index: id, len })?;
        if !node.is_leaf() {
            return Err(Error::Input(format!("node {id} is not terminal")));
        }
        *node = TreeNode::split(rule, TreeNode::leaf(), TreeNode::leaf());
        self.reset_effects();
        Ok(())
    }

    /// Collapse internal node `id`, whose children must both be terminal.
    pub fn prune(&mut self, id: usize) -> Result<()> {
        let len = self.n_nodes();
        let node = self.node_mut(id).ok_or(Error::Index { index: id, len })?;
        match node.children() {
            Some([l, r]) if l.is_leaf() && r.is_leaf() => {}
            _ => return Err(Error::Input(format!("node {id} is not a nog node"))),
        }
        *node = TreeNode::leaf();
        self.reset_effects();
        Ok(())
    }

    /// Replace the rule at internal node `id`, keeping the shape.
    pub fn change(&mut self, id: usize, rule: Rule) -> Result<()> {
        let len = self.n_nodes();
        let node = self.node_mut(id).ok_or(Error::Index { index: id, len })?;
        if node.is_leaf() {
            return Err(Error::Input(format!("node {id} is terminal")));
        }
        node.rule = Some(rule);
        Ok(())
    }

    /// True when every rule cuts its node's region into two non-empty
    /// grid rectangles.
    pub fn is_valid(&self, grid: &SplitGrid) -> bool {
        fn check(node: &TreeNode, region: GridRegion, grid: &SplitGrid) -> bool {
            match (node.rule, node.children()) {
                (None, None) => true,
                (Some(rule), Some([l, r])) => match region.split(rule, grid) {
                    Some((lr, rr)) => check(l, lr, grid) && check(r, rr, grid),
                    None => false,
                },
                _ => false,
            }
        }
        check(&self.root, GridRegion::full(grid), grid)
    }

    fn reset_effects(&mut self) {
        self.leaf_effects = vec![0.0; self.n_leaves()];
    }
}

/// Region of terminal node number `leaf_id` (leaf order, not preorder) as a
/// rectangle in exposure values, with infinite outer bounds.
pub fn derive_region(tree: &Tree, leaf_id: usize, grid: &SplitGrid) -> Result<Rect> {
    let regions = tree.leaf_regions(grid);
    regions
        .get(leaf_id)
        .map(|r| r.to_rect(grid))
        .ok_or(Error::Index {
            index: leaf_id,
            len: regions.len(),
        })
}

fn count_leaves(node: &TreeNode) -> usize {
    match node.children() {
        None => 1,
        Some([l, r]) => count_leaves(l) + count_leaves(r),
    }
}

fn walk(
    node: &TreeNode,
    depth: usize,
    region: GridRegion,
    grid: &SplitGrid,
    out: &mut Vec<NodeInfo>,
    leaf_counter: &mut usize,
) {
    let id = out.len();
    out.push(NodeInfo {
        id,
        depth,
        region,
        rule: node.rule,
        children: None,
        leaf_index: None,
        is_nog: false,
    });
    match (node.rule, node.children()) {
        (Some(rule), Some([l, r])) => {
            // Invalid rules leave the child regions equal to the parent's.
            let (lr, rr) = region.split(rule, grid).unwrap_or((region, region));
            let left_id = out.len();
            walk(l, depth + 1, lr, grid, out, leaf_counter);
            let right_id = out.len();
            walk(r, depth + 1, rr, grid, out, leaf_counter);
            out[id].children = Some((left_id, right_id));
            out[id].is_nog = l.is_leaf() && r.is_leaf();
        }
        _ => {
            out[id].leaf_index = Some(*leaf_counter);
            *leaf_counter += 1;
        }
    }
}

fn collect_leaf_regions(
    node: &TreeNode,
    region: GridRegion,
    grid: &SplitGrid,
    out: &mut Vec<GridRegion>,
) {
    match (node.rule, node.children()) {
        (Some(rule), Some([l, r])) => {
            let (lr, rr) = region.split(rule, grid).unwrap_or((region, region));
            collect_leaf_regions(l, lr, grid, out);
            collect_leaf_regions(r, rr, grid, out);
        }
        _ => out.push(region),
    }
}

impl fmt::Display for TreeNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.rule, self.children()) {
            (Some(rule), Some([l, r])) => {
                match rule {
                    Rule::Exposure(j) => write!(f, "x{j}")?,
                    Rule::Time(k) => write!(f, "t{k}")?,
                }
                write!(f, "({l},{r})")
            }
            _ => f.write_str("."),
        }
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}
