//! The expandable future: a tree of hidden states `S_I` (and their latent
//! observations `O_I`) indexed by the action sequence that leads to them.
//!
//! Nodes live in an arena; [`NodeId`] is an index into it. The root is the
//! present state `S_t` and has the empty multi-index.

use std::fmt::{self, Write as _};

use crate::distributions::CategoricalParams;
use crate::error::{Error, Result};
use crate::inference::{update_future_obs, FutureBeliefs};
use crate::model::ModelParams;

/// A sequence of actions taken from the present state. The empty sequence
/// denotes the root.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn new(actions: Vec<usize>) -> Self {
        Self(actions)
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// `I::u`
    pub fn child(&self, action: usize) -> Self {
        let mut actions = self.0.clone();
        actions.push(action);
        Self(actions)
    }

    /// `I∖last`, or `None` for the root.
    pub fn parent(&self) -> Option<Self> {
        let (_, rest) = self.0.split_last()?;
        Some(Self(rest.to_vec()))
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn is_strict_prefix_of(&self, other: &MultiIndex) -> bool {
        self.0.len() < other.0.len() && other.0.starts_with(&self.0)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn get(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct TreeNode {
    pub index: MultiIndex,
    pub parent: Option<NodeId>,
    children: Vec<Option<NodeId>>,
    /// `D̂_I`
    pub state_belief: CategoricalParams,
    /// `Ê_I`
    pub obs_belief: CategoricalParams,
    /// `n_I`
    pub visits: u64,
    /// `G^aggr_I`
    pub aggregated_cost: f64,
    /// `g_I`, the localized cost (after rollout averaging, if any).
    pub local_cost: f64,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.iter().all(Option::is_none)
    }

    pub fn child(&self, action: usize) -> Option<NodeId> {
        self.children.get(action).copied().flatten()
    }

    /// Expanded children as `(action, id)`, in action order.
    pub fn children(&self) -> impl Iterator<Item = (usize, NodeId)> + '_ {
        self.children
            .iter()
            .enumerate()
            .filter_map(|(a, c)| c.map(|id| (a, id)))
    }

    pub fn n_children(&self) -> usize {
        self.children.iter().flatten().count()
    }

    /// Actions with no child yet.
    pub fn unexpanded_actions(&self) -> impl Iterator<Item = usize> + '_ {
        self.children
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_none())
            .map(|(a, _)| a)
    }

    /// `ḡ_I = G^aggr_I / n_I`, undefined before the first visit.
    pub fn average_cost(&self) -> Option<f64> {
        (self.visits > 0).then(|| self.aggregated_cost / self.visits as f64)
    }
}

#[derive(Clone, Debug)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    n_actions: usize,
}

impl Tree {
    /// A tree holding only the present state.
    pub fn new(present: CategoricalParams, model: &ModelParams) -> Result<Self> {
        let obs_belief = model.predict_obs(&present)?;
        let n_actions = model.spec().n_actions;
        Ok(Self {
            nodes: vec![TreeNode {
                index: MultiIndex::root(),
                parent: None,
                children: vec![None; n_actions],
                state_belief: present,
                obs_belief,
                visits: 0,
                aggregated_cost: 0.0,
                local_cost: 0.0,
            }],
            n_actions,
        })
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id.0]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut TreeNode {
        &mut self.nodes[id.0]
    }

    /// Number of nodes including the root, i.e. `1 + |𝕀_t|`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn find(&self, index: &MultiIndex) -> Option<NodeId> {
        let mut id = NodeId::ROOT;
        for &a in index.actions() {
            id = self.node(id).child(a)?;
        }
        Some(id)
    }

    /// Parent to root inclusive, nearest first.
    pub fn ancestors(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut cur = self.node(id).parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.node(p).parent;
        }
        out
    }

    /// Every node strictly below `id`, breadth-first.
    pub fn descendants(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut frontier: Vec<NodeId> = self.node(id).children().map(|(_, c)| c).collect();
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for c in frontier {
                out.push(c);
                next.extend(self.node(c).children().map(|(_, g)| g));
            }
            frontier = next;
        }
        out
    }

    /// All non-root nodes, breadth-first.
    pub fn breadth_first(&self) -> Vec<NodeId> {
        self.descendants(NodeId::ROOT)
    }

    pub(crate) fn set_root_belief(&mut self, belief: CategoricalParams) {
        self.nodes[0].state_belief = belief;
    }

    /// Adds the child `I::action` with its predictive prior
    /// `D̂ = B̄_action ⊙ D̂_I` and the matching observation belief.
    pub fn attach_child(
        &mut self,
        id: NodeId,
        action: usize,
        model: &ModelParams,
        future: FutureBeliefs,
    ) -> Result<NodeId> {
        if action >= self.n_actions {
            return Err(Error::OutOfRange(format!("action {action} >= {}", self.n_actions)));
        }
        if self.node(id).child(action).is_some() {
            return Err(Error::AlreadyExpanded(action));
        }
        let (state_belief, obs_belief) =
            child_prior(model, &self.node(id).state_belief, action, future)?;
        let child = NodeId(self.nodes.len());
        let index = self.node(id).index.child(action);
        self.nodes.push(TreeNode {
            index,
            parent: Some(id),
            children: vec![None; self.n_actions],
            state_belief,
            obs_belief,
            visits: 0,
            aggregated_cost: 0.0,
            local_cost: 0.0,
        });
        self.nodes[id.0].children[action] = Some(child);
        Ok(child)
    }

    /// Expands every action of `id`. Fails if any child already exists.
    pub fn attach_children(
        &mut self,
        id: NodeId,
        model: &ModelParams,
        future: FutureBeliefs,
    ) -> Result<Vec<NodeId>> {
        if let Some((a, _)) = self.node(id).children().next() {
            return Err(Error::AlreadyExpanded(a));
        }
        (0..self.n_actions)
            .map(|a| self.attach_child(id, a, model, future))
            .collect()
    }

    /// Indented text dump, one node per line:
    ///
    /// ```text
    /// () n=4 g=0.250000 mode=0
    ///   (0) n=1 g=0.100000 mode=1
    /// ```
    ///
    /// `g` is `ḡ = G^aggr / n` (`-` before the first visit) and `mode` is the
    /// most probable state under `D̂`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![NodeId::ROOT];
        while let Some(id) = stack.pop() {
            let node = self.node(id);
            let g = node
                .average_cost()
                .map_or_else(|| "-".to_owned(), |g| format!("{g:.6}"));
            writeln!(
                out,
                "{:indent$}{} n={} g={} mode={}",
                "",
                node.index,
                node.visits,
                g,
                node.state_belief.mode(),
                indent = 2 * node.index.depth()
            )
            .unwrap();
            stack.extend(node.children().map(|(_, c)| c).collect::<Vec<_>>().into_iter().rev());
        }
        out
    }
}

/// Beliefs given to a freshly expanded node before any inference.
pub(crate) fn child_prior(
    model: &ModelParams,
    parent: &CategoricalParams,
    action: usize,
    future: FutureBeliefs,
) -> Result<(CategoricalParams, CategoricalParams)> {
    let state = model.predict_state(parent, action)?;
    let obs = match future {
        FutureBeliefs::Variational => update_future_obs(model, &state)?,
        FutureBeliefs::Predictive => model.predict_obs(&state)?,
    };
    Ok((state, obs))
}
