"""Decision-tree ensembles with conjugate leaf models and backfitting MCMC.

Trees live in heap-indexed arrays (children of node ``i`` at ``2i+1`` and
``2i+2``).  A forest may carry one extra "category" split slot whose rules
send category ``k`` left iff ``geom_cdf(k-1) <= C`` with ``C in (0,1)`` and
``geom_cdf`` the Geometric(1/3) CDF, so the left set is always a prefix of
categories.

Two leaf models share the move machinery:

* log-gamma leaves with per-leaf sufficient statistics ``(A, B)`` and
  integrated likelihood ``b^a/Gamma(a) * Gamma(a+A)/(b+B)^(a+A)``;
* normal leaves for weighted pseudo-Gaussian backfitting (density mean
  forest), with statistics ``(sum w, sum w * resid)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, NumericalOverflowError, SchemaError
from .special import LogGammaPrior, _log_gamma_draw, sample_log_gamma

LEAF = -1
UNUSED = -2
MAX_DEPTH = 12  # heap capacity cap; prior mass beyond this depth is negligible
EXP_CLAMP = 30.0  # clamp on exponents feeding B accumulations
CATEGORY_GEOM_P = 1.0 / 3.0

MOVE_PROBS = {"grow": 0.4, "prune": 0.4, "change": 0.2}


def category_cdf(n_cat: int) -> np.ndarray:
    """Geometric(1/3) CDF at 0..n_cat-1, the acceptance grid for category rules."""
    m = np.arange(n_cat, dtype=float)
    return 1.0 - (1.0 - CATEGORY_GEOM_P) ** (m + 1.0)


def _node_depth(node: int) -> int:
    return int(node + 1).bit_length() - 1


class Tree:
    """Binary decision tree in heap layout.

    ``var[i] >= 0`` marks a branch on that predictor index (``n_predictors``
    denotes the category slot), ``var[i] == LEAF`` a leaf carrying
    ``leaf_value[i]`` and ``var[i] == UNUSED`` an unallocated slot.
    """

    __slots__ = ("var", "threshold", "leaf_value")

    def __init__(self, capacity: int = 1):
        self.var = np.full(capacity, UNUSED, dtype=np.int32)
        self.threshold = np.zeros(capacity)
        self.leaf_value = np.zeros(capacity)
        self.var[0] = LEAF

    def copy(self) -> "Tree":
        t = Tree.__new__(Tree)
        t.var = self.var.copy()
        t.threshold = self.threshold.copy()
        t.leaf_value = self.leaf_value.copy()
        return t

    def _ensure(self, idx: int) -> None:
        if idx < self.var.size:
            return
        cap = self.var.size
        while cap <= idx:
            cap = 2 * cap + 1
        var = np.full(cap, UNUSED, dtype=np.int32)
        var[: self.var.size] = self.var
        thr = np.zeros(cap)
        thr[: self.threshold.size] = self.threshold
        val = np.zeros(cap)
        val[: self.leaf_value.size] = self.leaf_value
        self.var, self.threshold, self.leaf_value = var, thr, val

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.var == LEAF)

    def branches(self) -> np.ndarray:
        return np.flatnonzero(self.var >= 0)

    def nog_nodes(self) -> np.ndarray:
        """Branch nodes whose children are both leaves (prunable)."""
        br = self.branches()
        if br.size == 0:
            return br
        ok = (self.var[2 * br + 1] == LEAF) & (self.var[2 * br + 2] == LEAF)
        return br[ok]

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.var == LEAF))

    def depth(self) -> int:
        active = np.flatnonzero(self.var != UNUSED)
        return _node_depth(int(active.max())) if active.size else 0

    def grow(self, node: int, var: int, threshold: float) -> None:
        self._ensure(2 * node + 2)
        self.var[node] = var
        self.threshold[node] = threshold
        for child in (2 * node + 1, 2 * node + 2):
            self.var[child] = LEAF
            self.leaf_value[child] = 0.0

    def prune(self, node: int) -> None:
        self.var[2 * node + 1] = UNUSED
        self.var[2 * node + 2] = UNUSED
        self.var[node] = LEAF
        self.leaf_value[node] = 0.0

    def assign(self, X: np.ndarray, cat: np.ndarray | None, n_predictors: int,
               cat_cdf: np.ndarray | None) -> np.ndarray:
        """Heap node id of the leaf reached by each row of X (and category)."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            v = self.var[node]
            interior = v >= 0
            if not interior.any():
                return node
            idx = np.flatnonzero(interior)
            vv = v[idx]
            thr = self.threshold[node[idx]]
            go_left = np.empty(idx.size, dtype=bool)
            pm = vv < n_predictors
            if pm.any():
                sel = idx[pm]
                go_left[pm] = X[sel, vv[pm]] <= thr[pm]
            cm = ~pm
            if cm.any():
                go_left[cm] = cat_cdf[cat[idx[cm]] - 1] <= thr[cm]
            node[idx] = np.where(go_left, 2 * node[idx] + 1, 2 * node[idx] + 2)


@dataclass(frozen=True)
class DepthPrior:
    """Branching prior: a node at depth d splits w.p. alpha*(1+d)^(-beta)."""

    alpha: float = 0.95
    beta: float = 2.0

    def p_split(self, depth: int) -> float:
        if depth >= MAX_DEPTH:
            return 0.0
        return self.alpha * (1.0 + depth) ** (-self.beta)


@dataclass(frozen=True)
class NormalLeafPrior:
    """Normal(0, sigma_mu^2) leaf prior for pseudo-Gaussian backfitting."""

    sigma_mu: float

    def __post_init__(self):
        if not self.sigma_mu > 0:
            raise DomainError("sigma_mu must be positive")


@dataclass
class LeafStats:
    """Per-leaf conjugate sufficient statistics, ordered by leaf node id."""

    A: np.ndarray
    B: np.ndarray
    leaf_nodes: np.ndarray = field(default=None)


@dataclass
class Forest:
    """Sum-of-trees function r(x) (or r(x, k) when a category slot exists)."""

    trees: list
    split_probs: np.ndarray
    leaf_prior: object  # LogGammaPrior | NormalLeafPrior
    depth_prior: DepthPrior
    cut_grids: list
    n_predictors: int
    n_cat: int = 0  # 0 = no category slot

    @property
    def has_category_slot(self) -> bool:
        return self.n_cat > 0

    @property
    def cat_cdf(self) -> np.ndarray | None:
        return category_cdf(self.n_cat) if self.n_cat else None

    def evaluate(self, X: np.ndarray, k=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_predictors:
            raise SchemaError(
                f"expected {self.n_predictors} predictors, got {X.shape[1]}"
            )
        if self.has_category_slot:
            if k is None:
                raise SchemaError("forest has a category slot; k is required")
            cat = np.broadcast_to(np.asarray(k, dtype=np.int64), (X.shape[0],)).copy()
            if np.any((cat < 1) | (cat > self.n_cat)):
                raise SchemaError(f"category index out of range 1..{self.n_cat}")
        elif k is not None:
            raise SchemaError("forest has no category slot; k must be omitted")
        else:
            cat = None
        out = np.zeros(X.shape[0])
        for tree in self.trees:
            node = tree.assign(X, cat, self.n_predictors, self.cat_cdf)
            out += tree.leaf_value[node]
        return out


def make_forest(X: np.ndarray, n_trees: int, leaf_prior, *, n_cat: int = 0,
                depth_prior: DepthPrior | None = None, max_cuts: int = 100,
                w_cat: float = 0.5) -> Forest:
    """Forest of root-only zero trees with quantile cut grids built from X."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise SchemaError("X must be a 2-D matrix")
    n_pred = X.shape[1]
    grids = []
    for j in range(n_pred):
        qs = np.quantile(X[:, j], np.arange(1, max_cuts + 1) / (max_cuts + 1))
        grids.append(np.unique(qs))
    n_slots = n_pred + (1 if n_cat else 0)
    probs = np.full(n_slots, 1.0 / n_slots)
    if n_cat:
        # Prior mean of Dirichlet(1,..,1,w): shrink the category slot.
        probs = np.full(n_slots, 1.0 / (n_pred + w_cat))
        probs[-1] = w_cat / (n_pred + w_cat)
    return Forest(
        trees=[Tree() for _ in range(n_trees)],
        split_probs=probs,
        leaf_prior=leaf_prior,
        depth_prior=depth_prior or DepthPrior(),
        cut_grids=grids,
        n_predictors=n_pred,
        n_cat=n_cat,
    )


def evaluate_forest(forest: Forest, x, k=None):
    """Sum of the leaf values reached by (x, k) across all trees."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(forest.evaluate(x[None, :], k)[0])
    return forest.evaluate(x, k)


def tree_log_prior(tree: Tree, depth_prior: DepthPrior, *, split_probs=None,
                   cut_counts=None) -> float:
    """Log prior of a tree structure; split-rule factors included when
    ``split_probs`` (and grid sizes) are supplied."""
    out = 0.0
    for node in tree.branches():
        d = _node_depth(int(node))
        out += math.log(depth_prior.p_split(d))
        if split_probs is not None:
            j = int(tree.var[node])
            out += math.log(split_probs[j])
            if cut_counts is not None and j < len(cut_counts):
                out -= math.log(cut_counts[j])
            # category rules have a Uniform(0,1) cutoff: density 1 adds nothing
    for node in tree.leaves():
        p = depth_prior.p_split(_node_depth(int(node)))
        if p > 0.0:
            out += math.log1p(-p)
    return out


def integrated_log_marginal(stats: LeafStats, prior: LogGammaPrior) -> float:
    """Sum over leaves of the log integrated likelihood under log Gam(a, b)."""
    A = np.asarray(stats.A, dtype=float)
    B = np.asarray(stats.B, dtype=float)
    if not np.all(np.isfinite(B)):
        raise NumericalOverflowError("non-finite B in leaf statistics")
    a, b = prior.a, prior.b
    per_leaf = (
        a * math.log(b)
        - gammaln(a)
        + gammaln(a + A)
        - (a + A) * np.log(b + B)
    )
    return float(per_leaf.sum())


def draw_leaves(stats: LeafStats, prior: LogGammaPrior, rng: np.random.Generator) -> np.ndarray:
    """Independent log Gam(a + A_l, b + B_l) draws, one per leaf."""
    A = np.asarray(stats.A, dtype=float)
    B = np.asarray(stats.B, dtype=float)
    return np.atleast_1d(sample_log_gamma(prior.a + A, prior.b + B, rng))


def update_split_probs(counts, w, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet(1 + n_1, .., 1 + n_P[, w + n_cat]) draw over split slots."""
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0):
        raise DomainError("split counts must be nonnegative")
    alpha = 1.0 + counts
    if w is not None:
        alpha[-1] = w + counts[-1]
    return rng.dirichlet(alpha)


# ---------------------------------------------------------------------------
# Leaf models
# ---------------------------------------------------------------------------


class LogGammaLeaves:
    """Poisson-gamma style leaf model: stats A (counts) and B (exposures)."""

    def __init__(self, prior: LogGammaPrior):
        self.prior = prior
        self.a_units = None
        self.coef_units = None
        # per-leaf normalizing constant a*log(b) - log Gamma(a)
        self._const = prior.a * math.log(prior.b) - float(gammaln(prior.a))

    def set_weights(self, a_units: np.ndarray, coef_units: np.ndarray) -> None:
        self.a_units = a_units
        self.coef_units = coef_units

    def unit_stats(self, eta: np.ndarray):
        e = np.exp(np.clip(eta, -EXP_CLAMP, EXP_CLAMP))
        return self.a_units, self.coef_units * e

    def log_marginal(self, A, B):
        total = B.sum()
        if not np.isfinite(total):
            return None
        a, b = self.prior.a, self.prior.b
        return float(np.sum(gammaln(a + A) - (a + A) * np.log(b + B))
                     + self._const * A.size)

    def draw(self, A, B, rng):
        return np.atleast_1d(_log_gamma_draw(self.prior.a + A, self.prior.b + B, rng))


class NormalLeaves:
    """Weighted-normal leaf model with unit regression variance.

    Statistics are (sum of weights, sum of weight * partial residual); the
    log marginal drops partition-independent constants, which cancel in the
    Metropolis ratio.
    """

    def __init__(self, prior: NormalLeafPrior):
        self.prior = prior
        self.prec_units = None
        self.target_units = None

    def set_weights(self, prec_units: np.ndarray, target_units: np.ndarray) -> None:
        self.prec_units = prec_units
        self.target_units = target_units

    def unit_stats(self, eta: np.ndarray):
        return self.prec_units, self.prec_units * (self.target_units - eta)

    def log_marginal(self, SW, SWR):
        if not (np.all(np.isfinite(SW)) and np.all(np.isfinite(SWR))):
            return None
        tau0 = 1.0 / self.prior.sigma_mu**2
        post = tau0 + SW
        return float(np.sum(0.5 * (math.log(tau0) - np.log(post))
                            + 0.5 * SWR**2 / post))

    def draw(self, SW, SWR, rng):
        post = 1.0 / (1.0 / self.prior.sigma_mu**2 + np.asarray(SW, dtype=float))
        mean = post * np.asarray(SWR, dtype=float)
        return mean + np.sqrt(post) * rng.standard_normal(np.shape(mean))


def _leaf_model_for(prior):
    if isinstance(prior, LogGammaPrior):
        return LogGammaLeaves(prior)
    if isinstance(prior, NormalLeafPrior):
        return NormalLeaves(prior)
    raise DomainError(f"unsupported leaf prior {type(prior).__name__}")


# ---------------------------------------------------------------------------
# Move proposals
# ---------------------------------------------------------------------------


@dataclass
class Proposal:
    kind: str
    tree: Tree
    node: int
    log_structure_ratio: float  # prior x proposal terms after rule cancellation


def _draw_rule(forest: Forest, rng: np.random.Generator):
    """Draw (var, threshold) from the rule prior; None if the slot has no cuts."""
    cum = np.cumsum(forest.split_probs)
    j = int(np.searchsorted(cum, rng.random() * cum[-1]))
    if j < forest.n_predictors:
        grid = forest.cut_grids[j]
        if grid.size == 0:
            return None
        return j, float(grid[rng.integers(grid.size)])
    return j, float(rng.random())


def propose_move(tree: Tree, forest: Forest, rng: np.random.Generator) -> Proposal | None:
    """One grow/prune/change proposal; None when the drawn move is infeasible.

    Split rules are drawn from the prior so their densities cancel; the
    returned ratio carries the depth-prior and node-selection terms only.
    """
    u = rng.random()
    if u < MOVE_PROBS["grow"]:
        leaves = tree.leaves()
        node = int(leaves[rng.integers(leaves.size)])
        d = _node_depth(node)
        p_split = forest.depth_prior.p_split(d)
        if p_split <= 0.0:
            return None
        rule = _draw_rule(forest, rng)
        if rule is None:
            return None
        new = tree.copy()
        new.grow(node, *rule)
        p_child = forest.depth_prior.p_split(d + 1)
        log_ratio = (
            math.log(MOVE_PROBS["prune"]) - math.log(MOVE_PROBS["grow"])
            + math.log(leaves.size) - math.log(new.nog_nodes().size)
            + math.log(p_split) + 2.0 * math.log1p(-p_child) - math.log1p(-p_split)
        )
        return Proposal("grow", new, node, log_ratio)
    if u < MOVE_PROBS["grow"] + MOVE_PROBS["prune"]:
        nogs = tree.nog_nodes()
        if nogs.size == 0:
            return None
        node = int(nogs[rng.integers(nogs.size)])
        d = _node_depth(node)
        new = tree.copy()
        new.prune(node)
        p_split = forest.depth_prior.p_split(d)
        p_child = forest.depth_prior.p_split(d + 1)
        log_ratio = (
            math.log(MOVE_PROBS["grow"]) - math.log(MOVE_PROBS["prune"])
            + math.log(nogs.size) - math.log(new.leaves().size)
            + math.log1p(-p_split) - math.log(p_split) - 2.0 * math.log1p(-p_child)
        )
        return Proposal("prune", new, node, log_ratio)
    branches = tree.branches()
    if branches.size == 0:
        return None
    node = int(branches[rng.integers(branches.size)])
    rule = _draw_rule(forest, rng)
    if rule is None:
        return None
    new = tree.copy()
    new.var[node], new.threshold[node] = rule
    return Proposal("change", new, node, 0.0)


def backfit_tree(forest: Forest, t: int, suffstat_provider, rng: np.random.Generator) -> Tree:
    """One Metropolis-Hastings structure move on tree ``t`` followed by a
    conjugate redraw of its leaves.

    ``suffstat_provider`` maps a candidate Tree to LeafStats aligned with
    ``tree.leaves()`` order.  Proposals with non-finite B are rejected.
    """
    model = _leaf_model_for(forest.leaf_prior)
    tree = forest.trees[t]
    cur_stats = suffstat_provider(tree)
    cur_marg = model.log_marginal(cur_stats.A, cur_stats.B)
    if cur_marg is None:
        raise NumericalOverflowError("non-finite statistics for the current tree")

    prop = propose_move(tree, forest, rng)
    accepted = False
    if prop is not None:
        prop_stats = suffstat_provider(prop.tree)
        prop_marg = model.log_marginal(prop_stats.A, prop_stats.B)
        if prop_marg is not None:
            log_alpha = prop.log_structure_ratio + prop_marg - cur_marg
            if math.log(rng.random()) < log_alpha:
                accepted = True
    if accepted:
        forest.trees[t] = prop.tree
        tree, stats = prop.tree, prop_stats
    else:
        stats = cur_stats
    tree.leaf_value[tree.leaves()] = model.draw(stats.A, stats.B, rng)
    return tree


def sample_tree_from_prior(forest: Forest, rng: np.random.Generator) -> Tree:
    """Direct simulation from the tree prior (structure, rules, leaves)."""
    tree = Tree()
    frontier = [0]
    while frontier:
        node = frontier.pop()
        d = _node_depth(node)
        if rng.random() < forest.depth_prior.p_split(d):
            rule = _draw_rule(forest, rng)
            if rule is None:
                continue
            tree.grow(node, *rule)
            frontier.extend((2 * node + 1, 2 * node + 2))
    leaves = tree.leaves()
    if isinstance(forest.leaf_prior, LogGammaPrior):
        vals = sample_log_gamma(
            np.full(leaves.size, forest.leaf_prior.a),
            np.full(leaves.size, forest.leaf_prior.b), rng)
    else:
        vals = forest.leaf_prior.sigma_mu * rng.standard_normal(leaves.size)
    tree.leaf_value[leaves] = np.atleast_1d(vals)
    return tree


def sample_forest_from_prior(forest: Forest, rng: np.random.Generator) -> None:
    """Replace every tree with a draw from the prior, in place."""
    forest.trees = [sample_tree_from_prior(forest, rng) for _ in forest.trees]


def split_counts(forest: Forest) -> np.ndarray:
    """Number of branch rules per split slot across the ensemble."""
    counts = np.zeros(len(forest.split_probs), dtype=np.int64)
    for tree in forest.trees:
        br = tree.branches()
        if br.size:
            np.add.at(counts, tree.var[br], 1)
    return counts


def forest_snapshot(forest: Forest):
    """Compact copy of tree structures for persisted draws: per-forest flat
    (var, threshold, leaf_value) arrays plus tree offsets."""
    sizes = []
    var_parts, thr_parts, val_parts = [], [], []
    for tree in forest.trees:
        n = int(np.flatnonzero(tree.var != UNUSED).max()) + 1 if tree.var[0] != UNUSED else 1
        sizes.append(n)
        var_parts.append(tree.var[:n].copy())
        thr_parts.append(tree.threshold[:n].copy())
        val_parts.append(tree.leaf_value[:n].copy())
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    return {
        "offsets": offsets,
        "var": np.concatenate(var_parts),
        "threshold": np.concatenate(thr_parts),
        "leaf_value": np.concatenate(val_parts),
    }


def evaluate_snapshot(snap, X: np.ndarray, k, n_predictors: int, n_cat: int) -> np.ndarray:
    """Evaluate a snapshotted forest at rows of X (and category k)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cat = None
    cdf = None
    if n_cat:
        cat = np.broadcast_to(np.asarray(k, dtype=np.int64), (X.shape[0],)).copy()
        cdf = category_cdf(n_cat)
    out = np.zeros(X.shape[0])
    offsets = snap["offsets"]
    for t in range(len(offsets) - 1):
        lo, hi = int(offsets[t]), int(offsets[t + 1])
        tree = Tree.__new__(Tree)
        tree.var = snap["var"][lo:hi]
        tree.threshold = snap["threshold"][lo:hi]
        tree.leaf_value = snap["leaf_value"][lo:hi]
        node = tree.assign(X, cat, n_predictors, cdf)
        out += tree.leaf_value[node]
    return out


# ---------------------------------------------------------------------------
# Backfitting engine
# ---------------------------------------------------------------------------


class Backfitter:
    """Caches per-tree leaf assignments and the running ensemble fit for one
    model's evaluation units, and runs fused backfitting sweeps.

    A "unit" is an observation for proportional models or an
    (observation, category) pair for non-proportional ones.
    """

    def __init__(self, forest: Forest, X_units: np.ndarray, cat_units: np.ndarray | None = None):
        self.forest = forest
        self.Xu = np.ascontiguousarray(X_units, dtype=float)
        self.cat = None if cat_units is None else np.asarray(cat_units, dtype=np.int64)
        self.model = _leaf_model_for(forest.leaf_prior)
        self.assignments = [
            tree.assign(self.Xu, self.cat, forest.n_predictors, forest.cat_cdf)
            for tree in forest.trees
        ]
        self.r = np.zeros(self.Xu.shape[0])
        for tree, nodes in zip(forest.trees, self.assignments):
            self.r += tree.leaf_value[nodes]

    # -- weights -----------------------------------------------------------
    def set_weights(self, u1: np.ndarray, u2: np.ndarray) -> None:
        """Per-sweep unit weights, forwarded to the leaf model."""
        self.model.set_weights(u1, u2)

    # -- statistics --------------------------------------------------------
    @staticmethod
    def _leaf_lookup(tree: Tree, nodes: np.ndarray):
        leaf_nodes = tree.leaves()
        ordinal = np.searchsorted(leaf_nodes, nodes)
        return leaf_nodes, ordinal

    def _stats(self, tree: Tree, nodes: np.ndarray, u1: np.ndarray, u2: np.ndarray):
        leaf_nodes, ordinal = self._leaf_lookup(tree, nodes)
        A = np.bincount(ordinal, weights=u1, minlength=leaf_nodes.size)
        B = np.bincount(ordinal, weights=u2, minlength=leaf_nodes.size)
        return leaf_nodes, A, B

    def suffstats(self, t: int, candidate: Tree) -> LeafStats:
        """LeafStats of a candidate structure for tree ``t`` against the
        current partial fit, in ``candidate.leaves()`` order."""
        eta = self.r - self.forest.trees[t].leaf_value[self.assignments[t]]
        u1, u2 = self.model.unit_stats(eta)
        nodes = candidate.assign(self.Xu, self.cat, self.forest.n_predictors,
                                 self.forest.cat_cdf)
        leaf_nodes, A, B = self._stats(candidate, nodes, u1, u2)
        return LeafStats(A=A, B=B, leaf_nodes=leaf_nodes)

    # -- sweep -------------------------------------------------------------
    def _propose_assignment(self, prop: Proposal, t: int) -> np.ndarray:
        cur = self.assignments[t]
        if prop.kind == "grow":
            nodes = cur.copy()
            sel = np.flatnonzero(cur == prop.node)
            if sel.size:
                tree, u = prop.tree, prop.node
                j = int(tree.var[u])
                if j < self.forest.n_predictors:
                    left = self.Xu[sel, j] <= tree.threshold[u]
                else:
                    left = self.forest.cat_cdf[self.cat[sel] - 1] <= tree.threshold[u]
                nodes[sel] = np.where(left, 2 * u + 1, 2 * u + 2)
            return nodes
        if prop.kind == "prune":
            nodes = cur.copy()
            sel = (cur == 2 * prop.node + 1) | (cur == 2 * prop.node + 2)
            nodes[sel] = prop.node
            return nodes
        return prop.tree.assign(self.Xu, self.cat, self.forest.n_predictors,
                                self.forest.cat_cdf)

    def backfit(self, t: int, rng: np.random.Generator) -> None:
        forest = self.forest
        tree = forest.trees[t]
        cur_nodes = self.assignments[t]
        eta = self.r - tree.leaf_value[cur_nodes]
        u1, u2 = self.model.unit_stats(eta)

        cur_leaf_nodes, cur_A, cur_B = self._stats(tree, cur_nodes, u1, u2)
        cur_marg = self.model.log_marginal(cur_A, cur_B)
        if cur_marg is None:
            raise NumericalOverflowError("non-finite statistics for the current tree")

        prop = propose_move(tree, forest, rng)
        accepted = False
        if prop is not None:
            new_nodes = self._propose_assignment(prop, t)
            leaf_nodes, A, B = self._stats(prop.tree, new_nodes, u1, u2)
            marg = self.model.log_marginal(A, B)
            if marg is not None:
                if math.log(rng.random()) < prop.log_structure_ratio + marg - cur_marg:
                    accepted = True
        if accepted:
            forest.trees[t] = prop.tree
            self.assignments[t] = new_nodes
            tree, nodes = prop.tree, new_nodes
        else:
            leaf_nodes, A, B = cur_leaf_nodes, cur_A, cur_B
            nodes = cur_nodes
        tree.leaf_value[leaf_nodes] = self.model.draw(A, B, rng)
        self.r = eta + tree.leaf_value[nodes]

    def sweep(self, rng: np.random.Generator) -> None:
        for t in range(len(self.forest.trees)):
            self.backfit(t, rng)

    def update_split_probs(self, w: float | None, rng: np.random.Generator) -> None:
        self.forest.split_probs = update_split_probs(split_counts(self.forest), w, rng)

    def reset_from_prior(self, rng: np.random.Generator) -> None:
        """Draw the whole ensemble from the prior and refresh caches."""
        sample_forest_from_prior(self.forest, rng)
        self.assignments = [
            tree.assign(self.Xu, self.cat, self.forest.n_predictors, self.forest.cat_cdf)
            for tree in self.forest.trees
        ]
        self.r = np.zeros(self.Xu.shape[0])
        for tree, nodes in zip(self.forest.trees, self.assignments):
            self.r += tree.leaf_value[nodes]
