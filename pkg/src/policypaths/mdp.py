"""Finite average-reward MDPs and the exact quantities built on them.

Conventions: the transition kernel is indexed ``kernel[s, a, s']``; the
induced state transition matrix is column-stochastic with entry ``(s', s)``
so that the stationary distribution satisfies ``mu = P @ mu``.
"""

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import CapExceeded, NonConvergence, ZeroStateMass

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-12
STATIONARY_CAP = 10 ** 6
ENUMERATION_CAP = 10 ** 5
DEFAULT_REWARD_BOUND = 1.0


@dataclass(frozen=True)
class Mdp:
    """A finite MDP (S, A, P, r) with bounded nonnegative rewards."""

    kernel: np.ndarray        # (S, A, S), each kernel[s, a] a distribution
    reward: np.ndarray        # (S, A), entries in [0, reward_bound]
    reward_bound: float = DEFAULT_REWARD_BOUND

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=float)
        reward = np.asarray(self.reward, dtype=float)
        if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[2]:
            raise ValueError(f"kernel must have shape (S, A, S), got {kernel.shape}")
        if reward.shape != kernel.shape[:2]:
            raise ValueError(f"reward shape {reward.shape} does not match kernel {kernel.shape[:2]}")
        if np.any(kernel < 0):
            raise ValueError("kernel entries must be nonnegative")
        row_sums = kernel.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > ROW_SUM_TOL:
            raise ValueError("kernel rows must sum to 1 within 1e-12")
        if self.reward_bound <= 0:
            raise ValueError("reward_bound must be positive")
        if np.any(reward < 0) or np.any(reward > self.reward_bound):
            raise ValueError("reward entries must lie in [0, reward_bound]")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "reward", reward)

    @property
    def n_states(self):
        return self.kernel.shape[0]

    @property
    def n_actions(self):
        return self.kernel.shape[1]

    def to_dict(self):
        return {
            "n_states": int(self.n_states),
            "n_actions": int(self.n_actions),
            "kernel": self.kernel.tolist(),
            "reward": self.reward.tolist(),
            "reward_bound": float(self.reward_bound),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        kernel = np.asarray(data["kernel"], dtype=float)
        reward = np.asarray(data["reward"], dtype=float)
        mdp = cls(kernel=kernel, reward=reward, reward_bound=float(data["reward_bound"]))
        if mdp.n_states != data["n_states"] or mdp.n_actions != data["n_actions"]:
            raise ValueError("declared sizes disagree with the kernel shape")
        return mdp

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class StationaryDistribution:
    """Stationary distribution of an ergodic chain, with achieved residual."""

    mu: np.ndarray
    residual: float
    iterations: int


@dataclass
class ErgodicityCertificate:
    """Result of checking ergodicity over all deterministic policies."""

    ergodic: bool
    witness: tuple | None = None       # action assignment of a failing policy
    reason: str | None = None
    checked_policies: int = 0


def check_policy(pi, n_states=None, n_actions=None, tol=ROW_SUM_TOL):
    """Validate a policy table and return it as a float array."""
    pi = np.asarray(pi, dtype=float)
    if pi.ndim != 2:
        raise ValueError("policy must be a 2-D table pi[s, a]")
    if n_states is not None and pi.shape != (n_states, n_actions):
        raise ValueError(f"policy shape {pi.shape} != ({n_states}, {n_actions})")
    if np.any(pi < 0):
        raise ValueError("policy entries must be nonnegative")
    if np.max(np.abs(pi.sum(axis=1) - 1.0)) > tol:
        raise ValueError("policy rows must sum to 1 within 1e-12")
    return pi


def transition_matrix(mdp, pi):
    """Column-stochastic state transition matrix P[s', s] under policy pi."""
    pi = check_policy(pi, mdp.n_states, mdp.n_actions)
    return np.einsum("sap,sa->ps", mdp.kernel, pi)


def stationary_distribution(P, tol=STATIONARY_TOL, max_iter=STATIONARY_CAP):
    """Stationary distribution of a column-stochastic matrix by power iteration.

    Raises NonConvergence when the residual fails to reach ``tol`` within
    ``max_iter`` iterations (a symptom of a non-ergodic or periodic chain).
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    if P.shape != (n, n):
        raise ValueError("P must be square")
    if np.max(np.abs(P.sum(axis=0) - 1.0)) > 1e-10:
        raise ValueError("P must be column-stochastic")
    # Asymmetric deterministic start: the uniform vector solves the balance
    # equation of some periodic chains exactly, masking non-convergence.
    mu = np.arange(1.0, n + 1.0)
    mu /= mu.sum()
    for it in range(1, max_iter + 1):
        nxt = P @ mu
        nxt /= nxt.sum()
        residual = np.max(np.abs(P @ nxt - nxt))
        if residual <= tol:
            return StationaryDistribution(mu=nxt, residual=float(residual), iterations=it)
        mu = nxt
    raise NonConvergence(
        f"power iteration did not reach tol={tol} in {max_iter} iterations "
        f"(last residual {residual:.3e}); the chain may be non-ergodic"
    )


def occupancy(mdp, pi):
    """State-action stationary distribution mu_hat[s, a] induced by pi."""
    pi = check_policy(pi, mdp.n_states, mdp.n_actions)
    mu = stationary_distribution(transition_matrix(mdp, pi)).mu
    return mu[:, None] * pi


def policy_from_occupancy(mu_hat, tol=0.0):
    """Recover the policy whose occupancy measure is ``mu_hat``."""
    mu_hat = np.asarray(mu_hat, dtype=float)
    marginals = mu_hat.sum(axis=1)
    if np.any(marginals <= tol):
        raise ZeroStateMass(f"state marginals must be positive, got min {marginals.min():.3e}")
    return mu_hat / marginals[:, None]


def average_reward(mdp, pi, reward=None):
    """Long-run average reward J_r(pi); ``reward`` defaults to the MDP's table."""
    if reward is None:
        reward = mdp.reward
    return float(np.sum(np.asarray(reward, dtype=float) * occupancy(mdp, pi)))


def _strongly_connected(P):
    adj = P.T > 0  # adj[s, s'] = reachable in one step
    n = adj.shape[0]
    from scipy.sparse.csgraph import connected_components

    n_comp, _ = connected_components(adj, directed=True, connection="strong")
    return n_comp == 1


def _period(P):
    """Period of an irreducible chain via BFS level differences."""
    n = P.shape[0]
    adj = [np.nonzero(P[:, s] > 0)[0] for s in range(n)]
    dist = np.full(n, -1, dtype=int)
    dist[0] = 0
    queue = [0]
    while queue:
        u = queue.pop(0)
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    g = 0
    for u in range(n):
        for v in adj[u]:
            g = math.gcd(g, dist[u] + 1 - dist[v])
    return abs(g)


def deterministic_policy(assignment, n_actions):
    """Point-mass policy table from an action index per state."""
    assignment = np.asarray(assignment, dtype=int)
    pi = np.zeros((assignment.size, n_actions))
    pi[np.arange(assignment.size), assignment] = 1.0
    return pi


def enumerate_deterministic_policies(mdp, cap=ENUMERATION_CAP):
    """All |A|^|S| point-mass policies in lexicographic assignment order."""
    count = mdp.n_actions ** mdp.n_states
    if count > cap:
        raise CapExceeded(f"{count} deterministic policies exceed the cap {cap}")
    return [
        deterministic_policy(assignment, mdp.n_actions)
        for assignment in itertools.product(range(mdp.n_actions), repeat=mdp.n_states)
    ]


def check_ergodicity(mdp, cap=ENUMERATION_CAP):
    """Certify that every deterministic policy induces an ergodic chain.

    Sufficient for all stochastic policies: the edge set of any policy's
    chain contains that of a deterministic selection from its support.
    """
    count = mdp.n_actions ** mdp.n_states
    if count > cap:
        raise CapExceeded(f"{count} deterministic policies exceed the cap {cap}")
    checked = 0
    for assignment in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
        checked += 1
        P = transition_matrix(mdp, deterministic_policy(assignment, mdp.n_actions))
        if not _strongly_connected(P):
            return ErgodicityCertificate(
                ergodic=False, witness=assignment, reason="reducible",
                checked_policies=checked)
        if _period(P) != 1:
            return ErgodicityCertificate(
                ergodic=False, witness=assignment, reason="periodic",
                checked_policies=checked)
    return ErgodicityCertificate(ergodic=True, checked_policies=checked)


def random_ergodic_mdp(seed, n_states, n_actions, concentration=1.0,
                       reward_bound=DEFAULT_REWARD_BOUND):
    """Random MDP with a strictly positive Dirichlet kernel (hence ergodic)."""
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    rng = np.random.default_rng(seed)
    kernel = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    reward = rng.uniform(0.0, reward_bound, size=(n_states, n_actions))
    return Mdp(kernel=kernel, reward=reward, reward_bound=reward_bound)


def discounted_to_average(mdp, gamma, restart):
    """Average-reward MDP equivalent to a discounted one via restart mixing."""
    if not 0.0 <= gamma < 1.0 + 1e-15:
        raise ValueError("gamma must lie in [0, 1]")
    restart = np.asarray(restart, dtype=float)
    if restart.shape != (mdp.n_states,) or np.any(restart < 0) \
            or abs(restart.sum() - 1.0) > ROW_SUM_TOL:
        raise ValueError("restart must be a distribution over states")
    kernel = gamma * mdp.kernel + (1.0 - gamma) * restart[None, None, :]
    return Mdp(kernel=kernel, reward=mdp.reward, reward_bound=mdp.reward_bound)
