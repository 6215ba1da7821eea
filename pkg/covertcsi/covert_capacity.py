"""
Covert capacity solvers for causal and noncausal transmitter CSI
Maximizes the achievable rate over strategy maps and auxiliary distributions
subject to P_Z = Q0 (or D(P_Z||Q0) <= A) and E[b(X)] <= B
"""

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations, combinations_with_replacement, islice, product
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import qr
from scipy.optimize import linprog, minimize, minimize_scalar
from scipy.special import rel_entr

from config import SolverSettings, ORACLE_BUDGET
from covertcsi.exceptions import BudgetExceededError, InfeasibleError
from covertcsi.parallel import run_indexed
from covertcsi.probability import (
    Pmf, ConditionalPmf, JointPmf, mutual_information, kl_divergence, tv_distance, nats_to_bits
)
from covertcsi.channel_model import (
    StateDmc, StrategyMap, q0, effective_channels, aux_state_laws, causal_joint,
    noncausal_joint, cost_and_covert_residuals
)

logger = logging.getLogger(__name__)

CAUSAL = 'causal'
NONCAUSAL = 'noncausal'
MODES = (CAUSAL, NONCAUSAL)
AUX_BOUNDS = ('achiev', 'converse')

GRAD_CLIP = 1e3
TINY = 1e-300
LP_OPTIONS = {'primal_feasibility_tolerance': 1e-10, 'dual_feasibility_tolerance': 1e-10}


@dataclass
class CapacitySolution:
    """Optimizer of one of the covert-rate problems"""
    mode: str
    rate_bits: float
    aux_dist: Union[Pmf, ConditionalPmf]
    map: StrategyMap
    key_deficit_bits: float
    key_feasible: bool
    cost_used: float
    covert_residual_nats: float
    covert_divergence_nats: float = 0.0
    A: float = 0.0
    B: float = math.inf
    diagnostics: Dict = field(default_factory=dict)

    def joint(self, ch: StateDmc) -> JointPmf:
        if self.mode == CAUSAL:
            return causal_joint(ch, self.aux_dist, self.map)
        return noncausal_joint(ch, self.aux_dist, self.map)

    @property
    def aux_label(self) -> str:
        return 'V' if self.mode == CAUSAL else 'U'

    def aux_marginal(self, ch: StateDmc) -> Pmf:
        """P_V, or P_U = sum_s P_S(s) P_{U|S}(.|s)"""
        if self.mode == CAUSAL:
            return self.aux_dist
        return Pmf.normalized(ch.state_dist.probs @ self.aux_dist.rows)


@dataclass
class SurfacePoint:
    A: float
    B: float
    value_bits: float


@dataclass
class InnerResult:
    """Best point found for one strategy map"""
    x: np.ndarray
    value_nats: float
    iterations: int = 0
    gap_nats: float = float('nan')
    converged: bool = True
    restarts_to_best: int = 0
    nonconverged_starts: int = 0


# ---------------------------------------------------------------------------
# Objectives

def _safe_log(x):
    return np.log(np.maximum(x, TINY))


def causal_rate_nats(p: np.ndarray, wy: np.ndarray) -> np.ndarray:
    """I(V;Y) in nats for weights p of shape (..., k) and per-aux output laws wy of shape (k, ny)."""
    p = np.asarray(p, dtype=float)
    q_y = p @ wy
    terms = rel_entr(wy, q_y[..., None, :]).sum(axis=-1)
    per_aux = np.where(p > 0, terms, 0.0)
    return (p * per_aux).sum(axis=-1)


def noncausal_rate_nats(q: np.ndarray, wy_us: np.ndarray) -> np.ndarray:
    """I(U;Y) - I(U;S) in nats for joint weights q of shape (..., nu, ns)."""
    q = np.asarray(q, dtype=float)
    r_uy = np.einsum('...us,usy->...uy', q, wy_us)
    q_u = q.sum(axis=-1)
    q_s = q.sum(axis=-2)
    r_y = r_uy.sum(axis=-2)
    i_uy = rel_entr(r_uy, q_u[..., :, None] * r_y[..., None, :]).sum(axis=(-2, -1))
    i_us = rel_entr(q, q_u[..., :, None] * q_s[..., None, :]).sum(axis=(-2, -1))
    return i_uy - i_us


def _independent_rows(a: np.ndarray, b: np.ndarray, tol: float = 1e-10) -> Tuple[np.ndarray, np.ndarray]:
    """Drop linearly dependent equality rows."""
    if a.shape[0] == 0:
        return a, b
    _, r, piv = qr(a.T, mode='economic', pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int((diag > tol * max(diag.max(), 1.0)).sum())
    keep = np.sort(piv[:rank])
    return a[keep], b[keep]


def _lp(c, a_eq, b_eq, a_ub, b_ub, bounds):
    return linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds,
                   method='highs-ds', options=LP_OPTIONS)


# ---------------------------------------------------------------------------
# Per-map solvers

class CausalMapSolver:
    """
    Maximizes I(V;Y) over P_V for a fixed causal strategy map.

    A = 0 is solved by conditional gradient over the polytope
    {P_V : P_Z = Q0, E[b(X)] <= B}; A > 0 uses SLSQP with the
    divergence as a convex inequality.
    """

    def __init__(self, ch: StateDmc, smap: StrategyMap, A: float = 0.0, B: Optional[float] = None,
                 settings: Optional[SolverSettings] = None):
        self.settings = settings or SolverSettings()
        self.A = float(A)
        self.B = ch.budget if B is None else float(B)
        if self.A < 0 or self.B < 0:
            raise ValueError(f"A and B must be non-negative, got A={A}, B={B}")
        self.ch = ch
        self.map = smap
        self.wy, self.wz, self.cost = effective_channels(ch, smap)
        self.ref = q0(ch).probs
        self.k = smap.aux_size
        blocked = (self.wz[:, self.ref <= 0] > 0).any(axis=1)
        self.ub = np.where(blocked, 0.0, 1.0)
        self.bounds = [(0.0, u) for u in self.ub]
        a_eq = np.vstack([np.ones((1, self.k)), self.wz.T])
        b_eq = np.concatenate([[1.0], self.ref])
        self.a_eq, self.b_eq = _independent_rows(a_eq, b_eq)
        if math.isinf(self.B):
            self.a_ub, self.b_ub = None, None
        else:
            self.a_ub, self.b_ub = self.cost[None, :], np.array([self.B])

    def objective(self, p: np.ndarray) -> float:
        return float(causal_rate_nats(p, self.wy))

    def gradient(self, p: np.ndarray) -> np.ndarray:
        q_y = p @ self.wy
        d = rel_entr(self.wy, q_y[None, :]).sum(axis=1)
        return np.clip(d - 1.0, -GRAD_CLIP, GRAD_CLIP)

    def clean(self, p: np.ndarray) -> np.ndarray:
        p = np.clip(np.asarray(p, dtype=float), 0.0, self.ub)
        return p / p.sum()

    def divergence(self, p: np.ndarray) -> float:
        return kl_divergence(p @ self.wz, self.ref)

    def feasible(self, p: np.ndarray) -> bool:
        tol = self.settings.feasibility_tol
        if not math.isinf(self.B) and p @ self.cost > self.B + tol:
            return False
        if self.A == 0:
            return tv_distance(p @ self.wz, self.ref) <= tol
        return self.divergence(p) <= self.A + tol

    def lp_vertex(self, direction: np.ndarray) -> np.ndarray:
        """Vertex of the A=0 polytope maximizing direction . p"""
        result = _lp(-direction, self.a_eq, self.b_eq, self.a_ub, self.b_ub, self.bounds)
        if result.status != 0:
            raise InfeasibleError(f"no P_V meets P_Z=Q0 and E[b(X)]<={self.B} for map {self.map.to_list()}")
        return self.clean(result.x)

    def conditional_gradient(self, p: np.ndarray) -> Tuple[np.ndarray, int, float]:
        max_iter = self.settings.fw_max_iter
        gap = float('inf')
        value = self.objective(p)
        iteration = 0
        for iteration in range(1, max_iter + 1):
            g = self.gradient(p)
            vertex = self.lp_vertex(g)
            direction = vertex - p
            gap = float(g @ direction)
            if gap <= self.settings.fw_gap_tol:
                break
            res = minimize_scalar(lambda t: -self.objective(p + t * direction), bounds=(0.0, 1.0),
                                  method='bounded', options={'xatol': 1e-12})
            best_t, best_value = 0.0, value
            for t in (float(res.x), 1.0):
                trial = self.objective(self.clean(p + t * direction))
                if trial > best_value:
                    best_t, best_value = t, trial
            if best_t == 0.0:
                break
            p = self.clean(p + best_t * direction)
            value = best_value
            logger.debug(f"conditional gradient iter {iteration}: I={value:.12f} nats gap={gap:.3e}")
        return p, iteration, gap

    def slsqp(self, start: np.ndarray) -> Tuple[np.ndarray, bool]:
        constraints = [{'type': 'eq', 'fun': lambda x: np.array([x.sum() - 1.0]),
                        'jac': lambda x: np.ones((1, self.k))}]
        if self.A == 0:
            a_eq, b_eq = self.a_eq, self.b_eq
            constraints = [{'type': 'eq', 'fun': lambda x: a_eq @ x - b_eq, 'jac': lambda x: a_eq}]
        else:
            def divergence_slack(x):
                r = np.maximum(x @ self.wz, 0.0)
                return np.array([self.A - float(rel_entr(r, self.ref).sum())])

            def divergence_jac(x):
                r = np.maximum(x @ self.wz, 0.0)
                return -(self.wz @ (_safe_log(r) - _safe_log(self.ref) + 1.0))[None, :]
            constraints.append({'type': 'ineq', 'fun': divergence_slack, 'jac': divergence_jac})
        if not math.isinf(self.B):
            constraints.append({'type': 'ineq', 'fun': lambda x: np.array([self.B - x @ self.cost]),
                                'jac': lambda x: -self.cost[None, :]})
        res = minimize(lambda x: -self.objective(np.clip(x, 0.0, None)), start,
                       jac=lambda x: -self.gradient(np.clip(x, 0.0, None)),
                       method='SLSQP', bounds=self.bounds, constraints=constraints,
                       options={'maxiter': self.settings.ascent_max_iter, 'ftol': 1e-12})
        return self.clean(res.x), bool(res.success)

    def solve(self, warm_starts: Sequence[np.ndarray] = ()) -> InnerResult:
        """
        Solve the inner problem for this map.

        Args:
            warm_starts: candidate P_V vectors; feasible ones are kept as candidates

        Returns:
            InnerResult with the best P_V and I(V;Y) in nats

        Raises:
            InfeasibleError: when no P_V satisfies the constraints
        """
        candidates = [self.clean(w) for w in warm_starts if len(w) == self.k]
        candidates = [c for c in candidates if self.feasible(c)]
        if self.A == 0:
            candidates.append(self.lp_vertex(np.zeros(self.k)))
            start = max(candidates, key=self.objective)
            p, iterations, gap = self.conditional_gradient(start)
            polished, _ = self.slsqp(p)
            if self.feasible(polished) and self.objective(polished) > self.objective(p):
                p = polished
            return InnerResult(p, self.objective(p), iterations, gap, gap <= self.settings.fw_gap_tol)

        try:
            base = CausalMapSolver(self.ch, self.map, 0.0, self.B, self.settings).solve(candidates)
            candidates.append(base.x)
        except InfeasibleError:
            pass
        candidates.append(self.clean(self.ub))
        results = []
        nonconverged = 0
        for start in candidates:
            if self.feasible(start):
                results.append(start)
            x, success = self.slsqp(start)
            nonconverged += 0 if success else 1
            if self.feasible(x):
                results.append(x)
        if not results:
            raise InfeasibleError(f"no P_V meets D(P_Z||Q0)<={self.A} and E[b(X)]<={self.B}")
        best = max(results, key=self.objective)
        return InnerResult(best, self.objective(best), len(candidates), float('nan'),
                           nonconverged == 0, nonconverged_starts=nonconverged)


class NoncausalMapSolver:
    """
    Maximizes I(U;Y) - I(U;S) over the joint weights q(u,s) = P_S(s) P_{U|S}(u|s)
    for a fixed noncausal strategy map. The objective is not concave, so the
    solver runs SLSQP ascents from several starting points and keeps the best.
    """

    def __init__(self, ch: StateDmc, smap: StrategyMap, A: float = 0.0, B: Optional[float] = None,
                 settings: Optional[SolverSettings] = None):
        self.settings = settings or SolverSettings()
        self.A = float(A)
        self.B = ch.budget if B is None else float(B)
        if self.A < 0 or self.B < 0:
            raise ValueError(f"A and B must be non-negative, got A={A}, B={B}")
        self.ch = ch
        self.map = smap
        self.wy, self.wz, self.cost = aux_state_laws(ch, smap)
        self.p_s = ch.state_dist.probs
        self.ref = q0(ch).probs
        self.nu, self.ns = smap.aux_size, ch.ns
        blocked = (self.wz[:, :, self.ref <= 0] > 0).any(axis=2) | (self.p_s[None, :] <= 0)
        self.ub = np.where(blocked, 0.0, np.broadcast_to(self.p_s, (self.nu, self.ns)))
        self.bounds = [(0.0, u) for u in self.ub.ravel()]
        rows, rhs = [], []
        for s in range(self.ns):
            e = np.zeros((self.nu, self.ns))
            e[:, s] = 1.0
            rows.append(e.ravel())
            rhs.append(self.p_s[s])
        self.a_sum, self.b_sum = np.array(rows), np.array(rhs)
        a_eq, b_eq = self.a_sum, self.b_sum
        if self.A == 0:
            a_eq = np.vstack([a_eq, self.wz.reshape(-1, ch.nz).T])
            b_eq = np.concatenate([b_eq, self.ref])
        self.a_eq, self.b_eq = _independent_rows(a_eq, b_eq)
        self.a_pinv = np.linalg.pinv(self.a_eq)
        c = self.cost.ravel()
        if math.isinf(self.B):
            self.a_ub, self.b_ub = None, None
        else:
            self.a_ub, self.b_ub = c[None, :], np.array([self.B])

    def objective(self, q: np.ndarray) -> float:
        return float(noncausal_rate_nats(np.asarray(q).reshape(self.nu, self.ns), self.wy))

    def gradient(self, q: np.ndarray) -> np.ndarray:
        q = np.clip(np.asarray(q, dtype=float).reshape(self.nu, self.ns), 0.0, None)
        r_uy = np.einsum('us,usy->uy', q, self.wy)
        q_u = q.sum(axis=1)
        q_s = q.sum(axis=0)
        r_y = r_uy.sum(axis=0)
        log_ratio = _safe_log(r_uy) - _safe_log(q_u)[:, None] - _safe_log(r_y)[None, :]
        g = (np.einsum('usy,uy->us', self.wy, log_ratio)
             - (_safe_log(q) - _safe_log(q_u)[:, None] - _safe_log(q_s)[None, :]))
        return np.clip(g, -GRAD_CLIP, GRAD_CLIP).ravel()

    def output_z(self, q: np.ndarray) -> np.ndarray:
        return np.einsum('us,usz->z', np.asarray(q).reshape(self.nu, self.ns), self.wz)

    def clean(self, q: np.ndarray) -> np.ndarray:
        """Clip to the box, repair the equalities, then restore the exact state marginal."""
        x = np.clip(np.asarray(q, dtype=float).ravel(), 0.0, self.ub.ravel())
        for _ in range(50):
            resid = self.a_eq @ x - self.b_eq
            if np.abs(resid).max() < 1e-14:
                break
            x = np.clip(x - self.a_pinv @ resid, 0.0, self.ub.ravel())
        grid = x.reshape(self.nu, self.ns)
        col = grid.sum(axis=0)
        scale = np.where(col > 0, self.p_s / np.where(col > 0, col, 1.0), 0.0)
        return (grid * scale[None, :]).ravel()

    def feasible(self, q: np.ndarray) -> bool:
        tol = self.settings.feasibility_tol
        grid = q.reshape(self.nu, self.ns)
        if np.abs(grid.sum(axis=0) - self.p_s).max() > tol:
            return False
        if not math.isinf(self.B) and q @ self.cost.ravel() > self.B + tol:
            return False
        if self.A == 0:
            return tv_distance(self.output_z(q), self.ref) <= tol
        return kl_divergence(self.output_z(q), self.ref) <= self.A + tol

    def lp_start(self) -> np.ndarray:
        result = _lp(np.zeros(self.nu * self.ns), self.a_eq, self.b_eq, self.a_ub, self.b_ub, self.bounds)
        if result.status != 0:
            raise InfeasibleError(f"no P_U|S meets the constraints for map {self.map.to_list()}")
        return self.clean(result.x)

    def random_start(self, rng: np.random.Generator) -> np.ndarray:
        grid = np.zeros((self.nu, self.ns))
        for s in range(self.ns):
            allowed = self.ub[:, s] > 0
            if not allowed.any():
                continue
            grid[allowed, s] = rng.dirichlet(np.ones(int(allowed.sum()))) * self.p_s[s]
        return grid.ravel()

    def lift(self, p_v: np.ndarray) -> np.ndarray:
        """State-independent P_U|S built from a causal P_V on the same map."""
        return np.outer(p_v, self.p_s).ravel()

    def slsqp(self, start: np.ndarray) -> Tuple[np.ndarray, bool]:
        a_eq, b_eq = self.a_eq, self.b_eq
        constraints = [{'type': 'eq', 'fun': lambda x: a_eq @ x - b_eq, 'jac': lambda x: a_eq}]
        if self.A > 0:
            wz_flat = self.wz.reshape(-1, self.ch.nz)

            def divergence_slack(x):
                r = np.maximum(x @ wz_flat, 0.0)
                return np.array([self.A - float(rel_entr(r, self.ref).sum())])

            def divergence_jac(x):
                r = np.maximum(x @ wz_flat, 0.0)
                return -(wz_flat @ (_safe_log(r) - _safe_log(self.ref) + 1.0))[None, :]
            constraints.append({'type': 'ineq', 'fun': divergence_slack, 'jac': divergence_jac})
        if not math.isinf(self.B):
            c = self.cost.ravel()
            constraints.append({'type': 'ineq', 'fun': lambda x: np.array([self.B - x @ c]),
                                'jac': lambda x: -c[None, :]})
        res = minimize(lambda x: -self.objective(np.clip(x, 0.0, None)), start, jac=lambda x: -self.gradient(x),
                       method='SLSQP', bounds=self.bounds, constraints=constraints,
                       options={'maxiter': self.settings.ascent_max_iter, 'ftol': 1e-12})
        return self.clean(res.x), bool(res.success)

    def solve(self, extra_starts: Sequence[np.ndarray] = (), restarts: Optional[int] = None,
              seed: int = 0, lift_causal: bool = True) -> InnerResult:
        """
        Multi-start ascent for this map.

        Args:
            extra_starts: flattened q(u,s) candidates (warm starts); feasible ones are kept as is
            restarts: number of Dirichlet(1) starts, defaults to the settings
            seed: per-map seed for the random starts
            lift_causal: also start from the causal optimizer on this map

        Returns:
            InnerResult with the best q(u,s) and the objective in nats
        """
        restarts = self.settings.restarts if restarts is None else restarts
        starts = [np.asarray(s, dtype=float).ravel() for s in extra_starts]
        if self.A == 0:
            try:
                starts.append(self.lp_start())
            except InfeasibleError:
                if not starts:
                    raise
        if lift_causal:
            try:
                causal = CausalMapSolver(self.ch, self.map, self.A, self.B, self.settings).solve()
                starts.append(self.lift(causal.x))
            except InfeasibleError:
                pass
        rng = np.random.default_rng(np.random.SeedSequence([seed, self.nu, self.ns]))
        starts.extend(self.random_start(rng) for _ in range(restarts))

        best, best_value, best_index = None, -math.inf, -1
        nonconverged = 0
        for index, start in enumerate(starts):
            candidates = []
            cleaned = self.clean(start)
            if self.feasible(cleaned):
                candidates.append(cleaned)
            x, success = self.slsqp(start)
            if not success:
                nonconverged += 1
                logger.debug(f"start {index} on map {self.map.to_list()} did not converge")
            if self.feasible(x):
                candidates.append(x)
            for candidate in candidates:
                value = self.objective(candidate)
                if value > best_value:
                    best, best_value, best_index = candidate, value, index
        if best is None:
            raise InfeasibleError(f"no start reached the feasible set for map {self.map.to_list()}")
        return InnerResult(best, best_value, len(starts), float('nan'), nonconverged == 0,
                           restarts_to_best=best_index, nonconverged_starts=nonconverged)


# ---------------------------------------------------------------------------
# Map enumeration

def cardinality_bound(ch: StateDmc, mode: str, kind: str = 'achiev') -> int:
    """Auxiliary alphabet size allowed by the coding theorems."""
    nx, ns, ny, nz = ch.nx, ch.ns, ch.ny, ch.nz
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got '{mode}'")
    if kind not in AUX_BOUNDS:
        raise ValueError(f"aux bound must be one of {AUX_BOUNDS}, got '{kind}'")
    if mode == CAUSAL:
        if kind == 'converse':
            return min(nx + ny + nz - 2, (nx - 1) * ns + 1)
        return min(nx + ny + nz - 1, (nx - 1) * ns + 2)
    if kind == 'converse':
        return min(nx + ny + nz + ns - 3, nx * ns)
    return min(nx + ny + nz + ns - 2, nx * ns + 1)


def strategies(ch: StateDmc) -> List[Tuple[int, ...]]:
    """All functions s -> x, in lexicographic order."""
    return list(product(range(ch.nx), repeat=ch.ns))


def count_maps(ch: StateDmc, aux_size: int, prune_dominated: bool = True) -> int:
    n_strat = ch.nx ** ch.ns
    if prune_dominated:
        return math.comb(n_strat, min(aux_size, n_strat))
    return math.comb(n_strat + aux_size - 1, aux_size)


def enumerate_maps(ch: StateDmc, aux_size: int, prune_dominated: bool = True,
                   budget: Optional[int] = None) -> List[StrategyMap]:
    """
    Canonical strategy maps with `aux_size` aux symbols.

    Rows are sorted lexicographically, so maps equal up to aux relabelling
    appear once. With prune_dominated, only maps with distinct rows are
    kept (and at most |X|^|S| of them): two aux symbols sharing a row can be
    merged without lowering the objective or breaking a constraint.
    """
    if aux_size < 1:
        raise ValueError(f"aux size must be positive, got {aux_size}")
    budget = budget if budget is not None else SolverSettings().map_budget
    total = count_maps(ch, aux_size, prune_dominated)
    if total > budget:
        raise BudgetExceededError(
            f"{total} strategy maps exceed the enumeration budget {budget}; lower the aux size")
    rows = strategies(ch)
    if prune_dominated:
        combos = combinations(rows, min(aux_size, len(rows)))
    else:
        combos = combinations_with_replacement(rows, aux_size)
    return [StrategyMap(np.array(c, dtype=np.int64)) for c in combos]


# ---------------------------------------------------------------------------
# Solutions

def _aux_size(ch: StateDmc, mode: str, settings: SolverSettings) -> int:
    return settings.aux_size or cardinality_bound(ch, mode, settings.aux_bound)


def key_deficit_bits(joint: JointPmf, aux: str) -> float:
    return mutual_information(joint, aux, 'Z') - mutual_information(joint, aux, 'Y')


def _build_solution(ch: StateDmc, mode: str, smap: StrategyMap, x: np.ndarray, A: float, B: float,
                    diagnostics: Dict) -> CapacitySolution:
    if mode == CAUSAL:
        aux = Pmf.normalized(x)
        joint = causal_joint(ch, aux, smap)
        rate = mutual_information(joint, 'V', 'Y')
        deficit = key_deficit_bits(joint, 'V')
    else:
        grid = np.asarray(x).reshape(smap.aux_size, ch.ns)
        rows = np.where(ch.state_dist.probs[None, :] > 0,
                        grid / np.where(ch.state_dist.probs > 0, ch.state_dist.probs, 1.0)[None, :],
                        1.0 / smap.aux_size)
        aux = ConditionalPmf.normalized(rows.T)
        joint = noncausal_joint(ch, aux, smap)
        rate = mutual_information(joint, 'U', 'Y') - mutual_information(joint, 'U', 'S')
        deficit = key_deficit_bits(joint, 'U')
    cost, divergence = cost_and_covert_residuals(joint, ch)
    return CapacitySolution(
        mode=mode,
        rate_bits=max(rate, 0.0),
        aux_dist=aux,
        map=smap,
        key_deficit_bits=deficit,
        key_feasible=bool(deficit < ch.key_rate),
        cost_used=cost,
        covert_residual_nats=max(0.0, divergence - A),
        covert_divergence_nats=divergence,
        A=A,
        B=B,
        diagnostics=diagnostics,
    )


def _best_index(results: Sequence[Optional[InnerResult]]) -> int:
    best, best_value = -1, -math.inf
    for i, result in enumerate(results):
        if result is not None and result.value_nats > best_value:
            best, best_value = i, result.value_nats
    return best


def _solve_causal_maps(ch: StateDmc, maps: List[StrategyMap], A: float, B: float,
                       settings: SolverSettings,
                       warm: Optional[Dict[int, List[np.ndarray]]] = None) -> List[Optional[InnerResult]]:
    warm = warm or {}

    def task(index: int, smap: StrategyMap) -> Optional[InnerResult]:
        try:
            return CausalMapSolver(ch, smap, A, B, settings).solve(warm.get(index, ()))
        except InfeasibleError as e:
            logger.debug(f"map {index} infeasible: {e}")
            return None

    return run_indexed(task, maps, settings.workers)


def _solve_noncausal_maps(ch: StateDmc, maps: List[StrategyMap], A: float, B: float,
                          settings: SolverSettings,
                          warm: Optional[Dict[int, List[np.ndarray]]] = None) -> List[Optional[InnerResult]]:
    warm = warm or {}

    def task(index: int, smap: StrategyMap) -> Optional[InnerResult]:
        try:
            solver = NoncausalMapSolver(ch, smap, A, B, settings)
            return solver.solve(warm.get(index, ()), seed=settings.seed + index)
        except InfeasibleError as e:
            logger.debug(f"map {index} infeasible: {e}")
            return None

    return run_indexed(task, maps, settings.workers)


def causal_inner(ch: StateDmc, smap: StrategyMap, A: float = 0.0, B: Optional[float] = None,
                 settings: Optional[SolverSettings] = None) -> Tuple[Pmf, float]:
    """
    Maximize I(V;Y) over P_V for a fixed map under D(P_Z||Q0) <= A and E[b(X)] <= B.

    Returns:
        (P_V, rate in bits)
    """
    result = CausalMapSolver(ch, smap, A, B, settings).solve()
    return Pmf.normalized(result.x), nats_to_bits(result.value_nats)


def causal_capacity(ch: StateDmc, A: float = 0.0, settings: Optional[SolverSettings] = None,
                    B: Optional[float] = None) -> CapacitySolution:
    """
    Best causal covert rate over all canonical strategy maps.

    Args:
        ch: channel
        A: covertness budget in nats, 0 enforces P_Z = Q0
        settings: solver settings
        B: cost budget, defaults to the channel's

    Returns:
        CapacitySolution for the best map (ties go to the first map in enumeration order)
    """
    settings = settings or SolverSettings()
    B = ch.budget if B is None else B
    aux_size = _aux_size(ch, CAUSAL, settings)
    maps = enumerate_maps(ch, aux_size, settings.prune_dominated, settings.map_budget)
    logger.info(f"Causal solver: {len(maps)} strategy maps with |V|<={aux_size}")
    results = _solve_causal_maps(ch, maps, A, B, settings)
    best = _best_index(results)
    if best < 0:
        raise InfeasibleError("no strategy map meets the covertness and cost constraints")
    result = results[best]
    diagnostics = {
        'method': 'conditional-gradient' if A == 0 else 'slsqp',
        'aux_bound': settings.aux_bound,
        'aux_size': aux_size,
        'maps': len(maps),
        'feasible_maps': sum(r is not None for r in results),
        'best_map_index': best,
        'iterations': result.iterations,
        'gap_nats': result.gap_nats,
        'converged': result.converged,
    }
    solution = _build_solution(ch, CAUSAL, maps[best], result.x, A, B, diagnostics)
    logger.info(f"Causal rate {solution.rate_bits:.6f} bits (map {best})")
    return solution


def noncausal_capacity(ch: StateDmc, A: float = 0.0, settings: Optional[SolverSettings] = None,
                       B: Optional[float] = None) -> CapacitySolution:
    """
    Best noncausal covert rate I(U;Y) - I(U;S) over all canonical strategy maps.

    The returned rate is a lower bound on the maximum (multi-start local
    search); it is never below the causal rate, whose optimizer is lifted to a
    state-independent P_U|S and refined on its own map.
    """
    settings = settings or SolverSettings()
    B = ch.budget if B is None else B
    aux_size = _aux_size(ch, NONCAUSAL, settings)
    maps = enumerate_maps(ch, aux_size, settings.prune_dominated, settings.map_budget)
    logger.info(f"Noncausal solver: {len(maps)} strategy maps with |U|<={aux_size}, "
                f"{settings.restarts} restarts each")
    results = _solve_noncausal_maps(ch, maps, A, B, settings)
    best = _best_index(results)

    causal = causal_capacity(ch, A, settings, B)
    refiner = NoncausalMapSolver(ch, causal.map, A, B, settings)
    lifted = refiner.solve([refiner.lift(causal.aux_dist.probs)], restarts=0, lift_causal=False)

    if best < 0 or lifted.value_nats > results[best].value_nats:
        smap, result, source = causal.map, lifted, 'causal-lift'
    else:
        smap, result, source = maps[best], results[best], 'enumeration'
    diagnostics = {
        'method': 'multi-start-slsqp',
        'aux_bound': settings.aux_bound,
        'aux_size': aux_size,
        'maps': len(maps),
        'feasible_maps': sum(r is not None for r in results),
        'best_map_index': best,
        'source': source,
        'restarts': settings.restarts,
        'restarts_to_best': result.restarts_to_best,
        'nonconverged_starts': sum(r.nonconverged_starts for r in results if r is not None),
        'causal_rate_bits': causal.rate_bits,
    }
    solution = _build_solution(ch, NONCAUSAL, smap, result.x, A, B, diagnostics)
    logger.info(f"Noncausal rate {solution.rate_bits:.6f} bits ({source})")
    return solution


def no_csi_capacity(ch: StateDmc, A: float = 0.0, settings: Optional[SolverSettings] = None) -> CapacitySolution:
    """Causal solver restricted to state-independent strategies x(v,s) = x(v)."""
    settings = settings or SolverSettings()
    smap = StrategyMap(np.repeat(np.arange(ch.nx)[:, None], ch.ns, axis=1))
    result = CausalMapSolver(ch, smap, A, None, settings).solve()
    solution = _build_solution(ch, CAUSAL, smap, result.x, A, ch.budget,
                               {'method': 'no-csi', 'iterations': result.iterations,
                                'gap_nats': result.gap_nats})
    logger.info(f"Rate without CSI {solution.rate_bits:.6f} bits")
    return solution


def solve_capacity(ch: StateDmc, mode: str, A: float = 0.0,
                   settings: Optional[SolverSettings] = None) -> CapacitySolution:
    if mode == CAUSAL:
        return causal_capacity(ch, A, settings)
    if mode == NONCAUSAL:
        return noncausal_capacity(ch, A, settings)
    raise ValueError(f"mode must be one of {MODES}, got '{mode}'")


def key_rate_requirement(sol: CapacitySolution, ch: StateDmc) -> Tuple[float, bool]:
    """Recompute the key-rate deficit from the solution joint; feasible iff deficit < R_K."""
    deficit = key_deficit_bits(sol.joint(ch), sol.aux_label)
    return deficit, bool(deficit < ch.key_rate)


def capacity_surface(ch: StateDmc, mode: str, A_grid: Sequence[float], B_grid: Sequence[float],
                     settings: Optional[SolverSettings] = None) -> List[SurfacePoint]:
    """
    Evaluate C(A,B) on a grid.

    Points are solved in increasing (B, A) order; each point is warm-started
    from the solutions at its lower neighbours, which are feasible for it.

    Returns:
        SurfacePoints ordered by A then B
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got '{mode}'")
    settings = settings or SolverSettings()
    a_vals = sorted({float(a) for a in A_grid})
    b_vals = sorted({float(b) for b in B_grid})
    if not a_vals or not b_vals:
        raise ValueError("surface grids must be non-empty")
    aux_size = _aux_size(ch, mode, settings)
    maps = enumerate_maps(ch, aux_size, settings.prune_dominated, settings.map_budget)
    solve_maps = _solve_causal_maps if mode == CAUSAL else _solve_noncausal_maps
    solved: Dict[Tuple[int, int], List[Optional[InnerResult]]] = {}
    values: Dict[Tuple[int, int], float] = {}
    for j, B in enumerate(b_vals):
        for i, A in enumerate(a_vals):
            warm: Dict[int, List[np.ndarray]] = {}
            for neighbour in ((i - 1, j), (i, j - 1)):
                for index, result in enumerate(solved.get(neighbour, [])):
                    if result is not None:
                        warm.setdefault(index, []).append(result.x)
            results = solve_maps(ch, maps, A, B, settings, warm)
            best = _best_index(results)
            if best < 0:
                raise InfeasibleError(f"no feasible point at A={A}, B={B}")
            solved[(i, j)] = results
            values[(i, j)] = nats_to_bits(results[best].value_nats)
            logger.info(f"C({A:g}, {B:g}) = {values[(i, j)]:.6f} bits")
    return [SurfacePoint(A, B, values[(i, j)])
            for i, A in enumerate(a_vals) for j, B in enumerate(b_vals)]


# ---------------------------------------------------------------------------
# Brute-force oracle

def _polytope_vertices(a_eq: np.ndarray, b_eq: np.ndarray, n: int) -> np.ndarray:
    """Basic feasible solutions of {x >= 0 : a_eq x = b_eq}."""
    a, b = _independent_rows(a_eq, b_eq)
    r = a.shape[0]
    seen: Dict[Tuple, np.ndarray] = {}
    for cols in combinations(range(n), r):
        sub = a[:, cols]
        if np.linalg.matrix_rank(sub) < r:
            continue
        xb = np.linalg.solve(sub, b)
        if xb.min() < -1e-12:
            continue
        x = np.zeros(n)
        x[list(cols)] = np.clip(xb, 0.0, None)
        if np.abs(a_eq @ x - b_eq).max() > 1e-9:
            continue
        seen.setdefault(tuple(np.round(x, 12)), x)
    return np.array(list(seen.values())).reshape(-1, n)


def _barycentric_weights(n_vertices: int, resolution: int, chunk: int = 65536) -> Iterator[np.ndarray]:
    """All weight vectors with entries in {0, 1/r, ..., 1} summing to 1, in chunks."""
    if n_vertices == 1:
        yield np.ones((1, 1))
        return
    total = resolution + n_vertices - 1
    bars_iter = combinations(range(total), n_vertices - 1)
    while True:
        block = list(islice(bars_iter, chunk))
        if not block:
            break
        bars = np.array(block, dtype=np.int64)
        edges = np.hstack([np.full((len(block), 1), -1), bars, np.full((len(block), 1), total)])
        yield (np.diff(edges, axis=1) - 1) / resolution


def _restricted_vertices(a_eq: np.ndarray, b_eq: np.ndarray, free: np.ndarray,
                         cost: Optional[np.ndarray], B: float) -> np.ndarray:
    """Vertices over the free variables, with a slack column for a finite cost budget."""
    n_full = free.size
    cols = np.flatnonzero(free)
    if cols.size == 0:
        return np.zeros((0, n_full))
    a = a_eq[:, cols]
    b = b_eq
    if cost is not None and not math.isinf(B):
        a = np.hstack([a, np.zeros((a.shape[0], 1))])
        a = np.vstack([a, np.append(cost[cols], 1.0)])
        b = np.append(b, B)
    verts = _polytope_vertices(a, b, a.shape[1])
    full = np.zeros((verts.shape[0], n_full))
    full[:, cols] = verts[:, :cols.size]
    return full


def _causal_polytope(ch: StateDmc, smap: StrategyMap, ref: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    wy, wz, cost = effective_channels(ch, smap)
    free = ~(wz[:, ref <= 0] > 0).any(axis=1)
    a_eq = np.vstack([np.ones((1, smap.aux_size)), wz.T])
    b_eq = np.concatenate([[1.0], ref])
    return _restricted_vertices(a_eq, b_eq, free, cost, ch.budget), wy


def _noncausal_polytope(ch: StateDmc, smap: StrategyMap, ref: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    wy, wz, cost = aux_state_laws(ch, smap)
    nu, ns = smap.aux_size, ch.ns
    free = ~((wz[:, :, ref <= 0] > 0).any(axis=2) | (ch.state_dist.probs[None, :] <= 0))
    rows = []
    for s in range(ns):
        e = np.zeros((nu, ns))
        e[:, s] = 1.0
        rows.append(e.ravel())
    a_eq = np.vstack([np.array(rows), wz.reshape(-1, ch.nz).T])
    b_eq = np.concatenate([ch.state_dist.probs, ref])
    return _restricted_vertices(a_eq, b_eq, free.ravel(), cost.ravel(), ch.budget), wy


def brute_force_oracle(ch: StateDmc, mode: str, aux_size: int, resolution: int,
                       budget: int = ORACLE_BUDGET) -> float:
    """
    Exhaustive maximum over a quantized, exactly feasible set.

    For every canonical map with `aux_size` aux symbols the feasible polytope
    (P_Z = Q0, E[b(X)] <= B) is reduced to its vertices and searched on the
    barycentric grid of step 1/resolution over them. In noncausal mode the
    state-independent slice (the lifted causal grid) is searched as well, so
    the causal oracle never exceeds the noncausal one.

    Returns:
        best objective in bits over the grid

    Raises:
        BudgetExceededError: when the total grid size exceeds the budget
        InfeasibleError: when no map has a feasible point
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got '{mode}'")
    if resolution < 1:
        raise ValueError(f"resolution must be positive, got {resolution}")
    ref = q0(ch).probs
    maps = enumerate_maps(ch, aux_size, prune_dominated=False, budget=budget)
    tasks = []
    for smap in maps:
        verts, wy = _causal_polytope(ch, smap, ref)
        if verts.shape[0]:
            if mode == CAUSAL:
                tasks.append((CAUSAL, verts, wy))
            else:
                lifted = np.einsum('nv,s->nvs', verts, ch.state_dist.probs).reshape(verts.shape[0], -1)
                tasks.append((NONCAUSAL, lifted, aux_state_laws(ch, smap)[0]))
        if mode == NONCAUSAL:
            verts, wy_us = _noncausal_polytope(ch, smap, ref)
            if verts.shape[0]:
                tasks.append((NONCAUSAL, verts, wy_us))
    total = sum(math.comb(resolution + v.shape[0] - 1, v.shape[0] - 1) for _, v, _ in tasks)
    if total > budget:
        raise BudgetExceededError(f"oracle grid has {total} points, budget is {budget}")
    if not tasks:
        raise InfeasibleError("no strategy map has a feasible point")
    logger.info(f"Oracle: {len(maps)} maps, {total} grid points")

    best = -math.inf
    for kind, verts, laws in tasks:
        for weights in _barycentric_weights(verts.shape[0], resolution):
            points = weights @ verts
            if kind == CAUSAL:
                values = causal_rate_nats(points, laws)
            else:
                values = noncausal_rate_nats(points.reshape(len(points), aux_size, ch.ns), laws)
            best = max(best, float(values.max()))
    return nats_to_bits(max(best, 0.0))


# ---------------------------------------------------------------------------
# Persistence

def solution_to_dict(sol: CapacitySolution) -> Dict:
    if sol.mode == CAUSAL:
        aux = sol.aux_dist.probs.tolist()
    else:
        aux = sol.aux_dist.rows.tolist()
    return {
        'mode': sol.mode,
        'rate_bits': sol.rate_bits,
        'aux_dist': aux,
        'map': sol.map.to_list(),
        'key_deficit_bits': sol.key_deficit_bits,
        'key_feasible': sol.key_feasible,
        'cost_used': sol.cost_used,
        'covert_residual_nats': sol.covert_residual_nats,
        'covert_divergence_nats': sol.covert_divergence_nats,
        'A': sol.A,
        'B': None if math.isinf(sol.B) else sol.B,
        'diagnostics': {k: (None if isinstance(v, float) and not math.isfinite(v) else v)
                        for k, v in sol.diagnostics.items()},
    }


def solution_from_dict(data: Dict) -> CapacitySolution:
    mode = data['mode']
    if mode not in MODES:
        raise ValueError(f"unknown solution mode '{mode}'")
    aux = Pmf.normalized(data['aux_dist']) if mode == CAUSAL else ConditionalPmf.normalized(data['aux_dist'])
    return CapacitySolution(
        mode=mode,
        rate_bits=float(data['rate_bits']),
        aux_dist=aux,
        map=StrategyMap(np.array(data['map'], dtype=np.int64)),
        key_deficit_bits=float(data.get('key_deficit_bits', float('nan'))),
        key_feasible=bool(data.get('key_feasible', False)),
        cost_used=float(data.get('cost_used', float('nan'))),
        covert_residual_nats=float(data.get('covert_residual_nats', float('nan'))),
        covert_divergence_nats=float(data.get('covert_divergence_nats', float('nan'))),
        A=float(data.get('A', 0.0)),
        B=math.inf if data.get('B') is None else float(data['B']),
        diagnostics=data.get('diagnostics', {}),
    )
