"""
State-dependent discrete memoryless channels
Representation, validation, file ingestion and the joints induced by strategy maps
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from config import FILE_ROW_TOL, SIMPLEX_TOL
from covertcsi.exceptions import ChannelParseError, ChannelValidationError
from covertcsi.probability import Pmf, ConditionalPmf, JointPmf, kl_divergence

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ['nx', 'ns', 'ny', 'nz', 'x0', 'P_S', 'law', 'cost', 'budget', 'key_rate_bits']


@dataclass(frozen=True)
class StateDmc:
    """
    Channel (X, S, Y, Z, P_S, P_{Y,Z|S,X}) with no-input symbol x0, cost b(x) and budget B.

    The law is stored as a ConditionalPmf whose row s*nx + x is the joint
    output law over y*nz + z.
    """
    nx: int
    ns: int
    ny: int
    nz: int
    state_dist: Pmf
    law: ConditionalPmf
    x0: int
    cost: np.ndarray
    budget: float = math.inf
    key_rate: float = 0.0

    def __post_init__(self):
        for name in ('nx', 'ns', 'ny', 'nz'):
            if getattr(self, name) < 1:
                raise ValueError(f"alphabet size {name} must be positive")
        if self.state_dist.size != self.ns:
            raise ValueError(f"P_S has {self.state_dist.size} entries, expected ns={self.ns}")
        if self.law.shape != (self.ns * self.nx, self.ny * self.nz):
            raise ValueError(
                f"law has shape {self.law.shape}, expected {(self.ns * self.nx, self.ny * self.nz)}")
        if not 0 <= self.x0 < self.nx:
            raise ValueError(f"x0={self.x0} is not an input symbol")
        cost = np.array(self.cost, dtype=float)
        if cost.shape != (self.nx,):
            raise ValueError(f"cost has shape {cost.shape}, expected ({self.nx},)")
        cost.setflags(write=False)
        object.__setattr__(self, 'cost', cost)

    @classmethod
    def from_tensor(cls, state_dist, law, x0: int = 0, cost=None, budget: float = math.inf,
                    key_rate: float = 0.0) -> 'StateDmc':
        """Build a channel from P_S and a law array indexed [s][x][y][z]."""
        tensor = np.asarray(law, dtype=float)
        if tensor.ndim != 4:
            raise ValueError(f"law must be 4-dimensional [s][x][y][z], got {tensor.ndim} dimensions")
        ns, nx, ny, nz = tensor.shape
        if cost is None:
            cost = np.zeros(nx)
        p_s = state_dist if isinstance(state_dist, Pmf) else Pmf(state_dist)
        return cls(nx=nx, ns=ns, ny=ny, nz=nz, state_dist=p_s,
                   law=ConditionalPmf(tensor.reshape(ns * nx, ny * nz)),
                   x0=x0, cost=cost, budget=budget, key_rate=key_rate)

    @property
    def tensor(self) -> np.ndarray:
        """Law as a read-only [s][x][y][z] view."""
        return self.law.rows.reshape(self.ns, self.nx, self.ny, self.nz)

    @property
    def y_law(self) -> np.ndarray:
        return self.tensor.sum(axis=3)

    @property
    def z_law(self) -> np.ndarray:
        return self.tensor.sum(axis=2)


@dataclass(frozen=True)
class StrategyMap:
    """Deterministic table x(aux, s)"""
    table: np.ndarray

    def __post_init__(self):
        table = np.array(self.table, dtype=np.int64)
        if table.ndim != 2 or table.size == 0:
            raise ValueError(f"strategy table must be a non-empty matrix, got shape {table.shape}")
        table.setflags(write=False)
        object.__setattr__(self, 'table', table)

    @classmethod
    def constant(cls, aux_size: int, ns: int, x: int) -> 'StrategyMap':
        return cls(np.full((aux_size, ns), x, dtype=np.int64))

    @property
    def aux_size(self) -> int:
        return self.table.shape[0]

    @property
    def ns(self) -> int:
        return self.table.shape[1]

    def check(self, ch: StateDmc):
        if self.ns != ch.ns:
            raise ValueError(f"map covers {self.ns} states, channel has {ch.ns}")
        if self.table.min() < 0 or self.table.max() >= ch.nx:
            raise ValueError(f"map entries must lie in [0, {ch.nx - 1}]")

    def canonical(self) -> 'StrategyMap':
        """Rows sorted lexicographically (aux relabelling symmetry)."""
        order = np.lexsort(self.table.T[::-1])
        return StrategyMap(self.table[order])

    def key(self) -> Tuple[Tuple[int, ...], ...]:
        return tuple(tuple(int(x) for x in row) for row in self.table)

    def to_list(self) -> List[List[int]]:
        return [list(row) for row in self.key()]


@dataclass
class ValidationReport:
    """Outcome of channel validation; semantic problems are listed, never raised"""
    row_errors: List[Tuple[int, int, float]] = field(default_factory=list)
    negative_entries: List[Tuple[int, int]] = field(default_factory=list)
    negative_costs: List[int] = field(default_factory=list)
    renormalized_rows: List[Tuple[int, int]] = field(default_factory=list)
    forbidden: List[int] = field(default_factory=list)
    unsupported_z: List[int] = field(default_factory=list)
    messages: List[str] = field(default_factory=list)

    @property
    def supp_ok(self) -> bool:
        return not self.unsupported_z

    @property
    def semantic_errors(self) -> bool:
        return bool(self.row_errors or self.negative_entries or self.negative_costs
                    or any(m.startswith('error:') for m in self.messages))

    @property
    def ok(self) -> bool:
        return self.supp_ok and not self.semantic_errors

    def to_dict(self) -> Dict:
        return {
            'ok': self.ok,
            'supp_ok': self.supp_ok,
            'row_errors': [list(e) for e in self.row_errors],
            'negative_entries': [list(e) for e in self.negative_entries],
            'negative_costs': self.negative_costs,
            'renormalized_rows': [list(e) for e in self.renormalized_rows],
            'forbidden': self.forbidden,
            'unsupported_z': self.unsupported_z,
            'messages': self.messages,
        }

    def lines(self) -> List[str]:
        out = []
        for s, x, total in self.row_errors:
            out.append(f"row (s={s}, x={x}) sums to {total:.12g}")
        for s, x in self.negative_entries:
            out.append(f"row (s={s}, x={x}) has a negative probability")
        for x in self.negative_costs:
            out.append(f"cost of x={x} is negative")
        for s, x in self.renormalized_rows:
            out.append(f"row (s={s}, x={x}) renormalized (within {FILE_ROW_TOL:g})")
        if self.unsupported_z:
            out.append(f"supp(Q0) misses z in {self.unsupported_z}")
        for x in self.forbidden:
            out.append(f"input x={x} is FORBIDDEN (reaches z outside supp(Q0))")
        out.extend(self.messages)
        return out


def q0(ch: StateDmc) -> Pmf:
    """Q0(z) = sum_s P_S(s) P_{Z|S,X}(z|s,x0)"""
    return Pmf.normalized(ch.state_dist.probs @ ch.z_law[:, ch.x0, :])


def forbidden_inputs(ch: StateDmc, tol: float = 0.0) -> List[int]:
    """Inputs that reach some z with Q0(z)=0 from a reachable state."""
    ref = q0(ch).probs
    reachable = ch.state_dist.probs > 0
    z_law = ch.z_law[reachable]
    outside = ref <= tol
    hits = (z_law[:, :, outside] > 0).any(axis=(0, 2))
    return [int(x) for x in np.flatnonzero(hits)]


def validate(ch: StateDmc, report: Optional[ValidationReport] = None) -> ValidationReport:
    """
    Validate a channel, collecting every semantic problem into a report.

    Args:
        ch: channel to check
        report: optional report to extend (file ingestion passes its own)

    Returns:
        ValidationReport listing forbidden inputs and the supp(Q0) status
    """
    report = report or ValidationReport()
    rows = ch.law.rows
    for idx, row in enumerate(rows):
        s, x = divmod(idx, ch.nx)
        if (row < 0).any():
            report.negative_entries.append((s, x))
        total = float(row.sum())
        if abs(total - 1.0) > FILE_ROW_TOL:
            report.row_errors.append((s, x, total))
    report.negative_costs.extend(int(x) for x in np.flatnonzero(ch.cost < 0))
    ref = q0(ch).probs
    report.unsupported_z = [int(z) for z in np.flatnonzero(ref <= 0)]
    report.forbidden = forbidden_inputs(ch)
    if report.forbidden:
        logger.warning(f"Forbidden input symbols: {report.forbidden}")
    return report


def effective_channels(ch: StateDmc, smap: StrategyMap) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Per-aux-symbol output laws of a causal strategy (state averaged).

    Returns:
        W_Y of shape (aux, ny), W_Z of shape (aux, nz), cost per aux symbol
    """
    smap.check(ch)
    p_s = ch.state_dist.probs
    s_idx = np.arange(ch.ns)
    wy = np.einsum('s,vsy->vy', p_s, ch.y_law[s_idx, smap.table])
    wz = np.einsum('s,vsz->vz', p_s, ch.z_law[s_idx, smap.table])
    c = ch.cost[smap.table] @ p_s
    return wy, wz, c


def aux_state_laws(ch: StateDmc, smap: StrategyMap) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-(aux, state) output laws: W_Y (aux, ns, ny), W_Z (aux, ns, nz), cost (aux, ns)."""
    smap.check(ch)
    s_idx = np.arange(ch.ns)
    return ch.y_law[s_idx, smap.table], ch.z_law[s_idx, smap.table], ch.cost[smap.table]


def joint_from_aux_state(ch: StateDmc, q_as: np.ndarray, smap: StrategyMap, label: str) -> JointPmf:
    """Joint over (aux, S, X, Y, Z) from a joint weight q(aux, s) and the map."""
    smap.check(ch)
    q_as = np.asarray(q_as, dtype=float)
    if q_as.shape != (smap.aux_size, ch.ns):
        raise ValueError(f"aux/state weights have shape {q_as.shape}, expected {(smap.aux_size, ch.ns)}")
    indicator = np.zeros((smap.aux_size, ch.ns, ch.nx))
    a_idx, s_idx = np.indices(smap.table.shape)
    indicator[a_idx, s_idx, smap.table] = 1.0
    arr = (q_as[:, :, None, None, None] * indicator[:, :, :, None, None]
           * ch.tensor[None, :, :, :, :])
    return JointPmf.normalized(arr, (label, 'S', 'X', 'Y', 'Z'))


def causal_joint(ch: StateDmc, p_v: Pmf, smap: StrategyMap) -> JointPmf:
    """P(v,s,x,y,z) = P_V(v) P_S(s) 1{x = map(v,s)} P_{Y,Z|S,X}(y,z|s,x)"""
    if p_v.size != smap.aux_size:
        raise ValueError(f"P_V has {p_v.size} entries, map has {smap.aux_size} aux symbols")
    return joint_from_aux_state(ch, np.outer(p_v.probs, ch.state_dist.probs), smap, 'V')


def noncausal_joint(ch: StateDmc, p_u_given_s: ConditionalPmf, smap: StrategyMap) -> JointPmf:
    """P(u,s,x,y,z) = P_S(s) P_{U|S}(u|s) 1{x = map(u,s)} P_{Y,Z|S,X}(y,z|s,x); rows of P_{U|S} are indexed by s."""
    if p_u_given_s.shape != (ch.ns, smap.aux_size):
        raise ValueError(
            f"P_U|S has shape {p_u_given_s.shape}, expected {(ch.ns, smap.aux_size)}")
    q_us = (p_u_given_s.rows * ch.state_dist.probs[:, None]).T
    return joint_from_aux_state(ch, q_us, smap, 'U')


def cost_and_covert_residuals(joint: JointPmf, ch: StateDmc) -> Tuple[float, float]:
    """
    Constraint functionals of a joint.

    Returns:
        (E[b(X)], D(P_Z || Q0) in nats)
    """
    p_x = joint.project(['X'])
    p_z = joint.project(['Z'])
    return float(p_x @ ch.cost), kl_divergence(p_z, q0(ch))


def x0_redundant(ch: StateDmc) -> bool:
    """
    Whether the state-averaged warden law of x0 is a mixture of the other inputs' laws.

    Without CSI and with Y=Z this is what allows a positive covert rate.
    """
    if ch.nx < 2:
        return False
    avg = np.einsum('s,sxz->xz', ch.state_dist.probs, ch.z_law)
    others = [x for x in range(ch.nx) if x != ch.x0]
    a_eq = np.vstack([avg[others].T, np.ones(len(others))])
    b_eq = np.append(avg[ch.x0], 1.0)
    result = linprog(np.zeros(len(others)), A_eq=a_eq, b_eq=b_eq,
                     bounds=[(0, None)] * len(others), method='highs')
    return bool(result.status == 0)


# ---------------------------------------------------------------------------
# Channel files

def _format_number(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        raise TypeError("booleans are not numbers in channel files")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if value == 0.0:
        return '0'
    if value.is_integer() and abs(value) < 1e17:
        return str(int(value))
    return format(value, '.17g')


def _format_value(value) -> str:
    if value is None:
        return 'null'
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return '[' + ', '.join(_format_value(v) for v in value) + ']'
    return _format_number(value)


def channel_to_dict(ch: StateDmc) -> Dict:
    return {
        'nx': ch.nx,
        'ns': ch.ns,
        'ny': ch.ny,
        'nz': ch.nz,
        'x0': ch.x0,
        'P_S': ch.state_dist.probs.tolist(),
        'law': ch.tensor.tolist(),
        'cost': ch.cost.tolist(),
        'budget': None if math.isinf(ch.budget) else float(ch.budget),
        'key_rate_bits': float(ch.key_rate),
    }


def canonical_text(data: Dict) -> str:
    """Sorted keys, one key per line, reals printed with 17 significant digits."""
    body = ',\n'.join(f"  {json.dumps(key)}: {_format_value(data[key])}" for key in sorted(data))
    return '{\n' + body + '\n}\n'


def save_channel(ch: StateDmc, path: str):
    """Write a channel in canonical form."""
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(canonical_text(channel_to_dict(ch)))
    logger.info(f"Channel saved to {path}")


def _require_int(data: Dict, name: str) -> int:
    value = data[name]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ChannelParseError(f"expected an integer, got {type(value).__name__}", field=name)
    return value


def _require_real(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ChannelParseError(f"expected a real number, got {type(value).__name__}", field=name)
    if not math.isfinite(value):
        raise ChannelParseError(f"expected a finite real, got {value}", field=name)
    return float(value)


def _require_array(data: Dict, name: str, shape: Tuple[int, ...]) -> np.ndarray:
    value = data[name]
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ChannelParseError("expected a regular array of reals", field=name) from None
    if arr.shape != shape:
        raise ChannelParseError(f"expected shape {shape}, got {arr.shape}", field=name)
    if not np.all(np.isfinite(arr)):
        raise ChannelParseError("non-finite entries", field=name)
    return arr


def parse_channel(text: str) -> Tuple[StateDmc, ValidationReport]:
    """
    Parse channel-file text.

    Returns:
        (channel, report); rows within the file tolerance are renormalized
        and recorded in the report

    Raises:
        ChannelParseError: malformed document, missing field, wrong type or shape
        ChannelValidationError: negative probabilities, bad row sums or negative cost
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ChannelParseError(e.msg, line=e.lineno, column=e.colno) from None
    if not isinstance(data, dict):
        raise ChannelParseError("top level must be an object")
    for name in REQUIRED_FIELDS:
        if name not in data:
            raise ChannelParseError("missing required field", field=name)

    nx, ns, ny, nz = (_require_int(data, k) for k in ('nx', 'ns', 'ny', 'nz'))
    for name, size in (('nx', nx), ('ns', ns), ('ny', ny), ('nz', nz)):
        if size < 1:
            raise ChannelParseError("alphabet size must be positive", field=name)
    x0 = _require_int(data, 'x0')
    if not 0 <= x0 < nx:
        raise ChannelParseError(f"index {x0} outside [0, {nx - 1}]", field='x0')
    p_s = _require_array(data, 'P_S', (ns,))
    law = _require_array(data, 'law', (ns, nx, ny, nz))
    cost = _require_array(data, 'cost', (nx,))
    budget = math.inf if data['budget'] is None else _require_real(data['budget'], 'budget')
    key_rate = _require_real(data['key_rate_bits'], 'key_rate_bits')

    report = ValidationReport()
    if (p_s < 0).any():
        report.messages.append("error: P_S has a negative entry")
    elif abs(p_s.sum() - 1.0) > FILE_ROW_TOL:
        report.messages.append(f"error: P_S sums to {p_s.sum():.12g}")
    elif abs(p_s.sum() - 1.0) > SIMPLEX_TOL:
        p_s = p_s / p_s.sum()
        report.messages.append("P_S renormalized")
    for s in range(ns):
        for x in range(nx):
            block = law[s, x]
            if (block < 0).any():
                report.negative_entries.append((s, x))
                continue
            total = float(block.sum())
            if abs(total - 1.0) > FILE_ROW_TOL:
                report.row_errors.append((s, x, total))
            elif abs(total - 1.0) > SIMPLEX_TOL:
                law[s, x] = block / total
                report.renormalized_rows.append((s, x))
    report.negative_costs.extend(int(x) for x in np.flatnonzero(cost < 0))
    if budget < 0:
        report.messages.append("error: budget is negative")
    if key_rate < 0:
        report.messages.append("error: key_rate_bits is negative")
    if report.semantic_errors:
        raise ChannelValidationError("; ".join(report.lines()), report=report)

    if report.renormalized_rows:
        logger.warning(f"Renormalized {len(report.renormalized_rows)} channel rows")
    ch = StateDmc.from_tensor(p_s, law, x0=x0, cost=cost, budget=budget, key_rate=key_rate)
    return ch, validate(ch, report)


def read_channel(path: str) -> Tuple[StateDmc, ValidationReport]:
    with open(path, 'r', encoding='utf-8') as f:
        text = f.read()
    ch, report = parse_channel(text)
    logger.info(f"Loaded channel from {path}: |X|={ch.nx} |S|={ch.ns} |Y|={ch.ny} |Z|={ch.nz}")
    return ch, report


def load_channel(path: str) -> StateDmc:
    """Load a channel file (see read_channel for the attached report)."""
    return read_channel(path)[0]
