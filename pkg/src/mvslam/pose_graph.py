"""Pose-graph optimisation over SE(3) with Levenberg-Marquardt.

Nodes are absolute camera-to-world poses. An edge ``(i, j, Z, Omega)`` says
``X_i^-1 X_j`` should equal ``Z``; its residual is the rotation-first twist
``r = log(Z^-1 X_i^-1 X_j)`` and it contributes ``r^T Omega r`` to the cost.
Updates are applied on the left, ``X <- exp(delta) X``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import InvalidArgument, ParseError
from .geometry import Pose, Quaternion, adjoint, is_rotation, orthonormalize, se3_exp, se3_log, skew

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Edge:
    i: int
    j: int
    measurement: Pose
    information: np.ndarray

    def __post_init__(self):
        info = np.array(self.information, dtype=np.float64).reshape(6, 6)
        if not np.allclose(info, info.T, atol=1e-9 * max(1.0, np.abs(info).max())):
            raise InvalidArgument(f"edge ({self.i},{self.j}) information is not symmetric")
        if np.linalg.eigvalsh(0.5 * (info + info.T)).min() < -1e-9 * max(1.0, np.abs(info).max()):
            raise InvalidArgument(f"edge ({self.i},{self.j}) information is not PSD")
        info.setflags(write=False)
        object.__setattr__(self, "information", info)


def odometry_information(sigma_rot: float, sigma_trans: float) -> np.ndarray:
    """``diag(sigma_rot^-2 x3, sigma_trans^-2 x3)`` for rotation-first residuals."""
    return np.diag([sigma_rot**-2] * 3 + [sigma_trans**-2] * 3)


class PoseGraph:
    def __init__(self):
        self.nodes: dict[int, Pose] = {}
        self.edges: list[Edge] = []
        self.fixed: set[int] = set()

    def add_node(self, idx: int, pose: Pose, fixed: bool = False) -> None:
        self.nodes[int(idx)] = pose
        if fixed:
            self.fixed.add(int(idx))

    def add_edge(self, i: int, j: int, measurement: Pose, information=None) -> None:
        info = np.eye(6) if information is None else information
        self.edges.append(Edge(int(i), int(j), measurement, info))

    def copy(self) -> "PoseGraph":
        g = PoseGraph()
        g.nodes = dict(self.nodes)
        g.edges = list(self.edges)
        g.fixed = set(self.fixed)
        return g

    def validate(self) -> None:
        for e in self.edges:
            if e.i not in self.nodes or e.j not in self.nodes:
                raise InvalidArgument(f"edge ({e.i},{e.j}) references a missing node")
        if not self.fixed:
            raise InvalidArgument("pose graph needs at least one fixed node")
        if not self.fixed <= self.nodes.keys():
            raise InvalidArgument("fixed set references a missing node")

    def __len__(self) -> int:
        return len(self.nodes)


def edge_residual(g: PoseGraph, e: Edge) -> np.ndarray:
    xi, xj = g.nodes[e.i], g.nodes[e.j]
    return se3_log(e.measurement.inverse() @ xi.inverse() @ xj)


def graph_residual(g: PoseGraph) -> float:
    """Total cost ``sum r^T Omega r`` over all edges."""
    total = 0.0
    for e in g.edges:
        r = edge_residual(g, e)
        total += float(r @ e.information @ r)
    return total


def _ad(xi: np.ndarray) -> np.ndarray:
    A = np.zeros((6, 6))
    A[:3, :3] = skew(xi[:3])
    A[3:, 3:] = skew(xi[:3])
    A[3:, :3] = skew(xi[3:])
    return A


def edge_jacobians(g: PoseGraph, e: Edge) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residual and its derivatives w.r.t. left perturbations of nodes i and j.

    Uses the first-order inverse right Jacobian ``I + ad(r)/2``.
    """
    r = edge_residual(g, e)
    Jj = (np.eye(6) + 0.5 * _ad(r)) @ adjoint(g.nodes[e.j].inverse())
    return r, -Jj, Jj


@dataclass(frozen=True)
class OptimizeOptions:
    max_iters: int = 50
    lambda0: float = 1e-4
    tol: float = 1e-10
    huber: float | None = None
    # below this total cost the graph counts as consistent and is returned untouched
    cost_floor: float = 1e-20


@dataclass
class OptimizeStats:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    accepted_costs: list[float] = field(default_factory=list)
    rejected_steps: int = 0
    converged: bool = False
    final_lambda: float = 0.0


def _robust_weight(chi2: float, k: float | None) -> float:
    if k is None:
        return 1.0
    e = np.sqrt(chi2)
    return 1.0 if e <= k else k / e


def _robust_cost(g: PoseGraph, k: float | None) -> float:
    if k is None:
        return graph_residual(g)
    total = 0.0
    for e in g.edges:
        r = edge_residual(g, e)
        chi2 = float(r @ e.information @ r)
        s = np.sqrt(chi2)
        total += chi2 if s <= k else 2.0 * k * s - k * k
    return total


def _normal_equations(g: PoseGraph, index: dict[int, int], huber: float | None):
    n = 6 * len(index)
    rows, cols, vals = [], [], []
    b = np.zeros(n)
    for e in g.edges:
        r, Ji, Jj = edge_jacobians(g, e)
        w = _robust_weight(float(r @ e.information @ r), huber)
        Om = w * e.information
        blocks = [(index.get(e.i), Ji), (index.get(e.j), Jj)]
        for a, Ja in blocks:
            if a is None:
                continue
            b[6 * a : 6 * a + 6] += Ja.T @ Om @ r
            for c, Jc in blocks:
                if c is None:
                    continue
                H = Ja.T @ Om @ Jc
                ii, jj = np.meshgrid(np.arange(6) + 6 * a, np.arange(6) + 6 * c, indexing="ij")
                rows.append(ii.ravel())
                cols.append(jj.ravel())
                vals.append(H.ravel())
    if rows:
        H = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    else:
        H = sparse.coo_matrix((n, n))
    return H.tocsc(), b


def _retract(g: PoseGraph, order: list[int], delta: np.ndarray) -> PoseGraph:
    out = g.copy()
    for a, idx in enumerate(order):
        X = se3_exp(delta[6 * a : 6 * a + 6]) @ g.nodes[idx]
        R = X.rotation
        if not is_rotation(R, 1e-12):
            X = Pose(orthonormalize(R), X.translation, X.scaled)
        out.nodes[idx] = X
    return out


def optimize(g: PoseGraph, opts: OptimizeOptions | None = None) -> tuple[PoseGraph, OptimizeStats]:
    """Levenberg-Marquardt; the input graph is left untouched.

    A step is accepted only when it lowers the cost, so the accepted cost
    sequence never increases. Iteration stops when an accepted step lowers
    the cost by less than ``tol`` (relative), after ``max_iters`` linear
    solves, or when damping grows without finding a descent step.
    """
    opts = OptimizeOptions() if opts is None else opts
    g.validate()
    order = sorted(k for k in g.nodes if k not in g.fixed)
    index = {k: a for a, k in enumerate(order)}

    cost = _robust_cost(g, opts.huber)
    stats = OptimizeStats(initial_cost=cost, final_cost=cost, accepted_costs=[cost])
    lam = opts.lambda0
    if not order or cost <= opts.cost_floor:
        stats.converged = True
        stats.final_lambda = lam
        return g.copy(), stats

    cur = g
    H, b = _normal_equations(cur, index, opts.huber)
    eye = sparse.identity(H.shape[0], format="csc")
    for it in range(1, opts.max_iters + 1):
        stats.iterations = it
        scale = max(1.0, float(H.diagonal().max()))
        with np.errstate(all="ignore"):
            try:
                delta = -spsolve(H + (lam * scale) * eye, b)
            except RuntimeError:
                delta = np.full(len(b), np.nan)
        if not np.all(np.isfinite(delta)):
            lam *= 10.0
            stats.rejected_steps += 1
            continue
        cand = _retract(cur, order, delta)
        new = _robust_cost(cand, opts.huber)
        if new < cost:
            decrease = cost - new
            cur, cost = cand, new
            stats.accepted_costs.append(cost)
            lam = max(lam / 10.0, 1e-12)
            if decrease <= opts.tol * max(cost + decrease, 1e-300):
                stats.converged = True
                break
            H, b = _normal_equations(cur, index, opts.huber)
        else:
            lam *= 10.0
            stats.rejected_steps += 1
            if lam > 1e12:
                stats.converged = True
                break
    stats.final_cost = cost
    stats.final_lambda = lam
    log.debug("pose graph: %d iterations, cost %.3e -> %.3e", stats.iterations, stats.initial_cost, cost)
    return cur if cur is not g else g.copy(), stats


# ---------------------------------------------------------------------------
# g2o text format
# ---------------------------------------------------------------------------
# VERTEX_SE3:QUAT id x y z qx qy qz qw
# EDGE_SE3:QUAT i j x y z qx qy qz qw I11 I12 ... I16 I22 ... I66
# FIX id
# The 21 information entries are the upper triangle (row-major) of a 6x6
# matrix ordered translation-first, as g2o expects; internally residuals are
# rotation-first, so the blocks are swapped on the way in and out.

_PERM = np.array([3, 4, 5, 0, 1, 2])


def _pose_fields(p: Pose) -> list[float]:
    q = p.quaternion
    return [*p.translation, q.x, q.y, q.z, q.w]


def _pose_from_fields(v: list[float]) -> Pose:
    x, y, z, qx, qy, qz, qw = v
    return Pose.from_quat(Quaternion(qw, qx, qy, qz).normalized(), [x, y, z])


def write_g2o(path, g: PoseGraph) -> None:
    iu = np.triu_indices(6)
    lines = []
    for idx in sorted(g.nodes):
        lines.append("VERTEX_SE3:QUAT %d %s" % (idx, " ".join("%.17g" % f for f in _pose_fields(g.nodes[idx]))))
    for idx in sorted(g.fixed):
        lines.append(f"FIX {idx}")
    for e in g.edges:
        info = e.information[np.ix_(_PERM, _PERM)][iu]
        vals = _pose_fields(e.measurement) + list(info)
        lines.append("EDGE_SE3:QUAT %d %d %s" % (e.i, e.j, " ".join("%.17g" % f for f in vals)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_g2o(path) -> PoseGraph:
    """Parse a g2o file; if no FIX line is present the lowest node id is fixed."""
    g = PoseGraph()
    iu = np.triu_indices(6)
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        try:
            if tok[0] == "VERTEX_SE3:QUAT":
                if len(tok) != 9:
                    raise ValueError("expected id and 7 pose values")
                g.add_node(int(tok[1]), _pose_from_fields([float(x) for x in tok[2:]]))
            elif tok[0] == "EDGE_SE3:QUAT":
                if len(tok) != 31:
                    raise ValueError("expected 2 ids, 7 pose values and 21 information entries")
                vals = [float(x) for x in tok[3:]]
                info_g2o = np.zeros((6, 6))
                info_g2o[iu] = vals[7:]
                info_g2o = info_g2o + np.triu(info_g2o, 1).T
                info = np.empty((6, 6))
                info[np.ix_(_PERM, _PERM)] = info_g2o
                g.add_edge(int(tok[1]), int(tok[2]), _pose_from_fields(vals[:7]), info)
            elif tok[0] == "FIX":
                g.fixed.update(int(x) for x in tok[1:])
            else:
                raise ValueError(f"unknown record {tok[0]!r}")
        except (ValueError, InvalidArgument) as exc:
            raise ParseError(str(exc), line=n) from exc
    if not g.fixed and g.nodes:
        g.fixed.add(min(g.nodes))
    return g
