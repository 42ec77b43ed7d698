"""Component decomposition: coupling rows, duplicate ownership, ADMM state.

Each coupling row ``k`` pairs one component-side value ``x[k]`` (generator
or branch) with one bus-side value and an artificial slack ``z[k]``; the
row residual is ``x[k] - xbar[k] + z[k]``.

Row order is deterministic: two rows ``(p, q)`` per generator, then eight
rows per branch in the order ``p_ij, q_ij, p_ji, q_ji, w_i, theta_i, w_j,
theta_j``.  The bus side of a flow or generator row is a duplicate owned
by a single bus; the bus side of a voltage row is that bus's own ``w`` or
``theta``, shared by every incident branch end.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .netdata import PowerNetwork

# row kinds
PG, QG, PIJ, QIJ, PJI, QJI, WI, THI, WJ, THJ = range(10)
BRANCH_KINDS = (PIJ, QIJ, PJI, QJI, WI, THI, WJ, THJ)
KIND_NAMES = ("pg", "qg", "pij", "qij", "pji", "qji", "wi", "thetai", "wj", "thetaj")


@dataclass(frozen=True, eq=False)
class CouplingLayout:
    n_gen: int
    n_branch: int
    n_bus: int
    kind: np.ndarray  # row kind code
    bus: np.ndarray  # bus that owns (or is) the bus-side value of the row
    gen_offset: np.ndarray
    branch_offset: np.ndarray

    @property
    def m(self) -> int:
        return len(self.kind)

    @property
    def is_va(self) -> np.ndarray:
        """Voltage-magnitude / angle rows (penalized with ``rho_va``)."""
        return np.isin(self.kind, (WI, THI, WJ, THJ))

    @property
    def is_dup(self) -> np.ndarray:
        """Rows whose bus-side value is a bus-owned duplicate."""
        return ~self.is_va

    @property
    def w_rows(self) -> np.ndarray:
        return np.flatnonzero(np.isin(self.kind, (WI, WJ)))

    @property
    def theta_rows(self) -> np.ndarray:
        return np.flatnonzero(np.isin(self.kind, (THI, THJ)))

    def rows_of_bus(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.bus == i)

    def owned_duplicates(self, i: int) -> np.ndarray:
        return np.flatnonzero((self.bus == i) & self.is_dup)

    def rho(self, rho_pq: float, rho_va: float) -> np.ndarray:
        return np.where(self.is_va, float(rho_va), float(rho_pq))

    def gen_rows(self) -> tuple[np.ndarray, np.ndarray]:
        return self.gen_offset, self.gen_offset + 1

    def branch_rows(self) -> np.ndarray:
        """``(n_branch, 8)`` array of row indices."""
        return self.branch_offset[:, None] + np.arange(8)[None, :]


def build_layout(network: PowerNetwork) -> CouplingLayout:
    ng, nl = network.n_gen, network.n_branch
    m = 2 * ng + 8 * nl
    kind = np.empty(m, dtype=np.int64)
    bus = np.empty(m, dtype=np.int64)
    gen_offset = 2 * np.arange(ng, dtype=np.int64)
    branch_offset = 2 * ng + 8 * np.arange(nl, dtype=np.int64)
    kind[gen_offset] = PG
    kind[gen_offset + 1] = QG
    bus[gen_offset] = network.gen_bus
    bus[gen_offset + 1] = network.gen_bus
    owners = (network.br_from, network.br_from, network.br_to, network.br_to,
              network.br_from, network.br_from, network.br_to, network.br_to)
    for k, (code, owner) in enumerate(zip(BRANCH_KINDS, owners)):
        kind[branch_offset + k] = code
        bus[branch_offset + k] = owner
    return CouplingLayout(ng, nl, network.n_bus, kind, bus, gen_offset, branch_offset)


@dataclass(eq=False)
class AdmmState:
    """All iterate vectors of the two-level scheme.

    ``x`` holds component-side values, ``xbar_dup`` the bus-owned duplicates
    (meaningful on duplicate rows only), ``w``/``theta`` the bus originals.
    ``branch_vars`` keeps each branch's local NLP solution
    ``(v_i, v_j, theta_i, theta_j, s_ij, s_ji)`` for warm starts.
    """

    x: np.ndarray
    xbar_dup: np.ndarray
    w: np.ndarray
    theta: np.ndarray
    z: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    rho: np.ndarray
    beta: float
    branch_vars: np.ndarray
    lam_tilde: np.ndarray
    rho_tilde: np.ndarray
    outer_iter: int = 0
    inner_iter: int = 0
    extras: dict = field(default_factory=dict)

    def xbar_rows(self, layout: CouplingLayout) -> np.ndarray:
        """Bus-side value referenced by each coupling row."""
        out = self.xbar_dup.copy()
        w_rows, th_rows = layout.w_rows, layout.theta_rows
        out[w_rows] = self.w[layout.bus[w_rows]]
        out[th_rows] = self.theta[layout.bus[th_rows]]
        return out

    def mismatch(self, layout: CouplingLayout) -> np.ndarray:
        """``x - xbar`` per row (the residual without ``z``)."""
        return self.x - self.xbar_rows(layout)

    def copy(self) -> "AdmmState":
        kw = {k: (v.copy() if isinstance(v, np.ndarray) else v)
              for k, v in self.__dict__.items()}
        kw["extras"] = dict(self.extras)
        return AdmmState(**kw)


def empty_state(layout: CouplingLayout, rho: np.ndarray, beta: float) -> AdmmState:
    m = layout.m
    return AdmmState(
        x=np.zeros(m), xbar_dup=np.zeros(m),
        w=np.ones(layout.n_bus), theta=np.zeros(layout.n_bus),
        z=np.zeros(m), y=np.zeros(m), lam=np.zeros(m),
        rho=np.asarray(rho, dtype=float).copy(), beta=float(beta),
        branch_vars=np.zeros((layout.n_branch, 6)),
        lam_tilde=np.zeros((layout.n_branch, 2)),
        rho_tilde=np.zeros(layout.n_branch),
    )


class Residual(NamedTuple):
    r: np.ndarray
    norm2: float
    norm_inf: float


def primal_residual(state: AdmmState, layout: CouplingLayout) -> Residual:
    r = state.x - state.xbar_rows(layout) + state.z
    return Residual(r, float(np.linalg.norm(r)),
                    float(np.max(np.abs(r))) if r.size else 0.0)
