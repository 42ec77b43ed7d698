"""MATPOWER case parsing and the per-unit network model.

Everything downstream works on the struct-of-arrays :class:`PowerNetwork`.
Quantities are per-unit on ``base_mva``; generator costs are rescaled so
that ``c2 * p**2 + c1 * p + c0`` with ``p`` in per-unit gives the cost in
the file's original currency units.
"""
from __future__ import annotations

import dataclasses
import io
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, TextIO

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

PQ, PV, REF, ISOLATED = 1, 2, 3, 4

ANGLE_LIMIT = 2.0 * np.pi

DATA_DIR = Path(__file__).resolve().parent / "data"


class CaseFormatError(ValueError):
    """Raised for malformed or unsupported MATPOWER input."""


@dataclass(frozen=True)
class Bus:
    id: int
    type: int
    pd: float
    qd: float
    gs: float
    bs: float
    vmin: float
    vmax: float
    generators: tuple[int, ...]
    branches_from: tuple[int, ...]
    branches_to: tuple[int, ...]


@dataclass(frozen=True)
class Generator:
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    c2: float
    c1: float
    c0: float
    status: int = 1


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float
    tap: float
    shift: float
    rate: float
    gii: float
    bii: float
    gij: float
    bij: float
    gji: float
    bji: float
    gjj: float
    bjj: float

    @property
    def limited(self) -> bool:
        return self.rate > 0.0


def midpoint(lo, hi):
    """Midpoint of ``[lo, hi]``; the finite end (or 0) for unbounded sides."""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
    with np.errstate(invalid="ignore"):
        mid = 0.5 * (lo + hi)
    mid = np.where(fin_lo & ~fin_hi, np.maximum(lo, 0.0), mid)
    mid = np.where(fin_hi & ~fin_lo, np.minimum(hi, 0.0), mid)
    return np.where(fin_lo | fin_hi, mid, 0.0)


def derive_admittances(r, x, b, tap=1.0, shift=0.0):
    """Branch coefficients of the pi model with a complex turns ratio.

    Parameters
    ----------
    r, x : array_like
        Series resistance and reactance (p.u.).
    b : array_like
        Total line-charging susceptance (p.u.).
    tap : array_like
        Turns-ratio magnitude; MATPOWER's ``0`` must already be mapped to 1.
    shift : array_like
        Phase shift in radians.

    Returns
    -------
    tuple of ndarray
        ``(gii, bii, gij, bij, gji, bji, gjj, bjj)``.
    """
    r, x, b, tap, shift = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (r, x, b, tap, shift))
    )
    z = r + 1j * x
    if np.any(np.abs(z) == 0.0):
        raise CaseFormatError("branch with zero series impedance")
    if np.any(tap <= 0.0):
        raise CaseFormatError("branch with non-positive tap ratio")
    ys = 1.0 / z
    ysh = 1j * b
    a = tap * np.exp(1j * shift)
    yii = (ys + 0.5 * ysh) / np.abs(a) ** 2
    yij = -ys / np.conj(a)
    yji = -ys / a
    yjj = ys + 0.5 * ysh
    return (yii.real, yii.imag, yij.real, yij.imag,
            yji.real, yji.imag, yjj.real, yjj.imag)


@dataclass(frozen=True, eq=False)
class PowerNetwork:
    """Per-unit grid model stored as parallel arrays.

    Bus, generator and branch quantities live in 1-d arrays indexed by the
    internal contiguous indices; ``bus_index`` maps external bus numbers to
    those indices.
    """

    base_mva: float
    bus_ids: np.ndarray
    bus_type: np.ndarray
    pd: np.ndarray
    qd: np.ndarray
    gs: np.ndarray
    bs: np.ndarray
    vmin: np.ndarray
    vmax: np.ndarray
    gen_bus: np.ndarray
    pmin: np.ndarray
    pmax: np.ndarray
    qmin: np.ndarray
    qmax: np.ndarray
    c2: np.ndarray
    c1: np.ndarray
    c0: np.ndarray
    br_from: np.ndarray
    br_to: np.ndarray
    br_r: np.ndarray
    br_x: np.ndarray
    br_b: np.ndarray
    tap: np.ndarray
    shift: np.ndarray
    rate: np.ndarray
    name: str = ""
    bus_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        coeffs = derive_admittances(self.br_r, self.br_x, self.br_b,
                                    self.tap, self.shift)
        for key, val in zip(_COEFF_NAMES, coeffs):
            object.__setattr__(self, key, val)
        if not self.bus_index:
            object.__setattr__(self, "bus_index",
                               {int(b): k for k, b in enumerate(self.bus_ids)})
        self._validate()

    # sizes -----------------------------------------------------------------
    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_gen(self) -> int:
        return len(self.gen_bus)

    @property
    def n_branch(self) -> int:
        return len(self.br_from)

    @property
    def ref_buses(self) -> np.ndarray:
        return np.flatnonzero(self.bus_type == REF)

    @property
    def ref(self) -> int:
        return int(self.ref_buses[0])

    @property
    def limited(self) -> np.ndarray:
        return self.rate > 0.0

    # record views ----------------------------------------------------------
    def bus(self, i: int) -> Bus:
        return Bus(
            id=int(self.bus_ids[i]), type=int(self.bus_type[i]),
            pd=float(self.pd[i]), qd=float(self.qd[i]),
            gs=float(self.gs[i]), bs=float(self.bs[i]),
            vmin=float(self.vmin[i]), vmax=float(self.vmax[i]),
            generators=tuple(np.flatnonzero(self.gen_bus == i).tolist()),
            branches_from=tuple(np.flatnonzero(self.br_from == i).tolist()),
            branches_to=tuple(np.flatnonzero(self.br_to == i).tolist()),
        )

    def generator(self, g: int) -> Generator:
        return Generator(
            bus=int(self.gen_bus[g]), pmin=float(self.pmin[g]),
            pmax=float(self.pmax[g]), qmin=float(self.qmin[g]),
            qmax=float(self.qmax[g]), c2=float(self.c2[g]),
            c1=float(self.c1[g]), c0=float(self.c0[g]),
        )

    def branch(self, l: int) -> Branch:
        return Branch(
            from_bus=int(self.br_from[l]), to_bus=int(self.br_to[l]),
            r=float(self.br_r[l]), x=float(self.br_x[l]), b=float(self.br_b[l]),
            tap=float(self.tap[l]), shift=float(self.shift[l]),
            rate=float(self.rate[l]),
            **{k: float(getattr(self, k)[l]) for k in _COEFF_NAMES},
        )

    def buses(self) -> Iterator[Bus]:
        return (self.bus(i) for i in range(self.n_bus))

    def generators(self) -> Iterator[Generator]:
        return (self.generator(g) for g in range(self.n_gen))

    def branches(self) -> Iterator[Branch]:
        return (self.branch(l) for l in range(self.n_branch))

    # derived copies ----------------------------------------------------------
    def replace(self, **changes) -> "PowerNetwork":
        """Copy with some arrays swapped out (coefficients are re-derived)."""
        return dataclasses.replace(self, **changes)

    def scale_loads(self, multiplier) -> "PowerNetwork":
        """Scale every bus load by ``multiplier`` (scalar or per-bus array)."""
        mult = np.broadcast_to(np.asarray(multiplier, dtype=float), self.pd.shape)
        if np.any(mult <= 0):
            raise ValueError("load multipliers must be positive")
        return self.replace(pd=self.pd * mult, qd=self.qd * mult)

    def to_physical(self) -> dict:
        """MW / MVAr / currency-per-MW view of the per-unit data."""
        base = self.base_mva
        return {
            "pd": self.pd * base, "qd": self.qd * base,
            "gs": self.gs * base, "bs": self.bs * base,
            "pmin": self.pmin * base, "pmax": self.pmax * base,
            "qmin": self.qmin * base, "qmax": self.qmax * base,
            "c2": self.c2 / base**2, "c1": self.c1 / base, "c0": self.c0,
            "rate": self.rate * base,
        }

    # -----------------------------------------------------------------------
    def _validate(self):
        nb = self.n_bus
        if nb == 0:
            raise CaseFormatError("network has no buses")
        for name, idx in (("generator", self.gen_bus), ("branch from", self.br_from),
                          ("branch to", self.br_to)):
            if idx.size and (idx.min() < 0 or idx.max() >= nb):
                raise CaseFormatError(f"{name} bus index out of range")
        if np.any(self.vmin <= 0) or np.any(self.vmin > self.vmax):
            raise CaseFormatError("voltage bounds must satisfy 0 < vmin <= vmax")
        if np.any(self.pmin > self.pmax) or np.any(self.qmin > self.qmax):
            raise CaseFormatError("generator bounds out of order")
        if np.any(self.c2 < 0):
            raise CaseFormatError("negative quadratic cost coefficient")
        refs = self.ref_buses
        if refs.size == 0:
            raise CaseFormatError("no reference (type 3) bus")
        adj = coo_matrix((np.ones(self.n_branch), (self.br_from, self.br_to)),
                         shape=(nb, nb))
        ncomp, labels = connected_components(adj, directed=False)
        ref_count = np.bincount(labels[refs], minlength=ncomp)
        if np.any(ref_count != 1):
            raise CaseFormatError(
                "each connected island needs exactly one reference bus")


_COEFF_NAMES = ("gii", "bii", "gij", "bij", "gji", "bji", "gjj", "bjj")


# ---------------------------------------------------------------------------
# MATPOWER reader

_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_SCALAR_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_matrix(name: str, body: str) -> np.ndarray:
    rows = []
    for chunk in re.split(r"[;\n]", body):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            rows.append([float(tok) for tok in re.split(r"[\s,]+", chunk)])
        except ValueError as exc:
            raise CaseFormatError(f"malformed row in mpc.{name}: {chunk!r}") from exc
    if not rows:
        return np.zeros((0, 0))
    width = len(rows[0])
    for row in rows:
        if len(row) != width:
            raise CaseFormatError(
                f"malformed row in mpc.{name}: expected {width} columns, got {len(row)}")
    return np.array(rows)


def read_matpower_matrices(text: str) -> tuple[float, dict[str, np.ndarray]]:
    text = _strip_comments(text)
    m = _SCALAR_RE.search(text)
    if m is None:
        raise CaseFormatError("missing mpc.baseMVA")
    mats = {name: _parse_matrix(name, body) for name, body in _MATRIX_RE.findall(text)}
    for key in ("bus", "gen", "branch", "gencost"):
        if key not in mats:
            raise CaseFormatError(f"missing mpc.{key}")
    return float(m.group(1)), mats


def _need_cols(name, mat, ncol):
    if mat.ndim != 2 or mat.shape[1] < ncol:
        raise CaseFormatError(f"mpc.{name} needs at least {ncol} columns")


def parse_matpower(source: TextIO | str, name: str = "") -> PowerNetwork:
    """Parse MATPOWER case text into a per-unit :class:`PowerNetwork`.

    ``source`` is a text stream or the case text itself. Out-of-service
    generators and branches and isolated (type 4) buses are dropped.
    Only polynomial costs of degree <= 2 are accepted.
    """
    text = source.read() if hasattr(source, "read") else str(source)
    base, mats = read_matpower_matrices(text)
    bus, gen, branch, gencost = (mats[k] for k in ("bus", "gen", "branch", "gencost"))
    _need_cols("bus", bus, 13)
    _need_cols("gen", gen, 10)
    _need_cols("branch", branch, 11)
    _need_cols("gencost", gencost, 4)
    if gencost.shape[0] < gen.shape[0]:
        raise CaseFormatError("mpc.gencost has fewer rows than mpc.gen")

    isolated = bus[bus[:, 1] == ISOLATED, 0].astype(int)
    bus = bus[bus[:, 1] != ISOLATED]
    bus_ids = bus[:, 0].astype(int)
    index = {int(b): k for k, b in enumerate(bus_ids)}
    if len(index) != len(bus_ids):
        raise CaseFormatError("duplicate bus numbers")

    def lookup(col, what):
        try:
            return np.array([index[int(b)] for b in col], dtype=int)
        except KeyError as exc:
            raise CaseFormatError(f"{what} references unknown bus {exc.args[0]}") from None

    gencost = gencost[: gen.shape[0]]
    gen_on = (gen[:, 7] > 0) & ~np.isin(gen[:, 0].astype(int), isolated)
    gen, gencost = gen[gen_on], gencost[gen_on]
    br_on = ((branch[:, 10] > 0)
             & ~np.isin(branch[:, 0].astype(int), isolated)
             & ~np.isin(branch[:, 1].astype(int), isolated))
    branch = branch[br_on]

    c2, c1, c0 = _polynomial_costs(gencost)

    tap = branch[:, 8].copy()
    tap[tap == 0.0] = 1.0
    return PowerNetwork(
        base_mva=base,
        bus_ids=bus_ids,
        bus_type=bus[:, 1].astype(int),
        pd=bus[:, 2] / base, qd=bus[:, 3] / base,
        gs=bus[:, 4] / base, bs=bus[:, 5] / base,
        vmin=bus[:, 12].copy(), vmax=bus[:, 11].copy(),
        gen_bus=lookup(gen[:, 0], "generator"),
        pmin=gen[:, 9] / base, pmax=gen[:, 8] / base,
        qmin=gen[:, 4] / base, qmax=gen[:, 3] / base,
        c2=c2 * base**2, c1=c1 * base, c0=c0,
        br_from=lookup(branch[:, 0], "branch"),
        br_to=lookup(branch[:, 1], "branch"),
        br_r=branch[:, 2].copy(), br_x=branch[:, 3].copy(), br_b=branch[:, 4].copy(),
        tap=tap, shift=np.deg2rad(branch[:, 9]),
        rate=branch[:, 5] / base,
        name=name,
        bus_index=index,
    )


def _polynomial_costs(gencost: np.ndarray):
    n = gencost.shape[0]
    c = np.zeros((n, 3))
    for k, row in enumerate(gencost):
        if int(row[0]) != 2:
            raise CaseFormatError(
                f"gencost row {k}: cost model {int(row[0])} is not supported "
                "(only polynomial model 2)")
        ncost = int(row[3])
        coeffs = row[4:4 + ncost]
        if len(coeffs) != ncost:
            raise CaseFormatError(f"gencost row {k}: expected {ncost} coefficients")
        lead, coeffs = coeffs[:-3], coeffs[-3:]
        if np.any(lead != 0):
            raise CaseFormatError(f"gencost row {k}: polynomial degree above 2")
        c[k, 3 - len(coeffs):] = coeffs
    return c[:, 0], c[:, 1], c[:, 2]


def case_path(name: str) -> Path:
    """Resolve a bundled case name (``"case9"``) or a file path."""
    p = Path(name)
    if p.exists():
        return p
    bundled = DATA_DIR / (name if name.endswith(".m") else name + ".m")
    if bundled.exists():
        return bundled
    raise FileNotFoundError(f"case file not found: {name}")


def load_case(name: str | os.PathLike) -> PowerNetwork:
    path = case_path(os.fspath(name))
    with open(path) as fh:
        return parse_matpower(fh, name=path.stem)


def load_case_text(text: str, name: str = "") -> PowerNetwork:
    return parse_matpower(io.StringIO(text), name=name)
