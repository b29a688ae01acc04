"""Distribution function, quantiles and the relaxed bathtub problem on a grid.

The relaxed constraint set is ``{0 <= u <= 1, int u <= L |Omega|}``.  Its support
function is obtained by filling the highest positive values of ``v`` first:

    sigma(v) = int_0^{min(Phi_v(0), L|Omega|)} Phi_v^{-1}(s) ds,

with ``Phi_v(r) = |{v > r}|``.  On a grid every quantity is a finite sum over
sorted node values, so all formulas below are exact for the discrete problem.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import Domain, GridField, GridMismatchError

TIE_TOL = 1e-12


def _check_fraction(L: float) -> float:
    L = float(L)
    if not (0.0 < L < 1.0):
        raise ValueError(f"L must lie in (0,1), got {L}")
    return L


def _values(v) -> np.ndarray:
    return v.values if isinstance(v, GridField) else np.asarray(v, dtype=float).ravel()


@dataclass(frozen=True, eq=False)
class BathtubResult:
    """Solution of the relaxed bathtub problem for one field.

    ``strict`` and ``plateau`` are boolean node masks, ``c`` the constant value
    of the maximiser on the plateau, ``mass`` the integral of the maximiser.
    """

    sigma: float
    h: float
    strict: np.ndarray
    plateau: np.ndarray
    c: float
    maximiser: np.ndarray
    mass: float
    cell: float

    @property
    def strict_measure(self) -> float:
        return float(self.strict.sum()) * self.cell

    @property
    def plateau_measure(self) -> float:
        return float(self.plateau.sum()) * self.cell

    def bang_bang(self) -> bool:
        """True when the plateau occupies at most two grid cells."""
        return int(self.plateau.sum()) <= 2


def measure_above(v: GridField, r: float) -> float:
    """``Phi_v(r) = |{v > r}|`` as node count times cell measure."""
    return float(np.count_nonzero(v.values > r)) * v.domain.cell


def _sorted_desc(values: np.ndarray) -> np.ndarray:
    return values[np.argsort(-values, kind="stable")]


def _quantile_sorted(vs: np.ndarray, s: float, cell: float) -> float:
    j = int(np.floor(s / cell + 1e-9))
    return float(vs[j]) if j < len(vs) else -np.inf


def quantile(v: GridField, s: float) -> float:
    """Pseudo-inverse ``Phi_v^{-1}(s) = inf{r : Phi_v(r) <= s}``.

    With nodes sorted in decreasing order, ``Phi_v(r) <= s`` allows at most
    ``floor(s / cell)`` nodes above ``r``, so the infimum is the next sorted value;
    it is ``-inf`` once ``s`` covers the whole domain.
    """
    if s < 0 or s > v.domain.measure * (1 + 1e-12):
        raise ValueError(f"s must lie in [0, |Omega|] = [0, {v.domain.measure}], got {s}")
    return _quantile_sorted(_sorted_desc(v.values), s, v.domain.cell)


def threshold_h(v: GridField, L: float) -> float:
    """``h(v) = max(0, Phi_v^{-1}(L |Omega|))``."""
    L = _check_fraction(L)
    return max(0.0, quantile(v, L * v.domain.measure))


def _solve(values: np.ndarray, cell: float, budget: float) -> tuple:
    vs = _sorted_desc(values)
    h = max(0.0, _quantile_sorted(vs, budget, cell))
    plateau = np.abs(values - h) <= TIE_TOL * (1.0 + abs(h))
    strict = (values > h) & ~plateau
    c = 0.0
    if h > 0.0:
        n_plateau = int(plateau.sum())
        c = (budget / cell - int(strict.sum())) / n_plateau
        c = float(min(1.0, max(0.0, c)))
    maximiser = strict.astype(float) + c * plateau
    sigma = cell * (float(values[strict].sum()) + c * float(values[plateau].sum()))
    mass = cell * float(maximiser.sum())
    return sigma, h, strict, plateau, c, maximiser, mass


def support_function(v: GridField, L: float) -> BathtubResult:
    """Support function of the relaxed set and its threshold-structured maximiser.

    The maximiser is 1 on ``{v > h}``, a constant ``c`` on the tie set
    ``{v = h}``, and 0 elsewhere.  When ``h > 0`` the constant fills the
    remaining mass exactly; when ``h = 0`` the choice ``c = 0`` is used.
    """
    L = _check_fraction(L)
    dom = v.domain
    sigma, h, strict, plateau, c, maximiser, mass = _solve(v.values, dom.cell, L * dom.measure)
    return BathtubResult(sigma, h, strict, plateau, c, maximiser, mass, dom.cell)


def brute_force_sigma(v: GridField, L: float) -> float:
    """Greedy reference value: fill the budget node by node in decreasing order."""
    L = _check_fraction(L)
    dom = v.domain
    remaining = L * dom.measure
    total = 0.0
    for value in _sorted_desc(v.values):
        if value <= 0.0 or remaining <= 0.0:
            break
        take = min(dom.cell, remaining)
        total += take * float(value)
        remaining -= take
    return total


def restricted_support_function(v: GridField, L: float, forbidden: np.ndarray) -> BathtubResult:
    """Bathtub over controls vanishing on ``forbidden``; the mass budget stays ``L |Omega|``."""
    L = _check_fraction(L)
    dom = v.domain
    mask = np.asarray(forbidden, dtype=bool).ravel()
    if mask.size != dom.size:
        raise GridMismatchError("mask and field live on different grids")
    if mask.all():
        raise ValueError("the forbidden mask covers the whole domain")
    keep = ~mask
    sigma, h, strict_k, plateau_k, c, max_k, mass = _solve(v.values[keep], dom.cell, L * dom.measure)
    strict = np.zeros(dom.size, dtype=bool)
    plateau = np.zeros(dom.size, dtype=bool)
    maximiser = np.zeros(dom.size)
    strict[keep], plateau[keep], maximiser[keep] = strict_k, plateau_k, max_k
    return BathtubResult(sigma, h, strict, plateau, c, maximiser, mass, dom.cell)


def support_batch(
    V: np.ndarray, cell: float, budget: float, forbidden: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise support values and greedy maximisers for a stack of fields.

    Ties are broken by node order (stable sort), so the maximiser is a vertex of
    the relaxed set whenever the budget is a whole number of cells.  Nodes in
    ``forbidden`` are excluded.  Returns ``(sigma, U)`` with ``U`` of the same
    shape as ``V``.
    """
    V = np.asarray(V, dtype=float)
    if forbidden is not None and np.any(forbidden):
        V = V.copy()
        V[:, np.asarray(forbidden, dtype=bool)] = -np.inf
    n = V.shape[1]
    full = int(np.floor(budget / cell + 1e-9))
    frac = budget / cell - full
    if frac < 1e-9:
        frac = 0.0
    weights = np.zeros(n)
    weights[: min(full, n)] = 1.0
    if full < n:
        weights[full] = frac
    order = np.argsort(-V, axis=1, kind="stable")
    Vs = np.take_along_axis(V, order, axis=1)
    positive = Vs > 0
    sigma = cell * np.sum(np.where(positive, Vs, 0.0) * weights[None, :], axis=1)
    U = np.zeros_like(V)
    np.put_along_axis(U, order, np.where(positive, weights[None, :], 0.0), axis=1)
    return sigma, U


def volume_budget(domain: Domain, L: float) -> float:
    return _check_fraction(L) * domain.measure
