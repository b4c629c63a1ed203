"""Level-2 rough paths on a grid, piecewise-linear lifts, Chen diagnostics and
rough paths of mixed regularity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .timegrid import Path, TwoParamField, field_to_csv, holder_seminorm, holder_seminorm_2


def areas_from_cells(values: np.ndarray, cell_areas: np.ndarray, other: np.ndarray | None = None) -> np.ndarray:
    """Dense areas for all grid pairs from per-cell areas, extended by Chen.

    ``values`` (n, p) is the first path and ``other`` (n, q) the second one
    (defaults to the first). ``cell_areas`` has shape (n-1, p, q).
    """
    a = np.asarray(values, float)
    b = a if other is None else np.asarray(other, float)
    a0 = a - a[0]
    db = np.diff(b, axis=0)
    steps = cell_areas + a0[:-1, :, None] * db[:, None, :]
    A0 = np.concatenate([np.zeros((1,) + steps.shape[1:]), np.cumsum(steps, axis=0)])
    # area_{i,j} = A0_j - A0_i - (a_i - a_0) ⊗ (b_j - b_i)
    return A0[None, :] - A0[:, None] - a0[:, None, :, None] * (b[None, :, None, :] - b[:, None, None, :])


@dataclass(frozen=True, eq=False)
class RoughPath:
    gamma: float
    g: Path
    area: TwoParamField

    def __post_init__(self):
        m = self.g.dim
        if self.area.grid != self.g.grid or self.area.shape != (m, m):
            raise ValueError("area must be an m x m field on the path's grid")

    @property
    def grid(self):
        return self.g.grid

    @property
    def m(self):
        return self.g.dim

    def cell_increments(self):
        return np.diff(self.g.flat(), axis=0)

    def cell_areas(self):
        idx = np.arange(self.grid.n - 1)
        return self.area.values[idx, idx + 1]

    def tolerance(self, base=1e-10):
        return base * max(1.0, float(np.max(np.abs(self.g.values))) ** 2)

    def restrict(self, i, j):
        return RoughPath(
            self.gamma, self.g.restrict(i, j), TwoParamField(self.grid.restrict(i, j), self.area.values[i : j + 1, i : j + 1])
        )


def rough_path_from_cells(g: Path, cell_areas, gamma: float = 0.5) -> RoughPath:
    return RoughPath(gamma, g, TwoParamField(g.grid, areas_from_cells(g.flat(), np.asarray(cell_areas, float))))


def lift_piecewise_linear(g: Path, gamma: float = 0.5) -> RoughPath:
    """Canonical lift of the piecewise-linear interpolation of ``g``."""
    dg = np.diff(g.flat(), axis=0)
    return rough_path_from_cells(g, 0.5 * dg[:, :, None] * dg[:, None, :], gamma)


def chen_defect(rp: RoughPath) -> float:
    x = np.ascontiguousarray(rp.g.flat())
    return float(kernels.chen_defect_max(x, x, np.ascontiguousarray(rp.area.values)))


def symmetric_defect(rp: RoughPath) -> float:
    """max |Sym(area_{s,t}) - ½ g_{s,t}⊗g_{s,t}| over grid pairs."""
    A = rp.area.values
    inc = rp.g.increments().values.reshape(rp.grid.n, rp.grid.n, -1)
    sym = 0.5 * (A + np.swapaxes(A, -1, -2))
    d = sym - 0.5 * inc[..., :, None] * inc[..., None, :]
    iu = np.triu_indices(rp.grid.n, k=1)
    return float(np.max(np.abs(d[iu]))) if iu[0].size else 0.0


def d_gamma(rp1: RoughPath, rp2: RoughPath) -> float:
    """Inhomogeneous rough path distance on grid pairs."""
    if rp1.grid != rp2.grid or rp1.m != rp2.m:
        raise ValueError("rough paths must share grid and dimension")
    dg = Path(rp1.grid, rp1.g.values - rp2.g.values)
    start = float(np.max(np.abs(dg.values[0])))
    dA = TwoParamField(rp1.grid, rp1.area.values - rp2.area.values)
    return start + holder_seminorm(dg, rp1.gamma) + holder_seminorm_2(dA, 2 * rp1.gamma)


@dataclass(frozen=True, eq=False)
class MixedRoughPath:
    """Joint lift of a rough path B (dim m) and a smoother path L (dim e).

    ``areaBL[s,t][a,b]`` stands for ∫ B^a_{s,r} dL^b_r and ``areaLB`` for the
    reverse order.
    """

    gamma: float
    beta: float
    gB: Path
    gL: Path
    areaBB: TwoParamField
    areaLB: TwoParamField
    areaBL: TwoParamField

    @property
    def grid(self):
        return self.gB.grid

    def rough_part(self) -> RoughPath:
        return RoughPath(self.gamma, self.gB, self.areaBB)


def _defect(a: Path, b: Path, area: TwoParamField) -> float:
    return float(
        kernels.chen_defect_max(
            np.ascontiguousarray(a.flat()), np.ascontiguousarray(b.flat()), np.ascontiguousarray(area.values)
        )
    )


def mixed_chen_defect(mrp: MixedRoughPath) -> float:
    return max(_defect(mrp.gB, mrp.gL, mrp.areaBL), _defect(mrp.gL, mrp.gB, mrp.areaLB))


def product_rule_defect(mrp: MixedRoughPath) -> float:
    incB = mrp.gB.increments().values.reshape(mrp.grid.n, mrp.grid.n, -1)
    incL = mrp.gL.increments().values.reshape(mrp.grid.n, mrp.grid.n, -1)
    d = mrp.areaBL.values + np.swapaxes(mrp.areaLB.values, -1, -2) - incB[..., :, None] * incL[..., None, :]
    iu = np.triu_indices(mrp.grid.n, k=1)
    return float(np.max(np.abs(d[iu]))) if iu[0].size else 0.0


def assemble_mixed(B_lift: RoughPath, L: Path, areaBL: TwoParamField, beta: float = 0.9, tol: float | None = None) -> MixedRoughPath:
    """Complete (B, L, ∫B dL) to a mixed rough path; the reverse area is fixed
    by the product rule."""
    if L.grid != B_lift.grid:
        raise ValueError("L must live on the lift's grid")
    m, e = B_lift.m, L.dim
    vals = np.asarray(areaBL.values, float).reshape(L.grid.n, L.grid.n, m, e)
    BL = TwoParamField(L.grid, vals)
    if tol is None:
        scale = max(1.0, float(np.max(np.abs(B_lift.g.values))), float(np.max(np.abs(L.values))))
        tol = 1e-8 * scale**2
    defect = _defect(B_lift.g, L, BL)
    if defect > tol:
        raise ValueError(f"mixed Chen defect {defect:.3e} of the supplied area exceeds {tol:.1e}")
    incB = B_lift.g.increments().values.reshape(L.grid.n, L.grid.n, m)
    incL = L.increments().values.reshape(L.grid.n, L.grid.n, e)
    LB = incL[..., :, None] * incB[..., None, :] - np.swapaxes(vals, -1, -2)
    return MixedRoughPath(B_lift.gamma, beta, B_lift.g, L, B_lift.area, TwoParamField(L.grid, LB), BL)


def area_to_csv(rp: RoughPath) -> str:
    return field_to_csv(rp.area, index_columns=True)
