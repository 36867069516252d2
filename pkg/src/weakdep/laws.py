"""Finitely supported joint laws of O = (Y, Z, W, X).

A law is a 4-index probability-mass tensor over a product grid of cells.
Each cell carries a positive reference measure; densities are the derived
view mass / product-of-cell-measures.  Tensor axes are ordered (Y, Z, W, X)
throughout, row-major on disk.

The Y axis additionally carries per-cell integrals of the identity,
``iota_y[h]``, so conditional means of Y are computable without fixing
representative points; for sampling, Y is summarized by its cell mean
``iota_y[h] / mu_y[h]`` (exact when Y cells are singletons).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    AbsoluteContinuityViolation,
    CollinearSupport,
    EmptyDataset,
    SupportMismatch,
    ZeroConditioningMass,
)

AXES = ("Y", "Z", "W", "X")

MASS_TOL = 1e-12        # construction-time normalization slack
DERIVED_TOL = 1e-10     # slack on derived quantities (kernel rows, marginals)

# relative scale below which two vectors count as collinear
_COLLINEAR_TOL = 1e-12


def _is_collinear(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    gram = (u @ u) * (v @ v) - (u @ v) ** 2
    return gram <= _COLLINEAR_TOL * max((u @ u) * (v @ v), 1e-300)


def _ro(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SupportSpec:
    """Cell counts, cell measures and per-cell Y integrals of the grid.

    Invariants (checked at construction): all measures strictly positive and
    finite, the Z and W grids have equal size, k_y >= 2, and ``iota_y`` is not
    proportional to ``mu_y``.
    """

    mu_y: np.ndarray
    mu_z: np.ndarray
    mu_w: np.ndarray
    mu_x: np.ndarray
    iota_y: np.ndarray

    def __post_init__(self):
        for name in ("mu_y", "mu_z", "mu_w", "mu_x", "iota_y"):
            object.__setattr__(self, name, _ro(getattr(self, name)))
        for name in ("mu_y", "mu_z", "mu_w", "mu_x"):
            mu = getattr(self, name)
            if mu.ndim != 1 or mu.size == 0:
                raise ValueError(f"{name} must be a nonempty vector")
            if not np.all(np.isfinite(mu)) or np.any(mu <= 0.0):
                raise ValueError(f"{name} must be strictly positive and finite")
        if self.k_y < 2:
            raise ValueError("need at least two Y cells")
        if self.k_z != self.k_w:
            raise ValueError(
                f"Z and W grids must have equal size, got {self.k_z} and {self.k_w}"
            )
        if self.iota_y.shape != self.mu_y.shape or not np.all(np.isfinite(self.iota_y)):
            raise ValueError("iota_y must be a finite vector of length k_y")
        if _is_collinear(self.iota_y, self.mu_y):
            raise CollinearSupport(
                "per-cell Y integrals are proportional to the Y cell measures"
            )

    @property
    def k_y(self):
        return self.mu_y.size

    @property
    def k_z(self):
        return self.mu_z.size

    @property
    def k_w(self):
        return self.mu_w.size

    @property
    def k_x(self):
        return self.mu_x.size

    @property
    def shape(self):
        return (self.k_y, self.k_z, self.k_w, self.k_x)

    @property
    def n_cells(self):
        return self.k_y * self.k_z * self.k_w * self.k_x

    @property
    def y_cell_means(self):
        """Representative Y value per cell: iota_y / mu_y."""
        return self.iota_y / self.mu_y

    def cell_measure(self):
        """4-index tensor of per-cell product measures."""
        return np.einsum(
            "h,l,j,m->hljm", self.mu_y, self.mu_z, self.mu_w, self.mu_x
        )

    def __eq__(self, other):
        if not isinstance(other, SupportSpec):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("mu_y", "mu_z", "mu_w", "mu_x", "iota_y")
        )


@dataclass(frozen=True, eq=False)
class DiscreteLaw:
    """Probability-mass tensor ``mass[h, l, j, m]`` over a SupportSpec.

    The constructor only checks shape; :func:`validate` reports invariant
    violations so that malformed laws can be loaded and diagnosed.
    """

    support: SupportSpec
    mass: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mass", _ro(self.mass))
        if self.mass.shape != self.support.shape:
            raise ValueError(
                f"mass tensor shape {self.mass.shape} does not match "
                f"support shape {self.support.shape}"
            )

    def density(self):
        """Density tensor with respect to the product cell measure."""
        return self.mass / self.support.cell_measure()


@dataclass(frozen=True)
class Kernel:
    """Conditional density of one variable given a subset of the others.

    ``values`` is indexed by the conditioning axes (in Y, Z, W, X order)
    followed by the target axis; each conditioning row integrates to one
    against the target cell measure.
    """

    of: str
    given: tuple
    values: np.ndarray
    col_measure: np.ndarray

    def stratum(self, m):
        """Matrix view for X-stratum m (X must be the last conditioning axis)."""
        if not self.given or self.given[-1] != "X":
            raise ValueError("stratum() needs X as final conditioning axis")
        return self.values[..., m, :]


def validate(law: DiscreteLaw):
    """Return a list of human-readable invariant violations (empty if valid)."""
    violations = []
    mass = law.mass
    if not np.all(np.isfinite(mass)):
        idx = np.argwhere(~np.isfinite(mass))[0]
        violations.append(f"non-finite mass at {tuple(int(i) for i in idx)}")
        return violations
    neg = np.argwhere(mass < 0.0)
    for idx in neg[:8]:
        cell = tuple(int(i) for i in idx)
        violations.append(f"negative mass at {cell}")
    total = float(mass.sum())
    if abs(total - 1.0) > MASS_TOL:
        violations.append(f"total mass {total:.12g} != 1")
    return violations


def _axes_of(which):
    """Map axis names to tensor positions, preserving (Y, Z, W, X) order."""
    names = set(which)
    unknown = names - set(AXES)
    if unknown:
        raise ValueError(f"unknown axes {sorted(unknown)}")
    return tuple(i for i, a in enumerate(AXES) if a in names)


def marginal(law: DiscreteLaw, which):
    """Mass tensor of the sub-vector named by ``which`` (subset of Y, Z, W, X).

    Result axes keep the canonical (Y, Z, W, X) order.
    """
    keep = _axes_of(which)
    drop = tuple(i for i in range(4) if i not in keep)
    return law.mass.sum(axis=drop) if drop else law.mass.copy()


_AXIS_MEASURE = {"Y": "mu_y", "Z": "mu_z", "W": "mu_w", "X": "mu_x"}


def conditional_kernel(law: DiscreteLaw, target: str) -> Kernel:
    """Conditional density kernel for a target like ``"W|Z,X"`` or ``"Z"``.

    The part before ``|`` is the target variable; the names after it (comma
    separated, possibly absent) are the conditioning variables.  Raises
    ZeroConditioningMass when some conditioning cell has zero probability.
    """
    if "|" in target:
        of, given_str = target.split("|", 1)
        given = tuple(g.strip() for g in given_str.split(",") if g.strip())
    else:
        of, given = target.strip(), ()
    of = of.strip()
    if of not in AXES or any(g not in AXES for g in given) or of in given:
        raise ValueError(f"malformed kernel target {target!r}")
    given = tuple(a for a in AXES if a in given)

    mu_of = getattr(law.support, _AXIS_MEASURE[of])
    joint = marginal(law, given + (of,))
    if not given:
        values = joint / mu_of
        return Kernel(of=of, given=(), values=values, col_measure=mu_of)

    # joint axes follow canonical order; move the target axis last
    order = tuple(a for a in AXES if a in given + (of,))
    joint = np.moveaxis(joint, order.index(of), -1)
    cond = joint.sum(axis=-1)
    zero = np.argwhere(cond <= 0.0)
    if zero.size:
        cell = tuple(int(i) for i in zero[0])
        raise ZeroConditioningMass(cell)
    values = joint / cond[..., None] / mu_of
    return Kernel(of=of, given=given, values=values, col_measure=mu_of)


def tv_distance(a: DiscreteLaw, b: DiscreteLaw) -> float:
    """Total variation distance, exact for discrete laws: half the L1 gap."""
    if a.support != b.support:
        raise SupportMismatch("laws live on different supports")
    return 0.5 * float(np.abs(a.mass - b.mass).sum())


def kl_divergence(a: DiscreteLaw, b: DiscreteLaw) -> float:
    """Kullback-Leibler divergence of a from b; cells with zero a-mass drop out."""
    if a.support != b.support:
        raise SupportMismatch("laws live on different supports")
    pa = a.mass.ravel()
    pb = b.mass.ravel()
    bad = (pa > 0.0) & (pb <= 0.0)
    if np.any(bad):
        flat = int(np.argmax(bad))
        raise AbsoluteContinuityViolation(
            tuple(int(i) for i in np.unravel_index(flat, a.mass.shape))
        )
    pos = pa > 0.0
    return float(np.sum(pa[pos] * np.log(pa[pos] / pb[pos])))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Sampled rows: real outcome y and 0-based cell indices z, w, x."""

    y: np.ndarray
    z: np.ndarray
    w: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", _ro(self.y, dtype=float))
        for name in ("z", "w", "x"):
            object.__setattr__(self, name, _ro(getattr(self, name), dtype=np.int64))
        n = self.y.size
        if any(getattr(self, f).size != n for f in ("z", "w", "x")):
            raise ValueError("column lengths differ")

    def __len__(self):
        return self.y.size

    def subset(self, idx):
        return Dataset(self.y[idx], self.z[idx], self.w[idx], self.x[idx])


def sample(law: DiscreteLaw, n: int, seed) -> Dataset:
    """Draw n i.i.d. rows; the emitted y is the Y-cell mean. Deterministic in seed."""
    if n <= 0:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    flat = law.mass.ravel()
    idx = rng.choice(flat.size, size=n, p=flat / flat.sum())
    h, l, j, m = np.unravel_index(idx, law.mass.shape)
    ybar = law.support.y_cell_means
    return Dataset(y=ybar[h], z=l, w=j, x=m)


def _y_cell_index(dataset: Dataset, support: SupportSpec):
    ybar = support.y_cell_means
    diff = np.abs(dataset.y[:, None] - ybar[None, :])
    h = diff.argmin(axis=1)
    worst = diff[np.arange(len(dataset)), h]
    scale = np.maximum(1.0, np.abs(ybar[h]))
    if np.any(worst > 1e-8 * scale):
        bad = int(np.argmax(worst > 1e-8 * scale))
        raise ValueError(f"row {bad}: y={dataset.y[bad]} matches no Y cell mean")
    return h


def estimate(dataset: Dataset, support: SupportSpec, smoothing: float = 0.0) -> DiscreteLaw:
    """Plug-in law: (count + smoothing) / (n + smoothing * n_cells)."""
    n = len(dataset)
    if n == 0:
        raise EmptyDataset("cannot estimate a law from zero rows")
    if smoothing < 0.0:
        raise ValueError("smoothing must be nonnegative")
    h = _y_cell_index(dataset, support)
    for name, k in (("z", support.k_z), ("w", support.k_w), ("x", support.k_x)):
        col = getattr(dataset, name)
        if col.min() < 0 or col.max() >= k:
            raise ValueError(f"{name} index outside support")
    flat = np.ravel_multi_index(
        (h, dataset.z, dataset.w, dataset.x), support.shape
    )
    counts = np.bincount(flat, minlength=support.n_cells).astype(float)
    mass = (counts + smoothing) / (n + smoothing * support.n_cells)
    return DiscreteLaw(support, mass.reshape(support.shape))


# ---------------------------------------------------------------------------
# serialization


def support_to_dict(support: SupportSpec):
    return {
        "k_y": support.k_y,
        "k_z": support.k_z,
        "k_w": support.k_w,
        "k_x": support.k_x,
        "mu_y": support.mu_y.tolist(),
        "mu_z": support.mu_z.tolist(),
        "mu_w": support.mu_w.tolist(),
        "mu_x": support.mu_x.tolist(),
        "iota_y": support.iota_y.tolist(),
    }


def support_from_dict(d) -> SupportSpec:
    spec = SupportSpec(
        mu_y=d["mu_y"], mu_z=d["mu_z"], mu_w=d["mu_w"], mu_x=d["mu_x"],
        iota_y=d["iota_y"],
    )
    for key in ("k_y", "k_z", "k_w", "k_x"):
        if key in d and int(d[key]) != getattr(spec, key):
            raise ValueError(f"{key}={d[key]} inconsistent with measure lengths")
    return spec


def law_to_dict(law: DiscreteLaw):
    return {
        "support": support_to_dict(law.support),
        "mass": law.mass.ravel().tolist(),
    }


def law_from_dict(d) -> DiscreteLaw:
    support = support_from_dict(d["support"])
    mass = np.asarray(d["mass"], dtype=float)
    if mass.size != support.n_cells:
        raise ValueError(
            f"mass array has {mass.size} entries, support has {support.n_cells} cells"
        )
    return DiscreteLaw(support, mass.reshape(support.shape))


def law_to_json(law: DiscreteLaw, indent=None) -> str:
    return json.dumps(law_to_dict(law), indent=indent)


def law_from_json(text: str) -> DiscreteLaw:
    return law_from_dict(json.loads(text))


def dataset_to_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["y", "z", "w", "x"])
    for i in range(len(dataset)):
        writer.writerow(
            [repr(float(dataset.y[i])), int(dataset.z[i]), int(dataset.w[i]),
             int(dataset.x[i])]
        )
    return buf.getvalue()


def dataset_from_csv(text: str) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [c.strip() for c in header] != ["y", "z", "w", "x"]:
        raise ValueError("expected CSV header y,z,w,x")
    rows = [r for r in reader if r]
    if not rows:
        raise EmptyDataset("CSV contains no data rows")
    y = np.array([float(r[0]) for r in rows])
    z = np.array([int(r[1]) for r in rows])
    w = np.array([int(r[2]) for r in rows])
    x = np.array([int(r[3]) for r in rows])
    return Dataset(y, z, w, x)
