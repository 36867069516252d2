"""Linear functionals of solutions to the conditional-moment equation.

The target parameter is phi(P) = E[m(O, g)] where g, a function on the
(W, X) grid, satisfies E[g(W,X) | Z,X] = E[Y | Z,X].  Per X-stratum the
equation is a k_z-by-k_w linear system; the functional is evaluated through
its representer alpha on the (W, X) grid, phi = E[alpha * g].

Supported functionals:

* ``late``         -- binary W and Z, no X; m(O,g) = g(1) - g(0)
* ``ate_iv``       -- binary W; m(O,g) = g(1,X) - g(0,X)
* ``proximal_ate`` -- X = (A, L) with binary A interleaved on the X axis
                      (even cells A=0, odd cells A=1);
                      m(O,g) = g(W,1,L) - g(W,0,L)
* ``npiv``         -- no X; m(O,g) = sum_j g(j) omega(j) mu_w(j)
* ``generic``      -- user-supplied representer coefficients
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import PositivityViolation, ZeroConditioningMass
from .laws import DiscreteLaw, Dataset, SupportSpec, marginal

DEFAULT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class FunctionalSpec:
    """Which linear functional (and hence representer family) is targeted."""

    kind: str
    omega: np.ndarray | None = None
    alpha: np.ndarray | None = None

    KINDS = ("late", "ate_iv", "proximal_ate", "npiv", "generic")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if self.omega is not None:
            object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))
        if self.alpha is not None:
            object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        if self.kind == "npiv" and self.omega is None:
            raise ValueError("npiv needs per-cell weights omega")
        if self.kind == "generic" and self.alpha is None:
            raise ValueError("generic needs representer coefficients alpha")

    @classmethod
    def late(cls):
        return cls(kind="late")

    @classmethod
    def ate_iv(cls):
        return cls(kind="ate_iv")

    @classmethod
    def proximal_ate(cls):
        return cls(kind="proximal_ate")

    @classmethod
    def npiv(cls, omega):
        return cls(kind="npiv", omega=omega)

    @classmethod
    def generic(cls, alpha):
        return cls(kind="generic", alpha=alpha)

    def validate_against(self, support: SupportSpec):
        """Check the structural requirements of the variant; raises ValueError."""
        if self.kind == "late":
            if not (support.k_w == 2 and support.k_z == 2 and support.k_x == 1):
                raise ValueError("late needs k_w = k_z = 2 and k_x = 1")
            if not (np.all(support.mu_w == 1.0) and np.all(support.mu_z == 1.0)):
                raise ValueError("late needs counting measure on the binary W and Z")
        elif self.kind == "ate_iv":
            if support.k_w != 2:
                raise ValueError("ate_iv needs binary W")
            if not np.all(support.mu_w == 1.0):
                raise ValueError("ate_iv needs counting measure on the binary W")
        elif self.kind == "proximal_ate":
            if support.k_x % 2 != 0:
                raise ValueError(
                    "proximal_ate encodes X = (A, L) with k_x = 2 * k_L; "
                    f"got odd k_x = {support.k_x}"
                )
            mu = support.mu_x
            if not np.array_equal(mu[0::2], mu[1::2]):
                raise ValueError(
                    "proximal_ate needs equal X measure on the two treatment arms "
                    "of every L cell"
                )
        elif self.kind == "npiv":
            if support.k_x != 1:
                raise ValueError("npiv has no X axis (k_x must be 1)")
            if self.omega.shape != (support.k_w,):
                raise ValueError("omega must have one weight per W cell")
        elif self.kind == "generic":
            if self.alpha.shape != (support.k_w, support.k_x):
                raise ValueError(
                    f"alpha must have shape {(support.k_w, support.k_x)}, "
                    f"got {self.alpha.shape}"
                )

    def to_dict(self):
        d = {"kind": self.kind}
        if self.omega is not None:
            d["omega"] = self.omega.tolist()
        if self.alpha is not None:
            d["alpha"] = self.alpha.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d["kind"], omega=d.get("omega"), alpha=d.get("alpha"))

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class NoSolution:
    """Marker result: the per-stratum linear system is inconsistent."""

    stratum: int
    residual: float
    equation: str = "g"

    def __bool__(self):
        return False


def _mass_tables(law: DiscreteLaw):
    mass_zwx = law.mass.sum(axis=0)          # (k_z, k_w, k_x)
    mass_zx = mass_zwx.sum(axis=1)           # (k_z, k_x)
    mass_wx = mass_zwx.sum(axis=0)           # (k_w, k_x)
    return mass_zwx, mass_zx, mass_wx


def cond_mean_operator(law: DiscreteLaw, stratum: int) -> np.ndarray:
    """Matrix of the conditional mean operator on stratum m.

    Entry (l, j) is f(W=j | Z=l, X=m) * mu_w(j), i.e. the probability of the
    j-th W cell given the l-th Z cell; rows sum to one.
    """
    mass_zwx, mass_zx, _ = _mass_tables(law)
    col = mass_zx[:, stratum]
    if np.any(col <= 0.0):
        raise ZeroConditioningMass((int(np.argmax(col <= 0.0)), stratum))
    return mass_zwx[:, :, stratum] / col[:, None]


def response_vector(law: DiscreteLaw, stratum: int) -> np.ndarray:
    """Conditional mean of Y given each Z cell on stratum m."""
    mass_yzx = law.mass.sum(axis=2)          # (k_y, k_z, k_x)
    mass_zx = mass_yzx.sum(axis=0)
    col = mass_zx[:, stratum]
    if np.any(col <= 0.0):
        raise ZeroConditioningMass((int(np.argmax(col <= 0.0)), stratum))
    ybar = law.support.y_cell_means
    return (ybar @ mass_yzx[:, :, stratum]) / col


def adjoint_mean_operator(law: DiscreteLaw, stratum: int) -> np.ndarray:
    """Matrix of the adjoint operator on stratum m.

    Entry (j, l) is f(Z=l | W=j, X=m) * mu_z(l); rows sum to one.
    """
    mass_zwx, _, mass_wx = _mass_tables(law)
    row = mass_wx[:, stratum]
    if np.any(row <= 0.0):
        raise ZeroConditioningMass((int(np.argmax(row <= 0.0)), stratum))
    return mass_zwx[:, :, stratum].T / row[:, None]


def _residual_ok(residual, rhs_norm, tol):
    return residual <= tol * max(1.0, rhs_norm)


def _solve_strata(law, build_lhs, build_rhs):
    """Least-squares solve of one linear system per X stratum.

    Returns (solution matrix with one column per stratum, residual list).
    Singular systems get the minimum-norm solution; the residual test decides
    whether the system was consistent.
    """
    k_x = law.support.k_x
    cols = []
    residuals = []
    for m in range(k_x):
        lhs = build_lhs(law, m)
        rhs = build_rhs(law, m)
        sol, _, _, _ = np.linalg.lstsq(lhs, rhs, rcond=None)
        res = float(np.linalg.norm(lhs @ sol - rhs))
        cols.append(sol)
        residuals.append(res)
    return np.column_stack(cols), residuals


def solve_g(law: DiscreteLaw, tol: float = DEFAULT_TOL):
    """Solve the conditional-moment equation for g on the (W, X) grid.

    Returns the value matrix g[j][m], or NoSolution carrying the first
    stratum whose residual exceeds tol (relative to the response norm):
    the response is then outside the operator range.
    """
    g, residuals = _solve_strata(law, cond_mean_operator, response_vector)
    for m, res in enumerate(residuals):
        rhs_norm = float(np.linalg.norm(response_vector(law, m)))
        if not _residual_ok(res, rhs_norm, tol):
            return NoSolution(stratum=m, residual=res, equation="g")
    return g


def solve_q(law: DiscreteLaw, alpha: np.ndarray, tol: float = DEFAULT_TOL):
    """Solve the adjoint equation E[q(Z,X) | W,X] = alpha(W,X) for q.

    Returns the value matrix q[l][m], or NoSolution when alpha is outside
    the adjoint range on some stratum.
    """
    alpha = np.asarray(alpha, dtype=float)
    q, residuals = _solve_strata(
        law, adjoint_mean_operator, lambda _law, m: alpha[:, m]
    )
    for m, res in enumerate(residuals):
        rhs_norm = float(np.linalg.norm(alpha[:, m]))
        if not _residual_ok(res, rhs_norm, tol):
            return NoSolution(stratum=m, residual=res, equation="q")
    return q


def alpha_from_wx_mass(
    spec: FunctionalSpec, support: SupportSpec, mass_wx: np.ndarray
) -> np.ndarray:
    """Representer coefficients from the (W, X) marginal masses alone.

    Every supported functional determines its representer through the
    (W, X) marginal, so callers that know the marginal in closed form can
    bypass assembling the full tensor.
    """
    spec.validate_against(support)

    if spec.kind == "generic":
        return spec.alpha.copy()

    if spec.kind == "late":
        f_w = mass_wx[:, 0]                  # counting measure: density = mass
        if np.any(f_w <= 0.0):
            raise PositivityViolation((int(np.argmax(f_w <= 0.0)), 0))
        signs = 2.0 * np.arange(2) - 1.0
        return (signs / f_w)[:, None]

    if spec.kind == "ate_iv":
        mass_x = mass_wx.sum(axis=0)
        if np.any(mass_x <= 0.0):
            raise PositivityViolation((None, int(np.argmax(mass_x <= 0.0))))
        p_w_given_x = mass_wx / mass_x[None, :]
        if np.any(p_w_given_x <= 0.0):
            j, m = np.argwhere(p_w_given_x <= 0.0)[0]
            raise PositivityViolation((int(j), int(m)))
        signs = 2.0 * np.arange(2) - 1.0
        return signs[:, None] / p_w_given_x

    if spec.kind == "npiv":
        f_w = mass_wx[:, 0] / support.mu_w
        if np.any(f_w <= 0.0):
            raise PositivityViolation((int(np.argmax(f_w <= 0.0)), 0))
        return (spec.omega / f_w)[:, None]

    # proximal_ate: X interleaves (A, L); compare the two arms of each L cell
    dens_wx = mass_wx / (support.mu_w[:, None] * support.mu_x[None, :])
    f0 = dens_wx[:, 0::2]
    f1 = dens_wx[:, 1::2]
    both = f0 + f1
    p1 = np.divide(f1, both, out=np.zeros_like(f1), where=both > 0.0)
    alpha = np.empty((support.k_w, support.k_x))
    prob = np.stack([1.0 - p1, p1], axis=-1)      # (k_w, k_L, 2)
    if np.any(both <= 0.0) or np.any(prob <= 0.0):
        bad = np.argwhere((prob <= 0.0) | (both <= 0.0)[..., None])[0]
        j, lcell, a = (int(v) for v in bad)
        raise PositivityViolation((j, 2 * lcell + a))
    alpha[:, 0::2] = -1.0 / prob[..., 0]
    alpha[:, 1::2] = 1.0 / prob[..., 1]
    return alpha


def riesz_alpha(law: DiscreteLaw, spec: FunctionalSpec) -> np.ndarray:
    """Representer coefficients alpha[j][m] for the chosen functional.

    Raises PositivityViolation when a denominator density vanishes.
    """
    _, _, mass_wx = _mass_tables(law)
    return alpha_from_wx_mass(spec, law.support, mass_wx)


def m_cell_values(spec: FunctionalSpec, g: np.ndarray, support: SupportSpec) -> np.ndarray:
    """Value of m(O, g) as a function of the observed (W, X) cell."""
    spec.validate_against(support)
    k_w, k_x = support.k_w, support.k_x
    if spec.kind == "late":
        return np.full((k_w, k_x), g[1, 0] - g[0, 0])
    if spec.kind == "ate_iv":
        return np.tile(g[1, :] - g[0, :], (k_w, 1))
    if spec.kind == "proximal_ate":
        contrast = g[:, 1::2] - g[:, 0::2]
        return np.repeat(contrast, 2, axis=1)
    if spec.kind == "npiv":
        value = float(np.sum(g[:, 0] * spec.omega * support.mu_w))
        return np.full((k_w, k_x), value)
    return spec.alpha * g


def evaluate_phi(law: DiscreteLaw, spec: FunctionalSpec, tol: float = DEFAULT_TOL):
    """phi(P) = sum over (W, X) cells of alpha * g * P(W, X); or NoSolution."""
    g = solve_g(law, tol)
    if isinstance(g, NoSolution):
        return g
    alpha = riesz_alpha(law, spec)
    _, _, mass_wx = _mass_tables(law)
    return float(np.sum(alpha * g * mass_wx))


@dataclass(frozen=True)
class ModelReport:
    """Diagnostics of membership in the weak dependence model."""

    in_model: bool
    g_residual: float
    q_residual: float | None
    positivity_ok: bool
    g_residuals: tuple = ()
    q_residuals: tuple = ()
    message: str = ""

    def to_dict(self):
        return {
            "in_model": self.in_model,
            "g_residual": self.g_residual,
            "q_residual": self.q_residual,
            "positivity_ok": self.positivity_ok,
            "per_stratum": {
                "g": list(self.g_residuals),
                "q": list(self.q_residuals),
            },
            "message": self.message,
        }


def check_model_membership(
    law: DiscreteLaw, spec: FunctionalSpec, tol: float = DEFAULT_TOL
) -> ModelReport:
    """Aggregate solvability of both equations plus representer positivity."""
    try:
        _, g_residuals = _solve_strata(law, cond_mean_operator, response_vector)
    except ZeroConditioningMass as exc:
        return ModelReport(
            in_model=False, g_residual=float("nan"), q_residual=None,
            positivity_ok=True, message=str(exc),
        )
    g_ok = all(
        _residual_ok(res, float(np.linalg.norm(response_vector(law, m))), tol)
        for m, res in enumerate(g_residuals)
    )

    try:
        alpha = riesz_alpha(law, spec)
    except (PositivityViolation, ValueError) as exc:
        return ModelReport(
            in_model=False, g_residual=max(g_residuals), q_residual=None,
            positivity_ok=False, g_residuals=tuple(g_residuals),
            message=str(exc),
        )

    try:
        _, q_residuals = _solve_strata(
            law, adjoint_mean_operator, lambda _law, m: alpha[:, m]
        )
    except ZeroConditioningMass as exc:
        return ModelReport(
            in_model=False, g_residual=max(g_residuals), q_residual=float("nan"),
            positivity_ok=True, g_residuals=tuple(g_residuals), message=str(exc),
        )
    q_ok = all(
        _residual_ok(res, float(np.linalg.norm(alpha[:, m])), tol)
        for m, res in enumerate(q_residuals)
    )

    return ModelReport(
        in_model=g_ok and q_ok,
        g_residual=max(g_residuals),
        q_residual=max(q_residuals),
        positivity_ok=True,
        g_residuals=tuple(g_residuals),
        q_residuals=tuple(q_residuals),
    )


def psi1_values(
    dataset: Dataset,
    support: SupportSpec,
    spec: FunctionalSpec,
    g: np.ndarray,
    q: np.ndarray,
    theta: float = 0.0,
) -> np.ndarray:
    """Per-row values of the estimating function m(O,g) + q(Z,X){Y - g(W,X)} - theta."""
    mcell = m_cell_values(spec, g, support)
    mvals = mcell[dataset.w, dataset.x]
    return mvals + q[dataset.z, dataset.x] * (dataset.y - g[dataset.w, dataset.x]) - theta


def psi1_expectation(
    law: DiscreteLaw,
    spec: FunctionalSpec,
    g: np.ndarray,
    q: np.ndarray,
    theta: float = 0.0,
) -> float:
    """Exact expectation of the estimating function under the law."""
    support = law.support
    mcell = m_cell_values(spec, g, support)
    mass_wx = marginal(law, ("W", "X"))
    ybar = support.y_cell_means
    # E[q(Z,X) (Y - g(W,X))] by direct summation over the full grid
    corr = np.einsum(
        "hljm,lm,hjm->", law.mass, q,
        ybar[:, None, None] - g[None, :, :],
    )
    return float(np.sum(mcell * mass_wx) + corr - theta)
