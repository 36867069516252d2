"""Weak-dependence law sequences with a pinned functional value.

Starting from a product base law under which (Y, W) is independent of Z
given X (so the target functional is undefined there), this module builds
perturbed laws that

* keep the (Z, X) marginal of the base exactly,
* make the W | (Z, X) kernel invertible via a rank-one-plus-identity bump
  of size ``eta_w``,
* tilt the Y | (Z, X) kernel by ``eta_y * M`` where the matrix M maps the
  per-cell Y integrals onto the base representer and annihilates the Y
  cell measures (so each kernel row still integrates to one), and
* choose ``gamma = eta_y / eta_w`` so the functional equals a requested
  value ``zeta`` exactly.

As ``eta_w`` shrinks, the generated laws converge to the base in total
variation while the functional stays pinned at ``zeta``: arbitrarily weak
W-Z dependence with an arbitrary target value.  Every generated law is
certified two ways: through the explicit rank-one inverse (closed form)
and through the generic per-stratum solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BracketingFailure,
    CollinearSupport,
    DegenerateBase,
    InvalidPerturbation,
    SingularPerturbation,
)
from .functionals import (
    FunctionalSpec,
    NoSolution,
    alpha_from_wx_mass,
    check_model_membership,
    evaluate_phi,
)
from .laws import DiscreteLaw, SupportSpec, support_from_dict, support_to_dict, tv_distance

# strict inequalities of the construction are enforced with this slack
POSITIVITY_SLACK = 1e-12
CONSTRAINT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class BaseLawSpec:
    """Product base law: f(y,z,w,x) = pi_y(y|x) pi_w(w|x) f(z,x).

    ``f_zx`` holds (Z, X) masses; ``pi_w_given_x`` and ``pi_y_given_x`` hold
    per-stratum conditional densities.  The representer of the assembled
    product law must be non-constant in W on at least one stratum, otherwise
    no perturbation can move the functional and the base is rejected.
    """

    support: SupportSpec
    f_zx: np.ndarray              # (k_z, k_x) masses
    pi_w_given_x: np.ndarray      # (k_x, k_w) densities
    pi_y_given_x: np.ndarray      # (k_x, k_y) densities
    functional: FunctionalSpec
    alpha_tilde: np.ndarray = field(init=False)   # (k_w, k_x)

    def __post_init__(self):
        s = self.support
        object.__setattr__(self, "f_zx", np.asarray(self.f_zx, dtype=float))
        object.__setattr__(self, "pi_w_given_x", np.asarray(self.pi_w_given_x, dtype=float))
        object.__setattr__(self, "pi_y_given_x", np.asarray(self.pi_y_given_x, dtype=float))
        if self.f_zx.shape != (s.k_z, s.k_x):
            raise ValueError(f"f_zx must have shape {(s.k_z, s.k_x)}")
        if self.pi_w_given_x.shape != (s.k_x, s.k_w):
            raise ValueError(f"pi_w_given_x must have shape {(s.k_x, s.k_w)}")
        if self.pi_y_given_x.shape != (s.k_x, s.k_y):
            raise ValueError(f"pi_y_given_x must have shape {(s.k_x, s.k_y)}")
        if np.any(self.f_zx <= 0.0) or abs(self.f_zx.sum() - 1.0) > 1e-10:
            raise ValueError("f_zx must be strictly positive masses summing to 1")
        if np.any(self.pi_w_given_x <= 0.0) or np.any(self.pi_y_given_x <= 0.0):
            raise ValueError("conditional densities must be strictly positive")
        w_norm = self.pi_w_given_x @ s.mu_w
        y_norm = self.pi_y_given_x @ s.mu_y
        if np.any(np.abs(w_norm - 1.0) > 1e-10):
            raise ValueError("pi_w_given_x rows must integrate to 1 against mu_w")
        if np.any(np.abs(y_norm - 1.0) > 1e-10):
            raise ValueError("pi_y_given_x rows must integrate to 1 against mu_y")

        mass_wx = self._wx_mass(eta_w=0.0)
        alpha = alpha_from_wx_mass(self.functional, s, mass_wx)
        object.__setattr__(self, "alpha_tilde", alpha)
        spread = alpha.max(axis=0) - alpha.min(axis=0)
        scale = max(1.0, float(np.abs(alpha).max()))
        if not np.any(spread > 1e-10 * scale):
            raise DegenerateBase(
                "base representer is constant in W on every stratum"
            )

    @property
    def f_x(self):
        return self.f_zx.sum(axis=0)

    def _wx_mass(self, eta_w: float):
        """(W, X) marginal mass of the law perturbed at scale eta_w."""
        s = self.support
        if eta_w == 0.0:
            dens = self.pi_w_given_x.T * (self.f_x / s.mu_x)[None, :]
            return dens * s.mu_w[:, None] * s.mu_x[None, :]
        mass = np.empty((s.k_w, s.k_x))
        for m in range(s.k_x):
            pi_w = self.pi_w_given_x[m]
            kernel = np.outer(np.ones(s.k_z), pi_w) + eta_w * np.eye(s.k_z)
            norm = 1.0 + eta_w * s.mu_w
            mass[:, m] = s.mu_w * ((self.f_zx[:, m] / norm) @ kernel)
        return mass

    def product_law(self) -> DiscreteLaw:
        """Assemble the base law tensor."""
        s = self.support
        mass = np.einsum(
            "mh,h,mj,j,lm->hljm",
            self.pi_y_given_x, s.mu_y,
            self.pi_w_given_x, s.mu_w,
            self.f_zx,
        )
        return DiscreteLaw(s, mass)

    def to_dict(self):
        return {
            "support": support_to_dict(self.support),
            "f_zx": self.f_zx.tolist(),
            "pi_w_given_x": self.pi_w_given_x.tolist(),
            "pi_y_given_x": self.pi_y_given_x.tolist(),
            "functional": self.functional.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            support=support_from_dict(d["support"]),
            f_zx=d["f_zx"],
            pi_w_given_x=d["pi_w_given_x"],
            pi_y_given_x=d["pi_y_given_x"],
            functional=FunctionalSpec.from_dict(d["functional"]),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def build_M(alpha_tilde_m, iota_y, mu_y) -> np.ndarray:
    """Minimum-Frobenius-norm matrix with M @ iota_y = alpha, M @ mu_y = 0.

    Row r must satisfy <row, iota_y> = alpha[r] and <row, mu_y> = 0; the
    per-row minimum-norm solution is alpha[r] * u1 where u1 is the element
    of span(iota_y, mu_y) dual to iota_y, so M is the rank-one outer product
    alpha u1^T.
    """
    alpha_tilde_m = np.asarray(alpha_tilde_m, dtype=float)
    iota_y = np.asarray(iota_y, dtype=float)
    mu_y = np.asarray(mu_y, dtype=float)
    basis = np.vstack([iota_y, mu_y])
    gram = basis @ basis.T
    scale = max(gram[0, 0] * gram[1, 1], 1e-300)
    if np.linalg.det(gram) <= 1e-12 * scale:
        raise CollinearSupport(
            "per-cell Y integrals are proportional to the Y cell measures"
        )
    u1 = basis.T @ np.linalg.solve(gram, np.array([1.0, 0.0]))
    M = np.outer(alpha_tilde_m, u1)
    alpha_scale = max(1.0, float(np.abs(alpha_tilde_m).max()))
    if (
        np.abs(M @ iota_y - alpha_tilde_m).max() > CONSTRAINT_TOL * alpha_scale
        or np.abs(M @ mu_y).max() > CONSTRAINT_TOL * alpha_scale
    ):
        raise CollinearSupport("constraint residuals exceed solver precision")
    return M


@dataclass(frozen=True, eq=False)
class PerturbationParams:
    """Kernel perturbation: scale eta_w, Y-to-W tilt ratio gamma, tilt matrices M.

    eta_w = 0 assembles the unperturbed product law; the explicit inverse and
    the closed-form functional need a nonzero scale.
    """

    eta_w: float
    gamma: float
    M: np.ndarray                 # (k_x, k_z, k_y)

    def __post_init__(self):
        object.__setattr__(self, "M", np.asarray(self.M, dtype=float))

    @property
    def eta_y(self):
        return self.gamma * self.eta_w


def default_params(base: BaseLawSpec, eta_w: float, gamma: float) -> PerturbationParams:
    """Params with the minimum-norm tilt matrix per stratum."""
    s = base.support
    M = np.stack([
        build_M(base.alpha_tilde[:, m], s.iota_y, s.mu_y) for m in range(s.k_x)
    ])
    return PerturbationParams(eta_w=eta_w, gamma=gamma, M=M)


def _w_kernels(base: BaseLawSpec, eta_w: float):
    """Per-stratum raw W|Z kernels (before row normalization) and normalizers."""
    s = base.support
    eye = np.eye(s.k_z)
    ones = np.ones(s.k_z)
    kernels = np.stack([
        np.outer(ones, base.pi_w_given_x[m]) + eta_w * eye for m in range(s.k_x)
    ])
    norm = 1.0 + eta_w * s.mu_w   # indexed by the Z row (k_z = k_w)
    return kernels, norm


def _y_kernels(base: BaseLawSpec, params: PerturbationParams):
    s = base.support
    ones = np.ones(s.k_z)
    return np.stack([
        np.outer(ones, base.pi_y_given_x[m]) + params.eta_y * params.M[m]
        for m in range(s.k_x)
    ])


def check_params(base: BaseLawSpec, params: PerturbationParams):
    """Names of violated perturbation constraints (empty when admissible)."""
    s = base.support
    failures = []
    if params.M.shape != (s.k_x, s.k_z, s.k_y):
        return [f"tilt matrix shape {params.M.shape} != {(s.k_x, s.k_z, s.k_y)}"]
    w_kernels, norm = _w_kernels(base, params.eta_w)
    if w_kernels.min() <= POSITIVITY_SLACK:
        failures.append("w_kernel_positive")
    if norm.min() <= POSITIVITY_SLACK:
        failures.append("w_normalizer_positive")
    update = params.eta_w + base.pi_w_given_x.sum(axis=1)
    if np.abs(update).min() <= POSITIVITY_SLACK:
        failures.append("rank_one_update_nonzero")
    y_kernels = _y_kernels(base, params)
    if y_kernels.min() <= POSITIVITY_SLACK:
        failures.append("y_kernel_positive")
    alpha_scale = max(1.0, float(np.abs(base.alpha_tilde).max()))
    for m in range(s.k_x):
        if (
            np.abs(params.M[m] @ s.iota_y - base.alpha_tilde[:, m]).max()
            > CONSTRAINT_TOL * alpha_scale
            or np.abs(params.M[m] @ s.mu_y).max() > CONSTRAINT_TOL * alpha_scale
        ):
            failures.append(f"tilt_constraints_stratum_{m}")
    return failures


def perturb_kernels(base: BaseLawSpec, params: PerturbationParams) -> DiscreteLaw:
    """Assemble the perturbed law; its (Z, X) marginal equals the base exactly."""
    failures = check_params(base, params)
    if failures:
        raise InvalidPerturbation(", ".join(failures))
    s = base.support
    w_kernels, norm = _w_kernels(base, params.eta_w)
    y_kernels = _y_kernels(base, params)
    w_normed = w_kernels / norm[None, :, None]
    mass = np.einsum(
        "mlh,h,mlj,j,lm->hljm",
        y_kernels, s.mu_y, w_normed, s.mu_w, base.f_zx,
    )
    return DiscreteLaw(s, mass)


def sherman_morrison_inverse(pi_w_m, eta_w: float) -> np.ndarray:
    """Exact inverse of outer(1, pi_w) + eta_w * I via the rank-one update formula."""
    pi_w_m = np.asarray(pi_w_m, dtype=float)
    if eta_w == 0.0:
        raise SingularPerturbation("eta_w = 0 has no inverse")
    total = float(pi_w_m.sum())
    if abs(eta_w + total) <= 1e-14 * max(1.0, abs(total)):
        raise SingularPerturbation("rank-one update factor vanished")
    k = pi_w_m.size
    coef = 1.0 / (eta_w * total + eta_w ** 2)
    return np.eye(k) / eta_w - coef * np.outer(np.ones(k), pi_w_m)


def _phi_closed(base: BaseLawSpec, eta_w: float, gamma: float) -> float:
    """Closed-form functional value of the perturbed law (no admissibility checks)."""
    s = base.support
    params = PerturbationParams(
        eta_w=eta_w, gamma=gamma,
        M=np.stack([
            build_M(base.alpha_tilde[:, m], s.iota_y, s.mu_y)
            for m in range(s.k_x)
        ]),
    )
    return _phi_closed_params(base, params)


def _phi_closed_params(base: BaseLawSpec, params: PerturbationParams) -> float:
    s = base.support
    w_kernels, norm = _w_kernels(base, params.eta_w)
    y_kernels = _y_kernels(base, params)
    alpha = alpha_from_wx_mass(
        base.functional, s, base._wx_mass(params.eta_w)
    )
    pi_zx = base.f_zx / (s.mu_z[:, None] * s.mu_x[None, :])
    total = 0.0
    for m in range(s.k_x):
        inv = sherman_morrison_inverse(base.pi_w_given_x[m], params.eta_w)
        g_dag = inv @ (norm * (y_kernels[m] @ s.iota_y))
        row = pi_zx[:, m] * s.mu_z
        total += s.mu_x[m] * float(
            row @ ((w_kernels[m] / norm[:, None]) @ (alpha[:, m] * g_dag))
        )
    return total


def closed_form_phi(base: BaseLawSpec, params: PerturbationParams) -> float:
    """Functional value via the explicit rank-one inverse.

    Independent of the generic solver path: the (W, X) marginal, the
    representer and the equation solution are all evaluated in closed form.
    """
    failures = check_params(base, params)
    if failures:
        raise InvalidPerturbation(", ".join(failures))
    return _phi_closed_params(base, params)


def limit_phi(base: BaseLawSpec, gamma: float) -> float:
    """Limit of the functional as eta_w -> 0 with eta_y = gamma * eta_w.

    Affine in gamma: the slope aggregates per-stratum weighted variances of
    the base representer, the intercept aggregates base moments.
    """
    slope, intercept = limit_phi_coefficients(base)
    return gamma * slope + intercept


def limit_phi_coefficients(base: BaseLawSpec):
    """(slope, intercept) of the affine-in-gamma limit value."""
    s = base.support
    f_x = base.f_x
    slope = 0.0
    intercept = 0.0
    for m in range(s.k_x):
        pi_w = base.pi_w_given_x[m]
        alpha = base.alpha_tilde[:, m]
        pw_sum = float(pi_w.sum())
        a_m = float(pi_w @ alpha**2 - (pi_w @ alpha) ** 2 / pw_sum)
        ey = float(base.pi_y_given_x[m] @ s.iota_y)
        bracket = (
            float(pi_w @ alpha)
            + pw_sum * float(pi_w @ (alpha * s.mu_w))
            - float(pi_w @ alpha) * float(pi_w @ s.mu_w)
        )
        b_m = bracket / pw_sum * ey
        slope += f_x[m] * a_m
        intercept += f_x[m] * b_m
    return slope, intercept


def gamma_for_target(base: BaseLawSpec, zeta: float) -> float:
    """gamma with limit_phi(base, gamma) = zeta; strictly increasing in zeta."""
    slope, intercept = limit_phi_coefficients(base)
    if slope <= 0.0:
        raise DegenerateBase("limit slope is not positive")
    return (zeta - intercept) / slope


@dataclass(frozen=True)
class SequenceStep:
    """One generated law with its certificates."""

    eta_w: float
    gamma: float
    law: DiscreteLaw
    phi_closed: float
    phi_verified: float
    tv_to_base: float
    g_residual: float
    q_residual: float

    def certificate(self):
        return {
            "eta_w": self.eta_w,
            "gamma": self.gamma,
            "phi_closed": self.phi_closed,
            "phi_verified": self.phi_verified,
            "tv_to_base": self.tv_to_base,
            "g_residual": self.g_residual,
            "q_residual": self.q_residual,
        }


@dataclass(frozen=True)
class AdversarialSequence:
    base: BaseLawSpec
    target_zeta: float
    steps: tuple

    @property
    def laws(self):
        return [s.law for s in self.steps]


def _exact_gamma(base: BaseLawSpec, eta_w: float, zeta: float) -> float:
    """gamma making the functional equal zeta at this eta_w.

    At fixed eta_w the closed form is affine in gamma (the representer of
    the perturbed law does not depend on the Y tilt), so two evaluations
    pin it down exactly.
    """
    p0 = _phi_closed(base, eta_w, 0.0)
    p1 = _phi_closed(base, eta_w, 1.0)
    slope = p1 - p0
    if slope == 0.0 or not np.isfinite(slope):
        raise DegenerateBase(f"functional insensitive to gamma at eta_w={eta_w}")
    return (zeta - p0) / slope


def _max_eta(base: BaseLawSpec, gamma: float, margin: float) -> float:
    """Largest positive eta_w keeping all constraints satisfied with a margin."""
    s = base.support
    bound = 1.0
    for m in range(s.k_x):
        M = build_M(base.alpha_tilde[:, m], s.iota_y, s.mu_y)
        tilt = gamma * M
        neg = tilt < 0.0
        if np.any(neg):
            pi = np.broadcast_to(base.pi_y_given_x[m][None, :], tilt.shape)
            bound = min(bound, float(np.min(pi[neg] / -tilt[neg])))
    return (1.0 - margin) * bound


def generate_sequence(
    base: BaseLawSpec,
    zeta: float,
    tv_targets,
    cert_tol: float = 1e-8,
    eta_floor: float = 1e-7,
    margin: float = 1e-3,
) -> AdversarialSequence:
    """Generate laws with functional value zeta at decreasing distance to the base.

    For each target, the perturbation scale eta_w is walked down a geometric
    grid until the law is admissible and close enough in total variation;
    at each candidate scale the tilt ratio gamma is solved exactly (the
    functional is affine in gamma), seeded from the eta -> 0 limit formula.
    Every emitted law is certified: closed-form and solver values of the
    functional agree with zeta within cert_tol and the law passes the model
    membership check.  Raises BracketingFailure when no admissible scale
    above eta_floor meets a target.
    """
    tv_targets = [float(t) for t in tv_targets]
    if any(t <= 0.0 for t in tv_targets) or any(
        b <= a for a, b in zip(tv_targets[1:], tv_targets[:-1])
    ):
        raise ValueError("tv_targets must be positive and strictly decreasing")

    base_law = base.product_law()
    gamma_seed = gamma_for_target(base, zeta)
    eta = _max_eta(base, gamma_seed, margin)
    steps = []
    prev_tv = float("inf")
    for t, tv_target in enumerate(tv_targets):
        while True:
            if eta < eta_floor:
                raise BracketingFailure(
                    t,
                    f"no admissible eta_w above {eta_floor:g} reaches "
                    f"tv <= {tv_target:g} (last tv {prev_tv:g})",
                )
            gamma = _exact_gamma(base, eta, zeta)
            params = default_params(base, eta, gamma)
            if check_params(base, params):
                eta *= 0.5
                continue
            law = perturb_kernels(base, params)
            tv = tv_distance(law, base_law)
            if tv > tv_target or tv >= prev_tv:
                eta *= 0.5
                continue
            phi_c = closed_form_phi(base, params)
            phi_v = evaluate_phi(law, base.functional, cert_tol)
            report = check_model_membership(law, base.functional, cert_tol)
            certified = (
                not isinstance(phi_v, NoSolution)
                and abs(phi_c - zeta) <= cert_tol
                and abs(phi_v - zeta) <= cert_tol
                and report.in_model
            )
            if not certified:
                # conditioning degrades as eta shrinks, so retrying smaller
                # scales cannot help
                raise BracketingFailure(
                    t,
                    f"certification failed at eta_w={eta:g}: "
                    f"phi_closed={phi_c!r}, phi_solver={phi_v!r}, "
                    f"in_model={report.in_model}",
                )
            steps.append(SequenceStep(
                eta_w=eta, gamma=gamma, law=law,
                phi_closed=phi_c, phi_verified=float(phi_v), tv_to_base=tv,
                g_residual=report.g_residual, q_residual=report.q_residual,
            ))
            prev_tv = tv
            eta *= 0.5
            break
    return AdversarialSequence(base=base, target_zeta=zeta, steps=tuple(steps))
