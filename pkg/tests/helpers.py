"""Shared law builders and generators for the test suite."""

import numpy as np

from weakdep import BaseLawSpec, DiscreteLaw, FunctionalSpec, SupportSpec


def late_support():
    return SupportSpec(
        mu_y=[1.0, 1.0], mu_z=[1.0, 1.0], mu_w=[1.0, 1.0], mu_x=[1.0],
        iota_y=[0.0, 1.0],
    )


def late_law(p_z1=0.5, p_w=(0.2, 0.8), y_base=0.3, y_gain=0.4):
    """Binary (Y,Z,W) law with P(W=1|Z=l) = p_w[l] and P(Y=1|W=j) = y_base + y_gain*j."""
    support = late_support()
    mass = np.zeros((2, 2, 2, 1))
    pz = (1.0 - p_z1, p_z1)
    for l in range(2):
        for j in range(2):
            pj = p_w[l] if j == 1 else 1.0 - p_w[l]
            py1 = y_base + y_gain * j
            for h in range(2):
                mass[h, l, j, 0] = pz[l] * pj * (py1 if h == 1 else 1.0 - py1)
    return DiscreteLaw(support, mass)


def wald_ratio(law):
    """(E[Y|Z=1] - E[Y|Z=0]) / (E[W|Z=1] - E[W|Z=0]) from exact law moments."""
    mass = law.mass
    ybar = law.support.y_cell_means
    ey = []
    ew = []
    for l in range(2):
        pz = mass[:, l, :, :].sum()
        ey.append(float(np.einsum("hjm,h->", mass[:, l, :, :], ybar)) / pz)
        ew.append(float(mass[:, l, 1, :].sum()) / pz)
    return (ey[1] - ey[0]) / (ew[1] - ew[0])


def binary_x_law(dep=0.5, py=0.5):
    """All-binary (Y,Z,W,X) law with W-Z dependence dep and outcome level py."""
    support = SupportSpec(
        mu_y=[1.0, 1.0], mu_z=[1.0, 1.0], mu_w=[1.0, 1.0], mu_x=[1.0, 1.0],
        iota_y=[0.0, 1.0],
    )
    mass = np.zeros((2, 2, 2, 2))
    for m in range(2):
        for l in range(2):
            pw1 = 0.5 + dep * (l - 0.5)
            for j in range(2):
                pj = pw1 if j == 1 else 1.0 - pw1
                py1 = py + 0.3 * (j - 0.5)
                for h in range(2):
                    mass[h, l, j, m] = 0.25 * pj * (py1 if h == 1 else 1.0 - py1)
    return DiscreteLaw(support, mass)


def random_support(rng, k_y, k_z, k_w, k_x, unit_zw=False):
    mu_y = rng.uniform(0.5, 2.0, size=k_y)
    if unit_zw:
        mu_z = np.ones(k_z)
        mu_w = np.ones(k_w)
    else:
        mu_z = rng.uniform(0.5, 2.0, size=k_z)
        mu_w = rng.uniform(0.5, 2.0, size=k_w)
    mu_x = rng.uniform(0.5, 2.0, size=k_x)
    # spread-out cell means keep iota_y away from collinearity with mu_y
    iota_y = mu_y * np.linspace(0.0, 1.0, k_y)
    return SupportSpec(mu_y=mu_y, mu_z=mu_z, mu_w=mu_w, mu_x=mu_x, iota_y=iota_y)


def random_law(rng, k_y=2, k_z=2, k_w=2, k_x=1, support=None, unit_zw=False):
    """Strictly positive random law on a random (or given) support."""
    if support is None:
        support = random_support(rng, k_y, k_z, k_w, k_x, unit_zw=unit_zw)
    raw = rng.gamma(2.0, size=support.shape) + 0.05
    return DiscreteLaw(support, raw / raw.sum())


def spec_for_support(rng, support):
    """A functional that structurally fits the support."""
    if support.k_w == 2 and support.k_z == 2 and support.k_x == 1 \
            and np.all(support.mu_w == 1.0) and np.all(support.mu_z == 1.0):
        return FunctionalSpec.late()
    if support.k_w == 2 and np.all(support.mu_w == 1.0):
        return FunctionalSpec.ate_iv()
    if support.k_x == 1:
        return FunctionalSpec.npiv(rng.uniform(-1.0, 1.0, size=support.k_w))
    return FunctionalSpec.generic(
        rng.uniform(-2.0, 2.0, size=(support.k_w, support.k_x))
    )


def acceptance_base():
    """Binary ratio-target base: f_Z(1)=0.5, uniform W and Y, cell means (0, 1)."""
    return BaseLawSpec(
        support=late_support(),
        f_zx=[[0.5], [0.5]],
        pi_w_given_x=[[0.5, 0.5]],
        pi_y_given_x=[[0.5, 0.5]],
        functional=FunctionalSpec.late(),
    )


def random_base(rng, k=2, k_y=2, k_x=1, tame=False):
    """Random product base whose representer is non-constant somewhere.

    tame draws weights from a narrow band, keeping representer magnitudes
    (and hence the functional's sensitivity to the perturbation scale) at
    desk scale.
    """
    if tame:
        support = random_support(rng, k_y, k, k, k_x, unit_zw=(k == 2))
        draw = lambda size: rng.uniform(0.5, 1.5, size=size)
    else:
        support = random_support(rng, k_y, k, k, k_x, unit_zw=(k == 2))
        draw = lambda size: rng.gamma(2.0, size=size) + 0.1
    f_zx = draw((k, k_x))
    f_zx /= f_zx.sum()
    pi_w = draw((k_x, k))
    pi_w /= (pi_w * support.mu_w[None, :]).sum(axis=1, keepdims=True)
    pi_y = draw((k_x, k_y))
    pi_y /= (pi_y * support.mu_y[None, :]).sum(axis=1, keepdims=True)
    if k == 2 and np.all(support.mu_w == 1.0):
        functional = FunctionalSpec.ate_iv() if k_x > 1 else FunctionalSpec.late()
    elif k_x == 1:
        functional = FunctionalSpec.npiv(rng.uniform(0.2, 1.0, size=k))
    else:
        alpha = rng.uniform(-2.0, 2.0, size=(k, k_x))
        alpha[0, :] += 1.0   # keep some stratum non-constant
        functional = FunctionalSpec.generic(alpha)
    return BaseLawSpec(
        support=support, f_zx=f_zx, pi_w_given_x=pi_w, pi_y_given_x=pi_y,
        functional=functional,
    )
