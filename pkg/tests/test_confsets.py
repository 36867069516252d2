"""Interval arithmetic, the normal quantile, and the three constructors."""

import math

import numpy as np
import pytest
import scipy.stats

from weakdep import DiscreteLaw, FunctionalSpec, SupportSpec, estimate, sample
from weakdep.confsets import (
    EMPTY_REGION,
    FULL_REGION,
    Interval,
    binary_union_estimand,
    binary_union_set,
    diameter,
    interval_add,
    interval_div,
    interval_mul,
    normal_quantile,
    region_from_intervals,
    score_invert_late,
    theta_grid,
    wald_ci,
)
from weakdep.laws import Dataset

from helpers import acceptance_base, binary_x_law, late_law, wald_ratio

INF = float("inf")


class TestNormalQuantile:
    def test_against_scipy_oracle(self):
        ps = np.concatenate([
            np.linspace(1e-12, 1 - 1e-12, 2001),
            [1e-9, 1e-6, 0.025, 0.5, 0.975, 1 - 1e-6, 1 - 1e-9],
        ])
        for p in ps:
            assert normal_quantile(float(p)) == pytest.approx(
                scipy.stats.norm.ppf(p), abs=1e-9
            )

    def test_symmetry(self):
        for p in (0.01, 0.2, 0.4):
            assert normal_quantile(p) == pytest.approx(-normal_quantile(1 - p),
                                                       abs=1e-12)

    def test_domain(self):
        with pytest.raises(ValueError):
            normal_quantile(0.0)
        with pytest.raises(ValueError):
            normal_quantile(1.0)


def _div_oracle(num, den, pieces, grid_points=300):
    """Dense-sampling check of the division image."""
    s_vals = np.linspace(num.lo, num.hi, grid_points)
    t_parts = []
    if den.lo < 0.0:
        t_parts.append(np.linspace(den.lo, min(den.hi, -1e-9), grid_points))
    if den.hi > 0.0:
        t_parts.append(np.linspace(max(den.lo, 1e-9), den.hi, grid_points))
    if not t_parts:
        assert pieces == ()
        return
    ratios = np.concatenate([
        (s_vals[:, None] / t[None, :]).ravel() for t in t_parts
    ])
    # every sampled ratio lies inside some piece
    for r in ratios:
        assert any(
            iv.lo - 1e-9 * max(1, abs(r)) <= r <= iv.hi + 1e-9 * max(1, abs(r))
            for iv in pieces
        )
    # every finite endpoint is attained by a sample
    for iv in pieces:
        for endpoint in (iv.lo, iv.hi):
            if math.isfinite(endpoint):
                gap = np.min(np.abs(ratios - endpoint))
                assert gap <= 1e-9 * max(1.0, abs(endpoint))


class TestIntervalArithmetic:
    def test_positive_denominator(self):
        (piece,) = interval_div(Interval(0.1, 0.2), Interval(0.2, 0.4))
        assert piece.lo == pytest.approx(0.25, abs=1e-15)
        assert piece.hi == pytest.approx(1.0, abs=1e-15)

    def test_zero_straddling_denominator(self):
        pieces = interval_div(Interval(1.0, 2.0), Interval(-1.0, 1.0))
        assert len(pieces) == 2
        assert pieces[0].lo == -INF and pieces[0].hi == -1.0
        assert pieces[1].lo == 1.0 and pieces[1].hi == INF

    def test_zero_numerator(self):
        (piece,) = interval_div(Interval(0.0, 0.0), Interval(1.0, 2.0))
        assert (piece.lo, piece.hi) == (0.0, 0.0)

    def test_degenerate_denominator_empty(self):
        assert interval_div(Interval(1.0, 2.0), Interval(0.0, 0.0)) == ()

    def test_full_line_when_numerator_reaches_zero(self):
        (piece,) = interval_div(Interval(-1.0, 2.0), Interval(-0.5, 0.5))
        assert (piece.lo, piece.hi) == (-INF, INF)

    def test_zero_endpoint_denominator(self):
        (piece,) = interval_div(Interval(1.0, 2.0), Interval(0.0, 0.5))
        assert piece.lo == pytest.approx(2.0) and piece.hi == INF
        (piece,) = interval_div(Interval(1.0, 2.0), Interval(-0.5, 0.0))
        assert piece.lo == -INF and piece.hi == pytest.approx(-2.0)

    def test_dense_oracle_random_boxes(self):
        rng = np.random.default_rng(61)
        endpoints = np.array([-2.0, -1.0, -0.5, 0.0, 0.1, 0.4, 1.0, 3.0])
        for _ in range(100):
            a, b = sorted(rng.choice(endpoints, 2, replace=True))
            c, d = sorted(rng.choice(endpoints, 2, replace=True))
            num, den = Interval(a, b), Interval(c, d)
            _div_oracle(num, den, interval_div(num, den))

    def test_mul_is_exact_hull(self):
        rng = np.random.default_rng(62)
        for _ in range(50):
            a = Interval(*sorted(rng.uniform(-2, 2, 2)))
            b = Interval(*sorted(rng.uniform(-2, 2, 2)))
            piece = interval_mul(a, b)
            s = np.linspace(a.lo, a.hi, 101)
            t = np.linspace(b.lo, b.hi, 101)
            prods = np.outer(s, t)
            assert prods.min() >= piece.lo - 1e-12
            assert prods.max() <= piece.hi + 1e-12
            assert abs(prods.min() - piece.lo) < 1e-9
            assert abs(prods.max() - piece.hi) < 1e-9

    def test_add_shifts_pieces(self):
        pieces = (Interval(-INF, -1.0), Interval(1.0, INF))
        shifted = interval_add(pieces, Interval(0.5, 0.5))
        assert shifted[0].hi == -0.5 and shifted[1].lo == 1.5


class TestRegions:
    def test_merge_and_clip(self):
        region = region_from_intervals(
            [Interval(0.0, 1.0), Interval(0.5, 2.0), Interval(3.0, 4.0)],
            Interval(-10.0, 10.0),
        )
        assert region.kind == "union"
        assert [(iv.lo, iv.hi) for iv in region.intervals] == [(0.0, 2.0), (3.0, 4.0)]

    def test_collapse_to_full(self):
        region = region_from_intervals([Interval(-INF, INF)], Interval(-5.0, 5.0))
        assert region.is_full

    def test_empty(self):
        region = region_from_intervals([Interval(2.0, 3.0)], Interval(-1.0, 1.0))
        assert region is EMPTY_REGION or region.kind == "empty"

    def test_diameter_cases(self):
        s = Interval(0.0, 1.0)
        assert diameter(region_from_intervals([Interval(0.2, 0.5)], s), s) == \
            pytest.approx(0.3)
        rays = region_from_intervals(
            [Interval(-INF, -1.0), Interval(1.0, INF)], Interval(-INF, INF)
        )
        assert diameter(rays, Interval(-INF, INF)) == INF
        assert diameter(FULL_REGION, s) == 1.0
        assert diameter(EMPTY_REGION, s) == 0.0

    def test_region_json(self):
        region = region_from_intervals([Interval(0.0, 2.0)], Interval(-5.0, 5.0))
        d = region.to_dict(Interval(-5.0, 5.0))
        assert d == {"kind": "union", "intervals": [[0.0, 2.0]], "diameter": 2.0}


class TestWaldCI:
    def test_constant_influence_zero_width(self):
        # Y = W = Z deterministically: every influence value equals the contrast
        support = SupportSpec(
            mu_y=[1, 1], mu_z=[1, 1], mu_w=[1, 1], mu_x=[1], iota_y=[0.0, 1.0]
        )
        mass = np.zeros(support.shape)
        mass[0, 0, 0, 0] = 0.5
        mass[1, 1, 1, 0] = 0.5
        ds = sample(DiscreteLaw(support, mass), 200, seed=1)
        res = wald_ci(ds, FunctionalSpec.late(), support, 0.05)
        assert not res.degenerate
        (iv,) = res.region.intervals
        assert iv.lo == pytest.approx(res.estimate, abs=1e-12)
        assert iv.hi == pytest.approx(res.estimate, abs=1e-12)
        assert res.estimate == pytest.approx(1.0, abs=1e-12)

    def test_point_estimate_is_sample_wald_ratio(self):
        law = late_law()
        for seed in range(5):
            ds = sample(law, 400, seed=seed)
            res = wald_ci(ds, FunctionalSpec.late(), law.support, 0.05)
            emp = estimate(ds, law.support)
            assert res.estimate == pytest.approx(wald_ratio(emp), abs=1e-10)

    def test_zero_sample_dependence_degenerates(self):
        # empirical cov(W, Z) exactly zero, response varying with Z
        ds = Dataset(
            y=np.array([0.0, 0.0, 1.0, 1.0]),
            z=np.array([0, 0, 1, 1]),
            w=np.array([0, 1, 0, 1]),
            x=np.zeros(4, int),
        )
        support = late_law().support
        res = wald_ci(ds, FunctionalSpec.late(), support, 0.05)
        assert res.degenerate
        assert res.region.is_full

    def test_coverage_near_nominal(self):
        law = late_law()
        phi = wald_ratio(law)
        covered = 0
        reps = 300
        for r in range(reps):
            ss = np.random.SeedSequence(entropy=2, spawn_key=(0, r))
            ds = sample(law, 2000, ss)
            res = wald_ci(ds, FunctionalSpec.late(), law.support, 0.05)
            covered += res.region.contains(phi)
        assert 0.92 <= covered / reps <= 0.98

    def test_cross_fit_runs(self):
        law = late_law()
        ds = sample(law, 1000, seed=9)
        res = wald_ci(ds, FunctionalSpec.late(), law.support, 0.05, cross_fit=True)
        assert not res.degenerate
        assert res.region.contains(res.estimate)


class TestScoreInversion:
    def test_wald_estimate_always_accepted(self):
        law = late_law()
        s = Interval(-2.0, 2.0)
        grid = theta_grid(s)
        for seed in range(5):
            ds = sample(law, 500, seed=seed)
            emp = estimate(ds, law.support)
            theta_hat = wald_ratio(emp)
            res = score_invert_late(ds, 0.05, grid, s)
            assert res.region.contains(theta_hat)

    def test_affine_rescaling_of_y(self):
        law = late_law()
        a, b = 2.5, -1.0
        s1 = Interval(-2.0, 2.0)
        s2 = Interval(-5.0, 5.0)
        grid1 = theta_grid(s1, 801)
        grid2 = a * grid1
        ds = sample(law, 800, seed=11)
        scaled = Dataset(y=a * ds.y + b, z=ds.z, w=ds.w, x=ds.x)
        r1 = score_invert_late(ds, 0.05, grid1, s1)
        r2 = score_invert_late(scaled, 0.05, grid2, s2)
        assert len(r1.region.intervals) == len(r2.region.intervals)
        for iv1, iv2 in zip(r1.region.intervals, r2.region.intervals):
            assert iv2.lo == pytest.approx(a * iv1.lo, abs=1e-9)
            assert iv2.hi == pytest.approx(a * iv1.hi, abs=1e-9)

    def test_one_arm_missing_full_range(self):
        ds = Dataset(
            y=np.array([0.0, 1.0]), z=np.array([1, 1]), w=np.array([0, 1]),
            x=np.zeros(2, int),
        )
        res = score_invert_late(ds, 0.05, theta_grid(Interval(-1, 1)))
        assert res.degenerate and res.region.is_full

    def test_weak_dependence_spans_range(self):
        base = acceptance_base()
        from weakdep import default_params, perturb_kernels

        weak = perturb_kernels(base, default_params(base, 1e-4, 1.25))
        s = Interval(-20.0, 20.0)
        grid = theta_grid(s)
        wide = 0
        for seed in range(20):
            ds = sample(weak, 2000, seed=seed)
            res = score_invert_late(ds, 0.05, grid, s)
            wide += diameter(res.region, s) >= 0.9 * (s.hi - s.lo)
        assert wide >= 18


class TestBinaryUnionSet:
    def test_component_arithmetic_example(self):
        pieces = interval_div(Interval(0.1, 0.2), Interval(0.2, 0.4))
        shifted = interval_add(pieces, Interval(0.5, 0.5))
        region = region_from_intervals(shifted, Interval(-5.0, 5.0))
        (iv,) = region.intervals
        assert iv.lo == pytest.approx(0.75, abs=1e-12)
        assert iv.hi == pytest.approx(1.5, abs=1e-12)

    def test_zero_straddling_denominator_full_range(self):
        # independent W and Z: the denominator interval straddles zero
        rng = np.random.default_rng(63)
        n = 2000
        ds = Dataset(
            y=rng.integers(0, 2, n).astype(float),
            z=rng.integers(0, 2, n),
            w=rng.integers(0, 2, n),
            x=np.zeros(n, int),
        )
        res = binary_union_set(ds, 0.05, Interval(-10.0, 10.0))
        assert res.region.is_full
        assert "straddles zero" in res.message

    def test_covers_estimand_with_x(self):
        law = binary_x_law(dep=0.5, py=0.5)
        phi = binary_union_estimand(law)
        s = Interval(-5.0, 5.0)
        covered = 0
        for seed in range(40):
            ds = sample(law, 1500, seed=seed)
            res = binary_union_set(ds, 0.05, s)
            covered += res.region.contains(phi)
        assert covered >= 38

    def test_split_variant_also_covers(self):
        law = binary_x_law(dep=0.6, py=0.4)
        phi = binary_union_estimand(law)
        s = Interval(-5.0, 5.0)
        covered = 0
        for seed in range(30):
            ds = sample(law, 1500, seed=seed)
            res = binary_union_set(ds, 0.05, s, variant="split_w")
            covered += res.region.contains(phi)
        assert covered >= 28

    def test_empty_stratum_full_range(self):
        ds = Dataset(
            y=np.array([0.0, 1.0, 1.0, 0.0]),
            z=np.array([1, 1, 1, 1]),          # Z = 0 unobserved
            w=np.array([0, 1, 0, 1]),
            x=np.array([0, 1, 0, 1]),
        )
        res = binary_union_set(ds, 0.05, Interval(-5.0, 5.0))
        assert res.degenerate and res.region.is_full

    def test_contains_plug_in_when_denominator_clear(self):
        law = binary_x_law(dep=0.7, py=0.5)
        s = Interval(-5.0, 5.0)
        for seed in range(20):
            ds = sample(law, 2000, seed=seed)
            res = binary_union_set(ds, 0.05, s)
            if res.degenerate or "straddles" in res.message:
                continue
            emp = estimate(ds, law.support)
            plug_in = binary_union_estimand(emp)
            assert res.region.contains(plug_in)

    def test_estimand_matches_generic_representer(self):
        from weakdep import evaluate_phi
        from weakdep.laws import marginal

        for dep, py in ((0.3, 0.4), (0.6, 0.6)):
            law = binary_x_law(dep, py)
            mass_w = marginal(law, ("W",))
            mass_wx = marginal(law, ("W", "X"))
            alpha = np.zeros((2, 2))
            alpha[:, 1] = mass_w / mass_wx[:, 1]
            phi = evaluate_phi(law, FunctionalSpec.generic(alpha))
            assert binary_union_estimand(law) == pytest.approx(phi, abs=1e-10)


class TestLevelMonotonicity:
    def test_regions_nest_in_alpha(self):
        law = late_law()
        law_x = binary_x_law(0.5, 0.5)
        s = Interval(-5.0, 5.0)
        grid = theta_grid(s, 2001)
        for seed in range(10):
            ds = sample(law, 800, seed=seed)
            ds_x = sample(law_x, 800, seed=seed)
            for alpha_pair in ((0.01, 0.05), (0.05, 0.2)):
                a1, a2 = alpha_pair
                w1 = wald_ci(ds, FunctionalSpec.late(), law.support, a1, s=s)
                w2 = wald_ci(ds, FunctionalSpec.late(), law.support, a2, s=s)
                assert _region_contains(w1.region, w2.region, s)
                r1 = score_invert_late(ds, a1, grid, s)
                r2 = score_invert_late(ds, a2, grid, s)
                assert _region_contains(r1.region, r2.region, s)
                u1 = binary_union_set(ds_x, a1, s)
                u2 = binary_union_set(ds_x, a2, s)
                assert _region_contains(u1.region, u2.region, s)


def _region_contains(outer, inner, s, probes=2000):
    thetas = np.linspace(s.lo, s.hi, probes)
    for theta in thetas:
        if inner.contains(theta) and not outer.contains(theta):
            return False
    return True
