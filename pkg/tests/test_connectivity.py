import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from basin_atlas.connectivity import (
    LossCurve,
    auc,
    barrier_height,
    convexity_gap,
    curve_from_csv,
    curve_to_csv,
    epsilon_basin_check_fn,
    eval_path_fn,
    grid_alphas,
)
from basin_atlas.params import free_vector


def curve(losses, alphas=None):
    losses = np.asarray(losses, dtype=np.float64)
    if alphas is None:
        alphas = grid_alphas(len(losses))
    return LossCurve(np.asarray(alphas), losses)


# ---- independent oracles (kept separate from the implementation) ----

def oracle_bh(alphas, losses):
    l0, l1 = losses[0], losses[-1]
    return max(
        0.0,
        max(l - (a * l1 + (1 - a) * l0) for a, l in zip(alphas, losses)),
    )


def oracle_cg(alphas, losses):
    best = 0.0
    n = len(losses)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(i + 1, j):
                chord = np.interp(alphas[k], [alphas[i], alphas[j]], [losses[i], losses[j]])
                best = max(best, losses[k] - chord)
    return best


def oracle_auc(alphas, losses):
    shifted = [l - min(losses) for l in losses]
    total = 0.0
    for i in range(len(losses) - 1):
        total += (alphas[i + 1] - alphas[i]) * (shifted[i] + shifted[i + 1]) / 2
    return total


class TestBarrierHeight:
    def test_below_chord(self):
        assert barrier_height(curve([1.0, 0.0, 1.0])) == 0.0

    def test_simple_bump(self):
        assert barrier_height(curve([0.0, 1.0, 0.0])) == 1.0

    def test_convex_sequence(self):
        assert barrier_height(curve([4.0, 1.0, 0.0, 1.0, 4.0])) == 0.0

    def test_reversal_invariant(self, rng):
        for _ in range(30):
            c = curve(rng.uniform(0, 2, size=11))
            assert barrier_height(c) == pytest.approx(barrier_height(c.reversed()), abs=1e-12)


class TestConvexityGap:
    def test_convex_sequence(self):
        assert convexity_gap(curve([4.0, 1.0, 0.0, 1.0, 4.0])) == 0.0

    def test_whole_segment_barrier(self):
        assert convexity_gap(curve([0.0, 1.0, 0.0])) == 1.0

    def test_spec_subsegment_case(self):
        # brute force over all (i, j, k): segment 2->4 with interior 3 gives 0.3
        c = curve([0.0, 0.2, 0.1, 0.5, 0.3])
        assert convexity_gap(c) == pytest.approx(0.3, abs=1e-12)
        assert oracle_cg(c.alphas, c.losses) == pytest.approx(0.3, abs=1e-12)

    def test_bh_le_cg_property(self, rng):
        for _ in range(100):
            c = curve(rng.uniform(0, 3, size=rng.integers(2, 13)))
            assert barrier_height(c) <= convexity_gap(c) + 1e-15

    def test_cg_zero_iff_convex(self, rng):
        for _ in range(50):
            n = 9
            c = curve(rng.uniform(0, 2, size=n))
            second_diffs = np.diff(c.losses, 2)
            if convexity_gap(c) == 0.0:
                assert np.all(second_diffs >= -1e-12)
            else:
                assert np.any(second_diffs < 0)

    def test_reversal_invariant(self, rng):
        for _ in range(30):
            c = curve(rng.uniform(0, 2, size=11))
            assert convexity_gap(c) == pytest.approx(convexity_gap(c.reversed()), abs=1e-12)

    def test_refinement_monotonicity_exact(self, rng):
        # shared grid points are bitwise identical, so CG can only grow
        f = lambda a: np.sin(7 * a) ** 2 + 0.3 * a
        coarse = curve([f(i / 10) for i in range(11)], [i / 10 for i in range(11)])
        fine = curve([f(i / 20) for i in range(21)], [i / 20 for i in range(21)])
        assert convexity_gap(fine) >= convexity_gap(coarse)


class TestOracleAgreement:
    @given(st.integers(0, 10_000))
    @settings(max_examples=80, deadline=None)
    def test_matches_brute_force(self, seed):
        r = np.random.default_rng(seed)
        n = int(r.integers(2, 12))
        c = curve(r.uniform(0, 5, size=n))
        assert barrier_height(c) == pytest.approx(oracle_bh(c.alphas, c.losses), abs=1e-12)
        assert convexity_gap(c) == pytest.approx(oracle_cg(c.alphas, c.losses), abs=1e-12)
        assert auc(c) == pytest.approx(oracle_auc(c.alphas, c.losses), abs=1e-12)


class TestAuc:
    def test_constant_curve(self):
        assert auc(curve([0.7, 0.7, 0.7])) == 0.0

    def test_tent(self):
        assert auc(curve([1.0, 0.0, 1.0])) == pytest.approx(0.5, abs=1e-12)

    def test_scaling_linearity(self, rng):
        c = curve(rng.uniform(0, 2, size=7))
        scaled = curve(3.0 * c.losses)
        assert auc(scaled) == pytest.approx(3.0 * auc(c), rel=1e-12)


class TestPathEvaluation:
    def test_endpoint_identity(self, rng):
        a, b = free_vector(rng.normal(size=6)), free_vector(rng.normal(size=6))
        loss = lambda p: float(np.sum(p.values**2))
        c = eval_path_fn(a, b, 11, loss)
        assert c.losses[0] == loss(b)
        assert c.losses[-1] == loss(a)

    def test_same_endpoints_constant(self, rng):
        a = free_vector(rng.normal(size=6))
        loss = lambda p: float(np.sum(p.values**2))
        c = eval_path_fn(a, a, 11, loss)
        assert np.allclose(c.losses, loss(a), atol=1e-12)

    def test_reversal_reverses_losses_exactly(self, rng):
        a, b = free_vector(rng.normal(size=6)), free_vector(rng.normal(size=6))
        loss = lambda p: float(np.sum(p.values**2) + np.sum(p.values**3))
        fwd = eval_path_fn(a, b, 11, loss)
        rev = eval_path_fn(b, a, 11, loss)
        assert np.array_equal(fwd.losses, rev.losses[::-1])

    def test_manifest_mismatch(self, rng):
        with pytest.raises(ValueError):
            eval_path_fn(free_vector(rng.normal(size=3)), free_vector(rng.normal(size=4)),
                         5, lambda p: 0.0)


class TestCurveValidation:
    def test_alphas_must_span(self):
        with pytest.raises(ValueError):
            LossCurve(np.array([0.0, 0.5]), np.array([1.0, 1.0]))

    def test_nonfinite_losses(self):
        with pytest.raises(ValueError):
            LossCurve(np.array([0.0, 1.0]), np.array([1.0, np.inf]))

    def test_csv_round_trip(self, rng):
        c = LossCurve(grid_alphas(7), rng.uniform(size=7), rng.uniform(size=7))
        back = curve_from_csv(curve_to_csv(c))
        assert np.array_equal(back.alphas, c.alphas)
        assert np.array_equal(back.losses, c.losses)
        assert np.array_equal(back.accuracies, c.accuracies)


class TestBasinCheck:
    def test_single_model_passes(self):
        report = epsilon_basin_check_fn([free_vector([1.0, 2.0])],
                                        lambda p: float(np.sum(p.values**2)), 1e-9, 10, 0)
        assert report.passed
        assert report.max_violation == 0.0

    def test_convex_loss_passes(self, rng):
        points = [free_vector(rng.normal(size=2)) for _ in range(10)]
        loss = lambda p: float(np.sum(p.values**2))
        report = epsilon_basin_check_fn(points, loss, 1e-9, 256, 0)
        assert report.passed
        assert report.pairwise_cg_max is not None
        assert report.pairwise_cg_max <= 1e-9
        assert report.theorem_counterexamples == ()

    def test_double_well_fails(self):
        # 1-D double well with the two minima as models: the midpoint of the
        # pair grid hits the hump exactly, so the violation is 1
        points = [free_vector([-1.0]), free_vector([1.0])]
        loss = lambda p: float((p.values[0] ** 2 - 1.0) ** 2)
        report = epsilon_basin_check_fn(points, loss, 0.5, 128, 0)
        assert not report.passed
        assert report.max_violation == pytest.approx(1.0, abs=1e-9)
        report_tight = epsilon_basin_check_fn(points, loss, 0.999, 128, 0)
        assert not report_tight.passed

    def test_pass_flag_matches_violation(self, rng):
        points = [free_vector(rng.normal(size=2)) for _ in range(4)]
        loss = lambda p: float(np.abs(p.values).max())
        report = epsilon_basin_check_fn(points, loss, 0.05, 64, 1)
        assert report.passed == (report.max_violation <= 0.05)
