import io
import json

import numpy as np
import pytest

from conftest import make_random_path, modulus_bruteforce
from ldplab.paths import (
    CadlagPath,
    add_paths,
    jump_stats,
    oscillation,
    quadratic_variation,
    select_coords,
    skorokhod_modulus,
    stack_paths,
    stopping_times,
    sup_norm,
    truncation_split,
    variation,
)


def single_jump_path(t_jump, before, after, T=1.0):
    return CadlagPath(
        times=np.array([0.0, t_jump, T]),
        values=np.array([[before], [after], [after]]),
        left_values=np.array([[before], [before], [after]]),
        modes=("constant", "constant"),
    )


class TestConstruction:
    def test_rejects_jump_at_zero(self):
        with pytest.raises(ValueError):
            CadlagPath(
                np.array([0.0, 1.0]),
                np.array([[1.0], [1.0]]),
                np.array([[0.0], [1.0]]),
            )

    def test_rejects_nonincreasing_times(self):
        with pytest.raises(ValueError):
            CadlagPath(np.array([0.0, 0.5, 0.5]), np.zeros((3, 1)))

    def test_rejects_inconsistent_constant_segment(self):
        with pytest.raises(ValueError):
            CadlagPath(
                np.array([0.0, 1.0]),
                np.array([[0.0], [2.0]]),
                np.array([[0.0], [1.0]]),
                modes=("constant",),
            )

    def test_evaluation_modes(self):
        p = CadlagPath(
            np.array([0.0, 0.5, 1.0]),
            np.array([[1.0], [3.0], [3.0]]),
            np.array([[1.0], [2.0], [3.0]]),
            modes=("linear", "constant"),
        )
        assert p(0.25)[0] == pytest.approx(1.5)
        assert p.left_limit(0.5)[0] == 2.0
        assert p(0.5)[0] == 3.0
        assert p(0.75)[0] == 3.0
        assert p(1.0)[0] == 3.0

    def test_immutable(self):
        p = CadlagPath.line(1.0, 1.0)
        with pytest.raises(ValueError):
            p.values[0, 0] = 5.0


class TestSupNorm:
    def test_zero_path(self):
        assert sup_norm(CadlagPath.zero(1.0), 1.0) == 0.0

    def test_linear_path(self):
        assert sup_norm(CadlagPath.line(2.0, 1.0), 1.0) == pytest.approx(2.0)

    def test_jump_path_counts_both_limits(self):
        # jump at 0.5 from 0 to -3, constant after
        p = single_jump_path(0.5, 0.0, -3.0)
        assert sup_norm(p, 1.0) == pytest.approx(3.0)
        assert sup_norm(p, 0.4) == pytest.approx(0.0)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            sup_norm(CadlagPath.zero(1.0), 2.0)

    def test_dominated_by_variation_plus_start(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            p = make_random_path(rng, dim=int(rng.integers(1, 3)))
            t = float(rng.uniform(0.1, 1.0))
            lhs = np.linalg.norm(p(t) - p(0.0))
            assert lhs <= variation(p, t) + 1e-9


class TestJumpStats:
    def test_continuous_path(self):
        p = CadlagPath.line(1.0, 1.0)
        assert jump_stats(p, 1.0, 0.5) == (0.0, 0, 0.0)

    def test_enumeration(self):
        p = CadlagPath.pure_jump([0.2, 0.5, 0.9], [1.0, -0.3, 2.0], T=1.0)
        assert jump_stats(p, 1.0, 0.5) == (2.0, 2, 3.0)
        assert jump_stats(p, 0.4, 0.5) == (1.0, 1, 1.0)

    def test_sum_bounded_by_max_times_count(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            p = make_random_path(rng)
            mx, cnt, sm = jump_stats(p, 1.0, 0.3)
            assert sm <= mx * cnt + 1e-12


class TestVariation:
    def test_monotone_segment(self):
        assert variation(CadlagPath.line(1.0, 1.0), 1.0) == pytest.approx(1.0)

    def test_sawtooth(self):
        p = CadlagPath(
            np.array([0.0, 0.5, 1.0]),
            np.array([[0.0], [1.0], [0.0]]),
            np.array([[0.0], [1.0], [0.0]]),
        )
        assert variation(p, 1.0) == pytest.approx(2.0)

    def test_pure_jump(self):
        p = CadlagPath.pure_jump([0.3, 0.6], [1.0, -2.0], T=1.0)
        assert variation(p, 0.8) == pytest.approx(3.0)

    def test_partial_segment(self):
        assert variation(CadlagPath.line(2.0, 1.0), 0.25) == pytest.approx(0.5)


class TestQuadraticVariation:
    def test_pure_jump(self):
        p = CadlagPath.pure_jump([0.3, 0.6], [1.0, -2.0], T=1.0)
        assert quadratic_variation(p, 1.0) == pytest.approx(5.0)

    def test_single_linear_segment(self):
        assert quadratic_variation(CadlagPath.line(2.0, 1.0), 1.0) == pytest.approx(4.0)


class TestSkorokhodModulus:
    def test_single_jump_isolated(self):
        p = single_jump_path(0.6, 0.0, 1.0)
        assert skorokhod_modulus(p, 1.0, 0.3).value == pytest.approx(0.0, abs=1e-12)

    def test_constant_path(self):
        assert skorokhod_modulus(CadlagPath.zero(1.0), 1.0, 0.3).value == 0.0

    def test_identity_path(self):
        # brute force on a 0.01 grid gives 0.31 for rho=0.3
        val = skorokhod_modulus(CadlagPath.line(1.0, 1.0), 1.0, 0.3, refine=100).value
        assert 0.3 <= val <= 0.34

    def test_matches_bruteforce_on_grid_paths(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            p = make_random_path(rng, on_grid=0.01)
            rho = float(rng.choice([0.22, 0.3, 0.41]))
            got = skorokhod_modulus(p, 1.0, rho, refine=100).value
            want = modulus_bruteforce(p, 1.0, rho, grid_n=100)
            assert got == pytest.approx(want, abs=1e-12)

    def test_nonincreasing_toward_small_rho(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            p = make_random_path(rng)
            v_small = skorokhod_modulus(p, 1.0, 0.1).value
            v_big = skorokhod_modulus(p, 1.0, 0.4).value
            assert v_small <= v_big + 1e-12

    def test_bounded_by_total_oscillation(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            p = make_random_path(rng)
            v = skorokhod_modulus(p, 1.0, 0.3).value
            assert 0.0 <= v <= oscillation(p, 0.0, 1.0) + 1e-12

    def test_domain_error(self):
        with pytest.raises(ValueError):
            skorokhod_modulus(CadlagPath.zero(1.0), 1.0, 1.5)


class TestStoppingTimes:
    def test_linear_crossings(self):
        times = stopping_times(CadlagPath.line(1.0, 1.0), 0.25, N=1.0)
        assert np.allclose(times, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_constant_path(self):
        times = stopping_times(CadlagPath.zero(1.0), 0.25, N=1.0)
        assert np.allclose(times, [0.0, 1.0])

    def test_jump_triggers_left_limit(self):
        p = single_jump_path(0.5, 0.0, 1.0)
        times = stopping_times(p, 0.4, N=1.0)
        assert times[1] == pytest.approx(0.5)

    def test_oscillation_between_times_bounded(self):
        rng = np.random.default_rng(31)
        for _ in range(30):
            p = make_random_path(rng, jump_scale=0.5)
            a = float(rng.uniform(0.2, 0.8))
            ts = stopping_times(p, a, N=1.0)
            for s, t in zip(ts[:-1], ts[1:]):
                assert oscillation(p, s, t) <= 2 * a + 1e-9

    def test_threshold_sequence(self):
        times = stopping_times(CadlagPath.line(1.0, 1.0), [0.5, 0.25], N=1.0)
        assert np.allclose(times, [0.0, 0.5, 0.75, 1.0])


class TestTruncationSplit:
    def test_continuous_path(self):
        p = CadlagPath.line(1.0, 1.0)
        large, rem = truncation_split(p, 0.5)
        assert not large.has_jumps()
        assert np.allclose(large(1.0), 0.0)
        assert np.allclose(rem(1.0), p(1.0))

    def test_threshold_selects_large(self):
        p = CadlagPath.pure_jump([0.3, 0.7], [0.5, 2.0], T=1.0)
        large, rem = truncation_split(p, 1.0)
        jt, js = large.jumps()
        assert np.allclose(jt, [0.7]) and np.allclose(js, [[2.0]])
        _, rjs = rem.jumps()
        assert np.all(np.linalg.norm(rjs, axis=1) <= 1.0)

    def test_reassembles_exactly(self):
        rng = np.random.default_rng(17)
        for _ in range(30):
            p = make_random_path(rng, dim=int(rng.integers(1, 3)), jump_scale=2.0)
            large, rem = truncation_split(p, 0.8)
            for t in rng.uniform(0.0, 1.0, size=8):
                assert np.allclose(large(t) + rem(t), p(t), atol=1e-12)
                assert np.allclose(
                    large.left_limit(t) + rem.left_limit(t), p.left_limit(t), atol=1e-12
                )


class TestSerialization:
    def test_roundtrip(self):
        rng = np.random.default_rng(3)
        p = make_random_path(rng, dim=2)
        q = CadlagPath.from_json(p.to_json())
        assert np.array_equal(p.times, q.times)
        assert np.array_equal(p.values, q.values)
        assert np.array_equal(p.left_values, q.left_values)
        assert p.modes == q.modes

    def test_json_schema_fields(self):
        doc = json.loads(CadlagPath.zero(2.0).to_json())
        assert set(doc) == {"dim", "T", "breakpoints", "values", "left_values", "modes"}

    def test_csv_export(self):
        buf = io.StringIO()
        CadlagPath.line(2.0, 1.0).to_csv(buf, n_samples=4)
        lines = buf.getvalue().strip().split("\n")
        assert lines[0] == "t,x_1"
        assert len(lines) == 6
        t, x = map(float, lines[3].split(","))
        assert x == pytest.approx(2.0 * t)


class TestAlgebra:
    def test_add_paths(self):
        a = CadlagPath.line(1.0, 1.0)
        b = CadlagPath.pure_jump([0.5], [2.0], T=1.0)
        c = add_paths(a, b)
        assert c(0.25)[0] == pytest.approx(0.25)
        assert c(0.75)[0] == pytest.approx(2.75)
        assert c.left_limit(0.5)[0] == pytest.approx(0.5)

    def test_stack_and_select(self):
        a = CadlagPath.line(1.0, 1.0)
        b = CadlagPath.line(np.array([2.0, -1.0]), 1.0)
        s = stack_paths([a, b])
        assert s.dim == 3
        assert np.allclose(s(0.5), [0.5, 1.0, -0.5])
        back = select_coords(s, [1, 2])
        assert np.allclose(back(0.5), [1.0, -0.5])
