import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepchannel.core_math import ConfigError, DomainError, make_rng
from deepchannel.datasets import gen_linear_stats
from deepchannel.ode.analysis import analyze, classify_root
from deepchannel.ode.bridge import sgd_vs_ode
from deepchannel.ode.export import read_trajectory_csv, write_trajectory_csv
from deepchannel.ode.integrate import StepControl, Trajectory, integrate
from deepchannel.ode.runner import load_ode_run, run_ode, sweep, teacher_statistics
from deepchannel.ode.systems import (
    Component,
    OdeSystem,
    build_chain,
    build_chain_stdp,
    build_compressive,
    build_expansive,
    build_general_linear,
    build_nonlinear_power,
    random_state,
)

RK4 = StepControl(method="rk4", h=1e-3)


def scalar_system(rhs, name="scalar"):
    return OdeSystem(name, "test", (Component("x", ()),), {}, rhs)


class TestChain:
    def test_L2_is_the_three_variable_system(self, rng):
        sys = build_chain(2, "arbp", 0.7, 1.3)
        for a1, a2, c1 in rng.normal(size=(5, 3)):
            xi = 0.7 - 1.3 * a1 * a2
            np.testing.assert_allclose(sys.rhs([a1, a2, c1]), [c1 * xi, a1 * xi, a1 * xi], rtol=1e-14)

    @pytest.mark.parametrize("L, variant", [(2, "arbp"), (3, "asrbp"), (5, "arbp")])
    def test_zero_state_is_fixed(self, L, variant):
        sys = build_chain(L, variant, 1.0, 1.0)
        assert not np.any(sys.rhs(np.zeros(sys.size)))

    def test_L3_first_weight(self, rng):
        sys = build_chain(3, "arbp", 1.5, 0.5)
        a1, a2, a3, c1, c2 = x = rng.normal(size=5)
        assert sys.rhs(x)[0] == pytest.approx(c1 * c2 * (1.5 - 0.5 * a1 * a2 * a3), rel=1e-14)

    def test_L3_asrbp_equations(self, rng):
        sys = build_chain(3, "asrbp")
        a1, a2, a3, c1, c2 = x = rng.normal(size=5)
        xi = 1 - a1 * a2 * a3
        np.testing.assert_allclose(sys.rhs(x), [c1 * xi, c2 * a1 * xi, a1 * a2 * xi, a1 * xi, a1 * a2 * xi],
                                   rtol=1e-13)

    def test_batched_rhs_matches_rows(self, rng):
        sys = build_chain(4, "arbp")
        X = rng.normal(size=(6, sys.size))
        np.testing.assert_allclose(sys.rhs(X), np.stack([sys.rhs(x) for x in X]), rtol=1e-14)

    @pytest.mark.parametrize("kw", [dict(L=1), dict(L=3, variant="bp"), dict(L=2, beta=0.0)])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            build_chain(**kw)

    @pytest.mark.parametrize("L, variant", [(2, "arbp"), (3, "arbp"), (2, "asrbp"), (3, "asrbp"), (4, "asrbp")])
    def test_invariants_conserved(self, L, variant):
        sys = build_chain(L, variant)
        trajs = integrate(sys, random_state(sys, make_rng(L), 0.5, 4), 100.0, RK4)
        for tr in trajs:
            assert max(analyze(tr, sys).drifts.values()) <= 1e-9


class TestChainStdp:
    def test_zero_channel_freezes_first_weight(self):
        sys = build_chain_stdp()
        tr = integrate(sys, [0.3, -0.4, 0.0], 5.0, RK4)
        assert np.all(tr.x[:, 2] == 0.0) and np.all(tr.x[:, 0] == 0.3)

    def test_fixed_point_start_is_constant(self):
        sys = build_chain_stdp(2.0, 1.0)
        tr = integrate(sys, [4.0, 0.5, 0.3], 5.0, RK4)
        assert np.all(tr.x == tr.x[0])
        assert any("constant" in a for a in analyze(tr, sys).annotations)

    def test_sign_symmetry(self, rng):
        sys = build_chain_stdp()
        x0 = rng.uniform(-0.5, 0.5, 3)
        a, b = integrate(sys, x0, 5.0, RK4), integrate(sys, -x0, 5.0, RK4)
        np.testing.assert_array_equal(a.x, -b.x)


class TestWidth:
    def test_expansive_N1_is_the_chain(self, rng):
        x = rng.normal(size=3)
        np.testing.assert_array_equal(build_expansive(1, 0.6, 1.2).rhs(x), build_chain(2, "arbp", 0.6, 1.2).rhs(x))

    def test_expansive_symmetric_conserves_sb2_minus_p2(self, rng):
        sys = build_expansive(3)
        a = rng.uniform(-0.5, 0.5, 3)
        x0 = np.concatenate([a, a, a])
        rep = analyze(integrate(sys, x0, 20.0, RK4), sys)
        assert rep.drifts["Sb2-P2"] <= 1e-9

    def test_expansive_zero_r0_is_not_convergent(self, rng):
        sys = build_expansive(3)
        a = rng.uniform(-0.5, 0.5, 3)
        x0 = np.concatenate([a, rng.uniform(-0.5, 0.5, 3), -a])
        tr = integrate(sys, x0, 400.0, StepControl(h=1e-2))
        rep = analyze(tr, sys)
        p = sys.unpack(tr.final)
        assert rep.verdict == "stalled" and rep.residual == pytest.approx(1.0, abs=1e-9)
        assert not np.any(p["a"] + p["c"])
        assert any("R0" in a for a in rep.annotations)

    def test_compressive_N1_is_the_chain(self, rng):
        x = rng.normal(size=3)
        np.testing.assert_allclose(build_compressive(1, [[0.6]], [[1.2]]).rhs(x),
                                   build_chain(2, "arbp", 0.6, 1.2).rhs(x), rtol=1e-14)

    def test_compressive_zero_statistics_stationary(self, rng):
        sys = build_compressive(4, np.zeros((4, 4)), np.zeros((4, 4)))
        assert not np.any(sys.rhs(rng.normal(size=sys.size)))

    def test_compressive_tracking_drift(self):
        r = make_rng(6)
        sys = build_compressive(4, *teacher_statistics(4, 4, 1, r))
        rep = analyze(integrate(sys, random_state(sys, r), 100.0, StepControl("adaptive")), sys)
        assert rep.drifts["C-Bt"] <= 1e-10

    @pytest.mark.parametrize("variant", ["arbp", "asrbp"])
    def test_general_all_ones_is_the_chain(self, rng, variant):
        x = rng.normal(size=7)
        np.testing.assert_allclose(build_general_linear([1, 1, 1, 1, 1], variant, [[0.8]], [[1.1]]).rhs(x),
                                   build_chain(4, variant, 0.8, 1.1).rhs(x), rtol=1e-13)

    def test_general_bottleneck_is_compressive(self, rng):
        sti, sii = teacher_statistics(3, 3, 1, rng)
        x = rng.normal(size=9)
        np.testing.assert_allclose(build_general_linear([3, 1, 3], "arbp", sti, sii).rhs(x),
                                   build_compressive(3, sti, sii).rhs(x), rtol=1e-13)

    def test_general_k0_is_gradient_flow(self):
        from deepchannel.acceptance import _flow_gap

        from deepchannel.ode.runner import k0_state

        r = make_rng(3)
        dims = [4, 3, 2, 3]
        sti, sii = teacher_statistics(4, 3, 2, r)
        sys = build_general_linear(dims, "arbp", sti, sii)
        x0 = k0_state(sys, random_state(sys, r))
        weights_of = lambda p: [p[f"A{i}"] for i in range(1, 4)]
        assert _flow_gap(sys, x0, dims, weights_of, sti, sii, t=5.0, h=2e-3) <= 1e-8

    def test_state_cap(self):
        with pytest.raises(ConfigError):
            build_general_linear([100, 100, 100], "arbp", np.eye(100), np.eye(100))


class TestPower:
    def test_mu1_is_the_chain(self, rng):
        x = rng.normal(size=3)
        np.testing.assert_allclose(build_nonlinear_power(1.0, 0.5, 2.0).rhs(x),
                                   build_chain(2, "arbp", 0.5, 2.0).rhs(x), rtol=1e-14)

    def test_negative_base_with_fractional_mu(self):
        with pytest.raises(DomainError):
            build_nonlinear_power(0.5).rhs([-0.1, 0.2, 0.3])

    def test_mu2_small_positive_init_converges(self):
        sys = build_nonlinear_power(2.0)
        rep = analyze(integrate(sys, [0.2, 0.1, 0.3], 1000.0, StepControl("adaptive")), sys)
        assert rep.converged and rep.residual <= 1e-8


class TestIntegrate:
    def test_exponential_decay(self):
        tr = integrate(scalar_system(lambda x: -x), [1.0], 1.0, RK4)
        assert tr.final[0] == pytest.approx(np.exp(-1.0), abs=1e-8)

    def test_fourth_order(self):
        sys = scalar_system(lambda x: -x)
        errs = [abs(integrate(sys, [1.0], 1.0, StepControl(h=h, rhs_tol=0)).final[0] - np.exp(-1)) for h in (0.1, 0.05)]
        assert 14 <= errs[0] / errs[1] <= 18

    def test_zero_rhs_constant(self):
        tr = integrate(scalar_system(np.zeros_like), [2.5], 1.0, RK4)
        assert np.all(tr.x == 2.5)

    def test_blowup_marks_divergence(self):
        tr = integrate(scalar_system(lambda x: x**2), [1.0], 2.0, RK4)
        assert tr.status == "diverged" and 0.99 < tr.t_end < 1.01

    @pytest.mark.parametrize("method", ["rk4", "adaptive"])
    def test_fixed_point_halts(self, method):
        sys = build_chain(2)
        tr = integrate(sys, [1.0, 1.0, 0.5], 10.0, StepControl(method))
        assert tr.status == "halted"

    def test_batch_matches_single(self, rng):
        sys = build_chain(3, "arbp")
        X = random_state(sys, rng, 0.5, 3)
        ctl = StepControl(h=1e-2)
        for tr, x in zip(integrate(sys, X, 2.0, ctl), X):
            np.testing.assert_array_equal(tr.final, integrate(sys, x, 2.0, ctl).final)

    def test_rejects_bad_inputs(self):
        sys = build_chain(2)
        with pytest.raises(ConfigError):
            integrate(sys, np.zeros(4), 1.0)
        with pytest.raises(ConfigError):
            integrate(sys, np.zeros(3), 0.0)
        with pytest.raises(ConfigError):
            StepControl(method="euler")


def reference_rk4(x, h, n):
    """Plain scalar-loop RK4 for da1 = c1 xi, da2 = a1 xi, dc1 = a1 xi, alpha = beta = 1."""
    def f(a1, a2, c1):
        xi = 1.0 - a1 * a2
        return c1 * xi, a1 * xi, a1 * xi

    a1, a2, c1 = x
    for _ in range(n):
        k1 = f(a1, a2, c1)
        k2 = f(*(v + 0.5 * h * k for v, k in zip((a1, a2, c1), k1)))
        k3 = f(*(v + 0.5 * h * k for v, k in zip((a1, a2, c1), k2)))
        k4 = f(*(v + h * k for v, k in zip((a1, a2, c1), k3)))
        a1, a2, c1 = (v + h / 6 * (p + 2 * q + 2 * r + s) for v, p, q, r, s in zip((a1, a2, c1), k1, k2, k3, k4))
    return np.array([a1, a2, c1])


class TestAnalyze:
    def test_constant_trajectory(self):
        sys = build_chain(2)
        x = np.array([2.0, 0.5, 0.5])
        rep = analyze(Trajectory(np.linspace(0, 20, 21), np.tile(x, (21, 1)), 1.0, 4), sys)
        assert rep.converged and all(v == 0 for v in rep.drifts.values())

    def test_three_variable_chain_against_reference(self):
        sys = build_chain(2)
        ctl = StepControl(h=1e-2, rhs_tol=0.0)
        tr = integrate(sys, [0.1, 0.1, 0.1], 200.0, ctl)
        rep = analyze(tr, sys)
        assert rep.converged and rep.residual <= 1e-6 and rep.drifts["K1"] <= 1e-10
        np.testing.assert_allclose(tr.final, reference_rk4([0.1, 0.1, 0.1], 1e-2, 20000), atol=1e-10)
        assert rep.final_error == pytest.approx(rep.error_min, abs=1e-8)

    def test_diverged_verdict(self):
        from deepchannel.ode.systems import counterexample_state

        sys = build_chain(3, "asrbp")
        rep = analyze(integrate(sys, counterexample_state(0.5), 40.0, RK4), sys)
        assert rep.verdict == "diverged" and rep.drifts["K1"] <= 1e-9

    @pytest.mark.parametrize("f, x, pattern", [
        (lambda v: -v, 0.0, "+-"),
        (lambda v: v, 0.0, "-+"),
        (lambda v: v * v, 0.0, "++"),
        (lambda v: float("nan"), 0.0, None),
    ])
    def test_classify_root(self, f, x, pattern):
        assert classify_root(f, x) == pattern

    def test_converged_root_is_attracting(self):
        sys = build_chain(2)
        rep = analyze(integrate(sys, [0.3, 0.2, -0.1], 200.0, StepControl("adaptive")), sys)
        assert rep.converged and rep.stability == "attracting"


class TestBridge:
    def setup_method(self):
        self.data, self.stats = gen_linear_stats(50, "normal", 1.5, noise=0.2, seed=7)
        self.sys = build_chain(2, "arbp", self.stats.alpha, self.stats.beta)

    def test_small_rate_gap(self):
        assert sgd_vs_ode(self.sys, self.data, 1e-3, 5.0, [0.1, 0.2, 0.3]).gap <= 1e-2

    def test_gap_linear_in_rate(self):
        gaps = [sgd_vs_ode(self.sys, self.data, lr, 2.0, [0.1, 0.2, 0.3]).gap for lr in (1e-2, 5e-3, 2.5e-3)]
        assert all(1.7 <= gaps[i] / gaps[i + 1] <= 2.3 for i in range(2))

    def test_fixed_point_gap_zero(self):
        p = self.stats.alpha / self.stats.beta
        assert sgd_vs_ode(self.sys, self.data, 1e-2, 1.0, [p, 1.0, 0.4]).gap <= 1e-12

    def test_mismatched_statistics(self):
        with pytest.raises(ConfigError):
            sgd_vs_ode(build_chain(2), self.data, 1e-2, 1.0, [0.1, 0.2, 0.3])


ODE_TEXT = """
[ode]
system = chain
depth = 3
variant = asrbp
t_max = 200
seed = 4
"""


class TestRunner:
    def test_outputs_round_trip(self, tmp_path):
        res = run_ode(load_ode_run(ODE_TEXT, is_text=True), tmp_path)
        labels, t, x = read_trajectory_csv(tmp_path / "trajectory.csv")
        assert labels == ["a1", "a2", "a3", "c1", "c2"]
        np.testing.assert_array_equal(x, res.trajectory.x)
        np.testing.assert_array_equal(t, res.trajectory.t)
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["seed"] == 4 and rep["report"]["verdict"] == res.report.verdict
        assert load_ode_run(tmp_path / "config.resolved.ini").values == load_ode_run(ODE_TEXT, is_text=True).values

    def test_sweep_seeds_differ(self, tmp_path):
        results = sweep(load_ode_run(ODE_TEXT, is_text=True), 3, tmp_path)
        assert len({r.x0.tobytes() for r in results}) == 3
        rows = json.loads((tmp_path / "sweep.json").read_text())
        assert [r["index"] for r in rows] == [0, 1, 2] and (tmp_path / "seed-002" / "report.json").exists()

    @pytest.mark.parametrize("text, fragment", [
        ("[ode]\nsystem = lorenz\n", "system"),
        ("[ode]\nwidth = 3\n", "width"),
        ("[ode]\ninit = k1\n", "init"),
        ("[ode]\nmethod = euler\n", "euler"),
        ("[ode]\nt_max = -1\n", "t_max"),
    ])
    def test_schema_errors(self, text, fragment):
        with pytest.raises(ConfigError, match=fragment):
            load_ode_run(text, is_text=True)

    def test_k0_init_zeroes_tracking(self):
        res = run_ode(load_ode_run("[ode]\nsystem = general\ninit = k0\nt_max = 50\n", is_text=True))
        assert all(abs(v) < 1e-15 for name in res.report.tracking for v in res.report.constants[name])

    def test_csv_writer_labels_matrices(self, tmp_path):
        sys = build_compressive(2, np.eye(2), np.eye(2))
        tr = Trajectory(np.array([0.0]), np.zeros((1, 6)), None, 8)
        write_trajectory_csv(tr, sys, tmp_path / "t.csv")
        assert read_trajectory_csv(tmp_path / "t.csv")[0][:2] == ["A[0,0]", "A[0,1]"]


@given(st.integers(0, 2**31))
def test_teacher_statistics_realizable(seed):
    sti, sii = teacher_statistics(5, 4, 2, make_rng(seed))
    P = np.linalg.solve(sii.T, sti.T).T
    assert np.linalg.matrix_rank(P, tol=1e-8) == 2
