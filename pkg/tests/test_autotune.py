"""Window tuning: fitness, compass search behavior, and both providers."""

from dataclasses import replace

import numpy as np
import pytest

import qdarray.autotune as at
from qdarray import neuralnet as nn
from qdarray.autotune import (
    FitnessTrace,
    SimulatorProvider,
    StackProvider,
    TuneOptions,
    VoltageWindow,
    export_trace_csv,
    fitness,
    tune,
)
from qdarray.dataset import MapStack
from qdarray.device import five_gate_device
from qdarray.errors import ValidationError


class SteerableProvider:
    """Encodes the window center into the map so a stub predictor can read it."""

    bounds = ((0.0, 400.0), (0.0, 400.0))

    def __init__(self):
        self.calls = 0

    def current_map(self, window):
        self.calls += 1
        m = np.zeros((window.resolution, window.resolution))
        m[0, 0], m[0, 1] = window.center
        return m


def steering_predictor(target, scale=400.0):
    """p_SD rises to 1 as the center approaches `target`."""

    def predict(cnn, current):
        c = np.array([current[0, 0], current[0, 1]])
        p_sd = max(0.0, 1.0 - np.linalg.norm(c - target) / scale)
        rest = (1.0 - p_sd) / 3.0
        return np.array([rest, rest, p_sd, rest])

    return predict


def constant_predictor(cnn, current):
    return np.full(4, 0.25)


P0_SD = (0.0, 0.0, 1.0, 0.0)


class TestFitness:
    def test_equal_vectors(self):
        p = np.array([0.1, 0.2, 0.3, 0.4])
        assert fitness(p, p) == 0.0

    def test_orthogonal_one_hots(self):
        assert fitness((0, 0, 1, 0), (0, 0, 0, 1)) == pytest.approx(np.sqrt(2))

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = rng.dirichlet(np.ones(4))
            q = rng.dirichlet(np.ones(4))
            assert fitness(p, q) == pytest.approx(fitness(q, p), rel=1e-12)

    def test_rejects_off_simplex(self):
        with pytest.raises(ValidationError, match="simplex"):
            fitness((0.5, 0.5, 0.5, 0.5), (0, 0, 1, 0))
        with pytest.raises(ValidationError, match="simplex"):
            fitness((0, 0, 1, 0), (0.2, -0.2, 0.5, 0.5))

    def test_pluggable_norm(self):
        p, q = np.array([0.5, 0.5, 0, 0]), np.array([0, 0, 0.5, 0.5])
        l1 = fitness(p, q, norm=lambda d: np.abs(d).sum())
        assert l1 == pytest.approx(2.0)


class TestWindow:
    def test_scalar_span_broadcast(self):
        w = VoltageWindow(center=(10.0, 20.0), span=30.0)
        assert w.span == (30.0, 30.0)

    def test_dimension_bounds(self):
        with pytest.raises(ValidationError):
            VoltageWindow(center=(1.0,))
        with pytest.raises(ValidationError):
            VoltageWindow(center=(1.0, 2.0, 3.0, 4.0))

    def test_positive_span(self):
        with pytest.raises(ValidationError):
            VoltageWindow(center=(1.0, 2.0), span=(0.0, 40.0))

    def test_resolution_floor(self):
        with pytest.raises(ValidationError):
            VoltageWindow(center=(1.0, 2.0), resolution=1)

    def test_options_validation(self):
        with pytest.raises(ValidationError):
            TuneOptions(stagnation=0)
        with pytest.raises(ValidationError):
            TuneOptions(shrink=1.0)


class TestTune:
    def test_converges_toward_target(self, monkeypatch):
        monkeypatch.setattr(at, "predict_probability_vector",
                            steering_predictor(np.array([150.0, 250.0])))
        provider = SteerableProvider()
        start = VoltageWindow(center=(350.0, 80.0), span=(40.0, 40.0))
        trace = tune(provider, None, start, P0_SD, budget=100)
        assert trace.status == "converged"
        assert trace.entries[-1].delta <= 0.35
        assert trace.best.delta <= trace.entries[0].delta

    def test_immediate_convergence_single_eval(self, monkeypatch):
        monkeypatch.setattr(at, "predict_probability_vector",
                            steering_predictor(np.array([150.0, 250.0])))
        start = VoltageWindow(center=(150.0, 250.0), span=(40.0, 40.0))
        trace = tune(SteerableProvider(), None, start, P0_SD, budget=100)
        assert trace.status == "converged"
        assert trace.evaluations == 1

    def test_constant_provider_stagnates(self, monkeypatch):
        monkeypatch.setattr(at, "predict_probability_vector", constant_predictor)
        start = VoltageWindow(center=(200.0, 200.0), span=(40.0, 40.0))
        opts = TuneOptions(stagnation=10)
        trace = tune(SteerableProvider(), None, start, P0_SD, budget=100,
                     options=opts)
        assert trace.status == "stagnated"
        assert trace.evaluations == 1 + opts.stagnation

    @pytest.mark.parametrize("budget", [1, 3, 7])
    def test_budget_is_hard_cap(self, monkeypatch, budget):
        monkeypatch.setattr(at, "predict_probability_vector", constant_predictor)
        start = VoltageWindow(center=(200.0, 200.0), span=(40.0, 40.0))
        trace = tune(SteerableProvider(), None, start, P0_SD, budget=budget,
                     options=TuneOptions(stagnation=50))
        assert trace.status == "budget"
        assert trace.evaluations == budget

    def test_never_worse_than_start(self, monkeypatch):
        # across several targets the best iterate is never above the start
        for seed in range(5):
            rng = np.random.default_rng(seed)
            target = rng.uniform(50, 350, size=2)
            monkeypatch.setattr(at, "predict_probability_vector",
                                steering_predictor(target))
            start = VoltageWindow(center=(200.0, 200.0), span=(40.0, 40.0))
            trace = tune(SteerableProvider(), None, start, P0_SD, budget=40)
            assert trace.best.delta <= trace.entries[0].delta + 1e-12
            assert all(e.delta >= 0 for e in trace.entries)
            assert trace.evaluations <= 40

    def test_step_limit_status(self, monkeypatch):
        # target off the dyadic step lattice: delta can approach but never
        # reach zero, so the search must run its step down to the floor
        monkeypatch.setattr(at, "predict_probability_vector",
                            steering_predictor(np.array([203.0, 200.0]),
                                               scale=4000.0))
        start = VoltageWindow(center=(220.0, 200.0), span=(40.0, 40.0))
        trace = tune(SteerableProvider(), None, start, P0_SD, budget=500,
                     options=TuneOptions(stagnation=500, delta_stop=0.0))
        assert trace.status == "step-limit"
        assert trace.best.delta < trace.entries[0].delta

    def test_out_of_bounds_start_rejected(self):
        start = VoltageWindow(center=(10.0, 200.0), span=(40.0, 40.0))
        with pytest.raises(ValidationError, match="outside"):
            tune(SteerableProvider(), None, start, P0_SD, budget=10)

    def test_dimension_mismatch_rejected(self):
        start = VoltageWindow(center=(100.0, 100.0, 0.0), span=(40.0, 40.0))
        with pytest.raises(ValidationError, match="axes"):
            tune(SteerableProvider(), None, start, P0_SD, budget=10)

    def test_budget_validation(self):
        start = VoltageWindow(center=(200.0, 200.0), span=(40.0, 40.0))
        with pytest.raises(ValidationError, match="budget"):
            tune(SteerableProvider(), None, start, P0_SD, budget=0)

    def test_clamped_proposals_flagged(self, monkeypatch):
        # target far outside the bounds drags the search into the wall; the
        # start offset keeps the clamped proposal off the step lattice so it
        # is a fresh, flagged evaluation
        monkeypatch.setattr(at, "predict_probability_vector",
                            steering_predictor(np.array([-300.0, 200.0])))
        start = VoltageWindow(center=(50.0, 200.0), span=(40.0, 40.0))
        trace = tune(SteerableProvider(), None, start, P0_SD, budget=60,
                     options=TuneOptions(delta_stop=0.0, stagnation=15))
        assert any(e.clamped for e in trace.entries)
        # clamped centers still respect the bounds
        for e in trace.entries:
            assert e.window.center[0] >= 20.0 and e.window.center[1] >= 20.0

    def test_memo_spares_budget(self, monkeypatch):
        monkeypatch.setattr(at, "predict_probability_vector", constant_predictor)
        provider = SteerableProvider()
        start = VoltageWindow(center=(200.0, 200.0), span=(40.0, 40.0))
        trace = tune(provider, None, start, P0_SD, budget=100,
                     options=TuneOptions(stagnation=30))
        # every provider call corresponds to exactly one trace entry;
        # revisited centers are replayed from the memo
        assert provider.calls == trace.evaluations

    def test_outcome_invariant_under_current_rescale(self):
        cnn = nn.init_weights(nn.submap_cnn(size=10), seed=4,
                              transform="maxabs-log12")

        class Blob:
            bounds = ((0.0, 400.0), (0.0, 400.0))

            def __init__(self, scale):
                self.scale = scale

            def current_map(self, w):
                x = np.linspace(-1, 1, w.resolution)
                cx, cy = w.center
                m = np.exp(-((x[None, :] + cx / 400) ** 2
                             + (x[:, None] - cy / 400) ** 2))
                return self.scale * m

        start = VoltageWindow(center=(200.0, 200.0), span=(40.0, 40.0),
                              resolution=10)
        t1 = tune(Blob(1.0), cnn, start, P0_SD, budget=30)
        t2 = tune(Blob(3000.0), cnn, start, P0_SD, budget=30)
        assert t1.status == t2.status
        assert [e.window.center for e in t1.entries] == \
               [e.window.center for e in t2.entries]
        assert np.allclose([e.delta for e in t1.entries],
                           [e.delta for e in t2.entries], atol=1e-9)

    def test_trace_csv(self, tmp_path, monkeypatch):
        monkeypatch.setattr(at, "predict_probability_vector", constant_predictor)
        start = VoltageWindow(center=(200.0, 200.0), span=(40.0, 40.0))
        trace = tune(SteerableProvider(), None, start, P0_SD, budget=5,
                     options=TuneOptions(stagnation=50))
        export_trace_csv(trace, tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == ("iteration,center_0,center_1,p_sc,p_barrier,"
                            "p_sd,p_dd,delta,clamped")
        assert len(lines) == 1 + trace.evaluations


@pytest.fixture(scope="module")
def provider():
    return SimulatorProvider(five_gate_device(n_points=64))


class TestSimulatorProvider:
    def test_repeat_window_identical_and_cached(self, provider, monkeypatch):
        calls = {"n": 0}
        real = at.simulate_map

        def counting(*args, **kwargs):
            calls["n"] += 1
            return real(*args, **kwargs)

        monkeypatch.setattr(at, "simulate_map", counting)
        w = VoltageWindow(center=(250.0, 250.0), span=(40.0, 40.0), resolution=8)
        a = provider.current_map(w)
        b = provider.current_map(w)
        assert np.array_equal(a, b)
        assert calls["n"] <= 1   # second query served from the cache

    def test_pinch_off_window_is_dark(self, provider):
        w = VoltageWindow(center=(40.0, 40.0), span=(40.0, 40.0), resolution=6)
        m = provider.current_map(w)
        assert np.all(np.abs(m) < 1e-12)

    def test_plunger_swap_mirrors_map(self):
        # the mean device is mirror-symmetric about the central gate, but
        # reflection also swaps the contacts, so the exact statement is
        # I(V1, V2; +bias) == -I(V2, V1; -bias); without the bias reversal
        # the transpose only matches to O(bias/kT) from rectification.
        # near-cancelled currents (below 1e-6 of the window peak) are
        # skipped: the net flux there is rounding-dominated
        dev = five_gate_device(n_points=64)
        flipped = replace(dev, constants=replace(dev.constants,
                                                 bias=-dev.constants.bias))
        wa = VoltageWindow(center=(330.0, 350.0), span=(40.0, 40.0), resolution=8)
        wb = VoltageWindow(center=(350.0, 330.0), span=(40.0, 40.0), resolution=8)
        a = SimulatorProvider(dev).current_map(wa)
        b = SimulatorProvider(flipped).current_map(wb)
        bright = a.T > 1e-6 * a.max()
        assert bright.sum() >= 10
        rel = np.abs(-b - a.T)[bright] / a.T[bright]
        assert rel.max() < 1e-6

    def test_requires_two_axes(self, provider):
        w = VoltageWindow(center=(200.0, 200.0, 0.0), span=(40.0, 40.0))
        with pytest.raises(ValidationError, match="2 axes"):
            provider.current_map(w)


class TestStackProvider:
    def _stack(self):
        rng = np.random.default_rng(0)
        xv = np.linspace(0.0, 100.0, 21)
        return MapStack(maps=rng.random((2, 21, 21)).astype(np.float32),
                        x_values=xv, y_values=xv,
                        z_values=np.array([-1.0, 1.0]))

    def test_exact_crop_on_aligned_window(self):
        stack = self._stack()
        sp = StackProvider(stack)
        w = VoltageWindow(center=(50.0, 50.0, -1.0), span=(20.0, 20.0),
                          resolution=5)
        crop = sp.current_map(w)
        i0 = np.searchsorted(stack.x_values, 40.0)
        assert np.allclose(crop, stack.maps[0].astype(np.float64)
                           [i0:i0 + 5, i0:i0 + 5], atol=1e-12)

    def test_nearest_slice_tie_goes_lower(self):
        stack = self._stack()
        sp = StackProvider(stack)
        w_lo = VoltageWindow(center=(50.0, 50.0, -1.0), span=(20.0, 20.0),
                             resolution=5)
        w_tie = VoltageWindow(center=(50.0, 50.0, 0.0), span=(20.0, 20.0),
                              resolution=5)
        assert np.array_equal(sp.current_map(w_tie), sp.current_map(w_lo))

    def test_nearest_slice_off_tie(self):
        stack = self._stack()
        sp = StackProvider(stack)
        w = VoltageWindow(center=(50.0, 50.0, 0.5), span=(20.0, 20.0),
                          resolution=5)
        w_hi = VoltageWindow(center=(50.0, 50.0, 1.0), span=(20.0, 20.0),
                             resolution=5)
        assert np.array_equal(sp.current_map(w), sp.current_map(w_hi))

    def test_full_extent_resampling_preserves_range(self):
        xv = np.linspace(0.0, 100.0, 51)
        xx, yy = np.meshgrid(xv, xv)
        smooth = np.exp(-((xx - 50.0) ** 2 + (yy - 60.0) ** 2) / 800.0)
        stack = MapStack(maps=smooth[None].astype(np.float64), x_values=xv,
                         y_values=xv, z_values=np.array([0.0]))
        sp = StackProvider(stack)
        w = VoltageWindow(center=(50.0, 50.0, 0.0), span=(100.0, 100.0),
                          resolution=30)
        out = sp.current_map(w)
        assert out.shape == (30, 30)
        assert out.max() >= 0.95 * smooth.max()
        assert out.min() <= smooth.min() + 0.05 * (smooth.max() - smooth.min())

    def test_window_beyond_extent_rejected(self):
        sp = StackProvider(self._stack())
        w = VoltageWindow(center=(5.0, 50.0, 0.0), span=(20.0, 20.0),
                          resolution=5)
        with pytest.raises(ValidationError, match="extent"):
            sp.current_map(w)

    def test_requires_three_axes(self):
        sp = StackProvider(self._stack())
        w = VoltageWindow(center=(50.0, 50.0), span=(20.0, 20.0), resolution=5)
        with pytest.raises(ValidationError, match="3-axis"):
            sp.current_map(w)

    def test_nonuniform_axes_interpolate(self):
        xv = np.array([0.0, 10.0, 15.0, 40.0])
        maps = np.arange(16, dtype=np.float64).reshape(1, 4, 4)
        stack = MapStack(maps=maps, x_values=xv, y_values=xv,
                         z_values=np.array([0.0]))
        sp = StackProvider(stack)
        w = VoltageWindow(center=(12.5, 12.5, 0.0), span=(5.0, 5.0), resolution=2)
        out = sp.current_map(w)
        # corners at grid points (10,10),(15,10),(10,15),(15,15) exactly
        assert np.allclose(out, [[5.0, 6.0], [9.0, 10.0]], atol=1e-12)

    def test_bounds_reflect_stack(self):
        sp = StackProvider(self._stack())
        assert sp.bounds == ((0.0, 100.0), (0.0, 100.0), (-1.0, 1.0))
