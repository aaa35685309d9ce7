"""Torque-profile persistence and interpolation, checked against direct
Bernstein-basis evaluation and exact round-trip comparisons."""

import json

import numpy as np
import pytest

from pronk.bezier import LibraryRangeError, bernstein_basis
from pronk.library import (
    LIBRARY_VERSION,
    LibraryLoadError,
    ProfileBuildError,
    TorqueLibrary,
    TorqueProfile,
    build_profile,
)


def make_profile(p, scale=1.0, T=0.4, order=6):
    B = scale * np.linspace(-1.0, 1.0, 2 * (order + 1)).reshape(2, order + 1)
    return TorqueProfile(B, p, T, meta={"fit_rms": 0.0})


class TestProfile:
    def test_eval_matches_basis_product(self):
        prof = make_profile(0.3, scale=2.0)
        for s in (0.0, 0.33, 1.0):
            expected = prof.B @ bernstein_basis(prof.order, s)
            np.testing.assert_allclose(prof.eval(s), expected, atol=1e-14)

    def test_eval_grid_matches_pointwise_eval(self):
        prof = make_profile(0.3)
        s = np.linspace(0.0, 1.0, 11)
        grid = prof.eval_grid(s)
        assert grid.shape == (2, 11)
        for i, si in enumerate(s):
            np.testing.assert_allclose(grid[:, i], prof.eval(si), atol=1e-14)

    def test_nonpositive_duration_rejected(self):
        with pytest.raises(ValueError):
            TorqueProfile(np.zeros((2, 7)), 0.0, 0.0)


class TestBuildProfile:
    def _traces(self, n, s_grid, rng):
        base = np.stack([np.sin(2 * np.pi * s_grid), np.cos(np.pi * s_grid)])
        return [base + 1e-6 * rng.normal(size=base.shape) for _ in range(n)]

    def test_mean_of_final_traces_is_fit(self):
        s = np.linspace(0.0, 1.0, 60)
        rng = np.random.default_rng(0)
        traces = self._traces(15, s, rng)
        prof = build_profile(traces, s, p=0.3, T=0.4, n_p=12, order=10)
        mean = np.stack(traces[-12:]).mean(axis=0)
        np.testing.assert_allclose(prof.eval_grid(s), mean, atol=1e-3)
        assert prof.meta["fit_rms"] <= 1e-3

    def test_too_few_traces_raises(self):
        s = np.linspace(0.0, 1.0, 30)
        with pytest.raises(ProfileBuildError):
            build_profile([np.zeros((2, 30))] * 5, s, 0.0, 0.4, n_p=12)

    def test_fit_tolerance_enforced(self):
        s = np.linspace(0.0, 1.0, 200)
        rough = np.stack([np.sign(np.sin(24 * np.pi * s)), s])
        with pytest.raises(ProfileBuildError):
            build_profile([rough] * 12, s, 0.0, 0.4, n_p=12, order=4)


class TestLibrary:
    def test_query_exact_and_interpolated(self):
        lib = TorqueLibrary(n_M=6)
        a, b = make_profile(0.2, scale=1.0, T=0.3), make_profile(0.6, scale=3.0, T=0.5)
        lib.insert(a)
        lib.insert(b)
        np.testing.assert_array_equal(lib.query(0.2).B, a.B)
        got = lib.query(0.3)  # quarter of the way from a to b
        np.testing.assert_allclose(got.B, 0.75 * a.B + 0.25 * b.B, atol=1e-12)
        assert got.T == pytest.approx(0.75 * 0.3 + 0.25 * 0.5)
        assert got.meta["interpolated_from"] == [0.2, 0.6]

    def test_piecewise_linearity_of_query(self):
        """Query at p is linear in p between neighbors: midpoint identity."""
        lib = TorqueLibrary(n_M=6)
        for p, sc in ((0.0, 1.0), (0.5, -2.0), (1.0, 4.0)):
            lib.insert(make_profile(p, scale=sc))
        for lo, hi in ((0.0, 0.5), (0.5, 1.0)):
            mid = 0.5 * (lo + hi)
            np.testing.assert_allclose(
                lib.query(mid).B,
                0.5 * (lib.query(lo).B + lib.query(hi).B), atol=1e-12)

    def test_extrapolation_refused(self):
        lib = TorqueLibrary(n_M=6)
        lib.insert(make_profile(0.2))
        with pytest.raises(LibraryRangeError):
            lib.query(0.21)
        with pytest.raises(LibraryRangeError):
            TorqueLibrary(n_M=6).query(0.0)

    def test_warm_start_empty_library_returns_none(self, caplog):
        lib = TorqueLibrary(n_M=6)
        assert lib.warm_start(0.3, np.linspace(0, 1, 5)) is None

    def test_warm_start_grid_matches_query(self):
        lib = TorqueLibrary(n_M=6)
        lib.insert(make_profile(0.2))
        s = np.linspace(0.0, 1.0, 9)
        np.testing.assert_allclose(lib.warm_start(0.2, s),
                                   lib.query(0.2).eval_grid(s), atol=1e-14)

    def test_insert_replaces_and_sorts(self):
        lib = TorqueLibrary(n_M=6)
        lib.insert(make_profile(0.4))
        lib.insert(make_profile(0.2))
        lib.insert(make_profile(0.4, scale=9.0))
        assert list(lib.params) == [0.2, 0.4]
        np.testing.assert_array_equal(lib.query(0.4).B, make_profile(0.4, 9.0).B)

    def test_order_mismatch_rejected(self):
        lib = TorqueLibrary(n_M=4)
        with pytest.raises(ValueError):
            lib.insert(make_profile(0.2, order=6))


class TestPersistence:
    def test_roundtrip_bit_exact(self, tmp_path):
        lib = TorqueLibrary(gait="pronk", model_hash="deadbeef", n_M=6)
        rng = np.random.default_rng(1)
        for p in (0.1, 0.37):
            B = rng.normal(size=(2, 7))
            lib.insert(TorqueProfile(B, p, 0.4 + p, meta={"fit_rms": 1e-5}))
        path = tmp_path / "lib.json"
        lib.save(path)
        loaded = TorqueLibrary.load(path, expect_model_hash="deadbeef")
        assert (loaded.gait, loaded.model_hash, loaded.n_M) == ("pronk", "deadbeef", 6)
        for a, b in zip(lib.profiles, loaded.profiles):
            np.testing.assert_array_equal(a.B, b.B)
            assert (a.p, a.T) == (b.p, b.T)

    def test_truncated_file_diagnosed(self, tmp_path):
        lib = TorqueLibrary(n_M=6)
        lib.insert(make_profile(0.2))
        path = tmp_path / "lib.json"
        lib.save(path)
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(LibraryLoadError, match="byte offset"):
            TorqueLibrary.load(path)

    def test_missing_field_diagnosed(self, tmp_path):
        path = tmp_path / "lib.json"
        path.write_text(json.dumps({"version": LIBRARY_VERSION, "gait": "pronk"}))
        with pytest.raises(LibraryLoadError, match="missing field"):
            TorqueLibrary.load(path)

    def test_wrong_version_rejected(self, tmp_path):
        lib = TorqueLibrary(n_M=6)
        path = tmp_path / "lib.json"
        lib.save(path)
        doc = json.loads(path.read_text())
        doc["version"] = LIBRARY_VERSION + 1
        path.write_text(json.dumps(doc))
        with pytest.raises(LibraryLoadError, match="version"):
            TorqueLibrary.load(path)

    def test_model_hash_mismatch_rejected(self, tmp_path):
        lib = TorqueLibrary(model_hash="aaaa", n_M=6)
        path = tmp_path / "lib.json"
        lib.save(path)
        with pytest.raises(LibraryLoadError, match="hash"):
            TorqueLibrary.load(path, expect_model_hash="bbbb")


class TestMerge:
    def test_merge_layers_other_on_top(self):
        a = TorqueLibrary(n_M=6)
        a.insert(make_profile(0.2, scale=1.0))
        a.insert(make_profile(0.4, scale=1.0))
        b = TorqueLibrary(n_M=6)
        b.insert(make_profile(0.4, scale=5.0))
        b.insert(make_profile(0.6, scale=5.0))
        merged = a.merge(b)
        assert list(merged.params) == [0.2, 0.4, 0.6]
        np.testing.assert_array_equal(merged.query(0.4).B, make_profile(0.4, 5.0).B)
        # inputs untouched
        np.testing.assert_array_equal(a.query(0.4).B, make_profile(0.4, 1.0).B)

    def test_header_mismatch_rejected(self):
        a = TorqueLibrary(gait="pronk", n_M=6)
        b = TorqueLibrary(gait="jump", n_M=6)
        with pytest.raises(LibraryLoadError):
            a.merge(b)
