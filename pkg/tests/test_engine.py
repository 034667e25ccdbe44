"""Path simulator: reproducibility, backends, accumulators and spool files."""

import os
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrrw import ModelParams, WalkState, build_tables, derive_constants, transition_kernel
from lrrw import _kernels, engine
from lrrw.engine import (
    EnsembleError,
    Sampler,
    SimConfig,
    fclt_checkpoints,
    path_generator,
    read_spool,
    run_ensemble,
    scale_tables,
    simulate_path,
    step,
    write_spool,
)
from lrrw.model import Regime

DIFFUSIVE = ModelParams(0.6, 0.2, 0.2, 0.5)
CRITICAL = ModelParams(0.9, 0.1, 0.0, 0.625)
SUPER = ModelParams(0.8, 0.1, 0.1, 0.9)


def _full_config(params, **kw):
    base = dict(
        params=params,
        horizon=3000,
        num_paths=40,
        master_seed=11,
        checkpoints=(1, 2, 17, 500, 2999),
        qsl_orders=(1, 2, 3),
        asclt_grid=(-1.0, 0.0, 1.0),
        lil_start=100,
        block_size=16,
        chunk_steps=333,
    )
    base.update(kw)
    return SimConfig(**base)


def _same(e1, e2):
    for key in ("s", "z", "M", "mart", "qv", "qsl", "asclt", "lil"):
        a, b = getattr(e1, key), getattr(e2, key)
        if a is None:
            assert b is None
        else:
            np.testing.assert_array_equal(a, b, err_msg=key)


class TestSimConfig:
    def test_horizon_is_checkpoint(self):
        cfg = SimConfig(DIFFUSIVE, horizon=100, checkpoints=(50, 10, 50))
        assert cfg.checkpoints == (10, 50, 100)

    @pytest.mark.parametrize(
        "kw",
        [
            dict(horizon=0),
            dict(horizon=10, num_paths=0),
            dict(horizon=10, checkpoints=(0,)),
            dict(horizon=10, checkpoints=(11,)),
            dict(horizon=10, qsl_orders=(4,)),
            dict(horizon=10, master_seed=-1),
            dict(horizon=10, lil_start=0),
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SimConfig(DIFFUSIVE, **kw)

    def test_round_trip(self):
        cfg = _full_config(CRITICAL, sampler="latent")
        again = SimConfig.from_dict(cfg.as_dict())
        assert again.as_dict() == cfg.as_dict()
        assert SimConfig.from_dict(cfg.as_dict(), num_paths=3).num_paths == 3


class TestReproducibility:
    @pytest.mark.parametrize("params", [DIFFUSIVE, CRITICAL, SUPER])
    @pytest.mark.parametrize("sampler", list(Sampler))
    def test_backends_bitwise(self, params, sampler):
        if not _kernels.HAVE_NUMBA:
            pytest.skip("numba unavailable")
        cfg = _full_config(params, sampler=sampler)
        _same(run_ensemble(replace(cfg, backend="numba")), run_ensemble(replace(cfg, backend="numpy")))

    def test_block_and_chunk_invariance(self):
        cfg = _full_config(DIFFUSIVE)
        ref = run_ensemble(cfg)
        _same(ref, run_ensemble(replace(cfg, block_size=7, chunk_steps=1)))
        _same(ref, run_ensemble(replace(cfg, block_size=1000, chunk_steps=5000)))

    def test_workers(self):
        cfg = _full_config(CRITICAL, block_size=5)
        _same(run_ensemble(cfg), run_ensemble(cfg, workers=2))

    def test_prefix_of_larger_ensemble(self):
        cfg = _full_config(SUPER)
        big = run_ensemble(replace(cfg, num_paths=60))
        small = run_ensemble(cfg)
        np.testing.assert_array_equal(big.s[:40], small.s)

    def test_single_path(self):
        cfg = _full_config(DIFFUSIVE)
        ens = run_ensemble(cfg)
        obs = simulate_path(cfg, 23)
        np.testing.assert_array_equal(obs.s, ens.s[23])
        np.testing.assert_array_equal(obs.qsl, ens.qsl[23])
        assert ens[23].path_index == 23
        np.testing.assert_array_equal(ens[23].mart, obs.mart)

    def test_seed_changes_paths(self):
        cfg = _full_config(DIFFUSIVE)
        assert not np.array_equal(run_ensemble(cfg).s, run_ensemble(replace(cfg, master_seed=12)).s)

    @pytest.mark.parametrize("sampler", list(Sampler))
    def test_scalar_reference(self, sampler):
        cfg = SimConfig(CRITICAL, horizon=400, num_paths=3, master_seed=5, checkpoints=(1, 7, 100), sampler=sampler)
        ens = run_ensemble(cfg)
        for i in range(3):
            rng = path_generator(5, i)
            state = WalkState(0, 0, 0)
            seen = {}
            for _ in range(400):
                state = step(CRITICAL, state, rng, sampler)
                seen[state.n] = state
            got = [WalkState(int(n), int(s), int(z)) for n, s, z in zip(ens.checkpoints, ens.s[i], ens.z[i])]
            assert got == [seen[n] for n in cfg.checkpoints]

    def test_numba_switch(self):
        code = "import lrrw._kernels as k; print(k.DEFAULT_BACKEND, k.HAVE_NUMBA)"
        env = dict(os.environ, LRRW_DISABLE_NUMBA="1")
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        assert out.stdout.split() == ["numpy", "False"]

    def test_unknown_backend(self):
        with pytest.raises(ValueError, match="backend"):
            run_ensemble(_full_config(DIFFUSIVE, backend="fortran"))


class TestPathInvariants:
    @pytest.mark.parametrize("params", [DIFFUSIVE, CRITICAL, SUPER])
    def test_state_constraints(self, params):
        ens = run_ensemble(_full_config(params, num_paths=100))
        n = ens.checkpoints[None, :]
        assert np.all(np.abs(ens.s) <= ens.z)
        assert np.all(ens.z <= n)
        assert np.all((ens.s - ens.z) % 2 == 0)

    @pytest.mark.parametrize("params", [DIFFUSIVE, CRITICAL, SUPER])
    def test_martingale_identity(self, params):
        cfg = SimConfig(params, horizon=10**5, num_paths=4, master_seed=3, checkpoints=(10, 1000))
        ens = run_ensemble(cfg)
        scale = np.maximum(1.0, np.abs(ens.M))
        assert np.max(np.abs(ens.M - ens.mart) / scale) < 1e-8

    @pytest.mark.parametrize("params", [DIFFUSIVE, CRITICAL, SUPER])
    def test_quadratic_variation_bound(self, params):
        c = derive_constants(params)
        ens = run_ensemble(_full_config(params))
        v = build_tables(c.alpha, c.gamma, 3000).v[ens.checkpoints]
        assert np.all(ens.qv >= 0)
        assert np.all(ens.qv <= (c.gamma + c.tau) * v[None, :] * (1 + 1e-12))

    def test_no_memory_is_iid(self):
        prm = ModelParams(0.3, 0.5, 0.2, 0.0)
        ens = run_ensemble(SimConfig(prm, horizon=500, num_paths=5, master_seed=9))
        for i in range(5):
            u = path_generator(9, i).random(500)
            x = np.where(u < 0.3, 1, np.where(u < 0.8, -1, 0))
            assert ens.s[i, -1] == x.sum()
            assert ens.z[i, -1] == np.abs(x).sum()

    def test_deterministic_walk(self):
        ens = run_ensemble(SimConfig(ModelParams(1.0, 0.0, 0.0, 0.9), horizon=1000, num_paths=3, checkpoints=(10,)))
        np.testing.assert_array_equal(ens.s, [[10, 1000]] * 3)
        # later increments match their drift exactly; the first one is 1 - omega
        np.testing.assert_allclose(ens.mart, 0.9, rtol=1e-12)
        np.testing.assert_allclose(ens.qv, 0.81, rtol=1e-12)

    def test_frozen_walk(self):
        ens = run_ensemble(SimConfig(ModelParams(0.0, 0.0, 1.0, 0.4), horizon=100, num_paths=2, sampler="latent"))
        assert not ens.s.any() and not ens.z.any()

    def test_accumulators_skipped_when_superdiffusive(self):
        ens = run_ensemble(_full_config(SUPER, num_paths=2))
        assert ens.qsl is None and ens.asclt is None and ens.lil is None
        assert any("superdiffusive" in note for note in ens.notes)

    def test_asclt_mass_monotone_in_grid(self):
        ens = run_ensemble(_full_config(DIFFUSIVE))
        assert np.all(np.diff(ens.asclt, axis=2) >= 0)
        w, _, _ = scale_tables(ens.constants, 3000, None)
        assert np.all(ens.asclt[:, -1, :] <= w[1:].sum() + 1e-9)


class TestIncrementBounds:
    @settings(max_examples=500, deadline=None)
    @given(
        st.floats(0, 1),
        st.floats(0, 1),
        st.floats(0, 0.999),
        st.integers(1, 5000).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))).flatmap(
            lambda nz: st.tuples(st.just(nz[0]), st.just(nz[1]), st.integers(0, nz[1]))
        ),
    )
    def test_centered_increment(self, w1, w2, theta, nzk):
        p, q = w1 / 2, w2 / 2
        prm = ModelParams(p, q, 1 - p - q, theta)
        c = derive_constants(prm)
        n, z, n_plus = nzk
        state = WalkState(n, 2 * n_plus - z, z)
        k = transition_kernel(prm, state)
        drift = c.alpha * state.s / n + c.omega
        xi = np.array([1.0, -1.0, 0.0]) - drift
        probs = np.array(k.as_tuple())
        assert np.all(np.abs(xi) <= 2 + abs(c.alpha))
        assert probs @ xi == pytest.approx(0.0, abs=1e-14)
        assert probs @ xi**4 <= 16


class TestSpool:
    def test_binary_round_trip(self, tmp_path):
        ens = run_ensemble(_full_config(CRITICAL, num_paths=6))
        write_spool(ens, tmp_path / "c.bin")
        rec = read_spool(tmp_path / "c.bin")
        assert rec.dtype.itemsize == 40
        assert len(rec) == 6 * len(ens.checkpoints)
        np.testing.assert_array_equal(rec["s"].reshape(ens.s.shape), ens.s)
        np.testing.assert_array_equal(rec["M"].reshape(ens.M.shape), ens.M)
        np.testing.assert_array_equal(rec["path_index"][:: len(ens.checkpoints)], np.arange(6))

    def test_csv(self, tmp_path):
        ens = run_ensemble(_full_config(DIFFUSIVE, num_paths=2))
        write_spool(ens, tmp_path / "c.csv", fmt="csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "path_index,n,s,z,M"
        assert len(lines) == 1 + 2 * len(ens.checkpoints)
        with pytest.raises(ValueError):
            write_spool(ens, tmp_path / "c.x", fmt="parquet")

    def test_truncated(self, tmp_path):
        (tmp_path / "bad.bin").write_bytes(b"\0" * 41)
        with pytest.raises(ValueError, match="multiple"):
            read_spool(tmp_path / "bad.bin")


class TestHelpers:
    def test_memory_error_names_block(self, monkeypatch):
        def boom(config, lo, hi):
            raise MemoryError

        monkeypatch.setattr(engine, "_run_block", boom)
        with pytest.raises(EnsembleError, match=r"\[0, 16\)"):
            run_ensemble(_full_config(DIFFUSIVE))

    def test_column(self):
        ens = run_ensemble(_full_config(DIFFUSIVE, num_paths=2))
        assert ens.column(17) == 2
        with pytest.raises(KeyError):
            ens.column(18)
        np.testing.assert_array_equal(ens.ratio(500), ens.s[:, 3] / 500)
        assert len(ens[0:2]) == 2

    def test_scale_tables_critical(self):
        c = derive_constants(CRITICAL)
        assert c.regime is Regime.CRITICAL
        w, sc, lil = scale_tables(c, 100, 5)
        assert w[1] == 0.0 and w[2] == pytest.approx(1 / (2 * np.log(2)))
        assert lil[15] == 0.0 and lil[16] > 0.0

    def test_fclt_checkpoints(self):
        assert fclt_checkpoints(1000, [0.25, 1.0], Regime.DIFFUSIVE) == [250, 1000]
        assert fclt_checkpoints(10**4, [0.5, 1.0], Regime.CRITICAL) == [100, 10**4]
        assert fclt_checkpoints(10, [0.01], Regime.DIFFUSIVE) == [1]
