"""Path simulation: samplers, checkpointed paths with online accumulators, ensembles.

Every path owns a private random stream, ``PCG64`` seeded by
``SeedSequence(master_seed, spawn_key=(path_index,))``.  A path is therefore
a pure function of ``(master_seed, path_index, sampler)``: block size, worker
count and backend do not change it.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from . import _kernels
from .model import DerivedConstants, ModelParams, Regime, WalkState, derive_constants, initial_kernel, transition_kernel
from .special import build_tables

SPOOL_DTYPE = np.dtype([("path_index", "<u8"), ("n", "<u8"), ("s", "<i8"), ("z", "<u8"), ("M", "<f8")])


class Sampler(str, enum.Enum):
    KERNEL = "kernel"
    LATENT = "latent"


class EnsembleError(RuntimeError):
    pass


def generator_identity() -> str:
    return f"numpy-{np.__version__}:PCG64<-SeedSequence(entropy=master_seed,spawn_key=(path_index,))"


def path_generator(master_seed: int, path_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(path_index,))))


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines an ensemble.

    ``horizon`` is always recorded as the last checkpoint.  Accumulators:
    ``qsl_orders`` (subset of {1, 2, 3}) enables the moment sums,
    ``asclt_grid`` the log-weighted empirical CDF, ``lil_start`` the running
    maximum of the LIL-normalized deviation over ``[lil_start, n]``.
    """

    params: ModelParams
    horizon: int
    num_paths: int = 1
    master_seed: int = 0
    checkpoints: tuple = ()
    sampler: Sampler = Sampler.KERNEL
    qsl_orders: tuple = ()
    asclt_grid: tuple = ()
    lil_start: Optional[int] = None
    track_martingale: bool = True
    block_size: int = 1024
    chunk_steps: int = 2048
    backend: Optional[str] = None

    def __post_init__(self) -> None:
        if int(self.horizon) < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        object.__setattr__(self, "horizon", int(self.horizon))
        if int(self.num_paths) < 1:
            raise ValueError(f"num_paths must be >= 1, got {self.num_paths}")
        object.__setattr__(self, "num_paths", int(self.num_paths))
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must fit in 64 unsigned bits")
        object.__setattr__(self, "master_seed", int(self.master_seed))
        cps = sorted({int(c) for c in self.checkpoints} | {self.horizon})
        if cps[0] < 1:
            raise ValueError(f"checkpoints must lie in [1, {self.horizon}], got {cps[0]}")
        if cps[-1] > self.horizon:
            raise ValueError(f"checkpoints must lie in [1, {self.horizon}], got {cps[-1]}")
        object.__setattr__(self, "checkpoints", tuple(cps))
        object.__setattr__(self, "sampler", Sampler(self.sampler))
        orders = tuple(sorted({int(r) for r in self.qsl_orders}))
        if not set(orders) <= {1, 2, 3}:
            raise ValueError(f"qsl_orders must be a subset of {{1, 2, 3}}, got {orders}")
        object.__setattr__(self, "qsl_orders", orders)
        object.__setattr__(self, "asclt_grid", tuple(float(x) for x in self.asclt_grid))
        if self.lil_start is not None and int(self.lil_start) < 1:
            raise ValueError("lil_start must be >= 1")
        if self.block_size < 1 or self.chunk_steps < 1:
            raise ValueError("block_size and chunk_steps must be positive")

    def as_dict(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "horizon": self.horizon,
            "num_paths": self.num_paths,
            "master_seed": self.master_seed,
            "checkpoints": list(self.checkpoints),
            "sampler": self.sampler.value,
            "qsl_orders": list(self.qsl_orders),
            "asclt_grid": list(self.asclt_grid),
            "lil_start": self.lil_start,
            "track_martingale": self.track_martingale,
        }

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "SimConfig":
        kw = dict(d)
        kw["params"] = ModelParams.from_mapping(kw["params"])
        for key in ("checkpoints", "qsl_orders", "asclt_grid"):
            kw[key] = tuple(kw.get(key, ()))
        kw.update(overrides)
        return cls(**kw)


@dataclass(frozen=True)
class PathObservation:
    """Checkpoint records and accumulator snapshots of one path.

    Per checkpoint ``n``: ``s`` (S_n), ``z`` (Z_n), ``M`` (``a_n S_n - omega A_n``),
    ``mart`` (running ``sum a_k xi_k``), ``qv`` (predictable quadratic variation),
    ``qsl`` (moment sums for r = 1, 2, 3), ``asclt`` (weighted indicator mass
    per grid point) and ``lil`` (running maximum).
    """

    path_index: int
    checkpoints: np.ndarray
    s: np.ndarray
    z: np.ndarray
    M: np.ndarray
    mart: np.ndarray
    qv: np.ndarray
    qsl: Optional[np.ndarray] = None
    asclt: Optional[np.ndarray] = None
    lil: Optional[np.ndarray] = None

    def states(self) -> list:
        return [WalkState(int(n), int(s), int(z)) for n, s, z in zip(self.checkpoints, self.s, self.z)]

    def l_proxy(self, constants: DerivedConstants, checkpoint: int = -1) -> float:
        n = float(self.checkpoints[checkpoint])
        return n ** (1.0 - constants.alpha) * (self.s[checkpoint] / n - constants.mu)


@dataclass
class Ensemble(Sequence):
    """Column-oriented results of :func:`run_ensemble`; indexing yields :class:`PathObservation`."""

    config: SimConfig
    constants: DerivedConstants
    path_index: np.ndarray
    checkpoints: np.ndarray
    s: np.ndarray
    z: np.ndarray
    M: np.ndarray
    mart: np.ndarray
    qv: np.ndarray
    qsl: Optional[np.ndarray]
    asclt: Optional[np.ndarray]
    lil: Optional[np.ndarray]
    notes: list = field(default_factory=list)
    generator: str = field(default_factory=generator_identity)

    def __len__(self) -> int:
        return len(self.path_index)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return PathObservation(
            path_index=int(self.path_index[i]),
            checkpoints=self.checkpoints,
            s=self.s[i],
            z=self.z[i],
            M=self.M[i],
            mart=self.mart[i],
            qv=self.qv[i],
            qsl=None if self.qsl is None else self.qsl[i],
            asclt=None if self.asclt is None else self.asclt[i],
            lil=None if self.lil is None else self.lil[i],
        )

    def __iter__(self) -> Iterator[PathObservation]:
        for i in range(len(self)):
            yield self[i]

    def column(self, n: int) -> int:
        """Index of checkpoint ``n`` (``KeyError`` if it was not recorded)."""
        hits = np.flatnonzero(self.checkpoints == n)
        if not len(hits):
            raise KeyError(f"checkpoint {n} not recorded; have {self.checkpoints.tolist()}")
        return int(hits[0])

    def ratio(self, n: Optional[int] = None) -> np.ndarray:
        """``S_n / n`` per path at checkpoint ``n`` (default: horizon)."""
        col = -1 if n is None else self.column(n)
        return self.s[:, col] / float(self.checkpoints[col])


def scale_tables(constants: DerivedConstants, horizon: int, lil_start: Optional[int]):
    """Per-step weight ``w``, deviation scale ``sc`` and LIL scale for the regime."""
    k = np.arange(horizon + 1, dtype=np.float64)
    w = np.zeros(horizon + 1)
    sc = np.zeros(horizon + 1)
    lil = np.zeros(horizon + 1)
    if constants.regime is Regime.CRITICAL:
        logk = np.log(k[2:])
        w[2:] = 1.0 / (k[2:] * logk)
        sc[2:] = np.sqrt(k[2:] / logk)
        if lil_start is not None:
            lo = max(int(lil_start), 16)  # log log log k > 0
            kk = k[lo:]
            lil[lo:] = np.sqrt(kk / (2.0 * np.log(kk) * np.log(np.log(np.log(kk)))))
    else:
        w[1:] = 1.0 / k[1:]
        sc[1:] = np.sqrt(k[1:])
        if lil_start is not None:
            lo = max(int(lil_start), 3)  # log log k > 0
            kk = k[lo:]
            lil[lo:] = np.sqrt(kk / (2.0 * np.log(np.log(kk))))
    return w, sc, lil


def _plan(config: SimConfig, constants: DerivedConstants):
    notes = []
    flags = 0
    if config.track_martingale:
        flags |= _kernels.FLAG_MART
    super_ = constants.regime is Regime.SUPERDIFFUSIVE
    if config.qsl_orders:
        if super_:
            notes.append("qsl accumulator skipped: no moment theorem in the superdiffusive regime")
        else:
            flags |= _kernels.FLAG_QSL
    else:
        notes.append("qsl accumulator skipped: no orders requested")
    if config.asclt_grid:
        if super_:
            notes.append("asclt accumulator skipped: no ASCLT in the superdiffusive regime")
        else:
            flags |= _kernels.FLAG_ASCLT
    else:
        notes.append("asclt accumulator skipped: empty grid")
    if config.lil_start is not None:
        if super_:
            notes.append("lil accumulator skipped: superdiffusive LIL is evaluated from checkpoints")
        else:
            flags |= _kernels.FLAG_LIL
    else:
        notes.append("lil accumulator skipped: no start index")
    return flags, notes


def _prm_vector(params: ModelParams, c: DerivedConstants) -> np.ndarray:
    prm = np.zeros(_kernels.N_PRM)
    prm[_kernels.P_P] = params.p
    prm[_kernels.P_Q] = params.q
    prm[_kernels.P_R] = params.r
    prm[_kernels.P_THETA] = params.theta
    prm[_kernels.P_ALPHA] = c.alpha
    prm[_kernels.P_OMEGA] = c.omega
    prm[_kernels.P_GAMMA] = c.gamma
    prm[_kernels.P_TAU] = c.tau
    prm[_kernels.P_CENTER] = c.center
    # E[(X_1 - omega)^2]
    prm[_kernels.P_QV1] = params.p + params.q - 2.0 * c.omega * c.beta + c.omega**2
    return prm


def _run_block(config: SimConfig, lo: int, hi: int) -> dict:
    """Simulate paths ``lo .. hi-1``; returns per-checkpoint arrays."""
    c = derive_constants(config.params)
    flags, _ = _plan(config, c)
    tables = build_tables(c.alpha, c.gamma, config.horizon)
    w, sc, lil_scale = scale_tables(c, config.horizon, config.lil_start)
    prm = _prm_vector(config.params, c)
    grid = np.asarray(config.asclt_grid, dtype=np.float64)
    latent = config.sampler is Sampler.LATENT
    m = 3 if latent else 1
    P = hi - lo
    K = len(config.checkpoints)
    G = len(grid)

    s = np.zeros(P, dtype=np.int64)
    z = np.zeros(P, dtype=np.int64)
    mart = np.zeros((P, 2))
    qv = np.zeros((P, 2))
    qsl = np.zeros((P, 3, 2))
    asclt = np.zeros((P, G, 2))
    lilmax = np.zeros(P)

    out = {
        "s": np.empty((P, K), dtype=np.int64),
        "z": np.empty((P, K), dtype=np.int64),
        "M": np.empty((P, K)),
        "mart": np.empty((P, K)),
        "qv": np.empty((P, K)),
        "qsl": np.empty((P, K, 3)) if flags & _kernels.FLAG_QSL else None,
        "asclt": np.empty((P, K, G)) if flags & _kernels.FLAG_ASCLT else None,
        "lil": np.empty((P, K)) if flags & _kernels.FLAG_LIL else None,
    }
    gens = [path_generator(config.master_seed, i) for i in range(lo, hi)]
    chunk = min(config.chunk_steps, config.horizon)
    buf = np.empty((P, chunk, m))
    n = 0
    for col, target in enumerate(config.checkpoints):
        while n < target:
            C = min(chunk, target - n)
            for i, g in enumerate(gens):
                g.random(out=buf[i, :C])
            _kernels.advance(
                n, s, z, buf[:, :C], latent, prm, tables.a, w, sc, lil_scale, grid, flags,
                mart, qv, qsl, asclt, lilmax, backend=config.backend,
            )
            n += C
        out["s"][:, col] = s
        out["z"][:, col] = z
        out["M"][:, col] = tables.a[n] * s - c.omega * tables.A[n]
        out["mart"][:, col] = mart[:, 0]
        out["qv"][:, col] = qv[:, 0]
        if out["qsl"] is not None:
            out["qsl"][:, col] = qsl[:, :, 0]
        if out["asclt"] is not None:
            out["asclt"][:, col] = asclt[:, :, 0]
        if out["lil"] is not None:
            out["lil"][:, col] = lilmax
    return out


def _run_block_guarded(args) -> dict:
    config, lo, hi = args
    try:
        return _run_block(config, lo, hi)
    except MemoryError as exc:
        raise EnsembleError(f"out of memory in path block [{lo}, {hi})") from exc


def run_ensemble(config: SimConfig, workers: int = 1) -> Ensemble:
    """Simulate ``config.num_paths`` paths, optionally across ``workers`` processes.

    Per-path results do not depend on ``workers`` or ``config.block_size``.
    """
    c = derive_constants(config.params)
    _, notes = _plan(config, c)
    bounds = [(lo, min(lo + config.block_size, config.num_paths)) for lo in range(0, config.num_paths, config.block_size)]
    jobs = [(config, lo, hi) for lo, hi in bounds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_block_guarded, jobs))
    else:
        parts = [_run_block_guarded(j) for j in jobs]

    def cat(key):
        if parts[0][key] is None:
            return None
        return np.concatenate([p[key] for p in parts], axis=0)

    return Ensemble(
        config=config,
        constants=c,
        path_index=np.arange(config.num_paths, dtype=np.uint64),
        checkpoints=np.asarray(config.checkpoints, dtype=np.int64),
        s=cat("s"),
        z=cat("z"),
        M=cat("M"),
        mart=cat("mart"),
        qv=cat("qv"),
        qsl=cat("qsl"),
        asclt=cat("asclt"),
        lil=cat("lil"),
        notes=notes,
    )


def simulate_path(config: SimConfig, path_index: int) -> PathObservation:
    out = _run_block(config, path_index, path_index + 1)
    return PathObservation(
        path_index=path_index,
        checkpoints=np.asarray(config.checkpoints, dtype=np.int64),
        s=out["s"][0],
        z=out["z"][0],
        M=out["M"][0],
        mart=out["mart"][0],
        qv=out["qv"][0],
        qsl=None if out["qsl"] is None else out["qsl"][0],
        asclt=None if out["asclt"] is None else out["asclt"][0],
        lil=None if out["lil"] is None else out["lil"][0],
    )


def step(params: ModelParams, state: WalkState, rng: np.random.Generator, sampler: Sampler = Sampler.KERNEL) -> WalkState:
    """One step from ``state`` using ``rng``; a slow scalar reference for the block kernels."""
    p, q, th = params.p, params.q, params.theta

    def mark(u: float) -> int:
        return 1 if u < p else (-1 if u < p + q else 0)

    if Sampler(sampler) is Sampler.LATENT:
        u = rng.random(3)
        if state.n == 0:
            return state.advance(mark(u[1]))
        m = mark(u[1])
        if u[0] >= th:
            return state.advance(m)
        idx = min(int(u[2] * state.n), state.n - 1)
        if idx < state.n_plus:
            past = 1
        elif idx < state.n_plus + state.n_minus:
            past = -1
        else:
            past = 0
        return state.advance(m * past)
    u = rng.random()
    kern = initial_kernel(params) if state.n == 0 else transition_kernel(params, state)
    if u < kern.p_plus:
        return state.advance(1)
    if u < kern.p_plus + kern.p_minus:
        return state.advance(-1)
    return state.advance(0)


# -- spool -------------------------------------------------------------------


def spool_records(ens: Ensemble) -> np.ndarray:
    P, K = ens.s.shape
    rec = np.empty(P * K, dtype=SPOOL_DTYPE)
    rec["path_index"] = np.repeat(ens.path_index, K)
    rec["n"] = np.tile(ens.checkpoints.astype(np.uint64), P)
    rec["s"] = ens.s.ravel()
    rec["z"] = ens.z.ravel().astype(np.uint64)
    rec["M"] = ens.M.ravel()
    return rec


def write_spool(ens: Ensemble, path, fmt: str = "bin") -> None:
    """Write checkpoint records: little-endian ``u64 path_index, u64 n, i64 s, u64 z, f64 M``."""
    rec = spool_records(ens)
    if fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(rec.tobytes())
    elif fmt == "csv":
        with open(path, "w") as fh:
            fh.write("path_index,n,s,z,M\n")
            for r in rec:
                fh.write(f"{r['path_index']},{r['n']},{r['s']},{r['z']},{float(r['M'])!r}\n")
    else:
        raise ValueError(f"unknown spool format {fmt!r}")


def read_spool(path) -> np.ndarray:
    size = os.path.getsize(path)
    if size % SPOOL_DTYPE.itemsize:
        raise ValueError(f"{path}: size {size} is not a multiple of the {SPOOL_DTYPE.itemsize}-byte record")
    return np.fromfile(path, dtype=SPOOL_DTYPE)


def fclt_checkpoints(n: int, grid: Sequence[float], regime: Regime) -> list:
    """Observation times ``floor(n t)`` (or ``floor(n^t)`` when critical) for a time grid."""
    if regime is Regime.CRITICAL:
        return [max(1, int(math.floor(n**t))) for t in grid]
    return [max(1, int(math.floor(n * t))) for t in grid]
