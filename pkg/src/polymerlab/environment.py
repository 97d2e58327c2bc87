"""Lazily refined Brownian environment on the lattice.

Every site ``x`` of Z^d carries an independent standard Brownian motion
``W_x``.  Values are never stored up front: ``W_x(t)`` is resolved by
descending a dyadic bridge tree over ``[0, horizon]`` whose node variates are
drawn from a counter-based hash of ``(master_seed, x, level, index)``.  The
field is therefore a pure function of the seed and can be re-read in any
order, from any thread, bit for bit.

Revealed samples are logged so a field can be snapshotted, reloaded and
audited.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np
from scipy.special import ndtri

SNAPSHOT_VERSION = 1

SiteKey = Tuple[int, ...]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class FieldError(ValueError):
    """Base class for environment failures."""


class OutOfHorizonError(FieldError):
    pass


class RefinementError(FieldError):
    """Residual bridge variance above tolerance after the deepest level."""


class SnapshotError(FieldError):
    """Malformed or incompatible snapshot payload."""


def mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over uint64 arrays (wrapping)."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def site_keys(master_seed: int, sites: np.ndarray) -> np.ndarray:
    """Hash lattice coordinates (shape ``(N, d)``) into per-site 64-bit keys."""
    sites = np.asarray(sites, dtype=np.int64)
    h = mix64(np.full(sites.shape[0], np.uint64(master_seed & _MASK64)) + _GOLDEN)
    for j in range(sites.shape[1]):
        h = mix64((h ^ sites[:, j].view(np.uint64)) + _GOLDEN)
    return h


def _node_normals(keys: np.ndarray, level: int, index: np.ndarray) -> np.ndarray:
    salt = np.uint64((level + 1) * 0x632BE59BD9B4E019 & _MASK64)
    h = mix64(mix64(keys ^ salt) + index.astype(np.uint64))
    u = ((h >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)
    return ndtri(u)


@dataclass(frozen=True)
class SiteTrack:
    """Revealed samples of one site, sorted by time, starting at (0, 0)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if self.times.size == 0 or self.times[0] != 0.0 or self.values[0] != 0.0:
            raise ValueError("a track must begin with the sample (0, 0)")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("track times must be strictly increasing")


def _as_site_array(x, d: int, n: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.int64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        if arr.shape[0] != d:
            raise ValueError(f"site has {arr.shape[0]} coordinates, field has d={d}")
        arr = arr.reshape(1, d)
    if arr.shape[1] != d:
        raise ValueError(f"sites must have {d} coordinates")
    if n is not None and arr.shape[0] == 1 and n != 1:
        arr = np.broadcast_to(arr, (n, d))
    return arr


class BrownianField:
    """A field of iid standard Brownian motions indexed by Z^d.

    Parameters
    ----------
    master_seed : int
        64-bit seed; the whole field is a deterministic function of it.
    d : int
        Lattice dimension.
    horizon : float
        Largest queryable time ``T_max``.
    depth : int
        Maximal refinement depth of the dyadic bridge tree.
    residual_tol : float
        Largest admissible residual bridge variance at the deepest level.
    record : bool
        Log revealed samples for :meth:`snapshot` and :meth:`track`.
    """

    def __init__(self, master_seed: int, d: int = 1, horizon: float = 1.0,
                 depth: int = 40, residual_tol: float = 1e-10, record: bool = True):
        if d < 1:
            raise ValueError("dimension must be >= 1")
        if not horizon > 0:
            raise ValueError("horizon must be positive")
        if depth < 0:
            raise ValueError("depth must be >= 0")
        self.master_seed = int(master_seed) & _MASK64
        self.d = int(d)
        self.horizon = float(horizon)
        self.depth = int(depth)
        self.residual_tol = float(residual_tol)
        self.record = record
        self._log: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._lock = threading.Lock()

    # -- queries -----------------------------------------------------------
    def values(self, sites, times) -> np.ndarray:
        """Vectorized ``W_x(t)``.

        ``sites`` is either a single site (broadcast against ``times``) or an
        ``(N, d)`` array paired element-wise with ``times``.
        """
        t = np.atleast_1d(np.asarray(times, dtype=np.float64))
        s = _as_site_array(sites, self.d, t.shape[0])
        if s.shape[0] != t.shape[0]:
            raise ValueError("sites and times must have matching lengths")
        if t.size and (np.min(t) < 0.0 or np.max(t) > self.horizon or np.any(np.isnan(t))):
            raise OutOfHorizonError(f"query time outside [0, {self.horizon}]")
        out = self._resolve(site_keys(self.master_seed, s), t)
        if self.record and t.size:
            with self._lock:
                self._log.append((np.array(s), t.copy(), out.copy()))
        return out

    def value_at(self, x, t: float) -> float:
        return float(self.values(x, [t])[0])

    def increment(self, x, t1: float, t2: float) -> float:
        if t1 > t2:
            raise ValueError("increment needs t1 <= t2")
        v = self.values(x, [t1, t2])
        return float(v[1] - v[0])

    def _resolve(self, keys: np.ndarray, t: np.ndarray) -> np.ndarray:
        n = t.shape[0]
        idx = np.zeros(n, dtype=np.uint64)
        a = np.zeros(n)
        b = np.full(n, self.horizon)
        va = np.zeros(n)
        vb = np.sqrt(self.horizon) * _node_normals(keys, -1, idx)
        h = self.horizon
        for level in range(self.depth):
            mid = a + 0.5 * h
            vm = 0.5 * (va + vb) + np.sqrt(0.25 * h) * _node_normals(keys, level, idx)
            left = t < mid
            b = np.where(left, mid, b)
            vb = np.where(left, vm, vb)
            a = np.where(left, a, mid)
            va = np.where(left, va, vm)
            idx = 2 * idx + (~left).astype(np.uint64)
            h *= 0.5
        width = b - a
        resid = (t - a) * (b - t) / width
        if n and np.max(resid) > self.residual_tol:
            raise RefinementError(
                f"residual bridge variance {np.max(resid):.3e} exceeds "
                f"{self.residual_tol:.3e} at depth {self.depth}")
        out = va + (t - a) / width * (vb - va)
        return np.where(t == b, vb, out)

    # -- transforms ----------------------------------------------------------
    def rescale(self, a: float) -> "RescaledField":
        return RescaledField(self, a)

    # -- revealed samples ----------------------------------------------------
    def track(self, x) -> SiteTrack:
        site = tuple(int(c) for c in np.atleast_1d(x))
        samples = self._revealed().get(site, {})
        samples = {0.0: 0.0, **samples}
        ts = np.array(sorted(samples))
        return SiteTrack(ts, np.array([samples[u] for u in ts]))

    def _revealed(self) -> dict[SiteKey, dict[float, float]]:
        table: dict[SiteKey, dict[float, float]] = {}
        with self._lock:
            log = list(self._log)
        for s, t, v in log:
            for site, ti, vi in zip(map(tuple, s.tolist()), t.tolist(), v.tolist()):
                table.setdefault(site, {})[ti] = vi
        return table

    def revealed_sites(self) -> list[SiteKey]:
        return sorted(self._revealed())

    def snapshot(self) -> bytes:
        tracks = []
        for site, samples in sorted(self._revealed().items()):
            samples = {0.0: 0.0, **samples}
            tracks.append({"site": list(site),
                           "samples": [[u, samples[u]] for u in sorted(samples)]})
        payload = {"version": SNAPSHOT_VERSION, "d": self.d,
                   "master_seed": self.master_seed, "T_max": self.horizon,
                   "depth": self.depth, "residual_tol": self.residual_tol,
                   "tracks": tracks}
        return json.dumps(payload, separators=(",", ":")).encode()

    @classmethod
    def load(cls, data: bytes) -> "BrownianField":
        try:
            payload = json.loads(data.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SnapshotError(f"malformed snapshot stream: {exc}") from exc
        if not isinstance(payload, dict):
            raise SnapshotError("malformed snapshot stream: not an object")
        if payload.get("version") != SNAPSHOT_VERSION:
            raise SnapshotError(f"snapshot version {payload.get('version')!r} "
                                f"!= {SNAPSHOT_VERSION}")
        try:
            field = cls(payload["master_seed"], payload["d"], payload["T_max"],
                        payload["depth"], payload.get("residual_tol", 1e-10))
            for tr in payload["tracks"]:
                site = np.array(tr["site"], dtype=np.int64).reshape(1, -1)
                samples = np.array(tr["samples"], dtype=np.float64).reshape(-1, 2)
                SiteTrack(samples[:, 0].copy(), samples[:, 1].copy())
                field._log.append((np.repeat(site, len(samples), axis=0),
                                   samples[:, 0].copy(), samples[:, 1].copy()))
        except (KeyError, TypeError, ValueError) as exc:
            raise SnapshotError(f"malformed snapshot stream: {exc}") from exc
        return field

    def audit(self) -> int:
        """Recompute every logged sample; return the number of bit mismatches."""
        bad = 0
        for site, samples in self._revealed().items():
            ts = np.array(sorted(samples))
            fresh = self._resolve(site_keys(self.master_seed, np.array([site] * len(ts))), ts)
            bad += int(np.sum(fresh != np.array([samples[u] for u in ts])))
        return bad

    def __repr__(self):
        return (f"BrownianField(seed={self.master_seed}, d={self.d}, "
                f"horizon={self.horizon}, depth={self.depth})")


class RescaledField:
    """View ``W^(a)_x(s) = sqrt(a) W_x(s / a)`` of an underlying field."""

    def __init__(self, base, a: float):
        if not a > 0:
            raise ValueError("scale factor must be positive")
        self.base = base
        self.a = float(a)
        self.d = base.d
        self.horizon = self.a * base.horizon
        self._root = np.sqrt(self.a)

    def values(self, sites, times) -> np.ndarray:
        t = np.atleast_1d(np.asarray(times, dtype=np.float64))
        if t.size and (np.min(t) < 0.0 or np.max(t) > self.horizon):
            raise OutOfHorizonError(f"query time outside [0, {self.horizon}]")
        return self._root * self.base.values(sites, t / self.a)

    def value_at(self, x, t: float) -> float:
        return float(self.values(x, [t])[0])

    def increment(self, x, t1: float, t2: float) -> float:
        if t1 > t2:
            raise ValueError("increment needs t1 <= t2")
        v = self.values(x, [t1, t2])
        return float(v[1] - v[0])

    def rescale(self, a: float) -> "RescaledField":
        return RescaledField(self, a)


def derive_seed(master_seed: int, index: int) -> int:
    """Independent 64-bit seed for replica ``index`` of a master seed."""
    ss = np.random.SeedSequence([int(master_seed) & _MASK64, int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def worker_rng(master_seed: int, worker_index: int) -> np.random.Generator:
    """Counter-based (Philox) stream for ``(master_seed, worker_index)``."""
    ss = np.random.SeedSequence([int(master_seed) & _MASK64, int(worker_index), 0x5A17])
    return np.random.Generator(np.random.Philox(ss))


def fresh_fields(master_seed: int, count: int, **kwargs) -> Iterable[BrownianField]:
    for i in range(count):
        yield BrownianField(derive_seed(master_seed, i), **kwargs)


def lattice_sites(d: int, radius: int) -> np.ndarray:
    """All sites of the cube ``|x|_inf <= radius`` in lexicographic order."""
    axes = [np.arange(-radius, radius + 1)] * d
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1).astype(np.int64)


def as_site(x: Sequence[int] | int) -> SiteKey:
    return tuple(int(c) for c in np.atleast_1d(x))
