"""Exact-law continuous-time simulation of exclusion dynamics.

All simulators run on a uniformized global clock: attempts arrive at rate
``N * sum_z p(z)``, each attempt picks a uniform site and a jump vector with
probability ``p(z)/sum p``, and ineffective attempts (empty source, occupied
target) are no-ops.  No-ops do not change the law, so trajectories realize
the exclusion generator exactly; the occupation-time integral is accumulated
in closed form between events, with no time-discretization error.

The coupled simulator drives a background configuration plus one discrepancy
site with the same clock: attempts whose target is the discrepancy move it to
the vacated source, and attempts launched from the discrepancy move it only
onto empty sites.  Feeding one event stream to both a plain copy (with the
discrepancy reinserted as a particle) and the coupled representation yields
the basic coupling path-by-path, which the tests exploit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import njit, prange

numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .kernels import EnsembleSpec, JumpKernel, TorusGeometry, sample_equilibrium
from .rng import replica_rng, stream_seed


class HorizonTooLargeForTorus(UserWarning):
    """The discrepancy walker may wrap around the torus before the horizon."""


@dataclass
class Trajectory:
    """Sampled observables of one replica."""

    times: np.ndarray
    eta0: np.ndarray | None = None
    occupation_integral: np.ndarray | None = None
    at_origin: np.ndarray | None = None  # discrepancy-at-origin indicator
    position: np.ndarray | None = None  # flat torus site of the discrepancy
    displacement: np.ndarray | None = None  # unwrapped (T, 2) displacement
    meta: dict = field(default_factory=dict)


@dataclass
class ExclusionEnsemble:
    times: np.ndarray
    eta0: np.ndarray  # (replicas, T) uint8
    occupation_integral: np.ndarray  # (replicas, T) float64
    meta: dict = field(default_factory=dict)


@dataclass
class CoupledEnsemble:
    times: np.ndarray
    at_origin: np.ndarray  # (replicas, T) uint8
    position: np.ndarray  # (replicas, T) int32 flat torus site
    displacement: np.ndarray  # (replicas, T, 2) int64 unwrapped
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# event streams


def event_stream(rng: np.random.Generator, n_sites: int, total_rate: float,
                 cum_prob: np.ndarray, horizon: float):
    """Uniformized attempt stream on [0, horizon]: times, sites, vector ids."""
    rate = n_sites * total_rate
    mean = rate * horizon
    block = int(mean + 10.0 * np.sqrt(mean + 1.0) + 16)
    gaps = rng.exponential(1.0 / rate, block)
    times = np.cumsum(gaps)
    while times[-1] < horizon:
        gaps = rng.exponential(1.0 / rate, block)
        times = np.concatenate([times, times[-1] + np.cumsum(gaps)])
    n = int(np.searchsorted(times, horizon, side="right"))
    times = times[:n]
    sites = rng.integers(0, n_sites, n, dtype=np.int32)
    u = rng.random(n)
    if len(cum_prob) <= 8:
        zidx = np.zeros(n, dtype=np.int8)
        for c in cum_prob[:-1]:
            zidx += u >= c
    else:
        zidx = np.searchsorted(cum_prob, u, side="right").astype(np.int8)
    return times, sites, zidx


def _prepare(kernel: JumpKernel, geometry: TorusGeometry):
    geometry.check_kernel(kernel)
    zvecs, rates = kernel.vectors()
    cum = np.cumsum(rates / rates.sum())
    cum[-1] = 1.0
    nbr = geometry.shift_table(zvecs)
    return zvecs, rates, cum, nbr


def _check_sample_times(sample_times, horizon: float) -> np.ndarray:
    ts = np.asarray(sample_times, dtype=np.float64)
    if ts.ndim != 1 or np.any(np.diff(ts) <= 0):
        raise ValueError("sample times must be strictly increasing")
    if ts[0] < 0 or ts[-1] > horizon:
        raise ValueError("sample times must lie in [0, horizon]")
    return ts


def wrap_safe_side(kernel: JumpKernel, horizon: float) -> float:
    """Smallest torus side for which the discrepancy should not feel the wrap."""
    return 4.0 * horizon * kernel.speed


def _warn_wrap(kernel, geometry, horizon, meta):
    bound = wrap_safe_side(kernel, horizon)
    if min(geometry.L1, geometry.L2) < bound:
        warnings.warn(
            f"min torus side {min(geometry.L1, geometry.L2)} below wrap-safety "
            f"bound {bound:.3g} for horizon {horizon}",
            HorizonTooLargeForTorus,
        )
        meta["wrap_warning"] = True


# ---------------------------------------------------------------------------
# numba cores


@njit(cache=True)
def _exclusion_core(eta, nbr, origin, rho, ev_times, ev_sites, ev_zidx,
                    sample_times, out_eta0, out_acc):
    t_prev = 0.0
    acc = 0.0
    e0 = eta[origin]
    si = 0
    n_samples = sample_times.shape[0]
    for k in range(ev_times.shape[0]):
        te = ev_times[k]
        while si < n_samples and sample_times[si] <= te:
            out_eta0[si] = e0
            out_acc[si] = acc + (e0 - rho) * (sample_times[si] - t_prev)
            si += 1
        acc += (e0 - rho) * (te - t_prev)
        t_prev = te
        i = ev_sites[k]
        j = nbr[ev_zidx[k], i]
        if eta[i] == 1 and eta[j] == 0:
            eta[i] = 0
            eta[j] = 1
            if i == origin:
                e0 = 0
            elif j == origin:
                e0 = 1
    while si < n_samples:
        out_eta0[si] = e0
        out_acc[si] = acc + (e0 - rho) * (sample_times[si] - t_prev)
        si += 1


@njit(cache=True)
def _coupled_core(xi, r0, nbr, zvecs, ev_times, ev_sites, ev_zidx,
                  sample_times, origin, out_at_origin, out_pos, out_disp):
    r = r0
    w1 = 0
    w2 = 0
    si = 0
    n_samples = sample_times.shape[0]
    for k in range(ev_times.shape[0]):
        te = ev_times[k]
        while si < n_samples and sample_times[si] <= te:
            out_at_origin[si] = 1 if r == origin else 0
            out_pos[si] = r
            out_disp[si, 0] = w1
            out_disp[si, 1] = w2
            si += 1
        i = ev_sites[k]
        z = ev_zidx[k]
        j = nbr[z, i]
        if i == r:
            # discrepancy jumps only onto empty sites
            if xi[j] == 0:
                r = j
                w1 += zvecs[z, 0]
                w2 += zvecs[z, 1]
        elif j == r:
            # a background particle displaces the discrepancy to its source
            if xi[i] == 1:
                xi[i] = 0
                xi[r] = 1
                r = i
                w1 -= zvecs[z, 0]
                w2 -= zvecs[z, 1]
        else:
            if xi[i] == 1 and xi[j] == 0:
                xi[i] = 0
                xi[j] = 1
    while si < n_samples:
        out_at_origin[si] = 1 if r == origin else 0
        out_pos[si] = r
        out_disp[si, 0] = w1
        out_disp[si, 1] = w2
        si += 1


@njit(cache=True, parallel=True)
def _exclusion_batch(etas, nbr, origin, rho, ev_times, ev_sites, ev_zidx,
                     offsets, sample_times, out_eta0, out_acc):
    for rix in prange(etas.shape[0]):
        lo, hi = offsets[rix], offsets[rix + 1]
        _exclusion_core(etas[rix], nbr, origin, rho, ev_times[lo:hi],
                        ev_sites[lo:hi], ev_zidx[lo:hi], sample_times,
                        out_eta0[rix], out_acc[rix])


@njit(cache=True, parallel=True)
def _coupled_batch(xis, nbr, zvecs, ev_times, ev_sites, ev_zidx, offsets,
                   sample_times, origin, out_at_origin, out_pos, out_disp):
    for rix in prange(xis.shape[0]):
        lo, hi = offsets[rix], offsets[rix + 1]
        _coupled_core(xis[rix], origin, nbr, zvecs, ev_times[lo:hi],
                      ev_sites[lo:hi], ev_zidx[lo:hi], sample_times, origin,
                      out_at_origin[rix], out_pos[rix], out_disp[rix])


# ---------------------------------------------------------------------------
# single-replica runs


def simulate_exclusion(config: np.ndarray, kernel: JumpKernel,
                       geometry: TorusGeometry, horizon: float,
                       sample_times, seed: int) -> Trajectory:
    """Evolve one occupation field, recording the origin occupation and its
    centered time integral at the sample times."""
    ts = _check_sample_times(sample_times, horizon)
    zvecs, rates, cum, nbr = _prepare(kernel, geometry)
    rho = float(np.mean(config))
    rng = replica_rng(seed)
    ev_t, ev_s, ev_z = event_stream(rng, geometry.n_sites, float(rates.sum()), cum, horizon)
    eta = np.array(config, dtype=np.uint8, copy=True)
    out_eta0 = np.empty(len(ts), dtype=np.uint8)
    out_acc = np.empty(len(ts), dtype=np.float64)
    _exclusion_core(eta, nbr, geometry.origin, rho, ev_t, ev_s, ev_z, ts,
                    out_eta0, out_acc)
    return Trajectory(times=ts, eta0=out_eta0, occupation_integral=out_acc,
                      meta={"seed": seed, "rho": rho, "n_events": len(ev_t)})


def simulate_coupled(spec: EnsembleSpec, kernel: JumpKernel,
                     geometry: TorusGeometry, horizon: float,
                     sample_times, seed: int) -> Trajectory:
    """Evolve the basic coupling: background field plus tracked discrepancy."""
    ts = _check_sample_times(sample_times, horizon)
    zvecs, rates, cum, nbr = _prepare(kernel, geometry)
    meta: dict = {"seed": seed}
    _warn_wrap(kernel, geometry, horizon, meta)
    spec = EnsembleSpec(density=spec.density, origin_empty=True)
    rng = replica_rng(seed)
    xi = sample_equilibrium(spec, geometry, rng)
    ev_t, ev_s, ev_z = event_stream(rng, geometry.n_sites, float(rates.sum()), cum, horizon)
    at0 = np.empty(len(ts), dtype=np.uint8)
    pos = np.empty(len(ts), dtype=np.int32)
    disp = np.empty((len(ts), 2), dtype=np.int64)
    _coupled_core(xi, geometry.origin, nbr, zvecs, ev_t, ev_s, ev_z, ts,
                  geometry.origin, at0, pos, disp)
    meta["n_events"] = len(ev_t)
    return Trajectory(times=ts, position=pos, displacement=disp,
                      at_origin=at0, meta=meta)


# ---------------------------------------------------------------------------
# ensembles

_CHUNK_EVENT_BUDGET = 30_000_000


def _chunks(n_replicas: int, events_per_rep: float):
    size = max(1, int(_CHUNK_EVENT_BUDGET / max(events_per_rep, 1.0)))
    for lo in range(0, n_replicas, size):
        yield lo, min(lo + size, n_replicas)


def run_exclusion_ensemble(spec: EnsembleSpec, kernel: JumpKernel,
                           geometry: TorusGeometry, horizon: float,
                           sample_times, seed: int, n_replicas: int,
                           label: str = "exclusion") -> ExclusionEnsemble:
    """Independent equilibrium replicas of the plain exclusion dynamics.

    Replica ``r`` draws everything from a Philox stream keyed by
    ``(stream_seed(seed, label), r)``; outputs are reproducible and
    independent of chunking.
    """
    ts = _check_sample_times(sample_times, horizon)
    zvecs, rates, cum, nbr = _prepare(kernel, geometry)
    total = float(rates.sum())
    base = stream_seed(seed, label)
    rho = spec.density
    T = len(ts)
    out_eta0 = np.empty((n_replicas, T), dtype=np.uint8)
    out_acc = np.empty((n_replicas, T), dtype=np.float64)
    ev_per_rep = geometry.n_sites * total * horizon
    for lo, hi in _chunks(n_replicas, ev_per_rep):
        c = hi - lo
        etas = np.empty((c, geometry.n_sites), dtype=np.uint8)
        streams = []
        counts = np.empty(c + 1, dtype=np.int64)
        counts[0] = 0
        for r in range(lo, hi):
            rng = replica_rng(base, r)
            etas[r - lo] = sample_equilibrium(spec, geometry, rng)
            streams.append(event_stream(rng, geometry.n_sites, total, cum, horizon))
            counts[r - lo + 1] = counts[r - lo] + len(streams[-1][0])
        ev_t = np.concatenate([s[0] for s in streams])
        ev_s = np.concatenate([s[1] for s in streams])
        ev_z = np.concatenate([s[2] for s in streams])
        _exclusion_batch(etas, nbr, geometry.origin, rho, ev_t, ev_s, ev_z,
                         counts, ts, out_eta0[lo:hi], out_acc[lo:hi])
    return ExclusionEnsemble(times=ts, eta0=out_eta0, occupation_integral=out_acc,
                             meta={"seed": seed, "label": label, "rho": rho,
                                   "n_replicas": n_replicas,
                                   "kernel": {str(k): str(v) for k, v in kernel.rates.items()},
                                   "geometry": (geometry.L1, geometry.L2)})


def run_coupled_ensemble(spec: EnsembleSpec, kernel: JumpKernel,
                         geometry: TorusGeometry, horizon: float,
                         sample_times, seed: int, n_replicas: int,
                         label: str = "coupled") -> CoupledEnsemble:
    """Independent replicas of the coupled dynamics with the discrepancy
    started at the origin (background conditioned to leave it empty)."""
    ts = _check_sample_times(sample_times, horizon)
    spec = EnsembleSpec(density=spec.density, origin_empty=True)
    zvecs, rates, cum, nbr = _prepare(kernel, geometry)
    total = float(rates.sum())
    base = stream_seed(seed, label)
    T = len(ts)
    meta: dict = {"seed": seed, "label": label, "rho": spec.density,
                  "n_replicas": n_replicas, "geometry": (geometry.L1, geometry.L2)}
    _warn_wrap(kernel, geometry, horizon, meta)
    at0 = np.empty((n_replicas, T), dtype=np.uint8)
    pos = np.empty((n_replicas, T), dtype=np.int32)
    disp = np.empty((n_replicas, T, 2), dtype=np.int64)
    ev_per_rep = geometry.n_sites * total * horizon
    for lo, hi in _chunks(n_replicas, ev_per_rep):
        c = hi - lo
        xis = np.empty((c, geometry.n_sites), dtype=np.uint8)
        streams = []
        counts = np.empty(c + 1, dtype=np.int64)
        counts[0] = 0
        for r in range(lo, hi):
            rng = replica_rng(base, r)
            xis[r - lo] = sample_equilibrium(spec, geometry, rng)
            streams.append(event_stream(rng, geometry.n_sites, total, cum, horizon))
            counts[r - lo + 1] = counts[r - lo] + len(streams[-1][0])
        ev_t = np.concatenate([s[0] for s in streams])
        ev_s = np.concatenate([s[1] for s in streams])
        ev_z = np.concatenate([s[2] for s in streams])
        _coupled_batch(xis, nbr, zvecs, ev_t, ev_s, ev_z, counts, ts,
                       geometry.origin, at0[lo:hi], pos[lo:hi], disp[lo:hi])
    return CoupledEnsemble(times=ts, at_origin=at0, position=pos,
                           displacement=disp, meta=meta)


def run_walker_ensemble(kernel: JumpKernel, geometry: TorusGeometry,
                        horizon: float, sample_times, seed: int,
                        n_replicas: int, label: str = "walker") -> CoupledEnsemble:
    """Single free walker with rates p(z), started at the origin.

    Jump counts per sampling interval and per vector are independent Poisson
    variables, so positions at the sample times follow the walk law exactly.
    For symmetric kernels the discrepancy of the coupled dynamics has the
    same law regardless of the background, which makes this the cheap exact
    generator for that case; it is also the coupled law at density 0.
    """
    ts = _check_sample_times(sample_times, horizon)
    zvecs, rates, _, _ = _prepare(kernel, geometry)
    base = stream_seed(seed, label)
    dts = np.diff(np.concatenate([[0.0], ts]))
    lam = np.outer(dts, rates)  # (T, K) Poisson intensities
    T, K = lam.shape
    at0 = np.empty((n_replicas, T), dtype=np.uint8)
    pos = np.empty((n_replicas, T), dtype=np.int32)
    disp = np.empty((n_replicas, T, 2), dtype=np.int64)
    for r in range(n_replicas):
        rng = replica_rng(base, r)
        counts = rng.poisson(lam)
        d = np.cumsum(counts @ zvecs, axis=0)
        disp[r] = d
        x = d[:, 0] % geometry.L1
        y = d[:, 1] % geometry.L2
        pos[r] = (x + geometry.L1 * y).astype(np.int32)
        at0[r] = (pos[r] == geometry.origin).astype(np.uint8)
    return CoupledEnsemble(times=ts, at_origin=at0, position=pos, displacement=disp,
                           meta={"seed": seed, "label": label,
                                 "n_replicas": n_replicas, "walker": True,
                                 "geometry": (geometry.L1, geometry.L2)})
