"""Coefficient-side action of the exclusion generator on subset functions.

Square-integrable observables of a product measure expand over the
orthonormal family of centered occupation products indexed by finite site
subsets.  The generator acts on expansion coefficients through a
degree-preserving exchange part, a degree-preserving drift part weighted by
(1 - 2 rho), and degree-raising/-lowering drift parts weighted by
2 sqrt(rho (1 - rho)).  All formulas below are the infinite-lattice ones;
sums over the whole lattice are rewritten as finite sums using that the
antisymmetric rate part sums to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .exact import StateSpace, window_space
from .kernels import JumpKernel

Site = tuple[int, int]
Coeff = dict[frozenset, float]


class DegreeCapExceeded(ValueError):
    pass


class WrapViolation(ValueError):
    """Support reaches within a kernel range of the window edge."""


def degree(coeff: Coeff) -> int:
    return max((len(b) for b in coeff), default=0)


def _clean(coeff: Coeff, tol: float = 0.0) -> Coeff:
    return {b: v for b, v in coeff.items() if abs(v) > tol}


def apply_exchange(coeff: Coeff, kernel: JumpKernel) -> Coeff:
    """Degree-preserving symmetric part: the s-walk exchange generator on
    subsets, (Ef)(B) = sum_{x in B, y not in B} s(y-x) [f(B\\x + y) - f(B)]."""
    moves = [(z, float(r)) for z, r in kernel.sym.items() if r != 0]
    cands = set(coeff)
    for b in coeff:
        for x in b:
            for z, _ in moves:
                y = (x[0] + z[0], x[1] + z[1])
                if y not in b:
                    cands.add(b - {x} | {y})
    out: Coeff = {}
    for b in cands:
        val = 0.0
        fb = coeff.get(b, 0.0)
        for x in b:
            for z, s in moves:
                y = (x[0] + z[0], x[1] + z[1])
                if y not in b:
                    val += s * (coeff.get(b - {x} | {y}, 0.0) - fb)
        if val != 0.0:
            out[frozenset(b)] = val
    return out


def apply_keep(coeff: Coeff, kernel: JumpKernel) -> Coeff:
    """Degree-preserving drift part.

    The lattice-wide diagonal term cancels exactly because the antisymmetric
    rates sum to zero, leaving only single-site moves weighted by a(y-x).
    """
    moves = [(z, float(r)) for z, r in kernel.anti.items() if r != 0]
    out: Coeff = {}
    for b, fb in coeff.items():
        # receiver B gets a(y-x) f(B_{x,y}); distribute from each source b
        for x in b:
            for z, a in moves:
                y = (x[0] + z[0], x[1] + z[1])
                if y not in b:
                    tgt = b - {x} | {y}
                    # b = tgt_{y,x}: the receiver sums a(x-y) f(b) at tgt
                    out[tgt] = out.get(tgt, 0.0) - a * fb
    return _clean(out)


def apply_raise(coeff: Coeff, kernel: JumpKernel) -> Coeff:
    """Degree-raising drift part: (Rf)(B) = sum_{x,y in B} a(y-x) f(B - y)."""
    anti = {z: float(r) for z, r in kernel.anti.items() if r != 0}
    out: Coeff = {}
    for b, fb in coeff.items():
        ys = set()
        for x in b:
            for z in anti:
                ys.add((x[0] + z[0], x[1] + z[1]))
        for y in ys - set(b):
            w = sum(anti.get((y[0] - x[0], y[1] - x[1]), 0.0) for x in b)
            if w != 0.0:
                tgt = b | {y}
                out[tgt] = out.get(tgt, 0.0) + w * fb
    return _clean(out)


def apply_lower(coeff: Coeff, kernel: JumpKernel) -> Coeff:
    """Degree-lowering drift part: (Df)(B) = sum_{x,y not in B} a(y-x) f(B + x),
    reduced to -sum_{x not in B} f(B + x) sum_{y in B} a(y - x)."""
    anti = {z: float(r) for z, r in kernel.anti.items() if r != 0}
    out: Coeff = {}
    for b, fb in coeff.items():
        for x in b:
            rest = b - {x}
            w = sum(anti.get((y[0] - x[0], y[1] - x[1]), 0.0) for y in rest)
            if w != 0.0:
                out[frozenset(rest)] = out.get(frozenset(rest), 0.0) - w * fb
    return _clean(out)


def apply_generator(coeff: Coeff, kernel: JumpKernel, rho: float) -> Coeff:
    """Full coefficient-side generator at density rho."""
    amp = 2.0 * math.sqrt(rho * (1.0 - rho))
    out: Coeff = dict(apply_exchange(coeff, kernel))
    parts = []
    if rho != 0.5:
        parts.append(((1.0 - 2.0 * rho), apply_keep(coeff, kernel)))
    parts.append((amp, apply_raise(coeff, kernel)))
    parts.append((-amp, apply_lower(coeff, kernel)))
    for scale, part in parts:
        for b, v in part.items():
            out[b] = out.get(b, 0.0) + scale * v
    return _clean(out)


@dataclass(frozen=True)
class DualityBasis:
    """Centered-occupation product basis on a rectangular lattice window."""

    rho: float
    n_max: int = 3
    window: tuple[int, int, int, int] | None = None  # x0, x1, y0, y1 inclusive

    def guard_check(self, coeff: Coeff, kernel: JumpKernel) -> None:
        if degree(coeff) > self.n_max:
            raise DegreeCapExceeded(f"degree {degree(coeff)} exceeds cap {self.n_max}")
        if self.window is None:
            return
        r1, r2 = kernel.range
        x0, x1, y0, y1 = self.window
        for b in coeff:
            for (x, y) in b:
                if not (x0 + r1 <= x <= x1 - r1 and y0 + r2 <= y <= y1 - r2):
                    raise WrapViolation(
                        f"site {(x, y)} within kernel range of window edge")


@dataclass
class DualityImage:
    exchange: Coeff
    keep: Coeff
    raised: Coeff
    lowered: Coeff

    def combined(self, rho: float) -> Coeff:
        amp = 2.0 * math.sqrt(rho * (1.0 - rho))
        out: Coeff = dict(self.exchange)
        for scale, part in (((1.0 - 2.0 * rho), self.keep), (amp, self.raised),
                            (-amp, self.lowered)):
            for b, v in part.items():
                out[b] = out.get(b, 0.0) + scale * v
        return _clean(out)


def duality_apply(basis: DualityBasis, kernel: JumpKernel, coeff: Coeff) -> DualityImage:
    """All four coefficient-operator images of ``coeff``, after guard checks.

    Degree bookkeeping holds by construction: the exchange and drift-keep
    parts preserve subset size, the raised part adds one site, the lowered
    part removes one.
    """
    basis.guard_check(coeff, kernel)
    return DualityImage(
        exchange=apply_exchange(coeff, kernel),
        keep=apply_keep(coeff, kernel),
        raised=apply_raise(coeff, kernel),
        lowered=apply_lower(coeff, kernel),
    )


# ---------------------------------------------------------------------------
# synthesis and reconstruction against brute-force enumeration


def omega_matrix(space: StateSpace, rho: float) -> np.ndarray:
    """Centered, normalized occupation columns (states x sites)."""
    occ = space.occupancy_matrix().astype(np.float64)
    return (occ - rho) / math.sqrt(rho * (1.0 - rho))


def synthesize(coeff: Coeff, omega: np.ndarray, site_index: dict) -> np.ndarray:
    """Function values of sum_B coeff(B) * prod_{x in B} omega_x."""
    out = np.zeros(omega.shape[0])
    for b, v in coeff.items():
        col = np.ones(omega.shape[0])
        for s in b:
            col *= omega[:, site_index[s]]
        out += v * col
    return out


def expand(values: np.ndarray, weights: np.ndarray, omega: np.ndarray,
           sites: list, max_degree: int) -> Coeff:
    """Expansion coefficients <values, Psi_B> over subsets up to max_degree."""
    out: Coeff = {}
    wv = weights * values
    n = len(sites)
    for d in range(max_degree + 1):
        for idxs in combinations(range(n), d):
            col = np.ones(omega.shape[0])
            for i in idxs:
                col *= omega[:, i]
            c = float(np.dot(wv, col))
            if abs(c) > 0:
                out[frozenset(sites[i] for i in idxs)] = c
    return out


def reconstruction_window(coeff: Coeff, kernel: JumpKernel) -> list[Site]:
    """Bounding box of the support inflated by one kernel range."""
    pts = [s for b in coeff for s in b]
    if not pts:
        pts = [(0, 0)]
    r1, r2 = kernel.range
    x0 = min(p[0] for p in pts) - r1
    x1 = max(p[0] for p in pts) + r1
    y0 = min(p[1] for p in pts) - r2
    y1 = max(p[1] for p in pts) + r2
    return [(x, y) for y in range(y0, y1 + 1) for x in range(x0, x1 + 1)]


def verify_duality_reconstruction(kernel: JumpKernel, rho: float, coeff: Coeff,
                                  cap: int = 2 ** 20) -> float:
    """Max-abs residual between the coefficient-side generator image and the
    brute-force expansion of the configuration-side generator action.

    The configuration side enumerates every occupation of a window covering
    the support plus one kernel range and applies the exchange generator
    directly; bonds outside the window cannot change the synthesized
    observable, so the two routes must agree to rounding error.
    """
    sites = reconstruction_window(coeff, kernel)
    space = window_space(sites, kernel, rho, cap=cap)
    site_index = {s: i for i, s in enumerate(sites)}
    omega = omega_matrix(space, rho)
    f = synthesize(coeff, omega, site_index)

    occ = space.occupancy_matrix().astype(np.float64)
    lf = np.zeros_like(f)
    for i, j, r in zip(space.bond_src, space.bond_dst, space.bond_rate):
        act = (occ[:, i] == 1) & (occ[:, j] == 0)
        if not np.any(act):
            continue
        omega_sw = omega.copy()
        omega_sw[:, [i, j]] = omega[:, [j, i]]
        f_sw = synthesize(coeff, omega_sw, site_index)
        lf += r * act * (f_sw - f)

    out_deg = min(degree(coeff) + 1, len(sites))
    enum = expand(lf, space.weights, omega, sites, out_deg)
    image = apply_generator(coeff, kernel, rho)
    for b in image:
        for s in b:
            if s not in site_index:
                raise WrapViolation(f"image site {s} escapes the window")
    keys = set(enum) | set(image)
    return max(abs(enum.get(b, 0.0) - image.get(b, 0.0)) for b in keys) if keys else 0.0
