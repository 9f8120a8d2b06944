"""Fourier-side variational lower bounds for the resolvent of the drift case.

Everything here lives on the unit torus of frequencies.  The degree-one
variational bound reduces to a two-dimensional integral whose denominator
contains two partially averaged Green kernels; their innermost average has
the Poisson-kernel form ``int_0^1 dz / (alpha - beta cos(pi z))`` and is
evaluated in closed form, which leaves one numerical axis per kernel and
keeps the nested quadrature cheap even at lambda = 1e-8.

Quadrature grids are graded geometrically toward the corners of the unit
square, where the integrands develop their sqrt(lambda)-scale peaks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import replica_rng, stream_seed

Site = tuple[int, int]


class RepresentationMismatch(RuntimeError):
    """The two algebraic forms of the pair symbol disagree beyond rounding."""


class QuadratureNonConvergent(RuntimeError):
    pass


class InsufficientGrid(ValueError):
    pass


@dataclass(frozen=True)
class SymbolParams:
    """Nearest-neighbor symbol data: symmetric rates b1, b2 on the two axes
    and antisymmetric rates a1 (nonzero) and a2."""

    b1: float
    b2: float
    a1: float
    a2: float

    def __post_init__(self):
        if self.b1 <= 0 or self.b2 <= 0:
            raise ValueError("symmetric rates must be positive")
        if self.a1 == 0:
            raise ValueError("first-axis antisymmetric rate must be nonzero")

    @property
    def bbar(self) -> float:
        return 2.0 * min(self.b1, self.b2)

    @property
    def amplitude(self) -> float:
        """Coupling constant 2(b1^2+b2^2) + 16(a1^2+a2^2) of the optimized
        denominator."""
        return 2.0 * (self.b1 ** 2 + self.b2 ** 2) + 16.0 * (self.a1 ** 2 + self.a2 ** 2)

    @classmethod
    def from_kernel(cls, kernel) -> "SymbolParams":
        r1, r2 = kernel.range
        if (r1, r2) != (1, 1) and not (r1 <= 1 and r2 <= 1):
            raise ValueError("symbol parameters require a nearest-neighbor kernel")
        return cls(b1=float(kernel.b1), b2=float(kernel.b2),
                   a1=float(kernel.a1), a2=float(kernel.a2))


# ---------------------------------------------------------------------------
# symbols


def walk_symbol(u1, u2, sym_rates) -> np.ndarray:
    """Symbol of the symmetrized walk, ``2 sum_z s(z) sin^2(pi u.z)``.

    ``sym_rates`` is a kernel (its symmetric part is used) or a full rate
    table containing both z and -z entries.
    """
    table = sym_rates.sym if hasattr(sym_rates, "sym") else sym_rates
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    out = np.zeros(np.broadcast(u1, u2).shape)
    for (z1, z2), s in table.items():
        out += 2.0 * float(s) * np.sin(np.pi * (u1 * z1 + u2 * z2)) ** 2
    return out


def pair_symbol(u, v, w, z, params: SymbolParams) -> np.ndarray:
    """Two-walker symbol in rotated coordinates, half-angle form."""
    u, v, w, z = (np.asarray(a, dtype=np.float64) for a in (u, v, w, z))
    return (2.0 * params.b1 * np.sin(np.pi * (u + v) / 2) ** 2
            + 2.0 * params.b2 * np.sin(np.pi * (w + z) / 2) ** 2
            + 2.0 * params.b1 * np.sin(np.pi * (u - v) / 2) ** 2
            + 2.0 * params.b2 * np.sin(np.pi * (w - z) / 2) ** 2)


def pair_symbol_product(u, v, w, z, params: SymbolParams) -> np.ndarray:
    """Same symbol in the product form (separated half-angle factors)."""
    u, v, w, z = (np.asarray(a, dtype=np.float64) for a in (u, v, w, z))
    su, cu = np.sin(np.pi * u / 2) ** 2, np.cos(np.pi * u / 2) ** 2
    sv, cv = np.sin(np.pi * v / 2) ** 2, np.cos(np.pi * v / 2) ** 2
    sw, cw = np.sin(np.pi * w / 2) ** 2, np.cos(np.pi * w / 2) ** 2
    sz, cz = np.sin(np.pi * z / 2) ** 2, np.cos(np.pi * z / 2) ** 2
    return (4.0 * params.b1 * (su * cv + sv * cu)
            + 4.0 * params.b2 * (sw * cz + sz * cw))


def drift_numerator(u, v, w, z, params: SymbolParams) -> np.ndarray:
    """Squared antisymmetric numerator in rotated coordinates."""
    u, v, w, z = (np.asarray(a, dtype=np.float64) for a in (u, v, w, z))
    x = 2.0 * params.a1 * np.sin(np.pi * u) * np.cos(np.pi * v)
    y = 2.0 * params.a2 * np.sin(np.pi * w) * np.cos(np.pi * z)
    return (x + y) ** 2


def drift_numerator_bound(u, v, w, z, params: SymbolParams) -> np.ndarray:
    """Cross-term-free upper bound of the numerator (arithmetic-geometric)."""
    u, v, w, z = (np.asarray(a, dtype=np.float64) for a in (u, v, w, z))
    return (8.0 * params.a1 ** 2 * np.sin(np.pi * u) ** 2 * np.cos(np.pi * v) ** 2
            + 8.0 * params.a2 ** 2 * np.sin(np.pi * w) ** 2 * np.cos(np.pi * z) ** 2)


def pair_symbol_checked(u, v, w, z, params: SymbolParams,
                        tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Pair symbol and numerator, with the two symbol forms cross-checked."""
    g1 = pair_symbol(u, v, w, z, params)
    g2 = pair_symbol_product(u, v, w, z, params)
    err = float(np.max(np.abs(g1 - g2)))
    if err > tol:
        raise RepresentationMismatch(f"pair symbol forms disagree by {err:.3e}")
    return g1, drift_numerator(u, v, w, z, params)


def _gamma_axis(b: float, x, y) -> np.ndarray:
    """One-pair component of the symbol, reduced form 2b(1 - cos cos)."""
    return 2.0 * b * (1.0 - np.cos(np.pi * x) * np.cos(np.pi * y))


# ---------------------------------------------------------------------------
# quadrature grids


def _graded_edges(lam: float, coarsest: float = 1.0 / 16) -> np.ndarray:
    """Panel edges on [0,1], geometrically refined toward both endpoints down
    to the sqrt(lambda) peak scale."""
    h = min(math.sqrt(lam), coarsest)
    left = [0.0]
    x = h
    while x < 0.5:
        left.append(x)
        x *= 2.0
    left.append(0.5)
    right = [1.0 - e for e in reversed(left[:-1])]
    return np.array(left + right)


def _gl_panels(edges: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    a = edges[:-1]
    b = edges[1:]
    half = 0.5 * (b - a)
    nodes = (0.5 * (a + b)[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


# ---------------------------------------------------------------------------
# averaged Green kernels


def _avg_inv(gap: np.ndarray, alpha: np.ndarray, absbeta) -> np.ndarray:
    """1 / sqrt(alpha^2 - beta^2) with the cancellation-free gap = alpha-|beta|."""
    return 1.0 / np.sqrt(gap * (alpha + absbeta))


def green_kernel_grid(lam: float, params: SymbolParams, u_nodes: np.ndarray,
                      w_nodes: np.ndarray, order: int = 12
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Both averaged Green kernels on the tensor grid u_nodes x w_nodes.

    The first kernel is ``int cos^2(pi v) dv dz / (lam + symbol)`` with the z
    average done in closed form; the second swaps the roles of the pairs.
    """
    b1, b2 = params.b1, params.b2
    vn, vw = _gl_panels(_graded_edges(lam), order)
    cv2 = vw * np.cos(np.pi * vn) ** 2

    # first kernel: alpha = lam + gamma1(u, v) + 2 b2, |beta| = 2 b2 |cos(pi w)|
    alpha1 = lam + _gamma_axis(b1, u_nodes[:, None], vn[None, :]) + 2.0 * b2
    f1 = np.empty((len(u_nodes), len(w_nodes)))
    for j, wj in enumerate(w_nodes):
        ab = 2.0 * b2 * abs(math.cos(math.pi * wj))
        f1[:, j] = _avg_inv(alpha1 - ab, alpha1, ab) @ cv2

    # second kernel: alpha = lam + gamma2(w, z) + 2 b1, |beta| = 2 b1 |cos(pi u)|
    alpha2 = lam + _gamma_axis(b2, w_nodes[:, None], vn[None, :]) + 2.0 * b1
    f2 = np.empty((len(u_nodes), len(w_nodes)))
    for i, ui in enumerate(u_nodes):
        ab = 2.0 * b1 * abs(math.cos(math.pi * ui))
        f2[i, :] = _avg_inv(alpha2 - ab, alpha2, ab) @ cv2
    return f1, f2


def green_kernel_averages(u, w, lam: float, params: SymbolParams,
                          order: int = 12) -> tuple[np.ndarray, np.ndarray]:
    """Averaged Green kernels at scalar or 1D-array (u, w) pairs."""
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    if u.shape != w.shape:
        raise ValueError("u and w must have matching shapes")
    f1 = np.empty(u.shape)
    f2 = np.empty(u.shape)
    for ix in range(u.size):
        g1, g2 = green_kernel_grid(lam, params, u[ix:ix + 1], w[ix:ix + 1], order)
        f1[ix] = g1[0, 0]
        f2[ix] = g2[0, 0]
    if f1.size == 1:
        return float(f1[0]), float(f2[0])
    return f1, f2


# ---------------------------------------------------------------------------
# variational lower bounds


def _bound_on_grid(lam: float, params: SymbolParams, axis: bool,
                   order: int) -> float:
    nodes, weights = _gl_panels(_graded_edges(lam), order)
    f1, f2 = green_kernel_grid(lam, params, nodes, nodes, order)
    s2 = np.sin(np.pi * nodes) ** 2
    sigma = s2[:, None] + s2[None, :]
    c7 = params.amplitude
    if axis:
        denom = lam + c7 * sigma + c7 * s2[:, None] * f1
    else:
        denom = lam + c7 * sigma * (1.0 + f1 + f2)
    return 0.25 * float(weights @ (1.0 / denom) @ weights)


def resolvent_lower_bound(lam: float, params: SymbolParams, order: int = 12,
                          coarse_order: int = 8) -> tuple[float, float]:
    """Optimized degree-one lower bound
    ``1/4 int du dw / (lam + C (sin^2 + sin^2)(1 + K1 + K2))`` with a
    two-resolution error estimate."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    fine = _bound_on_grid(lam, params, axis=False, order=order)
    coarse = _bound_on_grid(lam, params, axis=False, order=coarse_order)
    return fine, abs(fine - coarse)


def resolvent_lower_bound_axis(lam: float, params: SymbolParams, order: int = 12,
                               coarse_order: int = 8) -> tuple[float, float]:
    """Axis-drift variant: only the first-axis numerator survives, so the
    denominator carries ``C sin^2(pi u) K1`` instead of the full inflation."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    if params.a2 != 0:
        raise ValueError("axis bound requires a2 = 0")
    fine = _bound_on_grid(lam, params, axis=True, order=order)
    coarse = _bound_on_grid(lam, params, axis=True, order=coarse_order)
    return fine, abs(fine - coarse)


@dataclass
class BoundCurve:
    """Lower-bound values over a lambda grid with quadrature error estimates."""

    lam: np.ndarray
    general: np.ndarray
    general_err: np.ndarray
    axis: np.ndarray | None = None
    axis_err: np.ndarray | None = None
    params: SymbolParams | None = None
    meta: dict = field(default_factory=dict)


def bound_curve(lams, params: SymbolParams, include_axis: bool | None = None,
                order: int = 12, rel_tol: float = 0.01) -> BoundCurve:
    """Evaluate both bounds over a lambda grid; error above ``rel_tol`` of the
    value at any point raises ``QuadratureNonConvergent``."""
    lams = np.asarray(sorted(lams, reverse=True), dtype=np.float64)
    if include_axis is None:
        include_axis = params.a2 == 0
    gen = np.empty(len(lams))
    gen_err = np.empty(len(lams))
    ax = np.empty(len(lams)) if include_axis else None
    ax_err = np.empty(len(lams)) if include_axis else None
    for i, lam in enumerate(lams):
        gen[i], gen_err[i] = resolvent_lower_bound(lam, params, order=order)
        if gen_err[i] > rel_tol * gen[i]:
            raise QuadratureNonConvergent(
                f"general bound error {gen_err[i]:.2e} at lambda {lam:g}")
        if include_axis:
            ax[i], ax_err[i] = resolvent_lower_bound_axis(lam, params, order=order)
            if ax_err[i] > rel_tol * ax[i]:
                raise QuadratureNonConvergent(
                    f"axis bound error {ax_err[i]:.2e} at lambda {lam:g}")
    return BoundCurve(lam=lams, general=gen, general_err=gen_err,
                      axis=ax, axis_err=ax_err, params=params)


# ---------------------------------------------------------------------------
# envelope constant for the kernel sum


def envelope_shortfall(params: SymbolParams, lam: float, n_grid: int = 24,
                       order: int = 12) -> float:
    """Max of (K1 + K2) - (pi / (2 bbar)) |log(lam + bbar (u^2 + w^2))| over a
    grid of (u, w) in (0, 1/2]^2; the max over the smallest lambda of interest
    is an admissible additive envelope constant."""
    g = np.linspace(0.0, 0.5, n_grid + 1)[1:]
    uu, ww = np.meshgrid(g, g, indexing="ij")
    f1, f2 = green_kernel_grid(lam, params, g, g, order=order)
    log_part = (math.pi / (2.0 * params.bbar)) * np.abs(
        np.log(lam + params.bbar * (uu ** 2 + ww ** 2)))
    return float(np.max(f1 + f2 - log_part))


# ---------------------------------------------------------------------------
# divergence-rate fits


_DIVERGENCE_MODELS = {
    "log_log": lambda al: np.log(al),  # al = |log lambda|
    "sqrt_log": lambda al: al ** 0.5,
    "log_2_3": lambda al: al ** (2.0 / 3.0),
    "log": lambda al: -al,
}


@dataclass
class DivergenceModelFit:
    name: str
    c0: float
    c1: float
    c1_halfwidth: float  # 95% confidence half-width
    residual: float  # RMS residual of value against c0 + c1 g
    min_ratio: float | None  # min of value/g over the small-lambda tail
    ratio_spread: float | None  # max/min of value/g over the whole grid


@dataclass
class DivergenceFit:
    models: dict
    best: str

    def report(self) -> str:
        lines = []
        for name, m in self.models.items():
            tag = " <- best" if name == self.best else ""
            lines.append(
                f"{name:10s} c0 = {m.c0:+.5g}  c1 = {m.c1:+.5g} "
                f"+/- {m.c1_halfwidth:.2g}  rms = {m.residual:.3g}"
                + (f"  min value/g = {m.min_ratio:.4g}" if m.min_ratio is not None else "")
                + (f"  spread = {m.ratio_spread:.3g}" if m.ratio_spread is not None else "")
                + tag)
        return "\n".join(lines)


def fit_divergence(lams, values, min_points: int = 6,
                   min_decades: float = 4.0) -> DivergenceFit:
    """Least-squares fits of value(lambda) = c0 + c1 g(lambda) for the four
    candidate growth laws, with an empirical check of the positive-liminf
    statement (the minimum of value/g over the small-lambda half)."""
    lams = np.asarray(lams, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(lams) < min_points:
        raise InsufficientGrid(f"need at least {min_points} lambda points")
    span = np.log10(lams.max() / lams.min())
    if span < min_decades:
        raise InsufficientGrid(f"grid spans {span:.2f} decades < {min_decades}")
    order = np.argsort(lams)
    lams, values = lams[order], values[order]
    al = np.abs(np.log(lams))
    tail = lams <= np.median(lams)
    models = {}
    for name, gfun in _DIVERGENCE_MODELS.items():
        g = gfun(al)
        X = np.column_stack([np.ones_like(g), g])
        coef, *_ = np.linalg.lstsq(X, values, rcond=None)
        resid = values - X @ coef
        dof = max(len(values) - 2, 1)
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.inv(X.T @ X)
        good = g > 0
        ratios = values[good] / g[good]
        min_ratio = float(np.min(ratios[tail[good]])) if np.any(good & tail) else None
        spread = float(np.max(ratios) / np.min(ratios)) if np.any(good) and np.min(ratios) > 0 else None
        models[name] = DivergenceModelFit(
            name=name, c0=float(coef[0]), c1=float(coef[1]),
            c1_halfwidth=1.96 * math.sqrt(max(cov[1, 1], 0.0)),
            residual=math.sqrt(float(resid @ resid) / len(values)),
            min_ratio=min_ratio, ratio_spread=spread)
    best = min(models, key=lambda n: models[n].residual)
    return DivergenceFit(models=models, best=best)


# ---------------------------------------------------------------------------
# finite-support transform identity for the degree-raising part


def lattice_transform(phi: dict[Site, float], q1, q2) -> np.ndarray:
    """Fourier transform ``sum_x phi(x) exp(2 pi i x.q)`` of a finite table."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    out = np.zeros(np.broadcast(q1, q2).shape, dtype=np.complex128)
    for (x1, x2), v in phi.items():
        out = out + v * np.exp(2j * np.pi * (q1 * x1 + q2 * x2))
    return out


def degree_raising_pairs(phi: dict[Site, float], a1: float, a2: float
                         ) -> dict[tuple[Site, Site], float]:
    """Pair function a(y-x) (phi(x) - phi(y)) on ordered nearest-neighbor
    pairs touching the support of phi."""
    anti = {(1, 0): a1, (-1, 0): -a1, (0, 1): a2, (0, -1): -a2}
    sites = set(phi)
    for (x1, x2) in list(sites):
        sites |= {(x1 + z1, x2 + z2) for (z1, z2) in anti}
    out: dict[tuple[Site, Site], float] = {}
    for x in sites:
        for (z1, z2), a in anti.items():
            if a == 0.0:
                continue
            y = (x[0] + z1, x[1] + z2)
            val = a * (phi.get(x, 0.0) - phi.get(y, 0.0))
            if val != 0.0:
                out[(x, y)] = val
    return out


def degree_raising_transform_residual(phi: dict[Site, float], a1: float,
                                      a2: float, grid_n: int = 8) -> float:
    """Max-abs difference between the summed pair transform and its closed
    form ``(i/sqrt 2) phihat(s+t) [2a1 sin(2 pi s1) + ... + 2a2 sin(2 pi t2)]``
    on a grid_n^4 frequency grid."""
    pairs = degree_raising_pairs(phi, a1, a2)
    grid = np.arange(grid_n) / grid_n
    s1, s2, t1, t2 = np.meshgrid(grid, grid, grid, grid, indexing="ij")
    s1, s2, t1, t2 = (a.ravel() for a in (s1, s2, t1, t2))

    direct = np.zeros(s1.shape, dtype=np.complex128)
    for (x, y), v in pairs.items():
        phase = (x[0] * s1 + x[1] * s2 + y[0] * t1 + y[1] * t2)
        direct += v * np.exp(2j * np.pi * phase)
    direct /= math.sqrt(2.0)

    bracket = (2 * a1 * np.sin(2 * np.pi * s1) + 2 * a2 * np.sin(2 * np.pi * s2)
               + 2 * a1 * np.sin(2 * np.pi * t1) + 2 * a2 * np.sin(2 * np.pi * t2))
    closed = (1j / math.sqrt(2.0)) * lattice_transform(phi, s1 + t1, s2 + t2) * bracket
    return float(np.max(np.abs(direct - closed)))


# ---------------------------------------------------------------------------
# diamond-region reduction check


def _bound_integrand(u, v, w, z, lam: float, params: SymbolParams,
                     phi: dict[Site, float]) -> np.ndarray:
    num = drift_numerator_bound(u, v, w, z, params)
    gam = pair_symbol(u, v, w, z, params)
    return num / (lam + gam) * np.abs(lattice_transform(phi, u, w)) ** 2


def diamond_reduction_check(phi: dict[Site, float], params: SymbolParams,
                            lam: float, n_samples: int = 200_000,
                            seed: int = 0, order: int = 24
                            ) -> tuple[float, float, float]:
    """Monte Carlo integral over the squared diamond domain versus four times
    the reduced unit-hypercube integral.

    Points uniform on the diamond with vertices (0,0), (1,-1), (1,1), (2,0)
    are drawn as (s+t, s-t) with (s,t) uniform on the unit square; the domain
    has area 2 per pair.  Returns (mc_value, mc_se, reduced_value).
    """
    rng = replica_rng(stream_seed(seed, "diamond"))
    s = rng.random((n_samples, 4))
    u = s[:, 0] + s[:, 2]
    v = s[:, 0] - s[:, 2]
    w = s[:, 1] + s[:, 3]
    z = s[:, 1] - s[:, 3]
    vals = _bound_integrand(u, v, w, z, lam, params, phi)
    volume = 4.0
    mc = volume * float(np.mean(vals))
    se = volume * float(np.std(vals, ddof=1) / math.sqrt(n_samples))

    x, wt = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    wt = 0.5 * wt
    uu, vv, ww, zz = np.meshgrid(x, x, x, x, indexing="ij")
    g = _bound_integrand(uu, vv, ww, zz, lam, params, phi)
    reduced = 4.0 * float(np.einsum("ijkl,i,j,k,l->", g, wt, wt, wt, wt))
    return mc, se, reduced
