"""Exact generator matrices and spectral oracles on enumerated state spaces.

Three flavors of state space are supported: the fixed-particle-number sector
of a torus (uniform stationary measure), the full product space of a torus
(Bernoulli weights, mixing all sectors), and an open rectangular window with
no wrap-around bonds.  All adjoints are taken in the weighted inner product
``<f, g> = sum_x w(x) f(x) g(x)`` of the stationary measure, in which the
exchange generator with reversed rates is the adjoint of the original one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
import scipy.integrate
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg
import scipy.special

from .kernels import JumpKernel, TorusGeometry

DENSE_CUTOFF = 2000


class StateSpaceTooLarge(ValueError):
    pass


class SolverFailure(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class StateSpace:
    """Enumerated configurations with a stationary measure and bond table."""

    states: np.ndarray  # sorted uint64 bitmasks, bit i <-> site i
    n_sites: int
    weights: np.ndarray  # stationary measure, sums to 1
    bond_src: np.ndarray
    bond_dst: np.ndarray
    bond_rate: np.ndarray
    particle_number: int | None = None
    sites: list | None = None  # lattice coordinates per bit, window spaces only
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.states)

    def lookup(self, masks: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.states, masks)
        if np.any(self.states[idx] != masks):
            raise KeyError("state not in enumerated space")
        return idx

    def occupancy_matrix(self) -> np.ndarray:
        """(size, n_sites) uint8 matrix of occupations."""
        bits = np.arange(self.n_sites, dtype=np.uint64)
        return ((self.states[:, None] >> bits[None, :]) & np.uint64(1)).astype(np.uint8)

    def occupation_vector(self, site: int) -> np.ndarray:
        return ((self.states >> np.uint64(site)) & np.uint64(1)).astype(np.float64)


def _torus_bonds(geometry: TorusGeometry, kernel: JumpKernel):
    geometry.check_kernel(kernel)
    zvecs, rates = kernel.vectors()
    nbr = geometry.shift_table(zvecs)
    n = geometry.n_sites
    src = np.tile(np.arange(n, dtype=np.int64), len(zvecs))
    dst = nbr.reshape(-1).astype(np.int64)
    rate = np.repeat(rates, n)
    return src, dst, rate


def sector_space(geometry: TorusGeometry, kernel: JumpKernel, k: int,
                 cap: int = 50_000) -> StateSpace:
    """All configurations of the torus with exactly k particles."""
    n = geometry.n_sites
    size = int(scipy.special.comb(n, k, exact=True))
    if size > cap:
        raise StateSpaceTooLarge(f"C({n},{k}) = {size} exceeds cap {cap}")
    masks = np.array(
        sorted(sum(1 << i for i in combo) for combo in combinations(range(n), k)),
        dtype=np.uint64,
    )
    weights = np.full(size, 1.0 / size)
    src, dst, rate = _torus_bonds(geometry, kernel)
    return StateSpace(states=masks, n_sites=n, weights=weights,
                      bond_src=src, bond_dst=dst, bond_rate=rate,
                      particle_number=k, meta={"geometry": (geometry.L1, geometry.L2)})


def product_space(geometry: TorusGeometry, kernel: JumpKernel, rho: float,
                  cap: int = 50_000) -> StateSpace:
    """All 2^N configurations of the torus, weighted by the product measure."""
    n = geometry.n_sites
    if 2 ** n > cap:
        raise StateSpaceTooLarge(f"2^{n} exceeds cap {cap}")
    masks = np.arange(2 ** n, dtype=np.uint64)
    pop = np.bitwise_count(masks).astype(np.float64)
    if rho in (0.0, 1.0):
        weights = np.where(pop == (n if rho == 1.0 else 0), 1.0, 0.0)
    else:
        weights = rho ** pop * (1.0 - rho) ** (n - pop)
    src, dst, rate = _torus_bonds(geometry, kernel)
    return StateSpace(states=masks, n_sites=n, weights=weights,
                      bond_src=src, bond_dst=dst, bond_rate=rate,
                      meta={"geometry": (geometry.L1, geometry.L2), "rho": rho})


def window_space(sites: list[tuple[int, int]], kernel: JumpKernel, rho: float,
                 cap: int = 2 ** 20) -> StateSpace:
    """Product space over an explicit site set with open boundaries.

    Only bonds whose two endpoints both lie in ``sites`` are kept, so the
    dynamics agree with the infinite-lattice generator for observables whose
    support stays a kernel-range away from the edge.
    """
    n = len(sites)
    if 2 ** n > cap:
        raise StateSpaceTooLarge(f"2^{n} exceeds cap {cap}")
    index = {s: i for i, s in enumerate(sites)}
    if len(index) != n:
        raise ValueError("duplicate sites in window")
    src, dst, rate = [], [], []
    for (x, y), i in index.items():
        for z, r in kernel.rates.items():
            j = index.get((x + z[0], y + z[1]))
            if j is not None:
                src.append(i)
                dst.append(j)
                rate.append(float(r))
    masks = np.arange(2 ** n, dtype=np.uint64)
    pop = np.bitwise_count(masks).astype(np.float64)
    weights = rho ** pop * (1.0 - rho) ** (n - pop)
    return StateSpace(states=masks, n_sites=n, weights=weights,
                      bond_src=np.array(src, dtype=np.int64),
                      bond_dst=np.array(dst, dtype=np.int64),
                      bond_rate=np.array(rate, dtype=np.float64),
                      sites=list(sites), meta={"window": True, "rho": rho})


# ---------------------------------------------------------------------------
# operators


@dataclass
class OperatorSet:
    """Generator, its adjoint and symmetric/antisymmetric parts, all sparse."""

    space: StateSpace
    L: sp.csr_matrix
    Lstar: sp.csr_matrix
    S: sp.csr_matrix
    A: sp.csr_matrix

    @property
    def weights(self) -> np.ndarray:
        return self.space.weights

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.dot(self.weights * f, g))

    def adjoint_matrix(self, M: sp.spmatrix) -> sp.csr_matrix:
        w = self.weights
        safe = np.where(w > 0, w, 1.0)
        return (sp.diags(1.0 / safe) @ M.T.tocsr() @ sp.diags(w)).tocsr()


def generator_matrix(space: StateSpace) -> sp.csr_matrix:
    """Exchange generator: rate p(z) moves a particle from i to i+z when the
    target is empty; acts on functions, rows sum to zero."""
    states = space.states
    rows, cols, vals = [], [], []
    for i, j, r in zip(space.bond_src, space.bond_dst, space.bond_rate):
        if i == j:
            continue
        occ_i = (states >> np.uint64(i)) & np.uint64(1)
        occ_j = (states >> np.uint64(j)) & np.uint64(1)
        act = np.nonzero((occ_i == 1) & (occ_j == 0))[0]
        if len(act) == 0:
            continue
        flip = np.uint64((1 << int(i)) | (1 << int(j)))
        tgt = space.lookup(states[act] ^ flip)
        rows.append(act)
        cols.append(tgt)
        vals.append(np.full(len(act), r))
        rows.append(act)
        cols.append(act)
        vals.append(np.full(len(act), -r))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.coo_matrix((vals, (rows, cols)), shape=(space.size, space.size)).tocsr()


def build_operators(space: StateSpace) -> OperatorSet:
    L = generator_matrix(space)
    w = space.weights
    safe = np.where(w > 0, w, 1.0)
    Lstar = (sp.diags(1.0 / safe) @ L.T.tocsr() @ sp.diags(w)).tocsr()
    S = ((L + Lstar) * 0.5).tocsr()
    A = ((L - Lstar) * 0.5).tocsr()
    return OperatorSet(space=space, L=L, Lstar=Lstar, S=S, A=A)


def operator_invariants(ops: OperatorSet) -> dict:
    """Structural residuals: generator rows, weighted self-adjointness of S,
    weighted antisymmetry of A, and nonpositivity of S."""
    w = ops.weights
    D = sp.diags(w)
    row = float(np.max(np.abs(ops.L @ np.ones(ops.space.size))))
    sym = float(np.max(np.abs((D @ ops.S - ops.S.T @ D).toarray())))
    anti = float(np.max(np.abs((D @ ops.A + ops.A.T @ D).toarray())))
    sq = np.sqrt(w)
    safe = np.where(sq > 0, sq, 1.0)
    M = (ops.S.toarray() * sq[None, :]) / safe[:, None]
    M = 0.5 * (M + M.T)
    top = float(np.max(scipy.linalg.eigvalsh(M)))
    return {"row_sum": row, "S_selfadjoint": sym, "A_antisymmetry": anti,
            "S_top_eigenvalue": top}


def centered_occupation(space: StateSpace, rho: float, site: int = 0) -> np.ndarray:
    return space.occupation_vector(site) - rho


def _solve(M: np.ndarray | sp.spmatrix, rhs: np.ndarray) -> np.ndarray:
    n = rhs.shape[0]
    if n <= DENSE_CUTOFF:
        Md = M.toarray() if sp.issparse(M) else M
        return np.linalg.solve(Md, rhs)
    return scipy.sparse.linalg.spsolve(sp.csc_matrix(M), rhs)


@dataclass
class ResolventValue:
    value: float
    sym_value: float
    residual: float


def resolvent_form(ops: OperatorSet, f: np.ndarray, lam: float,
                   tol: float = 1e-8) -> ResolventValue:
    """<f, (lam - L)^{-1} f> by direct solve, plus the symmetric-part value
    <f, (lam - S)^{-1} f>."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    eye = sp.identity(ops.space.size, format="csr")
    ML = (lam * eye - ops.L).tocsr()
    MS = (lam * eye - ops.S).tocsr()
    x = _solve(ML, f)
    y = _solve(MS, f)
    res = max(float(np.max(np.abs(ML @ x - f))), float(np.max(np.abs(MS @ y - f))))
    if res > tol * max(1.0, float(np.max(np.abs(f)))):
        raise SolverFailure("resolvent solve did not converge", res)
    return ResolventValue(value=ops.inner(f, x), sym_value=ops.inner(f, y),
                          residual=res)


def verify_variational_identity(ops: OperatorSet, lam: float) -> float:
    """Residual of the factorization of the symmetrized resolvent.

    The symmetrization (in the stationary inner product) of ``(lam - L)^{-1}``
    has inverse ``(lam - S) + A* (lam - S)^{-1} A``; on a finite space both
    sides are computable directly and must be mutual inverses.
    """
    n = ops.space.size
    if n > DENSE_CUTOFF:
        raise StateSpaceTooLarge("variational identity check is dense-only")
    eye = np.eye(n)
    R = np.linalg.inv(lam * eye - ops.L.toarray())
    Rstar = ops.adjoint_matrix(sp.csr_matrix(R)).toarray()
    H = 0.5 * (R + Rstar)
    A = ops.A.toarray()
    Astar = ops.adjoint_matrix(ops.A).toarray()
    MS = lam * eye - ops.S.toarray()
    M = MS + Astar @ np.linalg.solve(MS, A)
    return float(np.max(np.abs(H @ M - eye)))


def h_norms(ops: OperatorSet, g: np.ndarray, lam: float) -> tuple[float, float]:
    """Regularized Dirichlet norm ``<g,(lam-S)g>`` and its dual
    ``<g,(lam-S)^{-1}g>`` (the attained supremum on a finite space)."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    eye = sp.identity(ops.space.size, format="csr")
    MS = (lam * eye - ops.S).tocsr()
    h1 = ops.inner(g, MS @ g)
    x = _solve(MS, g)
    res = float(np.max(np.abs(MS @ x - g)))
    if res > 1e-8 * max(1.0, float(np.max(np.abs(g)))):
        raise SolverFailure("dual-norm solve did not converge", res)
    hm1 = ops.inner(g, x)
    return h1, hm1


# ---------------------------------------------------------------------------
# spectral oracles


@dataclass
class SymmetricSpectrum:
    """Eigensystem of -S in the weighted space (similarity-transformed)."""

    mu: np.ndarray  # eigenvalues of -S, >= 0
    U: np.ndarray  # orthonormal eigenvectors of the symmetrized matrix
    sqrt_w: np.ndarray

    def components(self, f: np.ndarray) -> np.ndarray:
        """Squared spectral weights of f: |<f, v_j>|^2 in the stationary inner
        product, so that <f, e^{sS} f> = sum_j c2_j exp(-mu_j s)."""
        return (self.U.T @ (self.sqrt_w * f)) ** 2


def symmetric_spectrum(ops: OperatorSet) -> SymmetricSpectrum:
    w = ops.weights
    sq = np.sqrt(w)
    safe = np.where(sq > 0, sq, 1.0)
    M = -(ops.S.toarray())
    M = (M * (1.0 / safe)[None, :]) * sq[:, None]
    M = 0.5 * (M + M.T)
    mu, U = scipy.linalg.eigh(M)
    mu = np.clip(mu, 0.0, None)
    return SymmetricSpectrum(mu=mu, U=U, sqrt_w=sq)


def variance_curve_spectral(mu: np.ndarray, c2: np.ndarray,
                            times: np.ndarray) -> np.ndarray:
    """sigma^2(t) = 2 * int_0^t (t-s) <f, e^{sS} f> ds from spectral data.

    Zero modes contribute t^2/2 per unit spectral weight; they carry the
    particle-number fluctuation of mixed-sector measures.
    """
    times = np.asarray(times, dtype=np.float64)
    out = np.zeros_like(times)
    zero = mu < 1e-12
    w0 = float(np.sum(c2[zero]))
    out += 2.0 * w0 * times ** 2 / 2.0
    mu_p = mu[~zero]
    c2_p = c2[~zero]
    for ix, t in enumerate(times):
        e = np.expm1(-mu_p * t)  # e^{-mu t} - 1
        out[ix] += 2.0 * float(np.sum(c2_p * (t / mu_p + e / mu_p ** 2)))
    return out


def resolvent_spectral(mu: np.ndarray, c2: np.ndarray, lam: float) -> float:
    return float(np.sum(c2 / (lam + mu)))


def variance_oracle(geometry: TorusGeometry, kernel: JumpKernel, rho: float,
                    times, cap: int = 50_000) -> np.ndarray:
    """Exact occupation-time variance curve under the product measure.

    Enumerates the full product space (all particle-number sectors at once)
    and integrates the spectral autocorrelation of the centered origin
    occupation.  Symmetric kernels only; the drift case goes through
    ``variance_curve_quadrature``.
    """
    if not kernel.is_symmetric():
        raise ValueError("spectral variance oracle requires a symmetric kernel")
    space = product_space(geometry, kernel, rho, cap=cap)
    ops = build_operators(space)
    f = centered_occupation(space, rho)
    spec = symmetric_spectrum(ops)
    return variance_curve_spectral(spec.mu, spec.components(f), np.asarray(times, dtype=float))


def autocorrelation_quadrature(ops: OperatorSet, f: np.ndarray, horizon: float,
                               n_steps: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """<f, e^{sL} f> on a uniform s-grid via one matrix exponential per step."""
    dt = horizon / n_steps
    E = scipy.linalg.expm(ops.L.toarray() * dt)
    s = np.linspace(0.0, horizon, n_steps + 1)
    u = f.astype(np.float64).copy()
    ac = np.empty(n_steps + 1)
    ac[0] = ops.inner(f, u)
    for k in range(1, n_steps + 1):
        u = E @ u
        ac[k] = ops.inner(f, u)
    return s, ac


def variance_curve_quadrature(ops: OperatorSet, f: np.ndarray, times,
                              n_steps: int = 512) -> np.ndarray:
    """sigma^2(t) = 2 int_0^t (t-s) <f, e^{sL} f> ds by Simpson quadrature,
    valid for any (possibly non-normal) generator.  Each time gets its own
    grid so the quadrature endpoint is exact."""
    times = np.asarray(times, dtype=np.float64)
    out = np.empty_like(times)
    for ix, t in enumerate(times):
        s, ac = autocorrelation_quadrature(ops, f, float(t), n_steps)
        out[ix] = 2.0 * scipy.integrate.simpson((t - s) * ac, x=s)
    return out


# ---------------------------------------------------------------------------
# single-walker oracles


def walker_generator(kernel: JumpKernel, geometry: TorusGeometry) -> np.ndarray:
    """Dense generator of one free p-walker on the torus."""
    geometry.check_kernel(kernel)
    zvecs, rates = kernel.vectors()
    nbr = geometry.shift_table(zvecs)
    n = geometry.n_sites
    W = np.zeros((n, n))
    for k, r in enumerate(rates):
        W[np.arange(n), nbr[k]] += r
        W[np.arange(n), np.arange(n)] -= r
    return W


def walker_return_expm(kernel: JumpKernel, geometry: TorusGeometry,
                       times) -> np.ndarray:
    """Return probability of the torus walker via the matrix exponential."""
    W = walker_generator(kernel, geometry)
    o = geometry.origin
    return np.array([scipy.linalg.expm(W * t)[o, o] for t in np.asarray(times, float)])


def walker_return_fourier(kernel: JumpKernel, geometry: TorusGeometry,
                          times) -> np.ndarray:
    """Return probability of the torus walker via plane-wave diagonalization.

    The walk generator is circulant, with eigenvalue
    ``sum_z p(z) (exp(2 pi i k.z / L) - 1)`` at each dual-lattice mode k.
    """
    zvecs, rates = kernel.vectors()
    k1 = np.arange(geometry.L1)[:, None] / geometry.L1
    k2 = np.arange(geometry.L2)[None, :] / geometry.L2
    lam = np.zeros((geometry.L1, geometry.L2), dtype=np.complex128)
    for (z1, z2), r in zip(zvecs, rates):
        lam += r * (np.exp(2j * np.pi * (k1 * z1 + k2 * z2)) - 1.0)
    times = np.asarray(times, dtype=np.float64)
    out = np.empty_like(times)
    for ix, t in enumerate(times):
        out[ix] = float(np.real(np.mean(np.exp(lam * t))))
    return out


def walker_resolvent_origin(kernel: JumpKernel, geometry: TorusGeometry,
                            lam: float) -> float:
    """Diagonal resolvent entry <delta_0, (lam - W)^{-1} delta_0>."""
    W = walker_generator(kernel, geometry)
    n = geometry.n_sites
    rhs = np.zeros(n)
    rhs[geometry.origin] = 1.0
    x = np.linalg.solve(lam * np.eye(n) - W, rhs)
    return float(x[geometry.origin])
