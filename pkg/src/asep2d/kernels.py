"""Jump kernels, torus geometry and equilibrium sampling.

A jump kernel is a finite nonnegative rate table ``p(z)`` on the planar
integer lattice with ``p(0) = 0``.  Rates are kept as exact rationals
(binary floats convert losslessly), so the derived symmetric part,
antisymmetric part and drift are exact and can feed machine-precision
operator checks downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .rng import replica_rng

Vec = tuple[int, int]

MAX_SUPPORT = 10_000


class KernelError(ValueError):
    """Invalid jump-rate table."""


class NegativeRate(KernelError):
    pass


class InfiniteSupport(KernelError):
    pass


class NonIrreducible(KernelError):
    """Symmetrized support does not generate the full planar lattice."""


class ZeroDrift(KernelError):
    """Nearest-neighbor comparison kernel is undefined without a mean drift."""


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x)
    if isinstance(x, (float, np.floating)):
        return Fraction(float(x))  # exact binary value
    raise TypeError(f"cannot interpret rate of type {type(x)!r}")


def _generates_plane(vectors: list[Vec]) -> bool:
    """Whether the integer span of ``vectors`` is the whole planar lattice.

    The subgroup generated by the columns equals Z^2 exactly when the gcd of
    all entries and the gcd of all 2x2 minors are both 1 (Smith normal form
    invariant factors both 1).
    """
    if not vectors:
        return False
    d1 = 0
    for v in vectors:
        d1 = math.gcd(d1, abs(v[0]))
        d1 = math.gcd(d1, abs(v[1]))
    if d1 != 1:
        return False
    d2 = 0
    for i, v in enumerate(vectors):
        for w in vectors[i + 1 :]:
            d2 = math.gcd(d2, abs(v[0] * w[1] - v[1] * w[0]))
    return d2 == 1


@dataclass
class JumpKernel:
    """Finite-range jump rates with derived symmetric/antisymmetric parts.

    Treated as immutable after construction; safe to share across replicas.
    """

    rates: dict[Vec, Fraction]
    sym: dict[Vec, Fraction]
    anti: dict[Vec, Fraction]
    m1: Fraction
    m2: Fraction
    meta: dict = field(default_factory=dict)

    @property
    def b1(self) -> Fraction:
        return self.sym.get((1, 0), Fraction(0))

    @property
    def b2(self) -> Fraction:
        return self.sym.get((0, 1), Fraction(0))

    @property
    def a1(self) -> Fraction:
        return self.anti.get((1, 0), Fraction(0))

    @property
    def a2(self) -> Fraction:
        return self.anti.get((0, 1), Fraction(0))

    @property
    def bbar(self) -> Fraction:
        return 2 * min(self.b1, self.b2)

    @property
    def total_rate(self) -> float:
        return float(sum(self.rates.values()))

    @property
    def range(self) -> tuple[int, int]:
        """Maximum |z_i| over the support, per axis."""
        r1 = max(abs(z[0]) for z in self.rates)
        r2 = max(abs(z[1]) for z in self.rates)
        return r1, r2

    @property
    def speed(self) -> float:
        """Rate-weighted jump length, sum of max(|z1|,|z2|) * p(z)."""
        return float(sum(max(abs(z[0]), abs(z[1])) * r for z, r in self.rates.items()))

    def is_symmetric(self) -> bool:
        return all(v == 0 for v in self.anti.values())

    def vectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Support vectors and float rates in a fixed (sorted) order."""
        zs = sorted(self.rates)
        return (
            np.array(zs, dtype=np.int64),
            np.array([float(self.rates[z]) for z in zs], dtype=np.float64),
        )

    def reversed(self) -> "JumpKernel":
        """Kernel with all jumps reversed, p(-z)."""
        return validate_kernel({(-z[0], -z[1]): r for z, r in self.rates.items()})

    def table(self) -> str:
        """Human-readable table of rates and derived quantities."""
        lines = ["  z1  z2        p(z)        s(z)        a(z)"]
        zs = sorted(set(self.rates) | set(self.sym))
        for z in zs:
            lines.append(
                f"{z[0]:4d}{z[1]:4d}{float(self.rates.get(z, 0)):12.6g}"
                f"{float(self.sym.get(z, 0)):12.6g}{float(self.anti.get(z, 0)):12.6g}"
            )
        lines.append(
            f"drift m = ({float(self.m1):.6g}, {float(self.m2):.6g})  "
            f"b1 = {float(self.b1):.6g}  b2 = {float(self.b2):.6g}  "
            f"a1 = {float(self.a1):.6g}  a2 = {float(self.a2):.6g}  "
            f"bbar = {float(self.bbar):.6g}"
        )
        return "\n".join(lines)


def validate_kernel(rates: Mapping[Vec, object]) -> JumpKernel:
    """Validate a rate table and derive symmetric/antisymmetric parts and drift.

    Raises ``NegativeRate``, ``InfiniteSupport`` or ``NonIrreducible`` when the
    table is not an admissible finite-range kernel whose symmetrization reaches
    the whole lattice.
    """
    if len(rates) > MAX_SUPPORT:
        raise InfiniteSupport(f"support size {len(rates)} exceeds {MAX_SUPPORT}")
    table: dict[Vec, Fraction] = {}
    for z, r in rates.items():
        z = (int(z[0]), int(z[1]))
        r = _as_fraction(r)
        if r < 0:
            raise NegativeRate(f"p({z}) = {r} < 0")
        if z == (0, 0) and r != 0:
            raise KernelError("p(0) must be zero")
        if r != 0:
            table[z] = table.get(z, Fraction(0)) + r
    if not table:
        raise KernelError("kernel has empty support")

    support = set(table) | {(-z[0], -z[1]) for z in table}
    sym: dict[Vec, Fraction] = {}
    anti: dict[Vec, Fraction] = {}
    for z in support:
        zr = (-z[0], -z[1])
        p, q = table.get(z, Fraction(0)), table.get(zr, Fraction(0))
        sym[z] = (p + q) / 2
        anti[z] = (p - q) / 2

    if not _generates_plane([z for z in support if sym[z] > 0]):
        raise NonIrreducible("symmetrized support does not generate the plane")

    m1 = sum((Fraction(z[0]) * r for z, r in table.items()), Fraction(0))
    m2 = sum((Fraction(z[1]) * r for z, r in table.items()), Fraction(0))
    return JumpKernel(rates=table, sym=sym, anti=anti, m1=m1, m2=m2)


def comparison_kernel(kernel: JumpKernel) -> JumpKernel:
    """Nearest-neighbor kernel with the same drift magnitudes.

    The construction assumes the drift component along the first axis is
    nonzero; if only the second-axis component is nonzero the axes are swapped
    internally and the swap is recorded in ``meta['axes_swapped']``, so the
    returned table lives in the caller's coordinates.
    """
    m1, m2 = kernel.m1, kernel.m2
    if m1 == 0 and m2 == 0:
        raise ZeroDrift("mean drift vanishes; no nearest-neighbor comparison kernel")
    swapped = m1 == 0
    if swapped:
        m1, m2 = m2, m1

    rates: dict[Vec, Fraction] = {(1, 0): abs(m1)}
    if m2 != 0:
        rates[(0, 1)] = abs(m2)
    else:
        rates[(0, 1)] = Fraction(1, 4)
        rates[(0, -1)] = Fraction(1, 4)
    if swapped:
        rates = {(z[1], z[0]): r for z, r in rates.items()}
    out = validate_kernel(rates)
    out.meta["axes_swapped"] = swapped
    return out


# ---------------------------------------------------------------------------
# geometry and equilibrium sampling


@dataclass(frozen=True)
class TorusGeometry:
    """Rectangular torus with sites indexed ``x + L1 * y``."""

    L1: int
    L2: int

    def __post_init__(self):
        if self.L1 < 2 or self.L2 < 2:
            raise ValueError("torus sides must be at least 2")

    @property
    def n_sites(self) -> int:
        return self.L1 * self.L2

    @property
    def origin(self) -> int:
        return 0

    def index(self, x: int, y: int) -> int:
        return (x % self.L1) + self.L1 * (y % self.L2)

    def coords(self, i: int) -> Vec:
        return i % self.L1, i // self.L1

    def check_kernel(self, kernel: JumpKernel) -> None:
        """Require each side to cover twice the kernel range on its axis.

        With shorter sides a jump and its reverse could alias to the same
        displacement, making the periodic target ambiguous.
        """
        r1, r2 = kernel.range
        if self.L1 < 2 * r1 or self.L2 < 2 * r2:
            raise ValueError(
                f"torus {self.L1}x{self.L2} too small for kernel range ({r1},{r2})"
            )

    def shift_table(self, zvecs: np.ndarray) -> np.ndarray:
        """Target site of each jump vector from each site, shape (K, N), int32."""
        x = np.arange(self.n_sites, dtype=np.int64) % self.L1
        y = np.arange(self.n_sites, dtype=np.int64) // self.L1
        out = np.empty((len(zvecs), self.n_sites), dtype=np.int32)
        for k, (z1, z2) in enumerate(zvecs):
            out[k] = ((x + z1) % self.L1) + self.L1 * ((y + z2) % self.L2)
        return out


@dataclass(frozen=True)
class EnsembleSpec:
    """Product-measure equilibrium at a given density, optionally conditioned
    to leave the origin empty (the state used before inserting a tracked
    discrepancy)."""

    density: float
    origin_empty: bool = False

    def __post_init__(self):
        if not 0.0 <= self.density <= 1.0:
            raise ValueError(f"density {self.density} outside [0, 1]")


def sample_equilibrium(spec: EnsembleSpec, geometry: TorusGeometry, seed) -> np.ndarray:
    """Draw i.i.d. Bernoulli occupations; deterministic for a given seed.

    ``seed`` may be an integer or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else replica_rng(int(seed))
    eta = (rng.random(geometry.n_sites) < spec.density).astype(np.uint8)
    if spec.origin_empty:
        eta[geometry.origin] = 0
    return eta
