from fractions import Fraction

import numpy as np
import pytest

from asep2d import (EnsembleSpec, NegativeRate, NonIrreducible, TorusGeometry,
                    ZeroDrift, comparison_kernel, sample_equilibrium,
                    validate_kernel)
from asep2d.kernels import KernelError

from conftest import z_ok


def test_derived_quantities_axis_drift(drift_nn):
    # direct arithmetic from s = (p(z)+p(-z))/2, a = (p(z)-p(-z))/2
    assert drift_nn.m1 == Fraction(1, 2)
    assert drift_nn.m2 == 0
    assert drift_nn.b1 == Fraction(1, 2)
    assert drift_nn.b2 == Fraction(1, 4)
    assert drift_nn.a1 == Fraction(1, 4)
    assert drift_nn.a2 == 0
    assert drift_nn.bbar == Fraction(1, 2)
    assert drift_nn.total_rate == 1.5


def test_symmetric_kernel_has_no_drift(sym_nn):
    assert sym_nn.m1 == 0 and sym_nn.m2 == 0
    assert sym_nn.is_symmetric()
    assert all(v == 0 for v in sym_nn.anti.values())


def test_one_axis_support_not_irreducible():
    with pytest.raises(NonIrreducible):
        validate_kernel({(1, 0): 1})
    with pytest.raises(NonIrreducible):
        validate_kernel({(1, 0): "1/2", (-1, 0): "1/2"})


def test_sublattice_supports_rejected():
    # spans an index-2 sublattice in both cases
    with pytest.raises(NonIrreducible):
        validate_kernel({(2, 0): 1, (0, 1): 1, (0, -1): 1})
    with pytest.raises(NonIrreducible):
        validate_kernel({(1, 1): 1, (1, -1): 1})
    # diagonal plus one axis generates everything
    validate_kernel({(1, 1): 1, (1, 0): 1, (-1, 0): 1})


def test_bad_tables_rejected():
    with pytest.raises(NegativeRate):
        validate_kernel({(1, 0): -0.25, (0, 1): 0.5})
    with pytest.raises(KernelError):
        validate_kernel({(0, 0): 1.0, (1, 0): 1.0})
    with pytest.raises(KernelError):
        validate_kernel({})


def test_decomposition_identities():
    rng = np.random.default_rng(3)
    for _ in range(20):
        zs = [(int(a), int(b)) for a, b in rng.integers(-2, 3, (6, 2)) if (a, b) != (0, 0)]
        zs += [(1, 0), (0, 1), (-1, 0), (0, -1)]  # keep it irreducible
        rates = {z: Fraction(int(rng.integers(0, 8)), 8) for z in zs}
        rates = {z: r for z, r in rates.items() if r > 0}
        rates.update({(1, 0): Fraction(1, 4), (0, 1): Fraction(1, 4),
                      (-1, 0): Fraction(1, 8), (0, -1): Fraction(1, 8)})
        k = validate_kernel(rates)
        for z in k.sym:
            zr = (-z[0], -z[1])
            assert k.sym[z] + k.anti[z] == k.rates.get(z, 0)
            assert k.sym[z] - k.anti[z] == k.rates.get(zr, 0)
            assert k.sym[z] == k.sym[zr]
            assert k.anti[z] == -k.anti[zr]


def test_comparison_kernel_axis_case():
    k = validate_kernel({(1, 0): "3/4", (-1, 0): "1/4", (0, 1): "1/4", (0, -1): "1/4"})
    c = comparison_kernel(k)
    assert c.rates == {(1, 0): Fraction(1, 2), (0, 1): Fraction(1, 4),
                       (0, -1): Fraction(1, 4)}
    assert c.meta["axes_swapped"] is False


def test_comparison_kernel_general_case():
    k = validate_kernel({(1, 0): 1, (0, 1): 2})
    c = comparison_kernel(k)
    assert c.rates == {(1, 0): Fraction(1), (0, 1): Fraction(2)}


def test_comparison_kernel_swaps_axes_when_needed():
    k = validate_kernel({(0, 1): "3/4", (0, -1): "1/4", (1, 0): "1/4", (-1, 0): "1/4"})
    assert k.m1 == 0 and k.m2 == Fraction(1, 2)
    c = comparison_kernel(k)
    assert c.meta["axes_swapped"] is True
    assert c.rates == {(0, 1): Fraction(1, 2), (1, 0): Fraction(1, 4),
                       (-1, 0): Fraction(1, 4)}


def test_comparison_kernel_zero_drift(sym_nn):
    with pytest.raises(ZeroDrift):
        comparison_kernel(sym_nn)


def test_torus_geometry_indexing():
    geo = TorusGeometry(4, 3)
    assert geo.n_sites == 12
    assert geo.index(0, 0) == geo.origin == 0
    assert geo.index(-1, 0) == 3
    assert geo.index(0, -1) == 8
    assert geo.coords(geo.index(2, 1)) == (2, 1)
    with pytest.raises(ValueError):
        TorusGeometry(1, 4)


def test_torus_rejects_too_small_side(sym_nn):
    wide = validate_kernel({(2, 0): "1/8", (-2, 0): "1/8", (1, 0): "1/8",
                            (-1, 0): "1/8", (0, 1): "1/4", (0, -1): "1/4"})
    with pytest.raises(ValueError):
        TorusGeometry(3, 3).check_kernel(wide)
    TorusGeometry(4, 3).check_kernel(wide)
    # minimal sides for nearest-neighbor jumps
    TorusGeometry(3, 2).check_kernel(sym_nn)


def test_sample_equilibrium_extremes_and_determinism():
    geo = TorusGeometry(8, 8)
    assert not sample_equilibrium(EnsembleSpec(0.0), geo, 1).any()
    assert sample_equilibrium(EnsembleSpec(1.0), geo, 1).all()
    a = sample_equilibrium(EnsembleSpec(0.37), geo, 12345)
    b = sample_equilibrium(EnsembleSpec(0.37), geo, 12345)
    assert np.array_equal(a, b)
    c = sample_equilibrium(EnsembleSpec(0.37), geo, 12346)
    assert not np.array_equal(a, c)


def test_sample_equilibrium_density_and_conditioning():
    geo = TorusGeometry(16, 16)
    n_rep = 400
    draws = np.stack([sample_equilibrium(EnsembleSpec(0.5), geo, s) for s in range(n_rep)])
    n_tot = draws.size
    se = 0.5 / np.sqrt(n_tot)
    assert z_ok(draws.mean(), 0.5, se)
    cond = np.stack([
        sample_equilibrium(EnsembleSpec(0.5, origin_empty=True), geo, s)
        for s in range(n_rep)
    ])
    assert not cond[:, geo.origin].any()
    assert z_ok(cond[:, 1:].mean(), 0.5, se)


def test_sample_equilibrium_site_independence():
    # empirical covariance between distinct sites vanishes under the product
    # measure
    geo = TorusGeometry(6, 6)
    n_rep = 4000
    draws = np.stack([sample_equilibrium(EnsembleSpec(0.5), geo, s) for s in range(n_rep)])
    x = draws[:, 0].astype(float)
    for other in (1, 7, 20):
        y = draws[:, other].astype(float)
        cov = np.mean(x * y) - x.mean() * y.mean()
        assert abs(cov) <= 4 * 0.25 / np.sqrt(n_rep)


def test_variance_identity_at_time_zero():
    # Var(eta_0) = rho (1 - rho) under the sampling measure
    geo = TorusGeometry(8, 8)
    rho = 0.3
    n_rep = 5000
    x = np.array([sample_equilibrium(EnsembleSpec(rho), geo, s)[0] for s in range(n_rep)],
                 dtype=float)
    se = np.sqrt(np.var(x ** 2) + 1e-12) / np.sqrt(n_rep) + 4e-3
    assert z_ok(np.var(x), rho * (1 - rho), se)
