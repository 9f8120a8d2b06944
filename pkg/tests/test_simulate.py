import numpy as np
import pytest

from asep2d import (EnsembleSpec, HorizonTooLargeForTorus, TorusGeometry,
                    run_coupled_ensemble, run_exclusion_ensemble,
                    run_walker_ensemble, sample_equilibrium, simulate_coupled,
                    simulate_exclusion, validate_kernel)
from asep2d.rng import replica_rng
from asep2d.simulate import (_coupled_core, _exclusion_core, _prepare,
                             event_stream, wrap_safe_side)

from conftest import z_ok


def test_full_lattice_is_frozen(sym_nn):
    geo = TorusGeometry(4, 4)
    ens = run_exclusion_ensemble(EnsembleSpec(1.0), sym_nn, geo, 4.0,
                                 [1.0, 4.0], seed=11, n_replicas=150)
    assert np.all(ens.eta0 == 1)
    assert np.max(np.abs(ens.occupation_integral)) == 0.0


def test_single_particle_is_a_walk(sym_nn):
    # exclusion with one particle reduces to the free walk; compare the
    # origin occupation with the walk transition probability
    from asep2d.exact import walker_return_expm
    geo = TorusGeometry(6, 6)
    times = np.array([0.5, 2.0])
    config = np.zeros(geo.n_sites, dtype=np.uint8)
    config[geo.origin] = 1
    n_rep = 4000
    hits = np.zeros((n_rep, len(times)))
    for r in range(n_rep):
        traj = simulate_exclusion(config, sym_nn, geo, 2.0, times, seed=r)
        hits[r] = traj.eta0
    p = hits.mean(axis=0)
    se = np.sqrt(p * (1 - p) / n_rep)
    assert z_ok(p, walker_return_expm(sym_nn, geo, times), se)


def test_stationarity_of_origin_occupation(drift_nn):
    geo = TorusGeometry(8, 8)
    rho = 0.5
    ens = run_exclusion_ensemble(EnsembleSpec(rho), drift_nn, geo, 2.0,
                                 [0.5, 2.0], seed=21, n_replicas=8000)
    p = ens.eta0.mean(axis=0)
    se = np.sqrt(rho * (1 - rho) / 8000)
    assert z_ok(p, rho, se)


def test_particle_count_conserved(drift_nn):
    geo = TorusGeometry(5, 5)
    zvecs, rates, cum, nbr = _prepare(drift_nn, geo)
    rng = replica_rng(7)
    eta = sample_equilibrium(EnsembleSpec(0.4), geo, rng)
    n0 = int(eta.sum())
    ev = event_stream(rng, geo.n_sites, float(rates.sum()), cum, 10.0)
    ts = np.array([10.0])
    _exclusion_core(eta, nbr, 0, 0.4, ev[0], ev[1], ev[2], ts,
                    np.empty(1, np.uint8), np.empty(1))
    assert int(eta.sum()) == n0


def test_determinism_and_seed_sensitivity(sym_nn):
    geo = TorusGeometry(6, 6)
    ts = np.array([0.5, 1.5])
    a = run_exclusion_ensemble(EnsembleSpec(0.5), sym_nn, geo, 1.5, ts, 5, 50)
    b = run_exclusion_ensemble(EnsembleSpec(0.5), sym_nn, geo, 1.5, ts, 5, 50)
    c = run_exclusion_ensemble(EnsembleSpec(0.5), sym_nn, geo, 1.5, ts, 6, 50)
    assert np.array_equal(a.occupation_integral, b.occupation_integral)
    assert np.array_equal(a.eta0, b.eta0)
    assert not np.array_equal(a.occupation_integral, c.occupation_integral)


def test_event_rate_histogram(drift_nn):
    # attempted jump vectors arrive proportionally to their rates
    geo = TorusGeometry(8, 8)
    zvecs, rates, cum, nbr = _prepare(drift_nn, geo)
    total = float(rates.sum())
    rng = replica_rng(99)
    counts = np.zeros(len(rates))
    n_ev = 0
    for _ in range(40):
        ev = event_stream(rng, geo.n_sites, total, cum, 5.0)
        n_ev += len(ev[0])
        counts += np.bincount(ev[2], minlength=len(rates))
    frac = counts / n_ev
    expect = rates / total
    se = np.sqrt(expect * (1 - expect) / n_ev)
    assert z_ok(frac, expect, se)
    # total event count matches the uniformized rate
    mean_events = 40 * geo.n_sites * total * 5.0
    assert abs(n_ev - mean_events) <= 4 * np.sqrt(mean_events)


def test_coupling_difference_is_single_discrepancy(sym_nn, tasep_nn):
    # drive a plain copy started from xi + delta_0 and the coupled
    # representation with the same attempts; they must differ at exactly the
    # tracked site, at all sampled times
    geo = TorusGeometry(8, 8)
    ts = np.array([0.5, 1.5, 3.0])
    for kernel in (sym_nn, tasep_nn):
        zvecs, rates, cum, nbr = _prepare(kernel, geo)
        for rep in range(60):
            xi = sample_equilibrium(EnsembleSpec(0.5, origin_empty=True), geo,
                                    replica_rng(1000, rep))
            eta = xi.copy()
            eta[geo.origin] = 1
            ev = event_stream(replica_rng(2000, rep), geo.n_sites,
                              float(rates.sum()), cum, 3.0)
            oe = np.empty(len(ts), np.uint8)
            oa = np.empty(len(ts))
            at0 = np.empty(len(ts), np.uint8)
            pos = np.empty(len(ts), np.int32)
            disp = np.empty((len(ts), 2), np.int64)
            _exclusion_core(eta, nbr, geo.origin, 0.5, ev[0], ev[1], ev[2],
                            ts, oe, oa)
            _coupled_core(xi, geo.origin, nbr, zvecs, ev[0], ev[1], ev[2],
                          ts, geo.origin, at0, pos, disp)
            diff = eta.astype(int) - xi.astype(int)
            assert diff.sum() == 1 and np.all(diff >= 0)
            assert diff[pos[-1]] == 1
            assert xi[pos[-1]] == 0  # tracked site stays vacant in xi


def test_coupled_free_case_mean_displacement(tasep_nn):
    geo = TorusGeometry(16, 16)
    ts = np.array([1.0, 3.0])
    ens = run_coupled_ensemble(EnsembleSpec(0.0), tasep_nn, geo, 3.0, ts,
                               seed=31, n_replicas=4000)
    mean = ens.displacement.mean(axis=0)
    sd = ens.displacement.std(axis=0) / np.sqrt(4000)
    expect = np.outer(ts, [0.5, 0.5])
    assert z_ok(mean, expect, sd)


@pytest.mark.filterwarnings("ignore::asep2d.simulate.HorizonTooLargeForTorus")
def test_coupled_symmetric_marginal_is_walk(sym_nn):
    from asep2d.exact import walker_return_expm
    geo = TorusGeometry(6, 6)
    ts = np.array([0.5, 2.0, 4.0])
    ens = run_coupled_ensemble(EnsembleSpec(0.6), sym_nn, geo, 4.0, ts,
                               seed=41, n_replicas=8000)
    p = ens.at_origin.mean(axis=0)
    se = np.sqrt(p * (1 - p) / 8000)
    assert z_ok(p, walker_return_expm(sym_nn, geo, ts), se)


def test_walker_ensemble_matches_fourier_law(drift_nn):
    from asep2d.exact import walker_return_fourier
    geo = TorusGeometry(12, 12)
    ts = np.array([0.5, 2.0, 5.0])
    ens = run_walker_ensemble(drift_nn, geo, 5.0, ts, seed=51, n_replicas=20000)
    p = ens.at_origin.mean(axis=0)
    se = np.sqrt(np.maximum(p * (1 - p), 1e-9) / 20000)
    assert z_ok(p, walker_return_fourier(drift_nn, geo, ts), se)


def test_wrap_safety_warning(sym_nn):
    geo = TorusGeometry(3, 2)
    assert wrap_safe_side(sym_nn, 5.0) == 20.0
    with pytest.warns(HorizonTooLargeForTorus):
        traj = simulate_coupled(EnsembleSpec(0.5), sym_nn, geo, 5.0,
                                [1.0], seed=3)
    assert traj.meta.get("wrap_warning") is True


def test_single_trajectory_fields(sym_nn):
    geo = TorusGeometry(6, 6)
    ts = np.array([0.25, 1.0])
    traj = simulate_exclusion(sample_equilibrium(EnsembleSpec(0.5), geo, 1),
                              sym_nn, geo, 1.0, ts, seed=2)
    assert traj.eta0.shape == (2,) and traj.occupation_integral.shape == (2,)
    cpl = simulate_coupled(EnsembleSpec(0.5), sym_nn, geo, 1.0, ts, seed=2)
    assert cpl.position.shape == (2,) and cpl.displacement.shape == (2, 2)
    assert cpl.at_origin.shape == (2,)


def test_sample_times_validation(sym_nn):
    geo = TorusGeometry(6, 6)
    cfg = sample_equilibrium(EnsembleSpec(0.5), geo, 1)
    with pytest.raises(ValueError):
        simulate_exclusion(cfg, sym_nn, geo, 1.0, [0.5, 0.25], seed=1)
    with pytest.raises(ValueError):
        simulate_exclusion(cfg, sym_nn, geo, 1.0, [0.5, 2.0], seed=1)
