import importlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exact_bound, exact_loglik, importance_sum
from msvi.core import DomainError, RandomStream, distance_matrix, validate_dataset
from msvi.model import BrownResnickParams, LogisticParams, full_loglik_enum
from msvi.partition import EpaParams, epa_log_pmf_batch, epa_sample_batch
from msvi.simulate import sample_logistic
from msvi.vi import (FitAborted, VIConfig, batch_terms, constrain, constrain_model, fit,
                     grad_phi_estimate, grad_theta_estimate, iwae_estimate, unconstrain)
fit_module = importlib.import_module("msvi.vi.fit")
from msvi.vi.fit import _batches

Z3 = np.array([0.7, 1.9, 1.2])
D3 = distance_matrix(Z3)
MODEL = LogisticParams(0.6)
EPA = EpaParams(0.8, 0.3, 1.2)


def draws(model, epa, z, M, N, seed):
    z = np.asarray(z, float)
    Z = np.broadcast_to(z, (N, z.size))
    dist = np.broadcast_to(distance_matrix(z), (N, z.size, z.size))
    u = RandomStream(seed).generator().random((N, M, z.size))
    return batch_terms(model, epa, Z, dist, u)


# -- transforms ------------------------------------------------------------------

def test_round_trips():
    assert constrain(unconstrain(LogisticParams(0.37)), "logistic").theta == pytest.approx(0.37, abs=1e-12)
    sites = np.zeros((2, 2))
    p = BrownResnickParams(0.4, 1.7, sites)
    q = constrain(unconstrain(p), p)
    assert (q.lam, q.nu) == pytest.approx((0.4, 1.7), abs=1e-12)
    e = constrain(unconstrain(EpaParams(-0.2, 0.3, 2.0)), "epa")
    assert e.as_array() == pytest.approx([-0.2, 0.3, 2.0], abs=1e-12)


def test_unconstrained_origin_is_documented_midpoint():
    assert constrain(np.zeros(1), "logistic").theta == 0.5
    p = constrain_model(np.zeros(2), "brown_resnick", sites=np.zeros((2, 2)))
    assert (p.lam, p.nu) == (1.0, 1.0)
    assert constrain(np.zeros(3), "epa").as_array() == pytest.approx([0.5, 0.5, 1.0])


def test_boundaries_rejected():
    with pytest.raises(DomainError):
        unconstrain(BrownResnickParams(1.0, 2.0, np.zeros((2, 2))))
    with pytest.raises(DomainError):
        unconstrain(LogisticParams(1.0))
    with pytest.raises(DomainError):
        unconstrain(EpaParams(1.0, 0.0, 1.0))


@settings(max_examples=50, deadline=None)
@given(st.floats(-8, 8), st.floats(-8, 8), st.floats(-8, 8))
def test_epa_round_trip_property(a, b, c):
    u = np.array([a, b, c])
    np.testing.assert_allclose(unconstrain(constrain(u, "epa")), u, atol=1e-7)


# -- bound and estimators ----------------------------------------------------------

def test_importance_identity_exact():
    for D in range(1, 6):
        z = np.linspace(0.6, 2.5, D)
        ref = math.exp(full_loglik_enum(MODEL, z))
        assert importance_sum(MODEL, EPA, z, distance_matrix(z)) == pytest.approx(ref, rel=1e-10)


def test_iwae_is_deterministic_and_lower_bound_on_average():
    a = iwae_estimate(MODEL, EPA, Z3, 5, RandomStream(1))
    assert a == iwae_estimate(MODEL, EPA, Z3, 5, RandomStream(1))
    vals = draws(MODEL, EPA, Z3, 3, 10_000, 2).iwae
    assert vals.mean() <= exact_loglik(MODEL, Z3) + 3 * vals.std() / 100


def test_m1_mean_is_elbo():
    vals = draws(MODEL, EPA, Z3, 1, 40_000, 3).iwae
    assert abs(vals.mean() - exact_bound(MODEL, EPA, Z3, D3, 1)) < 4 * vals.std() / 200


def test_m1_gradient_reduces_to_single_sample():
    from msvi.model import st_loglik_batch
    from msvi.partition import epa_sample_labels
    u = RandomStream(4).generator().random((1, 1, 3))
    t = batch_terms(MODEL, EPA, Z3[None], D3[None], u)
    labels = epa_sample_labels(EPA, D3, u[0])
    _, g = st_loglik_batch(MODEL, Z3[None], labels, grad=True)
    assert t.grad_model[0, 0] == g[0, 0]


def test_theta_boundary_rejected():
    with pytest.raises(DomainError):
        grad_theta_estimate(LogisticParams(1.0), EPA, Z3, 2, RandomStream(0))


def test_score_has_mean_zero():
    dist = D3
    _, score = epa_log_pmf_batch(EPA, dist, epa_sample_batch(EPA, dist, 100_000, RandomStream(5))[0], grad=True)
    se = score.std(axis=0) / math.sqrt(len(score))
    assert np.all(np.abs(score.mean(axis=0)) < 3 * se + 1e-12)


def test_constant_similarity_rho_gradient_vanishes():
    z = np.ones(3)
    g = np.array([grad_phi_estimate(MODEL, EPA, z, 2, RandomStream(6, (i,))) for i in range(200)])
    assert np.all(g[:, 2] == 0.0)


def _fd_bound(f, x, h):
    return (f(x + h) - f(x - h)) / (2 * h)


def test_gradient_unbiasedness_small():
    N = 30_000
    t = draws(MODEL, EPA, Z3, 2, N, 7)
    g_theta = _fd_bound(lambda th: exact_bound(LogisticParams(th), EPA, Z3, D3, 2), MODEL.theta, 1e-5)
    gm = t.grad_model[:, 0]
    assert abs(gm.mean() - g_theta) < 3.5 * gm.std() / math.sqrt(N)
    base = EPA.as_array()
    for k in range(3):
        def f(x, k=k):
            v = base.copy()
            v[k] = x
            return exact_bound(MODEL, EpaParams(*v), Z3, D3, 2)
        g = _fd_bound(f, base[k], 1e-5)
        ge = t.grad_epa[:, k]
        assert abs(ge.mean() - g) < 3.5 * ge.std() / math.sqrt(N)


def test_jensen_and_monotonicity_exact():
    gen = np.random.default_rng(8)
    for _ in range(5):
        model = LogisticParams(gen.uniform(0.2, 0.95))
        epa = EpaParams(gen.uniform(0.1, 3), gen.uniform(0, 0.9), gen.uniform(0.3, 3))
        L1, L2 = exact_bound(model, epa, Z3, D3, 1), exact_bound(model, epa, Z3, D3, 2)
        assert L1 <= L2 + 1e-12
        assert L2 <= exact_loglik(model, Z3) + 1e-12


# -- fit --------------------------------------------------------------------------

def small_data(n=12, D=4, theta=0.7):
    Z = sample_logistic(LogisticParams(theta), D, n, RandomStream(10))
    return validate_dataset(np.zeros((D, 2)), Z)


def config(**kw):
    base = dict(M=4, R=30, lr_theta=1e-3, lr_phi=1e-4, init_model=(0.6,), init_epa=EpaParams(5.0, 0.5, 1.0),
                seed=3)
    base.update(kw)
    return VIConfig(**base)


def test_zero_learning_rates_freeze_parameters():
    tr = fit(small_data(), "logistic", config(lr_theta=0.0, lr_phi=0.0))
    assert np.all(tr.model[:, 0] == 0.6)
    assert np.all(tr.epa == np.array([5.0, 0.5, 1.0]))


def test_fit_is_reproducible_and_valid():
    a = fit(small_data(), "logistic", config())
    b = fit(small_data(), "logistic", config())
    for field in ("model", "epa", "iwae", "grad_norm_theta", "grad_norm_phi"):
        assert np.array_equal(getattr(a, field), getattr(b, field))
    assert len(a) == 30 and np.all((a.model > 0) & (a.model <= 1))
    assert np.all(a.epa[:, 1] < 1) and np.all(a.epa[:, 0] > -a.epa[:, 1]) and np.all(a.epa[:, 2] > 0)


def test_fit_brown_resnick_runs():
    sites = np.random.default_rng(0).uniform(size=(3, 2))
    data = validate_dataset(sites, np.random.default_rng(1).uniform(0.5, 3.0, (4, 3)))
    tr = fit(data, "brown_resnick", config(R=3, init_model=(1.0, 1.0)))
    assert tr.model.shape == (3, 2) and np.all(np.isfinite(tr.model))


def test_batches_cover_each_epoch():
    gen = _batches(10, 3, RandomStream(1))
    epoch = np.concatenate([next(gen) for _ in range(3)])
    assert len(set(epoch.tolist())) == 9


def test_minibatch_gradient_expectation():
    data = small_data(n=12)
    Z = data.observations
    u = RandomStream(2).generator().random((12, 5, 4))
    t = batch_terms(MODEL, EPA, Z, distance_matrix_stack(Z), u)
    full = t.grad_model.sum(axis=0)
    gen = np.random.default_rng(3)
    est = np.array([12 / 3 * t.grad_model[gen.choice(12, 3, replace=False)].sum(axis=0) for _ in range(4000)])
    assert np.all(np.abs(est.mean(axis=0) - full) < 3 * est.std(axis=0) / math.sqrt(4000))


def distance_matrix_stack(Z):
    return np.stack([distance_matrix(z) for z in Z])


def test_skip_and_abort_policy(monkeypatch):
    real = fit_module.batch_terms
    calls = {"n": 0}

    def flaky(*args, **kw):
        calls["n"] += 1
        t = real(*args, **kw)
        if calls["n"] % 4 == 0:
            t.grad_model[:] = np.nan
        return t

    monkeypatch.setattr(fit_module, "batch_terms", flaky)
    # one in four iterations fails: more than 10% of R, so the fit aborts
    with pytest.raises(FitAborted) as exc:
        fit(small_data(), "logistic", config(R=40))
    tr = exc.value.trace
    assert tr.skipped[tr.n_iter - 1] == 5 and tr.n_iter == 20
    # skipped iterations leave the parameters unchanged
    assert tr.model[3, 0] == tr.model[2, 0]


def test_trace_csv(tmp_path):
    tr = fit(small_data(), "logistic", config(R=5))
    tr.write_csv(tmp_path / "t.csv", "prov")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "# prov"
    assert lines[1] == "iter,theta,alpha,delta,rho,iwae,grad_norm_theta,grad_norm_phi,skipped,wall_ms"
    assert len(lines) == 7
    assert tr.estimate(0.4) == pytest.approx(tr.model[3:5].mean(axis=0))
