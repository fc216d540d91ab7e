from __future__ import annotations

import numpy as np
import pytest
import torch

from mask_beamforming.errors import ShapeMismatchError
from mask_beamforming.losses import (
    GradCheckReport,
    LossInputs,
    Permutation,
    grad_check,
    loss_gradient,
    loss_l1,
    loss_l2,
    loss_psa,
    permutations,
    pit_totals,
    pit_wrap,
    posterior_terms,
    relative_error,
)


def _mass_weighted_power(mask, x):
    """Single-channel mask-weighted covariance per (f, n)."""
    power = np.abs(x[..., 0]) ** 2
    return (mask * power[..., None]).sum(0) / mask.sum(0)


def test_psa_zero_for_matching_masks(rng):
    x = rng.standard_normal((5, 4, 2)) + 1j * rng.standard_normal((5, 4, 2))
    mask = rng.uniform(0, 1, (5, 4, 2))
    c_ref = mask * x[..., :1]
    assert loss_psa(mask, x[..., 0], c_ref).total == pytest.approx(0.0)


def test_psa_of_zero_mask_is_mean_power(rng):
    x = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    value = loss_psa(np.zeros((6, 3, 1)), x, x[..., None])
    assert value.total == pytest.approx(np.sum(np.abs(x) ** 2) / 18)
    assert value.per_bin.shape == (6, 3, 1)


def test_psa_gradient_formula(rng):
    inputs = LossInputs.random(3)
    _, gradient = loss_gradient("psa", inputs)
    x_ref = inputs.x[..., 0]
    c_ref = inputs.c[..., 0]
    residual = inputs.mask * x_ref[..., None] - c_ref
    expected = 2 * (np.conj(x_ref)[..., None] * residual).real / 12
    np.testing.assert_allclose(gradient.d_mask, expected, atol=1e-12)


def test_l1_scalar_case(rng):
    T, F = 5, 3
    x = rng.standard_normal((T, F, 1)) + 1j * rng.standard_normal((T, F, 1))
    c = rng.standard_normal((T, F, 2, 1)) + 1j * rng.standard_normal(
        (T, F, 2, 1)
    )
    mask = rng.uniform(0.1, 0.9, (T, F, 2))
    # activations that make v * R_hat == 1 for both sources
    act = np.broadcast_to(
        1.0 / _mass_weighted_power(mask, x), (T, F, 2)
    ).copy()
    value = loss_l1(mask, act, x, c, loading=0.0)
    residual = c[..., 0] - 0.5 * x
    expected = np.abs(residual) ** 2 / 0.5 + np.log(0.5)
    np.testing.assert_allclose(value.per_bin, expected, rtol=1e-9)


def _loaded(a, loading):
    size = a.shape[-1]
    return a + loading * (np.trace(a).real / size + 1e-12) * np.eye(size)


def _l1_by_loops(inputs, loading):
    mask, act, x, c = inputs.mask, inputs.activation, inputs.x, inputs.c
    T, F, N = mask.shape
    terms = np.empty((T, F, N))
    for f in range(F):
        r_hat = []
        for n in range(N):
            num = sum(
                mask[t, f, n] * np.outer(x[t, f], np.conj(x[t, f]))
                for t in range(T)
            )
            r_hat.append(num / mask[:, f, n].sum())
        for t in range(T):
            r = [act[t, f, n] * r_hat[n] for n in range(N)]
            s_inv = np.linalg.inv(_loaded(sum(r), loading))
            for n in range(N):
                d = c[t, f, n] - r[n] @ s_inv @ x[t, f]
                psi = _loaded(r[n] - r[n] @ s_inv @ r[n], loading)
                quad = np.vdot(d, np.linalg.solve(psi, d)).real
                terms[t, f, n] = quad + np.log(np.linalg.det(psi).real)
    return terms


def test_l1_matches_loop_oracle():
    for seed in range(50):
        inputs = LossInputs.random(seed)
        value = loss_l1(
            inputs.mask, inputs.activation, inputs.x, inputs.c, loading=1e-6
        )
        np.testing.assert_allclose(
            value.per_bin, _l1_by_loops(inputs, 1e-6), rtol=1e-9, atol=1e-9
        )


def test_l1_improves_toward_true_covariance(hpd):
    rng = np.random.default_rng(21)
    T, F, N, M = 1000, 4, 2, 2
    monotone = 0
    for _ in range(20):
        truth = hpd(rng, (F, N), M)
        corrupted = hpd(rng, (F, N), M)
        act = rng.uniform(0.2, 2.0, (T, F, N))
        z = rng.standard_normal((T, F, N, M)) + 1j * rng.standard_normal(
            (T, F, N, M)
        )
        chol = np.linalg.cholesky(truth)
        c = np.sqrt(act / 2)[..., None] * np.einsum("fnmk,tfnk->tfnm", chol, z)
        x = c.sum(axis=2)
        totals = []
        for weight in (0.0, 1 / 3, 2 / 3, 1.0):
            cov = (1 - weight) * corrupted + weight * truth
            varying = act[..., None, None] * cov[None]
            totals.append(float(posterior_terms(varying, x, c).sum()))
        assert np.all(np.isfinite(totals))
        monotone += all(np.diff(totals) < 0)
    assert monotone >= 18


def test_l1_single_source_is_finite(rng):
    inputs = LossInputs.random(4, n_sources=1)
    value = loss_l1(inputs.mask, inputs.activation, inputs.x, inputs.c)
    assert np.isfinite(value.total)


def test_l1_rejects_flat_images(rng):
    inputs = LossInputs.random(2)
    with pytest.raises(ShapeMismatchError):
        loss_l1(inputs.mask, inputs.activation, inputs.x, inputs.c[..., 0])


def test_l2_scalar_case(rng):
    T, F, N = 6, 2, 3
    x = rng.standard_normal((T, F, 1)) + 1j * rng.standard_normal((T, F, 1))
    mask = rng.uniform(0.1, 0.9, (T, F, N))
    act = rng.uniform(0.2, 2.0, (T, F, N))
    value = loss_l2(mask, act, x, loading=0.0)
    model = (act * _mass_weighted_power(mask, x)).sum(-1)
    expected = np.abs(x[..., 0]) ** 2 / model + np.log(model)
    assert value.per_bin.shape == (T, F)
    np.testing.assert_allclose(value.per_bin, expected, rtol=1e-10)


def test_l2_minimum_at_matching_power():
    x = np.full((1, 1, 1), 0.7 + 0.2j)

    def at(scale):
        act = np.full((1, 1, 1), scale)
        return loss_l2(np.ones((1, 1, 1)), act, x, loading=0.0).total

    assert at(1.0) < at(0.9) and at(1.0) < at(1.1)
    assert at(1.0) == pytest.approx(1.0 + np.log(abs(0.7 + 0.2j) ** 2))


def test_l2_silent_observation_hits_floor():
    T, F, M = 3, 2, 2
    x = np.zeros((T, F, M), dtype=complex)
    value = loss_l2(np.full((T, F, 2), 0.5), np.ones((T, F, 2)), x)
    assert value.total == pytest.approx(T * F * M * np.log(1e-18), rel=1e-9)


def test_l2_invariant_to_mask_scale():
    inputs = LossInputs.random(9, n_frames=6)
    base = loss_l2(inputs.mask, inputs.act_star, inputs.x).total
    scaled = inputs.mask.copy()
    scaled[..., 0] *= 0.5
    assert loss_l2(scaled, inputs.act_star, inputs.x).total == pytest.approx(
        base, rel=1e-10
    )


@pytest.mark.parametrize("loss", ["psa", "l1", "l2"])
def test_grad_check_passes_on_random_instances(loss):
    for seed in range(20):
        report = grad_check(loss, LossInputs.random(seed))
        assert report.passed, report.to_text()


def test_grad_check_quadratic_is_exact():
    report = grad_check("quadratic", LossInputs.random(0))
    assert report.max_rel_error < 1e-8
    assert report.n_parameters == 24


def test_grad_check_counts_activations_for_l1():
    report = grad_check("l1", LossInputs.random(1))
    assert report.n_parameters == 48
    assert report.to_text().endswith("PASS")


def test_grad_check_limits_instance_size():
    with pytest.raises(ValueError):
        grad_check("l2", LossInputs.random(0, n_frames=21, n_freq=5))


def test_report_text():
    report = GradCheckReport("l2", 7, 24, 2e-3, 1e-4)
    assert not report.passed
    assert report.to_text() == (
        "loss=l2 seed=7 params=24 max_rel_err=2.000e-03 FAIL"
    )


def test_relative_error_floor():
    numeric = np.array([1.0, 0.0])
    assert relative_error(numeric, numeric) == 0.0
    assert relative_error(np.array([1.0, 1e-6]), numeric) == pytest.approx(
        1e-3
    )


def test_permutation_helpers():
    with pytest.raises(ValueError):
        Permutation((0, 0))
    p = Permutation((2, 0, 1))
    assert p.inverse().mapping == (1, 2, 0)
    assert Permutation.identity(3).mapping == (0, 1, 2)
    assert len(permutations(4)) == 24
    assert permutations(3)[0] == Permutation.identity(3)
    with pytest.raises(ValueError):
        permutations(5)


def _explicit_minimum(loss, inputs):
    refs = inputs.references(loss)
    axis = -2 if loss == "l1" else -1
    totals = []
    for perm in permutations(inputs.mask.shape[-1]):
        ordered = np.take(refs, list(perm.mapping), axis=axis)
        if loss == "psa":
            totals.append(loss_psa(inputs.mask, inputs.x[..., 0], ordered))
        elif loss == "l1":
            totals.append(
                loss_l1(inputs.mask, inputs.activation, inputs.x, ordered)
            )
        else:
            totals.append(loss_l2(inputs.mask, ordered, inputs.x))
    return min(v.total for v in totals)


@pytest.mark.parametrize("loss", ["psa", "l1", "l2"])
@pytest.mark.parametrize("n_sources", [1, 2, 3])
def test_pit_equals_explicit_enumeration(loss, n_sources):
    inputs = LossInputs.random(5, n_sources=n_sources)
    value, perm = pit_wrap(loss, inputs)
    assert value.total == pytest.approx(_explicit_minimum(loss, inputs))
    assert sorted(perm.mapping) == list(range(n_sources))
    if n_sources == 1:
        assert perm == Permutation.identity(1)


@pytest.mark.parametrize("loss", ["psa", "l1", "l2"])
def test_pit_is_symmetric_under_stream_swap(loss):
    inputs = LossInputs.random(11)
    swapped = LossInputs(
        mask=inputs.mask[..., ::-1],
        x=inputs.x,
        c=inputs.c,
        activation=inputs.activation[..., ::-1],
        act_star=inputs.act_star,
    )
    a, _ = pit_wrap(loss, inputs)
    b, _ = pit_wrap(loss, swapped)
    assert a.total == pytest.approx(b.total, rel=1e-10)


def test_pit_finds_crossed_assignment(rng):
    x = rng.standard_normal((4, 3, 2)) + 1j * rng.standard_normal((4, 3, 2))
    mask = rng.uniform(0.1, 0.9, (4, 3, 2))
    c = mask[..., None] * x[:, :, None, :]
    inputs = LossInputs(mask=mask[..., ::-1], x=x, c=c)
    value, perm = pit_wrap("psa", inputs)
    assert perm.mapping == (1, 0)
    assert value.total == pytest.approx(0.0, abs=1e-20)


def test_pit_rejects_too_many_sources():
    with pytest.raises(ValueError):
        pit_wrap("psa", LossInputs.random(0, n_sources=5))


@pytest.mark.parametrize("loss", ["psa", "l1", "l2"])
def test_pit_totals_match_wrapper(loss):
    inputs = LossInputs.random(8, n_sources=3)
    mask = torch.tensor(inputs.mask, requires_grad=True)
    activation = torch.tensor(inputs.activation) if loss == "l1" else None
    totals, perms = pit_totals(
        loss, mask, inputs.x, inputs.references(loss), activation
    )
    value, perm = pit_wrap(loss, inputs)
    best = int(torch.argmin(totals))
    assert perms[best] == perm
    assert float(totals[best]) == pytest.approx(value.total, rel=1e-10)
    totals.min().backward()
    assert mask.grad is not None and torch.all(torch.isfinite(mask.grad))
