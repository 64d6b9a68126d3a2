import logging

import numpy as np
import pytest

from twostep.hedging import fit_quantile
from twostep.losses import LossSpec
from twostep.regressors import (
    RegressorKind,
    RegressorSpec,
    StatePanel,
    TrainingSpec,
    basis_values,
    default_basis,
    fit,
    load_model,
    mlp_objective,
    save_model,
)
from twostep.risk import var


def state_panel(seed=0, m=4000, noise=0.5):
    """One period with state z, bank account and one risky asset; the ideal strategy depends on z."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(0.5, 1.5, size=m)
    y_now = z
    y_next = z * np.exp(rng.normal(0.01, 0.2, size=m))
    Y = np.column_stack([np.ones(m), y_next])
    units = np.column_stack([2.0 + z, 1.0 + 0.5 * z])
    target = np.einsum("ij,ij->i", units, Y) + noise * rng.standard_normal(m)
    now = np.column_stack([np.ones(m), y_now])
    return StatePanel(z[:, None], Y, now, target), units


# ---------------------------------------------------------------- gradient check


def _micro_params(rng, sizes):
    params = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        params += [rng.normal(0, 1.0, size=(a, b)), rng.normal(0, 0.3, size=b)]
    return params


@pytest.mark.parametrize(
    "loss",
    [LossSpec.quadratic(), LossSpec.koenker_bassett(0.9, smoothing=0.5), LossSpec.expectile(0.8)],
    ids=lambda s: s.label,
)
def test_mlp_gradient_matches_finite_differences(loss):
    rng = np.random.default_rng(42)
    x = rng.normal(size=(5, 2))
    Y = np.column_stack([np.ones(5), rng.lognormal(size=5)])
    target = rng.normal(size=5) * 3
    out_scale = np.array([1.3, 0.7])
    params = _micro_params(rng, [2, 10, 10, 10, 2])
    _, grads = mlp_objective(params, x, Y, target, out_scale, 2.0, loss)
    h = 1e-6
    worst = 0.0
    for k, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = mlp_objective(params, x, Y, target, out_scale, 2.0, loss, with_grad=False)[0]
            p[idx] = orig - h
            down = mlp_objective(params, x, Y, target, out_scale, 2.0, loss, with_grad=False)[0]
            p[idx] = orig
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - grads[k][idx]) / max(1.0, abs(fd)))
    assert worst < 1e-4


# ---------------------------------------------------------------- linear


def test_default_basis_and_values():
    assert default_basis(2) == ((0, 0), (1, 0), (0, 1))
    z = np.array([[2.0, 3.0], [1.0, 4.0]])
    phi = basis_values(z, ((0, 0), (-1, 0), (1, 2)))
    assert np.allclose(phi, [[1, 0.5, 18], [1, 1.0, 16]])


def test_linear_quadratic_recovers_strategy():
    panel, units = state_panel(noise=0.0)
    model = fit(RegressorSpec.linear(), panel, LossSpec.quadratic())
    assert np.allclose(model.predict(panel.features), units, atol=1e-8)
    assert model.predict(np.array([1.0])) == pytest.approx([3.0, 1.5])


def test_linear_quantile_matches_design_solver():
    panel, _ = state_panel(seed=1, m=1001)
    model = fit(RegressorSpec.linear(), panel, LossSpec.koenker_bassett(0.95))
    phi = basis_values(panel.features, default_basis(1))
    design = (phi[:, :, None] * panel.next_payoffs[:, None, :]).reshape(1001, -1)
    coef, obj, _ = fit_quantile(design, panel.targets, 0.95)
    assert np.allclose(model.coef.ravel(), coef)
    assert model.trace.final_objective == pytest.approx(obj)
    resid = panel.targets - np.einsum("ij,ij->i", model.predict(panel.features), panel.next_payoffs)
    assert abs(var(resid, 0.95)) < 1e-8 * np.abs(panel.targets).max()


def test_linear_drops_constant_feature(caplog):
    panel, _ = state_panel(seed=2, m=500)
    flat = StatePanel(np.ones((500, 1)), panel.next_payoffs, panel.now_prices, panel.targets)
    with caplog.at_level(logging.INFO):
        model = fit(RegressorSpec.linear(), flat, LossSpec.quadratic())
    assert "zero variance" in caplog.text
    assert model.basis == ((0,),)


def test_panel_shape_validation():
    with pytest.raises(ValueError):
        StatePanel(np.ones((5, 1)), np.ones((5, 2)), np.ones((4, 2)), np.ones(5))


# ---------------------------------------------------------------- network


SMALL_MLP = RegressorSpec.mlp(epochs=60, batch_size=256, step_size=3e-3, seed=3)


def test_mlp_learns_state_dependent_hedge():
    panel, units = state_panel(seed=4, noise=0.1)
    constant = fit(RegressorSpec.linear(basis=((0,),)), panel, LossSpec.quadratic())
    model = fit(SMALL_MLP, panel, LossSpec.quadratic())
    pred = model.predict(panel.features)
    res_mlp = panel.targets - np.einsum("ij,ij->i", pred, panel.next_payoffs)
    res_const = panel.targets - np.einsum("ij,ij->i", constant.predict(panel.features), panel.next_payoffs)
    assert np.mean(res_mlp**2) < 0.25 * np.mean(res_const**2)
    assert abs(res_mlp.mean()) < 1e-9 * np.abs(panel.targets).max()
    assert model.trace.history == sorted(model.trace.history, reverse=True)


def test_mlp_quantile_residual_var_zero():
    panel, _ = state_panel(seed=5, noise=0.3)
    model = fit(SMALL_MLP, panel, LossSpec.koenker_bassett(0.95))
    resid = panel.targets - np.einsum("ij,ij->i", model.predict(panel.features), panel.next_payoffs)
    assert abs(var(resid, 0.95)) < 1e-9 * np.abs(panel.targets).max()
    assert model.loss.smoothing == 0.0


def test_mlp_constant_inputs_give_exact_linear_solution():
    panel, _ = state_panel(seed=6, m=801)
    flat = StatePanel(np.full((801, 2), 3.0), panel.next_payoffs, panel.now_prices, panel.targets)
    loss = LossSpec.koenker_bassett(0.9)
    net = fit(SMALL_MLP, flat, loss)
    lin = fit(RegressorSpec.linear(basis=((0, 0),)), flat, loss)
    assert np.allclose(net.predict(flat.features[:3]), lin.coef[0], rtol=1e-10)


def test_mlp_is_deterministic():
    panel, _ = state_panel(seed=7, m=1000)
    a = fit(SMALL_MLP, panel, LossSpec.quadratic())
    b = fit(SMALL_MLP, panel, LossSpec.quadratic())
    assert all(np.array_equal(u, v) for u, v in zip(a.weights, b.weights))


def test_mlp_warm_start_does_not_hurt():
    panel, _ = state_panel(seed=8, m=2000)
    g = fit(SMALL_MLP, panel, LossSpec.quadratic())
    h = fit(SMALL_MLP, panel, LossSpec.koenker_bassett(0.95), init=g)
    assert h.trace.final_objective <= h.trace.history[0] + 1e-12


def test_save_load_roundtrip(tmp_path):
    panel, _ = state_panel(seed=9, m=600)
    for spec in (SMALL_MLP, RegressorSpec.linear(basis=((0,), (1,), (2,)))):
        model = fit(spec, panel, LossSpec.expectile(0.9))
        path = tmp_path / f"{spec.kind.value}.json"
        save_model(model, path)
        back = load_model(path)
        assert np.array_equal(back.predict(panel.features), model.predict(panel.features))
        assert back.kind is spec.kind


def test_load_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_model(p)


def test_spec_roundtrip_and_validation():
    spec = RegressorSpec.mlp(hidden=(4, 4), epochs=7, seed=11)
    assert RegressorSpec.from_dict(spec.to_dict()) == spec
    assert RegressorSpec.linear().kind is RegressorKind.LINEAR
    with pytest.raises(ValueError, match="epochs"):
        TrainingSpec(epochs=0)
    with pytest.raises(ValueError, match="hidden"):
        RegressorSpec.mlp(hidden=(0,))
