import csv

import numpy as np
import pytest

from sscn import autodiff as ad
from sscn.dataio import DataMatrix, SubspaceSpec, generate_union_of_subspaces, nonlinear_union_of_subspaces
from sscn.edsc import check_subspace_preserving, solve_edsc_closed_form
from sscn.errors import ConvergenceError, DomainError
from sscn.network import (Lambdas, Schedule, SscnModel, autoencoder_loss, forward_sscn,
                          latent_coefficients, normalize_latent_scale, refit_embedding, sscn_loss,
                          train_sscn, write_trace_csv)
from sscn.siamese import analytic_optimum, coefficients, siamese_objective


def _identity_model(d, k, q, lambdas):
    model = SscnModel(d, [], d_z=d, k=k, q=q, lambdas=lambdas, rng=0)
    for layer in model.encoder.layers + model.decoder.layers:
        layer.w.value = np.eye(d)
        layer.b.value = np.zeros((d, 1))
    return model


def test_decoder_mirrors_encoder():
    model = SscnModel(20, [16, 8], d_z=4, k=2, q=3, rng=0)
    assert model.encoder.sizes == [20, 16, 8, 4]
    assert model.decoder.sizes == [4, 8, 16, 20]
    assert model.embed_w.shape == (6, 4) and model.d_h == 6


@pytest.mark.parametrize("lam", [1.0, 10.0, 100.0])
def test_identity_network_reduces_to_linear_model(lam, rng):
    x = rng.standard_normal((6, 25))
    lam2 = 0.7
    model = _identity_model(6, 3, 2, Lambdas(self_expr=lam, recon=lam2, clf=0.0))
    lin = analytic_optimum(x, lam, 6)
    model.embed_w.value = lin.w
    loss, _ = sscn_loss(model, x)
    q = coefficients(lin, x)
    expected = siamese_objective(x, lin, lam) + 0.5 * lam2 * np.sum((x - x @ q) ** 2)
    assert abs(float(loss.value) - expected) <= 1e-10 * max(1.0, abs(expected))


def test_forward_shapes_and_definitions(rng):
    model = SscnModel(7, [5], d_z=3, k=2, q=2, rng=1)
    x = rng.standard_normal((7, 9))
    z, h, q, x_hat = forward_sscn(model, x)
    assert (z.shape, h.shape, q.shape, x_hat.shape) == ((3, 9), (4, 9), (9, 9), (7, 9))
    np.testing.assert_allclose(h.value, model.embed_w.value @ z.value)
    np.testing.assert_allclose(q.value, h.value.T @ h.value)
    np.testing.assert_allclose(x_hat.value, model.decoder.forward_numpy(z.value @ q.value))


def test_batch_of_one_gives_squared_norm(rng):
    model = SscnModel(5, [4], d_z=3, k=2, q=1, rng=2)
    _, h, q, _ = forward_sscn(model, rng.standard_normal((5, 1)))
    assert q.shape == (1, 1)
    assert q.value[0, 0] == pytest.approx(float(h.value[:, 0] @ h.value[:, 0]), rel=1e-14)


def test_zero_input_determined_by_biases(rng):
    model = SscnModel(4, [], d_z=3, k=1, q=2, rng=3)
    enc, dec = model.encoder.layers[0], model.decoder.layers[0]
    enc.b.value = rng.standard_normal((3, 1))
    dec.b.value = rng.standard_normal((4, 1))
    z, h, q, x_hat = forward_sscn(model, np.zeros((4, 2)))
    z_ref = np.repeat(enc.b.value, 2, axis=1)
    h_ref = model.embed_w.value @ z_ref
    q_ref = h_ref.T @ h_ref
    np.testing.assert_allclose(z.value, z_ref)
    np.testing.assert_allclose(q.value, q_ref)
    np.testing.assert_allclose(x_hat.value, dec.w.value @ (z_ref @ q_ref) + dec.b.value)
    # without biases every output vanishes
    _, _, q0, x0 = forward_sscn(SscnModel(4, [5], d_z=3, k=1, q=2, rng=3, bias=False),
                                np.zeros((4, 2)))
    assert not q0.value.any() and not x0.value.any()


def test_dimension_mismatch_rejected(rng):
    model = SscnModel(4, [3], d_z=2, rng=0)
    with pytest.raises(DomainError):
        forward_sscn(model, rng.standard_normal((5, 3)))
    with pytest.raises(DomainError):
        model.encode(rng.standard_normal((5, 3)))


def test_zero_lambdas_leave_coefficient_term(rng):
    model = SscnModel(6, [5], d_z=3, k=2, q=2, lambdas=Lambdas(0.0, 0.0, 0.0), rng=4)
    x = rng.standard_normal((6, 8))
    loss, terms = sscn_loss(model, x, targets=rng.integers(0, 2, 8))
    _, _, q, _ = forward_sscn(model, x)
    assert float(loss.value) == pytest.approx(0.5 * np.sum(q.value ** 2), rel=1e-13)
    assert terms["clf"] == 0.0


def test_perfect_autoencoder_with_zero_q(rng):
    lam1 = 2.5
    model = SscnModel(4, [], d_z=3, k=1, q=2, lambdas=Lambdas(lam1, 3.0, 0.0), rng=5)
    model.embed_w.value[:] = 0.0
    col = rng.standard_normal((4, 1))
    model.decoder.layers[0].b.value = col      # dec(0) = col
    x = np.repeat(col, 6, axis=1)
    loss, terms = sscn_loss(model, x)
    z = model.encode(x)
    assert terms["recon"] == 0.0
    assert float(loss.value) == pytest.approx(0.5 * lam1 * np.sum(z ** 2), rel=1e-13)


def test_classifier_term_only_with_targets(rng):
    model = SscnModel(6, [5], d_z=3, k=2, q=2, rng=6)
    x = rng.standard_normal((6, 8))
    _, off = sscn_loss(model, x)
    _, on = sscn_loss(model, x, targets=rng.integers(0, 2, 8))
    assert off["clf"] == 0.0 and on["clf"] > 0.0
    assert on["total"] == pytest.approx(off["total"] + on["clf"], rel=1e-13)


def test_small_gradient_steps_descend_monotonically(rng):
    model = SscnModel(8, [6], d_z=4, k=2, q=2, rng=7)
    x = rng.standard_normal((8, 20))
    params = model.parameters(include_rotation=False)
    losses = []
    for _ in range(50):
        loss, _ = sscn_loss(model, x)
        losses.append(float(loss.value))
        ad.zero_grad(params)
        ad.backward(loss, params)
        for p in params:
            p.value = p.value - 1e-5 * p.grad
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_pretraining_reduces_reconstruction_tenfold():
    data, _ = generate_union_of_subspaces(SubspaceSpec(seed=3))
    model = SscnModel(data.d, [32], d_z=6, k=3, q=2, rng=0)
    before = float(autoencoder_loss(model, data.x)[0].value)
    train_sscn(model, data, schedule=Schedule(pretrain_epochs=1500, joint_epochs=0, lr=3e-3,
                                              batch_size=data.n, refit_embed=False), rng=0)
    after = float(autoencoder_loss(model, data.x)[0].value)
    assert after * 10 <= before


def test_nonlinear_synthetic_latent_is_subspace_preserving():
    data, _ = nonlinear_union_of_subspaces(SubspaceSpec(seed=0), out_dim=20, gain=0.2)
    raw = check_subspace_preserving(solve_edsc_closed_form(data, 10.0), data.labels)
    model = SscnModel(20, [32], d_z=6, k=3, q=2, rng=0, bias=False)
    train_sscn(model, data, rng=0,
               schedule=Schedule(pretrain_epochs=4000, joint_epochs=500, lr=3e-3,
                                 joint_lr=3e-4, batch_size=data.n))
    z = model.encode(data)
    ratio = check_subspace_preserving(solve_edsc_closed_form(z, 10.0), data.labels)
    assert ratio < 0.05
    assert ratio < raw


def test_training_is_deterministic():
    data, _ = generate_union_of_subspaces(SubspaceSpec(seed=1))
    runs = []
    for _ in range(2):
        model = SscnModel(data.d, [8], d_z=4, k=3, q=2, rng=11)
        res = train_sscn(model, data, schedule=Schedule(pretrain_epochs=20, joint_epochs=10,
                                                        batch_size=60), rng=5)
        runs.append((res.trace, model.embed_w.value.copy()))
    assert runs[0][0] == runs[1][0]
    assert np.array_equal(runs[0][1], runs[1][1])


def test_trace_stages_and_csv(tmp_path):
    data, _ = generate_union_of_subspaces(SubspaceSpec(seed=1))
    model = SscnModel(data.d, [8], d_z=4, k=3, q=2, rng=0)
    res = train_sscn(model, data, schedule=Schedule(pretrain_epochs=3, joint_epochs=2,
                                                    batch_size=50), rng=0)
    assert [r["stage"] for r in res.trace] == ["pretrain"] * 3 + ["joint"] * 2
    path = tmp_path / "trace.csv"
    write_trace_csv(path, res.trace)
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["epoch", "stage", "total", "coef", "self_expr", "recon", "clf"]
    assert float(rows[-1]["total"]) == pytest.approx(res.trace[-1]["total"])


def test_skip_pretrain_runs_joint_only():
    data, _ = generate_union_of_subspaces(SubspaceSpec(seed=1))
    model = SscnModel(data.d, [8], d_z=4, k=3, q=2, rng=0)
    seen = []
    res = train_sscn(model, data, schedule=Schedule(pretrain_epochs=5, joint_epochs=2,
                                                    batch_size=50),
                     rng=0, skip_pretrain=True, on_pretrained=seen.append)
    assert {r["stage"] for r in res.trace} == {"joint"} and not seen


def test_divergence_aborts_with_trace():
    data, _ = generate_union_of_subspaces(SubspaceSpec(seed=1))
    model = SscnModel(data.d, [8], d_z=4, k=3, q=2, rng=0)
    with pytest.raises(ConvergenceError) as info:
        train_sscn(model, data, rng=0, schedule=Schedule(pretrain_epochs=5, joint_epochs=0,
                                                         batch_size=50, divergence_factor=1e-9))
    assert len(info.value.trace) == 1


@pytest.mark.parametrize("bias", [True, False])
def test_latent_normalization_preserves_autoencoder(bias, rng):
    model = SscnModel(6, [5], d_z=3, k=1, q=2, rng=0, bias=bias)
    if bias:
        for p in model.parameters():
            if p.name.endswith(".b"):
                p.value = rng.standard_normal(p.value.shape)
    x = rng.standard_normal((6, 30))
    out = model.decoder.forward_numpy(model.encode(x))
    c = normalize_latent_scale(model, x)
    z = model.encode(x)
    assert c > 0
    assert np.mean(np.sum(z * z, axis=0)) == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(model.decoder.forward_numpy(z), out, rtol=1e-10, atol=1e-12)


def test_refit_embedding_paths(rng):
    model = SscnModel(6, [5], d_z=4, k=2, q=2, lambdas=Lambdas(10.0, 1.0, 0.1), rng=0)
    z = rng.standard_normal((4, 30))
    assert refit_embedding(model, z) == "analytic"
    ref = coefficients(analytic_optimum(z, 10.0, 4), z)
    h = model.embed_w.value @ z
    np.testing.assert_allclose(h.T @ h, ref, atol=1e-10)
    small = SscnModel(6, [5], d_z=4, k=1, q=2, lambdas=Lambdas(10.0, 1.0, 0.1), rng=0)
    assert refit_embedding(small, z, rng=0) == "trained"
    assert small.embed_w.shape == (2, 4)


def test_save_load_round_trip(tmp_path, rng):
    model = SscnModel(6, [5], d_z=3, k=2, q=2, rng=0, bias=False,
                      lambdas=Lambdas(0.5, 2.0, 0.3))
    model.rotation.value = np.linalg.qr(rng.standard_normal((4, 4)))[0]
    path = model.save(tmp_path / "m.sscn", note="x")
    loaded, meta = SscnModel.load(path)
    x = rng.standard_normal((6, 10))
    assert meta["note"] == "x" and loaded.config() == model.config()
    np.testing.assert_array_equal(loaded.embed(x), model.embed(x))
    np.testing.assert_array_equal(loaded.rotation.value, model.rotation.value)


def test_parameter_count_independent_of_n(rng):
    model = SscnModel(10, [7], d_z=3, k=2, q=2, rng=0)
    expected = (10 * 7 + 7) + (7 * 3 + 3) + (3 * 7 + 7) + (7 * 10 + 10) + 4 * 3
    assert model.n_params() == expected
    assert model.n_params(include_rotation=True) == expected + 16
    for n in (5, 50):
        assert latent_coefficients(model, DataMatrix(rng.standard_normal((10, n)))).shape == (n, n)
