import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gzsl.autodiff import MLP, Rng, ShapeError, Tensor, state_dict
from gzsl.cada import (
    CadaBatch,
    CadaConfig,
    CadaModel,
    GaussianLatent,
    Schedule,
    cross_alignment_loss,
    distribution_alignment_loss,
    encode,
    encode_mean,
    kl_term,
    reconstruction_loss,
    reparameterize,
    sample_latents,
    total_loss,
    train_cada,
    warmup_weight,
)
from gzsl.data import SynthSpec, synth_benchmark

SMALL = dict(latent_dim=4, enc_hidden_visual=8, enc_hidden_semantic=8, dec_hidden_visual=8, dec_hidden_semantic=8)


def gaussian(mu, log_var):
    return GaussianLatent(Tensor(np.atleast_2d(mu)), Tensor(np.atleast_2d(log_var)))


@pytest.fixture(scope="module")
def bench():
    return synth_benchmark(SynthSpec(seed=0))


# ------------------------------------------------------------- schedules

def test_warmup_weight_examples():
    gamma = CadaConfig().gamma_schedule
    delta = CadaConfig().delta_schedule
    assert warmup_weight(gamma, 10) == 0.0
    assert warmup_weight(gamma, 31) == pytest.approx(0.44)
    assert warmup_weight(delta, 100) == pytest.approx(0.234)
    assert warmup_weight(gamma, 75) == warmup_weight(gamma, 500)
    with pytest.raises(ValueError):
        warmup_weight(gamma, -1)
    with pytest.raises(ValueError):
        Schedule(1.0, 5, 5)


def test_config_round_trip():
    cfg = CadaConfig(latent_dim=8, gamma_schedule=Schedule(0.1, 2, 4))
    assert CadaConfig.from_dict(cfg.to_dict()) == cfg


# ------------------------------------------------------------- encode / sample

def test_encode_shapes_and_errors():
    model = CadaModel.init(6, 3, CadaConfig(**SMALL), Rng(0))
    g = encode(model, "visual", np.ones((5, 6)))
    assert g.mu.shape == (5, 4) == g.log_var.shape
    assert encode(model, "semantic", np.eye(3)).mu.shape == (3, 4)
    np.testing.assert_array_equal(encode(model, "visual", np.ones((2, 6))).mu.data,
                                  encode(model, "visual", np.ones((2, 6))).mu.data)
    with pytest.raises(ValueError, match="modality"):
        encode(model, "audio", np.ones((1, 6)))
    with pytest.raises(ShapeError):
        encode(model, "visual", np.ones((1, 3)))


def test_reparameterize_examples():
    g = gaussian([[1.0, -2.0]], [[0.0, 0.0]])
    np.testing.assert_array_equal(reparameterize(g).data, [[1.0, -2.0]])
    np.testing.assert_array_equal(reparameterize(g, noise=np.ones((1, 2))).data, [[2.0, -1.0]])
    mu, log_var = np.array([0.5, -1.0]), np.array([0.3, -0.7])
    big = gaussian(np.tile(mu, (10000, 1)), np.tile(log_var, (10000, 1)))
    z = reparameterize(big, Rng(0)).data
    assert np.all(np.abs(z.mean(0) - mu) < 3 * np.exp(log_var / 2) / 100)


def test_reparameterize_gradient_reaches_mu_and_log_var():
    mu = Tensor(np.zeros((1, 2)), requires_grad=True)
    lv = Tensor(np.zeros((1, 2)), requires_grad=True)
    reparameterize(GaussianLatent(mu, lv), noise=np.array([[2.0, -1.0]])).sum().backward()
    np.testing.assert_allclose(mu.grad, [[1.0, 1.0]])
    np.testing.assert_allclose(lv.grad, [[1.0, -0.5]])


def test_sample_latents_counts_and_zero_noise():
    model = CadaModel.init(6, 3, CadaConfig(**SMALL), Rng(0))
    sem = Rng(1).normal((4, 3))
    z, src = sample_latents(model, "semantic", sem, 200, Rng(2), labels=[8, 9, 10, 11])
    assert z.shape == (800, 4) and src.tolist() == sorted([8, 9, 10, 11] * 200)
    z0, _ = sample_latents(model, "semantic", sem, 2, None)
    np.testing.assert_array_equal(z0[::2], encode_mean(model, "semantic", sem))
    empty, lab = sample_latents(model, "semantic", sem, 0, Rng(0))
    assert empty.shape == (0, 4) and lab.size == 0


# ------------------------------------------------------------- loss terms

def test_kl_examples():
    assert kl_term(gaussian([[0.0, 0.0]], [[0.0, 0.0]])).item() == 0.0
    assert kl_term(gaussian([[1.0]], [[0.0]])).item() == pytest.approx(0.5)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_kl_nonnegative(mu, lv):
    assert kl_term(gaussian([mu], [lv])).item() >= -1e-12


def test_distribution_alignment_examples():
    g = gaussian([[0.3, 1.0, -2.0]], [[0.1, -0.4, 0.0]])
    assert distribution_alignment_loss(g, g).item() == 0.0
    h = gaussian([[1.3, 1.0, -2.0]], [[0.1, -0.4, 0.0]])
    assert distribution_alignment_loss(g, h).item() == pytest.approx(1.0)
    rng = Rng(3)
    m1, m2, l1, l2 = (rng.normal((5, 3)) for _ in range(4))
    expect = np.mean(((m1 - m2) ** 2).sum(1) + ((np.exp(l1 / 2) - np.exp(l2 / 2)) ** 2).sum(1))
    assert distribution_alignment_loss(gaussian(m1, l1), gaussian(m2, l2)).item() == pytest.approx(expect)


def _identity_decoder(n):
    mlp = MLP.init([n, n], Rng(0))
    mlp.layers[0].weight.data[:] = np.eye(n)
    return mlp


def _toy_model():
    """1-d latent; each decoder maps the latent to a fixed affine image."""
    model = CadaModel.init(1, 1, CadaConfig(latent_dim=1, enc_hidden_visual=2, enc_hidden_semantic=2,
                                            dec_hidden_visual=2, dec_hidden_semantic=2), Rng(0))
    model.dec_visual = _identity_decoder(1)
    model.dec_semantic = _identity_decoder(1)
    return model


def test_cross_alignment_l1_toy(monkeypatch):
    model = _toy_model()
    batch = CadaBatch(np.array([[2.0]]), np.array([[0.0]]))
    # visual latent 0.5, semantic latent 1.5 -> visual rebuilt from semantic latent: |2 - 1.5| = 0.5;
    # semantic rebuilt from visual latent: |0 - 0.5| = 0.5
    fixed = {"visual": gaussian([[0.5]], [[0.0]]), "semantic": gaussian([[1.5]], [[0.0]])}
    monkeypatch.setattr("gzsl.cada.encode", lambda m, mod, x: fixed[mod])
    zero = (np.zeros((1, 1)), np.zeros((1, 1)))
    assert cross_alignment_loss(model, batch, zero).item() == pytest.approx(1.0)
    assert reconstruction_loss(model, batch, zero).item() == pytest.approx(1.5 + 1.5)


def test_cross_alignment_matches_brute_force():
    cfg = CadaConfig(**SMALL)
    model = CadaModel.init(5, 3, cfg, Rng(0))
    rng = Rng(1)
    batch = CadaBatch(rng.normal((4, 5)), rng.normal((4, 3)))
    noise = (rng.normal((4, 4)), rng.normal((4, 4)))
    z = {m: reparameterize(encode(model, m, getattr(batch, m)), noise=n).data
         for m, n in zip(("visual", "semantic"), noise)}
    dec = {"visual": model.dec_visual, "semantic": model.dec_semantic}
    expect = 0.0
    for target in ("visual", "semantic"):
        for source in ("visual", "semantic"):
            if source != target:
                out = dec[target](Tensor(z[source])).data
                expect += np.abs(out - getattr(batch, target)).sum(1).mean()
    assert cross_alignment_loss(model, batch, noise).item() == pytest.approx(expect, rel=1e-12)


def test_unpaired_batch_rejected():
    with pytest.raises(ShapeError, match="unpaired"):
        CadaBatch(np.ones((3, 5)), np.ones((2, 3)))


def test_total_loss_weights():
    cfg = CadaConfig(**SMALL)
    model = CadaModel.init(5, 3, cfg, Rng(0))
    rng = Rng(2)
    batch = CadaBatch(rng.normal((4, 5)), rng.normal((4, 3)))
    noise = (rng.normal((4, 4)), rng.normal((4, 4)))
    early = total_loss(model, batch, 0, cfg, noise)
    assert early.weighted_total.item() == pytest.approx(early.recon.item())
    late = total_loss(model, batch, 40, cfg, noise)
    expect = (late.recon.item() + 0.0026 * 40 * late.kl.item() + 0.044 * 19 * late.cross.item()
              + 0.0026 * 40 * late.dist.item())
    assert late.weighted_total.item() == pytest.approx(expect)


def test_total_loss_zero_for_perfect_model():
    model = _toy_model()
    for enc in (model.enc_visual, model.enc_semantic):
        for layer in (enc.hidden, enc.mu, enc.log_var):
            layer.weight.data[:] = 0.0
            layer.bias.data[:] = 0.0
    batch = CadaBatch(np.zeros((3, 1)), np.zeros((3, 1)))
    parts = total_loss(model, batch, 80, CadaConfig(), (np.zeros((3, 1)), np.zeros((3, 1))))
    assert parts.weighted_total.item() == 0.0


# ------------------------------------------------------------- training

def test_train_zero_epochs(bench):
    cfg = CadaConfig(epochs=0, **SMALL)
    model, history = train_cada(bench, cfg)
    assert history == []
    init = CadaModel.init(bench.visual_dim, bench.semantic_dim, cfg, Rng(cfg.seed).spawn())
    for a, b in zip(model.parameters(), init.parameters()):
        np.testing.assert_array_equal(a.data, b.data.astype(np.float32))


def test_train_is_deterministic(bench):
    cfg = CadaConfig(epochs=3, seed=5, **SMALL)
    (m1, h1), (m2, h2) = train_cada(bench, cfg), train_cada(bench, cfg)
    assert h1 == h2
    for k, v in state_dict(m1.named_parameters()).items():
        np.testing.assert_array_equal(v, state_dict(m2.named_parameters())[k])


def test_train_excludes_classes(bench, monkeypatch):
    seen_labels = []
    import gzsl.cada as cada

    real = cada.paired_batch
    monkeypatch.setattr(cada, "paired_batch", lambda ds, idx: seen_labels.extend(ds.labels[idx]) or real(ds, idx))
    train_cada(bench, CadaConfig(epochs=1, **SMALL), exclude_classes=[0, 3])
    assert set(seen_labels) == set(range(8)) - {0, 3}


def test_trained_semantic_draws_cluster_by_class(bench):
    cfg = CadaConfig(epochs=30, latent_dim=16, enc_hidden_visual=128, enc_hidden_semantic=128,
                     dec_hidden_visual=128, dec_hidden_semantic=128)
    model, history = train_cada(bench, cfg)
    assert history[-1]["recon"] < history[0]["recon"]
    means = encode_mean(model, "semantic", bench.semantic)
    for c in range(12):
        z, _ = sample_latents(model, "semantic", bench.semantic[[c]], 200, Rng(c))
        own = np.linalg.norm(z - means[c], axis=1).mean()
        others = [np.linalg.norm(z - means[o], axis=1).mean() for o in range(12) if o != c]
        assert own < min(others)
