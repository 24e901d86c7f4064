import numpy as np
import pytest

import hvae


def test_expm_lands_on_the_group():
    rng = np.random.default_rng(0)
    raw = rng.normal(size=hvae.parameter_count(3, "full")) * 0.3
    h = hvae.assemble_hamiltonian(raw.tolist(), 3, "full")
    s = hvae.expm(h)
    j = hvae.symplectic_form(3)
    assert np.abs(s.T @ j @ s - j).max() < 1e-10
    assert abs(np.linalg.det(s) - 1) < 1e-10
    r = hvae.operator_residuals(h, 2.0)
    assert r["group"] < 1e-8 and r["algebra"] < 1e-12


def test_expm_matches_the_series_on_a_small_matrix():
    a = np.array([[0.0, 1.0], [-1.0, 0.0]])
    t = 0.7
    want = np.array([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]])
    assert np.allclose(hvae.expm(t * a), want, atol=1e-14)
    e = np.eye(2)
    # L(A, I) = exp(A) when A commutes with I
    assert np.allclose(hvae.expm_frechet(t * a, e), want, atol=1e-12)


def test_datasets_round_trip(tmp_path):
    train, ev = hvae.make_datasets(30, 9, seed=4)
    assert len(train) == 30 and len(ev) == 9
    x = train.images
    assert x.shape == (30, 8, 3, 16, 16)
    assert x.min() >= -1 and x.max() <= 1
    assert not set(train.identities) & set(ev.identities)
    path = tmp_path / "train.seqd"
    train.save(str(path))
    assert hvae.load_dataset(str(path)) == train
    assert path.read_bytes() == train.to_bytes()
    with pytest.raises(hvae.FormatError):
        hvae.dataset_from_bytes(b"SEQD0002" + train.to_bytes()[8:])


def test_render_is_periodic():
    a = hvae.render_sequence(3, 0, offset=0, length=16)
    assert np.array_equal(a[:8], a[8:])


def test_model_tasks_and_metrics(tmp_path):
    small = {"model.z_dim": "8", "model.trunk_hidden": "32", "model.h": "32", "model.decoder_hidden": "32"}
    m = hvae.Model.init(small, seed=1)
    train, ev = hvae.make_datasets(12, 6, seed=2)
    x = ev.images[:2]
    rec = m.reconstruct(x, ev.labels[:2])
    assert rec.shape == x.shape
    a, b = m.motion_swap(x, ev.labels[:2], x, ev.labels[:2])
    assert np.array_equal(a, rec) and np.array_equal(b, rec)
    g = m.generate(1, n=2, length=16, seed=3)
    assert g.shape == (2, 16, 3, 16, 16)
    assert np.array_equal(g, m.generate(1, n=2, length=16, seed=3))
    seq = m.image_to_sequence(x[:, 0], 2, 16)
    assert seq.shape == (2, 16, 3, 16, 16)

    u = (x[0, 0] + 1) / 2
    assert hvae.mse(u, u) == 0.0
    assert hvae.psnr(u, u) == 99.0
    assert hvae.ssim(u, u) == pytest.approx(1.0)

    out = tmp_path / "grid.ppm"
    hvae.export_grid(g, str(out))
    img = hvae.read_ppm(str(out))
    assert img.shape == (32, 256, 3)
    assert img[0, 0, 0] == hvae.quantize(float(g[0, 0, 0, 0, 0]))


def test_train_and_reload(tmp_path):
    train, _ = hvae.make_datasets(12, 0, seed=5)
    data = tmp_path / "train.seqd"
    train.save(str(data))
    cfg = {"model.z_dim": "8", "model.trunk_hidden": "32", "model.h": "32", "model.decoder_hidden": "32",
           "train.steps": "3", "train.seed": "1"}
    assert hvae.train(str(data), str(tmp_path / "run"), cfg) == 3
    lines = (tmp_path / "run" / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 3
    m = hvae.Model.load(str(tmp_path / "run" / "checkpoint.hvae"))
    assert m.config["model.z_dim"] == "8"
    scores = hvae.reconstruction_scores(m, train)
    assert len(scores["per_frame"]) == 8
