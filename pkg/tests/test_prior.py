"""Prior oracles: brute-force penalty summation, covariance
eigendecomposition for the linear backend, central finite differences for
every decode_gradient path, byte-level archive checks."""

import numpy as np
import pytest

from uncalmocap import prior as pr
from uncalmocap.exceptions import (
    InsufficientData,
    MalformedArchive,
    ShapeMismatch,
    TooShort,
    UntrainedBackend,
)


# ------------------------------
# latent_linear_penalty
# ------------------------------

def test_penalty_zero_on_constant_code():
    z = np.tile(np.arange(32.0), (10, 1))
    value, grad = pr.latent_linear_penalty(z)
    assert value == 0.0
    assert np.allclose(grad, 0.0)


def test_penalty_zero_on_affine_code():
    t = np.arange(12.0)[:, None]
    z = 3.0 + t * np.linspace(-1, 1, 32)[None, :]
    value, grad = pr.latent_linear_penalty(z)
    assert np.isclose(value, 0.0, atol=1e-18)
    assert np.allclose(grad, 0.0, atol=1e-12)


def test_penalty_translation_invariant():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(15, 32))
    v0, _ = pr.latent_linear_penalty(z)
    v1, _ = pr.latent_linear_penalty(z + rng.normal(size=(1, 32)))
    assert np.isclose(v0, v1, rtol=1e-12)


def test_penalty_matches_brute_force_and_fd():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(9, 32))
    value, grad = pr.latent_linear_penalty(z)
    # brute force summation over interior frames
    ref = 0.0
    for t in range(1, 8):
        d = z[t + 1] - 2 * z[t] + z[t - 1]
        ref += float(d @ d)
    assert np.isclose(value, ref, rtol=1e-12)
    # central finite differences on random entries
    h = 1e-6
    for _ in range(20):
        i, j = rng.integers(9), rng.integers(32)
        zp, zm = z.copy(), z.copy()
        zp[i, j] += h
        zm[i, j] -= h
        fd = (pr.latent_linear_penalty(zp)[0] - pr.latent_linear_penalty(zm)[0]) / (2 * h)
        assert np.isclose(grad[i, j], fd, rtol=1e-6, atol=1e-8)


def test_penalty_rejects_short_sequences():
    with pytest.raises(TooShort):
        pr.latent_linear_penalty(np.zeros((2, 32)))


# ------------------------------
# linear backend
# ------------------------------

def low_rank_clips(rng, rank=10, clips=4, frames=50):
    basis = np.linalg.qr(rng.normal(size=(138, rank)))[0]
    mean = rng.normal(size=138)
    out = []
    for _ in range(clips):
        coeff = rng.normal(size=(frames, rank)) * np.linspace(5, 1, rank)
        out.append(mean + coeff @ basis.T)
    return out


def test_linear_backend_recovers_exact_subspace():
    rng = np.random.default_rng(2)
    clips = low_rank_clips(rng)
    backend = pr.train_linear_backend(clips, dim=32)
    for clip in clips:
        mu, sigma = backend.encode(clip)
        recon = backend.decode(mu)
        assert np.max(np.abs(recon - clip)) < 1e-9
        assert np.all(sigma == 1.0)
    assert backend.training_residual_ < 1e-6


def test_linear_backend_centered_input_encodes_to_zero():
    rng = np.random.default_rng(3)
    backend = pr.train_linear_backend(low_rank_clips(rng), dim=32)
    mu, _ = backend.encode(np.tile(backend.mean_, (5, 1)))
    assert np.allclose(mu, 0.0, atol=1e-9)


def test_linear_backend_projection_idempotent():
    rng = np.random.default_rng(4)
    backend = pr.train_linear_backend(low_rank_clips(rng), dim=16)
    x = rng.normal(size=(7, 138))
    recon = backend.decode(backend.encode(x)[0])
    mu1, _ = backend.encode(recon)
    mu0, _ = backend.encode(x)
    assert np.allclose(mu0, mu1, atol=1e-10)


def test_linear_backend_explained_variance_ordering():
    rng = np.random.default_rng(5)
    backend = pr.train_linear_backend([rng.normal(size=(200, 138))], dim=32)
    ev = backend.explained_variance_
    assert np.all(np.diff(ev) <= 1e-12)


def test_linear_backend_matches_eigendecomposition_oracle():
    rng = np.random.default_rng(6)
    rows = np.concatenate(low_rank_clips(rng, rank=20), axis=0)
    rows += rng.normal(scale=0.05, size=rows.shape)
    backend = pr.train_linear_backend([rows], dim=12)
    recon = backend.decode(backend.encode(rows)[0])
    err = float(np.linalg.norm(rows - recon) ** 2)

    # oracle: covariance eigendecomposition
    centered = rows - rows.mean(axis=0)
    cov = centered.T @ centered
    w, v = np.linalg.eigh(cov)
    basis = v[:, ::-1][:, :12]
    recon_ref = centered @ basis @ basis.T + rows.mean(axis=0)
    err_ref = float(np.linalg.norm(rows - recon_ref) ** 2)
    assert abs(err - err_ref) < 1e-8 * max(err_ref, 1.0)


def test_linear_backend_gradient_is_exact_adjoint():
    rng = np.random.default_rng(7)
    backend = pr.train_linear_backend(low_rank_clips(rng), dim=8)
    z = rng.normal(size=(6, 8))
    upstream = rng.normal(size=(6, 138))
    grad = backend.decode_gradient(z, upstream)
    assert np.allclose(grad, upstream @ backend.basis_, atol=0)
    assert np.allclose(backend.decode_gradient(z, np.zeros((6, 138))), 0.0)


def test_linear_backend_insufficient_data():
    rng = np.random.default_rng(8)
    with pytest.raises(InsufficientData):
        pr.train_linear_backend([rng.normal(size=(10, 138))], dim=32)


def test_untrained_backend_raises():
    with pytest.raises(UntrainedBackend):
        pr.LinearSubspacePrior().encode(np.zeros((4, 138)))


# ------------------------------
# GRU-VAE backend
# ------------------------------

@pytest.fixture(scope="module")
def vae():
    return pr.GruVaePrior.random(seed=0)


def test_gru_vae_decode_deterministic(vae):
    rng = np.random.default_rng(9)
    z = rng.normal(size=(12, 32))
    a = vae.decode(z)
    b = vae.decode(z.copy())
    assert np.array_equal(a, b)
    assert a.shape == (12, 138)


def test_gru_vae_encode_shapes_and_positive_sigma(vae):
    rng = np.random.default_rng(10)
    x = rng.normal(scale=0.5, size=(8, 138))
    mu, sigma = vae.encode(x)
    assert mu.shape == (8, 32) and sigma.shape == (8, 32)
    assert np.all(sigma > 0)


def test_gru_vae_decode_gradient_matches_finite_differences(vae):
    rng = np.random.default_rng(11)
    for trial in range(4):
        t_len = int(rng.integers(4, 9))
        z = rng.normal(size=(t_len, 32))
        upstream = rng.normal(size=(t_len, 138))
        grad = vae.decode_gradient(z, upstream)

        def value(zz):
            return float(np.sum(vae.decode(zz) * upstream))

        h = 1e-4
        idxs = [(int(rng.integers(t_len)), int(rng.integers(32))) for _ in range(12)]
        for i, j in idxs:
            zp, zm = z.copy(), z.copy()
            zp[i, j] += h
            zm[i, j] -= h
            fd = (value(zp) - value(zm)) / (2 * h)
            rel = abs(grad[i, j] - fd) / max(abs(fd), abs(grad[i, j]), 1e-8)
            assert rel < 1e-4, f"trial {trial} z[{i},{j}]: {grad[i, j]} vs {fd}"


def test_gru_vae_zero_upstream_zero_gradient(vae):
    z = np.random.default_rng(12).normal(size=(6, 32))
    assert np.allclose(vae.decode_gradient(z, np.zeros((6, 138))), 0.0)


def test_gru_vae_shape_validation():
    tensors = {
        name: np.zeros(shape, dtype=np.float32)
        for name, shape in pr.expected_tensor_shapes(pr.gru_vae_architecture()).items()
    }
    tensors["enc.gru1.fw.w_hh"] = np.zeros((768, 128), dtype=np.float32)
    with pytest.raises(ShapeMismatch) as exc:
        pr.GruVaePrior(tensors)
    assert "enc.gru1.fw.w_hh" in str(exc.value)


# ------------------------------
# weight archive
# ------------------------------

def test_archive_round_trip_bit_identical(tmp_path, vae):
    path = tmp_path / "prior.weights"
    pr.save_weights(vae, path)
    back = pr.load_weights(path)
    assert isinstance(back, pr.GruVaePrior)
    assert back.arch_hash == vae.arch_hash
    for name, arr in vae.tensors.items():
        assert np.array_equal(back.tensors[name], arr), name
    # stable bytes
    path2 = tmp_path / "again.weights"
    pr.save_weights(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_archive_round_trip_linear(tmp_path):
    rng = np.random.default_rng(13)
    backend = pr.train_linear_backend(low_rank_clips(rng), dim=32)
    path = tmp_path / "linear.weights"
    pr.save_weights(backend, path)
    back = pr.load_weights(path)
    assert isinstance(back, pr.LinearSubspacePrior)
    x = rng.normal(size=(5, 138))
    a = backend.decode(backend.encode(x)[0])
    b = back.decode(back.encode(x)[0])
    assert np.allclose(a, b, atol=1e-5)


def test_truncated_archive_rejected(tmp_path, vae):
    path = tmp_path / "prior.weights"
    pr.save_weights(vae, path)
    raw = path.read_bytes()
    clipped = tmp_path / "clipped.weights"
    clipped.write_bytes(raw[: len(raw) - 1000])
    with pytest.raises(MalformedArchive):
        pr.load_weights(clipped)
    bad_magic = tmp_path / "magic.weights"
    bad_magic.write_bytes(b"NOTPRIOR" + raw[8:])
    with pytest.raises(MalformedArchive):
        pr.load_weights(bad_magic)


def test_archive_with_wrong_hidden_size_names_tensor(tmp_path, vae):
    import json

    path = tmp_path / "prior.weights"
    pr.save_weights(vae, path)
    raw = bytearray(path.read_bytes())
    header_len = int(np.frombuffer(bytes(raw[8:12]), dtype="<u4")[0])
    header = json.loads(bytes(raw[12 : 12 + header_len]).decode())
    # claim a smaller hidden size than the stored tensors
    header["architecture"]["hidden"] = 128
    blob = json.dumps(header, sort_keys=True).encode()
    bad = tmp_path / "bad.weights"
    with open(bad, "wb") as fh:
        fh.write(pr.MAGIC)
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        fh.write(bytes(raw[12 + header_len :]))
    with pytest.raises(ShapeMismatch) as exc:
        pr.load_weights(bad)
    assert "enc." in str(exc.value) or "dec." in str(exc.value)
