"""Latent motion prior: per-frame 32-dim codes with two interchangeable
backends behind one encode/decode/decode_gradient surface.

LinearSubspacePrior is trained in-repo (per-frame PCA of the 138-dim rows)
so the whole pipeline runs standalone. GruVaePrior evaluates weights
trained by the external trainer: an input lift 138->256, a 2-layer
bidirectional GRU encoder with hidden size 256, mu/log-variance heads to
32 per frame (mu with an additive skip from the input embedding), and a
symmetric decoder whose final linear layer receives an additive skip from
the decoder's input embedding. The forward and the hand-derived reverse
pass are plain numpy; gates follow the r|z|n convention

    r = sig(W_ir x + b_ir + W_hr h + b_hr)
    u = sig(W_iz x + b_iz + W_hz h + b_hz)
    c = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h' = (1 - u) * c + u * h

Weights are exchanged through the `prior.weights` archive: 8-byte magic
"MPRIOR01", little-endian u32 header length, UTF-8 JSON header listing
{name, shape, dtype, offset} per tensor, then a float32 little-endian
payload. The byte layout is normative for the trainer boundary.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator

from .bodymodel import MOTION_DIM
from .exceptions import (
    InsufficientData,
    MalformedArchive,
    ShapeMismatch,
    TooShort,
    UntrainedBackend,
)
from .validation import as_array

MAGIC = b"MPRIOR01"
LATENT_DIM = 32
HIDDEN = 256


# ------------------------------
# latent smoothness penalty
# ------------------------------

def latent_linear_penalty(z):
    """Sum of squared second differences over interior frames, with its
    analytic gradient. Zero exactly on codes affine in time."""
    z = as_array(z, (-1, -1), "z")
    t = z.shape[0]
    if t < 3:
        raise TooShort(f"latent penalty needs >= 3 frames, got {t}")
    d2 = z[2:] - 2.0 * z[1:-1] + z[:-2]
    value = float(np.sum(d2 * d2))
    grad = np.zeros_like(z)
    grad[2:] += 2.0 * d2
    grad[1:-1] -= 4.0 * d2
    grad[:-2] += 2.0 * d2
    return value, grad


# ------------------------------
# linear-subspace backend
# ------------------------------

class LinearSubspacePrior(BaseEstimator):
    """Per-frame PCA backend: encode projects centered rows onto an
    orthonormal basis, decode reconstructs, sigma is fixed at one."""

    def __init__(self, n_components=LATENT_DIM):
        self.n_components = n_components

    def fit(self, clips):
        """clips: iterable of (T_i, 138) arrays; needs at least
        n_components total frames."""
        rows = np.concatenate([as_array(c, (-1, MOTION_DIM), "clip") for c in clips], axis=0)
        if rows.shape[0] < self.n_components:
            raise InsufficientData(
                f"need >= {self.n_components} frames, got {rows.shape[0]}"
            )
        self.mean_ = rows.mean(axis=0)
        centered = rows - self.mean_
        _, svals, vt = np.linalg.svd(centered, full_matrices=False)
        self.basis_ = vt[: self.n_components].T  # (138, K) orthonormal columns
        self.explained_variance_ = (svals[: self.n_components] ** 2) / max(rows.shape[0] - 1, 1)
        recon = centered @ self.basis_ @ self.basis_.T
        per_frame = np.linalg.norm(centered - recon, axis=1)
        self.training_residual_ = float(per_frame.max()) + 1e-9
        return self

    def _check_ready(self):
        if not hasattr(self, "basis_"):
            raise UntrainedBackend("linear backend not fitted")

    def encode(self, motion):
        self._check_ready()
        motion = as_array(motion, (-1, MOTION_DIM), "motion")
        mu = (motion - self.mean_) @ self.basis_
        return mu, np.ones_like(mu)

    def decode(self, z):
        self._check_ready()
        z = as_array(z, (-1, self.n_components), "z")
        return z @ self.basis_.T + self.mean_

    def decode_gradient(self, z, upstream):
        """Adjoint of decode: upstream (T, 138) -> (T, K); exact for the
        linear map, independent of z."""
        self._check_ready()
        upstream = as_array(upstream, (-1, MOTION_DIM), "upstream")
        return upstream @ self.basis_

    # sklearn-style aliases
    def transform(self, motion):
        return self.encode(motion)[0]

    def inverse_transform(self, z):
        return self.decode(z)

    @property
    def latent_dim(self):
        return self.n_components

    def tensors(self):
        self._check_ready()
        return {
            "mean": self.mean_,
            "basis": self.basis_,
            "residual": np.array([self.training_residual_]),
        }

    def architecture(self):
        return {"kind": "linear-subspace", "input_dim": MOTION_DIM, "latent": self.n_components}

    @staticmethod
    def from_tensors(tensors, architecture):
        out = LinearSubspacePrior(n_components=int(architecture["latent"]))
        out.mean_ = np.asarray(tensors["mean"], dtype=np.float64)
        out.basis_ = np.asarray(tensors["basis"], dtype=np.float64)
        out.training_residual_ = float(np.asarray(tensors["residual"]).ravel()[0])
        return out


def train_linear_backend(clips, dim=LATENT_DIM):
    return LinearSubspacePrior(n_components=dim).fit(clips)


# ------------------------------
# numpy GRU
# ------------------------------

def _gru_forward(x, w_ih, w_hh, b_ih, b_hh, reverse=False):
    """Single-direction GRU over (T, D); returns (T, H) and a backward cache."""
    t_len = x.shape[0]
    hidden = w_hh.shape[1]
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    h = np.zeros(hidden)
    hs = np.zeros((t_len, hidden))
    cache_r = np.zeros((t_len, hidden))
    cache_u = np.zeros((t_len, hidden))
    cache_c = np.zeros((t_len, hidden))
    cache_ghn = np.zeros((t_len, hidden))
    cache_hprev = np.zeros((t_len, hidden))
    gi_all = x @ w_ih.T + b_ih  # (T, 3H)
    for t in order:
        gh = w_hh @ h + b_hh
        gi = gi_all[t]
        r = expit(gi[:hidden] + gh[:hidden])
        u = expit(gi[hidden : 2 * hidden] + gh[hidden : 2 * hidden])
        ghn = gh[2 * hidden :]
        c = np.tanh(gi[2 * hidden :] + r * ghn)
        cache_hprev[t] = h
        h = (1.0 - u) * c + u * h
        hs[t] = h
        cache_r[t] = r
        cache_u[t] = u
        cache_c[t] = c
        cache_ghn[t] = ghn
    cache = {
        "x": x, "r": cache_r, "u": cache_u, "c": cache_c, "ghn": cache_ghn,
        "h_prev": cache_hprev, "w_ih": w_ih, "w_hh": w_hh, "reverse": reverse,
    }
    return hs, cache


def _gru_backward(cache, dh_out):
    """Reverse pass of _gru_forward for the input gradient (weights fixed)."""
    w_ih, w_hh = cache["w_ih"], cache["w_hh"]
    hidden = w_hh.shape[1]
    t_len = dh_out.shape[0]
    order = range(t_len) if cache["reverse"] else range(t_len - 1, -1, -1)
    dx = np.zeros_like(cache["x"])
    dh = np.zeros(hidden)
    for t in order:
        dh = dh + dh_out[t]
        r, u, c = cache["r"][t], cache["u"][t], cache["c"][t]
        ghn, h_prev = cache["ghn"][t], cache["h_prev"][t]
        du = dh * (h_prev - c)
        dc = dh * (1.0 - u)
        dgn_i = dc * (1.0 - c * c)
        dgn_h = dgn_i * r
        dr = dgn_i * ghn
        dgr = dr * r * (1.0 - r)
        dgz = du * u * (1.0 - u)
        dgi = np.concatenate([dgr, dgz, dgn_i])
        dgh = np.concatenate([dgr, dgz, dgn_h])
        dx[t] = w_ih.T @ dgi
        dh = w_hh.T @ dgh + dh * u
    return dx


def _bigru_forward(x, params, prefix):
    fw, cache_f = _gru_forward(
        x, params[f"{prefix}.fw.w_ih"], params[f"{prefix}.fw.w_hh"],
        params[f"{prefix}.fw.b_ih"], params[f"{prefix}.fw.b_hh"], reverse=False,
    )
    bw, cache_b = _gru_forward(
        x, params[f"{prefix}.bw.w_ih"], params[f"{prefix}.bw.w_hh"],
        params[f"{prefix}.bw.b_ih"], params[f"{prefix}.bw.b_hh"], reverse=True,
    )
    return np.concatenate([fw, bw], axis=1), (cache_f, cache_b)


def _bigru_backward(caches, dh):
    hidden = caches[0]["w_hh"].shape[1]
    return _gru_backward(caches[0], dh[:, :hidden]) + _gru_backward(caches[1], dh[:, hidden:])


# ------------------------------
# GRU-VAE backend
# ------------------------------

def gru_vae_architecture(input_dim=MOTION_DIM, hidden=HIDDEN, latent=LATENT_DIM, layers=2):
    return {
        "kind": "gru-vae",
        "input_dim": input_dim,
        "hidden": hidden,
        "latent": latent,
        "layers": layers,
        "bidirectional": True,
        "gate_order": "rzn",
        "encoder_skip": "mu",
        "decoder_skip": "out",
    }


def architecture_hash(arch):
    return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).hexdigest()


def expected_tensor_shapes(arch):
    """Normative name -> shape table for the declared GRU-VAE."""
    d, h, k = arch["input_dim"], arch["hidden"], arch["latent"]
    shapes = {}
    for side, lift_in in (("enc", d), ("dec", k)):
        shapes[f"{side}.lift.weight"] = (h, lift_in)
        shapes[f"{side}.lift.bias"] = (h,)
        for layer, in_dim in ((1, h), (2, 2 * h)):
            for direction in ("fw", "bw"):
                base = f"{side}.gru{layer}.{direction}"
                shapes[f"{base}.w_ih"] = (3 * h, in_dim)
                shapes[f"{base}.w_hh"] = (3 * h, h)
                shapes[f"{base}.b_ih"] = (3 * h,)
                shapes[f"{base}.b_hh"] = (3 * h,)
    shapes["enc.mu.weight"] = (k, 2 * arch["hidden"])
    shapes["enc.mu.bias"] = (k,)
    shapes["enc.mu_skip.weight"] = (k, arch["hidden"])
    shapes["enc.logvar.weight"] = (k, 2 * arch["hidden"])
    shapes["enc.logvar.bias"] = (k,)
    shapes["dec.out.weight"] = (d, 2 * arch["hidden"])
    shapes["dec.out.bias"] = (d,)
    shapes["dec.out_skip.weight"] = (d, arch["hidden"])
    return shapes


class GruVaePrior:
    """Inference-only evaluator of the externally trained GRU-VAE."""

    def __init__(self, tensors, architecture=None):
        self.architecture = architecture or gru_vae_architecture()
        expected = expected_tensor_shapes(self.architecture)
        for name, shape in expected.items():
            if name not in tensors:
                raise ShapeMismatch(name, shape, ())
            got = tuple(np.asarray(tensors[name]).shape)
            if got != shape:
                raise ShapeMismatch(name, shape, got)
        self.tensors = {k: np.asarray(v, dtype=np.float32) for k, v in tensors.items()}
        self._f64 = {k: v.astype(np.float64) for k, v in self.tensors.items()}
        self.arch_hash = architecture_hash(self.architecture)

    @property
    def latent_dim(self):
        return self.architecture["latent"]

    @staticmethod
    def random(seed=0, scale=0.15):
        """Randomly initialized instance (self-consistency and gradient tests)."""
        rng = np.random.default_rng(seed)
        arch = gru_vae_architecture()
        tensors = {
            name: rng.normal(scale=scale / np.sqrt(shape[-1]) if len(shape) > 1 else scale, size=shape)
            for name, shape in expected_tensor_shapes(arch).items()
        }
        return GruVaePrior(tensors, arch)

    def encode(self, motion):
        motion = as_array(motion, (-1, MOTION_DIM), "motion")
        p = self._f64
        e = motion @ p["enc.lift.weight"].T + p["enc.lift.bias"]
        h1, _ = _bigru_forward(e, p, "enc.gru1")
        h2, _ = _bigru_forward(h1, p, "enc.gru2")
        mu = h2 @ p["enc.mu.weight"].T + p["enc.mu.bias"] + e @ p["enc.mu_skip.weight"].T
        logvar = h2 @ p["enc.logvar.weight"].T + p["enc.logvar.bias"]
        return mu, np.exp(0.5 * logvar)

    def _decode_with_cache(self, z):
        z = as_array(z, (-1, self.latent_dim), "z")
        p = self._f64
        d = z @ p["dec.lift.weight"].T + p["dec.lift.bias"]
        h1, cache1 = _bigru_forward(d, p, "dec.gru1")
        h2, cache2 = _bigru_forward(h1, p, "dec.gru2")
        out = h2 @ p["dec.out.weight"].T + p["dec.out.bias"] + d @ p["dec.out_skip.weight"].T
        return out, (cache1, cache2)

    def decode(self, z):
        return self._decode_with_cache(z)[0]

    def decode_gradient(self, z, upstream):
        """Vector-Jacobian product of decode at z: BPTT through the output
        layer, both bidirectional GRU layers, and the input lift."""
        upstream = as_array(upstream, (-1, MOTION_DIM), "upstream")
        _, (cache1, cache2) = self._decode_with_cache(z)
        p = self._f64
        dh2 = upstream @ p["dec.out.weight"]
        dd = upstream @ p["dec.out_skip.weight"]
        dh1 = _bigru_backward(cache2, dh2)
        dd = dd + _bigru_backward(cache1, dh1)
        return dd @ p["dec.lift.weight"]


# ------------------------------
# weight archive
# ------------------------------

def save_weights(backend, path):
    """Write the backend's tensors in the normative archive layout."""
    if isinstance(backend, LinearSubspacePrior):
        tensors = backend.tensors()
        arch = backend.architecture()
    else:
        tensors = backend.tensors
        arch = backend.architecture
    names = sorted(tensors)
    entries = []
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f4"))
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": "f32", "offset": len(payload)}
        )
        payload.extend(arr.tobytes())
    header = {
        "format_version": 1,
        "architecture": arch,
        "arch_hash": architecture_hash(arch),
        "tensors": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        fh.write(bytes(payload))


def load_weights(path):
    """Parse and validate a `prior.weights` archive; returns the backend."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:8] != MAGIC:
        raise MalformedArchive("bad magic")
    header_len = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    if 12 + header_len > len(raw):
        raise MalformedArchive("truncated header")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedArchive(f"header is not valid JSON: {exc}") from exc
    payload = raw[12 + header_len :]
    entries = header.get("tensors")
    arch = header.get("architecture")
    if not isinstance(entries, list) or not isinstance(arch, dict):
        raise MalformedArchive("header missing tensors or architecture")

    spans = []
    tensors = {}
    for e in entries:
        if e.get("dtype") != "f32":
            raise MalformedArchive(f"tensor {e.get('name')!r}: unsupported dtype {e.get('dtype')!r}")
        shape = tuple(int(s) for s in e["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(e["offset"])
        end = start + 4 * count
        if start < 0 or end > len(payload):
            raise MalformedArchive(f"tensor {e['name']!r} payload out of bounds")
        spans.append((start, end, e["name"]))
        tensors[e["name"]] = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape)
    spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise MalformedArchive(f"tensors {n0!r} and {n1!r} overlap")

    kind = arch.get("kind")
    if kind == "linear-subspace":
        expected = {
            "mean": (int(arch["input_dim"]),),
            "basis": (int(arch["input_dim"]), int(arch["latent"])),
            "residual": (1,),
        }
        for name, shape in expected.items():
            if name not in tensors:
                raise ShapeMismatch(name, shape, ())
            if tuple(tensors[name].shape) != shape:
                raise ShapeMismatch(name, shape, tensors[name].shape)
        return LinearSubspacePrior.from_tensors(tensors, arch)
    if kind == "gru-vae":
        return GruVaePrior(tensors, arch)
    raise MalformedArchive(f"unknown backend kind {kind!r}")
