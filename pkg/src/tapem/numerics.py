"""Dense float64 arithmetic, parameter storage, Adam and gradient checking."""

from __future__ import annotations

import io
import json
import os
import struct
import zlib

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ShapeError

DTYPE = np.float64


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Named, independent RNG stream derived from the global seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


# ---------------------------------------------------------------- core arithmetic


def _shape_error(op, a, b):
    return ShapeError(f"{op}: incompatible shapes {np.shape(a)} and {np.shape(b)}")


def matvec(m, x):
    m, x = np.asarray(m, DTYPE), np.asarray(x, DTYPE)
    if m.ndim != 2 or x.ndim != 1 or m.shape[1] != x.shape[0]:
        raise _shape_error("matvec", m, x)
    return m @ x


def outer(a, b):
    a, b = np.asarray(a, DTYPE), np.asarray(b, DTYPE)
    if a.ndim != 1 or b.ndim != 1:
        raise _shape_error("outer", a, b)
    return np.outer(a, b)


def hadamard(a, b):
    a, b = np.asarray(a, DTYPE), np.asarray(b, DTYPE)
    if a.shape != b.shape:
        raise _shape_error("hadamard", a, b)
    return a * b


def add(a, b):
    a, b = np.asarray(a, DTYPE), np.asarray(b, DTYPE)
    if a.shape != b.shape:
        raise _shape_error("add", a, b)
    return a + b


def concat(*parts):
    parts = [np.asarray(p, DTYPE) for p in parts]
    if any(p.ndim != 1 for p in parts):
        raise ShapeError(f"concat: expected vectors, got shapes {[p.shape for p in parts]}")
    return np.concatenate(parts)


def affine(w, x, b):
    y = matvec(w, x)
    b = np.asarray(b, DTYPE)
    if b.shape != y.shape:
        raise _shape_error("affine", y, b)
    return y + b


# ------------------------------------------------------------------- activations


def sigmoid(x):
    x = np.asarray(x, DTYPE)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, DTYPE)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def log_sigmoid(x):
    return -softplus(-np.asarray(x, DTYPE))


def relu(x):
    return np.maximum(np.asarray(x, DTYPE), 0.0)


def tanh(x):
    return np.tanh(np.asarray(x, DTYPE))


def softmax(x, axis=-1):
    x = np.asarray(x, DTYPE)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def dropout_mask(shape, rate, training, rng):
    """Inverted-dropout multiplier: zeros with probability ``rate``, survivors 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate!r}")
    if not training or rate == 0.0:
        return None
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x, rate, training, rng):
    mask = dropout_mask(np.shape(x), rate, training, rng)
    x = np.asarray(x, DTYPE)
    return x if mask is None else x * mask


# ---------------------------------------------------------------------- params


class ParamStore:
    """Named parameters with parallel gradient and Adam moment buffers.

    ``sparse`` names embedding tables whose rows only get an Adam update when
    a batch touched them (rows listed in ``touched``).
    """

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.groups: dict[str, str] = {}
        self.sparse: set[str] = set()
        self.touched: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name, value, group, sparse=False):
        value = np.ascontiguousarray(value, dtype=DTYPE)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        self.groups[name] = group
        if sparse:
            self.sparse.add(name)
        return value

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def group_names(self, group):
        return [n for n, g in self.groups.items() if g == group]

    def zero_grads(self):
        for g in self.grads.values():
            g.fill(0.0)
        self.touched = {}

    def touch(self, name, rows):
        rows = np.unique(np.asarray(rows, dtype=np.int64))
        prev = self.touched.get(name)
        self.touched[name] = rows if prev is None else np.union1d(prev, rows)

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name in self.params:
            out.add(name, self.params[name].copy(), self.groups[name], name in self.sparse)
            out.m[name][...] = self.m[name]
            out.v[name][...] = self.v[name]
        out.step = self.step
        return out

    def n_parameters(self):
        return int(sum(p.size for p in self.params.values()))


def init_matrix(rng, rows, cols):
    bound = 1.0 / np.sqrt(cols)
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_embedding(rng, rows, dim):
    return rng.uniform(-0.5 / dim, 0.5 / dim, size=(rows, dim))


def adam_step(store: ParamStore, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
    """Bias-corrected Adam on every parameter; gradients are left for the caller to zero."""
    for name, g in store.grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {name!r}")
    store.step += 1
    t = store.step
    step_size = learning_rate / (1.0 - beta1 ** t)
    bc2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g, m, v = store.grads[name], store.m[name], store.v[name]
        if name in store.sparse:
            rows = store.touched.get(name)
            if rows is None or len(rows) == 0:
                continue
            gr = g[rows]
            m[rows] = beta1 * m[rows] + (1.0 - beta1) * gr
            v[rows] = beta2 * v[rows] + (1.0 - beta2) * gr * gr
            p[rows] -= step_size * m[rows] / (np.sqrt(v[rows] / bc2) + epsilon)
        else:
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            p -= step_size * m / (np.sqrt(v / bc2) + epsilon)
    return store


# ----------------------------------------------------------------- grad check


def grad_check(loss_function, store: ParamStore, probe_count=20, epsilon=1e-6, rng=None,
               names=None, floor=1e-7):
    """Compare analytic gradients with central differences on random coordinates.

    ``loss_function(store)`` must return ``(loss, grads)`` or
    ``(loss, grads, signature)``; ``grads`` maps parameter names to arrays.
    When a signature is returned (e.g. the on/off pattern of every ReLU and
    hinge), a probe whose +/- evaluations change it straddles a kink and is
    skipped.  Relative error is ``|a - n| / max(|a|, |n|, floor)``.

    Returns ``(max_relative_error, details)`` where ``details`` lists
    ``(name, index, analytic, numeric, rel_err)`` per probe (skipped probes
    carry ``rel_err=None``).
    """
    rng = rng or np.random.default_rng(0)

    def evaluate():
        out = loss_function(store)
        loss, grads = out[0], out[1]
        sig = out[2] if len(out) > 2 else None
        return float(loss), grads, sig

    loss0, grads, sig0 = evaluate()
    again, _, _ = evaluate()
    if again != loss0:
        raise ContractError(f"loss is not deterministic ({loss0!r} vs {again!r}); disable dropout")
    grads = {k: np.array(v, dtype=DTYPE) for k, v in grads.items()}
    names = list(names or grads)
    candidates = []
    for name in names:
        g = grads[name]
        if name in store.sparse and store.touched.get(name) is not None:
            rows = store.touched[name]
            candidates.extend((name, (int(r), c)) for r in rows for c in range(g.shape[1]))
        else:
            candidates.extend((name, np.unravel_index(i, g.shape)) for i in range(g.size))
    if not candidates:
        return 0.0, []
    picks = rng.choice(len(candidates), size=min(probe_count, len(candidates)), replace=False)
    details, worst = [], 0.0
    for k in sorted(picks.tolist()):
        name, idx = candidates[k]
        p = store.params[name]
        orig = p[idx]
        p[idx] = orig + epsilon
        f_plus, _, sig_plus = evaluate()
        p[idx] = orig - epsilon
        f_minus, _, sig_minus = evaluate()
        p[idx] = orig
        analytic = float(grads[name][idx])
        numeric = (f_plus - f_minus) / (2.0 * epsilon)
        if sig0 is not None and not (_same(sig_plus, sig0) and _same(sig_minus, sig0)):
            details.append((name, idx, analytic, numeric, None))
            continue
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, rel)
        details.append((name, idx, analytic, numeric, rel))
    return worst, details


def _same(a, b):
    if isinstance(a, (tuple, list)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


# ----------------------------------------------------------------- checkpoints

MAGIC = b"TAPEMCKP"
FORMAT_VERSION = 1


def save_checkpoint(path, store: ParamStore, meta: dict, with_optimizer=True):
    """Binary archive: magic, version, JSON header, then row-major float64 blocks.

    Byte-identical for identical inputs (no timestamps, sorted keys).
    """
    header = {"version": FORMAT_VERSION, "meta": meta, "step": store.step, "tensors": []}
    blobs = []
    offset = 0
    kinds = ("param", "m", "v") if with_optimizer else ("param",)
    for name in store.params:
        for kind in kinds:
            arr = {"param": store.params, "m": store.m, "v": store.v}[kind][name]
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            header["tensors"].append({
                "name": name, "kind": kind, "shape": list(arr.shape), "offset": offset,
                "group": store.groups[name], "sparse": name in store.sparse,
            })
            blobs.append(data)
            offset += len(data)
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", FORMAT_VERSION, len(head)))
    buf.write(head)
    for b in blobs:
        buf.write(b)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return ``(store, meta)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise ContractError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != FORMAT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    base = 20 + hlen
    store = ParamStore()
    for t in header["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=base + t["offset"]).reshape(t["shape"])
        if t["kind"] == "param":
            store.add(t["name"], arr.astype(DTYPE), t["group"], t["sparse"])
        else:
            getattr(store, t["kind"])[t["name"]][...] = arr
    store.step = int(header["step"])
    return store, header["meta"]
