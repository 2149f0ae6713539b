"""Small differentiable separator with exact analytic gradients.

The trunk is a stack of bidirectional recurrent layers built from a
simplified gated cell (one update gate plus a tanh candidate):

    z_t = sigmoid(x_t Wz + h_{t-1} Uz + bz)
    c_t = tanh   (x_t Wc + h_{t-1} Uc + bc)
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t

A feedforward trunk over +/-2 frame context windows is available for
fast tests. On top sits either a DC embedding head (D values per
frequency bin, rows normalized to unit length) or one mask head per
speaker-count scenario (softmax over the S speaker slots at each bin).

All gradients are hand-derived; backward() returns d loss / d theta as
a flat vector aligned with ParameterVector.values. Parameters of heads
not on the computational path get exact zeros.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import (
    ConfigError,
    GradientShapeMismatch,
    HeadMismatch,
    ShapeMismatch,
    UnknownScenario,
)
from .records import Section, find_section, read_records, write_records
from .signal_core import N_FREQ, FeatureMatrix
from .util import rng_for

ROW_NORM_GUARD = 1e-12
CONTEXT_FRAMES = 2  # feedforward fallback sees +/- this many frames

CHECKPOINT_MAGIC = b"PSEP"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    head: str  # "dc" or "upit"
    hidden_layers: int = 2
    hidden_units: int = 32
    recurrent: bool = True
    input_dim: int = N_FREQ
    embedding_dim: int = 20  # DC head only
    scenarios: tuple[int, ...] = ()  # uPIT heads, one per speaker count

    def __post_init__(self):
        if self.head not in ("dc", "upit"):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.hidden_layers < 1 or self.hidden_units < 1:
            raise ConfigError("need at least one layer and one unit")
        if self.head == "dc" and self.embedding_dim < 2:
            raise ConfigError("embedding_dim must be >= 2")
        if self.head == "upit":
            if not self.scenarios:
                raise ConfigError("upit head needs at least one scenario")
            if any(s < 1 for s in self.scenarios):
                raise ConfigError("scenario speaker counts must be >= 1")
            if len(set(self.scenarios)) != len(self.scenarios):
                raise ConfigError("duplicate scenario speaker counts")

    @property
    def trunk_dim(self) -> int:
        return 2 * self.hidden_units if self.recurrent else self.hidden_units

    def canonical(self) -> str:
        parts = [
            f"head={self.head}",
            f"hidden_layers={self.hidden_layers}",
            f"hidden_units={self.hidden_units}",
            f"recurrent={self.recurrent}",
            f"input_dim={self.input_dim}",
            f"embedding_dim={self.embedding_dim}",
            f"scenarios={','.join(str(s) for s in self.scenarios)}",
        ]
        return "\n".join(parts)

    def to_section(self) -> Section:
        sec = Section("network")
        sec.set("head", self.head)
        sec.set("hidden_layers", self.hidden_layers)
        sec.set("hidden_units", self.hidden_units)
        sec.set("recurrent", self.recurrent)
        sec.set("input_dim", self.input_dim)
        sec.set("embedding_dim", self.embedding_dim)
        sec.set("scenarios", list(self.scenarios))
        return sec

    @staticmethod
    def from_section(sec: Section) -> "NetworkConfig":
        return NetworkConfig(
            head=sec.get("head", "dc"),
            hidden_layers=sec.get_int("hidden_layers", 2),
            hidden_units=sec.get_int("hidden_units", 32),
            recurrent=sec.get_bool("recurrent", True),
            input_dim=sec.get_int("input_dim", N_FREQ),
            embedding_dim=sec.get_int("embedding_dim", 20),
            scenarios=tuple(sec.get_ints("scenarios")),
        )


@dataclass
class ParameterVector:
    """Flat parameter vector with a named-slice layout."""

    values: np.ndarray
    layout: dict[str, tuple[slice, tuple[int, ...]]]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def get(self, name: str) -> np.ndarray:
        sl, shape = self.layout[name]
        return self.values[sl].reshape(shape)  # view; writes go through

    def slice_of(self, name: str) -> slice:
        return self.layout[name][0]

    def combined_slice(self, names: list[str]) -> slice:
        """Single slice covering the given entries; they must be
        contiguous in the layout."""
        if not names:
            return slice(0, 0)
        slices = sorted((self.layout[n][0] for n in names), key=lambda s: s.start)
        start, stop = slices[0].start, slices[0].stop
        for sl in slices[1:]:
            if sl.start != stop:
                raise ConfigError(f"entries {names} are not contiguous")
            stop = sl.stop
        return slice(start, stop)

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.layout)


@dataclass
class EmbeddingMatrix:
    """TF x D matrix of unit-length bin embeddings, row tf = t*F + f."""

    rows: np.ndarray
    n_frames: int = 0
    n_freq: int = N_FREQ

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise ShapeMismatch(f"expected 2-d rows, got {self.rows.shape}")
        norms = np.linalg.norm(self.rows, axis=1)
        if norms.size and np.abs(norms - 1.0).max() > 1e-6:
            raise ShapeMismatch("embedding rows must have unit norm")


@dataclass
class MaskSet:
    """S stacked T x F masks, non-negative, summing to one per bin."""

    masks: np.ndarray  # (S, T, F)
    scenario: int

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=np.float64)
        if self.masks.ndim != 3 or self.masks.shape[0] != self.scenario:
            raise ShapeMismatch(
                f"expected ({self.scenario}, T, F), got {self.masks.shape}"
            )
        if self.masks.size:
            if self.masks.min() < 0.0:
                raise ShapeMismatch("masks must be non-negative")
            sums = self.masks.sum(axis=0)
            if np.abs(sums - 1.0).max() > 1e-6:
                raise ShapeMismatch("per-bin mask sums must be 1")


# --- layout -----------------------------------------------------------

def _layout_entries(config: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    entries: list[tuple[str, tuple[int, ...]]] = []
    h = config.hidden_units
    din = config.input_dim
    for l in range(config.hidden_layers):
        if config.recurrent:
            for d in ("fwd", "bwd"):
                entries.append((f"layer{l}_{d}_W", (din, 2 * h)))
                entries.append((f"layer{l}_{d}_U", (h, 2 * h)))
                entries.append((f"layer{l}_{d}_b", (2 * h,)))
            din = 2 * h
        else:
            ctx = 2 * CONTEXT_FRAMES + 1
            entries.append((f"layer{l}_W", (ctx * din, h)))
            entries.append((f"layer{l}_b", (h,)))
            din = h
    tdim = config.trunk_dim
    f = config.input_dim
    if config.head == "dc":
        entries.append(("head_dc_W", (tdim, config.embedding_dim * f)))
        entries.append(("head_dc_b", (config.embedding_dim * f,)))
    else:
        for s in config.scenarios:
            entries.append((f"head_upit{s}_W", (tdim, s * f)))
            entries.append((f"head_upit{s}_b", (s * f,)))
    return entries


def build_layout(config: NetworkConfig) -> dict[str, tuple[slice, tuple[int, ...]]]:
    layout = {}
    offset = 0
    for name, shape in _layout_entries(config):
        n = int(np.prod(shape))
        layout[name] = (slice(offset, offset + n), shape)
        offset += n
    return layout


def head_param_names(config: NetworkConfig, scenario: int | None) -> list[str]:
    """Names of the output-layer entries for one scenario. The DC head
    is shared across scenarios, so it owns no scenario-specific slice
    and this returns [] (pass scenario=None or any S)."""
    if config.head == "dc":
        return []
    if scenario not in config.scenarios:
        raise UnknownScenario(f"scenario {scenario} not in {config.scenarios}")
    return [f"head_upit{scenario}_W", f"head_upit{scenario}_b"]


def init_params(config: NetworkConfig, seed: int) -> ParameterVector:
    """Gaussian weights with std 1/sqrt(fan_in), zero biases."""
    layout = build_layout(config)
    total = sum(sl.stop - sl.start for sl, _ in layout.values())
    values = np.zeros(total)
    params = ParameterVector(values, layout)
    rng = rng_for(seed, "init")
    for name, shape in _layout_entries(config):
        if name.endswith("_b"):
            continue  # biases stay zero
        fan_in = shape[0]
        params.get(name)[...] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)
    return params


# --- trunk ------------------------------------------------------------

def _context_window(x: np.ndarray, k: int = CONTEXT_FRAMES) -> np.ndarray:
    t, d = x.shape
    out = np.zeros((t, (2 * k + 1) * d))
    for i, off in enumerate(range(-k, k + 1)):
        dst = out[:, i * d:(i + 1) * d]
        if off >= 0:
            dst[: t - off] = x[off:]
        else:
            dst[-off:] = x[: t + off]
    return out


def _scatter_context(dctx: np.ndarray, t: int, d: int, k: int = CONTEXT_FRAMES) -> np.ndarray:
    dx = np.zeros((t, d))
    for i, off in enumerate(range(-k, k + 1)):
        src = dctx[:, i * d:(i + 1) * d]
        if off >= 0:
            dx[off:] += src[: t - off]
        else:
            dx[: t + off] += src[-off:]
    return dx


def _run_direction(x, w, u, b, reverse: bool):
    """One recurrent direction. Returns (z, c, h) stored at natural
    time indices regardless of processing order."""
    t_len = x.shape[0]
    h_dim = u.shape[0]
    xw = x @ w + b  # input projections hoisted out of the loop
    z = np.empty((t_len, h_dim))
    c = np.empty((t_len, h_dim))
    hs = np.empty((t_len, h_dim))
    h = np.zeros(h_dim)
    order = range(t_len - 1, -1, -1) if reverse else range(t_len)
    for t in order:
        pre = xw[t] + h @ u
        zt = expit(pre[:h_dim])
        ct = np.tanh(pre[h_dim:])
        h = (1.0 - zt) * h + zt * ct
        z[t] = zt
        c[t] = ct
        hs[t] = h
    return z, c, hs


def _backward_direction(x, w, u, z, c, hs, dh_out, reverse: bool):
    """BPTT through one direction. dh_out is d loss / d hs. Returns
    (dW, dU, db, dX)."""
    t_len, h_dim = dh_out.shape
    order = list(range(t_len - 1, -1, -1)) if reverse else list(range(t_len))
    dpre = np.zeros((t_len, 2 * h_dim))
    ut = u.T
    dh_carry = np.zeros(h_dim)
    zero = np.zeros(h_dim)
    for k in range(t_len - 1, -1, -1):  # reverse of processing order
        t = order[k]
        dh = dh_out[t] + dh_carry
        h_prev = hs[order[k - 1]] if k > 0 else zero
        zt = z[t]
        ct = c[t]
        dpre_z = dh * (ct - h_prev) * zt * (1.0 - zt)
        dpre_c = dh * zt * (1.0 - ct * ct)
        dpre[t, :h_dim] = dpre_z
        dpre[t, h_dim:] = dpre_c
        dh_carry = dh * (1.0 - zt) + dpre[t] @ ut
    h_prev_rows = np.zeros((t_len, h_dim))
    h_prev_rows[order[1:]] = hs[order[:-1]]
    dw = x.T @ dpre
    du = h_prev_rows.T @ dpre
    db = dpre.sum(axis=0)
    dx = dpre @ w.T
    return dw, du, db, dx


def forward_trunk(params: ParameterVector, features) -> tuple[np.ndarray, list]:
    """Shared trunk. Returns (output, cache); cache feeds backward()."""
    x = _as_input(features)
    cache = []
    for l in range(_n_layers(params)):
        if f"layer{l}_fwd_W" in params.layout:
            per_dir = {}
            outs = []
            for d, rev in (("fwd", False), ("bwd", True)):
                w = params.get(f"layer{l}_{d}_W")
                u = params.get(f"layer{l}_{d}_U")
                b = params.get(f"layer{l}_{d}_b")
                z, c, hs = _run_direction(x, w, u, b, rev)
                per_dir[d] = (z, c, hs)
                outs.append(hs)
            cache.append({"kind": "recurrent", "x": x, "dirs": per_dir})
            x = np.concatenate(outs, axis=1)
        else:
            w = params.get(f"layer{l}_W")
            b = params.get(f"layer{l}_b")
            ctx = _context_window(x)
            a = np.tanh(ctx @ w + b)
            cache.append({"kind": "ff", "x_shape": x.shape, "ctx": ctx, "a": a})
            x = a
    return x, cache


def _backward_trunk(params: ParameterVector, cache: list, d_out: np.ndarray, grad: np.ndarray, layout) -> None:
    dx = d_out
    for l in range(len(cache) - 1, -1, -1):
        entry = cache[l]
        if entry["kind"] == "recurrent":
            h_dim = entry["dirs"]["fwd"][0].shape[1]
            dx_next = np.zeros_like(entry["x"])
            for i, (d, rev) in enumerate((("fwd", False), ("bwd", True))):
                z, c, hs = entry["dirs"][d]
                dh_out = dx[:, i * h_dim:(i + 1) * h_dim]
                w = params.get(f"layer{l}_{d}_W")
                u = params.get(f"layer{l}_{d}_U")
                dw, du, db, dxi = _backward_direction(entry["x"], w, u, z, c, hs, dh_out, rev)
                _acc(grad, layout, f"layer{l}_{d}_W", dw)
                _acc(grad, layout, f"layer{l}_{d}_U", du)
                _acc(grad, layout, f"layer{l}_{d}_b", db)
                dx_next += dxi
            dx = dx_next
        else:
            a = entry["a"]
            dpre = dx * (1.0 - a * a)
            w = params.get(f"layer{l}_W")
            _acc(grad, layout, f"layer{l}_W", entry["ctx"].T @ dpre)
            _acc(grad, layout, f"layer{l}_b", dpre.sum(axis=0))
            t, d_in = entry["x_shape"]
            dx = _scatter_context(dpre @ w.T, t, d_in)


def _acc(grad, layout, name, value):
    sl, shape = layout[name]
    grad[sl] += value.reshape(-1)


def _as_input(features) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        return features.values
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"expected (T, F) input, got {x.shape}")
    return x


def _n_layers(params: ParameterVector) -> int:
    n = 0
    while f"layer{n}_W" in params.layout or f"layer{n}_fwd_W" in params.layout:
        n += 1
    return n


# --- heads ------------------------------------------------------------

def _dc_head(params: ParameterVector, trunk_out: np.ndarray, n_freq: int):
    raw = trunk_out @ params.get("head_dc_W") + params.get("head_dc_b")
    t_len = trunk_out.shape[0]
    d = raw.shape[1] // n_freq
    rows = raw.reshape(t_len * n_freq, d)
    norms = np.linalg.norm(rows, axis=1)
    guarded = norms < ROW_NORM_GUARD
    safe = np.where(guarded, 1.0, norms)
    v = rows / safe[:, None]
    if guarded.any():
        v[guarded] = 0.0
        v[guarded, 0] = 1.0  # degenerate rows pinned to a fixed unit vector
    return v, rows, safe, guarded


def forward_dc(params: ParameterVector, features) -> EmbeddingMatrix:
    if "head_dc_W" not in params.layout:
        raise HeadMismatch("parameters carry no DC head")
    x = _as_input(features)
    trunk_out, _ = forward_trunk(params, x)
    n_freq = x.shape[1]
    v, _, _, _ = _dc_head(params, trunk_out, n_freq)
    return EmbeddingMatrix(v, n_frames=x.shape[0], n_freq=n_freq)


def forward_upit(params: ParameterVector, features, scenario: int) -> MaskSet:
    name = f"head_upit{scenario}_W"
    if name not in params.layout:
        raise UnknownScenario(f"no head for scenario {scenario}")
    x = _as_input(features)
    trunk_out, _ = forward_trunk(params, x)
    masks = _upit_head(params, trunk_out, scenario, x.shape[1])
    return MaskSet(masks, scenario=scenario)


def _upit_head(params: ParameterVector, trunk_out: np.ndarray, scenario: int, n_freq: int) -> np.ndarray:
    raw = trunk_out @ params.get(f"head_upit{scenario}_W") + params.get(f"head_upit{scenario}_b")
    t_len = trunk_out.shape[0]
    logits = raw.reshape(t_len, scenario, n_freq)
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    masks = e / e.sum(axis=1, keepdims=True)
    return masks.transpose(1, 0, 2)  # (S, T, F)


def backward(
    params: ParameterVector,
    features,
    upstream: np.ndarray,
    head: str | int = "dc",
    cache=None,
) -> np.ndarray:
    """Exact gradient of the composed map w.r.t. every parameter.

    upstream is d loss / d head-output: (TF, D) against the normalized
    embeddings for head="dc", or (S, T, F) against the masks for an
    integer uPIT scenario. Pass cache from forward_trunk to skip the
    trunk recomputation; a third cache element carries the head
    internals (the _dc_head tuple, or the uPIT mask array) to skip the
    head recomputation too.
    """
    x = _as_input(features)
    head_cache = None
    if cache is None:
        trunk_out, cache = forward_trunk(params, x)
    elif len(cache) == 3:
        trunk_out, cache, head_cache = cache
    else:
        trunk_out, cache = cache
    t_len, n_freq = x.shape
    grad = np.zeros(params.size)
    upstream = np.asarray(upstream, dtype=np.float64)

    if head == "dc":
        if "head_dc_W" not in params.layout:
            raise HeadMismatch("parameters carry no DC head")
        v, rows, safe, guarded = head_cache if head_cache is not None else _dc_head(params, trunk_out, n_freq)
        d = rows.shape[1]
        if upstream.shape != (t_len * n_freq, d):
            raise GradientShapeMismatch(
                f"expected ({t_len * n_freq}, {d}), got {upstream.shape}"
            )
        # through row normalization v = r / |r|
        inner = (v * upstream).sum(axis=1)
        draw = (upstream - v * inner[:, None]) / safe[:, None]
        draw[guarded] = 0.0
        draw = draw.reshape(t_len, n_freq * d)
        _acc(grad, params.layout, "head_dc_W", trunk_out.T @ draw)
        _acc(grad, params.layout, "head_dc_b", draw.sum(axis=0))
        d_trunk = draw @ params.get("head_dc_W").T
    else:
        scenario = int(head)
        name = f"head_upit{scenario}_W"
        if name not in params.layout:
            raise UnknownScenario(f"no head for scenario {scenario}")
        masks = head_cache if head_cache is not None else _upit_head(
            params, trunk_out, scenario, n_freq
        )
        if upstream.shape != masks.shape:
            raise GradientShapeMismatch(
                f"expected {masks.shape}, got {upstream.shape}"
            )
        # softmax backward over the speaker axis
        dot = (masks * upstream).sum(axis=0, keepdims=True)
        draw = masks * (upstream - dot)  # (S, T, F)
        draw = draw.transpose(1, 0, 2).reshape(t_len, scenario * n_freq)
        _acc(grad, params.layout, name, trunk_out.T @ draw)
        _acc(grad, params.layout, f"head_upit{scenario}_b", draw.sum(axis=0))
        d_trunk = draw @ params.get(name).T

    _backward_trunk(params, cache, d_trunk, grad, params.layout)
    return grad


# --- checkpoints ------------------------------------------------------

def config_digest(config: NetworkConfig) -> bytes:
    return hashlib.sha256(config.canonical().encode("utf-8")).digest()


def save_checkpoint(
    path: str | Path,
    params: ParameterVector,
    config: NetworkConfig,
    extra_sections: list[Section] | None = None,
) -> None:
    """Versioned binary (magic, version, config digest, params as
    little-endian float64) plus a structured-text sidecar."""
    path = Path(path)
    payload = params.values.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(config_digest(config))
        fh.write(struct.pack("<Q", params.size))
        fh.write(payload)
    sections = [config.to_section()]
    if extra_sections:
        sections.extend(extra_sections)
    write_records(str(path) + ".cfg", sections)


def load_checkpoint(path: str | Path) -> tuple[ParameterVector, NetworkConfig, list[Section]]:
    path = Path(path)
    sections = read_records(str(path) + ".cfg")
    config = NetworkConfig.from_section(find_section(sections, "network"))
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {version}")
        digest = fh.read(32)
        if digest != config_digest(config):
            raise ConfigError("checkpoint/sidecar config digest mismatch")
        (count,) = struct.unpack("<Q", fh.read(8))
        values = np.frombuffer(fh.read(count * 8), dtype="<f8").astype(np.float64)
    layout = build_layout(config)
    total = sum(sl.stop - sl.start for sl, _ in layout.values())
    if total != count:
        raise ConfigError(f"checkpoint holds {count} values, config wants {total}")
    return ParameterVector(values, layout), config, sections
