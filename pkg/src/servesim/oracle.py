"""Small dense MLA in numpy: the direct and the reordered computation, with an
instrumented matmul that counts FLOPs and bytes per layer label.

Heads are stacked head-major: row ``i * ell + j`` of a stacked matrix is query
row ``j`` of head ``i``. The RoPE score term uses the same stacking, with the
shared rotated key slice multiplied once for all heads.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

ROPE_BASE = 10000.0


@dataclass(frozen=True)
class TinyDims:
    n_hd: int
    d_hd: int
    d_kvco: int
    d_emb: int
    L: int
    d_qco: int = 4
    d_rope: int = 2
    ell: int = 1

    def __post_init__(self):
        if self.d_rope % 2:
            raise ValueError("d_rope must be even for pairwise rotation")
        if not 1 <= self.ell <= self.L:
            raise ValueError("need 1 <= ell <= L")


@dataclass(frozen=True)
class TinyMlaWeights:
    W_CQ: np.ndarray   # d_emb x d_qco
    W_CKV: np.ndarray  # d_emb x d_kvco
    W_RK: np.ndarray   # d_emb x d_rope
    W_DQ: np.ndarray   # d_qco x n_hd*d_hd
    W_RQ: np.ndarray   # d_qco x n_hd*d_rope
    W_DK: np.ndarray   # d_kvco x n_hd*d_hd
    W_DV: np.ndarray   # d_kvco x n_hd*d_hd
    n_hd: int

    @property
    def d_hd(self) -> int:
        return self.W_DQ.shape[1] // self.n_hd

    @property
    def d_rope(self) -> int:
        return self.W_RK.shape[1]

    @classmethod
    def random(cls, dims: TinyDims, rng: np.random.Generator, scale: float = 1.0):
        def m(r, c):
            return rng.standard_normal((r, c)) * scale / np.sqrt(r)
        E, h, D = dims.d_emb, dims.n_hd, dims.d_hd
        return cls(m(E, dims.d_qco), m(E, dims.d_kvco), m(E, dims.d_rope),
                   m(dims.d_qco, h * D), m(dims.d_qco, h * dims.d_rope),
                   m(dims.d_kvco, h * D), m(dims.d_kvco, h * D), h)

    def head(self, name: str, i: int) -> np.ndarray:
        w = getattr(self, name)
        width = w.shape[1] // self.n_hd
        return w[:, i * width:(i + 1) * width]


@dataclass(frozen=True)
class TinyState:
    """Query hidden rows, the cache they attend to, and positions."""

    H: np.ndarray       # ell x d_emb, the newest rows
    C_KV: np.ndarray    # L x (d_kvco + d_rope): latent, then rotated RoPE key
    q_pos: np.ndarray   # ell positions
    k_pos: np.ndarray   # L positions
    d_kvco: int


def rope(x: np.ndarray, pos: np.ndarray, base: float = ROPE_BASE) -> np.ndarray:
    """Rotate consecutive column pairs of ``x`` by position-dependent angles."""
    R = x.shape[-1]
    inv = base ** (-np.arange(0, R, 2) / R)
    ang = np.outer(pos, inv)
    cos, sin = np.cos(ang), np.sin(ang)
    out = np.empty_like(x)
    out[..., 0::2] = x[..., 0::2] * cos - x[..., 1::2] * sin
    out[..., 1::2] = x[..., 0::2] * sin + x[..., 1::2] * cos
    return out


def make_state(weights: TinyMlaWeights, H_all: np.ndarray, ell: int = 1) -> TinyState:
    """Build the cache from all L hidden rows; the last ``ell`` are the queries."""
    L = H_all.shape[0]
    pos = np.arange(L, dtype=float)
    c_kv = H_all @ weights.W_CKV
    k_rope = rope(H_all @ weights.W_RK, pos)
    return TinyState(H_all[L - ell:], np.hstack([c_kv, k_rope]), pos[L - ell:], pos,
                     weights.W_CKV.shape[1])


class Counter:
    """Tallies FLOPs (2 per multiply-add) and bytes touched per label."""

    def __init__(self, dtype_bytes: int = 2):
        self.dt = dtype_bytes
        self.flops = defaultdict(float)
        self.bytes = defaultdict(float)

    def mm(self, label: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        m, k = a.shape
        n = b.shape[1]
        self.flops[label] += 2.0 * m * k * n
        self.bytes[label] += self.dt * (m * k + k * n + m * n)
        return a @ b

    def touch(self, label: str, *arrays: np.ndarray) -> None:
        self.bytes[label] += self.dt * sum(a.size for a in arrays)


class _NoCount(Counter):
    def mm(self, label, a, b):
        return a @ b

    def touch(self, label, *arrays):
        pass


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _front(state: TinyState, w: TinyMlaWeights, c: Counter):
    """Shared head of both paths: compression, Q decompression, Q RoPE."""
    Kc = state.d_kvco
    W_comp = np.hstack([w.W_CQ, w.W_CKV, w.W_RK])
    comp = c.mm("a_qkv_compress", state.H, W_comp)
    C_Q = comp[:, :w.W_CQ.shape[1]]
    q_rope_raw = c.mm("b_q_rope", C_Q, w.W_RQ)
    Q = c.mm("c_q_decompress", C_Q, w.W_DQ)
    h, R = w.n_hd, w.d_rope
    ell = state.H.shape[0]
    # rotate new Q and K RoPE slices (read + write each)
    q_rope = np.vstack([rope(q_rope_raw[:, i * R:(i + 1) * R], state.q_pos) for i in range(h)])
    new_k = comp[:, -R:]
    c.touch("g_k_rope", q_rope_raw, q_rope, new_k, new_k)
    c_kv = state.C_KV[:, :Kc]
    k_rope = state.C_KV[:, Kc:]
    s_rope = c.mm("g_k_rope", q_rope, k_rope.T)  # (h*ell) x L, K_rope read once
    mask = np.where(state.k_pos[None, :] <= state.q_pos[:, None], 0.0, -np.inf)
    return Q, c_kv, s_rope.reshape(h, ell, -1), mask


def _finish_softmax(s_nope, s_rope, mask, d_hd, c: Counter):
    S = s_nope + s_rope
    P = _softmax_rows(S / np.sqrt(d_hd) + mask[None])
    c.touch("softmax", s_nope, s_rope, P)
    return S, P


def mla_naive(state: TinyState, w: TinyMlaWeights, counter: Counter | None = None):
    """Decompress per-head K and V from the cache, then score, softmax, context.

    Returns (S, O): raw scores (n_hd x ell x L, NoPE plus RoPE terms, before
    scaling and masking) and the concatenated head outputs (ell x n_hd*d_hd).
    """
    c = counter or _NoCount()
    h, D = w.n_hd, w.d_hd
    Q, c_kv, s_rope, mask = _front(state, w, c)
    K = c.mm("d_k_decompress", c_kv, w.W_DK)
    V = c.mm("e_v_decompress", c_kv, w.W_DV)
    s_nope = np.stack([c.mm("f_score", Q[:, i * D:(i + 1) * D], K[:, i * D:(i + 1) * D].T)
                       for i in range(h)])
    S, P = _finish_softmax(s_nope, s_rope, mask, D, c)
    O = np.hstack([c.mm("h_context", P[i], V[:, i * D:(i + 1) * D]) for i in range(h)])
    return S, O


def mla_reordered(state: TinyState, w: TinyMlaWeights, counter: Counter | None = None):
    """Fold W_DK into the queries and W_DV into the outputs so that the score and
    context products run on the latent cache with all heads stacked."""
    c = counter or _NoCount()
    h, D = w.n_hd, w.d_hd
    ell = state.H.shape[0]
    Q, c_kv, s_rope, mask = _front(state, w, c)
    Q_lat = np.vstack([c.mm("d_k_decompress", Q[:, i * D:(i + 1) * D], w.head("W_DK", i).T)
                       for i in range(h)])  # (h*ell) x d_kvco
    s_nope = c.mm("f_score", Q_lat, c_kv.T).reshape(h, ell, -1)
    S, P = _finish_softmax(s_nope, s_rope, mask, D, c)
    O_lat = c.mm("h_context", P.reshape(h * ell, -1), c_kv)
    O = np.hstack([c.mm("e_v_decompress", O_lat[i * ell:(i + 1) * ell], w.head("W_DV", i))
                   for i in range(h)])
    return S, O


def random_instance(dims: TinyDims, seed: int):
    rng = np.random.default_rng(seed)
    w = TinyMlaWeights.random(dims, rng)
    H = rng.standard_normal((dims.L, dims.d_emb))
    return make_state(w, H, dims.ell), w


def instrumented_counts(path: str, dims: TinyDims, seed: int = 0, dtype_bytes: int = 2):
    """Per-label (flops, bytes) dicts from running one path on random data."""
    if path not in ("naive", "reordered"):
        raise ValueError(f"path must be 'naive' or 'reordered', got {path!r}")
    state, w = random_instance(dims, seed)
    c = Counter(dtype_bytes)
    (mla_naive if path == "naive" else mla_reordered)(state, w, c)
    return dict(c.flops), dict(c.bytes)


def equivalence_error(state: TinyState, w: TinyMlaWeights) -> float:
    """max |naive - reordered| over S and O, relative to 1 + max |value|."""
    S1, O1 = mla_naive(state, w)
    S2, O2 = mla_reordered(state, w)
    err = 0.0
    for a, b in ((S1, S2), (O1, O2)):
        err = max(err, float(np.max(np.abs(a - b))) / (1.0 + float(np.max(np.abs(a)))))
    return err


def _tiny_model(dims: TinyDims, dtype_bytes: int = 2):
    from .model import MLA, DenseFfn, ModelSpec
    return ModelSpec("oracle", 1, dims.d_emb, dims.n_hd, dims.d_hd,
                     MLA(dims.d_qco, dims.d_kvco, dims.d_rope), DenseFfn(dims.d_emb),
                     dtype_bytes)


def count_deviation(path: str, dims: TinyDims, seed: int = 0) -> dict[str, float]:
    """Per label, the larger relative gap between oracle counts and the
    unfused closed-form costs for FLOPs and bytes."""
    from .layers import Phase, mla_block_cost
    flops, nbytes = instrumented_counts(path, dims, seed)
    phase = Phase.decode(dims.L) if dims.ell == 1 else Phase.prefill(dims.L)
    if dims.ell not in (1, dims.L):
        raise ValueError("count comparison needs ell == 1 (decode) or ell == L (prefill)")
    costs = mla_block_cost(_tiny_model(dims), phase, 1, reorder=path == "reordered")
    out = {}
    for c in costs:
        if c.label not in nbytes:
            continue
        gaps = [abs(nbytes[c.label] - c.bytes) / c.bytes]
        if c.flops:
            gaps.append(abs(flops.get(c.label, 0.0) - c.flops) / c.flops)
        out[c.label] = max(gaps)
    return out


def _random_small_dims(rng: np.random.Generator) -> TinyDims:
    L = int(rng.integers(1, 17))
    return TinyDims(n_hd=int(rng.integers(1, 5)), d_hd=int(rng.integers(1, 17)),
                    d_kvco=int(rng.integers(1, 17)), d_emb=int(rng.integers(1, 17)), L=L,
                    d_qco=int(rng.integers(1, 17)), d_rope=2 * int(rng.integers(1, 9)),
                    ell=int(rng.integers(1, L + 1)))


def verify_suite(seeds: int = 100, tol: float = 1e-9) -> list[tuple[str, bool, str]]:
    """Equivalence over random small instances and count checks at dims >= 64."""
    rng = np.random.default_rng(20240917)
    worst = 0.0
    for seed in range(seeds):
        worst = max(worst, equivalence_error(*random_instance(_random_small_dims(rng), seed)))
    results = [("naive == reordered", worst <= tol,
                f"max relative error {worst:.3e} over {seeds} instances")]

    big = dict(n_hd=64, d_hd=64, d_kvco=128, d_emb=64, d_qco=64, d_rope=64)
    for name, dims in (("decode", TinyDims(L=128, ell=1, **big)),
                       ("prefill", TinyDims(L=64, ell=64, **big))):
        for path in ("naive", "reordered"):
            dev = count_deviation(path, dims)
            label, gap = max(dev.items(), key=lambda kv: kv[1])
            results.append((f"counts {name}/{path}", gap <= 0.1,
                            f"worst label {label}: {gap:.3%} off the closed form"))

    dims = TinyDims(L=128, ell=1, **big)
    fn, _ = instrumented_counts("naive", dims)
    fr, _ = instrumented_counts("reordered", dims)
    ratio = fn["d_k_decompress"] / fr["d_k_decompress"]
    results.append(("K decompress FLOP ratio == L", ratio == dims.L,
                    f"ratio {ratio:g} at L={dims.L}"))
    return results
