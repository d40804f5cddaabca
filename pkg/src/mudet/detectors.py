"""Multi-user uplink detectors.

Linear detection (single-user Wiener filter in Sherman-Morrison form,
multi-user MMSE with interference rejection, white-noise MRC), ordered
successive interference cancellation on a sorted QR of the extended
channel, breadth-first K-best tree search, its sorting-reduced variant
driven by a ``(k, s, p, v, q)`` schedule, exhaustive maximum likelihood,
and the interference-whitening pre-processing chain that makes the tree
search robust to spatially coloured interference.

LLR convention: positive favours bit 0. Magnitudes are clamped to
``LLR_MAX`` so a missing bit hypothesis in a candidate list stays finite
for the decoder.

All functions are pure: they read their arguments and return fresh
arrays, so concurrent calls on distinct subcarrier instances are safe.
"""

from dataclasses import dataclass

import numpy as np

from .airlink import Constellation
from .errors import (
    DimensionMismatchError,
    InvalidSearchParamsError,
    SearchSpaceTooLargeError,
)
from .numkit import (
    SortedQR,
    as_complex_matrix,
    as_complex_vector,
    inv_sqrt,
    qr_decompose,
    solve_hermitian,
    sorted_qr,
)

LLR_MAX = 30.0

# Per-parent child budget of the sorting-reduced search.
SR_EXPAND_BUDGET = 4

_ML_GUARD = 10**6
_ML_CHUNK = 1 << 15


@dataclass(frozen=True)
class DetectorOutput:
    """Hard decisions (constellation indices per user), per-bit LLRs, best metric."""

    hard: np.ndarray
    llr: np.ndarray
    metric: float


@dataclass(frozen=True)
class CandidateList:
    """Survivors of a tree search, ascending by accumulated squared distance.

    ``symbols[c, m]`` is the constellation index of candidate ``c`` for the
    symbol solved at triangular row ``m``.
    """

    symbols: np.ndarray
    metrics: np.ndarray

    def __len__(self) -> int:
        return self.metrics.size

    def permuted(self, perm: np.ndarray) -> "CandidateList":
        """Map layer-ordered symbols back to original user order.

        ``perm[j]`` is the original user solved at row ``j``.
        """
        out = np.empty_like(self.symbols)
        out[:, np.asarray(perm)] = self.symbols
        return CandidateList(symbols=out, metrics=self.metrics)


@dataclass(frozen=True)
class ExtendedModel:
    """Regularized channel: ``sqrt(sigma_n2 + sigma_i2) * I`` stacked under ``h``."""

    h_ext: np.ndarray
    y_ext: np.ndarray
    reg: float


@dataclass(frozen=True)
class SrKBestParams:
    """Candidate-selection schedule of the sorting-reduced K-best search.

    Per layer, parent ``i`` (ranked by position in the previous survivor
    list) passes its first ``p[i]`` children straight through, its next
    ``v[i]`` children into a small sorting pool, and the best ``s`` pool
    members land at the (1-based) survivor positions ``q``. Only the pool
    is ever sorted, which is the entire point of the structure.
    """

    k: int
    s: int
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    expand: int = SR_EXPAND_BUDGET

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=int))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=int))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=int))
        if self.k < 1 or self.s < 0 or self.s > self.k:
            raise InvalidSearchParamsError(f"need 0 <= s <= k, got k={self.k} s={self.s}")
        if self.p.size != self.k or self.v.size != self.k:
            raise InvalidSearchParamsError("p and v must have one entry per survivor slot")
        if np.any(self.p < 0) or np.any(self.v < 0):
            raise InvalidSearchParamsError("p and v entries must be >= 0")
        if int(self.p.sum()) != self.k - self.s:
            raise InvalidSearchParamsError(
                f"sum(p)={int(self.p.sum())} must equal k - s = {self.k - self.s}"
            )
        if self.q.size != self.s:
            raise InvalidSearchParamsError("q must list one position per sorted survivor")
        if self.s and (
            np.any(self.q < 1)
            or np.any(self.q > self.k)
            or np.any(np.diff(self.q) <= 0)
        ):
            raise InvalidSearchParamsError("q must be strictly increasing within [1..k]")
        if np.any(self.p + self.v > self.expand):
            raise InvalidSearchParamsError(
                f"p[i] + v[i] must stay within the expansion budget {self.expand}"
            )
        if int(self.v.sum()) < self.s:
            raise InvalidSearchParamsError("sorting pool smaller than s")

    @classmethod
    def default_16_4(cls) -> "SrKBestParams":
        """The optimized (16, 4) schedule used as the package default."""
        p = [2, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0]
        v = [2, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2]
        return cls(k=16, s=4, p=p, v=v, q=[2, 4, 6, 8])


@dataclass(frozen=True)
class RobustState:
    """Intermediates of the whitening pre-processing chain.

    ``y2 = q1' y1`` exactly by construction; the final search runs over
    ``(r2, y3)`` and reads results back through ``perm``.
    """

    h1: np.ndarray
    r1: np.ndarray
    h2: np.ndarray
    r2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    y3: np.ndarray
    x_mid: np.ndarray
    perm: np.ndarray


@dataclass(frozen=True)
class RobustPlan:
    """Per-block (y-independent) factors of the whitening chain, reusable
    across every received vector that shares ``h_hat`` and ``r_uu``."""

    w: np.ndarray
    h1: np.ndarray
    q1: np.ndarray
    r1: np.ndarray
    h2: np.ndarray
    q2: np.ndarray
    r2: np.ndarray
    perm: np.ndarray
    mid_gram: np.ndarray


# ---------------------------------------------------------------------------
# linear detectors


def mmse_single(h, r_uu, y) -> complex:
    """Single-user Wiener estimate via the Sherman-Morrison form.

    Returns ``w @ y`` with ``w = h' R_uu^-1 / (1 + h' R_uu^-1 h)``, which
    equals the direct ``R_yy^-1`` computation with ``R_yy = R_uu + h h'``.
    """
    h = as_complex_vector(h, "h")
    y = as_complex_vector(y, "y")
    if h.size != y.size:
        raise DimensionMismatchError("h and y must have equal length")
    z = solve_hermitian(r_uu, h)
    denom = 1.0 + float(np.real(h.conj() @ z))
    return complex(z.conj() @ y) / denom


def mmse_irc_weights(h_hat, r_uu, sigma_n2: float) -> np.ndarray:
    """Weight matrix ``(sigma_n2 I + H' R_uu^-1 H)^-1 H' R_uu^-1``."""
    h_hat = as_complex_matrix(h_hat, "h_hat")
    n_rx, n_users = h_hat.shape
    if n_rx < n_users:
        raise DimensionMismatchError("need n_rx >= n_users")
    z = solve_hermitian(r_uu, h_hat)
    gram = sigma_n2 * np.eye(n_users) + h_hat.conj().T @ z
    gram = 0.5 * (gram + gram.conj().T)
    return solve_hermitian(gram, z.conj().T)


def mmse_irc(h_hat, r_uu, sigma_n2: float, y) -> tuple[np.ndarray, np.ndarray]:
    """Multi-user MMSE with interference rejection combining.

    Returns ``(w, x_hat)`` where ``x_hat = w @ y`` is the unconstrained
    linear estimate; slice it against a constellation for hard decisions.
    """
    y = as_complex_vector(y, "y")
    w = mmse_irc_weights(h_hat, r_uu, sigma_n2)
    if w.shape[1] != y.size:
        raise DimensionMismatchError("y length must equal n_rx")
    return w, w @ y


def mrc_white(h_hat, sigma_n2: float, y) -> np.ndarray:
    """Regularized matched-filter detector assuming spatially white noise."""
    h_hat = as_complex_matrix(h_hat, "h_hat")
    y = as_complex_vector(y, "y")
    n_rx, n_users = h_hat.shape
    if n_rx < n_users:
        raise DimensionMismatchError("need n_rx >= n_users")
    if y.size != n_rx:
        raise DimensionMismatchError("y length must equal n_rx")
    gram = sigma_n2 * np.eye(n_users) + h_hat.conj().T @ h_hat
    gram = 0.5 * (gram + gram.conj().T)
    return solve_hermitian(gram, h_hat.conj().T @ y)


# ---------------------------------------------------------------------------
# tree-search detectors


def build_extended(h_hat, y, sigma_n2: float, sigma_i2: float) -> ExtendedModel:
    """Stack ``sqrt(sigma_n2 + sigma_i2) * I`` under the channel.

    QR-based detection on the extended model implicitly applies MMSE-style
    regularization without explicit matrix inversion.
    """
    h_hat = as_complex_matrix(h_hat, "h_hat")
    y = as_complex_vector(y, "y")
    if y.size != h_hat.shape[0]:
        raise DimensionMismatchError("y length must equal n_rx")
    total = sigma_n2 + sigma_i2
    if total <= 0.0:
        raise ValueError("sigma_n2 + sigma_i2 must be > 0")
    reg = float(np.sqrt(total))
    n_users = h_hat.shape[1]
    h_ext = np.vstack([h_hat, reg * np.eye(n_users)])
    y_ext = np.concatenate([y, np.zeros(n_users, dtype=complex)])
    return ExtendedModel(h_ext=h_ext, y_ext=y_ext, reg=reg)


def _layer_increments(r, y_tilde, layer, symbols, points):
    """Squared per-layer distances of every child of every candidate."""
    if layer < r.shape[0] - 1:
        tail = points[symbols[:, layer + 1 :]] @ r[layer, layer + 1 :]
    else:
        tail = np.zeros(symbols.shape[0], dtype=complex)
    b = y_tilde[layer] - tail
    return np.abs(b[:, None] - r[layer, layer] * points[None, :]) ** 2


def _kbest_step(r, y_tilde, layer, symbols, metrics, points, expand, keep):
    """One breadth-first layer: expand each parent, keep the best sorted."""
    inc = _layer_increments(r, y_tilde, layer, symbols, points)
    order = np.argsort(inc, axis=1, kind="stable")[:, :expand]
    child_metrics = metrics[:, None] + np.take_along_axis(inc, order, axis=1)
    flat = child_metrics.ravel()
    sel = np.argsort(flat, kind="stable")[: min(keep, flat.size)]
    parents = sel // expand
    out = symbols[parents].copy()
    out[:, layer] = order.ravel()[sel]
    return out, flat[sel]


def kbest_detect(
    r, y_tilde, k: int, cons: Constellation, expand: int | None = None
) -> CandidateList:
    """Breadth-first K-best search on an upper-triangular system.

    The root layer enumerates every constellation point; from the second
    layer on, each survivor spawns its ``expand`` best children in
    Schnorr-Euchner order (ascending per-layer distance) and the ``k``
    smallest accumulated distances survive. The returned list is sorted
    ascending by metric; ties resolve to the lexicographically smaller
    symbol sequence via stable sorting.
    """
    r = as_complex_matrix(r, "r")
    y_tilde = as_complex_vector(y_tilde, "y_tilde")
    m = r.shape[0]
    if r.shape[1] != m or y_tilde.size != m:
        raise DimensionMismatchError("r must be m x m and y_tilde length m")
    points = cons.points
    if expand is None:
        expand = cons.size
    if not 1 <= expand <= cons.size:
        raise ValueError("expand must be in [1, constellation size]")
    if k < 1:
        raise ValueError("k must be >= 1")
    symbols = np.zeros((1, m), dtype=np.int64)
    metrics = np.zeros(1)
    for layer in range(m - 1, -1, -1):
        eff = cons.size if layer == m - 1 else expand
        symbols, metrics = _kbest_step(
            r, y_tilde, layer, symbols, metrics, points, eff, k
        )
    return CandidateList(symbols=symbols, metrics=metrics)


def _sr_fill_indices(params: SrKBestParams):
    """Static gather indices of one scheduled layer."""
    k = params.k
    direct_parent = np.repeat(np.arange(k), params.p)
    direct_rank = np.concatenate([np.arange(c) for c in params.p])
    pool_parent = np.repeat(np.arange(k), params.v)
    pool_rank = np.concatenate([p + np.arange(c) for p, c in zip(params.p, params.v)])
    direct_slots = np.setdiff1d(np.arange(k), params.q - 1)
    return direct_parent, direct_rank, pool_parent, pool_rank, direct_slots


def _sr_step(r, y_tilde, layer, symbols, metrics, points, params, fill):
    """One scheduled layer of the sorting-reduced search.

    Direct children land at the non-``q`` slots in parent order without any
    comparison; only the small pool is sorted, and its best ``s`` members
    occupy the ``q`` slots in ascending metric order.
    """
    direct_parent, direct_rank, pool_parent, pool_rank, direct_slots = fill
    inc = _layer_increments(r, y_tilde, layer, symbols, points)
    max_rank = int(np.max(params.p + params.v))
    order = np.argsort(inc, axis=1, kind="stable")[:, :max_rank]
    child_metrics = metrics[:, None] + np.take_along_axis(inc, order, axis=1)

    out_symbols = np.empty_like(symbols)
    out_metrics = np.empty(params.k)

    out_symbols[direct_slots] = symbols[direct_parent]
    out_symbols[direct_slots, layer] = order[direct_parent, direct_rank]
    out_metrics[direct_slots] = child_metrics[direct_parent, direct_rank]

    if params.s:
        pool_metrics = child_metrics[pool_parent, pool_rank]
        winners = np.argsort(pool_metrics, kind="stable")[: params.s]
        q_slots = params.q - 1
        out_symbols[q_slots] = symbols[pool_parent[winners]]
        out_symbols[q_slots, layer] = order[pool_parent[winners], pool_rank[winners]]
        out_metrics[q_slots] = pool_metrics[winners]
    return out_symbols, out_metrics


def sr_kbest_detect(
    r, y_tilde, params: SrKBestParams, cons: Constellation
) -> CandidateList:
    """Sorting-reduced K-best search.

    Layers run breadth-first as in :func:`kbest_detect`. While fewer than
    ``params.k`` candidates exist the search warms up by keeping every
    child (sorted); once the survivor list is full each layer applies the
    ``(p, v, q)`` schedule, whose positional placement replaces the full
    per-layer sort. The output is sorted ascending by metric.
    """
    r = as_complex_matrix(r, "r")
    y_tilde = as_complex_vector(y_tilde, "y_tilde")
    m = r.shape[0]
    if r.shape[1] != m or y_tilde.size != m:
        raise DimensionMismatchError("r must be m x m and y_tilde length m")
    points = cons.points
    if int(np.max(params.p + params.v)) > cons.size:
        raise InvalidSearchParamsError("schedule needs more children than the constellation has")
    fill = _sr_fill_indices(params)
    symbols = np.zeros((1, m), dtype=np.int64)
    metrics = np.zeros(1)
    for layer in range(m - 1, -1, -1):
        if symbols.shape[0] == params.k:
            symbols, metrics = _sr_step(
                r, y_tilde, layer, symbols, metrics, points, params, fill
            )
        else:
            symbols, metrics = _kbest_step(
                r, y_tilde, layer, symbols, metrics, points, cons.size, params.k
            )
    final = np.argsort(metrics, kind="stable")
    return CandidateList(symbols=symbols[final], metrics=metrics[final])


def osic_detect(qrd: SortedQR, y_ext, cons: Constellation) -> DetectorOutput:
    """Ordered successive interference cancellation by back-substitution.

    Starts at the last (strongest) layer of the sorted triangular system,
    slices each residual to the nearest constellation point, cancels it,
    and maps the result back to the original user order.
    """
    y_ext = as_complex_vector(y_ext, "y_ext")
    q, r, perm = qrd.q, qrd.r, qrd.perm
    if q.shape[0] != y_ext.size:
        raise DimensionMismatchError("y_ext length must match the factorized rows")
    m = r.shape[0]
    y_tilde = q.conj().T @ y_ext
    hard = np.empty(m, dtype=np.int64)
    points = cons.points
    for layer in range(m - 1, -1, -1):
        resid = y_tilde[layer] - r[layer, layer + 1 :] @ points[hard[layer + 1 :]]
        hard[layer] = cons.nearest(resid / r[layer, layer])
    metric = float(np.sum(np.abs(y_tilde - r @ points[hard]) ** 2))
    cands = CandidateList(symbols=hard[None, :], metrics=np.array([metric])).permuted(perm)
    llr = compute_llrs(cands, cons, m)
    return DetectorOutput(hard=cands.symbols[0], llr=llr, metric=metric)


def ml_bruteforce(h, y, cons: Constellation) -> DetectorOutput:
    """Exhaustive minimum-distance search over every symbol vector.

    Guarded to one million candidates. Evaluation is chunked so memory
    stays bounded; LLRs are exact max-log values over the full search
    space. Ties resolve to the lexicographically smallest index sequence.
    """
    h = as_complex_matrix(h, "h")
    y = as_complex_vector(y, "y")
    n, m = h.shape
    if y.size != n:
        raise DimensionMismatchError("y length must equal the channel rows")
    size = cons.size
    total = size**m
    if total > _ML_GUARD:
        raise SearchSpaceTooLargeError(f"{total} candidates exceeds guard {_ML_GUARD}")
    n_bits = m * cons.bits_per_symbol
    best_metric = np.inf
    best_idx = 0
    min_by_bit = np.full((n_bits, 2), np.inf)
    weights = size ** np.arange(m - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, _ML_CHUNK):
        idx = np.arange(start, min(start + _ML_CHUNK, total), dtype=np.int64)
        sym = (idx[:, None] // weights) % size
        diff = y[None, :] - cons.points[sym] @ h.T
        metrics = np.sum(np.abs(diff) ** 2, axis=1)
        j = int(np.argmin(metrics))
        if metrics[j] < best_metric:
            best_metric = float(metrics[j])
            best_idx = int(idx[j])
        bits = cons.bit_patterns[sym].reshape(idx.size, n_bits)
        for hyp in (0, 1):
            masked = np.where(bits == hyp, metrics[:, None], np.inf)
            np.minimum(min_by_bit[:, hyp], masked.min(axis=0), out=min_by_bit[:, hyp])
    hard = ((best_idx // weights) % size).astype(np.int64)
    llr = np.clip(min_by_bit[:, 1] - min_by_bit[:, 0], -LLR_MAX, LLR_MAX)
    return DetectorOutput(hard=hard, llr=llr, metric=best_metric)


# ---------------------------------------------------------------------------
# robust whitening chain


def robust_plan(h_hat, r_uu) -> RobustPlan:
    """Pre-compute the received-vector-independent part of the robust chain.

    Whitens the channel, factorizes it, builds the second-stage matrix
    ``h2 = inv(r1') + r1`` and its sorted QR. One plan serves every
    received vector of a resource block.
    """
    h_hat = as_complex_matrix(h_hat, "h_hat")
    w = inv_sqrt(r_uu)
    if w.shape[0] != h_hat.shape[0]:
        raise DimensionMismatchError("r_uu dimension must equal n_rx")
    h1 = w @ h_hat
    q1, r1 = qr_decompose(h1)
    m = r1.shape[0]
    r1_hinv = np.linalg.solve(r1.conj().T, np.eye(m, dtype=complex))
    h2 = r1_hinv + r1
    sq2 = sorted_qr(h2)
    mid_gram = np.eye(m) + r1.conj().T @ r1
    mid_gram = 0.5 * (mid_gram + mid_gram.conj().T)
    return RobustPlan(
        w=w, h1=h1, q1=q1, r1=r1, h2=h2, q2=sq2.q, r2=sq2.r, perm=sq2.perm,
        mid_gram=mid_gram,
    )


def robust_apply(plan: RobustPlan, y) -> RobustState:
    """Run one received vector through a pre-computed robust plan."""
    y = as_complex_vector(y, "y")
    y1 = plan.w @ y
    y2 = plan.q1.conj().T @ y1
    x_mid = solve_hermitian(plan.mid_gram, plan.r1.conj().T @ y2)
    y3 = plan.q2.conj().T @ y2
    return RobustState(
        h1=plan.h1, r1=plan.r1, h2=plan.h2, r2=plan.r2,
        y1=y1, y2=y2, y3=y3, x_mid=x_mid, perm=plan.perm,
    )


def robust_preprocess(h_hat, y, r_uu) -> RobustState:
    """Whiten, factorize, MMSE mid-stage, re-factorize.

    Steps: ``w = inv_sqrt(r_uu)``; ``y1 = w y``, ``h1 = w h``; thin QR of
    ``h1``; ``y2 = q1' y1``; ``x_mid = (I + r1' r1)^-1 r1' y2``;
    ``h2 = inv(r1') + r1``; sorted QR of ``h2``; ``y3 = q2' y2``. The
    user sorting happens on ``h2`` only, and ``perm`` records it.
    """
    return robust_apply(robust_plan(h_hat, r_uu), y)


def robust_sr_kbest(
    h_hat, y, r_uu, params: SrKBestParams, cons: Constellation
) -> DetectorOutput:
    """Interference-whitened sorting-reduced K-best detector.

    Runs :func:`robust_preprocess`, searches the original constellation
    alphabet against ``(r2, y3)``, and un-permutes the result.
    """
    state = robust_preprocess(h_hat, y, r_uu)
    cands = sr_kbest_detect(state.r2, state.y3, params, cons).permuted(state.perm)
    n_users = state.r2.shape[0]
    llr = compute_llrs(cands, cons, n_users)
    return DetectorOutput(hard=cands.symbols[0], llr=llr, metric=float(cands.metrics[0]))


# ---------------------------------------------------------------------------
# soft output


def compute_llrs(cands: CandidateList, cons: Constellation, n_users: int) -> np.ndarray:
    """Max-log LLRs from a candidate list, positive favouring bit 0.

    For each coded bit (user-major order), the LLR is the minimum metric
    among candidates carrying bit 1 minus the minimum among those carrying
    bit 0; a missing hypothesis clamps the value to ``+/- LLR_MAX``.
    """
    if len(cands) == 0:
        raise ValueError("empty candidate list")
    if cands.symbols.shape[1] != n_users:
        raise DimensionMismatchError("candidate width must equal n_users")
    n_bits = n_users * cons.bits_per_symbol
    bits = cons.bit_patterns[cands.symbols].reshape(len(cands), n_bits)
    metrics = cands.metrics[:, None]
    min0 = np.where(bits == 0, metrics, np.inf).min(axis=0)
    min1 = np.where(bits == 1, metrics, np.inf).min(axis=0)
    llr = np.where(np.isinf(min1), LLR_MAX, np.where(np.isinf(min0), -LLR_MAX, min1 - min0))
    return np.clip(llr, -LLR_MAX, LLR_MAX)


def equalizer_llrs(x_eq, bias, noise_var, cons: Constellation) -> np.ndarray:
    """Per-user max-log LLRs for a linear equalizer output.

    ``x_eq[m]`` is modelled as ``bias[m] * x[m]`` plus residual noise of
    power ``noise_var[m]``; the per-symbol distances are scaled by the
    residual power so the LLRs are decoder-calibrated. Same sign
    convention and clamp as :func:`compute_llrs`.
    """
    x_eq = as_complex_vector(x_eq, "x_eq")
    bias = np.asarray(bias, dtype=complex)
    noise_var = np.maximum(np.asarray(noise_var, dtype=float), 1e-30)
    d = np.abs(x_eq[:, None] - bias[:, None] * cons.points[None, :]) ** 2
    d = d / noise_var[:, None]
    llr = np.empty((x_eq.size, cons.bits_per_symbol))
    for b in range(cons.bits_per_symbol):
        mask1 = cons.bit_patterns[:, b] == 1
        llr[:, b] = d[:, mask1].min(axis=1) - d[:, ~mask1].min(axis=1)
    return np.clip(llr.ravel(), -LLR_MAX, LLR_MAX)
