"""Supernet forward and backward passes over shared weight slices.

Each layer runs sampling -> attention -> aggregation -> combination ->
activation. The attention coefficients live on the (sampled) support of the
normalized adjacency; per-head combination uses consecutive column blocks of
the shared weight tensor, concatenated on hidden layers and averaged on the
final layer. Backward is hand-derived and checked against central finite
differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import EmptyMaskError, ShapeError
from ..graph import Graph, SparseMatrix, build_normalized_adjacency
from .ops import ACTIVATIONS, dleaky, leaky, row_softmax
from .space import PARAMETRIC_ATTENTION, SubnetSpec
from .weights import SharedWeights

EVAL_SAMPLING_SEED = 0x5EED
_EDGE_CHUNK = 8192


@dataclass
class GraphTensors:
    """Graph prepared for the network: dense features plus normalized support."""

    x0: np.ndarray
    labels: np.ndarray
    num_classes: int
    a_hat: SparseMatrix          # normalized adjacency incl self loops
    row: np.ndarray              # expanded CSR row index per nonzero

    @classmethod
    def from_graph(cls, g: Graph, add_self_loops: bool = True) -> "GraphTensors":
        a_hat = build_normalized_adjacency(g, add_self_loops=add_self_loops)
        row = np.repeat(np.arange(a_hat.num_rows), a_hat.row_nnz())
        return cls(x0=np.asarray(g.features, dtype=np.float64),
                   labels=g.labels, num_classes=g.num_classes,
                   a_hat=a_hat, row=row)

    @property
    def num_nodes(self) -> int:
        return self.a_hat.num_rows


@dataclass
class Support:
    """A (possibly sampled) subset of the adjacency support, CSR-ordered."""

    n: int
    row_ptr: np.ndarray
    row: np.ndarray
    col: np.ndarray
    a_vals: np.ndarray  # normalized adjacency values on the kept entries

    def matrix(self, values: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((values, self.col, self.row_ptr),
                             shape=(self.n, self.n))

    def seg_sum(self, edge_vals: np.ndarray) -> np.ndarray:
        return np.bincount(self.row, weights=edge_vals, minlength=self.n)

    def seg_max(self, edge_vals: np.ndarray) -> np.ndarray:
        out = np.full(self.n, -np.inf)
        np.maximum.at(out, self.row, edge_vals)
        return out


def sample_support(gt: GraphTensors, rate: float,
                   rng: np.random.Generator) -> Support:
    """Keep each off-diagonal support entry with probability ``rate``;
    self loops are always kept. Rate 1 keeps everything (no rng draw)."""
    a = gt.a_hat
    if rate >= 1.0:
        return Support(a.num_rows, a.row_ptr, gt.row, a.col_idx, a.values)
    keep = rng.random(a.nnz) < rate
    keep |= gt.row == a.col_idx
    row = gt.row[keep]
    col = a.col_idx[keep]
    vals = a.values[keep]
    counts = np.bincount(row, minlength=a.num_rows)
    row_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return Support(a.num_rows, row_ptr, row, col, vals)


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------

def _edge_rowdot(a: np.ndarray, rows_i: np.ndarray, rows_j: np.ndarray,
                 b: np.ndarray, weight: np.ndarray | None = None) -> np.ndarray:
    """sum_f a[i,f] * b[j,f] (* weight[f]) per edge, chunked to bound memory."""
    out = np.empty(len(rows_i))
    bw = b if weight is None else b * weight
    for s in range(0, len(rows_i), _EDGE_CHUNK):
        e = s + _EDGE_CHUNK
        out[s:e] = np.einsum("ef,ef->e", a[rows_i[s:e]], bw[rows_j[s:e]])
    return out


def _edge_softmax(sup: Support, e: np.ndarray) -> np.ndarray:
    """Row-stochastic normalization of edge scores over N(i) u {i}."""
    m = sup.seg_max(e)
    z = np.exp(e - m[sup.row])
    denom = sup.seg_sum(z)
    return z / denom[sup.row]


def attention_scores(att: str, h_feat: np.ndarray, sup: Support,
                     w1: np.ndarray | None, w2: np.ndarray | None,
                     wa: float | None) -> tuple[np.ndarray, dict]:
    """Unnormalized edge score for one head, plus the backward cache."""
    cache: dict = {}
    if att == "gat":
        a = h_feat @ w1
        b = h_feat @ w2
        s = a[sup.row] + b[sup.col]
        cache.update(s=s)
        return leaky(s), cache
    if att == "gat_sym":
        a = h_feat @ w1
        b = h_feat @ w2
        s1 = a[sup.row] + b[sup.col]
        s2 = a[sup.col] + b[sup.row]
        cache.update(s1=s1, s2=s2)
        return leaky(s1) + leaky(s2), cache
    if att == "cos":
        e = _edge_rowdot(h_feat, sup.row, sup.col, h_feat, weight=w1)
        return e, cache
    if att == "linear":
        b = h_feat @ w2
        t = np.tanh(b[sup.col])
        cache.update(t=t)
        return t, cache
    if att == "gene_linear":
        a = h_feat @ w1
        b = h_feat @ w2
        t = np.tanh(a[sup.row] + b[sup.col])
        cache.update(t=t)
        return wa * t, cache
    raise ShapeError(f"unknown parametric attention type {att!r}")


def attention_coefficients(att: str, h_feat: np.ndarray, sup: Support,
                           weights: SharedWeights, layer: int,
                           heads: int) -> np.ndarray:
    """Per-head coefficient values on the support, shape (heads, nnz).

    ``skip`` and ``gcn`` both yield the normalized adjacency entries (a network
    devoid of attention is the vanilla ACT(A_hat X W) form); the parametric
    types are row-softmax normalized.
    """
    if att in ("skip", "gcn"):
        return np.broadcast_to(sup.a_vals, (heads, len(sup.a_vals)))
    alphas = np.empty((heads, len(sup.row)))
    f_in = h_feat.shape[1]
    base = f"l{layer}.att.{att}"
    for hh in range(heads):
        w1 = weights.tensors.get(f"{base}.w1")
        w2 = weights.tensors.get(f"{base}.w2")
        wa = weights.tensors.get(f"{base}.wa")
        e, _ = attention_scores(
            att, h_feat, sup,
            w1[hh, :f_in] if w1 is not None else None,
            w2[hh, :f_in] if w2 is not None else None,
            float(wa[hh]) if wa is not None else None,
        )
        alphas[hh] = _edge_softmax(sup, e)
    return alphas


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def agg_ignores_alpha(aggregation: str) -> bool:
    """max picks featurewise extremes and the GIN form sums unweighted
    neighbors, so neither consumes attention coefficients."""
    return aggregation in ("max", "mlp")


def _head_blocks(hidden: int, heads: int) -> list[slice]:
    width = -(-hidden // heads)
    return [slice(h * width, min((h + 1) * width, hidden))
            for h in range(heads)]


def _make_agg_out(agg: str, shared_m, alphas, hd, sup: Support):
    """Per-head aggregation output, bound to one layer's tensors."""
    def agg_out(hh: int) -> np.ndarray:
        if shared_m is not None:
            return shared_m
        m = sup.matrix(alphas[hh]) @ hd
        if agg == "mean":
            rs = sup.seg_sum(alphas[hh])
            m = m / rs[:, None]
        return m
    return agg_out


def _aggregate_max(sup: Support, h_feat: np.ndarray):
    """Featurewise max over kept neighbors (incl self); returns value + argmax
    edge index per (node, feature) for the backward scatter."""
    n, f = h_feat.shape
    out = np.empty((n, f))
    arg = np.empty((n, f), dtype=np.int64)
    for r in range(n):
        lo, hi = sup.row_ptr[r], sup.row_ptr[r + 1]
        vals = h_feat[sup.col[lo:hi]]
        am = np.argmax(vals, axis=0)
        out[r] = vals[am, np.arange(f)]
        arg[r] = lo + am
    return out, arg


def forward(subnet: SubnetSpec, weights: SharedWeights, gt: GraphTensors,
            rng: np.random.Generator | None = None, training: bool = False,
            dropout_rate: float = 0.5, need_cache: bool = False):
    """Run the subnetwork; returns row-stochastic class probabilities.

    Evaluation (training=False) disables dropout and uses a fixed sampling
    seed so repeated calls agree exactly.
    """
    if rng is None or not training:
        rng = np.random.default_rng(EVAL_SAMPLING_SEED)
    h = np.asarray(gt.x0, dtype=np.float64)
    n = gt.num_nodes
    caches = []
    num_layers = len(subnet.layers)
    for l, choice in enumerate(subnet.layers):
        is_final = l == num_layers - 1
        out_dim = gt.num_classes if is_final else choice.hidden_dim
        f_in = h.shape[1]
        cache: dict = {"f_in": f_in, "out_dim": out_dim, "choice": choice,
                       "is_final": is_final, "layer": l}

        if training and dropout_rate > 0.0:
            mask = (rng.random(h.shape) >= dropout_rate)
            hd = h * mask / (1.0 - dropout_rate)
            cache["drop_mask"] = mask
        else:
            hd = h
        cache["hd"] = hd

        sup = sample_support(gt, choice.sampling_rate, rng)
        cache["sup"] = sup

        heads = choice.heads
        att = choice.attention
        w = weights.tensors[f"l{l}.comb"]
        w_slice = w[:f_in, :out_dim]

        # attention coefficients per head; max/mlp aggregation ignores them,
        # so parametric scores are skipped there (no rng involved)
        if att in ("skip", "gcn"):
            alphas = [sup.a_vals] * heads
            att_caches = [None] * heads
        elif agg_ignores_alpha(choice.aggregation):
            alphas = [None] * heads
            att_caches = [None] * heads
        else:
            alphas, att_caches = [], []
            base = f"l{l}.att.{att}"
            for hh in range(heads):
                w1 = weights.tensors.get(f"{base}.w1")
                w2 = weights.tensors.get(f"{base}.w2")
                wa = weights.tensors.get(f"{base}.wa")
                e, acache = attention_scores(
                    att, hd, sup,
                    w1[hh, :f_in] if w1 is not None else None,
                    w2[hh, :f_in] if w2 is not None else None,
                    float(wa[hh]) if wa is not None else None,
                )
                alpha = _edge_softmax(sup, e)
                acache["alpha"] = alpha
                alphas.append(alpha)
                att_caches.append(acache)
        cache["alphas"] = alphas
        cache["att_caches"] = att_caches

        agg = choice.aggregation
        shared_m = None  # aggregation output when identical across heads
        if agg == "max":
            shared_m, argmax = _aggregate_max(sup, hd)
            cache["max_arg"] = argmax
        elif agg == "mlp":
            ones = sup.matrix(np.ones(len(sup.row)))
            s_feat = ones @ hd
            eps = float(weights.tensors[f"l{l}.gin_eps"])
            z0 = s_feat + eps * hd
            g1 = weights.tensors[f"l{l}.gin1"][:f_in, :choice.hidden_dim]
            g2 = weights.tensors[f"l{l}.gin2"][:choice.hidden_dim, :f_in]
            z1 = z0 @ g1
            r1 = np.maximum(z1, 0.0)
            shared_m = r1 @ g2
            cache.update(gin_z0=z0, gin_z1=z1, gin_r1=r1)

        agg_out = _make_agg_out(agg, shared_m, alphas, hd, sup)
        cache["agg_out"] = agg_out

        # keep per-head aggregation outputs for backward when they are small;
        # large ones are recomputed from alpha to bound memory
        keep_m = need_cache and heads * n * f_in <= 8_000_000
        m_heads: list | None = [] if keep_m else None

        def _m(hh: int) -> np.ndarray:
            m = agg_out(hh)
            if m_heads is not None:
                m_heads.append(m)
            return m

        if is_final:
            o = np.zeros((n, out_dim))
            for hh in range(heads):
                o += _m(hh) @ w_slice
            o /= heads
        else:
            blocks = _head_blocks(out_dim, heads)
            o = np.zeros((n, out_dim))
            for hh, blk in enumerate(blocks):
                if blk.start >= blk.stop:
                    break
                o[:, blk] = _m(hh) @ w_slice[:, blk]
            cache["blocks"] = blocks
        cache["m_heads"] = m_heads
        cache["pre_act"] = o

        act_fn, _ = ACTIVATIONS[choice.activation]
        h = act_fn(o)
        if is_final:
            cache["act_out"] = h
            h = row_softmax(h)
            cache["probs"] = h
        caches.append(cache)
    return (h, caches) if need_cache else h


# ---------------------------------------------------------------------------
# loss and backward
# ---------------------------------------------------------------------------

def cross_entropy(probs: np.ndarray, labels: np.ndarray,
                  mask: np.ndarray) -> float:
    """Summed negative log likelihood of the true class over ``mask``."""
    if len(mask) == 0:
        raise EmptyMaskError("loss needs a non-empty node mask")
    p = probs[mask, labels[mask]]
    return float(-np.log(np.clip(p, 1e-300, None)).sum())


def backward(subnet: SubnetSpec, weights: SharedWeights, gt: GraphTensors,
             caches: list, mask: np.ndarray,
             dropout_rate: float = 0.5) -> dict[str, np.ndarray]:
    """Gradients of the summed cross entropy w.r.t. every touched slice.

    Returns a dict keyed by tensor name holding gradient arrays shaped like
    the touched slice of that tensor.
    """
    grads: dict[str, np.ndarray] = {}

    def add(name: str, g: np.ndarray) -> None:
        if name in grads:
            grads[name] += g
        else:
            grads[name] = g

    final = caches[-1]
    probs = final["probs"]
    d_out = np.zeros_like(probs)
    d_out[mask] = probs[mask]
    d_out[mask, gt.labels[mask]] -= 1.0

    d_h = d_out  # gradient w.r.t. the layer output flowing backwards
    for cache in reversed(caches):
        l = cache["layer"]
        choice = cache["choice"]
        f_in = cache["f_in"]
        out_dim = cache["out_dim"]
        hd = cache["hd"]
        sup: Support = cache["sup"]
        heads = choice.heads
        n = hd.shape[0]

        if cache["is_final"]:
            # softmax folded into d_out above; account for the activation
            act_x = cache["pre_act"]
            act_y = cache["act_out"]
            _, dact = ACTIVATIONS[choice.activation]
            d_o = d_h * dact(act_x, act_y)
        else:
            act_x = cache["pre_act"]
            _, dact = ACTIVATIONS[choice.activation]
            d_o = d_h * dact(act_x, ACTIVATIONS[choice.activation][0](act_x))

        w = weights.tensors[f"l{l}.comb"][:f_in, :out_dim]
        d_w = np.zeros_like(w)
        d_hd = np.zeros_like(hd)
        agg = choice.aggregation
        alphas = cache["alphas"]
        agg_out = cache["agg_out"]

        # combination backward: per-head gradient of the aggregation output
        att = choice.attention
        need_alpha_grad = att in PARAMETRIC_ATTENTION and agg in ("sum", "mean")
        m_heads = cache.get("m_heads")
        d_m_shared = None
        d_alphas = [None] * heads
        for hh in range(heads):
            if cache["is_final"]:
                d_o_h = d_o / heads
                w_blk = w
                blk = slice(0, out_dim)
            else:
                blk = cache["blocks"][hh]
                if blk.start >= blk.stop:
                    continue
                d_o_h = d_o[:, blk]
                w_blk = w[:, blk]
            m_h = m_heads[hh] if m_heads is not None else agg_out(hh)
            d_w[:, blk] += m_h.T @ d_o_h
            d_m = d_o_h @ w_blk.T
            if agg in ("max", "mlp"):
                d_m_shared = d_m if d_m_shared is None else d_m_shared + d_m
                # heads share one aggregation output; one pass is enough
                if not cache["is_final"]:
                    for blk2 in cache["blocks"][hh + 1:]:
                        if blk2.start < blk2.stop:
                            d_m_shared += d_o[:, blk2] @ w[:, blk2].T
                            d_w[:, blk2] += m_h.T @ d_o[:, blk2]
                    break
                continue
            # sum / mean: route into alpha and hd
            if agg == "mean":
                rs = sup.seg_sum(alphas[hh])
                d_p = d_m / rs[:, None]
                if need_alpha_grad:
                    p_m = m_h * rs[:, None]  # un-normalized alpha @ hd
                    d_r = -(d_m * p_m).sum(axis=1) / (rs * rs)
                    d_alphas[hh] = (_edge_rowdot(d_p, sup.row, sup.col, hd)
                                    + d_r[sup.row])
                d_hd += sup.matrix(alphas[hh]).T @ d_p
            else:  # sum
                if need_alpha_grad:
                    d_alphas[hh] = _edge_rowdot(d_m, sup.row, sup.col, hd)
                d_hd += sup.matrix(alphas[hh]).T @ d_m

        add(f"l{l}.comb", d_w)

        if agg == "max" and d_m_shared is not None:
            arg = cache["max_arg"]
            flat_cols = sup.col[arg]
            np.add.at(d_hd, (flat_cols.ravel(),
                             np.tile(np.arange(f_in), n)),
                      d_m_shared.ravel())
        elif agg == "mlp" and d_m_shared is not None:
            g1 = weights.tensors[f"l{l}.gin1"][:f_in, :choice.hidden_dim]
            g2 = weights.tensors[f"l{l}.gin2"][:choice.hidden_dim, :f_in]
            r1 = cache["gin_r1"]
            z1 = cache["gin_z1"]
            z0 = cache["gin_z0"]
            d_r1 = d_m_shared @ g2.T
            add(f"l{l}.gin2", r1.T @ d_m_shared)
            d_z1 = d_r1 * (z1 > 0)
            add(f"l{l}.gin1", z0.T @ d_z1)
            d_z0 = d_z1 @ g1.T
            eps = float(weights.tensors[f"l{l}.gin_eps"])
            ones = sup.matrix(np.ones(len(sup.row)))
            d_hd += ones.T @ d_z0 + eps * d_z0
            add(f"l{l}.gin_eps", np.asarray((d_z0 * hd).sum()))

        # attention backward per head (parametric types only)
        att = choice.attention
        if att in PARAMETRIC_ATTENTION and agg in ("sum", "mean"):
            base = f"l{l}.att.{att}"
            h_cnt = heads
            w1_t = weights.tensors.get(f"{base}.w1")
            w2_t = weights.tensors.get(f"{base}.w2")
            wa_t = weights.tensors.get(f"{base}.wa")
            d_w1 = np.zeros((h_cnt, f_in))
            d_w2 = np.zeros((h_cnt, f_in))
            d_wa = np.zeros(h_cnt) if wa_t is not None else None
            for hh in range(heads):
                d_alpha = d_alphas[hh]
                if d_alpha is None:
                    continue
                alpha = alphas[hh]
                acache = cache["att_caches"][hh]
                inner = sup.seg_sum(alpha * d_alpha)
                d_e = alpha * (d_alpha - inner[sup.row])
                w1 = w1_t[hh, :f_in] if w1_t is not None else None
                w2 = w2_t[hh, :f_in] if w2_t is not None else None
                if att == "gat":
                    d_s = d_e * dleaky(acache["s"])
                    d_a = np.bincount(sup.row, weights=d_s, minlength=n)
                    d_b = np.bincount(sup.col, weights=d_s, minlength=n)
                    d_w1[hh] += hd.T @ d_a
                    d_w2[hh] += hd.T @ d_b
                    d_hd += np.outer(d_a, w1) + np.outer(d_b, w2)
                elif att == "gat_sym":
                    d1 = d_e * dleaky(acache["s1"])
                    d2 = d_e * dleaky(acache["s2"])
                    d_a = (np.bincount(sup.row, weights=d1, minlength=n)
                           + np.bincount(sup.col, weights=d2, minlength=n))
                    d_b = (np.bincount(sup.col, weights=d1, minlength=n)
                           + np.bincount(sup.row, weights=d2, minlength=n))
                    d_w1[hh] += hd.T @ d_a
                    d_w2[hh] += hd.T @ d_b
                    d_hd += np.outer(d_a, w1) + np.outer(d_b, w2)
                elif att == "cos":
                    for s in range(0, len(sup.row), _EDGE_CHUNK):
                        e_ = slice(s, s + _EDGE_CHUNK)
                        hi = hd[sup.row[e_]]
                        hj = hd[sup.col[e_]]
                        de = d_e[e_][:, None]
                        d_w1[hh] += (de * hi * hj).sum(axis=0)
                        np.add.at(d_hd, sup.row[e_], de * (w1 * hj))
                        np.add.at(d_hd, sup.col[e_], de * (w1 * hi))
                elif att == "linear":
                    t = acache["t"]
                    d_bcol = d_e * (1.0 - t * t)
                    d_b = np.bincount(sup.col, weights=d_bcol, minlength=n)
                    d_w2[hh] += hd.T @ d_b
                    d_hd += np.outer(d_b, w2)
                elif att == "gene_linear":
                    t = acache["t"]
                    wa = float(wa_t[hh])
                    d_wa[hh] += float((d_e * t).sum())
                    d_c = d_e * wa * (1.0 - t * t)
                    d_a = np.bincount(sup.row, weights=d_c, minlength=n)
                    d_b = np.bincount(sup.col, weights=d_c, minlength=n)
                    d_w1[hh] += hd.T @ d_a
                    d_w2[hh] += hd.T @ d_b
                    d_hd += np.outer(d_a, w1) + np.outer(d_b, w2)
            add(f"{base}.w1", d_w1)
            add(f"{base}.w2", d_w2)
            if d_wa is not None:
                add(f"{base}.wa", d_wa)

        if "drop_mask" in cache:
            d_h = d_hd * cache["drop_mask"] / (1.0 - dropout_rate)
        else:
            d_h = d_hd
    return grads
