"""Distance family between two embedding bags (n rows x H features):
moment matching at orders 1..3 with group/sampled variants, Gaussian-kernel
MMD (plain and on sampled monomial features), and the covariance-matching
CORAL / Jeff / Stein forms.  All distances are scalar Tensors and
differentiable wrt both bags."""

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import diffengine as de

DENSE_GUARD = 10 ** 7

KINDS = ("kMMD_p1", "HoMM_p1", "HoMM_p2", "HoMM_p3", "kHoMM_p2", "kHoMM_p3",
         "CORAL", "JeffCORAL", "SteinCORAL")


@dataclass
class DmlLossSpec:
    kind: str
    variant: str = "full"   # full | group | sampled
    n_g: int = 1
    T: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError("unknown DML loss kind %r" % self.kind)
        if self.variant not in ("full", "group", "sampled"):
            raise ValueError("unknown variant %r" % self.variant)
        if self.variant == "sampled" and self.T < 1:
            raise ValueError("sampled variant requires T >= 1")
        if self.variant == "group" and self.n_g < 1:
            raise ValueError("group variant requires n_g >= 1")


def _bags(src, tgt, min_rows=1):
    src, tgt = de.as_tensor(src), de.as_tensor(tgt)
    if src.data.ndim != 2 or tgt.data.ndim != 2:
        raise ValueError("embedding bags must be 2-D (rows x features)")
    if src.data.shape[1] != tgt.data.shape[1]:
        raise ValueError("feature dimension mismatch: %d vs %d"
                         % (src.data.shape[1], tgt.data.shape[1]))
    if src.data.shape[0] < min_rows or tgt.data.shape[0] < min_rows:
        raise ValueError("bags need at least %d rows for this loss" % min_rows)
    return src, tgt


def homm(src, tgt, p):
    """(1/H^p) || mean src^(x)p - mean tgt^(x)p ||_F^2."""
    src, tgt = _bags(src, tgt)
    H = src.data.shape[1]
    if H ** p > DENSE_GUARD:
        raise ValueError("H^p = %d exceeds the dense guard; use homm_sampled" % H ** p)
    diff = de.sub(de.outer_power_mean(src, p), de.outer_power_mean(tgt, p))
    return de.mul(de.tsum(de.square(diff)), 1.0 / H ** p)


def homm_grouped(src, tgt, p, n_g):
    """Mean of homm over n_g contiguous neuron groups of floor(H/n_g) each."""
    src, tgt = _bags(src, tgt)
    H = src.data.shape[1]
    if n_g > H:
        raise ValueError("n_g = %d exceeds feature count H = %d" % (n_g, H))
    w = H // n_g
    parts = []
    for gi in range(n_g):
        s = de.narrow(src, 1, gi * w, w)
        t = de.narrow(tgt, 1, gi * w, w)
        parts.append(homm(s, t, p))
    acc = parts[0]
    for part in parts[1:]:
        acc = de.add(acc, part)
    return de.mul(acc, 1.0 / n_g)


def sample_tuples(H, p, T, seed):
    """The fixed index tuples shared by both sides of a sampled loss."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, H, size=(T, p))


def homm_sampled(src, tgt, p, T, seed):
    """Align T randomly sampled entries of the order-p moment tensors."""
    src, tgt = _bags(src, tgt)
    idx = sample_tuples(src.data.shape[1], p, T, seed)
    ms = de.tmean(de.monomial_features(src, idx), axis=0)
    mt = de.tmean(de.monomial_features(tgt, idx), axis=0)
    return de.tmean(de.square(de.sub(ms, mt)))


def _sq_dists(x, y):
    sx = de.reshape(de.tsum(de.square(x), axis=1), (-1, 1))
    sy = de.reshape(de.tsum(de.square(y), axis=1), (1, -1))
    d = de.sub(de.add(sx, sy), de.mul(de.matmul(x, de.transpose(y)), 2.0))
    return de.relu(d)  # clip the tiny negatives from cancellation


def _median_bandwidth(x, y):
    """Median pairwise Euclidean distance over the pooled rows, as a Tensor.

    The median is differentiable through the selected pair distance(s);
    degenerate pools fall back to a constant 1e-8.
    """
    z = de.concat([x, y], axis=0)
    n = z.data.shape[0]
    if n < 2:
        return de.as_tensor(1e-8)
    d2 = _sq_dists(z, z)
    iu, ju = np.triu_indices(n, k=1)
    flat = iu * n + ju
    vals = np.sqrt(d2.data.reshape(-1)[flat])
    if float(np.median(vals)) < 1e-8:
        return de.as_tensor(1e-8)
    order = np.argsort(vals, kind="stable")
    m = len(order)
    if m % 2 == 1:
        sel = flat[order[m // 2:m // 2 + 1]]
    else:
        sel = flat[order[m // 2 - 1:m // 2 + 1]]
    return de.tmean(de.sqrt(de.take_flat(d2, sel)))


def _rbf_mean(x, y, sigma_sq):
    k = de.exp(de.div(de.mul(_sq_dists(x, y), -1.0), sigma_sq))
    return de.tmean(k)


def kmmd(src, tgt):
    """Biased Gaussian-RBF MMD^2 with the median-heuristic bandwidth."""
    src, tgt = _bags(src, tgt)
    sigma = _median_bandwidth(src, tgt)
    sigma_sq = de.square(sigma)
    return de.sub(de.add(_rbf_mean(src, src, sigma_sq), _rbf_mean(tgt, tgt, sigma_sq)),
                  de.mul(_rbf_mean(src, tgt, sigma_sq), 2.0))


def khomm(src, tgt, p, T, seed):
    """kmmd applied to the T sampled order-p monomial features of each row."""
    src, tgt = _bags(src, tgt)
    idx = sample_tuples(src.data.shape[1], p, T, seed)
    return kmmd(de.monomial_features(src, idx), de.monomial_features(tgt, idx))


def _covariance(x):
    n = x.data.shape[0]
    xc = de.mean_center(x, axis=0)
    return de.mul(de.matmul(de.transpose(xc), xc), 1.0 / n)


def _regularized(c):
    H = c.data.shape[0]
    diag = np.arange(H) * (H + 1)
    eps = de.add(de.mul(de.tsum(de.take_flat(c, diag)), 1e-6 / H), 1e-12)
    return de.add(c, de.mul(eps, np.eye(H)))


def coral(src, tgt):
    """(1/(4H^2)) || C_s - C_t ||_F^2 over row covariances."""
    src, tgt = _bags(src, tgt, min_rows=2)
    H = src.data.shape[1]
    diff = de.sub(_covariance(src), _covariance(tgt))
    return de.mul(de.tsum(de.square(diff)), 1.0 / (4.0 * H * H))


def _trace_prod(a, b_inv):
    # trace(A @ B) for symmetric factors = sum(A * B)
    return de.tsum(de.mul(a, b_inv))


def jeff_coral(src, tgt):
    """Jeffreys-style covariance divergence: tr(Cs Ct^-1) + tr(Ct Cs^-1) - 2H."""
    src, tgt = _bags(src, tgt, min_rows=2)
    H = src.data.shape[1]
    cs = _regularized(_covariance(src))
    ct = _regularized(_covariance(tgt))
    val = de.add(_trace_prod(cs, de.matinv(ct)), _trace_prod(ct, de.matinv(cs)))
    return de.sub(val, 2.0 * H)


def stein_coral(src, tgt):
    """Stein (log-det) covariance divergence between the two bags."""
    src, tgt = _bags(src, tgt, min_rows=2)
    cs, ct = _covariance(src), _covariance(tgt)
    avg = de.mul(de.add(cs, ct), 0.5)
    return de.sub(de.logdet(_regularized(avg)),
                  de.mul(de.add(de.logdet(_regularized(cs)),
                                de.logdet(_regularized(ct))), 0.5))


_BETA_CACHE = {}


def beta_lookup(kind, c, table_path=None):
    """Margin scale for a loss kind at fusion point c (shipped table or override)."""
    if not 1 <= c <= 5:
        raise ValueError("fusion point c must be 1..5, got %r" % (c,))
    key = table_path or "__builtin__"
    if key not in _BETA_CACHE:
        if table_path is None:
            text = resources.files("seqda").joinpath("beta_table.json").read_text()
        else:
            with open(table_path, "r", encoding="utf-8") as fh:
                text = fh.read()
        _BETA_CACHE[key] = json.loads(text)["betas"]
    betas = _BETA_CACHE[key]
    if kind not in betas:
        raise ValueError("no beta entry for loss kind %r" % kind)
    return float(betas[kind][c - 1])


def dml_distance(spec, a, b):
    """Dispatch a DmlLossSpec to the matching distance; returns a scalar Tensor."""
    kind = spec.kind
    if kind == "kMMD_p1":
        return kmmd(a, b)
    if kind in ("HoMM_p1", "HoMM_p2", "HoMM_p3"):
        p = int(kind[-1])
        if spec.variant == "group":
            return homm_grouped(a, b, p, spec.n_g)
        if spec.variant == "sampled":
            return homm_sampled(a, b, p, spec.T, spec.seed)
        return homm(a, b, p)
    if kind in ("kHoMM_p2", "kHoMM_p3"):
        return khomm(a, b, int(kind[-1]), spec.T, spec.seed)
    if kind == "CORAL":
        return coral(a, b)
    if kind == "JeffCORAL":
        return jeff_coral(a, b)
    if kind == "SteinCORAL":
        return stein_coral(a, b)
    raise ValueError("unknown DML loss kind %r" % kind)
