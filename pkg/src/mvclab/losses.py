"""Facet losses and the composite objectives built from them.

All functions take and return :class:`~mvclab.autodiff.Tensor` objects so the
result can be differentiated.  Sums run over samples (not means) unless a
docstring says otherwise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import networks as nets
from .autodiff import FLOOR, ContractError, DimensionError, DomainError, Graph, Tensor

INSTANCE_VARIANTS = ("mse", "infonce")


class DegenerateBatchError(ValueError):
    """Batch too small for a statistic (e.g. variance of one row)."""


@dataclass
class LossConfig:
    lambda1: float = 0.1    # instance contrast
    lambda2: float = 0.1    # reconstruction
    lambda3: float = 0.2    # variance
    lambda4: float = 0.2    # view-label prediction
    mu1: float = 0.1        # multi-view variance
    mu2: float = 0.1        # multi-view view-label prediction
    mu_base: float = 0.1    # reconstruction weight of the baseline objective
    alpha: float = 9.0
    gamma: float = 1.0
    eps: float = 1e-4
    tau: float = 0.5
    tau1: float = 0.5
    tau2: float = 1.0
    instance_variant: str = "mse"
    info_within_view: bool = False
    pre_weight: float = 0.2

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4", "mu1", "mu2", "mu_base",
                     "alpha", "pre_weight", "eps"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be non-negative")
        for name in ("tau", "tau1", "tau2"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.instance_variant not in INSTANCE_VARIANTS:
            raise ContractError(f"instance_variant must be one of {INSTANCE_VARIANTS}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossBreakdown:
    """Per-term values, their weights, and the weighted total.

    ``loss`` is the differentiable total; it is ``None`` once detached.
    """

    terms: Dict[str, float]
    weights: Dict[str, float]
    total: float
    loss: Optional[Tensor] = field(default=None, repr=False, compare=False)

    def resummed(self) -> float:
        return float(sum(self.weights[k] * v for k, v in self.terms.items()))

    def row(self, columns: Sequence[str]) -> List[float]:
        return [self.terms.get(c, float("nan")) for c in columns] + [self.total]


def _combine(parts: Dict[str, Tensor], weights: Dict[str, float]) -> LossBreakdown:
    total = None
    for name, value in parts.items():
        term = ad.scale(value, weights[name])
        total = term if total is None else ad.add(total, term)
    terms = {k: float(v.data) for k, v in parts.items()}
    return LossBreakdown(terms=terms, weights=dict(weights), total=float(total.data), loss=total)


def _check_rows_normalized(p: Tensor, what: str, tol: float = 1e-6) -> None:
    if np.any(np.abs(p.data.sum(axis=1) - 1.0) > tol):
        raise ContractError(f"{what}: rows must be probability vectors")


def _check_nonzero_rows(a: Tensor, what: str) -> None:
    if np.any(np.linalg.norm(a.data, axis=1) < FLOOR):
        raise DomainError(f"{what}: zero-norm row")


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ")


def safe_log(p) -> Tensor:
    return ad.log(ad.clamp_min(p, FLOOR))


# -- feature facet --------------------------------------------------------------------------

def loss_rec(xs: Sequence, x_hats: Sequence) -> Tensor:
    """Σ_v Σ_t ||x_t^v - x̂_t^v||²."""
    if len(xs) != len(x_hats):
        raise DimensionError("need one reconstruction per view")
    total = None
    for x, xh in zip(xs, x_hats):
        x, xh = ad.as_tensor(x), ad.as_tensor(xh)
        _same_shape(x, xh, "loss_rec")
        term = ad.sq_norm(ad.sub(x, xh))
        total = term if total is None else ad.add(total, term)
    return total


def loss_var(zs: Sequence, gamma: float = 1.0, eps: float = 1e-4) -> Tensor:
    """Hinge on the regularised std of each embedding dimension, summed over views.

    std is ``sqrt(Var(b) + eps)`` with the population variance.
    """
    total = None
    for z in zs:
        z = ad.as_tensor(z)
        if z.shape[0] < 2:
            raise DegenerateBatchError("variance loss needs at least two rows")
        std = ad.sqrt(ad.add(ad.var(z, axis=0), eps))
        term = ad.sum(ad.max_with_zero(ad.sub(gamma, std)))
        total = term if total is None else ad.add(total, term)
    return total


# -- view-label facet ----------------------------------------------------------------------

def loss_cla(zs: Sequence, predictor: Callable[[Tensor], Tensor]) -> Tensor:
    """Binary cross-entropy of the view identity; the predictor outputs P(view 0 | z)."""
    if len(zs) != 2:
        raise ContractError("loss_cla is defined for two views; use loss_mcla otherwise")
    total = None
    for v, z in enumerate(zs):
        p = predictor(ad.as_tensor(z))
        if p.ndim != 2 or p.shape[1] != 1:
            raise DimensionError(f"binary predictor must output one column, got {p.shape}")
        # view 0 has target 1, view 1 has target 0
        term = safe_log(p) if v == 0 else safe_log(ad.sub(1.0, p))
        term = ad.scale(ad.sum(term), -1.0)
        total = term if total is None else ad.add(total, term)
    return total


def loss_mcla(zs: Sequence, predictor: Callable[[Tensor], Tensor]) -> Tensor:
    """Multi-class cross-entropy Σ_v Σ_t -log p(view = v | z_t^v)."""
    total = None
    for v, z in enumerate(zs):
        p = predictor(ad.as_tensor(z))
        if p.ndim != 2 or p.shape[1] != len(zs):
            raise DimensionError(f"predictor must output {len(zs)} columns, got {p.shape}")
        term = ad.scale(ad.sum(safe_log(ad.take(p, (slice(None), slice(v, v + 1))))), -1.0)
        total = term if total is None else ad.add(total, term)
    return total


# -- contrast facet ----------------------------------------------------------------------------

def joint_distribution(z1: Tensor, z2: Tensor) -> Tensor:
    """Symmetrised batch joint over over-clusters, (z1ᵀ z2 / m + transpose) / 2."""
    m = z1.shape[0]
    p = ad.scale(ad.matmul(ad.transpose(z1), z2), 1.0 / m)
    return ad.scale(ad.add(p, ad.transpose(p)), 0.5)


def clu_terms(z1, z2, alpha: float = 9.0):
    """Return (loss, mutual information, H(row marginal), H(column marginal)) as Tensors."""
    z1, z2 = ad.as_tensor(z1), ad.as_tensor(z2)
    _same_shape(z1, z2, "loss_clu")
    _check_rows_normalized(z1, "loss_clu z1")
    _check_rows_normalized(z2, "loss_clu z2")
    p = joint_distribution(z1, z2)
    pi = ad.clamp_min(ad.sum(p, axis=1, keepdims=True))
    pj = ad.clamp_min(ad.sum(p, axis=0, keepdims=True))
    pc = ad.clamp_min(p)
    log_pi, log_pj = ad.log(pi), ad.log(pj)
    mi = ad.sum(ad.mul(pc, ad.sub(ad.sub(ad.log(pc), log_pi), log_pj)))
    h1 = ad.scale(ad.sum(ad.mul(pi, log_pi)), -1.0)
    h2 = ad.scale(ad.sum(ad.mul(pj, log_pj)), -1.0)
    loss = ad.scale(ad.add(mi, ad.scale(ad.add(h1, h2), alpha)), -1.0)
    return loss, mi, h1, h2


def loss_clu(z1, z2, alpha: float = 9.0) -> Tensor:
    """-(I(z1, z2) + alpha (H(z1) + H(z2))) from the batch joint over over-clusters."""
    return clu_terms(z1, z2, alpha)[0]


def loss_mse(z1, z2) -> Tensor:
    """Σ_t ||z_t^1 - z_t^2||²."""
    z1, z2 = ad.as_tensor(z1), ad.as_tensor(z2)
    _same_shape(z1, z2, "loss_mse")
    return ad.sq_norm(ad.sub(z1, z2))


def _offdiag_index(m: int):
    rows, cols = np.nonzero(~np.eye(m, dtype=bool))
    return rows, cols


def loss_info(z1, z2, tau: float = 0.5, within_view: bool = False) -> Tensor:
    """InfoNCE with a batch-wide denominator over negative pairs i != j.

    Only cross-view pairs are negatives by default; ``within_view`` also adds
    same-view pairs (i, j), i != j, of both views.
    """
    z1, z2 = ad.as_tensor(z1), ad.as_tensor(z2)
    _same_shape(z1, z2, "loss_info")
    m = z1.shape[0]
    if m < 2:
        raise DegenerateBatchError("InfoNCE needs at least two rows")
    _check_nonzero_rows(z1, "loss_info z1")
    _check_nonzero_rows(z2, "loss_info z2")
    s12 = ad.scale(ad.cosine_similarity(z1, z2), 1.0 / tau)
    idx = _offdiag_index(m)
    negatives = [ad.take(s12, idx)]
    if within_view:
        negatives.append(ad.take(ad.scale(ad.cosine_similarity(z1, z1), 1.0 / tau), idx))
        negatives.append(ad.take(ad.scale(ad.cosine_similarity(z2, z2), 1.0 / tau), idx))
    row = ad.concat([ad.reshape(n, (1, -1)) for n in negatives], axis=1)
    log_denom = ad.sum(ad.logsumexp_rows(row))
    positives = ad.sum(ad.take(s12, (np.arange(m), np.arange(m))))
    return ad.sub(ad.scale(log_denom, float(m)), positives)


def ntxent_pair(a, b, tau: float) -> Tensor:
    """-(1/m) Σ_t log softmax of (a_t, b_t) against every row of a and b except a_t itself."""
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    _same_shape(a, b, "ntxent")
    m = a.shape[0]
    sab = ad.scale(ad.cosine_similarity(a, b), 1.0 / tau)
    diag = (np.arange(m), np.arange(m))
    if m == 1:
        # only the positive survives in the denominator
        return ad.scale(ad.sum(sab), 0.0)
    saa = ad.scale(ad.cosine_similarity(a, a), 1.0 / tau)
    rows, cols = _offdiag_index(m)
    saa_off = ad.take(saa, (rows.reshape(m, m - 1), cols.reshape(m, m - 1)))
    logits = ad.concat([sab, saa_off], axis=1)
    per_row = ad.sub(ad.take(sab, diag), ad.take(ad.logsumexp_rows(logits), (slice(None), 0)))
    return ad.scale(ad.sum(per_row), -1.0 / m)


def loss_ntxent_instance(hs: Sequence, tau1: float = 0.5) -> Tensor:
    """½ Σ_{i != j} l_ic^(ij) over ordered view pairs."""
    hs = [ad.as_tensor(h) for h in hs]
    if len(hs) < 2:
        raise ContractError("instance contrast needs at least two views")
    for v, h in enumerate(hs):
        _check_nonzero_rows(h, f"loss_ntxent_instance view {v}")
    total = None
    for i in range(len(hs)):
        for j in range(len(hs)):
            if i != j:
                term = ntxent_pair(hs[i], hs[j], tau1)
                total = term if total is None else ad.add(total, term)
    return ad.scale(total, 0.5)


def loss_cluster_contrast(qs: Sequence, tau2: float = 1.0) -> Tensor:
    """½ Σ_{i != j} l_cc^(ij) over assignment columns plus Σ_v Σ_k u_k log u_k."""
    qs = [ad.as_tensor(q) for q in qs]
    if len(qs) < 2:
        raise ContractError("cluster contrast needs at least two views")
    for v, q in enumerate(qs):
        _check_rows_normalized(q, f"loss_cluster_contrast view {v}")
    cols = [ad.transpose(q) for q in qs]
    total = None
    for i in range(len(qs)):
        for j in range(len(qs)):
            if i != j:
                term = ntxent_pair(cols[i], cols[j], tau2)
                total = term if total is None else ad.add(total, term)
    total = ad.scale(total, 0.5)
    for q in qs:
        u = ad.mean(q, axis=0)
        total = ad.add(total, ad.sum(ad.mul(u, safe_log(u))))
    return total


def loss_pre(z1, z2, g1: Callable[[Tensor], Tensor], g2: Callable[[Tensor], Tensor]) -> Tensor:
    """||G1(z1) - z2||² + ||G2(z2) - z1||² summed over rows."""
    z1, z2 = ad.as_tensor(z1), ad.as_tensor(z2)
    _same_shape(z1, z2, "loss_pre")
    return ad.add(ad.sq_norm(ad.sub(g1(z1), z2)), ad.sq_norm(ad.sub(g2(z2), z1)))


def loss_enhance(qs: Sequence, targets: Sequence[np.ndarray]) -> Tensor:
    """Cross-entropy -Σ_v Σ_t Σ_k P̂_tk log q_tk against one-hot targets."""
    total = None
    for q, target in zip(qs, targets):
        q = ad.as_tensor(q)
        if q.shape != np.shape(target):
            raise DimensionError(f"target shape {np.shape(target)} != assignments {q.shape}")
        term = ad.scale(ad.sum(ad.mul(safe_log(q), np.asarray(target, dtype=np.float64))), -1.0)
        total = term if total is None else ad.add(total, term)
    return total


# -- composites ----------------------------------------------------------------------------------

BIVIEW_TERMS = ("clu", "ins", "rec", "var", "cla", "pre")
MULTIVIEW_TERMS = ("rec", "var", "Q", "H", "mcla")


def biview_weights(cfg: LossConfig, incomplete: bool = False) -> Dict[str, float]:
    w = {"clu": 1.0, "ins": cfg.lambda1, "rec": cfg.lambda2, "var": cfg.lambda3, "cla": cfg.lambda4}
    if incomplete:
        w["pre"] = cfg.pre_weight
    return w


def loss_composite_biview(batch: Sequence[np.ndarray], model: nets.ModelBundle, cfg: LossConfig,
                          graph: Optional[Graph] = None,
                          available: Optional[np.ndarray] = None) -> LossBreakdown:
    """L_clu + λ1 L_ins + λ2 L_rec + λ3 L_var + λ4 L_cla (+ pre_weight L_pre when masked).

    ``available`` is an m×2 boolean mask; when given, reconstruction uses every
    present view and the remaining terms use only rows with both views.
    Terms with zero weight are not evaluated.
    """
    g = graph if graph is not None else Graph(model.params)
    incomplete = available is not None
    weights = {k: w for k, w in biview_weights(cfg, incomplete).items() if w > 0 or k == "clu"}
    m = batch[0].shape[0]
    avail = np.ones((m, 2), dtype=bool) if available is None else np.asarray(available, dtype=bool)
    complete = avail.all(axis=1)

    zs_avail, x_hats, xs_avail = [], [], []
    for v in range(2):
        rows = np.nonzero(avail[:, v])[0]
        z = nets.encode(model, v, batch[v][rows], g)
        zs_avail.append((rows, z))
        if "rec" in weights:
            xs_avail.append(batch[v][rows])
            x_hats.append(nets.decode(model, v, z, g))

    parts: Dict[str, Tensor] = {}
    if "rec" in weights:
        parts["rec"] = loss_rec(xs_avail, x_hats)

    zc = []
    for rows, z in zs_avail:
        if complete.all():
            zc.append(z)
        else:
            pos = np.searchsorted(rows, np.nonzero(complete)[0])
            zc.append(ad.take(z, pos))
    n_complete = int(complete.sum())
    if n_complete >= 2:
        parts["clu"] = loss_clu(zc[0], zc[1], cfg.alpha)
        if "ins" in weights:
            if cfg.instance_variant == "mse":
                parts["ins"] = loss_mse(zc[0], zc[1])
            else:
                parts["ins"] = loss_info(zc[0], zc[1], cfg.tau, cfg.info_within_view)
        if "var" in weights:
            parts["var"] = loss_var(zc, cfg.gamma, cfg.eps)
        if "cla" in weights:
            parts["cla"] = loss_cla(zc, lambda z: nets.predict_view_label(model, z, g))
        if "pre" in weights:
            parts["pre"] = loss_pre(zc[0], zc[1],
                                    lambda z: nets.dual_predict(model, 0, z, g),
                                    lambda z: nets.dual_predict(model, 1, z, g))
    if not parts:
        raise DegenerateBatchError("batch has nothing to optimise")
    parts = {k: parts[k] for k in BIVIEW_TERMS if k in parts}
    return _combine(parts, {k: weights[k] for k in parts})


def multiview_weights(cfg: LossConfig) -> Dict[str, float]:
    return {"rec": 1.0, "var": cfg.mu1, "Q": 1.0, "H": 1.0, "mcla": cfg.mu2}


def loss_composite_multiview(batch: Sequence[np.ndarray], model: nets.ModelBundle,
                             cfg: LossConfig, graph: Optional[Graph] = None,
                             terms: Optional[Sequence[str]] = None) -> LossBreakdown:
    """L_rec + μ1 L_var + L_Q + L_H + μ2 L_mcla, optionally restricted to ``terms``.

    Zero-weighted terms are skipped.
    """
    g = graph if graph is not None else Graph(model.params)
    weights = multiview_weights(cfg)
    wanted = MULTIVIEW_TERMS if terms is None else tuple(terms)
    active = [t for t in wanted if weights[t] > 0]
    zs = [nets.encode(model, v, x, g) for v, x in enumerate(batch)]
    parts: Dict[str, Tensor] = {}
    if "rec" in active:
        parts["rec"] = loss_rec(batch, [nets.decode(model, v, z, g) for v, z in enumerate(zs)])
    if "var" in active:
        parts["var"] = loss_var(zs, cfg.gamma, cfg.eps)
    if "Q" in active:
        parts["Q"] = loss_cluster_contrast([nets.cluster_head(model, z, g) for z in zs], cfg.tau2)
    if "H" in active:
        parts["H"] = loss_ntxent_instance([nets.feature_head(model, z, g) for z in zs], cfg.tau1)
    if "mcla" in active:
        parts["mcla"] = loss_mcla(zs, lambda z: nets.predict_view_label(model, z, g))
    if not parts:
        raise ContractError("no active terms")
    return _combine(parts, {k: weights[k] for k in parts})
