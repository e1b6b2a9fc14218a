"""Adam, joint bi-view training, the staged multi-view pipeline, and ablation grids."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import cluster
from . import losses as L
from . import networks as nets
from .autodiff import ContractError, Graph
from .data import ConfigurationError, ViewSet, normalize_minmax
from .metrics import MetricsReport, evaluate

logger = logging.getLogger(__name__)

BIVIEW_VARIANTS = ("baseline", "mcmvc-m", "mcmvc-i")
MULTIVIEW_VARIANTS = ("mcmvc-plus", "mcmvc-plus-plus", "mflvc-plus")
VARIANTS = BIVIEW_VARIANTS + MULTIVIEW_VARIANTS


class TrainingDivergedError(RuntimeError):
    """A loss or gradient became non-finite."""


# -- optimiser ----------------------------------------------------------------------------------

@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
              lr: float) -> AdamState:
    """Bias-corrected Adam update of every parameter named in ``grads`` (in place)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient for parameter {name!r} "
                                        f"at step {state.step + 1}")
        if g.shape != params[name].shape:
            raise ContractError(f"gradient shape {g.shape} != parameter {name} {params[name].shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


# -- configuration and history --------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss: L.LossConfig = field(default_factory=L.LossConfig)
    eval_every: int = 10
    n_clusters: Optional[int] = None
    embed_dim: Optional[int] = None      # bi-view default: n_clusters
    feature_dim: int = 32
    hidden: Tuple[int, ...] = (64, 64, 64)
    dual_hidden: Tuple[int, ...] = (64,)
    mv_embed_dim: int = 16
    pretrain_epochs: int = 100
    contrast_epochs: int = 300
    finetune_epochs: int = 50
    kmeans_n_init: int = 10
    normalize: bool = True

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = L.LossConfig(**self.loss)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.dual_hidden = tuple(int(h) for h in self.dual_hidden)
        if self.batch_size < 2:
            raise ContractError("batch size must be at least 2")
        for name in ("epochs", "pretrain_epochs", "contrast_epochs", "finetune_epochs"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be non-negative")
        if self.n_clusters is not None and self.n_clusters < 2:
            raise ContractError("need at least two clusters")
        if self.lr <= 0:
            raise ContractError("learning rate must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["dual_hidden"] = list(self.dual_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainHistory:
    loss_rows: List[dict] = field(default_factory=list)
    metric_rows: List[dict] = field(default_factory=list)
    stages: List[dict] = field(default_factory=list)

    def term_names(self) -> List[str]:
        names: List[str] = []
        for row in self.loss_rows:
            for k in row["terms"]:
                if k not in names:
                    names.append(k)
        return names

    def write_losses(self, path) -> None:
        cols = self.term_names()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "step", *cols, "total"])
            for row in self.loss_rows:
                vals = [_fmt(row["terms"][c]) if c in row["terms"] else "" for c in cols]
                w.writerow([row["epoch"], row["step"], *vals, _fmt(row["total"])])

    def write_metrics(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "acc", "nmi", "ari", "pur"])
            for row in self.metric_rows:
                w.writerow([row["epoch"], *(f"{row[k]:.6f}" for k in ("acc", "nmi", "ari", "pur"))])

    @property
    def last_metrics(self) -> Optional[dict]:
        return self.metric_rows[-1] if self.metric_rows else None


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def minibatches(m: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Shuffled index batches; a trailing batch of one row joins the previous batch."""
    order = rng.permutation(m)
    starts = list(range(0, m, batch_size))
    if len(starts) > 1 and m - starts[-1] < 2:
        starts.pop()
    for i, s in enumerate(starts):
        end = starts[i + 1] if i + 1 < len(starts) else m
        yield order[s:end]


def _run_epoch(model, batches, loss_fn, state, lr, trainable, history, epoch, step0):
    sums: Dict[str, float] = {}
    total = 0.0
    step = step0
    n = 0
    for idx in batches:
        g = Graph(model.params, trainable=trainable)
        bd = loss_fn(idx, g)
        if not np.isfinite(bd.total):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}: {bd.terms}")
        grads = g.backward(bd.loss)
        adam_step(model.params, grads, state, lr)
        for k, v in bd.terms.items():
            sums[k] = sums.get(k, 0.0) + v
        total += bd.total
        step += 1
        n += 1
    if n:
        history.loss_rows.append({"epoch": epoch, "step": step,
                                  "terms": {k: v / n for k, v in sums.items()},
                                  "total": total / n})
    return step


def _adam(cfg: TrainConfig) -> AdamState:
    return AdamState(beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)


def _record_metrics(history, epoch, labels, truth):
    if truth is None:
        return
    r = evaluate(labels, truth)
    history.metric_rows.append({"epoch": epoch, "acc": r.acc, "nmi": r.nmi, "ari": r.ari,
                                "pur": r.pur})


def _resolve_k(vs: ViewSet, cfg: TrainConfig) -> int:
    k = cfg.n_clusters if cfg.n_clusters is not None else vs.n_clusters
    if k is None:
        raise ConfigurationError("n_clusters must be set when the dataset has no labels")
    return int(k)


# -- bi-view ----------------------------------------------------------------------------------------

def variant_loss_config(cfg: L.LossConfig, variant: str) -> L.LossConfig:
    """LossConfig for a named variant (baseline zeroes λ1, λ3, λ4 and uses μ for L_rec)."""
    if variant == "baseline":
        return replace(cfg, lambda1=0.0, lambda3=0.0, lambda4=0.0, lambda2=cfg.mu_base)
    if variant == "mcmvc-m":
        return replace(cfg, instance_variant="mse")
    if variant == "mcmvc-i":
        return replace(cfg, instance_variant="infonce")
    if variant == "mflvc-plus":
        return replace(cfg, mu1=0.0)
    if variant in MULTIVIEW_VARIANTS:
        return cfg
    raise ConfigurationError(f"unknown variant {variant!r}; choose from {VARIANTS}")


def biview_model(dims: Sequence[int], cfg: TrainConfig, k: int, incomplete: bool) -> nets.ModelBundle:
    d = cfg.embed_dim or k
    specs = nets.biview_specs(dims, d, cfg.hidden, predictor=cfg.loss.lambda4 > 0,
                              dual=incomplete, dual_hidden=cfg.dual_hidden)
    return nets.init_model(specs, cfg.seed)


def biview_embeddings(model: nets.ModelBundle, views: Sequence[np.ndarray],
                      available: Optional[np.ndarray] = None) -> List[np.ndarray]:
    """Embeddings of both views; missing ones are filled in with the dual predictors."""
    zs = nets.embed(model, views)
    if available is None or available.all():
        return zs
    for v in range(2):
        other = 1 - v
        missing = ~available[:, v]
        if missing.any():
            zs[v] = zs[v].copy()
            zs[v][missing] = nets.dual_predict(model, other, zs[other][missing]).data
    return zs


def predict_biview(model, views, k, seed, available=None, n_init=10) -> np.ndarray:
    z1, z2 = biview_embeddings(model, views, available)
    return cluster.final_clustering_biview(z1, z2, k, seed=seed, n_init=n_init)


def train_biview(vs: ViewSet, cfg: TrainConfig, variant: str = "mcmvc-m",
                 incomplete: bool = False):
    """Jointly minimise the bi-view composite; returns (model, history, labels)."""
    if vs.n_views != 2:
        raise ConfigurationError("bi-view training needs exactly two views")
    if variant not in BIVIEW_VARIANTS:
        raise ConfigurationError(f"bi-view variant must be one of {BIVIEW_VARIANTS}")
    if incomplete and vs.mask is None:
        raise ConfigurationError("incomplete mode needs a mask")
    if cfg.normalize:
        vs = normalize_minmax(vs)
    k = _resolve_k(vs, cfg)
    cfg = replace(cfg, loss=variant_loss_config(cfg.loss, variant))
    model = biview_model(vs.dims, cfg, k, incomplete)
    available = vs.mask if incomplete else None
    views = vs.views
    history = TrainHistory()
    rng = np.random.default_rng(cfg.seed)
    state = _adam(cfg)

    def loss_fn(idx, g):
        batch = [x[idx] for x in views]
        mask = None if available is None else available[idx]
        return L.loss_composite_biview(batch, model, cfg.loss, g, mask)

    step = 0
    for epoch in range(1, cfg.epochs + 1):
        step = _run_epoch(model, minibatches(vs.n_samples, cfg.batch_size, rng), loss_fn, state,
                          cfg.lr, None, history, epoch, step)
        if vs.labels is not None and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            labels = predict_biview(model, views, k, cfg.seed, available, cfg.kmeans_n_init)
            _record_metrics(history, epoch, labels, vs.labels)
    history.stages.append({"stage": "joint", "first_epoch": 1, "last_epoch": cfg.epochs})
    labels = predict_biview(model, views, k, cfg.seed, available, cfg.kmeans_n_init)
    return model, history, labels


# -- multi-view staged pipeline --------------------------------------------------------------------

@dataclass
class ClusterResult:
    labels: np.ndarray
    q: List[np.ndarray]
    correspondences: List[cluster.Correspondence] = field(default_factory=list)
    kmeans_labels: List[np.ndarray] = field(default_factory=list)


STAGES = ("pretrain", "contrast", "kmeans", "match", "finetune", "fuse")


def multiview_model(dims, cfg: TrainConfig, k: int) -> nets.ModelBundle:
    specs = nets.multiview_specs(dims, cfg.mv_embed_dim, cfg.feature_dim, k, cfg.hidden,
                                 predictor=cfg.loss.mu2 > 0)
    return nets.init_model(specs, cfg.seed)


def soft_assignments(model, views) -> List[np.ndarray]:
    return [nets.cluster_head(model, z).data for z in nets.embed(model, views)]


def contrast_features(model, views) -> List[np.ndarray]:
    return [nets.feature_head(model, z).data for z in nets.embed(model, views)]


def train_mcmvc_plus_plus(vs: ViewSet, cfg: TrainConfig, enhance: bool = True,
                          variant: str = "mcmvc-plus-plus", on_stage=None):
    """Staged training; returns (model, history, ClusterResult).

    Stages: autoencoder pretraining on L_rec + μ1 L_var; contrastive training of
    encoders and heads on L_H + L_Q + μ2 L_mcla; K-means on each view's
    contrast features; Hungarian matching against the cluster-MLP labels;
    fine-tuning of encoders and cluster MLP on the matched one-hot targets;
    fusion of the view-averaged assignments.  ``enhance=False`` skips the
    K-means, matching and fine-tuning stages.  ``on_stage(name, model)`` is
    called after each stage completes.
    """
    if vs.n_views < 2:
        raise ConfigurationError("multi-view training needs at least two views")
    if cfg.normalize:
        vs = normalize_minmax(vs)
    k = _resolve_k(vs, cfg)
    cfg = replace(cfg, loss=variant_loss_config(cfg.loss, variant))
    model = multiview_model(vs.dims, cfg, k)
    views = vs.views
    V = vs.n_views
    history = TrainHistory()
    rng = np.random.default_rng(cfg.seed)
    encoders = model.net_params(*(f"enc{v}" for v in range(V)))
    decoders = model.net_params(*(f"dec{v}" for v in range(V)))
    heads = model.net_params("feat", "clus", "pred")
    epoch = step = 0

    def notify(name):
        if on_stage is not None:
            on_stage(name, model)

    def run_stage(name, n_epochs, trainable, loss_fn):
        nonlocal epoch, step
        state = _adam(cfg)
        first = epoch + 1
        for _ in range(n_epochs):
            epoch += 1
            step = _run_epoch(model, minibatches(vs.n_samples, cfg.batch_size, rng), loss_fn,
                              state, cfg.lr, trainable, history, epoch, step)
            if vs.labels is not None and epoch % cfg.eval_every == 0:
                _record_metrics(history, epoch, cluster.fuse_assignments(
                    soft_assignments(model, views)), vs.labels)
        history.stages.append({"stage": name, "first_epoch": first, "last_epoch": epoch})
        notify(name)

    def batch_of(idx):
        return [x[idx] for x in views]

    run_stage("pretrain", cfg.pretrain_epochs, encoders + decoders,
              lambda idx, g: L.loss_composite_multiview(batch_of(idx), model, cfg.loss, g,
                                                        terms=("rec", "var")))
    run_stage("contrast", cfg.contrast_epochs, encoders + heads,
              lambda idx, g: L.loss_composite_multiview(batch_of(idx), model, cfg.loss, g,
                                                        terms=("H", "Q", "mcla")))
    result = ClusterResult(labels=np.empty(0, dtype=int), q=[])
    if enhance:
        h = contrast_features(model, views)
        km = [cluster.kmeans(hv, k, seed=cfg.seed, n_init=cfg.kmeans_n_init).assignments
              for hv in h]
        result.kmeans_labels = km
        history.stages.append({"stage": "kmeans", "first_epoch": epoch, "last_epoch": epoch})
        notify("kmeans")
        q = soft_assignments(model, views)
        corr = [cluster.match_assignments(qv.argmax(axis=1), kv, k) for qv, kv in zip(q, km)]
        targets = [cluster.enhancement_target(c, kv, k) for c, kv in zip(corr, km)]
        result.correspondences = corr
        history.stages.append({"stage": "match", "first_epoch": epoch, "last_epoch": epoch})
        notify("match")
        clus = model.net_params("clus")

        def finetune_loss(idx, g):
            qs = [nets.cluster_head(model, nets.encode(model, v, views[v][idx], g), g)
                  for v in range(V)]
            part = L.loss_enhance(qs, [t[idx] for t in targets])
            return L._combine({"P": part}, {"P": 1.0})

        run_stage("finetune", cfg.finetune_epochs, encoders + clus, finetune_loss)
    result.q = soft_assignments(model, views)
    result.labels = cluster.fuse_assignments(result.q)
    history.stages.append({"stage": "fuse", "first_epoch": epoch, "last_epoch": epoch})
    notify("fuse")
    _record_metrics(history, epoch, result.labels, vs.labels)
    return model, history, result


# -- ablation --------------------------------------------------------------------------------------

TABLE1_GRID: List[Dict[str, bool]] = [
    {"ins": ins, "var": var, "cla": cla}
    for cla in (False, True) for ins, var in ((False, False), (True, False), (False, True),
                                              (True, True))
]


def apply_activation(loss: L.LossConfig, row: Dict[str, bool]) -> L.LossConfig:
    """Zero the weights of inactive terms; reconstruction stays at the baseline weight μ."""
    unknown = set(row) - {"ins", "var", "cla"}
    if unknown:
        raise ContractError(f"unknown activation flags {sorted(unknown)}")
    return replace(loss, lambda2=loss.mu_base,
                   lambda1=loss.lambda1 if row.get("ins") else 0.0,
                   lambda3=loss.lambda3 if row.get("var") else 0.0,
                   lambda4=loss.lambda4 if row.get("cla") else 0.0)


def mean_report(reports: Sequence[MetricsReport]) -> MetricsReport:
    return MetricsReport(*(float(np.mean([getattr(r, k) for r in reports]))
                           for k in ("acc", "nmi", "ari", "pur")))


def run_trials(vs: ViewSet, cfg: TrainConfig, variant: str, runs: int,
               incomplete: bool = False) -> List[MetricsReport]:
    """Train ``runs`` times with seeds cfg.seed, cfg.seed + 1, ... and score each run."""
    if vs.labels is None:
        raise ConfigurationError("scoring runs needs ground-truth labels")
    out = []
    for r in range(runs):
        c = replace(cfg, seed=cfg.seed + r)
        if variant in BIVIEW_VARIANTS:
            labels = train_biview(vs, c, variant, incomplete)[2]
        else:
            labels = train_mcmvc_plus_plus(vs, c, enhance=variant == "mcmvc-plus-plus",
                                           variant=variant)[2].labels
        out.append(evaluate(labels, vs.labels))
    return out


def run_ablation(vs: ViewSet, cfg: TrainConfig, grid: Sequence[Dict[str, bool]] = TABLE1_GRID,
                 runs: int = 5, incomplete: bool = False) -> List[Tuple[Dict[str, bool], MetricsReport]]:
    """One seeded multi-run average per activation row (instance term per cfg.loss)."""
    if vs.n_views != 2:
        raise ConfigurationError("the ablation grid is defined for bi-view data")
    rows = []
    for row in grid:
        c = replace(cfg, loss=apply_activation(cfg.loss, row))
        reports = run_trials(vs, c, "mcmvc-m" if c.loss.instance_variant == "mse" else "mcmvc-i",
                             runs, incomplete)
        logger.info("ablation row %s: %s", row, mean_report(reports))
        rows.append((dict(row), mean_report(reports)))
    return rows
