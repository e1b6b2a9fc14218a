"""MLP encoders, decoders and heads sharing a single parameter store."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Graph, Tensor

HEADS = ("linear", "softmax", "sigmoid")


class SpecError(ValueError):
    """Network specs are internally inconsistent."""


class ConfigurationError(ValueError):
    """The model lacks a component the caller asked for."""


@dataclass
class MLPSpec:
    widths: List[int]
    head: str = "linear"

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if len(self.widths) < 2 or any(w <= 0 for w in self.widths):
            raise SpecError(f"MLP needs >= 2 positive widths, got {self.widths}")
        if self.head not in HEADS:
            raise SpecError(f"unknown output head {self.head!r}")

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.widths[:-1], self.widths[1:]))


class ParamStore(dict):
    """Ordered name -> float64 array mapping, remembering its init seed."""

    def __init__(self, *args, seed: Optional[int] = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.seed = seed

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.items()}, seed=self.seed)

    def n_params(self, prefix: str = "") -> int:
        return int(sum(v.size for k, v in self.items() if k.startswith(prefix)))

    def names(self, *prefixes: str) -> List[str]:
        return [k for k in self if any(k.startswith(p + ".") for p in prefixes)]


@dataclass
class ModelBundle:
    """All networks of one model.

    Network names: ``enc{v}``, ``dec{v}``, and optionally ``pred`` (view-label
    predictor), ``feat`` (feature MLP), ``clus`` (cluster MLP), ``dual{v}``
    (maps view v's embedding to the other view's).
    """

    specs: Dict[str, MLPSpec]
    params: ParamStore
    seed: int
    n_views: int = field(init=False)

    def __post_init__(self):
        self.n_views = sum(1 for k in self.specs if k.startswith("enc"))
        if self.n_views < 2:
            raise SpecError("a model needs at least two views")

    def has(self, net: str) -> bool:
        return net in self.specs

    @property
    def embed_dim(self) -> int:
        return self.specs["enc0"].n_out

    def net_params(self, *nets: str) -> List[str]:
        return self.params.names(*nets)


def _check_consistency(specs: Dict[str, MLPSpec]) -> None:
    n_views = sum(1 for k in specs if k.startswith("enc"))
    for v in range(n_views):
        enc, dec = specs.get(f"enc{v}"), specs.get(f"dec{v}")
        if enc is None or dec is None:
            raise SpecError(f"view {v} needs both an encoder and a decoder")
        if dec.n_in != enc.n_out:
            raise SpecError(f"view {v}: decoder input {dec.n_in} != embedding width {enc.n_out}")
        if dec.n_out != enc.n_in:
            raise SpecError(f"view {v}: decoder output {dec.n_out} != raw width {enc.n_in}")
    dims = {specs[f"enc{v}"].n_out for v in range(n_views)}
    if len(dims) != 1:
        raise SpecError(f"all encoders must share one embedding width, got {sorted(dims)}")
    (d,) = dims
    for name in ("pred", "feat", "clus"):
        if name in specs and specs[name].n_in != d:
            raise SpecError(f"{name} input width {specs[name].n_in} != embedding width {d}")
    for v in range(n_views):
        spec = specs.get(f"dual{v}")
        if spec is not None and (spec.n_in != d or spec.n_out != d):
            raise SpecError(f"dual{v} must map {d} -> {d}")


def init_model(specs: Dict[str, MLPSpec], seed: int) -> ModelBundle:
    """Xavier-uniform weights and zero biases, drawn in sorted network order."""
    _check_consistency(specs)
    rng = np.random.default_rng(seed)
    params = ParamStore(seed=seed)
    for net in sorted(specs):
        widths = specs[net].widths
        for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            limit = np.sqrt(6.0 / (n_in + n_out))
            params[f"{net}.W{i}"] = rng.uniform(-limit, limit, size=(n_in, n_out))
            params[f"{net}.b{i}"] = np.zeros((1, n_out))
    return ModelBundle(specs=dict(specs), params=params, seed=seed)


def mirror(widths: Sequence[int]) -> List[int]:
    return list(reversed(list(widths)))


def biview_specs(dims: Sequence[int], embed_dim: int, hidden: Sequence[int] = (64, 64, 64),
                 predictor: bool = True, dual: bool = False,
                 dual_hidden: Sequence[int] = (64,)) -> Dict[str, MLPSpec]:
    """Two autoencoders with softmax embeddings (over-cluster probabilities)."""
    if len(dims) != 2:
        raise SpecError("bi-view specs need exactly two view widths")
    specs: Dict[str, MLPSpec] = {}
    for v, e in enumerate(dims):
        enc = [e, *hidden, embed_dim]
        specs[f"enc{v}"] = MLPSpec(enc, "softmax")
        specs[f"dec{v}"] = MLPSpec(mirror(enc), "linear")
        if dual:
            specs[f"dual{v}"] = MLPSpec([embed_dim, *dual_hidden, embed_dim], "linear")
    if predictor:
        specs["pred"] = MLPSpec([embed_dim, 1], "sigmoid")
    return specs


def multiview_specs(dims: Sequence[int], embed_dim: int, feature_dim: int, n_clusters: int,
                    hidden: Sequence[int] = (64, 64), predictor: bool = True) -> Dict[str, MLPSpec]:
    """Per-view linear-output autoencoders plus feature, cluster and view-label heads."""
    specs: Dict[str, MLPSpec] = {}
    for v, e in enumerate(dims):
        enc = [e, *hidden, embed_dim]
        specs[f"enc{v}"] = MLPSpec(enc, "linear")
        specs[f"dec{v}"] = MLPSpec(mirror(enc), "linear")
    specs["feat"] = MLPSpec([embed_dim, feature_dim], "linear")
    specs["clus"] = MLPSpec([embed_dim, n_clusters], "softmax")
    if predictor:
        specs["pred"] = MLPSpec([embed_dim, len(dims)], "softmax")
    return specs


def forward(model: ModelBundle, net: str, x, graph: Optional[Graph] = None) -> Tensor:
    """Evaluate network ``net`` on batch ``x``; relu between layers, spec head on top."""
    spec = model.specs[net]
    g = graph if graph is not None else Graph(model.params, trainable=())
    h = ad.as_tensor(x)
    if h.ndim != 2 or h.shape[1] != spec.n_in:
        raise DimensionError(f"{net}: expected input width {spec.n_in}, got shape {h.shape}")
    n_layers = len(spec.widths) - 1
    for i in range(n_layers):
        h = ad.add(ad.matmul(h, g(f"{net}.W{i}")), g(f"{net}.b{i}"))
        if i < n_layers - 1:
            h = ad.relu(h)
    if spec.head == "softmax":
        h = ad.softmax_rows(h)
    elif spec.head == "sigmoid":
        h = ad.sigmoid(h)
    return h


def _view_net(model: ModelBundle, prefix: str, view: int) -> str:
    if not 0 <= view < model.n_views:
        raise ContractError(f"view index {view} out of range for {model.n_views} views")
    return f"{prefix}{view}"


def encode(model: ModelBundle, view: int, x, graph: Optional[Graph] = None) -> Tensor:
    return forward(model, _view_net(model, "enc", view), x, graph)


def decode(model: ModelBundle, view: int, z, graph: Optional[Graph] = None) -> Tensor:
    return forward(model, _view_net(model, "dec", view), z, graph)


def predict_view_label(model: ModelBundle, z, graph: Optional[Graph] = None) -> Tensor:
    if not model.has("pred"):
        raise ConfigurationError("model has no view-label predictor")
    return forward(model, "pred", z, graph)


def dual_predict(model: ModelBundle, from_view: int, z, graph: Optional[Graph] = None) -> Tensor:
    net = _view_net(model, "dual", from_view)
    if not model.has(net):
        raise ConfigurationError("model has no dual predictors")
    return forward(model, net, z, graph)


def feature_head(model: ModelBundle, z, graph: Optional[Graph] = None) -> Tensor:
    if not model.has("feat"):
        raise ConfigurationError("model has no feature MLP")
    return forward(model, "feat", z, graph)


def cluster_head(model: ModelBundle, z, graph: Optional[Graph] = None) -> Tensor:
    if not model.has("clus"):
        raise ConfigurationError("model has no cluster MLP")
    return forward(model, "clus", z, graph)


def embed(model: ModelBundle, views: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Plain-array embeddings for every view (no gradient tape kept)."""
    return [encode(model, v, x).data for v, x in enumerate(views)]


# -- checkpoints ----------------------------------------------------------------------------

CHECKPOINT_FORMAT = "mvclab-checkpoint/1"


def save_checkpoint(model: ModelBundle, path, extra: Optional[dict] = None) -> None:
    """Write ``model`` as JSON: specs, seed, and each parameter as shape + row-major values."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "seed": model.seed,
        "specs": {k: asdict(v) for k, v in sorted(model.specs.items())},
        "params": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
                   for k, v in model.params.items()},
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> ModelBundle:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise SpecError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    specs = {k: MLPSpec(**v) for k, v in doc["specs"].items()}
    model = init_model(specs, doc["seed"])
    for name, entry in doc["params"].items():
        if name not in model.params:
            raise SpecError(f"{path}: unexpected parameter {name}")
        arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != model.params[name].shape:
            raise SpecError(f"{path}: {name} has shape {arr.shape}, spec says "
                            f"{model.params[name].shape}")
        model.params[name] = arr
    return model


def load_checkpoint_extra(path) -> dict:
    return json.loads(Path(path).read_text()).get("extra", {})
