"""Named training configurations.

The ``desk-*`` presets are small enough for one CPU core.  The dataset-named
presets carry the published hyperparameters for users who supply the real
benchmark matrices; hidden widths there follow the published backbones.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Dict, Tuple

from .losses import LossConfig
from .training import TrainConfig


class UnknownPresetError(KeyError):
    pass


_BIVIEW_WIDTHS = (1024, 1024, 1024)
_MULTIVIEW_WIDTHS = (500, 500, 2000)   # encoder widths; decoders mirror them

# (K, lr, λ1, λ3, epochs) for MCMVC-M / MCMVC-I, complete and incomplete (η = 0.5)
_BIVIEW = {
    "caltech101-20": {"k": 20, "lr": 1e-4,
                      "m": {"complete": (0.2, 0.2, 500), "incomplete": (0.2, 0.2, 1000)},
                      "i": {"complete": (0.1, 0.2, 500), "incomplete": (0.1, 0.3, 1000)}},
    "landuse-21": {"k": 21, "lr": 1e-3,
                   "m": {"complete": (0.5, 0.2, 1000), "incomplete": (1.1, 1.1, 400)},
                   "i": {"complete": (0.1, 1.0, 700), "incomplete": (0.1, 0.7, 700)}},
    "scene-15": {"k": 15, "lr": 1e-3,
                 "m": {"complete": (0.1, 0.3, 400), "incomplete": (0.2, 0.1, 500)},
                 "i": {"complete": (0.1, 0.7, 300), "incomplete": (0.1, 0.5, 500)}},
    "noisy-mnist": {"k": 10, "lr": 1e-3,
                    "m": {"complete": (0.1, 0.3, 650), "incomplete": (0.3, 0.4, 300)},
                    "i": {"complete": (0.1, 1.0, 500), "incomplete": (0.1, 1.0, 200)}},
}

# K, lr, μ1, μ2, τ1, contrast epochs
_MULTIVIEW = {
    "mnist-usps": (10, 3e-4, 0.1, 0.1, 1.0, 50),
    "bdgp": (5, 3e-4, 1e-4, 0.03, 1.0, 50),
    "ccv": (20, 5e-4, 0.001, 0.2, 0.5, 50),
    "fashion": (10, 1e-4, 0.1, 0.4, 0.5, 50),
    "caltech-2v": (7, 3e-4, 0.2, 0.02, 0.5, 70),
    "caltech-3v": (7, 3e-4, 0.01, 0.2, 0.5, 80),
    "caltech-4v": (7, 3e-4, 0.1, 0.4, 0.5, 70),
    "caltech-5v": (7, 3e-4, 0.02, 0.03, 0.5, 50),
}


def _desk() -> Dict[str, TrainConfig]:
    base = TrainConfig()
    return {
        "desk-biview": base,
        "desk-baseline": base,
        "desk-multiview": replace(base, pretrain_epochs=100, contrast_epochs=300,
                                  finetune_epochs=50, hidden=(64, 64)),
        "smoke": replace(base, epochs=5, pretrain_epochs=3, contrast_epochs=3,
                         finetune_epochs=2, eval_every=1, hidden=(16, 16), feature_dim=8,
                         mv_embed_dim=8, kmeans_n_init=2),
    }


def _biview(name: str, family: str, setting: str) -> TrainConfig:
    p = _BIVIEW[name]
    l1, l3, epochs = p[family][setting]
    loss = LossConfig(lambda1=l1, lambda2=0.1, lambda3=l3, lambda4=0.2,
                      instance_variant="mse" if family == "m" else "infonce")
    return TrainConfig(epochs=epochs, batch_size=256, lr=p["lr"], loss=loss, n_clusters=p["k"],
                       embed_dim=128, hidden=_BIVIEW_WIDTHS, dual_hidden=(128, 256, 128))


def _multiview(name: str) -> TrainConfig:
    k, lr, mu1, mu2, tau1, contrast = _MULTIVIEW[name]
    loss = LossConfig(mu1=mu1, mu2=mu2, tau1=tau1, tau2=1.0)
    return TrainConfig(batch_size=256, lr=lr, loss=loss, n_clusters=k, mv_embed_dim=512,
                       feature_dim=128, hidden=_MULTIVIEW_WIDTHS, pretrain_epochs=200,
                       contrast_epochs=contrast, finetune_epochs=50)


def preset_names() -> Tuple[str, ...]:
    names = list(_desk())
    for name in _BIVIEW:
        names += [name, f"{name}-i", f"{name}-incomplete", f"{name}-i-incomplete"]
    names += list(_MULTIVIEW)
    return tuple(names)


def get_preset(name: str) -> TrainConfig:
    """Resolve a preset name.

    Bi-view dataset names take optional ``-i`` (InfoNCE instance term) and
    ``-incomplete`` (η = 0.5 hyperparameters) suffixes.
    """
    desk = _desk()
    if name in desk:
        return desk[name]
    if name in _MULTIVIEW:
        return _multiview(name)
    stem, setting = name, "complete"
    if stem.endswith("-incomplete"):
        stem, setting = stem[: -len("-incomplete")], "incomplete"
    family = "m"
    if stem.endswith("-i"):
        stem, family = stem[:-2], "i"
    if stem in _BIVIEW:
        return _biview(stem, family, setting)
    raise UnknownPresetError(f"unknown preset {name!r}; known: {', '.join(preset_names())}")
