"""Python access to the geco core library.

Configs cross the boundary as JSON text; the helpers below take and return dicts.
"""

import json

from . import _geco
from ._geco import (
    ConfigError,
    MetricError,
    MissingTemplate,
    auc_metric,
    bpr_loss,
    derive_seed,
    discriminator_loss,
    generator_loss,
    info_nce_loss,
    manifest_summary,
    mrr_metric,
    random_score,
    reg_loss,
    sha256_hex,
)

__all__ = [
    "ConfigError",
    "MetricError",
    "MissingTemplate",
    "auc_metric",
    "bpr_loss",
    "config",
    "config_hash",
    "derive_seed",
    "discriminator_loss",
    "evaluate",
    "generator_loss",
    "info_nce_loss",
    "manifest_summary",
    "mrr_metric",
    "random_score",
    "reg_loss",
    "sha256_hex",
    "synth_data",
]


def _merge(base, patch):
    for key, value in patch.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def config(preset=None, **sections):
    """Defaults, then an optional preset, then keyword sections (e.g. geco={"train": {"epochs": 3}})."""
    doc = json.loads(_geco.default_config())
    if preset:
        _merge(doc, json.loads(_geco.preset(preset)))
    _merge(doc, sections)
    return json.loads(_geco.resolve_config(json.dumps(doc)))


def config_hash(cfg):
    return _geco.config_hash(json.dumps(cfg))


def synth_data(cfg, out):
    manifest, digest = _geco.synth_data(json.dumps(cfg), str(out))
    return str(manifest), digest


def evaluate(cfg, manifest, out, kind="random", checkpoint="", templates=""):
    return _geco.evaluate(json.dumps(cfg), str(manifest), kind, str(checkpoint), str(templates), str(out))
