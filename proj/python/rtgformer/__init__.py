"""Return-conditioned transformer with a key/value memory, trained offline on Catch."""

import json

from ._rtgformer import (
    Catch,
    default_config,
    evaluate,
    generate_dataset,
    gradcheck,
    normalized_score,
    returns_to_go,
    train,
)

__all__ = [
    "Catch",
    "config",
    "default_config",
    "evaluate",
    "generate_dataset",
    "gradcheck",
    "normalized_score",
    "returns_to_go",
    "train",
]


def config(**sections):
    """Default run config with the given sections merged in, as JSON text.

    config(model={"d_model": 32}, train={"steps": 100})
    """
    cfg = json.loads(default_config())
    for name, values in sections.items():
        if name not in cfg:
            raise KeyError(f"unknown config section {name!r}")
        cfg[name].update(values)
    return json.dumps(cfg)
