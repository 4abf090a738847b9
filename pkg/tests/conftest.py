"""Shared fixtures: a miniaturized run configuration for fast module tests."""

import numpy as np
import pytest

from seasonmim.config import config_from_dict, desk_preset


def tiny_config(**overrides):
    """Desk preset shrunk to seconds-scale geometry for unit tests."""
    d = desk_preset(seed=overrides.pop("seed", 0)).to_dict()
    d["geometry"].update({"h_full": 16, "w_full": 16, "crop_h": 8, "crop_w": 8,
                          "patch": 4, "t_seasons": 2, "num_scenes": 8})
    d["model"].update({"embed_dim": 8, "depth": 1, "heads": 2,
                       "decoder_depth": 1, "decoder_dim": 8, "decoder_heads": 2})
    d["tm"]["heads"] = 2
    d["stage1"].update({"epochs": 1, "batch_size": 4})
    d["stage2"].update({"epochs": 1, "batch_size": 4})
    for key, value in overrides.items():
        node = d
        *parents, leaf = key.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    return config_from_dict(d)


@pytest.fixture
def tiny_cfg():
    return tiny_config()
