# Copyright 2026 The npbir Authors
# SPDX-License-Identifier: Apache-2.0
"""Python interface to the npbir reconstruction pipeline.

Images are float64 numpy arrays of shape (H, W, C). Stage functions take an
optional ``config`` dict that is merged onto :func:`default_config`.
"""

import json as _json

from . import _npbir
from ._npbir import (  # noqa: F401
    ArgumentError,
    Assets,
    Camera,
    LoadError,
    albedo_alignment,
    alpha_from_sdf,
    composite,
    envmap_from_sg,
    mse,
    path_trace,
    psnr,
    sg_eval,
    ssim,
)

__all__ = [
    "ArgumentError", "Assets", "Camera", "LoadError", "albedo_alignment", "alpha_from_sdf", "composite",
    "config_hash", "default_config", "distill", "envmap_from_sg", "evaluate", "make_toy", "mse", "path_trace",
    "pbir", "psnr", "read_manifest_hash", "read_pfm", "render", "sg_eval", "ssim", "surface", "write_pfm",
]


def _dump(config):
    return "" if config is None else _json.dumps(config)


def read_pfm(path):
    return _npbir.read_pfm(str(path))


def write_pfm(path, image):
    _npbir.write_pfm(str(path), image)


def read_manifest_hash(directory):
    """Hash recorded in ``<directory>/manifest.json``."""
    return _npbir.read_manifest_hash(str(directory))


def default_config():
    """Every config key with its default value."""
    return _json.loads(_npbir.default_config())


def config_hash(config):
    return _npbir.config_hash(_json.dumps(config))


def make_toy(shape, out, config=None, deterministic=False, verbose=False):
    _npbir.make_toy(str(shape), str(out), _dump(config), deterministic, verbose)


def surface(data, out, config=None, deterministic=False, verbose=False):
    _npbir.surface(str(data), str(out), _dump(config), deterministic, verbose)


def distill(data, surface, out, config=None, deterministic=False, verbose=False):
    _npbir.distill(str(data), str(surface), str(out), _dump(config), deterministic, verbose)


def pbir(data, out, assets="", const_init=False, mesh="", config=None, deterministic=False, verbose=False):
    _npbir.pbir(str(data), str(out), str(assets), const_init, str(mesh), _dump(config), deterministic, verbose)


def render(assets, data, out, split="all", env="", exposure=0.0, config=None, deterministic=False, verbose=False):
    _npbir.render(str(assets), str(data), str(out), split, str(env), exposure, _dump(config), deterministic,
                  verbose)


def evaluate(pred, gt, out, config=None, deterministic=False):
    """Mean image metrics; writes the CSV reports into ``out``."""
    return _npbir.evaluate(str(pred), str(gt), str(out), _dump(config), deterministic)
