"""Two-stage low-light enhancement: degradation learning, synthesis and refinement."""

import json as _json

from ._drgn import (  # noqa: F401
    ConfigError,
    ConfigMismatchError,
    DecodeError,
    DistributionError,
    EmptyDatasetError,
    EmptyReferenceError,
    Error,
    FormatError,
    GradientError,
    Model,
    PairingError,
    ShapeError,
    adversarial_objective,
    charbonnier,
    gaussian_pyramid,
    kl_div,
    psnr,
    soft_histogram,
    ssim,
)
from . import _drgn


def default_config(profile="paper"):
    text = _drgn.desk_config() if profile == "desk" else _drgn.default_config()
    return _json.loads(text)


def with_overrides(config, *assignments):
    return _json.loads(_drgn.apply_overrides(_json.dumps(config), list(assignments)))


def lr_schedule(step, config=None):
    return _drgn.lr_schedule(step, _json.dumps(config or default_config()))


def evaluate_dirs(pred_dir, gt_dir):
    return _json.loads(_drgn.evaluate_dirs(str(pred_dir), str(gt_dir)))


def train(config, data, refs, out, max_steps=0):
    _drgn.train(_json.dumps(config), str(data), str(refs), str(out), max_steps)
