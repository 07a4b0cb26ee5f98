"""Three-stage convolutional encoder with a top-down feature pyramid."""

from __future__ import annotations

from dataclasses import dataclass

from deskmatch.autodiff import Tensor, ops
from deskmatch.config import MatcherConfig
from deskmatch.errors import InputError
from deskmatch.model.params import Parameters

COARSE_STRIDE = 8


@dataclass(frozen=True, slots=True)
class FeatureMaps:
    """Coarse ``[c x H/8 x W/8]`` and fine ``[fine_dim x H/2 x W/2]`` maps of one image."""

    coarse: Tensor
    fine: Tensor


def init_backbone(params: Parameters, config: MatcherConfig) -> None:
    """Register the three-stage encoder and its output projections."""
    w1, w2, w3 = config.backbone_widths
    c = config.coarse_dim
    for name, c_out, c_in, k in (
        ("conv1", w1, config.input_channels, 3),
        ("conv2", w2, w1, 3),
        ("conv3", w3, w2, 3),
        ("lateral3", c, w3, 1),
        ("lateral2", c, w2, 1),
        ("lateral1", c, w1, 1),
        ("smooth2", c, c, 3),
        ("fine_out", config.fine_dim, c, 3),
    ):
        params.add(f"backbone.{name}.weight", (c_out, c_in, k, k), "he")
        params.add(f"backbone.{name}.bias", (c_out,), "zeros")


def _conv(params: Parameters, name: str, x: Tensor, stride: int = 1) -> Tensor:
    kernels = params[f"backbone.{name}.weight"]
    pad = kernels.shape[-1] // 2
    return ops.conv2d(x, kernels, params[f"backbone.{name}.bias"], stride=stride, padding=pad)


def extract_features(image: Tensor, params: Parameters, config: MatcherConfig) -> FeatureMaps:
    """Encode ``image`` ``[C x H x W]`` into coarse (1/8) and fine (1/2) maps.

    Raises:
        InputError: channel count differs from the configuration or a side is
            not divisible by 8.
    """
    if image.ndim != 3:
        raise InputError(f"expected a [C x H x W] image, got shape {image.shape}")
    channels, h, w = image.shape
    if channels != config.input_channels:
        raise InputError(f"model expects {config.input_channels} input channels, got {channels}")
    if h % COARSE_STRIDE or w % COARSE_STRIDE:
        raise InputError(f"image size {h}x{w} is not divisible by {COARSE_STRIDE}")

    c1 = ops.relu(_conv(params, "conv1", image, stride=2))
    c2 = ops.relu(_conv(params, "conv2", c1, stride=2))
    c3 = ops.relu(_conv(params, "conv3", c2, stride=2))

    p3 = _conv(params, "lateral3", c3)
    top_down = ops.upsample_nearest(p3, 2) + _conv(params, "lateral2", c2)
    p2 = ops.relu(_conv(params, "smooth2", top_down))
    p1 = ops.upsample_nearest(p2, 2) + _conv(params, "lateral1", c1)
    return FeatureMaps(coarse=p3, fine=_conv(params, "fine_out", p1))
