"""Controllable latent-diffusion colourisation: Python bindings over the C++ core."""

import json

from ._chroma import (
    EVAL_SEED,
    FieldError,
    Models,
    NoiseSchedule,
    Service,
    colorfulness,
    encode_png,
    extract_l,
    lab_to_rgb,
    mean_ab_error,
    mean_pairwise_channel_variance,
    psnr,
    replace_l_channel,
    rgb_to_lab,
    sample_hints,
    sign_test_p,
    ssim,
)
from ._chroma import colorize_json as _colorize_json
from ._chroma import normalize_request_json as _normalize_request_json

__all__ = [
    "EVAL_SEED",
    "FieldError",
    "Models",
    "NoiseSchedule",
    "Service",
    "colorfulness",
    "colorize",
    "encode_png",
    "extract_l",
    "lab_to_rgb",
    "mean_ab_error",
    "mean_pairwise_channel_variance",
    "normalize_request",
    "psnr",
    "replace_l_channel",
    "rgb_to_lab",
    "sample_hints",
    "sign_test_p",
    "ssim",
]

_ARRAY_FIELDS = ("image", "exemplar", "hint_image", "hint_mask")


def colorize(models, image, **request):
    """Colourise an HxWx3 float array in [0, 1].

    Keyword arguments follow the request wire format (prompt, strokes,
    use_stroke_color, region_only, deformable_decoder, num_outputs,
    guidance_scale, sag_scale, sag_ts, seed). exemplar, hint_image and
    hint_mask may be arrays.
    """
    arrays = {"image": image}
    for key in _ARRAY_FIELDS[1:]:
        if key in request and not isinstance(request[key], str):
            arrays[key] = request.pop(key)
    return _colorize_json(models, json.dumps(request), arrays)


def normalize_request(request):
    """Defaults filled in and fields validated, as the service's /echo does."""
    return json.loads(_normalize_request_json(json.dumps(request)))
