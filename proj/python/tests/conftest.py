import json

import pytest

import chromalatent as cl

TINY = {
    "model": {"ae_width": 8, "unet_width": 16, "context_dim": 16, "text_tokens": 4, "exemplar_tokens": 2,
              "image_size": 32},
    "schedule": {"sampler_steps": 3},
}


@pytest.fixture(scope="session")
def tiny_models():
    return cl.Models.untrained(json.dumps(TINY))
