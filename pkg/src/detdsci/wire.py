"""JSON-over-HTTP plumbing shared by the classifier and detector clients.

Backends receive crops as base64-encoded PNG inside a JSON body.  The
transport callable is injectable so protocol handling can be tested
without sockets; the default uses :mod:`requests`.
"""

from __future__ import annotations

import base64
from typing import Callable

import numpy as np
import requests

from .ingest import encode_png

HttpPost = Callable[[str, dict, float], dict]


def crop_payload_b64(pixels: np.ndarray) -> str:
    """Base64 PNG encoding of a crop raster, as sent on the wire."""
    return base64.b64encode(encode_png(pixels)).decode("ascii")


def default_http_post(url: str, payload: dict, timeout: float) -> dict:
    response = requests.post(url, json=payload, timeout=timeout)
    response.raise_for_status()
    return response.json()
