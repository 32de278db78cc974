"""JSON interchange format for simulated datasets.

A dataset document holds::

    {"format": "tensorce-dataset", "version": 1,
     "geometry": {"dims": [I1, I2, I3], "spacing": [..], "wavelength": w},
     "paths": {"gains": [[[re, im], ...], ...],
               "elevation": [[...], ...], "azimuth": [[...], ...]},
     "pilots": [[[re, im], ...], ...],          # L rows of N symbols
     "observations": [[[re, im], ...], ...],    # L flattened tensors
     "channels": [[[re, im], ...], ...],        # N flattened tensors
     "noise_precision": p, "snr_db": s, "seed": k}

Complex scalars are ``[re, im]`` pairs. Every tensor is stored as its
mode-1 unfolding ``[I1, I3*I2]`` flattened row by row, so entry
``X[i1, i2, i3]`` sits at position ``i1*I3*I2 + i3*I2 + i2``. Infinite
values (noiseless data) are written as the strings ``"inf"``/``"-inf"``.
"""

import json
import math

import numpy as np

from .channel import ObservationBatch, PathParameters, build_geometry
from .tensor import fold, unfold

FORMAT = "tensorce-dataset"
VERSION = 1


def _enc_float(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return x


def _dec_float(x):
    return float(x)


def _enc_complex(arr):
    arr = np.asarray(arr, dtype=np.complex128)
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def _dec_complex(data):
    arr = np.asarray(data, dtype=float)
    if arr.shape[-1:] != (2,):
        raise ValueError("complex values must be [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def flatten_tensor(X):
    """Mode-1 unfolding of ``X`` flattened row by row."""
    return unfold(X, 1).ravel()


def unflatten_tensor(v, dims):
    I1 = dims[0]
    return fold(np.asarray(v).reshape(I1, -1), 1, dims)


def to_document(geometry, paths, obs, channels):
    return {
        "format": FORMAT,
        "version": VERSION,
        "geometry": {
            "dims": list(geometry.dims),
            "spacing": list(geometry.spacing),
            "wavelength": geometry.wavelength,
        },
        "paths": {
            "gains": [_enc_complex(g) for g in paths.gains],
            "elevation": [np.asarray(t, dtype=float).tolist() for t in paths.elevation],
            "azimuth": [np.asarray(p, dtype=float).tolist() for p in paths.azimuth],
        },
        "pilots": _enc_complex(obs.pilots),
        "observations": [_enc_complex(flatten_tensor(Y)) for Y in obs.Y],
        "channels": [_enc_complex(flatten_tensor(H)) for H in channels],
        "noise_precision": _enc_float(obs.noise_precision),
        "snr_db": _enc_float(obs.snr_db),
        "seed": int(obs.seed),
    }


def from_document(doc):
    """Inverse of :func:`to_document`: ``(geometry, paths, obs, channels)``."""
    if doc.get("format") != FORMAT or doc.get("version") != VERSION:
        raise ValueError("not a tensorce dataset (format/version mismatch)")
    g = doc["geometry"]
    geom = build_geometry(g["dims"], g["spacing"], g["wavelength"])
    p = doc["paths"]
    paths = PathParameters(
        [_dec_complex(x) for x in p["gains"]],
        [np.asarray(x, dtype=float) for x in p["elevation"]],
        [np.asarray(x, dtype=float) for x in p["azimuth"]],
    )
    S = _dec_complex(doc["pilots"])
    if S.ndim != 2:
        raise ValueError("pilots must be an L x N array")
    Y = np.stack([unflatten_tensor(_dec_complex(v), geom.dims) for v in doc["observations"]])
    H = np.stack([unflatten_tensor(_dec_complex(v), geom.dims) for v in doc["channels"]])
    obs = ObservationBatch(
        Y, S, _dec_float(doc["noise_precision"]), _dec_float(doc["snr_db"]), int(doc["seed"])
    )
    return geom, paths, obs, H


def save_dataset(path, geometry, paths, obs, channels):
    doc = to_document(geometry, paths, obs, channels)
    try:
        with open(path, "w") as fh:
            json.dump(doc, fh, allow_nan=False)
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc


def load_dataset(path):
    with open(path) as fh:
        return from_document(json.load(fh))
