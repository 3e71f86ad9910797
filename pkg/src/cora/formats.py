"""Model and data file formats.

Model files are JSON documents::

    {"format_version": 1, "alphabet": n, "base_size": N, "num_levels": J,
     "tied": true,
     "layers": [{"level": 1,
                 "triangles": [{"shape": [n*n, n], "data": [[...], ...]}, ...],
                 "boxes":     [{"shape": [n*n, n*n], "data": [[...], ...]}, ...]},
                ...],
     "top_state": {"shape": [n**M], "data": [...]}}

Tables are ``[output, input]`` in the package's flattening convention. Floats
are written with ``repr`` precision, so a save/load round trip is exact.

Data files hold one sample per line as space-separated integers; lines
starting with ``#`` are comments, except an optional ``#n=<alphabet> N=<size>``
header.
"""
from __future__ import annotations

import json
import os
import re
import tempfile

import numpy as np

from .lattice import build_hierarchy
from .model import CoraModel, Layer
from .stochastic import JointDist, StochasticMap

FORMAT_VERSION = 1
_HEADER = re.compile(r"^#\s*n=(\d+)\s+N=(\d+)\s*$")


class FormatError(ValueError):
    pass


def _table(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": a.tolist()}


def _read_table(d: dict, what: str) -> np.ndarray:
    try:
        a = np.array(d["data"], dtype=float)
        shape = tuple(int(s) for s in d["shape"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed {what}: {e}") from None
    if a.shape != shape:
        raise FormatError(f"{what} data has shape {a.shape}, header says {shape}")
    return a


def model_to_dict(model: CoraModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "alphabet": model.alphabet,
        "base_size": model.hierarchy.base_size,
        "num_levels": model.hierarchy.num_levels,
        "tied": model.tied,
        "layers": [{"level": L.level,
                    "triangles": [_table(t.table) for t in L.triangles],
                    "boxes": [_table(b.table) for b in L.boxes]} for L in model.layers],
        "top_state": _table(model.top_state.probs),
    }


def model_from_dict(d: dict) -> CoraModel:
    try:
        version = int(d["format_version"])
        n, N, J = int(d["alphabet"]), int(d["base_size"]), int(d["num_levels"])
        tied = bool(d["tied"])
        layer_docs = d["layers"]
        top_doc = d["top_state"]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"missing or invalid model field: {e}") from None
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")
    h = build_hierarchy(N, J)
    layers = []
    for ld in layer_docs:
        tris = [StochasticMap(n, 1, 2, _read_table(t, "triangle")) for t in ld["triangles"]]
        boxes = [StochasticMap(n, 2, 2, _read_table(b, "box")) for b in ld["boxes"]]
        layers.append(Layer(int(ld["level"]), tris, boxes, tied))
    top = _read_table(top_doc, "top state")
    return CoraModel(h, n, layers, JointDist(n, h.size(J), top))


def _atomic_write(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_model(model: CoraModel) -> str:
    return json.dumps(model_to_dict(model), indent=1) + "\n"


def save_model(path: str, model: CoraModel):
    _atomic_write(path, dumps_model(model))


def load_model(path: str) -> CoraModel:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: not a JSON model file ({e})") from None
    return model_from_dict(d)


def dumps_data(samples: np.ndarray, alphabet: int | None = None) -> str:
    samples = np.asarray(samples, dtype=np.int64)
    lines = []
    if alphabet is not None:
        lines.append(f"#n={alphabet} N={samples.shape[1]}")
    lines += [" ".join(map(str, row)) for row in samples.tolist()]
    return "\n".join(lines) + "\n"


def save_data(path: str, samples: np.ndarray, alphabet: int | None = None):
    _atomic_write(path, dumps_data(samples, alphabet))


def parse_data(text: str) -> tuple[np.ndarray, int | None]:
    """Parse data-file text into ``(samples, alphabet)``; alphabet is None without a header."""
    rows, alphabet, size = [], None, None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.startswith("#"):
            m = _HEADER.match(line)
            if m:
                alphabet, size = int(m.group(1)), int(m.group(2))
            continue
        if not line.strip():
            continue
        try:
            row = [int(tok) for tok in line.split(" ")]
        except ValueError:
            raise FormatError(f"line {lineno}: symbols must be integers separated by "
                              f"single spaces") from None
        rows.append(row)
    if not rows:
        return np.zeros((0, size or 0), dtype=np.int64), alphabet
    if len({len(r) for r in rows}) != 1:
        raise FormatError("all samples must have the same length")
    x = np.array(rows, dtype=np.int64)
    if size is not None and x.shape[1] != size:
        raise FormatError(f"header says N={size}, rows have {x.shape[1]} symbols")
    if x.min() < 0 or (alphabet is not None and x.max() >= alphabet):
        raise FormatError("symbol outside the alphabet")
    return x, alphabet


def load_data(path: str) -> tuple[np.ndarray, int | None]:
    with open(path) as fh:
        return parse_data(fh.read())
