"""Flat key=value model files.

One assignment per key; `#` starts a comment; matrix values are bracketed
row-major literals and may continue across lines until the brackets
balance. Hand-editable by design. The full key set:

    n n1 n2 K T rho pi
    A0 B0 F0 D0  A1..AK B F G D
    Q0 Q0f Q Qf R0 R
    Gamma0 Gamma0f Gamma1 Gamma1f Gamma2 Gamma2f
    eta0 eta0f eta etaf
    alpha0 x0_mean x0_cov xi_cov
"""

import ast
import os

import numpy as np

from .errors import ModelFileError
from .model import ModelParams, ValidatedModel, validate_model

_INT_KEYS = ("n", "n1", "n2", "K")
_FLOAT_KEYS = ("T", "rho")
# every remaining ModelParams field except the per-type A1..AK family
_ARRAY_KEYS = (
    "pi", "A0", "B0", "F0", "D0", "B", "F", "G", "D",
    "Q0", "Q0f", "Q", "Qf", "R0", "R",
    "Gamma0", "Gamma0f", "Gamma1", "Gamma1f", "Gamma2", "Gamma2f",
    "eta0", "eta0f", "eta", "etaf",
    "alpha0", "x0_mean", "x0_cov", "xi_cov",
)


def _strip_comment(line: str) -> str:
    pos = line.find("#")
    return line if pos < 0 else line[:pos]


def _raw_entries(path: str) -> dict:
    entries = {}
    pending_key = None
    pending_chunks = []
    depth = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = _strip_comment(raw).strip()
            if not line and pending_key is None:
                continue
            if pending_key is None:
                if "=" not in line:
                    raise ModelFileError(
                        f"{path}:{lineno}: expected 'key = value', got {line!r}")
                key, value = line.split("=", 1)
                key = key.strip()
                if key in entries:
                    raise ModelFileError(f"{path}:{lineno}: duplicate key {key!r}")
                pending_key = key
                pending_chunks = [value]
                depth = value.count("[") - value.count("]")
            else:
                pending_chunks.append(line)
                depth += line.count("[") - line.count("]")
            if depth < 0:
                raise ModelFileError(
                    f"{path}:{lineno}: unbalanced brackets in {pending_key!r}")
            if depth == 0:
                entries[pending_key] = " ".join(pending_chunks).strip()
                pending_key = None
    if pending_key is not None:
        raise ModelFileError(f"{path}: unterminated value for key {pending_key!r}")
    return entries


def _literal(path: str, key: str, text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError) as exc:
        raise ModelFileError(f"{path}: bad literal for {key!r}: {exc}") from exc


def parse_model_file(path: str) -> ModelParams:
    """Read a model file into raw parameters (not yet validated)."""
    if not os.path.exists(path):
        raise ModelFileError(f"model file not found: {path}")
    entries = _raw_entries(path)

    def take(key):
        if key not in entries:
            raise ModelFileError(f"{path}: missing key {key!r}")
        return _literal(path, key, entries.pop(key))

    fields = {}
    for key in _INT_KEYS:
        fields[key] = int(take(key))
    for key in _FLOAT_KEYS:
        fields[key] = float(take(key))
    K = fields["K"]
    A_list = [np.array(take(f"A{k}"), dtype=np.float64) for k in range(1, K + 1)]
    fields["A"] = np.stack([np.atleast_2d(a) for a in A_list])
    for key in _ARRAY_KEYS:
        fields[key] = np.array(take(key), dtype=np.float64)
    if entries:
        stray = ", ".join(sorted(entries))
        raise ModelFileError(f"{path}: unknown keys: {stray}")
    return ModelParams(**fields)


def load_model(path: str) -> ValidatedModel:
    return validate_model(parse_model_file(path))


def _render(value) -> str:
    arr = np.asarray(value)
    if arr.ndim == 0:
        return repr(arr.item())
    return repr(arr.tolist())


def write_model_file(path: str, params: ModelParams, header: str = ""):
    """Emit a model file that parse_model_file reads back exactly."""
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    for key in _INT_KEYS:
        lines.append(f"{key} = {int(getattr(params, key))}")
    for key in _FLOAT_KEYS:
        lines.append(f"{key} = {_render(getattr(params, key))}")
    A = np.asarray(params.A, dtype=np.float64)
    for k in range(A.shape[0]):
        lines.append(f"A{k + 1} = {_render(A[k])}")
    for key in _ARRAY_KEYS:
        lines.append(f"{key} = {_render(getattr(params, key))}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
