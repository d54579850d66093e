"""Deterministic artifact I/O: run manifests, JSON records, checksums.

Replayability is the product: running the same manifest with the same seed
must reproduce every JSON artifact byte for byte.  Three rules make that
hold.

* All JSON goes through :func:`dumps_canonical`: keys sorted, indentation
  fixed, floats encoded with Python's shortest round-trip repr (unique per
  IEEE double, at most 17 significant digits).  NaN/Infinity are rejected
  rather than silently emitted.
* Numpy values never reach the encoder raw.  :func:`to_jsonable` converts
  scalars to plain Python numbers, real arrays to nested lists, and complex
  data to ``{"re": ..., "im": ...}`` pairs.
* Anything timing- or host-dependent belongs in ``timings.txt``, the one
  file excluded from the checksum table (see :func:`write_checksums`).
  Keeping it out of JSON keeps the rule crisp: every ``.json`` artifact is
  deterministic and replays byte-identically.

Large complex arrays (the conjugation generators) would be wasteful as JSON;
they are stored as ``.npy`` -- whose byte layout is also a pure function of
the array -- and covered by the same ``checksums.json``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ArtifactError, SchemaError

__all__ = [
    "MANIFEST_SCHEMA",
    "RunManifest",
    "to_jsonable",
    "dumps_canonical",
    "write_json",
    "load_json",
    "write_array",
    "load_array",
    "sha256_file",
    "write_checksums",
    "verify_checksums",
    "encode_complex",
    "decode_complex",
]

CHECKSUM_FILE = "checksums.json"
UNHASHED = (CHECKSUM_FILE, "timings.txt")


# ---------------------------------------------------------------------------
# canonical JSON
# ---------------------------------------------------------------------------

def to_jsonable(obj):
    """Recursively convert to types the json module encodes deterministically."""
    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    if isinstance(obj, float):
        if not np.isfinite(obj):
            raise ArtifactError(f"non-finite float {obj!r} in artifact")
        return obj
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return to_jsonable(float(obj))
    if isinstance(obj, (complex, np.complexfloating)):
        return {"im": to_jsonable(float(obj.imag)), "re": to_jsonable(float(obj.real))}
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return encode_complex(obj)
        return to_jsonable(obj.tolist())
    if isinstance(obj, dict):
        out = {}
        for key, value in obj.items():
            if not isinstance(key, str):
                raise ArtifactError(f"non-string key {key!r} in artifact")
            out[key] = to_jsonable(value)
        return out
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    raise ArtifactError(f"cannot serialize object of type {type(obj).__name__}")


def encode_complex(arr: np.ndarray) -> dict:
    a = np.asarray(arr)
    return {
        "im": to_jsonable(np.imag(a).tolist()),
        "re": to_jsonable(np.real(a).tolist()),
        "shape": list(a.shape),
    }


def decode_complex(obj: dict) -> np.ndarray:
    re = np.asarray(obj["re"], dtype=float)
    im = np.asarray(obj["im"], dtype=float)
    out = re + 1j * im
    if "shape" in obj:
        out = out.reshape(tuple(obj["shape"]))
    return out


def dumps_canonical(obj) -> str:
    """The one JSON formatting used for every artifact (ends with newline)."""
    text = json.dumps(
        to_jsonable(obj),
        sort_keys=True,
        indent=2,
        separators=(",", ": "),
        ensure_ascii=True,
        allow_nan=False,
    )
    return text + "\n"


def write_json(path, obj) -> str:
    """Write canonical JSON; returns the sha256 hex digest of the bytes."""
    data = dumps_canonical(obj).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(data)
    return hashlib.sha256(data).hexdigest()


def load_json(path):
    with open(path, "rb") as fh:
        return json.loads(fh.read().decode("utf-8"))


def write_array(path, arr) -> str:
    """Store an ndarray as .npy (deterministic bytes for a given array)."""
    with open(path, "wb") as fh:
        np.save(fh, np.ascontiguousarray(arr))
    return sha256_file(path)


def load_array(path) -> np.ndarray:
    return np.load(path)


# ---------------------------------------------------------------------------
# checksums
# ---------------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_checksums(outdir) -> dict:
    """Hash every artifact in outdir except the checksum table and timings."""
    sums = {}
    for name in sorted(os.listdir(outdir)):
        full = os.path.join(outdir, name)
        if name in UNHASHED or not os.path.isfile(full):
            continue
        sums[name] = sha256_file(full)
    write_json(os.path.join(outdir, CHECKSUM_FILE), sums)
    return sums


def verify_checksums(outdir) -> dict:
    """Recompute and compare; raises ArtifactError on any mismatch."""
    table_path = os.path.join(outdir, CHECKSUM_FILE)
    if not os.path.isfile(table_path):
        raise ArtifactError(f"missing {CHECKSUM_FILE} in {outdir}")
    sums = load_json(table_path)
    for name, expected in sums.items():
        full = os.path.join(outdir, name)
        if not os.path.isfile(full):
            raise ArtifactError(f"missing artifact {name}")
        actual = sha256_file(full)
        if actual != expected:
            raise ArtifactError(
                f"checksum mismatch for {name}: expected {expected}, got {actual}"
            )
    return sums


# ---------------------------------------------------------------------------
# run manifest
# ---------------------------------------------------------------------------

_SEED = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}

_ABSTRACT_MODEL = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "N", "n", "d", "delta", "K"],
    "properties": {
        "kind": {"const": "abstract"},
        "N": {"type": "integer", "minimum": 2},
        "n": {"type": "integer", "minimum": 1, "maximum": 3},
        "d": {"type": "number", "exclusiveMinimum": 1},
        "delta": {"type": "number", "minimum": 0},
        "K": {"type": "integer", "minimum": 0},
        "decay": {"type": "number", "exclusiveMinimum": 0},
        "model_seed": _SEED,
    },
}

_OSCILLATOR_MODEL = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "alpha", "N", "beta", "forcing"],
    "properties": {
        "kind": {"const": "oscillator"},
        "alpha": {"type": "number", "minimum": 2},
        "N": {"type": "integer", "minimum": 2},
        "beta": {"type": "number", "minimum": 0},
        "delta": {"type": "number", "minimum": 0},
        "v_kind": {"enum": ["abspower", "power", "fractional"]},
        # forcing: torus Fourier modes, keys "k" (n=1) or "k1,k2" etc.
        "forcing": {
            "type": "object",
            "minProperties": 1,
            "patternProperties": {r"^-?\d+(,-?\d+)*$": {"type": "number"}},
            "additionalProperties": False,
        },
        "scale_to_epsilon": {"type": "boolean"},
    },
}

_SETTINGS = {
    "type": "object",
    "additionalProperties": False,
    "required": ["epsilon", "s", "gamma", "tau", "K_base"],
    "properties": {
        "epsilon": {"type": "number", "minimum": 0},
        "s": {"type": "number", "exclusiveMinimum": 0},
        "gamma": {"type": "number", "exclusiveMinimum": 0},
        "tau": {"type": "number", "exclusiveMinimum": 0},
        "K_base": {"type": "integer", "minimum": 1},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "l_max": {"type": "integer", "minimum": 1},
        "K_work": {"type": "integer", "minimum": 1},
        "cert_horizon": {"type": "integer", "minimum": 1},
        "theta": {"type": "number", "exclusiveMinimum": 0},
        "gamma_budget": {"type": "number", "exclusiveMinimum": 0},
        "gamma_star_frac": {"type": "number", "minimum": 0},
        "chop_floor": {"type": "number", "minimum": 0},
        "strict_guards": {"type": "boolean"},
    },
}

_FREQUENCY = {
    "oneOf": [
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["omega"],
            "properties": {
                "omega": {
                    "type": "array",
                    "minItems": 1,
                    "maxItems": 3,
                    "items": {"type": "number"},
                }
            },
        },
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["sample"],
            "properties": {
                "sample": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["Kmax", "num_candidates"],
                    "properties": {
                        "Kmax": {"type": "integer", "minimum": 1},
                        "num_candidates": {"type": "integer", "minimum": 1},
                        "Nmax": {"type": "integer", "minimum": 2},
                        "robust_K": {"type": "integer", "minimum": 1},
                    },
                }
            },
        },
    ]
}

MANIFEST_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario", "seed", "out", "model", "settings", "frequency"],
    "properties": {
        "scenario": {"type": "string", "minLength": 1},
        "seed": _SEED,
        "out": {"type": "string", "minLength": 1},
        "model": {"oneOf": [_ABSTRACT_MODEL, _OSCILLATOR_MODEL]},
        "settings": _SETTINGS,
        "frequency": _FREQUENCY,
        # optional per-command blocks
        "frequencies": {
            "type": "object",
            "additionalProperties": False,
            "required": ["gamma_grid", "num_samples"],
            "properties": {
                "gamma_grid": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "number", "exclusiveMinimum": 0},
                },
                "num_samples": {"type": "integer", "minimum": 1},
                "Kmax": {"type": "integer", "minimum": 1},
                "tau": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t_max": {"type": "number", "exclusiveMinimum": 0},
                "num_times": {"type": "integer", "minimum": 2},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "spectrum": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"Kmax": {"type": "integer", "minimum": 0}},
        },
    },
}


def _validate_manifest(doc: dict) -> None:
    import jsonschema

    validator = jsonschema.Draft202012Validator(MANIFEST_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if not errors:
        return
    best = jsonschema.exceptions.best_match(errors)
    path = ".".join(str(p) for p in best.absolute_path) or "<root>"
    raise SchemaError(f"manifest invalid at {path}: {best.message}", field_path=path)


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to replay a run: scenario, model, settings, seed.

    The document is JSON with a closed schema; parse -> serialize -> parse is
    the identity.  The root ``seed`` is the only entropy source a command may
    use (model instances may pin their own ``model_seed`` so that the same
    operator family can be studied under many root seeds).
    """

    scenario: str
    seed: int
    out: str
    model: dict
    settings: dict
    frequency: dict
    frequencies: dict | None = None
    verify: dict | None = None
    spectrum: dict | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "RunManifest":
        _validate_manifest(doc)
        return cls(
            scenario=doc["scenario"],
            seed=doc["seed"],
            out=doc["out"],
            model=doc["model"],
            settings=doc["settings"],
            frequency=doc["frequency"],
            frequencies=doc.get("frequencies"),
            verify=doc.get("verify"),
            spectrum=doc.get("spectrum"),
        )

    def to_dict(self) -> dict:
        doc = {
            "scenario": self.scenario,
            "seed": self.seed,
            "out": self.out,
            "model": self.model,
            "settings": self.settings,
            "frequency": self.frequency,
        }
        for name in ("frequencies", "verify", "spectrum"):
            value = getattr(self, name)
            if value is not None:
                doc[name] = value
        return doc

    @classmethod
    def load(cls, path) -> "RunManifest":
        try:
            doc = load_json(path)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"manifest is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise SchemaError("manifest must be a JSON object")
        return cls.from_dict(doc)

    def dump(self, path) -> str:
        return write_json(path, self.to_dict())

    def replace(self, **kw) -> "RunManifest":
        doc = self.to_dict()
        doc.update({k: v for k, v in kw.items() if v is not None})
        return RunManifest.from_dict(doc)
