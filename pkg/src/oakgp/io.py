"""CSV ingestion and versioned JSON persistence for fitted models."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .config import FeatureSpec, RunConfig
from .errors import DataError, ModelFormatError, SchemaError
from .gp import FittedModel, condition
from .kernels import OakHyperparams, feature_kernel_from_dict
from .measures import FlowParams

MODEL_FORMAT = "oakgp.model"
MODEL_FORMAT_VERSION = 1
MAX_CATEGORICAL_LEVELS = 20


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray | None
    schema: tuple
    target: str | None = None

    @property
    def n_rows(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    def summary(self):
        n_cat = sum(s.kind == "categorical" for s in self.schema)
        return (f"{self.n_rows} rows, {self.n_features} features "
                f"({self.n_features - n_cat} continuous, {n_cat} categorical)")


def _parse_float(text):
    try:
        v = float(text)
    except ValueError:
        return None
    return v


def _read_rows(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except csv.Error as exc:
        raise DataError(f"{path}: malformed CSV ({exc})") from None
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    body = rows[1:]
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DataError(f"{path}, line {i + 2}: expected {len(header)} fields, got {len(r)}")
    return header, [[c.strip() for c in r] for r in body]


def _numeric_column(path, name, cells):
    out = np.empty(len(cells))
    for i, c in enumerate(cells):
        v = _parse_float(c)
        if v is None or not np.isfinite(v):
            raise DataError(f"{path}, line {i + 2}: column {name!r} has non-numeric or "
                            f"non-finite value {c!r}")
        out[i] = v
    return out


def _infer_spec(path, name, cells, override):
    if isinstance(override, FeatureSpec):
        return override
    if isinstance(override, dict):
        return FeatureSpec(name, override.get("kind", "continuous"),
                           tuple(override.get("levels", ())) or tuple(sorted(set(cells))))
    if override == "categorical":
        return FeatureSpec(name, "categorical", tuple(sorted(set(cells))))
    if override == "continuous":
        return FeatureSpec(name, "continuous")
    numeric = sum(_parse_float(c) is not None for c in cells)
    if numeric * 2 > len(cells):
        return FeatureSpec(name, "continuous")
    levels = sorted(set(cells))
    if len(levels) > MAX_CATEGORICAL_LEVELS:
        raise DataError(f"{path}: column {name!r} is non-numeric with {len(levels)} distinct "
                        f"values (more than {MAX_CATEGORICAL_LEVELS}); declare it in the schema")
    return FeatureSpec(name, "categorical", tuple(levels))


def ingest(path, target=None, schema=None, *, require_target=True):
    """Read a CSV with a header row into a Dataset.

    ``schema`` is either a sequence of FeatureSpec (the features to extract,
    in order, e.g. a trained model's schema) or a mapping name -> override
    (``"continuous"``, ``"categorical"`` or a FeatureSpec/dict).  Columns not
    in a sequence schema and not the target are ignored.
    """
    header, body = _read_rows(path)
    cols = {h: [r[j] for r in body] for j, h in enumerate(header)}
    if target is not None and target not in cols and require_target:
        raise DataError(f"{path}: target column {target!r} not found (columns: {header})")
    has_target = target is not None and target in cols

    if schema is not None and not isinstance(schema, dict):
        specs = tuple(schema)
        missing = [s.name for s in specs if s.name not in cols]
        if missing:
            raise SchemaError(f"{path}: missing feature columns {missing}")
    else:
        overrides = schema or {}
        names = [h for h in header if h != target]
        if not names:
            raise DataError(f"{path}: no feature columns")
        specs = tuple(_infer_spec(path, h, cols[h], overrides.get(h)) for h in names)

    if len(body) < 4 and require_target:
        raise DataError(f"{path}: need at least 4 data rows, got {len(body)}")
    X = np.empty((len(body), len(specs)))
    for d, spec in enumerate(specs):
        cells = cols[spec.name]
        if spec.kind == "continuous":
            X[:, d] = _numeric_column(path, spec.name, cells)
        else:
            index = {lv: i for i, lv in enumerate(spec.levels)}
            for i, c in enumerate(cells):
                if c not in index:
                    raise DataError(f"{path}, line {i + 2}: column {spec.name!r} has level "
                                    f"{c!r} outside the declared levels {list(spec.levels)}")
                X[i, d] = index[c]
    y = _numeric_column(path, target, cols[target]) if has_target else None
    return Dataset(X, y, specs, target if has_target else None)


def check_schema(expected, actual_header_specs):
    """Raise SchemaError listing columns that differ between two schemas."""
    exp = {s.name: s for s in expected}
    act = {s.name: s for s in actual_header_specs}
    diffs = sorted(set(exp) ^ set(act))
    diffs += sorted(n for n in set(exp) & set(act) if exp[n].kind != act[n].kind)
    if diffs:
        raise SchemaError(f"schema mismatch in columns {diffs}")


def atomic_write_text(path, text):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj):
    """Canonical JSON: sorted keys, fixed indentation, repr floats."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def model_to_dict(model: FittedModel, *, data_path=None, target=None):
    from . import __version__

    hp = model.hp
    doc = {
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "library_version": __version__,
        "schema": [s.to_dict() for s in model.schema],
        "flows": [None if f is None else f.to_dict() for f in model.flows],
        "kernels": [k.to_dict() for k in hp.kernels],
        "order_variances": list(hp.order_variances),
        "noise_variance": hp.noise_variance,
        "max_order": hp.max_order,
        "config": model.config.to_dict(),
        "objective": model.objective if np.isfinite(model.objective) else None,
        "restart_objectives": list(model.restart_objectives),
        "target": model.target_name,
    }
    if data_path is None:
        doc["data"] = {"mode": "embedded", "X": model.X.tolist(), "y": model.y.tolist()}
    else:
        doc["data"] = {"mode": "external", "path": os.path.abspath(data_path),
                       "sha256": file_sha256(data_path), "target": target,
                       "n_rows": int(model.y.size)}
    return doc


def save_model(model: FittedModel, path, *, data_path=None, target=None):
    """Write the model as versioned JSON.

    By default the transformed training data are embedded.  With
    ``data_path`` only a reference to the CSV and its SHA-256 are stored.
    """
    atomic_write_text(path, dumps(model_to_dict(model, data_path=data_path, target=target)))


def _major(version):
    return str(version).split(".")[0]


def model_from_dict(doc):
    from . import __version__

    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not an oakgp model document")
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(f"model format version {doc.get('format_version')!r} is not "
                               f"supported (expected {MODEL_FORMAT_VERSION})")
    if _major(doc.get("library_version", "")) != _major(__version__):
        raise ModelFormatError(f"model written by oakgp {doc.get('library_version')!r}, "
                               f"incompatible with {__version__}")
    try:
        schema = tuple(FeatureSpec.from_dict(s) for s in doc["schema"])
        flows = tuple(None if f is None else FlowParams.from_dict(f) for f in doc["flows"])
        kernels = tuple(feature_kernel_from_dict(k) for k in doc["kernels"])
        hp = OakHyperparams(kernels, tuple(doc["order_variances"]),
                            float(doc["noise_variance"]), int(doc["max_order"]))
        config = RunConfig.from_dict(doc["config"])
        data = doc["data"]
        if data["mode"] == "embedded":
            X = np.array(data["X"], dtype=float).reshape(-1, len(kernels))
            y = np.array(data["y"], dtype=float)
        elif data["mode"] == "external":
            path = data["path"]
            if not os.path.exists(path):
                raise ModelFormatError(f"referenced training data {path} not found")
            if file_sha256(path) != data["sha256"]:
                raise ModelFormatError(f"referenced training data {path} changed since save "
                                       "(content hash mismatch)")
            ds = ingest(path, data["target"], schema)
            y = ds.y
            X = ds.X.copy()
            for d, f in enumerate(flows):
                if f is not None:
                    from .measures import flow_forward
                    X[:, d] = flow_forward(f, X[:, d])
        else:
            raise ModelFormatError(f"unknown data mode {data['mode']!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model document: {exc!r}") from None
    if len(schema) != len(kernels) or len(flows) != len(kernels):
        raise ModelFormatError("schema, flows and kernels disagree in length")
    model = condition(hp, X, y, schema=schema, flows=flows, jitter=config.jitter,
                      objective=float(doc["objective"]) if doc.get("objective") is not None else float("nan"),
                      restart_objectives=tuple(doc.get("restart_objectives", ())),
                      config=config, target_name=doc.get("target"))
    try:
        model.verify()
    except Exception as exc:
        raise ModelFormatError(f"loaded model fails invariant check: {exc}") from None
    return model


def load_model(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(doc)
