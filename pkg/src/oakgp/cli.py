"""Command line interface: ``oakgp fit|sobol|decompose|predict``.

Exit codes: 0 ok, 2 configuration, 3 IO/parse, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time

import numpy as np

from . import gp, io, sobol
from .config import RunConfig
from .errors import ConfigError, DataError, NumericalError, OakError, SchemaError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("oakgp")


def _exit_code(exc):
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, OSError)):
        return EXIT_IO
    return EXIT_NUMERICAL


# -- fit -------------------------------------------------------------------

def cmd_fit(data_path, config_path, out_model_path, *, target, seed=None, external_data=False,
            out=None):
    out = out or sys.stdout
    config = RunConfig.from_json(config_path) if config_path else RunConfig()
    if seed is not None:
        config = RunConfig.from_dict({**config.to_dict(), "seed": seed})
    ds = io.ingest(data_path, target)
    print(f"ingested {data_path}: {ds.summary()}", file=out)
    t0 = time.perf_counter()
    model = gp.fit(ds.X, ds.y, config, schema=ds.schema)
    model = dataclasses.replace(model, target_name=target)
    wall = time.perf_counter() - t0
    if external_data:
        io.save_model(model, out_model_path, data_path=data_path, target=target)
    else:
        io.save_model(model, out_model_path)
    hp = model.hp
    print(f"objective (log posterior): {model.objective:.6f}", file=out)
    print("order variances: " + ", ".join(f"{v:.6g}" for v in hp.order_variances), file=out)
    print(f"noise variance: {hp.noise_variance:.6g}", file=out)
    for spec, k in zip(model.schema, hp.kernels):
        if spec.kind == "continuous":
            print(f"  {spec.name}: lengthscale {k.lengthscale:.6g}", file=out)
        else:
            print(f"  {spec.name}: categorical, {k.n_levels} levels", file=out)
    print(f"wall time: {wall:.2f}s", file=out)
    return EXIT_OK


# -- sobol -----------------------------------------------------------------

def cmd_sobol(model_path, out_report_path, *, threshold=None, out=None):
    out = out or sys.stdout
    model = io.load_model(model_path)
    report = sobol.build_report(model, threshold)
    io.atomic_write_text(out_report_path, report.to_json())
    if report.degenerate:
        print("all component variances are zero; ranking is empty", file=out)
    for e, c in zip(report.ranked_entries()[:10], report.cumulative):
        names = ",".join(model.schema[i].name for i in e.subset)
        print(f"  {{{names}}}: {e.normalized:.4f} (cumulative {c:.4f})", file=out)
    return EXIT_OK


# -- decompose -------------------------------------------------------------

def parse_grid(spec):
    """``"n"`` (training range) or ``"lo:hi:n"``."""
    if spec is None:
        return None, None, 101
    parts = str(spec).split(":")
    try:
        if len(parts) == 1:
            n = int(parts[0])
            lo = hi = None
        elif len(parts) == 3:
            lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
            if not lo < hi:
                raise ValueError
        else:
            raise ValueError
    except ValueError:
        raise ConfigError(f"bad --grid {spec!r}; use N or LO:HI:N") from None
    if n < 2:
        raise ConfigError("--grid needs at least 2 points")
    return lo, hi, n


def parse_subsets(text):
    """``"0;1;0,1"`` -> [(0,), (1,), (0, 1)]; names are resolved later."""
    if not text:
        return []
    return [tuple(p.strip() for p in chunk.split(",")) for chunk in text.split(";") if chunk]


def _resolve(model, subset):
    names = {s.name: i for i, s in enumerate(model.schema)}
    out = []
    for p in subset:
        if isinstance(p, str) and p in names:
            out.append(names[p])
        else:
            try:
                out.append(int(p))
            except ValueError:
                raise ConfigError(f"unknown feature {p!r}") from None
    return tuple(sorted(out))


def _raw_training(model):
    X = model.X.copy()
    for d, f in enumerate(model.flows):
        if f is not None:
            from .measures import flow_inverse
            X[:, d] = flow_inverse(f, X[:, d])
    return X


def _feature_grid(model, d, raw_train, lo, hi, n):
    spec = model.schema[d]
    if spec.kind == "categorical":
        return np.arange(len(spec.levels), dtype=float)
    a = raw_train[:, d].min() if lo is None else lo
    b = raw_train[:, d].max() if hi is None else hi
    return np.linspace(a, b, n)


def _histogram(model, d, raw_train):
    col = raw_train[:, d]
    if model.schema[d].kind == "categorical":
        counts = np.bincount(col.astype(int), minlength=len(model.schema[d].levels))
        return {"levels": list(model.schema[d].levels), "counts": counts.tolist()}
    counts, edges = np.histogram(col, bins="fd")
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def decomposition(model, subsets, grid=(None, None, 101)):
    """Plot-ready component exports for 1-d and 2-d subsets (raw units)."""
    lo, hi, n = grid
    raw_train = _raw_training(model)
    base = np.median(raw_train, axis=0)
    for d, s in enumerate(model.schema):
        if s.kind == "categorical":
            base[d] = 0.0
    comps = []
    for u in subsets:
        u = gp._check_subset(model, u)
        names = [model.schema[i].name for i in u]
        if len(u) == 1:
            d = u[0]
            g = _feature_grid(model, d, raw_train, lo, hi, n)
            Xg = np.tile(base, (g.size, 1))
            Xg[:, d] = g
            mean = gp.component_posterior_mean(model, u, Xg)
            var = np.maximum(gp.component_posterior_variance(model, u, Xg), 0.0)
            std = np.sqrt(var)
            comps.append({"subset": list(u), "features": names, "kind": "1d",
                          "grid": g.tolist(), "mean": mean.tolist(), "std": std.tolist(),
                          "lower": (mean - 2 * std).tolist(), "upper": (mean + 2 * std).tolist(),
                          "histogram": _histogram(model, d, raw_train)})
        elif len(u) == 2:
            g1 = _feature_grid(model, u[0], raw_train, lo, hi, n)
            g2 = _feature_grid(model, u[1], raw_train, lo, hi, n)
            A, B = np.meshgrid(g1, g2, indexing="ij")
            Xg = np.tile(base, (A.size, 1))
            Xg[:, u[0]] = A.ravel()
            Xg[:, u[1]] = B.ravel()
            mean = gp.component_posterior_mean(model, u, Xg).reshape(A.shape)
            comps.append({"subset": list(u), "features": names, "kind": "2d",
                          "grid_x": g1.tolist(), "grid_y": g2.tolist(), "mean": mean.tolist()})
        else:
            raise ConfigError(f"subset {u}: only 1-d and 2-d components can be exported; "
                              "use gp.component_posterior_mean for higher orders")
    return {"format": "oakgp.decomposition", "version": 1,
            "constant": gp.constant_component(model), "components": comps}


def cmd_decompose(model_path, subsets, topk, grid, out_path, *, out=None):
    out = out or sys.stdout
    model = io.load_model(model_path)
    chosen = [_resolve(model, u) for u in (subsets or [])]
    if not chosen:
        if not topk:
            raise ConfigError("decompose needs --subsets or --topk > 0")
        report = sobol.build_report(model)
        chosen = [u for u in report.ranking if len(u) <= 2][:topk]
    doc = decomposition(model, chosen, parse_grid(grid))
    io.atomic_write_text(out_path, io.dumps(doc))
    print(f"wrote {len(doc['components'])} components to {out_path}", file=out)
    return EXIT_OK


# -- predict ---------------------------------------------------------------

def cmd_predict(model_path, data_path, out_path, topk=None, *, out=None):
    out = out or sys.stdout
    model = io.load_model(model_path)
    header, _ = io._read_rows(data_path)
    names = [s.name for s in model.schema]
    missing = [n for n in names if n not in header]
    if missing:
        raise SchemaError(f"schema mismatch: missing feature columns {missing}")
    target = model.target_name if model.target_name in header else None
    ds = io.ingest(data_path, target, model.schema, require_target=False)
    mean, var = gp.predict(model, ds.X)
    if topk is not None:
        report = sobol.build_report(model)
        mean = gp.truncated_predict(model, report.ranking[:topk], ds.X)
    lines = ["mean,variance"] + [f"{m!r},{v!r}" for m, v in zip(mean.tolist(), var.tolist())]
    io.atomic_write_text(out_path, "\n".join(lines) + "\n")
    if ds.y is not None:
        rmse = float(np.sqrt(np.mean((mean - ds.y) ** 2)))
        print(f"RMSE against column {ds.target!r}: {rmse:.6g}", file=out)
    print(f"wrote {mean.size} predictions to {out_path}", file=out)
    return EXIT_OK


# -- entry point -----------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="oakgp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit an OAK GP to a CSV file")
    f.add_argument("data")
    f.add_argument("--target", required=True)
    f.add_argument("--config")
    f.add_argument("--seed", type=int)
    f.add_argument("--out", required=True)
    f.add_argument("--external-data", action="store_true",
                   help="store a hash-checked reference to the CSV instead of embedding it")

    s = sub.add_parser("sobol", help="write the Sobol report of a fitted model")
    s.add_argument("model")
    s.add_argument("--threshold", type=float)
    s.add_argument("--out", required=True)

    d = sub.add_parser("decompose", help="export component curves/surfaces")
    d.add_argument("model")
    d.add_argument("--subsets", help="e.g. 'x1;x2;x1,x2' (names or 0-based indices)")
    d.add_argument("--topk", type=int)
    d.add_argument("--grid", help="N or LO:HI:N (default 101 points over the training range)")
    d.add_argument("--out", required=True)

    r = sub.add_parser("predict", help="predict for rows of a CSV file")
    r.add_argument("model")
    r.add_argument("data")
    r.add_argument("--topk", type=int)
    r.add_argument("--out", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "fit":
            return cmd_fit(args.data, args.config, args.out, target=args.target, seed=args.seed,
                           external_data=args.external_data)
        if args.command == "sobol":
            return cmd_sobol(args.model, args.out, threshold=args.threshold)
        if args.command == "decompose":
            return cmd_decompose(args.model, parse_subsets(args.subsets), args.topk, args.grid,
                                 args.out)
        return cmd_predict(args.model, args.data, args.out, args.topk)
    except (OakError, OSError) as exc:
        print(f"oakgp {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
