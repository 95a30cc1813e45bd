"""Command line front end: ``funboost {fit,predict,cv,simulate,evaluate}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. ``FUNBOOST_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
import warnings
from dataclasses import replace

import numpy as np

from .boost import FittedModel, fit
from .config import RunConfig, load_config, parse_config
from .data import DatasetSchema, ingest_dataset, schema_for, write_dataset
from .errors import ConfigError, DataProblem, FunboostError
from .resample import (
    bootstrap_bands,
    cv_mstop,
    make_folds,
    mean_path,
    oob_risk_path,
    select_mstop,
    write_bands,
    write_grid_table,
    write_risk_matrix,
)
from .simulate import ScenarioTruth, evaluate_metrics, generate_scenario

log = logging.getLogger("funboost")


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text).strip("_")


def _fmt(v) -> str:
    v = float(v)
    return repr(v) if np.isfinite(v) else ""


def _outdir(args, cfg: RunConfig) -> str:
    out = args.out or cfg.path(cfg.output)
    if not out:
        raise ConfigError("output: no output directory (set 'output' or pass --out)")
    os.makedirs(out, exist_ok=True)
    return out


def _config(args) -> RunConfig:
    return load_config(args.config) if args.config else parse_config({})


def _load_data(args, cfg: RunConfig, schema=None):
    path = args.data or cfg.path(cfg.data)
    if not path:
        raise ConfigError("data: no dataset (set 'data' or pass --data)")
    if not os.path.exists(path):
        raise DataProblem(f"data: file not found: {path}")
    return ingest_dataset(path, schema if schema is not None else cfg.schema)


def _hyper(args, cfg: RunConfig):
    h = cfg.hyper
    kw = {}
    if args.mstop is not None:
        kw["mstop"] = args.mstop
    if args.method is not None:
        kw["method"] = args.method
    if args.seed is not None:
        kw["seed"] = args.seed
    return replace(h, **kw) if kw else h


def _require_model(cfg: RunConfig):
    if cfg.model is None:
        raise ConfigError("model: missing model section")
    return cfg.model


def _write_risk(path, risk, test_risk=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["m", "risk"] + (["test_risk"] if test_risk else []))
        for m, r in enumerate(risk):
            w.writerow([m, _fmt(r)] + ([_fmt(test_risk[m])] if test_risk else []))


def _write_surfaces(outdir, surfaces):
    sub = os.path.join(outdir, "surfaces")
    os.makedirs(sub, exist_ok=True)
    for p, label, axes, vals, _ in surfaces:
        write_grid_table(os.path.join(sub, f"{p}__{_slug(label)}.csv"), axes, {"value": vals})


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def cmd_fit(args) -> int:
    cfg = _config(args)
    spec = _require_model(cfg)
    data = _load_data(args, cfg)
    hyper = _hyper(args, cfg)
    out = _outdir(args, cfg)
    model = fit(data, spec, hyper)
    model.save(os.path.join(out, "model.json"))
    _write_risk(os.path.join(out, "risk.csv"), model.risk)
    _write_surfaces(out, model.effect_surfaces(add_offset=True))
    if cfg.bands:
        # bands around the estimate at its resampling-selected stopping iteration
        rs = cfg.resampling
        _, _, m_hat = cv_mstop(data, spec, hyper, rs["method"], rs["folds"], rs["seed"], jobs=args.jobs)
        log.info("bands: resampling-selected mstop %d", m_hat)
        bands = bootstrap_bands(data, spec, hyper, cfg.bands["n_boot"], cfg.bands["level"],
                                seed=rs["seed"], mstop=m_hat, reselect=cfg.bands["reselect"],
                                jobs=args.jobs)
        sub = os.path.join(out, "bands")
        os.makedirs(sub, exist_ok=True)
        for b in bands:
            write_bands(os.path.join(sub, f"{b['parameter']}__{_slug(b['term'])}.csv"), b)
        _write_json(os.path.join(sub, "bands.json"),
                    {"mstop": m_hat, "n_boot": cfg.bands["n_boot"], "level": cfg.bands["level"],
                     "reselect": cfg.bands["reselect"]})
    log.info("fit: %d iterations, final risk %.6g", model.n_iterations, model.risk[-1])
    print(f"fitted {model.n_iterations} iterations; artifact {os.path.join(out, 'model.json')}")
    return 0


def _model_path(args, cfg, section):
    path = args.model or cfg.path(section.get("model"))
    if not path:
        raise ConfigError("model artifact: pass --model or set predict.model / evaluate.model")
    if not os.path.exists(path):
        raise DataProblem(f"model artifact not found: {path}")
    return path


def cmd_predict(args) -> int:
    cfg = _config(args)
    model = FittedModel.load(_model_path(args, cfg, cfg.predict))
    schema = cfg.schema if cfg.schema.categorical else _schema_from_model(model)
    data = _load_data(args, cfg, schema)
    out = _outdir(args, cfg)
    m = args.mstop if args.mstop is not None else cfg.predict.get("mstop")
    pred = model.predict(data, m)
    t = data.grid.points
    for kind in ("params", "h"):
        for p, mat in pred[kind].items():
            name = f"{'param' if kind == 'params' else 'predictor'}_{p}.csv"
            with open(os.path.join(out, name), "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow([f"{p}@{_fmt(v)}" for v in t])
                w.writerows([[_fmt(v) for v in row] for row in mat])
    print(f"predicted {data.n_curves} curves into {out}")
    return 0


def _schema_from_model(model):
    return DatasetSchema(categorical={k: list(v) for k, v in model.levels.items()})


def cmd_cv(args) -> int:
    cfg = _config(args)
    spec = _require_model(cfg)
    data = _load_data(args, cfg)
    hyper = _hyper(args, cfg)
    out = _outdir(args, cfg)
    rs = dict(cfg.resampling)
    if args.seed is not None:
        rs["seed"] = args.seed
    plan = make_folds(data.n_curves, rs["method"], rs["folds"], rs["seed"])
    R = oob_risk_path(data, spec, hyper, plan, jobs=args.jobs)
    m_hat = select_mstop(R)
    write_risk_matrix(os.path.join(out, "cv_risk.csv"), R)
    _write_risk(os.path.join(out, "cv_mean_risk.csv"), mean_path(R))
    _write_json(os.path.join(out, "cv.json"),
                {"mstop": m_hat, "method": rs["method"], "folds": rs["folds"], "seed": rs["seed"],
                 "mstop_max": hyper.mstop, "failed_folds": int(np.sum(~np.all(np.isfinite(R), axis=1)))})
    print(f"selected mstop = {m_hat}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    s = dict(cfg.simulate) or dict(parse_config({"simulate": {"N": 100}}).simulate)
    if args.seed is not None:
        s["seed"] = args.seed
    out = _outdir(args, cfg)
    data, truth = generate_scenario(s["scenario"], s["N"], s["G"], s["level"],
                                    s["sigma2_mu"], s["sigma2_sigma"], s["seed"])
    write_dataset(data, os.path.join(out, "data.csv"))
    truth.save(os.path.join(out, "truth.json"))
    manifest = dict(truth.manifest)
    manifest["schema"] = schema_for(data).to_dict()
    _write_json(os.path.join(out, "manifest.json"), manifest)
    sub = os.path.join(out, "truth")
    os.makedirs(sub, exist_ok=True)
    for p, label, axes, vals, _ in truth.effect_surfaces():
        write_grid_table(os.path.join(sub, f"{p}__{_slug(label)}.csv"), axes, {"value": vals})
    print(f"simulated {s['scenario']} scenario: N={s['N']}, G={s['G']}, level={s['level']}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    ev = cfg.evaluate
    truth_path = args.truth or cfg.path(ev.get("truth"))
    if not truth_path or not os.path.exists(truth_path):
        raise DataProblem(f"truth manifest not found: {truth_path}")
    truth = ScenarioTruth.load(truth_path)
    model_path = _model_path(args, cfg, ev)
    try:
        estimate = FittedModel.load(model_path)
    except DataProblem:
        estimate = ScenarioTruth.load(model_path)
    if cfg.schema.categorical:
        schema = cfg.schema
    elif isinstance(estimate, FittedModel):
        schema = _schema_from_model(estimate)
    else:
        schema = _schema_from_truth(truth_path)
    data = _load_data(args, cfg, schema)
    out = _outdir(args, cfg)
    m = args.mstop if args.mstop is not None else ev.get("mstop")
    rows = evaluate_metrics(estimate, truth, data, m)
    with open(os.path.join(out, "metrics.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "term", "metric", "value", "status", "selected"])
        for r in rows:
            w.writerow([r["parameter"], r["term"], r["metric"], _fmt(r["value"]), r["status"],
                        r["selected"]])
    print(f"mean KLD = {rows[0]['value']:.6g}")
    return 0


def _schema_from_truth(truth_path):
    man = os.path.join(os.path.dirname(truth_path), "manifest.json")
    if os.path.exists(man):
        with open(man, encoding="utf-8") as fh:
            return DatasetSchema.from_dict(json.load(fh).get("schema"))
    return DatasetSchema()


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "cv": cmd_cv,
            "simulate": cmd_simulate, "evaluate": cmd_evaluate}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="funboost", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--data", help="wide CSV dataset (overrides 'data')")
        p.add_argument("--out", help="output directory (overrides 'output')")
        p.add_argument("--seed", type=int, help="seed override")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("--mstop", type=int, help="stopping iteration override")
        p.add_argument("--method", choices=("noncyclic", "cyclic"), help="boosting method override")
        if name in ("predict", "evaluate"):
            p.add_argument("--model", help="model artifact (model.json)")
        if name == "evaluate":
            p.add_argument("--truth", help="truth manifest (truth.json)")
    return parser


def _setup_logging():
    level = os.environ.get("FUNBOOST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.captureWarnings(True)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.jobs is not None and args.jobs < 1:
        print("error: ConfigError: --jobs must be >= 1", file=sys.stderr)
        return 2
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except FunboostError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
