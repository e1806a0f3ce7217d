"""Command-line front end: ``gplfm {train,gapfill,latent,simulate,eval} --config run.json``.

Every command validates the config against ``schema/run_config.schema.json``
before touching any data, writes its outputs atomically and exits with the
code of the error class it hit (see :data:`gplfm.errors.EXIT_CODES`).
Relative paths inside a config are resolved against the config's directory.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import os
import sys
from importlib import resources

import jsonschema
import numpy as np

from .data import TimeSeriesSet
from .errors import EXIT_CODES, ConfigError, DataError, LfmError, QueryError, UnsupportedModelError
from .gp import ConditionedGP, LatentForce
from .ingest import CsvSchema, atomic_write, format_time, ingest, to_csv
from .lfm import LfmParams
from .metrics import evaluate, rain_event_metrics
from .optimize import OptimizerConfig, fit_restarts, make_family
from .oracle import SimScenario, simulate

MODEL_FORMAT = "gplfm-model"
MODEL_VERSION = 1


def load_schema() -> dict:
    text = resources.files("gplfm").joinpath("schema/run_config.schema.json").read_text()
    return json.loads(text)


def validate_config(cfg: dict):
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


def read_config(path) -> tuple[dict, str]:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no such config file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    validate_config(cfg)
    return cfg, os.path.dirname(os.path.abspath(path))


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


class Run:
    """Config plus command-line overrides and path resolution."""

    def __init__(self, cfg, base, output=None, seed=None, jobs=1):
        self.cfg, self.base = cfg, base
        self.seed, self.jobs = seed, jobs
        out = output or cfg.get("output", {}).get("directory")
        if out is None:
            raise ConfigError("no output directory: pass --output or set output.directory")
        self.out = self.path(out)

    def path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base, p)

    def block(self, name):
        if name not in self.cfg:
            raise ConfigError(f"this command needs a {name!r} block in the config")
        return self.cfg[name]

    def table(self, spec, origin=None) -> TimeSeriesSet:
        return ingest(self.path(spec["path"]), CsvSchema.from_dict(spec.get("schema", {})), origin)

    def write(self, name, text):
        atomic_write(os.path.join(self.out, name), text)

    def model_path(self):
        return self.path(self.cfg.get("model_file") or os.path.join(self.out, "model.json"))


# --------------------------------------------------------------------------
# model files
# --------------------------------------------------------------------------


def _family_from_model(model: dict, Q):
    fam = dict(model)
    name = fam.pop("family")
    fam.pop("Q", None)
    R = fam.pop("R", 1)
    return make_family(name, Q, R, **fam)


def model_document(report, channel_ids) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "channels": list(channel_ids),
        "model": report.family,
        "params": report.params,
        "derived": report.derived,
    }


def load_model(path):
    """``(family, constrained params, channel ids)`` from a model file."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no such model file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file is not valid JSON: {exc}") from None
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigError(f"{path} is not a {MODEL_FORMAT} file")
    ids = doc["channels"]
    fam = _family_from_model(doc["model"], len(ids))
    params = {k: np.asarray(v, float) for k, v in doc["params"].items()}
    if fam.name == "lfm":
        P = LfmParams.from_dict(doc["params"])
        params = {
            "decay": P.decay,
            "force_lengthscale": P.force_lengthscale,
            "sensitivity": P.sensitivity,
            "noise_std": P.noise_std,
            "mean": P.mean,
        }
    return fam, params, ids


def _summary(report, ids) -> str:
    p = report.constrained
    tau = report.derived.get("tau")
    lines = [
        f"family      {report.family['family']}  (Q={len(ids)}, R={report.family.get('R', '-')})",
        f"final nll   {report.final_nll:.6f}",
        f"converged   {report.converged}  after {report.iterations} iterations (seed {report.seed})",
        "",
        f"{'channel':<16}{'tau [days]':>14}{'sigma':>14}{'mean':>14}",
    ]
    for q, cid in enumerate(ids):
        t = f"{tau[q]:.4g}" if tau else "-"
        lines.append(f"{cid:<16}{t:>14}{p['noise_std'][q]:>14.5g}{p['mean'][q]:>14.5g}")
    if report.restarts:
        lines += ["", "restarts:"]
        for r in report.restarts:
            if "error" in r:
                lines.append(f"  seed {r['seed']}: failed ({r['error']})")
            else:
                lines.append(f"  seed {r['seed']}: nll {r['final_nll']:.6f}, {r['iterations']} iterations")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _training_data(run: Run, ids=None) -> TimeSeriesSet:
    data = run.table(run.block("data"))
    ids = ids or run.cfg.get("model", {}).get("channels")
    if ids:
        missing = [c for c in ids if c not in data.ids]
        if missing:
            raise QueryError(f"channels {missing} not found in the data (have {data.ids})")
        data = data.reordered(ids)
    return data


def cmd_train(run: Run) -> int:
    m = run.block("model")
    data = _training_data(run)
    if m.get("Q") is not None and m["Q"] != data.Q:
        raise ConfigError(f"model.Q = {m['Q']} but the data have {data.Q} channels")
    opts = {k: m[k] for k in ("shared_width", "periodic", "period") if k in m}
    family = make_family(m["family"], data.Q, m.get("R", 1), **opts)
    ocfg = dict(run.cfg.get("optimizer", {}))
    if run.seed is not None:
        ocfg["seed"] = run.seed
    report = fit_restarts(data, family, OptimizerConfig(**ocfg), m.get("fixed", ()), m.get("init"), run.jobs)
    run.write("model.json", dumps(model_document(report, data.ids)))
    run.write("fit_report.json", dumps({"channels": data.ids, **report.to_dict()}))
    run.write("summary.txt", _summary(report, data.ids))
    return 0


def _times(values, origin):
    out = []
    for v in values:
        if isinstance(v, str):
            if origin is None:
                raise QueryError(f"date {v!r} given but the data use numeric day offsets")
            base = datetime.datetime(origin.year, origin.month, origin.day)
            out.append((datetime.datetime.fromisoformat(v) - base).total_seconds() / 86400.0)
        else:
            out.append(float(v))
    return np.asarray(out, float)


def _conditioned(run: Run):
    fam, params, ids = load_model(run.model_path())
    data = _training_data(run, ids)
    kernel, noise, mean = fam.build(params)
    return fam, ConditionedGP(data, kernel, noise, mean), data


def _grid(spec, data, default_step=1.0):
    lo, hi = data.span()
    start = _times([spec["start"]], data.origin)[0] if "start" in spec else np.floor(lo)
    end = _times([spec["end"]], data.origin)[0] if "end" in spec else np.ceil(hi)
    step = float(spec.get("step", default_step))
    n = int(np.floor((end - start) / step + 1e-9)) + 1 if end >= start else 0
    return start + step * np.arange(n)


def _band_rows(writer, t, label, mean, std, extra=(), origin=None):
    for i in range(t.size):
        writer.writerow(
            [format_time(t[i], origin), label, repr(float(mean[i])), repr(float(std[i]))]
            + [repr(float(e[i])) for e in extra]
            + [repr(float(mean[i] - 2 * std[i])), repr(float(mean[i] + 2 * std[i]))]
        )


def cmd_gapfill(run: Run) -> int:
    q = run.block("query")
    _, gp, data = _conditioned(run)
    chans = q.get("channels") or data.ids
    for c in chans:
        data.index(c)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", "channel", "mean", "std", "std_with_noise", "lower2sd", "upper2sd"])
    for cid in chans:
        if q["mode"] == "times":
            t = np.unique(_times(q.get("times", []), data.origin))
        else:
            t = _grid(q, data)
            if q["mode"] == "all_gaps":
                t = t[~np.isin(t, data[cid].times)]
        if t.size == 0:
            continue
        latent = gp.predict(cid, t, include_noise=False)
        noisy = gp.predict(cid, t, include_noise=True)
        _band_rows(w, t, cid, latent.mean, latent.std, [noisy.std], data.origin)
    run.write("predictions.csv", buf.getvalue())
    return 0


def cmd_latent(run: Run) -> int:
    spec = run.cfg.get("latent", {})
    fam, gp, data = _conditioned(run)
    if fam.name not in ("lfm", "gauss_conv"):
        raise UnsupportedModelError(f"{fam.name!r} models have no latent forces to infer")
    forces = spec.get("forces") or list(range(fam.R))
    for r in forces:
        if r >= fam.R:
            raise QueryError(f"force {r} out of range (model has R={fam.R})")
    t = _grid(spec, data)
    scale = float(spec.get("scale", 1.0))
    clamp = bool(spec.get("clamp_negative", False))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", "force", "mean", "std", "lower2sd", "upper2sd"])
    for r in forces:
        pred = gp.predict(LatentForce(r), t)
        mean, std = scale * pred.mean, abs(scale) * pred.std
        lo, hi = mean - 2 * std, mean + 2 * std
        if clamp:
            mean, lo, hi = (np.maximum(a, 0.0) for a in (mean, lo, hi))
        for i in range(t.size):
            w.writerow([format_time(t[i], data.origin), r] + [repr(float(a[i])) for a in (mean, std, lo, hi)])
    run.write("latent.csv", buf.getvalue())
    return 0


def cmd_simulate(run: Run) -> int:
    s = run.block("simulate")
    params = LfmParams.from_dict(s["params"])
    Q = params.Q
    ids = tuple(s.get("channel_ids") or [f"y{q}" for q in range(Q)])
    if len(ids) != Q:
        raise ConfigError(f"simulate.channel_ids has {len(ids)} entries for Q={Q}")
    step = float(s.get("sample_step", 1.0))
    times = np.arange(0.0, s["horizon"] + 1e-9, step)
    missing = {}
    for cid, p in s.get("missing", {}).items():
        if cid not in ids:
            raise ConfigError(f"simulate.missing names unknown channel {cid!r}")
        missing[ids.index(cid)] = float(p)
    seed = run.seed if run.seed is not None else s.get("force_seed", 0)
    scen = SimScenario(
        params, float(s["horizon"]), s.get("dt"), int(seed), {q: times for q in range(Q)}, missing, s.get("force_clip"), ids
    )
    sim = simulate(scen)
    origin = datetime.date.fromisoformat(s["origin"]) if "origin" in s else None
    data = TimeSeriesSet(sim.data.channels, origin)
    run.write("data.csv", to_csv(data))
    clean = TimeSeriesSet.from_arrays({cid: (times, np.interp(times, sim.grid, sim.outputs[q])) for q, cid in enumerate(ids)}, origin)
    run.write("truth.csv", to_csv(clean))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", "force", "value"])
    for r in range(sim.forces.shape[0]):
        for k in range(sim.grid.size):
            w.writerow([format_time(sim.grid[k], origin), r, repr(float(sim.forces[r, k]))])
    run.write("forces.csv", buf.getvalue())
    return 0


def cmd_eval(run: Run) -> int:
    e = run.block("eval")
    truth = run.table(e["truth"])
    pred_schema = CsvSchema(layout="long", value_column="mean", missing="empty")
    pred = ingest(run.path(e["predictions"]), pred_schema, truth.origin)
    per = evaluate(truth, pred)
    rows = [{"channel": c, "missing_years": e.get("missing_years"), **v} for c, v in per.items()]
    out = {"channels": per, "rows": rows}
    if "precipitation" in e:
        pr = e["precipitation"]
        rain = run.table(pr["data"], truth.origin)
        lat = ingest(run.path(pr["latent"]), CsvSchema(layout="long", channel_column="force", value_column="mean", missing="empty"), truth.origin)
        fid = str(pr.get("force", 0))
        if fid not in lat.ids:
            raise QueryError(f"force {fid} not in {pr['latent']}")
        rc = rain[pr["channel"]]
        common, ia, ib = np.intersect1d(rc.times, lat[fid].times, return_indices=True)
        if common.size == 0:
            raise DataError("precipitation and latent force share no timestamps")
        res = rain_event_metrics(lat[fid].values[ib], rc.values[ia], pr.get("thresholds", [1.0]))
        out["rain_events"] = [r.to_dict() for r in res]
        for r in res:
            if r.fpr is None:
                continue
            body = "fpr,tpr\n" + "".join(f"{a!r},{b!r}\n" for a, b in zip(r.fpr.tolist(), r.tpr.tolist()))
            run.write(f"roc_threshold_{r.threshold:g}.csv", body)
    run.write("metrics.json", dumps(out))
    return 0


COMMANDS = {"train": cmd_train, "gapfill": cmd_gapfill, "latent": cmd_latent, "simulate": cmd_simulate, "eval": cmd_eval}


def build_parser():
    codes = "\n".join(f"  {k}  {v}" for k, v in sorted(EXIT_CODES.items()))
    parser = argparse.ArgumentParser(
        prog="gplfm",
        description="Fit, gap-fill and simulate multi-output latent force models.",
        epilog=f"exit codes:\n{codes}",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for restarts")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")
    parser.add_argument("--output", default=None, help="output directory (overrides output.directory)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg, base = read_config(args.config)
        run = Run(cfg, base, args.output and os.path.abspath(args.output), args.seed, args.jobs)
        return COMMANDS[args.command](run)
    except LfmError as exc:
        print(f"gplfm {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
