"""Command-line driver: ``pushgrad <command> [--config FILE] [--key value ...]``.

Settings come from dotted keys (``hgp.M``, ``graph.rho_low``, ...). They are
read from defaults, then a ``key = value`` config file, then command-line
flags of the same name. Outputs are CSV files in ``--run.out``; timestamps
and the resolved configuration go to a separate ``metadata.json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import experiments as ex
from .files import load_federation, read_checkpoint, save_federation, write_checkpoint, write_table
from .netgraph import load_schedule
from .synthdata import SyntheticConfig, generate_federation

logger = logging.getLogger("pushgrad")

COMMANDS = ("generate-data", "train", "sweep-ms", "influence", "bilevel", "diagnostics")


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_int(text: str):
    """``0`` or ``full`` mean full batch."""
    return None if str(text).strip().lower() in ("0", "full", "none", "") else int(text)


def _int_list(text):
    return [int(t) for t in str(text).replace(" ", "").split(",") if t]


def _float_list(text):
    return [float(t) for t in str(text).replace(" ", "").split(",") if t]


def _batch_list(text):
    return [_optional_int(t) for t in str(text).replace(" ", "").split(",") if t]


@dataclass(frozen=True)
class Key:
    name: str
    parse: object
    default: object
    help: str


KEYS = [
    Key("run.out", str, "results", "output directory"),
    Key("run.seeds", _int_list, None, "comma-separated run seeds (default: 0; sweep-ms: 0..9)"),
    Key("data.dir", str, "", "directory with client_<i>_{train,val}.csv; empty: synthesize"),
    Key("synth.n_clients", int, 3, "number of clients"),
    Key("synth.seed", int, None, "data seed (default: the run seed; generate-data: 0)"),
    Key("synth.alpha", float, 0.4, "Dirichlet concentration of client mixtures"),
    Key("synth.train", int, 100, "training instances per client"),
    Key("synth.val", int, 100, "validation instances per client"),
    Key("graph.rho_low", float, 0.4, "lower bound of off-diagonal edge probabilities"),
    Key("graph.rho_high", float, 0.8, "upper bound of off-diagonal edge probabilities"),
    Key("graph.seed", int, None, "seed of the edge probabilities (default: the run seed)"),
    Key("graph.file", str, "", "fixed schedule file (one line per step, 'j>i' tokens)"),
    Key("inner.steps", int, 5000, "SGP steps"),
    Key("inner.lr", float, 1.0, "initial SGP learning rate"),
    Key("inner.milestones", _float_list, [0.1, 0.3, 0.6], "budget fractions where the rate drops 10x"),
    Key("inner.batch", _optional_int, None, "SGP mini-batch size (0: full batch)"),
    Key("inner.exact", _bool, False, "use the exact Newton solver instead of SGP"),
    Key("inner.lambda", float, 0.1, "initial regularization weight"),
    Key("inner.ridge", float, 1e-3, "fixed ridge of the instance-mask cost"),
    Key("inner.reduction", str, "mean", "per-batch loss reduction: mean or sum"),
    Key("inner.checkpoint", str, "", "load x from this checkpoint instead of training"),
    Key("hgp.M", int, 500, "HGP iterations"),
    Key("hgp.S", int, 100, "Push-Sum rounds per iteration"),
    Key("hgp.eta", float, 1.0, "fixed-point step size"),
    Key("hgp.batch", _optional_int, None, "HGP mini-batch size (0: full batch)"),
    Key("hgp.single_sample", _bool, False, "one batch for both Jacobian products"),
    Key("hgp.persistent_weights", _bool, False, "carry Push-Sum debias weights across iterations"),
    Key("hgp.averaging", str, "pushsum", "pushsum or exact"),
    Key("hgp.M_grid", _int_list, [1, 2, 5, 10, 20, 50, 100, 200, 500], "sweep-ms M values"),
    Key("hgp.S_grid", _int_list, [1, 2, 3, 5, 10, 100], "sweep-ms S values"),
    Key("hgp.batch_grid", _batch_list, [None], "sweep-ms batch sizes (0: full batch)"),
    Key("influence.top_k", int, 50, "number of instances to retrain"),
    Key("influence.oracle", _bool, False, "use the closed-form hyper-gradient instead of HGP"),
    Key("bilevel.steps", int, 5, "outer Adam steps"),
    Key("bilevel.lr", float, 0.1, "outer Adam learning rate (log-lambda space)"),
]
KEY_MAP = {k.name: k for k in KEYS}


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEY_MAP:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def resolve(raw_file: dict, raw_flags: dict) -> dict:
    config = {k.name: k.default for k in KEYS}
    for source in (raw_file, raw_flags):
        for key, text in source.items():
            if text is None:
                continue
            try:
                config[key] = KEY_MAP[key].parse(text)
            except ValueError as exc:
                raise ValueError(f"bad value for {key}: {exc}") from exc
    return config


def to_settings(config: dict) -> ex.Settings:
    data = load_federation(config["data.dir"]) if config["data.dir"] else None
    schedule = load_schedule(config["graph.file"]) if config["graph.file"] else None
    if config["inner.reduction"] not in ("mean", "sum"):
        raise ValueError("inner.reduction must be mean or sum")
    return ex.Settings(
        n_clients=config["synth.n_clients"], synth_seed=config["synth.seed"],
        dirichlet_alpha=config["synth.alpha"], train_per_client=config["synth.train"],
        val_per_client=config["synth.val"], data=data,
        rho_low=config["graph.rho_low"], rho_high=config["graph.rho_high"],
        graph_seed=config["graph.seed"], schedule=schedule,
        inner_steps=config["inner.steps"], inner_lr=config["inner.lr"],
        inner_milestones=tuple(config["inner.milestones"]), inner_batch=config["inner.batch"],
        inner_exact=config["inner.exact"], lambda_init=config["inner.lambda"],
        ridge=config["inner.ridge"], reduction=config["inner.reduction"],
        checkpoint=read_checkpoint(config["inner.checkpoint"]) if config["inner.checkpoint"] else None,
        M=config["hgp.M"], S=config["hgp.S"], eta=config["hgp.eta"], batch=config["hgp.batch"],
        single_sample=config["hgp.single_sample"],
        persistent_weights=config["hgp.persistent_weights"], averaging=config["hgp.averaging"],
        top_k=config["influence.top_k"], use_oracle=config["influence.oracle"],
        outer_steps=config["bilevel.steps"], outer_lr=config["bilevel.lr"],
        M_grid=config["hgp.M_grid"], S_grid=config["hgp.S_grid"],
        batch_grid=config["hgp.batch_grid"])


def _map_seeds(fn, seeds):
    """Run ``fn`` per seed, possibly in parallel; results keep seed order."""
    workers = max(1, int(os.environ.get("PUSHGRAD_THREADS", "1")))
    if workers == 1 or len(seeds) == 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


def cmd_generate_data(config, settings, seeds, out: Path) -> list[Path]:
    seed = 0 if config["synth.seed"] is None else config["synth.seed"]
    clients = generate_federation(SyntheticConfig(
        n_clients=settings.n_clients, dirichlet_alpha=settings.dirichlet_alpha,
        train_per_client=settings.train_per_client, val_per_client=settings.val_per_client,
        seed=seed))
    return save_federation(out, clients)


def _train_one(settings, kind, seed):
    data = ex.federation(settings, seed)
    clients = ex.make_clients(data, kind, settings)
    lam = ex.initial_lambda(clients, kind, settings)
    return ex.train(clients, lam, settings, seed)


def cmd_train(config, settings, seeds, out: Path) -> list[Path]:
    written = []
    for seed, x in zip(seeds, _map_seeds(lambda s: _train_one(settings, "logistic", s), seeds)):
        path = out / f"checkpoint_seed{seed}.csv"
        write_checkpoint(path, x)
        written.append(path)
    return written


def cmd_sweep_ms(config, settings, seeds, out: Path) -> list[Path]:
    rows = [r for rs in _map_seeds(lambda s: ex.sweep_ms(settings, s), seeds) for r in rs]
    rows.sort(key=lambda r: (r["seed"], r["batch"], r["S"], r["M"]))
    path = out / "sweep_ms.csv"
    write_table(path, "sweep-ms", ["seed", "batch", "S", "M", "error_l2", "error_rel", "error"], rows)
    return [path]


INFLUENCE_COLUMNS = ["client_id", "instance_id", "predicted_delta", "actual_delta", "r2", "f1"]


def cmd_influence(config, settings, seeds, out: Path) -> list[Path]:
    reports = _map_seeds(lambda s: ex.influence_experiment(settings, s), seeds)
    written = []
    for seed, report in zip(seeds, reports):
        name = "influence_report.csv" if len(seeds) == 1 else f"influence_report_seed{seed}.csv"
        rows = [list(r) + [None, None] for r in report.records]
        rows.append(["summary", None, None, None, report.r2, report.f1])
        write_table(out / name, "influence report", INFLUENCE_COLUMNS, rows)
        written.append(out / name)
        logger.info("seed %d: R2 = %.4f, F1 = %.2f", seed, report.r2, report.f1)
    summary = out / "influence_summary.csv"
    write_table(summary, "influence summary", ["seed", "r2", "f1"],
                [[s, r.r2, r.f1] for s, r in zip(seeds, reports)])
    return written + [summary]


def cmd_bilevel(config, settings, seeds, out: Path) -> list[Path]:
    results = _map_seeds(lambda s: ex.bilevel_demo(settings, s), seeds)
    rows = [{"seed": s, **r} for s, rs in zip(seeds, results) for r in rs]
    path = out / "bilevel.csv"
    write_table(path, "bilevel", ["seed", "step", "F", "val_loss", "val_accuracy",
                                  "mean_log_lambda"], rows)
    return [path]


def cmd_diagnostics(config, settings, seeds, out: Path) -> list[Path]:
    results = _map_seeds(lambda s: ex.diagnostics(settings, s), seeds)
    diag_rows = [{"seed": s, **d.as_row()} for s, (d, _) in zip(seeds, results)]
    decay_rows = [{"seed": s, **r} for s, (_, rs) in zip(seeds, results) for r in rs]
    p1, p2 = out / "diagnostics.csv", out / "operator_decay.csv"
    write_table(p1, "diagnostics", ["seed", "alpha", "beta", "kappa_x", "kappa_lambda", "mu",
                                    "eta_alpha_product"], diag_rows)
    write_table(p2, "operator decay", ["seed", "S", "sigma_max_deviation"], decay_rows)
    return [p1, p2]


HANDLERS = {
    "generate-data": cmd_generate_data,
    "train": cmd_train,
    "sweep-ms": cmd_sweep_ms,
    "influence": cmd_influence,
    "bilevel": cmd_bilevel,
    "diagnostics": cmd_diagnostics,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pushgrad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("-v", "--verbose", action="store_true")
        for key in KEYS:
            p.add_argument(f"--{key.name}", dest=key.name, metavar="VALUE", default=None,
                           help=f"{key.help} (default: {key.default})")
        p.add_argument("--out", dest="run.out", metavar="DIR", help="alias of --run.out")
        p.add_argument("--seeds", dest="run.seeds", metavar="LIST", help="alias of --run.seeds")
        p.add_argument("--graph-file", dest="graph.file", metavar="FILE", help="alias of --graph.file")
        p.add_argument("--oracle", dest="influence.oracle", action="store_const", const="true",
                       help="alias of --influence.oracle true")
        p.add_argument("--exact-inner", dest="inner.exact", action="store_const", const="true",
                       help="alias of --inner.exact true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k.name: getattr(args, k.name) for k in KEYS}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        config = resolve(file_values, flags)
        settings = to_settings(config)
    except (OSError, ValueError) as exc:
        print(f"pushgrad: error: {exc}", file=sys.stderr)
        return 2
    seeds = config["run.seeds"]
    if seeds is None:
        seeds = list(range(10)) if args.command == "sweep-ms" else [0]
    if not seeds:
        print("pushgrad: error: run.seeds is empty", file=sys.stderr)
        return 2
    out = Path(config["run.out"])
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    written = HANDLERS[args.command](config, settings, seeds, out)
    meta = {"command": args.command, "seeds": seeds, "started": started,
            "elapsed_seconds": time.time() - started,
            "config": {k: (v if not isinstance(v, np.ndarray) else v.tolist())
                       for k, v in config.items()},
            "outputs": [str(p) for p in written]}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2, default=str))
    for p in written:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
