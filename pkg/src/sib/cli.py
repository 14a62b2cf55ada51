"""Command-line entry point: ``sib {train,ibplane,dropout,verify-theorem,estimate-mi,rerun}``.

Settings come from three layers, later ones winning: built-in defaults, a
flat ``key = value`` config file (``--config``), and command-line flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .datasets import find_mnist
from .metrics import evaluate
from .model import load_checkpoint
from .svgplot import write_chart
from .theorem import run_suite
from .training import NumericalAbort, TrainConfig

log = logging.getLogger("sib")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

# structured names map onto the objective they wrap; K decides structure
VARIANT_ALIASES = {"vib": "vib", "sqvib": "sqvib", "nib": "nib",
                   "svib": "vib", "sqsvib": "sqvib", "snib": "nib"}
PRESETS = {"subset": ex.DESK_SUBSET, "reference": dict(hidden_width=256, lr=1e-4, epochs=(10, 5, 5))}


class ConfigError(ValueError):
    pass


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _ints(s: str) -> list[int]:
    return [int(v) for v in str(s).split(",") if v.strip()]


def _floats(s: str) -> list[float]:
    return [float(v) for v in str(s).split(",") if v.strip()]


def _add_train_flags(p: argparse.ArgumentParser, k_default: str, seed_default: str) -> None:
    # every default is None so that unset flags fall through to the config file
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--data-root", help="directory holding MNIST IDX files (else $SIB_DATA_ROOT)")
    p.add_argument("--variant", help="vib|sqvib|nib or svib|sqsvib|snib")
    p.add_argument("--beta", help="Lagrange multiplier (default 1, or 0.01 for nib)")
    p.add_argument("--k", help=f"auxiliary encoder count(s), comma separated (default {k_default})")
    p.add_argument("--seed", help=f"seed(s), comma separated (default {seed_default})")
    p.add_argument("--preset", help="subset (default) or reference")
    p.add_argument("--epochs", help="stage epochs e1,e2,e3")
    p.add_argument("--lr")
    p.add_argument("--weight-lr")
    p.add_argument("--batch-size")
    p.add_argument("--hidden-width")
    p.add_argument("--feature-dim")
    p.add_argument("--disc-hidden", help="discriminator widths h1,h2")
    p.add_argument("--kl-reduction", help="mean or sum over feature dims")
    p.add_argument("--indep-coef")
    p.add_argument("--train-limit", help="use only the first N training examples")
    p.add_argument("--test-limit", help="use only the first N test examples")
    p.add_argument("--jobs", help="parallel worker processes")
    p.set_defaults(k_default=k_default, seed_default=seed_default)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sib", description="Structured information bottleneck experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    _add_train_flags(sub.add_parser("train", help="train over K and seeds, write metrics.csv"), "0", "0")

    p = sub.add_parser("ibplane", help="beta sweep, plain vs structured")
    _add_train_flags(p, "2", "0")
    p.add_argument("--betas", help="comma separated beta grid (default 12 log-spaced in [1e-4, 1])")

    p = sub.add_parser("dropout", help="remove auxiliary encoders by smallest |w|")
    _add_train_flags(p, "6", "0,1,2")
    p.add_argument("--checkpoint", help="evaluate this trained model instead of training")

    p = sub.add_parser("verify-theorem", help="entropy identities and Monte-Carlo information gain")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--n-identity")
    p.add_argument("--n-mc")
    p.add_argument("--d-max")
    p.add_argument("--mc-samples")
    p.add_argument("--seed")

    p = sub.add_parser("estimate-mi", help="estimator calibration, or metrics of a checkpoint")
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--seed")
    p.add_argument("--checkpoint")
    p.add_argument("--data-root")
    p.add_argument("--test-limit")

    p = sub.add_parser("rerun", help="repeat the run recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    return ap


def merged(args: argparse.Namespace) -> dict[str, str]:
    settings = read_config_file(args.config) if getattr(args, "config", None) else {}
    for key, value in vars(args).items():
        if value is not None and key not in ("config", "command", "verbose"):
            settings[key] = value
    return settings


def train_config(s: dict) -> TrainConfig:
    preset = s.get("preset", "subset")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    variant = s.get("variant", "vib")
    if variant not in VARIANT_ALIASES:
        raise ConfigError(f"unknown variant {variant!r}")
    base = VARIANT_ALIASES[variant]
    kw = dict(PRESETS[preset], variant=base, beta=float(s.get("beta", ex.DEFAULT_BETA[base])))
    conv = {"lr": float, "weight_lr": float, "batch_size": int, "hidden_width": int,
            "feature_dim": int, "kl_reduction": str, "indep_coef": float, "nib_var": float,
            "epochs": _ints, "disc_hidden": _ints}
    known = {f.name for f in fields(TrainConfig)}
    for key, fn in conv.items():
        if key in s and key in known:
            kw[key] = fn(s[key])
    try:
        return TrainConfig(**kw)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err


def load_data(s: dict):
    try:
        train, test = find_mnist(s.get("data_root"))
    except FileNotFoundError as err:
        raise ConfigError(str(err)) from err
    if "train_limit" in s:
        train = train.subset(np.arange(min(int(s["train_limit"]), len(train))))
    if "test_limit" in s:
        test = test.subset(np.arange(min(int(s["test_limit"]), len(test))))
    return train, test


def outdir(s: dict, default: str) -> Path:
    path = Path(s.get("out", default))
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ConfigError(f"cannot create output directory {path}: {err}") from err
    return path


# -- commands ----------------------------------------------------------------------

def cmd_train(s: dict) -> int:
    cfg = train_config(s)
    ks = _ints(s.get("k", s["k_default"]))
    seeds = _ints(s.get("seed", s["seed_default"]))
    if not ks or not seeds:
        raise ConfigError("k and seed lists must be non-empty")
    out = outdir(s, "runs/train")
    train, test = load_data(s)
    cfgs = [replace(cfg, k=k, seed=seed) for k in ks for seed in seeds]
    rows, weights = [], []
    status = EXIT_OK
    try:
        for c, _, r in ex.iter_jobs(cfgs, train, test, int(s.get("jobs", 1))):
            row = ex.metrics_row(c, r)
            rows.append(row)
            weights.append({"k": c.k, "seed": c.seed, "weights": row["weights"]})
            print(f"K={c.k} (total encoders {c.k + 1}) seed={c.seed}: acc={r.accuracy:.4f} "
                  f"I(Z;Y)={r.i_zy:.4f} I(X;Z)={r.i_xz:.4f} params={r.param_count}")
    except NumericalAbort as err:
        log.error("numerical abort: %s", err)
        status = EXIT_NUMERIC
    rows.sort(key=lambda r: (r["k"], r["seed"]))
    weights.sort(key=lambda w: (w["k"], w["seed"]))
    ex.write_csv(out / "metrics.csv", "metrics", rows)
    (out / "weights.json").write_text(json.dumps(weights, indent=2))
    return status


def _ibplane_charts(out: Path, rows: list[dict]) -> None:
    def series(x, y):
        res = {}
        for method in ("plain", "structured"):
            pts = [r for r in rows if r["method"] == method]
            res[method] = ([float(r[x]) for r in pts], [float(r[y]) for r in pts])
        return res

    write_chart(out / "izy_vs_ixz.svg", series("i_xz_nats", "i_zy_nats"), "IB plane",
                "I(X;Z) [nats]", "I(Z;Y) [nats]", dashed={"plain"})
    write_chart(out / "ixz_vs_beta.svg", series("beta", "i_xz_nats"), "Compression",
                "beta", "I(X;Z) [nats]", dashed={"plain"}, logx=True)
    write_chart(out / "izy_vs_beta.svg", series("beta", "i_zy_nats"), "Prediction",
                "beta", "I(Z;Y) [nats]", dashed={"plain"}, logx=True)


def cmd_ibplane(s: dict) -> int:
    cfg = train_config(s)
    betas = _floats(s["betas"]) if "betas" in s else list(ex.BETA_GRID)
    k = _ints(s.get("k", s["k_default"]))[0]
    seeds = _ints(s.get("seed", s["seed_default"]))
    if not betas or not seeds or k < 1:
        raise ConfigError("need a non-empty beta grid, seeds and k >= 1")
    out = outdir(s, "runs/ibplane")
    train, test = load_data(s)
    try:
        rows = ex.ibplane_sweep(cfg, betas, k, seeds, train, test, int(s.get("jobs", 1)))
    except NumericalAbort as err:
        log.error("numerical abort: %s", err)
        return EXIT_NUMERIC
    ex.write_csv(out / "ibplane.csv", "ibplane", rows)
    summary = ex.matched_dominance(rows)
    (out / "dominance.json").write_text(json.dumps(summary, indent=2))
    _ibplane_charts(out, rows)
    print(f"matched pairs {summary['pairs']}, structured >= plain in {summary['wins']}")
    return EXIT_OK


def cmd_dropout(s: dict) -> int:
    out = outdir(s, "runs/dropout")
    if "checkpoint" in s:
        model, meta = load_checkpoint(s["checkpoint"])
        _, test = load_data(s)
        cfg = TrainConfig(**{k: v for k, v in meta["extra"].get("config", {}).items()
                             if k in {f.name for f in fields(TrainConfig)}}) \
            if meta.get("extra", {}).get("config") else train_config(s)
        rows = ex.dropout_rows(model, test, cfg, seed_eval=cfg.seed)
    else:
        cfg = replace(train_config(s), k=_ints(s.get("k", s["k_default"]))[0])
        seeds = _ints(s.get("seed", s["seed_default"]))
        if not seeds:
            raise ConfigError("seed list must be non-empty")
        train, test = load_data(s)
        try:
            rows = ex.dropout_experiment(cfg, seeds, train, test, int(s.get("jobs", 1)))
        except NumericalAbort as err:
            log.error("numerical abort: %s", err)
            return EXIT_NUMERIC
    ex.write_csv(out / "dropout.csv", "dropout", rows)
    trends = ex.dropout_trends(rows)
    (out / "dropout_trends.json").write_text(json.dumps(trends, indent=2))
    by_seed = {}
    for r in rows:
        by_seed.setdefault(f"seed {r['seed']}", ([], []))
        by_seed[f"seed {r['seed']}"][0].append(r["n_dropped"])
        by_seed[f"seed {r['seed']}"][1].append(r["i_zy_nats"])
    write_chart(out / "dropout_izy.svg", by_seed, "Encoder dropout", "encoders removed", "I(Z;Y) [nats]")
    for key, t in trends.items():
        print(f"{key}: kendall tau={t['tau']:.3f} p={t['p']:.3g}")
    return EXIT_OK


def cmd_verify_theorem(s: dict) -> int:
    out = outdir(s, "runs/theorem")
    report = run_suite(n_identity=int(s.get("n_identity", 200)), n_mc=int(s.get("n_mc", 100)),
                       d_max=int(s.get("d_max", 8)), mc_samples=int(s.get("mc_samples", 200_000)),
                       seed=int(s.get("seed", 0)))
    (out / "theorem.json").write_text(json.dumps(report, indent=2, default=float))
    print(f"identities pass: {report['identity_all_pass']} "
          f"(max rel err {report['identity_max_rel_err']:.2e}); "
          f"MC pass rate {report['mc_pass_rate']:.3f}")
    return EXIT_OK if report["ok"] else EXIT_FAIL


def cmd_estimate_mi(s: dict) -> int:
    out = outdir(s, "runs/estimate-mi")
    seed = int(s.get("seed", 0))
    if "checkpoint" in s:
        model, _ = load_checkpoint(s["checkpoint"])
        _, test = load_data(s)
        r = evaluate(model, test, np.random.default_rng(seed))
        (out / "report.json").write_text(json.dumps(asdict(r), indent=2))
        print(f"I(X;Z)={r.i_xz:.4f} I(Z;Y)={r.i_zy:.4f} acc={r.accuracy:.4f}")
        return EXIT_OK
    rows = ex.calibrate(seed)
    ex.write_csv(out / "calibration.csv", "calibration", rows)
    print(f"{'channel':18s} {'truth':>8s} {'I(X;Z)':>8s} {'I(Z;Y)':>8s}")
    for r in rows:
        print(f"{r['channel']:18s} {r['true_nats']:8.4f} {r['i_xz_nats']:8.4f} {r['i_zy_nats']:8.4f}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "ibplane": cmd_ibplane, "dropout": cmd_dropout,
            "verify-theorem": cmd_verify_theorem, "estimate-mi": cmd_estimate_mi}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command == "rerun":
        try:
            manifest = json.loads(Path(args.manifest).read_text())
        except (OSError, json.JSONDecodeError) as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_CONFIG
        recorded = manifest["argv"]
        # replace the recorded output directory, keep everything else
        stripped, skip = [], False
        for tok in recorded:
            if skip:
                skip = False
                continue
            if tok == "--out":
                skip = True
                continue
            if tok.startswith("--out="):
                continue
            stripped.append(tok)
        return main(stripped + ["--out", args.out])

    t0 = time.perf_counter()
    try:
        settings = merged(args)
        status = COMMANDS[args.command](settings)
    except (ConfigError, ValueError, FileNotFoundError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    ex.write_manifest(Path(settings.get("out", f"runs/{args.command}")), args.command, argv,
                      settings, time.perf_counter() - t0)
    return status


if __name__ == "__main__":
    sys.exit(main())
