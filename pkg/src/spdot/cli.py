"""Command-line entry point: ``spdot {gen,transport,train,eval,disttable,gradcheck}``.

Every subcommand writes its artifacts under ``--out`` and prints a JSON summary
to stdout (suppressed by ``--quiet``). Exit codes: 0 success, 1 runtime error,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import plotting
from .data import (
    GaussianSpec,
    DEFAULT_SHIFT_W,
    SpdDataset,
    band_means,
    diagonal_minimal,
    distance_table,
    load_dataset,
    make_banded_dataset,
    make_synthetic_pair,
    save_dataset,
    sym_basis,
)
from .errors import SpdotError
from .gradcheck import run_gradcheck
from .losses import LossWeights
from .spd import random_spd, spd_log
from .spdnet import embed, init_model, load_model, predict, save_model, triu_vec
from .training import (
    MODES,
    TrainConfig,
    config_to_text,
    domain_gap,
    read_config,
    train,
    write_history,
)
from .transport import (
    coupled_mean_distance,
    band_plan_is_identity,
    transport_lem,
    verify_affine_recovery,
    verify_bimap_recovery,
)

log = logging.getLogger("spdot")

GRADCHECK_TOL = 1e-5


class UsageError(Exception):
    """Bad flag combination detected after parsing; maps to exit code 2."""


def parse_matrix(text: str) -> np.ndarray:
    """``"a,b;c,d"`` -> ``[[a, b], [c, d]]`` (rows separated by ``;``)."""
    try:
        rows = [[float(x) for x in row.split(",")] for row in text.split(";")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad matrix {text!r}: {exc}") from None
    if len({len(r) for r in rows}) != 1:
        raise argparse.ArgumentTypeError(f"bad matrix {text!r}: ragged rows")
    return np.array(rows)


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _emit(args, summary: dict) -> None:
    text = json.dumps(summary, sort_keys=True, indent=2)
    if args.out is not None:
        (Path(args.out) / f"{args.command}.json").write_text(text + "\n")
    if not args.quiet:
        print(text)


def _out_dir(args) -> Path:
    if args.out is None:
        raise UsageError(f"{args.command}: --out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _groups(**named) -> dict[str, np.ndarray]:
    return {k: v.matrices if isinstance(v, SpdDataset) else v for k, v in named.items()}


def _point_figures(out: Path, stem: str, groups, eigen: bool = True) -> list[str]:
    """Scatter PNG, optional eigenvalue PNG, and the CSV of the plotted points."""
    plotting.plot_log_scatter(groups, out / f"{stem}_scatter.png")
    plotting.write_points(groups, out / f"{stem}_points.csv")
    files = [f"{stem}_scatter.png", f"{stem}_points.csv"]
    if eigen:
        plotting.plot_eigen_pairs(groups, out / f"{stem}_eigen.png")
        files.append(f"{stem}_eigen.png")
    return files


def cmd_gen(args) -> None:
    out = _out_dir(args)
    if args.bands:
        dim = args.dim
        if dim is None:
            dim = 2
            while dim * (dim + 1) // 2 < args.bands:
                dim += 1
        if args.bands > sym_basis(dim, traceless=True).shape[0] + 1:
            raise UsageError(f"--bands {args.bands} needs --dim of at least "
                             f"{next(n for n in range(2, 64) if n * (n + 1) // 2 >= args.bands)}")
        classes = args.classes or 2
        spec = GaussianSpec(np.eye(dim), args.sigma, args.count, args.seed)
        try:
            source, target = make_banded_dataset(args.bands, spec, args.separation, args.band_shift,
                                                 seed=args.seed, num_classes=classes,
                                                 adversarial=args.adversarial)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        mode = "adversarial" if args.adversarial else "banded"
    else:
        dim = args.dim or 2
        W = DEFAULT_SHIFT_W if args.shift_w is None else args.shift_w
        if W.shape != (dim, dim):
            raise UsageError(f"--shift-w must be {dim}x{dim}, got {W.shape[0]}x{W.shape[1]}")
        classes = args.classes or 1
        source, target = make_synthetic_pair(dim, args.count, args.sigma, W, args.seed, classes)
        mode = "pair"
    save_dataset(out / "source.jsonl", source)
    save_dataset(out / "target.jsonl", target)
    files = ["source.jsonl", "target.jsonl"]
    if args.plot:
        files += _point_figures(out, "gen", _groups(source=source, target=target))
    _emit(args, {
        "command": "gen", "mode": mode, "dim": dim, "count_source": len(source),
        "count_target": len(target), "num_classes": classes,
        "num_segments": source.num_segments, "sigma": args.sigma, "seed": args.seed, "files": files,
    })


def _write_plan(path, plan) -> None:
    Path(path).write_text("".join(",".join(repr(float(x)) for x in row) + "\n" for row in plan))


def cmd_transport(args) -> None:
    out = _out_dir(args)
    source, target = load_dataset(args.source), load_dataset(args.target)
    res = transport_lem(source.matrices, target.matrices, squared=args.cost == "squared")
    _write_plan(out / "plan.csv", res.plan)
    save_dataset(out / "mapped_target.jsonl", target.with_matrices(res.mapped_targets))
    save_dataset(out / "mapped_source.jsonl", source.with_matrices(res.mapped_sources))
    summary = {
        "command": "transport", "cost": args.cost, "objective": res.objective,
        "n_source": len(source), "n_target": len(target),
        "mean_distance_before": coupled_mean_distance(res.plan, source.matrices, target.matrices),
        "mean_distance_after": coupled_mean_distance(res.plan, res.mapped_sources, target.matrices),
        "files": ["plan.csv", "mapped_target.jsonl", "mapped_source.jsonl"],
    }
    if args.verify_affine:
        rng = np.random.default_rng(args.seed)
        X = triu_vec(spd_log(source.matrices)).reshape(len(source), -1)
        aff = verify_affine_recovery(X, random_spd(rng, X.shape[1], cond=10.0), rng.standard_normal(X.shape[1]))
        W = DEFAULT_SHIFT_W if source.dim == 2 else random_spd(rng, source.dim, cond=10.0)
        bim = verify_bimap_recovery(source.matrices, W)
        summary["verify_affine"] = {
            name: {"passed": r.passed, "identity_plan": r.identity,
                   "plan_deviation": r.plan_deviation, "map_error": r.map_error}
            for name, r in (("affine", aff), ("bimap", bim))
        }
        summary["verify_affine"]["passed"] = aff.passed and bim.passed
        print(f"affine recovery: {'PASS' if aff.passed and bim.passed else 'FAIL'}", file=sys.stderr)
    if args.plot:
        groups = _groups(source=source, target=target, mapped=res.mapped_sources)
        summary["files"] += _point_figures(out, "transport", groups)
    _emit(args, summary)


def _train_config(args) -> TrainConfig:
    cfg = read_config(args.config) if args.config else TrainConfig()
    top = {k: getattr(args, k) for k in ("epochs", "batch_size", "lr", "refresh", "pseudo")
           if getattr(args, k) is not None}
    w = {k: getattr(args, k) for k in ("alpha1", "alpha2", "alpha3", "jd_alpha1", "jd_alpha2")
         if getattr(args, k) is not None}
    base = {k: v for k, v in vars(cfg).items() if k != "weights"}
    try:
        weights = LossWeights(**{**vars(cfg.weights), **w})
        return TrainConfig(**{**base, **top, "seed": args.seed, "weights": weights})
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> None:
    out = _out_dir(args)
    cfg = _train_config(args)
    source, target = load_dataset(args.source), load_dataset(args.target)
    if source.dim != target.dim:
        raise UsageError(f"source is {source.dim}x{source.dim}, target is {target.dim}x{target.dim}")
    d_out = args.d_out or source.dim
    if d_out > source.dim:
        raise UsageError(f"--d-out {d_out} exceeds input size {source.dim}")
    model = init_model(source.dim, source.num_classes, d_out=d_out, eps=args.eps,
                       rng=np.random.default_rng(cfg.seed))
    gap0 = domain_gap(model, source, target)
    model, history = train(model, source, target, cfg, mode=args.mode)
    gap1 = domain_gap(model, source, target)
    save_model(out / "model.ckpt", model)
    write_history(out / "history.csv", history)
    (out / "train.cfg").write_text(config_to_text(cfg))
    files = ["model.ckpt", "history.csv", "train.cfg"]
    if args.plot:
        plotting.plot_history(history, out / "history.png")
        emb = {"source": embed(model, source.matrices), "target": embed(model, target.matrices)}
        files += ["history.png"] + _point_figures(out, "embedding", emb, eigen=False)
    last = history[-1] if history else {}
    _emit(args, {
        "command": "train", "mode": args.mode, "epochs": cfg.epochs, "d_in": source.dim,
        "d_out": d_out, "domain_gap_initial": gap0, "domain_gap_final": gap1,
        "final": {k: v for k, v in last.items() if k != "epoch"}, "files": files,
    })


def cmd_eval(args) -> None:
    if args.out is not None:
        _out_dir(args)
    model = load_model(args.model)
    data = load_dataset(args.data)
    if data.dim != model.d_in:
        raise UsageError(f"model expects {model.d_in}x{model.d_in} inputs, data is {data.dim}x{data.dim}")
    pred = np.atleast_1d(predict(model, data.matrices))
    per_class = {}
    for c in range(max(model.num_classes, data.num_classes)):
        mask = data.labels == c
        per_class[str(c)] = {"count": int(mask.sum()), "correct": int(np.sum(pred[mask] == c)),
                             "predicted": int(np.sum(pred == c))}
    _emit(args, {"command": "eval", "count": len(data),
                 "accuracy": float(np.mean(pred == data.labels)) if len(data) else None,
                 "per_class": per_class})


def cmd_disttable(args) -> None:
    out = _out_dir(args)
    source, target = load_dataset(args.source), load_dataset(args.target)
    table = distance_table(source, target)
    flags = diagonal_minimal(table)
    K = table.shape[0]
    lines = ["band," + ",".join(str(b) for b in range(K)) + ",diagonal_minimal"]
    lines += [f"{a}," + ",".join(repr(float(x)) for x in table[a]) + f",{str(bool(flags[a])).lower()}"
              for a in range(K)]
    (out / "disttable.csv").write_text("\n".join(lines) + "\n")
    files = ["disttable.csv"]
    if args.plot:
        plotting.plot_distance_table(table, out / "disttable.png")
        files.append("disttable.png")
    _emit(args, {
        "command": "disttable", "bands": K, "diagonal_minimal": [bool(f) for f in flags],
        "all_diagonal_minimal": bool(flags.all()),
        "band_plan_identity": band_plan_is_identity(band_means(source), band_means(target)),
        "files": files,
    })


def cmd_gradcheck(args) -> int:
    if args.out is not None:
        _out_dir(args)
    worst = run_gradcheck(args.seeds, base_seed=args.seed)
    err = max(worst.values())
    _emit(args, {"command": "gradcheck", "seeds": args.seeds, "max_rel_error": err,
                 "tolerance": GRADCHECK_TOL, "passed": err <= GRADCHECK_TOL, "per_check": worst})
    return 0 if err <= GRADCHECK_TOL else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42, help="random seed (default 42)")
    common.add_argument("--quiet", action="store_true", help="do not print the JSON summary")
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="spdot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a source/target dataset pair")
    p.add_argument("--dim", type=_positive_int)
    p.add_argument("--count", type=_positive_int, default=50, help="samples per domain (per band)")
    p.add_argument("--sigma", type=float, default=0.4, help="log-domain standard deviation")
    p.add_argument("--shift-w", type=parse_matrix, help='Bi-Map target shift, e.g. "1,0.5;0.5,1"')
    p.add_argument("--bands", type=int, default=0, help="number of bands (0: single synthetic pair)")
    p.add_argument("--classes", type=_positive_int)
    p.add_argument("--separation", type=float, default=1.0, help="log distance between band centers")
    p.add_argument("--band-shift", type=float, default=0.3, help="within-band target shift")
    p.add_argument("--adversarial", action="store_true")
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("transport", parents=[common], help="discrete OT between two datasets")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--cost", choices=("squared", "unsquared"), default="squared")
    p.add_argument("--verify-affine", action="store_true")
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("train", parents=[common], help="train the SPD network")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--mode", choices=MODES, default="mda")
    p.add_argument("--config", help="key=value training config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=_positive_int)
    p.add_argument("--lr", type=float)
    p.add_argument("--refresh", type=_positive_int)
    p.add_argument("--pseudo", choices=("mdm", "network"))
    for name in ("alpha1", "alpha2", "alpha3", "jd-alpha1", "jd-alpha2"):
        p.add_argument(f"--{name}", type=float)
    p.add_argument("--d-out", type=_positive_int)
    p.add_argument("--eps", type=float, default=1e-4, help="ReEig floor")
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("eval", parents=[common], help="accuracy of a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("disttable", parents=[common], help="band-mean distance table")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--seeds", type=_positive_int, default=50)
    return parser


COMMANDS = {"gen": cmd_gen, "transport": cmd_transport, "train": cmd_train, "eval": cmd_eval,
            "disttable": cmd_disttable, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args) or 0
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"spdot {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (SpdotError, ValueError, ArithmeticError, OSError) as exc:
        print(f"spdot {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
