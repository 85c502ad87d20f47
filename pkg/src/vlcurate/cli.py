"""Command-line surface: filter, pseudolabel, train-toy, gradcheck, probe.

Every subcommand takes --config (JSON file of option values; explicit flags
win), --seed, and --out.  Output files start with a header line carrying the
tool version and a hash of the fully resolved configuration, and contain
nothing non-deterministic, so a fixed configuration reproduces its outputs
byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, catfilter, conceptlab, gradcheck, hnnce, matrixio, probe
from .traintoy import SyntheticPairSpec, ToyTrainConfig, train_toy


class CliError(ValueError):
    pass


# where a file lands must not change what is inside it
_NON_SEMANTIC_KEYS = frozenset({"config", "out", "stats_out", "trajectory_out"})


def _config_hash(resolved: dict) -> str:
    semantic = {k: v for k, v in resolved.items() if k not in _NON_SEMANTIC_KEYS}
    blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _header(resolved: dict) -> str:
    return f"# vlcurate {__version__} config={_config_hash(resolved)}\n"


COMMON_DEFAULTS = {"config": None, "seed": 0, "out": "."}

DEFAULTS: dict[str, dict] = {
    "filter": {
        **COMMON_DEFAULTS,
        "input": None,
        "filters": "complexity,action,textspot",
        "min_complexity": catfilter.DEFAULT_MIN_COMPLEXITY,
        "spot_conf": catfilter.DEFAULT_SPOT_CONFIDENCE,
        "spot_chars": catfilter.DEFAULT_SPOT_MATCH_CHARS,
        "min_score": catfilter.DEFAULT_MIN_SCORE,
        "stats_out": None,
    },
    "pseudolabel": {
        **COMMON_DEFAULTS,
        "preds": None,
        "obj_vocab": None,
        "attr_vocab": None,
        "k": conceptlab.DEFAULT_TOP_K,
    },
    "train-toy": {
        **COMMON_DEFAULTS,
        "n_concepts": 8, "dim": 16, "noise": 0.4, "alignment": 1.0,
        "duplicate_rate": 0.0,
        "n_train": 64, "n_eval": 64, "embed_dim": 8,
        "steps": 200, "lr": 0.02, "loss": "hn",
        "alpha": 1.0, "beta": 0.0, "with_concepts": False,
    },
    "gradcheck": {
        **COMMON_DEFAULTS,
        "n": 6, "d": 8, "tau": 0.5, "step": gradcheck.DEFAULT_STEP,
        "tolerance": gradcheck.DEFAULT_TOLERANCE,
    },
    "probe": {
        **COMMON_DEFAULTS,
        "features": None, "labels": None, "prompts": None,
        "eval_features": None, "eval_labels": None,
        "delta": 0.0, "delta_b": 0.0, "lr": 0.5, "iters": 200,
        "delta_grid": None, "delta_b_grid": None,
        "trajectory_out": None,
    },
}


def _resolve(command: str, explicit: dict) -> dict:
    """defaults < config file < explicit flags."""
    resolved = dict(DEFAULTS[command])
    config_path = explicit.get("config")
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {config_path}: {exc}") from exc
        unknown = set(loaded) - set(resolved)
        if unknown:
            raise CliError(f"unknown config keys for {command}: {sorted(unknown)}")
        resolved.update(loaded)
    resolved.update(explicit)
    resolved["command"] = command
    return resolved


def _validate(cfg: dict) -> None:
    """Reject out-of-range parameters before any work starts."""
    cmd = cfg["command"]
    if cmd in ("train-toy", "gradcheck"):
        hnnce.HnConfig(alpha=cfg.get("alpha", 1.0), beta=cfg.get("beta", 0.0))
    if cmd == "gradcheck" and not cfg["tau"] >= hnnce.MIN_TAU:
        raise CliError(f"tau must be >= {hnnce.MIN_TAU}")
    if cmd == "pseudolabel" and cfg["k"] < 1:
        raise CliError("k must be >= 1")
    if cmd == "filter":
        if cfg["min_complexity"] < 0:
            raise CliError("min-complexity must be nonnegative")
        if not 0.0 <= cfg["spot_conf"] <= 1.0:
            raise CliError("spot-conf must lie in [0, 1]")
        if cfg["spot_chars"] < 1:
            raise CliError("spot-chars must be >= 1")
        if not 0.0 <= cfg["min_score"] <= 1.0:
            raise CliError("min-score must lie in [0, 1]")
    if cmd == "probe":
        if cfg["delta"] < 0 or cfg["delta_b"] < 0:
            raise CliError("delta and delta-b must be nonnegative")
        if cfg["lr"] <= 0 or cfg["iters"] < 0:
            raise CliError("lr must be positive and iters nonnegative")


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands


def cmd_filter(cfg: dict) -> int:
    if not cfg["input"]:
        raise CliError("filter needs --in")
    names = [n.strip() for n in cfg["filters"].split(",") if n.strip()]
    stages = [catfilter.make_stage(
        name,
        min_complexity=cfg["min_complexity"],
        spot_confidence=cfg["spot_conf"],
        spot_match_chars=cfg["spot_chars"],
        min_score=cfg["min_score"],
    ) for name in names]
    out = _out_dir(cfg)
    kept_path = out / "kept.jsonl"
    stats_path = Path(cfg["stats_out"]) if cfg["stats_out"] else out / "stats.tsv"
    stats = catfilter.FilterStats()
    header = _header(cfg)
    with open(cfg["input"], encoding="utf-8") as src, \
            open(kept_path, "w", encoding="utf-8") as dst:
        dst.write(header)
        records = catfilter.read_records(src)
        for record in catfilter.run_pipeline(records, stages, stats):
            dst.write(catfilter.record_to_json(record) + "\n")
    stats_path.write_text(header + stats.as_tsv())
    print(f"kept {stats.kept}/{stats.examined} records "
          f"({stats.malformed} malformed) -> {kept_path}")
    return 0


def cmd_pseudolabel(cfg: dict) -> int:
    if not cfg["preds"]:
        raise CliError("pseudolabel needs --preds")
    sizes = {}
    for side in ("obj", "attr"):
        path = cfg[f"{side}_vocab"]
        if path is None:
            continue
        try:
            with open(path, encoding="utf-8") as fh:
                vocab = conceptlab.load_vocab(fh, kind=side)
        except OSError as exc:
            raise CliError(f"cannot read {side} vocabulary: {exc}") from exc
        sizes[side] = len(vocab)
    out = _out_dir(cfg)
    label_path = out / "pseudolabels.jsonl"
    k = cfg["k"]
    written = 0
    with open(cfg["preds"], encoding="utf-8") as src, \
            open(label_path, "w", encoding="utf-8") as dst:
        dst.write(_header(cfg))
        for line in src:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            row = json.loads(line)
            labels = {}
            for side in ("obj", "attr"):
                if side not in row:
                    labels[side] = None
                    continue
                if side not in sizes:
                    raise CliError(f"predictions carry {side!r} vectors but no "
                                   f"--{side}-vocab was given")
                vec = np.asarray(row[side], float)
                if vec.shape != (sizes[side],):
                    raise CliError(f"record {row.get('id')}: {side} vector has "
                                   f"{vec.size} entries, vocabulary has {sizes[side]}")
                labels[side] = conceptlab.topk_sparsify(vec, k)
            dst.write(conceptlab.pseudo_label_line(
                row["id"], labels["obj"], labels["attr"]) + "\n")
            written += 1
    print(f"wrote {written} pseudo-label rows -> {label_path}")
    return 0


def cmd_train_toy(cfg: dict) -> int:
    spec = SyntheticPairSpec(
        n_concepts=cfg["n_concepts"], dim=cfg["dim"], noise=cfg["noise"],
        alignment=cfg["alignment"], duplicate_rate=cfg["duplicate_rate"])
    train_cfg = ToyTrainConfig(
        spec=spec, n_train=cfg["n_train"], n_eval=cfg["n_eval"],
        embed_dim=cfg["embed_dim"], steps=cfg["steps"], lr=cfg["lr"],
        loss=cfg["loss"], alpha=cfg["alpha"], beta=cfg["beta"],
        with_concepts=cfg["with_concepts"], seed=cfg["seed"])
    try:
        result = train_toy(train_cfg)
        if not all(np.isfinite(result.losses)):
            raise FloatingPointError("non-finite loss")
    except (FloatingPointError, ValueError) as exc:
        print(f"training diverged ({exc}) under configuration "
              f"{_config_hash(cfg)}: loss={cfg['loss']} alpha={cfg['alpha']} "
              f"beta={cfg['beta']} lr={cfg['lr']}", file=sys.stderr)
        return 1
    out = _out_dir(cfg)
    header = _header(cfg)
    curve = [header.rstrip("\n"), "step\tloss\tinv_tau"]
    for step, (loss, inv_tau) in enumerate(zip(result.losses, result.inv_taus)):
        curve.append(f"{step}\t{loss!r}\t{inv_tau!r}")
    (out / "curve.tsv").write_text("\n".join(curve) + "\n")
    metrics = {
        "final_loss": result.final_loss,
        "r1_i2t": result.r1_i2t,
        "r1_t2i": result.r1_t2i,
        "max_inv_tau": max(result.inv_taus),
    }
    (out / "metrics.json").write_text(
        header + json.dumps(metrics, sort_keys=True, indent=2) + "\n")
    print(f"final loss {result.final_loss:.6f}, "
          f"R@1 i2t {result.r1_i2t:.3f} t2i {result.r1_t2i:.3f}")
    return 0


def cmd_gradcheck(cfg: dict) -> int:
    rows = gradcheck.run_grid(n=cfg["n"], d=cfg["d"], tau=cfg["tau"],
                              seed=cfg["seed"], step=cfg["step"],
                              tolerance=cfg["tolerance"])
    out = _out_dir(cfg)
    (out / "gradcheck.tsv").write_text(_header(cfg) + gradcheck.report_tsv(rows))
    failures = [r for r in rows if not r.passed]
    for row in failures:
        print(f"FAIL {row.block}: max rel err {row.max_rel_err:.3e}",
              file=sys.stderr)
    print(f"{len(rows) - len(failures)}/{len(rows)} gradient blocks pass")
    return 1 if failures else 0


def _load_labels(path: str) -> np.ndarray:
    m, _ = matrixio.load_matrix(path)
    return m.reshape(-1).astype(int)


def cmd_probe(cfg: dict) -> int:
    for key in ("features", "labels", "prompts"):
        if not cfg[key]:
            raise CliError(f"probe needs --{key}")
    features, _ = matrixio.load_matrix(cfg["features"])
    labels = _load_labels(cfg["labels"])
    prompts, _ = matrixio.load_matrix(cfg["prompts"])
    w0 = probe.zero_shot_init(prompts)
    out = _out_dir(cfg)
    header = _header(cfg)

    problem = probe.ProbeProblem(features=features, labels=labels, w0=w0,
                                 delta=cfg["delta"], delta_b=cfg["delta_b"])
    solution = probe.pgd_fit(problem, step_size=cfg["lr"],
                             iterations=cfg["iters"], seed=cfg["seed"])
    traj_path = (Path(cfg["trajectory_out"]) if cfg["trajectory_out"]
                 else out / "trajectory.tsv")
    lines = [header.rstrip("\n"), "iter\tloss\tw_norm\tb_norm"]
    for i, (loss, w_norm, b_norm) in enumerate(solution.trajectory):
        lines.append(f"{i}\t{loss!r}\t{w_norm!r}\t{b_norm!r}")
    traj_path.write_text("\n".join(lines) + "\n")
    print(f"final loss {solution.trajectory[-1][0]:.6f}, "
          f"train accuracy {probe.accuracy(problem, solution):.3f}")

    if cfg["delta_grid"]:
        deltas = [float(v) for v in str(cfg["delta_grid"]).split(",")]
        delta_bs = ([float(v) for v in str(cfg["delta_b_grid"]).split(",")]
                    if cfg["delta_b_grid"] else [cfg["delta_b"]])
        eval_features = eval_labels = None
        if cfg["eval_features"] and cfg["eval_labels"]:
            eval_features, _ = matrixio.load_matrix(cfg["eval_features"])
            eval_labels = _load_labels(cfg["eval_labels"])
        table = probe.grid_search(features, labels, w0, deltas, delta_bs,
                                  step_size=cfg["lr"], iterations=cfg["iters"],
                                  eval_features=eval_features,
                                  eval_labels=eval_labels, seed=cfg["seed"])
        cols = list(table[0].keys())
        lines = [header.rstrip("\n"), "\t".join(cols)]
        for row in table:
            lines.append("\t".join(repr(row[c]) for c in cols))
        (out / "grid.tsv").write_text("\n".join(lines) + "\n")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file; explicit flags win")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vlcurate",
        description="caption-corpus curation and contrastive-training toolkit")
    parser.add_argument("--version", action="version",
                        version=f"vlcurate {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("filter", argument_default=argparse.SUPPRESS,
                        help="apply complexity/action/textspot/score filters")
    p.add_argument("--in", dest="input", help="input JSONL records")
    p.add_argument("--filters", help="comma list: score,complexity,action,textspot "
                                     "(or s,c,a,t), applied in order")
    p.add_argument("--min-complexity", type=int)
    p.add_argument("--spot-conf", type=float)
    p.add_argument("--spot-chars", type=int)
    p.add_argument("--min-score", type=float)
    p.add_argument("--stats-out")
    _add_common(p)

    p = subs.add_parser("pseudolabel", argument_default=argparse.SUPPRESS,
                        help="top-k sparsify teacher probability vectors")
    p.add_argument("--preds", help="JSONL of dense prediction vectors")
    p.add_argument("--obj-vocab")
    p.add_argument("--attr-vocab")
    p.add_argument("--k", type=int)
    _add_common(p)

    p = subs.add_parser("train-toy", argument_default=argparse.SUPPRESS,
                        help="train linear dual encoders on synthetic pairs")
    p.add_argument("--n-concepts", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--alignment", type=float)
    p.add_argument("--duplicate-rate", type=float)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-eval", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--loss", choices=("hn", "info"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--with-concepts", action="store_true")
    _add_common(p)

    p = subs.add_parser("gradcheck", argument_default=argparse.SUPPRESS,
                        help="finite-difference check of all analytic gradients")
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--step", type=float)
    p.add_argument("--tolerance", type=float)
    _add_common(p)

    p = subs.add_parser("probe", argument_default=argparse.SUPPRESS,
                        help="prompt-initialized constrained linear probe")
    p.add_argument("--features")
    p.add_argument("--labels")
    p.add_argument("--prompts")
    p.add_argument("--eval-features")
    p.add_argument("--eval-labels")
    p.add_argument("--delta", type=float)
    p.add_argument("--delta-b", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--delta-grid")
    p.add_argument("--delta-b-grid")
    p.add_argument("--trajectory-out")
    _add_common(p)
    return parser


_COMMANDS = {
    "filter": cmd_filter,
    "pseudolabel": cmd_pseudolabel,
    "train-toy": cmd_train_toy,
    "gradcheck": cmd_gradcheck,
    "probe": cmd_probe,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    namespace = parser.parse_args(argv)
    explicit = {k: v for k, v in vars(namespace).items() if k != "command"}
    command = namespace.command
    try:
        cfg = _resolve(command, explicit)
        _validate(cfg)
        return _COMMANDS[command](cfg)
    except (CliError, ValueError, OSError) as exc:
        print(f"vlcurate {command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
