"""Reproducible experiment harness and the command line entry point.

Sweeps are pure functions of a validated configuration plus a master seed,
so their delimited output is byte-deterministic; every float is printed
with 17 significant digits and columns above the reconstruction threshold
hold "nan" rather than a misleading bound.
"""

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np

from .broadcast_law import (STATIONARY, load_observation, sample_labeling,
                            write_samples_csv)
from .chain_core import TransitionChain, bsc, decay_parameters, load_chain
from .errors import BotlabError, ConfigInvalid
from .function_spaces import EsPolynomial, LocalFunction, es_degree, load_function
from .lemma_verifier import report_payload, run_all
from .operator_lab import decay_probe, var_ratio
from .root_inference import bp_posterior, census_weights, posterior_payload
from .tree_model import RootedTree, build_dary, load_tree

CSV_HEADER = "depth,degree,var_ratio,ks_param,eps,ref_bound"

_CONFIG_KEYS = {"chain", "d", "depth_range", "R", "family", "K", "cr", "out",
                "seed"}
_FAMILY_KEYS = {
    "census": {"kind"},
    "random-es": {"kind", "degree", "seed"},
    "file": {"kind", "path"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated decay-sweep configuration."""

    chain_path: str
    d: int
    depth_lo: int
    depth_hi: int
    family: dict
    R: float = 1.0
    K: int = 0
    cr: float = 1.0
    out: str = None
    seed: int = 0


@dataclass(frozen=True)
class SweepRow:
    """One grid point of a sweep; nan marks columns without a defined bound."""

    depth: int
    es_degree: int
    var_ratio: float
    ks_param: float
    eps: float
    ref_bound: float

    def __post_init__(self):
        value = float(self.var_ratio)
        if -1e-9 <= value < 0.0 or 1.0 < value <= 1.0 + 1e-9:
            value = min(max(value, 0.0), 1.0)
        if not 0.0 <= value <= 1.0:
            raise ConfigInvalid(f"variance ratio {value} outside [0, 1]")
        object.__setattr__(self, "var_ratio", value)


def load_config(source) -> ExperimentConfig:
    """Read a sweep configuration from JSON, rejecting unknown keys.

    Relative paths inside a configuration file resolve against the file's
    directory.
    """
    base = None
    if isinstance(source, (str, Path)):
        base = Path(source).parent
        with open(source, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    else:
        payload = dict(source)
    if not isinstance(payload, dict):
        raise ConfigInvalid("configuration must be a JSON object")
    unknown = set(payload) - _CONFIG_KEYS
    if unknown:
        raise ConfigInvalid(f"unknown configuration keys {sorted(unknown)}")
    missing = {"chain", "d", "depth_range", "family"} - set(payload)
    if missing:
        raise ConfigInvalid(f"missing configuration keys {sorted(missing)}")

    def _resolve(path):
        path = str(path)
        if base is not None and not Path(path).is_absolute():
            return str(base / path)
        return path

    depth_range = payload["depth_range"]
    if (not isinstance(depth_range, (list, tuple)) or len(depth_range) != 2
            or any(int(x) != x for x in depth_range)):
        raise ConfigInvalid("depth_range must be a [lo, hi] pair of integers")
    lo, hi = int(depth_range[0]), int(depth_range[1])
    if lo < 0 or hi < lo:
        raise ConfigInvalid(f"bad depth range [{lo}, {hi}]")
    family = payload["family"]
    if not isinstance(family, dict) or "kind" not in family:
        raise ConfigInvalid("family must be an object with a 'kind'")
    kind = family["kind"]
    allowed = _FAMILY_KEYS.get(kind)
    if allowed is None:
        raise ConfigInvalid(f"unknown family kind {kind!r}")
    if set(family) != allowed:
        raise ConfigInvalid(
            f"family {kind!r} takes exactly the keys {sorted(allowed)}")
    family = dict(family)
    if kind == "random-es":
        family["degree"] = int(family["degree"])
        family["seed"] = int(family["seed"])
        if family["degree"] < 1:
            raise ConfigInvalid("random family degree must be >= 1")
    if kind == "file":
        family["path"] = _resolve(family["path"])
    d = int(payload["d"])
    if d < 1:
        raise ConfigInvalid("d must be >= 1")
    out = payload.get("out")
    return ExperimentConfig(
        chain_path=_resolve(payload["chain"]),
        d=d,
        depth_lo=lo,
        depth_hi=hi,
        family=family,
        R=float(payload.get("R", 1.0)),
        K=int(payload.get("K", 0)),
        cr=float(payload.get("cr", 1.0)),
        out=None if out is None else _resolve(out),
        seed=int(payload.get("seed", 0)),
    )


def _census_poly(tree: RootedTree, chain: TransitionChain) -> EsPolynomial:
    weights = census_weights(chain)
    return EsPolynomial(tuple(
        LocalFunction((v,), weights) for v in tree.leaves))


def _random_es_poly(tree: RootedTree, chain: TransitionChain, degree: int,
                    seed: int, depth: int) -> EsPolynomial:
    rng = np.random.default_rng([seed, depth])
    leaves = tree.leaves
    terms = []
    for _ in range(degree + 4):
        size = int(rng.integers(1, min(degree, len(leaves)) + 1))
        picked = rng.choice(len(leaves), size=size, replace=False)
        support = tuple(sorted(int(leaves[i]) for i in picked))
        terms.append(LocalFunction(support, rng.standard_normal(chain.q ** size)))
    return EsPolynomial(tuple(terms))


def _reference_columns(chain: TransitionChain, d: int, R: float, cr: float):
    """(ks_param, eps): eps is nan at or above the threshold."""
    ks = d * chain.second_eigenvalue ** 2
    if ks >= 1.0 or chain.second_eigenvalue == 0.0:
        return ks, float("nan")
    return ks, decay_parameters(chain, d, R=R, cr=cr).eps


def _grid_rows(tasks) -> tuple:
    """Evaluate independent grid points concurrently, in grid order.

    Each task builds its own tree and function, so nothing is shared;
    pool.map restores the submission order whatever the completion order.
    """
    if len(tasks) <= 1:
        return tuple(task() for task in tasks)
    with ThreadPoolExecutor(max_workers=min(4, len(tasks))) as pool:
        return tuple(pool.map(lambda task: task(), tasks))


def run_decay_sweep(config: ExperimentConfig) -> tuple:
    """Exact variance-ratio rows for one function family across depths."""
    chain = load_chain(config.chain_path)
    ks, eps = _reference_columns(chain, config.d, config.R, config.cr)
    fixed = None
    if config.family["kind"] == "file":
        fixed = load_function(config.family["path"])

    def point(depth: int) -> SweepRow:
        tree = build_dary(config.d, depth)
        if config.family["kind"] == "census":
            f = _census_poly(tree, chain)
        elif config.family["kind"] == "random-es":
            f = _random_es_poly(tree, chain, config.family["degree"],
                                config.family["seed"], depth)
        else:
            f = fixed
        return SweepRow(
            depth=depth,
            es_degree=es_degree(f),
            var_ratio=var_ratio(tree, chain, f),
            ks_param=ks,
            eps=eps,
            ref_bound=math.exp(-eps * depth) if eps == eps else float("nan"),
        )

    return _grid_rows([partial(point, depth) for depth
                       in range(config.depth_lo, config.depth_hi + 1)])


def run_ks_sweep(deltas, d: int, depth: int) -> tuple:
    """Census rows at the last two depths for each symmetric-noise level."""
    if int(d) != d or d < 1:
        raise ConfigInvalid("d must be a positive integer")
    if int(depth) != depth or depth < 1:
        raise ConfigInvalid("depth must be >= 1")
    levels = []
    for delta in deltas:
        delta = float(delta)
        if not 0.0 < delta < 1.0 or delta == 0.5:
            raise ConfigInvalid(
                f"noise level {delta} needs 0 < delta < 1, delta != 0.5")
        levels.append(delta)
    def point(delta: float, level: int) -> SweepRow:
        chain = bsc(delta)
        ks, eps = _reference_columns(chain, d, 1.0, 1.0)
        tree = build_dary(d, level)
        f = _census_poly(tree, chain)
        return SweepRow(
            depth=level,
            es_degree=es_degree(f),
            var_ratio=var_ratio(tree, chain, f),
            ks_param=ks,
            eps=eps,
            ref_bound=math.exp(-eps * level) if eps == eps else float("nan"),
        )

    return _grid_rows([partial(point, delta, level)
                       for delta in sorted(levels)
                       for level in (depth - 1, depth)])


def rows_to_csv(rows) -> str:
    """Fixed-column delimited text with 17 significant digits per float."""
    lines = [CSV_HEADER]
    for row in rows:
        lines.append(
            f"{row.depth},{row.es_degree},"
            f"{row.var_ratio:.17g},{row.ks_param:.17g},"
            f"{row.eps:.17g},{row.ref_bound:.17g}"
        )
    return "\n".join(lines) + "\n"


def run_verify_suite(seed: int, trials: dict = None):
    """All property checks as a JSON report plus a process exit code."""
    payloads = [report_payload(r) for r in run_all(seed, trials=trials)]
    text = json.dumps(payloads, indent=2, sort_keys=True) + "\n"
    code = 0 if all(p["pass"] for p in payloads) else 1
    return text, code


def _emit(text: str, out: str = None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as handle:
            handle.write(text)


def _cmd_chain(args) -> int:
    chain = load_chain(args.file)
    summary = {
        "q": chain.q,
        "pi": [float(x) for x in chain.pi],
        "second_eigenvalue": chain.second_eigenvalue,
        "ergodic": chain.ergodic,
    }
    if args.d is not None:
        ks = args.d * chain.second_eigenvalue ** 2
        summary["ks_param"] = ks
        summary["below_ks"] = ks < 1.0
    _emit(json.dumps(summary, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def _cmd_sample(args) -> int:
    tree = load_tree(args.tree)
    chain = load_chain(args.chain)
    root_init = STATIONARY if args.root is None else args.root
    labelings = [
        sample_labeling(tree, chain, root_init, seed=args.seed,
                        sample_index=index)
        for index in range(args.count)
    ]
    write_samples_csv(args.out, labelings)
    return 0


def _cmd_bp(args) -> int:
    tree = load_tree(args.tree)
    chain = load_chain(args.chain)
    posterior = bp_posterior(tree, chain, load_observation(args.obs))
    payload = posterior_payload(posterior)
    _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def _cmd_decay(args) -> int:
    config = load_config(args.config)
    out = args.out if args.out is not None else config.out
    if out is None:
        raise ConfigInvalid("no output path; pass --out or set 'out'")
    _emit(rows_to_csv(run_decay_sweep(config)), out)
    return 0


def _cmd_ks_sweep(args) -> int:
    deltas = [float(x) for x in args.deltas.split(",") if x.strip()]
    _emit(rows_to_csv(run_ks_sweep(deltas, args.d, args.depth)), args.out)
    return 0


def _cmd_verify(args) -> int:
    text, code = run_verify_suite(args.seed)
    _emit(text, args.report)
    return code


def _cmd_probe(args) -> int:
    chain = load_chain(args.chain)
    heights = sorted({int(x) for x in args.heights.split(",") if x.strip()})
    if not heights:
        raise ConfigInvalid("no probe heights given")
    if args.tree is not None:
        tree = load_tree(args.tree)
    else:
        tree = build_dary(args.d, max(heights))
    report = decay_probe(tree, chain, args.K, heights)
    payload = {
        "chain_summary": report.chain_summary,
        "K": report.K,
        "per_height": [[h, value] for h, value in report.per_height],
        "fitted_rate": report.fitted_rate,
        "h_K_empirical": report.h_K_empirical,
    }
    _emit(json.dumps(payload, indent=2, sort_keys=True) + "\n", args.out)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="botlab",
        description="Broadcasting-on-trees operator laboratory.",
        epilog="Set BOTLAB_SIZE_CAP to override the dense state cap (2^20).",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    chain = commands.add_parser("chain", help="validate a chain file")
    chain.add_argument("file")
    chain.add_argument("--d", type=int, default=None,
                       help="branching factor for the threshold verdict")
    chain.add_argument("--out", default=None)
    chain.set_defaults(handler=_cmd_chain)

    sample = commands.add_parser("sample", help="draw seeded labelings")
    sample.add_argument("--tree", required=True)
    sample.add_argument("--chain", required=True)
    sample.add_argument("--seed", type=int, default=0)
    sample.add_argument("--root", type=int, default=None,
                        help="fix the root state instead of sampling it")
    sample.add_argument("--count", type=int, default=1)
    sample.add_argument("--out", required=True)
    sample.set_defaults(handler=_cmd_sample)

    bp = commands.add_parser("bp", help="exact root posterior")
    bp.add_argument("--tree", required=True)
    bp.add_argument("--chain", required=True)
    bp.add_argument("--obs", required=True)
    bp.add_argument("--out", default=None)
    bp.set_defaults(handler=_cmd_bp)

    decay = commands.add_parser("decay", help="variance-ratio sweep")
    decay.add_argument("--config", required=True)
    decay.add_argument("--out", default=None)
    decay.set_defaults(handler=_cmd_decay)

    ks = commands.add_parser("ks-sweep", help="threshold sweep over noise")
    ks.add_argument("--deltas", required=True,
                    help="comma-separated symmetric noise levels")
    ks.add_argument("--d", type=int, default=2)
    ks.add_argument("--depth", type=int, default=8)
    ks.add_argument("--out", default=None)
    ks.set_defaults(handler=_cmd_ks_sweep)

    verify = commands.add_parser("verify", help="run the property checks")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--report", default=None)
    verify.set_defaults(handler=_cmd_verify)

    probe = commands.add_parser("probe", help="decay-rate probe")
    probe.add_argument("--chain", required=True)
    probe.add_argument("--K", type=int, default=0)
    probe.add_argument("--heights", default="1,2,3")
    probe.add_argument("--tree", default=None)
    probe.add_argument("--d", type=int, default=2)
    probe.add_argument("--out", default=None)
    probe.set_defaults(handler=_cmd_probe)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (BotlabError, OSError, ValueError) as exc:
        print(f"botlab: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
