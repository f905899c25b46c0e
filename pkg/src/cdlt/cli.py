"""Command-line pipelines: ``cdlt {sample,diagnose,gauge,mw,longrange-check,validate}``.

Every run directory gets ``config.txt`` (canonical form), the data files,
``manifest.json`` (config hash, code version, sha256 of every data file)
and ``timings.json``.  Only the timings are not reproducible, so they live
outside the manifest's hash list.  While a command runs the directory holds
an ``INCOMPLETE`` flag and a manifest with ``"complete": false``.

Exit codes: 0 success, 1 validation failure (bad config, invalid
structure), 2 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .branching import (LayeredTree, OffspringLaw, read_tree, sample_kesten_tree,
                        sample_layer_process, write_tree)
from .config import ExperimentConfig
from .gibbs import GroupElement, parse_potential
from .longrange import DEFAULT_MAJORANT, check_conditions, s1_tail_bound
from .mermin_wagner import (gauge_profile, growth_report, martingale_check, phi_strips,
                            phi_upper_bound, q_sum, symmetry_experiment)
from .reports import write_table
from .rng import derive_seed
from .triangulation import (LT_MAGIC, read_triangulation, tree_to_lt, validate,
                            write_triangulation)

# seed streams, one per command
STREAM_SAMPLE, STREAM_DIAGNOSE, STREAM_GAUGE, STREAM_MW, STREAM_LONGRANGE = 1, 2, 3, 4, 5


class ValidationFailure(Exception):
    pass


class RunDir:
    """Collects output files and writes the manifest."""

    def __init__(self, out: Path, command: str, cfg: ExperimentConfig):
        self.out, self.command, self.cfg = out, command, cfg
        self.files: list[str] = []
        self.timings: dict[str, float] = {}
        self._t0 = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)
        (out / "INCOMPLETE").write_text(f"{command} started\n")
        self._write_manifest(complete=False)
        (out / "config.txt").write_text(cfg.to_text(hashed_only=True))
        self.files.append("config.txt")

    @property
    def meta(self) -> dict:
        return {"command": self.command, "config_hash": self.cfg.hash, "version": __version__}

    @contextmanager
    def open(self, name: str):
        with open(self.out / name, "w") as fh:
            yield fh
        self.files.append(name)

    def table(self, name, kind, columns, rows, **meta):
        with self.open(name) as fh:
            write_table(fh, kind, columns, rows, {**self.meta, **meta})

    @contextmanager
    def timed(self, label: str):
        t0 = time.perf_counter()
        yield
        self.timings[label] = round(time.perf_counter() - t0, 6)

    def _write_manifest(self, complete: bool):
        files = {}
        for name in sorted(self.files):
            files[name] = hashlib.sha256((self.out / name).read_bytes()).hexdigest()
        doc = {"command": self.command, "complete": complete, "config_hash": self.cfg.hash,
               "files": files, "nondeterministic": ["timings.json"], "version": __version__}
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def finish(self):
        self.timings["total"] = round(time.perf_counter() - self._t0, 6)
        (self.out / "timings.json").write_text(json.dumps(self.timings, indent=2, sort_keys=True)
                                               + "\n")
        self._write_manifest(complete=True)
        (self.out / "INCOMPLETE").unlink()

    def abort(self):
        self._write_manifest(complete=False)


def _grid(values) -> str:
    return ",".join(str(v) for v in values)


def _law(cfg) -> OffspringLaw:
    return OffspringLaw.parse(cfg.law)


def _input_sizes(path: Path) -> list[tuple[str, np.ndarray]]:
    files = sorted(path.glob("triangulation_*.txt"))
    if not files:
        raise FileNotFoundError(f"no triangulation_*.txt files in {path}")
    out = []
    for f in files:
        with open(f) as fh:
            out.append((f.stem, read_triangulation(fh).layer_sizes))
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_sample(cfg: ExperimentConfig, run: RunDir, args) -> None:
    law = _law(cfg)
    rows = []
    for i in range(cfg.trees):
        seed = derive_seed(cfg.seed, STREAM_SAMPLE, i)
        with run.timed(f"tree_{i}"):
            tree = sample_kesten_tree(law, cfg.height, seed)
            tree.meta["config_hash"] = cfg.hash
            T = tree_to_lt(tree)
            T.meta["config_hash"] = cfg.hash
            rep = validate(T)
        if not rep.ok:
            raise ValidationFailure(f"tree {i}: {rep.violation}")
        with run.open(f"tree_{i}.txt") as fh:
            write_tree(tree, fh)
        with run.open(f"triangulation_{i}.txt") as fh:
            write_triangulation(T, fh)
        rows.extend((i, seed, t, int(k)) for t, k in enumerate(T.layer_sizes.tolist()))
    run.table("layer_sizes.tsv", "layer_sizes", ["tree", "seed", "t", "k"], rows, law=cfg.law)


def cmd_diagnose(cfg: ExperimentConfig, run: RunDir, args) -> None:
    law = _law(cfg)
    if args.input:
        named = _input_sizes(Path(args.input))
        seeds = [-1] * len(named)
        sizes = [k for _, k in named]
    else:
        seeds = [derive_seed(cfg.seed, STREAM_DIAGNOSE, i) for i in range(cfg.trees)]
        with run.timed("layer_processes"):
            sizes = [sample_layer_process(law, cfg.height, s) for s in seeds]
    N = min(k.size for k in sizes) - 1
    if N < 10:
        raise ValidationFailure("growth diagnostics need height >= 10")
    T0 = max(2, N // 10)
    reps = [growth_report(k[: N + 1], cfg.epsilon) for k in sizes]

    summary = [(i, seeds[i], g.C, g.s(T0), g.s(N), int(g.s(N) - g.s(T0) < g.s(T0)))
               for i, g in enumerate(reps)]
    run.table("growth_summary.tsv", "growth_summary",
              ["tree", "seed", "C", f"s_{T0}", f"s_{N}", "tail_below_head"], summary,
              law=cfg.law, epsilon=cfg.epsilon, height=N)

    Cs = np.array([g.C for g in reps])
    sN = np.array([g.s(N) for g in reps])
    qs = (0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0)
    run.table("growth_quantiles.tsv", "growth_quantiles", ["quantile", "C", f"s_{N}"],
              [(q, float(np.quantile(Cs, q)), float(np.quantile(sN, q))) for q in qs],
              law=cfg.law, epsilon=cfg.epsilon, trees=len(reps))

    g0 = reps[0]
    run.table("growth_tree0.tsv", "growth_tree", ["t", "k", "ratio", "partial_sum"],
              [(int(t), int(sizes[0][t]), float(r), float(s))
               for t, r, s in zip(g0.t, g0.ratio, g0.partial_sums)],
              law=cfg.law, epsilon=cfg.epsilon, seed=seeds[0])

    K = np.stack([k[: N + 1] for k in sizes]).astype(np.float64)
    se = K.std(axis=0, ddof=1) / np.sqrt(K.shape[0]) if K.shape[0] > 1 else np.full(N + 1, np.nan)
    s2 = float(law.variance)
    run.table("growth_mean.tsv", "growth_mean", ["t", "mean_k", "se_k", "expected_k"],
              [(t, float(K[:, t].mean()), float(se[t]), 1.0 + s2 * t) for t in range(N + 1)],
              law=cfg.law, trees=K.shape[0])

    with run.timed("martingale"):
        ms = martingale_check(law, cfg.epsilon, cfg.martingale_n, cfg.martingale_replicas,
                              derive_seed(cfg.seed, STREAM_DIAGNOSE, 10 ** 6))
    run.table("martingale.tsv", "martingale",
              ["n", "mean", "se_mean", "second_moment", "se_second_moment", "series"],
              zip(ms.n.tolist(), ms.mean.tolist(), ms.se_mean.tolist(),
                  ms.second_moment.tolist(), ms.se_second_moment.tolist(), ms.series.tolist()),
              law=cfg.law, epsilon=cfg.epsilon, replicas=ms.replicas)


def cmd_gauge(cfg: ExperimentConfig, run: RunDir, args) -> None:
    law = _law(cfg)
    if args.input:
        named = _input_sizes(Path(args.input))
    else:
        named = []
        for i in range(cfg.trees):
            with run.timed(f"layer_process_{i}"):
                named.append((str(derive_seed(cfg.seed, STREAM_GAUGE, i)),
                              sample_layer_process(law, cfg.height,
                                                   derive_seed(cfg.seed, STREAM_GAUGE, i))))
    theta = GroupElement(np.full(cfg.group_dim, cfg.theta))
    rows = []
    for i, (label, k) in enumerate(named):
        height = k.size - 1
        if max(cfg.gauge_n) > height:
            raise ValidationFailure(f"n grid reaches {max(cfg.gauge_n)} but tree {label} "
                                    f"has height {height}")
        for n in cfg.gauge_n:
            prof = gauge_profile(cfg.gauge_r, n, theta)
            ph = phi_strips(k, prof)
            bound = phi_upper_bound(k, cfg.gauge_r, n, theta) if n < height else float("nan")
            ratio = ph / bound if bound > 0 else float("nan")
            rows.append((i, label, n, q_sum(n - cfg.gauge_r), ph, bound, ratio))
    run.table("gauge.tsv", "gauge", ["tree", "source", "n", "Q", "phi", "bound", "ratio"], rows,
              law=cfg.law, r=cfg.gauge_r, theta=cfg.theta, group_dim=cfg.group_dim,
              n_grid=_grid(cfg.gauge_n))


def cmd_mw(cfg: ExperimentConfig, run: RunDir, args) -> None:
    law = _law(cfg)
    pot = parse_potential(cfg.potential)
    with run.timed("symmetry_experiment"):
        rep = symmetry_experiment(law, pot, cfg.mw_r, cfg.mw_n, cfg.replicas, cfg.sweeps,
                                  derive_seed(cfg.seed, STREAM_MW), cfg.delta, cfg.workers)
    cols = ["n", "replica", "tree_seed", "mcmc_seed", "slab_size", "region_size", "acceptance",
            "modulus", "vector_modulus", "mean_modulus", "mean_modulus_sq"]
    meta = dict(law=cfg.law, potential=cfg.potential.replace(" ", ""), r=cfg.mw_r,
                n_grid=_grid(rep.n_list), replicas=cfg.replicas, sweeps=cfg.sweeps,
                delta=cfg.delta, master_seed=rep.seed)
    run.table("mw_records.tsv", "mw_records", cols,
              [[getattr(x, c) for c in cols] for x in rep.records], **meta)
    summary = []
    n0 = rep.n_list[0]
    for n in rep.n_list:
        summary.append((n, rep.median(n), rep.median(n, "vector_modulus"),
                        float(np.mean(rep.values(n))),
                        rep.paired_fraction_lower(n0, n) if n != n0 else float("nan")))
    run.table("mw_summary.tsv", "mw_summary",
              ["n", "median_modulus", "median_vector_modulus", "mean_modulus",
               f"fraction_below_n{n0}"], summary, **meta)


def cmd_longrange(cfg: ExperimentConfig, run: RunDir, args) -> None:
    law = _law(cfg)
    depths = sorted(cfg.lr_depths)
    if depths[-1] > cfg.height:
        raise ValidationFailure(f"depth {depths[-1]} exceeds height {cfg.height}")
    rows, tails, summary = [], [], []
    for i in range(cfg.trees):
        seed = derive_seed(cfg.seed, STREAM_LONGRANGE, i)
        with run.timed(f"tree_{i}"):
            T = tree_to_lt(sample_kesten_tree(law, depths[-1], seed))
            rep = check_conditions(T, DEFAULT_MAJORANT, L_grid=cfg.lr_L, depths=depths,
                                   probe_radius=cfg.probe_radius)
        rows.extend((i, *row) for row in rep.rows())
        for a, b in zip(depths[:-1], depths[1:]):
            bound = s1_tail_bound(T.layer_sizes, DEFAULT_MAJORANT, a, b, rep.probe_radius)
            tails.append((i, a, b, rep.S1_at(b) - rep.S1_at(a), bound))
        S2 = rep.S2[-1]
        summary.append((i, seed, int(rep.passed), float(S2[-1] / S2[0]) if S2[0] else 0.0))
    meta = dict(law=cfg.law, majorant=DEFAULT_MAJORANT.descriptor, L_grid=_grid(cfg.lr_L),
                depths=_grid(depths))
    run.table("conditions.tsv", "longrange_conditions",
              ["tree", "depth", "probe_radius", "S1", "L", "S2"], rows, **meta)
    run.table("tail_bounds.tsv", "longrange_tail",
              ["tree", "depth", "deeper", "S1_difference", "tail_bound"], tails, **meta)
    run.table("longrange_summary.tsv", "longrange_summary",
              ["tree", "seed", "passed", "S2_last_over_first"], summary, **meta)


def cmd_validate(paths, out_dir) -> int:
    targets = []
    for p in (paths or [out_dir]):
        p = Path(p)
        targets.extend(sorted(p.glob("triangulation_*.txt")) + sorted(p.glob("tree_*.txt"))
                       if p.is_dir() else [p])
    if not targets:
        raise FileNotFoundError("nothing to validate")
    bad = 0
    for path in targets:
        with open(path) as fh:
            first = fh.readline().rstrip("\n")
            fh.seek(0)
            try:
                if first == LT_MAGIC:
                    rep = validate(read_triangulation(fh, check=False))
                else:
                    rep = validate(tree_to_lt(read_tree(fh)))
                msg = "ok" if rep.ok else f"FAIL {rep.violation}"
            except ValueError as exc:
                rep, msg = None, f"FAIL {exc}"
        bad += not (rep is not None and rep.ok)
        print(f"{path}: {msg}")
    return 1 if bad else 0


COMMANDS = {"sample": cmd_sample, "diagnose": cmd_diagnose, "gauge": cmd_gauge, "mw": cmd_mw,
            "longrange-check": cmd_longrange}


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--out", help="run directory")
    common.add_argument("--workers", type=int, help="worker processes for replicas")
    common.add_argument("--law", help="geometric | poisson | deterministic | binary | finite:p0,p1,..")
    common.add_argument("--height", type=int)
    common.add_argument("--trees", type=int)
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")

    parser = argparse.ArgumentParser(prog="cdlt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("sample", parents=[common], help="sample Kesten trees and triangulations")
    p = sub.add_parser("diagnose", parents=[common], help="growth and martingale diagnostics")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--input", help="directory of triangulation_*.txt to diagnose")
    p = sub.add_parser("gauge", parents=[common], help="gauge energy cost versus n")
    p.add_argument("--r", type=int, dest="gauge_r")
    p.add_argument("--n", dest="gauge_n", help="comma-separated n grid")
    p.add_argument("--theta", type=float)
    p.add_argument("--input", help="directory of triangulation_*.txt")
    p = sub.add_parser("mw", parents=[common], help="magnetization versus boundary distance")
    p.add_argument("--r", type=int, dest="mw_r")
    p.add_argument("--n", dest="mw_n", help="comma-separated n grid")
    p.add_argument("--replicas", type=int)
    p.add_argument("--sweeps", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--potential")
    p = sub.add_parser("longrange-check", parents=[common], help="majorant summability checks")
    p.add_argument("--depths", dest="lr_depths", help="comma-separated truncation depths")
    p.add_argument("--probe-radius", type=int, dest="probe_radius")
    p.add_argument("--L", dest="lr_L", help="comma-separated L grid")
    p = sub.add_parser("validate", help="validate tree or triangulation files")
    p.add_argument("paths", nargs="*", help="files or run directories")
    p.add_argument("--out", default=".", help="directory used when no paths are given")
    return parser


OVERRIDES = ("seed", "out", "workers", "law", "height", "trees", "epsilon", "gauge_r", "gauge_n",
             "theta", "mw_r", "mw_n", "replicas", "sweeps", "delta", "potential", "lr_depths",
             "probe_radius", "lr_L")


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        if key.strip() not in ExperimentConfig.__dataclass_fields__:
            raise ValueError(f"unknown key {key.strip()!r}")
        changes[key.strip()] = val.strip()
    for key in OVERRIDES:
        val = getattr(args, key, None)
        if val is not None:
            changes[key] = val
    return cfg.replace(**changes)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args.paths, args.out)
        cfg = resolve_config(args)
        run = RunDir(Path(cfg.out), args.command, cfg)
        try:
            COMMANDS[args.command](cfg, run, args)
        except BaseException:
            run.abort()
            raise
        run.finish()
        print(f"{args.command}: wrote {len(run.files)} files to {cfg.out} "
              f"(config {cfg.hash})")
        return 0
    except (ValidationFailure, ValueError) as exc:
        print(f"cdlt {args.command}: validation failure: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"cdlt {args.command}: I/O failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
