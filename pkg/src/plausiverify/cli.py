"""Command-line interface.

Subcommands: generate (synthetic scene bundles), verify (bundles ->
verdicts CSV), evaluate (verdicts -> ROC/PR curves + summary), report
(human-readable gate statistics), trace (single-hypothesis optimizer
trace and silhouette dumps).

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import bundle_io, metrics, optim
from .errors import PlausiverifyError
from .pipeline import (PipelineConfig, pipeline_config_from_dict,
                       verify_hypothesis, verify_scene)
from .render import render_silhouette
from .shape_manifold import default_manifold, load_manifold
from .synthgen import (LidarConfig, PerturbSpec, SceneSpec, generate_scene,
                       perturb_hypotheses)
from .geometry import unpack_state


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="plausiverify", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write synthetic scene bundles")
    g.add_argument("--spec", required=True, help="dataset spec JSON")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output dataset directory")

    v = sub.add_parser("verify", help="verify bundle hypotheses")
    v.add_argument("--bundle", required=True, help="scene dir or dataset dir")
    v.add_argument("--config", help="pipeline config JSON")
    v.add_argument("--out", default="verdicts.csv", help="verdict CSV path")
    v.add_argument("--jobs", type=int, default=None,
                   help="parallel scenes (default: PLAUSI_JOBS or 1)")

    e = sub.add_parser("evaluate", help="sweep thresholds over verdicts")
    e.add_argument("verdicts", help="verdict CSV from `verify`")
    e.add_argument("--thresholds", default="0:2:101",
                   help="lo:hi:n sweep or comma-separated values")
    e.add_argument("--out", default=".", help="output directory")

    r = sub.add_parser("report", help="summarize verdicts")
    r.add_argument("verdicts", help="verdict CSV from `verify`")
    r.add_argument("--out", help="also write the report to this file")

    t = sub.add_parser("trace", help="trace one hypothesis")
    t.add_argument("--bundle", required=True, help="scene bundle directory")
    t.add_argument("--trace-id", required=True, help="hypothesis id")
    t.add_argument("--config", help="pipeline config JSON")
    t.add_argument("--out", default=".", help="output directory")
    return p


def _load_pipeline_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path) as fh:
        return pipeline_config_from_dict(json.load(fh))


def _load_manifold_for(cfg_path):
    if cfg_path:
        with open(cfg_path) as fh:
            d = json.load(fh)
        if "manifold_file" in d:
            return load_manifold(d["manifold_file"])
    return default_manifold()


def _parse_thresholds(text: str) -> np.ndarray:
    if ":" in text:
        lo, hi, n = text.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    return np.array([float(x) for x in text.split(",")])


# --- generate ------------------------------------------------------------------

def _scene_spec_from_dict(d: dict, seed: int) -> SceneSpec:
    d = dict(d)
    lidar = LidarConfig(**d.pop("lidar", {}))
    return SceneSpec(lidar=lidar, seed=seed, **d)


def _cmd_generate(args) -> int:
    with open(args.spec) as fh:
        spec = json.load(fh)
    n_scenes = spec.get("n_scenes", 1)
    n_hyp = spec.get("hypotheses_per_scene", 10)
    perturb = PerturbSpec(**spec.get("perturb", {}))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    index = []
    for i in range(n_scenes):
        scene_seed = args.seed + i
        scene_spec = _scene_spec_from_dict(spec.get("scene", {}), scene_seed)
        generated = generate_scene(scene_spec)
        hyps = perturb_hypotheses(generated.gt_boxes, perturb,
                                  args.seed + 10_000 + i, generated.plane,
                                  n=n_hyp, id_prefix=f"s{i:04d}")
        scene_id = f"scene_{i:04d}"
        bundle_io.write_scene_bundle(out / scene_id, generated, hyps,
                                     scene_id, scene_seed)
        index.append(scene_id)
    bundle_io._dump_json(out / "index.json",
                         {"format": bundle_io.BUNDLE_FORMAT, "scenes": index})
    print(f"wrote {n_scenes} scene bundle(s) to {out}")
    return 0


# --- verify --------------------------------------------------------------------

_WORKER_CTX = {}


def _verify_one_dir(scene_dir):
    cfg = _WORKER_CTX["cfg"]
    manifold = _WORKER_CTX["manifold"]
    scene_id, scene, hyps, _ = bundle_io.load_scene_bundle(scene_dir)
    verdicts = verify_scene(scene, hyps, manifold, cfg)
    return [(scene_id, v) for v in verdicts]


def _cmd_verify(args) -> int:
    cfg = _load_pipeline_config(args.config)
    manifold = _load_manifold_for(args.config)
    scene_dirs = bundle_io.find_scene_dirs(args.bundle)
    jobs = bundle_io.resolve_jobs(args.jobs)

    _WORKER_CTX.update(cfg=cfg, manifold=manifold)
    if jobs == 1 or len(scene_dirs) == 1:
        chunks = [_verify_one_dir(d) for d in scene_dirs]
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_verify_one_dir, scene_dirs))

    rows = [row for chunk in chunks for row in chunk]
    bundle_io.write_verdicts_csv(args.out, rows)
    n_plausible = sum(v.plausible for _, v in rows)
    print(f"verified {len(rows)} hypotheses across {len(scene_dirs)} "
          f"scene(s); {n_plausible} plausible -> {args.out}")
    return 0


# --- evaluate / report ----------------------------------------------------------

def _cmd_evaluate(args) -> int:
    rows = bundle_io.read_verdicts_csv(args.verdicts)
    if any(not r["label"] for r in rows):
        raise PlausiverifyError("evaluate needs labeled verdicts")
    energies = [r["final_energy"] for r in rows]
    labels = [r["label"] for r in rows]
    thresholds = _parse_thresholds(args.thresholds)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    roc = metrics.sweep_roc(energies, labels, thresholds)
    pr = metrics.pr_curve(energies, labels, thresholds)
    metrics.write_roc_csv(out / "roc.csv", roc)
    metrics.write_pr_csv(out / "pr.csv", pr)

    with open(out / "summary.txt", "w") as fh:
        fh.write(_report_text(rows))
    print(f"wrote roc.csv, pr.csv, summary.txt to {out}")
    return 0


def _report_text(rows, kappa: float = 0.5) -> str:
    lines = [f"verdicts: {len(rows)}"]
    stages = Counter(r["stage"] for r in rows)
    lines.append("gate stages:")
    for stage in sorted(stages):
        lines.append(f"  {stage}: {stages[stage]}")
    labeled = [r for r in rows if r["label"]]
    if labeled:
        e = np.array([r["final_energy"] for r in labeled])
        pos = np.array([r["label"] == "TP" for r in labeled])
        pred = np.array([r["plausible"] == 1 for r in labeled])
        tp = int(np.sum(pred & pos))
        fp = int(np.sum(pred & ~pos))
        fn = int(np.sum(~pred & pos))
        tn = int(np.sum(~pred & ~pos))
        lines.append(f"labels: {int(pos.sum())} TP / {int((~pos).sum())} FP")
        lines.append(f"confusion at kappa={kappa}: "
                     f"tp={tp} fp={fp} fn={fn} tn={tn}")
        if tp + fn:
            lines.append(f"tpr: {tp / (tp + fn):.4f}")
        if fp + tn:
            lines.append(f"fpr: {fp / (fp + tn):.4f}")
        lines.append(f"mean energy (TP labels): {float(np.mean(e[pos])):.4f}"
                     if pos.any() else "mean energy (TP labels): n/a")
        lines.append(f"mean energy (FP labels): {float(np.mean(e[~pos])):.4f}"
                     if (~pos).any() else "mean energy (FP labels): n/a")
    return "\n".join(lines) + "\n"


def _cmd_report(args) -> int:
    rows = bundle_io.read_verdicts_csv(args.verdicts)
    text = _report_text(rows)
    print(text, end="")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


# --- trace -----------------------------------------------------------------------

def _cmd_trace(args) -> int:
    cfg = _load_pipeline_config(args.config)
    manifold = _load_manifold_for(args.config)
    _, scene, hyps, _ = bundle_io.load_scene_bundle(args.bundle)
    matches = [h for h in hyps if h.id == args.trace_id]
    if not matches:
        raise PlausiverifyError(f"hypothesis {args.trace_id!r} not in bundle")
    h = matches[0]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    verdict, artifacts = verify_hypothesis(h, scene, manifold, cfg,
                                           return_artifacts=True)
    print(f"{h.id}: stage={verdict.stage} plausible={verdict.plausible} "
          f"final_energy={verdict.final_energy:.6g}")
    if "trace1" in artifacts:
        optim.dump_trace_csv(artifacts["trace1"], out / "trace_step1.csv")
        optim.dump_trace_csv(artifacts["trace2"], out / "trace_step2.csv")
        ctx = artifacts["ctx"]
        for name, xi in (("initial", artifacts["x0"]),
                         ("step1", artifacts["x1"]),
                         ("step2", artifacts["x2"])):
            pose, z = unpack_state(xi)
            sil = render_silhouette(manifold, np.clip(z, -1, 1),
                                    pose.normalized(), scene.cam, ctx.region,
                                    cfg.render)
            bundle_io.write_silhouette_pgm(out / f"sil_{name}.pgm", sil)
        print(f"wrote traces and silhouettes to {out}")
    else:
        print("hypothesis was gated before optimization; no traces")
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "verify": _cmd_verify,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "trace": _cmd_trace,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    try:
        return _COMMANDS[args.command](args)
    except (PlausiverifyError, OSError, json.JSONDecodeError, KeyError,
            ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
