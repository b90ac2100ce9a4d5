"""Command-line interface binding the library to the dataset layout.

Subcommands: synth, refine, check, fuse, viewsel, loss. Every command is a
thin veneer over library calls and produces numerically identical results.
Exit codes: 0 success, 1 contract/parse/usage error, 2 I/O failure.

``--config FILE`` supplies flat ``key=value`` defaults (keys match long
option names); explicit command-line flags override the file.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import io as mio
from .cross_view import CheckConfig, DepthGallery, quality_mask
from .errors import ContractError, MvsKitError, ParseError
from .fusion import fuse, write_ply
from .losses import LossWeights, total_loss
from .maps import DepthMap
from .refine import (
    RefineConfig,
    WarpMedianTeacher,
    check_config_for,
    refine_depth,
)
from .synthetic import RigSpec, SceneSpec, render
from .view_selection import ViewScoreMatrix, compute_view_scores, sample_by_score, select_top_k


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _add_check_flags(p):
    p.add_argument("--tau1", type=float, default=0.5, help="confidence threshold")
    p.add_argument("--tau2", type=float, default=0.5, help="pixel reprojection threshold")
    p.add_argument("--tau3", type=float, default=0.01, help="relative depth threshold")
    p.add_argument("--tau4", type=int, default=4, help="minimum passing source views")
    p.add_argument("--sources", type=int, default=10, help="source views per check")


def _check_config(args, n_views: int) -> CheckConfig:
    base = CheckConfig(tau1=args.tau1, tau2=args.tau2, tau3=args.tau3,
                       tau4=max(1, min(args.tau4, args.sources)), n_sources=args.sources)
    return check_config_for(n_views, base)


def _scores_from_pairs(pairs, n: int) -> ViewScoreMatrix:
    m = np.zeros((n, n))
    for ref, entries in pairs.items():
        for sid, score in entries:
            m[ref, sid] = score
    np.fill_diagonal(m, 0.0)
    return ViewScoreMatrix(m)


def _cmd_synth(args) -> int:
    rig = RigSpec(count=args.views, kind=args.rig, spacing=args.spacing,
                  radius=args.radius, look_at=(0.0, 0.0, args.plane_depth))
    spec = SceneSpec(
        surface={"plane": "plane", "sphere": "sphere", "step": "step"}[args.scene],
        resolution=(args.height, args.width),
        rig=rig,
        texture_seed=args.seed,
        noise_sigma=args.noise,
        noise_seed=args.seed,
        plane_depth=args.plane_depth,
    )
    scene = render(spec)
    mio.write_scene(scene, args.out, image_format=args.image_format)
    print(f"wrote {len(scene.views)} views to {args.out}")
    return 0


def _cmd_viewsel(args) -> int:
    layout = mio.DatasetLayout(Path(args.input))
    bundle = mio.load_dataset(args.input, with_images=False)
    n = len(bundle.cameras)
    if args.anchors:
        anchors, vis = mio.read_anchors(args.anchors)
        scores = compute_view_scores(bundle.cameras, anchors, vis)
    elif layout.anchors_file.exists():
        anchors, vis = mio.read_anchors(layout.anchors_file)
        scores = compute_view_scores(bundle.cameras, anchors, vis)
    elif bundle.pairs:
        scores = _scores_from_pairs(bundle.pairs, n)
    else:
        raise ContractError("no anchors file and no pair.txt to score views from")

    k = min(args.k, n - 1)
    if args.policy == "topk":
        sel = select_top_k(scores, args.ref, k)
    else:
        sel = sample_by_score(scores, args.ref, k, args.seed)
    print(" ".join(str(s) for s in sel))
    if args.write_pair:
        pairs = {}
        for ref in range(n):
            order = select_top_k(scores, ref, n - 1)
            pairs[ref] = [(j, float(scores.score[ref, j])) for j in order]
        mio.write_pair(layout.pair_file, pairs)
        print(f"wrote {layout.pair_file}")
    return 0


def _cmd_check(args) -> int:
    layout = mio.DatasetLayout(Path(args.input))
    bundle = mio.load_dataset(args.input, with_images=False)
    n = len(bundle.cameras)
    cfg = _check_config(args, n)
    gallery = DepthGallery()
    for i in range(n):
        gallery.update(i, bundle.depths[i], bundle.confidences[i])
    scores = _scores_from_pairs(bundle.pairs, n) if bundle.pairs else None
    layout.masks.mkdir(parents=True, exist_ok=True)
    for ref in range(n):
        if scores is not None:
            srcs = select_top_k(scores, ref, cfg.n_sources)
        else:
            srcs = [j for j in range(n) if j != ref][: cfg.n_sources]
        qm = quality_mask(ref, gallery, bundle.cameras, srcs, cfg)
        mio.write_pgm(layout.mask_path(ref), qm.mask)
        print(f"view {ref}: avg_mask {qm.ratio:.6f}")
    return 0


def _cmd_fuse(args) -> int:
    bundle = mio.load_dataset(args.input, with_images=True)
    n = len(bundle.cameras)
    cfg = CheckConfig(tau1=args.tau1, tau2=args.tau2, tau3=args.tau3,
                      tau4=max(1, min(args.tau4, n - 1)),
                      n_sources=min(args.sources, n - 1))
    pairs = None
    if bundle.pairs:
        pairs = {r: [sid for sid, _ in e][: cfg.n_sources] for r, e in bundle.pairs.items()}
    cloud = fuse(
        bundle.depths, bundle.confidences, [im.data for im in bundle.images],
        bundle.cameras, pairs=pairs, geom_cfg=cfg, conf_threshold=args.conf,
    )
    write_ply(cloud, args.out)
    print(f"fused {len(cloud)} points -> {args.out}")
    return 0


def _weights(args) -> LossWeights:
    return LossWeights(
        lambda_pc=args.lambda_pc, lambda_dc=args.lambda_dc,
        lambda_dc_high=args.lambda_dc_high, lambda_dc_low=args.lambda_dc_low,
        lambda_ssim=args.lambda_ssim, lambda_smooth=args.lambda_smooth,
    )


def _add_weight_flags(p):
    p.add_argument("--lambda-pc", type=float, default=0.8)
    p.add_argument("--lambda-dc", type=float, default=0.1)
    p.add_argument("--lambda-dc-high", type=float, default=0.5)
    p.add_argument("--lambda-dc-low", type=float, default=0.1)
    p.add_argument("--lambda-ssim", type=float, default=0.2)
    p.add_argument("--lambda-smooth", type=float, default=0.0067)


def _cmd_loss(args) -> int:
    bundle = mio.load_dataset(args.input, with_images=True)
    ref = args.ref
    n = len(bundle.cameras)
    if not (0 <= ref < n):
        raise ContractError(f"reference view {ref} out of range (n={n})")
    if bundle.pairs and ref in bundle.pairs:
        srcs = [sid for sid, _ in bundle.pairs[ref]]
    else:
        srcs = [j for j in range(n) if j != ref]
    srcs = srcs[: args.k] if args.k else srcs
    pseudo = None
    if args.pseudo_dir:
        pseudo = mio.read_depth(Path(args.pseudo_dir) / f"{ref:08d}.pfm")
    rep = total_loss(
        bundle.images[ref], [bundle.images[s] for s in srcs], bundle.depths[ref],
        bundle.cameras[ref], [bundle.cameras[s] for s in srcs],
        pseudo=pseudo, weights=_weights(args),
    )
    print(f"total {rep.total:.17g}")
    for name in sorted(rep.components):
        print(f"{name} {rep.components[name]:.17g} weight {rep.weights[name]:.17g}")
    for flag in rep.flags:
        print(f"flag {flag}")
    return 0


def _cmd_refine(args) -> int:
    layout = mio.DatasetLayout(Path(args.input))
    bundle = mio.load_dataset(args.input, with_images=True)
    n = len(bundle.cameras)
    ref = args.ref
    if not (0 <= ref < n):
        raise ContractError(f"reference view {ref} out of range (n={n})")
    if bundle.pairs:
        scores = _scores_from_pairs(bundle.pairs, n)
    elif layout.anchors_file.exists():
        anchors, vis = mio.read_anchors(layout.anchors_file)
        scores = compute_view_scores(bundle.cameras, anchors, vis)
    else:
        raise ContractError("refine needs pair.txt or anchors.txt for view scores")

    ablations = set(args.ablation or [])
    cfg = RefineConfig(
        iterations=args.iters,
        step_size=args.step,
        weights=_weights(args),
        n_teacher=args.teacher_views,
        n_student=args.student_views,
        seed=args.seed,
        gallery_cadence=args.cadence,
        check=_check_config(args, n),
        freeze_teacher="no-freeze" not in ablations,
        student_policy="top_k" if "top-k-student" in ablations else "score",
        use_region_weights="single-lambda" not in ablations,
        normalize_step=not args.plain_step,
    )
    init = bundle.depths[ref]
    if args.init_noise > 0:
        rng = np.random.default_rng(args.seed)
        init = DepthMap(
            init.data * (1 + args.init_noise * rng.standard_normal(init.shape)),
            init.valid,
        )
    teacher = WarpMedianTeacher(bundle.depths, bundle.cameras)
    refined, trace = refine_depth(
        init, [im.data for im in bundle.images], bundle.cameras, ref, scores,
        teacher, cfg,
    )
    mio.write_depth(args.out, refined)
    if args.trace:
        keys = sorted({k for row in trace for k in row})
        with open(args.trace, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iteration"] + keys)
            for i, row in enumerate(trace):
                w.writerow([i] + [row.get(k, "") for k in keys])
    print(f"refined view {ref}: final total {trace[-1]['total']:.8g} -> {args.out}")
    return 0


def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value defaults file")
    common.add_argument("--seed", type=int, default=0, help="global RNG seed")
    common.add_argument("--threads", type=int, default=1,
                        help="parallelism cap (results are identical for any value)")

    top = _Parser(prog="mvskit", description=__doc__.splitlines()[0], parents=[common])
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_command(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add_command("synth", help="render a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--scene", choices=["plane", "sphere", "step"], default="plane")
    p.add_argument("--views", type=int, default=5)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=80)
    p.add_argument("--rig", choices=["line", "arc"], default="line")
    p.add_argument("--spacing", type=float, default=0.12)
    p.add_argument("--radius", type=float, default=4.0)
    p.add_argument("--plane-depth", type=float, default=4.0)
    p.add_argument("--noise", type=float, default=0.0, help="image noise sigma")
    p.add_argument("--image-format", choices=["ppm", "png"], default="ppm")
    p.set_defaults(func=_cmd_synth)

    p = add_command("viewsel", help="select source views by score")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--ref", type=int, default=0)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--policy", choices=["topk", "sample"], default="topk")
    p.add_argument("--anchors", help="anchor-point file for scoring")
    p.add_argument("--write-pair", action="store_true")
    p.set_defaults(func=_cmd_viewsel)

    p = add_command("check", help="cross-view quality masks")
    p.add_argument("--in", dest="input", required=True)
    _add_check_flags(p)
    p.set_defaults(func=_cmd_check)

    p = add_command("fuse", help="fuse depth maps into a point cloud")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--conf", type=float, default=0.5)
    _add_check_flags(p)
    p.set_defaults(func=_cmd_fuse)

    p = add_command("loss", help="evaluate the loss terms for one view")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--ref", type=int, default=0)
    p.add_argument("--k", type=int, default=0, help="limit source views (0 = all)")
    p.add_argument("--pseudo-dir", help="directory of pseudo-depth PFMs")
    _add_weight_flags(p)
    p.set_defaults(func=_cmd_loss)

    p = add_command("refine", help="gradient-descent depth refinement")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--ref", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="per-iteration loss CSV")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--step", type=float, default=0.002)
    p.add_argument("--cadence", type=int, default=1)
    p.add_argument("--teacher-views", type=int, default=5)
    p.add_argument("--student-views", type=int, default=4)
    p.add_argument("--init-noise", type=float, default=0.0,
                   help="multiplicative noise applied to the initial depth")
    p.add_argument("--plain-step", action="store_true",
                   help="raw gradient steps instead of per-pixel normalization")
    p.add_argument("--ablation", action="append",
                   choices=["no-freeze", "top-k-student", "single-lambda"])
    _add_weight_flags(p)
    _add_check_flags(p)
    p.set_defaults(func=_cmd_refine)
    return top


def _load_config_defaults(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config(parser: _Parser, argv: list[str]) -> None:
    """Install config-file values as defaults on every subparser."""
    path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif a.startswith("--config="):
            path = a.split("=", 1)[1]
    if path is None:
        return
    values = _load_config_defaults(path)
    subparsers = [
        act for act in parser._actions if isinstance(act, argparse._SubParsersAction)
    ]
    for sp_action in subparsers:
        for sp in sp_action.choices.values():
            defaults = {}
            for act in sp._actions:
                if act.dest in values:
                    raw = values[act.dest]
                    if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                        defaults[act.dest] = raw.lower() in ("1", "true", "yes")
                    elif act.type is not None:
                        defaults[act.dest] = act.type(raw)
                    else:
                        defaults[act.dest] = raw
            sp.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args) or 0
    except _UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (ContractError, ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except MvsKitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
