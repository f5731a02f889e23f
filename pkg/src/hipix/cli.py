"""Command-line pipeline driver.

Subcommands cover the batch workflow end to end: convert raw data into
the image container, build the neighbor graph, run walks and the merge
hierarchy, embed levels, refine selections, recolor the image from an
embedding, score against ground truth, and serve the explorer API.

Exit codes: 0 success, 2 usage, 3 bad data, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import DataError, NumericError, __version__
from . import colorize as cz
from . import embedding as emb
from . import evaluation as ev
from . import graph as gr
from . import hierarchy as hi
from . import image as im
from . import walks as wk

logger = logging.getLogger(__name__)


def _write_manifest(target: Path, command: str, params: dict, **extra) -> None:
    """Record the run next to its output.

    ``target`` is the command's primary output; directories get a
    ``manifest.json`` inside, files get ``<name>.manifest.json`` beside
    them so runs sharing a directory never clobber each other.
    """
    manifest = {"tool": f"hipix {__version__}", "command": command, "params": params}
    manifest.update(extra)
    if target.is_dir():
        path = target / "manifest.json"
    else:
        path = target.with_name(target.name + ".manifest.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_preprocessed(path: str, percentile: float | None) -> im.HighDimImage:
    img = im.load_image(path)
    if percentile is not None:
        img = im.preprocess_clip_normalize(img, percentile)
    return img


def _parse_ids(ids: str | None, ids_file: str | None) -> np.ndarray:
    if ids_file:
        text = Path(ids_file).read_text(encoding="utf-8")
        parts = text.replace(",", " ").split()
    elif ids:
        parts = [p for p in ids.split(",") if p.strip()]
    else:
        raise DataError("provide --ids or --ids-file")
    try:
        return np.array([int(p) for p in parts], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"bad id list: {exc}") from exc


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_convert(args) -> int:
    t0 = time.perf_counter()
    src = Path(args.input)
    exclude = args.exclude_channels.split(",") if args.exclude_channels else None
    params = {
        "input": args.input,
        "labels": args.labels,
        "width": args.width,
        "height": args.height,
        "variable": args.variable,
        "exclude_channels": exclude,
    }
    if args.labels:
        if src.suffix == ".mat":
            gt = im.labels_from_mat(src, variable=args.variable)
        else:
            if args.width is None or args.height is None:
                raise DataError("CSV label input needs --width and --height")
            img = im.image_from_csv(src, args.width, args.height)
            if img.channels != 1:
                raise DataError("label CSV must have a single column")
            gt = im.GroundTruthLabels(labels=img.data[:, :, 0].astype(np.uint32))
        im.save_labels(args.output, gt)
        logger.info("wrote labels %dx%d", gt.width, gt.height)
        _write_manifest(
            Path(args.output), "convert", params,
            timings={"total_s": round(time.perf_counter() - t0, 3)},
            shape=[gt.height, gt.width],
        )
        return 0
    if src.suffix == ".mat":
        img = im.image_from_mat(src, variable=args.variable, exclude_channels=exclude)
    elif src.suffix == ".csv":
        if args.width is None or args.height is None:
            raise DataError("CSV input needs --width and --height")
        img = im.image_from_csv(src, args.width, args.height, exclude_channels=exclude)
    else:
        raise DataError(f"unsupported input format {src.suffix!r} (use .csv or .mat)")
    if not np.isfinite(img.data).all():
        bad = np.argwhere(~np.isfinite(img.data))[0]
        raise DataError(f"non-finite value at pixel ({bad[0]},{bad[1]}) channel {bad[2]}")
    im.save_image(args.output, img)
    logger.info("wrote image %dx%dx%d", img.height, img.width, img.channels)
    _write_manifest(
        Path(args.output), "convert", params,
        timings={"total_s": round(time.perf_counter() - t0, 3)},
        shape=[img.height, img.width, img.channels],
    )
    return 0


def cmd_graph(args) -> int:
    t0 = time.perf_counter()
    percentile = None if args.no_preprocess else args.percentile
    img = _load_preprocessed(args.image, percentile)
    g = gr.build_knn_graph(img, args.perplexity, exact=not args.approx, seed=args.seed)
    g = gr.symmetrize_and_connect(g, img)
    g = gr.calibrate_probabilities(g, kernel=args.kernel)
    gr.save_graph(args.output, g)
    _write_manifest(
        Path(args.output),
        "graph",
        {
            "image": args.image,
            "perplexity": g.perplexity,
            "k": g.k,
            "kernel": args.kernel,
            "exact": not args.approx,
            "percentile": percentile,
            "seed": args.seed,
        },
        timings={"total_s": round(time.perf_counter() - t0, 3)},
        n=g.n,
    )
    return 0


def cmd_hierarchy(args) -> int:
    t0 = time.perf_counter()
    percentile = None if args.no_preprocess else args.percentile
    img = _load_preprocessed(args.image, percentile)
    g = gr.load_graph(args.graph)
    if g.n != img.n_pixels:
        raise DataError(f"graph covers {g.n} vertices, image has {img.n_pixels} pixels")
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    t_walk = time.perf_counter()
    T0 = wk.run_random_walks(g, walks=args.walks, steps=args.steps, decay=args.decay, seed=args.seed)
    wk.save_transition(out_dir / "t0.bin", T0)
    t_build = time.perf_counter()
    edges = im.build_image_adjacency(img.height, img.width, args.connectivity)
    h = hi.build_hierarchy(
        img.width, img.height, edges, T0,
        max_levels=args.max_levels, bc_threshold=args.threshold,
    )
    hi.save_hierarchy(
        out_dir / "hierarchy.bin",
        h,
        extra={"connectivity": str(args.connectivity), "bc_threshold": repr(args.threshold)},
    )
    _write_manifest(
        out_dir,
        "hierarchy",
        {
            "image": args.image,
            "graph": args.graph,
            "walks": args.walks,
            "steps": args.steps,
            "decay": args.decay,
            "seed": args.seed,
            "connectivity": args.connectivity,
            "max_levels": args.max_levels,
            "threshold": args.threshold,
            "percentile": percentile,
        },
        timings={
            "walks_s": round(t_build - t_walk, 3),
            "merge_s": round(time.perf_counter() - t_build, 3),
            "total_s": round(time.perf_counter() - t0, 3),
        },
        level_sizes=h.level_sizes(),
        stalled=h.stalled,
    )
    return 0


def _load_hierarchy_with_transitions(hierarchy_path: str, t0_path: str | None) -> hi.Hierarchy:
    T0 = wk.load_transition(t0_path) if t0_path else None
    return hi.load_hierarchy(hierarchy_path, T0=T0)


def _level_similarities(h: hi.Hierarchy, level: int, kernel: str, graph_path: str | None):
    if level == 0:
        if not graph_path:
            raise DataError("level 0 probabilities need --graph")
        g = gr.load_graph(graph_path)
        if g.probabilities is None:
            raise DataError("graph cache has no calibrated probabilities")
        return emb.graph_joint_probabilities(g)
    if not h.transitions:
        raise DataError("level probabilities need --t0 to replay transitions")
    D = emb.level_dissimilarities(h.transitions[level])
    return emb.level_probabilities(D, kernel=kernel, level=level)


def _initial_coords(args, h: hi.Hierarchy, level: int, m: int) -> np.ndarray:
    if args.init == "random":
        return emb.random_initialize(m, seed=args.seed)
    if args.init == "parent":
        if not args.parent_embedding:
            raise DataError("init=parent needs --parent-embedding")
        if level + 1 >= h.n_levels:
            raise DataError("top level has no parent embedding")
        parent = emb.load_embedding(args.parent_embedding)
        return emb.parent_initialize(parent.coords, h.levels[level].parent, seed=args.seed)
    if not args.image:
        raise DataError("init=pca needs --image for superpixel means")
    percentile = None if args.no_preprocess else args.percentile
    img = _load_preprocessed(args.image, percentile)
    means = emb.superpixel_means(img.as_features(), h.levels[level].labels, m)
    return emb.pca_initialize(means, seed=args.seed)


def cmd_embed(args) -> int:
    t0 = time.perf_counter()
    h = _load_hierarchy_with_transitions(args.hierarchy, args.t0)
    if not 0 <= args.level < h.n_levels:
        raise DataError(f"hierarchy has levels 0..{h.n_levels - 1}, got {args.level}")
    sims = _level_similarities(h, args.level, args.kernel, args.graph)
    init = _initial_coords(args, h, args.level, sims.m)
    result = emb.optimize_layout(sims, init, iters=args.iters, seed=args.seed)
    base = Path(args.output)
    base.parent.mkdir(parents=True, exist_ok=True)
    emb.save_embedding(base, result)
    _write_manifest(
        base,
        "embed",
        {
            "hierarchy": args.hierarchy,
            "level": args.level,
            "iters": args.iters,
            "init": args.init,
            "seed": args.seed,
            "kernel": args.kernel,
        },
        timings={"total_s": round(time.perf_counter() - t0, 3)},
        m=sims.m,
        final_loss=float(result.trace[-1]) if result.trace.size else None,
    )
    return 0


def cmd_refine(args) -> int:
    from .refinement import RefinementRequest, refine_selection

    t0 = time.perf_counter()
    h = _load_hierarchy_with_transitions(args.hierarchy, args.t0)
    req = RefinementRequest(
        level=args.level,
        selected=_parse_ids(args.ids, args.ids_file),
        gamma=args.gamma,
    )
    sims = _level_similarities(h, args.level - 1, args.kernel, args.graph)
    result = refine_selection(h, sims, req)
    base = Path(args.output)
    base.parent.mkdir(parents=True, exist_ok=True)
    with open(base.with_suffix(".subset.txt"), "w", encoding="utf-8") as fh:
        for i in result.subset:
            fh.write(f"{i}\n")
    emb.save_similarities(
        base.with_suffix(".p.bin"),
        emb.LevelSimilarities(
            level=args.level - 1,
            P=result.P,
            kernel=args.kernel,
            perplexity_used=sims.perplexity_used,
            isolated=result.isolated,
        ),
    )
    print(f"subset size: {result.size}")
    _write_manifest(
        base, "refine",
        {
            "hierarchy": args.hierarchy,
            "level": args.level,
            "ids": req.selected.tolist(),
            "gamma": args.gamma,
            "kernel": args.kernel,
        },
        timings={"total_s": round(time.perf_counter() - t0, 3)},
        subset_size=result.size,
    )
    return 0


def cmd_colorize(args) -> int:
    t0 = time.perf_counter()
    h = hi.load_hierarchy(args.hierarchy)
    if not 0 <= args.level < h.n_levels:
        raise DataError(f"hierarchy has levels 0..{h.n_levels - 1}, got {args.level}")
    labels = h.levels[args.level].labels
    m = h.levels[args.level].m
    if args.mode == "gray":
        raster = cz.gray_raster(labels, m, h.height, h.width, seed=args.seed)
    else:
        e = emb.load_embedding(args.embedding)
        if e.coords.shape[0] != m:
            raise DataError(
                f"embedding has {e.coords.shape[0]} points, level {args.level} has {m}"
            )
        corners = cz.parse_corner_colors(args.corners) if args.corners else None
        raster = cz.colorize_labels(labels, e.coords, h.height, h.width, corners)
    cz.write_png(args.output, raster)
    _write_manifest(
        Path(args.output), "colorize",
        {
            "hierarchy": args.hierarchy,
            "embedding": args.embedding,
            "level": args.level,
            "mode": args.mode,
            "corners": args.corners,
            "seed": args.seed,
        },
        timings={"total_s": round(time.perf_counter() - t0, 3)},
    )
    return 0


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    percentile = None if args.no_preprocess else args.percentile
    img = _load_preprocessed(args.image, percentile)
    gt = im.load_labels(args.gt)
    if (gt.height, gt.width) != (img.height, img.width):
        raise DataError("ground truth size does not match the image")
    h = hi.load_hierarchy(args.hierarchy)
    curve = ev.evaluate_hierarchy(h, img, gt)
    lines = curve.csv_lines()
    summary = curve.summary()
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + f"\n# {summary}\n", encoding="utf-8")
    print(summary)
    _write_manifest(
        out, "eval",
        {
            "hierarchy": args.hierarchy,
            "image": args.image,
            "gt": args.gt,
            "percentile": percentile,
        },
        timings={"total_s": round(time.perf_counter() - t0, 3)},
        level_sizes=h.level_sizes(),
        aue=curve.aue, aev=curve.aev,
        log_aue=curve.log_aue, log_aev=curve.log_aev,
    )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import ServerConfig, create_app

    app = create_app(
        ServerConfig(
            hierarchy_path=args.hierarchy,
            image_path=args.image,
            t0_path=args.t0,
            graph_path=args.graph,
            embeddings_dir=args.embeddings,
            kernel=args.kernel,
            point_cap=args.point_cap,
            refine_iters=args.iters,
            workers=int(os.environ.get("HIPIX_WORKERS", "2")),
            percentile=None if args.no_preprocess else args.percentile,
        )
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_percentile(p: argparse.ArgumentParser) -> None:
    p.add_argument("--percentile", type=float, default=0.98,
                   help="clip percentile applied before use (default 0.98)")
    p.add_argument("--no-preprocess", action="store_true",
                   help="skip clipping and per-channel normalization")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hipix",
        description="Superpixel hierarchies and embeddings for high-dimensional images",
    )
    parser.add_argument("--version", action="version", version=f"hipix {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="ingest CSV or MATLAB data into the container format")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--variable", help="MATLAB variable name (default: largest array)")
    p.add_argument("--exclude-channels", help="comma-separated channel names to drop")
    p.add_argument("--labels", action="store_true", help="write a u32 label container")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("graph", help="build and calibrate the attribute kNN graph")
    p.add_argument("--image", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--kernel", choices=("tsne", "umap"), default="tsne")
    p.add_argument("--approx", action="store_true", help="approximate kNN search")
    p.add_argument("--seed", type=int, default=0)
    _add_percentile(p)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("hierarchy", help="run walks and build the merge hierarchy")
    p.add_argument("--image", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--walks", type=int, default=wk.DEFAULT_WALKS)
    p.add_argument("--steps", type=int, default=wk.DEFAULT_STEPS)
    p.add_argument("--decay", type=float, default=wk.DEFAULT_DECAY)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--connectivity", type=int, choices=(4, 8), default=4)
    p.add_argument("--max-levels", type=int, default=hi.DEFAULT_MAX_LEVELS)
    p.add_argument("--threshold", type=float, default=0.0, help="minimum merge similarity")
    _add_percentile(p)
    p.set_defaults(func=cmd_hierarchy)

    p = sub.add_parser("embed", help="optimize a 2-D layout for one level")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--t0", help="transition matrix cache (levels above 0)")
    p.add_argument("--graph", help="graph cache (level 0)")
    p.add_argument("--image", help="image container (pca init)")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--init", choices=("pca", "random", "parent"), default="pca")
    p.add_argument("--parent-embedding", help="embedding file of level+1 (parent init)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--kernel", choices=("tsne", "umap"), default="tsne")
    p.add_argument("--output", required=True, help="output base path")
    _add_percentile(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("refine", help="slice a selection down one level")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--t0", help="transition matrix cache")
    p.add_argument("--graph", help="graph cache (refining level 1)")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--ids", help="comma-separated superpixel ids")
    p.add_argument("--ids-file", help="file with whitespace/comma-separated ids")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--kernel", choices=("tsne", "umap"), default="tsne")
    p.add_argument("--output", required=True, help="output base path")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("colorize", help="recolor the image from an embedding")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--embedding", help="embedding blob (bilinear mode)")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", choices=("bilinear", "gray"), default="bilinear")
    p.add_argument("--corners", help="4 comma-separated RRGGBB corner colors")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_colorize)

    p = sub.add_parser("eval", help="score hierarchy levels against ground truth")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--output", required=True, help="CSV output path")
    _add_percentile(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve the explorer API over HTTP")
    p.add_argument("--hierarchy", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--t0", required=True)
    p.add_argument("--graph")
    p.add_argument("--embeddings", help="directory of per-level embedding files")
    p.add_argument("--kernel", choices=("tsne", "umap"), default="tsne")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--point-cap", type=int, default=emb.DESK_SCALE_CAP)
    p.add_argument("--iters", type=int, default=500, help="refinement embedding iterations")
    _add_percentile(p)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
