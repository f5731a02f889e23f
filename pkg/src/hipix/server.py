"""HTTP service exposing a built hierarchy to the explorer UI.

Everything on disk is read-only; the only computation triggered over
HTTP is subset refinement plus its embedding, which runs asynchronously
in a small worker pool with polled progress. Completed refinements are
cached by (selection, gamma, seed), so identical requests return
identical results without re-optimizing.
"""

from __future__ import annotations

import hashlib
import itertools
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import DataError
from . import colorize as cz
from . import embedding as emb
from . import graph as gr
from . import hierarchy as hi
from . import image as im
from . import walks as wk
from .fileio import rle_encode
from .refinement import RefinementRequest, refine_selection

logger = logging.getLogger(__name__)


@dataclass
class ServerConfig:
    hierarchy_path: str
    image_path: str
    t0_path: str
    graph_path: str | None = None
    embeddings_dir: str | None = None
    kernel: str = "tsne"
    point_cap: int = emb.DESK_SCALE_CAP
    refine_iters: int = 500
    workers: int = 2
    percentile: float | None = 0.98


@dataclass
class _Job:
    status: str = "queued"  # queued | running | done | failed
    progress: float = 0.0
    result_ref: str | None = None
    error: str | None = None


@dataclass
class SessionState:
    config: ServerConfig
    hierarchy: hi.Hierarchy
    image: im.HighDimImage
    provenance: str
    graph: gr.NeighborGraph | None = None
    sims_cache: dict = field(default_factory=dict)
    means_cache: dict = field(default_factory=dict)
    embeddings: dict = field(default_factory=dict)
    jobs: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    refine_cache: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)
    job_counter: "itertools.count" = field(default_factory=itertools.count)

    def level_similarities(self, level: int) -> emb.LevelSimilarities:
        with self.lock:
            cached = self.sims_cache.get(level)
        if cached is not None:
            return cached
        if level == 0:
            if self.graph is None or self.graph.probabilities is None:
                raise DataError("level 0 needs a calibrated graph cache")
            sims = emb.graph_joint_probabilities(self.graph)
        else:
            D = emb.level_dissimilarities(self.hierarchy.transitions[level])
            sims = emb.level_probabilities(D, kernel=self.config.kernel, level=level)
        with self.lock:
            self.sims_cache[level] = sims
        return sims

    def level_means(self, level: int) -> np.ndarray:
        with self.lock:
            cached = self.means_cache.get(level)
        if cached is not None:
            return cached
        lv = self.hierarchy.levels[level]
        means = emb.superpixel_means(self.image.as_features(), lv.labels, lv.m)
        with self.lock:
            self.means_cache[level] = means
        return means


def _load_state(config: ServerConfig) -> SessionState:
    hierarchy_path = Path(config.hierarchy_path)
    if not hierarchy_path.exists():
        raise DataError(f"missing hierarchy file: {hierarchy_path}")
    provenance = hashlib.sha256(hierarchy_path.read_bytes()).hexdigest()
    T0 = wk.load_transition(config.t0_path)
    hierarchy = hi.load_hierarchy(hierarchy_path, T0=T0)
    image = im.load_image(config.image_path)
    if config.percentile is not None:
        image = im.preprocess_clip_normalize(image, config.percentile)
    if image.n_pixels != hierarchy.width * hierarchy.height:
        raise DataError("image and hierarchy disagree on pixel count")
    graph = gr.load_graph(config.graph_path) if config.graph_path else None
    state = SessionState(
        config=config,
        hierarchy=hierarchy,
        image=image,
        provenance=provenance,
        graph=graph,
    )
    if config.embeddings_dir:
        for level in range(hierarchy.n_levels):
            path = Path(config.embeddings_dir) / f"level_{level}.emb"
            if path.exists():
                state.embeddings[level] = emb.load_embedding(path)
    return state


def _selection_key(level: int, ids: np.ndarray, gamma, seed: int) -> str:
    digest = hashlib.sha256()
    digest.update(np.sort(np.asarray(ids, dtype=np.int64)).tobytes())
    digest.update(f"|{level}|{gamma}|{seed}".encode())
    return digest.hexdigest()[:16]


def _run_refinement(state: SessionState, job_id: str, ref: str, req: RefinementRequest, seed: int):
    job = state.jobs[job_id]
    try:
        job.status = "running"
        sims = state.level_similarities(req.level - 1)
        result = refine_selection(state.hierarchy, sims, req)
        job.progress = 0.1
        parent_emb = state.embeddings.get(req.level)
        if parent_emb is not None:
            parent_of = state.hierarchy.levels[req.level - 1].parent
            init = emb.parent_initialize(
                parent_emb.coords, parent_of[result.subset], seed=seed
            )
        else:
            means = state.level_means(req.level - 1)[result.subset]
            init = emb.pca_initialize(means, seed=seed)

        def report(done: int, total: int) -> None:
            job.progress = 0.1 + 0.9 * done / total

        layout = emb.optimize_layout(
            result.P,
            init,
            iters=state.config.refine_iters,
            seed=seed,
            progress=report,
        )
        with state.lock:
            state.results[ref] = {
                "level": req.level - 1,
                "subset": result.subset,
                "isolated": result.isolated,
                "coords": layout.coords,
            }
        job.progress = 1.0
        job.result_ref = ref
        job.status = "done"
    except Exception as exc:  # report through the job table, not the socket
        logger.exception("refinement job %s failed", job_id)
        job.error = str(exc)
        job.status = "failed"


def create_app(config: ServerConfig):
    from fastapi import FastAPI, HTTPException, Request, Response
    from fastapi.responses import JSONResponse

    state = _load_state(config)
    pool = ThreadPoolExecutor(max_workers=max(1, config.workers))
    app = FastAPI(title="hipix explorer", version="0.1")
    app.state.session = state

    @app.middleware("http")
    async def add_provenance(request: Request, call_next):
        response = await call_next(request)
        response.headers["X-Hierarchy-Hash"] = state.provenance
        return response

    def _level_or_400(level: int) -> hi.SuperpixelLevel:
        if not 0 <= level < state.hierarchy.n_levels:
            raise HTTPException(status_code=400, detail=f"no level {level}")
        return state.hierarchy.levels[level]

    @app.get("/api/meta")
    def meta():
        h = state.hierarchy
        return {
            "width": h.width,
            "height": h.height,
            "channels": state.image.channels,
            "channel_names": state.image.channel_names,
            "levels": h.n_levels,
            "level_sizes": h.level_sizes(),
            "stalled": h.stalled,
            "provenance": state.provenance,
            "point_cap": config.point_cap,
        }

    @app.get("/api/levels")
    def levels():
        return [
            {"level": lv.level, "m": lv.m, "has_embedding": lv.level in state.embeddings}
            for lv in state.hierarchy.levels
        ]

    @app.get("/api/level/{level}/labels")
    def labels(level: int):
        lv = _level_or_400(level)
        rle = rle_encode(lv.labels.astype(np.uint32))
        return Response(
            content=rle.astype("<u4").tobytes(), media_type="application/octet-stream"
        )

    def _embedding_or_503(level: int) -> emb.Embedding:
        e = state.embeddings.get(level)
        if e is None:
            raise HTTPException(
                status_code=503, detail=f"no embedding artifact for level {level}"
            )
        return e

    @app.get("/api/level/{level}/embedding")
    def level_embedding(level: int):
        _level_or_400(level)
        e = _embedding_or_503(level)
        return Response(
            content=e.coords.astype("<f4").tobytes(),
            media_type="application/octet-stream",
        )

    @app.get("/api/level/{level}/colorized")
    def colorized(level: int):
        lv = _level_or_400(level)
        e = _embedding_or_503(level)
        raster = cz.colorize_labels(
            lv.labels, e.coords, state.hierarchy.height, state.hierarchy.width
        )
        return Response(content=cz.png_bytes(raster), media_type="image/png")

    @app.get("/api/channel/{channel}/means")
    def channel_means(channel: int, level: int = 0):
        if not 0 <= channel < state.image.channels:
            raise HTTPException(status_code=400, detail=f"no channel {channel}")
        _level_or_400(level)
        means = state.level_means(level)[:, channel]
        return Response(
            content=means.astype("<f4").tobytes(),
            media_type="application/octet-stream",
        )

    @app.post("/api/refine")
    def refine(body: dict):
        try:
            level = int(body["level"])
            ids = np.asarray(body["ids"], dtype=np.int64)
            gamma = body.get("gamma")
            gamma = None if gamma is None else float(gamma)
            seed = int(body.get("seed", 0))
            req = RefinementRequest(level=level, selected=ids, gamma=gamma)
            if not 1 <= level < state.hierarchy.n_levels:
                raise DataError(f"no refinable level {level}")
            if ids.min() < 0 or ids.max() >= state.hierarchy.levels[level].m:
                raise DataError("selection references nonexistent superpixels")
        except (KeyError, TypeError, ValueError, DataError) as exc:
            raise HTTPException(status_code=400, detail=f"invalid selection: {exc}")
        child_count = state.hierarchy.children_of(level, req.selected).shape[0]
        if child_count > config.point_cap:
            raise HTTPException(
                status_code=413,
                detail=f"{child_count} children exceed the point cap {config.point_cap}",
            )
        if level - 1 == 0 and state.graph is None:
            raise HTTPException(
                status_code=503, detail="refining to level 0 needs the graph cache"
            )
        ref = _selection_key(level, req.selected, req.gamma, seed)
        with state.lock:
            if ref in state.refine_cache:
                job_id = state.refine_cache[ref]
                return {"job_id": job_id, "cached": True}
            job_id = f"job-{next(state.job_counter)}"
            state.jobs[job_id] = _Job()
            state.refine_cache[ref] = job_id
        pool.submit(_run_refinement, state, job_id, ref, req, seed)
        return {"job_id": job_id, "cached": False}

    @app.get("/api/job/{job_id}")
    def job_status(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=400, detail=f"unknown job {job_id}")
        return {
            "status": job.status,
            "progress": round(job.progress, 4),
            "result_ref": job.result_ref,
            "error": job.error,
        }

    def _result_or_400(ref: str) -> dict:
        with state.lock:
            result = state.results.get(ref)
        if result is None:
            raise HTTPException(status_code=400, detail=f"unknown refinement {ref}")
        return result

    @app.get("/api/refined/{ref}/subset")
    def refined_subset(ref: str):
        result = _result_or_400(ref)
        return JSONResponse(
            {
                "level": result["level"],
                "subset": result["subset"].tolist(),
                "isolated": np.flatnonzero(result["isolated"]).tolist(),
            }
        )

    @app.get("/api/refined/{ref}/embedding")
    def refined_embedding(ref: str):
        result = _result_or_400(ref)
        return Response(
            content=result["coords"].astype("<f4").tobytes(),
            media_type="application/octet-stream",
        )

    return app
