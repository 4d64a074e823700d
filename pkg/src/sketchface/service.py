"""Local HTTP/JSON service wrapping editing sessions.

One mutating request per session at a time; propagation runs on background
threads and is polled through job handles. All bodies are JSON; previews and
frames are PNG.
"""
from __future__ import annotations

import glob
import io
import os
import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse, Response
from PIL import Image
from pydantic import BaseModel

from .session import Session, SessionError
from .sketch_mapping import SketchMappingError, Stroke

PREVIEW_MAX_SIDE = 512


class CreateSession(BaseModel):
    bundle_path: str


class StrokesBody(BaseModel):
    frame: int = 0
    strokes: list  # [{"order": int, "points": [[x, y], ...]}, ...]


class RefineBody(BaseModel):
    erased_region: list
    replacement_stroke: list


class PropagateBody(BaseModel):
    warp_background: bool = True


class Job:
    def __init__(self):
        self.id = uuid.uuid4().hex[:12]
        self.done_frames = 0
        self.total_frames = 1
        self.finished = False
        self.error = None
        self.paths = []

    @property
    def progress(self):
        return self.done_frames / max(self.total_frames, 1)


def create_app(sessions_dir="./sessions"):
    app = FastAPI(title="sketchface")
    sessions = {}
    jobs = {}

    # reload any persisted sessions so state survives restarts
    for state_path in sorted(glob.glob(os.path.join(sessions_dir, "*.json"))):
        try:
            s = Session.load(state_path)
            sessions[s.id] = s
        except Exception:
            continue

    def get_session(sid):
        if sid not in sessions:
            raise HTTPException(404, f"unknown session {sid}")
        return sessions[sid]

    @app.post("/sessions")
    def create_session(body: CreateSession):
        try:
            s = Session(body.bundle_path, sessions_dir)
        except Exception as exc:
            raise HTTPException(400, f"bundle load failed: {exc}")
        sessions[s.id] = s
        s.save()
        return {"id": s.id, "frame_count": s.bundle.frame_count,
                "image_size": list(s.bundle.camera.image_size),
                "groups": [n for n, _ in s.bundle.group_specs]}

    @app.get("/sessions/{sid}/frames/{t}/landmarks")
    def frame_landmarks(sid: str, t: int):
        s = get_session(sid)
        if not (0 <= t < s.bundle.frame_count):
            raise HTTPException(400, f"frame {t} out of range")
        return {"landmarks": s.landmarks(t).tolist(),
                "groups": {n: list(idx) for n, idx in s.bundle.group_specs}}

    @app.post("/sessions/{sid}/strokes")
    def submit_strokes(sid: str, body: StrokesBody):
        s = get_session(sid)
        try:
            strokes = [Stroke(np.array(st["points"], dtype=np.float64),
                              int(st["order"])) for st in body.strokes]
            with s.lock:
                return s.submit_strokes(body.frame, strokes)
        except (SessionError, SketchMappingError, KeyError) as exc:
            raise HTTPException(400, str(exc))

    @app.post("/sessions/{sid}/apply")
    def apply_edit(sid: str):
        s = get_session(sid)
        try:
            with s.lock:
                return s.apply_edit()
        except SessionError as exc:
            raise HTTPException(400, str(exc))

    @app.get("/sessions/{sid}/contours")
    def get_contours(sid: str, yaw: float = 0.0, pitch: float = 0.0):
        s = get_session(sid)
        with s.lock:
            cmap = s.get_contours(yaw, pitch)
        return cmap.to_json()

    @app.post("/sessions/{sid}/refine")
    def submit_refine(sid: str, body: RefineBody):
        s = get_session(sid)
        try:
            with s.lock:
                return s.submit_refine(body.erased_region, body.replacement_stroke)
        except (SessionError, ValueError) as exc:
            raise HTTPException(400, str(exc))

    @app.post("/sessions/{sid}/propagate")
    def run_propagation(sid: str, body: PropagateBody = PropagateBody()):
        s = get_session(sid)
        job = Job()
        job.total_frames = s.bundle.frame_count
        jobs[job.id] = job

        def progress(done, total):
            job.done_frames = done
            job.total_frames = total

        def work():
            try:
                with s.lock:
                    job.paths = s.run_propagation(
                        progress_cb=progress, warp_background=body.warp_background)
            except Exception as exc:  # surfaced through the job handle
                job.error = str(exc)
            finally:
                job.finished = True

        threading.Thread(target=work, daemon=True).start()
        return {"job": job.id}

    @app.get("/sessions/{sid}/jobs/{jid}")
    def job_status(sid: str, jid: str):
        get_session(sid)
        if jid not in jobs:
            raise HTTPException(404, f"unknown job {jid}")
        job = jobs[jid]
        return {"progress": job.progress, "finished": job.finished,
                "error": job.error, "frames": len(job.paths)}

    def _png(img):
        buf = io.BytesIO()
        Image.fromarray(img).save(buf, format="PNG")
        return Response(buf.getvalue(), media_type="image/png")

    @app.get("/sessions/{sid}/preview/{t}")
    def preview(sid: str, t: int, edited: int = 0):
        s = get_session(sid)
        if not (0 <= t < s.bundle.frame_count):
            raise HTTPException(400, f"frame {t} out of range")
        if edited:
            p = os.path.join(s.bundle.path, "out", f"{t:06d}.png")
            if not os.path.exists(p):
                raise HTTPException(404, "no propagated frame yet")
            arr = np.asarray(Image.open(p).convert("RGB"))
        else:
            arr = s.bundle.load_frame(t).pixels
        h, w = arr.shape[:2]
        scale = PREVIEW_MAX_SIDE / max(h, w)
        if scale < 1.0:
            im = Image.fromarray(arr).resize(
                (max(int(w * scale), 1), max(int(h * scale), 1)), Image.BILINEAR)
            arr = np.asarray(im)
        return _png(arr)

    @app.exception_handler(SessionError)
    def session_error(_, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    return app
