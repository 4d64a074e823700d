"""Command-line entry points: demo, edit, propagate, serve."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np


def cmd_demo(args):
    from .synthetic import generate_bundle
    path = generate_bundle(args.out, n_frames=args.frames, width=args.width,
                           height=args.height, seed=args.seed)
    print(f"demo bundle written to {path}")


def cmd_edit(args):
    from . import meshio
    from .session import Session
    from .sketch_mapping import Stroke

    with open(args.strokes) as fh:
        data = json.load(fh)
    strokes = [Stroke(np.array(s["points"], dtype=np.float64), int(s["order"]))
               for s in data["strokes"]]
    session = Session(args.bundle, args.state_dir)
    result = session.submit_strokes(args.frame, strokes)
    print(json.dumps(result["mapping"], indent=1))
    summary = session.apply_edit()
    print(json.dumps(summary, indent=1))
    meshio.save_obj(args.out, session.current_identity())
    print(f"modified identity written to {args.out}")


def cmd_propagate(args):
    from . import meshio
    from .bundle import SessionBundle
    from .render_propagate import propagate
    from PIL import Image
    import os

    bundle = SessionBundle(args.bundle)
    identity = bundle.mesh
    if args.identity:
        identity = meshio.load_obj(args.identity,
                                   landmark_vertex_ids=bundle.mesh.landmark_vertex_ids)
    os.makedirs(args.out, exist_ok=True)

    def progress(done, total):
        print(f"\rframe {done}/{total}", end="", flush=True)

    frames = propagate(bundle, identity, progress_cb=progress,
                       warp_background=not args.no_background_warp)
    print()
    for t, img in enumerate(frames):
        Image.fromarray(img.pixels).save(os.path.join(args.out, f"{t:06d}.png"))
    print(f"{len(frames)} frames written to {args.out}")


def cmd_serve(args):
    import uvicorn
    from .service import create_app
    uvicorn.run(create_app(args.state_dir), host="127.0.0.1", port=args.port,
                log_level="warning")


def main(argv=None):
    ap = argparse.ArgumentParser(prog="sketchface",
                                 description="Sketch-based facial identity editing for video")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo", help="generate the synthetic demo bundle")
    p.add_argument("out")
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=360)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("edit", help="batch edit: bundle + strokes JSON -> identity OBJ")
    p.add_argument("bundle")
    p.add_argument("strokes", help='JSON: {"strokes":[{"order":0,"points":[[x,y],...]}]}')
    p.add_argument("-o", "--out", default="identity_edited.obj")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--state-dir", default="./sessions")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("propagate", help="re-render all frames with an identity mesh")
    p.add_argument("bundle")
    p.add_argument("--identity", help="OBJ from the edit step (default: unedited)")
    p.add_argument("-o", "--out", default="out")
    p.add_argument("--no-background-warp", action="store_true")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("serve", help="run the local HTTP/JSON service")
    p.add_argument("--port", type=int, default=7865)
    p.add_argument("--state-dir", default="./sessions")
    p.set_defaults(func=cmd_serve)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
