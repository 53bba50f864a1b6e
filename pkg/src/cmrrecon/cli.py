"""``cmrrecon`` command line: simulate, mask, train, eval, reconstruct, serve.

Exit codes: 0 success, 2 config/usage error, 3 data error, 4 numerical failure.
Relative output paths are placed under ``$CMRRECON_OUTPUT_ROOT`` when it is set.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import api
from .config import OUTPUT_ROOT_ENV, load_config, resolve_output
from .errors import CMRReconError
from .sampling import TRAJECTORIES, SamplingMask, make_mask

log = logging.getLogger("cmrrecon")


def _add_config_args(p):
    p.add_argument("--config", help="YAML experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. train.lr=0.001 (repeatable)")


def _add_server_arg(p):
    p.add_argument("--server", metavar="URL", help="run the request on a cmrrecon service instead of in-process")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmrrecon", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic multi-coil cine dataset")
    _add_config_args(p)
    p.add_argument("--subjects", type=int, default=4, help="number of subject files (default 4)")
    p.add_argument("--frames", type=int, help="cardiac frames per subject")
    p.add_argument("--coils", type=int, help="receiver coils")
    p.add_argument("--size", help="image size HxW, e.g. 64x64")
    p.add_argument("--noise-std", type=float, help="complex Gaussian k-space noise std")
    p.add_argument("--pulsatility", type=float, help="relative wall motion amplitude")
    p.add_argument("--contrast", nargs="+", help="contrast tags, cycled over subjects")
    p.add_argument("--seed", type=int, help="seed of subject 0; subject i uses seed+i")
    p.add_argument("--out", default="data", help="output directory (default: data)")
    p.add_argument("--force", action="store_true", help="replace a non-empty output directory")

    p = sub.add_parser("mask", help="generate one sampling mask (.npy, .pgm and .json)")
    p.add_argument("--trajectory", default="uniform", choices=TRAJECTORIES)
    p.add_argument("--af", type=float, default=4.0, help="acceleration factor")
    p.add_argument("--size", default="64x64", help="HxW (default 64x64)")
    p.add_argument("--acs", type=int, default=16, help="fully sampled central lines (default 16)")
    p.add_argument("--seed", type=int, default=0, help="mask seed (line offset for uniform)")
    p.add_argument("--out", default="mask", help="output path prefix (default: mask)")
    _add_server_arg(p)

    p = sub.add_parser("train", help="train a generator (optionally a task curriculum)")
    _add_config_args(p)
    p.add_argument("--task", type=int, choices=(1, 2), help="1: AF 4/8/10 uniform models; 2: one multi-trajectory model")
    p.add_argument("--data", help="directory of subject files (default: paths.data_dir)")
    p.add_argument("--out", help="run directory (default: paths.out_dir)")
    p.add_argument("--max-steps", type=int, help="optimizer steps per stage")
    p.add_argument("--epochs", type=int, help="epochs per stage when --max-steps is not given")
    p.add_argument("--seed", type=int, help="training seed")
    p.add_argument("--force", action="store_true", help="replace a non-empty run directory")

    p = sub.add_parser("eval", help="metrics of a checkpoint against ground truth")
    _add_config_args(p)
    p.add_argument("--checkpoint", help="checkpoint file; omit to score ground truth against itself")
    p.add_argument("--data", help="directory of subject files (default: paths.data_dir)")
    p.add_argument("--trajectory", nargs="+", choices=TRAJECTORIES, help="trajectories (default: sampling grid)")
    p.add_argument("--af", nargs="+", type=float, help="acceleration factors (default: sampling grid)")
    p.add_argument("--acs", type=int, help="ACS lines (default: from the checkpoint, else 16)")
    p.add_argument("--frames", nargs="+", type=int, help="frames to score (default: all)")
    p.add_argument("--seed", type=int, help="mask seed (default: sampling.seed)")
    p.add_argument("--out", default="eval", help="directory for metrics.jsonl and summary.txt (default: eval)")
    _add_server_arg(p)

    p = sub.add_parser("reconstruct", help="reconstruct one frame and write gt/zf/recon images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subject", required=True, help="subject .h5 file")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--trajectory", default="uniform", choices=TRAJECTORIES)
    p.add_argument("--af", type=float, default=4.0)
    p.add_argument("--acs", type=int, help="ACS lines (default: from the checkpoint)")
    p.add_argument("--seed", type=int, default=0, help="mask seed")
    p.add_argument("--out", default="recon", help="output directory (default: recon)")
    _add_server_arg(p)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    parser.epilog = f"Set {OUTPUT_ROOT_ENV} to place relative output paths under another directory."
    return parser


def _flag_overrides(pairs) -> list[tuple[str, object]]:
    return [(k, v) for k, v in pairs if v is not None]


def cmd_simulate(args) -> int:
    size = api.parse_size(args.size) if args.size else None
    cfg = load_config(args.config, list(args.overrides) + _flag_overrides([
        ("phantom.frames", args.frames), ("phantom.coils", args.coils),
        ("phantom.height", size and size[0]), ("phantom.width", size and size[1]),
        ("phantom.noise_std", args.noise_std), ("phantom.pulsatility", args.pulsatility),
        ("phantom.contrasts", args.contrast), ("phantom.seed", args.seed),
    ]))
    manifest = api.simulate_dataset(resolve_output(args.out), args.subjects, cfg.phantom, args.force)
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def cmd_mask(args) -> int:
    H, W = api.parse_size(args.size)
    if args.server:
        from .service.client import ServiceClient

        resp = ServiceClient(args.server).mask(trajectory=args.trajectory, acceleration=args.af, height=H, width=W,
                                               acs_lines=args.acs, seed=args.seed)
        md = resp["metadata"]
        mask = SamplingMask(np.asarray(resp["mask"], dtype=np.float32), md["trajectory"], md["acceleration"],
                            md["acs_lines"], md["seed"])
    else:
        mask = make_mask(args.trajectory, H, W, args.af, args.acs, args.seed)
    paths = api.write_mask_files(mask, resolve_output(args.out))
    print(json.dumps({**mask.metadata(), "files": {k: str(v) for k, v in paths.items()}}, indent=2, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, list(args.overrides) + _flag_overrides([
        ("train.max_steps", args.max_steps), ("train.epochs", args.epochs), ("train.seed", args.seed),
        ("task", args.task), ("paths.data_dir", args.data), ("paths.out_dir", args.out),
    ]))
    out = resolve_output(cfg.paths.out_dir)
    results = api.train(cfg, cfg.paths.data_dir, out, cfg.task, args.force)
    for r in results:
        ckpt = str(r.checkpoint) if r.checkpoint else "-"
        print(f"stage {r.name}: {r.steps} steps, final generator loss {r.final_report.generator:.6g}, checkpoint {ckpt}")
    print(f"log: {out / 'train_log.jsonl'}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, list(args.overrides) + _flag_overrides([
        ("sampling.trajectories", args.trajectory), ("sampling.accelerations", args.af),
        ("sampling.seed", args.seed), ("paths.data_dir", args.data),
    ]))
    s = cfg.sampling
    if args.server:
        from .service.client import ServiceClient
        from .trainer import MetricsReport

        resp = ServiceClient(args.server).evaluate(
            checkpoint=args.checkpoint, data_dir=cfg.paths.data_dir, trajectories=list(s.trajectories),
            accelerations=list(s.accelerations), seed=s.seed, acs_lines=args.acs, frames=args.frames)
        report = MetricsReport([{k: (float("inf") if v is None and k.endswith("psnr") else v) for k, v in r.items()}
                                for r in resp["records"]])
    else:
        report = api.evaluate_dir(args.checkpoint, cfg.paths.data_dir, s.trajectories, s.accelerations, s.seed,
                                  args.acs, args.frames)
    paths = api.write_metrics(report, resolve_output(args.out))
    print(report.summary_table(), end="")
    print(f"records: {paths['records']}")
    return 0


def cmd_reconstruct(args) -> int:
    out = resolve_output(args.out)
    if args.server:
        from .service.app import decode_image
        from .service.client import ServiceClient

        resp = ServiceClient(args.server).reconstruct(
            checkpoint=args.checkpoint, subject=args.subject, frame=args.frame, trajectory=args.trajectory,
            acceleration=args.af, seed=args.seed, acs_lines=args.acs)
        images = {k: decode_image(v, resp["height"], resp["width"]) for k, v in resp["images"].items()}
        sidecar, ssim = resp["sidecar"], resp["ssim"]
    else:
        result = api.reconstruct_subject_file(args.checkpoint, args.subject, args.frame, args.trajectory, args.af,
                                              args.seed, args.acs)
        images, sidecar = result.quantized()
        ssim = result.ssim
    path = api.write_reconstruction(out, images, sidecar)
    m = sidecar["metrics"]
    print(f"ssim {ssim!r}")
    print(f"recon nmse {m['recon']['nmse']:.6g} psnr {m['recon']['psnr']} | "
          f"zero-filled nmse {m['zf']['nmse']:.6g} ssim {m['zf']['ssim']:.6g}")
    print(f"images: {out}/{{gt,zf,recon}}.pgm, sidecar: {path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


COMMANDS = {"simulate": cmd_simulate, "mask": cmd_mask, "train": cmd_train, "eval": cmd_eval,
            "reconstruct": cmd_reconstruct, "serve": cmd_serve}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CMRReconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
