"""Command-line entry point: ``seavis {synth,run,gradcheck,heatmap,metrics}``.

Configuration comes from one JSON file (``--config``); flags override it.
Errors exit non-zero and print a JSON object to stderr.
"""

import argparse
import json
import logging
import os
import sys

from .exceptions import ConfigurationError, SeavisError
from .gradcheck import certify
from .metrics import evaluate, pair_from_stream, report_to_csv
from .pipeline import (
    CcafConfig,
    FeatureSynth,
    RunConfig,
    StreamProbe,
    load_stream,
    online_fusion,
    run_pipeline,
)
from .synth import ScenarioConfig, generate, write_stream
from .ccaf import write_heatmap
from .tracker import FrameOutput

log = logging.getLogger("seavis")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = os.environ.get("SEAVIS_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise ConfigurationError(f"SEAVIS_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config(path):
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _run_config(args, raw):
    raw = dict(raw)
    raw.pop("out", None)
    for key in ("seed", "window", "heatmap"):
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    if getattr(args, "gradcheck", False):
        raw["gradcheck"] = True
    if getattr(args, "stream", None):
        raw.pop("scenario", None)
        raw.pop("scenario_path", None)
        raw["stream_path"] = args.stream
    return RunConfig.from_dict(raw)


def _out_dir(args, raw, default="out"):
    return args.out or raw.get("out") or default


def cmd_synth(args):
    raw = _load_config(args.config)
    raw = raw.get("scenario", raw)
    if args.seed is not None:
        raw["seed"] = args.seed
    stream = generate(ScenarioConfig.from_dict(raw))
    out = _out_dir(args, {})
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "stream.jsonl")
    write_stream(stream, path)
    print(json.dumps({"stream": path, "frames": len(stream.frames)}))


def cmd_run(args):
    raw = _load_config(args.config)
    cfg = _run_config(args, raw)
    summary = run_pipeline(cfg, _out_dir(args, raw))
    print(json.dumps(summary["metrics"]))


def cmd_gradcheck(args):
    raw = _load_config(args.config)
    seed = args.seed if args.seed is not None else raw.get("seed", 0)
    tau = raw.get("loss_weights", {}).get("tau", 0.07)
    report = certify(seed=seed, n_configs=raw.get("gradcheck_configs", 50), tau=tau)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(report, os.path.join(args.out, "gradcheck.json"))
    print(json.dumps(report))
    return 0 if report["passed"] else 1


def cmd_heatmap(args):
    raw = _load_config(args.config)
    cfg = _run_config(args, raw)
    fmt = cfg.heatmap or "csv"
    stream = load_stream(cfg)
    ccaf_cfg = CcafConfig(**cfg.ccaf)
    if cfg.seed is not None:
        ccaf_cfg.seed = cfg.seed
    synth = FeatureSynth(stream.config.embed_dim, ccaf_cfg, cfg.window)
    _, heatmaps = online_fusion(StreamProbe(stream.frames), synth, cfg.window)
    out = _out_dir(args, raw)
    os.makedirs(out, exist_ok=True)
    written = []
    for wi, per_level in enumerate(heatmaps):
        for lvl, hm in zip(ccaf_cfg.levels, per_level):
            path = os.path.join(out, f"window{wi:03d}_level{lvl}.{fmt}")
            write_heatmap(hm, path, fmt)
            written.append(path)
    print(json.dumps({"heatmaps": written}))


def cmd_metrics(args):
    raw = _load_config(args.config)
    cfg = _run_config(args, raw)
    frames_path = args.frames or raw.get("frames_path")
    if frames_path is None:
        raise ConfigurationError("metrics needs --frames or frames_path in the config")
    stream = load_stream(cfg)
    with open(frames_path, encoding="utf-8") as fh:
        outputs = [FrameOutput.from_dict(json.loads(line)) for line in fh if line.strip()]
    report = evaluate(pair_from_stream(stream, outputs), raw.get("matching_threshold", 0.5))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(report, os.path.join(args.out, "metrics.json"))
        with open(os.path.join(args.out, "metrics.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(report_to_csv(report))
    print(json.dumps(report))


def build_parser():
    parser = argparse.ArgumentParser(prog="seavis", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="seed override (unsigned 64-bit)")
        p.add_argument("--out", help="output directory")
        return p

    p = common(sub.add_parser("synth", help="generate a synthetic stream"))
    p.set_defaults(func=cmd_synth)

    p = common(sub.add_parser("run", help="run the online pipeline"))
    p.add_argument("--window", type=int, help="frames per fusion window")
    p.add_argument("--gradcheck", action="store_true", help="also certify loss gradients")
    p.add_argument("--heatmap", choices=("csv", "pgm"), help="export attention heatmaps")
    p.add_argument("--stream", help="recorded stream JSONL to use instead of the scenario")
    p.set_defaults(func=cmd_run)

    p = common(sub.add_parser("gradcheck", help="certify analytic loss gradients"))
    p.set_defaults(func=cmd_gradcheck)

    p = common(sub.add_parser("heatmap", help="export fusion attention heatmaps"))
    p.add_argument("--window", type=int)
    p.add_argument("--heatmap", choices=("csv", "pgm"))
    p.add_argument("--stream")
    p.set_defaults(func=cmd_heatmap)

    p = common(sub.add_parser("metrics", help="score tracker outputs against a stream"))
    p.add_argument("--stream")
    p.add_argument("--frames", help="frames.jsonl written by run")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        status = args.func(args)
    except (SeavisError, ValueError, TypeError, KeyError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    return status or 0


if __name__ == "__main__":
    sys.exit(main())
