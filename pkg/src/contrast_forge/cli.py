"""Command-line interface.

Machine-readable results are always JSON on stdout; logs go to stderr,
so every subcommand doubles as a scriptable test harness. Exit codes:
0 success, 2 usage error, 1 runtime error.

The ``CONTRAST_FORGE_SCORER_URL`` environment variable selects a remote
scorer endpoint for ``generate``, ``score``, and ``negate``; without it
those commands run against the in-process mocks and rule client.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from . import trainer
from .errors import ContrastForgeError, InvalidParameterError
from .gradcheck import run_gradcheck
from .negation import build_negation_set
from .ply_io import load_png, load_splat_ply, save_png
from .preference import default_mock_scorers, fuse_positive, score_all
from .prompts import (
    default_template,
    generate_corpus,
    load_corpus,
    sample_eval_subset,
    save_corpus,
)
from .scorer_http import RemoteLlmClient, make_server, scorers_from_url
from .splat_render import render

logger = logging.getLogger(__name__)

SCORER_URL_ENV = "CONTRAST_FORGE_SCORER_URL"


def _emit(payload) -> None:
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _scorer_url(flag_value) -> str | None:
    return flag_value or os.environ.get(SCORER_URL_ENV) or None


def _parse_overrides(pairs) -> dict:
    overrides = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise InvalidParameterError(
                f"--set expects KEY=VALUE, got {pair!r}")
        overrides[key.strip()] = value.strip()
    return overrides


def _parse_background(text: str) -> float:
    named = {"white": 1.0, "black": 0.0}
    if text in named:
        return named[text]
    try:
        value = float(text)
    except ValueError:
        raise InvalidParameterError(
            f"background must be white, black, or a number, got {text!r}"
        ) from None
    if not 0.0 <= value <= 1.0:
        raise InvalidParameterError("background must lie in [0, 1]")
    return value


def _record_dicts(records) -> list:
    return [
        {"id": r.id, "text": r.text, "slots": r.slots, "seed": r.seed}
        for r in records
    ]


# ---------------------------------------------------------------------------
# Subcommand bodies


def _cmd_generate(args) -> int:
    overrides = _parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.iterations is not None:
        overrides["iterations"] = str(args.iterations)
    if args.config:
        config = trainer.load_config(args.config, overrides)
    else:
        config = trainer.apply_overrides(trainer.TrainConfig(), overrides)
    url = _scorer_url(args.scorer_url)
    scorers = scorers_from_url(url) if url else None
    _, report = trainer.run(config, args.prompt, scorers=scorers,
                            out_dir=args.out)
    _emit({
        "out_dir": args.out,
        "paths": report["paths"],
        "initial_count": report["initial_count"],
        "final_count": report["final_count"],
        "aborted": report["aborted"],
        "total_skips": report["total_skips"],
        "scorers": report["scorers"],
    })
    return 0


def _cmd_render(args) -> int:
    cloud = load_splat_ply(args.ply)
    config = trainer.apply_overrides(
        trainer.TrainConfig(), {"resolution": str(args.resolution)})
    target = cloud.positions.mean(axis=0)
    cameras = trainer.turntable_cameras(config, target, views=args.views)
    background = _parse_background(args.background)
    os.makedirs(args.out, exist_ok=True)
    paths = []
    for index, camera in enumerate(cameras):
        out = render(cloud, camera, background)
        path = os.path.join(args.out, f"turntable_{index}.png")
        save_png(path, out.image)
        paths.append(path)
    _emit({"pngs": paths, "splats": len(cloud)})
    return 0


def _cmd_prompts_gen(args) -> int:
    records = generate_corpus(default_template(), args.n, args.seed)
    if args.out:
        save_corpus(records, args.out)
        _emit({"path": args.out, "count": len(records)})
    else:
        _emit(_record_dicts(records))
    return 0


def _cmd_prompts_sample(args) -> int:
    corpus = load_corpus(args.corpus)
    subset = sample_eval_subset(corpus, args.k, args.seed)
    _emit(_record_dicts(subset))
    return 0


def _cmd_negate(args) -> int:
    url = _scorer_url(args.llm_url)
    client = RemoteLlmClient(url) if url else None
    result = build_negation_set(args.prompt, client=client)
    _emit({
        "static_phrases": list(result.static_phrases),
        "negated": [
            {
                "modifier": m.modifier,
                "attribute": m.attribute,
                "spatial": m.spatial,
                "part": m.part,
                "text": m.render_spatial(),
            }
            for m in result.negated_maps
        ],
        "spatial_reversals": list(result.spatial_reversals),
        "irrelevant": list(result.irrelevant),
        "y_neg": result.y_neg,
        "warnings": list(result.warnings),
    })
    return 0


def _cmd_gradcheck(args) -> int:
    report = run_gradcheck(num_scenes=args.scenes, tolerance=args.tol,
                           max_splats=args.max_splats, side=args.side)
    logger.info("%s", report.summary())
    _emit(dataclasses.asdict(report))
    return 0 if report.passed else 1


def _cmd_score(args) -> int:
    image = load_png(args.image)
    url = _scorer_url(args.scorer_url)
    scorers = scorers_from_url(url) if url else default_mock_scorers()
    if args.model:
        available = {s.identifier for s in scorers}
        missing = [m for m in args.model if m not in available]
        if missing:
            raise InvalidParameterError(
                f"unknown model(s) {missing}; available: {sorted(available)}")
        scorers = [s for s in scorers if s.identifier in set(args.model)]
    signals = score_all(scorers, image, args.text)
    fused = fuse_positive(signals)
    _emit({
        "scores": [
            {"model": s.scorer_id, "score": s.score} for s in signals
        ],
        "weights": {
            s.scorer_id: float(w)
            for s, w in zip(signals, fused.weights)
        },
        "quantized": list(fused.quantized_scores),
    })
    return 0


def _cmd_mock_serve(args) -> int:
    server = make_server(host=args.host, port=args.port)
    host, port = server.server_address[:2]
    _emit({
        "url": f"http://{host}:{port}",
        "models": [s.identifier for s in default_mock_scorers()],
    })
    sys.stdout.flush()
    logger.info("mock scorer serving on %s:%d (Ctrl-C to stop)", host, port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        logger.info("shutting down")
    finally:
        server.server_close()
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contrast-forge",
        description="Text-to-3D human generation with contrastive "
                    "preference guidance.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate",
                       help="optimize a splat human from a text prompt")
    p.add_argument("--prompt", required=True, help="positive text prompt")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--out", default="run_output", help="output directory")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--iterations", type=int,
                   help="override config iterations")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="config override, repeatable")
    p.add_argument("--scorer-url",
                   help=f"scorer endpoint (default ${SCORER_URL_ENV} "
                        "or in-process mocks)")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("render", help="render a splat PLY to turntable PNGs")
    p.add_argument("--ply", required=True, help="input splat PLY path")
    p.add_argument("--out", default="render_output", help="output directory")
    p.add_argument("--views", type=int, default=trainer.TURNTABLE_VIEWS)
    p.add_argument("--resolution", type=int, default=256)
    p.add_argument("--background", default="white",
                   help="white, black, or a gray level in [0,1]")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("prompts", help="prompt corpus utilities")
    psub = p.add_subparsers(dest="prompts_command", required=True)
    g = psub.add_parser("gen", help="generate a prompt corpus")
    g.add_argument("--n", type=int, required=True, help="corpus size")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="write corpus JSON here instead of stdout")
    g.set_defaults(func=_cmd_prompts_gen)
    s = psub.add_parser("sample", help="sample an evaluation subset")
    s.add_argument("--corpus", required=True, help="corpus JSON path")
    s.add_argument("--k", type=int, required=True, help="subset size")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_prompts_sample)

    p = sub.add_parser("negate",
                       help="build the negation prompt set for a prompt")
    p.add_argument("--prompt", required=True)
    p.add_argument("--llm-url",
                   help=f"analysis endpoint (default ${SCORER_URL_ENV} "
                        "or the bundled rule client)")
    p.set_defaults(func=_cmd_negate)

    p = sub.add_parser("gradcheck",
                       help="finite-difference audit of the renderer")
    p.add_argument("--scenes", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-splats", type=int, default=10)
    p.add_argument("--side", type=int, default=16)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("score", help="score an image against a text")
    p.add_argument("--image", required=True, help="input PNG path")
    p.add_argument("--text", required=True)
    p.add_argument("--model", action="append",
                   help="restrict to this model id, repeatable")
    p.add_argument("--scorer-url",
                   help=f"scorer endpoint (default ${SCORER_URL_ENV} "
                        "or in-process mocks)")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("mock-serve",
                       help="serve the mock scorers over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0,
                   help="0 picks a free port")
    p.set_defaults(func=_cmd_mock_serve)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ContrastForgeError as exc:
        logger.error("%s", exc)
        return 1
    except (OSError, ValueError) as exc:
        logger.error("%s", exc)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
