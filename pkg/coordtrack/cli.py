"""Command Line
===================
``coordtrack`` sub-commands: track, eval, train-toy, gradcheck, synth,
bench and serve.

Every failure ends with one line on stderr::

    error code=<name> status=<int> detail=<json string>
"""
# Copyright (c) 2024, coordtrack developers.
# All rights reserved. Distributed under the MIT License.
import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Callable
from typing import List
from typing import NoReturn
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import Type

from coordtrack import bench
from coordtrack import sequence_io
from coordtrack.allowed_parameters import FusionMode
from coordtrack.config import ModelConfig
from coordtrack.config import load_config
from coordtrack.config import toy_config
from coordtrack.errors import ContractViolation
from coordtrack.errors import DecodeError
from coordtrack.errors import DivergenceError
from coordtrack.errors import GenerationError
from coordtrack.errors import SequenceFormatError
from coordtrack.gradcheck import GradCheckReport
from coordtrack.gradcheck import run_suite
from coordtrack.metrics import evaluate
from coordtrack.model import TrackingModel
from coordtrack.params import load_store
from coordtrack.synth import gen_sequence
from coordtrack.synth import load_scene
from coordtrack.synth import random_sequences
from coordtrack.tracker import TrackerConfig
from coordtrack.tracker import track_sequence
from coordtrack.training import train_toy

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_MALFORMED_INPUT = 4
EXIT_CONTRACT_VIOLATION = 5
EXIT_DIVERGENCE = 6
EXIT_GRADCHECK_FAILED = 7
EXIT_GENERATION_ERROR = 8
EXIT_ABLATION_FAILED = 9

# first match wins
ERROR_CODES: List[Tuple[Type[BaseException], str, int]] = [
    (FileNotFoundError, "missing_file", EXIT_MISSING_FILE),
    (SequenceFormatError, "malformed_input", EXIT_MALFORMED_INPUT),
    (ContractViolation, "contract_violation", EXIT_CONTRACT_VIOLATION),
    (DivergenceError, "divergence", EXIT_DIVERGENCE),
    (GenerationError, "generation_error", EXIT_GENERATION_ERROR),
    (DecodeError, "contract_violation", EXIT_CONTRACT_VIOLATION),
]


class UsageError(Exception):
    pass


class CommandFailed(Exception):
    """Raised by a sub-command that ran to completion but must report failure."""

    def __init__(self, code: str, status: int, detail: str) -> None:
        self.code = code
        self.status = status
        super().__init__(detail)


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def report_error(code: str, status: int, detail: str) -> int:
    print(f"error code={code} status={status} detail={json.dumps(detail)}", file=sys.stderr)
    return status


def _config_for_weights(weights: str, config: Optional[str]) -> ModelConfig:
    return load_config(config if config is not None else f"{weights}.cfg")


def cmd_track(args: argparse.Namespace) -> int:
    cfg = _config_for_weights(args.weights, args.config)
    if args.fusion is not None:
        cfg = cfg.replace(fusion=FusionMode(args.fusion))
    model = TrackingModel(cfg)
    load_store(args.weights, model.store)
    seq = sequence_io.read_sequence(args.seq)
    tracker_cfg = TrackerConfig.from_model_config(cfg, threshold=args.lam, interval=args.zu)
    result = track_sequence(model, seq.frames, seq.boxes[0], tracker_cfg)
    sequence_io.write_predictions(args.out, result.boxes, result.scores)
    print(f"frames = {len(result.boxes)}")
    print(f"updates = {','.join(map(str, result.update_frames))}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    pred, _ = sequence_io.read_predictions(args.pred)
    gt = sequence_io.read_boxes(args.gt)
    report = evaluate(pred, gt)
    sequence_io.write_report(args.report, report)
    print(f"suc = {report.suc:.6f}")
    print(f"pre = {report.pre:.6f}")
    print(f"normp = {report.normp:.6f}")
    return EXIT_OK


def cmd_train_toy(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config is not None else toy_config()
    seed = cfg.seed if args.seed is None else args.seed
    if args.seed is not None:
        cfg = cfg.replace(seed=seed)
    sequences = random_sequences(
        cfg.train_sequences, seed, cfg.frame_size, cfg.frame_size, cfg.sequence_length
    )
    result = train_toy(cfg, sequences, epochs=args.epochs, seed=seed)
    result.model.save(args.out_weights)
    for epoch, loss in enumerate(result.loss_curve, start=1):
        print(f"epoch = {epoch},{loss:.6f}")
    return EXIT_OK


def format_check(report: GradCheckReport) -> str:
    """One result line; non-finite locations print as ``tensor:entry`` joined by ``;``."""
    where = ";".join(f"{p}:{i}" for p, i in report.nonfinite_at) or "-"
    status = "ok" if report.passed else "fail"
    return (
        f"check={report.name} max_rel_error={report.max_rel_error:.3e} probes={report.probes} "
        f"nonfinite_at={where} status={status}"
    )


def cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config is not None else None
    reports = run_suite(cfg, tol=args.tol, seed=args.seed, eps=args.eps)
    for r in reports:
        print(format_check(r))
    failed = [r.name for r in reports if not r.passed]
    if failed:
        raise CommandFailed("gradcheck_failed", EXIT_GRADCHECK_FAILED, f"failed checks: {', '.join(failed)}")
    print(f"max_rel_error = {max(r.max_rel_error for r in reports):.3e}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    seq = gen_sequence(load_scene(args.scene))
    sequence_io.write_sequence(args.out, seq.frames, seq.boxes)
    print(f"frames = {len(seq)}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config is not None else toy_config()
    modes = [FusionMode(m) for m in args.modes]
    ablation = bench.run_ablation(cfg, modes, seed=args.seed)
    text = bench.format_ablation(ablation)
    if args.report is not None:
        Path(args.report).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    if ablation.hard_failure:
        raise CommandFailed(
            "ablation_failed",
            EXIT_ABLATION_FAILED,
            f"mpfm trails every other fusion mode by more than {bench.ABLATION_MARGIN} Suc",
        )
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    if args.weights is not None:
        os.environ["COORDTRACK_WEIGHTS"] = args.weights
    if args.config is not None:
        os.environ["COORDTRACK_CONFIG"] = args.config
    uvicorn.run("coordtrack.main:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="coordtrack", description="Coordinate-sequence tracking on thermal frames.")
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="root logger level (default: %(default)s)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fusion_modes = [m.value for m in FusionMode]

    track = sub.add_parser("track", help="track one sequence directory")
    track.add_argument("--weights", required=True)
    track.add_argument("--seq", required=True, help="directory with *.pgm frames and groundtruth_rect.txt")
    track.add_argument("--out", required=True, help="prediction file (x,y,w,h,score per frame)")
    track.add_argument("--config", help="model config (default: <weights>.cfg)")
    track.add_argument(
        "--fusion",
        choices=fusion_modes,
        help="fusion mode; the weights must have been trained with it, otherwise exit 5",
    )
    track.add_argument("--lambda", dest="lam", type=float, help="template update score threshold")
    track.add_argument("--zu", type=int, help="template update interval in frames")
    track.set_defaults(func=cmd_track)

    ev = sub.add_parser("eval", help="score predictions against ground truth")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--report", required=True)
    ev.set_defaults(func=cmd_eval)

    train = sub.add_parser("train-toy", help="train a model on synthetic sequences")
    train.add_argument("--config", help="model config (default: toy preset)")
    train.add_argument("--out-weights", required=True)
    train.add_argument("--seed", type=int)
    train.add_argument("--epochs", type=int)
    train.set_defaults(func=cmd_train_toy)

    gc = sub.add_parser("gradcheck", help="compare taped gradients with central differences")
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--eps", type=float, default=1e-6, help="central-difference step, 1e-6 to 1e-3")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--config", help="pipeline config (default: toy preset)")
    gc.set_defaults(func=cmd_gradcheck)

    synth = sub.add_parser("synth", help="render a scene file into a sequence directory")
    synth.add_argument("--scene", required=True)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)

    bn = sub.add_parser("bench", help="train and evaluate one toy model per fusion mode")
    bn.add_argument("--config", help="model config (default: toy preset)")
    bn.add_argument("--modes", nargs="+", choices=fusion_modes, default=["mpfm", "conf", "addf"])
    bn.add_argument("--seed", type=int)
    bn.add_argument("--report")
    bn.set_defaults(func=cmd_bench)

    serve = sub.add_parser("serve", help="run the HTTP tracking service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--weights")
    serve.add_argument("--config")
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return report_error("usage", EXIT_USAGE, str(exc))
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT)
    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return func(args)
    except CommandFailed as exc:
        return report_error(exc.code, exc.status, str(exc))
    except Exception as exc:
        for kind, code, status in ERROR_CODES:
            if isinstance(exc, kind):
                return report_error(code, status, str(exc))
        logger.debug("unhandled error in %s", args.command, exc_info=True)
        return report_error("internal", EXIT_INTERNAL, f"{type(exc).__name__}: {exc}")


