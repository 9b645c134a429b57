"""Operator-facing command line.

Subcommands: inspect, validate, stats, convert, record, pipeline, serve.
Exit codes are a stable contract: 0 success, 1 usage, 2 format,
3 corruption, 4 configuration, 5 pipeline kind mismatch.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import model, pipeline, store, transforms
from .envs import make_environment, scripted_agent
from .errors import (
    BadMagicError,
    ChunkCorruptError,
    EpilogueError,
    InvalidArgumentError,
    MissingFooterError,
    PipelineKindMismatchError,
    UnsupportedVersionError,
)
from .logger import generate
from .model import Alignment, Leaf, StepRecord

EXIT_USAGE = 1
EXIT_FORMAT = 2
EXIT_CORRUPTION = 3
EXIT_CONFIGURATION = 4
EXIT_KIND_MISMATCH = 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _emit(doc, fmt: str) -> None:
    if fmt == "json":
        print(json.dumps(doc, sort_keys=True, indent=2))
        return
    _emit_text(doc)


def _emit_text(doc, indent: str = "") -> None:
    if isinstance(doc, dict):
        for key in doc:
            value = doc[key]
            if isinstance(value, (dict, list)) and value and not _is_flat_row(value):
                print(f"{indent}{key}:")
                _emit_text(value, indent + "  ")
            else:
                print(f"{indent}{key}: {_scalar(value)}")
    elif isinstance(doc, list):
        for item in doc:
            if isinstance(item, (dict, list)) and not _is_flat_row(item):
                _emit_text(item, indent + "  ")
            else:
                print(f"{indent}- {_scalar(item)}")
    else:
        print(f"{indent}{_scalar(doc)}")


def _is_flat_row(value) -> bool:
    return isinstance(value, list) and all(not isinstance(v, (dict, list)) for v in value)


def _scalar(value) -> str:
    if isinstance(value, list):
        return "[" + ", ".join(_scalar(v) for v in value) + "]"
    return str(value)


def _step_doc(step: StepRecord) -> dict:
    return {
        "is_first": step.is_first,
        "is_last": step.is_last,
        "is_terminal": step.is_terminal,
        "observation": model.value_to_doc(step.observation),
        "action": model.value_to_doc(step.action),
        "reward": model.value_to_doc(step.reward),
        "discount": model.value_to_doc(step.discount),
        "metadata": model.value_to_doc(step.metadata),
    }


# -- subcommands ------------------------------------------------------------


def cmd_inspect(args) -> int:
    with store.open_reader(args.file) as reader:
        doc: dict = {
            "path": args.file,
            "version": store.VERSION,
            "schema_digest": model.schema_digest(reader.schema_bytes()),
            "schema": json.loads(reader.schema_bytes().decode("utf-8")),
            "dataset_metadata": reader.dataset_metadata(),
            "episode_count": reader.episode_count(),
            "num_steps": [reader.num_steps(i) for i in range(reader.episode_count())],
        }
        if args.episode is not None:
            episode = reader.get_episode(args.episode)
            doc["episode"] = {
                "index": args.episode,
                "num_steps": len(episode.steps),
                "metadata": model.value_to_doc(episode.metadata),
            }
            if args.step is not None:
                doc["step"] = {"index": args.step, **_step_doc(episode.steps[args.step])}
    _emit(doc, args.format)
    return 0


def cmd_validate(args) -> int:
    alignment = Alignment(args.alignment)
    failures = 0
    with store.open_reader(args.file) as reader:
        for i in range(reader.episode_count()):
            report = model.validate_episode(reader.get_episode(i), reader.schema, alignment)
            if not report.ok:
                failures += 1
                for violation in report.violations:
                    print(f"episode {i}: {violation}")
    total = failures == 0
    print(f"validated: {'ok' if total else f'{failures} episode(s) with violations'}")
    return 0


def cmd_stats(args) -> int:
    with store.open_reader(args.file) as reader:
        stats = transforms.field_statistics(reader.iter_episodes(), args.field)
    _emit({"field": args.field, **stats}, args.format)
    return 0


def cmd_convert(args) -> int:
    target = Alignment(args.alignment)
    source = Alignment.RSA if target is Alignment.SAR else Alignment.SAR
    with store.open_reader(args.input) as reader:
        writer = store.open_writer(
            args.output, reader.schema, reader.dataset_metadata(), compression=args.compression
        )
        for episode in reader.iter_episodes():
            shifted = transforms.shift_alignment(episode, target, source)
            for step in shifted.steps:
                writer.append_step(step)
            writer.end_episode(shifted.metadata)
        summary = writer.finalize()
    print(f"wrote {summary['episodes']} episode(s), {summary['steps']} step(s) to {args.output}")
    return 0


class TaggingSink:
    """Buffers each episode and tags positive-reward steps before writing."""

    def __init__(self, writer: store.Writer, tag: str):
        self.schema = writer.schema
        self._writer = writer
        self._tag = pipeline.tag_field(tag)
        self._steps: list[StepRecord] = []

    def append_step(self, step: StepRecord) -> None:
        self._steps.append(step)

    def end_episode(self, metadata=None) -> None:
        for step in self._steps:
            tagged = bool(np.any(np.asarray(step.reward, dtype=np.float64) > 0)) and not step.is_last
            meta = dict(step.metadata) if isinstance(step.metadata, dict) else {}
            meta[self._tag] = np.bool_(tagged)
            step.metadata = meta
            self._writer.append_step(step)
        self._writer.end_episode(metadata)
        self._steps = []


def cmd_record(args) -> int:
    agent_kinds = {"planner": "planner", "random": "uniform_random"}
    if args.agent not in agent_kinds:
        raise InvalidArgumentError("unknown agent", agent=args.agent)
    env = make_environment(args.env, size=args.size, time_limit=args.time_limit)
    policy = scripted_agent(agent_kinds[args.agent], eps=args.eps)

    step_metadata = {}
    if args.tag_completion:
        step_metadata[pipeline.tag_field(args.tag_completion)] = Leaf("bool", ())
    schema = env.schema(
        step_metadata=step_metadata,
        episode_metadata={"agent_id": Leaf("bytes", ()), "episode_id": Leaf("bytes", ())},
    )
    writer = store.open_writer(args.out, schema, compression=args.compression)
    sink = TaggingSink(writer, args.tag_completion) if args.tag_completion else writer

    agent_id = f"{args.agent}-eps{args.eps}-seed{args.seed}".encode()
    episode_counter = iter(range(args.episodes))

    def episode_metadata_fn(_env):
        return {
            "agent_id": np.array(agent_id, dtype=object),
            "episode_id": np.array(f"ep-{next(episode_counter):05d}".encode(), dtype=object),
        }

    generate(
        env,
        policy,
        episodes=args.episodes,
        seed=args.seed,
        sink=sink,
        episode_metadata_fn=episode_metadata_fn,
    )
    summary = writer.finalize()
    print(
        f"recorded {summary['episodes']} episode(s), {summary['steps']} step(s), "
        f"{summary['bytes']} bytes to {args.out}"
    )
    return 0


def cmd_pipeline(args) -> int:
    spec = pipeline.PipelineSpec.load(args.spec)
    result = pipeline.run(spec, cache_dir=args.cache_dir)
    _emit(result, args.format)
    return 0


def cmd_serve(args) -> int:
    from .collect.server import serve

    serve(host=args.host, port=args.port, data_dir=args.data_dir, static_dir=args.static)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="epilogue", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="print header, schema and episode structure")
    p.add_argument("file")
    p.add_argument("--episode", type=int, default=None, metavar="I")
    p.add_argument("--step", type=int, default=None, metavar="J")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("validate", help="run episode validation over a log file")
    p.add_argument("file")
    p.add_argument("--alignment", choices=("sar", "rsa"), default="sar")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("stats", help="streaming statistics for a step field")
    p.add_argument("file")
    p.add_argument("--field", required=True)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("convert", help="rewrite a file in the other step alignment")
    p.add_argument("--alignment", choices=("sar", "rsa"), required=True)
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--compression", choices=("none", "deflate"), default="deflate")
    p.set_defaults(fn=cmd_convert)

    p = sub.add_parser("record", help="generate episodes with a scripted agent")
    p.add_argument("--env", default="gridpickplace")
    p.add_argument("--agent", default="planner")
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--time-limit", type=int, default=400)
    p.add_argument("--compression", choices=("none", "deflate"), default="deflate")
    p.add_argument("--tag-completion", default=None, metavar="NAME")
    p.set_defaults(fn=cmd_record)

    p = sub.add_parser("pipeline", help="run a declarative transform pipeline")
    p.add_argument("--spec", required=True)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--cache-dir", default=None)
    p.set_defaults(fn=cmd_pipeline)

    p = sub.add_parser("serve", help="run the collection studio server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--data-dir", default="collect-data")
    p.add_argument("--static", default=None, help="directory of built UI files to serve at /")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (BadMagicError, UnsupportedVersionError, MissingFooterError) as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ChunkCorruptError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_CORRUPTION
    except PipelineKindMismatchError as exc:
        print(f"error[{exc.code}] at stage {exc.stage_index}: {exc}", file=sys.stderr)
        return EXIT_KIND_MISMATCH
    except EpilogueError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_CONFIGURATION
    except OSError as exc:
        print(f"error[IO]: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
