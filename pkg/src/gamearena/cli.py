"""Command-line entry points: validate, run, analyze, score, mock-server.

Exit codes: 0 success, 1 validation findings, 2 fatal runtime error,
3 campaign completed but some games ended in agent failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .analytics import (
    GROUP_KEYS,
    aggregate,
    build_scorecard,
    group_final_scores,
    raw_metrics,
    trajectories,
    write_aggregates_csv,
    write_scorecard_json,
    write_trajectories_csv,
)
from .campaign import run_campaign
from .config import ConfigError, Finding, GameConfig, ValidationReport, enumerate_game_setups, parse_config, validate_config
from .engine import SCRIPTED_PREFIX, default_agent_factory
from .gateway import Gateway, GatewayError, ProfileError, RetryPolicy, load_profiles
from .payoffs import CONFIG_MATRIX, parse_variant
from .persistence import RunManifest, read_histories, sha256_text
from .templates import TemplateError, TemplateSet, load_templates, read_template_dir, validate_templates

log = logging.getLogger("gamearena")

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_FATAL = 2
EXIT_AGENT_FAILURES = 3


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _split(values: Sequence[str] | None) -> list[str]:
    out: list[str] = []
    for v in values or ():
        out.extend(part.strip() for part in v.split(",") if part.strip())
    return out


def load_inputs(config_path: str | Path, templates_dir: str | Path) -> tuple[GameConfig | None, TemplateSet, ValidationReport]:
    """Parse config and templates; every problem comes back as a finding, nothing raises."""
    try:
        config = parse_config(Path(config_path).read_bytes(), validate=False)
    except ConfigError as exc:
        return None, {}, ValidationReport((Finding("CONFIG_PARSE_ERROR", str(config_path), str(exc)),))
    except OSError as exc:
        return None, {}, ValidationReport((Finding("CONFIG_UNREADABLE", str(config_path), str(exc)),))
    report = validate_config(config)
    templates: TemplateSet = {}
    sources = read_template_dir(templates_dir, config.name, config.languages)
    for lang, text in sources.items():
        try:
            templates.update(load_templates({lang: text}))
        except TemplateError as exc:
            report += ValidationReport((Finding("TEMPLATE_ERROR", f"templates.{lang}", str(exc)),))
    # a language whose file failed to parse is reported once, above
    report += ValidationReport(tuple(
        f for f in validate_templates(templates, config).findings
        if not (f.code == "MISSING_TEMPLATE" and f.path.split(".", 1)[1] in sources)
    ))
    return config, templates, report


def cmd_validate(args: argparse.Namespace) -> int:
    _, _, report = load_inputs(args.config, args.templates_dir)
    for finding in report.findings:
        print(finding)
    print(f"{len(report)} findings")
    return EXIT_OK if report.ok else EXIT_FINDINGS


def cmd_run(args: argparse.Namespace) -> int:
    config, templates, report = load_inputs(args.config, args.templates_dir)
    if not report.ok or config is None:
        for finding in report.findings:
            print(finding, file=sys.stderr)
        return EXIT_FINDINGS
    variants = _split(args.variants) or [config.variant_id or CONFIG_MATRIX]
    try:
        for v in variants:
            parse_variant(v)
        setups = enumerate_game_setups(config, variants, args.repetitions, dedupe=args.dedupe_mixed_personalities)
        profiles = {}
        profiles_digest = None
        if args.profiles:
            raw = Path(args.profiles).read_bytes()
            profiles = load_profiles(raw.decode("utf-8"))
            profiles_digest = sha256_text(raw)
        elif not config.llm.startswith(SCRIPTED_PREFIX):
            raise ProfileError(f"--profiles is required for model {config.llm!r}")
        gateway = None
        if not config.llm.startswith(SCRIPTED_PREFIX):
            gateway = Gateway(profiles, mock_endpoint=args.mock_endpoint,
                              retry=RetryPolicy(max_retries=args.gateway_retries),
                              per_provider_limit=args.provider_limit)
        factory = default_agent_factory(config, gateway, args.max_output_tokens)
        manifest = RunManifest(
            config_digest=sha256_text(Path(args.config).read_bytes()),
            template_digests={lang: sha256_text(t.body + repr(sorted(t.phrases.items())))
                              for lang, t in sorted(templates.items())},
            profiles_digest=profiles_digest,
            variants=variants,
            repetitions=args.repetitions,
            seed=args.seed,
            tool_version=__version__,
            started_at="",
        )
        result = run_campaign(
            config, templates, setups, factory, args.out,
            seed=args.seed, concurrency=args.concurrency, resume=args.resume,
            save_replies=args.save_replies, retry_budget=args.retry_budget, manifest=manifest,
        )
    except (ConfigError, TemplateError, ProfileError, GatewayError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    m = result.manifest
    print(f"{m.games_run} games run, {m.games_skipped} skipped, {m.decisions} decisions, {m.failures} failures")
    return EXIT_AGENT_FAILURES if m.failures else EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    try:
        histories = read_histories(args.histories)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    if not histories:
        print("error: no histories", file=sys.stderr)
        return EXIT_FATAL
    keys = _split(args.group_by) or list(GROUP_KEYS)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cells = aggregate(group_final_scores(histories, keys))
        series = trajectories(histories, args.encoding)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    write_aggregates_csv(out / "aggregates.csv", cells, keys)
    write_trajectories_csv(out / "trajectories.csv", series)
    print(f"{len(cells)} aggregate rows, {len(series)} trajectories -> {out}")
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    raw = {}
    try:
        for item in args.histories:
            name, eq, path = item.partition("=")
            if not eq:
                path, name = item, ""
            histories = read_histories(path)
            if not histories:
                raise ValueError(f"{path}: no histories")
            name = name or histories[0].llm or Path(path).stem
            if name in raw:
                raise ValueError(f"model {name!r} given twice")
            raw[name] = raw_metrics(histories, harsh=args.harsh, mild=args.mild)
        scorecard = build_scorecard(raw)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    out = Path(args.out)
    if out.is_dir():
        out = out / "scorecard.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_scorecard_json(out, scorecard)
    print(f"scorecard for {len(raw)} model(s) -> {out}")
    return EXIT_OK


def cmd_mock_server(args: argparse.Namespace) -> int:
    from .mockserver import MockLLMServer, first_option, random_option

    responder = first_option if args.mode == "first" else random_option(args.seed)
    server = MockLLMServer(responder=responder, host=args.host, port=args.port)
    print(f"mock LLM server on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gamearena", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config and its templates")
    p.add_argument("--config", required=True)
    p.add_argument("--templates-dir", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run a campaign")
    p.add_argument("--config", required=True)
    p.add_argument("--templates-dir", required=True)
    p.add_argument("--profiles", help="model profiles JSON (not needed for scripted agents)")
    p.add_argument("--variants", action="append",
                   help="variant ids, comma separated or repeated (e.g. pd_harsh:known)")
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--concurrency", type=int, default=1)
    p.add_argument("--mock-endpoint", help="route every profile to this local server")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--dedupe-mixed-personalities", type=_bool, nargs="?", const=True, default=True)
    p.add_argument("--retry-budget", type=int, default=3, help="re-asks after an unusable reply")
    p.add_argument("--gateway-retries", type=int, default=5, help="HTTP retries on 429/5xx/timeouts")
    p.add_argument("--provider-limit", type=int, default=4, help="in-flight requests per provider")
    p.add_argument("--max-output-tokens", type=int)
    p.add_argument("--save-replies", action="store_true", help="also write raw replies to replies.jsonl")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="aggregate final scores and trajectories")
    p.add_argument("--histories", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--group-by", action="append", help=f"subset of {','.join(GROUP_KEYS)}")
    p.add_argument("--encoding", choices=("action", "coordination"), default="action")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("score", help="four-metric scorecard across models")
    p.add_argument("--histories", nargs="+", required=True, metavar="[MODEL=]PATH")
    p.add_argument("--out", required=True)
    p.add_argument("--harsh", default="pd_harsh")
    p.add_argument("--mild", default="pd_mild")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("mock-server", help="serve canned completions locally")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8089)
    p.add_argument("--mode", choices=("first", "random"), default="first")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mock_server)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
