"""Single command-line entry point.

``serve`` runs the integrated service; every other subcommand is a
short-lived client — of the HTTP API for data-plane operations, of the
DICOM network for ``echo``/``move``, or of the filesystem for corpus
generation.  Output is JSON on stdout (compact with ``--json``, indented
otherwise).  Exit codes: 0 success, 1 operational failure, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
import threading
from pathlib import Path

import httpx

from niffler.config import load_config
from niffler.errors import ConfigError, CorruptJournal, InvalidProfile, NifflerError
from niffler.net.scu import MoveRequest, RemotePeer, send_c_echo, send_c_move
from niffler.simulate import (
    ArchiveConfig,
    Corpus,
    Gradient,
    ImplantRect,
    Noise,
    StudySpec,
    generate_corpus,
    serve_archive,
    stream,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

DEFAULT_API = "http://127.0.0.1:8642"


class CliFailure(Exception):
    """An error with a message for stderr and a chosen exit code."""

    def __init__(self, message: str, code: int = EXIT_FAILURE) -> None:
        super().__init__(message)
        self.code = code


def emit(args: argparse.Namespace, payload: object) -> None:
    indent = None if getattr(args, "json", False) else 2
    print(json.dumps(payload, indent=indent, sort_keys=True))


# --- API client ------------------------------------------------------------------


def api_call(args, method: str, path: str, body: dict | None = None,
             authed: bool = False) -> dict:
    url = args.api.rstrip("/") + path
    headers = {}
    if authed:
        if not args.token:
            raise CliFailure("this command mutates state and needs --token", EXIT_USAGE)
        headers["Authorization"] = f"Bearer {args.token}"
    try:
        response = httpx.request(method, url, json=body, headers=headers, timeout=60.0)
    except httpx.HTTPError as exc:
        raise CliFailure(f"API request to {url} failed: {exc}") from exc
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise CliFailure(f"API returned {response.status_code}: {detail}")
    return response.json()


# --- cohort flags ------------------------------------------------------------------


def add_cohort_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--collection", required=True, help="document collection to query")
    parser.add_argument("--eq", action="append", default=[], metavar="ATTR=VALUE",
                        help="attribute equals value (repeatable)")
    parser.add_argument("--in", dest="in_values", action="append", default=[],
                        metavar="ATTR=V1,V2", help="attribute is one of the values")
    parser.add_argument("--range", dest="ranges", action="append", default=[],
                        metavar="ATTR=LO..HI", help="attribute in [LO, HI]")
    parser.add_argument("--present", action="append", default=[], metavar="ATTR",
                        help="attribute must be present")


def _split(spec: str, flag: str) -> tuple[str, str]:
    attr, sep, value = spec.partition("=")
    if not sep or not attr:
        raise CliFailure(f"{flag} expects ATTR=VALUE, got {spec!r}", EXIT_USAGE)
    return attr, value


def cohort_from_flags(args) -> dict:
    where: list[dict] = []
    for spec in args.eq:
        attr, value = _split(spec, "--eq")
        where.append({"attr": attr, "op": "eq", "value": value})
    for spec in args.in_values:
        attr, value = _split(spec, "--in")
        values = [part for part in value.split(",") if part]
        if not values:
            raise CliFailure(f"--in needs at least one value: {spec!r}", EXIT_USAGE)
        where.append({"attr": attr, "op": "in", "values": values})
    for spec in args.ranges:
        attr, value = _split(spec, "--range")
        lo, sep, hi = value.partition("..")
        if not sep:
            raise CliFailure(f"--range expects ATTR=LO..HI, got {spec!r}", EXIT_USAGE)
        where.append({"attr": attr, "op": "range", "lo": lo, "hi": hi})
    for attr in args.present:
        where.append({"attr": attr, "op": "present"})
    query: dict = {"collection": args.collection}
    if where:
        query["where"] = where
    if getattr(args, "limit", None) is not None:
        query["limit"] = args.limit
    if getattr(args, "offset", None) is not None:
        query["offset"] = args.offset
    if getattr(args, "project", None):
        query["project"] = [p for p in args.project.split(",") if p]
    return query


# --- subcommand handlers ----------------------------------------------------------------


def cmd_serve(args) -> None:
    from niffler.service import GatewayService

    config = load_config(args.config)
    service = GatewayService(config)

    def banner(svc: GatewayService) -> None:
        emit(args, {
            "listener_ae": config.listener_ae,
            "listener_port": svc.listener_port,
            "api": f"http://{config.api_host}:{svc.api_port}",
        })
        sys.stdout.flush()

    service.run_forever(on_started=banner)


def _pattern_from_flags(args):
    if args.pattern == "noise":
        return Noise()
    if args.pattern == "gradient":
        return Gradient()
    return ImplantRect(
        probability=args.implant_probability,
        min_size=args.implant_min,
        max_size=args.implant_max,
    )


def cmd_simulate_generate(args) -> dict:
    spec = StudySpec(
        patient_count=args.patients,
        studies_per_patient=args.studies,
        series_per_study=args.series,
        instances_per_series=args.instances,
        rng_seed=args.seed,
        pattern=_pattern_from_flags(args),
        rows=args.rows,
        columns=args.columns,
    )
    corpus = generate_corpus(spec, Path(args.out))
    return {
        "out": str(corpus.root),
        "instances": len(corpus.instances),
        "series": len(corpus.by_series()),
        "studies": len(corpus.by_study()),
        "positives": len(corpus.truth.positives()),
    }


def cmd_simulate_stream(args) -> dict:
    corpus = Corpus.load(Path(args.corpus))
    peer = RemotePeer(args.host, args.port, called_ae=args.called_ae,
                      calling_ae=args.calling_ae)
    report = stream(peer, corpus, rate=args.rate, association_policy=args.policy)
    return {
        "sent": report.sent,
        "failed": len(report.failed),
        "failures": [
            {"sop_instance_uid": o.sop_instance_uid, "detail": o.detail}
            for o in report.failed
        ],
    }


def _parse_destination(spec: str) -> tuple[str, tuple[str, int]]:
    ae, sep, endpoint = spec.partition("=")
    host, sep2, port = endpoint.partition(":")
    if not sep or not sep2 or not ae or not host or not port.isdigit():
        raise CliFailure(f"--destination expects AE=HOST:PORT, got {spec!r}", EXIT_USAGE)
    return ae, (host, int(port))


def cmd_simulate_archive(args) -> None:
    corpus = Corpus.load(Path(args.corpus))
    destinations = dict(_parse_destination(spec) for spec in args.destination)
    config = ArchiveConfig(
        destinations=destinations, ae_title=args.ae, host=args.host, port=args.port
    )
    archive = serve_archive(corpus, config)
    host, port = archive.endpoint
    emit(args, {
        "ae": args.ae,
        "host": host,
        "port": port,
        "instances": len(corpus.instances),
    })
    sys.stdout.flush()
    done = threading.Event()
    if threading.current_thread() is threading.main_thread():
        for signum in (signal.SIGTERM, signal.SIGINT):
            signal.signal(signum, lambda _sig, _frame: done.set())
    try:
        done.wait(timeout=args.duration)
    finally:
        archive.stop()


def cmd_query(args) -> dict:
    return api_call(args, "POST", "/query", body=cohort_from_flags(args))


def cmd_extract(args) -> dict:
    return api_call(args, "POST", "/admin/extract", authed=True)


def cmd_purge(args) -> dict:
    return api_call(args, "POST", "/admin/purge", authed=True)


def cmd_export(args) -> dict:
    body: dict = {"query": cohort_from_flags(args)}
    if args.strip:
        body["strip_list"] = [part for part in args.strip.split(",") if part]
    if args.salt_hex:
        body["salt_hex"] = args.salt_hex
    return api_call(args, "POST", "/export", body=body, authed=True)


def _pin_body(args) -> dict:
    body = {
        "patient_id": args.patient,
        "study_instance_uid": args.study,
        "series_instance_uid": args.series,
    }
    if getattr(args, "reason", None):
        body["reason"] = args.reason
    if getattr(args, "expires", None):
        body["expires_at"] = args.expires
    return body


def cmd_pin_add(args) -> dict:
    return api_call(args, "POST", "/pins", body=_pin_body(args), authed=True)


def cmd_pin_remove(args) -> dict:
    return api_call(args, "DELETE", "/pins", body=_pin_body(args), authed=True)


def cmd_pin_list(args) -> dict:
    return api_call(args, "GET", "/pins")


def cmd_jobs_submit(args) -> dict:
    body = {"query": cohort_from_flags(args), "plugin": args.plugin}
    return api_call(args, "POST", "/jobs", body=body, authed=True)


def cmd_jobs_status(args) -> dict:
    return api_call(args, "GET", f"/jobs/{args.job_id}")


def cmd_jobs_cancel(args) -> dict:
    return api_call(args, "POST", f"/jobs/{args.job_id}/cancel", authed=True)


def cmd_echo(args) -> dict:
    peer = RemotePeer(args.host, args.port, called_ae=args.called_ae,
                      calling_ae=args.calling_ae)
    status = send_c_echo(peer)
    if status != 0:
        raise CliFailure(f"peer answered C-ECHO with status 0x{status:04X}")
    return {"status": status}


def cmd_move(args) -> dict:
    peer = RemotePeer(args.host, args.port, called_ae=args.called_ae,
                      calling_ae=args.calling_ae)
    if args.study:
        request = MoveRequest(destination_ae=args.destination, query_level="STUDY",
                              match={"StudyInstanceUID": args.study})
    else:
        request = MoveRequest(destination_ae=args.destination, query_level="SERIES",
                              match={"SeriesInstanceUID": args.series})
    report = send_c_move(peer, request)
    return {
        "status": report.status,
        "completed": report.completed,
        "failed": report.failed,
        "warning": report.warning,
    }


# --- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true",
                        help="compact single-line JSON output")

    api = argparse.ArgumentParser(add_help=False)
    api.add_argument("--api", default=DEFAULT_API, help=f"API base URL (default {DEFAULT_API})")
    api.add_argument("--token", default="", help="bearer token for mutating operations")

    dicom_peer = argparse.ArgumentParser(add_help=False)
    dicom_peer.add_argument("--host", default="127.0.0.1")
    dicom_peer.add_argument("--port", type=int, required=True)
    dicom_peer.add_argument("--called-ae", default="NIFFLER")
    dicom_peer.add_argument("--calling-ae", default="NIFFLER-CLI")

    parser = argparse.ArgumentParser(
        prog="niffler",
        description="DICOM ingestion gateway: service, simulation, and operator tools.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("serve", parents=[common], help="run the integrated service")
    p.add_argument("--config", required=True, type=Path)
    p.set_defaults(handler=cmd_serve)

    p = sub.add_parser("simulate-generate", parents=[common],
                       help="write a deterministic synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--patients", type=int, default=1)
    p.add_argument("--studies", type=int, default=1)
    p.add_argument("--series", type=int, default=1)
    p.add_argument("--instances", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pattern", choices=("noise", "gradient", "implant"), default="noise")
    p.add_argument("--implant-probability", type=float, default=1.0)
    p.add_argument("--implant-min", type=int, default=8)
    p.add_argument("--implant-max", type=int, default=24)
    p.add_argument("--rows", type=int, default=64)
    p.add_argument("--columns", type=int, default=64)
    p.set_defaults(handler=cmd_simulate_generate)

    p = sub.add_parser("simulate-stream", parents=[common, dicom_peer],
                       help="play a corpus against a Store SCP")
    p.add_argument("--corpus", required=True)
    p.add_argument("--rate", type=float, default=50.0, help="instances per second")
    p.add_argument("--policy", choices=("long-lived", "per-study"), default="long-lived")
    p.set_defaults(handler=cmd_simulate_stream)

    p = sub.add_parser("simulate-archive", parents=[common],
                       help="serve a corpus as a C-MOVE archive")
    p.add_argument("--corpus", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--ae", default="SIM-ARCHIVE")
    p.add_argument("--destination", action="append", required=True,
                   metavar="AE=HOST:PORT", help="move destination (repeatable)")
    p.add_argument("--duration", type=float, default=None,
                   help="serve for this many seconds (default: until signal)")
    p.set_defaults(handler=cmd_simulate_archive)

    p = sub.add_parser("query", parents=[common, api], help="run a cohort query")
    add_cohort_flags(p)
    p.add_argument("--limit", type=int)
    p.add_argument("--offset", type=int)
    p.add_argument("--project", metavar="A,B", help="return only these attributes")
    p.set_defaults(handler=cmd_query)

    p = sub.add_parser("extract", parents=[common, api],
                       help="run one extraction tick now")
    p.add_argument("--once", action="store_true", required=True,
                   help="required; only single-tick mode exists")
    p.set_defaults(handler=cmd_extract)

    p = sub.add_parser("purge", parents=[common, api], help="run the purge now")
    p.add_argument("--now", action="store_true", required=True,
                   help="required; only immediate mode exists")
    p.set_defaults(handler=cmd_purge)

    p = sub.add_parser("export", parents=[common, api],
                       help="export a de-identified PNG+metadata bundle")
    add_cohort_flags(p)
    p.add_argument("--strip", metavar="A,B", help="override the attribute strip list")
    p.add_argument("--salt-hex", help="fix the surrogate salt (hex)")
    p.set_defaults(handler=cmd_export)

    p = sub.add_parser("pin", parents=[common], help="manage retention pins")
    pin_sub = p.add_subparsers(dest="pin_command", metavar="ACTION", required=True)
    for action, handler in (("add", cmd_pin_add), ("remove", cmd_pin_remove)):
        q = pin_sub.add_parser(action, parents=[common, api])
        q.add_argument("--patient", required=True)
        q.add_argument("--study", required=True)
        q.add_argument("--series", required=True)
        q.add_argument("--reason")
        if action == "add":
            q.add_argument("--expires", metavar="ISO8601")
        q.set_defaults(handler=handler)
    q = pin_sub.add_parser("list", parents=[common, api])
    q.set_defaults(handler=cmd_pin_list)

    p = sub.add_parser("jobs", parents=[common], help="submit and track inference jobs")
    jobs_sub = p.add_subparsers(dest="jobs_command", metavar="ACTION", required=True)
    q = jobs_sub.add_parser("submit", parents=[common, api])
    add_cohort_flags(q)
    q.add_argument("--plugin", required=True)
    q.set_defaults(handler=cmd_jobs_submit)
    q = jobs_sub.add_parser("status", parents=[common, api])
    q.add_argument("job_id")
    q.set_defaults(handler=cmd_jobs_status)
    q = jobs_sub.add_parser("cancel", parents=[common, api])
    q.add_argument("job_id")
    q.set_defaults(handler=cmd_jobs_cancel)

    p = sub.add_parser("echo", parents=[common, dicom_peer], help="C-ECHO a peer")
    p.set_defaults(handler=cmd_echo)

    p = sub.add_parser("move", parents=[common, dicom_peer],
                       help="ask a peer to C-MOVE a study or series")
    p.add_argument("--destination", required=True, metavar="AE")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--study", metavar="STUDY_UID")
    group.add_argument("--series", metavar="SERIES_UID")
    p.set_defaults(handler=cmd_move)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = getattr(args, "handler", None)
    if handler is None:
        parser.print_help(file=sys.stderr)
        return EXIT_USAGE
    try:
        payload = handler(args)
    except CliFailure as exc:
        print(f"niffler: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, CorruptJournal, InvalidProfile) as exc:
        print(f"niffler: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NifflerError as exc:
        print(f"niffler: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except KeyboardInterrupt:
        return EXIT_FAILURE
    if payload is not None:
        emit(args, payload)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
