"""Command-line client for the workbench.

Every verb builds a JSON request and posts it to the service layer —
in-process by default, or to a remote server via ``--server``. The CLI
holds no logic of its own beyond flag parsing and exit-code mapping:

* 0 — success (response JSON printed to stdout)
* 2 — contract violation (bad config, malformed input, missing file)
* 3 — simulation diverged
* 1 — anything else
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

#: Verbs and the service route each one posts to.
ROUTES = {
    "collect": "/collect",
    "grade": "/grade",
    "train-base": "/train-base",
    "train-reward": "/train-reward",
    "finetune": "/finetune",
    "evaluate": "/evaluate",
    "ablate": "/ablate",
    "inspect": "/inspect",
}


def _csv_floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _csv_strs(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _csv_ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _add_episode_ladder(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--episode-seeds", dest="episode_seeds",
                        type=_csv_ints, default=None,
                        help="comma-separated explicit episode seeds")
    parser.add_argument("--episode-seeds-from", dest="episode_seeds_from",
                        type=str, default=None,
                        help="dataset whose stored produce seeds form the "
                             "episode ladder (training-distribution eval)")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed for this run")
    parser.add_argument("--config", type=str, default=None,
                        help="JSON file with default settings "
                             "(top-level and/or per-verb sections)")
    parser.add_argument("--out", type=str, default=None,
                        help="output directory for artifacts and manifests")
    parser.add_argument("--server", type=str, default=None,
                        help="base URL of a running service; "
                             "default runs in-process")


def _add_gains_ik(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--gains", type=str, default=None,
                        help="controller gain preset name or JSON path")
    parser.add_argument("--ik.damping", dest="ik_damping", type=float,
                        default=None, help="IK damped-least-squares term")
    parser.add_argument("--ik.null-gain", dest="ik_null_gain", type=float,
                        default=None, help="IK null-space posture gain")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peelbench",
        description="Peeling workbench: collect demos, train, and evaluate.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("collect", help="generate expert demos into a dataset")
    p.add_argument("--category", type=str, default=None)
    p.add_argument("--n-demos", dest="n_demos", type=int, default=None)
    p.add_argument("--name", type=str, default=None,
                   help="dataset file stem (suffix added automatically)")
    p.add_argument("--reward.task", dest="task", type=str, default=None,
                   help="reward table to grade against")
    p.add_argument("--noise-tiers", dest="noise_tiers", type=_csv_floats,
                   default=None, help="comma-separated tier noise scales")
    p.add_argument("--tier-mix", dest="tier_mix", type=_csv_floats,
                   default=None, help="comma-separated tier probabilities")
    p.add_argument("--tier-early-stop", dest="tier_early_stop",
                   type=_csv_floats, default=None,
                   help="comma-separated per-tier early-stop probabilities")
    _add_gains_ik(p)
    _add_common(p)

    p = sub.add_parser("grade", help="replay a dataset through the grader")
    p.add_argument("--demos", type=str, default=None, help="dataset path")
    p.add_argument("--gains", type=str, default=None)
    _add_common(p)

    p = sub.add_parser("train-base", help="train the diffusion base policy")
    p.add_argument("--demos", type=str, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--dropout-rate", dest="dropout_rate", type=float,
                   default=None)
    _add_common(p)

    p = sub.add_parser("train-reward", help="train the reward model")
    p.add_argument("--demos", type=str, default=None)
    p.add_argument("--base", type=str, default=None, help="base policy path")
    p.add_argument("--reward.density", dest="density", type=str, default=None,
                   help="reward density mode for the targets")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    _add_common(p)

    p = sub.add_parser("finetune", help="fit a residual policy on the base")
    p.add_argument("--demos", type=str, default=None)
    p.add_argument("--base", type=str, default=None)
    p.add_argument("--reward-model", dest="reward_model", type=str,
                   default=None)
    p.add_argument("--scheme", type=str, default=None)
    p.add_argument("--reward-density", dest="reward_density", type=str,
                   default=None)
    p.add_argument("--reward-source", dest="reward_source", type=str,
                   default=None, help="model-predicted or annotated")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--alpha-reg", dest="alpha_reg", type=float, default=None)
    p.add_argument("--filter-fraction", dest="filter_fraction", type=float,
                   default=None)
    p.add_argument("--iql-expectile", dest="iql_expectile", type=float,
                   default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    _add_common(p)

    p = sub.add_parser("evaluate", help="roll out an agent over episodes")
    p.add_argument("--category", type=str, default=None)
    p.add_argument("--n-episodes", dest="n_episodes", type=int, default=None)
    p.add_argument("--agent", type=str, default=None,
                   help="policy (default), scripted, or zero")
    p.add_argument("--base", type=str, default=None)
    p.add_argument("--residual", type=str, default=None)
    p.add_argument("--reward-model", dest="reward_model", type=str,
                   default=None)
    p.add_argument("--reward.task", dest="task", type=str, default=None)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    p.add_argument("--depth-noise", dest="depth_noise", type=float,
                   default=None, help="scripted agent depth noise (m)")
    p.add_argument("--early-stop-prob", dest="early_stop_prob", type=float,
                   default=None)
    p.add_argument("--label", type=str, default=None)
    _add_episode_ladder(p)
    _add_gains_ik(p)
    _add_common(p)

    p = sub.add_parser("ablate", help="run the scheme/density grid")
    p.add_argument("--demos", type=str, default=None)
    p.add_argument("--base", type=str, default=None)
    p.add_argument("--reward-model", dest="reward_model", type=str,
                   default=None)
    p.add_argument("--category", type=str, default=None)
    p.add_argument("--schemes", type=_csv_strs, default=None,
                   help="comma-separated cells (include 'base' for the "
                        "unfinetuned reference)")
    p.add_argument("--densities", type=_csv_strs, default=None,
                   help="comma-separated reward density modes")
    p.add_argument("--n-episodes", dest="n_episodes", type=int, default=None)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    p.add_argument("--reward.task", dest="task", type=str, default=None)
    p.add_argument("--reward-source", dest="reward_source", type=str,
                   default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--alpha-reg", dest="alpha_reg", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    _add_episode_ladder(p)
    _add_common(p)

    p = sub.add_parser("inspect", help="describe a dataset, artifact, or "
                                       "manifest file")
    p.add_argument("path", type=str, help="file to inspect")
    _add_common(p)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", type=str, default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)

    return parser


#: argparse dests that steer the client itself rather than the request.
_META_KEYS = {"verb", "config", "server", "seed", "out"}


def build_request(args: argparse.Namespace) -> dict:
    """Merge config-file defaults with explicit flags (flags win)."""
    body: dict = {}
    if args.config:
        config = json.loads(Path(args.config).read_text())
        if not isinstance(config, dict):
            raise ValueError("--config must hold a JSON object")
        body.update({k: v for k, v in config.items()
                     if not isinstance(v, dict)})
        section = config.get(args.verb)
        if isinstance(section, dict):
            body.update(section)
    if args.seed is not None:
        body["seed"] = args.seed
    if args.out is not None:
        body["out_dir"] = args.out
    for key, value in vars(args).items():
        if key in _META_KEYS or value is None:
            continue
        body[key] = value
    return body


class ServiceClient:
    """POSTs requests either in-process or to a remote server."""

    def __init__(self, server: str | None = None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def post(self, route: str, body: dict):
        return self._client.post(route, json=body)


def _exit_code(status: int) -> int:
    if status == 200:
        return 0
    if status == 422:
        return 2
    if status == 409:
        return 3
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.verb == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0

    try:
        body = build_request(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    client = ServiceClient(args.server)
    response = client.post(ROUTES[args.verb], body)
    try:
        payload = response.json()
    except ValueError:
        payload = {"error": "unparseable-response", "detail": response.text}

    code = _exit_code(response.status_code)
    if code == 0:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(json.dumps(payload, indent=2, sort_keys=True), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
