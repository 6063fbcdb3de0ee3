"""FastAPI application exposing the workbench verbs over HTTP.

Each endpoint is a thin wrapper: decode the request, call the core
function, persist outputs (artifacts, CSVs, run manifest) under the
request's output directory, and return a typed summary. Contract
violations map to HTTP 422 and diverged simulations to HTTP 409 so
clients can translate them into stable exit codes.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..artifacts import (
    ARTIFACT_SUFFIX,
    load_policy,
    load_residual,
    load_reward_model,
    save_policy,
    save_residual,
    save_reward_model,
)
from ..controller import available_presets, load_gains
from ..datagen import collect as core_collect
from ..datagen import dataset_to_trajectory_dicts
from ..dataset import FILE_SUFFIX, load_dataset
from ..errors import ContractViolationError, IntegrationDivergedError
from ..evaluate import (
    DiffusionAgent,
    ResidualAgent,
    ScriptedAgent,
    ZeroActionAgent,
    ablate as core_ablate,
    evaluate as core_evaluate,
    write_ablation_csv,
    write_episode_csv,
    write_summary_json,
)
from ..expert import generate_demo
from ..finetune import FinetuneConfig
from ..loop import DEFAULT_IK_CONFIG
from ..nn import load_params, params_hash
from ..produce import make_produce
from ..seeding import derive_seed
from ..train import (
    file_sha256,
    finetune_from_dataset,
    make_manifest,
    train_base_policy,
    train_reward_from_dataset,
    write_manifest,
)
from .models import (
    AblateRequest,
    AblateResponse,
    CellRow,
    CollectRequest,
    CollectResponse,
    EpisodeRow,
    EvaluateRequest,
    EvaluateResponse,
    FinetuneRequest,
    FinetuneResponse,
    GradeRequest,
    GradeResponse,
    GradeRow,
    HealthResponse,
    InspectRequest,
    InspectResponse,
    TrainBaseRequest,
    TrainBaseResponse,
    TrainRewardRequest,
    TrainRewardResponse,
)


def _gains(name: str | None):
    return load_gains(name) if name else None


def _ik_config(damping: float | None, null_gain: float | None):
    if damping is None and null_gain is None:
        return None
    overrides = {}
    if damping is not None:
        overrides["damping"] = damping
    if null_gain is not None:
        overrides["null_space_gain"] = null_gain
    return dataclasses.replace(DEFAULT_IK_CONFIG, **overrides)


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _episode_rows(result) -> list[EpisodeRow]:
    return [
        EpisodeRow(
            index=e.index, seed=e.seed, score=e.score,
            descriptor=e.descriptor, success=e.success,
            mean_reward=e.mean_reward, steps=e.steps,
            clip_events=e.clip_events, ik_failures=e.ik_failures,
            diverged=e.diverged,
        )
        for e in result.episodes
    ]


def _opt(x: float) -> float | None:
    return None if not np.isfinite(x) else float(x)


def create_app() -> FastAPI:
    app = FastAPI(title="peelbench", version=__version__)

    @app.exception_handler(ContractViolationError)
    async def _contract_handler(request: Request, exc: ContractViolationError):
        return JSONResponse(
            status_code=422,
            content={"error": "contract-violation", "detail": str(exc)},
        )

    @app.exception_handler(IntegrationDivergedError)
    async def _diverged_handler(request: Request, exc: IntegrationDivergedError):
        return JSONResponse(
            status_code=409,
            content={"error": "diverged", "detail": str(exc)},
        )

    @app.exception_handler(FileNotFoundError)
    async def _missing_handler(request: Request, exc: FileNotFoundError):
        return JSONResponse(
            status_code=422,
            content={"error": "contract-violation", "detail": str(exc)},
        )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.get("/presets/gains")
    def list_gain_presets() -> dict:
        return {"presets": available_presets()}

    @app.get("/presets/gains/{name}")
    def get_gain_preset(name: str) -> dict:
        return load_gains(name).to_dict()

    # ------------------------------------------------------------ collect

    @app.post("/collect", response_model=CollectResponse)
    def collect(req: CollectRequest) -> CollectResponse:
        out = _out_dir(req.out_dir)
        dataset_path = out / (req.name + FILE_SUFFIX)
        result = core_collect(
            req.category, req.n_demos, req.seed, dataset_path,
            task=req.task,
            noise_tiers=tuple(req.noise_tiers),
            tier_mix=tuple(req.tier_mix),
            tier_early_stop=tuple(req.tier_early_stop),
            gains=_gains(req.gains),
            ik_config=_ik_config(req.ik_damping, req.ik_null_gain),
        )
        summary = load_dataset(result.path).summary()
        manifest = make_manifest(
            "collect", req.model_dump(), req.seed,
            artifacts={"dataset": file_sha256(result.path)},
            metrics={
                "n_collected": result.n_collected,
                "n_flagged": result.n_flagged,
                "tier_counts": list(result.tier_counts),
                **summary,
            },
        )
        manifest_path = write_manifest(out / "collect-manifest.json", manifest)
        return CollectResponse(
            path=str(result.path),
            n_collected=result.n_collected,
            n_flagged=result.n_flagged,
            tier_counts=list(result.tier_counts),
            summary=summary,
            manifest_path=str(manifest_path),
        )

    # -------------------------------------------------------------- grade

    @app.post("/grade", response_model=GradeResponse)
    def grade(req: GradeRequest) -> GradeResponse:
        data = load_dataset(req.demos)
        tiers = list(data.header.get("noise_tiers", []))
        early = list(data.header.get("tier_early_stop", []))
        gains = _gains(req.gains)
        rows = []
        for i, rec in enumerate(data.trajectories):
            early_stop = 0.0
            if rec.noise in tiers and len(early) == len(tiers):
                early_stop = float(early[tiers.index(rec.noise)])
            profile = make_produce(derive_seed(rec.seed, "produce"),
                                   rec.category)
            demo = generate_demo(
                rec.category, rec.seed,
                depth_noise=rec.noise * profile.t_nom,
                early_stop_prob=early_stop,
                task=data.header.get("task"),
                gains=gains,
                profile=profile,
            )
            rows.append(GradeRow(
                index=i, seed=rec.seed, noise=rec.noise,
                stored_score=rec.score, replayed_score=demo.qual.score,
                descriptor=demo.qual.descriptor,
                match=demo.qual.score == rec.score,
            ))
        out = _out_dir(req.out_dir)
        csv_path = out / "grades.csv"
        import csv as _csv

        with csv_path.open("w", newline="") as fh:
            writer = _csv.DictWriter(fh, fieldnames=list(GradeRow.model_fields))
            writer.writeheader()
            for row in rows:
                doc = row.model_dump()
                doc["match"] = int(doc["match"])
                writer.writerow(doc)
        scores = [r.replayed_score for r in rows]
        return GradeResponse(
            n_trajectories=len(rows),
            all_match=all(r.match for r in rows),
            success_rate=float(np.mean([s > 3 for s in scores])) if scores else 0.0,
            score_histogram={str(s): scores.count(s) for s in sorted(set(scores))},
            rows=rows,
            csv_path=str(csv_path),
        )

    # --------------------------------------------------------- train-base

    @app.post("/train-base", response_model=TrainBaseResponse)
    def train_base(req: TrainBaseRequest) -> TrainBaseResponse:
        data = load_dataset(req.demos)
        policy, losses = train_base_policy(
            data, req.seed, epochs=req.epochs, batch_size=req.batch_size,
            lr=req.lr, dropout_rate=req.dropout_rate,
        )
        out = _out_dir(req.out_dir)
        policy_path = save_policy(out / ("base-policy" + ARTIFACT_SUFFIX),
                                  policy)
        manifest = make_manifest(
            "train-base", req.model_dump(), req.seed,
            inputs={"demos": file_sha256(req.demos)},
            artifacts={"policy": policy.param_hash()},
            metrics={"final_loss": losses[-1], "losses": losses},
        )
        manifest_path = write_manifest(out / "train-base-manifest.json",
                                       manifest)
        return TrainBaseResponse(
            policy_path=str(policy_path),
            policy_hash=policy.param_hash(),
            n_steps=int(sum(len(t) for t in data.trajectories)),
            losses=losses,
            final_loss=losses[-1],
            manifest_path=str(manifest_path),
        )

    # ------------------------------------------------------- train-reward

    @app.post("/train-reward", response_model=TrainRewardResponse)
    def train_reward(req: TrainRewardRequest) -> TrainRewardResponse:
        data = load_dataset(req.demos)
        base = load_policy(req.base)
        model, final_loss = train_reward_from_dataset(
            base, data, req.seed, density=req.density, epochs=req.epochs,
            batch_size=req.batch_size, lr=req.lr,
        )
        out = _out_dir(req.out_dir)
        model_path = save_reward_model(
            out / ("reward-model" + ARTIFACT_SUFFIX), model)
        manifest = make_manifest(
            "train-reward", req.model_dump(), req.seed,
            inputs={"demos": file_sha256(req.demos),
                    "base": base.param_hash()},
            artifacts={"reward_model": model.param_hash()},
            metrics={"final_loss": final_loss},
        )
        manifest_path = write_manifest(out / "train-reward-manifest.json",
                                       manifest)
        return TrainRewardResponse(
            model_path=str(model_path),
            model_hash=model.param_hash(),
            final_loss=final_loss,
            manifest_path=str(manifest_path),
        )

    # ----------------------------------------------------------- finetune

    @app.post("/finetune", response_model=FinetuneResponse)
    def finetune_verb(req: FinetuneRequest) -> FinetuneResponse:
        data = load_dataset(req.demos)
        base = load_policy(req.base)
        model = load_reward_model(req.reward_model) if req.reward_model else None
        cfg = FinetuneConfig(
            scheme=req.scheme, beta=req.beta, alpha_reg=req.alpha_reg,
            filter_fraction=req.filter_fraction,
            iql_expectile=req.iql_expectile,
            reward_source=req.reward_source, epochs=req.epochs,
            batch_size=req.batch_size, lr=req.lr,
        )
        result = finetune_from_dataset(
            base, data, model, cfg, req.seed, density=req.reward_density)
        out = _out_dir(req.out_dir)
        residual_path = policy_path = None
        artifacts = {}
        if result.residual is not None:
            residual_path = str(save_residual(
                out / ("residual" + ARTIFACT_SUFFIX), result.residual))
            artifacts["residual"] = result.residual.param_hash()
        if result.policy is not None:
            policy_path = str(save_policy(
                out / ("finetuned-policy" + ARTIFACT_SUFFIX), result.policy))
            artifacts["policy"] = result.policy.param_hash()
        manifest = make_manifest(
            "finetune", req.model_dump(), req.seed,
            inputs={
                "demos": file_sha256(req.demos),
                "base": result.base_hash_before,
                **({"reward_model": model.param_hash()} if model else {}),
            },
            artifacts=artifacts,
            metrics=result.manifest,
        )
        manifest_path = write_manifest(out / "finetune-manifest.json",
                                       manifest)
        return FinetuneResponse(
            scheme=result.scheme,
            residual_path=residual_path,
            policy_path=policy_path,
            base_hash=result.base_hash_after,
            final_loss=result.final_loss,
            n_retained=int(result.manifest.get("n_retained", 0)),
            manifest_path=str(manifest_path),
        )

    # ----------------------------------------------------------- evaluate

    def _episode_ladder(req) -> tuple[int, ...] | None:
        if req.episode_seeds is not None and req.episode_seeds_from is not None:
            raise ContractViolationError(
                "give either episode_seeds or episode_seeds_from, not both")
        if req.episode_seeds is not None:
            return tuple(req.episode_seeds)
        if req.episode_seeds_from is not None:
            data = load_dataset(req.episode_seeds_from)
            seeds = tuple(rec.seed for rec in data.trajectories)
            return seeds[: req.n_episodes]
        return None

    def _resolve_agent(req: EvaluateRequest):
        if req.agent == "zero":
            return ZeroActionAgent(), None
        if req.agent == "scripted":
            return ScriptedAgent(depth_noise=req.depth_noise,
                                 early_stop_prob=req.early_stop_prob), None
        if req.agent != "policy":
            raise ContractViolationError(
                f"unknown agent {req.agent!r}; expected policy|scripted|zero")
        if not req.base:
            raise ContractViolationError("agent 'policy' requires a base path")
        base = load_policy(req.base)
        hashes = {"base": base.param_hash()}
        if req.residual:
            residual = load_residual(req.residual)
            model = (load_reward_model(req.reward_model)
                     if req.reward_model else None)
            hashes["residual"] = residual.param_hash()
            if model is not None:
                hashes["reward_model"] = model.param_hash()
            return ResidualAgent(base, residual, model, label="residual"), hashes
        return DiffusionAgent(base, label="policy"), hashes

    @app.post("/evaluate", response_model=EvaluateResponse)
    def evaluate_verb(req: EvaluateRequest) -> EvaluateResponse:
        agent, hashes = _resolve_agent(req)
        result = core_evaluate(
            agent, req.category, req.n_episodes, req.seed,
            task=req.task, max_steps=req.max_steps, gains=_gains(req.gains),
            ik_config=_ik_config(req.ik_damping, req.ik_null_gain),
            label=req.label, episode_seeds=_episode_ladder(req),
        )
        out = _out_dir(req.out_dir)
        csv_path = out / "episodes.csv"
        summary_path = out / "summary.json"
        write_episode_csv(csv_path, result)
        write_summary_json(summary_path, result.summary())
        manifest = make_manifest(
            "evaluate", req.model_dump(), req.seed,
            inputs=hashes or {},
            metrics=result.summary(),
        )
        manifest_path = write_manifest(out / "evaluate-manifest.json",
                                       manifest)
        return EvaluateResponse(
            label=result.label,
            category=result.category,
            n_episodes=result.n_episodes,
            success_rate=result.success_rate,
            mean_score=result.mean_score,
            mean_reward=result.mean_reward,
            n_diverged=result.n_diverged,
            episodes=_episode_rows(result),
            csv_path=str(csv_path),
            summary_path=str(summary_path),
            manifest_path=str(manifest_path),
        )

    # ------------------------------------------------------------- ablate

    @app.post("/ablate", response_model=AblateResponse)
    def ablate_verb(req: AblateRequest) -> AblateResponse:
        data = load_dataset(req.demos)
        base = load_policy(req.base)
        model = load_reward_model(req.reward_model) if req.reward_model else None
        trajectories = dataset_to_trajectory_dicts(data)
        cells = core_ablate(
            base, trajectories, model, req.category, req.seed,
            schemes=tuple(req.schemes),
            densities=tuple(req.densities),
            n_episodes=req.n_episodes,
            max_steps=req.max_steps,
            task=req.task,
            config_overrides={
                "reward_source": req.reward_source,
                "beta": req.beta,
                "alpha_reg": req.alpha_reg,
                "epochs": req.epochs,
            },
            episode_seeds=_episode_ladder(req),
        )
        out = _out_dir(req.out_dir)
        csv_path = out / "ablation.csv"
        write_ablation_csv(csv_path, cells)
        rows = [
            CellRow(
                cell=c.cell, scheme=c.scheme, density=c.density,
                success_rate=_opt(c.success_rate),
                mean_score=_opt(c.mean_score),
                mean_reward=_opt(c.mean_reward),
                n_diverged=c.n_diverged, error=c.error,
            )
            for c in cells
        ]
        manifest = make_manifest(
            "ablate", req.model_dump(), req.seed,
            inputs={"demos": file_sha256(req.demos),
                    "base": base.param_hash(),
                    **({"reward_model": model.param_hash()} if model else {})},
            metrics={"cells": [r.model_dump() for r in rows]},
        )
        manifest_path = write_manifest(out / "ablate-manifest.json", manifest)
        return AblateResponse(
            cells=rows,
            csv_path=str(csv_path),
            manifest_path=str(manifest_path),
        )

    # ------------------------------------------------------------ inspect

    @app.post("/inspect", response_model=InspectResponse)
    def inspect(req: InspectRequest) -> InspectResponse:
        path = Path(req.path)
        if str(path).endswith(FILE_SUFFIX):
            data = load_dataset(path)
            return InspectResponse(
                kind="dataset",
                info={"header": data.header, "summary": data.summary()},
            )
        if path.suffix == ARTIFACT_SUFFIX:
            arrays, meta = load_params(path)
            return InspectResponse(
                kind=meta.get("kind", "unknown"),
                info={
                    "meta": meta,
                    "param_hash": params_hash(arrays),
                    "n_arrays": len(arrays),
                    "n_parameters": int(sum(a.size for a in arrays)),
                },
            )
        if path.suffix == ".json":
            return InspectResponse(
                kind="json", info=json.loads(path.read_text()))
        raise ContractViolationError(
            f"cannot inspect {path}: expected a dataset ({FILE_SUFFIX}), "
            f"artifact ({ARTIFACT_SUFFIX}), or JSON file")

    return app
