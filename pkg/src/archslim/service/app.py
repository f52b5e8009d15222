"""The search service: every pipeline as a synchronous endpoint.

Deploy this on the machine whose inference speed matters: cost profiles
then measure the right hardware, and search jobs run where the profile was
taken.  Jobs execute synchronously in the request; desk-scale runs finish
in seconds to minutes.  All derived randomness comes from the request's
seeds, so identical requests produce identical responses.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from .. import costmodel, describe, model, space, tasks, training, verify
from ..errors import ArchslimError, ConfigError, InvalidArchitectureError
from ..grad import Rng
from ..schemas import Provenance, RunConfig
from . import models as m


def _provenance(run: RunConfig, profile_id: str) -> Provenance:
    return Provenance(
        algorithm=run.algorithm,
        cost_weight=run.hyperparams.cost_weight,
        policy_lr=run.hyperparams.policy_lr if run.algorithm == "sdo" else None,
        seed=run.hyperparams.seed,
        profile_id=profile_id,
        config_hash=describe.config_hash(run),
    )


def _config_error(exc: Exception) -> HTTPException:
    return HTTPException(status_code=400, detail=str(exc))


def _runtime_error(exc: Exception) -> HTTPException:
    return HTTPException(status_code=500, detail=str(exc))


def create_app() -> FastAPI:
    app = FastAPI(title="archslim service", version=__version__)

    @app.get("/health", response_model=m.HealthResponse)
    def health() -> m.HealthResponse:
        return m.HealthResponse(status="ok", version=__version__)

    @app.post("/profile", response_model=m.ProfileResponse)
    def run_profile(req: m.ProfileRequest) -> m.ProfileResponse:
        try:
            prof = costmodel.profile(
                req.space, lengths=tuple(req.lengths), reps=req.reps,
                rng=Rng(req.seed), machine=req.machine,
            )
        except (ConfigError, ValueError) as exc:
            raise _config_error(exc)
        return m.ProfileResponse(profile=prof, csv=costmodel.measurements_csv(prof))

    @app.post("/search", response_model=m.SearchResponse)
    def run_search(req: m.SearchRequest) -> m.SearchResponse:
        run = req.run
        profile = training.resolve_profile(run.profile)
        try:
            task = tasks.generate_task(run.task)
            result = training.train_search(run.space, task, run.algorithm,
                                           run.hyperparams, profile)
        except (ConfigError, InvalidArchitectureError) as exc:
            raise _config_error(exc)
        except ArchslimError as exc:
            raise _runtime_error(exc)
        prov = _provenance(run, profile.profile_id)
        description = describe.extract_description(result.selected, result.template,
                                                   result.costs, prov)
        checkpoint = model.dump_weights(result.net)
        checkpoint["provenance"] = prov.model_dump()
        return m.SearchResponse(
            algorithm=run.algorithm,
            metrics=result.history,
            selected=describe.selected_architecture(result.selected, result.template, prov),
            description=description,
            dot=describe.export_dot(description),
            dev_metric=result.dev_metric,
            cost=result.cost,
            speedup=result.speedup.predicted if not result.speedup.infinite else 0.0,
            speedup_infinite=result.speedup.infinite,
            valid=result.valid,
            checkpoint=checkpoint,
            config_hash=prov.config_hash,
        )

    @app.post("/grid", response_model=m.GridResponse)
    def run_grid(req: m.GridRequest) -> m.GridResponse:
        run = req.run
        profile = training.resolve_profile(run.profile)
        try:
            task = tasks.generate_task(run.task)
            result = training.grid_search(
                run.space, task, run.algorithm, run.hyperparams, profile,
                cost_weight_grid=req.cost_weight_grid,
                policy_lr_grid=req.policy_lr_grid,
                quality_floor=req.quality_floor,
            )
        except (ConfigError, InvalidArchitectureError) as exc:
            raise _config_error(exc)
        except ArchslimError as exc:
            raise _runtime_error(exc)
        return m.GridResponse(result=result, csv=training.grid_csv(result),
                              config_hash=describe.config_hash(req))

    @app.post("/retrain", response_model=m.RetrainResponse)
    def run_retrain(req: m.RetrainRequest) -> m.RetrainResponse:
        try:
            task = tasks.generate_task(req.task)
            trained, history = training.retrain(
                dict(req.selected.values), req.selected.space, task, req.hyperparams,
            )
        except (ConfigError, InvalidArchitectureError) as exc:
            raise _config_error(exc)
        except ArchslimError as exc:
            raise _runtime_error(exc)
        checkpoint = model.dump_weights(trained.net)
        checkpoint["provenance"] = {
            "seed": req.hyperparams.seed, "config_hash": describe.config_hash(req),
        }
        return m.RetrainResponse(
            metrics=history,
            dev_metric=trained.accuracy(task.dev),
            checkpoint=checkpoint,
            config_hash=describe.config_hash(req),
        )

    @app.post("/distill", response_model=m.DistillResponse)
    def run_distill(req: m.DistillRequest) -> m.DistillResponse:
        try:
            task = tasks.generate_task(req.task)
            teacher_net = model.load_weights(req.teacher_checkpoint)
            template = space.build_space(teacher_net.config)
            teacher = training.TrainedModel(template=template, net=teacher_net,
                                            gates=dict(req.teacher_gates), kind=task.kind)
            result = training.distill(
                teacher, task, req.distill, req.hyperparams,
                student_cfg=req.student_space, student_gates=req.student_gates,
                algorithm=req.algorithm, profile=req.profile,
            )
        except (ConfigError, InvalidArchitectureError) as exc:
            raise _config_error(exc)
        except ArchslimError as exc:
            raise _runtime_error(exc)
        checkpoint = model.dump_weights(result.student.net)
        checkpoint["provenance"] = {
            "seed": req.hyperparams.seed, "config_hash": describe.config_hash(req),
        }
        return m.DistillResponse(
            history=[m.DistillStep(**vars(rec)) for rec in result.history],
            dev_metric=result.dev_metric,
            checkpoint=checkpoint,
            config_hash=describe.config_hash(req),
            selected=result.selected,
            cost=result.cost,
        )

    @app.post("/export", response_model=m.ExportResponse)
    def run_export(req: m.ExportRequest) -> m.ExportResponse:
        profile = training.resolve_profile(req.profile)
        try:
            template = space.build_space(req.selected.space)
            costs = costmodel.param_costs(template, profile)
            description = describe.extract_description(
                dict(req.selected.values), template, costs, req.selected.provenance,
            )
        except (ConfigError, InvalidArchitectureError) as exc:
            raise _config_error(exc)
        return m.ExportResponse(description=description, dot=describe.export_dot(description))

    @app.post("/verify", response_model=m.VerifyResponse)
    def run_verify() -> m.VerifyResponse:
        checks = [m.VerifyCheck(name=c.name, passed=c.passed, detail=c.detail)
                  for c in verify.run_all()]
        return m.VerifyResponse(passed=all(c.passed for c in checks), checks=checks)

    return app
