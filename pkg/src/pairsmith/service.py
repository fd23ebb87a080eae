"""HTTP annotation service: task queue out, votes in, labels back to the loop.

State model: the append-only event log (events.jsonl) records only inputs —
experiment configs, advance commands, votes.  Everything else (pretraining,
adversarial phases, candidates, task contents, aggregation, retraining) is
recomputed deterministically, so startup replay reconstructs the exact
pre-crash state and a vote is durable the moment its line hits disk.

Two serve modes share every code path except who votes:
  oracle  advance() drives the simulated crowd through the same vote
          endpoint logic the UI would hit, then returns the finished row;
  live    advance() opens the tasks and returns; humans close them.

Experiments whose config says mode=auto never create tasks at all: labels
come from the sign rule, so advance() completes the batch synchronously.
"""

from __future__ import annotations

import hashlib
import json
import threading
from pathlib import Path

import numpy as np

from .artifacts import pair_slug, png_bytes
from .loop import ActiveExperiment, Candidate, ExperimentConfig, config_from_dict
from .oracle import (
    CHOICE_A,
    CHOICE_B,
    CHOICE_DISCARD,
    CONFIDENCE_LEVELS,
    REJECTED,
    AnnotatorModel,
    Vote,
    aggregate,
    simulate_votes,
)

ATTRIBUTE_NAMES = ("size", "brightness", "elongation", "tilt")

CHOICES = (CHOICE_A, CHOICE_B, CHOICE_DISCARD)

OPEN, COMPLETE, TASK_REJECTED = "open", "complete", "rejected"


def attribute_name(index: int) -> str:
    if 0 <= index < len(ATTRIBUTE_NAMES):
        return ATTRIBUTE_NAMES[index]
    return f"attribute-{index}"


class ApiError(Exception):
    def __init__(self, status: int, reason: str, detail: str = ""):
        super().__init__(detail or reason)
        self.status = status
        self.reason = reason
        self.detail = detail or reason


class TaskState:
    """One pair awaiting crowd judgment."""

    def __init__(self, task_id: str, exp_id: str, batch_index: int,
                 candidate: Candidate, k_required: int,
                 vote_seed: np.random.SeedSequence):
        self.task_id = task_id
        self.exp_id = exp_id
        self.batch_index = batch_index
        self.candidate = candidate
        self.k_required = k_required
        self.vote_seed = vote_seed
        self.state = OPEN
        self.votes: dict[str, Vote] = {}  # voter -> latest vote; insertion ordered
        self.aggregated = None

    def view(self, store: "ServiceStore") -> dict:
        c = self.candidate
        exp = store.experiments[self.exp_id].exp
        name = attribute_name(exp.config.attribute)
        return {
            "task_id": self.task_id,
            "experiment_id": self.exp_id,
            "batch": self.batch_index,
            "pair_id": pair_slug(c.rec_a.id, c.rec_b.id),
            "attribute": name,
            "question": f"which image shows MORE of {name}?",
            "image_a_url": store.image_url(c.rec_a.id),
            "image_b_url": store.image_url(c.rec_b.id),
            "k_received": len(self.votes),
            "k_required": self.k_required,
            "state": self.state,
        }


class ExperimentState:
    """Server-side wrapper: the experiment plus its annotation bookkeeping."""

    def __init__(self, exp_id: str, exp: ActiveExperiment):
        self.exp_id = exp_id
        self.exp = exp
        self.phase = "idle"  # idle | annotating
        self.batches_done = 0
        self.cand_rng = None
        self.asked = 0
        self.accepted = 0
        self.screened = 0
        self.open_task_ids: list[str] = []
        self.task_counter = 0

    @property
    def current_batch(self) -> int:
        return self.batches_done + 1

    def status(self) -> dict:
        exp = self.exp
        return {
            "experiment_id": self.exp_id,
            "strategy": exp.config.strategy,
            "mode": exp.config.mode,
            "attribute": exp.config.attribute,
            "attribute_name": attribute_name(exp.config.attribute),
            "phase": self.phase,
            "batches_done": self.batches_done,
            "batches_total": exp.config.batches,
            "batch_budget": exp.config.batch_budget,
            "open_tasks": len(self.open_task_ids),
            "accepted_this_batch": self.accepted,
        }


class ServiceStore:
    """All mutable service state behind one lock, fed by one event log."""

    def __init__(self, data_dir, mode: str = "oracle"):
        if mode not in ("live", "oracle"):
            raise ValueError(f"mode must be live or oracle, got {mode!r}")
        self.mode = mode
        self.data_dir = Path(data_dir)
        self.images_dir = self.data_dir / "images"
        self.images_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.data_dir / "events.jsonl"
        self.lock = threading.RLock()
        self.experiments: dict[str, ExperimentState] = {}
        self.tasks: dict[str, TaskState] = {}
        self._task_seq = 0  # global creation order, for stable tie-breaks
        self._replaying = False
        self._replay()

    # -- event log ------------------------------------------------------------

    def _log(self, event: dict):
        if self._replaying:
            return
        with self.log_path.open("a") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()

    def _replay(self):
        if not self.log_path.exists():
            return
        self._replaying = True
        try:
            with self.log_path.open() as fh:
                for line in fh:
                    event = json.loads(line)
                    kind = event["type"]
                    try:
                        if kind == "experiment_created":
                            self.create_experiment(event["config"],
                                                   exp_id=event["experiment_id"])
                        elif kind == "advance":
                            self.advance(event["experiment_id"])
                        elif kind == "vote":
                            self.submit_vote(event["task_id"], event["choice"],
                                             event["confidence"], event["voter"])
                    except ApiError:
                        # the original request got this same error; state after
                        # skipping the event matches the pre-crash service
                        continue
        finally:
            self._replaying = False

    # -- images -----------------------------------------------------------------

    def image_name(self, image_id: str) -> str:
        return hashlib.sha256(image_id.encode()).hexdigest()[:16] + ".png"

    def image_url(self, image_id: str) -> str:
        return f"/api/v1/images/{self.image_name(image_id)}"

    def _publish_image(self, image_id: str, pixels: np.ndarray, side: int):
        path = self.images_dir / self.image_name(image_id)
        if not path.exists():
            path.write_bytes(png_bytes(np.asarray(pixels).reshape(side, side)))

    # -- experiment lifecycle -----------------------------------------------------

    def create_experiment(self, config_blob: dict, exp_id: str | None = None) -> dict:
        with self.lock:
            try:
                config = config_from_dict(ExperimentConfig, config_blob)
                exp = ActiveExperiment(config)  # pretrains; deterministic
            except (ValueError, TypeError) as e:
                raise ApiError(400, "invalid_config", str(e)) from None
            if exp_id is None:
                exp_id = f"exp-{len(self.experiments):04d}"
            self.experiments[exp_id] = ExperimentState(exp_id, exp)
            self._log({"type": "experiment_created", "experiment_id": exp_id,
                       "config": config_blob})
            return {"experiment_id": exp_id, **self.experiments[exp_id].status()}

    def _get_exp(self, exp_id: str) -> ExperimentState:
        state = self.experiments.get(exp_id)
        if state is None:
            raise ApiError(404, "unknown_experiment", f"no experiment {exp_id!r}")
        return state

    def advance(self, exp_id: str) -> dict:
        with self.lock:
            state = self._get_exp(exp_id)
            if state.phase == "annotating":
                raise ApiError(409, "batch_incomplete",
                               f"batch {state.current_batch} still has "
                               f"{len(state.open_task_ids)} open tasks")
            if state.batches_done >= state.exp.config.batches:
                raise ApiError(409, "all_batches_done",
                               "every configured batch has completed")
            self._log({"type": "advance", "experiment_id": exp_id})
            batch = state.current_batch
            exp = state.exp

            if exp.config.mode == "auto" or exp.config.strategy != "adversarial":
                # no human in the loop: the library loop handles the batch
                row = exp.run_batch(batch)
                state.batches_done = batch
                return {"batch": batch, "row": row, **state.status()}

            state.cand_rng = exp.begin_adversarial_batch(batch)
            state.asked = 0
            state.accepted = 0
            state.screened = 0
            state.phase = "annotating"
            self._refill_tasks(state)
            if self.mode == "oracle" and not self._replaying:
                self._drive_oracle(state)
            return {"batch": batch, **state.status()}

    def _refill_tasks(self, state: ExperimentState):
        """Keep (open tasks + accepted) at the batch budget."""
        exp = state.exp
        budget = exp.config.batch_budget
        cap = max(1000, 100 * budget)
        screen = exp.screens_candidates()
        floor = exp.config.control.legibility_min
        side = exp.config.world.image_side
        while True:
            want = budget - state.accepted - len(state.open_task_ids)
            if want <= 0:
                return
            if state.asked + state.screened >= cap:
                raise ApiError(500, "rejection_cap",
                               f"{state.asked} annotation tasks "
                               f"({state.screened} proposals screened out) "
                               f"yielded only {state.accepted} labels")
            for cand in exp.sample_candidates(want, state.cand_rng,
                                              tag=f"{state.exp_id}-b{state.current_batch:02d}"):
                if len(state.open_task_ids) + state.accepted >= budget:
                    break
                # never shown to an annotator, so no budget is consumed
                if screen and exp.candidate_legibility(cand) < floor:
                    state.screened += 1
                    continue
                self._task_seq += 1
                state.task_counter += 1
                task_id = f"{state.exp_id}-t{state.task_counter:05d}"
                task = TaskState(
                    task_id, state.exp_id, state.current_batch, cand,
                    k_required=exp.config.annotator.k_votes,
                    vote_seed=exp.next_vote_seed())
                self.tasks[task_id] = task
                state.open_task_ids.append(task_id)
                self._publish_image(cand.rec_a.id, cand.rec_a.pixels, side)
                self._publish_image(cand.rec_b.id, cand.rec_b.pixels, side)

    def _drive_oracle(self, state: ExperimentState):
        """Simulated crowd: same vote path the UI uses, every vote logged."""
        model = AnnotatorModel(scale=state.exp.config.annotator.scale,
                               tau_discard=state.exp.config.tau_discard)
        while state.phase == "annotating":
            task = self.tasks[state.open_task_ids[0]]
            votes = simulate_votes(task.candidate.delta, model,
                                   k=task.k_required, seed=task.vote_seed)
            for i, v in enumerate(votes):
                if task.state != OPEN:
                    break
                self.submit_vote(task.task_id, v.choice, v.confidence,
                                 voter=f"oracle-{i}")

    # -- votes ---------------------------------------------------------------------

    def submit_vote(self, task_id: str, choice: str, confidence: str,
                    voter: str) -> dict:
        with self.lock:
            task = self.tasks.get(task_id)
            if task is None:
                raise ApiError(404, "unknown_task", f"no task {task_id!r}")
            if task.state != OPEN:
                raise ApiError(409, "task_closed",
                               f"task {task_id} is {task.state}")
            if choice not in CHOICES:
                raise ApiError(400, "bad_choice",
                               f"choice must be one of {CHOICES}, got {choice!r}")
            if confidence not in CONFIDENCE_LEVELS:
                raise ApiError(400, "bad_confidence",
                               f"confidence must be one of {CONFIDENCE_LEVELS}")
            if not voter or not isinstance(voter, str):
                raise ApiError(400, "bad_voter", "voter must be a nonempty string")
            self._log({"type": "vote", "task_id": task_id, "choice": choice,
                       "confidence": confidence, "voter": voter})
            task.votes[voter] = Vote(choice, confidence, voter)  # overwrite = revote
            if len(task.votes) >= task.k_required:
                self._close_task(task)
            return self._tally(task)

    def _tally(self, task: TaskState) -> dict:
        out = {
            "task_id": task.task_id,
            "state": task.state,
            "k_received": len(task.votes),
            "k_required": task.k_required,
            "tally": {c: sum(1 for v in task.votes.values() if v.choice == c)
                      for c in CHOICES},
        }
        if task.aggregated is not None:
            out["decision"] = task.aggregated.decision
            out["agreement"] = task.aggregated.agreement
        return out

    def _close_task(self, task: TaskState):
        cfg = self.experiments[task.exp_id].exp.config
        task.aggregated = aggregate(list(task.votes.values()),
                                    theta_agree=cfg.annotator.theta_agree,
                                    theta_conf=cfg.annotator.theta_conf,
                                    pair_id=task.task_id)
        state = self.experiments[task.exp_id]
        state.asked += 1
        state.open_task_ids.remove(task.task_id)
        if task.aggregated.decision == REJECTED:
            task.state = TASK_REJECTED
            self._refill_tasks(state)
        else:
            task.state = COMPLETE
            label = 1 if task.aggregated.decision == CHOICE_A else -1
            pair = state.exp.accept_candidate(task.candidate, label,
                                              provenance="synthetic_human")
            state.accepted += 1
            # audit trail: the accepted pair keeps its full vote record
            state.exp.record.events.append({
                "event": "live_label",
                "batch": task.batch_index,
                "pair": pair_slug(pair.first_id, pair.second_id),
                "label": label,
                "votes": [{"voter": w, "choice": v.choice, "confidence": v.confidence}
                          for w, v in task.votes.items()],
                "agreement": task.aggregated.agreement,
            })
        if state.accepted >= state.exp.config.batch_budget:
            state.exp.finalize_batch(state.current_batch, state.asked,
                                     state.accepted)
            state.batches_done += 1
            state.phase = "idle"
            state.cand_rng = None

    # -- reads ----------------------------------------------------------------------

    def open_tasks(self, limit: int) -> list[dict]:
        with self.lock:
            if not self.experiments:
                raise ApiError(409, "no_live_experiment",
                               "create an experiment before polling tasks")
            ordered = sorted(
                (t for t in self.tasks.values() if t.state == OPEN),
                key=lambda t: (len(t.votes), t.task_id))
            return [t.view(self) for t in ordered[:max(limit, 0)]]

    def curves(self, exp_id: str) -> dict:
        with self.lock:
            state = self._get_exp(exp_id)
            return {
                **state.status(),
                "rows": [dict(r) for r in state.exp.record.rows],
                "accepted_total": len(state.exp.synth_pairs),
            }

    def list_experiments(self) -> list[dict]:
        with self.lock:
            return [s.status() for s in self.experiments.values()]


# ---------------------------------------------------------------------------
# FastAPI wiring


def build_app(data_dir, mode: str = "oracle"):
    from fastapi import FastAPI, Request
    from fastapi.exceptions import RequestValidationError
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import FileResponse, JSONResponse

    store = ServiceStore(data_dir, mode=mode)
    app = FastAPI(title="pairsmith annotation service", version="1")
    app.state.store = store
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"reason": exc.reason, "detail": exc.detail})

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"reason": "malformed_body",
                                     "detail": str(exc.errors())})

    @app.get("/api/v1/tasks")
    def get_tasks(limit: int = 20):
        return store.open_tasks(limit)

    @app.post("/api/v1/tasks/{task_id}/votes")
    def post_vote(task_id: str, body: dict):
        missing = {"choice", "confidence", "voter"} - set(body)
        if missing:
            raise ApiError(400, "malformed_body",
                           f"missing fields: {sorted(missing)}")
        return store.submit_vote(task_id, body["choice"], body["confidence"],
                                 body["voter"])

    @app.post("/api/v1/experiments")
    def post_experiment(body: dict):
        return store.create_experiment(body)

    @app.get("/api/v1/experiments")
    def get_experiments():
        return store.list_experiments()

    @app.post("/api/v1/experiments/{exp_id}/advance")
    def post_advance(exp_id: str):
        return store.advance(exp_id)

    @app.get("/api/v1/experiments/{exp_id}/curves")
    def get_curves(exp_id: str):
        return store.curves(exp_id)

    @app.get("/api/v1/images/{name}")
    def get_image(name: str):
        path = store.images_dir / name
        if not path.exists() or "/" in name or ".." in name:
            raise ApiError(404, "unknown_image", f"no image {name!r}")
        return FileResponse(path, media_type="image/png")

    return app
