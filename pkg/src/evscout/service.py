"""HTTP service exposing the pipeline over a small JSON API.

Run identifiers derive from request content and backend fingerprints, so
identical requests against identical backends return the stored run instead
of recomputing: mutation endpoints are idempotent by construction, and an
explicit idempotency key maps onto the same mechanism.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Literal, Mapping

from fastapi import Depends, FastAPI, Header, HTTPException, Request
from pydantic import BaseModel, Field

from .auto_eval import EvalConfig, EvalVerdict, evaluate_bundle
from .baseline import (
    BaselineConfig,
    RiskFactorCache,
    build_profile,
    fetch_risk_factors,
    retrieve_topk,
)
from .corpus import (
    AnnotationImportError,
    Corpus,
    RunStore,
    SamplingCriteria,
    annotations_to_delimited,
    exceeds_evidence_cap,
    import_expert_annotations,
)
from .llm import BackendError, CompletionBackend, RetryExhausted, ScriptMiss
from .model import EvidenceStatus, RelevanceLabel, RunRecord, canonical_json
from .pipeline import (
    Backends,
    EvidenceBundle,
    PipelineConfig,
    PromptStyle,
    run_patient,
    run_single_prompt,
)

__all__ = ["ServiceState", "create_app", "derive_run_id", "STYLE_NAMES", "resolve_style"]

log = logging.getLogger(__name__)

STYLE_NAMES: dict[str, PromptStyle] = {
    "flan": PromptStyle.CHOICE_THEN_STEPWISE,
    "mistral": PromptStyle.CONCISE,
    "choice_then_stepwise": PromptStyle.CHOICE_THEN_STEPWISE,
    "concise": PromptStyle.CONCISE,
}


def resolve_style(name: str | None, default: PromptStyle) -> PromptStyle:
    if name is None:
        return default
    try:
        return STYLE_NAMES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown style {name!r}; expected one of {sorted(STYLE_NAMES)}")


def derive_run_id(prefix: str, payload: Mapping[str, Any]) -> str:
    """Content-derived run id: same request plus same backends, same id."""
    digest = hashlib.sha256(canonical_json(dict(payload))).hexdigest()[:16]
    return f"{prefix}{digest}"


@dataclass
class ServiceState:
    corpus: Corpus
    store: RunStore
    backends: Backends
    judge: CompletionBackend | None = None
    pipeline_config: PipelineConfig = field(default_factory=PipelineConfig)
    baseline_config: BaselineConfig = field(default_factory=BaselineConfig)
    eval_config: EvalConfig = field(default_factory=EvalConfig)
    criteria: SamplingCriteria = field(default_factory=SamplingCriteria)
    auth_token: str | None = None

    def __post_init__(self) -> None:
        self._run_locks: dict[tuple[str, str], threading.Lock] = {}
        self._run_locks_guard = threading.Lock()
        self._jobs: dict[str, dict[str, Any]] = {}
        self._jobs_guard = threading.Lock()
        self._annotations_guard = threading.Lock()

    def run_lock(self, patient_id: str, condition: str) -> threading.Lock:
        key = (patient_id, condition)
        with self._run_locks_guard:
            if key not in self._run_locks:
                self._run_locks[key] = threading.Lock()
            return self._run_locks[key]

    @property
    def judge_backend(self) -> CompletionBackend:
        return self.judge or self.backends.completion

    @property
    def annotations_path(self) -> Path:
        return self.store.directory / "annotations.tsv"

    @property
    def idempotency_path(self) -> Path:
        return self.store.directory / "idempotency.json"


class EvidenceRequest(BaseModel):
    condition: str = Field(min_length=1)
    mode: Literal["sequential", "single", "baseline"] = "sequential"
    style: str | None = None
    abstain_threshold: float | None = None
    idempotency_key: str | None = None


class EvaluateRequest(BaseModel):
    strict: bool = False


class AnnotationRow(BaseModel):
    evidence_id: str
    annotator_id: str
    present_in_note: bool
    relevance: str


class AnnotationsRequest(BaseModel):
    rows: list[AnnotationRow]


class JobRequest(BaseModel):
    patient_id: str
    condition: str = Field(min_length=1)
    mode: Literal["sequential", "single", "baseline"] = "sequential"
    style: str | None = None
    abstain_threshold: float | None = None


def _bundle_from_meta(record: RunRecord, meta: Mapping[str, Any]) -> EvidenceBundle:
    return EvidenceBundle(
        patient_id=meta["patient_id"],
        condition=meta["condition"],
        items=tuple(record.outputs),
        run_id=record.run_id,
    )


def _known_evidence_ids(state: ServiceState) -> set[str]:
    ids: set[str] = set()
    for run_id in state.store.list_runs():
        _, meta = state.store.load_run(run_id)
        if meta.get("kind") == "pipeline":
            for item in meta.get("outputs", []):
                ids.add(item["id"])
    return ids


def _load_idempotency(state: ServiceState) -> dict[str, str]:
    if state.idempotency_path.exists():
        return json.loads(state.idempotency_path.read_text(encoding="utf-8"))
    return {}


def _save_idempotency(state: ServiceState, table: dict[str, str]) -> None:
    state.idempotency_path.write_text(
        json.dumps(table, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def _execute_evidence(
    state: ServiceState,
    patient_id: str,
    body: EvidenceRequest,
) -> dict[str, Any]:
    notes = state.corpus.notes_for(patient_id)
    if not notes:
        raise HTTPException(status_code=404, detail=f"unknown patient {patient_id!r}")
    try:
        style = resolve_style(body.style, state.pipeline_config.prompt_style)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    config = replace(
        state.pipeline_config,
        prompt_style=style,
        abstain_threshold=(
            body.abstain_threshold
            if body.abstain_threshold is not None
            else state.pipeline_config.abstain_threshold
        ),
    )

    payload: dict[str, Any] = {
        "patient_id": patient_id,
        "condition": body.condition,
        "mode": body.mode,
        "completion_backend": state.backends.completion.fingerprint(),
        "embedding_backend": (
            state.backends.embedding.fingerprint() if state.backends.embedding else None
        ),
    }
    payload.update(config.snapshot())
    if body.mode == "baseline":
        payload["k"] = state.baseline_config.k
        payload["min_sentence_tokens"] = state.baseline_config.min_sentence_tokens
    run_id = derive_run_id("r", payload)

    lock = state.run_lock(patient_id, body.condition)
    with lock:
        if body.idempotency_key:
            table = _load_idempotency(state)
            prior = table.get(body.idempotency_key)
            if prior and state.store.has(prior):
                record, meta = state.store.load_run(prior)
                bundle = _bundle_from_meta(record, meta)
                return {
                    "run_id": prior,
                    "cached": True,
                    "excluded": meta.get("excluded", False),
                    "bundle": bundle.to_dict(),
                }
        if state.store.has(run_id):
            record, meta = state.store.load_run(run_id)
            bundle = _bundle_from_meta(record, meta)
            result = {
                "run_id": run_id,
                "cached": True,
                "excluded": meta.get("excluded", False),
                "bundle": bundle.to_dict(),
            }
        else:
            record = RunRecord(run_id=run_id)
            if body.mode == "sequential":
                bundle = run_patient(
                    notes, body.condition, config, state.backends, run_id=run_id, record=record
                )
            elif body.mode == "single":
                bundle = run_single_prompt(
                    notes, body.condition, config, state.backends, run_id=run_id, record=record
                )
            else:
                bundle = _run_baseline(state, notes, body.condition, run_id, record)
            active = sum(1 for i in bundle.items if i.status is EvidenceStatus.ACTIVE)
            excluded = exceeds_evidence_cap(active, state.criteria)
            record.outputs = list(bundle.items)
            state.store.persist_run(
                record,
                extra_meta={
                    "kind": "pipeline",
                    "patient_id": patient_id,
                    "condition": body.condition,
                    "mode": body.mode,
                    "excluded": excluded,
                },
            )
            result = {
                "run_id": run_id,
                "cached": False,
                "excluded": excluded,
                "bundle": bundle.to_dict(),
            }
        if body.idempotency_key:
            table = _load_idempotency(state)
            table[body.idempotency_key] = run_id
            _save_idempotency(state, table)
        return result


def _run_baseline(
    state: ServiceState,
    notes: list,
    condition: str,
    run_id: str,
    record: RunRecord,
) -> EvidenceBundle:
    if state.backends.embedding is None:
        raise HTTPException(status_code=400, detail="baseline mode requires an embedding backend")
    cache = RiskFactorCache(state.store.directory / "risk_factors.jsonl")
    factors = fetch_risk_factors(condition, state.backends.completion, cache, record)
    profile = build_profile(condition, factors, state.backends.embedding)
    items = retrieve_topk(notes, profile, state.baseline_config, state.backends.embedding)
    record.config = {
        "patient_id": notes[0].patient_id,
        "condition": condition,
        "mode": "baseline",
        "risk_factors": list(factors),
        "k": state.baseline_config.k,
        "min_sentence_tokens": state.baseline_config.min_sentence_tokens,
        "completion_backend": state.backends.completion.fingerprint(),
        "embedding_backend": state.backends.embedding.fingerprint(),
    }
    return EvidenceBundle(
        patient_id=notes[0].patient_id,
        condition=condition,
        items=tuple(items),
        run_id=run_id,
    )


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="evscout", docs_url=None, redoc_url=None)

    async def check_auth(request: Request, authorization: str | None = Header(default=None)) -> None:
        if state.auth_token is None or request.url.path == "/health":
            return
        if authorization != f"Bearer {state.auth_token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    auth = Depends(check_auth)

    @app.get("/health")
    def health() -> dict[str, Any]:
        return {
            "status": "ok",
            "corpus_notes": state.corpus.note_count,
            "patients": len(state.corpus.patients),
        }

    @app.get("/patients", dependencies=[auth])
    def patients() -> list[dict[str, Any]]:
        return [
            {"patient_id": pid, "note_count": len(notes)}
            for pid, notes in sorted(state.corpus.patients.items())
        ]

    @app.get("/patients/{patient_id}/notes", dependencies=[auth])
    def patient_notes(patient_id: str) -> dict[str, Any]:
        notes = state.corpus.notes_for(patient_id)
        if not notes:
            raise HTTPException(status_code=404, detail=f"unknown patient {patient_id!r}")
        # Sentence spans ride along so clients can map highlight indices to
        # character ranges without reimplementing the splitter.
        return {
            "patient_id": patient_id,
            "notes": [
                {**n.to_dict(), "sentences": [s.to_dict() for s in n.sentences]}
                for n in notes
            ],
        }

    @app.post("/patients/{patient_id}/evidence", dependencies=[auth])
    def patient_evidence(patient_id: str, body: EvidenceRequest) -> dict[str, Any]:
        try:
            return _execute_evidence(state, patient_id, body)
        except (BackendError, RetryExhausted, ScriptMiss) as exc:
            raise HTTPException(status_code=502, detail=str(exc))

    @app.get("/runs", dependencies=[auth])
    def runs() -> list[dict[str, Any]]:
        rows = []
        for run_id in state.store.list_runs():
            _, meta = state.store.load_run(run_id)
            rows.append(
                {
                    "run_id": run_id,
                    "kind": meta.get("kind", "pipeline"),
                    "patient_id": meta.get("patient_id"),
                    "condition": meta.get("condition"),
                    "excluded": meta.get("excluded", False),
                }
            )
        return rows

    @app.get("/runs/{run_id}", dependencies=[auth])
    def run_detail(run_id: str) -> dict[str, Any]:
        if not state.store.has(run_id):
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        record, meta = state.store.load_run(run_id)
        detail = dict(meta)
        detail["step_count"] = len(record.entries)
        return detail

    @app.post("/runs/{run_id}/evaluate", dependencies=[auth])
    def evaluate(run_id: str, body: EvaluateRequest) -> dict[str, Any]:
        if not state.store.has(run_id):
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        record, meta = state.store.load_run(run_id)
        if meta.get("kind") != "pipeline":
            raise HTTPException(status_code=400, detail=f"run {run_id} is not a pipeline run")
        bundle = _bundle_from_meta(record, meta)
        judge = state.judge_backend
        eval_run_id = derive_run_id(
            "e", {"parent": run_id, "judge": judge.fingerprint(), "strict": body.strict}
        )
        lock = state.run_lock(meta["patient_id"], meta["condition"])
        with lock:
            if state.store.has(eval_run_id):
                _, eval_meta = state.store.load_run(eval_run_id)
                return {
                    "run_id": eval_run_id,
                    "cached": True,
                    "verdicts": eval_meta["verdicts"],
                    "summary": eval_meta["summary"],
                }
            from .report import verdict_outcomes

            eval_record = RunRecord(
                run_id=eval_run_id,
                config={
                    "parent_run_id": run_id,
                    "strict": body.strict,
                    "judge_backend": judge.fingerprint(),
                },
            )
            notes = state.corpus.notes_for(meta["patient_id"])
            try:
                verdicts = evaluate_bundle(bundle, notes, judge, state.eval_config, eval_record)
            except (BackendError, RetryExhausted, ScriptMiss) as exc:
                raise HTTPException(status_code=502, detail=str(exc))
            useful, not_useful, hallucination = verdict_outcomes(verdicts)
            summary = {
                "useful_pct": useful,
                "not_useful_pct": not_useful,
                "hallucination_pct": hallucination,
                "evaluated": len(verdicts),
                "self_evaluation": judge.fingerprint()
                == state.backends.completion.fingerprint(),
            }
            state.store.persist_run(
                eval_record,
                extra_meta={
                    "kind": "evaluate",
                    "parent_run_id": run_id,
                    "patient_id": meta["patient_id"],
                    "condition": meta["condition"],
                    "strict": body.strict,
                    "verdicts": [v.to_dict() for v in verdicts],
                    "summary": summary,
                },
            )
            return {
                "run_id": eval_run_id,
                "cached": False,
                "verdicts": [v.to_dict() for v in verdicts],
                "summary": summary,
            }

    @app.post("/annotations", dependencies=[auth])
    def annotations(body: AnnotationsRequest) -> dict[str, Any]:
        # Round-trip through the delimited importer: one validation path.
        try:
            rows = [
                (
                    row.evidence_id,
                    row.annotator_id,
                    RelevanceLabel.from_dict(
                        {"value": row.relevance.strip().lower().replace(" ", "_"),
                         "present_in_note": row.present_in_note}
                    ),
                )
                for row in body.rows
            ]
            with state._annotations_guard:
                existing: list[tuple[str, str, RelevanceLabel]] = []
                if state.annotations_path.exists():
                    existing = import_expert_annotations(state.annotations_path)
                known = _known_evidence_ids(state)
                merged = annotations_to_delimited(existing + rows).splitlines()
                imported = import_expert_annotations(merged, known_evidence_ids=known or None)
                state.annotations_path.write_text(
                    annotations_to_delimited(imported), encoding="utf-8"
                )
        except (AnnotationImportError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"imported": len(rows), "total": len(imported)}

    @app.get("/annotations", dependencies=[auth])
    def annotations_export() -> dict[str, Any]:
        if not state.annotations_path.exists():
            return {"rows": []}
        rows = import_expert_annotations(state.annotations_path)
        return {
            "rows": [
                {
                    "evidence_id": evidence,
                    "annotator_id": annotator,
                    "present_in_note": label.present_in_note,
                    "relevance": label.value.value,
                }
                for evidence, annotator, label in rows
            ]
        }

    @app.get("/reports/{run_id}", dependencies=[auth])
    def report(run_id: str) -> dict[str, Any]:
        if not state.store.has(run_id):
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        _, meta = state.store.load_run(run_id)
        if meta.get("kind") != "evaluate":
            raise HTTPException(status_code=400, detail=f"run {run_id} is not an evaluation run")
        verdicts = [EvalVerdict.from_dict(v) for v in meta["verdicts"]]
        from .report import verdict_outcomes

        useful, not_useful, hallucination = verdict_outcomes(verdicts)
        return {
            "run_id": run_id,
            "parent_run_id": meta["parent_run_id"],
            "patient_id": meta.get("patient_id"),
            "condition": meta.get("condition"),
            "useful_pct": useful,
            "not_useful_pct": not_useful,
            "hallucination_pct": hallucination,
            "summary": meta["summary"],
        }

    @app.post("/jobs", dependencies=[auth])
    def submit_job(body: JobRequest) -> dict[str, Any]:
        job_id = "j" + uuid.uuid4().hex[:12]
        with state._jobs_guard:
            state._jobs[job_id] = {"status": "pending"}

        def execute() -> None:
            try:
                result = _execute_evidence(
                    state,
                    body.patient_id,
                    EvidenceRequest(
                        condition=body.condition,
                        mode=body.mode,
                        style=body.style,
                        abstain_threshold=body.abstain_threshold,
                    ),
                )
                with state._jobs_guard:
                    state._jobs[job_id] = {"status": "done", "run_id": result["run_id"]}
            except Exception as exc:  # noqa: BLE001 - job surface reports any failure
                with state._jobs_guard:
                    state._jobs[job_id] = {"status": "error", "error": str(exc)}

        threading.Thread(target=execute, daemon=True).start()
        return {"job_id": job_id}

    @app.get("/jobs/{job_id}", dependencies=[auth])
    def job_status(job_id: str) -> dict[str, Any]:
        with state._jobs_guard:
            job = state._jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        return {"job_id": job_id, **job}

    return app
