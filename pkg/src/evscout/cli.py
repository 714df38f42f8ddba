"""Command-line interface.

Every flag can also come from the environment with an EVSCOUT_ prefix
(EVSCOUT_CORPUS, EVSCOUT_RUN_LLM_SCRIPT, ...). Exit codes: 2 for usage
errors, 1 for runtime failures; a failed run still prints the id of its
partial log so the steps so far can be inspected.
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click

from .auto_eval import EvalConfig, EvalVerdict, LabelMapping, evaluate_bundle, map_expert_label
from .baseline import (
    BaselineConfig,
    RiskFactorCache,
    build_profile,
    fetch_risk_factors,
    retrieve_topk,
)
from .corpus import (
    RunStore,
    SamplingCriteria,
    exceeds_evidence_cap,
    extract_diagnoses,
    import_expert_annotations,
    load_corpus,
    sample_instances,
)
from .embedding import HashedEmbedder, WireEmbedder
from .llm import ScriptedBackend, WireBackend
from .metrics import BinarySeries, average_pairwise_kappa, micro_f1, pcc
from .model import EvidenceStatus, RunRecord, validate_corpus
from .pipeline import Backends, EvidenceBundle, PipelineConfig, run_patient, run_single_prompt
from .service import STYLE_NAMES, ServiceState, create_app, derive_run_id, resolve_style

_MODES = ("sequential", "single", "baseline")


def _build_completion_backend(llm_script: str | None, llm_url: str | None, llm_key: str | None):
    if llm_script:
        return ScriptedBackend.from_file(llm_script)
    if llm_url:
        return WireBackend(base_url=llm_url, api_key=llm_key)
    raise click.UsageError("no completion backend: pass --llm-script or --llm-url")


def _build_embedding_backend(embed_url: str | None):
    if embed_url:
        return WireEmbedder(base_url=embed_url)
    return HashedEmbedder()


def _load_corpus_or_fail(corpus_path: str | None):
    if not corpus_path:
        raise click.UsageError("no corpus: pass --corpus or set EVSCOUT_CORPUS")
    return load_corpus(corpus_path)


@click.group()
@click.option("--corpus", "corpus_path", type=click.Path(), default=None, envvar="EVSCOUT_CORPUS", help="Corpus file (line-delimited JSON).")
@click.option("--store", "store_path", type=click.Path(), default="runs", show_default=True, help="Run store directory.")
@click.option("--llm-script", type=click.Path(), default=None, help="Scripted completion backend (JSON lines).")
@click.option("--llm-url", default=None, help="Completion server base URL.")
@click.option("--llm-key", default=None, help="Completion server API key.")
@click.option("--embed-url", default=None, help="Embedding server base URL (default: built-in hashed embedder).")
@click.pass_context
def cli(ctx: click.Context, corpus_path, store_path, llm_script, llm_url, llm_key, embed_url) -> None:
    """Retrieve and evaluate diagnosis evidence from clinical notes."""
    ctx.obj = {
        "corpus_path": corpus_path,
        "store_path": store_path,
        "llm_script": llm_script,
        "llm_url": llm_url,
        "llm_key": llm_key,
        "embed_url": embed_url,
    }


@cli.command()
@click.option("--out", type=click.Path(), default=None, help="Write normalized note records here.")
@click.pass_obj
def ingest(env, out) -> None:
    """Load the corpus, validate it, and report what it contains."""
    corpus = _load_corpus_or_fail(env["corpus_path"])
    report = validate_corpus(corpus)
    click.echo(f"patients: {len(corpus.patients)}")
    click.echo(f"notes: {corpus.note_count}")
    click.echo(f"imaging events: {len(corpus.imaging_events)}")
    click.echo(f"visits: {len(corpus.visits)}")
    for issue in report.issues():
        click.echo(f"issue: {issue}")
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            for patient_id in sorted(corpus.patients):
                for note in corpus.patients[patient_id]:
                    fh.write(json.dumps(note.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
        click.echo(f"wrote normalized notes to {out}")


@cli.command()
@click.pass_obj
def validate(env) -> None:
    """Report duplicate ids, missing timestamps, and empty notes."""
    corpus = _load_corpus_or_fail(env["corpus_path"])
    report = validate_corpus(corpus)
    click.echo(f"notes checked: {report.note_count}")
    if report.ok:
        click.echo("no issues found")
    else:
        for issue in report.issues():
            click.echo(f"issue: {issue}")


@cli.command()
@click.option("--window", type=float, default=48.0, show_default=True, help="Hours between admission and brain imaging.")
@click.option("--min-notes", type=int, default=10, show_default=True)
@click.option("--show-diagnoses", is_flag=True, help="Extract candidate diagnoses from each reference report.")
@click.pass_obj
def sample(env, window, min_notes, show_diagnoses) -> None:
    """Select qualifying patient instances from the corpus."""
    corpus = _load_corpus_or_fail(env["corpus_path"])
    criteria = SamplingCriteria(imaging_window_hours=window, min_notes=min_notes)
    instances = sample_instances(corpus, criteria)
    click.echo("patient_id\treference_report_id\timaging_event_id")
    for inst in instances:
        click.echo(f"{inst.patient_id}\t{inst.reference_report_id}\t{inst.imaging_event_id}")
        if show_diagnoses:
            report_note = corpus.note_by_id(inst.reference_report_id)
            for query in extract_diagnoses(report_note):
                click.echo(f"  diagnosis: {query.condition}")


@cli.command()
@click.option("--patient", required=True)
@click.option("--condition", required=True)
@click.option("--mode", type=click.Choice(_MODES), default="sequential", show_default=True)
@click.option("--style", type=click.Choice(sorted(STYLE_NAMES)), default="flan", show_default=True)
@click.option("--abstain-threshold", type=float, default=None, help="Suppress items below this confidence.")
@click.option("--run-id", default=None, help="Override the derived run id.")
@click.pass_obj
def run(env, patient, condition, mode, style, abstain_threshold, run_id) -> None:
    """Retrieve evidence for one patient and condition, and persist the run."""
    corpus = _load_corpus_or_fail(env["corpus_path"])
    notes = corpus.notes_for(patient)
    if not notes:
        raise click.ClickException(f"unknown patient {patient!r}")
    completion = _build_completion_backend(env["llm_script"], env["llm_url"], env["llm_key"])
    embedding = _build_embedding_backend(env["embed_url"])
    backends = Backends(completion=completion, embedding=embedding)
    store = RunStore(env["store_path"])

    config = PipelineConfig(
        prompt_style=resolve_style(style, PipelineConfig().prompt_style),
        abstain_threshold=abstain_threshold,
    )
    payload = {
        "patient_id": patient,
        "condition": condition,
        "mode": mode,
        "completion_backend": completion.fingerprint(),
        "embedding_backend": embedding.fingerprint(),
    }
    payload.update(config.snapshot())
    run_id = run_id or derive_run_id("r", payload)
    if store.has(run_id):
        record, meta = store.load_run(run_id)
        click.echo(f"run {run_id} already stored (cached)")
        _echo_bundle_summary(record.outputs, meta.get("excluded", False))
        return

    record = RunRecord(run_id=run_id)
    try:
        if mode == "sequential":
            bundle = run_patient(notes, condition, config, backends, run_id=run_id, record=record)
        elif mode == "single":
            bundle = run_single_prompt(notes, condition, config, backends, run_id=run_id, record=record)
        else:
            cache = RiskFactorCache(store.directory / "risk_factors.jsonl")
            factors = fetch_risk_factors(condition, completion, cache, record)
            profile = build_profile(condition, factors, embedding)
            items = retrieve_topk(notes, profile, BaselineConfig(), embedding)
            record.config = {
                "patient_id": patient,
                "condition": condition,
                "mode": "baseline",
                "risk_factors": list(factors),
                "k": BaselineConfig().k,
                "min_sentence_tokens": BaselineConfig().min_sentence_tokens,
                "completion_backend": completion.fingerprint(),
                "embedding_backend": embedding.fingerprint(),
            }
            record.outputs = list(items)
            bundle = EvidenceBundle(
                patient_id=patient, condition=condition, items=tuple(items), run_id=run_id
            )
    except Exception as exc:
        store.persist_run(
            record,
            extra_meta={
                "kind": "pipeline",
                "patient_id": patient,
                "condition": condition,
                "mode": mode,
                "error": str(exc),
                "partial": True,
            },
        )
        click.echo(f"run failed after {len(record.entries)} steps: {exc}", err=True)
        click.echo(f"partial log persisted as run {run_id}", err=True)
        sys.exit(1)

    active = sum(1 for i in bundle.items if i.status is EvidenceStatus.ACTIVE)
    excluded = exceeds_evidence_cap(active)
    record.outputs = list(bundle.items)
    store.persist_run(
        record,
        extra_meta={
            "kind": "pipeline",
            "patient_id": patient,
            "condition": condition,
            "mode": mode,
            "excluded": excluded,
        },
    )
    click.echo(f"run {run_id} complete")
    _echo_bundle_summary(bundle.items, excluded)


def _echo_bundle_summary(items, excluded: bool) -> None:
    active = [i for i in items if i.status is EvidenceStatus.ACTIVE]
    abstained = [i for i in items if i.status is not EvidenceStatus.ACTIVE]
    click.echo(f"evidence items: {len(active)} active, {len(abstained)} abstained")
    if excluded:
        click.echo("instance excluded: evidence count exceeds the per-diagnosis cap")
    for item in active:
        head = item.text if len(item.text) <= 96 else item.text[:93] + "..."
        click.echo(f"  [{item.kind.value}] {head}")


@cli.command()
@click.option("--run", "run_id", required=True, help="Pipeline run to evaluate.")
@click.option("--strict", is_flag=True, help="Strict label mapping in downstream metrics.")
@click.pass_obj
def evaluate(env, run_id, strict) -> None:
    """Judge a stored run's evidence with the completion backend."""
    corpus = _load_corpus_or_fail(env["corpus_path"])
    store = RunStore(env["store_path"])
    record, meta = store.load_run(run_id)
    if meta.get("kind") != "pipeline":
        raise click.ClickException(f"run {run_id} is not a pipeline run")
    judge = _build_completion_backend(env["llm_script"], env["llm_url"], env["llm_key"])
    bundle = EvidenceBundle(
        patient_id=meta["patient_id"],
        condition=meta["condition"],
        items=tuple(record.outputs),
        run_id=run_id,
    )
    eval_run_id = derive_run_id("e", {"parent": run_id, "judge": judge.fingerprint(), "strict": strict})
    if store.has(eval_run_id):
        _, eval_meta = store.load_run(eval_run_id)
        click.echo(f"evaluation {eval_run_id} already stored (cached)")
        _echo_eval_summary(eval_meta["summary"])
        return
    eval_record = RunRecord(
        run_id=eval_run_id,
        config={"parent_run_id": run_id, "strict": strict, "judge_backend": judge.fingerprint()},
    )
    notes = corpus.notes_for(meta["patient_id"])
    verdicts = evaluate_bundle(bundle, notes, judge, EvalConfig(), eval_record)
    from .report import verdict_outcomes

    useful, not_useful, hallucination = verdict_outcomes(verdicts)
    summary = {
        "useful_pct": useful,
        "not_useful_pct": not_useful,
        "hallucination_pct": hallucination,
        "evaluated": len(verdicts),
        "self_evaluation": True,
    }
    store.persist_run(
        eval_record,
        extra_meta={
            "kind": "evaluate",
            "parent_run_id": run_id,
            "patient_id": meta["patient_id"],
            "condition": meta["condition"],
            "strict": strict,
            "verdicts": [v.to_dict() for v in verdicts],
            "summary": summary,
        },
    )
    click.echo(f"evaluation {eval_run_id} complete")
    _echo_eval_summary(summary)


def _echo_eval_summary(summary) -> None:
    click.echo(
        "useful {useful_pct:.1f}% / not useful {not_useful_pct:.1f}% / hallucinated {hallucination_pct:.1f}%".format(
            **summary
        )
    )


@cli.command()
@click.option("--annotations", "annotations_path", type=click.Path(exists=True), required=True)
@click.option("--run", "eval_run_id", default=None, help="Evaluation run to compare against the labels.")
@click.option("--strict", is_flag=True, help="Count weak correlations as not useful.")
@click.pass_obj
def metrics(env, annotations_path, eval_run_id, strict) -> None:
    """Agreement metrics: annotator kappa, and judge-vs-expert F1 and PCC."""
    rows = import_expert_annotations(annotations_path)
    mapping = LabelMapping(strict=strict)

    by_annotator: dict[str, dict[str, object]] = {}
    for evidence, annotator, label in rows:
        by_annotator.setdefault(annotator, {})[evidence] = label
    if len(by_annotator) >= 2:
        shared = set.intersection(*(set(v) for v in by_annotator.values()))
        if shared:
            ordered = sorted(shared)
            series = {
                annotator: [labels[e].value.value for e in ordered]
                for annotator, labels in by_annotator.items()
            }
            try:
                click.echo(f"annotator kappa (pairwise mean): {average_pairwise_kappa(series):.4f}")
            except ValueError as exc:
                click.echo(f"annotator kappa unavailable: {exc}")

    if eval_run_id:
        store = RunStore(env["store_path"])
        _, eval_meta = store.load_run(eval_run_id)
        if eval_meta.get("kind") != "evaluate":
            raise click.ClickException(f"run {eval_run_id} is not an evaluation run")
        verdicts = [EvalVerdict.from_dict(v) for v in eval_meta["verdicts"]]
        labels = {evidence: label for evidence, _, label in rows}
        from .report import build_agreement

        agreement = build_agreement(verdicts, labels, mapping)
        if len(agreement.relevance):
            click.echo(f"relevance micro-F1: {micro_f1(agreement.relevance):.4f}")
            try:
                click.echo(
                    "relevance PCC: {:.4f}".format(
                        pcc(
                            [float(p) for p in agreement.relevance.preds],
                            [float(g) for g in agreement.relevance.golds],
                        )
                    )
                )
            except ValueError as exc:
                click.echo(f"relevance PCC unavailable: {exc}")
        if len(agreement.presence):
            click.echo(f"presence micro-F1: {micro_f1(agreement.presence):.4f}")


@cli.command()
@click.option("--runs", "run_ids", required=True, help="Comma-separated evaluation run ids.")
@click.option("--out", "out_dir", type=click.Path(), default="report", show_default=True)
@click.pass_obj
def report(env, run_ids, out_dir) -> None:
    """Write the summary table and figures for stored evaluation runs."""
    from .report import (
        build_summary,
        confidence_split,
        render_confidence_figure,
        render_outcome_figure,
        write_summaries,
    )
    from .metrics import auc as compute_auc
    from .model import EvidenceItem

    store = RunStore(env["store_path"])
    out = Path(out_dir)
    summaries = []
    all_present: list[float] = []
    all_hallucinated: list[float] = []
    for run_id in [r.strip() for r in run_ids.split(",") if r.strip()]:
        _, eval_meta = store.load_run(run_id)
        if eval_meta.get("kind") != "evaluate":
            raise click.ClickException(f"run {run_id} is not an evaluation run")
        verdicts = [EvalVerdict.from_dict(v) for v in eval_meta["verdicts"]]
        parent_record, parent_meta = store.load_run(eval_meta["parent_run_id"])
        summaries.append(
            build_summary(
                model_tag=parent_meta.get("mode", "sequential"),
                dataset_tag=f"{eval_meta.get('patient_id')}:{eval_meta.get('condition')}",
                verdicts=verdicts,
                self_evaluation=eval_meta["summary"].get("self_evaluation", False),
            )
        )
        present, hallucinated = confidence_split(parent_record.outputs, verdicts)
        all_present.extend(present)
        all_hallucinated.extend(hallucinated)

    table_path = out / "report.tsv"
    write_summaries(summaries, table_path)
    render_outcome_figure(summaries, out / "outcomes.png")
    auc_value = None
    if all_present and all_hallucinated:
        auc_value = compute_auc(all_present, all_hallucinated)
    render_confidence_figure(all_present, all_hallucinated, out / "confidence.png", auc_value)
    click.echo(f"wrote {table_path}")
    click.echo(f"wrote {out / 'outcomes.png'}")
    click.echo(f"wrote {out / 'confidence.png'}")
    for summary in summaries:
        click.echo("\t".join(summary.to_row()))


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8100, show_default=True)
@click.option("--auth-token", default=None, help="Require this bearer token on every endpoint but /health.")
@click.option("--abstain-threshold", type=float, default=None)
@click.pass_obj
def serve(env, host, port, auth_token, abstain_threshold) -> None:
    """Serve the HTTP API over the configured corpus and backends."""
    import uvicorn

    corpus = _load_corpus_or_fail(env["corpus_path"])
    completion = _build_completion_backend(env["llm_script"], env["llm_url"], env["llm_key"])
    embedding = _build_embedding_backend(env["embed_url"])
    config = PipelineConfig()
    if abstain_threshold is not None:
        config = replace(config, abstain_threshold=abstain_threshold)
    state = ServiceState(
        corpus=corpus,
        store=RunStore(env["store_path"]),
        backends=Backends(completion=completion, embedding=embedding),
        pipeline_config=config,
        auth_token=auth_token,
    )
    uvicorn.run(create_app(state), host=host, port=port, log_level="warning")


def main() -> None:
    cli(auto_envvar_prefix="EVSCOUT")


if __name__ == "__main__":
    main()
