"""End-to-end pipeline orchestration and run artifact IO.

One run = ingest -> tag -> graph -> chains -> metrics/evidence, with every
parameter fixed up front. Artifacts are deterministic functions of the
inputs: JSON documents are dumped with sorted keys and no generation
timestamps, so re-running with the same manifest reproduces them
byte-identically.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from . import __version__
from .errors import ConfigError
from .graph import (
    Chain,
    ChainAmbiguity,
    DEFAULT_GAP_MS,
    DEFAULT_TOP_K,
    DEFAULT_WINDOW_MS,
    EventGraph,
    build_event_graph,
    chain_ambiguity,
    chain_to_dict,
    extract_chains,
    graph_to_dict,
)
from .ingest import IngestResult, SourceAdapterSpec, ingest_scenario
from .metrics import (
    AggregateMetrics,
    BudgetConfig,
    RunMetrics,
    SweepRow,
    aggregate,
    aggregate_to_dict,
    best_rows_by_category,
    budget_sweep,
    run_metrics_to_dict,
)
from .model import FieldAliasMap, NormalizedEvent, events_to_jsonl
from .report import EvidencePackage, build_evidence_package, evidence_to_dict, render_budget_table
from .synth import GroundTruth, load_ground_truth
from .tagging import (
    ExpectedStepSet,
    RuleSet,
    RunDiagnostics,
    StepTag,
    TagDecision,
    decision_to_dict,
    parse_step,
    tag_run,
)

GATE_EXPECTED = "expected"


@dataclass(frozen=True)
class RunParams:
    window_ms: int = DEFAULT_WINDOW_MS
    gap_ms: int = DEFAULT_GAP_MS
    top_k: int = DEFAULT_TOP_K
    gate: Optional[str] = None  # None, "expected", or comma-separated steps
    sources: Optional[Tuple[str, ...]] = None

    def resolve_gate(self, expected: Optional[ExpectedStepSet]) -> Optional[frozenset]:
        if self.gate is None or self.gate == "":
            return None
        if self.gate == GATE_EXPECTED:
            if expected is None:
                raise ConfigError("--gate expected requires ground truth or an expected step set")
            return frozenset(expected.steps)
        return frozenset(parse_step(part) for part in self.gate.split(",") if part.strip())


@dataclass
class RunResult:
    scenario_id: str
    params: RunParams
    ingest: IngestResult
    events: List[NormalizedEvent]
    decisions: List[TagDecision]
    run_diag: RunDiagnostics
    graph: EventGraph
    chains: List[Chain]
    ambiguity: ChainAmbiguity
    expected: Optional[ExpectedStepSet]
    metrics: Optional[RunMetrics]
    evidence: EvidencePackage


def _find_ground_truth(scenario_dir: Path) -> Optional[GroundTruth]:
    path = Path(scenario_dir) / "ground_truth.json"
    if path.exists():
        return load_ground_truth(path)
    return None


def run_scenario(
    scenario_dir: Path,
    adapters: Sequence[SourceAdapterSpec],
    aliases: FieldAliasMap,
    rules: RuleSet,
    params: RunParams = RunParams(),
    expected: Optional[ExpectedStepSet] = None,
    ground_truth: Optional[GroundTruth] = None,
) -> RunResult:
    """Run the full pipeline over one scenario directory.

    Expected steps come from (in order): the explicit argument, the given
    ground truth, or a ground_truth.json next to the raw files. Without
    any of these the run still produces decisions, chains, and evidence,
    just no precision/recall metrics.
    """
    scenario_dir = Path(scenario_dir)
    if ground_truth is None:
        ground_truth = _find_ground_truth(scenario_dir)
    if expected is None and ground_truth is not None:
        expected = ground_truth.expected
    scenario_id = expected.scenario_id if expected else scenario_dir.name

    ingest_result = ingest_scenario(
        scenario_dir, adapters, aliases, scenario_id=scenario_id, sources=params.sources
    )
    events = ingest_result.merged()
    gate = params.resolve_gate(expected)
    decisions, run_diag = tag_run(
        events, rules, gate=gate, aliases=aliases, expected=expected.steps if expected else None
    )
    graph = build_event_graph(events, decisions, window_ms=params.window_ms)
    chains = extract_chains(graph, top_k=params.top_k, gap_threshold_ms=params.gap_ms)
    ambiguity = chain_ambiguity(chains, k=params.top_k)
    metrics = None
    if expected is not None:
        metrics = compute_metrics_for_run(decisions, chains, expected, events, params)
    evidence = build_evidence_package(
        chains, decisions, events, expected=tuple(expected.steps) if expected else None, scenario_id=scenario_id
    )
    return RunResult(
        scenario_id=scenario_id,
        params=params,
        ingest=ingest_result,
        events=events,
        decisions=decisions,
        run_diag=run_diag,
        graph=graph,
        chains=chains,
        ambiguity=ambiguity,
        expected=expected,
        metrics=metrics,
        evidence=evidence,
    )


def compute_metrics_for_run(
    decisions: Sequence[TagDecision],
    chains: Sequence[Chain],
    expected: ExpectedStepSet,
    events: Sequence[NormalizedEvent],
    params: RunParams,
) -> RunMetrics:
    from .metrics import compute_run_metrics

    sources = sorted(params.sources) if params.sources else sorted({e.source for e in events})
    return compute_run_metrics(decisions, chains, expected, events, sources=sources)


def _dump_json(data: Any, path: Path) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _digest_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_manifest(
    command: str,
    args: Mapping[str, Any],
    input_paths: Iterable[Path],
    seed: Optional[int] = None,
) -> Dict[str, Any]:
    digests = {}
    for path in sorted(set(Path(p) for p in input_paths)):
        if path.is_file():
            digests[str(path)] = _digest_file(path)
        elif path.is_dir():
            for child in sorted(path.rglob("*")):
                if child.is_file():
                    digests[str(child)] = _digest_file(child)
    manifest: Dict[str, Any] = {
        "tool": "chainscope",
        "version": __version__,
        "command": command,
        "parameters": dict(sorted(args.items())),
        "input_digests": digests,
    }
    if seed is not None:
        manifest["seed"] = seed
    return manifest


def write_run_artifacts(result: RunResult, out_dir: Path, manifest: Optional[Mapping[str, Any]] = None) -> List[Path]:
    """Write the full artifact set for one run; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []

    def emit(name: str, payload: Any) -> None:
        path = out_dir / name
        if name.endswith(".jsonl"):
            path.write_text(payload, encoding="utf-8")
        else:
            _dump_json(payload, path)
        written.append(path)

    emit("events.jsonl", events_to_jsonl(result.events))
    emit("ingest_report.json", result.ingest.report())
    emit(
        "decisions.jsonl",
        "".join(json.dumps(decision_to_dict(d), sort_keys=True) + "\n" for d in result.decisions),
    )
    emit(
        "run_diag.json",
        {
            "flags": result.run_diag.flags(),
            "no_steps_observed": result.run_diag.no_steps_observed,
            "missing_steps": [s.value for s in result.run_diag.missing_steps],
            "ambiguity_fraction": result.run_diag.ambiguity_fraction,
            "matched_events": result.run_diag.matched_events,
            "multi_match_events": result.run_diag.multi_match_events,
            "step_counts": dict(result.run_diag.step_counts),
        },
    )
    emit("graph.json", graph_to_dict(result.graph))
    emit("chains.json", [chain_to_dict(c) for c in result.chains])
    emit(
        "ambiguity.json",
        {
            "top2_margin": None if result.ambiguity.top2_margin == float("inf") else result.ambiguity.top2_margin,
            "entropy_topk": result.ambiguity.entropy_topk,
            "k": result.ambiguity.k,
        },
    )
    if result.metrics is not None:
        emit("metrics.json", run_metrics_to_dict(result.metrics))
    emit("evidence.json", evidence_to_dict(result.evidence))
    if manifest is not None:
        emit("manifest.json", dict(manifest))
    return written


@dataclass
class SweepResult:
    scenario_id: str
    rows: List[SweepRow]
    best_by_category: Dict[str, SweepRow]
    aggregates: Dict[str, AggregateMetrics]
    table: str


def sweep_scenario(
    scenario_dir: Path,
    adapters: Sequence[SourceAdapterSpec],
    aliases: FieldAliasMap,
    rules: RuleSet,
    budgets: Sequence[BudgetConfig],
    params: RunParams = RunParams(),
    expected: Optional[ExpectedStepSet] = None,
) -> SweepResult:
    """Run the identical pipeline once per source budget on one scenario."""
    scenario_dir = Path(scenario_dir)
    ground_truth = _find_ground_truth(scenario_dir)
    if expected is None and ground_truth is not None:
        expected = ground_truth.expected
    if expected is None:
        raise ConfigError("sweep requires ground truth or an explicit expected step set")
    scenario_id = expected.scenario_id

    ingest_result = ingest_scenario(scenario_dir, adapters, aliases, scenario_id=scenario_id)
    gate = params.resolve_gate(expected)
    gate_steps = tuple(sorted(gate, key=lambda s: s.value)) if gate else None
    rows = budget_sweep(
        {src: list(events) for src, events in ingest_result.events_by_source.items()},
        rules,
        expected,
        budgets,
        aliases=aliases,
        gate=gate_steps,
        window_ms=params.window_ms,
        gap_ms=params.gap_ms,
        top_k=params.top_k,
        strict=False,
    )
    best = best_rows_by_category(rows)
    aggregates = {
        category: aggregate({scenario_id: (row.metrics, expected.e_s)}) for category, row in best.items()
    }
    table = render_budget_table(aggregates) if aggregates else ""
    return SweepResult(
        scenario_id=scenario_id, rows=rows, best_by_category=best, aggregates=aggregates, table=table
    )


def write_sweep_artifacts(result: SweepResult, out_dir: Path, manifest: Optional[Mapping[str, Any]] = None) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []
    rows_doc = []
    for row in result.rows:
        entry: Dict[str, Any] = {
            "budget": sorted(row.budget.sources),
            "category": row.budget.category,
            "effective_count": row.budget.effective_count,
        }
        if row.error:
            entry["error"] = row.error
        if row.metrics is not None:
            entry["metrics"] = run_metrics_to_dict(row.metrics)
            entry["best_in_category"] = result.best_by_category.get(row.budget.category) is row
        rows_doc.append(entry)
    _dump_json({"scenario_id": result.scenario_id, "rows": rows_doc}, out_dir / "sweep_rows.json")
    written.append(out_dir / "sweep_rows.json")
    _dump_json(
        {category: aggregate_to_dict(agg) for category, agg in sorted(result.aggregates.items())},
        out_dir / "sweep_aggregates.json",
    )
    written.append(out_dir / "sweep_aggregates.json")
    (out_dir / "budget_table.txt").write_text(result.table, encoding="utf-8")
    written.append(out_dir / "budget_table.txt")
    if manifest is not None:
        _dump_json(dict(manifest), out_dir / "manifest.json")
        written.append(out_dir / "manifest.json")
    return written
