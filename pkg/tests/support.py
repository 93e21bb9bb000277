"""Helpers shared by the scenario-level tests."""

from __future__ import annotations

from dataclasses import dataclass

from junction_watch import pipeline, simulator


@dataclass
class RunResult:
    output: simulator.ScenarioOutput
    trajectories: list
    classified: list
    rejected: list


def run_pipeline(script, lens, cfg, models, normalizer) -> RunResult:
    out = simulator.run_scenario(script, lens)
    trajectories = pipeline.track(out.batches, cfg, lens)
    classified, rejected = pipeline.classify_all(trajectories, models, normalizer)
    return RunResult(out, trajectories, classified, rejected)


def classification_accuracy(run: RunResult) -> tuple[int, int]:
    """(correct, total) over trajectories matched to a ground-truth vehicle; rejects count as wrong."""
    truth = run.output.truth.vehicle_route()
    correct = total = 0
    labelled = {ct.track_id: ct.route_id for ct in run.classified}
    for t in run.trajectories:
        vid = run.output.truth.match(t)
        if vid is None:
            continue
        total += 1
        correct += labelled.get(t.track_id) == truth[vid]
    return correct, total
