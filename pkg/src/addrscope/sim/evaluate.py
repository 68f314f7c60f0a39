"""Score monitor-log analysis against simulator ground truth.

For each simulated day, compares the estimated announcement set A and the
unreachable estimate U (from the daily set algebra over the monitor log)
with the peers that actually existed, yielding per-class recall and the
count of service-poor peers that leaked into the unreachable estimate.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass
from typing import Dict, List, Set, Tuple

from ..analysis import analyze_events
from ..events import ReadStats, read_log


@dataclass
class DayScore:
    day: dt.date
    truth_reachable: int
    truth_unreachable_useful: int
    truth_useless: int
    recall_reachable: float
    recall_unreachable_useful: float
    useless_in_unreachable_estimate: int


def load_ground_truth(path: str) -> Dict[dt.date, Dict[str, Tuple[bool, bool]]]:
    """Return day -> {addr: (reachable, useful)}."""
    truth: Dict[dt.date, Dict[str, Tuple[bool, bool]]] = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            day = dt.date.fromisoformat(row["date"])
            truth.setdefault(day, {})[row["addr"]] = (
                row["reachable"] == "1",
                row["useful"] == "1",
            )
    return truth


def evaluate_run(monitor_log: str, ground_truth_csv: str) -> List[DayScore]:
    stats = ReadStats()
    events = list(read_log(monitor_log, stats))
    estimates = analyze_events(events)
    by_day = {est.day: est for est in estimates}
    truth = load_ground_truth(ground_truth_csv)

    scores: List[DayScore] = []
    for day in sorted(truth):
        entries = truth[day]
        reachable: Set[str] = {a for a, (r, _) in entries.items() if r}
        unreachable_useful: Set[str] = {a for a, (r, u) in entries.items() if not r and u}
        useless: Set[str] = {a for a, (r, u) in entries.items() if not r and not u}
        est = by_day.get(day)
        announced = set(est.A) if est else set()
        u_est = set(est.U) if est else set()
        scores.append(
            DayScore(
                day=day,
                truth_reachable=len(reachable),
                truth_unreachable_useful=len(unreachable_useful),
                truth_useless=len(useless),
                recall_reachable=_recall(announced, reachable),
                recall_unreachable_useful=_recall(announced, unreachable_useful),
                useless_in_unreachable_estimate=len(u_est & useless),
            )
        )
    return scores


def _recall(found: Set[str], expected: Set[str]) -> float:
    if not expected:
        return 1.0
    return len(found & expected) / len(expected)


def write_recall_csv(scores: List[DayScore], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "date",
                "truth_reachable",
                "truth_unreachable_useful",
                "truth_useless",
                "recall_reachable",
                "recall_unreachable_useful",
                "useless_in_unreachable_estimate",
            ]
        )
        for s in scores:
            w.writerow(
                [
                    s.day.isoformat(),
                    s.truth_reachable,
                    s.truth_unreachable_useful,
                    s.truth_useless,
                    f"{s.recall_reachable:.6f}",
                    f"{s.recall_unreachable_useful:.6f}",
                    s.useless_in_unreachable_estimate,
                ]
            )
