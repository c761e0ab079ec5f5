"""Clairvoyant placement optimizer.

Maximize the summed gain (HDD cost minus SSD cost per job, in the TCO
or TCIO objective) of the SSD-placed subset, subject to the active
footprints fitting in M at every instant. Footprints are constant over
each job's lifetime, so feasibility only needs checking at the arrival
instants of selectable jobs: any violation over an interval is already
a violation at the latest arrival inside it.

The solver is a bespoke depth-first branch and bound, exact at desk
scale; large instances run under a node or time budget and report the
proven optimality gap instead.
"""

from __future__ import annotations

import csv
import math
import time
from bisect import bisect_left
from dataclasses import dataclass
from typing import Optional

import numpy as np

from tierlab.costs import HDD, CostRates, tcio_total, tco_savings
from tierlab.trace import Trace

OBJECTIVE_TCO = "tco"
OBJECTIVE_TCIO = "tcio"

STATUS_OPTIMAL = "optimal"
STATUS_BOUNDED = "bounded"

_PRUNE_MARGIN = 1e-9  # relative; explore any branch within this of the incumbent


@dataclass(frozen=True)
class OracleJob:
    job_id: str
    arrival: float
    end: float
    size: int
    gain: float


@dataclass(frozen=True)
class OracleInstance:
    jobs: tuple[OracleJob, ...]
    ssd_quota: float
    objective: str

    def validate(self) -> None:
        if self.objective not in (OBJECTIVE_TCO, OBJECTIVE_TCIO):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.ssd_quota < 0:
            raise ValueError("ssd_quota must be >= 0")
        for j in self.jobs:
            if j.size <= 0:
                raise ValueError(f"job {j.job_id}: size must be positive")
            if j.end <= j.arrival:
                raise ValueError(f"job {j.job_id}: end must follow arrival")


@dataclass(frozen=True)
class OracleSolution:
    x: tuple[bool, ...]
    objective_value: float
    status: str
    gap: float  # proven absolute gap; 0 when optimal
    nodes_explored: int

    @property
    def upper_bound(self) -> float:
        return self.objective_value + self.gap


def build_instance(trace: Trace, rates: CostRates, ssd_quota: float,
                   objective: str) -> OracleInstance:
    """Gains per job: TCO savings, or the job's whole-lifetime HDD load
    (placing it on SSD zeroes that load, so the saving is the load itself)."""
    jobs = []
    for job in trace.jobs:
        if objective == OBJECTIVE_TCO:
            gain = tco_savings(job, rates)
        elif objective == OBJECTIVE_TCIO:
            gain = tcio_total(job, HDD, rates, job.end_time)
        else:
            raise ValueError(f"unknown objective {objective!r}")
        jobs.append(OracleJob(job.job_id, job.arrival_time, job.end_time, job.peak_bytes, gain))
    inst = OracleInstance(jobs=tuple(jobs), ssd_quota=float(ssd_quota), objective=objective)
    inst.validate()
    return inst


def canonical_value(gains, selected_indices) -> float:
    """Objective as a plain left-to-right sum in ascending job order.

    Both this solver and the exhaustive verifier total their objectives
    this way, so equal selections produce bit-equal values.
    """
    total = 0.0
    for i in sorted(selected_indices):
        total += gains[i]
    return total


def _event_layout(cands: list[int], jobs) -> tuple[list[float], list[int], list[int]]:
    events = sorted({jobs[i].arrival for i in cands})
    lo, hi = [], []
    for i in cands:
        lo.append(bisect_left(events, jobs[i].arrival))
        hi.append(bisect_left(events, jobs[i].end))
    return events, lo, hi


def solve(inst: OracleInstance, node_budget: Optional[int] = None,
          time_budget: Optional[float] = None) -> OracleSolution:
    """Branch and bound over the positive-gain jobs.

    Candidates are ordered by gain per byte-second (space-time density);
    each node's upper bound adds the undecided gains, tightened by a
    fractional fill at the single globally tightest arrival instant
    (a valid relaxation: all other capacity constraints are dropped).
    Exhausting a budget downgrades the status to bounded with the gap
    proven from the bounds of the unexplored subtrees.
    """
    inst.validate()
    jobs = inst.jobs
    n = len(jobs)
    M = inst.ssd_quota
    gains = [j.gain for j in jobs]

    cands = [i for i in range(n) if jobs[i].gain > 0 and jobs[i].size <= M]
    order = sorted(
        cands,
        key=lambda i: (-(gains[i] / (jobs[i].size * (jobs[i].end - jobs[i].arrival))), i),
    )
    k_n = len(order)
    if k_n == 0:
        return OracleSolution(tuple(False for _ in range(n)), 0.0, STATUS_OPTIMAL, 0.0, 1)

    events, lo_l, hi_l = _event_layout(order, jobs)
    lo = {i: l for i, l in zip(order, lo_l)}
    hi = {i: h for i, h in zip(order, hi_l)}
    n_events = len(events)
    rem = np.full(n_events, M, dtype=np.float64)

    sizes = {i: float(jobs[i].size) for i in order}
    suffix_gain = [0.0] * (k_n + 1)
    for pos in range(k_n - 1, -1, -1):
        suffix_gain[pos] = suffix_gain[pos + 1] + gains[order[pos]]

    # Tightest instant: the arrival with the largest total overlapping
    # demand. The per-node bound does its fractional fill there.
    demand = np.zeros(n_events)
    for i in order:
        demand[lo[i] : hi[i]] += sizes[i]
    tight = int(np.argmax(demand))
    tight_members = [pos for pos in range(k_n) if lo[order[pos]] <= tight < hi[order[pos]]]
    tight_sorted = sorted(
        tight_members, key=lambda pos: (-(gains[order[pos]] / sizes[order[pos]]), pos)
    )
    suffix_gain_tight = [0.0] * (k_n + 1)
    in_tight = [False] * k_n
    for pos in tight_members:
        in_tight[pos] = True
    for pos in range(k_n - 1, -1, -1):
        suffix_gain_tight[pos] = suffix_gain_tight[pos + 1] + (
            gains[order[pos]] if in_tight[pos] else 0.0
        )

    def rest_bound(pos: int) -> float:
        """Upper bound on what positions pos..end can still add."""
        base = suffix_gain[pos] - suffix_gain_tight[pos]
        cap = float(rem[tight])
        fill = 0.0
        for p in tight_sorted:
            if cap <= 0.0:
                break
            if p < pos:
                continue
            i = order[p]
            if sizes[i] <= cap:
                cap -= sizes[i]
                fill += gains[i]
            else:
                fill += gains[i] * (cap / sizes[i])
                break
        return base + fill

    best_indices: list[int] = []
    best_val = 0.0
    included: list[int] = []
    included_gain = 0.0
    nodes = 0
    exhausted = False
    open_ub = 0.0
    deadline = time.monotonic() + time_budget if time_budget is not None else None

    stack: list[tuple[str, int]] = [("node", 0)]
    while stack:
        op, pos = stack.pop()
        if op == "undo":
            i = order[pos]
            rem[lo[i] : hi[i]] += sizes[i]
            included.pop()
            included_gain -= gains[i]
            continue
        margin = _PRUNE_MARGIN * max(1.0, abs(best_val))
        if exhausted:
            open_ub = max(open_ub, included_gain + rest_bound(pos))
            continue
        nodes += 1
        if node_budget is not None and nodes > node_budget:
            exhausted = True
        if deadline is not None and nodes % 256 == 0 and time.monotonic() > deadline:
            exhausted = True
        if exhausted:
            open_ub = max(open_ub, included_gain + rest_bound(pos))
            continue
        if pos == k_n:
            value = canonical_value(gains, included)
            if value > best_val:
                best_val = value
                best_indices = sorted(included)
            continue
        if included_gain + rest_bound(pos) <= best_val - margin:
            continue
        i = order[pos]
        stack.append(("node", pos + 1))  # exclude branch, explored second
        if float(np.min(rem[lo[i] : hi[i]])) >= sizes[i]:
            rem[lo[i] : hi[i]] -= sizes[i]
            included.append(i)
            included_gain += gains[i]
            stack.append(("undo", pos))
            stack.append(("node", pos + 1))

    x = [False] * n
    for i in best_indices:
        x[i] = True
    if exhausted:
        gap = max(0.0, open_ub - best_val)
        return OracleSolution(tuple(x), best_val, STATUS_BOUNDED, gap, nodes)
    return OracleSolution(tuple(x), best_val, STATUS_OPTIMAL, 0.0, nodes)


def verify(inst: OracleInstance, sol: OracleSolution) -> bool:
    """Independent feasibility and objective recheck."""
    if len(sol.x) != len(inst.jobs):
        return False
    selected = [i for i, chosen in enumerate(sol.x) if chosen]
    events = sorted({inst.jobs[i].arrival for i in selected})
    for t in events:
        usage = sum(
            inst.jobs[i].size for i in selected
            if inst.jobs[i].arrival <= t < inst.jobs[i].end
        )
        if usage > inst.ssd_quota:
            return False
    value = canonical_value([j.gain for j in inst.jobs], selected)
    return abs(value - sol.objective_value) <= 1e-9 * max(1.0, abs(value))


def save_instance(inst: OracleInstance, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["#instance", inst.objective, repr(inst.ssd_quota)])
        w.writerow(["job_id", "arrival", "end", "size", "gain"])
        for j in inst.jobs:
            w.writerow([j.job_id, repr(j.arrival), repr(j.end), j.size, repr(j.gain)])


def load_instance(path) -> OracleInstance:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        meta = next(reader)
        if not meta or meta[0] != "#instance":
            raise ValueError("not an instance file")
        objective, quota = meta[1], float(meta[2])
        header = next(reader)
        if header != ["job_id", "arrival", "end", "size", "gain"]:
            raise ValueError(f"unexpected instance header: {header}")
        jobs = tuple(
            OracleJob(r[0], float(r[1]), float(r[2]), int(r[3]), float(r[4])) for r in reader
        )
    inst = OracleInstance(jobs=jobs, ssd_quota=quota, objective=objective)
    inst.validate()
    return inst


def save_solution(inst: OracleInstance, sol: OracleSolution, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["#solution", sol.status, repr(sol.objective_value), repr(sol.gap), sol.nodes_explored]
        )
        w.writerow(["job_id", "ssd"])
        for j, chosen in zip(inst.jobs, sol.x):
            w.writerow([j.job_id, int(chosen)])


def load_solution(path) -> tuple[OracleSolution, dict[str, bool]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        meta = next(reader)
        if not meta or meta[0] != "#solution":
            raise ValueError("not a solution file")
        status, value, gap, nodes = meta[1], float(meta[2]), float(meta[3]), int(meta[4])
        header = next(reader)
        if header != ["job_id", "ssd"]:
            raise ValueError(f"unexpected solution header: {header}")
        placements = {r[0]: bool(int(r[1])) for r in reader}
    sol = OracleSolution(
        x=tuple(placements.values()), objective_value=value, status=status, gap=gap,
        nodes_explored=nodes,
    )
    return sol, placements
