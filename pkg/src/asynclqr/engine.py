"""Virtual-time, event-driven simulation of the asynchronous gradient server.

Every agent computes a gradient estimate over a modeled virtual duration and
reports it; the server accumulates reports and, once a batch of b_s has been
collected, takes a step

    K_{n+1} = K_n - (eta / b_s) * sum(batch)

then broadcasts the new controller to exactly the agents that are idle.  Busy
agents keep computing on the controller they already hold, which is what
creates staleness.  The event queue is keyed by (ready_at, agent_id), all
randomness flows through per-(agent, report) substreams, and so a trace is a
pure function of (fleet, config, seed).

Staleness capping (tau_cap) is enforced by making the server wait: an update
from n to n+1 is deferred while any outstanding report would be pushed past
staleness tau_cap by it, and batch slots are reserved for reports whose
deadline is the current iteration.  Reports are never dropped, and only when
a reservation binds may a deadline report be accumulated ahead of queued
fresher ones (the single departure from strict arrival-order accumulation).
When deadline reports no longer fit the open batch, the configuration itself
cannot satisfy the cap and the run aborts with a diagnostic.
"""

from __future__ import annotations

import csv
import heapq
from collections import deque
from dataclasses import dataclass

import numpy as np

from .fleet import Fleet, stacked_arrays
from .lqr_core import Controller, analytic_gradient, eval_batch, optimal_solution
from .zo import ZoConfig, zo_estimate

DIVERGENCE_GAP = 1e6
MODE_ZO = "zo"
MODE_EXACT = "exact-grad"

_TAG_ZO = 1
_TAG_DELAY = 2


class DivergenceDetected(RuntimeError):
    """An iterate destabilized a system or a gap exceeded the safety bound
    (step size too large for the theory's preconditions)."""

    def __init__(self, message, iteration: int, system: int | None = None):
        super().__init__(message)
        self.iteration = iteration
        self.system = system


class StalenessCapInfeasible(RuntimeError):
    """The (tau_cap, b_s, M, delays) combination cannot honor the cap without
    dropping or reordering reports beyond what deferral allows."""


@dataclass(frozen=True)
class DelayModel:
    """Per-agent virtual compute durations, with optional straggler scaling."""

    kind: str = "deterministic"
    per_agent_scale: tuple = (1.0,)
    straggler_ids: frozenset = frozenset()
    straggler_factor: float = 1.0

    def __post_init__(self):
        if self.kind not in ("deterministic", "exponential"):
            raise ValueError(f"unknown delay kind {self.kind!r}")
        if any(s <= 0.0 for s in self.per_agent_scale):
            raise ValueError("per-agent scales must be positive")
        if self.straggler_factor < 1.0:
            raise ValueError("straggler_factor must be >= 1")
        object.__setattr__(self, "per_agent_scale", tuple(self.per_agent_scale))
        object.__setattr__(self, "straggler_ids", frozenset(self.straggler_ids))

    @classmethod
    def uniform(cls, m_count: int, scale: float = 1.0) -> "DelayModel":
        return cls(kind="deterministic", per_agent_scale=(scale,) * m_count)

    def scale_for(self, agent: int) -> float:
        base = self.per_agent_scale[agent % len(self.per_agent_scale)]
        if agent in self.straggler_ids:
            base *= self.straggler_factor
        return base

    def duration(self, agent: int, report_index: int, seed: int) -> float:
        scale = self.scale_for(agent)
        if self.kind == "deterministic":
            return scale
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((seed, _TAG_DELAY, agent, report_index)))
        )
        return float(rng.exponential(scale))


@dataclass(frozen=True)
class GradientReport:
    """One agent's estimate, with provenance for staleness accounting."""

    agent_id: int
    grad: np.ndarray
    based_on_stamp: int
    ready_at: float
    seq: int


@dataclass(frozen=True)
class TraceRecord:
    """Metrics for one server iteration."""

    n: int
    clock: float
    gaps: tuple
    avg_grad_norm_sq: float
    staleness: tuple
    all_stable: bool

    @property
    def max_staleness(self) -> int:
        return max(self.staleness) if self.staleness else 0


@dataclass
class ServerState:
    """Mutable server bookkeeping (owned by the event loop)."""

    k_bar: Controller
    accumulator: np.ndarray
    s: int
    n: int
    clock: float
    eta: float
    b_s: int
    tau_cap: int | None


class _FleetEvaluator:
    """Exact per-iteration metrics against the Riccati optima (cached)."""

    def __init__(self, fleet: Fleet):
        self.fleet = fleet
        self.arrays = stacked_arrays(fleet.models)
        self.sigma0 = fleet.init.sigma0
        self.optima = [optimal_solution(m, fleet.init) for m in fleet.models]
        self.j_stars = np.array([o.j_star for o in self.optima])
        self.m_count = fleet.size

    def record(self, n: int, clock: float, staleness, k: np.ndarray):
        """One TraceRecord plus the per-system analytic gradients at k.

        The gradients are returned so that exact-gradient runs can hand them
        straight to the agents broadcast at this iteration instead of
        recomputing the identical quantities.
        """
        ks = np.ascontiguousarray(np.broadcast_to(k, (self.m_count,) + k.shape))
        costs, grads, ok = eval_batch(*self.arrays, ks, self.sigma0)
        if not np.all(ok):
            bad = int(np.where(~ok)[0][0])
            raise DivergenceDetected(
                f"iteration {n}: controller destabilizes system {bad}",
                iteration=n,
                system=bad,
            )
        gaps = costs - self.j_stars
        worst = float(np.max(gaps))
        if worst > DIVERGENCE_GAP:
            bad = int(np.argmax(gaps))
            raise DivergenceDetected(
                f"iteration {n}: gap {worst:.3e} exceeds {DIVERGENCE_GAP:.0e} "
                f"on system {bad} (step size likely too large)",
                iteration=n,
                system=bad,
            )
        mean_grad = grads.mean(axis=0)
        record = TraceRecord(
            n=n,
            clock=clock,
            gaps=tuple(float(g) for g in gaps),
            avg_grad_norm_sq=float(np.sum(mean_grad * mean_grad)),
            staleness=tuple(int(t) for t in staleness),
            all_stable=True,
        )
        return record, grads


class _GradientSource:
    """Per-agent gradient computations for one run.

    In exact-gradient mode agents reuse the per-system gradients the trace
    evaluator already computed at the broadcast controller; in zo mode each
    report consumes its own (agent, report_index) stream.
    """

    def __init__(self, fleet: Fleet, zo_cfg: ZoConfig, seed: int, mode: str):
        if mode not in (MODE_ZO, MODE_EXACT):
            raise ValueError(f"unknown mode {mode!r}")
        self.fleet = fleet
        self.zo_cfg = zo_cfg
        self.seed = seed
        self.mode = mode

    def single(self, agent: int, k: np.ndarray, report_index: int) -> np.ndarray:
        if self.mode == MODE_EXACT:
            return analytic_gradient(self.fleet.models[agent], k, self.fleet.init)
        cfg = self.zo_cfg.with_stream((self.seed, _TAG_ZO, agent, report_index))
        return zo_estimate(self.fleet.models[agent], k, cfg, self.fleet.init).grad_hat


def run_async(
    fleet: Fleet,
    k0: Controller,
    eta: float,
    b_s: int,
    n_iters: int,
    zo_cfg: ZoConfig,
    delays: DelayModel,
    tau_cap: int | None = None,
    seed: int = 0,
    mode: str = MODE_ZO,
    audit: dict | None = None,
) -> list:
    """Simulate the asynchronous server for n_iters updates.

    Returns one TraceRecord per iteration n = 0..n_iters (the n=0 record is
    the initial controller).  Raises DivergenceDetected per the safety bound
    and propagates PerturbationUnstable from the estimator.
    """
    m_count = fleet.size
    if b_s < 1 or b_s > m_count:
        raise ValueError(f"b_s must be in [1, M], got {b_s} with M={m_count}")
    if eta <= 0.0:
        raise ValueError("eta must be positive")
    if tau_cap is not None and tau_cap < 1:
        raise ValueError("tau_cap must be >= 1 when set")

    evaluator = _FleetEvaluator(fleet)
    source = _GradientSource(fleet, zo_cfg, seed, mode)
    server = ServerState(
        k_bar=Controller(k0.k, 0),
        accumulator=np.zeros_like(np.asarray(k0.k, dtype=np.float64)),
        s=0,
        n=0,
        clock=0.0,
        eta=eta,
        b_s=b_s,
        tau_cap=tau_cap,
    )
    first_record, current_grads = evaluator.record(0, 0.0, (), server.k_bar.k)
    records = [first_record]

    heap: list = []
    fifo: deque = deque()
    busy = [False] * m_count
    held = [server.k_bar] * m_count
    next_report_index = [0] * m_count
    pending_index = [0] * m_count
    pending_grad: list = [None] * m_count
    batch_staleness: list = []
    seq_counter = 0
    if audit is not None:
        audit.setdefault("aggregated", [])
        audit.setdefault("delivered", [])

    def broadcast(agents, now: float) -> None:
        """Hand the current controller to idle agents and schedule completions.

        In exact-gradient mode the gradient every agent will report is the
        one the evaluator just computed at this controller, so it is attached
        here instead of being recomputed at delivery time.
        """
        for agent in agents:
            idx = next_report_index[agent]
            next_report_index[agent] += 1
            pending_index[agent] = idx
            pending_grad[agent] = current_grads[agent] if mode == MODE_EXACT else None
            held[agent] = server.k_bar
            busy[agent] = True
            heapq.heappush(heap, (now + delays.duration(agent, idx, seed), agent))

    def deadline(stamp: int) -> int:
        return stamp + server.tau_cap  # only called when tau_cap is set

    def outstanding_critical() -> tuple:
        """Reports that must enter the currently open batch."""
        in_flight = sum(
            1 for a in range(m_count) if busy[a] and deadline(held[a].stamp) <= server.n
        )
        queued = [i for i, rep in enumerate(fifo) if deadline(rep.based_on_stamp) <= server.n]
        return in_flight, queued

    def accumulate(report: GradientReport) -> None:
        tau = server.n - report.based_on_stamp
        if server.tau_cap is not None and tau > server.tau_cap:
            raise StalenessCapInfeasible(
                f"report from agent {report.agent_id} (stamp {report.based_on_stamp}) "
                f"would aggregate at iteration {server.n} with staleness {tau} > "
                f"tau_cap {server.tau_cap}; b_s={server.b_s}, M={m_count} cannot "
                "honor the cap under these delays"
            )
        server.accumulator += report.grad
        server.s += 1
        batch_staleness.append(tau)
        if audit is not None:
            audit["aggregated"].append(
                (report.seq, report.agent_id, report.based_on_stamp, server.n)
            )

    def admit_one() -> bool:
        """Move one queued report into the batch, honoring slot reservations."""
        if not fifo:
            return False
        if server.tau_cap is None:
            accumulate(fifo.popleft())
            return True
        in_flight_crit, queued_crit = outstanding_critical()
        free = server.b_s - server.s
        needed = in_flight_crit + len(queued_crit)
        if needed > free:
            raise StalenessCapInfeasible(
                f"iteration {server.n}: {needed} reports hit the staleness deadline "
                f"but only {free} batch slots remain (b_s={server.b_s}, M={m_count}, "
                f"tau_cap={server.tau_cap})"
            )
        if queued_crit and queued_crit[0] == 0:
            accumulate(fifo.popleft())
            return True
        if free - 1 >= needed:
            # Room for the head and still for every deadline report.
            accumulate(fifo.popleft())
            return True
        if queued_crit:
            # Reservation binds: a deadline report jumps the held head.
            pos = queued_crit[0]
            fifo.rotate(-pos)
            report = fifo.popleft()
            fifo.rotate(pos)
            accumulate(report)
            return True
        return False  # every remaining slot is reserved for in-flight reports

    def update_allowed() -> bool:
        if server.tau_cap is None:
            return True
        horizon = server.n + 1
        for a in range(m_count):
            if busy[a] and deadline(held[a].stamp) < horizon:
                return False
        return all(deadline(rep.based_on_stamp) >= horizon for rep in fifo)

    def service() -> None:
        nonlocal current_grads
        while server.n < n_iters:
            while server.s < server.b_s and admit_one():
                pass
            if server.s < server.b_s or not update_allowed():
                return
            k_new = server.k_bar.k - (server.eta / server.b_s) * server.accumulator
            server.n += 1
            record, current_grads = evaluator.record(
                server.n, server.clock, tuple(batch_staleness), k_new
            )
            records.append(record)
            server.k_bar = Controller(k_new, server.n)
            server.accumulator = np.zeros_like(server.accumulator)
            server.s = 0
            batch_staleness.clear()
            if server.n == n_iters:
                return
            idle = [agent for agent in range(m_count) if not busy[agent]]
            if idle:
                broadcast(idle, server.clock)

    broadcast(list(range(m_count)), 0.0)

    while server.n < n_iters and heap:
        ready_at, agent = heapq.heappop(heap)
        server.clock = ready_at
        grad = pending_grad[agent]
        if grad is None:
            grad = source.single(agent, held[agent].k, pending_index[agent])
        pending_grad[agent] = None
        busy[agent] = False
        report = GradientReport(
            agent_id=agent,
            grad=grad,
            based_on_stamp=held[agent].stamp,
            ready_at=ready_at,
            seq=seq_counter,
        )
        seq_counter += 1
        if audit is not None:
            audit["delivered"].append((report.seq, agent, report.based_on_stamp))
        fifo.append(report)
        service()

    if server.n < n_iters:
        raise RuntimeError("event queue drained before reaching N iterations")
    if audit is not None:
        audit["leftover"] = [rep.seq for rep in fifo]
    return records


def run_sync(
    fleet: Fleet,
    k0: Controller,
    eta: float,
    n_iters: int,
    zo_cfg: ZoConfig,
    delays: DelayModel,
    seed: int = 0,
    mode: str = MODE_ZO,
) -> list:
    """Synchronous baseline: every iteration aggregates all M estimates and
    the virtual clock advances by the slowest agent's duration."""
    m_count = fleet.size
    evaluator = _FleetEvaluator(fleet)
    source = _GradientSource(fleet, zo_cfg, seed, mode)
    k_bar = Controller(k0.k, 0)
    record, current_grads = evaluator.record(0, 0.0, (), k_bar.k)
    records = [record]
    clock = 0.0
    for it in range(n_iters):
        accumulator = np.zeros_like(k_bar.k)
        if mode == MODE_EXACT:
            for agent in range(m_count):
                accumulator += current_grads[agent]
        else:
            for agent in range(m_count):
                accumulator += source.single(agent, k_bar.k, it)
        clock += max(delays.duration(agent, it, seed) for agent in range(m_count))
        k_new = k_bar.k - (eta / m_count) * accumulator
        record, current_grads = evaluator.record(it + 1, clock, (0,) * m_count, k_new)
        records.append(record)
        k_bar = Controller(k_new, it + 1)
    return records


@dataclass(frozen=True)
class StalenessSummary:
    max: int
    mean: float
    histogram: dict


def staleness_stats(trace) -> StalenessSummary:
    """Max, mean and histogram of staleness over every aggregated report."""
    if not trace:
        raise ValueError("empty trace")
    values = [tau for rec in trace for tau in rec.staleness]
    if not values:
        return StalenessSummary(max=0, mean=0.0, histogram={})
    hist: dict = {}
    for tau in values:
        hist[tau] = hist.get(tau, 0) + 1
    return StalenessSummary(
        max=max(values), mean=sum(values) / len(values), histogram=hist
    )


def write_trace_csv(records, path) -> None:
    """Trace schema: n,clock,avg_grad_norm_sq,max_staleness,all_stable,gap_1..gap_M."""
    m_count = len(records[0].gaps)
    header = ["n", "clock", "avg_grad_norm_sq", "max_staleness", "all_stable"]
    header += [f"gap_{i + 1}" for i in range(m_count)]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for rec in records:
            row = [
                rec.n,
                repr(rec.clock),
                repr(rec.avg_grad_norm_sq),
                rec.max_staleness,
                int(rec.all_stable),
            ]
            row += [repr(g) for g in rec.gaps]
            writer.writerow(row)
