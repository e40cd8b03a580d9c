"""Checkpoint schedules for the adjoint of a time-stepping chain.

Execution model
---------------
The forward state of step ``k`` is the solution of record ``k`` (state 0 is
the initial value, which the tape always holds).  A machine keeps two
buffers: after ``advance(a, b)`` the current buffer holds state ``b`` and
the previous buffer state ``b - 1``.  ``restore(k)`` loads a snapshot (or
state 0) into the current buffer and clears the previous one.  The adjoint of
step ``k`` reads states ``k`` and ``k - 1``; each must be in a buffer, in a
snapshot slot or be state 0.  Snapshots are stored from either buffer into a
slot of tier ``ram`` or ``disk``; both tiers are in-memory pools, the second
one carrying a cost weight.

The planner minimises the number of single-step advances.  Ties are broken
towards fewer snapshot stores, then disk events are minimised by giving the
busiest slots to the ``ram`` tier.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

from .fem.space import FieldFunction
from .tape import Tape, TapeError, VarId

ADVANCE, STORE, RESTORE, ADJOINT, DISCARD = "advance", "store", "restore", "adjoint", "discard"
RAM, DISK = "ram", "disk"


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Action:
    kind: str
    step: int = 0
    to: int = 0             # advance target
    tier: str = ""
    slot: int = -1

    def __str__(self):
        if self.kind == ADVANCE:
            return f"advance {self.step} -> {self.to}"
        if self.kind == STORE:
            return f"store {self.step} {self.tier}[{self.slot}]"
        if self.kind == DISCARD:
            return f"discard {self.tier}[{self.slot}]"
        return f"{self.kind} {self.step}"


@dataclass
class SimulationResult:
    advances: int
    re_advances: int
    stores: int
    disk_events: int
    peak: dict


@dataclass
class CheckpointPlan:
    steps: int
    snaps_ram: int
    snaps_disk: int
    actions: list = field(default_factory=list)
    disk_weight: float = 3.0

    def __str__(self):
        head = f"# steps={self.steps} ram={self.snaps_ram} disk={self.snaps_disk}"
        return "\n".join([head] + [str(a) for a in self.actions]) + "\n"

    def simulate(self) -> SimulationResult:
        return simulate(self)

    @property
    def advances(self) -> int:
        return sum(a.to - a.step for a in self.actions if a.kind == ADVANCE)

    @property
    def re_advances(self) -> int:
        return self.advances - self.steps

    @property
    def cost(self) -> float:
        r = self.simulate()
        return r.advances + self.disk_weight * r.disk_events


# -- optimal recursion -----------------------------------------------------------

NONE, SLOT, BUFFER = 0, 1, 2   # where the top state of a segment is available


@lru_cache(maxsize=None)
def _best(L: int, s: int, top: int):
    """Cheapest way to run the adjoints of a segment of length ``L``.

    The segment's base state is available throughout, ``s`` slots are free
    and ``top`` says where the state at the segment's end already is (a slot
    of its own that is released after use, the previous buffer, or nowhere).
    Returns ``((advances, stores), choice)``.
    """
    if L == 0:
        return (0, 0), None
    if top == BUFFER:
        if L == 1:
            return (0, 0), ("use",)
        best = (_best(L, s, NONE)[0], ("drop",))
        if s >= 1:
            a, n = _best(L, s - 1, SLOT)[0]
            best = min(best, ((a, n + 1), ("keep",)))
        return best
    if top == SLOT:
        if L == 1:
            return (0, 0), ("use",)
        a, n = _best(L - 2, s + 1, BUFFER)[0]
        best = ((L - 1 + a, n), ("direct",))
        # giving the top slot back can pay off when it enables a split below
        best = min(best, (_best(L, s + 1, NONE)[0], ("release",)))
        if s >= 1:
            for m in range(1, L - 1):
                ua, un = _best(L - m, s - 1, SLOT)[0]
                la, ln = _best(m, s, SLOT)[0]
                best = min(best, ((m + ua + la, un + ln + 1), ("split", m)))
        return best
    a, n = _best(L - 1, s, BUFFER)[0]
    best = ((L + a, n), ("direct",))
    if s >= 1:
        for m in range(1, L):
            ua, un = _best(L - m, s - 1, NONE)[0]
            la, ln = _best(m, s - 1, SLOT)[0]
            best = min(best, ((m + ua + la, un + ln + 1), ("split", m)))
    return best


def minimal_advances(steps: int, snaps: int) -> int:
    """Fewest single-step advances for ``steps`` adjoints with ``snaps`` slots."""
    return _best(steps, snaps, NONE)[0][0]


class _Builder:
    def __init__(self, snaps):
        self.actions = []
        self.free = list(range(snaps))[::-1]
        self.cur = 0

    def at(self, base):
        if self.cur != base:
            self.actions.append(Action(RESTORE, base))
            self.cur = base

    def advance(self, a, b):
        if b > a:
            self.actions.append(Action(ADVANCE, a, b))
            self.cur = b

    def store(self, k):
        slot = self.free.pop()
        self.actions.append(Action(STORE, k, slot=slot))
        return slot

    def release(self, slot):
        self.actions.append(Action(DISCARD, slot=slot))
        self.free.append(slot)

    def adjoint(self, k):
        self.actions.append(Action(ADJOINT, k))

    def segment(self, base, L, top, top_slot=None):
        if L == 0:
            return
        choice = _best(L, len(self.free), top)[1]
        kind = choice[0]
        if top == BUFFER:
            if kind == "use":
                self.adjoint(base + 1)
            elif kind == "drop":
                self.segment(base, L, NONE)
            else:
                slot = self.store(base + L)
                self.segment(base, L, SLOT, slot)
            return
        if top == SLOT:
            if kind == "use":
                self.adjoint(base + 1)
                self.release(top_slot)
            elif kind == "release":
                self.release(top_slot)
                self.segment(base, L, NONE)
            elif kind == "direct":
                self.at(base)
                self.advance(base, base + L - 1)
                self.adjoint(base + L)
                self.release(top_slot)
                self.adjoint(base + L - 1)
                self.segment(base, L - 2, BUFFER)
            else:
                m = choice[1]
                self.at(base)
                self.advance(base, base + m)
                slot = self.store(base + m)
                self.segment(base + m, L - m, SLOT, top_slot)
                self.segment(base, m, SLOT, slot)
            return
        if kind == "direct":
            self.at(base)
            self.advance(base, base + L)
            self.adjoint(base + L)
            self.segment(base, L - 1, BUFFER)
        else:
            m = choice[1]
            self.at(base)
            self.advance(base, base + m)
            slot = self.store(base + m)
            self.segment(base + m, L - m, NONE)
            self.segment(base, m, SLOT, slot)


def plan_multistage(steps: int, snaps_ram: int, snaps_disk: int = 0,
                    disk_weight: float = 3.0) -> CheckpointPlan:
    """Schedule with the fewest forward advances for the given capacities."""
    if steps < 1:
        raise PlanError("a plan needs at least one step")
    if snaps_ram < 0 or snaps_disk < 0:
        raise PlanError("snapshot capacities must be non-negative")
    total = snaps_ram + snaps_disk
    if total == 0 and steps > 1:
        raise PlanError("no snapshot capacity for more than one step")
    b = _Builder(total)
    b.segment(0, steps, NONE)
    actions = _assign_tiers(b.actions, snaps_ram, snaps_disk)
    plan = CheckpointPlan(steps, snaps_ram, snaps_disk, actions, disk_weight)
    simulate(plan)
    return plan


def _assign_tiers(actions, ram, disk):
    """Give the slots with the most store/restore traffic to the ram tier."""
    owner, uses = {}, {}
    for a in actions:
        if a.kind == STORE:
            owner[a.step] = a.slot
            uses[a.slot] = uses.get(a.slot, 0) + 1
        elif a.kind == RESTORE and a.step in owner:
            uses[owner[a.step]] = uses.get(owner[a.step], 0) + 1
    order = sorted(uses, key=lambda s: (-uses[s], s))
    names = {}
    for i, s in enumerate(order):
        names[s] = (RAM, i) if i < ram else (DISK, i - ram)
    out = []
    for a in actions:
        if a.kind in (STORE, DISCARD):
            tier, idx = names[a.slot]
            a = Action(a.kind, a.step, a.to, tier, idx)
        out.append(a)
    return out


def simulate(plan: CheckpointPlan) -> SimulationResult:
    """Execute the plan abstractly, raising PlanError on any violation."""
    cap = {RAM: plan.snaps_ram, DISK: plan.snaps_disk}
    slots = {}                         # (tier, idx) -> step
    cur, prev = 0, None
    next_adj = plan.steps
    advances = stores = disk_events = 0
    peak = {RAM: 0, DISK: 0}
    for i, a in enumerate(plan.actions):
        where = f"action {i} ({a})"
        if a.kind == ADVANCE:
            if a.step != cur:
                raise PlanError(f"{where}: current state is {cur}")
            if not a.step < a.to <= plan.steps:
                raise PlanError(f"{where}: bad advance range")
            advances += a.to - a.step
            cur, prev = a.to, a.to - 1
        elif a.kind == STORE:
            if a.step not in (cur, prev):
                raise PlanError(f"{where}: state {a.step} is not in a buffer")
            if a.tier not in cap or not 0 <= a.slot < cap[a.tier]:
                raise PlanError(f"{where}: no such slot")
            if (a.tier, a.slot) in slots:
                raise PlanError(f"{where}: slot is occupied")
            slots[(a.tier, a.slot)] = a.step
            stores += 1
            disk_events += a.tier == DISK
            peak[a.tier] = max(peak[a.tier], sum(1 for t, _ in slots if t == a.tier))
        elif a.kind == RESTORE:
            hit = [k for k, v in slots.items() if v == a.step]
            if a.step != 0 and not hit:
                raise PlanError(f"{where}: no snapshot of state {a.step}")
            if a.step != 0:
                disk_events += hit[0][0] == DISK
            cur, prev = a.step, None
        elif a.kind == DISCARD:
            if (a.tier, a.slot) not in slots:
                raise PlanError(f"{where}: slot is empty")
            del slots[(a.tier, a.slot)]
        elif a.kind == ADJOINT:
            if a.step != next_adj:
                raise PlanError(f"{where}: expected adjoint {next_adj}")
            avail = {0, cur} | set(slots.values())
            if prev is not None:
                avail.add(prev)
            if a.step not in avail or a.step - 1 not in avail:
                raise PlanError(f"{where}: states {a.step} and {a.step - 1} not both available")
            next_adj -= 1
        else:
            raise PlanError(f"{where}: unknown action")
    if next_adj != 0:
        raise PlanError(f"plan stops before adjoint {next_adj}")
    return SimulationResult(advances, advances - plan.steps, stores, disk_events, peak)


# -- execution on a tape ---------------------------------------------------------------

@dataclass
class CheckpointRun:
    gradients: list
    value: float | None
    advances: int


def adjoint_with_checkpoints(tape: Tape, functional, controls, plan: CheckpointPlan,
                             riesz: str = "l2") -> CheckpointRun:
    """Forward and reverse sweep under ``plan`` without keeping the trajectory.

    Gradients equal :func:`compute_gradient` on the same tape bit for bit.
    """
    from .adjoint import ReverseSweep, _check_controls, riesz_l2

    if not tape.is_chain():
        raise TapeError("checkpointing needs a single-variable time-stepping tape")
    if plan.steps != len(tape.records):
        raise PlanError(f"plan has {plan.steps} steps, tape has {len(tape.records)} records")
    controls = _check_controls(tape, controls)
    name = tape.records[0].unknown.name
    base = tape.initial_states()
    var = lambda k: VarId(name, k)  # noqa: E731
    sweep = ReverseSweep(tape, functional, controls)
    grid = sweep.grid
    active = set(functional.active_levels(grid)) if functional is not None else set()
    seen = {0}
    value = 0
    if 0 in active:
        value = value + functional.level_value(0, grid, tape.functional_resolver(base), tape.mesh)

    cur = (0, base[var(0)])
    prev = None
    slots = {}
    advances = 0

    def lookup(k):
        if k == 0:
            return base[var(0)]
        for held in (cur, prev):
            if held is not None and held[0] == k:
                return held[1]
        for step, val in slots.values():
            if step == k:
                return val
        raise PlanError(f"state {k} unavailable")

    for a in plan.actions:
        if a.kind == ADVANCE:
            for k in range(a.step + 1, a.to + 1):
                states = dict(base)
                states[var(k - 1)] = cur[1]
                val = tape.run_record(k - 1, states)
                prev, cur = cur, (k, val)
                advances += 1
                if k not in seen:
                    seen.add(k)
                    if k in active:
                        value = value + functional.level_value(
                            k, grid, tape.functional_resolver({var(k): val}), tape.mesh)
        elif a.kind == STORE:
            src = cur if cur[0] == a.step else prev
            slots[(a.tier, a.slot)] = (a.step, FieldFunction(src[1].space, src[1].vector.copy()))
        elif a.kind == RESTORE:
            cur, prev = (a.step, lookup(a.step)), None
        elif a.kind == DISCARD:
            del slots[(a.tier, a.slot)]
        elif a.kind == ADJOINT:
            states = dict(base)
            states[var(a.step)] = lookup(a.step)
            states[var(a.step - 1)] = lookup(a.step - 1)
            sweep.step(a.step - 1, states)
    sweep.finish(base)
    grads = [sweep.grads[c.id] for c in controls]
    if riesz == "L2":
        grads = [riesz_l2(c, g) for c, g in zip(controls, grads)]
    return CheckpointRun(grads, float(value) if functional is not None else None, advances)
