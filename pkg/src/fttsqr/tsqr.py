"""Tall-and-skinny QR reduction drivers with fail-stop fault tolerance.

Four variants share one round engine. All of them start from one local QR
per block and then run log2(P) exchange rounds:

* baseline: binary reduction tree; at each round half of the remaining
  participants send their factor and exit, so only rank 0 can finish.
* redundant: butterfly exchange (partner = rank XOR 2^step); every
  process merges both factors, so intermediate factors are replicated.
  A process whose partner is gone exits immediately.
* replace: same butterfly, but a process whose partner is gone re-pairs
  with a live replica of the partner and keeps going.
* selfheal: same butterfly, but the process that detects a death spawns
  a replacement into the dead rank; the newborn copies state from a live
  twin and the round is re-run for that pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable

from .densela import Matrix, TriangularFactor, householder_qr_r, mat_random, rel_residual, stack
from .errors import DefectError, UnsupportedTopologyError
from .simnet import (
    ALIVE_STATUSES,
    Delivered,
    FailureEvent,
    Phase,
    ProcStatus,
    World,
)

__all__ = [
    "AlgorithmKind",
    "Role",
    "ProcState",
    "RunConfig",
    "RankOutcome",
    "RunReport",
    "buddy",
    "baseline_role",
    "replica_group",
    "find_replica",
    "budget_check",
    "data_available",
    "run",
]


class AlgorithmKind(Enum):
    """Driver variants; enum order is the serialization order."""

    BASELINE = "baseline"
    REDUNDANT = "redundant"
    REPLACE = "replace"
    SELFHEAL = "selfheal"


class Role(Enum):
    SENDER = "sender"
    RECEIVER = "receiver"
    INACTIVE = "inactive"


@dataclass
class ProcState:
    """Driver-side view of one simulated process."""

    rank: int
    step: int
    factor: TriangularFactor | None
    status: ProcStatus
    holds_final: bool = False


@dataclass(frozen=True)
class RunConfig:
    algorithm: AlgorithmKind
    procs: int
    rows: int
    cols: int
    seed: int
    schedule: tuple[FailureEvent, ...] = ()
    tol: float = 1e-10


@dataclass(frozen=True)
class RankOutcome:
    rank: int
    status: ProcStatus
    step: int
    holds_final: bool
    residual: float | None


@dataclass(frozen=True)
class RunReport:
    """Outcome of one simulated factorization."""

    algorithm: AlgorithmKind
    procs: int
    rounds: int
    ranks: tuple[RankOutcome, ...]
    holders: tuple[int, ...]
    budget_ok: bool
    data_loss: bool
    respawns: int
    final_factor: TriangularFactor | None


RoundObserver = Callable[[int, dict[int, Matrix]], None]


def buddy(rank: int, step: int) -> int:
    """Exchange partner at a round: flip bit `step` of the rank.

    Involution: buddy(buddy(r, s), s) == r.
    """
    if rank < 0 or step < 0:
        raise ValueError(f"rank and step must be nonnegative, got ({rank}, {step})")
    return rank ^ (1 << step)


def baseline_role(rank: int, step: int) -> Role:
    """Reduction-tree role: ranks still aligned to the tree participate,
    bit `step` decides who sends (and exits) and who receives."""
    if rank < 0 or step < 0:
        raise ValueError(f"rank and step must be nonnegative, got ({rank}, {step})")
    if rank % (1 << step):
        return Role.INACTIVE
    return Role.SENDER if (rank >> step) & 1 else Role.RECEIVER


def replica_group(rank: int, step: int) -> frozenset[int]:
    """Ranks holding a bitwise-identical factor at the start of round `step`.

    In the butterfly variants each exchange doubles the copy count, so the
    group is the aligned block of 2^step ranks containing `rank`.
    """
    if rank < 0 or step < 0:
        raise ValueError(f"rank and step must be nonnegative, got ({rank}, {step})")
    base = (rank >> step) << step
    return frozenset(range(base, base + (1 << step)))


def find_replica(dead: int, step: int, alive: Iterable[int]) -> int | None:
    """Smallest live member of the dead rank's replica group, or None.

    None means no copy of that submatrix survives and the caller must
    give up on it.
    """
    live = set(replica_group(dead, step)) & set(alive)
    live.discard(dead)
    return min(live) if live else None


def _effective_step(event: FailureEvent) -> int:
    # A death before a round's exchange happens while 2^step copies
    # exist; one after it happens at the next replication level.
    return event.step + (1 if event.phase is Phase.AFTER_EXCHANGE else 0)


def budget_check(
    schedule: Iterable[FailureEvent], procs: int, algorithm: AlgorithmKind
) -> bool:
    """Sufficient (not necessary) robustness bound for a schedule.

    Each failure is charged at the replication level in force when it
    fires: 2^k copies of every intermediate factor exist at level k, so
    up to 2^k - 1 losses keep every factor recoverable. The redundant and
    replace variants never regain copies, hence the cumulative count up
    to each level must stay within that level's allowance (in particular
    no failure may precede the first exchange). The self-healing variant
    respawns what it loses, so only the per-level count matters.
    """
    events = list(schedule)
    if algorithm is AlgorithmKind.BASELINE:
        return not events
    effs = sorted(_effective_step(ev) for ev in events)
    if algorithm is AlgorithmKind.SELFHEAL:
        counts: dict[int, int] = {}
        for k in effs:
            counts[k] = counts.get(k, 0) + 1
        return all(c <= (1 << k) - 1 for k, c in counts.items())
    for i, k in enumerate(effs):
        if i + 1 > (1 << k) - 1:
            return False
    return True


def data_available(world: World, step: int) -> bool:
    """True iff every level-`step` block group retains a live holder."""
    if not 0 <= step <= world.rounds:
        raise ValueError(f"step {step} out of range, valid steps are [0, {world.rounds}]")
    groups = {r >> step for r in world.alive_set()}
    return len(groups) == world.procs >> step


def _validate_config(config: RunConfig) -> None:
    if not isinstance(config.algorithm, AlgorithmKind):
        raise ValueError(f"unknown algorithm {config.algorithm!r}")
    p = config.procs
    if p < 1 or p & (p - 1):
        raise UnsupportedTopologyError(f"process count must be a power of two, got {p}")
    if config.cols < 1:
        raise ValueError(f"column count must be positive, got {config.cols}")
    if config.rows % p:
        raise ValueError(f"row count {config.rows} not divisible by {p} processes")
    if config.rows // p < config.cols:
        raise ValueError(
            f"blocks of {config.rows // p} rows are not tall enough for {config.cols} columns"
        )
    if not config.tol > 0.0:
        raise ValueError(f"tolerance must be positive, got {config.tol}")


def run(
    config: RunConfig,
    *,
    matrix: Matrix | None = None,
    round_observer: RoundObserver | None = None,
) -> RunReport:
    """Execute one simulated factorization and report on it.

    The input matrix is generated from (seed, rows, cols) only, never from
    the process count, so one problem instance can be factored under every
    topology and variant. An explicit `matrix` overrides generation.
    `round_observer(step, payloads)` is called with the live ranks' held
    factors at the start of every round and once at termination.

    Every rank that finishes must hold the same bits and that factor must
    pass the gram residual check against the full input; a violation
    raises DefectError rather than returning a wrong result.
    """
    _validate_config(config)
    if matrix is None:
        a = mat_random(config.rows, config.cols, config.seed)
    else:
        if matrix.rows != config.rows or matrix.cols != config.cols:
            raise ValueError(
                f"matrix is {matrix.rows}x{matrix.cols}, config says "
                f"{config.rows}x{config.cols}"
            )
        a = matrix

    world = World(config.procs, config.schedule)
    block = config.rows // config.procs
    states: list[ProcState] = []
    for r in range(config.procs):
        fac = householder_qr_r(Matrix(a.array[r * block : (r + 1) * block, :]))
        states.append(ProcState(rank=r, step=0, factor=fac, status=ProcStatus.ALIVE))
        world.deposit_state(r, fac.mat, 0)

    exchange_phase = {
        AlgorithmKind.BASELINE: _exchange_baseline,
        AlgorithmKind.REDUNDANT: _exchange_redundant,
        AlgorithmKind.REPLACE: _exchange_replace,
        AlgorithmKind.SELFHEAL: _exchange_selfheal,
    }[config.algorithm]

    data_loss = False
    for s in range(world.rounds):
        _apply_deaths(states, world.inject_failures(s, Phase.BEFORE_EXCHANGE))
        if not data_available(world, s):
            data_loss = True
        if round_observer is not None:
            round_observer(s, _snapshot(world, states, s))
        received, lost = exchange_phase(world, s, states)
        data_loss = data_loss or lost
        _apply_deaths(states, world.inject_failures(s, Phase.AFTER_EXCHANGE))
        for r in sorted(received):
            st = states[r]
            if world.status(r) not in ALIVE_STATUSES:
                continue
            st.factor = householder_qr_r(_stack_canonical(st.factor, received[r], r, s))
            st.step = s + 1
            world.deposit_state(r, st.factor.mat, s + 1)

    if not data_available(world, world.rounds):
        data_loss = True
    if round_observer is not None:
        round_observer(world.rounds, _snapshot(world, states, world.rounds))

    return _build_report(config, world, states, a, data_loss)


# -- engine internals ---------------------------------------------------


def _apply_deaths(states: list[ProcState], newly_failed: set[int]) -> None:
    for r in newly_failed:
        states[r].status = ProcStatus.FAILED


def _snapshot(world: World, states: list[ProcState], step: int) -> dict[int, Matrix]:
    payloads: dict[int, Matrix] = {}
    for r in world.alive_set():
        st = states[r]
        if st.step != step or st.factor is None:
            raise DefectError(f"rank {r} is live at step {step} but sits at step {st.step}")
        payloads[r] = st.factor.mat
    return payloads


def _stack_canonical(
    own: TriangularFactor, received: Matrix, rank: int, step: int
) -> Matrix:
    # Both exchange partners stack the lower block-group's factor on top,
    # so processes merging the same pair of factors produce identical
    # bits. Bit `step` of the rank tells which side this process is on.
    other = TriangularFactor(received)
    if (rank >> step) & 1:
        return stack(other, own)
    return stack(own, other)


def _mark_returned(world: World, states: list[ProcState], rank: int) -> None:
    world.mark_returned(rank)
    states[rank].status = ProcStatus.RETURNED


def _exchange_baseline(
    world: World, step: int, states: list[ProcState]
) -> tuple[dict[int, Matrix], bool]:
    requests = []
    for r in world.alive_set():
        role = baseline_role(r, step)
        if role is Role.SENDER:
            requests.append((r, buddy(r, step), states[r].factor.mat))
        elif role is Role.RECEIVER:
            requests.append((r, buddy(r, step), None))
    outcomes = world.exchange(step, requests)
    received: dict[int, Matrix] = {}
    for r in sorted(outcomes):
        if isinstance(outcomes[r], Delivered):
            if baseline_role(r, step) is Role.SENDER:
                _mark_returned(world, states, r)  # done after handing the factor up
            else:
                received[r] = outcomes[r].payload
        else:
            _mark_returned(world, states, r)  # no fault tolerance in the plain tree
    return received, False


def _butterfly_wave(
    world: World, step: int, states: list[ProcState]
) -> tuple[dict[int, Matrix], list[int]]:
    alive = world.alive_set()
    requests = [(r, buddy(r, step), states[r].factor.mat) for r in alive]
    outcomes = world.exchange(step, requests)
    received: dict[int, Matrix] = {}
    pending: list[int] = []
    for r in alive:
        if isinstance(outcomes[r], Delivered):
            received[r] = outcomes[r].payload
        else:
            pending.append(r)
    return received, pending


def _exchange_redundant(
    world: World, step: int, states: list[ProcState]
) -> tuple[dict[int, Matrix], bool]:
    received, pending = _butterfly_wave(world, step, states)
    for r in pending:
        _mark_returned(world, states, r)
    return received, False


def _repair_with_replica(
    world: World,
    step: int,
    states: list[ProcState],
    received: dict[int, Matrix],
    requester: int,
) -> bool:
    """Re-pair `requester` with a live replica of its gone partner.

    Returns True when no replica is left (data loss) and the requester
    exits. A replica that had not completed its own exchange this round
    is fulfilled by the re-pairing, since the requester holds exactly the
    factor the replica was waiting for.
    """
    target = buddy(requester, step)
    while True:
        q = find_replica(target, step, world.alive_set())
        if q is None:
            _mark_returned(world, states, requester)
            return True
        outcomes = world.exchange(
            step,
            [
                (requester, q, states[requester].factor.mat),
                (q, requester, states[q].factor.mat),
            ],
        )
        if isinstance(outcomes[requester], Delivered):
            received[requester] = outcomes[requester].payload
            if q not in received:
                received[q] = outcomes[q].payload
            return False
        target = q


def _exchange_replace(
    world: World, step: int, states: list[ProcState]
) -> tuple[dict[int, Matrix], bool]:
    received, pending = _butterfly_wave(world, step, states)
    lost = False
    for r in pending:
        if r in received:
            continue  # already fulfilled while servicing an earlier re-pairing
        lost = _repair_with_replica(world, step, states, received, r) or lost
    return received, lost


def _exchange_selfheal(
    world: World, step: int, states: list[ProcState]
) -> tuple[dict[int, Matrix], bool]:
    received, pending = _butterfly_wave(world, step, states)
    lost = False
    for r in pending:
        b = buddy(r, step)
        status = world.status(b)
        # Each dead rank has exactly one partner per round, so at most
        # one replacement is ever spawned for it here.
        if status is ProcStatus.FAILED:
            twin = find_replica(b, step, world.alive_set())
            if twin is None:
                _mark_returned(world, states, r)
                lost = True
                continue
            world.spawn_replacement(b)
            payload, twin_step = world.recover_from_twin(b, twin)
            if twin_step != step:
                raise DefectError(f"twin of rank {b} sits at step {twin_step}, expected {step}")
            states[b] = ProcState(
                rank=b, step=twin_step, factor=TriangularFactor(payload),
                status=ProcStatus.RESPAWNED,
            )
            outcomes = world.exchange(
                step,
                [(r, b, states[r].factor.mat), (b, r, states[b].factor.mat)],
            )
            if r not in received:
                received[r] = outcomes[r].payload
            received[b] = outcomes[b].payload
        elif status is ProcStatus.RETURNED:
            # Nothing to respawn for a voluntary exit; borrow a replica.
            if r not in received:
                lost = _repair_with_replica(world, step, states, received, r) or lost
        else:
            raise DefectError(f"rank {b} was unreachable yet is {status.value}")
    return received, lost


def _build_report(
    config: RunConfig,
    world: World,
    states: list[ProcState],
    a: Matrix,
    data_loss: bool,
) -> RunReport:
    holders = tuple(
        r
        for r in range(config.procs)
        if world.status(r) in ALIVE_STATUSES and states[r].step == world.rounds
    )
    residual: float | None = None
    final: TriangularFactor | None = None
    if holders:
        final = states[holders[0]].factor
        ref_bits = final.mat.tobytes()
        for h in holders[1:]:
            if states[h].factor.mat.tobytes() != ref_bits:
                raise DefectError(f"ranks {holders[0]} and {h} finished with different factors")
        residual = rel_residual(a, final)
        if residual > config.tol:
            raise DefectError(
                f"final factor residual {residual:.3e} exceeds tolerance {config.tol:.3e}"
            )
    for h in holders:
        states[h].holds_final = True
    ranks = tuple(
        RankOutcome(
            rank=r,
            status=world.status(r),
            step=states[r].step,
            holds_final=states[r].holds_final,
            residual=residual if states[r].holds_final else None,
        )
        for r in range(config.procs)
    )
    return RunReport(
        algorithm=config.algorithm,
        procs=config.procs,
        rounds=world.rounds,
        ranks=ranks,
        holders=holders,
        budget_ok=budget_check(config.schedule, config.procs, config.algorithm),
        data_loss=data_loss,
        respawns=world.spawn_count,
        final_factor=final,
    )
