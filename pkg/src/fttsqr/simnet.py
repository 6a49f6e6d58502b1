"""Deterministic round-based simulated message-passing runtime.

Processes advance through exchange rounds whose boundaries are the only
points where fail-stop failures fire. Failure detection is local: an
exchange between two live processes always succeeds, while one addressed
to a failed (or voluntarily exited) process reports PeerFailed to the
requester only. Dead ranks can be re-occupied by freshly spawned
replacements that pull state from a live twin.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .densela import Matrix
from .errors import (
    InvalidScheduleError,
    PeerFailedError,
    ProtocolViolationError,
    UnsupportedTopologyError,
)

__all__ = [
    "Phase",
    "ProcStatus",
    "ALIVE_STATUSES",
    "FailureEvent",
    "Delivered",
    "PeerFailed",
    "PEER_FAILED",
    "ExchangeOutcome",
    "ExchangeRequest",
    "World",
]


class Phase(Enum):
    """Position of an event relative to a round's exchange."""

    BEFORE_EXCHANGE = "before"
    AFTER_EXCHANGE = "after"


class ProcStatus(Enum):
    ALIVE = "alive"
    FAILED = "failed"
    RETURNED = "returned"
    RESPAWNED = "respawned"


# Respawned processes are live for every communication purpose.
ALIVE_STATUSES = (ProcStatus.ALIVE, ProcStatus.RESPAWNED)


@dataclass(frozen=True)
class FailureEvent:
    """Fail-stop event: `rank` dies at the given round boundary."""

    rank: int
    step: int
    phase: Phase = Phase.AFTER_EXCHANGE


@dataclass(frozen=True)
class Delivered:
    """The peer's payload arrived (None for a bare-receive reciprocal)."""

    payload: Matrix | None


@dataclass(frozen=True)
class PeerFailed:
    """The addressed rank was failed or had exited at match time."""


PEER_FAILED = PeerFailed()

ExchangeOutcome = Delivered | PeerFailed

# (from_rank, to_rank, payload); payload None models a bare receive.
ExchangeRequest = tuple[int, int, Matrix | None]


@dataclass
class _Proc:
    status: ProcStatus = ProcStatus.ALIVE
    recovering: bool = False
    payload: Matrix | None = None
    step: int | None = None


class World:
    """One simulated run: P ranks, a failure schedule, a phase cursor.

    The engine must drive inject_failures exactly once per (step, phase)
    in increasing order; exchanges are only legal between the two
    injections of their round. A World is an exclusive-access value.
    """

    def __init__(self, procs: int, schedule: Sequence[FailureEvent] = ()) -> None:
        if procs < 1 or procs & (procs - 1):
            raise UnsupportedTopologyError(f"process count must be a power of two, got {procs}")
        self.procs = procs
        self.rounds = procs.bit_length() - 1
        self.spawn_count = 0
        self._procs = [_Proc() for _ in range(procs)]
        self._events: dict[tuple[int, Phase], list[int]] = {}
        seen: set[tuple[int, int, Phase]] = set()
        for ev in schedule:
            if not 0 <= ev.rank < procs:
                raise InvalidScheduleError(f"rank {ev.rank} out of range for {procs} processes")
            if not 0 <= ev.step < self.rounds:
                raise InvalidScheduleError(
                    f"step {ev.step} out of range, valid steps are [0, {self.rounds})"
                )
            key = (ev.rank, ev.step, ev.phase)
            if key in seen:
                raise InvalidScheduleError(f"duplicate failure event {ev}")
            seen.add(key)
            self._events.setdefault((ev.step, ev.phase), []).append(ev.rank)
        # Next expected injection, counted in half-rounds.
        self._cursor = 0
        self._open_step: int | None = None

    # -- status queries -------------------------------------------------

    def status(self, rank: int) -> ProcStatus:
        return self._procs[self._check_rank(rank)].status

    def is_recovering(self, rank: int) -> bool:
        return self._procs[self._check_rank(rank)].recovering

    def statuses(self) -> dict[int, ProcStatus]:
        return {r: p.status for r, p in enumerate(self._procs)}

    def alive_set(self) -> tuple[int, ...]:
        """Ranks currently able to communicate, ascending."""
        return tuple(r for r, p in enumerate(self._procs) if p.status in ALIVE_STATUSES)

    def held_state(self, rank: int) -> tuple[Matrix, int] | None:
        p = self._procs[self._check_rank(rank)]
        if p.payload is None or p.step is None:
            return None
        return p.payload, p.step

    # -- lifecycle ------------------------------------------------------

    def inject_failures(self, step: int, phase: Phase) -> set[int]:
        """Fire the scheduled fail-stop events for this round boundary."""
        expected = 2 * step + (1 if phase is Phase.AFTER_EXCHANGE else 0)
        if not 0 <= step < self.rounds or expected != self._cursor:
            raise ProtocolViolationError(
                f"injection for step {step} phase {phase.value} out of order"
            )
        self._cursor += 1
        self._open_step = step if phase is Phase.BEFORE_EXCHANGE else None
        newly: set[int] = set()
        for rank in self._events.get((step, phase), ()):
            p = self._procs[rank]
            if p.status in ALIVE_STATUSES:
                p.status = ProcStatus.FAILED
                p.recovering = False
                p.payload = None
                p.step = None
                newly.add(rank)
        return newly

    def mark_returned(self, rank: int) -> None:
        """Voluntary exit; the rank stops answering exchanges."""
        p = self._procs[self._check_rank(rank)]
        if p.status not in ALIVE_STATUSES:
            raise ProtocolViolationError(f"rank {rank} cannot return from {p.status.value}")
        p.status = ProcStatus.RETURNED
        p.recovering = False
        p.payload = None
        p.step = None

    def deposit_state(self, rank: int, payload: Matrix, step: int) -> None:
        """Record the matrix and round counter a live rank currently holds."""
        p = self._procs[self._check_rank(rank)]
        if p.status not in ALIVE_STATUSES:
            raise ProtocolViolationError(f"rank {rank} is {p.status.value}, cannot hold state")
        p.payload = payload
        p.step = step

    def spawn_replacement(self, dead: int) -> int:
        """Occupy a failed rank with a fresh, stateless, recovering process."""
        p = self._procs[self._check_rank(dead)]
        if p.status is not ProcStatus.FAILED:
            raise ValueError(f"can only replace a failed process, rank {dead} is {p.status.value}")
        self._procs[dead] = _Proc(status=ProcStatus.RESPAWNED, recovering=True)
        self.spawn_count += 1
        return dead

    def recover_from_twin(self, newborn: int, twin: int) -> tuple[Matrix, int]:
        """Copy a live twin's held matrix and round counter into a newborn."""
        p = self._procs[self._check_rank(newborn)]
        if p.status is not ProcStatus.RESPAWNED or not p.recovering:
            raise ValueError(f"rank {newborn} is not a recovering replacement")
        t = self._procs[self._check_rank(twin)]
        if t.status not in ALIVE_STATUSES:
            raise PeerFailedError(f"twin rank {twin} is {t.status.value}")
        if t.payload is None or t.step is None:
            raise ValueError(f"twin rank {twin} holds no state")
        copy = Matrix(t.payload.array)
        p.payload = copy
        p.step = t.step
        p.recovering = False
        return copy, t.step

    # -- exchange -------------------------------------------------------

    def exchange(self, step: int, requests: Iterable[ExchangeRequest]) -> dict[int, ExchangeOutcome]:
        """Match reciprocal requests for the open round.

        Requests are evaluated in ascending requester order. A pair of
        live ranks that mutually address each other both receive
        Delivered with the peer's payload (deep copy); a request to a
        failed or returned rank yields PeerFailed for the requester only.
        """
        if self._open_step != step:
            raise ProtocolViolationError(f"no exchange open for step {step}")
        by_from: dict[int, tuple[int, Matrix | None]] = {}
        for frm, to, payload in requests:
            self._check_rank(frm)
            self._check_rank(to)
            if self._procs[frm].status not in ALIVE_STATUSES:
                raise ProtocolViolationError(f"request from non-live rank {frm}")
            if frm == to:
                raise ProtocolViolationError(f"rank {frm} cannot address itself")
            if frm in by_from:
                raise ProtocolViolationError(f"rank {frm} issued two requests in one exchange")
            by_from[frm] = (to, payload)
        outcomes: dict[int, ExchangeOutcome] = {}
        for frm in sorted(by_from):
            if frm in outcomes:
                continue
            to, payload = by_from[frm]
            if self._procs[to].status not in ALIVE_STATUSES:
                outcomes[frm] = PEER_FAILED
                continue
            recip = by_from.get(to)
            if recip is None or recip[0] != frm:
                raise ProtocolViolationError(f"live rank {to} did not reciprocate rank {frm}")
            outcomes[frm] = Delivered(_copy(recip[1]))
            outcomes[to] = Delivered(_copy(payload))
        return outcomes

    def _check_rank(self, rank: int) -> int:
        if not 0 <= rank < self.procs:
            raise ValueError(f"rank {rank} out of range for {self.procs} processes")
        return rank


def _copy(payload: Matrix | None) -> Matrix | None:
    return None if payload is None else Matrix(payload.array)
