"""Full-duplex link with negative-acknowledgement retransmission.

Every slot each endpoint transmits exactly one frame (idle if it has
nothing to say) and receives the frame its peer sent ``one_way_delay``
slots earlier.  Sequenced frames (cells and flow-control commands
share one sequence space) are kept in a bounded replay buffer after
transmission.  A receiver that sees a corrupted frame cannot trust
anything about it, so it freezes its own sequenced transmissions (the
corrupted frame may have been the peer's retransmit request) and asks
the peer to replay by sending a request frame every slot.  The peer
answers with a retransmission cycle: a fixed lead-in of control
frames followed by its whole replay buffer in order, the last frame
flagged as the end of the cycle.  Duplicates are discarded by
sequence number, so delivery to the device is exactly-once in order.

Replay buffer sizing: every frame carries the sender's "requesting"
bit, and a receiver stops admitting new sequenced frames while its
latest clean arrival had that bit set (a corrupted arrival counts as
set, since it could have been anything).  A frame sent at slot t that
arrives corrupted makes its receiver request from t+D onward, so from
t+2D+1 every arrival back at the sender is flagged or corrupted and
admissions stop after at most the 2D+1 frames sent in between.  The
flag holds the freeze for the whole recovery, however long corrupted
retransmissions stretch it, so a window of 2D+2 frames provably still
contains the victim when the replay cycle finally goes out.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field, replace

from .codec import FRAME_BYTES
from .errors import ConfigError

FRAME_BITS = FRAME_BYTES * 8

IDLE_KIND = "idle"
DATA_KIND = "data"
FLOWCTL_KIND = "flowctl"
REREQ_KIND = "rereq"
CTRL_KIND = "ctrl"

_SEQUENCED = (DATA_KIND, FLOWCTL_KIND)


@dataclass(slots=True)
class Frame:
    kind: str
    seq: int | None = None
    payload: object = None
    cycle_end: bool = False


_IDLE = Frame(IDLE_KIND)


def frame_error_probability(ber: float, frame_bits: int = FRAME_BITS) -> float:
    """Chance at least one of the frame's bits flips in transit."""
    if not 0.0 <= ber < 1.0:
        raise ConfigError("bit error rate must be in [0, 1)")
    return 1.0 - (1.0 - ber) ** frame_bits


class LinkEndpoint:
    """One side of the link: framing, replay, request/retransmit."""

    def __init__(self, one_way_delay: int):
        if not 1 <= one_way_delay <= 63:
            raise ConfigError(
                "one-way delay must be 1..63 slots (sequence field width)")
        self.delay = one_way_delay
        self.window = 2 * one_way_delay + 2
        self.cycle_lead_in = 3 * one_way_delay - 2
        # transmit side
        self.next_seq = 0
        self.replay: deque[Frame] = deque(maxlen=self.window)
        self.cycle_queue: deque[Frame] = deque()
        self.pending_fc: deque[object] = deque()
        # receive side
        self.expected = 0
        self.highest_seen = -1
        self.requesting = False
        self.peer_requesting = False
        # counters
        self.emitted = {k: 0 for k in
                        (IDLE_KIND, DATA_KIND, FLOWCTL_KIND,
                         REREQ_KIND, CTRL_KIND)}
        self.replays_emitted = 0
        self.delivered = 0
        self.dups_dropped = 0
        self.cycles_started = 0
        self.corrupted_seen = 0

    # -- transmit ------------------------------------------------------------

    @property
    def retransmitting(self) -> bool:
        return bool(self.cycle_queue)

    def queue_flow_control(self, command) -> None:
        self.pending_fc.append(command)

    def emit(self, data_provider=None) -> Frame:
        """Produce this slot's outbound frame.

        Priority: finish a retransmission cycle, else keep requesting
        a replay, else send a queued flow-control command, else pull
        one payload from the device, else idle.  New sequence numbers
        are only assigned on the last two paths, so the replay buffer
        is frozen for as long as either side is recovering.
        """
        if self.cycle_queue:
            frame = self.cycle_queue.popleft()
            if frame.kind == CTRL_KIND:
                self.emitted[CTRL_KIND] += 1
            else:
                self.replays_emitted += 1
            return frame
        if self.requesting:
            self.emitted[REREQ_KIND] += 1
            return Frame(REREQ_KIND)
        if self.peer_requesting:
            # The peer is mid-recovery: hold all new sequence numbers
            # so nothing it may still need falls out of the window.
            self.emitted[IDLE_KIND] += 1
            return _IDLE
        if self.pending_fc:
            frame = Frame(FLOWCTL_KIND, seq=self.next_seq,
                          payload=self.pending_fc.popleft())
        else:
            payload = data_provider() if data_provider is not None else None
            if payload is None:
                self.emitted[IDLE_KIND] += 1
                return _IDLE
            frame = Frame(DATA_KIND, seq=self.next_seq, payload=payload)
        self.next_seq += 1
        self.replay.append(frame)
        self.emitted[frame.kind] += 1
        return frame

    def _start_cycle(self) -> None:
        queue: deque[Frame] = deque(
            Frame(CTRL_KIND) for _ in range(self.cycle_lead_in))
        queue.extend(self.replay)
        tail = queue.pop()
        queue.append(replace(tail, cycle_end=True))
        self.cycle_queue = queue
        self.cycles_started += 1

    # -- receive -------------------------------------------------------------

    def receive(self, frame: Frame, corrupted: bool,
                peer_flag: bool = False) -> list:
        """Process one arriving frame; return payloads delivered in order."""
        if corrupted:
            self.corrupted_seen += 1
            self.requesting = True
            self.peer_requesting = True
            return []
        self.peer_requesting = peer_flag
        kind = frame.kind
        delivered = []
        if kind == REREQ_KIND:
            if not self.cycle_queue:
                self._start_cycle()
        elif kind in _SEQUENCED:
            seq = frame.seq
            if seq == self.expected:
                self.expected += 1
                self.highest_seen = max(self.highest_seen, seq)
                # Anything else outstanding is behind this frame in the
                # same replay train, so the request volley can stop.
                self.requesting = False
                self.delivered += 1
                delivered.append(frame.payload)
            elif seq > self.expected:
                # Deliverable gap: keep (or start) requesting.
                self.highest_seen = max(self.highest_seen, seq)
                self.requesting = True
            else:
                self.dups_dropped += 1
        if frame.cycle_end and self.highest_seen < self.expected:
            # A full cycle went by with no sign of anything missing:
            # the corruption that started the volley hit an
            # unsequenced frame, so there is nothing to wait for.
            self.requesting = False
        return delivered


@dataclass(slots=True)
class FaultSchedule:
    """Slots at which the frame entering each direction is corrupted."""

    a_to_b: frozenset = field(default_factory=frozenset)
    b_to_a: frozenset = field(default_factory=frozenset)

    @classmethod
    def parse(cls, text: str) -> "FaultSchedule":
        """Parse "ab:3,17 ba:20" style fault lists."""
        ab: set[int] = set()
        ba: set[int] = set()
        for part in text.replace(";", " ").split():
            try:
                direction, slots = part.split(":", 1)
                target = {"ab": ab, "ba": ba}[direction.strip().lower()]
                target.update(int(s) for s in slots.split(",") if s)
            except (ValueError, KeyError):
                raise ConfigError(f"bad fault entry {part!r}") from None
        return cls(frozenset(ab), frozenset(ba))


class DuplexLink:
    """Two endpoints joined by symmetric fixed-delay pipes.

    Corruption is drawn per frame at transmit time with probability
    ``frame_error_probability(ber)``, plus any slots forced by the
    fault schedule.  ``step`` performs one slot: both sides emit from
    their pre-arrival state, then both process the frame emitted
    ``one_way_delay`` slots ago by the peer.
    """

    def __init__(self, one_way_delay: int, ber: float = 0.0,
                 seed: int = 0, faults: FaultSchedule | None = None):
        self.a = LinkEndpoint(one_way_delay)
        self.b = LinkEndpoint(one_way_delay)
        self.p_frame = frame_error_probability(ber)
        self.rng = random.Random(seed)
        self.faults = faults or FaultSchedule()
        self.slot = 0
        idle = (_IDLE, False, False)
        self._pipe_ab = deque([idle] * one_way_delay)
        self._pipe_ba = deque([idle] * one_way_delay)

    def _corrupt(self, forced) -> bool:
        if self.slot in forced:
            return True
        return self.p_frame > 0.0 and self.rng.random() < self.p_frame

    def step(self, provide_a=None, provide_b=None) -> tuple[list, list]:
        frame_ab = self.a.emit(provide_a)
        frame_ba = self.b.emit(provide_b)
        self._pipe_ab.append((frame_ab, self._corrupt(self.faults.a_to_b),
                              self.a.requesting))
        self._pipe_ba.append((frame_ba, self._corrupt(self.faults.b_to_a),
                              self.b.requesting))
        arrive_b = self._pipe_ab.popleft()
        arrive_a = self._pipe_ba.popleft()
        self.slot += 1
        to_b = self.b.receive(*arrive_b)
        to_a = self.a.receive(*arrive_a)
        return to_a, to_b


@dataclass(slots=True)
class PointToPointResult:
    slots: int
    sent_a: int
    sent_b: int
    delivered_at_b: list
    delivered_at_a: list
    kinds_a: list[str]
    kinds_b: list[str]
    cycles_a: int
    cycles_b: int

    def goodput(self, direction: str = "ab") -> float:
        n = len(self.delivered_at_b if direction == "ab"
                else self.delivered_at_a)
        return n / self.slots


def run_point_to_point(one_way_delay: int, slots: int, ber: float = 0.0,
                       load: float = 1.0, seed: int = 0,
                       faults: FaultSchedule | None = None,
                       record_kinds: bool = False) -> PointToPointResult:
    """Drive both directions with integer payload tokens for ``slots``.

    load < 1 models each endpoint's device as a Bernoulli arrival
    process into a queue, so payloads deferred by a recovery episode
    are sent later rather than lost; at 1.0 the sources are
    saturated.  Returned kind timelines (one entry per slot, replays
    marked "replay") support exact timing analysis of recoveries.
    """
    if not 0.0 <= load <= 1.0:
        raise ConfigError("load must be in [0, 1]")
    link = DuplexLink(one_way_delay, ber=ber, seed=seed, faults=faults)
    src_rng = random.Random(seed ^ 0x5CE11)
    counters = {"a": 0, "b": 0}
    backlog = {"a": 0, "b": 0}

    def provider(side):
        def pull():
            if load < 1.0:
                if backlog[side] == 0:
                    return None
                backlog[side] -= 1
            counters[side] += 1
            return counters[side] - 1
        return pull

    pull_a, pull_b = provider("a"), provider("b")
    got_a: list = []
    got_b: list = []
    kinds_a: list[str] = []
    kinds_b: list[str] = []

    def classify(endpoint):
        if endpoint.cycle_queue:
            head = endpoint.cycle_queue[0]
            return CTRL_KIND if head.kind == CTRL_KIND else "replay"
        return None

    for _ in range(slots):
        if load < 1.0:
            backlog["a"] += src_rng.random() < load
            backlog["b"] += src_rng.random() < load
        if record_kinds:
            pre_a, pre_b = classify(link.a), classify(link.b)
        to_a, to_b = link.step(pull_a, pull_b)
        got_a.extend(to_a)
        got_b.extend(to_b)
        if record_kinds:
            kinds_a.append(pre_a or link._pipe_ab[-1][0].kind)
            kinds_b.append(pre_b or link._pipe_ba[-1][0].kind)
    return PointToPointResult(
        slots=slots, sent_a=counters["a"], sent_b=counters["b"],
        delivered_at_b=got_b, delivered_at_a=got_a,
        kinds_a=kinds_a, kinds_b=kinds_b,
        cycles_a=link.a.cycles_started, cycles_b=link.b.cycles_started,
    )
