"""Slotted simulation of a star network around one cell switch.

Endpoint i feeds switch input i over a fixed-delay uplink and gets
cells back over a matching downlink.  Inside the switch each input
owns a bank of virtual output queues, a per-slot arbiter picks which
queues to serve, and served cells cross a self-routing fabric into a
short egress pipeline ahead of the downlink.

Pause and unpause commands travel beside the data: every downlink
frame slot carries a small control word out-of-band of the 264-byte
cell budget (like the line checksum), so backpressure costs latency
but never data bandwidth.

Every slot runs the same phase sequence, port by port:

1. downlink arrival: cells reach sinks, control words update the
   endpoint's paused-channel set
2. uplink arrival: enqueue into the input's virtual output queue,
   possibly firing a pause command
3. traffic generation into the source's per-channel staging queues
4. transmission -- each endpoint sends one staged cell from an
   unpaused channel, and the switch sends one ready egress cell per
   downlink
then, once per slot:
5. arbitration and fabric traversal, possibly firing unpauses

Each endpoint works in real time: the host produces at most one cell
per slot and deposits it in generation order into a per-channel
staging queue, and the adapter side round-robins over nonempty
unpaused channels, so one paused channel never blocks traffic for the
others.  An optional per-channel staging cap makes the host block --
suspending generation -- whenever the channel it must write next is
full, modeling endpoints that throttle themselves against sustained
backpressure instead of queueing behind it.

A cell's recorded latency runs from its uplink transmission to its
sink delivery and therefore excludes time spent queued inside the
source; an uncontended cell needs exactly ``latency_floor()`` slots.

Losslessness is enforced, not assumed: queue overflows and fabric
misroutes raise immediately, and every sink checks per-flow sequence
numbers so any drop, duplicate, or reorder is detected.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .codec import FRAME_BYTES, HEADER_BYTES
from .errors import ConfigError, SimInvariantError
from .fabric import SortRouteFabric
from .scheduler import IslipScheduler, SafcScheduler
from .traffic import TrafficSpec, make_sources
from .voq import VOQBank

ISLIP = "islip"
SAFC = "safc"

# Link and pipeline depths, in slots.  The switch sits mid-rack, so
# both directions cost the same; the egress pipeline covers the output
# port's buffering and serialization stages.
UPLINK_DELAY = 7
DOWNLINK_DELAY = 7
EGRESS_DELAY = 3

# Queue depth at which a channel asks its source to pause, and the
# depth on which it unpauses.  The pause point is the deepest the
# headroom guard below admits -- worst-case in-flight cells exactly
# fill the queue -- and the release waits for a three-cell drain so
# commands are not emitted on every enqueue/dequeue flutter around
# one level.  Calibrated against the reference latency distributions
# of a saturated 32-port switch.
DEFAULT_ON_THRESHOLD = 10
DEFAULT_OFF_THRESHOLD = 7

# Per-channel staging depth at each endpoint, in cells; None leaves
# the staging unbounded.  With a finite depth the host blocks --
# suspending generation -- whenever the channel it must write next is
# full, so endpoints throttle themselves against sustained
# backpressure; unbounded staging instead lets the endpoint queue
# behind a paused channel and keep the uplink busy with other
# channels, which is the work-conserving behavior the bandwidth
# figures assume.
DEFAULT_CHANNEL_BUFFER = None

@dataclass(frozen=True)
class EngineConfig:
    """Static description of one star-network run."""

    n_ports: int
    scheduler: str = ISLIP
    seed: int = 1
    on_threshold: int = DEFAULT_ON_THRESHOLD
    off_threshold: int = DEFAULT_OFF_THRESHOLD
    channel_buffer: int | None = DEFAULT_CHANNEL_BUFFER
    islip_iterations: int | None = None
    uplink_delay: int = UPLINK_DELAY
    downlink_delay: int = DOWNLINK_DELAY
    egress_delay: int = EGRESS_DELAY
    fabric_mode: str = "checked"
    max_slots: int | None = None

    def __post_init__(self):
        if self.n_ports < 2:
            raise ConfigError("need at least two ports")
        if self.scheduler not in (ISLIP, SAFC):
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")
        if not 0 <= self.off_threshold < self.on_threshold:
            raise ConfigError("need 0 <= off threshold < on threshold")
        if self.channel_buffer is not None and self.channel_buffer < 1:
            raise ConfigError("channel staging depth must hold a cell")
        if min(self.uplink_delay, self.downlink_delay) < 1:
            raise ConfigError("link delays must be at least one slot")
        if self.egress_delay < 0:
            raise ConfigError("egress delay cannot be negative")
        # A pause fires on the enqueue that crosses the on threshold,
        # i.e. at depth on + 1, and exposure more cells may still land.
        if self.on_threshold + 1 + self.pause_exposure() > self.voq_capacity():
            raise ConfigError(
                "pause threshold leaves too little headroom: cells in "
                "flight when a pause fires could overflow the queue")

    def fc_rtt(self) -> int:
        """Pause-loop round trip: both link delays plus a slot of
        transmit quantization margin at each end.  Cells already in
        flight when a pause fires keep arriving for up to one such
        round trip, so queue headroom is sized from this figure."""
        return self.uplink_delay + self.downlink_delay + 2

    def pause_exposure(self) -> int:
        """Worst-case cells that can still reach one queue after its
        pause command fires: everything already on the uplink plus
        everything sent before the command lands at the endpoint."""
        return self.uplink_delay + self.downlink_delay - 1

    def voq_capacity(self) -> int:
        """Per-channel queue depth, sized at one and a half pause-loop
        round trips."""
        return math.ceil(1.5 * self.fc_rtt())

    def thresholds(self) -> tuple[int, int]:
        return self.on_threshold, self.off_threshold

    def latency_floor(self) -> int:
        """Slots an uncontended cell needs from uplink transmission to
        sink delivery: both links, one fabric slot, the egress stages."""
        return (self.uplink_delay + 1 + self.egress_delay
                + self.downlink_delay)


@dataclass
class MetricsReport:
    """Everything measured in one run, plus the integrity verdict."""

    config: EngineConfig
    traffic: TrafficSpec
    slots_run: int
    drained: bool
    generated_cells: int
    injected_cells: int
    delivered_cells: int
    delivered_wire_bytes: int
    first_injection: int
    last_delivery: int
    first_generation: int
    last_generation: int
    pauses: int
    unpauses: int
    peak_voq_occupancy: int
    order_violations: int
    fabric_checks: int
    latency_hist: dict[int, int] = field(repr=False)

    # -- latency -------------------------------------------------------------

    def percentile(self, p: float) -> int:
        """Nearest-rank percentile of delivered-cell latency."""
        if not self.delivered_cells:
            raise SimInvariantError("no deliveries to take a percentile of")
        rank = math.ceil(p * self.delivered_cells / 100)
        cum = 0
        for latency in sorted(self.latency_hist):
            cum += self.latency_hist[latency]
            if cum >= rank:
                return latency
        raise AssertionError("histogram does not cover its own total")

    def latency_summary(self) -> tuple[int, int, int, int, int, int, int]:
        """(min, p50, p75, p90, p95, p99, max) of cell latency."""
        lo, hi = min(self.latency_hist), max(self.latency_hist)
        return (lo, self.percentile(50), self.percentile(75),
                self.percentile(90), self.percentile(95),
                self.percentile(99), hi)

    def mean_latency(self) -> float:
        total = sum(k * c for k, c in self.latency_hist.items())
        return total / self.delivered_cells

    # -- bandwidth -----------------------------------------------------------

    @property
    def delivery_window(self) -> int:
        """Slots from first uplink transmission to last delivery."""
        return self.last_delivery - self.first_injection + 1

    @property
    def utilization_pct(self) -> float:
        """Delivered header+payload bytes as a percentage of the raw
        capacity of all downlinks over the delivery window."""
        wire = FRAME_BYTES * self.config.n_ports * self.delivery_window
        return 100.0 * self.delivered_wire_bytes / wire

    @property
    def offered_load_pct(self) -> float:
        """Measured arrival intensity: generated cells per port-slot
        over the generation window."""
        window = self.last_generation - self.first_generation + 1
        return 100.0 * self.generated_cells / (self.config.n_ports * window)

    # -- integrity -----------------------------------------------------------

    def verify(self) -> None:
        """Raise unless the run was provably lossless and in order."""
        if self.order_violations:
            raise SimInvariantError(
                f"{self.order_violations} per-flow sequence violations")
        if self.peak_voq_occupancy > self.config.voq_capacity():
            raise SimInvariantError("queue exceeded its stated capacity")
        if self.drained and not (self.generated_cells == self.injected_cells
                                 == self.delivered_cells):
            raise SimInvariantError(
                f"cell conservation broken: generated {self.generated_cells}"
                f", injected {self.injected_cells}"
                f", delivered {self.delivered_cells}")

    def to_dict(self) -> dict:
        summary = self.latency_summary() if self.delivered_cells else None
        return {
            "n_ports": self.config.n_ports,
            "scheduler": self.config.scheduler,
            "mode": self.traffic.mode,
            "size_mode": self.traffic.size_mode,
            "nominal_load_pct": 100.0 * self.traffic.load,
            "offered_load_pct": round(self.offered_load_pct, 4),
            "utilization_pct": round(self.utilization_pct, 4),
            "slots_run": self.slots_run,
            "drained": self.drained,
            "generated_cells": self.generated_cells,
            "delivered_cells": self.delivered_cells,
            "latency_min_p50_p75_p90_p95_p99_max": summary,
            "mean_latency": round(self.mean_latency(), 3),
            "pauses": self.pauses,
            "unpauses": self.unpauses,
            "peak_voq_occupancy": self.peak_voq_occupancy,
            "voq_capacity": self.config.voq_capacity(),
            "fabric_checks": self.fabric_checks,
        }


class StarNetwork:
    """One switch, ``n_ports`` endpoints, and the links between them."""

    def __init__(self, config: EngineConfig, traffic: TrafficSpec):
        self.config = config
        self.traffic = traffic
        n = config.n_ports
        self.sources = make_sources(traffic, n, config.seed)
        on, off = config.thresholds()
        capacity = config.voq_capacity()
        self.banks = [
            VOQBank([j for j in range(n) if j != i], capacity, on, off)
            for i in range(n)
        ]
        if config.scheduler == ISLIP:
            self.scheduler = IslipScheduler(n, config.islip_iterations)
            # Only a conflict-free matching can cross the physical
            # sort-and-steer fabric, so the independent-output arbiter
            # models a switch with its own buffered data path instead.
            self.fabric = SortRouteFabric(n, mode=config.fabric_mode)
        else:
            self.scheduler = SafcScheduler(n)
            self.fabric = None

    def run(self) -> MetricsReport:
        config = self.config
        n = config.n_ports
        up_delay = config.uplink_delay
        down_delay = config.downlink_delay
        ready_offset = config.egress_delay + 1
        max_slots = config.max_slots
        header_bytes = HEADER_BYTES

        # Bind the per-port callables once; the slot loop below is the
        # hot path and runs millions of times.
        sources = self.sources
        polls = [source.poll for source in sources]
        banks = self.banks
        bank_enqueue = [bank.enqueue for bank in banks]
        bank_dequeue = [bank.dequeue for bank in banks]
        bank_queues = [bank.queues for bank in banks]
        match = self.scheduler.match
        route = self.fabric.route if self.fabric is not None else None
        ports = range(n)

        src_chan = [[deque() for _ in ports] for _ in ports]
        src_mask = [0] * n                   # nonempty staging channels
        src_hold = [None] * n                # generated, staging full
        src_rr = [0] * n
        src_pause = [0] * n
        src_done = [False] * n
        active_sources = n
        staging = (math.inf if config.channel_buffer is None
                   else config.channel_buffer)

        # Links are rings: the entry written at slot t is read at slot
        # t + delay, just before being overwritten.  Control words ride
        # a parallel queue stamped with their arrival slot.
        uplink = [[None] * up_delay for _ in ports]
        downlink = [[None] * down_delay for _ in ports]
        fc_pipe = [deque() for _ in ports]
        egress = [deque() for _ in ports]
        out_requests = [0] * n
        expected_seq = [[0] * n for _ in ports]

        latency_hist: dict[int, int] = {}
        generated = injected = delivered = 0
        delivered_bytes = 0
        first_generation = first_injection = -1
        last_generation = last_delivery = -1
        pauses = unpauses = 0
        peak_occupancy = 0
        order_violations = 0

        slot = 0
        up_idx = down_idx = 0
        while True:
            for i in ports:
                # downlink arrival: control words first (they gate the
                # transmit pick below), then the data slot to the sink
                pipe = fc_pipe[i]
                while pipe and pipe[0][0] <= slot:
                    command = pipe.popleft()[1]
                    if command.pause:
                        src_pause[i] |= 1 << command.channel
                    else:
                        src_pause[i] &= ~(1 << command.channel)
                item = downlink[i][down_idx]
                if item is not None:
                    trace = item.trace
                    latency = slot - trace.injected_at
                    latency_hist[latency] = \
                        latency_hist.get(latency, 0) + 1
                    if trace.dst != i or trace.flow_seq != \
                            expected_seq[trace.src][i]:
                        order_violations += 1
                    expected_seq[trace.src][i] = trace.flow_seq + 1
                    delivered += 1
                    delivered_bytes += item.l1.valid_bytes + header_bytes
                    last_delivery = slot

                # uplink arrival: admit into this input's queue bank
                cell = uplink[i][up_idx]
                if cell is not None:
                    selector = cell.l2.dst_ports[0]
                    out_port = selector if selector < i else selector + 1
                    command = bank_enqueue[i](out_port, cell)
                    depth = len(bank_queues[i][out_port])
                    if depth == 1:
                        out_requests[out_port] |= 1 << i
                    if depth > peak_occupancy:
                        peak_occupancy = depth
                    if command is not None:
                        # departs with this slot's downlink frame
                        pipe.append((slot + down_delay, command))
                        pauses += 1

                # host step, closed-loop: retry the held cell, then
                # generate at most one new cell.  The host never runs
                # ahead of real time and blocks -- suspending
                # generation -- while staging is full, so staging holds
                # only the most recent slice of the arrival process.
                cell = src_hold[i]
                if cell is not None and \
                        len(src_chan[i][cell.trace.dst]) < staging:
                    dst = cell.trace.dst
                    src_chan[i][dst].append(cell)
                    src_mask[i] |= 1 << dst
                    src_hold[i] = cell = None
                if cell is None and not src_done[i]:
                    cell = polls[i]()
                    if cell is not None:
                        generated += 1
                        if first_generation < 0:
                            first_generation = slot
                        last_generation = slot
                        dst = cell.trace.dst
                        if len(src_chan[i][dst]) < staging:
                            src_chan[i][dst].append(cell)
                            src_mask[i] |= 1 << dst
                        else:
                            src_hold[i] = cell
                    elif sources[i].exhausted:
                        src_done[i] = True
                        active_sources -= 1

                # adapter transmit: round robin over unpaused channels
                eligible = src_mask[i] & ~src_pause[i]
                if eligible:
                    start = src_rr[i]
                    hi = eligible >> start
                    if hi:
                        dst = start + (hi & -hi).bit_length() - 1
                    else:
                        dst = (eligible & -eligible).bit_length() - 1
                    src_rr[i] = dst + 1 if dst + 1 < n else 0
                    queue = src_chan[i][dst]
                    cell = queue.popleft()
                    if not queue:
                        src_mask[i] &= ~(1 << dst)
                    cell.trace.injected_at = slot
                    injected += 1
                    if first_injection < 0:
                        first_injection = slot
                    uplink[i][up_idx] = cell
                else:
                    uplink[i][up_idx] = None

                # switch transmit: next egress cell whose pipeline
                # stages have elapsed
                ready = egress[i]
                if ready and ready[0][0] <= slot:
                    downlink[i][down_idx] = ready.popleft()[1]
                else:
                    downlink[i][down_idx] = None

            # arbitration and fabric traversal
            pairs = match(out_requests)
            if pairs:
                if route is not None:
                    dests = [None] * n
                    for i, out_port in pairs:
                        dests[i] = out_port
                    route(dests)
                ready_at = slot + ready_offset
                fc_at = slot + 1 + down_delay  # next downlink frame
                for i, out_port in pairs:
                    cell, command = bank_dequeue[i](out_port)
                    if not bank_queues[i][out_port]:
                        out_requests[out_port] &= ~(1 << i)
                    egress[out_port].append((ready_at, cell))
                    if command is not None:
                        fc_pipe[i].append((fc_at, command))
                        unpauses += 1

            slot += 1
            up_idx += 1
            if up_idx == up_delay:
                up_idx = 0
            down_idx += 1
            if down_idx == down_delay:
                down_idx = 0
            if active_sources == 0 and delivered == injected == generated:
                drained = True
                break
            if max_slots is not None and slot >= max_slots:
                drained = False
                break

        return MetricsReport(
            config=config,
            traffic=self.traffic,
            slots_run=slot,
            drained=drained,
            generated_cells=generated,
            injected_cells=injected,
            delivered_cells=delivered,
            delivered_wire_bytes=delivered_bytes,
            first_injection=first_injection,
            last_delivery=last_delivery,
            first_generation=first_generation,
            last_generation=last_generation,
            pauses=pauses,
            unpauses=unpauses,
            peak_voq_occupancy=peak_occupancy,
            order_violations=order_violations,
            fabric_checks=(0 if self.fabric is None
                           else self.fabric.structural_checks),
            latency_hist=latency_hist,
        )


def run_star(config: EngineConfig, traffic: TrafficSpec) -> MetricsReport:
    """Build the network, run it to completion, and verify integrity."""
    report = StarNetwork(config, traffic).run()
    report.verify()
    return report
