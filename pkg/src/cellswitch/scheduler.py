"""Per-slot arbiters that pick which queued cells cross the switch.

Two arbiters share one calling convention: ``match(out_requests)``
takes, for every output port, the bitmask of input ports holding at
least one cell for it, and returns the (input, output) pairs to serve
this slot.

``IslipScheduler`` produces a conflict-free partial matching (each
input and each output at most once) via iterative round-robin
grant/accept with the classic pointer-update rule, so it can drive a
self-routing fabric.  ``SafcScheduler`` models a switch whose outputs
pull independently: one round-robin arbiter per output, no input
contention, pointer always advancing.
"""

from __future__ import annotations

from .errors import ConfigError


def pick_round_robin(mask: int, start: int) -> int:
    """Index of the lowest set bit of ``mask`` at or above ``start``,
    wrapping to the lowest set bit overall.  The shared round-robin
    arbitration primitive: O(1) in the number of ports."""
    hi = mask >> start
    if hi:
        return start + (hi & -hi).bit_length() - 1
    return (mask & -mask).bit_length() - 1


def default_iterations(n_ports: int) -> int:
    """Grant/accept rounds: three converge quickly up to 32 ports;
    beyond that a single round keeps the per-slot work bounded."""
    return 3 if n_ports <= 32 else 1


class IslipScheduler:
    """Iterative round-robin matching with pointer desynchronization.

    Each output holds a grant pointer, each input an accept pointer.
    Per iteration every unmatched output grants to the first
    requesting unmatched input at or after its pointer, and every
    granted input accepts the first granting output at or after its
    pointer.  Pointers advance one past the partner only for accepts
    made in the first iteration, which drives persistently loaded
    pointers apart until they take turns without colliding.
    """

    def __init__(self, n_ports: int, iterations: int | None = None):
        if n_ports < 2:
            raise ConfigError("need at least two ports")
        if iterations is None:
            iterations = default_iterations(n_ports)
        if iterations < 1:
            raise ConfigError("need at least one grant/accept round")
        self.n_ports = n_ports
        self.iterations = iterations
        self.grant_ptr = [0] * n_ports
        self.accept_ptr = [0] * n_ports
        self._full = (1 << n_ports) - 1
        self._grant_buf = [0] * n_ports

    def match(self, out_requests) -> list[tuple[int, int]]:
        # The round-robin picks are inlined: this runs once per slot
        # and dominates the simulation's per-slot cost at high load.
        n = self.n_ports
        grant_ptr = self.grant_ptr
        accept_ptr = self.accept_ptr
        grant_buf = self._grant_buf
        unmatched_in = self._full
        cand_mask = 0
        for j in range(n):
            if out_requests[j]:
                cand_mask |= 1 << j
        pairs: list[tuple[int, int]] = []
        for iteration in range(self.iterations):
            granted = 0  # inputs holding at least one grant
            m = cand_mask
            while m:
                low = m & -m
                m ^= low
                j = low.bit_length() - 1
                req = out_requests[j] & unmatched_in
                if req:
                    start = grant_ptr[j]
                    hi = req >> start
                    if hi:
                        i = start + (hi & -hi).bit_length() - 1
                    else:
                        i = (req & -req).bit_length() - 1
                    grant_buf[i] |= low
                    granted |= 1 << i
            if not granted:
                break
            while granted:
                ibit = granted & -granted
                granted ^= ibit
                i = ibit.bit_length() - 1
                omask = grant_buf[i]
                grant_buf[i] = 0
                start = accept_ptr[i]
                hi = omask >> start
                if hi:
                    j = start + (hi & -hi).bit_length() - 1
                else:
                    j = (omask & -omask).bit_length() - 1
                pairs.append((i, j))
                unmatched_in &= ~ibit
                cand_mask &= ~(1 << j)
                if iteration == 0:
                    grant_ptr[j] = (i + 1) % n
                    accept_ptr[i] = (j + 1) % n
        return pairs


class SafcScheduler:
    """One independent round-robin arbiter per output.

    Every output holding requests is served every slot, several
    possibly pulling from the same input at once, so there are no
    fabric conflicts to resolve and the arbiter pointer advances one
    past the chosen input unconditionally.
    """

    def __init__(self, n_ports: int):
        if n_ports < 2:
            raise ConfigError("need at least two ports")
        self.n_ports = n_ports
        self.pointer = [0] * n_ports

    def match(self, out_requests) -> list[tuple[int, int]]:
        n = self.n_ports
        pointer = self.pointer
        pairs: list[tuple[int, int]] = []
        for j in range(n):
            req = out_requests[j]
            if req:
                start = pointer[j]
                hi = req >> start
                if hi:
                    i = start + (hi & -hi).bit_length() - 1
                else:
                    i = (req & -req).bit_length() - 1
                pairs.append((i, j))
                pointer[j] = (i + 1) % n
        return pairs
