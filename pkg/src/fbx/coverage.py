"""AFL-style edge/block coverage with hit-count buckets and a blacklist.

Block addresses hash into a 64K edge map via a murmur-style finalizer;
an edge index is ``prev_loc XOR cur`` with ``prev_loc = cur >> 1`` after
each block, so self-loops stay distinguishable.  Novelty is judged per
execution window against a virgin map of never-seen hit-count buckets.

Nondeterministic coverage (timer interrupts and the like) is filtered by
a pre-campaign analysis: run the unmodified seeds K times and blacklist
every edge/block that fails to show up in all K runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

MAP_SIZE = 65536

_M64 = (1 << 64) - 1


def loc_hash(block_addr: int) -> int:
    """Hash a (word-aligned) block address to a 16-bit map location."""
    h = (block_addr >> 2) & _M64
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & _M64
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & _M64
    h ^= h >> 33
    return h & 0xFFFF


def bucketize(count: int) -> int:
    """Map a hit count to its one-hot AFL bucket mask."""
    if count == 0:
        return 0
    if count == 1:
        return 0x01
    if count == 2:
        return 0x02
    if count == 3:
        return 0x04
    if count <= 7:
        return 0x08
    if count <= 15:
        return 0x10
    if count <= 31:
        return 0x20
    if count <= 127:
        return 0x40
    return 0x80


@dataclass
class ExecTrace:
    """Per-window coverage: edge hit counts, blocks, and a crash ring."""

    window_id: int = 0
    edge_counts: dict = field(default_factory=dict)
    blocks: set = field(default_factory=set)
    ring: list = field(default_factory=list)  # last RING_LEN block addresses

    RING_LEN = 64

    def push_ring(self, addr: int) -> None:
        self.ring.append(addr)
        if len(self.ring) > self.RING_LEN:
            del self.ring[0]


NEW_EDGE = "new_edge"
NEW_BUCKET = "new_bucket"
NONE = "none"


class CoverageMap:
    def __init__(self, bounds: Iterable[tuple[int, int]] = ()):
        self.edge_map = bytearray(MAP_SIZE)  # saturating 8-bit counters
        self.block_set: set[int] = set()
        self.prev_loc = 0
        self.bounds = [(lo, hi) for lo, hi in bounds]
        self.edge_blacklist: set[int] = set()
        self.block_blacklist: set[int] = set()
        # virgin map: per edge, the bucket bits never seen yet
        self.virgin = bytearray(b"\xff" * MAP_SIZE)
        self.edges_found = 0  # edges with at least one claimed bucket
        self.trace = ExecTrace()
        self._hash_cache: dict[int, int] = {}

    # ------------------------------------------------------------------

    def in_bounds(self, addr: int) -> bool:
        if not self.bounds:
            return True
        for lo, hi in self.bounds:
            if lo <= addr < hi:
                return True
        return False

    def begin_window(self, window_id: int) -> None:
        """Reset per-window state; coverage of a window is self-contained."""
        self.prev_loc = 0
        self.trace = ExecTrace(window_id=window_id)

    def observe_block(self, addr: int) -> None:
        """Record one block entry.  Out-of-bounds blocks are invisible and
        leave prev_loc untouched, so excursions do not manufacture edges."""
        if self.bounds and not self.in_bounds(addr):
            return
        cur = self._hash_cache.get(addr)
        if cur is None:
            cur = loc_hash(addr)
            self._hash_cache[addr] = cur
        idx = self.prev_loc ^ cur
        trace = self.trace
        if idx not in self.edge_blacklist:
            c = self.edge_map[idx]
            if c < 255:
                self.edge_map[idx] = c + 1
            counts = trace.edge_counts
            counts[idx] = counts.get(idx, 0) + 1
        if addr not in self.block_blacklist:
            self.block_set.add(addr)
            trace.blocks.add(addr)
        trace.push_ring(addr)
        self.prev_loc = cur >> 1

    def has_new_bits(self, trace: ExecTrace | None = None) -> str:
        """Compare the window trace against the virgin map, claim the bits
        it lights up, and return the strongest novelty class."""
        if trace is None:
            trace = self.trace
        virgin = self.virgin
        result = NONE
        for idx, count in trace.edge_counts.items():
            mask = bucketize(count)
            old = virgin[idx]
            hit = old & mask
            if hit:
                if old == 0xFF:
                    result = NEW_EDGE
                    self.edges_found += 1
                elif result == NONE:
                    result = NEW_BUCKET
                virgin[idx] = old & ~mask
        return result

    # ------------------------------------------------------------------

    def merge(self, other: "CoverageMap") -> None:
        """Offline aggregation: bitwise max of counters, union of sets."""
        for i in range(MAP_SIZE):
            if other.edge_map[i] > self.edge_map[i]:
                self.edge_map[i] = other.edge_map[i]
        self.block_set |= other.block_set

    def snapshot_text(self) -> str:
        """Deterministic text dump: set edges then blocks, ascending."""
        lines = []
        for idx in range(MAP_SIZE):
            c = self.edge_map[idx]
            if c:
                lines.append(f"edge {idx:04X} {c}")
        for addr in sorted(self.block_set):
            lines.append(f"block {addr:08X}")
        return "\n".join(lines) + ("\n" if lines else "")


def blacklist_analysis(runner: Callable[[bytes], tuple[set, set]],
                       seeds: list[bytes], runs: int = 10):
    """Pre-campaign nondeterminism filter.

    ``runner`` executes one window with an unmodified input and returns the
    (edge index set, block address set) it produced.  Each seed is run
    ``runs`` times; anything that does not reproduce in every run of its
    seed is deemed spurious.  Returns (edge_blacklist, block_blacklist).
    """
    if runs < 2:
        raise ValueError("blacklist analysis needs at least 2 runs")
    edge_bl: set[int] = set()
    block_bl: set[int] = set()
    for seed in seeds:
        edge_sets = []
        block_sets = []
        for _ in range(runs):
            edges, blocks = runner(seed)
            edge_sets.append(set(edges))
            block_sets.append(set(blocks))
        edge_bl |= set.union(*edge_sets) - set.intersection(*edge_sets)
        block_bl |= set.union(*block_sets) - set.intersection(*block_sets)
    return edge_bl, block_bl
