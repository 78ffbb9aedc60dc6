"""Deterministic input generation: AFL-style stages, havoc, scheduling.

Everything is a pure function of (corpus, rng_seed, config).  Deterministic
stages walk bit flips, byte flips, arithmetic and interesting-value
substitutions over the mutable region; havoc stacks random operators drawn
from a splitmix64 stream.  Each havoc batch derives its stream seed from
(rng_seed, entry id, batch index), so any emitted input can be regenerated
from its lineage without replaying the campaign.

When a fuzz window (offset, len) is configured, all mutations are confined
to it and the length-changing havoc operators are disabled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

from .prng import M64, Prng, splitmix64_next

HAVOC_BATCH = 256
ARITH_MAX = 35

INTERESTING_8 = [-128, -1, 0, 1, 16, 32, 64, 100, 127]
INTERESTING_16 = INTERESTING_8 + [-32768, -129, 128, 255, 256, 512, 1000,
                                  1024, 4096, 32767]
INTERESTING_32 = INTERESTING_16 + [-2147483648, -100663046, -32769, 32768,
                                   65535, 65536, 100663045, 2147483647]


class EmptyCorpus(Exception):
    pass


@dataclass(frozen=True)
class FuzzInput:
    data: bytes
    parent: int
    stage: str
    step: int

    @property
    def lineage(self) -> tuple:
        return (self.parent, self.stage, self.step)


@dataclass
class QueueEntry:
    id: int
    data: bytes
    novelty: str  # "seed" | "new_edge" | "new_bucket"
    det_done: bool = False
    havoc_steps: int = 0
    snapshot_id: Optional[int] = None
    lineage: tuple = ()

    @property
    def filename(self) -> str:
        return f"id{self.id:06d}_{self.novelty}"


def _region(data_len: int, window: Optional[tuple[int, int]]) -> tuple[int, int]:
    if window is None:
        return 0, data_len
    off, length = window
    lo = min(off, data_len)
    hi = min(off + length, data_len)
    return lo, hi


def deterministic_stages(data: bytes, parent: int,
                         window: Optional[tuple[int, int]] = None
                         ) -> Iterator[FuzzInput]:
    """Fixed-order walking mutations over the mutable region.

    Stage order: bitflip 1/2/4 (MSB-first within each byte), byteflip
    1/2/4, arith 8/16/32 (+d then -d, d in [1, 35], little-endian words),
    interesting-value substitution 8/16/32 (little-endian).  Every yield
    is the seed with exactly one mutation applied.
    """
    lo, hi = _region(len(data), window)
    buf = bytearray(data)
    n = hi - lo

    def out(stage, step):
        return FuzzInput(bytes(buf), parent, stage, step)

    for width in (1, 2, 4):
        stage = f"bitflip{width}"
        step = 0
        for bit in range(lo * 8, hi * 8 - (width - 1)):
            for b in range(bit, bit + width):
                buf[b >> 3] ^= 0x80 >> (b & 7)
            yield out(stage, step)
            for b in range(bit, bit + width):
                buf[b >> 3] ^= 0x80 >> (b & 7)
            step += 1

    for width in (1, 2, 4):
        stage = f"byteflip{width}"
        step = 0
        for i in range(lo, hi - (width - 1)):
            for b in range(i, i + width):
                buf[b] ^= 0xFF
            yield out(stage, step)
            for b in range(i, i + width):
                buf[b] ^= 0xFF
            step += 1

    for width, mask in ((1, 0xFF), (2, 0xFFFF), (4, 0xFFFFFFFF)):
        stage = f"arith{width * 8}"
        step = 0
        for i in range(lo, hi - (width - 1)):
            orig = int.from_bytes(buf[i:i + width], "little")
            for d in range(1, ARITH_MAX + 1):
                for v in ((orig + d) & mask, (orig - d) & mask):
                    buf[i:i + width] = v.to_bytes(width, "little")
                    yield out(stage, step)
                    step += 1
            buf[i:i + width] = orig.to_bytes(width, "little")

    for width, mask, values in ((1, 0xFF, INTERESTING_8),
                                (2, 0xFFFF, INTERESTING_16),
                                (4, 0xFFFFFFFF, INTERESTING_32)):
        stage = f"int{width * 8}"
        step = 0
        for i in range(lo, hi - (width - 1)):
            orig = buf[i:i + width]
            for val in values:
                buf[i:i + width] = (val & mask).to_bytes(width, "little")
                yield out(stage, step)
                step += 1
            buf[i:i + width] = orig
    del n


def havoc(data: bytes, prng: Prng, rounds: int, parent: int = 0,
          window: Optional[tuple[int, int]] = None,
          max_len: int = 4096, step_base: int = 0) -> Iterator[FuzzInput]:
    """Stacked random mutations; one output per round.

    Per round, 2**(1 + next()%7) operators are applied in sequence to a
    fresh copy of the seed.  Operator list (window-constrained campaigns
    drop the three length-changing ones):

      0 flip one random bit          4 set random byte to random value
      1 random byte := interesting8  5 overwrite a random block
      2 random aligned word :=       6 delete a random block
        interesting16/32             7 duplicate-insert a random block
      3 add/sub (1..35) at a random byte/word
    """
    n_ops = 6 if window is not None else 8
    for rnd in range(rounds):
        buf = bytearray(data)
        stacked = 1 << (1 + prng.below(7))
        for _ in range(stacked):
            lo, hi = _region(len(buf), window)
            span = hi - lo
            op = prng.below(n_ops)
            if span <= 0 and op != 7:
                continue
            if op == 0:
                bit = prng.below(span * 8)
                buf[lo + (bit >> 3)] ^= 0x80 >> (bit & 7)
            elif op == 1:
                pos = lo + prng.below(span)
                buf[pos] = INTERESTING_8[prng.below(len(INTERESTING_8))] & 0xFF
            elif op == 2:
                width = 2 if prng.below(2) == 0 else 4
                slots = span // width
                if slots == 0:
                    continue
                pos = lo + prng.below(slots) * width
                vals = INTERESTING_16 if width == 2 else INTERESTING_32
                v = vals[prng.below(len(vals))] & ((1 << (width * 8)) - 1)
                buf[pos:pos + width] = v.to_bytes(width, "little")
            elif op == 3:
                width = (1, 2, 4)[prng.below(3)]
                if span < width:
                    continue
                pos = lo + prng.below(span - width + 1)
                d = 1 + prng.below(ARITH_MAX)
                v = int.from_bytes(buf[pos:pos + width], "little")
                v = (v - d) if prng.below(2) else (v + d)
                mask = (1 << (width * 8)) - 1
                buf[pos:pos + width] = (v & mask).to_bytes(width, "little")
            elif op == 4:
                pos = lo + prng.below(span)
                buf[pos] = prng.below(256)
            elif op == 5:
                blk = 1 + prng.below(max(1, span // 2))
                if blk > span:
                    continue
                src = lo + prng.below(span - blk + 1)
                dst = lo + prng.below(span - blk + 1)
                buf[dst:dst + blk] = buf[src:src + blk]
            elif op == 6:
                if len(buf) <= 1:
                    continue
                blk = 1 + prng.below(max(1, len(buf) // 2))
                blk = min(blk, len(buf) - 1)
                pos = prng.below(len(buf) - blk + 1)
                del buf[pos:pos + blk]
            else:  # op == 7
                if not buf or len(buf) >= max_len:
                    continue
                blk = 1 + prng.below(max(1, len(buf) // 2))
                blk = min(blk, max_len - len(buf), len(buf))
                src = prng.below(len(buf) - blk + 1)
                chunk = bytes(buf[src:src + blk])
                pos = prng.below(len(buf) + 1)
                buf[pos:pos] = chunk
        yield FuzzInput(bytes(buf), parent, "havoc", step_base + rnd)


def derive_stream_seed(root: int, entry_id: int, batch: int) -> int:
    """Per-batch havoc seed; fixed mixing so lineage replay is cheap."""
    s = root & M64
    for v in (entry_id + 1, batch + 1):
        s, _ = splitmix64_next(s ^ ((v * 0x9E3779B97F4A7C15) & M64))
    return s


class Scheduler:
    """Round-robin corpus walker.

    Visiting an entry exhausts its deterministic stages once (first visit),
    then emits one havoc batch, then advances.  In frozen mode (black-box
    baseline) the queue never grows past the initial seeds.
    """

    def __init__(self, rng_seed: int, max_input_len: int = 4096,
                 window: Optional[tuple[int, int]] = None,
                 frozen: bool = False, havoc_batch: int = HAVOC_BATCH):
        self.rng_seed = rng_seed
        self.max_input_len = max_input_len
        self.window = window
        self.frozen = frozen
        self.havoc_batch = havoc_batch
        self.entries: list[QueueEntry] = []
        self.cursor = 0
        self._stream: Optional[Iterator[FuzzInput]] = None

    def add_seed(self, data: bytes) -> QueueEntry:
        return self._append(data, "seed", ())

    def admit(self, data: bytes, novelty: str, lineage: tuple,
              snapshot_id: Optional[int] = None) -> Optional[QueueEntry]:
        if self.frozen:
            return None
        return self._append(data, novelty, lineage, snapshot_id)

    def _append(self, data, novelty, lineage, snapshot_id=None) -> QueueEntry:
        entry = QueueEntry(id=len(self.entries),
                           data=bytes(data[:self.max_input_len]),
                           novelty=novelty, lineage=lineage,
                           snapshot_id=snapshot_id)
        self.entries.append(entry)
        return entry

    def entry(self, entry_id: int) -> QueueEntry:
        return self.entries[entry_id]

    def next_input(self) -> FuzzInput:
        if not self.entries:
            raise EmptyCorpus("no seeds in the corpus")
        while True:
            if self._stream is not None:
                item = next(self._stream, None)
                if item is not None:
                    return item
                self._stream = None
                self.cursor = (self.cursor + 1) % len(self.entries)
            self._stream = self._visit(self.entries[self.cursor])

    def _visit(self, entry: QueueEntry) -> Iterator[FuzzInput]:
        if not entry.det_done:
            yield from deterministic_stages(entry.data, entry.id, self.window)
            entry.det_done = True
        batch = entry.havoc_steps // self.havoc_batch
        seed = derive_stream_seed(self.rng_seed, entry.id, batch)
        gen = havoc(entry.data, Prng(seed), self.havoc_batch,
                    parent=entry.id, window=self.window,
                    max_len=self.max_input_len,
                    step_base=entry.havoc_steps)
        for item in gen:
            entry.havoc_steps += 1
            yield item

    def regenerate(self, lineage: tuple) -> bytes:
        """Rebuild an input from (parent, stage, step) and the rng seed."""
        parent, stage, step = lineage
        entry = self.entries[parent]
        if stage == "seed":
            return entry.data
        if stage == "havoc":
            batch, rnd = divmod(step, self.havoc_batch)
            seed = derive_stream_seed(self.rng_seed, parent, batch)
            last = None
            for item in havoc(entry.data, Prng(seed), rnd + 1, parent=parent,
                              window=self.window, max_len=self.max_input_len,
                              step_base=batch * self.havoc_batch):
                last = item
            return last.data
        for item in deterministic_stages(entry.data, parent, self.window):
            if item.stage == stage and item.step == step:
                return item.data
        raise ValueError(f"lineage {lineage} not reachable")
