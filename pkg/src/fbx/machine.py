"""FB32 guest machine: block-translating interpreter with hooks and snapshots.

Two execution paths share one set of semantics:

* ``step()`` is a plain decode-and-execute reference interpreter.
* ``run_block()`` translates basic blocks into compiled Python functions,
  caches them, and fires block-entry callbacks and address hooks.  Hooked
  addresses force block boundaries, so a hook always fires before the
  hooked instruction executes.

Memory map: RAM at [0, ram_size); mailbox word at 0xE000_0000 (stores post
a response event, loads read 0); timer control word at 0xE000_0010 (stores
set the period and re-arm, loads read the period); the privileged window
[0xF000_0000, 0xF000_1000) faults on any access.  Everything else faults
as unmapped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .isa import Instruction, decode
from .prng import splitmix64_next

MASK32 = 0xFFFFFFFF
DEFAULT_RAM = 1 << 20

MAILBOX_ADDR = 0xE0000000
TIMER_CTL_ADDR = 0xE0000010
PRIV_LO = 0xF0000000
PRIV_HI = 0xF0001000

PAGE_SHIFT = 8
MAX_BLOCK_INSNS = 64
_NEVER = 1 << 62

REG_ZERO = 0
REG_IRQ_LINK = 12
REG_SP = 13
REG_LR = 14


class RangeError(Exception):
    """Host-side access outside guest RAM."""


class DuplicateHook(Exception):
    pass


class MachineStopped(Exception):
    """step/run_block called on a halted or faulted machine."""


@dataclass(frozen=True)
class Fault:
    """Guest stop reason: memory/illegal/misaligned faults or a HALT.

    kind is one of "memory", "illegal", "misaligned", "halt".  pc is the
    faulting (or halting) instruction address; regs is a full dump.
    """

    kind: str
    pc: int
    regs: tuple
    addr: int = 0
    privileged: bool = False
    word: int = 0
    code: int = 0

    def describe(self) -> str:
        if self.kind == "memory":
            tag = "privileged" if self.privileged else "unmapped"
            return f"memory fault at 0x{self.addr:08X} ({tag}), pc=0x{self.pc:08X}"
        if self.kind == "illegal":
            return f"illegal instruction 0x{self.word:08X} at pc=0x{self.pc:08X}"
        if self.kind == "misaligned":
            return f"misaligned access at 0x{self.addr:08X}, pc=0x{self.pc:08X}"
        return f"halt(code={self.code}) at pc=0x{self.pc:08X}"


@dataclass(frozen=True)
class DeviceEvent:
    kind: str
    value: int = 0


@dataclass(frozen=True)
class StepOutcome:
    fault: Optional[Fault] = None
    event: Optional[DeviceEvent] = None

    @property
    def ok(self) -> bool:
        return self.fault is None


class _FaultSignal(Exception):
    def __init__(self, fault: Fault):
        self.fault = fault


class TimerState:
    """Instruction-count timer with optional bounded jitter.

    With period P > 0 the next tick is scheduled P + j instructions ahead,
    j drawn from [0, P // 4] when jitter is enabled (0 otherwise).  Ticks
    are suppressed while the machine is inside the ISR.
    """

    __slots__ = ("period", "jitter_enabled", "next_fire", "prng")

    def __init__(self, period: int = 0, jitter_enabled: bool = False, seed: int = 0):
        self.period = period
        self.jitter_enabled = jitter_enabled
        self.next_fire = _NEVER
        self.prng = seed & ((1 << 64) - 1)

    def draw_interval(self) -> int:
        extra = 0
        if self.jitter_enabled and self.period >= 4:
            self.prng, z = splitmix64_next(self.prng)
            extra = z % (self.period // 4 + 1)
        return self.period + extra

    def schedule(self, now: int) -> None:
        if self.period > 0:
            self.next_fire = now + self.draw_interval()
        else:
            self.next_fire = _NEVER

    def capture(self) -> tuple:
        return (self.period, self.jitter_enabled, self.next_fire, self.prng)

    def restore(self, state: tuple) -> None:
        self.period, self.jitter_enabled, self.next_fire, self.prng = state


@dataclass
class BlockRecord:
    """One translated basic block."""

    start: int
    end: int
    insns: list  # list of (addr, word, Instruction)
    terminator: str  # branch | jump | call | ret-indirect | halt | hook-split | split
    fn: Callable = field(repr=False, default=None)
    source: str = field(repr=False, default="")

    @property
    def len_insns(self) -> int:
        return len(self.insns)


@dataclass
class Hook:
    id: int
    addr: int
    kind: str  # "block-entry-once" | "block-entry-always"
    fn: Callable


@dataclass(frozen=True)
class Snapshot:
    regs: tuple
    pc: int
    insn_count: int
    in_isr: bool
    halted: bool
    exit_code: int
    timer: tuple
    ram: bytes


class Machine:
    def __init__(self, ram_size: int = DEFAULT_RAM, isr_addr: int = 0,
                 timer_period: int = 0, timer_jitter: bool = False,
                 timer_seed: int = 0):
        if ram_size % 4 or ram_size <= 0 or ram_size > PRIV_LO:
            raise ValueError("ram_size must be a positive multiple of 4 below the device window")
        self.ram = bytearray(ram_size)
        self.ram_size = ram_size
        self.regs = [0] * 16
        self.pc = 0
        self.insn_count = 0
        self.in_isr = False
        self.halted = False
        self.exit_code = 0
        self.fault: Optional[Fault] = None
        self.isr_addr = isr_addr
        self.timer = TimerState(timer_period, timer_jitter, timer_seed)
        self.timer.schedule(0)
        self.response_count = 0
        self.block_entry_cb: Optional[Callable[[int], None]] = None

        self._last_event: Optional[DeviceEvent] = None
        self._hooks: dict[int, list[Hook]] = {}
        self._hooked_addrs: set[int] = set()
        self._hook_ids: dict[int, Hook] = {}
        self._next_hook_id = 1
        self._blocks: dict[int, BlockRecord] = {}
        self._page_blocks: dict[int, set[int]] = {}
        self._code_pages: set[int] = set()
        self._timer_cg = timer_period > 0

    # ------------------------------------------------------------------
    # register / memory introspection

    def read_register(self, idx: int) -> int:
        if not 0 <= idx <= 15:
            raise ValueError(f"register index {idx} out of range")
        return self.regs[idx]

    def write_register(self, idx: int, value: int) -> None:
        if not 0 <= idx <= 15:
            raise ValueError(f"register index {idx} out of range")
        if idx != 0:
            self.regs[idx] = value & MASK32

    def read_memory(self, addr: int, length: int) -> bytes:
        if addr < 0 or length < 0 or addr + length > self.ram_size:
            raise RangeError(f"read [0x{addr:08X}, +{length}) outside RAM")
        return bytes(self.ram[addr:addr + length])

    def write_memory(self, addr: int, data: bytes) -> None:
        if addr < 0 or addr + len(data) > self.ram_size:
            raise RangeError(f"write [0x{addr:08X}, +{len(data)}) outside RAM")
        self.ram[addr:addr + len(data)] = data
        if data:
            self._invalidate_range(addr, addr + len(data))

    # ------------------------------------------------------------------
    # hooks

    def register_hook(self, addr: int, kind: str, fn: Callable) -> int:
        if addr % 4:
            raise ValueError("hook address must be word-aligned")
        if kind not in ("block-entry-once", "block-entry-always"):
            raise ValueError(f"unknown hook kind {kind!r}")
        for h in self._hooks.get(addr, ()):
            if h.kind == kind:
                raise DuplicateHook(f"hook ({kind}) already registered at 0x{addr:08X}")
        hook = Hook(self._next_hook_id, addr, kind, fn)
        self._next_hook_id += 1
        self._hooks.setdefault(addr, []).append(hook)
        self._hook_ids[hook.id] = hook
        self._hooked_addrs.add(addr)
        # split: any cached block with this address strictly inside is stale
        self._invalidate_containing(addr)
        return hook.id

    def clear_hook(self, hook_id: int) -> None:
        hook = self._hook_ids.pop(hook_id, None)
        if hook is None:
            raise KeyError(f"no hook with id {hook_id}")
        lst = self._hooks.get(hook.addr, [])
        lst.remove(hook)
        if not lst:
            self._hooks.pop(hook.addr, None)
            self._hooked_addrs.discard(hook.addr)

    def _remove_hook_obj(self, hook: Hook) -> None:
        if hook.id in self._hook_ids:
            self.clear_hook(hook.id)

    # ------------------------------------------------------------------
    # snapshots

    def take_snapshot(self) -> Snapshot:
        return Snapshot(
            regs=tuple(self.regs),
            pc=self.pc,
            insn_count=self.insn_count,
            in_isr=self.in_isr,
            halted=self.halted,
            exit_code=self.exit_code,
            timer=self.timer.capture(),
            ram=bytes(self.ram),
        )

    def restore_snapshot(self, snap: Snapshot) -> None:
        if len(snap.ram) != self.ram_size:
            raise ValueError("snapshot RAM size mismatch")
        # drop cached blocks whose underlying bytes are about to change
        for page in list(self._code_pages):
            lo = page << PAGE_SHIFT
            hi = lo + (1 << PAGE_SHIFT)
            if self.ram[lo:hi] != snap.ram[lo:hi]:
                self._invalidate_range(lo, hi)
        self.ram[:] = snap.ram
        self.regs[:] = snap.regs
        self.pc = snap.pc
        self.insn_count = snap.insn_count
        self.in_isr = snap.in_isr
        self.halted = snap.halted
        self.exit_code = snap.exit_code
        self.timer.restore(snap.timer)
        self.fault = None
        self._last_event = None
        want_cg = self.timer.period > 0
        if want_cg != self._timer_cg:
            self._timer_cg = want_cg
            self._flush_blocks()

    # ------------------------------------------------------------------
    # faults and devices

    def _fault(self, kind: str, pc: int, **kw) -> Fault:
        return Fault(kind=kind, pc=pc, regs=tuple(self.regs), **kw)

    def _misaligned(self, addr: int) -> Fault:
        return self._fault("misaligned", self.pc, addr=addr)

    def _illegal(self, pc: int, word: int) -> Fault:
        return self._fault("illegal", pc, word=word)

    def _halt_fault(self) -> Fault:
        return self._fault("halt", self.pc, code=self.exit_code)

    def _mem_fault(self, addr: int) -> Fault:
        return self._fault("memory", self.pc, addr=addr,
                           privileged=PRIV_LO <= addr < PRIV_HI)

    def _load_slow(self, addr: int, size: int) -> int:
        """Loads outside the RAM fast path: devices or a fault."""
        if PRIV_LO <= addr < PRIV_HI:
            raise _FaultSignal(self._mem_fault(addr))
        if size == 4 and addr == MAILBOX_ADDR:
            return 0
        if size == 4 and addr == TIMER_CTL_ADDR:
            return self.timer.period & MASK32
        raise _FaultSignal(self._mem_fault(addr))

    def _store_slow(self, addr: int, value: int, size: int) -> None:
        if PRIV_LO <= addr < PRIV_HI:
            raise _FaultSignal(self._mem_fault(addr))
        if size == 4 and addr == MAILBOX_ADDR:
            self.response_count += 1
            self._last_event = DeviceEvent("response", value & MASK32)
            return
        if size == 4 and addr == TIMER_CTL_ADDR:
            self.timer.period = value & MASK32
            self.timer.schedule(self.insn_count)
            want_cg = self.timer.period > 0
            if want_cg != self._timer_cg:
                self._timer_cg = want_cg
                self._flush_blocks()
            return
        raise _FaultSignal(self._mem_fault(addr))

    def _dispatch_timer(self) -> None:
        self.regs[REG_IRQ_LINK] = self.pc
        self.in_isr = True
        self.pc = self.isr_addr
        self.timer.next_fire = self.insn_count + self.timer.draw_interval()

    def _timer_pending(self) -> bool:
        t = self.timer
        return t.period > 0 and not self.in_isr and self.insn_count >= t.next_fire

    # ------------------------------------------------------------------
    # reference interpreter

    def step(self) -> StepOutcome:
        """Execute exactly one instruction (plus any pending timer dispatch)."""
        if self.halted or self.fault is not None:
            raise MachineStopped("machine is halted or faulted")
        if self._timer_pending():
            self._dispatch_timer()
        self._last_event = None
        fault = self._step_one()
        if fault is not None and fault.kind != "halt":
            self.fault = fault
        return StepOutcome(fault=fault, event=self._last_event)

    def _fetch_check(self, pc: int) -> Optional[Fault]:
        if pc % 4:
            return self._fault("misaligned", pc, addr=pc)
        if pc + 4 > self.ram_size or pc < 0:
            return self._fault("memory", pc, addr=pc,
                               privileged=PRIV_LO <= pc < PRIV_HI)
        return None

    def _step_one(self) -> Optional[Fault]:
        pc = self.pc
        err = self._fetch_check(pc)
        if err is not None:
            return err
        word = int.from_bytes(self.ram[pc:pc + 4], "little")
        inst = decode(word)
        op = inst.op
        regs = self.regs
        if op == "ILLEGAL":
            return self._illegal(pc, word)

        nxt = pc + 4
        try:
            if op == "ADD":
                v = (regs[inst.rs1] + regs[inst.rs2]) & MASK32
            elif op == "SUB":
                v = (regs[inst.rs1] - regs[inst.rs2]) & MASK32
            elif op == "AND":
                v = regs[inst.rs1] & regs[inst.rs2]
            elif op == "OR":
                v = regs[inst.rs1] | regs[inst.rs2]
            elif op == "XOR":
                v = regs[inst.rs1] ^ regs[inst.rs2]
            elif op == "SHL":
                v = (regs[inst.rs1] << (regs[inst.rs2] & 31)) & MASK32
            elif op == "SHR":
                v = regs[inst.rs1] >> (regs[inst.rs2] & 31)
            elif op == "ADDI":
                v = (regs[inst.rs1] + inst.imm) & MASK32
            elif op == "ORI":
                v = regs[inst.rs1] | inst.imm
            elif op == "LUI":
                v = (inst.imm << 12) & MASK32
            elif op in ("LW", "LB"):
                addr = (regs[inst.rs1] + inst.imm) & MASK32
                if op == "LW":
                    if addr < self.ram_size:
                        if addr % 4:
                            return self._misaligned(addr)
                        v = int.from_bytes(self.ram[addr:addr + 4], "little")
                    else:
                        v = self._load_slow(addr, 4)
                else:
                    if addr < self.ram_size:
                        v = self.ram[addr]
                    else:
                        v = self._load_slow(addr, 1)
            elif op in ("SW", "SB"):
                addr = (regs[inst.rs1] + inst.imm) & MASK32
                val = regs[inst.rs2]
                if op == "SW":
                    if addr < self.ram_size:
                        if addr % 4:
                            return self._misaligned(addr)
                        self.ram[addr:addr + 4] = val.to_bytes(4, "little")
                        if (addr >> PAGE_SHIFT) in self._code_pages:
                            self._invalidate_range(addr, addr + 4)
                    else:
                        self._store_slow(addr, val, 4)
                else:
                    if addr < self.ram_size:
                        self.ram[addr] = val & 0xFF
                        if (addr >> PAGE_SHIFT) in self._code_pages:
                            self._invalidate_range(addr, addr + 1)
                    else:
                        self._store_slow(addr, val & 0xFF, 1)
                self.pc = nxt
                self.insn_count += 1
                return None
            elif op in ("BEQ", "BNE", "BLT", "BGE"):
                a, b = regs[inst.rs1], regs[inst.rs2]
                if op in ("BLT", "BGE"):
                    a = a - ((a & 0x80000000) << 1)
                    b = b - ((b & 0x80000000) << 1)
                taken = ((op == "BEQ" and a == b) or (op == "BNE" and a != b)
                         or (op == "BLT" and a < b) or (op == "BGE" and a >= b))
                self.pc = (pc + inst.imm * 4) & MASK32 if taken else nxt
                self.insn_count += 1
                return None
            elif op == "JAL":
                regs[REG_LR] = nxt
                self.pc = inst.imm * 4
                self.insn_count += 1
                return None
            elif op == "JMP":
                self.pc = inst.imm * 4
                self.insn_count += 1
                return None
            elif op == "JR":
                self.pc = regs[inst.rs1]
                if inst.rs1 == REG_IRQ_LINK and self.in_isr:
                    self.in_isr = False
                self.insn_count += 1
                return None
            elif op == "CALLR":
                tgt = regs[inst.rs1]
                regs[REG_LR] = nxt
                self.pc = tgt
                self.insn_count += 1
                return None
            elif op == "HALT":
                self.halted = True
                self.exit_code = regs[3]
                self.insn_count += 1
                return self._halt_fault()
            else:  # pragma: no cover
                raise AssertionError(op)
        except _FaultSignal as sig:
            return sig.fault

        if inst.rd != 0 and op not in ("SW", "SB"):
            regs[inst.rd] = v
        self.pc = nxt
        self.insn_count += 1
        return None

    # ------------------------------------------------------------------
    # block translation

    def run_block(self) -> tuple[Optional[BlockRecord], StepOutcome]:
        """Enter (translating if needed) the block at pc and execute it.

        Fires hooks registered at the block start, then the block-entry
        callback, exactly once per entry, before the first instruction.
        Returns the block record and the outcome of the execution; the
        block may exit early on timer dispatch, self-modifying stores, or
        device stores.
        """
        if self.halted or self.fault is not None:
            raise MachineStopped("machine is halted or faulted")
        if self._timer_pending():
            self._dispatch_timer()
        pc = self.pc
        blk = self._blocks.get(pc)
        if blk is None:
            err = self._fetch_check(pc)
            if err is not None:
                self.fault = err
                return None, StepOutcome(fault=err)
            blk = self._translate(pc)
        hooks = self._hooks.get(pc)
        if hooks:
            for h in list(hooks):
                if h.kind == "block-entry-once":
                    self._remove_hook_obj(h)
                h.fn(self)
        cb = self.block_entry_cb
        if cb is not None:
            cb(pc)
        self._last_event = None
        try:
            fault = blk.fn(self, self.regs, self.ram)
        except _FaultSignal as sig:
            fault = sig.fault
        if fault is not None and fault.kind != "halt":
            self.fault = fault
        return blk, StepOutcome(fault=fault, event=self._last_event)

    def run(self, max_insns: int) -> StepOutcome:
        """Convenience loop: run blocks until halt/fault or budget."""
        limit = self.insn_count + max_insns
        out = StepOutcome()
        while self.insn_count < limit and not self.halted and self.fault is None:
            _, out = self.run_block()
            if out.fault is not None:
                break
        return out

    def _translate(self, start: int) -> BlockRecord:
        insns = []
        addr = start
        term = "split"
        hooked = self._hooked_addrs
        while True:
            word = int.from_bytes(self.ram[addr:addr + 4], "little")
            inst = decode(word)
            insns.append((addr, word, inst))
            addr += 4
            op = inst.op
            if op in ("BEQ", "BNE", "BLT", "BGE"):
                term = "branch"
                break
            if op == "JMP":
                term = "jump"
                break
            if op in ("JAL", "CALLR"):
                term = "call"
                break
            if op == "JR":
                term = "ret-indirect"
                break
            if op == "HALT":
                term = "halt"
                break
            if op == "ILLEGAL":
                term = "split"
                break
            if addr in hooked:
                term = "hook-split"
                break
            if addr + 4 > self.ram_size:
                term = "split"
                break
            if len(insns) >= MAX_BLOCK_INSNS:
                term = "split"
                break
        fn, source = self._compile(start, insns, addr)
        blk = BlockRecord(start=start, end=addr, insns=insns, terminator=term,
                          fn=fn, source=source)
        self._blocks[start] = blk
        for page in range(start >> PAGE_SHIFT, ((addr - 1) >> PAGE_SHIFT) + 1):
            self._page_blocks.setdefault(page, set()).add(start)
            self._code_pages.add(page)
        return blk

    def _compile(self, start: int, insns: list, end: int):
        """Emit one Python function for the block; semantics mirror step()."""
        w = []
        emit = w.append
        timer_cg = self._timer_cg
        n = len(insns)
        emit("def _blk(m, regs, ram):")
        emit("    ic = m.insn_count")
        if timer_cg:
            emit("    t = m.timer")
            emit(f"    nf = t.next_fire if (t.period > 0 and not m.in_isr) else {_NEVER}")
        for i, (addr, word, inst) in enumerate(insns):
            op = inst.op
            nxt = addr + 4
            if timer_cg and i > 0:
                emit(f"    if ic + {i} >= nf:")
                emit(f"        m.insn_count = ic + {i}; m.pc = {addr}")
                emit("        m._dispatch_timer(); return None")
            if op == "ADD":
                if inst.rd:
                    emit(f"    regs[{inst.rd}] = (regs[{inst.rs1}] + regs[{inst.rs2}]) & 0xFFFFFFFF")
            elif op == "SUB":
                if inst.rd:
                    emit(f"    regs[{inst.rd}] = (regs[{inst.rs1}] - regs[{inst.rs2}]) & 0xFFFFFFFF")
            elif op == "AND":
                if inst.rd:
                    emit(f"    regs[{inst.rd}] = regs[{inst.rs1}] & regs[{inst.rs2}]")
            elif op == "OR":
                if inst.rd:
                    emit(f"    regs[{inst.rd}] = regs[{inst.rs1}] | regs[{inst.rs2}]")
            elif op == "XOR":
                if inst.rd:
                    emit(f"    regs[{inst.rd}] = regs[{inst.rs1}] ^ regs[{inst.rs2}]")
            elif op == "SHL":
                if inst.rd:
                    emit(f"    regs[{inst.rd}] = (regs[{inst.rs1}] << (regs[{inst.rs2}] & 31)) & 0xFFFFFFFF")
            elif op == "SHR":
                if inst.rd:
                    emit(f"    regs[{inst.rd}] = regs[{inst.rs1}] >> (regs[{inst.rs2}] & 31)")
            elif op == "ADDI":
                if inst.rd:
                    emit(f"    regs[{inst.rd}] = (regs[{inst.rs1}] + {inst.imm}) & 0xFFFFFFFF")
            elif op == "ORI":
                if inst.rd:
                    emit(f"    regs[{inst.rd}] = regs[{inst.rs1}] | {inst.imm}")
            elif op == "LUI":
                if inst.rd:
                    emit(f"    regs[{inst.rd}] = {(inst.imm << 12) & MASK32}")
            elif op == "LW":
                emit(f"    a = (regs[{inst.rs1}] + {inst.imm}) & 0xFFFFFFFF")
                emit(f"    if a < {self.ram_size}:")
                emit("        if a & 3:")
                emit(f"            m.insn_count = ic + {i}; m.pc = {addr}")
                emit("            return m._misaligned(a)")
                emit("        v = ram[a] | (ram[a+1] << 8) | (ram[a+2] << 16) | (ram[a+3] << 24)")
                emit("    else:")
                emit(f"        m.insn_count = ic + {i}; m.pc = {addr}")
                emit("        v = m._load_slow(a, 4)")
                if inst.rd:
                    emit(f"    regs[{inst.rd}] = v")
            elif op == "LB":
                emit(f"    a = (regs[{inst.rs1}] + {inst.imm}) & 0xFFFFFFFF")
                emit(f"    if a < {self.ram_size}:")
                emit("        v = ram[a]")
                emit("    else:")
                emit(f"        m.insn_count = ic + {i}; m.pc = {addr}")
                emit("        v = m._load_slow(a, 1)")
                if inst.rd:
                    emit(f"    regs[{inst.rd}] = v")
            elif op in ("SW", "SB"):
                emit(f"    a = (regs[{inst.rs1}] + {inst.imm}) & 0xFFFFFFFF")
                emit(f"    if a < {self.ram_size}:")
                if op == "SW":
                    emit("        if a & 3:")
                    emit(f"            m.insn_count = ic + {i}; m.pc = {addr}")
                    emit("            return m._misaligned(a)")
                    emit(f"        v = regs[{inst.rs2}]")
                    emit("        ram[a] = v & 0xFF; ram[a+1] = (v >> 8) & 0xFF")
                    emit("        ram[a+2] = (v >> 16) & 0xFF; ram[a+3] = (v >> 24) & 0xFF")
                    width = 4
                else:
                    emit(f"        ram[a] = regs[{inst.rs2}] & 0xFF")
                    width = 1
                emit("        if (a >> 8) in m._code_pages:")
                emit(f"            m._invalidate_range(a, a + {width})")
                # writing over this very block: commit and re-translate
                emit(f"            if {start} <= a < {end}:")
                emit(f"                m.insn_count = ic + {i + 1}; m.pc = {nxt}")
                emit("                return None")
                emit("    else:")
                emit(f"        m.insn_count = ic + {i}; m.pc = {addr}")
                size = 4 if op == "SW" else 1
                val = f"regs[{inst.rs2}]" if op == "SW" else f"regs[{inst.rs2}] & 0xFF"
                emit(f"        m._store_slow(a, {val}, {size})")
                # device stores may re-arm the timer; leave the block
                emit(f"        m.insn_count = ic + {i + 1}; m.pc = {nxt}")
                emit("        return None")
            elif op in ("BEQ", "BNE", "BLT", "BGE"):
                taken = (addr + inst.imm * 4) & MASK32
                if op in ("BEQ", "BNE"):
                    cmp_expr = {"BEQ": "==", "BNE": "!="}[op]
                    emit(f"    if regs[{inst.rs1}] {cmp_expr} regs[{inst.rs2}]:")
                else:
                    emit(f"    x = regs[{inst.rs1}]; y = regs[{inst.rs2}]")
                    cmp_expr = {"BLT": "<", "BGE": ">="}[op]
                    emit(f"    if (x - ((x & 0x80000000) << 1)) {cmp_expr} (y - ((y & 0x80000000) << 1)):")
                emit(f"        m.pc = {taken}")
                emit("    else:")
                emit(f"        m.pc = {nxt}")
                emit(f"    m.insn_count = ic + {n}")
                emit("    return None")
            elif op == "JAL":
                emit(f"    regs[14] = {nxt}")
                emit(f"    m.pc = {(inst.imm * 4) & MASK32}")
                emit(f"    m.insn_count = ic + {n}")
                emit("    return None")
            elif op == "JMP":
                emit(f"    m.pc = {(inst.imm * 4) & MASK32}")
                emit(f"    m.insn_count = ic + {n}")
                emit("    return None")
            elif op == "JR":
                emit(f"    m.pc = regs[{inst.rs1}]")
                if inst.rs1 == REG_IRQ_LINK:
                    emit("    if m.in_isr:")
                    emit("        m.in_isr = False")
                emit(f"    m.insn_count = ic + {n}")
                emit("    return None")
            elif op == "CALLR":
                emit(f"    tgt = regs[{inst.rs1}]")
                emit(f"    regs[14] = {nxt}")
                emit("    m.pc = tgt")
                emit(f"    m.insn_count = ic + {n}")
                emit("    return None")
            elif op == "HALT":
                emit("    m.halted = True")
                emit("    m.exit_code = regs[3]")
                emit(f"    m.insn_count = ic + {n}")
                emit(f"    m.pc = {addr}")
                emit("    return m._halt_fault()")
            elif op == "ILLEGAL":
                emit(f"    m.insn_count = ic + {i}; m.pc = {addr}")
                emit(f"    return m._illegal({addr}, {word})")
            else:  # pragma: no cover
                raise AssertionError(op)
        if insns[-1][2].op not in ("BEQ", "BNE", "BLT", "BGE", "JAL", "JMP",
                                   "JR", "CALLR", "HALT", "ILLEGAL"):
            emit(f"    m.insn_count = ic + {n}")
            emit(f"    m.pc = {end}")
            emit("    return None")
        source = "\n".join(w)
        ns: dict = {}
        exec(source, ns)
        return ns["_blk"], source

    # ------------------------------------------------------------------
    # cache maintenance

    def _flush_blocks(self) -> None:
        self._blocks.clear()
        self._page_blocks.clear()
        self._code_pages.clear()

    def _drop_block(self, start: int) -> None:
        blk = self._blocks.pop(start, None)
        if blk is None:
            return
        for page in range(start >> PAGE_SHIFT, ((blk.end - 1) >> PAGE_SHIFT) + 1):
            starts = self._page_blocks.get(page)
            if starts is not None:
                starts.discard(start)
                if not starts:
                    del self._page_blocks[page]
                    self._code_pages.discard(page)

    def _invalidate_range(self, lo: int, hi: int) -> None:
        for page in range(lo >> PAGE_SHIFT, ((hi - 1) >> PAGE_SHIFT) + 1):
            starts = self._page_blocks.get(page)
            if not starts:
                continue
            for start in list(starts):
                blk = self._blocks.get(start)
                if blk is not None and start < hi and blk.end > lo:
                    self._drop_block(start)

    def _invalidate_containing(self, addr: int) -> None:
        starts = self._page_blocks.get(addr >> PAGE_SHIFT)
        if not starts:
            return
        for start in list(starts):
            blk = self._blocks.get(start)
            if blk is not None and blk.start < addr < blk.end:
                self._drop_block(start)
