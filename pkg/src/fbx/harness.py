"""Interception harness: argument capture and fuzz-input injection.

Arms a target function by hooking its first instruction; for post-invocation
targets the return address is read from the convention's link register at
entry and a one-shot hook is planted there, with pointer-argument locations
captured at entry (output buffers move, the fuzz happens at return).

Input layout: each fuzzed value parameter owns a 4-byte little-endian
segment at the head of the input, in parameter order; the single fuzzed
pointer parameter's buffer image is the remainder.  When a parameter
declares a fuzz window (offset, len), mutation and injection both touch
only that slice of the buffer; everything else is left exactly as found.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .loader import SymbolTable, SymbolNotFound  # noqa: F401  (re-export)
from .machine import Machine, RangeError

DEFAULT_MAX_SEED_LEN = 4096


class NotCode(Exception):
    pass


class SizeOverflow(Exception):
    pass


class TargetSpecError(ValueError):
    pass


@dataclass(frozen=True)
class ConventionProfile:
    """Positional-argument ABI: registers first, spills on the stack."""

    name: str
    arg_regs: tuple  # ordered register indices for positional args
    stack_arg_base: int  # byte offset from sp for the first spilled arg
    ret_reg: int
    ra_reg: int
    stack_direction: str = "down"

    def __post_init__(self):
        if 0 in self.arg_regs:
            raise ValueError("r0 cannot carry arguments")
        if self.ra_reg == 13:
            raise ValueError("return-address register cannot be the stack pointer")


# fb32-std mirrors the hardware ABI: r3..r10 carry the first eight
# arguments, the rest spill to [sp+0], [sp+4], ...; fb32-stack passes
# everything on the stack and exists to prove convention configurability.
BUILTIN_PROFILES = {
    "fb32-std": ConventionProfile("fb32-std", (3, 4, 5, 6, 7, 8, 9, 10), 0, 3, 14),
    "fb32-stack": ConventionProfile("fb32-stack", (), 0, 3, 14),
}


@dataclass(frozen=True)
class ParamSpec:
    index: int
    mode: str  # "value" | "pointer"
    size_rule: Optional[tuple] = None  # ("static", n) | ("from_param", i)
    window: Optional[tuple] = None  # (offset, len)
    fuzz: bool = False

    def __post_init__(self):
        if self.mode not in ("value", "pointer"):
            raise TargetSpecError(f"bad param mode {self.mode!r}")
        if self.mode == "pointer":
            if self.size_rule is None:
                raise TargetSpecError("pointer params need a size rule")
            kind, arg = self.size_rule
            if kind == "from_param" and arg == self.index:
                raise TargetSpecError("size cannot come from the pointer itself")
            if kind == "static" and self.window is not None:
                off, length = self.window
                if off + length > arg:
                    raise TargetSpecError("window exceeds the declared size")
        if self.window is not None:
            off, length = self.window
            if off < 0 or length <= 0:
                raise TargetSpecError("bad fuzz window")


@dataclass(frozen=True)
class TargetSpec:
    symbol: str
    when: str  # "pre" | "post"
    params: tuple
    convention: str = "fb32-std"

    def __post_init__(self):
        if self.when not in ("pre", "post"):
            raise TargetSpecError(f"bad interception time {self.when!r}")
        if not any(p.fuzz for p in self.params):
            raise TargetSpecError("at least one parameter must be fuzzed")
        if self.when == "post" and not any(p.mode == "pointer" for p in self.params):
            raise TargetSpecError("post-invocation targets need a pointer parameter")
        pointer_fuzzed = [p for p in self.params if p.fuzz and p.mode == "pointer"]
        if len(pointer_fuzzed) > 1:
            raise TargetSpecError("at most one pointer parameter can be fuzzed")

    def fuzzed_values(self):
        return [p for p in self.params if p.fuzz and p.mode == "value"]

    def fuzzed_pointer(self) -> Optional[ParamSpec]:
        for p in self.params:
            if p.fuzz and p.mode == "pointer":
                return p
        return None


@dataclass
class SeedRecord:
    """Arguments captured at one interception."""

    values: dict  # param index -> u32
    buffers: dict  # param index -> bytes
    allocs: dict  # param index -> resolved size at capture
    insn_count: int = 0
    snapshot_id: Optional[int] = None

    def to_input(self, target: TargetSpec) -> bytes:
        out = bytearray()
        for p in target.fuzzed_values():
            out += (self.values[p.index] & 0xFFFFFFFF).to_bytes(4, "little")
        ptr = target.fuzzed_pointer()
        if ptr is not None:
            out += self.buffers[ptr.index]
        return bytes(out)


def split_input(target: TargetSpec, data: bytes):
    """Undo to_input(): (values by param index, buffer segment)."""
    values = {}
    pos = 0
    for p in target.fuzzed_values():
        seg = data[pos:pos + 4]
        values[p.index] = int.from_bytes(seg.ljust(4, b"\0"), "little")
        pos += 4
    return values, data[pos:]


def read_arg(m: Machine, profile: ConventionProfile, index: int) -> int:
    """Positional argument per the convention: register or stack slot."""
    regs = profile.arg_regs
    if index < len(regs):
        return m.read_register(regs[index])
    sp = m.read_register(13)
    slot = sp + profile.stack_arg_base + 4 * (index - len(regs))
    return int.from_bytes(m.read_memory(slot, 4), "little")


def write_arg(m: Machine, profile: ConventionProfile, index: int, value: int) -> None:
    regs = profile.arg_regs
    if index < len(regs):
        m.write_register(regs[index], value)
        return
    sp = m.read_register(13)
    slot = sp + profile.stack_arg_base + 4 * (index - len(regs))
    m.write_memory(slot, (value & 0xFFFFFFFF).to_bytes(4, "little"))


def resolve_size(m: Machine, profile: ConventionProfile, p: ParamSpec) -> int:
    kind, arg = p.size_rule
    if kind == "static":
        return arg
    return read_arg(m, profile, arg)


def capture_args(m: Machine, target: TargetSpec, profile: ConventionProfile,
                 max_seed_len: int = DEFAULT_MAX_SEED_LEN) -> SeedRecord:
    """Read the fuzzed arguments while paused at the entry hook."""
    values = {}
    buffers = {}
    allocs = {}
    for p in target.params:
        if not p.fuzz:
            continue
        if p.mode == "value":
            values[p.index] = read_arg(m, profile, p.index)
        else:
            base = read_arg(m, profile, p.index)
            size = resolve_size(m, profile, p)
            if size > max_seed_len:
                raise SizeOverflow(f"resolved size {size} exceeds {max_seed_len}")
            buffers[p.index] = m.read_memory(base, size)
            allocs[p.index] = size
    return SeedRecord(values=values, buffers=buffers, allocs=allocs,
                      insn_count=m.insn_count)


@dataclass
class Invocation:
    """One intercepted call: ids pair pre and post events."""

    id: int
    entry_pc: int
    ra: int
    insn_count: int
    bases: dict = field(default_factory=dict)  # pointer param -> buffer base
    sizes: dict = field(default_factory=dict)  # pointer param -> resolved size


class ArmedTarget:
    """Live interception state for one target function."""

    def __init__(self, m: Machine, target: TargetSpec, table: SymbolTable,
                 profile: ConventionProfile,
                 on_entry: Optional[Callable] = None,
                 on_return: Optional[Callable] = None,
                 return_hooks: Optional[bool] = None):
        self.machine = m
        self.target = target
        self.profile = profile
        self.on_entry = on_entry
        self.on_return = on_return
        self.entry_addr = table.resolve(target.symbol)
        if table.kind(target.symbol) != "T":
            raise NotCode(f"{target.symbol!r} is not a code symbol")
        self.want_return = target.when == "post" if return_hooks is None else return_hooks
        self._pending: list[Invocation] = []
        self._return_armed: set[int] = set()
        self._next_invocation = 0
        self._entry_hook = m.register_hook(self.entry_addr, "block-entry-always",
                                           self._entry_cb)

    def disarm(self) -> None:
        self.machine.clear_hook(self._entry_hook)

    def _entry_cb(self, m: Machine) -> None:
        inv = Invocation(id=self._next_invocation, entry_pc=self.entry_addr,
                         ra=m.read_register(self.profile.ra_reg),
                         insn_count=m.insn_count)
        self._next_invocation += 1
        for p in self.target.params:
            if p.mode == "pointer" and p.fuzz:
                inv.bases[p.index] = read_arg(m, self.profile, p.index)
                inv.sizes[p.index] = resolve_size(m, self.profile, p)
        if self.want_return:
            self._pending.append(inv)
            if inv.ra not in self._return_armed:
                self._return_armed.add(inv.ra)
                m.register_hook(inv.ra, "block-entry-once", self._return_cb)
        if self.on_entry is not None:
            self.on_entry(m, inv)

    def _return_cb(self, m: Machine) -> None:
        pc = m.pc
        self._return_armed.discard(pc)
        # innermost pending invocation returns first
        for i in range(len(self._pending) - 1, -1, -1):
            if self._pending[i].ra == pc:
                inv = self._pending.pop(i)
                break
        else:
            return
        # deeper frames still pending on the same address need a fresh hook
        for other in self._pending:
            if other.ra == pc and pc not in self._return_armed:
                self._return_armed.add(pc)
                m.register_hook(pc, "block-entry-once", self._return_cb)
                break
        if self.on_return is not None:
            self.on_return(m, inv)

    # ------------------------------------------------------------------

    def capture(self, max_seed_len: int = DEFAULT_MAX_SEED_LEN) -> SeedRecord:
        return capture_args(self.machine, self.target, self.profile, max_seed_len)

    def inject(self, input_data: bytes, inv: Invocation) -> None:
        """Rewrite registers, stack slots, and pointed memory with the input.

        Pointer buffers grow or shrink with the input, clamped to the size
        resolved at capture time; when the size comes from another
        parameter, that length register is rewritten to match.  Windowed
        parameters only ever see their declared slice.
        """
        m = self.machine
        profile = self.profile
        values, buf = split_input(self.target, input_data)
        for p in self.target.params:
            if not p.fuzz:
                continue
            if p.mode == "value":
                write_arg(m, profile, p.index, values[p.index])
                continue
            base = inv.bases[p.index]
            alloc = inv.sizes[p.index]
            if p.window is not None:
                off, length = p.window
                if off + length > alloc:
                    raise RangeError(
                        f"fuzz window [+{off + length}) exceeds the "
                        f"{alloc}-byte buffer at 0x{base:08X}")
                data = buf[off:off + length]
                if data:
                    m.write_memory(base + off, data)
            else:
                n = min(len(buf), alloc)
                m.write_memory(base, buf[:n])
                kind, src = p.size_rule
                if kind == "from_param" and n != alloc:
                    write_arg(m, profile, src, n)


class CrashSymbolWatch:
    """Hooks error-handling functions; a fire marks the window as a crash."""

    def __init__(self, m: Machine, names: list, table: SymbolTable,
                 on_fire: Optional[Callable] = None):
        self.machine = m
        self.on_fire = on_fire
        self.hooks = []
        for name in names:
            addr = table.resolve(name)
            if table.kind(name) != "T":
                raise NotCode(f"crash symbol {name!r} is not code")
            hook = m.register_hook(addr, "block-entry-always",
                                   self._make_cb(name))
            self.hooks.append(hook)

    def _make_cb(self, name):
        def cb(m):
            if self.on_fire is not None:
                self.on_fire(name, m)
        return cb

    def disarm(self) -> None:
        for hook in self.hooks:
            self.machine.clear_hook(hook)
