import pytest

from fbx import targets
from fbx.loader import load_image, parse_image, parse_symbols
from fbx.machine import Machine


class GuestRunner:
    """Boot a bundled target and push raw inputs through parse_msg windows."""

    def __init__(self, name, timer_period=0, timer_jitter=False, timer_seed=0,
                 idle_count=None):
        img_bytes, sym_text = targets.build(name)
        self.image = parse_image(img_bytes)
        self.table = parse_symbols(sym_text)
        self.machine = Machine(timer_period=timer_period,
                               timer_jitter=timer_jitter,
                               timer_seed=timer_seed)
        if timer_period:
            self.machine.isr_addr = self.table.resolve("__timer_isr")
        load_image(self.machine, self.image)
        if idle_count is not None:
            self.machine.write_memory(self.table.resolve("idle_count"),
                                      idle_count.to_bytes(4, "little"))
        self.entry = self.table.resolve("parse_msg")
        self.hits = 0
        self.boot = None
        self.machine.register_hook(self.entry, "block-entry-always",
                                   self._count)
        self._run_to_interception()

    def _count(self, m):
        self.hits += 1
        if self.boot is None:
            # paused at the entry hook, before the first instruction runs
            self.boot = m.take_snapshot()

    def _run_to_interception(self, budget=200000):
        m = self.machine
        goal = self.hits + 1
        limit = m.insn_count + budget
        while self.hits < goal:
            _, out = m.run_block()
            if out.fault is not None or m.insn_count > limit:
                raise RuntimeError("guest never reached the target")

    def run_input(self, data, budget=100000):
        """Inject raw bytes at a fresh interception; returns (kind, fault).

        kind is "ok" when the window reaches the next interception, else
        "fault".  Each call restores the boot snapshot first.
        """
        m = self.machine
        m.restore_snapshot(self.boot)
        buf = m.read_register(3)
        data = data[:64]
        if data:
            m.write_memory(buf, data)
        m.write_register(4, len(data))
        # pc sits at the entry hook; the window closes at the next interception
        goal = self.hits + 2
        limit = m.insn_count + budget
        while self.hits < goal:
            _, out = m.run_block()
            if out.fault is not None:
                return "fault", out.fault
            if m.insn_count > limit:
                return "timeout", None
        return "ok", None


@pytest.fixture(scope="module")
def guest_runner():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = GuestRunner(name)
        return cache[name]

    return get
