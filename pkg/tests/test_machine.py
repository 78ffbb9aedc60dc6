import hashlib
import random

import pytest

from fbx.asm import assemble
from fbx.isa import Instruction, encode
from fbx.machine import (Machine, RangeError, DuplicateHook, MachineStopped,
                         MAILBOX_ADDR, TIMER_CTL_ADDR, PRIV_LO, PRIV_HI)


def mk(words, pc=0, **kw):
    m = Machine(**kw)
    blob = b"".join(w.to_bytes(4, "little") for w in words)
    m.write_memory(pc, blob)
    m.pc = pc
    return m


def asm_words(text):
    image, base, _ = assemble(text)
    return [int.from_bytes(image[i:i + 4], "little") for i in range(0, len(image), 4)]


def run_source_step(text, max_steps=10000, **kw):
    m = mk(asm_words(text), **kw)
    out = None
    for _ in range(max_steps):
        out = m.step()
        if m.halted or out.fault is not None:
            break
    return m, out


# ---------------------------------------------------------------- ALU ops

def test_add_sub_wrap():
    m, _ = run_source_step("""
        LI r1, 0xFFFFFFFF
        ADDI r2, r0, 1
        ADD r3, r1, r2      ; wraps to 0
        SUB r4, r0, r2      ; 0 - 1 wraps to 0xFFFFFFFF
        HALT
    """)
    assert m.regs[3] == 0
    assert m.regs[4] == 0xFFFFFFFF


def test_logic_ops():
    m, _ = run_source_step("""
        LI r1, 0xF0F0F0F0
        LI r2, 0x0FF00FF0
        AND r3, r1, r2
        OR r4, r1, r2
        XOR r5, r1, r2
        HALT
    """)
    assert m.regs[3] == 0x00F000F0
    assert m.regs[4] == 0xFFF0FFF0
    assert m.regs[5] == 0xFF00FF00


def test_shifts_mask_count():
    m, _ = run_source_step("""
        ADDI r1, r0, 1
        ADDI r2, r0, 33     ; shift uses rs2 & 31 => 1
        SHL r3, r1, r2
        LI r4, 0x80000000
        SHR r5, r4, r2      ; logical shift
        HALT
    """)
    assert m.regs[3] == 2
    assert m.regs[5] == 0x40000000


def test_addi_sign_extension():
    m, _ = run_source_step("ADDI r3, r0, -1\nHALT")
    assert m.regs[3] == 0xFFFFFFFF


def test_ori_zero_extends():
    m, _ = run_source_step("ORI r3, r0, 0xFFF\nHALT")
    assert m.regs[3] == 0xFFF


def test_r0_hardwired_zero():
    m, _ = run_source_step("""
        ADDI r0, r0, 7
        ADD r3, r0, r0
        HALT
    """)
    assert m.regs[0] == 0
    assert m.regs[3] == 0


def test_write_register_api_r0_noop():
    m = Machine()
    m.write_register(0, 7)
    assert m.read_register(0) == 0
    m.write_register(3, 0xDEAD)
    assert m.read_register(3) == 0xDEAD


# ------------------------------------------------------------- memory ops

def test_lw_sw_roundtrip_and_lb_zero_extend():
    m, _ = run_source_step("""
        LI r1, 0x8000
        LI r2, 0xDEADBEEF
        SW r2, [r1+0]
        LW r3, [r1+0]
        LB r4, [r1+3]       ; 0xDE, zero-extended
        SB r2, [r1+4]       ; low byte only
        LB r5, [r1+4]
        HALT
    """)
    assert m.regs[3] == 0xDEADBEEF
    assert m.regs[4] == 0xDE
    assert m.regs[5] == 0xEF


def test_negative_load_offset():
    m, _ = run_source_step("""
        LI r1, 0x8004
        LI r2, 0x1234
        SW r2, [r1-4]
        LW r3, [r1-4]
        HALT
    """)
    assert m.regs[3] == 0x1234


def test_misaligned_word_access_faults():
    m, out = run_source_step("""
        LI r1, 0x8002
        LW r3, [r1+0]
    """)
    assert out.fault is not None
    assert out.fault.kind == "misaligned"
    assert out.fault.addr == 0x8002


def test_privileged_region_store_faults():
    m, out = run_source_step("""
        LUI r4, 0xF0000
        SW r3, [r4+0]
    """)
    f = out.fault
    assert f.kind == "memory" and f.privileged and f.addr == 0xF0000000


def test_privileged_region_totality():
    # every word inside [PRIV_LO, PRIV_HI) faults privileged; the word just
    # past the end faults unprivileged
    for addr in (PRIV_LO, PRIV_LO + 4, PRIV_HI - 4, PRIV_LO + 0x800):
        m = mk(asm_words("LW r3, [r1+0]"))
        m.regs[1] = addr
        out = m.step()
        assert out.fault.privileged, hex(addr)
    m = mk(asm_words("LW r3, [r1+0]"))
    m.regs[1] = PRIV_HI
    out = m.step()
    assert out.fault.kind == "memory" and not out.fault.privileged


def test_unmapped_address_faults():
    m, out = run_source_step("""
        LI r1, 0x40000000
        LW r3, [r1+0]
    """)
    assert out.fault.kind == "memory" and not out.fault.privileged


def test_fault_has_register_dump():
    m, out = run_source_step("""
        ADDI r5, r0, 55
        LUI r4, 0xF0000
        LB r3, [r4+0]
    """)
    assert out.fault.regs[5] == 55


# ---------------------------------------------------------------- control

def test_branch_taken_arithmetic():
    # pc=0x100, BEQ +3 with equal regs -> pc=0x10C
    m = mk(asm_words("BEQ r1, r2, +3"), pc=0x100)
    m.step()
    assert m.pc == 0x10C


def test_branch_not_taken_falls_through():
    m = mk(asm_words("BNE r1, r2, +3"), pc=0x100)
    m.step()
    assert m.pc == 0x104


def test_blt_bge_signed():
    m, _ = run_source_step("""
        LI r1, 0xFFFFFFFF   ; -1
        ADDI r2, r0, 1
        ADDI r3, r0, 0
        BLT r1, r2, taken1  ; -1 < 1
        HALT
    taken1:
        ADDI r3, r3, 1
        BGE r2, r1, taken2  ; 1 >= -1
        HALT
    taken2:
        ADDI r3, r3, 1
        HALT
    """)
    assert m.regs[3] == 2


def test_jal_jr_call_ret():
    m, _ = run_source_step("""
        .org 0x0
        CALL fn
        ADDI r4, r0, 9
        HALT
        .org 0x100
    fn: ADDI r3, r0, 7
        RET
    """)
    assert m.regs[3] == 7
    assert m.regs[4] == 9


def test_callr_sets_lr_after_reading_target():
    m, _ = run_source_step("""
        LI r14, 0x100       ; target in lr itself
        CALLR r14
        HALT
        .org 0x100
        ADDI r3, r0, 5
        HALT
    """)
    assert m.regs[3] == 5


def test_halt_exit_code_and_stop():
    m, out = run_source_step("ADDI r3, r0, 42\nHALT")
    assert m.halted and m.exit_code == 42
    assert out.fault.kind == "halt" and out.fault.code == 42
    with pytest.raises(MachineStopped):
        m.step()


def test_illegal_instruction_faults_at_execution():
    m = mk([0xFF000000])
    out = m.step()
    assert out.fault.kind == "illegal"
    assert out.fault.word == 0xFF000000
    assert out.fault.pc == 0


def test_fetch_misaligned_pc():
    m = mk(asm_words("NOP"))
    m.pc = 2
    out = m.step()
    assert out.fault.kind == "misaligned"


def test_insn_count_strictly_increases():
    m, _ = run_source_step("NOP\nNOP\nNOP\nHALT")
    assert m.insn_count == 4


# ---------------------------------------------------------------- devices

def test_mailbox_store_yields_event():
    m, out = run_source_step("""
        LI r1, 0xE0000000
        ADDI r2, r0, 7
        SW r2, [r1+0]
        HALT
    """, max_steps=4)
    assert m.response_count == 1


def test_mailbox_event_surfaces_in_outcome():
    m = mk(asm_words("LI r1, 0xE0000000\nSW r2, [r1+0]"))
    m.regs[2] = 3
    m.step()
    m.step()
    out = m.step()
    assert out.event is not None and out.event.kind == "response"
    assert out.event.value == 3


def test_mailbox_load_reads_zero():
    m, _ = run_source_step("""
        LI r1, 0xE0000000
        ADDI r3, r0, 5
        LW r3, [r1+0]
        HALT
    """)
    assert m.regs[3] == 0


def test_timer_ctl_write_sets_period():
    m, _ = run_source_step("""
        LI r1, 0xE0000010
        ADDI r2, r0, 100
        SW r2, [r1+0]
        LW r3, [r1+0]
        HALT
    """, isr_addr=0x0)
    assert m.timer.period == 100
    assert m.regs[3] == 100


def test_read_memory_device_region_range_error():
    m = Machine()
    with pytest.raises(RangeError):
        m.read_memory(0xF0000000, 1)
    with pytest.raises(RangeError):
        m.read_memory(m.ram_size - 1, 2)


def test_write_then_read_memory():
    m = Machine()
    m.write_memory(0x8000, b"\xAA\xBB")
    assert m.read_memory(0x8000, 2) == b"\xAA\xBB"


# ------------------------------------------------------------------ timer

IDLE_LOOP = """
    start:
        ADDI r1, r1, 1
        JMP start
"""

ISR_AT_0x40 = """
        .org 0x40
    __timer_isr:
        ADDI r11, r11, 1
        JR r12
"""


def test_timer_fires_exactly_at_period_without_jitter():
    words = asm_words(IDLE_LOOP + ISR_AT_0x40)
    m = mk(words, timer_period=100)
    m.isr_addr = 0x40
    fires = []
    for _ in range(1000):
        was = m.in_isr
        m.step()
        if m.in_isr and not was:
            fires.append(m.insn_count)
    # dispatch happens at count >= 100, just before the ISR's first insn
    assert fires[0] == 101
    assert all(b - a == 100 for a, b in zip(fires, fires[1:]))
    assert len(fires) >= 9
    assert m.regs[11] == len(fires)


def test_timer_saves_pc_in_r12_and_returns():
    words = asm_words(IDLE_LOOP + ISR_AT_0x40)
    m = mk(words, timer_period=10)
    m.isr_addr = 0x40
    for _ in range(11):
        m.step()  # step 11 dispatches and runs the ISR's first insn
    assert m.in_isr
    saved = m.regs[12]
    m.step()  # JR r12
    assert not m.in_isr
    assert m.pc == saved


def test_timer_jitter_bounds():
    words = asm_words(IDLE_LOOP + ISR_AT_0x40)
    m = mk(words, timer_period=100, timer_jitter=True, timer_seed=7)
    m.isr_addr = 0x40
    fires = []
    last = 0
    for _ in range(3000):
        was = m.in_isr
        m.step()
        if m.in_isr and not was:
            fires.append(m.insn_count - last)
            last = m.insn_count
    assert len(fires) >= 5
    # ISR costs 2 instructions, so inter-fire gaps include them
    for gap in fires[1:]:
        assert 100 <= gap <= 100 + 25 + 2


def test_timer_suppressed_inside_isr():
    slow_isr = """
        .org 0x40
    __timer_isr:
        ADDI r11, r11, 1
        ADDI r11, r11, 0
        ADDI r11, r11, 0
        ADDI r11, r11, 0
        JR r12
    """
    words = asm_words(IDLE_LOOP + slow_isr)
    m = mk(words, timer_period=3)
    m.isr_addr = 0x40
    for _ in range(200):
        m.step()
    # never re-entered: r12 always points back into the idle loop
    assert m.regs[12] < 0x40


# ------------------------------------------------------------------ hooks

def test_hook_fires_per_call():
    src = """
        CALL fn
        CALL fn
        CALL fn
        HALT
        .org 0x100
    fn: RET
    """
    m = mk(asm_words(src))
    fires = []
    m.register_hook(0x100, "block-entry-always", lambda mm: fires.append(mm.pc))
    m.run(100)
    assert fires == [0x100, 0x100, 0x100]


def test_once_hook_self_clears():
    src = """
        CALL fn
        CALL fn
        CALL fn
        HALT
        .org 0x100
    fn: RET
    """
    m = mk(asm_words(src))
    fires = []
    m.register_hook(0x100, "block-entry-once", lambda mm: fires.append(1))
    m.run(100)
    assert fires == [1]


def test_cleared_hook_never_fires():
    src = """
        CALL fn
        HALT
        .org 0x100
    fn: RET
    """
    m = mk(asm_words(src))
    fires = []
    hid = m.register_hook(0x100, "block-entry-always", lambda mm: fires.append(1))
    m.clear_hook(hid)
    m.run(100)
    assert fires == []


def test_duplicate_hook_rejected():
    m = Machine()
    m.register_hook(0x100, "block-entry-always", lambda mm: None)
    with pytest.raises(DuplicateHook):
        m.register_hook(0x100, "block-entry-always", lambda mm: None)
    # a different kind at the same address is fine
    m.register_hook(0x100, "block-entry-once", lambda mm: None)


def test_hook_splits_block_mid_sequence():
    src = """
        NOP
        NOP
        NOP
        NOP
        JMP 0x0
    """
    m = mk(asm_words(src))
    blk, _ = m.run_block()
    assert blk.start == 0 and blk.len_insns == 5
    fires = []
    m.register_hook(0x8, "block-entry-always", lambda mm: fires.append(mm.pc))
    # translation cache must have been split
    blk, _ = m.run_block()
    assert blk.start == 0 and blk.end == 0x8
    assert blk.terminator == "hook-split"
    blk, _ = m.run_block()
    assert blk.start == 0x8
    assert fires == [0x8]


def test_block_cache_decode_once_fire_per_entry():
    src = """
    top:
        ADDI r1, r1, 1
        ADDI r2, r2, 2
        JMP top
    """
    m = mk(asm_words(src))
    entries = []
    m.block_entry_cb = entries.append
    b1, _ = m.run_block()
    b2, _ = m.run_block()
    assert b1 is b2
    assert entries == [0, 0]
    assert b1.len_insns == 3


def test_self_modifying_code_invalidates_cache():
    # overwrite the ADDI at `tgt` (imm 1 -> imm 2) before it executes; the
    # store lands inside the currently executing block
    new_word = encode(Instruction("ADDI", rd=3, rs1=0, imm=2))
    src = f"""
        LI r1, tgt
        LI r2, {new_word}
        SW r2, [r1+0]
    tgt:
        ADDI r3, r0, 1
        HALT
    """
    m = mk(asm_words(src))
    m.run(100)
    assert m.regs[3] == 2
    m2 = mk(asm_words(src))
    while not m2.halted:
        m2.step()
    assert m2.regs[3] == 2


# ------------------------------------------------------------- snapshots

def test_snapshot_restore_roundtrip():
    m = Machine()
    m.write_memory(0x8000, b"hello")
    m.regs[5] = 77
    m.insn_count = 100
    snap = m.take_snapshot()
    m.write_memory(0x8000, b"HELLO")
    m.regs[5] = 1
    m.insn_count = 999
    m.restore_snapshot(snap)
    assert m.read_memory(0x8000, 5) == b"hello"
    assert m.regs[5] == 77
    assert m.insn_count == 100


def test_restore_gives_identical_traces():
    src = """
    top:
        ADDI r1, r1, 3
        XOR r2, r2, r1
        JMP top
    """
    m = mk(asm_words(src), timer_period=17, timer_jitter=True, timer_seed=3)
    m.isr_addr = 0  # loops back; irrelevant for trace equality
    snap = m.take_snapshot()

    def trace(mm, n):
        out = []
        for _ in range(n):
            mm.step()
            out.append((mm.pc, tuple(mm.regs)))
        return out

    t1 = trace(m, 200)
    m.restore_snapshot(snap)
    t2 = trace(m, 200)
    assert t1 == t2


def test_snapshot_after_steps_preserves_counter():
    m = mk(asm_words("NOP\n" * 100 + "HALT"))
    for _ in range(100):
        m.step()
    snap = m.take_snapshot()
    assert snap.insn_count == 100
    m2 = Machine()
    m2.restore_snapshot(snap)
    assert m2.insn_count == 100


# ------------------------------------------------- differential equivalence

def _random_program(rng, n_insns=50):
    """Random but mostly-terminating programs confined to low RAM."""
    words = []
    for _ in range(n_insns):
        pick = rng.random()
        if pick < 0.55:
            op = rng.choice(["ADD", "SUB", "AND", "OR", "XOR", "SHL", "SHR"])
            words.append(encode(Instruction(op, rd=rng.randrange(16),
                                            rs1=rng.randrange(16),
                                            rs2=rng.randrange(16))))
        elif pick < 0.7:
            op = rng.choice(["ADDI", "ORI"])
            imm = rng.randrange(0, 2048)
            words.append(encode(Instruction(op, rd=rng.randrange(16),
                                            rs1=rng.randrange(16), imm=imm)))
        elif pick < 0.8:
            # in-range loads/stores on a scratch page kept in r1
            op = rng.choice(["LW", "SW", "LB", "SB"])
            off = rng.randrange(0, 64) * 4
            if op in ("LW", "LB"):
                words.append(encode(Instruction(op, rd=rng.randrange(16), rs1=1, imm=off)))
            else:
                words.append(encode(Instruction(op, rs1=1, rs2=rng.randrange(16), imm=off)))
        elif pick < 0.95:
            op = rng.choice(["BEQ", "BNE", "BLT", "BGE"])
            words.append(encode(Instruction(op, rs1=rng.randrange(16),
                                            rs2=rng.randrange(16),
                                            imm=rng.randrange(1, 8))))
        else:
            words.append(0xF0000000 | rng.randrange(1 << 16))  # illegal
    words.append(0)  # HALT backstop
    return words


def _final_state(m):
    return (m.pc, tuple(m.regs), m.insn_count, m.halted, m.in_isr,
            hashlib.sha256(m.ram).hexdigest(),
            None if m.fault is None else (m.fault.kind, m.fault.pc, m.fault.addr))


def test_run_block_equals_step_on_random_programs():
    rng = random.Random(20240817)
    for trial in range(1000):
        words = _random_program(rng)
        regs_init = [0] + [rng.randrange(1 << 32) for _ in range(15)]
        regs_init[1] = 0x8000  # scratch data page

        m1 = mk(words)
        m1.regs[:] = regs_init
        steps = 0
        while not m1.halted and m1.fault is None and steps < 400:
            m1.step()
            steps += 1

        m2 = mk(words)
        m2.regs[:] = regs_init
        budget = m2.insn_count + 400
        while not m2.halted and m2.fault is None and m2.insn_count < budget:
            _, out = m2.run_block()
            if out.fault is not None:
                break

        # align on instruction count: block mode may overshoot the step cap,
        # so compare once both stopped for an architectural reason
        if m1.halted or m1.fault is not None:
            assert _final_state(m1) == _final_state(m2), f"trial {trial}"


def test_run_block_equals_step_with_timer():
    src = IDLE_LOOP + ISR_AT_0x40
    words = asm_words(src)

    m1 = mk(words, timer_period=13, timer_jitter=True, timer_seed=11)
    m1.isr_addr = 0x40
    for _ in range(500):
        m1.step()

    m2 = mk(words, timer_period=13, timer_jitter=True, timer_seed=11)
    m2.isr_addr = 0x40
    while m2.insn_count < 500:
        m2.run_block()
    # the block path may stop a couple of insns past 500; re-run m1 to match
    while m1.insn_count < m2.insn_count:
        m1.step()
    assert _final_state(m1) == _final_state(m2)
