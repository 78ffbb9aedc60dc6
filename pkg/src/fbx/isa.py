"""FB32 instruction set: encodings, decoder, encoder, single-word disassembly.

FB32 is a little-endian 32-bit RISC with 16 general registers.  Register
conventions: r0 reads as zero, r12 is the irq link, r13 the stack pointer,
r14 the link register.  Every instruction is one 32-bit word; pc advances
by 4 unless a control transfer says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

MASK32 = 0xFFFFFFFF

# Opcode values (word bits [31:24]).
OP_HALT = 0x00
OP_ADD = 0x01
OP_SUB = 0x02
OP_AND = 0x03
OP_OR = 0x04
OP_XOR = 0x05
OP_SHL = 0x06
OP_SHR = 0x07
OP_ADDI = 0x08
OP_ORI = 0x09
OP_LUI = 0x0A
OP_LW = 0x0B
OP_LB = 0x0C
OP_SW = 0x0D
OP_SB = 0x0E
OP_BEQ = 0x10
OP_BNE = 0x11
OP_BLT = 0x12
OP_BGE = 0x13
OP_JAL = 0x14
OP_JMP = 0x15
OP_JR = 0x16
OP_CALLR = 0x17

# Format classes.  R: rd,rs1,rs2.  I: rd,rs1,imm12.  U: rd,imm20.
# B: rs1,rs2,imm12 (rd field must be 0).  J: imm24.
R_OPS = {OP_ADD: "ADD", OP_SUB: "SUB", OP_AND: "AND", OP_OR: "OR",
         OP_XOR: "XOR", OP_SHL: "SHL", OP_SHR: "SHR"}
I_OPS = {OP_ADDI: "ADDI", OP_ORI: "ORI", OP_LW: "LW", OP_LB: "LB"}
B_OPS = {OP_SW: "SW", OP_SB: "SB", OP_BEQ: "BEQ", OP_BNE: "BNE",
         OP_BLT: "BLT", OP_BGE: "BGE"}
J_OPS = {OP_JAL: "JAL", OP_JMP: "JMP"}

MNEMONIC = {OP_HALT: "HALT", OP_LUI: "LUI", OP_JR: "JR", OP_CALLR: "CALLR"}
MNEMONIC.update(R_OPS)
MNEMONIC.update(I_OPS)
MNEMONIC.update(B_OPS)
MNEMONIC.update(J_OPS)

OPCODE = {name: op for op, name in MNEMONIC.items()}

BRANCH_OPS = (OP_BEQ, OP_BNE, OP_BLT, OP_BGE)
STORE_OPS = (OP_SW, OP_SB)

# Signed immediates: ADDI, load/store offsets, branch word offsets.
SIGNED_IMM12_OPS = (OP_ADDI, OP_LW, OP_LB, OP_SW, OP_SB,
                    OP_BEQ, OP_BNE, OP_BLT, OP_BGE)


def sext12(v: int) -> int:
    v &= 0xFFF
    return v - 0x1000 if v & 0x800 else v


def sext32(v: int) -> int:
    v &= MASK32
    return v - 0x100000000 if v & 0x80000000 else v


@dataclass(frozen=True)
class Instruction:
    """Decoded FB32 instruction.

    `imm` carries the semantic value: sign-extended for ADDI, memory
    offsets and branch word-offsets; raw imm20 for LUI; word-address
    imm24 for JAL/JMP.  Unknown opcodes decode to op "ILLEGAL" with the
    raw word in `imm`; the fault is raised at execution, not here.
    """

    op: str
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    imm: int = 0


def decode(word: int) -> Instruction:
    word &= MASK32
    opc = word >> 24
    name = MNEMONIC.get(opc)
    if name is None:
        return Instruction("ILLEGAL", imm=word)
    rd = (word >> 20) & 0xF
    rs1 = (word >> 16) & 0xF
    rs2 = (word >> 12) & 0xF
    imm12 = word & 0xFFF
    if opc in R_OPS or opc == OP_HALT:
        return Instruction(name, rd=rd, rs1=rs1, rs2=rs2)
    if opc in (OP_JR, OP_CALLR):
        return Instruction(name, rs1=rs1)
    if opc in I_OPS:
        imm = sext12(imm12) if opc in SIGNED_IMM12_OPS else imm12
        return Instruction(name, rd=rd, rs1=rs1, imm=imm)
    if opc == OP_LUI:
        return Instruction(name, rd=rd, imm=word & 0xFFFFF)
    if opc in B_OPS:
        return Instruction(name, rs1=rs1, rs2=rs2, imm=sext12(imm12))
    # J-format
    return Instruction(name, imm=word & 0xFFFFFF)


def encode(inst: Instruction) -> int:
    opc = OPCODE[inst.op]
    if opc == OP_HALT:
        return 0
    if opc in R_OPS:
        return (opc << 24) | (inst.rd << 20) | (inst.rs1 << 16) | (inst.rs2 << 12)
    if opc in (OP_JR, OP_CALLR):
        return (opc << 24) | (inst.rs1 << 16)
    if opc in I_OPS:
        if opc in SIGNED_IMM12_OPS:
            if not -2048 <= inst.imm <= 2047:
                raise ValueError(f"imm12 out of range: {inst.imm}")
        elif not 0 <= inst.imm <= 4095:
            raise ValueError(f"imm12 out of range: {inst.imm}")
        return (opc << 24) | (inst.rd << 20) | (inst.rs1 << 16) | (inst.imm & 0xFFF)
    if opc == OP_LUI:
        if not 0 <= inst.imm <= 0xFFFFF:
            raise ValueError(f"imm20 out of range: {inst.imm}")
        return (opc << 24) | (inst.rd << 20) | inst.imm
    if opc in B_OPS:
        if not -2048 <= inst.imm <= 2047:
            raise ValueError(f"imm12 out of range: {inst.imm}")
        return (opc << 24) | (inst.rs1 << 16) | (inst.rs2 << 12) | (inst.imm & 0xFFF)
    # J-format
    if not 0 <= inst.imm <= 0xFFFFFF:
        raise ValueError(f"imm24 out of range: {inst.imm}")
    return (opc << 24) | inst.imm


def format_inst(inst: Instruction) -> str:
    """Render one instruction in assembler syntax."""
    op = inst.op
    if op == "HALT":
        return "HALT"
    if op in ("ADD", "SUB", "AND", "OR", "XOR", "SHL", "SHR"):
        return f"{op} r{inst.rd}, r{inst.rs1}, r{inst.rs2}"
    if op in ("ADDI", "ORI"):
        return f"{op} r{inst.rd}, r{inst.rs1}, {inst.imm}"
    if op in ("LW", "LB"):
        off = f"+{inst.imm}" if inst.imm >= 0 else str(inst.imm)
        return f"{op} r{inst.rd}, [r{inst.rs1}{off}]"
    if op in ("SW", "SB"):
        off = f"+{inst.imm}" if inst.imm >= 0 else str(inst.imm)
        return f"{op} r{inst.rs2}, [r{inst.rs1}{off}]"
    if op == "LUI":
        return f"LUI r{inst.rd}, 0x{inst.imm:X}"
    if op in ("BEQ", "BNE", "BLT", "BGE"):
        off = f"+{inst.imm}" if inst.imm >= 0 else str(inst.imm)
        return f"{op} r{inst.rs1}, r{inst.rs2}, {off}"
    if op in ("JAL", "JMP"):
        return f"{op} 0x{inst.imm * 4:X}"
    if op in ("JR", "CALLR"):
        return f"{op} r{inst.rs1}"
    raise ValueError(f"unformattable op {op}")


def disasm_word(word: int) -> str:
    """One word to text; non-canonical or unknown words render as .word."""
    word &= MASK32
    inst = decode(word)
    if inst.op == "ILLEGAL" or encode(inst) != word:
        return f".word 0x{word:08X}"
    return format_inst(inst)
