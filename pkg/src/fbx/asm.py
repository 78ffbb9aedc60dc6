"""Two-pass FB32 assembler and linear disassembler.

Line grammar: ``[label:] mnemonic operands... [; comment]``.  Directives:
``.org addr``, ``.word v``, ``.byte v, ...``, ``.ascii "..."``,
``.global name``.  Pseudo-instructions: ``LI rd, imm32`` (LUI+ORI),
``RET`` (JR r14), ``NOP`` (ADD r0,r0,r0), ``CALL label`` (JAL label).

Numeric literals are decimal or 0x-hex; ``.byte`` also accepts character
literals like ``'A'``.  Branch operands are labels or signed word offsets
(``+3``); JAL/JMP operands are labels or absolute byte addresses.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .isa import Instruction, encode, disasm_word

REG_ALIASES = {"zero": 0, "sp": 13, "lr": 14}

R3_OPS = ("ADD", "SUB", "AND", "OR", "XOR", "SHL", "SHR")
MEM_LOAD_OPS = ("LW", "LB")
MEM_STORE_OPS = ("SW", "SB")
BRANCH_OPS = ("BEQ", "BNE", "BLT", "BGE")


class AsmError(Exception):
    def __init__(self, message: str, line: int = 0):
        if line:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AsmSyntaxError(AsmError):
    pass


class UndefinedLabel(AsmError):
    pass


class DuplicateLabel(AsmError):
    pass


class BranchOutOfRange(AsmError):
    pass


@dataclass
class Item:
    """One program element produced by parsing."""

    kind: str  # "label" | "inst" | "org" | "word" | "byte" | "ascii" | "global"
    line: int
    name: str = ""
    operands: list = field(default_factory=list)
    value: object = None


@dataclass
class AsmProgram:
    items: list[Item]


def _strip_comment(line: str) -> str:
    out = []
    in_str = False
    i = 0
    while i < len(line):
        c = line[i]
        if in_str:
            if c == "\\" and i + 1 < len(line):
                out.append(line[i:i + 2])
                i += 2
                continue
            if c == '"':
                in_str = False
            out.append(c)
        else:
            if c == ";":
                break
            if c == '"':
                in_str = True
            out.append(c)
        i += 1
    return "".join(out).strip()


_LABEL_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*:\s*(.*)$")
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _unescape(s: str, line: int) -> bytes:
    out = bytearray()
    i = 0
    while i < len(s):
        c = s[i]
        if c == "\\":
            if i + 1 >= len(s):
                raise AsmSyntaxError("dangling escape", line)
            e = s[i + 1]
            table = {"n": 10, "t": 9, "r": 13, "0": 0, "\\": 92, '"': 34, "'": 39}
            if e not in table:
                raise AsmSyntaxError(f"unknown escape \\{e}", line)
            out.append(table[e])
            i += 2
        else:
            out.append(ord(c))
            i += 1
    return bytes(out)


def parse_program(source: str) -> AsmProgram:
    items: list[Item] = []
    for lineno, raw in enumerate(source.splitlines(), start=1):
        text = _strip_comment(raw)
        while text:
            m = _LABEL_RE.match(text)
            if m:
                items.append(Item("label", lineno, name=m.group(1)))
                text = m.group(2).strip()
                continue
            break
        if not text:
            continue
        if text.startswith("."):
            parts = text.split(None, 1)
            directive = parts[0].lower()
            rest = parts[1].strip() if len(parts) > 1 else ""
            if directive == ".org":
                items.append(Item("org", lineno, value=_parse_int(rest, lineno)))
            elif directive == ".word":
                items.append(Item("word", lineno, value=_parse_int(rest, lineno)))
            elif directive == ".byte":
                vals = [_parse_byte(v.strip(), lineno) for v in rest.split(",")]
                items.append(Item("byte", lineno, value=bytes(vals)))
            elif directive == ".ascii":
                if len(rest) < 2 or rest[0] != '"' or rest[-1] != '"':
                    raise AsmSyntaxError(".ascii needs a quoted string", lineno)
                items.append(Item("ascii", lineno, value=_unescape(rest[1:-1], lineno)))
            elif directive == ".global":
                if not _NAME_RE.match(rest):
                    raise AsmSyntaxError(f"bad .global name {rest!r}", lineno)
                items.append(Item("global", lineno, name=rest))
            else:
                raise AsmSyntaxError(f"unknown directive {directive}", lineno)
            continue
        parts = text.split(None, 1)
        mnem = parts[0].upper()
        ops = [o.strip() for o in parts[1].split(",")] if len(parts) > 1 else []
        items.append(Item("inst", lineno, name=mnem, operands=ops))
    return AsmProgram(items)


def _parse_int(tok: str, line: int) -> int:
    tok = tok.strip()
    if not tok:
        raise AsmSyntaxError("missing value", line)
    try:
        return int(tok, 0)
    except ValueError:
        raise AsmSyntaxError(f"bad numeric literal {tok!r}", line) from None


def _parse_byte(tok: str, line: int) -> int:
    if len(tok) >= 3 and tok[0] == "'" and tok[-1] == "'":
        b = _unescape(tok[1:-1], line)
        if len(b) != 1:
            raise AsmSyntaxError(f"bad character literal {tok}", line)
        return b[0]
    v = _parse_int(tok, line)
    if not -128 <= v <= 255:
        raise AsmSyntaxError(f"byte value {v} out of range", line)
    return v & 0xFF


def _parse_reg(tok: str, line: int) -> int:
    t = tok.strip().lower()
    if t in REG_ALIASES:
        return REG_ALIASES[t]
    if t.startswith("r") and t[1:].isdigit():
        n = int(t[1:])
        if 0 <= n <= 15:
            return n
    raise AsmSyntaxError(f"bad register {tok!r}", line)


_MEM_RE = re.compile(r"^\[\s*([A-Za-z0-9_]+)\s*(?:([+-])\s*([0-9][xX0-9a-fA-F]*|\d+))?\s*\]$")


def _parse_mem(tok: str, line: int) -> tuple[int, int]:
    m = _MEM_RE.match(tok.strip())
    if not m:
        raise AsmSyntaxError(f"bad memory operand {tok!r}", line)
    reg = _parse_reg(m.group(1), line)
    off = 0
    if m.group(3) is not None:
        off = _parse_int(m.group(3), line)
        if m.group(2) == "-":
            off = -off
    return reg, off


def _size_of(item: Item) -> int:
    if item.kind == "inst":
        if item.name == "LI":
            return 8
        return 4
    if item.kind == "word":
        return 4
    if item.kind in ("byte", "ascii"):
        return len(item.value)
    return 0


def assemble(source: str):
    """Assemble to (image bytes, load_addr, symbols).

    Symbols is a list of (addr, kind, name) for every ``.global`` label,
    kind "T" for code labels and "D" for data labels.
    """
    prog = parse_program(source)

    # pass 1: addresses
    lc = 0
    org_seen = False
    labels: dict[str, int] = {}
    label_kind: dict[str, str] = {}
    pending: list[str] = []
    globals_: list[tuple[str, int]] = []
    min_addr = None
    max_addr = 0
    for item in prog.items:
        if item.kind == "label":
            if item.name in labels:
                raise DuplicateLabel(f"label {item.name!r} already defined", item.line)
            labels[item.name] = lc
            pending.append(item.name)
            continue
        if item.kind == "global":
            globals_.append((item.name, item.line))
            continue
        if item.kind == "org":
            if org_seen or min_addr is not None:
                if item.value < lc:
                    raise AsmSyntaxError(".org moves backward", item.line)
            lc = item.value
            org_seen = True
            for name in pending:
                labels[name] = lc
            continue
        if item.kind == "inst":
            if lc % 4:
                raise AsmSyntaxError(f"instruction at unaligned address 0x{lc:X}", item.line)
        kind = "T" if item.kind == "inst" else "D"
        for name in pending:
            labels[name] = lc
            label_kind[name] = kind
        pending.clear()
        size = _size_of(item)
        if size:
            if min_addr is None:
                min_addr = lc
            min_addr = min(min_addr, lc)
            max_addr = max(max_addr, lc + size)
        lc += size
    for name in pending:
        label_kind.setdefault(name, "D")

    for name, line in globals_:
        if name not in labels:
            raise UndefinedLabel(f".global of undefined label {name!r}", line)

    if min_addr is None:
        return b"", 0, []

    image = bytearray(max_addr - min_addr)

    # pass 2: encode
    lc = 0
    for item in prog.items:
        if item.kind in ("label", "global"):
            continue
        if item.kind == "org":
            lc = item.value
            continue
        off = lc - min_addr
        if item.kind == "word":
            image[off:off + 4] = (item.value & 0xFFFFFFFF).to_bytes(4, "little")
        elif item.kind in ("byte", "ascii"):
            image[off:off + len(item.value)] = item.value
        elif item.kind == "inst":
            words = _encode_inst(item, lc, labels)
            for i, w in enumerate(words):
                image[off + i * 4:off + i * 4 + 4] = w.to_bytes(4, "little")
        lc += _size_of(item)

    symbols = sorted(
        (labels[name], label_kind.get(name, "D"), name) for name, _ in globals_
    )
    return bytes(image), min_addr, symbols


def _want(item: Item, n: int) -> None:
    if len(item.operands) != n:
        raise AsmSyntaxError(
            f"{item.name} expects {n} operand(s), got {len(item.operands)}", item.line)


def _resolve(tok: str, labels: dict, line: int) -> int:
    if _NAME_RE.match(tok):
        if tok not in labels:
            raise UndefinedLabel(f"undefined label {tok!r}", line)
        return labels[tok]
    return _parse_int(tok, line)


def _encode_inst(item: Item, addr: int, labels: dict) -> list[int]:
    name = item.name
    line = item.line
    ops = item.operands

    if name == "NOP":
        _want(item, 0)
        return [encode(Instruction("ADD", rd=0, rs1=0, rs2=0))]
    if name == "RET":
        _want(item, 0)
        return [encode(Instruction("JR", rs1=14))]
    if name == "CALL":
        _want(item, 1)
        item = Item("inst", line, name="JAL", operands=ops)
        name = "JAL"
    if name == "LI":
        _want(item, 2)
        rd = _parse_reg(ops[0], line)
        value = _resolve(ops[1], labels, line) & 0xFFFFFFFF
        hi = (value >> 12) & 0xFFFFF
        lo = value & 0xFFF
        return [encode(Instruction("LUI", rd=rd, imm=hi)),
                encode(Instruction("ORI", rd=rd, rs1=rd, imm=lo))]

    if name == "HALT":
        _want(item, 0)
        return [0]
    if name in R3_OPS:
        _want(item, 3)
        return [encode(Instruction(name, rd=_parse_reg(ops[0], line),
                                   rs1=_parse_reg(ops[1], line),
                                   rs2=_parse_reg(ops[2], line)))]
    if name in ("ADDI", "ORI"):
        _want(item, 3)
        imm = _parse_int(ops[2], line)
        lo, hi = (-2048, 2047) if name == "ADDI" else (0, 4095)
        if not lo <= imm <= hi:
            raise BranchOutOfRange(f"{name} immediate {imm} out of range", line)
        return [encode(Instruction(name, rd=_parse_reg(ops[0], line),
                                   rs1=_parse_reg(ops[1], line), imm=imm))]
    if name in MEM_LOAD_OPS:
        _want(item, 2)
        rs1, off = _parse_mem(ops[1], line)
        if not -2048 <= off <= 2047:
            raise BranchOutOfRange(f"offset {off} out of range", line)
        return [encode(Instruction(name, rd=_parse_reg(ops[0], line), rs1=rs1, imm=off))]
    if name in MEM_STORE_OPS:
        _want(item, 2)
        rs1, off = _parse_mem(ops[1], line)
        if not -2048 <= off <= 2047:
            raise BranchOutOfRange(f"offset {off} out of range", line)
        return [encode(Instruction(name, rs1=rs1, rs2=_parse_reg(ops[0], line), imm=off))]
    if name == "LUI":
        _want(item, 2)
        imm = _parse_int(ops[1], line)
        if not 0 <= imm <= 0xFFFFF:
            raise BranchOutOfRange(f"LUI immediate 0x{imm:X} out of range", line)
        return [encode(Instruction(name, rd=_parse_reg(ops[0], line), imm=imm))]
    if name in BRANCH_OPS:
        _want(item, 3)
        tok = ops[2]
        if _NAME_RE.match(tok):
            target = _resolve(tok, labels, line)
            delta = target - addr
            if delta % 4:
                raise AsmSyntaxError(f"branch target 0x{target:X} not word-aligned", line)
            off = delta // 4
        else:
            off = _parse_int(tok, line)
        if not -2048 <= off <= 2047:
            raise BranchOutOfRange(f"branch offset {off} words out of range", line)
        return [encode(Instruction(name, rs1=_parse_reg(ops[0], line),
                                   rs2=_parse_reg(ops[1], line), imm=off))]
    if name in ("JAL", "JMP"):
        _want(item, 1)
        target = _resolve(ops[0], labels, line)
        if target % 4:
            raise AsmSyntaxError(f"jump target 0x{target:X} not word-aligned", line)
        imm = target // 4
        if not 0 <= imm <= 0xFFFFFF:
            raise BranchOutOfRange(f"jump target 0x{target:X} out of range", line)
        return [encode(Instruction(name, imm=imm))]
    if name in ("JR", "CALLR"):
        _want(item, 1)
        return [encode(Instruction(name, rs1=_parse_reg(ops[0], line)))]
    raise AsmSyntaxError(f"unknown mnemonic {name}", line)


def disassemble(image: bytes, base: int = 0) -> str:
    """One source line per word; non-instructions render as .word."""
    if len(image) % 4:
        raise ValueError("image length must be a multiple of 4")
    lines = []
    for off in range(0, len(image), 4):
        word = int.from_bytes(image[off:off + 4], "little")
        lines.append(disasm_word(word))
    return "\n".join(lines) + ("\n" if lines else "")


def render_symbols(symbols) -> str:
    """nm-style symbol file: '%08X %c %s' per line."""
    return "".join(f"{addr:08X} {kind} {name}\n" for addr, kind, name in symbols)
