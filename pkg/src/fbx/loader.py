"""Guest image (FBIM v1) and symbol file handling.

FBIM v1 layout, all header words little-endian:

    offset 0   magic   "FBIM"
    offset 4   version u32 (= 1)
    offset 8   load_addr u32
    offset 12  entry u32        (within the code span)
    offset 16  code_len u32
    offset 20  code bytes

The sidecar symbol file is nm-style text: ``%08X %c %s`` per line with
kind 'T' for code and 'D' for data.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass

MAGIC = b"FBIM"
VERSION = 1
HEADER_LEN = 20


class ImageError(Exception):
    pass


class BadMagic(ImageError):
    pass


class BadVersion(ImageError):
    pass


class TruncatedImage(ImageError):
    pass


class ImageTooLarge(ImageError):
    pass


class BadEntry(ImageError):
    pass


class SymbolError(Exception):
    pass


class MalformedLine(SymbolError):
    def __init__(self, lineno: int, text: str):
        super().__init__(f"line {lineno}: malformed symbol line {text!r}")
        self.lineno = lineno


class DuplicateSymbol(SymbolError):
    def __init__(self, name: str):
        super().__init__(f"duplicate symbol {name!r}")
        self.name = name


class SymbolNotFound(SymbolError):
    def __init__(self, name: str):
        super().__init__(
            f"symbol {name!r} not found; if the guest was built stripped, "
            "recover the address with reverse-engineering tooling and add "
            "it to the symbol file by hand")
        self.name = name


@dataclass(frozen=True)
class GuestImage:
    load_addr: int
    entry: int
    code: bytes

    @property
    def code_len(self) -> int:
        return len(self.code)


def build_image(code: bytes, load_addr: int, entry: int) -> bytes:
    if not load_addr <= entry < load_addr + len(code):
        raise BadEntry(f"entry 0x{entry:08X} outside code span")
    return MAGIC + struct.pack("<III", VERSION, load_addr, entry) + \
        struct.pack("<I", len(code)) + code


def parse_image(data: bytes) -> GuestImage:
    if len(data) < HEADER_LEN:
        raise TruncatedImage(f"image is {len(data)} bytes, header needs {HEADER_LEN}")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    version, load_addr, entry, code_len = struct.unpack("<IIII", data[4:20])
    if version != VERSION:
        raise BadVersion(f"unsupported image version {version}")
    code = data[HEADER_LEN:]
    if len(code) < code_len:
        raise TruncatedImage(f"code_len={code_len} but only {len(code)} code bytes")
    if len(code) > code_len:
        raise TruncatedImage(f"{len(code) - code_len} trailing bytes after code")
    if code_len and not load_addr <= entry < load_addr + code_len:
        raise BadEntry(f"entry 0x{entry:08X} outside [0x{load_addr:08X}, "
                       f"0x{load_addr + code_len:08X})")
    return GuestImage(load_addr=load_addr, entry=entry, code=code)


def load_image(machine, image: GuestImage) -> None:
    """Copy the code into guest RAM and point pc at the entry."""
    if image.load_addr + image.code_len > machine.ram_size:
        raise ImageTooLarge(
            f"image needs {image.load_addr + image.code_len} bytes of RAM, "
            f"machine has {machine.ram_size}")
    machine.write_memory(image.load_addr, image.code)
    machine.pc = image.entry


_SYM_RE = re.compile(r"^([0-9A-Fa-f]{8}) ([TD]) (\S+)$")


class SymbolTable:
    def __init__(self):
        self._by_name: dict[str, tuple[int, str]] = {}
        self._by_addr: dict[int, list[str]] = {}

    def add(self, name: str, addr: int, kind: str) -> None:
        if name in self._by_name:
            raise DuplicateSymbol(name)
        if kind == "T" and addr % 4:
            raise SymbolError(f"code symbol {name!r} at unaligned 0x{addr:08X}")
        self._by_name[name] = (addr, kind)
        self._by_addr.setdefault(addr, []).append(name)

    def resolve(self, name: str) -> int:
        if name not in self._by_name:
            raise SymbolNotFound(name)
        return self._by_name[name][0]

    def kind(self, name: str) -> str:
        if name not in self._by_name:
            raise SymbolNotFound(name)
        return self._by_name[name][1]

    def names_at(self, addr: int) -> list[str]:
        return list(self._by_addr.get(addr, ()))

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __len__(self) -> int:
        return len(self._by_name)

    def entries(self) -> list[tuple[int, str, str]]:
        return sorted((addr, kind, name)
                      for name, (addr, kind) in self._by_name.items())

    def render(self) -> str:
        return "".join(f"{addr:08X} {kind} {name}\n"
                       for addr, kind, name in self.entries())

    def __eq__(self, other) -> bool:
        return isinstance(other, SymbolTable) and self._by_name == other._by_name


def parse_symbols(text: str) -> SymbolTable:
    table = SymbolTable()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        m = _SYM_RE.match(line)
        if not m:
            raise MalformedLine(lineno, raw)
        table.add(m.group(3), int(m.group(1), 16), m.group(2))
    return table
