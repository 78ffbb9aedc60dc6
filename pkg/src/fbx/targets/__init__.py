"""Bundled guest programs: three micro-parsers in easy/hard buggy builds.

Each guest runs a cyclic main loop (refresh message from its embedded
seed, call ``parse_msg(buf, 64)``, post a mailbox response, idle), exports
``main``, ``parse_msg``, ``vb_suspend``, ``__timer_isr`` plus its data
symbols, and documents its bug trigger in the source header.  All bugs
manifest as an access into the privileged memory window.

Shipped as assembly sources with prebuilt .img/.sym pairs; rebuild with
``python -m fbx.targets.build``.
"""

from __future__ import annotations

import os

from ..asm import assemble, render_symbols
from ..loader import build_image

TARGET_NAMES = (
    "brackets_easy", "brackets_hard",
    "addr_easy", "addr_hard",
    "expr_easy", "expr_hard",
)

_HERE = os.path.dirname(__file__)


def source_path(name: str) -> str:
    return os.path.join(_HERE, name + ".s")


def image_path(name: str) -> str:
    return os.path.join(_HERE, name + ".img")


def symbols_path(name: str) -> str:
    return os.path.join(_HERE, name + ".sym")


def source_text(name: str) -> str:
    with open(source_path(name), "r", encoding="utf-8") as fh:
        return fh.read()


def build(name: str) -> tuple[bytes, str]:
    """Assemble one target: (FBIM image bytes, symbol file text)."""
    code, load_addr, symbols = assemble(source_text(name))
    entry = dict((n, a) for a, _, n in symbols)["main"]
    return build_image(code, load_addr, entry), render_symbols(symbols)


def build_all(dest_dir: str | None = None) -> list[str]:
    dest = dest_dir or _HERE
    written = []
    for name in TARGET_NAMES:
        img, sym = build(name)
        img_path = os.path.join(dest, name + ".img")
        sym_path = os.path.join(dest, name + ".sym")
        with open(img_path, "wb") as fh:
            fh.write(img)
        with open(sym_path, "w", encoding="utf-8") as fh:
            fh.write(sym)
        written += [img_path, sym_path]
    return written
