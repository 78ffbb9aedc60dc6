"""Reassemble the bundled targets: ``python -m fbx.targets.build [dest]``."""

import sys

from . import build_all


def main() -> int:
    dest = sys.argv[1] if len(sys.argv) > 1 else None
    for path in build_all(dest):
        print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
