"""Command-line entry: pick a binding and serve it.

    pyadapter --binding const:40,40,20,20
    pyadapter --binding template --transport tcp:127.0.0.1:9001

The process serves exactly one session and exits when the peer closes the
stream, which is the lifecycle ``bridge:cmd:...`` tracker specs expect.
"""

from __future__ import annotations

import argparse
import sys

from .adapter import AdapterBinding, run_adapter
from .bindings import constant_box_binding, template_matching_binding


def resolve_binding(spec: str, transport: str) -> AdapterBinding:
    kind, _, rest = spec.partition(":")
    if kind == "const":
        parts = rest.split(",")
        if len(parts) != 4:
            raise ValueError(f"const binding needs X,Y,W,H, got {rest!r}")
        try:
            box = tuple(float(p) for p in parts)
        except ValueError:
            raise ValueError(f"const binding needs four numbers, got {rest!r}") from None
        return constant_box_binding(box, transport=transport)
    if kind == "template":
        if rest:
            try:
                radius = int(rest)
            except ValueError:
                raise ValueError(f"template radius must be an integer, got {rest!r}") from None
            return template_matching_binding(search_radius=radius, transport=transport)
        return template_matching_binding(transport=transport)
    raise ValueError(f"unknown binding {spec!r} (expected const:X,Y,W,H or template[:RADIUS])")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pyadapter",
        description="serve a tracking callable behind the tracker-oracle wire protocol",
    )
    parser.add_argument(
        "--binding", required=True, help="const:X,Y,W,H | template[:RADIUS]"
    )
    parser.add_argument(
        "--transport", default="stdio", help="stdio (default) | tcp:HOST:PORT"
    )
    args = parser.parse_args(argv)
    try:
        binding = resolve_binding(args.binding, args.transport)
        run_adapter(binding)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (BrokenPipeError, ConnectionResetError):
        return 0
    return 0


if __name__ == "__main__":
    sys.exit(main())
