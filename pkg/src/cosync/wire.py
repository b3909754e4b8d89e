"""Network side of the wire transport.

Run as ``python -m cosync.wire --network topology.json``; speaks length-prefixed
protocol frames on stdin/stdout until the orchestrator closes the stream.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .bridge import NetsimEndpoint, network_topology_from_file
from .errors import CosyncError
from .protocol import read_frame, write_frame

log = logging.getLogger(__name__)


def serve(endpoint: NetsimEndpoint, instream, outstream) -> None:
    while True:
        m = read_frame(instream)
        if m is None:
            return
        reply = endpoint.handle(m)
        if reply is not None:
            write_frame(outstream, reply)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cosync.wire")
    parser.add_argument("--network", required=True, help="network description (JSON)")
    args = parser.parse_args(argv)
    try:
        endpoint = NetsimEndpoint(network_topology_from_file(args.network))
        serve(endpoint, sys.stdin.buffer, sys.stdout.buffer)
    except CosyncError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
