#!/usr/bin/env python3
"""Seed the two demo projects and serve them for interactive exploration.

Usage:
    python scripts/run_demo.py [--data-dir DIR] [--port 8040] [--pacing-ms 0]

Seeds only when the data dir is empty, so re-running against an existing
directory goes straight to serving.
"""

import argparse
import sys

from wxbench.demo import build_demo
from wxbench.engine import Engine, EngineConfig
from wxbench.errors import DataDirNotEmpty
from wxbench.server import create_app


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--data-dir", default="./wxdata-demo")
    parser.add_argument("--port", type=int, default=8040)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--pacing-ms", type=int, default=0,
                        help="slow the seeded runs down to watch live monitoring")
    args = parser.parse_args()

    engine = Engine(EngineConfig(data_dir=args.data_dir, poll_interval_ms=1000))
    try:
        summary = build_demo(engine, pacing_ms=args.pacing_ms)
        for project in summary["projects"]:
            print(f"seeded {project['name']}: runs {project['runs']}, ensembles {project['ensembles']}")
    except DataDirNotEmpty:
        print(f"{args.data_dir} already populated; serving as-is")

    import uvicorn

    app = create_app(engine)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
