"""Write the AIS and pulpfiber datasets as CSV files.

The data are not redistributed with this repository. This script reads them
from the ``rdatasets`` package (``pip install rdatasets``), which bundles
the R dataset collection, and writes ``ais.csv`` and ``pulpfiber.csv`` to
the target directory (default: ``$SKEWCWM_DATA`` or ``./data``).

    python scripts/fetch_datasets.py [--out DIR]
"""

import argparse
import os
import sys
from pathlib import Path

SOURCES = {
    "ais.csv": ("DAAG", "ais"),
    "pulpfiber.csv": ("robustbase", "pulpfiber"),
}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=os.environ.get("SKEWCWM_DATA", "data"))
    args = parser.parse_args(argv)
    try:
        import rdatasets
    except ImportError:
        print("the rdatasets package is required: pip install rdatasets", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for fname, (package, item) in SOURCES.items():
        frame = rdatasets.data(package, item)
        frame = frame.drop(columns=[c for c in ("rownames",) if c in frame.columns])
        frame.to_csv(out / fname, index=False)
        print(f"wrote {out / fname} ({len(frame)} rows)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
