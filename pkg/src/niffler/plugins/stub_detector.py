#!/usr/bin/env python3
"""Reference detector plugin: locates saturated rectangular regions.

Runs as a child process with a manifest path as its only argument.  The
manifest lists PNG files; for each one the detector thresholds at 90% of
the 8-bit ceiling (pixels >= 230), labels connected components, drops
speckles under the minimum area, and emits one tight bounding box per
surviving component.  Intentionally simple: synthetic implant patterns are
painted at full intensity on backgrounds that stay below the threshold, so
detections are exact rather than statistical.

This file depends only on third-party imaging libraries, not on the host
package: it is the reference implementation of the plugin contract and
doubles as the template for writing external detectors.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

THRESHOLD_FRACTION = 0.9
MIN_AREA = 16


def detect(png_path: str) -> list[dict]:
    arr = np.asarray(Image.open(png_path).convert("L"), dtype=np.float64)
    mask = arr >= THRESHOLD_FRACTION * 255.0
    labels, count = ndimage.label(mask)
    boxes = []
    for index in range(1, count + 1):
        ys, xs = np.nonzero(labels == index)
        if ys.size < MIN_AREA:
            continue
        score = float(arr[ys, xs].mean() / 255.0)
        boxes.append(
            {
                "x0": int(xs.min()),
                "y0": int(ys.min()),
                "x1": int(xs.max()) + 1,
                "y1": int(ys.max()) + 1,
                "label": "implant",
                "score": min(1.0, score),
            }
        )
    boxes.sort(key=lambda b: (b["y0"], b["x0"]))
    return boxes


def main(argv: list[str]) -> int:
    if len(argv) != 2:
        print("usage: stub_detector.py MANIFEST_JSON", file=sys.stderr)
        return 2
    manifest = json.loads(Path(argv[1]).read_text(encoding="utf-8"))
    results = [
        {"sop_instance_uid": entry["sop_instance_uid"], "boxes": detect(entry["png_path"])}
        for entry in manifest["images"]
    ]
    Path(manifest["output_path"]).write_text(
        json.dumps({"results": results}, indent=2) + "\n", encoding="utf-8"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv))
