"""Line-oriented vector files: one JSON object per app after a version line.

Vectors are written sparsely with every real number rendered with nine
fractional digits, so equal inputs always produce identical bytes.
"""

from __future__ import annotations

import json

import numpy as np

VECTOR_VERSION = "lowrating-vectors 1"


def fmt(x: float) -> str:
    return f"{x:.9f}"


def vector_line(app_id: str, label: int, semantic: np.ndarray, layout: np.ndarray) -> str:
    sem = ", ".join(
        f"[{k + 1}, {int(row[0])}, {fmt(row[1])}, {fmt(row[2])}]" for k, row in enumerate(semantic) if row[0] > 0
    )
    lay = ", ".join(f"[{k + 1}, {int(row[0])}, {fmt(row[1])}]" for k, row in enumerate(layout) if row[0] > 0)
    return (
        f'{{"app": {json.dumps(app_id)}, "label": {label}, "N": {len(semantic)}, "semantic": [{sem}], '
        f'"slots": {len(layout)}, "layout": [{lay}]}}'
    )


def write_vectors(path, records) -> None:
    lines = [VECTOR_VERSION] + [vector_line(r.app_id, r.label, r.semantic, r.layout) for r in records]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vectors(path) -> list[dict]:
    """Parsed records with dense ``semantic`` (N, 3) and ``layout`` (slots, 2) arrays."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != VECTOR_VERSION:
        raise ValueError(f"{path}: not a '{VECTOR_VERSION}' file")
    out = []
    for line in lines[1:]:
        if not line.strip():
            continue
        d = json.loads(line)
        sem = np.zeros((d["N"], 3))
        for k, f, l, b in d["semantic"]:
            sem[k - 1] = (f, l, b)
        lay = np.zeros((d["slots"], 2))
        for k, n, dep in d["layout"]:
            lay[k - 1] = (n, dep)
        out.append({"app": d["app"], "label": d["label"], "semantic": sem, "layout": lay})
    return out
