"""Comparison-table rendering over run manifests.

Rows are provider variants, columns are model kinds, and each variant
carries an AUC line and a Logloss line. Rendering is pure: nothing is
recomputed from checkpoints, only manifest numbers are formatted.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

from .config import MODEL_IDS, MANIFEST_NAME, RunManifest, read_manifest
from .errors import NoManifests
from .models import MODEL_KINDS

MODEL_LABELS = {
    "widedeep": "WideDeep",
    "xdeepfm": "xDeepFM",
    "dcnv2": "DCNv2",
    "eulernet": "EulerNet",
}

_VARIANT_ORDER = {vid: i for i, vid in enumerate(MODEL_IDS)}


def collect_manifests(run_dirs: Iterable[str | Path]) -> list[RunManifest]:
    """Manifests from the given directories, searched recursively so a bare
    runs/ root or a single attempt directory both work."""
    found: list[tuple[Path, RunManifest]] = []
    for d in run_dirs:
        root = Path(d)
        if root.is_file() and root.name == MANIFEST_NAME:
            found.append((root, read_manifest(root)))
            continue
        for path in sorted(root.rglob(MANIFEST_NAME)):
            found.append((path, read_manifest(path)))
    if not found:
        raise NoManifests(f"no {MANIFEST_NAME} under {[str(d) for d in run_dirs]}")
    return [m for _, m in found]


def _latest_per_cell(manifests: Sequence[RunManifest]) -> dict[tuple[str, str], RunManifest]:
    cells: dict[tuple[str, str], RunManifest] = {}
    for m in manifests:
        key = (m.provider_model_id, m.model_kind)
        held = cells.get(key)
        if held is None or m.finished_at >= held.finished_at:
            cells[key] = m
    return cells


def _grid(manifests: Sequence[RunManifest]):
    cells = _latest_per_cell(manifests)
    variants = sorted({v for v, _ in cells}, key=lambda v: _VARIANT_ORDER[v])
    kinds = [k for k in MODEL_KINDS if any(mk == k for _, mk in cells)]
    return cells, variants, kinds


def _best_flags(cells, variants, kinds):
    """Per column: highest AUC and lowest Logloss get flagged."""
    best = {}
    for kind in kinds:
        col = [(v, cells[(v, kind)]) for v in variants if (v, kind) in cells]
        if not col:
            continue
        best[("auc", kind)] = max(col, key=lambda t: t[1].auc)[0]
        best[("logloss", kind)] = min(col, key=lambda t: t[1].logloss)[0]
    return best


def render_markdown(manifests: Sequence[RunManifest]) -> str:
    if not manifests:
        raise NoManifests("no manifests to report on")
    cells, variants, kinds = _grid(manifests)
    best = _best_flags(cells, variants, kinds)
    header = ["Variant", "Metric"] + [MODEL_LABELS[k] for k in kinds]
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join([" --- "] * len(header)) + "|"]
    for variant in variants:
        for metric in ("auc", "logloss"):
            row = [variant, "AUC" if metric == "auc" else "Logloss"]
            for kind in kinds:
                m = cells.get((variant, kind))
                if m is None:
                    row.append("")
                    continue
                value = f"{m.auc if metric == 'auc' else m.logloss:.4f}"
                if best.get((metric, kind)) == variant:
                    value = f"**{value}**"
                row.append(value)
            lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def render_csv(manifests: Sequence[RunManifest]) -> str:
    if not manifests:
        raise NoManifests("no manifests to report on")
    cells, variants, kinds = _grid(manifests)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["variant", "metric"] + [MODEL_LABELS[k] for k in kinds])
    for variant in variants:
        for metric in ("auc", "logloss"):
            row = [variant, metric]
            for kind in kinds:
                m = cells.get((variant, kind))
                if m is None:
                    row.append("")
                else:
                    row.append(f"{m.auc if metric == 'auc' else m.logloss:.4f}")
            writer.writerow(row)
    return buf.getvalue()
