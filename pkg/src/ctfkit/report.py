"""Per-micrograph CTF reports (JSON / TSV) and PNG diagnostic montages.

JSON stores angles in radians; TSV stores ``alpha_f_deg`` in degrees. Both
carry ``schema_version``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from PIL import Image

SCHEMA_VERSION = 1


@dataclass
class CtfReport:
    file_id: str
    status: str = "ok"  # ok | error
    block_size: int | None = None
    df1: float | None = None  # angstrom
    df2: float | None = None
    alpha_f: float | None = None  # radians
    mean_defocus: float | None = None
    astigmatism: float | None = None
    scores: dict = field(default_factory=dict)  # block size (str) -> selection correlation
    fit_method: str | None = None
    zero_rings: int | None = None
    zero_residual: float | None = None  # radians RMS
    timing_s: float | None = None
    warnings: list = field(default_factory=list)
    error: str | None = None

    @classmethod
    def from_defocus(cls, file_id, defocus, **kwargs):
        return cls(file_id=file_id, df1=defocus.df1, df2=defocus.df2, alpha_f=defocus.alpha_f,
                   mean_defocus=defocus.mean_defocus, astigmatism=defocus.astigmatism, **kwargs)


def reports_to_json(reports):
    doc = {"schema_version": SCHEMA_VERSION, "angle_unit": "radians",
           "reports": [asdict(r) for r in reports]}
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def reports_from_json(text):
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
    return [CtfReport(**item) for item in doc["reports"]]


_TSV_FIXED = ("schema_version", "file_id", "status", "block_size", "df1", "df2", "alpha_f_deg",
              "mean_defocus", "astigmatism")
_TSV_TAIL = ("fit_method", "zero_rings", "zero_residual", "timing_s", "warnings", "error")


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def reports_to_tsv(reports):
    sizes = sorted({int(k) for r in reports for k in r.scores})
    header = [*_TSV_FIXED, *(f"score_{k}" for k in sizes), *_TSV_TAIL]
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(header)
    for r in reports:
        angle = None if r.alpha_f is None else math.degrees(r.alpha_f)
        row = [SCHEMA_VERSION, r.file_id, r.status, r.block_size, r.df1, r.df2, angle,
               r.mean_defocus, r.astigmatism]
        row += [r.scores.get(str(k)) for k in sizes]
        row += [r.fit_method, r.zero_rings, r.zero_residual, r.timing_s, ";".join(r.warnings), r.error]
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def reports_from_tsv(text):
    rows = list(csv.DictReader(io.StringIO(text), delimiter="\t"))
    out = []

    def num(value, kind=float):
        return None if value == "" else kind(value)

    for row in rows:
        if int(row["schema_version"]) != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {row['schema_version']!r}")
        scores = {k[len("score_"):]: float(v) for k, v in row.items() if k.startswith("score_") and v != ""}
        angle = num(row["alpha_f_deg"])
        out.append(CtfReport(
            file_id=row["file_id"], status=row["status"], block_size=num(row["block_size"], int),
            df1=num(row["df1"]), df2=num(row["df2"]),
            alpha_f=None if angle is None else math.radians(angle),
            mean_defocus=num(row["mean_defocus"]), astigmatism=num(row["astigmatism"]),
            scores=scores, fit_method=row["fit_method"] or None,
            zero_rings=num(row["zero_rings"], int), zero_residual=num(row["zero_residual"]),
            timing_s=num(row["timing_s"]),
            warnings=row["warnings"].split(";") if row["warnings"] else [],
            error=row["error"] or None,
        ))
    return out


def write_report(reports, path, fmt="json"):
    """Write reports to ``path`` atomically in ``json`` or ``tsv`` format."""
    if not reports:
        raise ValueError("no reports to write")
    if fmt == "json":
        text = reports_to_json(reports)
    elif fmt == "tsv":
        text = reports_to_tsv(reports)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    tmp = f"{os.fspath(path)}.part"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def _to_uint8(panel, log=False):
    panel = np.nan_to_num(np.asarray(panel, dtype=float), nan=0.0, posinf=0.0, neginf=0.0)
    if log:
        peak = float(panel.max())
        floor = peak * 1e-6 if peak > 0 else 1.0
        panel = np.log(np.maximum(panel, floor))
    lo, hi = float(panel.min()), float(panel.max())
    if hi <= lo:
        return np.zeros(panel.shape, dtype=np.uint8)
    return np.round((panel - lo) / (hi - lo) * 255).astype(np.uint8)


def render_diagnostics(stages, path):
    """2x2 grayscale montage: log spectrum | subtracted / projected | zero mask.

    ``stages`` needs ``raw``, ``subtracted``, ``projected`` and ``mask``
    arrays of equal K x K shape.
    """
    panels = [
        _to_uint8(stages.raw, log=True),
        _to_uint8(stages.subtracted),
        _to_uint8(stages.projected),
        _to_uint8(np.asarray(stages.mask, dtype=float)),
    ]
    shape = panels[0].shape
    if any(p.shape != shape for p in panels):
        raise ValueError("diagnostic panels must share one shape")
    montage = np.block([[panels[0], panels[1]], [panels[2], panels[3]]])
    tmp = f"{os.fspath(path)}.part"
    Image.fromarray(montage).save(tmp, format="PNG")
    os.replace(tmp, path)
    return path
