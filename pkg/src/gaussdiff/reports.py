"""CSV / JSON report writers and model-file (de)serialization.

CSV: header row, ``,`` separator, floats with 9 significant digits, ``\\n``
line endings.  JSON: a single ``{"meta": ..., "rows": [...]}`` object.
Neither carries timestamps, so identical runs give byte-identical files;
wall-clock time goes to a separate ``run_info.json``.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
from pathlib import Path

import numpy as np

from .dataset_stats import GaussianMixture, GaussianModel

FORMATS = ("csv", "json", "both")


def _clean(v):
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else format(v, ".9g")
    return str(v)


def rows_to_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    if columns is None:
        columns = list(rows[0]) if rows else []
    lines = [",".join(columns)]
    lines += [",".join(_cell(r.get(c)) for c in columns) for r in rows]
    return "\n".join(lines) + "\n"


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def write_report(out_dir, name: str, rows: list[dict], meta: dict, fmt: str = "both",
                 columns: list[str] | None = None) -> list[Path]:
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("csv", "both"):
        p = out_dir / f"{name}.csv"
        with open(p, "w", newline="") as fh:
            fh.write(rows_to_csv(rows, columns))
        written.append(p)
    if fmt in ("json", "both"):
        p = out_dir / f"{name}.json"
        with open(p, "w", newline="") as fh:
            fh.write(dumps_json({"meta": meta, "rows": rows}))
        written.append(p)
    return written


def write_run_info(out_dir, meta: dict, outputs) -> Path:
    p = Path(out_dir) / "run_info.json"
    info = {
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "meta": meta,
        "outputs": [str(Path(o).name) for o in outputs],
    }
    p.write_text(dumps_json(info))
    return p


# ------------------------------------------------------------ model files


def gaussian_to_dict(g: GaussianModel) -> dict:
    """``basis`` is flattened column-major: column k occupies [k*D, (k+1)*D)."""
    return {
        "dim": g.ambient_dim,
        "rank": g.rank,
        "mean": g.mean.tolist(),
        "basis": g.basis.T.reshape(-1).tolist(),
        "basis_order": "column-major",
        "eigenvalues": g.eigenvalues.tolist(),
    }


def gaussian_from_dict(d: dict) -> GaussianModel:
    dim, rank = int(d["dim"]), int(d["rank"])
    basis = np.asarray(d["basis"], dtype=float).reshape(rank, dim).T
    return GaussianModel(np.asarray(d["mean"], dtype=float), basis, np.asarray(d["eigenvalues"]))


def mixture_to_dict(m: GaussianMixture) -> dict:
    labels = m.labels or tuple(range(m.k))
    return {
        "k": m.k,
        "dim": m.ambient_dim,
        "components": [
            {"label": int(lab), "weight": float(w), **gaussian_to_dict(c)}
            for lab, w, c in zip(labels, m.weights, m.components)
        ],
    }


def mixture_from_dict(d: dict) -> GaussianMixture:
    comps = d["components"]
    return GaussianMixture(
        [c["weight"] for c in comps],
        tuple(gaussian_from_dict(c) for c in comps),
        tuple(c["label"] for c in comps),
    )


def load_model_file(path) -> tuple[GaussianModel, GaussianMixture | None]:
    doc = json.loads(Path(path).read_text())
    g = gaussian_from_dict(doc["gaussian"])
    mix = mixture_from_dict(doc["mixture"]) if doc.get("mixture") else None
    return g, mix
