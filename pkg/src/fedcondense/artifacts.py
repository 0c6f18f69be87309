"""On-disk artifacts: model checkpoints, round reports, summaries, CSV."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .evidence import SelectionParams
from .federation import GlobalModel, RoundReport
from .gnn import GcnParams
from .topology import FusionParams

CHECKPOINT_DTYPE = "<f4"  # little-endian float32


def save_checkpoint(model: GlobalModel, prefix: str | Path) -> tuple[Path, Path]:
    """Flat binary of named tensors plus a JSON manifest (names/shapes/dtype)."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "round": model.round,
        "dropout": model.gcn.dropout,
        "dtype": CHECKPOINT_DTYPE,
        "params": [
            {"name": name, "shape": list(arr.shape)} for name, arr in model.named_arrays()
        ],
    }
    manifest_path = prefix.with_suffix(".manifest.json")
    bin_path = prefix.with_suffix(".bin")
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    flat = np.concatenate([arr.ravel() for _, arr in model.named_arrays()])
    bin_path.write_bytes(flat.astype(CHECKPOINT_DTYPE).tobytes())
    return manifest_path, bin_path


def load_checkpoint(prefix: str | Path) -> GlobalModel:
    prefix = Path(prefix)
    manifest_path = prefix.with_suffix(".manifest.json")
    bin_path = prefix.with_suffix(".bin")
    if not manifest_path.exists() or not bin_path.exists():
        raise ValidationError(f"checkpoint {prefix} is missing manifest or binary")
    manifest = json.loads(manifest_path.read_text())
    flat = np.frombuffer(bin_path.read_bytes(), dtype=manifest["dtype"]).astype(np.float64)

    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for spec in manifest["params"]:
        shape = tuple(spec["shape"])
        size = int(np.prod(shape)) if shape else 1
        arrays[spec["name"]] = flat[offset : offset + size].reshape(shape).copy()
        offset += size
    if offset != flat.size:
        raise ValidationError("checkpoint binary size does not match manifest")

    model = GlobalModel(
        gcn=GcnParams(
            w1=arrays["gcn.w1"], w2=arrays["gcn.w2"], dropout=float(manifest["dropout"])
        ),
        selection=SelectionParams(
            w_q=arrays["selection.w_q"],
            w_k=arrays["selection.w_k"],
            w_s=arrays["selection.w_s"],
            gamma=arrays["selection.gamma"],
        ),
        fusion=FusionParams(
            w_g=arrays["fusion.w_g"],
            w_t=arrays["fusion.w_t"],
            w=arrays["fusion.w"],
            dec=arrays["fusion.dec"],
            dec_g=arrays["fusion.dec_g"],
            dec_t=arrays["fusion.dec_t"],
        ),
        round=int(manifest["round"]),
    )
    return model


def write_round_reports(reports: list[RoundReport], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for report in reports:
            fh.write(json.dumps(report.to_json_obj(), sort_keys=True) + "\n")
    return path


def write_summary(summary: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_rounds_csv(rows: list[dict], path: str | Path) -> Path:
    """Flat CSV of per-(seed, round) metrics for plotting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return path
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join("" if row[c] is None else str(row[c]) for c in cols))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
