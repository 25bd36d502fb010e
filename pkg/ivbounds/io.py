"""
Dataset and report files.

A dataset is a CSV with columns x_0..x_{d-1}, z, t, y next to a JSON
sidecar of the same stem holding seed, shape, outcome scale, labels and
provenance. Ground-truth strata, when known, go to ``<stem>.strata.csv``.
Floats are written with 17 significant digits, independent of locale.
"""

from json import dumps, loads
from logging import getLogger
from pathlib import Path

import numpy as np
import pandas as pd

from .core import IvDataset, Labels, build_dataset, stratum_name
from .errors import DataError

LOG = getLogger("IO")

FLOAT_FORMAT = "%.17g"


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def strata_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".strata.csv")


def dataset_frame(dataset: IvDataset) -> pd.DataFrame:
    frame = pd.DataFrame(dataset.x, columns=[f"x_{j}" for j in range(dataset.d)])
    frame["z"] = dataset.z
    frame["t"] = dataset.t
    frame["y"] = dataset.y
    return frame


def write_dataset(dataset: IvDataset, csv_path) -> Path:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    dataset_frame(dataset).to_csv(csv_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

    meta = {
        "seed": dataset.seed,
        "d": dataset.d,
        "n": dataset.n,
        "y_scale": None if dataset.y_scale is None else {"min": dataset.y_scale[0], "max": dataset.y_scale[1]},
        "provenance": dataset.provenance,
    }
    if dataset.labels is not None:
        meta["labels"] = dataset.labels.to_dict()
    if dataset.strata is not None:
        path = strata_path(csv_path)
        pd.DataFrame(dataset.strata, columns=[stratum_name(s) for s in range(16)]).to_csv(
            path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
        )
        meta["strata_file"] = path.name
    sidecar_path(csv_path).write_text(dumps(meta, indent=2, sort_keys=True) + "\n")
    LOG.debug(f"wrote {csv_path}")
    return csv_path


def read_dataset(csv_path) -> IvDataset:
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise DataError(f"dataset {csv_path} does not exist")
    frame = pd.read_csv(csv_path)
    missing = [c for c in ("z", "t", "y") if c not in frame.columns]
    if missing:
        raise DataError(f"{csv_path} is missing columns: {', '.join(missing)}")
    x_cols = sorted((c for c in frame.columns if c.startswith("x_")), key=lambda c: int(c[2:]))

    meta = {}
    if sidecar_path(csv_path).exists():
        meta = loads(sidecar_path(csv_path).read_text())
    labels = None
    if "labels" in meta:
        labels = Labels(**meta["labels"])
    scale = meta.get("y_scale")
    strata = None
    if "strata_file" in meta:
        strata = pd.read_csv(csv_path.parent / meta["strata_file"]).to_numpy(dtype=float)

    columns = (
        frame[x_cols].to_numpy(dtype=float).reshape(len(frame), len(x_cols)),
        frame["z"].to_numpy(),
        frame["t"].to_numpy(),
        frame["y"].to_numpy(dtype=float),
    )
    extra = {"seed": int(meta.get("seed", 0)), "provenance": meta.get("provenance", {}), "strata": strata}
    if scale is not None:
        return IvDataset(*columns, labels=labels, y_scale=(scale["min"], scale["max"]), **extra)

    # raw outcomes outside [0, 1] are min-max rescaled
    dataset = build_dataset(*columns, labels=labels, **extra)
    if dataset.y_scale is not None:
        LOG.info(f"{csv_path}: outcome rescaled from [{dataset.y_scale[0]:g}, {dataset.y_scale[1]:g}] to [0, 1]")
    return dataset


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def write_report(report: dict, path, fmt="json", rows_key=None) -> Path:
    """
    Write ``report`` as JSON, or the list under ``rows_key`` as CSV.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report = _plain(report)
    if fmt == "json":
        path.write_text(dumps(report, indent=2, sort_keys=True) + "\n")
    elif fmt == "csv":
        rows = report.get(rows_key) if rows_key else [report]
        pd.json_normalize(rows).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    else:
        raise DataError(f"unknown report format {fmt!r}")
    LOG.info(f"wrote {path}")
    return path
