"""On-disk labeled event datasets: one event file per sequence plus a JSON manifest."""

from __future__ import annotations

import json
import os

from evject.errors import ConfigurationError
from evject.events import read_event_file, synthetic_dataset, write_event_file

MANIFEST = "manifest.json"


def split_names(n_per_class, n_val):
    """Per-class split labels: the last ``n_val`` of each class are validation."""
    if not 0 <= n_val < n_per_class:
        raise ConfigurationError("n_val must be in [0, n_per_class)")
    return ["train"] * (n_per_class - n_val) + ["val"] * n_val


def save_dataset(streams, directory, splits=None, fmt="BIN", meta=None):
    os.makedirs(directory, exist_ok=True)
    ext = "bin" if fmt.upper() == "BIN" else "csv"
    entries = []
    for i, s in enumerate(streams):
        name = f"seq_{i:05d}.{ext}"
        with open(os.path.join(directory, name), "wb") as fh:
            fh.write(write_event_file(s, fmt))
        e = {"path": name, "label": s.label, "format": fmt.upper()}
        if splits is not None:
            e["split"] = splits[i]
        entries.append(e)
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        json.dump({"format": "evject-dataset", "meta": meta or {}, "sequences": entries}, fh, indent=2)
    return entries


def load_dataset(directory, split=None):
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise ConfigurationError(f"no dataset manifest in {directory}")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "evject-dataset":
        raise ConfigurationError(f"{path} is not a dataset manifest")
    out = []
    for e in manifest["sequences"]:
        if split is not None and e.get("split", "train") != split:
            continue
        with open(os.path.join(directory, e["path"]), "rb") as fh:
            out.append(read_event_file(fh.read(), e.get("format", "BIN"), label=e.get("label")))
    return out


def generate_dataset(directory, n_per_class, seed, n_val=0, profile=None, fmt="BIN"):
    streams = synthetic_dataset(n_per_class, seed, profile)
    per_class = split_names(n_per_class, n_val)
    n_classes = len(streams) // n_per_class
    splits = per_class * n_classes
    save_dataset(streams, directory, splits, fmt, meta={"seed": seed, "n_per_class": n_per_class})
    return streams
