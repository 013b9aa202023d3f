"""On-disk formats: JSON-lines datasets, CSV tables, JSON result traces.

Every file embeds its schema version, the resolved configuration and the
seeds used, so a run can be reproduced byte-identically from its outputs.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .noise import OU, RTN, NoiseModel, TimeGrid
from .simulator import DatasetRecord, SimConfig

__all__ = [
    "noise_to_dict",
    "noise_from_dict",
    "sim_config_to_dict",
    "sim_config_from_dict",
    "write_dataset",
    "read_dataset",
    "iter_dataset",
    "write_csv",
    "write_json",
    "sha256_file",
]

DATASET_SCHEMA = "grayqc.dataset.v1"


def noise_to_dict(noise: NoiseModel) -> dict:
    if isinstance(noise, RTN):
        return {"kind": "rtn", "gamma": noise.gamma}
    if isinstance(noise, OU):
        return {"kind": "ou", "k": noise.k, "D": noise.D}
    raise TypeError(f"unknown noise model: {noise!r}")


def noise_from_dict(d: dict) -> NoiseModel:
    kind = d.get("kind")
    if kind == "rtn":
        return RTN(d["gamma"])
    if kind == "ou":
        return OU(d["k"], d["D"])
    raise ValueError(f"unknown noise kind: {kind!r}")


def sim_config_to_dict(config: SimConfig) -> dict:
    return {
        "noise": noise_to_dict(config.noise),
        "coupling": config.coupling,
        "seed": config.seed,
        "t_end": config.grid.t_end,
        "steps": config.grid.steps,
        "realizations": config.realizations,
    }


def sim_config_from_dict(d: dict) -> SimConfig:
    return SimConfig(
        noise=noise_from_dict(d["noise"]),
        coupling=d["coupling"],
        seed=d["seed"],
        grid=TimeGrid(d["t_end"], d["steps"]),
        realizations=d["realizations"],
    )


def write_dataset(
    path, records: Iterable[DatasetRecord], config: SimConfig, seed: int, count: int
) -> None:
    """JSON-lines file: one header line, then one record per line."""
    header = {
        "schema": DATASET_SCHEMA,
        "count": count,
        "seed": int(seed),
        "sim_config": sim_config_to_dict(config),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            line = {
                "input": rec.normalized_input.tolist(),
                "expectations": rec.expectations.tolist(),
                "fidelities": rec.fidelities.tolist(),
                "coupling": rec.coupling,
                "noise": noise_to_dict(rec.noise),
                "seed": int(rec.seed),
            }
            fh.write(json.dumps(line, sort_keys=True) + "\n")


def iter_dataset(path) -> Iterator[DatasetRecord]:
    """Stream records from a dataset file (skipping the header)."""
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != DATASET_SCHEMA:
            raise ValueError(f"{path}: unknown dataset schema {header.get('schema')!r}")
        for line in fh:
            d = json.loads(line)
            yield DatasetRecord(
                normalized_input=np.array(d["input"]),
                expectations=np.array(d["expectations"]),
                fidelities=np.array(d["fidelities"]),
                coupling=d["coupling"],
                noise=noise_from_dict(d["noise"]),
                seed=d["seed"],
            )


def read_dataset(path) -> tuple[dict, list[DatasetRecord]]:
    with open(path) as fh:
        header = json.loads(fh.readline())
    return header, list(iter_dataset(path))


def write_csv(path, columns: list[str], rows: list[list]) -> None:
    """Plain CSV with deterministic float formatting."""

    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return f"{float(v):.12g}"
        return str(v)

    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
