"""Dataset manifests: the on-disk index of labeled/unlabeled/test trajectories.

A dataset directory looks like

    manifest.toml
    gen_config.toml          # provenance echo of the generation config
    traj_0000/obs_000.rpl    # observed frames (all splits)
    traj_0000/frame_000.rpl  # full-resolution frames (test split only)
    ...

The manifest is a human-readable key-value document (see kvdoc).  Splits are
disjoint by construction: every trajectory id and IC seed appears in exactly
one of train/unlabeled/test.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List

from .errors import FormatError, IncompleteDataset, InvalidObservation
from .grid import ObservationSpec
from . import kvdoc

MANIFEST_NAME = "manifest.toml"


@dataclass
class TrajectoryEntry:
    traj_id: int
    split: str          # "train" | "unlabeled" | "test"
    seed: int
    subdir: str
    n_frames: int


@dataclass
class DatasetManifest:
    system: str
    system_params: Dict[str, float]
    obs: ObservationSpec
    channels: int
    ny: int
    nx: int
    n_window: int
    tau: float
    dt: float
    noise_pct: float
    master_seed: int
    trajectories: List[TrajectoryEntry] = field(default_factory=list)

    def split_entries(self, split: str) -> List[TrajectoryEntry]:
        return [t for t in self.trajectories if t.split == split]

    def validate(self) -> None:
        ids = [t.traj_id for t in self.trajectories]
        if len(set(ids)) != len(ids):
            raise InvalidObservation("trajectory ids overlap across splits")
        seeds = [t.seed for t in self.trajectories]
        if len(set(seeds)) != len(seeds):
            raise InvalidObservation("trajectory IC seeds overlap across splits")
        for t in self.trajectories:
            if t.split not in ("train", "unlabeled", "test"):
                raise FormatError(f"unknown split {t.split!r}")

    def obs_path(self, entry: TrajectoryEntry, k: int) -> str:
        return os.path.join(entry.subdir, f"obs_{k:03d}.rpl")

    def frame_path(self, entry: TrajectoryEntry, k: int) -> str:
        return os.path.join(entry.subdir, f"frame_{k:03d}.rpl")


def _obs_to_doc(spec: ObservationSpec) -> Dict:
    d = {"kind": spec.kind, "ny": spec.source_shape[0], "nx": spec.source_shape[1]}
    if spec.kind == "regular":
        d["gap"] = spec.gap
    else:
        d["rows"] = [int(r) for r, _ in spec.points]
        d["cols"] = [int(c) for _, c in spec.points]
    return d


def _obs_from_doc(d: Dict) -> ObservationSpec:
    shape = (int(d["ny"]), int(d["nx"]))
    if d["kind"] == "regular":
        return ObservationSpec.regular(int(d["gap"]), shape)
    points = list(zip(d["rows"], d["cols"]))
    return ObservationSpec.irregular(points, shape)


def save_manifest(man: DatasetManifest, dir_path) -> str:
    man.validate()
    doc = {
        "format": "partialpde-dataset-v1",
        "system": man.system,
        "channels": man.channels,
        "ny": man.ny,
        "nx": man.nx,
        "n_window": man.n_window,
        "tau": man.tau,
        "dt": man.dt,
        "noise_pct": man.noise_pct,
        "master_seed": man.master_seed,
        "system_param_names": sorted(man.system_params),
        "system_param_values": [float(man.system_params[k]) for k in sorted(man.system_params)],
        "observation": _obs_to_doc(man.obs),
        "trajectories": [
            {"id": t.traj_id, "split": t.split, "seed": t.seed,
             "dir": t.subdir, "frames": t.n_frames}
            for t in man.trajectories
        ],
    }
    os.makedirs(dir_path, exist_ok=True)
    path = os.path.join(dir_path, MANIFEST_NAME)
    kvdoc.dump(doc, path)
    return path


def load_manifest(dir_path, check_files: bool = True) -> DatasetManifest:
    path = os.path.join(dir_path, MANIFEST_NAME)
    if not os.path.exists(path):
        raise IncompleteDataset(f"no {MANIFEST_NAME} in {dir_path}")
    doc = kvdoc.load(path)
    if doc.get("format") != "partialpde-dataset-v1":
        raise FormatError(f"unknown manifest format {doc.get('format')!r}")
    params = dict(zip(doc.get("system_param_names", []),
                      doc.get("system_param_values", [])))
    man = DatasetManifest(
        system=doc["system"],
        system_params=params,
        obs=_obs_from_doc(doc["observation"]),
        channels=int(doc["channels"]),
        ny=int(doc["ny"]),
        nx=int(doc["nx"]),
        n_window=int(doc["n_window"]),
        tau=float(doc["tau"]),
        dt=float(doc["dt"]),
        noise_pct=float(doc["noise_pct"]),
        master_seed=int(doc["master_seed"]),
        trajectories=[
            TrajectoryEntry(traj_id=int(t["id"]), split=t["split"], seed=int(t["seed"]),
                            subdir=t["dir"], n_frames=int(t["frames"]))
            for t in doc.get("trajectories", [])
        ],
    )
    man.validate()
    if check_files:
        for t in man.trajectories:
            for k in range(t.n_frames):
                p = os.path.join(dir_path, man.obs_path(t, k))
                if not os.path.exists(p):
                    raise IncompleteDataset(f"missing tensor file {p}")
                if t.split == "test":
                    p = os.path.join(dir_path, man.frame_path(t, k))
                    if not os.path.exists(p):
                        raise IncompleteDataset(f"missing tensor file {p}")
    return man
