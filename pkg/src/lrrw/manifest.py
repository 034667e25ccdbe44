"""Experiment manifests: enough to reproduce an ensemble bit for bit."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

from .engine import SimConfig, generator_identity
from .model import Regime, derive_constants, superdiffusive_constants


def git_blob_hash(data: bytes) -> str:
    """Content hash in git's blob format: ``sha1("blob <len>\\0" + data)``."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


@dataclass
class ExperimentManifest:
    config: dict
    constants: dict
    master_seed: int
    generator: str = field(default_factory=generator_identity)
    started: str = field(default_factory=utc_now)
    finished: Optional[str] = None
    input_hash: str = ""
    outputs: dict = field(default_factory=dict)

    @classmethod
    def for_config(cls, config: SimConfig) -> "ExperimentManifest":
        c = derive_constants(config.params)
        consts = c.as_dict()
        if c.regime is Regime.SUPERDIFFUSIVE:
            consts["superdiffusive"] = superdiffusive_constants(config.params).as_dict()
        cfg = config.as_dict()
        return cls(config=cfg, constants=consts, master_seed=config.master_seed, input_hash=git_blob_hash(_canonical(cfg)))

    def sim_config(self, **overrides) -> SimConfig:
        return SimConfig.from_dict(self.config, **overrides)

    def record_output(self, path) -> None:
        self.outputs[os.path.basename(path)] = file_sha256(path)

    def finish(self) -> None:
        self.finished = utc_now()

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "constants": self.constants,
            "master_seed": self.master_seed,
            "generator": self.generator,
            "started": self.started,
            "finished": self.finished,
            "input_hash": self.input_hash,
            "outputs": self.outputs,
        }

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2)

    @classmethod
    def read(cls, path) -> "ExperimentManifest":
        with open(path) as fh:
            d = json.load(fh)
        return cls(**d)
