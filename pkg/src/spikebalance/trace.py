"""Per-step recordings of a closed-loop trial and their CSV/JSON persistence."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError

TRACE_SCHEMA = "spikebalance.trace/1"

ENV_VARIABLES = ("theta", "omega", "x", "v")
SENSOR_CHANNELS = tuple(f"S{j}" for j in range(1, 8))
POTENTIAL_CHANNELS = ("V1", "V2")
SPIKE_CHANNELS = ("spike1", "spike2")
RATE_CHANNELS = ("R1", "R2")
MOTOR_CHANNELS = ("M1", "M2")
NETWORK_ELEMENTS = (SENSOR_CHANNELS + POTENTIAL_CHANNELS + SPIKE_CHANNELS
                    + RATE_CHANNELS + MOTOR_CHANNELS)
CHANNELS = ("step",) + ENV_VARIABLES + NETWORK_ELEMENTS + ("force",)

#: element class -> member channels, used for class-level MI summaries
ELEMENT_CLASSES = {
    "S": SENSOR_CHANNELS,
    "V": POTENTIAL_CHANNELS,
    "spike": SPIKE_CHANNELS,
    "R": RATE_CHANNELS,
    "M": MOTOR_CHANNELS,
}


@dataclass
class Trace:
    """Columnar recording of one trial.

    Row ``k`` holds the environment state seen by the sensors at step ``k``
    together with the controller state and force produced from it.
    """

    columns: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = [c for c in CHANNELS if c not in self.columns]
        if missing:
            raise SchemaError(f"trace is missing channels: {', '.join(missing)}")
        self.columns = {c: np.asarray(self.columns[c], dtype=float) for c in CHANNELS}
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise SchemaError(f"trace channels have unequal lengths: {sorted(lengths)}")

    def __len__(self):
        return len(self.columns["step"])

    def __getitem__(self, channel):
        try:
            return self.columns[channel]
        except KeyError:
            raise SchemaError(f"trace has no channel {channel!r}") from None

    @classmethod
    def empty_buffers(cls, n):
        return {c: np.zeros(n) for c in CHANNELS}

    def to_csv(self, path, header_comment=None):
        path = Path(path)
        with path.open("w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CHANNELS)
            cols = [self.columns[c] for c in CHANNELS]
            for k in range(len(self)):
                writer.writerow(_fmt(col[k]) for col in cols)
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps({"schema": TRACE_SCHEMA, **self.meta},
                                      indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        if not rows:
            raise SchemaError(f"{path}: empty trace file")
        header, body = rows[0], rows[1:]
        missing = [c for c in CHANNELS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing channels {', '.join(missing)}")
        data = np.array(body, dtype=float).reshape(len(body), len(header))
        columns = {name: data[:, i] for i, name in enumerate(header)}
        meta = {}
        sidecar = path.with_suffix(".json")
        if sidecar.exists():
            meta = json.loads(sidecar.read_text())
            if meta.pop("schema", TRACE_SCHEMA) != TRACE_SCHEMA:
                raise SchemaError(f"{sidecar}: unsupported trace schema")
        return cls(columns, meta)


def _fmt(value):
    # repr round-trips float64 exactly
    value = float(value)
    if value.is_integer() and abs(value) < 2**53:
        return str(int(value))
    return repr(value)
