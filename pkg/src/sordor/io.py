"""Waveform JSON, shape files, CSV tables and run manifests."""
import csv
import io
import json
import os
import platform
import sys
import tempfile
from pathlib import Path

import numpy as np

from .errors import SchemaError, UnsupportedVersionError
from .grape import PulseWaveform

WAVEFORM_SCHEMA = "sordor.waveform"
WAVEFORM_VERSION = 1
_WAVEFORM_FIELDS = ("phases", "amplitude", "dt", "metadata")
_METADATA_FIELDS = ("b", "Q", "beta", "bandwidth")


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def waveform_to_dict(waveform):
    return {
        "schema": WAVEFORM_SCHEMA,
        "version": WAVEFORM_VERSION,
        "phases": [float(p) for p in waveform.phases],
        "amplitude": float(waveform.amplitude),
        "dt": float(waveform.dt),
        "metadata": {k: waveform.metadata[k] for k in sorted(waveform.metadata)},
    }


def waveform_from_dict(data):
    if not isinstance(data, dict):
        raise SchemaError("waveform document must be a JSON object")
    if data.get("schema", WAVEFORM_SCHEMA) != WAVEFORM_SCHEMA:
        raise SchemaError(f"not a waveform document: schema={data.get('schema')!r}")
    version = data.get("version")
    if version is None:
        raise SchemaError("missing required field 'version'")
    if version != WAVEFORM_VERSION:
        raise UnsupportedVersionError(
            f"waveform schema version {version!r} is not supported "
            f"(this build reads version {WAVEFORM_VERSION})"
        )
    for name in _WAVEFORM_FIELDS:
        if name not in data:
            raise SchemaError(f"missing required field {name!r}")
    meta = data["metadata"]
    for name in _METADATA_FIELDS:
        if name not in meta:
            raise SchemaError(f"missing required field 'metadata.{name}'")
    return PulseWaveform(
        phases=np.array(data["phases"], dtype=float),
        amplitude=float(data["amplitude"]),
        dt=float(data["dt"]),
        metadata=dict(meta),
    )


def dumps_json(obj):
    # repr-exact floats: json uses float.__repr__, which round-trips
    return json.dumps(obj, indent=1, sort_keys=False) + "\n"


def write_waveform(path, waveform):
    atomic_write_text(path, dumps_json(waveform_to_dict(waveform)))


def read_waveform(path):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    return waveform_from_dict(data)


def shape_text(waveform, title="sordor pulse"):
    """Spectrometer-style shape file: amplitude percent and phase in degrees."""
    amp_hz = waveform.amplitude / (2 * np.pi)
    lines = [
        f"# title: {title}",
        f"# N: {waveform.slices}",
        f"# duration_us: {waveform.duration * 1e6!r}",
        f"# max_amplitude_hz: {amp_hz!r}",
    ]
    for key in _METADATA_FIELDS:
        if key in waveform.metadata:
            lines.append(f"# {key}: {waveform.metadata[key]!r}")
    degrees = np.mod(np.degrees(waveform.phases), 360.0)
    lines += [f"{100.0:.6f} {d:.9f}" for d in degrees]
    return "\n".join(lines) + "\n"


def write_shape(path, waveform, title="sordor pulse"):
    atomic_write_text(path, shape_text(waveform, title))


def read_shape(path):
    """Parse a shape file written by :func:`write_shape`.

    Returns the waveform (phases wrapped to [0, 2 pi)) and the per-slice
    amplitude fractions.
    """
    header = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                header[key.strip()] = value.strip()
                continue
            amp, phase = line.split()
            rows.append((float(amp), float(phase)))
    for key in ("N", "duration_us", "max_amplitude_hz"):
        if key not in header:
            raise SchemaError(f"{path}: missing header field {key!r}")
    n = int(header["N"])
    if len(rows) != n:
        raise SchemaError(f"{path}: header says N={n} but found {len(rows)} data lines")
    data = np.array(rows)
    duration = float(header["duration_us"]) * 1e-6
    max_amp = 2 * np.pi * float(header["max_amplitude_hz"])
    metadata = {k: float(header[k]) for k in _METADATA_FIELDS if k in header}
    waveform = PulseWaveform(
        phases=np.radians(data[:, 1]),
        amplitude=max_amp,
        dt=duration / n,
        metadata=metadata,
    )
    return waveform, data[:, 0] / 100.0


def csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    atomic_write_text(path, csv_text(header, rows))


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def environment_versions():
    import numba
    import scipy

    from . import __version__
    from ._accel import BACKEND

    return {
        "sordor": __version__,
        "python": sys.version.split()[0],
        "platform": platform.platform(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "backend": BACKEND,
    }


def write_manifest(path, command, argv, config, seeds=None, inputs=None, outputs=None, notes=None):
    """Reproducibility manifest for one CLI run."""
    doc = {
        "schema": "sordor.run-manifest",
        "version": 1,
        "command": command,
        "argv": list(argv),
        "config": config,
        "seeds": seeds or {},
        "inputs": inputs or {},
        "outputs": outputs or [],
        "notes": notes or [],
        "versions": environment_versions(),
    }
    atomic_write_text(path, dumps_json(doc))
    return doc
