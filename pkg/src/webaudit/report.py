"""Versioned JSON report envelope with atomic writes."""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from webaudit import __version__

REPORT_VERSION = 1


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def digest(payload):
    """sha256 of a canonical JSON rendering of the command inputs."""
    text = json.dumps(_clean(payload), sort_keys=True, separators=(",", ":"))
    return "sha256:" + hashlib.sha256(text.encode()).hexdigest()


def file_digest(paths):
    h = hashlib.sha256()
    for p in sorted(Path(x) for x in paths):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return "sha256:" + h.hexdigest()


def summarize(values, probes=None):
    """min/max/mean and the probes where |value| is largest and smallest."""
    idx = [k for k, v in enumerate(values) if v is not None and math.isfinite(v)]
    out = {"count": len(values), "evaluated": len(idx)}
    if not idx:
        return out
    vals = np.array([values[k] for k in idx], dtype=float)
    out.update(min=float(vals.min()), max=float(vals.max()), mean=float(vals.mean()),
               max_abs=float(np.abs(vals).max()))
    if probes is not None:
        worst = idx[int(np.argmax(np.abs(vals)))]
        best = idx[int(np.argmin(np.abs(vals)))]
        out["worst_probe"] = list(probes[worst])
        out["best_probe"] = list(probes[best])
    return out


def result_entry(name, verdict, tolerance=None, residuals=None, probes=None, full=False, **extra):
    entry = {"name": name, "verdict": verdict, "tolerance": tolerance}
    if residuals is not None:
        entry["summary"] = summarize(residuals, probes)
        if full:
            entry["residuals"] = list(residuals)
            if probes is not None:
                entry["probes"] = [list(p) for p in probes]
    else:
        entry["summary"] = {}
    entry.update(extra)
    return entry


def envelope(command, input_digest, tests, data=None, timing=None):
    return _clean({
        "version": REPORT_VERSION,
        "tool_version": __version__,
        "command": command,
        "input_digest": input_digest,
        "tests": tests,
        "data": data or {},
        "timing": timing or {},
    })


def dumps(report):
    return json.dumps(_clean(report), sort_keys=True, indent=2) + "\n"


def write_atomic(path, text, mode="w"):
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_report(report, path):
    return write_atomic(path, dumps(report))


def load_report(path):
    return json.loads(Path(path).read_text())


def mask_timing(report):
    """Copy with the wall-time block blanked, for golden comparisons."""
    out = json.loads(json.dumps(report))
    out["timing"] = {}
    return out
