"""Plain-text field dumps.

A dump is one JSON header line (prefixed by ``#``) describing the chart and
the form degree, followed by CSV rows ``i,j,k,l,component,algebra,value``.
Values are written with ``float.hex`` so the round trip is bit exact.
"""

import csv
import io
import json

import numpy as np

from ..geometry import ChartSpec
from .forms import DEGREE_TAIL, check_degree

COLUMNS = ("i", "j", "k", "l", "component", "algebra", "value")


def _degree_key(degree):
    return degree if degree == "SD" else int(degree)


def dump_field(path_or_buffer, chart, values, degree, extra=None):
    values = np.asarray(values, dtype=float)
    check_degree(values, degree)
    if values.shape[:4] != chart.shape:
        raise ValueError(f"field grid {values.shape[:4]} does not match chart {chart.shape}")
    header = {
        "chart": {
            "size": chart.size,
            "resolution": chart.resolution,
            "marked_L": list(chart.marked_L),
            "marked_R": list(chart.marked_R),
            "periodic": chart.periodic,
        },
        "degree": degree,
        "columns": list(COLUMNS),
    }
    if extra:
        header["extra"] = extra
    flat = values.reshape(chart.shape + (-1, 3))
    ncomp = flat.shape[4]
    own = isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__")
    fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for idx in np.ndindex(*chart.shape):
            block = flat[idx]
            for c in range(ncomp):
                for a in range(3):
                    w.writerow((*idx, c, a, float(block[c, a]).hex()))
    finally:
        if own:
            fh.close()


def load_field(path_or_buffer):
    """Return ``(chart, values, degree, header)``."""
    own = isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__")
    fh = open(path_or_buffer, newline="") if own else path_or_buffer
    try:
        first = fh.readline()
        if not first.startswith("#"):
            raise ValueError("missing JSON header line")
        header = json.loads(first[1:])
        c = header["chart"]
        chart = ChartSpec(c["size"], c["resolution"], tuple(c["marked_L"]), tuple(c["marked_R"]), c["periodic"])
        degree = _degree_key(header["degree"])
        tail = DEGREE_TAIL[degree]
        ncomp = 1 if len(tail) == 1 else tail[0]
        out = np.full(chart.shape + (ncomp, 3), np.nan)
        reader = csv.reader(fh)
        if tuple(next(reader)) != COLUMNS:
            raise ValueError("unexpected column header")
        for row in reader:
            i, j, k, l, comp, alg = (int(v) for v in row[:6])
            out[i, j, k, l, comp, alg] = float.fromhex(row[6])
    finally:
        if own:
            fh.close()
    if np.isnan(out).any():
        raise ValueError("dump is missing entries")
    return chart, out.reshape(chart.shape + tail), degree, header


def dumps_field(chart, values, degree):
    buf = io.StringIO()
    dump_field(buf, chart, values, degree)
    return buf.getvalue()
