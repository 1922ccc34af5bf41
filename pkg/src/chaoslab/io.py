"""CSV tables, standalone SVG line plots and the MLP text format.

Floats are written with 17 significant digits so every double survives a
write/read round trip bit for bit.

MLP text format::

    4 8 2 sigmoid          <- layer sizes, then the output activation
    <one parameter per line>

Parameters follow :meth:`chaoslab.ann.MLP.parameter_vector` order: for each
layer the weight matrix row by row, then that layer's biases.
"""
import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .ann import ACTIVATIONS, MLP
from .exceptions import ConfigurationError


def format_float(x):
    return format(float(x), ".17g")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def emit_csv(table, path):
    """Write ``(header, rows)`` to ``path``; rows may be a 2-D array or tuples."""
    header, rows = table
    rows = list(rows)
    if not rows:
        raise ConfigurationError("refusing to write an empty table")
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    return path


def read_csv(path):
    """Return ``(header, columns)`` where numeric columns come back as float arrays."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        raw = list(reader)
    columns = {}
    for k, name in enumerate(header):
        values = [r[k] for r in raw]
        try:
            columns[name] = np.array([float(v) for v in values])
        except ValueError:
            columns[name] = values
    return header, columns


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def emit_svg_plot(series, path, title="", xlabel="", ylabel="", width=640, height=400,
                  max_points=4000):
    """Write one ``<polyline>`` per ``(label, xs, ys)`` series with axes and min/max labels.

    Long series are decimated evenly to ``max_points`` vertices.
    """
    series = [(str(lbl), np.asarray(x, float), np.asarray(y, float)) for lbl, x, y in series]
    if not series or any(x.size == 0 or x.size != y.size for _, x, y in series):
        raise ConfigurationError("every series needs matching, non-empty x and y")
    xs = np.concatenate([x for _, x, _ in series])
    ys = np.concatenate([y for _, _, y in series])
    x0, x1 = float(np.nanmin(xs)), float(np.nanmax(xs))
    y0, y1 = float(np.nanmin(ys)), float(np.nanmax(ys))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    left, right, top, bottom = 70, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (y1 - y) / (y1 - y0) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<text x="{left}" y="{top + ph + 18}" font-size="11">{x0:.4g}</text>',
        f'<text x="{left + pw}" y="{top + ph + 18}" font-size="11" '
        f'text-anchor="end">{x1:.4g}</text>',
        f'<text x="{left - 6}" y="{top + ph}" font-size="11" text-anchor="end">{y0:.4g}</text>',
        f'<text x="{left - 6}" y="{top + 10}" font-size="11" text-anchor="end">{y1:.4g}</text>',
    ]
    if title:
        out.append(f'<text x="{width / 2}" y="18" font-size="14" '
                   f'text-anchor="middle">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2}" y="{height - 10}" font-size="12" '
                   f'text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{top + ph / 2}" font-size="12" text-anchor="middle" '
                   f'transform="rotate(-90 14 {top + ph / 2})">{escape(ylabel)}</text>')
    for k, (label, x, y) in enumerate(series):
        if x.size > max_points:
            idx = np.linspace(0, x.size - 1, max_points).round().astype(int)
            x, y = x[idx], y[idx]
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y)
                       if math.isfinite(a) and math.isfinite(b))
        color = _PALETTE[k % len(_PALETTE)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{pts}">'
                   f'<title>{escape(label)}</title></polyline>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


def dumps_mlp(net):
    lines = [" ".join(str(n) for n in net.layer_sizes) + " " + net.output_activation]
    lines += [format_float(v) for v in net.parameter_vector()]
    return "\n".join(lines) + "\n"


def loads_mlp(text):
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ConfigurationError("empty MLP file")
    head = lines[0].split()
    activation = "sigmoid"
    if head and head[-1] in ACTIVATIONS:
        activation = head.pop()
    try:
        sizes = tuple(int(v) for v in head)
        values = np.array([float(v) for v in lines[1:]])
    except ValueError as exc:
        raise ConfigurationError(f"malformed MLP file: {exc}") from None
    return MLP.from_vector(sizes, values, activation)


def save_mlp(net, path):
    Path(path).write_text(dumps_mlp(net))
    return Path(path)


def load_mlp(path):
    return loads_mlp(Path(path).read_text())
