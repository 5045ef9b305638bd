"""Mask-pattern rasters (binary PPM) and accuracy-curve plots (SVG).

Mask raster: one P6 image, width L, one row per sequence, with one block of
rows per alpha stacked top to bottom in the order given. Retained positions
are blue (0, 0, 255), masked positions red (255, 0, 0).
"""

from __future__ import annotations

import io

import numpy as np

from attngen.model import AttnGenModel, select_mask_indices

BLUE = (0, 0, 255)
RED = (255, 0, 0)


def mask_matrix(model: AttnGenModel, tokens, alpha):
    """(N, L) 0/1 matrix of positions masked at ``alpha`` (eval-mode attention)."""
    _, attention = model.forward(np.asarray(tokens), mode="eval")
    plan = select_mask_indices(attention, alpha)
    masked = np.zeros(attention.weights.shape, dtype=np.uint8)
    if plan.k:
        np.put_along_axis(masked, plan.indices, 1, axis=1)
    return masked


def render_mask_patterns(model: AttnGenModel, tokens, alphas):
    """Returns (ppm_bytes, csv_text) for every (sequence, alpha) pair."""
    tokens = np.asarray(tokens)
    if tokens.size == 0 or not len(alphas):
        raise ValueError("render_mask_patterns needs sequences and at least one alpha")
    blocks = [(alpha, mask_matrix(model, tokens, alpha)) for alpha in alphas]
    rows = np.concatenate([m for _, m in blocks])
    height, width = rows.shape
    pixels = np.empty((height, width, 3), dtype=np.uint8)
    pixels[rows == 0] = BLUE
    pixels[rows == 1] = RED
    ppm = f"P6\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes()

    buf = io.StringIO()
    buf.write("seq_index,alpha,position,masked\n")
    for alpha, masked in blocks:
        for i, row in enumerate(masked):
            for pos, flag in enumerate(row):
                buf.write(f"{i},{alpha!r},{pos},{int(flag)}\n")
    return ppm, buf.getvalue()


def read_ppm(blob: bytes):
    """Decode a P6 image written by ``render_mask_patterns`` to (H, W, 3)."""
    header, rest = blob.split(b"\n", 3)[:3], blob.split(b"\n", 3)[3]
    if header[0] != b"P6":
        raise ValueError("not a binary PPM")
    width, height = (int(v) for v in header[1].split())
    return np.frombuffer(rest, dtype=np.uint8).reshape(height, width, 3)


def _fmt(x):
    return f"{x:.2f}"


def render_accuracy_curve(curve, width=640, height=400, title=None):
    """Standalone SVG: mean accuracy vs masked count with a +-1 std band.

    The band is clamped to [0, 100].
    """
    rows = curve.rows
    if len(rows) < 2:
        raise ValueError("an accuracy curve needs at least two rows")
    left, right, top, bottom = 70, 20, 40, 60
    plot_w, plot_h = width - left - right, height - top - bottom
    m_max = max(r.m for r in rows) or 1

    def sx(m):
        return left + plot_w * m / m_max

    def sy(acc):
        return top + plot_h * (1 - acc / 100.0)

    upper = [(sx(r.m), sy(min(100.0, r.mean_acc + r.std))) for r in rows]
    lower = [(sx(r.m), sy(max(0.0, r.mean_acc - r.std))) for r in rows]
    line = [(sx(r.m), sy(r.mean_acc)) for r in rows]

    def pts(seq):
        return " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in seq)

    out = io.StringIO()
    out.write('<?xml version="1.0" encoding="UTF-8"?>\n')
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
              f'viewBox="0 0 {width} {height}">\n')
    out.write(f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>\n')
    label = title or f"Accuracy under {curve.order}-importance occlusion"
    out.write(f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15" '
              f'font-family="sans-serif">{label}</text>\n')
    # axes and ticks
    x0, y0 = left, top + plot_h
    out.write(f'<line x1="{x0}" y1="{y0}" x2="{x0 + plot_w}" y2="{y0}" stroke="black"/>\n')
    out.write(f'<line x1="{x0}" y1="{top}" x2="{x0}" y2="{y0}" stroke="black"/>\n')
    for acc in range(0, 101, 20):
        y = sy(acc)
        out.write(f'<line x1="{x0 - 5}" y1="{_fmt(y)}" x2="{x0}" y2="{_fmt(y)}" stroke="black"/>\n')
        out.write(f'<text x="{x0 - 8}" y="{_fmt(y + 4)}" text-anchor="end" font-size="11" '
                  f'font-family="sans-serif">{acc}</text>\n')
    for r in rows:
        x = sx(r.m)
        out.write(f'<line x1="{_fmt(x)}" y1="{y0}" x2="{_fmt(x)}" y2="{y0 + 5}" stroke="black"/>\n')
        out.write(f'<text x="{_fmt(x)}" y="{y0 + 18}" text-anchor="middle" font-size="10" '
                  f'font-family="sans-serif">{r.m}</text>\n')
    out.write(f'<text x="{left + plot_w / 2:.1f}" y="{height - 15}" text-anchor="middle" font-size="13" '
              f'font-family="sans-serif">Masked positions (m)</text>\n')
    out.write(f'<text x="18" y="{top + plot_h / 2:.1f}" text-anchor="middle" font-size="13" '
              f'font-family="sans-serif" transform="rotate(-90 18 {top + plot_h / 2:.1f})">'
              f'Accuracy (%)</text>\n')
    out.write(f'<polygon class="band" points="{pts(upper + lower[::-1])}" fill="#1f77b4" '
              f'fill-opacity="0.2" stroke="none"/>\n')
    out.write(f'<polyline class="mean" points="{pts(line)}" fill="none" stroke="#1f77b4" '
              f'stroke-width="2"/>\n')
    out.write("</svg>\n")
    return out.getvalue()
