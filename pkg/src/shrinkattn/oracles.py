"""Slow reference implementations, kept independent of the fast paths they check."""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Sequence

import numpy as np


def window_mean_pool(grid, kernel: int, stride: int, pad: int) -> list:
    """Average pooling by explicit window enumeration in exact rationals.

    ``grid`` is a nested [H][W][C] list; padding cells are left out of the mean.
    """
    h, w, c = len(grid), len(grid[0]), len(grid[0][0])
    out = []
    for oy in range((h + 2 * pad - kernel) // stride + 1):
        row = []
        for ox in range((w + 2 * pad - kernel) // stride + 1):
            cell = []
            for ch in range(c):
                vals = [
                    Fraction(grid[y][x][ch])
                    for y in range(oy * stride - pad, oy * stride - pad + kernel)
                    for x in range(ox * stride - pad, ox * stride - pad + kernel)
                    if 0 <= y < h and 0 <= x < w
                ]
                cell.append(sum(vals) / len(vals))
            row.append(cell)
        out.append(row)
    return out


def left_associated_factor_att(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(q / sqrt(d) softmax_tokens(k)^T) v, forming the N x N matrix first."""
    d = q.shape[1]
    e = np.exp(k - k.max(axis=0, keepdims=True))
    sk = e / e.sum(axis=0, keepdims=True)
    return ((q / math.sqrt(d)) @ sk.T) @ v


def naive_softmax_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Per-query loop over keys."""
    n, d = q.shape
    out = np.zeros_like(v)
    for i in range(n):
        s = np.array([float(q[i] @ k[j]) / math.sqrt(d) for j in range(n)])
        w = np.exp(s - s.max())
        out[i] = (w / w.sum()) @ v
    return out


def _exact_iou(a, b) -> Fraction:
    ax, ay, aw, ah = (Fraction(v) for v in a)
    bx, by, bw, bh = (Fraction(v) for v in b)
    iw = max(Fraction(0), min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(Fraction(0), min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else Fraction(0)


def brute_force_labels(dets: Sequence[dict], gts: Sequence[dict], fg=Fraction(1, 2), bg=Fraction(1, 10)):
    """Label detections by scanning every GT for every detection.

    ``dets`` and ``gts`` are plain dicts (``image_id``, ``bbox``, ``cls`` and
    ``score``), already in score order. Returns (det labels, gt states).
    """
    consumed = set()
    labels = []
    for d in dets:
        best = {True: (None, Fraction(-1)), False: (None, Fraction(-1))}
        for j, g in enumerate(gts):
            if g["image_id"] != d["image_id"] or j in consumed:
                continue
            v = _exact_iou(d["bbox"], g["bbox"])
            same = g["cls"] == d["cls"]
            if v > best[same][1]:
                best[same] = (j, v)
        (sj, sv), (oj, ov) = best[True], best[False]
        if sj is not None and sv >= fg:
            consumed.add(sj)
            labels.append("TP")
        elif oj is not None and ov >= fg:
            labels.append("cls_error")
        elif sj is not None and sv >= bg:
            labels.append("loc_error")
        else:
            labels.append("FP")
    states = []
    for j, g in enumerate(gts):
        if j in consumed:
            states.append("matched")
        elif any(d["image_id"] == g["image_id"] and _exact_iou(d["bbox"], g["bbox"]) >= bg for d in dets):
            states.append("covered")
        else:
            states.append("missed")
    return labels, states


def recall_grid_ap(dets: Sequence[dict], labels: Sequence[str], gts: Sequence[dict]) -> Fraction:
    """Mean over GT classes of max-precision-at-recall over the 101 grid points."""
    classes = sorted({g["cls"] for g in gts})
    total = Fraction(0)
    for c in classes:
        npos = sum(g["cls"] == c for g in gts)
        points = []
        tp = seen = 0
        for d, lab in zip(dets, labels):
            if d["cls"] != c:
                continue
            seen += 1
            tp += lab == "TP"
            points.append((Fraction(tp, npos), Fraction(tp, seen)))
        acc = Fraction(0)
        for r in range(101):
            eligible = [p for rec, p in points if rec >= Fraction(r, 100)]
            acc += max(eligible) if eligible else Fraction(0)
        total += acc / 101
    return total / len(classes)
