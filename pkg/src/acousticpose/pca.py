"""PCA projection and silhouette scoring for the feature-separability study.

The study renders the same pose clips under different sensing signals,
projects the flattened input features to 2D, and asks how well the pose
clusters separate. PCA uses an exact eigendecomposition: of the covariance
when the feature dimension is small, of the Gram matrix otherwise (same
nonzero spectrum, cheaper when samples are fewer than dimensions).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SeparabilityReport:
    points: np.ndarray  # [n, 2]
    labels: list
    silhouette: float
    explained: list  # top-2 eigenvalue share
    eigvals: np.ndarray = field(repr=False, default=None)

    def cluster_names(self):
        return sorted(set(self.labels))


def pairwise_dist(points):
    p = np.asarray(points, dtype=np.float64)
    sq = (p * p).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (p @ p.T)
    return np.sqrt(np.maximum(d2, 0.0))


def silhouette(points, labels):
    """Mean silhouette over all points, Euclidean distance.

    Singleton clusters score 0; a point with zero distance to everything
    scores 0 rather than dividing by zero.
    """
    labels = list(labels)
    uniq = sorted(set(labels))
    if len(uniq) < 2:
        raise ValueError("silhouette needs at least two clusters")
    lab = np.array([uniq.index(l) for l in labels])
    d = pairwise_dist(points)
    n = len(labels)
    scores = np.zeros(n)
    for i in range(n):
        same = lab == lab[i]
        n_same = same.sum() - 1
        if n_same == 0:
            continue
        a = d[i][same].sum() / n_same
        b = np.inf
        for c in range(len(uniq)):
            if c == lab[i]:
                continue
            mask = lab == c
            b = min(b, d[i][mask].mean())
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def pca_project(x, n_components=2):
    """Exact PCA. Returns (projected [n,k], eigvals desc [r], mean [D]).

    x: [n, D] (higher-rank input is flattened per sample). Uses the Gram
    matrix when D > n; eigenvalues are those of the sample covariance either
    way (ddof=1).
    """
    x = np.asarray(x, dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    n, dim = x.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 samples")
    mu = x.mean(axis=0)
    xc = x - mu
    if dim <= n:
        cov = (xc.T @ xc) / (n - 1)
        vals, vecs = np.linalg.eigh(cov)
        order = np.argsort(vals)[::-1]
        vals = np.maximum(vals[order], 0.0)
        vecs = vecs[:, order]
    else:
        gram = (xc @ xc.T) / (n - 1)
        gvals, gvecs = np.linalg.eigh(gram)
        order = np.argsort(gvals)[::-1]
        vals = np.maximum(gvals[order], 0.0)
        vecs = np.zeros((dim, len(vals)))
        for i, lam in enumerate(vals):
            if lam > 1e-300:
                v = xc.T @ gvecs[:, order[i]]
                v /= np.sqrt(lam * (n - 1))
                vecs[:, i] = v
    total = vals.sum()
    if total <= 1e-12 * max(1.0, float(np.abs(x).max()) ** 2):
        raise ValueError("PCA input has no variance (rank-deficient trivial input)")
    proj = xc @ vecs[:, :n_components]
    return proj, vals, mu


def feature_pca(features, labels, n_components=2):
    """Project feature windows to 2D and score pose-cluster separability.

    features: [n, ...] one row per window; labels: cluster id per window
    (at least 2 clusters with 3 samples each).
    """
    labels = list(labels)
    if len(labels) != np.asarray(features).shape[0]:
        raise ValueError("one label per feature row required")
    counts = {}
    for l in labels:
        counts[l] = counts.get(l, 0) + 1
    if len(counts) < 2 or min(counts.values()) < 3:
        raise ValueError(
            f"need >= 2 clusters with >= 3 samples each, got {counts}"
        )
    proj, vals, _ = pca_project(features, n_components)
    total = vals.sum()
    explained = (vals[:n_components] / total).tolist()
    return SeparabilityReport(
        points=proj,
        labels=labels,
        silhouette=silhouette(proj, labels),
        explained=explained,
        eigvals=vals,
    )


def write_pca_points(report, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "cluster"])
        for (px, py), lab in zip(report.points, report.labels):
            w.writerow([f"{px:.8g}", f"{py:.8g}", lab])


def svg_scatter(report, path, title=""):
    """Tiny self-contained SVG scatter plot of the 2D projection."""
    pts = np.asarray(report.points)
    labels = report.labels
    names = report.cluster_names()
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
               "#8c564b", "#17becf", "#e377c2"]
    w = h = 480
    pad = 40
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)

    def sx(v):
        return pad + (v - lo[0]) / span[0] * (w - 2 * pad)

    def sy(v):
        return h - pad - (v - lo[1]) / span[1] * (h - 2 * pad)

    rows = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w // 2}" y="20" text-anchor="middle" font-size="14" '
        f'font-family="sans-serif">{title} (silhouette {report.silhouette:.3f})</text>',
    ]
    for (px, py), lab in zip(pts, labels):
        color = palette[names.index(lab) % len(palette)]
        rows.append(
            f'<circle cx="{sx(px):.1f}" cy="{sy(py):.1f}" r="4" fill="{color}" '
            f'fill-opacity="0.7"/>'
        )
    for i, name in enumerate(names):
        color = palette[i % len(palette)]
        y = pad + 16 * i
        rows.append(f'<circle cx="{w - 110}" cy="{y}" r="4" fill="{color}"/>')
        rows.append(
            f'<text x="{w - 100}" y="{y + 4}" font-size="11" '
            f'font-family="sans-serif">{name}</text>'
        )
    rows.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(rows) + "\n")
