"""Pixel, topology and clustering metrics for binary masks and probability maps.

Connectivity convention: foreground components are 4-connected, background
8-connected (the standard dual pairing that keeps the digital Jordan
theorem and the Euler identity chi = b0 - b1 intact).  Border-touching
background belongs to the outer region, not to any hole.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
EIGHT = np.ones((3, 3), dtype=int)


def _as_mask(mask) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D mask, got shape {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("mask values must be strictly binary")
    return arr.astype(np.uint8)


def label_components(mask, connectivity: int = 4):
    """Label the foreground; 0 is background, components are 1..K."""
    arr = _as_mask(mask)
    structure = FOUR if connectivity == 4 else EIGHT
    labels, count = ndimage.label(arr, structure=structure)
    return labels, count


def betti_numbers(mask) -> tuple:
    """(b0, b1): 4-connected foreground components and enclosed holes.

    Holes are 8-connected background components that do not touch the
    image border; all border-touching background is the single outer
    region.
    """
    arr = _as_mask(mask)
    _, b0 = label_components(arr, 4)
    bg_labels, bg_count = ndimage.label(1 - arr, structure=EIGHT)
    if bg_count == 0:
        return int(b0), 0
    border = np.concatenate(
        [bg_labels[0], bg_labels[-1], bg_labels[:, 0], bg_labels[:, -1]]
    )
    touching = set(np.unique(border)) - {0}
    b1 = bg_count - len(touching)
    return int(b0), int(b1)


def euler_characteristic(mask) -> int:
    """V - E + F over the cubical complex of the foreground."""
    arr = _as_mask(mask)
    v = int(arr.sum())
    e = int((arr[:, :-1] & arr[:, 1:]).sum()) + int((arr[:-1, :] & arr[1:, :]).sum())
    f = int((arr[:-1, :-1] & arr[:-1, 1:] & arr[1:, :-1] & arr[1:, 1:]).sum())
    return v - e + f


def skeletonize(mask) -> np.ndarray:
    """Two-subiteration morphological thinning (Zhang-Suen) to a fixpoint.

    Deletion-only, so the result is a subset of the input; connectivity of
    the 8-connected foreground is preserved.
    """
    img = _as_mask(mask).astype(np.uint8)

    def neighbours(a):
        p = np.pad(a, 1)
        p2 = p[:-2, 1:-1]
        p3 = p[:-2, 2:]
        p4 = p[1:-1, 2:]
        p5 = p[2:, 2:]
        p6 = p[2:, 1:-1]
        p7 = p[2:, :-2]
        p8 = p[1:-1, :-2]
        p9 = p[:-2, :-2]
        return p2, p3, p4, p5, p6, p7, p8, p9

    changed = True
    while changed:
        changed = False
        for phase in (0, 1):
            p2, p3, p4, p5, p6, p7, p8, p9 = neighbours(img)
            ring = [p2, p3, p4, p5, p6, p7, p8, p9, p2]
            b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9
            a = sum((ring[k] == 0) & (ring[k + 1] == 1) for k in range(8))
            cond = (img == 1) & (b >= 2) & (b <= 6) & (a == 1)
            if phase == 0:
                cond &= (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
            else:
                cond &= (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
            if cond.any():
                img[cond] = 0
                changed = True
    return img


def dice(pred, gt) -> float:
    p = _as_mask(pred)
    g = _as_mask(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def cl_dice(pred, gt) -> float:
    """Centre-line Dice: harmonic mean of skeleton precision and sensitivity."""
    p = _as_mask(pred)
    g = _as_mask(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    skel_p = skeletonize(p)
    skel_g = skeletonize(g)
    sp = int(skel_p.sum())
    sg = int(skel_g.sum())
    if sp == 0 and sg == 0:
        return 1.0
    if sp == 0 or sg == 0:
        return 0.0
    tprec = int((skel_p & g).sum()) / sp
    tsens = int((skel_g & p).sum()) / sg
    if tprec + tsens == 0:
        return 0.0
    return 2.0 * tprec * tsens / (tprec + tsens)


def _component_partition(mask) -> np.ndarray:
    """Cluster ids per pixel: background is one cluster, components the rest."""
    labels, _ = label_components(mask, 4)
    return labels.ravel()


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ka = int(a.max()) + 1
    kb = int(b.max()) + 1
    return np.bincount(a * kb + b, minlength=ka * kb).reshape(ka, kb).astype(np.float64)


def adjusted_rand_index(pred, gt) -> float:
    """Chance-corrected pair-counting agreement between component partitions."""
    a = _component_partition(pred)
    b = _component_partition(gt)
    cont = _contingency(a, b)
    n = a.size

    def comb2(x):
        return x * (x - 1.0) / 2.0

    sum_cells = comb2(cont).sum()
    sum_rows = comb2(cont.sum(axis=1)).sum()
    sum_cols = comb2(cont.sum(axis=0)).sum()
    total = comb2(float(n))
    expected = sum_rows * sum_cols / total
    max_index = 0.5 * (sum_rows + sum_cols)
    denom = max_index - expected
    if denom == 0.0:
        # Both partitions are trivial and identical in pair structure.
        return 1.0
    return float((sum_cells - expected) / denom)


def ari_error(pred, gt) -> float:
    """1 - ARI, so that lower is better."""
    return 1.0 - adjusted_rand_index(pred, gt)


def variation_of_information(pred, gt) -> float:
    """H(A|B) + H(B|A) between component partitions, natural log."""
    a = _component_partition(pred)
    b = _component_partition(gt)
    cont = _contingency(a, b)
    n = float(a.size)
    pij = cont / n
    pa = pij.sum(axis=1)
    pb = pij.sum(axis=0)

    def entropy(p):
        p = p[p > 0]
        return float(-(p * np.log(p)).sum())

    h_joint = entropy(pij.ravel())
    return max(0.0, 2.0 * h_joint - entropy(pa) - entropy(pb))


def auc(prob, gt) -> float:
    """Mann-Whitney AUC of a probability map against a binary mask; ties 0.5."""
    p = np.asarray(prob, dtype=np.float64).ravel()
    g = _as_mask(gt).ravel()
    if p.shape != g.shape:
        raise ValueError("probability map and mask shapes differ")
    n_pos = int(g.sum())
    n_neg = g.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: ground truth has a single class")
    ranks = rankdata(p)
    return float((ranks[g == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class MetricsReport:
    """All scalar results for one mask pair (or a dataset average)."""

    dice: float
    auc: float
    cl_dice: float
    betti0_error: float
    betti1_error: float
    euler_error: float
    ari_error: float
    vi: float
    pred_betti0: float = 0.0
    pred_betti1: float = 0.0
    pred_euler: float = 0.0
    gt_betti0: float = 0.0
    gt_betti1: float = 0.0
    gt_euler: float = 0.0

    def to_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}

    @staticmethod
    def mean(reports) -> "MetricsReport":
        reports = list(reports)
        if not reports:
            raise ValueError("cannot average zero reports")
        values = {
            f.name: float(np.mean([getattr(r, f.name) for r in reports]))
            for f in fields(MetricsReport)
        }
        return MetricsReport(**values)


def evaluate_pair(prob, gt, threshold: float = 0.5) -> MetricsReport:
    """Binarise a probability map and compute the full metric column set."""
    prob = np.asarray(prob, dtype=np.float64)
    g = _as_mask(gt)
    pred = (prob >= threshold).astype(np.uint8)
    pb0, pb1 = betti_numbers(pred)
    gb0, gb1 = betti_numbers(g)
    pchi = euler_characteristic(pred)
    gchi = euler_characteristic(g)
    return MetricsReport(
        dice=dice(pred, g),
        auc=auc(prob, g),
        cl_dice=cl_dice(pred, g),
        betti0_error=float(abs(pb0 - gb0)),
        betti1_error=float(abs(pb1 - gb1)),
        euler_error=float(abs(pchi - gchi)),
        ari_error=ari_error(pred, g),
        vi=variation_of_information(pred, g),
        pred_betti0=pb0,
        pred_betti1=pb1,
        pred_euler=pchi,
        gt_betti0=gb0,
        gt_betti1=gb1,
        gt_euler=gchi,
    )
