"""Patch geometry, measurement localization and estimate merging.

Two layouts are supported:

``partition``
    Disjoint square windows on a grid; each window estimates all its pixels.
``sliding``
    Windows of side ``alpha + 2r`` whose ``alpha x alpha`` center regions tile
    the image with stride ``alpha``. A window estimates only its center.

Windows that would cross the image border are clipped; center regions always
stay inside the image. Neighbors are the 8-adjacent windows of the grid. The
locality radius ``r`` is a Chebyshev distance between pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lds import LinearEvolution, MeasurementModel

#: Largest acceptable condition number of ``H`` for localization by inversion.
MAX_H_CONDITION = 1e8


class LayoutError(ValueError):
    pass


class LocalizationError(ValueError):
    pass


def _box_indices(rows: range, cols: range, width: int) -> np.ndarray:
    r = np.asarray(rows)[:, None]
    c = np.asarray(cols)[None, :]
    return (r * width + c).reshape(-1)


@dataclass(frozen=True)
class Patch:
    """One window: the pixels it filters and the pixels it reports.

    ``rows``/``cols`` bound the window, ``center_rows``/``center_cols`` bound
    the center region. Index arrays are row-major and ascending.
    """

    rows: range
    cols: range
    center_rows: range
    center_cols: range
    width: int
    neighbors: tuple[int, ...] = ()

    @property
    def pixel_indices(self) -> np.ndarray:
        return _box_indices(self.rows, self.cols, self.width)

    @property
    def center_indices(self) -> np.ndarray:
        return _box_indices(self.center_rows, self.center_cols, self.width)

    @property
    def center_positions(self) -> np.ndarray:
        """Positions of the center pixels inside the patch state vector."""
        r = np.asarray(self.center_rows) - self.rows.start
        c = np.asarray(self.center_cols) - self.cols.start
        return (r[:, None] * len(self.cols) + c[None, :]).reshape(-1)

    @property
    def size(self) -> int:
        return len(self.rows) * len(self.cols)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.cols)


@dataclass(frozen=True)
class PatchLayout:
    image_dims: tuple[int, int]
    patches: tuple[Patch, ...]
    mode: str

    def __post_init__(self):
        if self.mode not in ("partition", "sliding"):
            raise LayoutError(f"unknown layout mode {self.mode!r}")
        object.__setattr__(self, "patches", tuple(self.patches))

    @property
    def n_pixels(self) -> int:
        return self.image_dims[0] * self.image_dims[1]

    def __len__(self) -> int:
        return len(self.patches)

    def validate(self) -> None:
        """Check that center regions (and, for partitions, windows) tile the image."""
        counts = np.zeros(self.n_pixels, dtype=int)
        for p in self.patches:
            np.add.at(counts, p.center_indices, 1)
            if self.mode == "partition" and not np.array_equal(p.center_indices, p.pixel_indices):
                raise LayoutError("partition patches must estimate all their pixels")
        if (counts != 1).any():
            raise LayoutError(
                f"{(counts == 0).sum()} pixels uncovered, {(counts > 1).sum()} covered twice"
            )

    def extract(self, frame) -> list[np.ndarray]:
        frame = np.asarray(frame).reshape(-1)
        return [frame[p.pixel_indices] for p in self.patches]


def _grid_neighbors(n_rows: int, n_cols: int) -> list[tuple[int, ...]]:
    out = []
    for i in range(n_rows):
        for j in range(n_cols):
            nb = [
                a * n_cols + b
                for a in range(max(0, i - 1), min(n_rows, i + 2))
                for b in range(max(0, j - 1), min(n_cols, j + 2))
                if (a, b) != (i, j)
            ]
            out.append(tuple(nb))
    return out


def _check_dims(dims) -> tuple[int, int]:
    h, w = (int(v) for v in dims)
    if h < 1 or w < 1:
        raise LayoutError(f"image dimensions must be positive, got {dims}")
    return h, w


def partition_windows(dims, window_side: int) -> PatchLayout:
    """Disjoint ``window_side``-square windows, clipped at the right/bottom edges."""
    h, w = _check_dims(dims)
    if window_side < 1:
        raise LayoutError("window_side must be >= 1")
    if window_side > h or window_side > w:
        raise LayoutError(f"window side {window_side} exceeds image {h}x{w}")
    row_starts = range(0, h, window_side)
    col_starts = range(0, w, window_side)
    neighbors = _grid_neighbors(len(row_starts), len(col_starts))
    patches = []
    for r0 in row_starts:
        for c0 in col_starts:
            rows = range(r0, min(r0 + window_side, h))
            cols = range(c0, min(c0 + window_side, w))
            patches.append(Patch(rows, cols, rows, cols, w, neighbors[len(patches)]))
    return PatchLayout((h, w), tuple(patches), "partition")


def sliding_layout(dims, r: int, alpha: int) -> PatchLayout:
    """Windows of side ``alpha + 2r`` centered on an ``alpha``-stride tiling.

    ``r = 0`` degenerates to :func:`partition_windows` geometry, and with
    ``alpha`` equal to the image side gives a single full-image window.
    """
    h, w = _check_dims(dims)
    if alpha < 1:
        raise LayoutError("alpha must be >= 1")
    if r < 0:
        raise LayoutError("r must be >= 0")
    if alpha + 2 * r > h or alpha + 2 * r > w:
        raise LayoutError(f"window side alpha + 2r = {alpha + 2 * r} exceeds image {h}x{w}")
    row_starts = range(0, h, alpha)
    col_starts = range(0, w, alpha)
    neighbors = _grid_neighbors(len(row_starts), len(col_starts))
    patches = []
    for r0 in row_starts:
        for c0 in col_starts:
            center_rows = range(r0, min(r0 + alpha, h))
            center_cols = range(c0, min(c0 + alpha, w))
            rows = range(max(0, r0 - r), min(h, r0 + alpha + r))
            cols = range(max(0, c0 - r), min(w, c0 + alpha + r))
            patches.append(
                Patch(rows, cols, center_rows, center_cols, w, neighbors[len(patches)])
            )
    return PatchLayout((h, w), tuple(patches), "sliding")


def grid_regions(dims, grid: tuple[int, int] = (2, 2)) -> list[np.ndarray]:
    """Pixel index sets of an even ``grid`` split of the image (quarters by default)."""
    h, w = _check_dims(dims)
    gr, gc = grid
    if h % gr or w % gc:
        raise LayoutError(f"image {h}x{w} is not divisible by region grid {grid}")
    sh, sw = h // gr, w // gc
    return [
        _box_indices(range(i * sh, (i + 1) * sh), range(j * sw, (j + 1) * sw), w)
        for i in range(gr)
        for j in range(gc)
    ]


@dataclass(frozen=True)
class Localizer:
    """Maps full-image measurements to a measurement of one patch.

    With invertible ``H``, ``Γ = S H^{-1}`` where ``S`` selects the patch rows,
    so ``Γ H = S`` touches only patch pixels and ``Θ`` is the identity on the
    patch. ``h_inv_rows`` holds ``S H^{-1}``; ``None`` means ``H = I`` and
    ``Γ = S`` is applied by indexing.
    """

    pixel_indices: np.ndarray
    n_pixels: int
    h_inv_rows: np.ndarray | None
    noise_cov: np.ndarray

    @property
    def gamma(self) -> np.ndarray:
        if self.h_inv_rows is not None:
            return self.h_inv_rows
        G = np.zeros((len(self.pixel_indices), self.n_pixels))
        G[np.arange(len(self.pixel_indices)), self.pixel_indices] = 1.0
        return G

    @property
    def theta(self) -> np.ndarray:
        return np.eye(len(self.pixel_indices))

    def localize(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1)
        if self.h_inv_rows is None:
            return y[self.pixel_indices]
        return self.h_inv_rows @ y

    def measurement_model(self) -> MeasurementModel:
        return MeasurementModel(self.theta, self.noise_cov)


def build_localizer(measurement: MeasurementModel, patch: Patch) -> Localizer:
    """Localization operator for a patch under an invertible measurement operator."""
    H = measurement.H
    if H.shape[0] != H.shape[1]:
        raise LocalizationError(
            "H is not square; localizing a general measurement operator requires "
            "solving the constrained Γ problem, which is not supported"
        )
    cond = measurement.h_condition
    if not cond < MAX_H_CONDITION:
        raise LocalizationError(
            f"H is singular or ill-conditioned (condition {cond:.3e}); localizing a "
            "general measurement operator is not supported"
        )
    idx = patch.pixel_indices
    R = measurement.R
    if measurement.h_is_identity:
        return Localizer(idx, H.shape[0], None, R[np.ix_(idx, idx)].copy())
    G = measurement.h_inverse[idx]
    if measurement.r_is_diagonal:
        noise = (G * np.diagonal(R)) @ G.T
    else:
        noise = G @ R @ G.T
    return Localizer(idx, H.shape[0], G, 0.5 * (noise + noise.T))


def coupling_columns(patch: Patch, layout: PatchLayout) -> np.ndarray:
    """Pixels of neighboring patches that lie outside ``patch``."""
    own = patch.pixel_indices
    if not patch.neighbors:
        return np.empty(0, dtype=int)
    others = np.unique(np.concatenate([layout.patches[j].pixel_indices for j in patch.neighbors]))
    return np.setdiff1d(others, own, assume_unique=True)


def neighbor_input(prev_estimates, patch: Patch, layout: PatchLayout, evolution) -> np.ndarray:
    """Known input to a patch from its neighbors' previous estimates.

    Sums the cross blocks ``A[U_i, U_j] x̂_{n-1}[U_j]`` over neighboring
    patches ``j``. The self block is not included; it belongs to the patch's own
    evolution. Pixels outside the image simply do not exist, so border patches
    receive no contribution from absent neighbors.

    ``evolution`` is a :class:`LinearEvolution` or an evolution matrix over the
    whole image.
    """
    A = evolution.A if isinstance(evolution, LinearEvolution) else np.asarray(evolution, float)
    x = np.asarray(prev_estimates, dtype=float).reshape(-1)
    if x.shape[0] != layout.n_pixels or A.shape != (layout.n_pixels, layout.n_pixels):
        raise ValueError("previous estimates and evolution must cover the whole image")
    cols = coupling_columns(patch, layout)
    if cols.size == 0:
        return np.zeros(patch.size)
    return A[np.ix_(patch.pixel_indices, cols)] @ x[cols]


def merge_estimates(patch_estimates: Sequence, layout: PatchLayout) -> np.ndarray:
    """Scatter each patch's center values into a full frame vector."""
    if len(patch_estimates) != len(layout.patches):
        raise LayoutError(
            f"expected {len(layout.patches)} patch estimates, got {len(patch_estimates)}"
        )
    frame = np.empty(layout.n_pixels)
    written = np.zeros(layout.n_pixels, dtype=int)
    for est, p in zip(patch_estimates, layout.patches):
        est = np.asarray(est, dtype=float).reshape(-1)
        if est.shape[0] != p.size:
            raise LayoutError(f"patch estimate has {est.shape[0]} values, patch has {p.size}")
        idx = p.center_indices
        frame[idx] = est[p.center_positions]
        written[idx] += 1
    if (written != 1).any():
        raise LayoutError(
            f"layout invariant violated: {(written == 0).sum()} gaps, "
            f"{(written > 1).sum()} double writes"
        )
    return frame
