"""Feature groups and masked-input construction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ContractError, as_matrix


@dataclass(frozen=True)
class FeatureGrouping:
    """Disjoint groups of raw feature indices, one explanation unit each."""

    groups: tuple
    d: int
    layout: dict = field(default_factory=dict)

    def __post_init__(self):
        groups = tuple(np.asarray(g, dtype=np.int64) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        seen = np.zeros(self.d, dtype=bool)
        for g in groups:
            if g.size == 0:
                raise ContractError("feature groups must be non-empty")
            if g.min() < 0 or g.max() >= self.d:
                raise ContractError(f"group index out of range [0, {self.d})")
            if np.any(seen[g]) or np.unique(g).size != g.size:
                raise ContractError("feature groups overlap")
            seen[g] = True

    @property
    def p(self) -> int:
        return len(self.groups)

    def to_dict(self) -> dict:
        return {"d": self.d, "layout": dict(self.layout), "groups": [g.tolist() for g in self.groups]}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureGrouping":
        return cls(groups=tuple(data["groups"]), d=int(data["d"]), layout=dict(data.get("layout", {})))

    def to_pixel_map(self, values) -> np.ndarray:
        """Scatter per-group values back onto raw feature positions."""
        out = np.zeros(self.d)
        for g, v in zip(self.groups, np.asarray(values, dtype=np.float64)):
            out[g] = v
        return out


def identity_grouping(d: int) -> FeatureGrouping:
    if d < 1:
        raise ContractError("identity grouping needs d >= 1")
    return FeatureGrouping(groups=tuple([i] for i in range(d)), d=d, layout={"kind": "identity"})


def grid_grouping(height: int, width: int, patch_h: int, patch_w: int) -> FeatureGrouping:
    """Row-major tiling of an image into patches; edge patches are truncated."""
    if min(height, width, patch_h, patch_w) < 1:
        raise ContractError("grid dimensions must be >= 1")
    if patch_h > height or patch_w > width:
        raise ContractError("patch larger than image")
    idx = np.arange(height * width).reshape(height, width)
    groups = []
    for r in range(0, height, patch_h):
        for c in range(0, width, patch_w):
            groups.append(idx[r:r + patch_h, c:c + patch_w].ravel())
    assert len(groups) == math.ceil(height / patch_h) * math.ceil(width / patch_w)
    layout = {"kind": "grid", "height": height, "width": width, "patch_h": patch_h, "patch_w": patch_w}
    return FeatureGrouping(groups=tuple(groups), d=height * width, layout=layout)


def dataset_means(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ContractError("dataset_means needs a non-empty 2-d matrix")
    return X.mean(axis=0)


MASK_KINDS = ("zero", "mean", "constant")


@dataclass(frozen=True)
class MaskingStrategy:
    """How a masked group is filled: zeros, dataset means, or a constant vector."""

    kind: str = "zero"
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ContractError(f"unknown masking strategy {self.kind!r}")
        if self.kind != "zero":
            if self.values is None:
                raise ContractError(f"{self.kind} masking needs a value vector")
            v = np.asarray(self.values, dtype=np.float64).ravel()
            if not np.all(np.isfinite(v)):
                raise ContractError("masking values must be finite")
            object.__setattr__(self, "values", v)

    @classmethod
    def zero(cls) -> "MaskingStrategy":
        return cls("zero")

    @classmethod
    def dataset_mean(cls, X) -> "MaskingStrategy":
        return cls("mean", dataset_means(X))

    @classmethod
    def constant(cls, values) -> "MaskingStrategy":
        return cls("constant", values)

    def fill(self, d: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(d)
        if self.values.size != d:
            raise ContractError(f"masking vector has length {self.values.size}, inputs have {d}")
        return self.values

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.values is not None:
            out["values"] = self.values.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MaskingStrategy":
        return cls(data["kind"], data.get("values"))


def mask_groups(x_row, grouping: FeatureGrouping, indices, strategy: MaskingStrategy) -> np.ndarray:
    """Copy of ``x_row`` with every group in ``indices`` replaced."""
    x = np.array(x_row, dtype=np.float64).ravel()
    if x.size != grouping.d:
        raise ContractError(f"input has {x.size} features, grouping expects {grouping.d}")
    fill = strategy.fill(grouping.d)
    for i in indices:
        if not 0 <= i < grouping.p:
            raise ContractError(f"group index {i} out of range (p={grouping.p})")
        g = grouping.groups[i]
        x[g] = fill[g]
    return x


def mask_group(x_row, grouping: FeatureGrouping, i: int, strategy: MaskingStrategy) -> np.ndarray:
    return mask_groups(x_row, grouping, [i], strategy)


def masked_stack(X, grouping: FeatureGrouping, strategy: MaskingStrategy) -> np.ndarray:
    """For each row of ``X`` emit the unmasked row followed by its p single-group masks.

    Returns an ``(n * (p + 1), d)`` array laid out sample by sample.
    """
    X = as_matrix(X)
    n, d = X.shape
    if d != grouping.d:
        raise ContractError(f"inputs have {d} features, grouping expects {grouping.d}")
    p = grouping.p
    fill = strategy.fill(d)
    out = np.repeat(X[:, None, :], p + 1, axis=1)
    for i, g in enumerate(grouping.groups):
        out[:, i + 1, g] = fill[g]
    return out.reshape(n * (p + 1), d)
