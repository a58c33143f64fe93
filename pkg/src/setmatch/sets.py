"""Ordered sets of item feature vectors.

A FeatureSet is a list of d-dimensional vectors stored as an (N, d) array.
Order is an implementation detail: everything downstream is either
permutation invariant or permutation equivariant, and the test suite holds
that to tight tolerances. Empty sets are rejected because matching scores
divide by set sizes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import PreconditionError, ShapeError


@dataclass
class FeatureSet:
    items: np.ndarray
    labels: Optional[np.ndarray] = None
    set_id: Optional[object] = None

    def __post_init__(self):
        self.items = np.ascontiguousarray(self.items, dtype=np.float64)
        if self.items.ndim != 2:
            raise ShapeError(
                f"items must be (N, d), got shape {self.items.shape}", self.items.shape
            )
        if self.items.shape[0] < 1:
            raise PreconditionError("a FeatureSet needs at least one item")
        if not np.all(np.isfinite(self.items)):
            raise PreconditionError("items contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.items.shape[0],):
                raise ShapeError(
                    f"labels shape {self.labels.shape} does not match N={self.items.shape[0]}",
                    self.labels.shape,
                )

    def __len__(self) -> int:
        return self.items.shape[0]

    @property
    def width(self) -> int:
        return self.items.shape[1]

    def permuted(self, perm: Sequence[int]) -> "FeatureSet":
        """The same set with items reordered by ``perm``."""
        perm = np.asarray(perm, dtype=np.intp)
        labels = self.labels[perm] if self.labels is not None else None
        return FeatureSet(self.items[perm], labels, self.set_id)

    def with_items(self, items: np.ndarray) -> "FeatureSet":
        """A new set with transformed items, carrying labels and id along."""
        return FeatureSet(items, self.labels, self.set_id)
