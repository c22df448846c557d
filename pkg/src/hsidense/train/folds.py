"""Patient-level cross-validation splits."""
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError


@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train: tuple
    validation: tuple
    test: tuple

    @property
    def held_out(self):
        return self.validation + self.test

    def to_dict(self):
        return {"fold": self.fold, "train": list(self.train), "validation": list(self.validation), "test": list(self.test)}


def patient_ids(manifest):
    """Patient ids from manifest records or a plain sequence of ids."""
    ids = [rec["patient_id"] if isinstance(rec, dict) else str(rec) for rec in manifest]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate patient ids in manifest", key="dataset")
    return ids


def make_folds(manifest, k=8, seed=0):
    """Shuffle patients, cut into k held-out groups, halve each into validation/test.

    Validation takes the smaller half when a group has odd size; every other
    patient of the cohort trains that fold.
    """
    ids = sorted(patient_ids(manifest))
    if k < 2:
        raise ConfigurationError(f"cv.folds must be >= 2, got {k}", key="cv.folds")
    if len(ids) < 2 * k:
        raise ConfigurationError(
            f"cv.folds={k} needs at least {2 * k} patients, got {len(ids)}", key="cv.folds"
        )
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    groups = np.array_split(np.arange(len(ids)), k)
    folds = []
    for f, g in enumerate(groups):
        held = [shuffled[i] for i in g]
        n_val = len(held) // 2
        held_set = set(held)
        train = tuple(p for p in shuffled if p not in held_set)
        folds.append(FoldSplit(f, train, tuple(held[:n_val]), tuple(held[n_val:])))
    return folds
