"""Seeded synthetic tasks: outfit halving (subset), mixed supersets, and
noisy group re-identification, all as raw feature-vector problems.

The generative story for outfits: a latent style vector shifts every item
of one outfit, each item adds a fixed unit embedding for its category,
plus isotropic noise. Correct matching is then recoverable (two halves of
one outfit share the style) but not trivial (candidates share category
structure by construction, so style is the only separating signal).

Re-identification scenes share target identity vectors between the two
sides and contaminate each side with its own never-shared distractor
identities; every present identity contributes a fixed number of noisy
observations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigurationError, PreconditionError
from .numeric import SeededRng
from .sets import FeatureSet
from .training import CandidateBatch

# Embeddings are a fixed dictionary, not per-run randomness: every run sees
# the same category geometry, only styles/noise vary with the run seed.
_CATEGORY_EMBED_SEED = 7040


@dataclass
class GenConfig:
    # style_std ~ 1/sqrt(d_in) keeps item norms O(1) at the default width,
    # which is what lets the configured learning rate work unmodified.
    # Item noise sits at an eighth of the style scale: mean pooling
    # averages i.i.d. noise away while item-level matching eats it whole,
    # so heavier noise flattens the very gap the tasks exist to expose.
    # The labeled-style oracle stays at 100% under this setting.
    d_in: int = 16
    n_categories: int = 8
    outfit_min: int = 4
    outfit_max: int = 8
    item_noise_std: float = 0.03125
    style_std: float = 0.25
    # observation noise tuned so the identity-overlap oracle stays >= 99%
    # accurate (it is exact at this level across the whole distractor
    # sweep) while keeping scenes separable enough that a pooled-mean
    # model can also solve the clean condition
    reid_obs_per_person: int = 3
    reid_persons_min: int = 3
    reid_persons_max: int = 8
    reid_identity_noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.outfit_min < 2:
            raise ConfigurationError("outfit_min must be >= 2 (splits need two halves)")
        if self.outfit_max < self.outfit_min:
            raise ConfigurationError("outfit_max must be >= outfit_min")
        if self.outfit_max > self.n_categories:
            raise ConfigurationError(
                "outfit_max exceeds n_categories; categories are drawn "
                "without replacement"
            )
        if self.reid_obs_per_person < 1:
            raise ConfigurationError("reid_obs_per_person must be >= 1")
        for name in ("item_noise_std", "style_std", "reid_identity_noise_std"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return {
            "d_in": self.d_in,
            "n_categories": self.n_categories,
            "outfit_min": self.outfit_min,
            "outfit_max": self.outfit_max,
            "item_noise_std": self.item_noise_std,
            "style_std": self.style_std,
            "reid_obs_per_person": self.reid_obs_per_person,
            "reid_persons_min": self.reid_persons_min,
            "reid_persons_max": self.reid_persons_max,
            "reid_identity_noise_std": self.reid_identity_noise_std,
            "seed": self.seed,
        }


@dataclass
class Outfit:
    items: np.ndarray  # (n, d_in)
    categories: np.ndarray  # (n,) distinct ids
    style: np.ndarray  # (d_in,) latent, never exposed to models


@dataclass
class GroupScene:
    identities: np.ndarray  # (p, d_in)
    observations: np.ndarray  # (p * obs_per_person, d_in), identity-major
    noise_ids: list  # indices into identities marked as distractors


@lru_cache(maxsize=8)
def category_embeddings(d_in: int, n_categories: int) -> np.ndarray:
    """Fixed unit embedding per category id, identical across runs."""
    rng = SeededRng(_CATEGORY_EMBED_SEED)
    emb = rng.gaussian(n_categories, d_in)
    return emb / np.linalg.norm(emb, axis=1, keepdims=True)


def _outfit_with_categories(rng: SeededRng, cfg: GenConfig, cats) -> Outfit:
    emb = category_embeddings(cfg.d_in, cfg.n_categories)
    style = rng.gaussian(1, cfg.d_in, 0.0, cfg.style_std)[0]
    noise = rng.gaussian(len(cats), cfg.d_in, 0.0, cfg.item_noise_std)
    return Outfit(style + emb[np.asarray(cats)] + noise, np.asarray(cats), style)


def gen_outfit(rng: SeededRng, cfg: GenConfig) -> Outfit:
    n = int(rng.integers(cfg.outfit_min, cfg.outfit_max + 1))
    cats = rng.permutation(cfg.n_categories)[:n]
    return _outfit_with_categories(rng, cfg, cats)


def _nonempty_sides(rng: SeededRng, n: int) -> np.ndarray:
    while True:
        sides = rng.integers(0, 2, size=n)
        if 0 < sides.sum() < n:
            return sides


def split_outfit(rng: SeededRng, outfit: Outfit):
    """Random bipartition into two non-empty halves, labels carried along."""
    n = outfit.items.shape[0]
    if n < 2:
        raise PreconditionError("cannot split an outfit with fewer than 2 items")
    sides = _nonempty_sides(rng, n)
    halves = []
    for side in (0, 1):
        keep = sides == side
        halves.append(
            FeatureSet(outfit.items[keep], labels=outfit.categories[keep])
        )
    return halves[0], halves[1]


def make_subset_batch(rng: SeededRng, cfg: GenConfig, k: int) -> CandidateBatch:
    """K outfits over one shared category multiset, all split the same way.

    The shared split keeps every candidate's category profile identical,
    so candidates cannot be told apart by categories alone.
    """
    if k < 2:
        raise PreconditionError("candidate count must be >= 2")
    n = int(rng.integers(cfg.outfit_min, cfg.outfit_max + 1))
    cats = rng.permutation(cfg.n_categories)[:n]
    sides = _nonempty_sides(rng, n)
    pairs = []
    for _ in range(k):
        outfit = _outfit_with_categories(rng, cfg, cats)
        x = FeatureSet(outfit.items[sides == 0], labels=cats[sides == 0])
        y = FeatureSet(outfit.items[sides == 1], labels=cats[sides == 1])
        pairs.append((x, y))
    return CandidateBatch(pairs)


def make_superset_batch(
    rng: SeededRng, cfg: GenConfig, k: int, mix: int
) -> CandidateBatch:
    """Union the halves of ``mix`` outfits per candidate; no category
    restriction. mix=1 degenerates to unrestricted subset pairs."""
    if k < 2:
        raise PreconditionError("candidate count must be >= 2")
    if mix < 1:
        raise PreconditionError("mix must be >= 1")
    pairs = []
    for _ in range(k):
        xs, ys = [], []
        for _ in range(mix):
            x, y = split_outfit(rng, gen_outfit(rng, cfg))
            xs.append(x)
            ys.append(y)
        pairs.append(
            (
                FeatureSet(
                    np.concatenate([s.items for s in xs]),
                    labels=np.concatenate([s.labels for s in xs]),
                ),
                FeatureSet(
                    np.concatenate([s.items for s in ys]),
                    labels=np.concatenate([s.labels for s in ys]),
                ),
            )
        )
    return CandidateBatch(pairs)


def parse_noise_ratio(ratio) -> tuple:
    """Accept 'a/b' strings or (a, b) pairs: a distractors among b persons."""
    if isinstance(ratio, str):
        parts = ratio.split("/")
        if len(parts) != 2:
            raise ConfigurationError(f"noise ratio must look like 'a/b': {ratio!r}")
        try:
            ratio = (int(parts[0]), int(parts[1]))
        except ValueError as exc:
            raise ConfigurationError(f"bad noise ratio {ratio!r}") from exc
    noise, total = int(ratio[0]), int(ratio[1])
    if noise < 0 or total < 1 or noise >= total:
        raise ConfigurationError(
            f"noise ratio needs 0 <= noise < total, got {noise}/{total}"
        )
    return noise, total


def make_scene(rng: SeededRng, cfg: GenConfig, identities, n_noise: int) -> GroupScene:
    """Observations for one side: identity-major, distractors listed last."""
    obs = []
    for ident in identities:
        noise = rng.gaussian(
            cfg.reid_obs_per_person, cfg.d_in, 0.0, cfg.reid_identity_noise_std
        )
        obs.append(ident + noise)
    p = identities.shape[0]
    return GroupScene(
        identities=identities,
        observations=np.concatenate(obs),
        noise_ids=list(range(p - n_noise, p)),
    )


def make_reid_batch(
    rng: SeededRng, cfg: GenConfig, k: int, noise_x, noise_y
) -> CandidateBatch:
    """K scenes; pair j shares target identities between its two sides and
    adds side-private distractor identities per the requested ratios."""
    if k < 2:
        raise PreconditionError("candidate count must be >= 2")
    nx, totx = parse_noise_ratio(noise_x)
    ny, toty = parse_noise_ratio(noise_y)
    targets = totx - nx
    if toty - ny != targets:
        raise ConfigurationError(
            f"ratios {noise_x} and {noise_y} imply different target counts"
        )
    for total in (totx, toty):
        if not cfg.reid_persons_min <= total <= cfg.reid_persons_max:
            raise ConfigurationError(
                f"group size {total} outside "
                f"[{cfg.reid_persons_min}, {cfg.reid_persons_max}]"
            )
    pairs = []
    next_id = 0
    # identity vectors have unit expected norm, matching the item scale
    # of the outfit tasks
    id_std = 1.0 / np.sqrt(cfg.d_in)
    for _ in range(k):
        shared = rng.gaussian(targets, cfg.d_in, 0.0, id_std)
        dist_x = (
            rng.gaussian(nx, cfg.d_in, 0.0, id_std)
            if nx
            else np.zeros((0, cfg.d_in))
        )
        dist_y = (
            rng.gaussian(ny, cfg.d_in, 0.0, id_std)
            if ny
            else np.zeros((0, cfg.d_in))
        )
        ids_shared = np.arange(next_id, next_id + targets)
        ids_x = np.arange(next_id + targets, next_id + targets + nx)
        ids_y = np.arange(next_id + targets + nx, next_id + targets + nx + ny)
        next_id += targets + nx + ny
        scene_x = make_scene(rng, cfg, np.concatenate([shared, dist_x]), nx)
        scene_y = make_scene(rng, cfg, np.concatenate([shared, dist_y]), ny)
        rep = cfg.reid_obs_per_person
        lab_x = np.repeat(np.concatenate([ids_shared, ids_x]), rep)
        lab_y = np.repeat(np.concatenate([ids_shared, ids_y]), rep)
        pairs.append(
            (
                FeatureSet(scene_x.observations, labels=lab_x),
                FeatureSet(scene_y.observations, labels=lab_y),
            )
        )
    return CandidateBatch(pairs)


# ---------------------------------------------------------------------------
# pools, oracles, dataset files


def make_pool(
    task: str,
    cfg: GenConfig,
    k: int,
    n_units: int,
    rng: SeededRng,
    mix: int = 2,
    noise_x="0/3",
    noise_y="0/3",
) -> list:
    """A fixed list of candidate batches totalling ~n_units generation
    units (outfits for subset/superset, scenes for reid)."""
    per_batch = {"subset": k, "superset": k * mix, "reid": k}
    if task not in per_batch:
        raise ConfigurationError(f"unknown task {task!r}")
    n_batches = max(1, n_units // per_batch[task])
    pool = []
    for _ in range(n_batches):
        if task == "subset":
            pool.append(make_subset_batch(rng, cfg, k))
        elif task == "superset":
            pool.append(make_superset_batch(rng, cfg, k, mix))
        else:
            pool.append(make_reid_batch(rng, cfg, k, noise_x, noise_y))
    return pool


def style_oracle(cfg: GenConfig):
    """Scorer recovering each half's latent style from labeled items.

    Exact when item noise is zero; used only to sanity-check generators.
    """
    emb = category_embeddings(cfg.d_in, cfg.n_categories)

    def scorer(x: FeatureSet, y: FeatureSet) -> float:
        sx = (x.items - emb[x.labels]).mean(axis=0)
        sy = (y.items - emb[y.labels]).mean(axis=0)
        return -float(((sx - sy) ** 2).sum())

    return scorer


def overlap_oracle():
    """Symmetric chamfer scorer: high when the two observation clouds
    share identities. Exact as observation noise goes to zero."""

    def scorer(x: FeatureSet, y: FeatureSet) -> float:
        d2 = ((x.items[:, None, :] - y.items[None, :, :]) ** 2).sum(axis=2)
        return -float(d2.min(axis=1).mean() + d2.min(axis=0).mean())

    return scorer


def dump_batches(batches, path) -> None:
    """One JSON object per pair: feature lists, labels, and a pair id of
    the form '<batch>:<k>' so batches can be regrouped on load."""
    with Path(path).open("w") as fh:
        for b_idx, batch in enumerate(batches):
            for k_idx, (x, y) in enumerate(batch.pairs):
                row = {
                    "set_x": x.items.tolist(),
                    "set_y": y.items.tolist(),
                    "labels_x": None if x.labels is None else x.labels.tolist(),
                    "labels_y": None if y.labels is None else y.labels.tolist(),
                    "pair_id": f"{b_idx}:{k_idx}",
                }
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_batches(path) -> list:
    grouped: dict = {}
    with Path(path).open() as fh:
        for line in fh:
            row = json.loads(line)
            b_idx, k_idx = (int(t) for t in row["pair_id"].split(":"))
            lx = row["labels_x"]
            ly = row["labels_y"]
            pair = (
                FeatureSet(
                    np.asarray(row["set_x"], dtype=np.float64),
                    labels=None if lx is None else np.asarray(lx),
                ),
                FeatureSet(
                    np.asarray(row["set_y"], dtype=np.float64),
                    labels=None if ly is None else np.asarray(ly),
                ),
            )
            grouped.setdefault(b_idx, []).append((k_idx, pair))
    batches = []
    for b_idx in sorted(grouped):
        pairs = [p for _, p in sorted(grouped[b_idx])]
        batches.append(CandidateBatch(pairs))
    return batches
