"""Tasks and datasets: synthetic boundaries, foraging site tiers, the
benchmark tables, and the two colony-based classifiers."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from importlib import resources
from typing import Literal

import numpy as np

from .colony import ColonyConfig, Environment, run_gacl
from .errors import DimensionError, DomainError, IngestionError, TrainingError

SyntheticKind = Literal["linear", "quadratic", "complex"]
Difficulty = Literal["easy", "moderate", "subtle"]

DATASETS = ("iris-easy", "iris-hard", "mtcars", "swiss", "usarrests")

SITE_QUALITIES = {
    "easy": (1.0, 0.5, 0.4, 0.3, 0.2),
    "moderate": (1.0, 0.8, 0.7, 0.6, 0.5),
    "subtle": (1.0, 0.95, 0.9, 0.85, 0.8),
}

# default per-point inference budget for the colony classifier
CLASSIFIER_COLONY = ColonyConfig(n_ants=50, waves_per_gen=2)


# ---------------------------------------------------------------------------
# synthetic tasks


@dataclass(frozen=True)
class SyntheticTask:
    kind: SyntheticKind = "linear"
    n_points: int = 200
    noise: float = 0.0
    shift_epoch: int | None = None


def _boundary(kind: str, x: np.ndarray) -> np.ndarray:
    x1, x2 = x[:, 0], x[:, 1]
    if kind == "linear":
        score = x1 + 0.5 * x2
    elif kind == "quadratic":
        # c = E[x1^2] = 1/3 splits the square into equal halves
        score = x2 - x1**2 + 1.0 / 3.0
    elif kind == "complex":
        score = np.sin(3.0 * x1) + x2 * x1
    else:
        raise DomainError(f"unknown synthetic kind {kind!r}")
    return (score > 0).astype(np.int64)


def make_synthetic(task: SyntheticTask, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Points uniform on [-1, 1]^2 labelled by the task's boundary, then
    flipped independently with probability ``task.noise``."""
    if task.n_points < 50:
        raise DomainError("n_points must be >= 50")
    if not 0.0 <= task.noise <= 1.0:
        raise DomainError("label noise must be a probability")
    x = rng.uniform(-1.0, 1.0, size=(task.n_points, 2))
    y = _boundary(task.kind, x)
    flip = rng.random(task.n_points) < task.noise
    return x, np.where(flip, 1 - y, y)


def labels_at(task: SyntheticTask, y: np.ndarray, epoch: int) -> np.ndarray:
    """Labels in force at ``epoch``: complemented once the shift has happened."""
    if task.shift_epoch is not None and epoch > task.shift_epoch:
        return 1 - y
    return y


# ---------------------------------------------------------------------------
# foraging site tasks


@dataclass(frozen=True)
class SiteTask:
    difficulty: Difficulty
    qualities: tuple[float, ...]
    shift_generation: int | None = None

    def qualities_at(self, g: int) -> np.ndarray:
        """Site qualities at generation ``g``; after the shift the best and
        worst sites trade places."""
        q = np.array(self.qualities)
        if self.shift_generation is not None and g > self.shift_generation:
            best, worst = int(np.argmax(q)), int(np.argmin(q))
            q[[best, worst]] = q[[worst, best]]
        return q

    def best_site(self, g: int = 1) -> int:
        return int(np.argmax(self.qualities_at(g)))

    def environment(self, obs_noise_sigma: float = 0.05):
        """Callable ``g -> Environment`` suitable for :func:`run_gacl`."""
        envs = {
            False: Environment(self.qualities_at(1), obs_noise_sigma=obs_noise_sigma),
        }
        if self.shift_generation is not None:
            envs[True] = Environment(
                self.qualities_at(self.shift_generation + 1), obs_noise_sigma=obs_noise_sigma
            )
        shift = self.shift_generation

        def env_at(g: int) -> Environment:
            return envs[shift is not None and g > shift]

        return env_at


def make_site_task(difficulty: Difficulty, shift_generation: int | None = None) -> SiteTask:
    try:
        q = SITE_QUALITIES[difficulty]
    except KeyError:
        raise DomainError(f"unknown difficulty {difficulty!r}") from None
    return SiteTask(difficulty, q, shift_generation)


# ---------------------------------------------------------------------------
# benchmark datasets


@dataclass
class Dataset:
    name: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    n_classes: int
    train_idx: np.ndarray
    test_idx: np.ndarray
    feature_names: tuple[str, ...]
    split_seed: int


def read_table(filename: str) -> tuple[list[str], list[list[str]]]:
    """Read one embedded CSV; every row must match the header's width."""
    try:
        text = resources.files("gacl").joinpath("data", filename).read_text(encoding="utf-8")
    except (FileNotFoundError, OSError) as exc:
        raise IngestionError(f"data/{filename}: cannot read ({exc})") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise IngestionError(f"data/{filename}: empty file")
    header, body = rows[0], rows[1:]
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise IngestionError(
                f"data/{filename}, line {lineno}: {len(row)} fields, expected {len(header)}"
            )
    return header, body


def _numeric(filename: str, header: list[str], body: list[list[str]], columns: list[str]) -> np.ndarray:
    cols = [header.index(c) for c in columns]
    out = np.empty((len(body), len(cols)))
    for i, row in enumerate(body):
        for j, c in enumerate(cols):
            try:
                out[i, j] = float(row[c])
            except ValueError:
                raise IngestionError(
                    f"data/{filename}, line {i + 2}: column {header[c]!r} is not numeric: {row[c]!r}"
                ) from None
    if not np.all(np.isfinite(out)):
        raise IngestionError(f"data/{filename}: non-finite values")
    return out


def load_table(name: str) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
    """Features and labels for one benchmark, before splitting or scaling."""
    if name in ("iris", "iris-easy", "iris-hard"):
        header, body = read_table("iris.csv")
        feats = header[:4]
        x = _numeric("iris.csv", header, body, feats)
        species = [r[4] for r in body]
        names = sorted(set(species))
        y = np.array([names.index(s) for s in species])
        if name == "iris":
            return x, y, tuple(feats)
        # easy: setosa vs versicolor (separable); hard: versicolor vs virginica (overlapping)
        keep = (0, 1) if name == "iris-easy" else (1, 2)
        sel = np.isin(y, keep)
        return x[sel], (y[sel] == keep[1]).astype(np.int64), tuple(feats)
    if name == "mtcars":
        header, body = read_table("mtcars.csv")
        feats = [c for c in header[1:] if c != "am"]
        x = _numeric("mtcars.csv", header, body, feats)
        y = _numeric("mtcars.csv", header, body, ["am"])[:, 0].astype(np.int64)
        return x, y, tuple(feats)
    if name in ("swiss", "usarrests"):
        fname, target = ("swiss.csv", "fertility") if name == "swiss" else ("usarrests.csv", "murder")
        header, body = read_table(fname)
        feats = [c for c in header[1:] if c != target]
        x = _numeric(fname, header, body, feats)
        t = _numeric(fname, header, body, [target])[:, 0]
        y = (t > np.median(t)).astype(np.int64)
        return x, y, tuple(feats)
    raise DomainError(f"unknown dataset {name!r}; choose from {', '.join(DATASETS)}")


def stratified_split(y: np.ndarray, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        n_test = int(round(test_fraction * idx.size))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def load_dataset(name: str, split_seed: int) -> Dataset:
    """70/30 stratified split, features z-scored with training statistics."""
    x, y, feats = load_table(name)
    train, test = stratified_split(y, 0.3, split_seed)
    mu = x[train].mean(axis=0)
    sd = x[train].std(axis=0)
    sd[sd == 0] = 1.0
    z = (x - mu) / sd
    return Dataset(
        name=name,
        x_train=z[train],
        y_train=y[train],
        x_test=z[test],
        y_test=y[test],
        n_classes=int(y.max()) + 1,
        train_idx=train,
        test_idx=test,
        feature_names=feats,
        split_seed=split_seed,
    )


# ---------------------------------------------------------------------------
# classifiers


def class_centroids(dataset: Dataset) -> np.ndarray:
    cents = []
    for c in range(dataset.n_classes):
        members = dataset.x_train[dataset.y_train == c]
        if members.shape[0] == 0:
            raise TrainingError(f"class {c} has no training points in {dataset.name}")
        cents.append(members.mean(axis=0))
    return np.array(cents)


def centroid_qualities(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Gaussian site quality per class, width = mean pairwise centroid distance."""
    pairs = [np.linalg.norm(a - b) for a, b in itertools.combinations(centroids, 2)]
    s = float(np.mean(pairs))
    if s == 0:
        s = 1.0
    d2 = np.sum((np.atleast_2d(x)[:, None, :] - centroids[None, :, :]) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * s * s))


def colony_decide(
    qualities: np.ndarray,
    cfg: ColonyConfig,
    generations: int,
    rng: np.random.Generator,
    obs_noise_sigma: float = 0.05,
) -> np.ndarray:
    """Run a colony over one site per class; returns its final pheromone
    normalised to sum to one."""
    env = Environment(qualities, obs_noise_sigma=obs_noise_sigma)
    tau = run_gacl(env, cfg, generations, rng)[-1][1].tau_end
    return tau / tau.sum()


def gacl_classify(
    dataset: Dataset,
    cfg: ColonyConfig = CLASSIFIER_COLONY,
    g_infer: int = 10,
    seed: int = 0,
    obs_noise_sigma: float = 0.05,
) -> tuple[np.ndarray, np.ndarray]:
    """Classify every test point by a colony decision over class sites.

    Each point gets its own random stream derived from ``(seed, index)`` so
    the result does not depend on evaluation order.
    """
    centroids = class_centroids(dataset)
    q = centroid_qualities(dataset.x_test, centroids)
    scores = np.empty_like(q)
    for i in range(q.shape[0]):
        rng = np.random.default_rng([seed, i])
        scores[i] = colony_decide(q[i], cfg, g_infer, rng, obs_noise_sigma)
    return np.argmax(scores, axis=1), scores


def colony_net_classify(gacl_scores: np.ndarray, mlp_probs: np.ndarray) -> np.ndarray:
    """Average the colony's class scores with the network's probabilities."""
    g = np.asarray(gacl_scores, dtype=float)
    m = np.asarray(mlp_probs, dtype=float)
    if g.shape != m.shape:
        raise DimensionError(f"score shapes differ: {g.shape} vs {m.shape}")
    return np.argmax((g + m) / 2.0, axis=-1)
