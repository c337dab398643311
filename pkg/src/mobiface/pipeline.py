"""Face verification: preprocessing, embedding comparison, k-fold pair protocol."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import graph, weights as wio
from .ppm import decode_ppm
from .tensor import DTYPE, ShapeError, l2_normalize

FACE_SIZE = 112
PIXEL_MEAN = 127.5
PIXEL_SCALE = 128.0


class PairListError(ValueError):
    pass


class ImageLoadError(ValueError):
    pass


def preprocess(raw: np.ndarray) -> np.ndarray:
    """Map 0-255 pixels of a ``[3, 112, 112]`` face (or a batch) to ``(raw - 127.5) / 128``."""
    raw = np.asarray(raw, dtype=DTYPE)
    if raw.ndim not in (3, 4) or raw.shape[-3:] != (3, FACE_SIZE, FACE_SIZE):
        raise ShapeError(f"expected a [3, {FACE_SIZE}, {FACE_SIZE}] face, got shape {raw.shape}")
    if not np.all(np.isfinite(raw)) or raw.min() < 0 or raw.max() > 255:
        raise ValueError("pixel values must lie in [0, 255]")
    return ((raw - DTYPE(PIXEL_MEAN)) / DTYPE(PIXEL_SCALE)).astype(DTYPE)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# -- pair lists -------------------------------------------------------------


@dataclass
class PairList:
    entries: list  # (ref_a, ref_b, label) with label 1 = same, 0 = different
    folds: int = 10

    def __post_init__(self):
        if self.folds < 2:
            raise PairListError(f"need at least 2 folds, got {self.folds}")
        if len(self.entries) % self.folds:
            raise PairListError(
                f"{len(self.entries)} pairs cannot be split into {self.folds} equal folds"
            )

    @property
    def labels(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries], dtype=np.int8)


def parse_pairs(text: str, base_dir: str = "") -> PairList:
    """Parse the tab-separated pair format with a ``#folds=N`` header line."""
    folds = None
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            key, _, value = stripped[1:].partition("=")
            if key.strip() == "folds":
                try:
                    folds = int(value)
                except ValueError:
                    raise PairListError(f"line {lineno}: bad fold count {value!r}") from None
            continue
        fields = line.rstrip("\r\n").split("\t")
        if len(fields) != 3 or not fields[0] or not fields[1]:
            raise PairListError(f"line {lineno}: expected 'pathA<TAB>pathB<TAB>label'")
        if fields[2].strip() not in ("0", "1"):
            raise PairListError(f"line {lineno}: label must be 0 or 1, got {fields[2]!r}")
        a, b = (f if os.path.isabs(f) else os.path.join(base_dir, f) for f in fields[:2])
        entries.append((a, b, int(fields[2])))
    if folds is None:
        raise PairListError("missing '#folds=N' header")
    return PairList(entries, folds)


def read_pairs(path) -> PairList:
    with open(path, encoding="utf-8") as fh:
        return parse_pairs(fh.read(), os.path.dirname(os.fspath(path)))


def format_pairs(pairs: PairList) -> str:
    lines = [f"#folds={pairs.folds}"]
    lines += [f"{a}\t{b}\t{label}" for a, b, label in pairs.entries]
    return "\n".join(lines) + "\n"


# -- images and embeddings --------------------------------------------------


def load_raw_image(path) -> np.ndarray:
    """Read a PPM (P6) or single-tensor MBFW file as 0-255 pixels ``[3, H, W]``."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ImageLoadError(f"cannot read image {path}: {exc.strerror}") from exc
    try:
        if data[:4] == wio.MAGIC:
            store = wio.loads(data)
            if len(store) != 1:
                raise ImageLoadError(f"{path}: expected one tensor, found {len(store)}")
            img = next(iter(store.values()))
            return img[0] if img.ndim == 4 and img.shape[0] == 1 else img
        return decode_ppm(data)
    except ValueError as exc:
        if isinstance(exc, ImageLoadError):
            raise
        raise ImageLoadError(f"{path}: {exc}") from exc


def load_face(path) -> np.ndarray:
    try:
        return preprocess(load_raw_image(path))
    except (ShapeError, ValueError) as exc:
        if isinstance(exc, ImageLoadError):
            raise
        raise ImageLoadError(f"{path}: {exc}") from exc


def embed_faces(net: graph.NetworkSpec, weights: Mapping, faces: np.ndarray,
                head: graph.FlipHeadSpec | None = None, use_flip_head: bool = False) -> np.ndarray:
    """Embeddings for a batch of preprocessed faces, flip-averaged when asked."""
    if use_flip_head:
        if head is None:
            raise ValueError("use_flip_head requires a flip head")
        return graph.embed_with_flip(net, head, weights, faces)
    return graph.forward(net, weights, faces)


def embed_files(net, weights, paths: Sequence, head=None, use_flip_head=False,
                loader: Callable = load_face, threads: int = 1) -> dict:
    """``path -> L2-normalised embedding`` for each unique path."""
    unique = list(dict.fromkeys(paths))

    def one(path):
        face = loader(path)
        return l2_normalize(embed_faces(net, weights, face[None], head, use_flip_head)[0])

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            vectors = list(pool.map(one, unique))
    else:
        vectors = [one(p) for p in unique]
    return dict(zip(unique, vectors))


# -- k-fold protocol --------------------------------------------------------


@dataclass
class PairEvalResult:
    thresholds: list
    accuracies: list
    mean_accuracy: float
    std_accuracy: float
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "folds": [{"fold": i, "threshold": t, "accuracy": a}
                      for i, (t, a) in enumerate(zip(self.thresholds, self.accuracies))],
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            **self.extra,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def best_threshold(scores: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Threshold maximising accuracy of ``score > threshold`` as "same".

    Candidates are the midpoints between sorted unique scores plus one value
    below the minimum and one above the maximum. Ties go to the lowest.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    uniq = np.unique(scores)
    candidates = np.concatenate([[uniq[0] - 1.0], (uniq[:-1] + uniq[1:]) / 2, [uniq[-1] + 1.0]])
    pos = np.sort(scores[labels])
    neg = np.sort(scores[~labels])
    # Same-pairs above the threshold plus different-pairs at or below it.
    correct = (len(pos) - np.searchsorted(pos, candidates, side="right")) + np.searchsorted(
        neg, candidates, side="right")
    best = int(np.argmax(correct))  # first maximum = lowest threshold
    return float(candidates[best]), float(correct[best] / len(scores))


def evaluate_scores(scores: Sequence[float], labels: Sequence[int], folds: int = 10) -> PairEvalResult:
    """k-fold verification accuracy: each fold is scored at the threshold tuned on the rest.

    Folds are contiguous, equal-sized slices in list order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if folds < 2:
        raise PairListError(f"need at least 2 folds, got {folds}")
    if len(scores) != len(labels) or len(scores) % folds:
        raise PairListError(f"{len(scores)} pairs cannot be split into {folds} equal folds")
    fold_of = np.repeat(np.arange(folds), len(scores) // folds)
    thresholds, accuracies = [], []
    for f in range(folds):
        train = fold_of != f
        thr, _ = best_threshold(scores[train], labels[train])
        test = ~train
        acc = float(np.mean((scores[test] > thr) == labels[test]))
        thresholds.append(thr)
        accuracies.append(acc)
    return PairEvalResult(thresholds, accuracies, float(np.mean(accuracies)), float(np.std(accuracies)))


def evaluate_pairs(net: graph.NetworkSpec, weights: Mapping, pairs: PairList,
                   use_flip_head: bool = False, head: graph.FlipHeadSpec | None = None,
                   loader: Callable = load_face, threads: int = 1) -> PairEvalResult:
    """Run the pair protocol end to end on image files (or anything ``loader`` resolves)."""
    refs = [r for a, b, _ in pairs.entries for r in (a, b)]
    emb = embed_files(net, weights, refs, head, use_flip_head, loader, threads)
    scores = [float(emb[a] @ emb[b]) for a, b, _ in pairs.entries]
    result = evaluate_scores(scores, pairs.labels, pairs.folds)
    result.extra["flip_head"] = bool(use_flip_head)
    result.extra["pairs"] = len(pairs.entries)
    return result
