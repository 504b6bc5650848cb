"""Synthetic cross-domain data, N-way K-shot episode sampling and episode files.

A domain is a Gaussian class mixture pushed through an affine map and an
optional elementwise ``tanh``; the map is the domain-shift knob.  Every
random draw comes from a stream derived from ``(root seed, purpose, index)``
so any episode can be regenerated in isolation.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._jsonio import dumps
from .exceptions import ConfigError, FormatError

EPISODE_FORMAT_VERSION = 1


def derive_seed(root_seed: int, purpose: str, index: int = 0) -> int:
    """Stable 63-bit seed for an independent stream."""
    ss = np.random.SeedSequence([int(root_seed), zlib.crc32(purpose.encode()), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def derive_rng(root_seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, purpose, index))


@dataclass
class DomainSpec:
    name: str
    input_dim: int
    class_ids: list
    class_means: np.ndarray
    class_scales: np.ndarray
    transform: np.ndarray
    offset: np.ndarray
    nonlinearity: str = "none"
    seed: int = 0


class Domain:
    """Immutable sampler: ``transform(mean_c + scale_c * z)`` with ``z ~ N(0, I)``."""

    def __init__(self, spec: DomainSpec):
        self.spec = spec
        self.class_ids = list(spec.class_ids)
        self.input_dim = spec.input_dim
        self.seed = spec.seed
        self._means = np.asarray(spec.class_means, dtype=np.float64)
        self._scales = np.asarray(spec.class_scales, dtype=np.float64)
        self._A = np.asarray(spec.transform, dtype=np.float64)
        self._b = np.asarray(spec.offset, dtype=np.float64)

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)

    def apply_transform(self, x: np.ndarray) -> np.ndarray:
        out = x @ self._A.T + self._b
        if self.spec.nonlinearity == "tanh":
            out = np.tanh(out)
        return out

    def sample(self, class_index: int, n: int, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((n, self.input_dim))
        return self.apply_transform(self._means[class_index] + self._scales[class_index] * z)


def make_domain(spec: DomainSpec) -> Domain:
    n = len(spec.class_ids)
    if len(set(spec.class_ids)) != n:
        raise ConfigError(f"domain {spec.name}: class ids are not unique")
    means = np.asarray(spec.class_means)
    if means.shape != (n, spec.input_dim):
        raise ConfigError(f"domain {spec.name}: class_means must have shape ({n}, {spec.input_dim})")
    scales = np.asarray(spec.class_scales)
    if scales.shape != (n,) or not (scales > 0).all():
        raise ConfigError(f"domain {spec.name}: class_scales must be {n} positive numbers")
    if np.asarray(spec.transform).shape != (spec.input_dim, spec.input_dim):
        raise ConfigError(f"domain {spec.name}: transform must be square of size {spec.input_dim}")
    if spec.nonlinearity not in ("none", "tanh"):
        raise ConfigError(f"domain {spec.name}: nonlinearity must be 'none' or 'tanh'")
    return Domain(spec)


@dataclass
class AdaptTask:
    """What the target-domain adapter is allowed to see: no query labels."""

    n_way: int
    k_shot: int
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    seed: int = 0


@dataclass
class Episode:
    n_way: int
    k_shot: int
    q_per_class: int
    support_x: np.ndarray
    support_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray
    class_map: tuple
    seed: int = 0

    def __post_init__(self):
        n, k, q = self.n_way, self.k_shot, self.q_per_class
        if self.support_x.shape[0] != n * k or self.support_y.shape != (n * k,):
            raise ValueError(f"support must hold {n}x{k} instances")
        if self.query_x.shape[0] != n * q or self.query_y.shape != (n * q,):
            raise ValueError(f"query must hold {n}x{q} instances")
        if len(set(self.class_map)) != n:
            raise ValueError("class_map must be injective with n_way entries")
        for y, per in ((self.support_y, k), (self.query_y, q)):
            if np.any(y < 0) or np.any(y >= n) or np.any(np.bincount(y, minlength=n) != per):
                raise ValueError("labels must be balanced indices in [0, n_way)")

    def task(self) -> AdaptTask:
        return AdaptTask(self.n_way, self.k_shot, self.support_x, self.support_y,
                         self.query_x, self.seed)


def sample_episode(domain: Domain, n_way: int, k_shot: int, q_per_class: int,
                   episode_seed: int) -> Episode:
    """Draw one episode; classes without replacement, support and query drawn fresh."""
    if n_way > domain.n_classes:
        raise ConfigError(
            f"cannot sample {n_way}-way episodes from {domain.n_classes} classes in {domain.spec.name}")
    if n_way < 1 or k_shot < 1 or q_per_class < 1:
        raise ConfigError("n_way, k_shot and q_per_class must be positive")
    rng = np.random.default_rng(np.random.SeedSequence([int(domain.seed), int(episode_seed)]))
    chosen = rng.choice(domain.n_classes, size=n_way, replace=False)
    sx, qx = [], []
    for c in chosen:
        draws = domain.sample(int(c), k_shot + q_per_class, rng)
        sx.append(draws[:k_shot])
        qx.append(draws[k_shot:])
    labels = np.arange(n_way)
    return Episode(
        n_way, k_shot, q_per_class,
        support_x=np.concatenate(sx), support_y=np.repeat(labels, k_shot),
        query_x=np.concatenate(qx), query_y=np.repeat(labels, q_per_class),
        class_map=tuple(domain.class_ids[int(c)] for c in chosen),
        seed=int(episode_seed),
    )


# ---------------------------------------------------------------------------
# benchmark construction
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkSpec:
    input_dim: int = 16
    n_source_classes: int = 40
    n_target_classes: int = 20
    class_sep: float = 1.0
    noise: float = 1.0
    shift_rotation: bool = True
    shift_anisotropy: float = 2.0
    shift_offset: float = 0.5
    shift_tanh: bool = False


def _random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def make_benchmark(root_seed: int, spec: BenchmarkSpec = BenchmarkSpec()) -> tuple[Domain, Domain]:
    """Source and target domains with disjoint classes and a shifted target input space."""
    rng = derive_rng(root_seed, "benchmark")
    d = spec.input_dim
    n_src, n_tgt = spec.n_source_classes, spec.n_target_classes
    means = rng.standard_normal((n_src + n_tgt, d)) * spec.class_sep
    scales = spec.noise * rng.uniform(0.75, 1.25, size=n_src + n_tgt)

    source = DomainSpec(
        name="source", input_dim=d, class_ids=list(range(n_src)),
        class_means=means[:n_src], class_scales=scales[:n_src],
        transform=np.eye(d), offset=np.zeros(d), nonlinearity="none",
        seed=derive_seed(root_seed, "domain.source"),
    )
    rot = _random_rotation(d, rng) if spec.shift_rotation else np.eye(d)
    log_a = np.log(spec.shift_anisotropy)
    stretch = np.exp(rng.uniform(-log_a, log_a, size=d))
    target = DomainSpec(
        name="target", input_dim=d, class_ids=list(range(n_src, n_src + n_tgt)),
        class_means=means[n_src:], class_scales=scales[n_src:],
        transform=rot * stretch[:, None], offset=rng.standard_normal(d) * spec.shift_offset,
        nonlinearity="tanh" if spec.shift_tanh else "none",
        seed=derive_seed(root_seed, "domain.target"),
    )
    return make_domain(source), make_domain(target)


# ---------------------------------------------------------------------------
# episode files (JSON lines)
# ---------------------------------------------------------------------------

def write_episodes(path, episodes: list[Episode]) -> Path:
    if not episodes:
        raise FormatError("no episodes to write")
    first = episodes[0]
    header = {
        "format_version": EPISODE_FORMAT_VERSION,
        "input_dim": int(first.support_x.shape[1]),
        "n_way": first.n_way,
        "k_shot": first.k_shot,
        "q_per_class": first.q_per_class,
    }
    lines = [dumps(header)]
    for ep in episodes:
        if (ep.n_way, ep.k_shot, ep.q_per_class) != (first.n_way, first.k_shot, first.q_per_class):
            raise FormatError("all episodes in one file must share n_way, k_shot and q_per_class")
        lines.append(dumps({
            "seed": ep.seed,
            "class_map": list(ep.class_map),
            "support": [[x, int(y)] for x, y in zip(ep.support_x, ep.support_y)],
            "query": [[x, int(y)] for x, y in zip(ep.query_x, ep.query_y)],
        }))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def _split(records, lineno, what, input_dim):
    try:
        xs = np.array([r[0] for r in records], dtype=np.float64)
        ys = np.array([int(r[1]) for r in records], dtype=np.int64)
    except (TypeError, ValueError, IndexError) as exc:
        raise FormatError(f"line {lineno}: malformed {what} records ({exc})") from None
    if xs.ndim != 2 or xs.shape[1] != input_dim:
        raise FormatError(f"line {lineno}: {what} vectors must have length {input_dim}")
    return xs, ys


def read_episodes(path) -> list[Episode]:
    lines = [ln for ln in Path(path).read_text().splitlines()]
    if not any(ln.strip() for ln in lines):
        raise FormatError(f"{path}: no episodes (file is empty)")
    try:
        header = json.loads(lines[0])
        version = header["format_version"]
        input_dim, n, k, q = (int(header[key]) for key in ("input_dim", "n_way", "k_shot", "q_per_class"))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"line 1: bad episode file header ({exc})") from None
    if version != EPISODE_FORMAT_VERSION:
        raise FormatError(f"line 1: unsupported format_version {version!r}")
    episodes = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            support, query = rec["support"], rec["query"]
            class_map = tuple(int(c) for c in rec["class_map"])
            seed = int(rec.get("seed", 0))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"line {lineno}: malformed episode ({exc})") from None
        sx, sy = _split(support, lineno, "support", input_dim)
        qx, qy = _split(query, lineno, "query", input_dim)
        if len(sy) != n * k or np.any(np.bincount(sy, minlength=n)[:n] != k) or len(class_map) != n:
            raise FormatError(
                f"line {lineno}: support does not match header n_way={n}, k_shot={k}")
        if len(qy) != n * q:
            raise FormatError(
                f"line {lineno}: query does not match header n_way={n}, q_per_class={q}")
        try:
            episodes.append(Episode(n, k, q, sx, sy, qx, qy, class_map, seed))
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    if not episodes:
        raise FormatError(f"{path}: no episodes after the header")
    return episodes
