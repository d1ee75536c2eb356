"""Synthetic two-strain microwell growth on a pixel lattice.

Colonies start as small discs inside a circular well and grow by stochastic
dilation: an empty in-well pixel next to a colony is taken over with a
probability that shrinks logistically as the well fills. Green (the
contact-killing strain) can clear adjacent red pixels. Frames render red
occupancy into the R channel and green into G with per-pixel brightness and
texture noise; B stays dark.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .video import ColorSpace, DatasetManifest, Split, Video, WellRecord, write_manifest

EMPTY, RED, GREEN = 0, 1, 2
SPECIES = {RED: "red", GREEN: "green"}


@dataclass(frozen=True)
class SimConfig:
    image_size: int = 24
    frames: int = 14
    well_radius: float = 10.0
    well_offset: tuple[float, float] = (0.0, 0.0)
    seeds_red: int = 2
    seeds_green: int = 2
    seed_radius: float = 1.5
    growth_rate: float = 2.0
    substeps: int = 2
    carrying_capacity: float = 0.95
    kill_strength: float = 0.05
    symmetric_kill: bool = False
    noise_sigma: float = 0.03
    red_green_balance: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        problems = []
        if self.seeds_red < 0 or self.seeds_green < 0 or self.seeds_red + self.seeds_green == 0:
            problems.append("need a non-negative seed count for each species and at least one seed")
        if self.growth_rate < 0 or self.substeps < 1:
            problems.append("growth_rate must be >= 0 and substeps >= 1")
        if not (0 < self.carrying_capacity <= 1):
            problems.append("carrying_capacity must lie in (0, 1]")
        if not (0 <= self.kill_strength <= 1) or not (0 <= self.red_green_balance <= 1):
            problems.append("kill_strength and red_green_balance must lie in [0, 1]")
        if self.noise_sigma < 0 or self.frames < 1 or self.seed_radius <= 0:
            problems.append("noise_sigma >= 0, frames >= 1, seed_radius > 0 required")
        c = (self.image_size - 1) / 2.0
        cr, cc = c + self.well_offset[0], c + self.well_offset[1]
        r = self.well_radius
        if r <= 0 or cr - r < -0.5 or cc - r < -0.5 or cr + r > self.image_size - 0.5 or cc + r > self.image_size - 0.5:
            problems.append(f"well of radius {r} at ({cr}, {cc}) does not fit a {self.image_size}px image")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def well_center(self) -> tuple[float, float]:
        c = (self.image_size - 1) / 2.0
        return c + self.well_offset[0], c + self.well_offset[1]

    def species_weights(self) -> dict[int, float]:
        """Relative seed size and growth multiplier; equal at balance 0.5."""
        return {RED: 0.5 + self.red_green_balance, GREEN: 1.5 - self.red_green_balance}


@dataclass
class SimTruth:
    center: tuple[float, float]
    radius: float
    seeds: list[dict]
    labels: np.ndarray  # (T, H, W) of EMPTY/RED/GREEN
    brightness: np.ndarray  # (T, H, W) base brightness of occupied pixels, 0 elsewhere
    well_mask: np.ndarray = field(repr=False, default=None)

    def occupied(self, species: int) -> np.ndarray:
        """Per-frame occupied pixel counts for one species."""
        return (self.labels == species).sum(axis=(1, 2))

    def weighted(self, species: int) -> np.ndarray:
        return np.where(self.labels == species, self.brightness, 0.0).sum(axis=(1, 2))

    def to_json(self) -> dict:
        frames = []
        for lab in self.labels:
            frames.append({SPECIES[s]: np.argwhere(lab == s).tolist() for s in (RED, GREEN)})
        return {
            "center": list(self.center),
            "radius": self.radius,
            "seeds": self.seeds,
            "frames": frames,
            "brightness_sum": {SPECIES[s]: self.weighted(s).tolist() for s in (RED, GREEN)},
        }


def _neighbour_count(mask: np.ndarray) -> np.ndarray:
    """Number of 4-connected neighbours set in ``mask``."""
    m = mask.astype(np.int8)
    out = np.zeros(mask.shape, dtype=np.int8)
    out[1:, :] += m[:-1, :]
    out[:-1, :] += m[1:, :]
    out[:, 1:] += m[:, :-1]
    out[:, :-1] += m[:, 1:]
    return out


def _well_mask(cfg: SimConfig) -> np.ndarray:
    rows, cols = np.mgrid[: cfg.image_size, : cfg.image_size]
    cr, cc = cfg.well_center
    return (rows - cr) ** 2 + (cols - cc) ** 2 <= cfg.well_radius ** 2


def _grow(labels, brightness, well, cfg: SimConfig, rng) -> None:
    area = well.sum()
    capacity = int(np.floor(cfg.carrying_capacity * area))
    weights = cfg.species_weights()
    for _ in range(cfg.substeps):
        occupied = int((labels != EMPTY).sum())
        room = capacity - occupied
        if room <= 0:
            return
        base = cfg.growth_rate / cfg.substeps * (1.0 - occupied / (cfg.carrying_capacity * area))
        empty = well & (labels == EMPTY)
        take = {}
        for s in (RED, GREEN):
            p = np.clip(base * weights[s], 0.0, 1.0)
            n = _neighbour_count(labels == s)
            take[s] = 1.0 - (1.0 - p) ** n
        u_red = rng.random(labels.shape)
        u_green = rng.random(labels.shape)
        u_tie = rng.random(labels.shape)
        got_red = empty & (u_red < take[RED])
        got_green = empty & (u_green < take[GREEN])
        both = got_red & got_green
        share = np.divide(take[RED], take[RED] + take[GREEN], out=np.zeros(labels.shape),
                          where=(take[RED] + take[GREEN]) > 0)
        red_wins = u_tie < share
        new_red = got_red & ~(both & ~red_wins)
        new_green = got_green & ~(both & red_wins)
        candidates = np.flatnonzero((new_red | new_green).ravel())
        if candidates.size > room:
            keep = np.zeros(labels.size, dtype=bool)
            keep[rng.permutation(candidates)[:room]] = True
            keep = keep.reshape(labels.shape)
            new_red &= keep
            new_green &= keep
        fresh = new_red | new_green
        labels[new_red] = RED
        labels[new_green] = GREEN
        brightness[fresh] = rng.uniform(0.7, 1.0, size=int(fresh.sum()))


def _kill(labels, brightness, cfg: SimConfig, rng) -> None:
    if cfg.kill_strength <= 0:
        return
    red, green = labels == RED, labels == GREEN
    u = rng.random(labels.shape)
    dead = red & (_neighbour_count(green) > 0) & (u < cfg.kill_strength)
    if cfg.symmetric_kill:
        dead |= green & (_neighbour_count(red) > 0) & (u < cfg.kill_strength)
    labels[dead] = EMPTY
    brightness[dead] = 0.0


def _seed(labels, brightness, well, cfg: SimConfig, rng) -> list[dict]:
    cr, cc = cfg.well_center
    weights = cfg.species_weights()
    rows, cols = np.mgrid[: cfg.image_size, : cfg.image_size]
    inner = max(cfg.well_radius - 2.0, 0.5)
    order = [RED] * cfg.seeds_red + [GREEN] * cfg.seeds_green
    seeds = []
    for s in order:
        rho = inner * np.sqrt(rng.random())
        theta = rng.uniform(0.0, 2.0 * np.pi)
        r0, c0 = cr + rho * np.sin(theta), cc + rho * np.cos(theta)
        radius = cfg.seed_radius * weights[s]
        disc = (rows - r0) ** 2 + (cols - c0) ** 2 <= radius ** 2
        disc[int(np.clip(round(r0), 0, cfg.image_size - 1)), int(np.clip(round(c0), 0, cfg.image_size - 1))] = True
        disc &= well & (labels == EMPTY)
        labels[disc] = s
        brightness[disc] = rng.uniform(0.7, 1.0, size=int(disc.sum()))
        seeds.append({"species": SPECIES[s], "row": float(r0), "col": float(c0), "radius": float(radius)})
    return seeds


def simulate_well(cfg: SimConfig) -> tuple[Video, SimTruth]:
    rng = np.random.default_rng(cfg.rng_seed)
    size = cfg.image_size
    well = _well_mask(cfg)
    labels = np.zeros((size, size), dtype=np.int8)
    brightness = np.zeros((size, size))
    seeds = _seed(labels, brightness, well, cfg, rng)

    all_labels = [labels.copy()]
    all_bright = [brightness.copy()]
    for _ in range(1, cfg.frames):
        if cfg.growth_rate > 0:
            _grow(labels, brightness, well, cfg, rng)
            _kill(labels, brightness, cfg, rng)
        all_labels.append(labels.copy())
        all_bright.append(brightness.copy())
    labels_t = np.stack(all_labels)
    bright_t = np.stack(all_bright)

    # texture noise drawn for every pixel so the stream does not depend on occupancy
    noise = rng.normal(0.0, cfg.noise_sigma, size=labels_t.shape) if cfg.noise_sigma > 0 else 0.0
    level = np.clip(bright_t + noise, 0.0, 1.0)
    video = np.zeros(labels_t.shape + (3,))
    video[..., 0] = np.where(labels_t == RED, level, 0.0)
    video[..., 1] = np.where(labels_t == GREEN, level, 0.0)
    truth = SimTruth(cfg.well_center, cfg.well_radius, seeds, labels_t, bright_t, well)
    return Video(video, ColorSpace.RGB), truth


def saturation_frame(truth: SimTruth, carrying_capacity: float, level: float = 0.9) -> int | None:
    """First frame whose occupied fraction reaches ``level * carrying_capacity``."""
    frac = (truth.labels != EMPTY).sum(axis=(1, 2)) / truth.well_mask.sum()
    hits = np.flatnonzero(frac >= level * carrying_capacity)
    return int(hits[0]) if hits.size else None


@dataclass(frozen=True)
class CorpusConfig:
    """Per-well variation drawn around a base :class:`SimConfig`."""

    base: SimConfig = SimConfig()
    seeds_range: tuple[int, int] = (1, 3)
    max_offset: float = 1.0
    rng_seed: int = 0


def well_config(corpus: CorpusConfig, index: int) -> SimConfig:
    rng = np.random.default_rng([corpus.rng_seed, index])
    lo, hi = corpus.seeds_range
    offset = tuple(float(v) for v in np.round(rng.uniform(-corpus.max_offset, corpus.max_offset, 2), 2))
    return replace(
        corpus.base,
        seeds_red=int(rng.integers(lo, hi + 1)),
        seeds_green=int(rng.integers(lo, hi + 1)),
        well_offset=offset,
        rng_seed=int(rng.integers(2 ** 63)),
    )


def _simulate_indexed(args):
    corpus, index = args
    cfg = well_config(corpus, index)
    video, truth = simulate_well(cfg)
    return cfg, video, truth


def simulate_corpus(n_wells: int, corpus: CorpusConfig, workers: int = 1):
    if n_wells < 1:
        raise ConfigError("n_wells must be >= 1")
    jobs = [(corpus, i) for i in range(n_wells)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_simulate_indexed, jobs))
    return [_simulate_indexed(j) for j in jobs]


def generate_corpus(n_wells: int, corpus: CorpusConfig, out_dir: str | os.PathLike,
                    workers: int = 1) -> DatasetManifest:
    """Simulate ``n_wells`` wells and write videos, truth JSON and a raw manifest."""
    out_dir = Path(out_dir)
    results = simulate_corpus(n_wells, corpus, workers)
    records = []
    truth_dir = out_dir / "truth"
    truth_dir.mkdir(parents=True, exist_ok=True)
    for i, (cfg, video, truth) in enumerate(results):
        well_id = f"W{i:03d}"
        records.append(WellRecord(well_id, video, Split.RAW))
        doc = {"well_id": well_id, "config": asdict(cfg), **truth.to_json()}
        (truth_dir / f"{well_id}.json").write_text(json.dumps(doc) + "\n")
    manifest = DatasetManifest(records, seed=corpus.rng_seed)
    write_manifest(manifest, out_dir)
    return manifest
