"""End-to-end sample synthesis: photometric jitter, sign transform chain,
stacked/non-intersecting placement, final blur, annotation records.

Every sample is a pure function of (config, backgrounds, catalog,
sample_index). Each index gets its own RNG stream, and draws happen in a
fixed order regardless of worker count or scheduling:

  background index -> placement plan (count; per sign: class, scale,
  stacking flag) -> gain, offset -> per sign: perspective offsets, angle
  -> per stack chain: gaps, then position attempts -> per placed sign:
  pixel noise -> blur sigma.

Passing ``background=None`` to synthesize_sample runs the same geometry
(warps, placement, annotations) without touching any canvas pixels; the
resulting boxes are identical to a painted run, which keeps large-scale
statistics cheap to compute.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import imageops
from .dataset_io import (
    GroundTruthBox,
    ImageRecord,
    read_image_rgb,
    write_annotations,
    write_image_png,
)
from .errors import ConfigError, SampleError, ValidationError
from .imageops import PerspectiveJitter, Rgba
from .template_catalog import Catalog

logger = logging.getLogger(__name__)

CANVAS_SIZE = 1500

# Fraction of the upper sign's height bounding the random stacking gap.
STACK_GAP_FRAC = 0.1

# Position attempts per sign before it is dropped from the sample.
PLACEMENT_ATTEMPTS = 100

PRESETS: dict[str, dict] = {
    # Conventional augmentation strengths for parity experiments: mild
    # fixed-range blur and a narrower brightness offset.
    "baseline": {
        "offset_range": (-40.0, 40.0),
        "blur_max_coeff": 2.0,
        "blur_scale_relative": False,
    },
}


@dataclass
class GenerationConfig:
    """All knobs of the synthesis pipeline.

    ``size_range`` is the operating range: the minimum and maximum
    on-image sign size in pixels the downstream detector must handle. It
    is deployment-specific, so it has no default and must be calibrated
    by the user.
    """

    n_samples: int
    size_range: tuple[float, float]
    master_seed: int = 0
    gain_range: tuple[float, float] = (0.75, 1.25)
    offset_range: tuple[float, float] = (-120.0, 120.0)
    count_support: tuple[int, ...] = (1, 2, 3, 4, 5)
    stack_p1: float = 0.40
    stack_p2: float = 0.50
    rotation_range: tuple[float, float] = (-10.0, 10.0)
    perspective_p: float = 0.1
    jitter_amplitude: float = 8.0
    fade_frac: float = 0.08
    brightness_constant: float = 128.0
    blur_max_coeff: float = 7.0
    blur_scale_relative: bool = True

    def __post_init__(self):
        self.size_range = tuple(float(v) for v in self.size_range)  # type: ignore[assignment]
        self.gain_range = tuple(float(v) for v in self.gain_range)  # type: ignore[assignment]
        self.offset_range = tuple(float(v) for v in self.offset_range)  # type: ignore[assignment]
        self.rotation_range = tuple(float(v) for v in self.rotation_range)  # type: ignore[assignment]
        self.count_support = tuple(int(v) for v in self.count_support)  # type: ignore[assignment]
        self.validate()

    def validate(self) -> None:
        if self.n_samples < 0:
            raise ConfigError("n_samples must be >= 0")
        if self.master_seed < 0:
            raise ConfigError("master_seed must be >= 0")
        lo, hi = self.gain_range
        if lo <= 0 or hi < lo:
            raise ConfigError(f"gain_range must be positive and ordered, got {self.gain_range}")
        if self.offset_range[1] < self.offset_range[0]:
            raise ConfigError(f"offset_range must be ordered, got {self.offset_range}")
        min_size, max_size = self.size_range
        if not (8 <= min_size <= max_size <= CANVAS_SIZE):
            raise ConfigError(
                f"size_range must satisfy 8 <= min <= max <= {CANVAS_SIZE}, "
                f"got {self.size_range}"
            )
        if not self.count_support:
            raise ConfigError("count_support must not be empty")
        if any(c < 1 or c > 5 for c in self.count_support):
            raise ConfigError(f"count_support values must be in [1, 5], got {self.count_support}")
        for name in ("stack_p1", "stack_p2"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        if self.rotation_range[1] < self.rotation_range[0]:
            raise ConfigError(f"rotation_range must be ordered, got {self.rotation_range}")
        if not 0.0 <= self.perspective_p < 0.5:
            raise ConfigError(f"perspective_p must be in [0, 0.5), got {self.perspective_p}")
        if self.jitter_amplitude < 0:
            raise ConfigError("jitter_amplitude must be >= 0")
        if not 0.0 <= self.fade_frac < 0.5:
            raise ConfigError(f"fade_frac must be in [0, 0.5), got {self.fade_frac}")
        if not 0.0 <= self.brightness_constant <= 255.0:
            raise ConfigError("brightness_constant must be in [0, 255]")
        if self.blur_max_coeff < 0:
            raise ConfigError("blur_max_coeff must be >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationConfig":
        data = dict(data)
        preset_name = data.pop("preset", None)
        values: dict = {}
        if preset_name is not None:
            if preset_name not in PRESETS:
                raise ConfigError(
                    f"unknown preset {preset_name!r}; available: {sorted(PRESETS)}"
                )
            values.update(PRESETS[preset_name])
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        values.update(data)
        missing = sorted({"n_samples", "size_range"} - set(values))
        if missing:
            raise ConfigError(f"config is missing required keys: {missing}")
        return cls(**values)

    @classmethod
    def from_json(cls, document: bytes | str) -> "GenerationConfig":
        try:
            data = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc.msg} at position {exc.pos}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config document must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    def with_overrides(self, **kwargs) -> "GenerationConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class PlannedSign:
    class_id: int
    scale_px: float
    stacked: bool  # placed directly below the previous sign


@dataclass
class SignTransform:
    gain: float
    theta_deg: float
    scale_px: float
    corner_offsets: list[list[float]]
    region_mean: float | None = None


@dataclass
class PlacedSign:
    class_id: int
    bbox: tuple[int, int, int, int]  # (x, y, w, h) in sample coordinates
    transform: SignTransform


@dataclass
class SyntheticSample:
    image: np.ndarray | None  # None for geometry-only runs
    signs: list[PlacedSign]
    sample_index: int | None = None
    background_index: int | None = None
    blur_sigma: float | None = None
    masks: list[np.ndarray] | None = None  # post-fade alpha per sign

    def __post_init__(self):
        if not 1 <= len(self.signs) <= 5:
            raise SampleError(f"sample must contain 1..5 signs, got {len(self.signs)}")
        boxes = [s.bbox for s in self.signs]
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if _overlap_area(boxes[i], boxes[j]) > 0:
                    raise SampleError(f"boxes {boxes[i]} and {boxes[j]} intersect")


def derive_sample_rng(master_seed: int, sample_index: int) -> np.random.Generator:
    """A deterministic, per-index RNG stream, independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(sample_index)]))


def plan_placements(
    rng: np.random.Generator, config: GenerationConfig, catalog: Catalog
) -> list[PlannedSign]:
    """Draw the sign count, classes, scales, and stacking flags.

    Classes are uniform with replacement over 1..M; scales are uniform
    over the operating range. A sign starts a stack below its predecessor
    with probability stack_p1, and extends an existing stack with
    probability stack_p2.
    """
    support = config.count_support
    count = support[int(rng.integers(len(support)))]
    min_size, max_size = config.size_range
    plan = []
    prev_stacked = False
    for j in range(count):
        class_id = int(rng.integers(1, catalog.class_count + 1))
        scale_px = float(rng.uniform(min_size, max_size))
        if j == 0:
            stacked = False
        else:
            p = config.stack_p2 if prev_stacked else config.stack_p1
            stacked = bool(rng.random() < p)
        prev_stacked = stacked
        plan.append(PlannedSign(class_id, scale_px, stacked))
    return plan


@dataclass
class _PreparedSign:
    plan: PlannedSign
    carrier: Rgba  # warped, cropped to its alpha support
    transform: SignTransform


def _overlap_area(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> int:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    w = min(ax + aw, bx + bw) - max(ax, bx)
    h = min(ay + ah, by + bh) - max(ay, by)
    return max(0, w) * max(0, h)


def _warp_planned_signs(
    plan: Sequence[PlannedSign],
    gain: float,
    rng: np.random.Generator,
    config: GenerationConfig,
    catalog: Catalog,
) -> list[_PreparedSign]:
    prepared = []
    for planned in plan:
        template = catalog.templates[planned.class_id]
        carrier = imageops.scale_gain_template(template.to_rgba(), gain)
        offsets = rng.uniform(
            -config.perspective_p, config.perspective_p, size=(4, 2)
        ) * template.nominal_size
        theta = float(rng.uniform(*config.rotation_range))
        warped = imageops.warp_template(
            carrier, PerspectiveJitter(offsets), theta, planned.scale_px
        )
        cropped = imageops.crop_to_alpha_support(warped)
        if cropped is None:
            raise ValidationError(
                f"template {planned.class_id} warped to an empty support"
            )
        prepared.append(
            _PreparedSign(
                plan=planned,
                carrier=cropped[0],
                transform=SignTransform(
                    gain=gain,
                    theta_deg=theta,
                    scale_px=planned.scale_px,
                    corner_offsets=offsets.tolist(),
                ),
            )
        )
    return prepared


def _group_chains(prepared: Sequence[_PreparedSign]) -> list[list[_PreparedSign]]:
    chains: list[list[_PreparedSign]] = []
    for sign in prepared:
        if sign.plan.stacked and chains:
            chains[-1].append(sign)
        else:
            chains.append([sign])
    return chains


def _chain_geometry(
    members: Sequence[_PreparedSign], gaps: Sequence[float]
) -> tuple[list[tuple[int, int, int, int]], int, int]:
    """Member boxes relative to the chain origin, plus the chain size.

    Members share the chain's horizontal center (within integer rounding)
    and follow each other vertically with the drawn gaps.
    """
    widths = [m.carrier.width for m in members]
    heights = [m.carrier.height for m in members]
    chain_w = max(widths)
    rel = []
    y = 0
    for k, (w, h) in enumerate(zip(widths, heights)):
        rel.append(((chain_w - w) // 2, y, w, h))
        y += h
        if k < len(members) - 1:
            y += int(round(gaps[k]))
    return rel, chain_w, y


def _place_chains(
    chains: Sequence[Sequence[_PreparedSign]],
    chain_gaps: Sequence[Sequence[float]],
    rng: np.random.Generator,
) -> list[tuple[_PreparedSign, tuple[int, int, int, int]]]:
    """Rejection-sample a non-intersecting position per chain.

    A chain that cannot be placed sheds its last member and tries again;
    an unplaceable single sign is dropped. Chains are placed as units, so
    stacking can never force an out-of-bounds or intersecting box.
    """
    placed: list[tuple[_PreparedSign, tuple[int, int, int, int]]] = []
    taken: list[tuple[int, int, int, int]] = []
    for chain, gaps in zip(chains, chain_gaps):
        members = list(chain)
        gaps = list(gaps)
        while members:
            rel, chain_w, chain_h = _chain_geometry(members, gaps)
            if chain_w <= CANVAS_SIZE and chain_h <= CANVAS_SIZE:
                position = None
                for _ in range(PLACEMENT_ATTEMPTS):
                    x = int(rng.integers(0, CANVAS_SIZE - chain_w + 1))
                    y = int(rng.integers(0, CANVAS_SIZE - chain_h + 1))
                    boxes = [(x + rx, y + ry, w, h) for rx, ry, w, h in rel]
                    if all(
                        _overlap_area(nb, tb) == 0 for nb in boxes for tb in taken
                    ):
                        position = boxes
                        break
                if position is not None:
                    placed.extend(zip(members, position))
                    taken.extend(position)
                    break
            members.pop()
            gaps = gaps[: max(len(members) - 1, 0)]
    return placed


def synthesize_sample(
    background: np.ndarray | None,
    plan: Sequence[PlannedSign],
    rng: np.random.Generator,
    config: GenerationConfig,
    catalog: Catalog,
    keep_masks: bool = False,
) -> SyntheticSample:
    """Run the full blending pipeline for one sample.

    Order: photometric gain/offset on the background; per sign the same
    gain on the template rgb, then warp, placement, brightness matching
    against the covered region, pixel noise, border fade, and alpha
    compositing; finally one Gaussian blur over the whole canvas. With
    ``background=None`` only the geometry runs and ``image`` is None.
    """
    painting = background is not None
    if painting and background.shape != (CANVAS_SIZE, CANVAS_SIZE, 3):
        raise ValidationError(
            f"background must be {CANVAS_SIZE}x{CANVAS_SIZE}x3, got {background.shape}"
        )
    if not plan:
        raise SampleError("placement plan is empty")

    gain = float(rng.uniform(*config.gain_range))
    offset = float(rng.uniform(*config.offset_range))

    prepared = _warp_planned_signs(plan, gain, rng, config, catalog)
    chains = _group_chains(prepared)
    chain_gaps = [
        [float(rng.uniform(0, STACK_GAP_FRAC * chain[k].carrier.height))
         for k in range(len(chain) - 1)]
        for chain in chains
    ]

    placed = _place_chains(chains, chain_gaps, rng)
    if not placed:
        placed = _place_chains(chains, chain_gaps, rng)  # one more position pass
    if not placed:
        raise SampleError(
            f"no sign survived placement ({len(plan)} planned, sizes up to "
            f"{max(p.scale_px for p in plan):.0f} px)"
        )

    canvas = None
    if painting:
        canvas = imageops.adjust_brightness_contrast(background, gain, offset)

    signs = []
    masks: list[np.ndarray] | None = [] if keep_masks else None
    for sign, box in placed:
        x, y, w, h = box
        carrier = sign.carrier
        if painting:
            mean = imageops.region_mean(canvas, box)
            sign.transform.region_mean = mean
            carrier = imageops.match_region_brightness(
                carrier, mean, config.brightness_constant
            )
            carrier = imageops.add_jitter(carrier, config.jitter_amplitude, rng)
        faded = imageops.fade_borders(carrier, config.fade_frac)
        if painting:
            canvas = imageops.composite(canvas, faded, (x, y))
        if masks is not None:
            masks.append(faded.alpha)
        signs.append(PlacedSign(sign.plan.class_id, box, sign.transform))

    sigma = None
    if painting:
        if config.blur_scale_relative:
            scale_rel = max(s.transform.scale_px for s in signs) / config.size_range[1]
        else:
            scale_rel = 1.0
        sigma = float(rng.uniform(0, config.blur_max_coeff * scale_rel))
        canvas = imageops.gaussian_blur(canvas, sigma)

    return SyntheticSample(
        image=canvas, signs=signs, blur_sigma=sigma, masks=masks
    )


def layout_annotations(
    config: GenerationConfig,
    catalog: Catalog,
    n_backgrounds: int,
    sample_index: int,
    keep_masks: bool = False,
) -> SyntheticSample:
    """Annotations for one sample without touching background pixels.

    Consumes the same RNG draws as the painted path up to placement, so
    boxes and classes are identical to what generate_dataset would emit
    for this index.
    """
    rng = derive_sample_rng(config.master_seed, sample_index)
    background_index = int(rng.integers(n_backgrounds))
    plan = plan_placements(rng, config, catalog)
    sample = synthesize_sample(None, plan, rng, config, catalog, keep_masks=keep_masks)
    sample.sample_index = sample_index
    sample.background_index = background_index
    return sample


# Worker-process state for generate_dataset; populated once per worker so
# the catalog is not re-pickled per task.
_WORKER: dict = {}


def _init_worker(config: GenerationConfig, backgrounds: list[str], catalog: Catalog,
                 out_dir: str, run_id: str) -> None:
    _WORKER.update(
        config=config, backgrounds=backgrounds, catalog=catalog,
        out_dir=Path(out_dir), run_id=run_id,
    )


def _sign_record(sign: PlacedSign) -> dict:
    return {
        "class_id": sign.class_id,
        "bbox": list(sign.bbox),
        "gain": sign.transform.gain,
        "theta_deg": sign.transform.theta_deg,
        "scale_px": sign.transform.scale_px,
        "corner_offsets": sign.transform.corner_offsets,
        "region_mean": sign.transform.region_mean,
    }


def generate_one(
    index: int,
    config: GenerationConfig,
    backgrounds: Sequence[str | Path],
    catalog: Catalog,
    out_dir: Path,
    run_id: str,
) -> dict:
    """Synthesize, write, and describe sample ``index``."""
    rng = derive_sample_rng(config.master_seed, index)
    background_index = int(rng.integers(len(backgrounds)))
    background = read_image_rgb(backgrounds[background_index])
    if background.shape != (CANVAS_SIZE, CANVAS_SIZE, 3):
        raise ValidationError(
            f"background {backgrounds[background_index]} is {background.shape}, "
            f"expected standardized {CANVAS_SIZE}x{CANVAS_SIZE}x3"
        )
    plan = plan_placements(rng, config, catalog)
    sample = synthesize_sample(background, plan, rng, config, catalog)
    file_name = f"{run_id}_{index:06d}.png"
    write_image_png(out_dir / file_name, sample.image)
    return {
        "index": index,
        "file_name": file_name,
        "background_index": background_index,
        "blur_sigma": sample.blur_sigma,
        "signs": [_sign_record(s) for s in sample.signs],
    }


def _worker_generate(index: int) -> dict:
    w = _WORKER
    return generate_one(
        index, w["config"], w["backgrounds"], w["catalog"], w["out_dir"], w["run_id"]
    )


def _read_progress(path: Path) -> dict[int, dict]:
    done: dict[int, dict] = {}
    if not path.exists():
        return done
    for line in path.read_text().splitlines():
        line = line.strip()
        if line:
            record = json.loads(line)
            done[record["index"]] = record
    return done


def generate_dataset(
    config: GenerationConfig,
    backgrounds: Sequence[str | Path],
    catalog: Catalog,
    out_dir: str | Path,
    run_id: str = "synth",
    workers: int = 1,
    resume: bool = True,
) -> dict:
    """Materialize the dataset: PNG images, COCO JSON, and a CSV mirror.

    Output is invariant to ``workers``; completed samples recorded in the
    progress log are skipped on rerun. Per-sample failures are reported
    and do not stop independent samples.
    """
    if not backgrounds:
        raise ValidationError("background corpus is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    backgrounds = [str(b) for b in backgrounds]
    progress_path = out_dir / f"{run_id}_progress.jsonl"

    done = _read_progress(progress_path) if resume else {}
    done = {i: rec for i, rec in done.items() if i < config.n_samples}
    pending = [i for i in range(config.n_samples) if i not in done]
    failures: dict[int, str] = {}

    with open(progress_path, "a" if resume else "w") as progress:
        def record_done(record: dict) -> None:
            done[record["index"]] = record
            progress.write(json.dumps(record) + "\n")
            progress.flush()

        if workers <= 1:
            for index in pending:
                try:
                    record_done(
                        generate_one(index, config, backgrounds, catalog, out_dir, run_id)
                    )
                except SampleError as exc:
                    failures[index] = str(exc)
                    logger.error("sample %d failed: %s", index, exc)
                except OSError as exc:
                    failures[index] = str(exc)
                    logger.error("sample %d I/O failure: %s", index, exc)
        else:
            with ProcessPoolExecutor(
                max_workers=workers,
                initializer=_init_worker,
                initargs=(config, backgrounds, catalog, str(out_dir), run_id),
            ) as pool:
                futures = {pool.submit(_worker_generate, i): i for i in pending}
                for future in as_completed(futures):
                    index = futures[future]
                    try:
                        record_done(future.result())
                    except (SampleError, OSError) as exc:
                        failures[index] = str(exc)
                        logger.error("sample %d failed: %s", index, exc)

    # Index-sorted rewrite keeps the log byte-reproducible across runs.
    ordered = [done[i] for i in sorted(done)]
    with open(progress_path, "w") as progress:
        for record in ordered:
            progress.write(json.dumps(record) + "\n")

    images = [
        ImageRecord(rec["index"], rec["file_name"], CANVAS_SIZE, CANVAS_SIZE)
        for rec in ordered
    ]
    boxes = [
        GroundTruthBox(rec["index"], tuple(sign["bbox"]), sign["class_id"])
        for rec in ordered
        for sign in rec["signs"]
    ]
    categories = {cid: f"class_{cid}" for cid in sorted(catalog.templates)}
    json_bytes, csv_bytes = write_annotations(images, boxes, categories)
    (out_dir / "annotations.json").write_bytes(json_bytes)
    (out_dir / "annotations.csv").write_bytes(csv_bytes)

    return {
        "requested": config.n_samples,
        "generated": len(ordered),
        "failed": len(failures),
        "failures": {str(k): v for k, v in sorted(failures.items())},
        "annotations": len(boxes),
    }
