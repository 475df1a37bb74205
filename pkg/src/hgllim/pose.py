"""Pose estimation pipeline: variants, box alignment, and evaluation.

A pose model predicts angle targets from the patch descriptor; the ``_bb``
variants additionally predict the 2-d correction from a misplaced bounding
box back to the annotated one, which enables the fixed-point alignment loop:
extract at the current box, predict pose and correction, move the box by the
correction, and repeat until the predicted correction is small.

Evaluation is leave-one-person-out: every person's samples are held out in
turn, a model is trained on everyone else, and the per-angle errors are
pooled. All randomness (box perturbations, per-fold training seeds) derives
from one base seed through content-canonical ordering, so the metrics do not
depend on how the caller enumerated the samples.
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import hog
from .em import TrainingConfig, train
from .errors import ContractError, DataError
from .hog import BoundingBox
from .model import (ForwardModel, InverseModel, LatentSpec, OutputLayout,
                    TrainingSet, derive_forward, predict_mean)

__all__ = [
    "Variant", "VARIANTS", "resolve_variant", "PoseSample",
    "PredictionOutput", "simulate_shift", "iterative_predict",
    "single_shot_predict", "LooReport", "evaluate_loo", "ShiftTrial",
    "run_shift_harness", "ImageFeatureExtractor", "load_csv_dataset",
    "load_prima_dataset",
]

DEFAULT_EPSILON = 0.5
DEFAULT_MAX_ITERS = 2
DEFAULT_SIGMA_FRAC = 0.1


@dataclass(frozen=True)
class Variant:
    """One of the four model flavors: shift output on/off, latent part on/off."""

    name: str
    with_shift: bool
    hybrid: bool


VARIANTS = {
    "gllim_pose": Variant("gllim_pose", with_shift=False, hybrid=False),
    "gllim_pose_bb": Variant("gllim_pose_bb", with_shift=True, hybrid=False),
    "hgllim_pose": Variant("hgllim_pose", with_shift=False, hybrid=True),
    "hgllim_pose_bb": Variant("hgllim_pose_bb", with_shift=True, hybrid=True),
}


def resolve_variant(name: str, latent_dim: int) -> Variant:
    """Look up a variant and check it against the requested latent size."""
    try:
        variant = VARIANTS[name]
    except KeyError:
        raise ContractError(
            f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}")
    if variant.hybrid and latent_dim < 1:
        raise ContractError(f"{name} needs latent_dim >= 1")
    if not variant.hybrid and latent_dim != 0:
        raise ContractError(f"{name} requires latent_dim == 0")
    return variant


@dataclass(frozen=True)
class PoseSample:
    """One annotated face: an image reference, its box, angles, and person id.

    ``image`` is opaque to the pipeline; the feature extractor decides how to
    interpret it (an array, a path, or a synthetic scene object).
    """

    image: Any
    box: BoundingBox
    angles: np.ndarray
    person: str
    source: str = ""

    def __post_init__(self):
        angles = np.ascontiguousarray(self.angles, dtype=np.float64).reshape(-1)
        if angles.size == 0 or not np.all(np.isfinite(angles)):
            raise ContractError("angles must be a non-empty finite vector")
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)


@dataclass(frozen=True)
class PredictionOutput:
    """Prediction split per the model's output layout, plus loop diagnostics."""

    angles: np.ndarray
    shift: np.ndarray | None
    latent: np.ndarray
    box: BoundingBox
    iterations: int
    diverged: bool = False


def simulate_shift(box: BoundingBox, sigma_frac: float,
                   rng: np.random.Generator) -> tuple[BoundingBox, np.ndarray]:
    """Perturb a box and return it with the corrective label.

    The displacement is N(0, (sigma_frac * box.size)^2 I); the label is the
    shift that undoes it, so a predictor trained on (shifted box, label)
    learns to point back at the annotated box.
    """
    if sigma_frac < 0.0:
        raise ContractError("sigma_frac must be >= 0")
    delta = rng.normal(0.0, sigma_frac * box.size, size=2)
    return box.shifted(delta[0], delta[1]), -delta


def _split_output(x: np.ndarray, layout: OutputLayout,
                  latent: LatentSpec) -> tuple[np.ndarray, np.ndarray | None,
                                               np.ndarray]:
    angles = x[layout.angles]
    shift = x[layout.shift] if layout.has_shift else None
    return angles, shift, x[latent.observed_dim:]


def _check_layout_vs_model(fwd: ForwardModel, layout: OutputLayout) -> None:
    if layout.observed_dim != fwd.latent.observed_dim:
        raise ContractError(
            f"layout covers {layout.observed_dim} observed coordinates but "
            f"the model predicts {fwd.latent.observed_dim}")


def single_shot_predict(extractor: Callable, image, box: BoundingBox,
                        fwd: ForwardModel,
                        layout: OutputLayout) -> PredictionOutput:
    """One extraction, one posterior mean; no box update."""
    _check_layout_vs_model(fwd, layout)
    x = predict_mean(fwd, np.asarray(extractor(image, box), dtype=np.float64))
    angles, shift, latent = _split_output(x, layout, fwd.latent)
    return PredictionOutput(angles=angles, shift=shift, latent=latent,
                            box=box, iterations=1)


def iterative_predict(extractor: Callable, image, box: BoundingBox,
                      fwd: ForwardModel, layout: OutputLayout, *,
                      epsilon: float = DEFAULT_EPSILON,
                      max_iters: int = DEFAULT_MAX_ITERS,
                      bounds: tuple[float, float] | None = None
                      ) -> PredictionOutput:
    """Alternate descriptor extraction and box correction to a fixed point.

    Each round extracts the descriptor at the current box, predicts
    [angles, shift, latent], and moves the box by the predicted shift. The
    loop ends when the predicted shift norm is at most ``epsilon`` or after
    ``max_iters`` rounds. If ``bounds`` (image width, height) is given and
    the box leaves the image entirely, the last in-image prediction is
    returned with ``diverged=True``.
    """
    _check_layout_vs_model(fwd, layout)
    if not layout.has_shift:
        raise ContractError("iterative prediction needs a box-shift output")
    if max_iters < 1:
        raise ContractError("max_iters must be >= 1")
    if epsilon < 0.0:
        raise ContractError("epsilon must be >= 0")
    current = box
    output: PredictionOutput | None = None
    for iteration in range(1, max_iters + 1):
        try:
            features = np.asarray(extractor(image, current), dtype=np.float64)
        except DataError:
            if output is None:
                raise               # could not even start the loop
            return replace(output, diverged=True)
        x = predict_mean(fwd, features)
        angles, shift, latent = _split_output(x, layout, fwd.latent)
        current = current.shifted(shift[0], shift[1])
        output = PredictionOutput(angles=angles, shift=shift, latent=latent,
                                  box=current, iterations=iteration)
        if bounds is not None:
            width, height = bounds
            if (current.x >= width or current.y >= height
                    or current.x + current.width <= 0
                    or current.y + current.height <= 0):
                return PredictionOutput(angles=angles, shift=shift,
                                        latent=latent, box=current,
                                        iterations=iteration, diverged=True)
        if float(np.hypot(shift[0], shift[1])) <= epsilon:
            break
    return output


# ---------------------------------------------------------------------------
# Leave-one-person-out evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LooReport:
    """Pooled per-angle error statistics over all held-out persons."""

    variant: str
    angle_names: tuple[str, ...]
    mae: np.ndarray
    std: np.ndarray
    rmse: np.ndarray
    n_samples: int
    n_folds: int

    def rows(self):
        """One (variant, angle, mae, std, rmse, n) row per angle."""
        return [(self.variant, name, float(self.mae[i]), float(self.std[i]),
                 float(self.rmse[i]), self.n_samples)
                for i, name in enumerate(self.angle_names)]


def _canonical_sample_order(samples: Sequence[PoseSample]) -> list[int]:
    def key(i: int):
        s = samples[i]
        return (s.person, s.source, s.angles.tobytes(), s.box.as_tuple())
    return sorted(range(len(samples)), key=key)


def _fold_seed(base: int, person_index: int) -> int:
    return int(np.random.SeedSequence([base, person_index])
               .generate_state(1)[0])


def evaluate_loo(samples: Sequence[PoseSample], extractor: Callable, *,
                 n_components: int, latent_dim: int, variant: str,
                 sigma_frac: float = DEFAULT_SIGMA_FRAC,
                 epsilon: float = DEFAULT_EPSILON,
                 max_iters: int = DEFAULT_MAX_ITERS,
                 seed: int = 0, max_iterations: int = 100,
                 tolerance: float = 1e-6, workers: int = 1,
                 angle_names: Sequence[str] | None = None) -> LooReport:
    """Leave-one-person-out protocol for one variant.

    For the ``_bb`` variants every sample's box is perturbed once (the same
    perturbation whether the sample lands in a training or a test fold);
    training pairs carry the corrective label and prediction starts from the
    perturbed box, so the task includes undoing the perturbation. Samples
    whose features cannot be extracted are skipped with a warning.
    """
    samples = list(samples)
    if not samples:
        raise ContractError("no samples")
    var = resolve_variant(variant, latent_dim)
    n_angles = samples[0].angles.shape[0]
    if any(s.angles.shape[0] != n_angles for s in samples):
        raise ContractError("samples disagree on the number of angles")
    if angle_names is None:
        angle_names = tuple(f"angle_{i}" for i in range(n_angles))
    elif len(angle_names) != n_angles:
        raise ContractError("angle_names length does not match the samples")
    layout = OutputLayout(n_angles=n_angles, has_shift=var.with_shift)

    order = _canonical_sample_order(samples)
    samples = [samples[i] for i in order]
    persons = sorted({s.person for s in samples})
    if len(persons) < 2:
        raise ContractError("leave-one-out needs at least two persons")

    # Per-sample box perturbations, drawn in canonical order.
    boxes = []
    labels = []
    for idx, s in enumerate(samples):
        if var.with_shift:
            rng = np.random.default_rng([seed, idx])
            shifted, label = simulate_shift(s.box, sigma_frac, rng)
        else:
            shifted, label = s.box, None
        boxes.append(shifted)
        labels.append(label)

    # Features at the working boxes, extracted once and reused across folds.
    features = []
    usable = []
    for idx, s in enumerate(samples):
        try:
            features.append(np.asarray(extractor(s.image, boxes[idx]),
                                       dtype=np.float64))
            usable.append(True)
        except DataError as exc:
            warnings.warn(f"skipping sample {s.source or idx}: {exc}")
            features.append(None)
            usable.append(False)

    targets = []
    for idx, s in enumerate(samples):
        t = (np.concatenate((s.angles, labels[idx])) if var.with_shift
             else s.angles)
        targets.append(t)

    errors = []
    n_folds = 0
    for person_index, person in enumerate(persons):
        train_rows = [i for i, s in enumerate(samples)
                      if s.person != person and usable[i]]
        test_rows = [i for i, s in enumerate(samples)
                     if s.person == person and usable[i]]
        if not test_rows:
            warnings.warn(f"person {person!r} has no usable samples; skipped")
            continue
        data = TrainingSet(features=np.vstack([features[i] for i in train_rows]),
                           targets=np.vstack([targets[i] for i in train_rows]))
        cfg = TrainingConfig(
            n_components=n_components,
            latent=LatentSpec(layout.observed_dim, latent_dim),
            max_iterations=max_iterations, tolerance=tolerance,
            seed=_fold_seed(seed, person_index))
        fwd = derive_forward(train(data, cfg, workers=workers).model)
        n_folds += 1
        for i in test_rows:
            s = samples[i]
            if var.with_shift:
                out = iterative_predict(extractor, s.image, boxes[i], fwd,
                                        layout, epsilon=epsilon,
                                        max_iters=max_iters)
            else:
                x = predict_mean(fwd, features[i])
                angles, _, latent = _split_output(x, layout, fwd.latent)
                out = PredictionOutput(angles=angles, shift=None,
                                       latent=latent, box=boxes[i],
                                       iterations=1)
            errors.append(out.angles - s.angles)
    if not errors:
        raise ContractError("no usable samples in any fold")
    err = np.vstack(errors)
    abs_err = np.abs(err)
    return LooReport(variant=var.name, angle_names=tuple(angle_names),
                     mae=abs_err.mean(axis=0), std=abs_err.std(axis=0),
                     rmse=np.sqrt((err ** 2).mean(axis=0)),
                     n_samples=err.shape[0], n_folds=n_folds)


# ---------------------------------------------------------------------------
# Closed-loop alignment harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShiftTrial:
    """Box-alignment trial: distances to the true box and pose errors."""

    initial_error: float
    residual_after_first: float
    residual_after_second: float
    first_step_norm: float
    second_step_norm: float
    pose_error_first: float
    pose_error_second: float


def _center_distance(a: BoundingBox, b: BoundingBox) -> float:
    (ax, ay), (bx, by) = a.center, b.center
    return float(np.hypot(ax - bx, ay - by))


def run_shift_harness(model: InverseModel, layout: OutputLayout, *,
                      n_trials: int = 100,
                      sigma_frac: float = DEFAULT_SIGMA_FRAC,
                      box_size: float = 64.0, seed: int = 0,
                      with_noise: bool = True) -> list[ShiftTrial]:
    """Closed-loop check of the alignment loop against a known generator.

    Each trial builds a scene from the model itself: a pose drawn from one
    component, a true box, and a feature function whose shift coordinates
    report the displacement from the current box back to the true one. The
    pose block is attenuated with the misalignment distance, mimicking how a
    descriptor computed at the wrong box carries less pose information, so
    aligning the box genuinely improves the pose estimate. The loop starts
    at a perturbed box and runs for one and for two rounds (same noise
    stream) so the improvement from the second round is measurable.
    """
    if not layout.has_shift:
        raise ContractError("the harness needs a model with box-shift outputs")
    if layout.observed_dim != model.latent.observed_dim:
        raise ContractError("layout does not match the model")
    fwd = derive_forward(model)
    n_angles = layout.n_angles
    lw = model.latent.latent_dim
    rng = np.random.default_rng(seed)
    trials = []
    for trial in range(n_trials):
        k = int(rng.choice(model.n_components, p=model.priors))
        pose = rng.multivariate_normal(
            model.means[k][:n_angles],
            model.covariances[k][:n_angles, :n_angles])
        latent = rng.standard_normal(lw)
        true_box = BoundingBox(200.0, 150.0, box_size, box_size)
        delta = rng.normal(0.0, sigma_frac * box_size, size=2)
        start = true_box.shifted(delta[0], delta[1])
        noise_seed = int(rng.integers(2 ** 31))

        def make_extractor():
            calls = [0]

            def extract(image, box: BoundingBox) -> np.ndarray:
                shift = np.array([true_box.x - box.x, true_box.y - box.y])
                misalignment = np.hypot(shift[0], shift[1]) / box_size
                fade = 1.0 / (1.0 + 8.0 * misalignment ** 2)
                x = np.concatenate((pose * fade, shift, latent))
                y = model.maps[k] @ x + model.offsets[k]
                if with_noise:
                    call_rng = np.random.default_rng([noise_seed, calls[0]])
                    y = y + np.sqrt(model.noise_vars[k]) \
                        * call_rng.standard_normal(y.shape[0])
                calls[0] += 1
                return y

            return extract

        one = iterative_predict(make_extractor(), None, start, fwd, layout,
                                epsilon=1e-12, max_iters=1)
        two = iterative_predict(make_extractor(), None, start, fwd, layout,
                                epsilon=1e-12, max_iters=2)
        second_step = np.asarray(two.box.as_tuple()[:2]) \
            - np.asarray(one.box.as_tuple()[:2])
        trials.append(ShiftTrial(
            initial_error=_center_distance(start, true_box),
            residual_after_first=_center_distance(one.box, true_box),
            residual_after_second=_center_distance(two.box, true_box),
            first_step_norm=float(np.hypot(one.shift[0], one.shift[1])),
            second_step_norm=float(np.hypot(second_step[0], second_step[1])),
            pose_error_first=float(np.abs(one.angles - pose).mean()),
            pose_error_second=float(np.abs(two.angles - pose).mean())))
    return trials


# ---------------------------------------------------------------------------
# Dataset adapters
# ---------------------------------------------------------------------------

class ImageFeatureExtractor:
    """Descriptor extractor over image files or arrays, with an image cache."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        self._cache: dict[str, np.ndarray] = {}

    def _load(self, ref) -> np.ndarray:
        if isinstance(ref, np.ndarray):
            return hog.to_grayscale(ref)
        key = str(ref)
        if key not in self._cache:
            path = Path(key)
            if self.root is not None and not path.is_absolute():
                path = self.root / path
            try:
                from PIL import Image
                with Image.open(path) as img:
                    arr = np.asarray(img.convert("RGB"))
            except FileNotFoundError as exc:
                raise DataError(f"image not found: {path}") from exc
            except OSError as exc:
                raise DataError(f"cannot decode image {path}: {exc}") from exc
            self._cache[key] = hog.to_grayscale(arr)
        return self._cache[key]

    def __call__(self, image, box: BoundingBox) -> np.ndarray:
        gray = self._load(image)
        return hog.phog(hog.equalize(hog.resize_bilinear(
            hog.crop_patch(gray, box))))


def load_csv_dataset(path, angle_columns: Sequence[str] | None = None
                     ) -> tuple[list[PoseSample], tuple[str, ...]]:
    """Samples from an annotation CSV.

    Expected header: ``image,person,x,y,width,height`` followed by one column
    per angle. ``angle_columns`` restricts/reorders the angle columns.
    Malformed rows are reported together with their line numbers.
    """
    import csv

    required = ["image", "person", "x", "y", "width", "height"]
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty dataset file")
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        angle_names = [c for c in header if c not in required]
        if angle_columns is not None:
            unknown = [c for c in angle_columns if c not in header]
            if unknown:
                raise DataError(f"{path}: missing angle columns {unknown}")
            angle_names = list(angle_columns)
        if not angle_names:
            raise DataError(f"{path}: no angle columns")
        idx = {c: header.index(c) for c in header}
        samples = []
        bad_lines = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                if len(row) != len(header):
                    raise ValueError("wrong cell count")
                box = BoundingBox(float(row[idx["x"]]), float(row[idx["y"]]),
                                  float(row[idx["width"]]),
                                  float(row[idx["height"]]))
                angles = np.array([float(row[idx[c]]) for c in angle_names])
                samples.append(PoseSample(image=row[idx["image"]].strip(),
                                          box=box, angles=angles,
                                          person=row[idx["person"]].strip(),
                                          source=row[idx["image"]].strip()))
            except (ValueError, ContractError):
                bad_lines.append(line_no)
        if bad_lines:
            raise DataError(f"{path}: malformed rows at lines {bad_lines}")
        if not samples:
            raise DataError(f"{path}: no data rows")
    return samples, tuple(angle_names)


_PRIMA_NAME = re.compile(
    r"personne(?P<person>\d{2})(?P<series>\d{2,3})(?P<pitch>[+-]\d+)"
    r"(?P<yaw>[+-]\d+)\.(?:jpg|jpeg|png)$", re.IGNORECASE)


def load_prima_dataset(root) -> tuple[list[PoseSample], tuple[str, ...]]:
    """Samples from a directory tree of the published head-pose benchmark.

    Image names encode person, pitch and yaw (``personne<person><series>
    <pitch><yaw>.jpg``); the face box comes from the matching ``.txt``
    annotation, read as four integers: center x, center y, width, height.
    """
    root = Path(root)
    samples = []
    for image_path in sorted(root.rglob("*")):
        match = _PRIMA_NAME.search(image_path.name)
        if not match:
            continue
        txt = image_path.with_suffix(".txt")
        if not txt.exists():
            warnings.warn(f"no annotation for {image_path.name}; skipped")
            continue
        numbers = re.findall(r"-?\d+", txt.read_text(encoding="utf-8",
                                                     errors="replace"))
        if len(numbers) < 4:
            raise DataError(f"{txt}: expected four integers "
                            f"(center x, center y, width, height)")
        cx, cy, w, h = (float(v) for v in numbers[-4:])
        if w <= 0 or h <= 0:
            raise DataError(f"{txt}: non-positive box size")
        box = BoundingBox(cx - w / 2.0, cy - h / 2.0, w, h)
        angles = np.array([float(match.group("pitch")),
                           float(match.group("yaw"))])
        samples.append(PoseSample(image=str(image_path), box=box,
                                  angles=angles,
                                  person=f"person{match.group('person')}",
                                  source=image_path.name))
    if not samples:
        raise DataError(f"{root}: no benchmark images found")
    return samples, ("pitch", "yaw")
