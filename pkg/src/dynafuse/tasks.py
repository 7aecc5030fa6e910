"""QA task generators, scoring, and dataset export for the synthetic benchmarks.

Four benchmark kinds cover the capability axes the system targets:

* relation  -- single image, "where is A relative to B", answers left/right/above/below
* counting  -- single image, "how many <shape>", answers 1..6
* motion    -- k-frame clip, "which way did A move (anchored at B)", answers
               left/right/up/down/none; k=1 degenerates to all-"none"
* view      -- two views of a scene; the question states the A-B arrangement
               seen in the second view and asks whether the first view agrees
               (yes iff the arrangement is consistent across views)

`gen_claim` produces the single-image member of the view family: the question
states a candidate arrangement and the answer says whether the image satisfies
it. It gives yes/no answers a single-image training signal, which is what lets
view questions transfer zero-shot to two-view inputs.

Questions are fixed templates over the shared symbol table and always end with
the answer options for their kind (the benchmarks are multiple-choice). Every
generator is a pure function of (n, seed, params).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidArgumentError, ValidationError
from .scenes import COLORS, GRID, SHAPES, ObjectSpec, SceneSpec, relation_between, render_scene
from .vocab import token_ids, token_words

KINDS = ("relation", "counting", "motion", "view")

CHANCE = {"relation": 0.25, "counting": 1.0 / 6.0, "motion": 0.2, "view": 0.5}

RELATION_ANSWERS = ("left", "right", "above", "below")
MOTION_ANSWERS = ("left", "right", "up", "down", "none")
COUNT_ANSWERS = ("1", "2", "3", "4", "5", "6")
VIEW_ANSWERS = ("yes", "no")

_OPTIONS = {
    "relation": RELATION_ANSWERS,
    "counting": COUNT_ANSWERS,
    "motion": MOTION_ANSWERS,
    "view": VIEW_ANSWERS,
}

# unit (drow, dcol) steps per motion answer
_DIRS = {"left": (0, -1), "right": (0, 1), "up": (-1, 0), "down": (1, 0)}


@dataclass
class TaskSample:
    images: list[np.ndarray]
    question_ids: list[int]
    answer_ids: list[int]
    kind: str
    scenes: list[SceneSpec] = field(default_factory=list)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"unknown task kind {self.kind!r}")
        if not self.images:
            raise ValidationError("sample has no images")
        if not self.answer_ids:
            raise ValidationError("sample has an empty answer span")


@dataclass
class EvalResult:
    accuracy: dict[str, float]
    n: dict[str, int]
    chance: dict[str, float]

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "n": self.n, "chance": self.chance}


def question(kind: str, *words: str) -> list[int]:
    """Build a question from the kind's fixed template: marker, arguments, options."""
    return token_ids([kind_marker(kind), *words, "opt", *_OPTIONS[kind], "?"])


def kind_marker(kind: str) -> str:
    return {"relation": "rel", "counting": "count", "motion": "mot", "view": "view"}[kind]


def _identity_pool(rng: np.random.Generator, k: int) -> list[tuple[str, str]]:
    """k distinct (color, shape) identities."""
    pool = [(c, s) for c in COLORS for s in SHAPES]
    idx = rng.choice(len(pool), size=k, replace=False)
    return [pool[i] for i in idx]


def _place(rng: np.random.Generator, taken: set, constraint=None) -> tuple[int, int]:
    """Uniform draw over the free cells satisfying `constraint`.

    Enumerating the valid set keeps tightly constrained placements (e.g. a
    single admissible cell) from ever failing by bad luck.
    """
    valid = [(r, c) for r in range(GRID) for c in range(GRID)
             if (r, c) not in taken and (constraint is None or constraint((r, c)))]
    if not valid:
        raise ValidationError("no free cell satisfies the placement constraint")
    cell = valid[int(rng.integers(0, len(valid)))]
    taken.add(cell)
    return cell


def _size(rng: np.random.Generator) -> int:
    return int(rng.integers(5, 8))


def gen_relation(n: int, seed: int) -> list[TaskSample]:
    """Single-image relation questions, balanced over the four answers."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        target = RELATION_ANSWERS[i % 4]
        (ca, sa), (cb, sb) = _identity_pool(rng, 2)
        taken: set = set()
        dy, dx = _DIRS[{"above": "up", "below": "down"}.get(target, target)]

        def has_room(cell, _dy=dy, _dx=dx):
            return 0 <= cell[0] + _dy < GRID and 0 <= cell[1] + _dx < GRID

        cell_b = _place(rng, taken, has_room)

        def dominant(cell, _b=cell_b, _t=target):
            a = ObjectSpec("square", "red", cell)
            return relation_between(a, ObjectSpec("square", "red", _b)) == _t

        cell_a = _place(rng, taken, dominant)
        objs = (ObjectSpec(sa, ca, cell_a, _size(rng)), ObjectSpec(sb, cb, cell_b, _size(rng)))
        scene = SceneSpec(objects=objs, seed=seed + i)
        samples.append(TaskSample(
            images=[render_scene(scene)],
            question_ids=question("relation", ca, sa, cb, sb),
            answer_ids=token_ids([target]),
            kind="relation",
            scenes=[scene],
        ))
    return samples


def gen_counting(n: int, seed: int) -> list[TaskSample]:
    """Single-image counting questions, counts balanced over 1..6."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        count = 1 + i % 6
        shape = SHAPES[int(rng.integers(0, len(SHAPES)))]
        other_shapes = [s for s in SHAPES if s != shape]
        taken: set = set()
        objs = []
        for _ in range(count):
            color = COLORS[int(rng.integers(0, len(COLORS)))]
            objs.append(ObjectSpec(shape, color, _place(rng, taken), _size(rng)))
        for _ in range(int(rng.integers(0, 4))):
            color = COLORS[int(rng.integers(0, len(COLORS)))]
            distractor = other_shapes[int(rng.integers(0, len(other_shapes)))]
            objs.append(ObjectSpec(distractor, color, _place(rng, taken), _size(rng)))
        scene = SceneSpec(objects=tuple(objs), seed=seed + i)
        samples.append(TaskSample(
            images=[render_scene(scene)],
            question_ids=question("counting", shape),
            answer_ids=token_ids([str(count)]),
            kind="counting",
            scenes=[scene],
        ))
    return samples


def _motion_layout(rng: np.random.Generator, direction: str, k: int) -> tuple[tuple, tuple, tuple]:
    """Anchor cell, mover start cell, and per-frame (drow, dcol) for one clip.

    The mover starts diagonally adjacent to a static anchor, one cell onto its
    travel side, and moves away from the anchor at a constant 1-2 cells/frame,
    so the whole trajectory stays on one side of the anchor and in-canvas.
    """
    dy, dx = _DIRS[direction]
    px, py = -dy, dx  # unit vector perpendicular to the motion
    p = int(rng.integers(0, 2)) * 2 - 1
    speeds = [v for v in (1, 2) if 1 + v * (k - 1) <= GRID - 1 and v * (k - 1) >= (2 if k > 1 else 0)]
    if not speeds:
        raise InvalidArgumentError(f"no in-canvas speed for k={k} frames")
    v = speeds[int(rng.integers(0, len(speeds)))]
    span = 1 + v * (k - 1)
    # anchor placed so start (anchor + diag) and the full path stay on-grid
    lo_r = max(0, -(dy * span), -(p * py))
    hi_r = GRID - 1 - max(0, dy * span, p * py)
    lo_c = max(0, -(dx * span), -(p * px))
    hi_c = GRID - 1 - max(0, dx * span, p * px)
    anchor = (int(rng.integers(lo_r, hi_r + 1)), int(rng.integers(lo_c, hi_c + 1)))
    start = (anchor[0] + dy + p * py, anchor[1] + dx + p * px)
    return anchor, start, (v * dy, v * dx)


def gen_motion(n: int, seed: int, k: int = 8) -> list[TaskSample]:
    """k-frame clips where one object moves past a static anchor.

    Labels are the mover's displacement direction; k=1 clips cannot show
    motion, so every label is "none".
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if k < 1:
        raise InvalidArgumentError("k must be >= 1")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        label = "none" if k == 1 else MOTION_ANSWERS[i % 5]
        (ca, sa), (cb, sb) = _identity_pool(rng, 2)
        if label == "none":
            taken: set = set()
            anchor = _place(rng, taken)

            def adjacent(cell, _a=anchor):
                return max(abs(cell[0] - _a[0]), abs(cell[1] - _a[1])) == 1

            start = _place(rng, taken, adjacent)
            step = (0, 0)
        else:
            anchor, start, step = _motion_layout(rng, label, k)
        size_a, size_b = _size(rng), _size(rng)
        scenes, images = [], []
        for t in range(k):
            cell = (start[0] + step[0] * t, start[1] + step[1] * t)
            scene = SceneSpec(
                objects=(ObjectSpec(sa, ca, cell, size_a), ObjectSpec(sb, cb, anchor, size_b)),
                seed=seed + i,
            )
            scenes.append(scene)
            images.append(render_scene(scene))
        samples.append(TaskSample(
            images=images,
            question_ids=question("motion", ca, sa, cb, sb),
            answer_ids=token_ids([label]),
            kind="motion",
            scenes=scenes,
        ))
    return samples


def _claim_question(ca: str, sa: str, rel: str, cb: str, sb: str) -> list[int]:
    return question("view", ca, sa, rel, cb, sb)


def _base_view_scene(rng: np.random.Generator, margin: int = 1) -> tuple[SceneSpec, ObjectSpec, ObjectSpec]:
    """A 2-3 object scene whose first two objects have a dominant-axis relation.

    Objects stay `margin` cells from the border so camera shifts keep them
    in-canvas.
    """
    idents = _identity_pool(rng, int(rng.integers(2, 4)))
    taken: set = set()

    def interior(cell):
        return margin <= cell[0] < GRID - margin and margin <= cell[1] < GRID - margin

    cell_b = _place(rng, taken, interior)

    def interior_dominant(cell, _b=cell_b):
        if not interior(cell):
            return False
        return relation_between(ObjectSpec("square", "red", cell), ObjectSpec("square", "red", _b)) is not None

    cell_a = _place(rng, taken, interior_dominant)
    objs = [ObjectSpec(idents[0][1], idents[0][0], cell_a, _size(rng)),
            ObjectSpec(idents[1][1], idents[1][0], cell_b, _size(rng))]
    for color, shape in idents[2:]:
        objs.append(ObjectSpec(shape, color, _place(rng, taken, interior), _size(rng)))
    scene = SceneSpec(objects=tuple(objs), seed=int(rng.integers(0, 2**31)))
    return scene, objs[0], objs[1]


def gen_view(n: int, seed: int) -> list[TaskSample]:
    """Two-view consistency questions, 50/50 yes/no.

    The second frame is either a camera-shifted rendering of the same scene
    (consistent) or has the two queried objects swapped (inconsistent). The
    question states the A-B arrangement seen in the second frame; the answer
    is yes iff the first frame shows the same arrangement.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        consistent = i % 2 == 0
        scene1, a, b = _base_view_scene(rng)
        if consistent:
            while True:
                dr, dc = int(rng.integers(-1, 2)), int(rng.integers(-1, 2))
                if (dr, dc) != (0, 0):
                    break
            scene2 = scene1.shifted(dr, dc)
            a2, b2 = scene2.objects[0], scene2.objects[1]
        else:
            a2 = ObjectSpec(a.shape, a.color, b.cell, a.size)
            b2 = ObjectSpec(b.shape, b.color, a.cell, b.size)
            scene2 = SceneSpec(objects=(a2, b2) + scene1.objects[2:], seed=scene1.seed)
        rel2 = relation_between(a2, b2)
        samples.append(TaskSample(
            images=[render_scene(scene1), render_scene(scene2)],
            question_ids=_claim_question(a.color, a.shape, rel2, b.color, b.shape),
            answer_ids=token_ids(["yes" if consistent else "no"]),
            kind="view",
            scenes=[scene1, scene2],
        ))
    return samples


def gen_claim(n: int, seed: int) -> list[TaskSample]:
    """Single-image arrangement claims, 50/50 true/false (view-kind answers)."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        truthful = i % 2 == 0
        scene, a, b = _base_view_scene(rng)
        true_rel = relation_between(a, b)
        if truthful:
            rel = true_rel
        else:
            others = [r for r in RELATION_ANSWERS if r != true_rel]
            rel = others[int(rng.integers(0, len(others)))]
        samples.append(TaskSample(
            images=[render_scene(scene)],
            question_ids=_claim_question(a.color, a.shape, rel, b.color, b.shape),
            answer_ids=token_ids(["yes" if truthful else "no"]),
            kind="view",
            scenes=[scene],
        ))
    return samples


def score(predictions: list[list[int]], samples: list[TaskSample]) -> EvalResult:
    """Exact-match accuracy per task kind."""
    if not predictions:
        raise InvalidArgumentError("empty prediction list")
    if len(predictions) != len(samples):
        raise InvalidArgumentError(
            f"{len(predictions)} predictions for {len(samples)} samples")
    hits: dict[str, int] = {}
    totals: dict[str, int] = {}
    for pred, sample in zip(predictions, samples):
        if sample.kind not in CHANCE:
            raise InvalidArgumentError(f"cannot score kind {sample.kind!r}")
        totals[sample.kind] = totals.get(sample.kind, 0) + 1
        if list(pred) == list(sample.answer_ids):
            hits[sample.kind] = hits.get(sample.kind, 0) + 1
    accuracy = {k: hits.get(k, 0) / totals[k] for k in totals}
    return EvalResult(accuracy=accuracy,
                      n=dict(sorted(totals.items())),
                      chance={k: CHANCE[k] for k in totals})


def limit_images(samples: list[TaskSample], k: int) -> list[TaskSample]:
    """Evaluation-protocol helper: keep k evenly spaced frames per sample.

    Samples with k or fewer frames pass through unchanged; longer clips are
    subsampled at round(linspace) positions so first and last frames survive.
    """
    from .generative import keyframe_indices

    out = []
    for s in samples:
        if len(s.images) <= k:
            out.append(s)
            continue
        pick = keyframe_indices(k, len(s.images))
        out.append(TaskSample(
            images=[s.images[i] for i in pick],
            question_ids=list(s.question_ids),
            answer_ids=list(s.answer_ids),
            kind=s.kind,
            scenes=[s.scenes[i] for i in pick] if s.scenes else [],
        ))
    return out


def answer_histogram(samples: list[TaskSample]) -> dict[str, int]:
    hist: dict[str, int] = {}
    for s in samples:
        word = " ".join(token_words(s.answer_ids))
        hist[word] = hist.get(word, 0) + 1
    return hist


# --- pretraining data -------------------------------------------------------

def make_motion_clips(n: int, seed: int, t: int = 8) -> list[list[np.ndarray]]:
    """t-frame clips of 1-3 objects where up to two move at constant velocity.

    Used to pretrain the latent codec and the denoiser; the distribution
    covers static scenes, free movers, and anchored mover/anchor pairs like
    the motion benchmark's.
    """
    if n < 1 or t < 1:
        raise InvalidArgumentError("n and t must be >= 1")
    rng = np.random.default_rng(seed)
    clips = []
    for _ in range(n):
        if t > 1 and rng.random() < 0.5:
            # anchored pair, same layout family as the motion benchmark
            direction = MOTION_ANSWERS[int(rng.integers(0, 5))]
            k = min(t, 6)
            (ca, sa), (cb, sb) = _identity_pool(rng, 2)
            if direction == "none":
                taken: set = set()
                anchor = _place(rng, taken)
                start = _place(rng, taken)
                step = (0, 0)
            else:
                anchor, start, step = _motion_layout(rng, direction, k)
            size_a, size_b = _size(rng), _size(rng)
            frames = []
            for i in range(t):
                j = min(i, k - 1)
                cell = (start[0] + step[0] * j, start[1] + step[1] * j)
                scene = SceneSpec(objects=(ObjectSpec(sa, ca, cell, size_a),
                                           ObjectSpec(sb, cb, anchor, size_b)))
                frames.append(render_scene(scene))
            clips.append(frames)
            continue
        n_obj = int(rng.integers(1, 4))
        idents = _identity_pool(rng, n_obj)
        tracks = []
        for color, shape in idents:
            for _ in range(200):
                if t == 1 or rng.random() < 0.3:
                    step = (0, 0)
                else:
                    dr, dc = _DIRS[("left", "right", "up", "down")[int(rng.integers(0, 4))]]
                    v = int(rng.integers(1, 3))
                    step = (v * dr, v * dc)
                start = (int(rng.integers(0, GRID)), int(rng.integers(0, GRID)))
                cells = [(start[0] + step[0] * i, start[1] + step[1] * i) for i in range(t)]
                if not all(0 <= r < GRID and 0 <= c < GRID for r, c in cells):
                    continue
                if any(cells[i] in {tr[2][i] for tr in tracks} for i in range(t)):
                    continue
                tracks.append((color, shape, cells, _size(rng)))
                break
        frames = []
        for i in range(t):
            objs = tuple(ObjectSpec(shape, color, cells[i], size)
                         for color, shape, cells, size in tracks)
            frames.append(render_scene(SceneSpec(objects=objs)))
        clips.append(frames)
    return clips


def make_caption_samples(n: int, seed: int) -> list[TaskSample]:
    """Scene-description samples ("<colorA> <shapeA> <rel> <colorB> <shapeB>").

    Used for text-aligned encoder pretraining and the projector alignment
    stage; kind "caption" is internal and never scored.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        scene, a, b = _base_view_scene(rng)
        rel = relation_between(a, b)
        samples.append(TaskSample(
            images=[render_scene(scene)],
            question_ids=token_ids(["cap"]),
            answer_ids=token_ids([a.color, a.shape, rel, b.color, b.shape]),
            kind="caption",
            scenes=[scene],
        ))
    return samples


# --- dataset export ---------------------------------------------------------

def _scene_record(scene: SceneSpec) -> dict:
    return {
        "objects": [{"shape": o.shape, "color": o.color,
                     "cell": list(o.cell), "size": o.size} for o in scene.objects],
        "canvas": list(scene.canvas),
        "seed": scene.seed,
    }


def _scene_from_record(rec: dict) -> SceneSpec:
    objs = tuple(ObjectSpec(o["shape"], o["color"], tuple(o["cell"]), o["size"])
                 for o in rec["objects"])
    return SceneSpec(objects=objs, canvas=tuple(rec["canvas"]), seed=rec["seed"])


def export_dataset(samples: list[TaskSample], out_dir: str | Path) -> Path:
    """Write samples.jsonl plus per-frame PNGs under `out_dir`.

    The jsonl schema is documented in docs/formats.md; images are 8-bit
    lossless PNGs (floats are quantized with round(x * 255)).
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    with open(out / "samples.jsonl", "w") as fh:
        for i, s in enumerate(samples):
            paths = []
            for j, img in enumerate(s.images):
                rel_path = f"images/sample{i:05d}_f{j}.png"
                arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
                Image.fromarray(arr).save(out / rel_path)
                paths.append(rel_path)
            fh.write(json.dumps({
                "index": i,
                "kind": s.kind,
                "question_ids": s.question_ids,
                "question": token_words(s.question_ids),
                "answer_ids": s.answer_ids,
                "answer": token_words(s.answer_ids),
                "images": paths,
                "scenes": [_scene_record(sc) for sc in s.scenes],
            }, sort_keys=True) + "\n")
    return out / "samples.jsonl"


def load_dataset(dataset_dir: str | Path) -> list[TaskSample]:
    root = Path(dataset_dir)
    samples = []
    with open(root / "samples.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            images = []
            for rel_path in rec["images"]:
                arr = np.asarray(Image.open(root / rel_path), dtype=np.float32) / 255.0
                images.append(arr)
            samples.append(TaskSample(
                images=images,
                question_ids=list(rec["question_ids"]),
                answer_ids=list(rec["answer_ids"]),
                kind=rec["kind"],
                scenes=[_scene_from_record(r) for r in rec["scenes"]],
            ))
    return samples
