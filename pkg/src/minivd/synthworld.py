"""Deterministic synthetic visual-dialogue world.

Scenes are small grids of colored shapes. Each dialogue pairs one scene
with a caption and T question/answer rounds drawn from four template
families: existence ("is there a red circle"), counting ("how many
squares"), attribute ("what color is the triangle"), and the
history-dependent follow-up ("is there anything else"), which is only
answerable given the previous question. Every round carries a candidate
set of N responses containing the true answer once; negatives are other
rounds' true answers.

All randomness is derived from (seed, dialogue id), so generation is
reproducible and independent of iteration order.
"""

import json
from dataclasses import dataclass, field

import numpy as np

SHAPES = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue", "yellow")
SIZES = ("small", "big")

NUMBER_WORDS = (
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight",
    "nine", "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen",
    "sixteen",
)

# one-hot shape + one-hot color + size bit + occupancy bit
CELL_CODE_LEN = len(SHAPES) + len(COLORS) + 2


class GenerationError(ValueError):
    pass


class SchemaError(ValueError):
    """A VisDial-format file violated the documented schema."""

    def __init__(self, path, message):
        self.json_path = path
        super().__init__(f"{path}: {message}")


# ------------------------------------------------------------------- scenes

@dataclass(frozen=True)
class GridObject:
    shape: str
    color: str
    size: str


@dataclass(frozen=True)
class Scene:
    height: int
    width: int
    cells: tuple  # row-major, each None or GridObject

    def __post_init__(self):
        if len(self.cells) != self.height * self.width:
            raise ValueError("Scene: cell count does not match grid extents")
        if not any(c is not None for c in self.cells):
            raise ValueError("Scene: needs at least one object")

    def objects(self):
        return [c for c in self.cells if c is not None]


def random_scene(rng, height, width, min_objects, max_objects):
    n_cells = height * width
    count = int(rng.integers(min_objects, min(max_objects, n_cells) + 1))
    positions = rng.choice(n_cells, size=count, replace=False)
    cells = [None] * n_cells
    for pos in positions:
        cells[int(pos)] = GridObject(
            shape=SHAPES[int(rng.integers(len(SHAPES)))],
            color=COLORS[int(rng.integers(len(COLORS)))],
            size=SIZES[int(rng.integers(len(SIZES)))],
        )
    return Scene(height=height, width=width, cells=tuple(cells))


def render_features(scene, feature_dim):
    """Encode a scene as a (feature_dim, H, W) grid of cell codes.

    Cell layout: one-hot shape, one-hot color, size bit (big=1), occupancy
    bit, zero-padded to feature_dim. Empty cells are all-zero.
    """
    if feature_dim < CELL_CODE_LEN:
        raise ValueError(
            f"feature_dim {feature_dim} smaller than cell code length {CELL_CODE_LEN}"
        )
    out = np.zeros((feature_dim, scene.height, scene.width))
    for idx, obj in enumerate(scene.cells):
        if obj is None:
            continue
        r, c = divmod(idx, scene.width)
        code = np.zeros(CELL_CODE_LEN)
        code[SHAPES.index(obj.shape)] = 1.0
        code[len(SHAPES) + COLORS.index(obj.color)] = 1.0
        code[len(SHAPES) + len(COLORS)] = 1.0 if obj.size == "big" else 0.0
        code[len(SHAPES) + len(COLORS) + 1] = 1.0
        out[:CELL_CODE_LEN, r, c] = code
    return out


def scene_from_features(features):
    """Invert `render_features` (exact for rendered grids)."""
    feature_dim, height, width = features.shape
    cells = []
    for r in range(height):
        for c in range(width):
            code = features[:CELL_CODE_LEN, r, c]
            if code[len(SHAPES) + len(COLORS) + 1] == 0.0:
                cells.append(None)
                continue
            cells.append(
                GridObject(
                    shape=SHAPES[int(np.argmax(code[: len(SHAPES)]))],
                    color=COLORS[int(np.argmax(code[len(SHAPES) : len(SHAPES) + len(COLORS)]))],
                    size="big" if code[len(SHAPES) + len(COLORS)] == 1.0 else "small",
                )
            )
    return Scene(height=height, width=width, cells=tuple(cells))


# -------------------------------------------------------- answers & classes

def _count_phrase(n):
    word = NUMBER_WORDS[n]
    if n == 1:
        return f"there is {word}"
    return f"there are {word}"


_ANSWER_VARIANTS = {
    "yes": ("yes", "yes it is", "yes there is"),
    "no": ("no", "no it is not", "no there is not"),
}
_ANSWER_VARIANTS.update(
    {f"count:{w}": (w, _count_phrase(i)) for i, w in enumerate(NUMBER_WORDS)}
)
_ANSWER_VARIANTS.update({f"color:{c}": (c, f"it is {c}") for c in COLORS})
_ANSWER_VARIANTS.update({f"size:{s}": (s, f"it is {s}") for s in SIZES})

_CLASS_OF_ANSWER = {}
for _cls, _variants in _ANSWER_VARIANTS.items():
    for _v in _variants:
        _CLASS_OF_ANSWER[_v] = _cls


def answer_class(answer):
    """Equivalence class of an answer string; unknown strings are their own class."""
    return _CLASS_OF_ANSWER.get(answer, answer)


def _phrase(cls, rng):
    variants = _ANSWER_VARIANTS[cls]
    return variants[int(rng.integers(len(variants)))]


# ----------------------------------------------------------------- captions

def make_caption(scene):
    objs = scene.objects()
    first = objs[0]
    phrase = f"a {first.size} {first.color} {first.shape}"
    if len(objs) == 1:
        return f"a picture of {phrase}"
    second = objs[1]
    tail = f"a {second.size} {second.color} {second.shape}"
    if len(objs) == 2:
        return f"a picture of {phrase} and {tail}"
    return f"a picture of {phrase} and {tail} and other things"


# ------------------------------------------------------ questions & oracle

def _matches(obj, shape=None, color=None, size=None):
    return (
        (shape is None or obj.shape == shape)
        and (color is None or obj.color == color)
        and (size is None or obj.size == size)
    )


def _parse_question(question):
    """Parse a template question into (kind, constraints)."""
    words = question.split()
    if question == "is there anything else":
        return ("anything_else", {})
    if question.startswith("is there a "):
        rest = words[3:]
        shape = next((w for w in rest if w in SHAPES), None)
        color = next((w for w in rest if w in COLORS), None)
        size = next((w for w in rest if w in SIZES), None)
        if shape is None:
            raise ValueError(f"unparseable existence question: {question!r}")
        return ("exists", {"shape": shape, "color": color, "size": size})
    if question.startswith("how many "):
        noun = words[2]
        for shape in SHAPES:
            if noun == shape + "s":
                return ("count", {"shape": shape})
        if noun in COLORS and words[3] == "things":
            return ("count", {"color": noun})
        raise ValueError(f"unparseable counting question: {question!r}")
    if question.startswith("what color is the "):
        return ("attr_color", {"shape": words[4]})
    if question.startswith("what size is the "):
        return ("attr_size", {"shape": words[4]})
    raise ValueError(f"unparseable question: {question!r}")


def oracle_answer_class(question, scene, previous_questions=()):
    """Ground-truth answer class for a template question against a scene.

    `previous_questions` is the in-order list of earlier question strings
    in the dialogue; it is consulted only by the follow-up template.
    """
    kind, cons = _parse_question(question)
    objs = scene.objects()
    if kind == "exists":
        hit = any(_matches(o, **cons) for o in objs)
        return "yes" if hit else "no"
    if kind == "count":
        n = sum(1 for o in objs if _matches(o, **cons))
        return f"count:{NUMBER_WORDS[n]}"
    if kind == "attr_color":
        matches = [o for o in objs if o.shape == cons["shape"]]
        if len(matches) != 1:
            raise ValueError("attribute question requires a unique referent")
        return f"color:{matches[0].color}"
    if kind == "attr_size":
        matches = [o for o in objs if o.shape == cons["shape"]]
        if len(matches) != 1:
            raise ValueError("attribute question requires a unique referent")
        return f"size:{matches[0].size}"
    # anything_else: objects not covered by the last non-follow-up question
    ref = None
    for q in reversed(previous_questions):
        if q != "is there anything else":
            ref = q
            break
    if ref is None:
        raise ValueError("follow-up question without a preceding reference question")
    _, ref_cons = _parse_question(ref)
    ref_cons = {k: v for k, v in ref_cons.items() if v is not None}
    hit = any(not _matches(o, **ref_cons) for o in objs)
    return "yes" if hit else "no"


def _gen_question(rng, scene, previous_questions):
    """One question for the next round; returns (question, answer_class)."""
    objs = scene.objects()
    unique_shapes = [s for s in SHAPES if sum(1 for o in objs if o.shape == s) == 1]
    choices = ["exists", "count"]
    if unique_shapes:
        choices.append("attribute")
    if previous_questions and previous_questions[-1] != "is there anything else":
        choices.append("anything_else")
    kind = choices[int(rng.integers(len(choices)))]

    if kind == "exists":
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
        form = int(rng.integers(3))
        if form == 0:
            question = f"is there a {shape}"
        elif form == 1:
            question = f"is there a {COLORS[int(rng.integers(len(COLORS)))]} {shape}"
        else:
            question = f"is there a {SIZES[int(rng.integers(len(SIZES)))]} {shape}"
    elif kind == "count":
        if rng.integers(2) == 0:
            question = f"how many {SHAPES[int(rng.integers(len(SHAPES)))]}s"
        else:
            question = f"how many {COLORS[int(rng.integers(len(COLORS)))]} things"
    elif kind == "attribute":
        shape = unique_shapes[int(rng.integers(len(unique_shapes)))]
        if rng.integers(2) == 0:
            question = f"what color is the {shape}"
        else:
            question = f"what size is the {shape}"
    else:
        question = "is there anything else"

    return question, oracle_answer_class(question, scene, previous_questions)


# ------------------------------------------------------------- dialogue data

@dataclass(frozen=True)
class CandidateSet:
    candidates: tuple
    gt_index: int
    relevance: tuple

    def __post_init__(self):
        if not 0 <= self.gt_index < len(self.candidates):
            raise ValueError("gt_index out of range")
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("duplicate candidate strings")
        if self.relevance[self.gt_index] != 1:
            raise ValueError("ground-truth candidate must be marked relevant")


@dataclass(frozen=True)
class DialogueRound:
    question: str
    answer: str
    candidates: CandidateSet


@dataclass(frozen=True)
class DialogueInstance:
    dialogue_id: int
    caption: str
    rounds: tuple
    features: np.ndarray = field(compare=False)
    scene: Scene = field(default=None, compare=False)
    seed: int = field(default=0, compare=False)

    def same_content(self, other):
        """Schema-level equality (fields that survive export/reload)."""
        return (
            self.dialogue_id == other.dialogue_id
            and self.caption == other.caption
            and self.rounds == other.rounds
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True)
class WorldSpec:
    num_dialogues: int = 2000
    rounds: int = 5
    num_candidates: int = 20
    grid_height: int = 4
    grid_width: int = 4
    feature_dim: int = 64
    min_objects: int = 2
    max_objects: int = 5

    def validate(self):
        if self.num_dialogues < 1 or self.rounds < 1 or self.num_candidates < 2:
            raise GenerationError("spec needs >=1 dialogue, >=1 round, >=2 candidates")
        if self.min_objects < 1 or self.min_objects > self.max_objects:
            raise GenerationError("object count bounds invalid")
        if self.max_objects > self.grid_height * self.grid_width:
            raise GenerationError("more objects than grid cells")
        if self.feature_dim < CELL_CODE_LEN:
            raise GenerationError(
                f"feature_dim {self.feature_dim} < cell code length {CELL_CODE_LEN}"
            )


def sample_candidates(answer, pool, n, rng):
    """Candidate set of `n` strings: the answer plus n-1 drawn negatives.

    Negatives come without replacement from `pool` minus the answer
    string; the answer lands at a seeded position. Relevance marks every
    candidate whose answer class matches the answer's.
    """
    negatives_pool = [p for p in pool if p != answer]
    if len(negatives_pool) < n - 1:
        raise GenerationError(
            f"answer pool exhausted: need {n - 1} negatives, have {len(negatives_pool)}"
        )
    picked = rng.choice(len(negatives_pool), size=n - 1, replace=False)
    candidates = [negatives_pool[int(i)] for i in picked]
    gt_index = int(rng.integers(n))
    candidates.insert(gt_index, answer)
    cls = answer_class(answer)
    relevance = tuple(1 if answer_class(c) == cls else 0 for c in candidates)
    return CandidateSet(candidates=tuple(candidates), gt_index=gt_index, relevance=relevance)


def _dialogue_rng(seed, dialogue_id, label):
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(dialogue_id, label))
    )


def generate_dataset(spec, seed):
    """All dialogues for one split, deterministically from (spec, seed)."""
    spec.validate()

    skeletons = []
    for dialogue_id in range(spec.num_dialogues):
        rng = _dialogue_rng(seed, dialogue_id, 0)
        scene = random_scene(
            rng, spec.grid_height, spec.grid_width, spec.min_objects, spec.max_objects
        )
        questions, answers = [], []
        for _ in range(spec.rounds):
            question, cls = _gen_question(rng, scene, questions)
            questions.append(question)
            answers.append(_phrase(cls, rng))
        skeletons.append((scene, questions, answers))

    pool = []
    seen = set()
    for _, _, answers in skeletons:
        for a in answers:
            if a not in seen:
                seen.add(a)
                pool.append(a)
    if len(pool) < spec.num_candidates:
        raise GenerationError(
            f"answer pool has {len(pool)} distinct answers, need >= {spec.num_candidates}"
        )

    instances = []
    for dialogue_id, (scene, questions, answers) in enumerate(skeletons):
        rng = _dialogue_rng(seed, dialogue_id, 1)
        rounds = tuple(
            DialogueRound(
                question=q,
                answer=a,
                candidates=sample_candidates(a, pool, spec.num_candidates, rng),
            )
            for q, a in zip(questions, answers)
        )
        instances.append(
            DialogueInstance(
                dialogue_id=dialogue_id,
                caption=make_caption(scene),
                rounds=rounds,
                features=render_features(scene, spec.feature_dim),
                scene=scene,
                seed=seed,
            )
        )
    return instances


# ----------------------------------------------------- VisDial-format files

def export_visdial_json(instances, split="train", version="synth-1.0"):
    """Serialize instances to the VisDial-style dict (questions/answers pooled)."""
    questions, answers = [], []
    q_idx, a_idx = {}, {}

    def q_id(q):
        if q not in q_idx:
            q_idx[q] = len(questions)
            questions.append(q)
        return q_idx[q]

    def a_id(a):
        if a not in a_idx:
            a_idx[a] = len(answers)
            answers.append(a)
        return a_idx[a]

    dialogs = []
    for inst in instances:
        dialogs.append(
            {
                "image_id": inst.dialogue_id,
                "caption": inst.caption,
                "dialog": [
                    {
                        "question": q_id(rnd.question),
                        "answer": a_id(rnd.answer),
                        "answer_options": [a_id(c) for c in rnd.candidates.candidates],
                        "gt_index": rnd.candidates.gt_index,
                    }
                    for rnd in inst.rounds
                ],
            }
        )
    return {
        "version": version,
        "split": split,
        "data": {"questions": questions, "answers": answers, "dialogs": dialogs},
    }


def export_feature_file(instances):
    """Side file payload: per image_id, shape + row-major doubles."""
    return {
        str(inst.dialogue_id): {
            "shape": list(inst.features.shape),
            "data": inst.features.ravel(order="C").tolist(),
        }
        for inst in instances
    }


def save_dataset(instances, data_path, features_path, split="train"):
    with open(data_path, "w", encoding="utf-8") as fh:
        json.dump(export_visdial_json(instances, split=split), fh, sort_keys=True)
    with open(features_path, "w", encoding="utf-8") as fh:
        json.dump(export_feature_file(instances), fh, sort_keys=True)


def _expect(payload, key, kind, path):
    if not isinstance(payload, dict):
        raise SchemaError(path, f"expected object, got {type(payload).__name__}")
    if key not in payload:
        raise SchemaError(f"{path}.{key}", "missing")
    value = payload[key]
    if not isinstance(value, kind):
        raise SchemaError(f"{path}.{key}", f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def load_visdial_json(path, features_path):
    """Load a VisDial-format dataset plus its precomputed feature grids."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    with open(features_path, encoding="utf-8") as fh:
        feature_payload = json.load(fh)

    data = _expect(payload, "data", dict, "$")
    questions = _expect(data, "questions", list, "$.data")
    answers = _expect(data, "answers", list, "$.data")
    dialogs = _expect(data, "dialogs", list, "$.data")

    instances = []
    for d_i, dialog in enumerate(dialogs):
        dpath = f"$.data.dialogs[{d_i}]"
        image_id = _expect(dialog, "image_id", int, dpath)
        caption = _expect(dialog, "caption", str, dpath)
        turns = _expect(dialog, "dialog", list, dpath)

        key = str(image_id)
        if key not in feature_payload:
            raise SchemaError(f"features[{key}]", "missing feature grid for image_id")
        shape = feature_payload[key]["shape"]
        flat = feature_payload[key]["data"]
        if len(shape) != 3 or int(np.prod(shape)) != len(flat):
            raise SchemaError(f"features[{key}]", "shape does not match data length")
        features = np.asarray(flat, dtype=np.float64).reshape(shape)

        rounds = []
        for t_i, turn in enumerate(turns):
            tpath = f"{dpath}.dialog[{t_i}]"
            q = _expect(turn, "question", int, tpath)
            a = _expect(turn, "answer", int, tpath)
            options = _expect(turn, "answer_options", list, tpath)
            gt_index = _expect(turn, "gt_index", int, tpath)
            if not 0 <= q < len(questions):
                raise SchemaError(f"{tpath}.question", f"index {q} out of range")
            if not 0 <= a < len(answers):
                raise SchemaError(f"{tpath}.answer", f"index {a} out of range")
            if not 0 <= gt_index < len(options):
                raise SchemaError(f"{tpath}.gt_index", f"index {gt_index} out of range")
            for o_i, opt in enumerate(options):
                if not isinstance(opt, int) or not 0 <= opt < len(answers):
                    raise SchemaError(f"{tpath}.answer_options[{o_i}]", "index out of range")
            if options[gt_index] != a:
                raise SchemaError(f"{tpath}.gt_index", "does not point at the answer")
            cand_strings = tuple(answers[o] for o in options)
            cls = answer_class(answers[a])
            relevance = tuple(1 if answer_class(c) == cls else 0 for c in cand_strings)
            rounds.append(
                DialogueRound(
                    question=questions[q],
                    answer=answers[a],
                    candidates=CandidateSet(
                        candidates=cand_strings, gt_index=gt_index, relevance=relevance
                    ),
                )
            )
        instances.append(
            DialogueInstance(
                dialogue_id=image_id,
                caption=caption,
                rounds=tuple(rounds),
                features=features,
            )
        )
    return instances
