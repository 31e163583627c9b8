"""Reading and writing predictor table files.

    # comment
    objects: x0 x1
    labels: 0 1
    n: 2
    flavor: e
    flags: none
    default: 0
    0,0,1 2.25
    0,1,0 x0,x1,x0 inf

Header keys come first. Each row gives the n+1 labels, optionally the n+1
objects, and the value. Rows without objects apply to every object assignment;
rows with objects take precedence and are not allowed with the label_only flag.
Sequences matching no row take the default value.
"""
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Example, ExampleSpace, Predictor, table_predictor, validate_flags
from .errors import PredictorFileError
from .settings import get_settings

logger = logging.getLogger(__name__)

HEADER_KEYS = ("objects", "labels", "n", "flavor", "flags", "default")
FLAGS = ("train_invariant", "fully_invariant", "label_only")
# Random sequences checked per declared flag when the table is too large to check exactly.
FLAG_SAMPLES = 2000


def format_value(v: float) -> str:
    return "inf" if v == float("inf") else format(v, ".12g")


def _parse_value(token: str, line: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise PredictorFileError(f"Value '{token}' is not a number.", line) from None
    if value != value or value < 0:
        raise PredictorFileError(f"Value {token} must be nonnegative.", line)
    return value


def parse_predictor(text: str, name: str = "file") -> Predictor:
    header: dict[str, str] = {}
    rows: list[tuple[int, list[str]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, rest = line.partition(":")
        if sep and key.strip() in HEADER_KEYS and not rows:
            header[key.strip()] = rest.strip()
        else:
            rows.append((lineno, line.split()))

    for key in ("labels", "n", "flavor"):
        if key not in header:
            raise PredictorFileError(f"Missing header '{key}:'.")
    try:
        space = ExampleSpace(objects=tuple(header.get("objects", "x0").split()), labels=tuple(header["labels"].split()))
        n = int(header["n"])
    except ValueError as exc:
        raise PredictorFileError(f"Bad header: {exc}") from exc
    flavor = header["flavor"]
    if flavor not in ("e", "p"):
        raise PredictorFileError(f"flavor must be 'e' or 'p', got '{flavor}'.")
    flags = {f: False for f in FLAGS}
    for flag in header.get("flags", "").split():
        if flag == "none":
            continue
        if flag not in FLAGS:
            raise PredictorFileError(f"Unknown flag '{flag}'; choose from {list(FLAGS)}.")
        flags[flag] = True
    default = _parse_value(header.get("default", "0"), 0)

    label_rows, full_rows = {}, {}
    for lineno, tokens in rows:
        if len(tokens) not in (2, 3):
            raise PredictorFileError(f"Expected 'labels [objects] value', got {len(tokens)} fields.", lineno)
        labels = tokens[0].split(",")
        if len(labels) != n + 1:
            raise PredictorFileError(f"Row has {len(labels)} labels, expected {n + 1}.", lineno)
        try:
            label_idx = tuple(space.label_index(y) for y in labels)
            if len(tokens) == 3:
                objects = tokens[1].split(",")
                if len(objects) != n + 1:
                    raise PredictorFileError(f"Row has {len(objects)} objects, expected {n + 1}.", lineno)
                key = tuple(Example(space.object_index(x), y) for x, y in zip(objects, label_idx))
                full_rows[key] = _parse_value(tokens[2], lineno)
            else:
                label_rows[label_idx] = _parse_value(tokens[1], lineno)
        except PredictorFileError:
            raise
        except Exception as exc:
            raise PredictorFileError(str(exc), lineno) from exc

    if full_rows and flags["label_only"]:
        raise PredictorFileError("A label_only predictor cannot have rows with objects.")
    if flags["label_only"]:
        pred = table_predictor(space, n, flavor, label_rows, default, name=name, **flags)
    else:
        def fn(seq):
            if seq in full_rows:
                return full_rows[seq]
            return label_rows.get(tuple(z.label for z in seq), default)
        pred = Predictor(space=space, n=n, flavor=flavor, fn=fn, name=name, **flags)
    check_declared_flags(pred)
    logger.info(f"Parsed predictor '{name}': n={n}, flavor={flavor}, {len(label_rows) + len(full_rows)} rows")
    return pred


def check_declared_flags(pred: Predictor) -> None:
    """Raise PredictorFileError when a declared flag does not hold.

    Exact when every sequence fits in the table cap, sampled otherwise.
    """
    declared = [f for f in FLAGS if getattr(pred, f)]
    if not declared:
        return
    exact = pred.space.size ** pred.arity <= get_settings().table_cap
    checked = validate_flags(pred, np.random.default_rng(0), samples=FLAG_SAMPLES, exact=exact)
    false = [f for f in declared if not checked[f]]
    if false:
        raise PredictorFileError(f"Declared flags do not hold for '{pred.name}': {' '.join(false)}.")
    logger.debug(f"Flags {declared} of '{pred.name}' hold ({'exact' if exact else 'sampled'} check)")


def read_predictor(path: str | Path) -> Predictor:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PredictorFileError(f"Cannot read {path}: {exc}") from exc
    return parse_predictor(text, name=path.stem)


def render_predictor(pred: Predictor, cap: Optional[int] = None) -> str:
    """Every nonzero value of pred as a predictor file."""
    space = pred.space
    flags = [f for f in FLAGS if getattr(pred, f)] or ["none"]
    lines = [
        f"# {pred.name}",
        f"objects: {' '.join(space.objects)}",
        f"labels: {' '.join(space.labels)}",
        f"n: {pred.n}",
        f"flavor: {pred.flavor}",
        f"flags: {' '.join(flags)}",
        "default: 0",
    ]
    cap = cap if cap is not None else get_settings().table_cap
    for seq in space.all_sequences(pred.arity, label_only=pred.label_only, cap=cap):
        value = pred(seq)
        if value == 0:
            continue
        labels = ",".join(space.labels[z.label] for z in seq)
        if pred.label_only:
            lines.append(f"{labels} {format_value(value)}")
        else:
            objects = ",".join(space.objects[z.object] for z in seq)
            lines.append(f"{labels} {objects} {format_value(value)}")
    return "\n".join(lines) + "\n"


def write_predictor(pred: Predictor, path: str | Path, cap: Optional[int] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_predictor(pred, cap), encoding="utf-8")
    logger.info(f"Wrote {pred.name} to {path}")
    return path
