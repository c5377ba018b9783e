"""CSV interchange for distributions and experiment tables.

Distribution files carry one row per flattened state index with the
probability in full precision, plus ``#`` comment lines recording the
space and provenance; the format is stable enough to diff byte-for-byte.
"""

import os
from typing import Iterable, Sequence

import numpy as np

from .space import DiscreteDistribution, Mode, StateSpace


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _space_comments(space: StateSpace) -> list[str]:
    return [f"V={space.vocab_size} d={space.dims} mode={space.mode.value}"]


def write_distribution_csv(
    path: str,
    dist: DiscreteDistribution,
    manifest_path: str | None = None,
    extra_comments: Sequence[str] = (),
) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    lines = []
    if manifest_path is not None:
        lines.append(f"# manifest: {manifest_path}")
    for comment in _space_comments(dist.space):
        lines.append(f"# {comment}")
    for comment in extra_comments:
        lines.append(f"# {comment}")
    lines.append("index,prob")
    for i, v in enumerate(dist.values):
        lines.append(f"{i},{fmt(v)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_distribution_csv(path: str, space: StateSpace | None = None) -> DiscreteDistribution:
    meta: dict[str, str] = {}
    pairs: list[tuple[int, float]] = []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    if "=" in token:
                        key, _, val = token.partition("=")
                        meta[key] = val
                continue
            if line.startswith("index"):
                continue
            idx_s, _, val_s = line.partition(",")
            pairs.append((int(idx_s), float(val_s)))
    if space is None:
        try:
            space = StateSpace(
                vocab_size=int(meta["V"]),
                dims=int(meta["d"]),
                mode=Mode(meta["mode"]),
            )
        except KeyError as exc:
            raise ValueError(f"{path}: missing space metadata {exc} in comments") from exc
    values = np.zeros(space.n_states)
    for idx, val in pairs:
        values[idx] = val
    return DiscreteDistribution(space, values)


def write_table_csv(
    path: str,
    header: Sequence[str],
    rows: Iterable[Sequence],
    manifest_path: str | None = None,
    extra_comments: Sequence[str] = (),
) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    lines = []
    if manifest_path is not None:
        lines.append(f"# manifest: {manifest_path}")
    for comment in extra_comments:
        lines.append(f"# {comment}")
    lines.append(",".join(header))
    for row in rows:
        rendered = [fmt(x) if isinstance(x, (float, np.floating)) else str(x) for x in row]
        lines.append(",".join(rendered))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
