"""Per-dataset label sets in canonical (alphabetical) order."""

from __future__ import annotations

from vjepa_fer.errors import ConfigError

RAVDESS = "RAVDESS"
CREMAD = "CREMAD"
SYNTH = "SYNTH"
DATASET_TAGS = (RAVDESS, CREMAD, SYNTH)

RAVDESS_LABELS = ("anger", "calm", "disgust", "fear", "happy", "neutral", "sad", "surprise")
CREMAD_LABELS = ("anger", "disgust", "fear", "happy", "neutral", "sad")


def synth_labels(k: int) -> tuple[str, ...]:
    return tuple(f"class{i}" for i in range(k))


def label_set(tag: str, num_classes: int | None = None) -> tuple[str, ...]:
    if tag == RAVDESS:
        return RAVDESS_LABELS
    if tag == CREMAD:
        return CREMAD_LABELS
    if tag == SYNTH:
        if num_classes is None:
            raise ConfigError("SYNTH label set needs a class count")
        return synth_labels(num_classes)
    raise ConfigError(f"unknown dataset tag {tag!r}; expected one of {DATASET_TAGS}")
