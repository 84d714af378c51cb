from __future__ import annotations

import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from musefuse.errors import InvalidInput, TemplateError

SUBTYPES = ("speed", "pitch", "add", "delete", "replace", "image_gen", "video_gen", "caption")


@dataclass(frozen=True)
class TemplatePool:
    subtype: str
    instructions: tuple
    responses: tuple

    def __post_init__(self):
        if self.subtype not in SUBTYPES:
            raise InvalidInput(f"unknown template subtype {self.subtype!r}")
        if not self.instructions or not self.responses:
            raise InvalidInput(f"template pool {self.subtype!r} needs instructions and responses")


def _read_lines(text: str) -> tuple:
    return tuple(line.strip() for line in text.splitlines() if line.strip())


def load_pool(subtype: str, directory: str | Path | None = None) -> TemplatePool:
    """Load ``<subtype>.instructions.txt`` / ``.responses.txt`` (one template per line)."""
    if subtype not in SUBTYPES:
        raise InvalidInput(f"unknown template subtype {subtype!r}")
    texts = []
    for part in ("instructions", "responses"):
        name = f"{subtype}.{part}.txt"
        if directory is not None:
            texts.append(Path(directory, name).read_text(encoding="utf-8"))
        else:
            texts.append(resources.files("musefuse").joinpath("templates", name).read_text(encoding="utf-8"))
    return TemplatePool(subtype, _read_lines(texts[0]), _read_lines(texts[1]))


def placeholders(template: str) -> set:
    return {field for _, field, _, _ in string.Formatter().parse(template) if field}


def fill_template(template: str, values: dict) -> str:
    missing = placeholders(template) - set(values)
    if missing:
        raise TemplateError(f"unfilled placeholder(s) {sorted(missing)} in {template!r}")
    return template.format(**values)
