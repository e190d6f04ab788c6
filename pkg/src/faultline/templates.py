"""Prompt template loading and rendering.

Templates are plain text files with {name} placeholders. Rendering replaces
only the placeholders it is given, so literal braces in trajectory content
pass through untouched.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

_PLACEHOLDER_RE = re.compile(r"\{(\w+)\}")


def load_template(name: str) -> str:
    """Load a bundled template by bare name, e.g. ``analyzer``."""
    return resources.files("faultline").joinpath(f"templates/{name}.txt").read_text(
        encoding="utf-8"
    )


def load_template_file(path: str | Path) -> str:
    return Path(path).read_text(encoding="utf-8")


def render(template: str, **values: str) -> str:
    """Substitute known {placeholders}; unknown ones are left as-is."""

    def sub(m: re.Match[str]) -> str:
        key = m.group(1)
        return str(values[key]) if key in values else m.group(0)

    return _PLACEHOLDER_RE.sub(sub, template)
