"""
vigg | Copyright (c) The vigg developers
"""
import inspect
import math
import typing as t
from pathlib import Path

import jinja2
from markupsafe import Markup

from .bench import AblationTable


def format_number(value: t.Any, digits: int = 4) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return format(value, f".{digits}g")
    return str(value)


class BenchReport:
    """
    HTML page of an ablation run: the per-cell summary, then every row.
    The template is the `.jinja` file next to this module.
    """

    jinja_env: jinja2.Environment
    template: str = ""

    def __init__(self, jinja_env: jinja2.Environment | None = None, **global_vars: t.Any) -> None:
        env = jinja_env or self._make_default_jinja_env()
        env.filters.setdefault("num", format_number)
        self.jinja_env = env
        self.globals = global_vars
        self.template = self.template or self._load_template()

    def __call__(self, **params: t.Any) -> Markup:
        params = {**self.globals, **params}
        tmpl = self.jinja_env.from_string(self.template)
        return Markup(tmpl.render(params).strip())

    def render(self, table: AblationTable, *, title: str | None = None) -> Markup:
        return self(
            title=title or f"vigg · {table.suite}",
            summary=table.summary(),
            rows=table.rows,
        )

    # Private

    def _make_default_jinja_env(self) -> jinja2.Environment:
        env = jinja2.Environment()
        env.autoescape = True
        env.undefined = jinja2.StrictUndefined
        return env

    def _load_template(self) -> str:
        filepath = Path(inspect.getfile(self.__class__))
        files = sorted(filepath.parent.glob(f"{filepath.stem}*.jinja"))
        if not files:
            raise FileNotFoundError(f"no template found next to {filepath}")
        return files[0].read_text()


def write_report(path: "str | Path", table: AblationTable, **params: t.Any) -> None:
    html = BenchReport().render(table, **params)
    Path(path).write_text(str(html) + "\n")
