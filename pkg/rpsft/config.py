# -*- coding: utf-8 -*-
# rpsft - rotation-preserving fine-tuning toolkit
# (C) 2026 The rpsft authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""
Experiment configuration.

Files are line oriented::

    # comment
    seed = 3
    reg.lambda = 2.0     # trailing comments are allowed

Nested keys are dotted. Unknown keys, malformed lines, type errors and
out-of-range values raise :class:`ConfigError` naming the key and line.
"""

from __future__ import absolute_import, annotations

import math
from typing import Callable, Iterable, Iterator, NamedTuple

from .datatypes import ARCHITECTURES
from .error import ConfigError

_INF = math.inf


class Option(NamedTuple):
    """Schema entry of one key."""
    kind: type
    default: object
    check: Callable[[object], bool]
    rule: str


def _between(low: float, high: float = _INF) -> Callable[[object], bool]:
    return lambda v: low <= v <= high


def _positive(v) -> bool:
    return v > 0


def _one_of(*choices: str) -> Callable[[object], bool]:
    return lambda v: v in choices


def _ranks(v) -> bool:
    return all(item == "full" or (item.isdigit()) for item in v)


def _any(_v) -> bool:
    return True


SCHEMA: dict[str, Option] = {
    "seed": Option(int, 0, _between(0, 2 ** 64 - 1), "0 <= seed < 2^64"),
    "out": Option(str, "out", _any, "directory"),
    "preset": Option(str, "", _any, "preset name"),
    "workers": Option(int, 1, _between(1, 64), "1..64"),
    "arch": Option(str, "two_layer_tanh", _one_of(*ARCHITECTURES),
                   "one of " + ", ".join(ARCHITECTURES)),
    "data.input_dim": Option(int, 32, _between(1), ">= 1"),
    "data.output_dim": Option(int, 16, _between(1), ">= 1"),
    "data.hidden_dim": Option(int, 32, _between(1), ">= 1"),
    "data.rotation_angle": Option(float, 60.0, _between(-360.0, 360.0),
                                  "-360..360 degrees"),
    "data.noise_std": Option(float, 0.05, _between(0.0), ">= 0"),
    "data.n_train": Option(int, 256, _between(1), ">= 1"),
    "data.n_eval": Option(int, 256, _between(1), ">= 1"),
    "pretrain.lr": Option(float, 0.2, _positive, "> 0"),
    "pretrain.steps": Option(int, 1500, _between(1), ">= 1"),
    "train.lr": Option(float, 0.05, _positive, "> 0"),
    "train.steps": Option(int, 400, _between(1), ">= 1"),
    "train.batch_size": Option(int, 256, _between(1), ">= 1"),
    "train.mode": Option(str, "rpsft", _one_of("sft", "rpsft", "l2_init"),
                         "sft, rpsft or l2_init"),
    "reg.lambda": Option(float, 1.0, _between(0.0), ">= 0"),
    "reg.rank_rule": Option(str, "energy", _one_of("energy", "fixed"),
                            "energy or fixed"),
    "reg.k": Option(int, 4, _between(0), ">= 0"),
    "reg.update_period": Option(int, 1, _between(1), ">= 1"),
    "reg.layers": Option(list, [], _any, "comma-separated globs"),
    "energy.target": Option(float, 0.20, lambda v: 0 < v < 1, "0 < v < 1"),
    "energy.samples": Option(int, 128, _between(1), ">= 1"),
    "flow.lambda": Option(float, 0.5, _between(0.0), ">= 0"),
    "flow.t_end": Option(float, 5.0, _positive, "> 0"),
    "flow.dt": Option(float, 1e-3, _positive, "> 0"),
    "flow.dim": Option(int, 8, _between(1), ">= 1"),
    "flow.k": Option(int, 2, _between(1), ">= 1"),
    "flow.omega": Option(float, 4.0, _positive, "> 0"),
    "rank.R": Option(int, 6, _between(1), ">= 1"),
    "rank.lambda": Option(float, 1.0, _between(0.0), ">= 0"),
    "rank.beta": Option(float, 1.0, _positive, "> 0"),
    "rank.support": Option(int, 2, _between(0), ">= 0"),
    "diag.cap": Option(int, 512, _between(1), ">= 1"),
    "diag.seqs": Option(int, 32, _between(2), ">= 2"),
    "diag.seq_len": Option(int, 16, _between(1, 128), "1..128"),
    "forget.arch": Option(str, "linear", _one_of(*ARCHITECTURES),
                          "one of " + ", ".join(ARCHITECTURES)),
    "forget.input_rank": Option(int, 4, _between(1), ">= 1"),
    "forget.tilt": Option(float, 15.0, _between(0.0, 90.0), "0..90 degrees"),
    "forget.init_scale": Option(float, 0.0, _between(0.0), ">= 0"),
    "forget.lr": Option(float, 0.4, _positive, "> 0"),
    "forget.steps": Option(int, 1500, _between(1), ">= 1"),
    "sweep.seeds": Option(int, 20, _between(1), ">= 1"),
    "sweep.ranks": Option(list, ["0", "1", "2", "4", "8", "full"], _ranks,
                          "integers or 'full'"),
}


class ExperimentConfig:
    """Resolved configuration; every schema key has a value."""

    def __init__(self, values: dict[str, object]):
        self._values = dict(values)

    def __getitem__(self, key: str):
        return self._values[key]

    def __eq__(self, other):
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return self._values == other.as_dict()

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._values))

    def as_dict(self) -> dict[str, object]:
        """Copy of all values."""
        return dict(self._values)

    def header(self) -> dict[str, str]:
        """Values rendered for CSV and manifest headers."""
        return {
            key: ",".join(value) if isinstance(value, list) else value
            for key, value in sorted(self._values.items())
        }

    def with_overrides(self, **values) -> ExperimentConfig:
        """Copy with some keys replaced (dots written as '__')."""
        updated = self.as_dict()
        for key, value in values.items():
            updated[key.replace("__", ".")] = value
        return ExperimentConfig(updated)


def _coerce(key: str, raw: str, line: int | None):
    option = SCHEMA.get(key)
    if option is None:
        raise ConfigError("unknown key", key, line)
    text = raw.strip()
    try:
        if option.kind is int:
            value: object = int(text, 10)
        elif option.kind is float:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
        elif option.kind is list:
            value = [item.strip() for item in text.split(",") if item.strip()]
        else:
            value = text
    except ValueError as exc:
        raise ConfigError(
            f"expected {option.kind.__name__}; got {text!r}", key, line,
        ) from exc
    if not option.check(value):
        raise ConfigError(
            f"value {text!r} out of range; expected {option.rule}", key, line,
        )
    return value


def _parse_line(text: str, line: int) -> tuple[str, str] | None:
    content = text.split("#", 1)[0].strip()
    if not content:
        return None
    key, sep, value = content.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"expected 'key = value'; got {text.strip()!r}",
                          None, line)
    return key.strip(), value


def parse_text(text: str, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """Parse config text plus 'key=value' overrides onto the defaults."""
    values = {key: option.default for key, option in SCHEMA.items()}
    values = {k: list(v) if isinstance(v, list) else v
              for k, v in values.items()}
    for number, raw in enumerate(text.splitlines(), start=1):
        parsed = _parse_line(raw, number)
        if parsed is not None:
            key, value = parsed
            values[key] = _coerce(key, value, number)
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        values[key.strip()] = _coerce(key.strip(), value, None)
    return ExperimentConfig(values)


def parse_config(
        path: str | None = None,
        overrides: Iterable[str] = (),
) -> ExperimentConfig:
    """Read a config file (optional) and apply overrides."""
    text = ""
    if path:
        with open(path, encoding="utf-8") as file:
            text = file.read()
    return parse_text(text, overrides)
