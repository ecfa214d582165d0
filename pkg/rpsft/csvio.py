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

"""CSV artifacts with a commented config header."""

from __future__ import absolute_import, annotations

import csv
import os
from typing import Iterable, Mapping, Sequence

import numpy as np

from .helpers import makedirs


def format_value(value) -> str:
    """Render a cell; floats use 17 significant digits."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_csv(
        path: str,
        header: Mapping[str, object],
        columns: Sequence[str],
        rows: Iterable[Sequence],
):
    """Write '# key = value' header lines, the column row, then data."""
    makedirs(os.path.dirname(path))
    with open(path, "w", encoding="utf-8", newline="") as file:
        for key in sorted(header):
            file.write(f"# {key} = {format_value(header[key])}\n")
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_csv(path: str) -> tuple[dict[str, str], list[str], list[list[str]]]:
    """Read back (header, columns, rows) of a file from write_csv."""
    header: dict[str, str] = {}
    with open(path, encoding="utf-8", newline="") as file:
        lines = file.read().split("\n")
    body = []
    for line in lines:
        if line.startswith("# "):
            key, _, value = line[2:].partition(" = ")
            header[key] = value
        elif line:
            body.append(line)
    parsed = list(csv.reader(body))
    return header, parsed[0], parsed[1:]
