# -*- coding: utf-8 -*-
# rpsft - rotation-preserving fine-tuning toolkit
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
rpsft - rotation-preserving supervised fine-tuning at desk scale

    >>> from rpsft import build_basis, penalty
    >>> basis = build_basis("w", w0, k=4)
    >>> penalty(w, basis)

:copyright: (C) 2026 The rpsft authors.
:license: Apache 2.0, see LICENSE for more details.
"""

__title__ = "rpsft"
__author__ = "The rpsft authors"
__version__ = "0.1.0"
__license__ = "Apache 2.0"
__copyright__ = "Copyright 2026 The rpsft authors"

# pylint: disable=unused-import,useless-import-alias
from .error import CheckpointFormatError as CheckpointFormatError
from .error import ConfigError as ConfigError
from .error import IntegrationError as IntegrationError
from .error import NumericalError as NumericalError
from .error import ParameterError as ParameterError
from .error import PresetError as PresetError
from .error import RpsftException as RpsftException
from .error import TrainingError as TrainingError
from .error import UndefinedRatioError as UndefinedRatioError
from .error import ValidationError as ValidationError
from .linalg import OrthonormalBasis as OrthonormalBasis
from .linalg import principal_angles as principal_angles
from .linalg import svd_full as svd_full
from .linalg import truncate as truncate
from .protected import ProtectedBasis as ProtectedBasis
from .protected import RegularizerConfig as RegularizerConfig
from .protected import build_basis as build_basis
from .protected import penalty as penalty
from .protected import penalty_gradient as penalty_gradient
