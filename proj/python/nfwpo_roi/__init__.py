"""CTU-level QP allocation with dual critics and Frank-Wolfe policy optimization."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
