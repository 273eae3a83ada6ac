"""S4-style state space models for multichannel ECG classification."""

from ._core import *  # noqa: F401,F403
from ._core import __version__  # noqa: F401
