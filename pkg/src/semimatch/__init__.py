"""semimatch: semi-dense coarse-to-fine image matching at desk scale."""

__version__ = "0.1.0"

from .pipeline import Matcher, MatcherConfig, MatchResult  # noqa: F401
