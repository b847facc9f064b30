"""Ground-penetrating-radar submap localization with a factor-graph back end."""

__version__ = "0.1.0"
