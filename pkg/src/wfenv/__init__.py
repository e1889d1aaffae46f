"""Wright-Fisher and Moran populations in a pure-jump random environment."""

__version__ = "0.1.0"
