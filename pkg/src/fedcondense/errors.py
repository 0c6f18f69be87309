from __future__ import annotations


class ConfigError(Exception):
    """Bad or inconsistent configuration (CLI exit code 2)."""


class ParseError(Exception):
    """Malformed input record; message carries file and line number."""


class ValidationError(Exception):
    """Structurally invalid data (dangling edges, duplicate ids, bad masks)."""


class InvariantViolation(Exception):
    """A runtime guarantee was broken mid-run (CLI exit code 3)."""


class LedgerViolation(InvariantViolation):
    """Something other than model parameters tried to enter the wire ledger."""


class DescentViolation(InvariantViolation):
    """Proximal solve objective increased beyond tolerance."""
