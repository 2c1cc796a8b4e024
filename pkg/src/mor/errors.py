"""Exception hierarchy shared across the engine."""


class MorError(Exception):
    """Base class for every error raised by this package."""


class ParseError(MorError):
    """A line or token in an input file could not be parsed."""


class FormatError(MorError):
    """A file's structure violates its declared format."""


class ValidationError(MorError):
    """Inputs parsed fine but violate a cross-reference or uniqueness rule."""


class ContractError(MorError):
    """A caller violated an operation's precondition."""


class DegenerateInputError(MorError):
    """Input is syntactically valid but carries no usable signal."""


class EmbeddingLookupError(MorError):
    """An id is missing from an embedding space."""

    def __init__(self, space_id: str, item_id: str):
        super().__init__(f"no embedding for id {item_id!r} in space {space_id!r}")
        self.space_id = space_id
        self.item_id = item_id


class ConfigError(MorError):
    """The pipeline configuration is incomplete or inconsistent."""
