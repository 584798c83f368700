"""Exception hierarchy shared by every fgrn module."""


class FgrnError(Exception):
    """Base class for all fgrn errors."""


class ZeroMessage(FgrnError, ValueError):
    """A message (or product of messages) has no positive mass."""


class ContradictoryEvidence(ZeroMessage):
    """Evidence is inconsistent with the model at a specific variable.

    ``layer``, ``row`` and ``col`` locate the offending variable (layer 0 is
    the pixel grid).
    """

    def __init__(self, layer, row, col, detail=""):
        self.layer = layer
        self.row = row
        self.col = col
        msg = f"contradictory evidence at layer {layer}, position ({row}, {col})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class AlphabetMismatch(FgrnError, ValueError):
    pass


class IndexOutOfRange(FgrnError, IndexError):
    pass


class EmptyBatch(FgrnError, ValueError):
    pass


class InvalidConfig(FgrnError, ValueError):
    pass


class ImageTooSmall(FgrnError, ValueError):
    pass


class TooLarge(FgrnError, ValueError):
    """Joint table would exceed the enumeration size guard."""


class ZeroEvidenceMass(FgrnError, ValueError):
    pass


class DecodeError(FgrnError, ValueError):
    pass


class EmptyCorpus(FgrnError, ValueError):
    pass


class VersionMismatch(FgrnError, ValueError):
    pass


class CorruptFile(FgrnError, ValueError):
    pass
