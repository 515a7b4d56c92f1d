"""Triple modular redundancy: three stored copies read through a voter."""


def tmr_vote(a, b, c):
    """Bitwise majority of three words (ints or unsigned integer arrays)."""
    return (a & b) | (a & c) | (b & c)
