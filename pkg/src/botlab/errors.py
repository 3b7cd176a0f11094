"""Exception types shared across the package.

Every error raised by the library subclasses :class:`BotlabError`, so callers
can distinguish domain failures from programming mistakes (plain ValueError,
TypeError) in one ``except`` clause.
"""


class BotlabError(Exception):
    """Base class for all library errors."""


class NonStochastic(BotlabError):
    """A transition table has a negative entry or a row sum off by > 1e-9."""


class NotErgodic(BotlabError):
    """The chain is reducible or periodic; the model assumption fails."""


class AboveThreshold(BotlabError):
    """d * lambda^2 >= 1; the decay parameter family is undefined."""


class DegenerateSpectrum(BotlabError):
    """The second eigenvalue is zero; no nontrivial spectral statistic exists."""


class ComplexEigenvector(BotlabError):
    """The second eigenvalue is not real; a real statistic must be chosen by the caller."""


class SizeLimit(BotlabError):
    """A requested dense object would exceed the configured state cap."""


class NoSuchAncestor(BotlabError):
    """anc(u, k) walks past the root."""


class TooShallow(BotlabError):
    """The vertex has smaller height than the requested sub-depth."""


class TooLarge(BotlabError):
    """A leaf set exceeds the degree budget of the pivot descent."""


class NotBelow(BotlabError):
    """A leaf set is not contained in the subtree it was declared under."""


class NotAntichain(BotlabError):
    """A vertex set contains an ancestor/descendant pair."""


class IncompleteLabeling(BotlabError):
    """A labeling does not cover every vertex it must cover."""


class IncompleteObservation(BotlabError):
    """A leaf observation misses at least one leaf."""


class ZeroLikelihood(BotlabError):
    """The observation has probability zero under the chain."""


class SupportMismatch(BotlabError):
    """A term's support is not contained in the requested domain."""


class OverlappingDomains(BotlabError):
    """Tensor identification requires pairwise-disjoint variable sets."""


class DomainMismatch(BotlabError):
    """A function's variables do not match the evaluation context."""


class DegreeTooHigh(BotlabError):
    """The polynomial degree exceeds what the decomposition supports."""


class ZeroVariance(BotlabError):
    """Var[f] = 0; the variance ratio is undefined."""


class ConfigInvalid(BotlabError):
    """An experiment config is malformed or contains unknown keys."""
