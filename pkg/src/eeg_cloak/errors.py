"""Exception hierarchy shared by every stage of the toolkit."""


class EEGCloakError(Exception):
    """Base class for all toolkit errors."""


# dataset
class MalformedTrial(EEGCloakError):
    pass


class UnknownSensor(EEGCloakError):
    pass


class MissingConditionHeader(EEGCloakError):
    pass


class EmptyCorpus(EEGCloakError):
    pass


class VocabSizeMismatch(EEGCloakError):
    pass


class TooFewTrials(EEGCloakError):
    pass


# spectral / topomap
class NonFiniteInput(EEGCloakError):
    pass


class NonUnitVector(EEGCloakError):
    pass


class DegenerateSites(EEGCloakError):
    pass


class EmptyTrainingSet(EEGCloakError):
    pass


class DegenerateRange(EEGCloakError):
    pass


class ImageFormatError(EEGCloakError):
    pass


# dummyid
class InsufficientSubjects(EEGCloakError):
    def __init__(self, group, k, available):
        super().__init__(f"group {group} has {available} subjects, need k={k}")
        self.group = group
        self.k = k
        self.available = available


# classifier / disguiser
class InvalidConfig(EEGCloakError):
    pass


class JointIdentityUnsupported(EEGCloakError):
    pass


class Diverged(EEGCloakError):
    pass


class ShapeMismatch(EEGCloakError):
    pass


class MissingLabel(EEGCloakError):
    pass


class EmptyDomain(EEGCloakError):
    pass


class WrongProvenance(EEGCloakError):
    pass


class CheckpointError(EEGCloakError):
    pass


# evalreport
class LengthMismatch(EEGCloakError):
    pass


class LabelOutOfRange(EEGCloakError):
    pass


class EmptyMatrix(EEGCloakError):
    pass


class MissingRegime(EEGCloakError):
    pass


# cli
class ConfigInvalid(EEGCloakError):
    pass
