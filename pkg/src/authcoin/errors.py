"""Exception types shared across the package."""


class AuthcoinError(Exception):
    """Base class for all domain errors."""


# crypto
class UnsupportedKeySize(AuthcoinError):
    pass


class MalformedKey(AuthcoinError):
    pass


class DecryptionFailure(AuthcoinError):
    pass


# records
class InvariantViolation(AuthcoinError):
    pass


# chain
class InvalidRecord(AuthcoinError):
    def __init__(self, record_id, reason):
        super().__init__(f"invalid record {record_id.hex() if record_id else '?'}: {reason}")
        self.record_id = record_id
        self.reason = reason


class EmptyPending(AuthcoinError):
    pass


class BrokenLink(AuthcoinError):
    pass


class InsufficientWork(AuthcoinError):
    pass


class CorruptFile(AuthcoinError):
    def __init__(self, first_bad_height, reason=""):
        super().__init__(f"corrupt chain file at height {first_bad_height}: {reason}")
        self.first_bad_height = first_bad_height
        self.reason = reason


# keylife
class NotAuthorized(AuthcoinError):
    pass


class UnknownKey(AuthcoinError):
    pass


class UnknownSignature(AuthcoinError):
    pass


# protocol
class FormalValidationFailed(AuthcoinError):
    def __init__(self, key_id, checks):
        failing = sorted(name for name, ok in checks.items() if not ok)
        super().__init__(f"key {key_id.hex()} failed formal validation: {', '.join(failing)}")
        self.key_id = key_id
        self.checks = checks


class SelfVerification(AuthcoinError):
    pass


class UnsupportedCombination(AuthcoinError):
    pass


class WrongState(AuthcoinError):
    pass


# var
class NotEligible(AuthcoinError):
    pass


class VarClosed(AuthcoinError):
    pass


# sim
class InvalidConfig(AuthcoinError):
    pass
