"""Exception hierarchy shared by both schemes, the fabric and the CLI."""


class ProtocolError(Exception):
    """Base class for every failure raised by this package."""


class PreconditionError(ProtocolError, ValueError):
    """An operation received arguments outside its contract (bad length etc.)."""


class DecryptError(ProtocolError):
    """A sealed box did not authenticate under the supplied key."""


class VerifyError(ProtocolError):
    """A local credential check on the user's side failed."""


class BiometricMismatch(VerifyError):
    """The fuzzy extractor could not reproduce the enrolled key."""


class PasswordMismatch(VerifyError):
    """The password verifier stored on the card did not match."""


class AuthError(ProtocolError):
    """A peer's authenticator did not verify; the session is terminated."""


class IllegalStat(ProtocolError):
    """An envelope carried a status tag the actor cannot accept in its phase."""


class UnknownPrincipal(ProtocolError):
    """ID or SID verification failed."""


class VerificationFailure(ProtocolError):
    """An equality check inside a protocol step failed.

    ``check`` names the failed comparison (for example ``"M7=M8"``) so that
    harness verdicts can assert *where* a rejection happened.
    """

    def __init__(self, check: str, message: str = "") -> None:
        super().__init__(message or f"verification failed at {check}")
        self.check = check


class NotFound(ProtocolError):
    """A dictionary search finished without a hit."""

    def __init__(self, evaluations: int) -> None:
        super().__init__(f"no candidate matched after {evaluations} evaluations")
        self.evaluations = evaluations


class NonTermination(ProtocolError):
    """A scenario exceeded its step budget."""


class StoreIntegrityError(ProtocolError):
    """A persisted store or card file failed its integrity tag."""


class ConfigError(ProtocolError):
    """Scenario or provisioning configuration could not be parsed."""
