"""Exception hierarchy shared across the package."""


class CommonsimError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CommonsimError):
    """Invalid configuration: bad roster arithmetic, unknown policy, bad flags."""


class TemplateError(CommonsimError):
    """Base for prompt-template problems."""


class TemplateResolutionError(TemplateError):
    """No template installed for a (key, locale) pair."""

    def __init__(self, key: str, locale: str):
        self.key = key
        self.locale = locale
        super().__init__(f"no template for key={key!r} locale={locale!r}")


class LocalePackError(TemplateError):
    """A locale pack file failed validation (missing keys, bad placeholders)."""


class MissingPlaceholderError(TemplateError):
    """A template body referenced a placeholder absent from the render context."""

    def __init__(self, key: str, placeholder: str):
        self.key = key
        self.placeholder = placeholder
        super().__init__(
            f"template {key!r} references placeholder {{{placeholder}}} "
            "which was not supplied at render time"
        )


class ParseFailure(CommonsimError):
    """No usable numeric decision could be extracted from a completion."""


class GatewayError(CommonsimError):
    """Base for gateway problems."""


class AuthError(GatewayError):
    """Authentication rejected by the endpoint. Diagnostics are redacted."""


class TransportError(GatewayError):
    """Transient transport failure that survived all retries."""


class CassetteMismatchError(GatewayError):
    """A replayed request diverged from the recorded cassette entry."""


class RunInterrupted(CommonsimError):
    """A run aborted mid-flight; a resumable checkpoint was written."""

    def __init__(self, message: str, checkpoint_path=None):
        self.checkpoint_path = checkpoint_path
        super().__init__(message)


class WrongDirectionError(CommonsimError):
    """A direction-specific metric was applied to the other direction."""


class UndefinedMetricError(CommonsimError):
    """The metric is undefined for this record (degenerate denominator)."""
