class InvalidInput(ValueError):
    """Raised when an argument violates an operation's preconditions."""


class TemplateError(ValueError):
    """Raised when a template placeholder cannot be filled."""
