"""Multi-modal music understanding and generation toolkit at desk scale."""

from musefuse.errors import InvalidInput, TemplateError

__version__ = "0.1.0"

__all__ = ["InvalidInput", "TemplateError", "__version__"]
