# Package marker for cli module

from .commands import COMMANDS, UsageError

__all__ = ["COMMANDS", "UsageError"]
