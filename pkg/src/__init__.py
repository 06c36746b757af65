# Package marker for src module

__version__ = "0.1.0"
TOOL_NAME = "stableds"
