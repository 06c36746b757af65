# Package marker for core module
