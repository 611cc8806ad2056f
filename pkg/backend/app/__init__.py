# Backend application package: GP change-point detection (GLRT + confirmatory BOCPD)

__version__ = "0.3.0"
