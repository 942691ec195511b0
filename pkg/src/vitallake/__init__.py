"""vitallake: single-process streaming platform for HL7v2 device and lab traffic."""

__version__ = "0.1.0"
