"""Multi-step malware detection with diverse internal detectors."""
__version__ = "0.1.0"
