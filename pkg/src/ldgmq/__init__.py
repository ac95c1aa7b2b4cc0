"""LDGM-based lossy quantization with belief propagation, plus its analysis toolkit."""

__version__ = "0.1.0"
