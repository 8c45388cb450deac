"""EEGNet motor-imagery inference and resource planning for microcontrollers."""

__version__ = "0.1.0"
