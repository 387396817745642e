"""Circuit discovery with noising/denoising patching and AND/OR/ADDER gate analysis."""

__version__ = "0.1.0"
