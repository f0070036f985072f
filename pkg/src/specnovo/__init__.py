"""De novo molecular structure generation from MS/MS spectra."""

__version__ = "0.1.0"
