"""ABR report-image classification: CNN transfer features + soft-margin SVM."""

__version__ = "0.1.0"
