"""DICOM ingestion gateway.

Receives DICOM studies over the network into a hierarchical image vault,
continuously extracts profile-defined header metadata into an embedded
indexed document store with crash-recoverable bookkeeping, purges unpinned
images nightly, and runs pluggable detection pipelines on cohort-filtered
images with de-identified result export.
"""

__version__ = "0.1.0"
