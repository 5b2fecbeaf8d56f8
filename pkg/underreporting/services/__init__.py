"""
Services of the under-reporting audit tools.
The numerical pipeline (ingest, corrupt, estimate, theory, mitigate, fairness,
harness) plus the configuration and error services used by the CLI.
"""
