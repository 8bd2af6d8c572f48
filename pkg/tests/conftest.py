import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: long-running end-to-end cases (deselect with "
        "-m 'not slow')")
