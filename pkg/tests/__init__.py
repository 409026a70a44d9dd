"""Test suite for didl-repo."""
