"""Test package for fp_control."""
