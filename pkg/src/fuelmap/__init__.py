"""Fuel-type mapping from multimodal rasters."""
